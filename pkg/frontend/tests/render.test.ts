import { describe, expect, it } from "vitest";

import { escapeHtml, renderResult, renderSymptomPicker } from "../src/render.js";
import { initialState, toggleSymptom } from "../src/state.js";
import { validateSymptomCatalog, SYMPTOMS } from "../src/symptoms.js";
import { DEFAULT_CONFIG } from "../src/config.js";
import type { RecommendResponse } from "../src/types.js";

function response(overrides: Partial<RecommendResponse> = {}): RecommendResponse {
  return {
    recommendations: [
      { atc3: "N02B", score: 0.91, rank: 1 },
      { atc3: "A01A", score: 0.84, rank: 2 },
    ],
    ddi_warnings: [],
    triage: "self_care",
    disclaimer: "Medications can cause side effects; ask a professional.",
    red_flags_triggered: [],
    unknown_codes: [],
    notes: [],
    model_version: "test",
    ...overrides,
  };
}

describe("result rendering", () => {
  it("one warning renders exactly one badge", () => {
    const html = renderResult(response({
      ddi_warnings: [{ drug_a: "N02B", drug_b: "A01A",
                       interaction_type: "bleeding-risk", severity: 0.9 }],
      triage: "consult_pharmacist",
    }));
    expect(html.match(/class="ddi-badge"/g)).toHaveLength(1);
    expect(html).toContain("bleeding-risk");
  });

  it("no warnings, no badges", () => {
    expect(renderResult(response())).not.toContain("ddi-badge");
  });

  it("disclaimer is always in the same fragment as recommendations", () => {
    for (const resp of [response(), response({ recommendations: [] }),
                        response({ triage: "consult_pharmacist" })]) {
      const html = renderResult(resp);
      if (html.includes("recommendation-list")) {
        expect(html).toContain('class="disclaimer"');
        expect(html).toContain(escapeHtml(resp.disclaimer));
      }
    }
  });

  it("refer_to_doctor renders the referral screen without a drug list", () => {
    const html = renderResult(response({
      triage: "refer_to_doctor",
      recommendations: [],
      red_flags_triggered: ["chest_pain"],
    }));
    expect(html).toContain("referral-screen");
    expect(html).toContain("chest pain");
    expect(html).not.toContain("recommendation-list");
  });

  it("escapes injected content", () => {
    const html = renderResult(response({
      disclaimer: '<script>alert("x")</script>',
    }));
    expect(html).not.toContain("<script>");
  });
});

describe("picker rendering", () => {
  it("submit disabled until a symptom is selected", () => {
    const empty = renderSymptomPicker(SYMPTOMS, initialState());
    expect(empty).toMatch(/data-action="submit" disabled/);
    const one = renderSymptomPicker(
      SYMPTOMS, toggleSymptom(initialState(), SYMPTOMS[0]));
    expect(one).not.toMatch(/data-action="submit" disabled/);
  });

  it("urgent catalog entries all map to configured red flags", () => {
    expect(validateSymptomCatalog(SYMPTOMS, DEFAULT_CONFIG.redFlags)).toEqual([]);
    expect(validateSymptomCatalog(
      [{ label: "X", dxCode: "D1", urgentFlag: "not_a_flag" }],
      DEFAULT_CONFIG.redFlags,
    )).toEqual(["X"]);
  });
});
