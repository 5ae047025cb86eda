/** HTML rendering for every kiosk screen. Pure string builders so the views
 * are testable without a browser. A recommendation list is never emitted
 * without the disclaimer in the same fragment. */

import type { SessionState } from "./state.js";
import type { SymptomEntry } from "./symptoms.js";
import type { RecommendResponse } from "./types.js";

export function escapeHtml(raw: string): string {
  return raw
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const TRIAGE_TEXT: Record<string, string> = {
  self_care: "Suitable for self-care. See the guidance below.",
  consult_pharmacist: "Please discuss these results with a pharmacist before use.",
  refer_to_doctor: "Please see a doctor or emergency services now.",
};

export function renderTriageBanner(triage: string): string {
  const text = TRIAGE_TEXT[triage] ?? triage;
  return `<div class="triage-banner triage-${escapeHtml(triage)}" role="alert">${escapeHtml(text)}</div>`;
}

export function renderWarningBadge(drugA: string, drugB: string, kind: string): string {
  return (
    `<span class="ddi-badge" role="alert">interaction: ` +
    `${escapeHtml(drugA)} + ${escapeHtml(drugB)} (${escapeHtml(kind)})</span>`
  );
}

export function renderReferral(response: RecommendResponse): string {
  const flags = response.red_flags_triggered
    .map((f) => `<li>${escapeHtml(f.replace(/_/g, " "))}</li>`)
    .join("");
  return [
    `<section class="screen referral-screen">`,
    renderTriageBanner("refer_to_doctor"),
    `<h2>Seek medical care now</h2>`,
    `<p>The symptoms you selected need professional attention. This kiosk will not recommend medication for them.</p>`,
    flags ? `<ul class="red-flag-list">${flags}</ul>` : "",
    `<p class="disclaimer">${escapeHtml(response.disclaimer)}</p>`,
    `</section>`,
  ].join("");
}

export function renderResult(response: RecommendResponse): string {
  if (response.triage === "refer_to_doctor") {
    return renderReferral(response);
  }
  // each warning pair becomes one badge, attached to the first drug of the
  // pair that appears in the ranked list
  const rendered = new Set<string>();
  const items = response.recommendations
    .map((rec) => {
      const badges = response.ddi_warnings
        .filter((w) => w.drug_a === rec.atc3 || w.drug_b === rec.atc3)
        .filter((w) => {
          const key = [w.drug_a, w.drug_b].sort().join("|");
          if (rendered.has(key)) return false;
          rendered.add(key);
          return true;
        })
        .map((w) => renderWarningBadge(w.drug_a, w.drug_b, w.interaction_type))
        .join("");
      return (
        `<li class="recommendation">` +
        `<span class="drug-code">${escapeHtml(rec.atc3)}</span>` +
        `<span class="score">score ${rec.score.toFixed(3)}</span>` +
        badges +
        `</li>`
      );
    })
    .join("");
  const unknown = response.unknown_codes.length
    ? `<p class="unknown-codes">Not recognized: ${response.unknown_codes.map(escapeHtml).join(", ")}</p>`
    : "";
  return [
    `<section class="screen result-screen">`,
    renderTriageBanner(response.triage),
    `<h2>Suggested over-the-counter options</h2>`,
    `<ol class="recommendation-list">${items}</ol>`,
    unknown,
    `<p class="disclaimer">${escapeHtml(response.disclaimer)}</p>`,
    `</section>`,
  ].join("");
}

export function renderRetry(): string {
  return (
    `<section class="screen retry-screen"><h2>Service unavailable</h2>` +
    `<p>The recommendation service did not respond. Please try again.</p>` +
    `<button type="button" data-action="retry">Try again</button></section>`
  );
}

export function renderValidation(message: string): string {
  return `<p class="validation-error" role="alert">${escapeHtml(message)}</p>`;
}

export function renderSymptomPicker(
  symptoms: SymptomEntry[],
  state: SessionState,
): string {
  const selected = new Set(state.selectedSymptoms.map((s) => s.dxCode));
  const buttons = symptoms
    .map((s) => {
      const cls = [
        "symptom",
        s.urgentFlag ? "urgent" : "",
        selected.has(s.dxCode) ? "selected" : "",
      ]
        .filter(Boolean)
        .join(" ");
      return (
        `<button type="button" class="${cls}" data-dx="${escapeHtml(s.dxCode)}"` +
        ` aria-pressed="${selected.has(s.dxCode)}">${escapeHtml(s.label)}</button>`
      );
    })
    .join("");
  const meds = state.medications
    .map(
      (m) =>
        `<li>${escapeHtml(m)} <button type="button" data-remove-med="${escapeHtml(m)}">remove</button></li>`,
    )
    .join("");
  return [
    `<section class="screen picker-screen">`,
    `<h2>What brings you in today?</h2>`,
    `<div class="symptom-grid">${buttons}</div>`,
    `<h3>Medications you take now</h3>`,
    `<ul class="med-list">${meds}</ul>`,
    `<form data-form="med"><input name="med" placeholder="e.g. N02B" aria-label="Add a medication code" />`,
    `<button type="submit">Add</button></form>`,
    `<div class="actions">`,
    `<button type="button" data-action="submit" ${state.selectedSymptoms.length ? "" : "disabled"}>Get recommendations</button>`,
    `<button type="button" data-action="reset">Start over</button>`,
    `<button type="button" data-action="font">Large text</button>`,
    `</div>`,
    `<div class="inline-feedback"></div>`,
    `</section>`,
  ].join("");
}
