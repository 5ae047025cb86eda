/** Kiosk controller: wires the symptom picker to the service client and
 * renders result / referral / retry screens into the mount point. */

import { ApiClient, RequestRejectedError, ServiceUnreachableError } from "./api.js";
import type { KioskConfig } from "./config.js";
import {
  SessionStore,
  addMedication,
  removeMedication,
  toggleFontScale,
  toggleSymptom,
  withResponse,
} from "./state.js";
import {
  renderResult,
  renderRetry,
  renderSymptomPicker,
  renderValidation,
} from "./render.js";
import { SYMPTOMS, SymptomEntry, validateSymptomCatalog } from "./symptoms.js";
import type { RecommendRequest } from "./types.js";

export interface AppDeps {
  root: HTMLElement;
  api: ApiClient;
  store: SessionStore;
  config: KioskConfig;
  symptoms?: SymptomEntry[];
}

export function buildRequest(
  selected: SymptomEntry[],
  medications: string[],
): RecommendRequest {
  return {
    diagnoses: selected.map((s) => s.dxCode),
    procedures: [],
    history: [],
    current_medications: medications,
    red_flags: selected.flatMap((s) => (s.urgentFlag ? [s.urgentFlag] : [])),
  };
}

export class KioskApp {
  private readonly symptoms: SymptomEntry[];
  private view: "picker" | "result" | "retry" = "picker";

  constructor(private readonly deps: AppDeps) {
    this.symptoms = deps.symptoms ?? SYMPTOMS;
    const badEntries = validateSymptomCatalog(this.symptoms, deps.config.redFlags);
    if (badEntries.length) {
      throw new Error(`urgent symptoms without a configured red flag: ${badEntries}`);
    }
    deps.root.addEventListener("click", (ev) => this.onClick(ev));
    deps.root.addEventListener("submit", (ev) => this.onSubmitForm(ev));
    deps.store.subscribe(() => this.applyFontScale());
  }

  start(): void {
    this.view = "picker";
    this.renderCurrent();
  }

  private get store(): SessionStore {
    return this.deps.store;
  }

  private renderCurrent(): void {
    const state = this.store.state;
    if (this.view === "retry") {
      this.deps.root.innerHTML = renderRetry();
    } else if (this.view === "result" && state.lastResponse !== null) {
      this.deps.root.innerHTML =
        renderResult(state.lastResponse) +
        `<div class="actions"><button type="button" data-action="reset">Start over</button></div>`;
    } else {
      this.deps.root.innerHTML = renderSymptomPicker(this.symptoms, state);
    }
    this.applyFontScale();
  }

  private applyFontScale(): void {
    this.deps.root.classList.toggle("font-large",
      this.store.state.fontScale === "large");
  }

  private onClick(ev: Event): void {
    const target = ev.target as HTMLElement | null;
    if (!target) return;
    const dx = target.getAttribute("data-dx");
    if (dx !== null) {
      const entry = this.symptoms.find((s) => s.dxCode === dx);
      if (entry) this.store.update((s) => toggleSymptom(s, entry));
      this.renderCurrent();
      return;
    }
    const removeMed = target.getAttribute("data-remove-med");
    if (removeMed !== null) {
      this.store.update((s) => removeMedication(s, removeMed));
      this.renderCurrent();
      return;
    }
    switch (target.getAttribute("data-action")) {
      case "submit":
        void this.submitSession();
        break;
      case "retry":
        void this.submitSession();
        break;
      case "reset":
        this.resetSession();
        break;
      case "font":
        this.store.update(toggleFontScale);
        break;
    }
  }

  private onSubmitForm(ev: Event): void {
    ev.preventDefault();
    const form = ev.target as HTMLFormElement;
    if (form.getAttribute("data-form") !== "med") return;
    const input = form.querySelector<HTMLInputElement>("input[name=med]");
    if (input && input.value.trim()) {
      this.store.update((s) => addMedication(s, input.value));
      this.renderCurrent();
    }
  }

  /** Send the session to the service and render what came back. */
  async submitSession(): Promise<void> {
    const state = this.store.state;
    if (state.selectedSymptoms.length === 0) return;
    const request = buildRequest(state.selectedSymptoms, state.medications);
    try {
      const response = await this.deps.api.recommend(request);
      this.store.update((s) => withResponse(s, response));
      this.view = "result";
    } catch (err) {
      if (err instanceof ServiceUnreachableError) {
        this.view = "retry";
      } else if (err instanceof RequestRejectedError && err.status === 400) {
        this.renderCurrent();
        this.showInlineError(`Please adjust your selection: ${err.message}`);
        return;
      } else {
        this.view = "retry";
      }
    }
    this.renderCurrent();
  }

  /** Wipe the session; nothing survives in memory or storage. */
  resetSession(): void {
    this.store.reset();
    this.view = "picker";
    this.renderCurrent();
  }

  private showInlineError(message: string): void {
    const slot = this.deps.root.querySelector(".inline-feedback");
    if (slot) slot.innerHTML = renderValidation(message);
  }
}
