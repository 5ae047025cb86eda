/** Session state: pure update functions plus a small store that persists a
 * working copy, auto-resets after inactivity, and wipes everything on reset
 * (kiosks are shared devices; nothing may outlive a session). */

import type { SymptomEntry } from "./symptoms.js";
import type { RecommendResponse } from "./types.js";

export type FontScale = "normal" | "large";

export interface SessionState {
  selectedSymptoms: SymptomEntry[];
  medications: string[];
  lastResponse: RecommendResponse | null;
  fontScale: FontScale;
}

export function initialState(): SessionState {
  return {
    selectedSymptoms: [],
    medications: [],
    lastResponse: null,
    fontScale: "normal",
  };
}

export function toggleSymptom(state: SessionState, entry: SymptomEntry): SessionState {
  const selected = state.selectedSymptoms.some((s) => s.dxCode === entry.dxCode)
    ? state.selectedSymptoms.filter((s) => s.dxCode !== entry.dxCode)
    : [...state.selectedSymptoms, entry];
  return { ...state, selectedSymptoms: selected };
}

export function addMedication(state: SessionState, raw: string): SessionState {
  const code = raw.trim().toUpperCase();
  if (!code || state.medications.includes(code)) return state;
  return { ...state, medications: [...state.medications, code] };
}

export function removeMedication(state: SessionState, code: string): SessionState {
  return { ...state, medications: state.medications.filter((m) => m !== code) };
}

export function withResponse(
  state: SessionState,
  response: RecommendResponse | null,
): SessionState {
  return { ...state, lastResponse: response };
}

export function toggleFontScale(state: SessionState): SessionState {
  return { ...state, fontScale: state.fontScale === "large" ? "normal" : "large" };
}

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export interface TimerHandle {
  id: ReturnType<typeof setTimeout> | null;
}

export const STORAGE_KEY = "kiosk-session";

type Listener = (state: SessionState) => void;

export class SessionStore {
  private current: SessionState = initialState();
  private listeners: Listener[] = [];
  private timer: TimerHandle = { id: null };

  constructor(
    private readonly storage: StorageLike,
    private readonly inactivityTimeoutMs: number,
    private readonly setTimeoutFn: typeof setTimeout = setTimeout,
    private readonly clearTimeoutFn: typeof clearTimeout = clearTimeout,
  ) {}

  get state(): SessionState {
    return this.current;
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  /** Apply a pure update, persist the working copy, restart the idle clock. */
  update(fn: (state: SessionState) => SessionState): void {
    this.current = fn(this.current);
    this.storage.setItem(STORAGE_KEY, JSON.stringify(this.current));
    this.touch();
    this.emit();
  }

  /** Clear state and storage; idempotent. */
  reset(): void {
    this.current = initialState();
    this.storage.removeItem(STORAGE_KEY);
    if (this.timer.id !== null) {
      this.clearTimeoutFn(this.timer.id);
      this.timer.id = null;
    }
    this.emit();
  }

  /** Restart the inactivity countdown; fires reset() when it lapses. */
  touch(): void {
    if (this.timer.id !== null) this.clearTimeoutFn(this.timer.id);
    this.timer.id = this.setTimeoutFn(() => this.reset(), this.inactivityTimeoutMs);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.current);
  }
}
