/** Kiosk configuration, loaded from a single JSON file next to the app. */

export interface KioskConfig {
  serviceUrl: string;
  inactivityTimeoutMs: number;
  redFlags: string[];
}

export const DEFAULT_CONFIG: KioskConfig = {
  serviceUrl: "http://127.0.0.1:8080",
  inactivityTimeoutMs: 60_000,
  redFlags: [
    "chest_pain",
    "severe_allergic_reaction",
    "breathing_difficulty",
    "high_fever",
    "stroke_symptoms",
    "severe_abdominal_pain",
  ],
};

export function parseConfig(raw: unknown): KioskConfig {
  if (typeof raw !== "object" || raw === null) {
    throw new Error("kiosk config must be a JSON object");
  }
  const cfg = { ...DEFAULT_CONFIG, ...(raw as Partial<KioskConfig>) };
  if (typeof cfg.serviceUrl !== "string" || !cfg.serviceUrl) {
    throw new Error("kiosk config needs a serviceUrl");
  }
  if (!Number.isFinite(cfg.inactivityTimeoutMs) || cfg.inactivityTimeoutMs <= 0) {
    throw new Error("inactivityTimeoutMs must be a positive number");
  }
  if (!Array.isArray(cfg.redFlags) || cfg.redFlags.some((f) => typeof f !== "string")) {
    throw new Error("redFlags must be a list of tags");
  }
  return cfg;
}

export async function loadConfig(
  url = "kiosk-config.json",
  fetchFn: typeof fetch = fetch,
): Promise<KioskConfig> {
  try {
    const res = await fetchFn(url);
    if (!res.ok) return DEFAULT_CONFIG;
    return parseConfig(await res.json());
  } catch {
    return DEFAULT_CONFIG;
  }
}
