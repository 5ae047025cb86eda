/**
 * Curated symptom picker entries. The symptom -> diagnosis-code mapping is a
 * provisional fixture list for the kiosk demo; urgent entries carry one of
 * the configured red-flag tags and route the session to professional care
 * instead of a recommendation.
 */

export interface SymptomEntry {
  label: string;
  dxCode: string;
  urgentFlag?: string;
}

export const SYMPTOMS: SymptomEntry[] = [
  { label: "Headache", dxCode: "D0001" },
  { label: "Back pain", dxCode: "D0002" },
  { label: "Common cold", dxCode: "D0003" },
  { label: "Cough", dxCode: "D0004" },
  { label: "Heartburn", dxCode: "D0005" },
  { label: "Seasonal allergies", dxCode: "D0006" },
  { label: "Mild fever", dxCode: "D0007" },
  { label: "Sore throat", dxCode: "D0008" },
  { label: "Upset stomach", dxCode: "D0009" },
  { label: "Joint pain", dxCode: "D0010" },
  { label: "Trouble sleeping", dxCode: "D0011" },
  { label: "Skin rash", dxCode: "D0012" },
  { label: "Chest pain", dxCode: "D0090", urgentFlag: "chest_pain" },
  { label: "Severe allergic reaction", dxCode: "D0091", urgentFlag: "severe_allergic_reaction" },
  { label: "Difficulty breathing", dxCode: "D0092", urgentFlag: "breathing_difficulty" },
  { label: "High fever with confusion or stiff neck", dxCode: "D0093", urgentFlag: "high_fever" },
  { label: "Stroke symptoms (face droop, slurred speech)", dxCode: "D0094", urgentFlag: "stroke_symptoms" },
  { label: "Severe abdominal pain", dxCode: "D0095", urgentFlag: "severe_abdominal_pain" },
];

/** Every urgent entry must map onto a configured red-flag tag. */
export function validateSymptomCatalog(
  entries: SymptomEntry[],
  redFlags: string[],
): string[] {
  const allowed = new Set(redFlags);
  return entries
    .filter((e) => e.urgentFlag !== undefined && !allowed.has(e.urgentFlag))
    .map((e) => e.label);
}
