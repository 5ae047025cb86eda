"""EHR data model, JSON-Lines dataset IO, NDC->ATC3 mapping, patient-level
splits, and a synthetic cohort generator.

Real claims data is access-restricted, so the generator produces
schema-compatible records calibrated to published cohort moments: visit
counts follow a shifted geometric (minimum two visits), per-visit code counts
a clamped Poisson, codes a Zipf draw, and medications are correlated with
diagnoses through a fixed bipartite affinity map so the label structure is
learnable rather than noise.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

ATC3_RE = re.compile(r"^[A-Z]\d{2}[A-Z]$")
ATC_PREFIX_RE = re.compile(r"^[A-Z]\d{2}[A-Z]")

VOCAB_KINDS = ("diagnosis", "procedure", "medication")


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


class UnknownCodeError(KeyError):
    """A record referenced a code outside the declared vocabulary."""


class UnmappedNdcError(KeyError):
    """NDC code with no ATC3 mapping."""


class InfeasibleConfigError(ValueError):
    """Generator config cannot produce valid records."""


@dataclass(frozen=True)
class CodeVocab:
    """Closed, ordered code vocabulary with a code -> position bijection."""

    kind: str
    codes: tuple[str, ...]
    index: dict[str, int] = field(repr=False)

    @classmethod
    def from_codes(cls, kind: str, codes) -> "CodeVocab":
        codes = tuple(codes)
        if len(set(codes)) != len(codes):
            raise ValueError(f"{kind} vocab contains duplicate codes")
        return cls(kind=kind, codes=codes, index={c: i for i, c in enumerate(codes)})

    def __len__(self) -> int:
        return len(self.codes)

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.codes).encode()).hexdigest()


@dataclass(frozen=True)
class Vocabs:
    diagnosis: CodeVocab
    procedure: CodeVocab
    medication: CodeVocab

    def hashes(self) -> dict[str, str]:
        return {k: getattr(self, k).sha256() for k in VOCAB_KINDS}


@dataclass
class Visit:
    """One admission: diagnosis/procedure indices and the medication multi-hot
    (medications administered early in the admission)."""

    diagnoses: list[int]
    procedures: list[int]
    medications: np.ndarray

    def med_indices(self) -> np.ndarray:
        return np.flatnonzero(self.medications)


@dataclass
class PatientRecord:
    patient_id: str
    visits: list[Visit]


@dataclass
class LoadReport:
    """Non-fatal invariant violations encountered while loading."""

    visits_rejected: list[tuple[int, str]] = field(default_factory=list)
    patients_rejected: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def n_violations(self) -> int:
        return len(self.visits_rejected) + len(self.patients_rejected)


@dataclass
class GeneratorConfig:
    n_patients: int = 6350
    mean_visits: float = 2.36
    mean_diagnoses: float = 10.51
    mean_procedures: float = 3.84
    mean_medications: float = 8.80
    n_diagnosis: int = 1958
    n_procedure: int = 1426
    n_medication: int = 145
    zipf_s: float = 1.1
    affinity_per_dx: int = 3
    affinity_strength: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        for name in ("mean_diagnoses", "mean_procedures", "mean_medications"):
            if getattr(self, name) <= 0:
                raise InfeasibleConfigError(f"{name} must be > 0")
        if self.mean_visits < 2:
            raise InfeasibleConfigError("mean_visits must be >= 2 (cohort keeps multi-visit patients)")
        if self.mean_diagnoses > self.n_diagnosis:
            raise InfeasibleConfigError("mean_diagnoses exceeds diagnosis vocab size")
        if self.mean_procedures > self.n_procedure:
            raise InfeasibleConfigError("mean_procedures exceeds procedure vocab size")
        if self.mean_medications > self.n_medication:
            raise InfeasibleConfigError("mean_medications exceeds medication vocab size")
        if self.n_patients < 1:
            raise InfeasibleConfigError("n_patients must be >= 1")


# --------------------------------------------------------------------- codes

def synthetic_atc3_codes(n: int) -> list[str]:
    """Deterministic ATC3-shaped codes (letter, two digits, letter)."""
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    out = []
    for i in range(n):
        out.append(f"{letters[i % 26]}{(i // 26) % 100:02d}{letters[(i // 2600) % 26]}")
    return out


def _default_vocabs(cfg: GeneratorConfig) -> Vocabs:
    return Vocabs(
        diagnosis=CodeVocab.from_codes("diagnosis", (f"D{i:04d}" for i in range(cfg.n_diagnosis))),
        procedure=CodeVocab.from_codes("procedure", (f"P{i:04d}" for i in range(cfg.n_procedure))),
        medication=CodeVocab.from_codes("medication", synthetic_atc3_codes(cfg.n_medication)),
    )


# ----------------------------------------------------------------- generator

def _zipf_log_weights(n: int, s: float) -> np.ndarray:
    return -s * np.log(np.arange(1, n + 1, dtype=np.float64))


def _weighted_distinct(rng: np.random.Generator, log_w: np.ndarray, k: int) -> np.ndarray:
    """k distinct indices, heavier log-weights more likely (Gumbel top-k)."""
    k = min(k, log_w.size)
    keys = log_w + rng.gumbel(size=log_w.size)
    if k == log_w.size:
        return np.sort(np.arange(log_w.size))
    top = np.argpartition(-keys, k)[:k]
    return np.sort(top)


def generate_synthetic(config: GeneratorConfig, seed: int | None = None
                       ) -> tuple[list[PatientRecord], Vocabs]:
    """Synthesize a cohort whose per-patient/per-visit count moments match the
    configured means. Deterministic for a given seed."""
    config.validate()
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 0])
    rng_aff = np.random.default_rng([seed, 1])

    vocabs = _default_vocabs(config)
    log_w_dx = _zipf_log_weights(config.n_diagnosis, config.zipf_s)
    log_w_px = _zipf_log_weights(config.n_procedure, config.zipf_s)
    log_w_rx = _zipf_log_weights(config.n_medication, config.zipf_s)

    # fixed diagnosis -> medication affinity map (the learnable signal);
    # pools sampled uniformly so the dx signal is not washed out by the
    # frequency skew of the visit-level draws
    affinity = np.empty((config.n_diagnosis, config.affinity_per_dx), dtype=np.int64)
    for d in range(config.n_diagnosis):
        affinity[d] = np.sort(rng_aff.choice(config.n_medication,
                                             size=config.affinity_per_dx, replace=False))

    records: list[PatientRecord] = []
    for pid in range(config.n_patients):
        if config.mean_visits == 2:
            n_visits = 2
        else:
            n_visits = 1 + rng.geometric(1.0 / (config.mean_visits - 1.0))
        visits = []
        for _ in range(n_visits):
            n_dx = int(np.clip(rng.poisson(config.mean_diagnoses), 1, config.n_diagnosis))
            n_px = int(np.clip(rng.poisson(config.mean_procedures), 1, config.n_procedure))
            n_rx = int(np.clip(rng.poisson(config.mean_medications), 1, config.n_medication))
            dx = _weighted_distinct(rng, log_w_dx, n_dx)
            px = _weighted_distinct(rng, log_w_px, n_px)

            pool = np.unique(affinity[dx].ravel())
            n_pool = min(int(round(config.affinity_strength * n_rx)), pool.size, n_rx)
            meds: list[int] = []
            if n_pool > 0:
                picked = _weighted_distinct(rng, log_w_rx[pool], n_pool)
                meds.extend(pool[picked].tolist())
            n_noise = n_rx - len(meds)
            if n_noise > 0:
                masked = log_w_rx.copy()
                masked[meds] = -np.inf
                noise = _weighted_distinct(rng, masked, n_noise)
                meds.extend(noise.tolist())
            multi_hot = np.zeros(config.n_medication, dtype=np.uint8)
            multi_hot[meds] = 1
            visits.append(Visit(diagnoses=dx.tolist(), procedures=px.tolist(),
                                medications=multi_hot))
        records.append(PatientRecord(patient_id=f"synth-{pid:05d}", visits=visits))
    return records, vocabs


# --------------------------------------------------------------------- split

def split_dataset(records: list[PatientRecord], seed: int
                  ) -> tuple[list[PatientRecord], list[PatientRecord], list[PatientRecord]]:
    """Patient-level 2/3 : 1/6 : 1/6 split; no patient spans splits."""
    if len(records) < 3:
        raise ValueError(f"need >= 3 records to split, got {len(records)}")
    order = np.random.default_rng(seed).permutation(len(records))
    n = len(records)
    n_val = max(1, n // 6)
    n_test = max(1, n // 6)
    shuffled = [records[i] for i in order]
    train = shuffled[: n - n_val - n_test]
    val = shuffled[n - n_val - n_test: n - n_test]
    test = shuffled[n - n_test:]
    return train, val, test


# ------------------------------------------------------------------- file IO

def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def save_dataset(path, records: list[PatientRecord], vocabs: Vocabs,
                 meta: dict | None = None) -> None:
    """Write the JSON-Lines dataset: header line with vocabs, one patient per
    line with codes (not indices)."""
    header: dict = {"version": 1, "vocabs": {k: list(getattr(vocabs, k).codes)
                                             for k in VOCAB_KINDS}}
    if meta is not None:
        header["meta"] = meta
    with open(path, "w") as fh:
        fh.write(_dumps(header) + "\n")
        for rec in records:
            fh.write(_dumps({
                "patient_id": rec.patient_id,
                "visits": [{
                    "dx": [vocabs.diagnosis.codes[i] for i in v.diagnoses],
                    "px": [vocabs.procedure.codes[i] for i in v.procedures],
                    "rx": [vocabs.medication.codes[i] for i in v.med_indices()],
                } for v in rec.visits],
            }) + "\n")


def load_dataset(path) -> tuple[list[PatientRecord], Vocabs, LoadReport, dict | None]:
    """Parse and validate a JSON-Lines dataset.

    Malformed lines and unknown codes are fatal (with line numbers); visits
    with empty diagnoses or medications are rejected per-visit, and patients
    left with fewer than two valid visits are dropped from the cohort - both
    reported, not fatal.
    """
    path = Path(path)
    report = LoadReport()
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty dataset file")

    def parse(lineno: int, text: str) -> dict:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise DatasetFormatError(f"line {lineno}: expected a JSON object")
        return obj

    header = parse(1, lines[0])
    if header.get("version") != 1:
        raise DatasetFormatError(f"line 1: unsupported version {header.get('version')!r}")
    if not isinstance(header.get("vocabs"), dict) or set(header["vocabs"]) < set(VOCAB_KINDS):
        raise DatasetFormatError("line 1: header must declare diagnosis/procedure/medication vocabs")
    vocabs = Vocabs(**{k: CodeVocab.from_codes(k, header["vocabs"][k]) for k in VOCAB_KINDS})
    meta = header.get("meta")

    def resolve(lineno: int, vocab: CodeVocab, codes) -> list[int]:
        out = []
        for c in codes:
            if c not in vocab.index:
                raise UnknownCodeError(f"line {lineno}: unknown {vocab.kind} code {c!r}")
            out.append(vocab.index[c])
        return out

    records: list[PatientRecord] = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        obj = parse(lineno, text)
        if "patient_id" not in obj or not isinstance(obj.get("visits"), list):
            raise DatasetFormatError(f"line {lineno}: patient needs patient_id and visits")
        visits = []
        for vi, v in enumerate(obj["visits"]):
            if not isinstance(v, dict) or not {"dx", "px", "rx"} <= set(v):
                raise DatasetFormatError(f"line {lineno}: visit {vi} needs dx/px/rx")
            dx = resolve(lineno, vocabs.diagnosis, v["dx"])
            px = resolve(lineno, vocabs.procedure, v["px"])
            rx = resolve(lineno, vocabs.medication, v["rx"])
            if not dx:
                report.visits_rejected.append((lineno, f"visit {vi}: empty diagnosis list"))
                continue
            if not rx:
                report.visits_rejected.append((lineno, f"visit {vi}: no medications"))
                continue
            multi_hot = np.zeros(len(vocabs.medication), dtype=np.uint8)
            multi_hot[rx] = 1
            visits.append(Visit(diagnoses=dx, procedures=px, medications=multi_hot))
        if len(visits) < 2:
            report.patients_rejected.append(
                (lineno, str(obj["patient_id"]), f"{len(visits)} valid visit(s), need >= 2"))
            continue
        records.append(PatientRecord(patient_id=str(obj["patient_id"]), visits=visits))
    return records, vocabs, report, meta


# ----------------------------------------------------------------- NDC->ATC3

def load_ndc_map(path) -> dict[str, str]:
    """Two-column TSV ``ndc<TAB>atc``; '#' comments allowed. ATC values of
    level >= 3 are truncated to level 3; conflicting duplicates are an error."""
    mapping: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetFormatError(f"line {lineno}: expected 'ndc<TAB>atc'")
            ndc, atc = parts[0].strip(), parts[1].strip()
            if not ATC_PREFIX_RE.match(atc):
                raise DatasetFormatError(f"line {lineno}: {atc!r} is not an ATC code")
            atc3 = atc[:4]
            if ndc in mapping and mapping[ndc] != atc3:
                raise DatasetFormatError(
                    f"line {lineno}: NDC {ndc!r} maps to both {mapping[ndc]!r} and {atc3!r}")
            mapping[ndc] = atc3
    return mapping


def ndc_to_atc3(code: str, mapping: dict[str, str]) -> str:
    """Map an NDC to its ATC3 code; ATC input of level >= 3 is truncated to
    the first four characters."""
    if code in mapping:
        return mapping[code]
    if ATC_PREFIX_RE.match(code):
        return code[:4]
    raise UnmappedNdcError(f"no ATC3 mapping for NDC {code!r}")


# ------------------------------------------------------------------- moments

def dataset_moments(records: list[PatientRecord]) -> dict[str, float]:
    """Sample means used to check generator calibration."""
    visits = [v for r in records for v in r.visits]
    return {
        "visits_per_patient": float(np.mean([len(r.visits) for r in records])),
        "diagnoses_per_visit": float(np.mean([len(v.diagnoses) for v in visits])),
        "procedures_per_visit": float(np.mean([len(v.procedures) for v in visits])),
        "medications_per_visit": float(np.mean([int(v.medications.sum()) for v in visits])),
    }


def config_from_dict(d: dict) -> GeneratorConfig:
    cfg = GeneratorConfig()
    unknown = set(d) - set(cfg.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
    return replace(cfg, **d)
