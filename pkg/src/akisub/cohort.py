"""ICU stay data model and a seeded synthetic cohort generator.

The generator plants three case archetypes with distinct structured profiles
(means calibrated to published per-subtype statistics), KDIGO-consistent
creatinine/urine trajectories (archetype 1 -> stage 1, 2 -> stage 3,
3 -> stage 2), and notes whose tokens carry complementary risk and archetype
signal. Controls never satisfy any KDIGO clause; a fraction of controls are
"mimics" whose structured profile looks case-like so that notes add
information beyond the structured data.

Cohort files are JSON Lines with a versioned header record; see
`write_cohort` for the schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError

SEXES = ("male", "female")
ETHNICITIES = ("white", "black", "asian", "other")

CHART_VARIABLES = ("diasbp", "glucose", "heartrate", "meanbp",
                   "resprate", "spo2", "sysbp", "temp")
LAB_VARIABLES = ("bicarbonate", "bun", "calcium", "chloride", "creatinine",
                 "hemoglobin", "inr", "platelet", "potassium", "pt", "ptt",
                 "wbc", "urine_rate")
TIME_VARIABLES = CHART_VARIABLES + LAB_VARIABLES

MED_FLAGS = ("diuretics", "nsaid", "radiocontrast", "angiotensin")
COMORBIDITY_FLAGS = ("chf", "peripheral_vascular", "hypertension", "diabetes",
                     "liver_disease", "mi", "cad", "cirrhosis", "jaundice")

COHORT_FORMAT = "akisub-cohort"
COHORT_VERSION = 1

# generation horizon: supports observation windows of 24 or 48 h plus the
# 7-day prediction window
OBS_HORIZON_HOURS = 48.0
STAY_HORIZON_HOURS = 48.0 + 7 * 24.0  # 216


@dataclass
class EventSeries:
    """Time-ordered measurements of one variable (offsets in hours from admission)."""

    variable: str
    points: list[tuple[float, float]] = field(default_factory=list)

    def validate(self):
        prev = -np.inf
        for t, v in self.points:
            if t < 0:
                raise DataError(f"{self.variable}: negative offset {t}")
            if t <= prev:
                raise DataError(f"{self.variable}: offsets not strictly increasing at {t}")
            if not np.isfinite(v):
                raise DataError(f"{self.variable}: non-finite value at {t}")
            prev = t

    def in_window(self, lo: float, hi: float) -> list[tuple[float, float]]:
        return [(t, v) for t, v in self.points if lo <= t <= hi]


@dataclass
class ClinicalNote:
    offset_hours: float
    tokens: list[str]

    def validate(self):
        if not self.tokens:
            raise DataError("note with empty token list")
        if self.offset_hours < 0:
            raise DataError(f"note with negative offset {self.offset_hours}")


@dataclass
class IcuStay:
    stay_id: str
    patient_id: str
    age: float
    sex: str
    ethnicity: str
    weight_kg: float
    med_flags: dict[str, int]
    comorbidity_flags: dict[str, int]
    chart_series: dict[str, EventSeries]
    lab_series: dict[str, EventSeries]
    notes: list[ClinicalNote]
    planted_subtype: int | None = None  # generator ground truth; models never read it

    def validate(self):
        if self.age <= 0 or self.weight_kg <= 0:
            raise DataError(f"{self.stay_id}: non-positive age or weight")
        if self.sex not in SEXES or self.ethnicity not in ETHNICITIES:
            raise DataError(f"{self.stay_id}: unknown sex/ethnicity")
        if set(self.med_flags) != set(MED_FLAGS) or set(self.comorbidity_flags) != set(COMORBIDITY_FLAGS):
            raise DataError(f"{self.stay_id}: flag vocabulary mismatch")
        if set(self.chart_series) != set(CHART_VARIABLES):
            raise DataError(f"{self.stay_id}: chart variable vocabulary mismatch")
        if set(self.lab_series) != set(LAB_VARIABLES):
            raise DataError(f"{self.stay_id}: lab variable vocabulary mismatch")
        for series in list(self.chart_series.values()) + list(self.lab_series.values()):
            series.validate()
        for note in self.notes:
            note.validate()

    def series(self, variable: str) -> EventSeries:
        if variable in self.chart_series:
            return self.chart_series[variable]
        if variable in self.lab_series:
            return self.lab_series[variable]
        raise DataError(f"unknown variable {variable!r}")


@dataclass
class CohortConfig:
    n_stays: int
    case_fraction: float = 0.2
    subtype_mixture: tuple[float, float, float] = (0.595, 0.088, 0.317)
    vocab_size: int = 160
    noise_scale: float = 1.0
    seed: int = 0

    def validate(self):
        if self.n_stays <= 0:
            raise ConfigError("n_stays must be positive")
        if not 0.0 < self.case_fraction < 1.0:
            raise ConfigError("case_fraction must be in (0, 1)")
        w = np.asarray(self.subtype_mixture, dtype=float)
        if len(w) != 3 or np.any(w < 0) or w.sum() <= 0:
            raise ConfigError("subtype_mixture needs 3 non-negative weights with positive sum")
        if self.vocab_size < len(_BASE_TOKENS):
            raise ConfigError(f"vocab_size must be at least {len(_BASE_TOKENS)}")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")

    def normalized_mixture(self) -> np.ndarray:
        w = np.asarray(self.subtype_mixture, dtype=float)
        return w / w.sum()


# ---------------------------------------------------------------------------
# archetype tables
# ---------------------------------------------------------------------------

# per variable: observation-window means for archetypes (1, 2, 3, control),
# between-stay sd, observation noise sd, physiological clamp
_VAR_ROWS = {
    #                 a1       a2       a3      ctrl   b_sd   o_sd     lo      hi
    "diasbp":      (58.64,   61.13,   60.45,  62.0,   2.8,   2.2,    30.0,  110.0),
    "glucose":     (134.32, 145.56,  144.22, 118.0,   7.0,   6.0,    50.0,  400.0),
    "heartrate":   (87.22,   90.65,   86.12,  84.0,   3.8,   3.0,    35.0,  180.0),
    "meanbp":      (76.09,   78.46,   79.02,  78.0,   3.0,   2.4,    40.0,  140.0),
    "resprate":    (18.08,   20.26,   19.19,  17.0,   1.0,   0.9,     6.0,   45.0),
    "spo2":        (96.37,   96.27,   97.23,  97.5,   0.5,   0.5,    80.0,  100.0),
    "sysbp":       (115.67, 120.22,  120.43, 121.0,   3.8,   3.0,    60.0,  220.0),
    "temp":        (36.85,   36.82,   36.82,  36.8,   0.15,  0.12,   33.0,   41.0),
    "bicarbonate": (23.87,   24.70,   24.51,  24.5,   1.0,   0.8,    10.0,   45.0),
    "bun":         (28.66,   28.65,   27.66,  18.0,   3.3,   2.0,     3.0,  140.0),
    "calcium":     (8.36,     8.40,    8.78,   8.6,   0.19,  0.15,    5.0,   13.0),
    "chloride":    (105.19, 102.22,  103.38, 104.0,   1.2,   1.0,    85.0,  125.0),
    "creatinine":  (1.55,     1.96,    1.69,   1.05,  None,  None,   None,   None),  # handled separately
    "hemoglobin":  (13.55,   17.18,   15.53,  11.8,   0.52,  0.40,    5.0,   22.0),
    "inr":         (1.47,     1.54,    1.47,   1.30,  0.10,  0.06,    0.8,    8.0),
    "platelet":    (242.08, 384.96,  265.31, 230.0,  21.0,  12.0,    20.0,  900.0),
    "potassium":   (4.24,     4.25,    4.22,   4.10,  0.14,  0.12,    2.2,    7.5),
    "pt":          (15.45,   17.30,   15.55,  14.5,   0.9,   0.6,     9.0,   45.0),
    "ptt":         (35.12,   39.24,   36.94,  32.0,   2.5,   1.6,    18.0,  120.0),
    "wbc":         (10.59,   15.71,   13.23,   9.5,   1.3,   1.0,     1.0,   60.0),
    "urine_rate":  (1.35,     1.02,    1.19,   1.50,  None,  None,   None,   None),  # handled separately
}

# renal series get tight noise with hard clamps so planted labels are stable
_SCR_BETWEEN_SD = {1: 0.07, 2: 0.09, 3: 0.07, 0: 0.12}
_SCR_OBS_SD = 0.032
_SCR_OBS_CLAMP = 0.08
_URINE_BETWEEN_SD = {1: 0.06, 2: 0.06, 3: 0.06, 0: 0.09}
_URINE_OBS_SD = 0.024
_URINE_OBS_CLAMP = 0.06

# planted creatinine ramp: fold increase over baseline by archetype stage
_SCR_RAMP_RATIO = {1: (1.60, 1.78), 2: (3.40, 3.80), 3: (1.60, 1.78)}
_PLANTED_STAGE = {1: 1, 2: 3, 3: 2}

# archetype 3 additionally gets a sustained oliguria dip (stage 2 urine clause)
_DIP_LEVEL = (0.34, 0.42)
_DIP_DURATION = (16.0, 20.0)

_ONSET_RANGE = (55.0, 128.0)       # after both candidate observation windows
_RAMP_DURATION = (18.0, 34.0)

_AGE = {1: (63.03, 9.0), 2: (66.81, 9.0), 3: (65.07, 9.0), 0: (61.0, 13.0)}
_MALE_P = {1: 0.6431, 2: 0.4613, 3: 0.5485, 0: 0.56}
_ETHNICITY_P = {
    1: (0.20, 0.55, 0.15, 0.10),
    2: (0.14, 0.69, 0.11, 0.06),
    3: (0.25, 0.54, 0.17, 0.04),
    0: (0.35, 0.40, 0.15, 0.10),
}
# flags by archetype (diuretics, nsaid, radiocontrast, angiotensin): the
# post-surgical archetype is medication-light, the severe archetype is
# diuretic/angiotensin-heavy, the contrast-injury archetype is contrast-heavy
_MED_P = {
    1: (0.10, 0.12, 0.06, 0.10),
    2: (0.75, 0.45, 0.25, 0.55),
    3: (0.40, 0.28, 0.70, 0.30),
    0: (0.08, 0.08, 0.05, 0.10),
}
# (chf, peripheral_vascular, hypertension, diabetes, liver_disease, mi, cad,
# cirrhosis, jaundice); the third archetype carries the hepatic burden
_COMORBIDITY_P = {
    1: (0.35, 0.10, 0.45, 0.20, 0.06, 0.10, 0.30, 0.04, 0.02),
    2: (0.80, 0.25, 0.70, 0.60, 0.18, 0.30, 0.55, 0.10, 0.08),
    3: (0.55, 0.18, 0.60, 0.55, 0.55, 0.18, 0.40, 0.45, 0.30),
    0: (0.25, 0.08, 0.40, 0.18, 0.05, 0.08, 0.25, 0.03, 0.02),
}

# Cases express ONE archetype coherently in both modalities: the structured
# profile and the note markers agree. Controls come in three flavours:
# mismatched (an archetype profile paired with a different archetype's notes),
# profile-only mimics (archetype profile, unremarkable notes), and healthy.
# Single-modality models therefore hit a ceiling (each channel alone cannot
# tell mimics from cases), while a model that compares the note query against
# the structured memory can detect the agreement; within cases, the agreed
# archetype identity is what the clustering should recover.
_MISMATCH_CONTROL_P = 0.35
_PROFILE_MIMIC_CONTROL_P = 0.10
_MIMIC_PROFILE_P = (0.595, 0.088, 0.317)
# every note of a case holds exactly this many marker tokens from its archetype
# pool; unremarkable notes hold one (sometimes two) markers from a random pool
# chosen once per stay
_CASE_MARKERS_PER_NOTE = {1: 1, 2: 5, 3: 2}
_CONTROL_MARKERS_PER_NOTE = ((1, 2), (0.8, 0.2))
_RISK_TOKEN_P = 0.02               # shared flavor tokens, same rate for everyone
_REPEAT_STAY_P = 0.07              # chance a stay belongs to the previous patient
_MISSING_P = 0.15                  # observation-window dropout per measurement

# ---------------------------------------------------------------------------
# note vocabulary
# ---------------------------------------------------------------------------

_FILLER_TOKENS = (
    "patient stable overnight plan continue monitor tolerating diet vitals "
    "afebrile pain controlled family updated ambulating oriented alert resting "
    "comfortable improving reviewed labs pending consult ordered morning evening "
    "unchanged status exam unremarkable breathing room air appetite fair sleep "
    "adequate nursing repositioned skin intact"
).split()

# filler usage follows a Zipf profile, like real note text
_FILLER_WEIGHTS = 1.0 / np.arange(1, len(_FILLER_TOKENS) + 1) ** 1.6
_FILLER_WEIGHTS /= _FILLER_WEIGHTS.sum()

_RISK_TOKENS = ("oliguria", "hypotension", "sepsis", "nephrotoxic", "rising", "bolus")

_ARCHETYPE_TOKENS = {
    1: ("cabg", "wires", "postop", "bypass"),
    2: ("pressors", "shock", "anuric", "lasix"),
    3: ("contrast", "cirrhotic", "ascites", "foley"),
}

_BASE_TOKENS = tuple(_FILLER_TOKENS) + _RISK_TOKENS + tuple(
    t for a in (1, 2, 3) for t in _ARCHETYPE_TOKENS[a])


def note_token_universe(vocab_size: int) -> tuple[str, ...]:
    """The closed token list the generator draws from (padded with rare fillers)."""
    extra = tuple(f"word{i:03d}" for i in range(vocab_size - len(_BASE_TOKENS)))
    return _BASE_TOKENS + extra


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_cohort(config: CohortConfig) -> list[IcuStay]:
    """Deterministically generate `config.n_stays` synthetic ICU stays."""
    config.validate()
    mixture = config.normalized_mixture()
    tokens = note_token_universe(config.vocab_size)
    extra_fillers = tokens[len(_BASE_TOKENS):]

    assign_rng = np.random.default_rng([config.seed, 0xA55])
    stays: list[IcuStay] = []
    patient_counter = -1
    prev_patient: tuple[str, dict] | None = None

    for i in range(config.n_stays):
        rng = np.random.default_rng([config.seed, 1, i])
        repeat = prev_patient is not None and assign_rng.random() < _REPEAT_STAY_P
        if repeat:
            patient_id, demo = prev_patient
            stay_no = 2
        else:
            patient_counter += 1
            patient_id = f"p{patient_counter:05d}"
            demo = None
            stay_no = 1

        is_case = rng.random() < config.case_fraction
        subtype = int(1 + rng.choice(3, p=mixture)) if is_case else None
        profile, note_arche = _draw_flavor(rng, is_case, subtype)

        if demo is None:
            demo = _draw_demographics(rng, profile)
            prev_patient = (patient_id, demo)
        else:
            prev_patient = None  # at most two stays per patient

        stay = _generate_stay(rng, config, f"s{i:05d}-{stay_no}", patient_id, demo,
                              is_case, subtype, profile, note_arche, extra_fillers)
        stays.append(stay)
    return stays


def _draw_flavor(rng, is_case, subtype):
    """(structured profile, note archetype): cases agree in both channels;
    controls may be mismatched, profile-only mimics, or healthy."""
    if is_case:
        return subtype, subtype
    u = rng.random()
    if u < _MISMATCH_CONTROL_P:
        profile = int(1 + rng.choice(3, p=_MIMIC_PROFILE_P))
        others = [a for a in (1, 2, 3) if a != profile]
        return profile, others[int(rng.integers(2))]
    if u < _MISMATCH_CONTROL_P + _PROFILE_MIMIC_CONTROL_P:
        return int(1 + rng.choice(3, p=_MIMIC_PROFILE_P)), None
    return 0, None


def _draw_demographics(rng, arche: int) -> dict:
    mean, sd = _AGE[arche]
    age = float(np.clip(rng.normal(mean, sd), 21.0, 92.0))
    sex = "male" if rng.random() < _MALE_P[arche] else "female"
    ethnicity = ETHNICITIES[int(rng.choice(4, p=_ETHNICITY_P[arche]))]
    weight = float(np.clip(rng.normal(82.0, 14.0), 45.0, 160.0))
    meds = {n: int(rng.random() < p) for n, p in zip(MED_FLAGS, _MED_P[arche])}
    como = {n: int(rng.random() < p) for n, p in zip(COMORBIDITY_FLAGS, _COMORBIDITY_P[arche])}
    return {"age": age, "sex": sex, "ethnicity": ethnicity, "weight_kg": weight,
            "med_flags": meds, "comorbidity_flags": como}


def _level(rng, var: str, arche: int) -> float:
    a1, a2, a3, ctrl, b_sd, _, lo, hi = _VAR_ROWS[var]
    mean = (ctrl, a1, a2, a3)[arche]
    if var == "creatinine":
        b_sd = _SCR_BETWEEN_SD[arche]
        lo, hi = 0.4, 12.0
    elif var == "urine_rate":
        b_sd = _URINE_BETWEEN_SD[arche]
        lo, hi = 0.55, 4.0
    level = rng.normal(mean, b_sd)
    level = float(np.clip(level, mean - 2.5 * b_sd, mean + 2.5 * b_sd))
    return float(np.clip(level, lo, hi))


def _noisy(rng, level: float, sd: float, clamp: float | None, scale: float,
           lo: float | None, hi: float | None) -> float:
    noise = rng.normal(0.0, sd * scale) if sd > 0 and scale > 0 else 0.0
    if clamp is not None:
        noise = float(np.clip(noise, -clamp, clamp))
    v = level + noise
    if lo is not None:
        v = max(v, lo)
    if hi is not None:
        v = min(v, hi)
    return float(v)


def _generate_stay(rng, config, stay_id, patient_id, demo, is_case, subtype,
                   profile, note_arche, extra_fillers) -> IcuStay:
    scale = config.noise_scale
    chart: dict[str, EventSeries] = {}
    labs: dict[str, EventSeries] = {}

    # non-renal variables: one observation per 2 h bin over the 48 h horizon,
    # dropped independently to exercise imputation
    for var in TIME_VARIABLES:
        if var in ("creatinine", "urine_rate"):
            continue
        _, _, _, _, _, o_sd, lo, hi = _VAR_ROWS[var]
        level = _level(rng, var, profile)
        pts = []
        for j in range(int(OBS_HORIZON_HOURS / 2)):
            if rng.random() < _MISSING_P:
                continue
            t = 2.0 * j + rng.uniform(0.1, 1.9)
            pts.append((float(t), _noisy(rng, level, o_sd, None, scale, lo, hi)))
        series = EventSeries(var, pts)
        (chart if var in CHART_VARIABLES else labs)[var] = series

    labs["creatinine"] = _scr_series(rng, profile, is_case, subtype, scale)
    labs["urine_rate"] = _urine_series(rng, profile, is_case, subtype, scale)

    notes = _generate_notes(rng, note_arche, extra_fillers)

    return IcuStay(stay_id=stay_id, patient_id=patient_id, planted_subtype=subtype,
                   chart_series=chart, lab_series=labs, notes=notes, **demo)


def _scr_series(rng, profile, is_case, subtype, scale) -> EventSeries:
    base = _level(rng, "creatinine", profile)
    if is_case:
        ratio = rng.uniform(*_SCR_RAMP_RATIO[subtype])
        onset = rng.uniform(*_ONSET_RANGE)
        ramp = rng.uniform(*_RAMP_DURATION)
    pts = []
    t = 1.0
    while t < STAY_HORIZON_HOURS:
        value = base
        if is_case and t > onset:
            frac = min(1.0, (t - onset) / ramp)
            value = base * (1.0 + (ratio - 1.0) * frac)
        drop = t <= OBS_HORIZON_HOURS and rng.random() < _MISSING_P
        v = _noisy(rng, value, _SCR_OBS_SD, _SCR_OBS_CLAMP, scale, 0.2, None)
        if not drop:
            pts.append((t, v))
        t += 6.0
    return EventSeries("creatinine", pts)


def _urine_series(rng, profile, is_case, subtype, scale) -> EventSeries:
    base = _level(rng, "urine_rate", profile)
    dip = None
    if is_case and subtype == 3:
        start = rng.uniform(55.0, 135.0)
        dip = (start, start + rng.uniform(*_DIP_DURATION), rng.uniform(*_DIP_LEVEL))
    pts = []
    t = 1.0
    while t < STAY_HORIZON_HOURS:
        value = base
        if dip is not None and dip[0] <= t < dip[1]:
            value = dip[2]
        drop = t <= OBS_HORIZON_HOURS and rng.random() < _MISSING_P
        v = _noisy(rng, value, _URINE_OBS_SD, _URINE_OBS_CLAMP, scale, 0.05, None)
        if not drop:
            pts.append((t, v))
        t += 2.0
    return EventSeries("urine_rate", pts)


def _generate_notes(rng, note_arche, extra_fillers) -> list[ClinicalNote]:
    """Notes expressing one archetype's markers, or unremarkable notes (None)."""
    n_notes = int(rng.integers(2, 5))
    offsets = np.sort(rng.uniform(0.5, 23.5, size=n_notes))
    pool = _ARCHETYPE_TOKENS[note_arche if note_arche else int(rng.integers(1, 4))]
    notes = []
    for off in offsets:
        if note_arche:
            n_markers = _CASE_MARKERS_PER_NOTE[note_arche]
        else:
            counts, probs = _CONTROL_MARKERS_PER_NOTE
            n_markers = int(rng.choice(counts, p=probs))
        n_tok = int(rng.integers(max(8, n_markers + 4), 17))
        toks = [pool[int(rng.integers(len(pool)))] for _ in range(n_markers)]
        for _ in range(n_tok - n_markers):
            u = rng.random()
            if u < _RISK_TOKEN_P:
                toks.append(_RISK_TOKENS[int(rng.integers(len(_RISK_TOKENS)))])
            elif extra_fillers and u > 0.99:
                toks.append(extra_fillers[int(rng.integers(len(extra_fillers)))])
            else:
                toks.append(_FILLER_TOKENS[int(rng.choice(len(_FILLER_TOKENS),
                                                          p=_FILLER_WEIGHTS))])
        toks = [toks[i] for i in rng.permutation(len(toks))]
        notes.append(ClinicalNote(float(off), toks))
    return notes


def planted_stage(subtype: int) -> int:
    """KDIGO stage the generator plants for an archetype (1->1, 2->3, 3->2)."""
    return _PLANTED_STAGE[subtype]


# ---------------------------------------------------------------------------
# serialization (JSON Lines, versioned header record)
# ---------------------------------------------------------------------------

def _stay_to_record(stay: IcuStay) -> dict:
    return {
        "stay_id": stay.stay_id,
        "patient_id": stay.patient_id,
        "age": stay.age,
        "sex": stay.sex,
        "ethnicity": stay.ethnicity,
        "weight_kg": stay.weight_kg,
        "med_flags": stay.med_flags,
        "comorbidity_flags": stay.comorbidity_flags,
        "chart": {v: s.points for v, s in sorted(stay.chart_series.items())},
        "labs": {v: s.points for v, s in sorted(stay.lab_series.items())},
        "notes": [{"offset_hours": n.offset_hours, "tokens": n.tokens} for n in stay.notes],
        "planted_subtype": stay.planted_subtype,
    }


def _record_to_stay(rec: dict) -> IcuStay:
    return IcuStay(
        stay_id=rec["stay_id"],
        patient_id=rec["patient_id"],
        age=rec["age"],
        sex=rec["sex"],
        ethnicity=rec["ethnicity"],
        weight_kg=rec["weight_kg"],
        med_flags={k: int(v) for k, v in rec["med_flags"].items()},
        comorbidity_flags={k: int(v) for k, v in rec["comorbidity_flags"].items()},
        chart_series={v: EventSeries(v, [(float(t), float(x)) for t, x in pts])
                      for v, pts in rec["chart"].items()},
        lab_series={v: EventSeries(v, [(float(t), float(x)) for t, x in pts])
                    for v, pts in rec["labs"].items()},
        notes=[ClinicalNote(float(n["offset_hours"]), list(n["tokens"])) for n in rec["notes"]],
        planted_subtype=rec["planted_subtype"],
    )


def write_cohort(stays: list[IcuStay], path) -> None:
    path = Path(path)
    header = {"format": COHORT_FORMAT, "version": COHORT_VERSION, "n_stays": len(stays)}
    with path.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for stay in stays:
            fh.write(json.dumps(_stay_to_record(stay), sort_keys=True) + "\n")


def read_cohort(path) -> list[IcuStay]:
    path = Path(path)
    stays = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from e
            if lineno == 1:
                if rec.get("format") != COHORT_FORMAT:
                    raise ParseError(f"{path}: line 1: missing cohort header")
                continue
            try:
                stays.append(_record_to_stay(rec))
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(f"{path}: line {lineno}: malformed stay record ({e})") from e
    return stays
