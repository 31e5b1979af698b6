"""Feature extraction: binned/imputed/scaled stay tensors, static vectors,
the 147-entry summary vector for classical baselines, and note encodings.

Fixed layouts
-------------
Stay tensor columns follow `cohort.TIME_VARIABLES` (8 chart + 13 lab series,
d = 21); rows are 2-hour sub-windows of the observation window (t = t1/2).

Static vector (20 entries): age/100, sex one-hot (male, female), ethnicity
one-hot (white, black, asian, other), 4 medication flags, 9 comorbidity flags.

Baseline summary vector (147 entries): 19 continuous variables (the 8 chart
variables plus 11 labs: bicarbonate, bun, calcium, chloride, creatinine,
hemoglobin, platelet, potassium, pt, wbc, urine_rate; inr and ptt are folded
out in favour of pt) x 7 statistics (first, last, average, minimum, maximum,
slope per bin, count of raw observations) = 133, followed by 14 static
entries: age/100, male indicator, reference-coded ethnicity (black, asian,
other), 4 medication flags, and 5 comorbidity groups (cardiac = chf|mi|cad,
vascular = peripheral_vascular, hypertension, diabetes,
hepatic = liver_disease|cirrhosis|jaundice).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import (CHART_VARIABLES, COMORBIDITY_FLAGS, ETHNICITIES, LAB_VARIABLES,
                     MED_FLAGS, SEXES, TIME_VARIABLES, IcuStay)
from .errors import ArgumentError, ImputationError, SchemaError

SUB_WINDOW_HOURS = 2.0
STATIC_DIM = 20
BASELINE_DIM = 147

BASELINE_CONTINUOUS_VARS = CHART_VARIABLES + (
    "bicarbonate", "bun", "calcium", "chloride", "creatinine", "hemoglobin",
    "platelet", "potassium", "pt", "wbc", "urine_rate")
BASELINE_STATS = ("first", "last", "avg", "min", "max", "slope", "count")

PAD_TOKEN = "<pad>"


@dataclass
class StayTensor:
    """t x d matrix of 2-hour bin means with an observed/imputed mask."""

    stay_id: str
    values: np.ndarray
    mask: np.ndarray

    @property
    def t(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass
class ScalingStats:
    """Per-variable mean/min/max fitted on one training split only."""

    split_id: str
    mean: np.ndarray
    vmin: np.ndarray
    vmax: np.ndarray
    variables: tuple[str, ...] = TIME_VARIABLES


@dataclass
class BaselineFeatureVector:
    stay_id: str
    values: np.ndarray           # (147,)
    imputed: np.ndarray          # (147,) bool; True where a statistic was filled

    def __post_init__(self):
        if self.values.shape != (BASELINE_DIM,):
            raise ArgumentError(f"baseline vector must have {BASELINE_DIM} entries, "
                                f"got {self.values.shape}")


def bin_count(t1_hours: float) -> int:
    if t1_hours not in (24, 48):
        raise ArgumentError(f"t1_hours must be 24 or 48, got {t1_hours}")
    return int(t1_hours / SUB_WINDOW_HOURS)


def bin_events(stay: IcuStay, t1_hours: float) -> StayTensor:
    """Average each variable over 2-hour sub-windows; mask 0 where unobserved."""
    t = bin_count(t1_hours)
    known = set(TIME_VARIABLES)
    for name in list(stay.chart_series) + list(stay.lab_series):
        if name not in known:
            raise SchemaError(f"unknown variable id {name!r}")
    values = np.zeros((t, len(TIME_VARIABLES)))
    mask = np.zeros((t, len(TIME_VARIABLES)))
    for col, var in enumerate(TIME_VARIABLES):
        series = stay.series(var)
        sums = np.zeros(t)
        counts = np.zeros(t)
        for offset, value in series.points:
            if 0.0 <= offset < t1_hours:
                j = int(offset // SUB_WINDOW_HOURS)
                sums[j] += value
                counts[j] += 1
        observed = counts > 0
        values[observed, col] = sums[observed] / counts[observed]
        mask[:, col] = observed
    return StayTensor(stay.stay_id, values, mask)


def fit_scaling(tensors: list[StayTensor], split_id: str) -> ScalingStats:
    """Variable mean/min/max over observed cells of the given (training) tensors."""
    d = len(TIME_VARIABLES)
    mean = np.zeros(d)
    vmin = np.zeros(d)
    vmax = np.zeros(d)
    for col, var in enumerate(TIME_VARIABLES):
        cells = np.concatenate([t.values[t.mask[:, col] > 0, col] for t in tensors]) \
            if tensors else np.zeros(0)
        if cells.size == 0:
            raise ImputationError(f"variable {var!r} never observed in training split "
                                  f"{split_id!r}")
        mean[col] = cells.mean()
        vmin[col] = cells.min()
        vmax[col] = cells.max()
    return ScalingStats(split_id=split_id, mean=mean, vmin=vmin, vmax=vmax)


def apply_scaling(tensor: StayTensor, stats: ScalingStats) -> StayTensor:
    """Impute masked cells with the training mean, then min-max scale into [0, 1]."""
    raw = np.where(tensor.mask > 0, tensor.values, stats.mean)
    span = stats.vmax - stats.vmin
    scaled = np.zeros_like(raw)
    nondegenerate = span > 0
    scaled[:, nondegenerate] = (raw[:, nondegenerate] - stats.vmin[nondegenerate]) \
        / span[nondegenerate]
    scaled = np.clip(scaled, 0.0, 1.0)
    return StayTensor(tensor.stay_id, scaled, tensor.mask.copy())


def impute_and_scale(tensors: list[StayTensor], split_id: str,
                     ) -> tuple[list[StayTensor], ScalingStats]:
    stats = fit_scaling(tensors, split_id)
    return [apply_scaling(t, stats) for t in tensors], stats


def static_vector(stay: IcuStay) -> np.ndarray:
    """20-entry encoding: scaled age, one-hot sex/ethnicity, med and comorbidity flags."""
    out = np.zeros(STATIC_DIM)
    out[0] = stay.age / 100.0
    out[1 + SEXES.index(stay.sex)] = 1.0
    out[3 + ETHNICITIES.index(stay.ethnicity)] = 1.0
    for i, flag in enumerate(MED_FLAGS):
        out[7 + i] = stay.med_flags[flag]
    for i, flag in enumerate(COMORBIDITY_FLAGS):
        out[11 + i] = stay.comorbidity_flags[flag]
    return out


def _static14(stay: IcuStay) -> np.ndarray:
    como = stay.comorbidity_flags
    groups = (
        max(como["chf"], como["mi"], como["cad"]),
        como["peripheral_vascular"],
        como["hypertension"],
        como["diabetes"],
        max(como["liver_disease"], como["cirrhosis"], como["jaundice"]),
    )
    return np.array([stay.age / 100.0, 1.0 if stay.sex == "male" else 0.0,
                     1.0 if stay.ethnicity == "black" else 0.0,
                     1.0 if stay.ethnicity == "asian" else 0.0,
                     1.0 if stay.ethnicity == "other" else 0.0]
                    + [float(stay.med_flags[f]) for f in MED_FLAGS]
                    + [float(g) for g in groups])


def baseline_feature_names() -> list[str]:
    names = [f"{var}_{stat}" for var in BASELINE_CONTINUOUS_VARS for stat in BASELINE_STATS]
    names += ["age_scaled", "sex_male", "ethnicity_black", "ethnicity_asian",
              "ethnicity_other"]
    names += [f"med_{f}" for f in MED_FLAGS]
    names += ["como_cardiac", "como_vascular", "como_hypertension", "como_diabetes",
              "como_hepatic"]
    return names


def summarize_for_baselines(stay: IcuStay, t1_hours: float,
                            fill_means: dict[str, float] | None = None,
                            ) -> BaselineFeatureVector:
    """First/last/avg/min/max over raw observations in the window, least-squares
    slope over observed 2-hour bins, and the raw observation count, per variable."""
    t = bin_count(t1_hours)
    values = np.zeros(BASELINE_DIM)
    imputed = np.zeros(BASELINE_DIM, dtype=bool)
    pos = 0
    for var in BASELINE_CONTINUOUS_VARS:
        obs = [(off, v) for off, v in stay.series(var).points if 0.0 <= off < t1_hours]
        if obs:
            vals = np.array([v for _, v in obs])
            stats = [vals[0], vals[-1], vals.mean(), vals.min(), vals.max(),
                     _bin_slope(obs, t), float(len(obs))]
        else:
            fill = 0.0 if fill_means is None else fill_means.get(var, 0.0)
            stats = [fill, fill, fill, fill, fill, 0.0, 0.0]
            imputed[pos:pos + 5] = True
        values[pos:pos + 7] = stats
        pos += 7
    values[pos:] = _static14(stay)
    return BaselineFeatureVector(stay.stay_id, values, imputed)


def _bin_slope(obs: list[tuple[float, float]], t: int) -> float:
    sums = np.zeros(t)
    counts = np.zeros(t)
    for off, v in obs:
        j = int(off // SUB_WINDOW_HOURS)
        sums[j] += v
        counts[j] += 1
    idx = np.nonzero(counts)[0]
    if len(idx) < 2:
        return 0.0
    y = sums[idx] / counts[idx]
    x = idx.astype(float)
    xc = x - x.mean()
    return float((xc * (y - y.mean())).sum() / (xc * xc).sum())


# ---------------------------------------------------------------------------
# notes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]  # index 0 is the padding token

    def __len__(self):
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.tokens)}


def build_vocabulary(stays: list[IcuStay]) -> Vocabulary:
    """Sorted unique note tokens of the given (training) stays, pad-first."""
    seen = set()
    for stay in stays:
        for note in stay.notes:
            seen.update(note.tokens)
    seen.discard(PAD_TOKEN)
    return Vocabulary(tokens=(PAD_TOKEN,) + tuple(sorted(seen)))


def notes_to_sequences(stay: IcuStay, vocab: Vocabulary,
                       max_note_len: int = 32) -> list[list[int]]:
    """Token-index sequences in timestamp order; OOV dropped, truncation applied.

    A note with no in-vocabulary tokens is kept as a single padding token so the
    note count (and hence the note-level sequence) is preserved.
    """
    index = vocab.index
    out = []
    for note in sorted(stay.notes, key=lambda n: n.offset_hours):
        ids = [index[tok] for tok in note.tokens if tok in index][:max_note_len]
        out.append(ids if ids else [0])
    return out


def notes_to_bow(stay: IcuStay, vocab: Vocabulary) -> np.ndarray:
    """Token counts over all notes of the stay (padding index stays zero)."""
    index = vocab.index
    counts = np.zeros(len(vocab), dtype=np.int64)
    for note in stay.notes:
        for tok in note.tokens:
            i = index.get(tok)
            if i is not None and i != 0:
                counts[i] += 1
    return counts


def prepare_stays(stays: list[IcuStay], labels: dict[str, int] | None,
                  t1_hours: float, vocab: Vocabulary, stats: ScalingStats,
                  max_note_len: int = 32):
    """Bundle scaled tensors, static vectors, and note sequences per stay."""
    from .memnet import PreparedStay
    prepared = []
    for stay in stays:
        tensor = apply_scaling(bin_events(stay, t1_hours), stats)
        prepared.append(PreparedStay(
            stay_id=stay.stay_id,
            tensor=tensor.values,
            static=static_vector(stay),
            note_seqs=notes_to_sequences(stay, vocab, max_note_len),
            label=None if labels is None else labels[stay.stay_id],
        ))
    return prepared


# ---------------------------------------------------------------------------
# delimited-text persistence
# ---------------------------------------------------------------------------

def write_stay_tensors(tensors: list[StayTensor], values_path, mask_path) -> None:
    header = "stay_id,bin," + ",".join(TIME_VARIABLES)
    with open(values_path, "w") as fv, open(mask_path, "w") as fm:
        fv.write(header + "\n")
        fm.write(header + "\n")
        for tensor in tensors:
            for j in range(tensor.t):
                row_v = ",".join(repr(float(x)) for x in tensor.values[j])
                row_m = ",".join(str(int(x)) for x in tensor.mask[j])
                fv.write(f"{tensor.stay_id},{j},{row_v}\n")
                fm.write(f"{tensor.stay_id},{j},{row_m}\n")


def write_baseline_features(vectors: list[BaselineFeatureVector], path) -> None:
    header = "stay_id," + ",".join(baseline_feature_names())
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for vec in vectors:
            fh.write(vec.stay_id + "," + ",".join(repr(float(x)) for x in vec.values) + "\n")
