"""KDIGO acute kidney injury detection, staging, eGFR, and cohort exclusion rules.

Clause conventions (shared with the brute-force test oracle):
- Creatinine delta: any ordered measurement pair at most 48 h apart with a rise
  of at least 0.3 mg/dL fires at the later measurement's time; the earlier
  measurement may precede the evaluation window.
- Creatinine ratio: a measurement at 1.5x baseline or more fires at its own
  time, provided it lies within 7 days (168 h) of the end of the baseline's
  source window.
- Urine: the rate is read piecewise-constant (each observation's value persists
  until the next observation, with no extrapolation past the last one). Low
  spans are clipped to the evaluation window; a span of at least 6 h below
  0.5 mL/kg/h fires 6 h after the clipped span starts.
- Stages take the maximum over all firing clauses: ratio >= 2.0 -> 2,
  ratio >= 3.0 -> 3, a rise (>= 0.3 within 48 h) reaching 4.0 mg/dL -> 3,
  low-urine spans >= 12 h at 0.5 -> 2, >= 24 h at 0.3 -> 3, anuria
  (< 0.01 mL/kg/h) >= 12 h -> 3, renal replacement therapy -> 3.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cohort import EventSeries, IcuStay
from .errors import ArgumentError, ContractViolationError, InsufficientDataError

RULE_SCR_DELTA = "scr_delta_48h"
RULE_SCR_RATIO = "scr_ratio_7d"
RULE_URINE = "urine_6h"

_RULE_PRIORITY = {RULE_SCR_DELTA: 0, RULE_SCR_RATIO: 1, RULE_URINE: 2}

DELTA_THRESHOLD = 0.3
DELTA_WINDOW_HOURS = 48.0
RATIO_THRESHOLD = 1.5
BASELINE_LOOKBACK_HOURS = 168.0
OLIGURIA_RATE = 0.5
OLIGURIA_HOURS = 6.0
ANURIA_RATE = 0.01


@dataclass
class AkiLabel:
    is_case: bool
    onset_offset_hours: float | None = None
    stage: int | None = None
    triggering_rule: str | None = None


@dataclass
class BaselineScr:
    value: float
    source_window: tuple[float, float]

    def __post_init__(self):
        if self.value <= 0:
            raise ArgumentError(f"baseline creatinine must be positive, got {self.value}")


def egfr_mdrd(scr: float, age: float, sex: str, ethnicity: str) -> float:
    """MDRD 4-variable estimated GFR (175-coefficient re-expressed form)."""
    if scr <= 0 or age <= 0:
        raise ArgumentError(f"egfr_mdrd requires positive scr and age, got {scr}, {age}")
    value = 175.0 * scr ** -1.154 * age ** -0.203
    if sex == "female":
        value *= 0.742
    if ethnicity == "black":
        value *= 1.212
    return value


def compute_baseline(scr_series: EventSeries, window_start: float) -> BaselineScr:
    """Baseline = minimum creatinine in the 7 days before `window_start`,
    falling back to the earliest measurement at or after it."""
    prior = [(t, v) for t, v in scr_series.points
             if window_start - BASELINE_LOOKBACK_HOURS <= t < window_start]
    if prior:
        t_min, v_min = min(prior, key=lambda p: p[1])
        return BaselineScr(v_min, (window_start - BASELINE_LOOKBACK_HOURS, window_start))
    later = [(t, v) for t, v in scr_series.points if t >= window_start]
    if not later:
        raise InsufficientDataError("no creatinine measurements to derive a baseline from")
    t0, v0 = later[0]
    return BaselineScr(v0, (t0, t0))


def _delta_firings(scr: list[tuple[float, float]], lo: float, hi: float):
    out = []
    for j, (tj, vj) in enumerate(scr):
        if not lo <= tj <= hi:
            continue
        prior = [vi for ti, vi in scr[:j] if tj - ti <= DELTA_WINDOW_HOURS]
        if prior and vj - min(prior) >= DELTA_THRESHOLD:
            out.append(tj)
    return out


def _ratio_firings(scr, baseline: BaselineScr | None, lo, hi, threshold: float):
    if baseline is None:
        return []
    b_end = baseline.source_window[1]
    return [t for t, v in scr
            if lo <= t <= hi and v >= threshold * baseline.value
            and t - b_end <= BASELINE_LOOKBACK_HOURS]


def _low_spans(urine: list[tuple[float, float]], threshold: float, lo: float, hi: float):
    """Maximal low-rate spans under piecewise-constant interpolation, clipped to [lo, hi]."""
    spans = []
    start = None
    last_t = None
    for t, v in urine:
        if v < threshold:
            if start is None:
                start = t
        elif start is not None:
            spans.append((start, t))
            start = None
        last_t = t
    if start is not None and last_t is not None:
        spans.append((start, last_t))
    clipped = []
    for a, b in spans:
        a2, b2 = max(a, lo), min(b, hi)
        if b2 > a2:
            clipped.append((a2, b2))
    return clipped


def _max_low_span(urine, threshold, lo, hi) -> float:
    spans = _low_spans(urine, threshold, lo, hi)
    return max((b - a for a, b in spans), default=0.0)


def detect_aki(scr_series: EventSeries, urine_rate_series: EventSeries,
               baseline: BaselineScr | None, window: tuple[float, float]) -> AkiLabel:
    """Case iff any KDIGO clause fires inside `window`; onset is the earliest firing."""
    scr = sorted(scr_series.points) if scr_series is not None else []
    urine = sorted(urine_rate_series.points) if urine_rate_series is not None else []
    if not scr and not urine:
        raise InsufficientDataError("both creatinine and urine series are empty")
    lo, hi = window

    firings: list[tuple[float, int, str]] = []
    for t in _delta_firings(scr, lo, hi):
        firings.append((t, _RULE_PRIORITY[RULE_SCR_DELTA], RULE_SCR_DELTA))
    for t in _ratio_firings(scr, baseline, lo, hi, RATIO_THRESHOLD):
        firings.append((t, _RULE_PRIORITY[RULE_SCR_RATIO], RULE_SCR_RATIO))
    for a, b in _low_spans(urine, OLIGURIA_RATE, lo, hi):
        if b - a >= OLIGURIA_HOURS:
            firings.append((a + OLIGURIA_HOURS, _RULE_PRIORITY[RULE_URINE], RULE_URINE))

    if not firings:
        return AkiLabel(is_case=False)
    onset, _, rule = min(firings)
    return AkiLabel(is_case=True, onset_offset_hours=onset, triggering_rule=rule)


def stage_aki(scr_series: EventSeries, urine_rate_series: EventSeries,
              baseline: BaselineScr | None, window: tuple[float, float],
              rrt_flag: bool = False) -> int:
    """Maximum KDIGO stage over the window. Must only be called on detected cases."""
    label = detect_aki(scr_series, urine_rate_series, baseline, window)
    if not label.is_case:
        raise ContractViolationError("stage_aki called on a stay that is not a case")
    scr = sorted(scr_series.points) if scr_series is not None else []
    urine = sorted(urine_rate_series.points) if urine_rate_series is not None else []
    lo, hi = window

    stage = 1
    if _ratio_firings(scr, baseline, lo, hi, 2.0):
        stage = 2
    if _ratio_firings(scr, baseline, lo, hi, 3.0):
        stage = 3
    # absolute rise reaching >= 4.0 mg/dL within 48 h
    for j, (tj, vj) in enumerate(scr):
        if stage == 3:
            break
        if vj >= 4.0 and lo <= tj <= hi:
            prior = [vi for ti, vi in scr[:j] if tj - ti <= DELTA_WINDOW_HOURS]
            if prior and vj - min(prior) >= DELTA_THRESHOLD:
                stage = 3
    if _max_low_span(urine, OLIGURIA_RATE, lo, hi) >= 12.0:
        stage = max(stage, 2)
    if _max_low_span(urine, 0.3, lo, hi) >= 24.0:
        stage = 3
    if _max_low_span(urine, ANURIA_RATE, lo, hi) >= 12.0:
        stage = 3
    if rrt_flag:
        stage = 3
    return stage


EXCLUDE_AKI_IN_OBSERVATION = "aki_in_observation_window"
EXCLUDE_NO_RENAL_DATA = "no_renal_data"
EXCLUDE_MISSING_PREDICTION_DATA = "missing_renal_data_in_prediction_window"


def apply_exclusions(stays: list[IcuStay], t1_hours: float, t2_days: float = 7.0,
                     ) -> tuple[list[tuple[IcuStay, AkiLabel]], list[tuple[str, str]]]:
    """Drop stays with observation-window AKI or without renal data in the
    prediction window; label the rest over the prediction window only."""
    if t1_hours not in (24, 48):
        raise ArgumentError(f"t1_hours must be 24 or 48, got {t1_hours}")
    horizon = t1_hours + t2_days * 24.0
    kept: list[tuple[IcuStay, AkiLabel]] = []
    excluded: list[tuple[str, str]] = []
    for stay in stays:
        scr = stay.lab_series["creatinine"]
        urine = stay.lab_series["urine_rate"]
        try:
            baseline = compute_baseline(scr, 0.0)
        except InsufficientDataError:
            baseline = None
        try:
            obs = detect_aki(scr, urine, baseline, (0.0, t1_hours))
        except InsufficientDataError:
            excluded.append((stay.stay_id, EXCLUDE_NO_RENAL_DATA))
            continue
        if obs.is_case:
            excluded.append((stay.stay_id, EXCLUDE_AKI_IN_OBSERVATION))
            continue
        has_pred_data = any(t1_hours < t <= horizon for t, _ in scr.points) or \
            any(t1_hours < t <= horizon for t, _ in urine.points)
        if not has_pred_data:
            excluded.append((stay.stay_id, EXCLUDE_MISSING_PREDICTION_DATA))
            continue
        label = detect_aki(scr, urine, baseline, (t1_hours, horizon))
        if label.is_case:
            label.stage = stage_aki(scr, urine, baseline, (t1_hours, horizon))
        kept.append((stay, label))
    return kept, excluded
