"""Hypothesis tests and the per-cluster interpretation report.

Implements Pearson chi-square, one-way ANOVA, Kruskal-Wallis with tie
correction, Tukey HSD via an embedded studentized-range table (alpha = 0.05),
and age-adjusted ANCOVA as a nested linear-model F-test. Continuous variables
are routed to ANOVA when their pooled sample looks normal by moment thresholds
(|skewness| < 1 and |excess kurtosis| < 2) and to Kruskal-Wallis otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc, gammaincc

from .cohort import (COMORBIDITY_FLAGS, ETHNICITIES, MED_FLAGS, SEXES,
                     TIME_VARIABLES, IcuStay)
from .errors import ArgumentError, DataError, NumericalRankError
from .kdigo import AkiLabel, egfr_mdrd


@dataclass
class TestResult:
    statistic: float
    p_value: float
    dof: float
    test_name: str
    pairwise: list[tuple[int, int, bool]] | None = None


def chi2_sf(x: float, dof: float) -> float:
    """Upper tail of the chi-square CDF via the regularized incomplete gamma."""
    if x < 0:
        return 1.0
    return float(gammaincc(dof / 2.0, x / 2.0))


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail of the F CDF via the regularized incomplete beta."""
    if x <= 0:
        return 1.0
    if np.isinf(x):
        return 0.0
    return float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x)))


# ---------------------------------------------------------------------------
# tests
# ---------------------------------------------------------------------------

def chi_square_test(table) -> TestResult:
    """Pearson chi-square for an r x c contingency table of counts."""
    obs = np.asarray(table, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 2 or obs.shape[1] < 2:
        raise ArgumentError(f"contingency table must be at least 2x2, got {obs.shape}")
    if np.any(obs < 0):
        raise ArgumentError("contingency table must be non-negative")
    rows = obs.sum(axis=1)
    cols = obs.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise ArgumentError("contingency table has a zero marginal")
    expected = np.outer(rows, cols) / obs.sum()
    stat = float(((obs - expected) ** 2 / expected).sum())
    dof = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return TestResult(stat, chi2_sf(stat, dof), dof, "chi_square")


def _group_arrays(groups):
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(arrays) < 2:
        raise ArgumentError("need at least 2 groups")
    return arrays


def one_way_anova(groups) -> TestResult:
    arrays = _group_arrays(groups)
    if any(len(g) < 2 for g in arrays):
        raise ArgumentError("one_way_anova needs every group to have n >= 2")
    k = len(arrays)
    n = sum(len(g) for g in arrays)
    grand = np.concatenate(arrays).mean()
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in arrays)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in arrays)
    d1, d2 = k - 1, n - k
    if ss_within == 0.0:
        if ss_between == 0.0:
            return TestResult(0.0, 1.0, d1, "anova")  # identical groups
        return TestResult(np.inf, 0.0, d1, "anova")
    f = (ss_between / d1) / (ss_within / d2)
    return TestResult(float(f), f_sf(f, d1, d2), d1, "anova")


def _midranks(pooled: np.ndarray) -> np.ndarray:
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(len(pooled))
    sorted_vals = pooled[order]
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def kruskal_wallis(groups) -> TestResult:
    arrays = _group_arrays(groups)
    pooled = np.concatenate(arrays)
    n = len(pooled)
    ranks = _midranks(pooled)
    dof = len(arrays) - 1
    # tie correction
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float((counts ** 3 - counts).sum())
    correction = 1.0 - tie_term / (n ** 3 - n) if n > 1 else 0.0
    if correction == 0.0:
        return TestResult(0.0, 1.0, dof, "kruskal_wallis")  # every value identical
    h = 12.0 / (n * (n + 1))
    pos = 0
    total = 0.0
    for g in arrays:
        r = ranks[pos:pos + len(g)]
        total += r.sum() ** 2 / len(g)
        pos += len(g)
    h = (h * total - 3.0 * (n + 1)) / correction
    return TestResult(float(h), chi2_sf(h, dof), dof, "kruskal_wallis")


# studentized-range 95th percentiles; rows are within-group dof, columns k=2..10.
_Q_DOF_ROWS = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19,
               20, 24, 30, 40, 60, 120)  # then infinity
_Q_TABLE = {
    2: (17.9693, 6.0849, 4.5007, 3.9265, 3.6354, 3.4605, 3.3441, 3.2612, 3.1992,
        3.1511, 3.1127, 3.0813, 3.0552, 3.0332, 3.0143, 2.9980, 2.9837, 2.9712,
        2.9600, 2.9500, 2.9188, 2.8882, 2.8582, 2.8288, 2.8000, 2.7718),
    3: (26.9755, 8.3308, 5.9096, 5.0402, 4.6017, 4.3392, 4.1649, 4.0410, 3.9485,
        3.8768, 3.8196, 3.7729, 3.7341, 3.7014, 3.6734, 3.6491, 3.6280, 3.6093,
        3.5927, 3.5779, 3.5317, 3.4864, 3.4421, 3.3987, 3.3561, 3.3145),
    4: (32.8187, 9.7980, 6.8245, 5.7571, 5.2183, 4.8956, 4.6813, 4.5288, 4.4149,
        4.3266, 4.2561, 4.1987, 4.1509, 4.1105, 4.0760, 4.0461, 4.0200, 3.9970,
        3.9766, 3.9583, 3.9013, 3.8454, 3.7907, 3.7371, 3.6846, 3.6332),
    5: (37.0815, 10.8811, 7.5017, 6.2870, 5.6731, 5.3049, 5.0601, 4.8858, 4.7554,
        4.6543, 4.5736, 4.5077, 4.4529, 4.4066, 4.3670, 4.3327, 4.3027, 4.2763,
        4.2528, 4.2319, 4.1663, 4.1021, 4.0391, 3.9774, 3.9169, 3.8577),
    6: (40.4076, 11.7343, 8.0371, 6.7064, 6.0329, 5.6284, 5.3591, 5.1672, 5.0235,
        4.9120, 4.8230, 4.7502, 4.6897, 4.6385, 4.5947, 4.5568, 4.5237, 4.4944,
        4.4685, 4.4452, 4.3727, 4.3015, 4.2316, 4.1632, 4.0960, 4.0301),
    7: (43.1186, 12.4349, 8.4783, 7.0526, 6.3299, 5.8953, 5.6057, 5.3991, 5.2444,
        5.1242, 5.0281, 4.9496, 4.8842, 4.8290, 4.7816, 4.7406, 4.7048, 4.6731,
        4.6450, 4.6199, 4.5413, 4.4642, 4.3885, 4.3141, 4.2412, 4.1696),
    8: (45.3973, 13.0273, 8.8525, 7.3465, 6.5823, 6.1222, 5.8153, 5.5962, 5.4319,
        5.3042, 5.2021, 5.1187, 5.0491, 4.9903, 4.9399, 4.8962, 4.8580, 4.8243,
        4.7944, 4.7676, 4.6838, 4.6014, 4.5205, 4.4411, 4.3630, 4.2863),
    9: (47.3566, 13.5390, 9.1766, 7.6015, 6.8014, 6.3192, 5.9973, 5.7673, 5.5947,
        5.4605, 5.3531, 5.2653, 5.1921, 5.1301, 5.0770, 5.0310, 4.9907, 4.9552,
        4.9236, 4.8954, 4.8069, 4.7199, 4.6345, 4.5504, 4.4678, 4.3865),
    10: (49.0710, 13.9885, 9.4620, 7.8263, 6.9947, 6.4931, 6.1579, 5.9183, 5.7384,
         5.5984, 5.4863, 5.3946, 5.3181, 5.2534, 5.1979, 5.1498, 5.1077, 5.0705,
         5.0375, 5.0079, 4.9152, 4.8241, 4.7345, 4.6463, 4.5595, 4.4741),
}


def q_critical(k: int, dof: float) -> float:
    """alpha=0.05 studentized-range critical value, linearly interpolated on dof
    (on 1/dof beyond the last finite table row)."""
    if k not in _Q_TABLE:
        raise ArgumentError(f"studentized-range table covers 2..10 groups, got k={k}")
    row = _Q_TABLE[k]
    if dof < 1:
        raise ArgumentError(f"dof must be >= 1, got {dof}")
    dofs = _Q_DOF_ROWS
    if dof >= dofs[-1]:
        lo, hi = row[-2], row[-1]  # 120 .. infinity, linear in 1/dof
        return hi + (lo - hi) * (dofs[-1] / dof)
    for i in range(len(dofs) - 1):
        if dofs[i] <= dof <= dofs[i + 1]:
            frac = (dof - dofs[i]) / (dofs[i + 1] - dofs[i])
            return row[i] + frac * (row[i + 1] - row[i])
    raise ArgumentError(f"dof {dof} outside table range")


def tukey_hsd(groups, alpha: float = 0.05) -> list[tuple[int, int, bool]]:
    """All-pairs comparison after ANOVA; pair (i, j) is significant when the
    studentized statistic exceeds the alpha=0.05 critical value."""
    if alpha != 0.05:
        raise ArgumentError("only alpha=0.05 critical values are embedded")
    arrays = _group_arrays(groups)
    if any(len(g) < 2 for g in arrays):
        raise ArgumentError("tukey_hsd needs every group to have n >= 2")
    k = len(arrays)
    n = sum(len(g) for g in arrays)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in arrays)
    dof = n - k
    ms_within = ss_within / dof
    crit = q_critical(k, dof)
    out = []
    for i in range(k):
        for j in range(i + 1, k):
            se = np.sqrt(ms_within / 2.0 * (1.0 / len(arrays[i]) + 1.0 / len(arrays[j])))
            diff = abs(arrays[i].mean() - arrays[j].mean())
            significant = bool(ms_within > 0 and diff > crit * se)
            out.append((i, j, significant))
    return out


def ancova_adjust(values, group_labels, covariate) -> float:
    """Group-effect p after covariate adjustment: F-test comparing the linear
    model value ~ covariate against value ~ covariate + group dummies."""
    y = np.asarray(values, dtype=np.float64)
    g = np.asarray(group_labels)
    x = np.asarray(covariate, dtype=np.float64)
    if not (len(y) == len(g) == len(x)):
        raise ArgumentError("values, groups, and covariate must align")
    cats = np.unique(g)
    if len(cats) < 2:
        raise ArgumentError("ancova_adjust needs at least 2 groups")
    if np.ptp(x) == 0.0:
        raise ArgumentError("covariate does not vary")
    n = len(y)
    reduced = np.column_stack([np.ones(n), x])
    dummies = np.column_stack([(g == c).astype(float) for c in cats[1:]])
    full = np.column_stack([reduced, dummies])
    if np.linalg.matrix_rank(full) < full.shape[1]:
        raise NumericalRankError("collinear covariate/group encoding in ANCOVA design")
    rss_r = _rss(reduced, y)
    rss_f = _rss(full, y)
    d1 = len(cats) - 1
    d2 = n - full.shape[1]
    if d2 <= 0:
        raise ArgumentError("not enough observations for the full ANCOVA model")
    if rss_f == 0.0:
        return 1.0 if rss_r == rss_f else 0.0
    f = ((rss_r - rss_f) / d1) / (rss_f / d2)
    return f_sf(max(f, 0.0), d1, d2)


def _rss(X: np.ndarray, y: np.ndarray) -> float:
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return float(resid @ resid)


def normality_route(sample) -> str:
    """'parametric' when moments look Gaussian (|skew| < 1, |excess kurtosis| < 2)."""
    x = np.asarray(sample, dtype=np.float64)
    if len(x) < 8:
        return "nonparametric"
    m = x.mean()
    m2 = ((x - m) ** 2).mean()
    if m2 == 0.0:
        return "nonparametric"
    skew = ((x - m) ** 3).mean() / m2 ** 1.5
    kurt = ((x - m) ** 4).mean() / m2 ** 2 - 3.0
    return "parametric" if abs(skew) < 1.0 and abs(kurt) < 2.0 else "nonparametric"


# ---------------------------------------------------------------------------
# sub-phenotype report
# ---------------------------------------------------------------------------

FIRST_DAY_HOURS = 24.0

#: variables summarized per cluster: continuous (mean over the first 24 h per
#: stay, then mean (sd) per cluster) and discrete (count (pct) per category)
CONTINUOUS_REPORT_VARS = TIME_VARIABLES + ("egfr", "age")
DISCRETE_REPORT_VARS = ("sex", "ethnicity") + MED_FLAGS + COMORBIDITY_FLAGS


@dataclass
class ReportBlock:
    name: str
    kind: str                                # "continuous" | "discrete"
    categories: list[str] = field(default_factory=list)
    cells: list[list[str]] = field(default_factory=list)   # per category x cluster
    unadjusted_p: float | None = None
    test_name: str | None = None
    adjusted_p: float | None = None
    significant_pairs: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class SubtypeReport:
    cluster_sizes: list[int]
    blocks: list[ReportBlock]


def _first_day_mean(stay: IcuStay, var: str) -> float | None:
    if var == "age":
        return float(stay.age)
    if var == "egfr":
        vals = [egfr_mdrd(v, stay.age, stay.sex, stay.ethnicity)
                for t, v in stay.lab_series["creatinine"].points
                if t <= FIRST_DAY_HOURS and v > 0]
        return float(np.mean(vals)) if vals else None
    vals = [v for t, v in stay.series(var).points if t <= FIRST_DAY_HOURS]
    return float(np.mean(vals)) if vals else None


def _discrete_value(stay: IcuStay, var: str) -> str:
    if var == "sex":
        return stay.sex
    if var == "ethnicity":
        return stay.ethnicity
    if var in MED_FLAGS:
        return "yes" if stay.med_flags[var] else "no"
    return "yes" if stay.comorbidity_flags[var] else "no"


def _discrete_categories(var: str) -> list[str]:
    if var == "sex":
        return list(SEXES)
    if var == "ethnicity":
        return list(ETHNICITIES)
    return ["yes", "no"]


def build_subtype_report(stays: list[IcuStay], clusters, alpha: float = 0.05,
                         ) -> SubtypeReport:
    """Tables-3/4-shaped summary: per-cluster descriptive statistics with
    unadjusted p (routed test) and age-adjusted ANCOVA p per variable block."""
    labels = np.asarray(clusters)
    if len(labels) != len(stays):
        raise ArgumentError("clusters must align with stays")
    cluster_ids = sorted(np.unique(labels).tolist())
    members = {c: [s for s, l in zip(stays, labels) if l == c] for c in cluster_ids}
    for c in cluster_ids:
        if not members[c]:
            raise ArgumentError(f"cluster {c} is empty")
    k = len(cluster_ids)
    ages = {c: np.array([s.age for s in members[c]]) for c in cluster_ids}

    blocks = []
    for var in CONTINUOUS_REPORT_VARS:
        per_cluster = []
        for c in cluster_ids:
            vals = [_first_day_mean(s, var) for s in members[c]]
            per_cluster.append(np.array([v for v in vals if v is not None]))
        cells = [[f"{g.mean():.2f} ({g.std(ddof=1 if len(g) > 1 else 0):.2f})"
                  if len(g) else "-" for g in per_cluster]]
        block = ReportBlock(name=var, kind="continuous", categories=[var], cells=cells)
        if k >= 2 and all(len(g) >= 2 for g in per_cluster):
            pooled = np.concatenate(per_cluster)
            route = normality_route(pooled)
            result = one_way_anova(per_cluster) if route == "parametric" \
                else kruskal_wallis(per_cluster)
            block.unadjusted_p = result.p_value
            block.test_name = result.test_name
            if result.p_value < alpha:
                block.significant_pairs = [(i, j) for i, j, sig
                                           in tukey_hsd(per_cluster) if sig]
            if var != "age":  # the age row carries no age-adjusted p
                block.adjusted_p = _adjusted_p_continuous(stays, labels, var)
        blocks.append(block)

    for var in DISCRETE_REPORT_VARS:
        cats = _discrete_categories(var)
        counts = np.zeros((k, len(cats)))
        for ci, c in enumerate(cluster_ids):
            for s in members[c]:
                counts[ci, cats.index(_discrete_value(s, var))] += 1
        cells = []
        for cat_i, _ in enumerate(cats):
            row = []
            for ci, c in enumerate(cluster_ids):
                n_c = len(members[c])
                row.append(f"{int(counts[ci, cat_i])} "
                           f"({100.0 * counts[ci, cat_i] / n_c:.2f}%)")
            cells.append(row)
        block = ReportBlock(name=var, kind="discrete", categories=list(cats), cells=cells)
        if k >= 2:
            keep = counts.sum(axis=0) > 0
            if keep.sum() >= 2:
                block.unadjusted_p = chi_square_test(counts[:, keep]).p_value
                block.test_name = "chi_square"
                indicator_cat = cats[int(np.argmax(counts.sum(axis=0)))]
                indicator = np.array([1.0 if _discrete_value(s, var) == indicator_cat
                                      else 0.0 for s in stays])
                try:
                    block.adjusted_p = ancova_adjust(indicator, labels,
                                                     [s.age for s in stays])
                except (ArgumentError, NumericalRankError):
                    block.adjusted_p = None
        blocks.append(block)

    return SubtypeReport(cluster_sizes=[len(members[c]) for c in cluster_ids],
                         blocks=blocks)


def _adjusted_p_continuous(stays, labels, var) -> float | None:
    vals, groups, ages = [], [], []
    for s, l in zip(stays, labels):
        v = _first_day_mean(s, var)
        if v is not None:
            vals.append(v)
            groups.append(l)
            ages.append(s.age)
    if len(set(groups)) < 2:
        return None
    try:
        return ancova_adjust(vals, groups, ages)
    except (ArgumentError, NumericalRankError):
        return None


def stage_composition(clusters, labels: list[AkiLabel]) -> tuple[np.ndarray, np.ndarray]:
    """Cross-tabulate clusters x KDIGO stages; returns (counts, row percentages)."""
    cl = np.asarray(clusters)
    if len(cl) != len(labels):
        raise ArgumentError("clusters must align with labels")
    for lab in labels:
        if not lab.is_case or lab.stage is None:
            raise DataError("stage_composition requires staged cases only")
    cluster_ids = sorted(np.unique(cl).tolist())
    counts = np.zeros((len(cluster_ids), 3))
    for c, lab in zip(cl, labels):
        counts[cluster_ids.index(c), lab.stage - 1] += 1
    pct = 100.0 * counts / counts.sum(axis=1, keepdims=True)
    return counts, pct


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def write_report_csv(report: SubtypeReport, path) -> None:
    k = len(report.cluster_sizes)
    with open(path, "w") as fh:
        cols = ",".join(f"cluster_{i}" for i in range(k))
        fh.write(f"variable,category,{cols},unadjusted_p,test,adjusted_p,"
                 "significant_pairs\n")
        for block in report.blocks:
            for cat_i, cat in enumerate(block.categories):
                first = cat_i == 0
                p = _fmt_p(block.unadjusted_p) if first else ""
                ap = _fmt_p(block.adjusted_p) if first else ""
                test = block.test_name or "" if first else ""
                pairs = ";".join(f"{i}-{j}" for i, j in block.significant_pairs) \
                    if first else ""
                cells = ",".join(block.cells[cat_i])
                fh.write(f"{block.name},{cat},{cells},{p},{test},{ap},{pairs}\n")


def _fmt_p(p) -> str:
    if p is None:
        return ""
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def write_report_text(report: SubtypeReport, path) -> None:
    k = len(report.cluster_sizes)
    header = ["variable".ljust(22)] + [f"cluster {i} (N={n})".ljust(20)
                                       for i, n in enumerate(report.cluster_sizes)]
    header += ["p".ljust(8), "adj p".ljust(8), "pairs"]
    lines = ["".join(header), "-" * (22 + 20 * k + 24)]
    for block in report.blocks:
        for cat_i, cat in enumerate(block.categories):
            name = block.name if block.kind == "continuous" else f"{block.name}={cat}"
            if block.kind == "discrete" and cat == "no":
                continue  # binary flags print the positive row only
            row = [name.ljust(22)] + [c.ljust(20) for c in block.cells[cat_i]]
            if cat_i == 0:
                pairs = ";".join(f"{i}-{j}" for i, j in block.significant_pairs)
                row += [_fmt_p(block.unadjusted_p).ljust(8),
                        _fmt_p(block.adjusted_p).ljust(8), pairs]
            lines.append("".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_heatmap_matrix(report: SubtypeReport, stays, clusters, path,
                         alpha: float = 0.05) -> None:
    """z-scored per-cluster means of the significant continuous variables."""
    labels = np.asarray(clusters)
    cluster_ids = sorted(np.unique(labels).tolist())
    rows = []
    names = []
    for block in report.blocks:
        if block.kind != "continuous" or block.unadjusted_p is None \
                or block.unadjusted_p >= alpha:
            continue
        means = []
        for c in cluster_ids:
            vals = [_first_day_mean(s, block.name)
                    for s, l in zip(stays, labels) if l == c]
            vals = [v for v in vals if v is not None]
            means.append(np.mean(vals) if vals else np.nan)
        means = np.asarray(means)
        sd = means.std()
        rows.append((means - means.mean()) / sd if sd > 0 else means * 0.0)
        names.append(block.name)
    with open(path, "w") as fh:
        fh.write("variable," + ",".join(f"cluster_{c}" for c in cluster_ids) + "\n")
        for name, row in zip(names, rows):
            fh.write(name + "," + ",".join(f"{v:.4f}" for v in row) + "\n")


def write_stage_composition(counts: np.ndarray, pct: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write("cluster,n,stage1,stage2,stage3,stage1_pct,stage2_pct,stage3_pct\n")
        for i in range(counts.shape[0]):
            n = int(counts[i].sum())
            c = ",".join(str(int(x)) for x in counts[i])
            p = ",".join(f"{x:.2f}" for x in pct[i])
            fh.write(f"{i},{n},{c},{p}\n")
