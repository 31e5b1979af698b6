"""Nested cross-validated evaluation with patient-grouped stratified folds.

The outer loop estimates performance; the inner loop (skipped when the
hyperparameter grid has at most one point) tunes over declared overrides.
Every fitted statistic (scaling, vocabulary) is derived from the training side
of its fold only; a split-id guard asserts this at scoring time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import baselines, memnet
from .cohort import IcuStay
from .errors import FoldError, MetricError
from .features import (build_vocabulary, fit_scaling, bin_events, prepare_stays,
                       notes_to_bow, summarize_for_baselines)
from .kdigo import AkiLabel
from .memnet import HyperConfig
from .metrics import MetricRecord, auc, precision_recall

MODEL_IDS = ("lr", "lr_bow", "lstm", "hielstm", "memnet")


def grouped_stratified_folds(stays: list[IcuStay], labels: dict[str, int],
                             n_folds: int, seed: int) -> np.ndarray:
    """Fold id per stay; all stays of a patient share a fold, case counts balanced.

    Groups are placed largest-first onto the fold with the fewest cases (then
    fewest stays); the processing order of equal-size groups is shuffled by
    `seed` so different seeds give different (still valid) assignments.
    """
    groups: dict[str, list[int]] = {}
    for i, stay in enumerate(stays):
        groups.setdefault(stay.patient_id, []).append(i)
    if n_folds < 2:
        raise FoldError(f"need at least 2 folds, got {n_folds}")
    if len(groups) < n_folds:
        raise FoldError(f"cannot build {n_folds} folds from {len(groups)} patients")
    total_cases = sum(labels[s.stay_id] for s in stays)
    if total_cases < n_folds or (len(stays) - total_cases) < n_folds:
        raise FoldError("too few cases or controls for stratified folds")

    rng = np.random.default_rng(seed)
    entries = []
    for pid, idxs in groups.items():
        n_cases = sum(labels[stays[i].stay_id] for i in idxs)
        entries.append((n_cases, len(idxs), pid, idxs))
    rng.shuffle(entries)
    entries.sort(key=lambda e: (-e[0], -e[1]))

    fold_of = np.full(len(stays), -1, dtype=int)
    fold_cases = np.zeros(n_folds)
    fold_controls = np.zeros(n_folds)
    fold_sizes = np.zeros(n_folds)
    for n_cases, size, _, idxs in entries:
        # balance the label this group carries: case-bearing groups level the
        # case counts, pure-control groups level the control counts
        primary = fold_cases if n_cases > 0 else fold_controls
        f = int(np.lexsort((fold_sizes, primary))[0])
        for i in idxs:
            fold_of[i] = f
        fold_cases[f] += n_cases
        fold_controls[f] += size - n_cases
        fold_sizes[f] += size
    for f in range(n_folds):
        fold_lab = [labels[stays[i].stay_id] for i in np.flatnonzero(fold_of == f)]
        if len(set(fold_lab)) < 2:
            raise FoldError(f"fold {f} ended up single-class; stratification infeasible")
    return fold_of


@dataclass
class FoldData:
    train_stays: list[IcuStay]
    test_stays: list[IcuStay]
    train_labels: np.ndarray
    test_labels: np.ndarray
    split_id: str


def _fold_data(stays, labels, fold_of, fold, split_id) -> FoldData:
    train = [s for s, f in zip(stays, fold_of) if f != fold]
    test = [s for s, f in zip(stays, fold_of) if f == fold]
    return FoldData(
        train_stays=train, test_stays=test,
        train_labels=np.array([labels[s.stay_id] for s in train]),
        test_labels=np.array([labels[s.stay_id] for s in test]),
        split_id=split_id,
    )


def _train_and_score(model_id: str, fold: FoldData, t1_hours: float,
                     hyper: HyperConfig) -> np.ndarray:
    """Fit on the fold's training split only and score its test split."""
    tensors = [bin_events(s, t1_hours) for s in fold.train_stays]
    stats = fit_scaling(tensors, fold.split_id)
    assert stats.split_id == fold.split_id, "scaling fitted outside its fold"
    vocab = build_vocabulary(fold.train_stays)
    hyper = replace(hyper, memory_size=int(t1_hours / 2))
    hyper.validate()

    if model_id in ("lr", "lr_bow"):
        fill = dict(zip(stats.variables, stats.mean))
        def design(stays):
            X = np.stack([summarize_for_baselines(s, t1_hours, fill).values
                          for s in stays])
            if model_id == "lr_bow":
                bow = np.stack([notes_to_bow(s, vocab) for s in stays])
                X = np.hstack([X, bow])
            return X
        X_train = design(fold.train_stays)
        mu = X_train.mean(axis=0)
        sd = X_train.std(axis=0)
        sd[sd == 0] = 1.0
        params = baselines.lr_train((X_train - mu) / sd, fold.train_labels)
        return baselines.lr_predict(params, (design(fold.test_stays) - mu) / sd)

    labels_train = {s.stay_id: int(l) for s, l in zip(fold.train_stays, fold.train_labels)}
    labels_test = {s.stay_id: int(l) for s, l in zip(fold.test_stays, fold.test_labels)}
    train_prep = prepare_stays(fold.train_stays, labels_train, t1_hours, vocab, stats,
                               hyper.max_note_len)
    test_prep = prepare_stays(fold.test_stays, labels_test, t1_hours, vocab, stats,
                              hyper.max_note_len)
    if model_id == "lstm":
        result = baselines.lstm_baseline_train(train_prep, hyper)
        return baselines.lstm_baseline_predict(result, test_prep)
    if model_id == "hielstm":
        result = baselines.hielstm_only_train(train_prep, hyper, len(vocab))
        return baselines.hielstm_only_predict(result, test_prep)
    if model_id == "memnet":
        result = memnet.train(train_prep, hyper, len(vocab))
        return memnet.predict_stays(result, test_prep)
    raise MetricError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}")


def _tune(model_id: str, fold: FoldData, t1_hours: float, hyper: HyperConfig,
          grid: list[dict], n_inner: int, seed: int) -> HyperConfig:
    """Inner CV over hyperparameter overrides; returns the winning config."""
    if len(grid) <= 1:
        return replace(hyper, **grid[0]) if grid else hyper
    labels = {s.stay_id: int(l) for s, l in zip(fold.train_stays, fold.train_labels)}
    inner_folds = grouped_stratified_folds(fold.train_stays, labels, n_inner, seed)
    mean_aucs = []
    for overrides in grid:
        candidate = replace(hyper, **overrides)
        scores = []
        for k in range(n_inner):
            inner = _fold_data(fold.train_stays, labels, inner_folds, k,
                               split_id=f"{fold.split_id}-inner{k}")
            preds = _train_and_score(model_id, inner, t1_hours, candidate)
            scores.append(auc(preds, inner.test_labels))
        mean_aucs.append(float(np.mean(scores)))
    return replace(hyper, **grid[int(np.argmax(mean_aucs))])


@dataclass
class CvSummary:
    records: list[MetricRecord]

    def table(self) -> list[dict]:
        """Tables-1/2-shaped rows: one per model, metrics as mean +/- sd."""
        rows = []
        for model_id in sorted({r.model_id for r in self.records}):
            rs = [r for r in self.records if r.model_id == model_id]
            row = {"model": model_id}
            for metric in ("auc", "precision", "recall"):
                vals = np.array([getattr(r, metric) for r in rs])
                row[metric] = f"{vals.mean():.4f} +/- {vals.std(ddof=1):.4f}" \
                    if len(vals) > 1 else f"{vals.mean():.4f}"
                row[f"{metric}_mean"] = float(vals.mean())
            rows.append(row)
        return rows


def nested_cv(stays: list[IcuStay], labels: dict[str, int], models: list[str],
              t1_hours: float, hyper: HyperConfig, n_outer: int = 5,
              n_inner: int = 5, grid: list[dict] | None = None,
              seed: int = 0) -> CvSummary:
    """Outer folds estimate metrics; inner folds tune the declared grid."""
    grid = grid or []
    fold_of = grouped_stratified_folds(stays, labels, n_outer, seed)
    records = []
    for fold_idx in range(n_outer):
        fold = _fold_data(stays, labels, fold_of, fold_idx,
                          split_id=f"outer{fold_idx}-train")
        for model_id in models:
            chosen = _tune(model_id, fold, t1_hours, hyper, grid, n_inner,
                           seed=seed + 1000 + fold_idx)
            preds = _train_and_score(model_id, fold, t1_hours, chosen)
            pr = precision_recall(preds, fold.test_labels)
            records.append(MetricRecord(model_id=model_id, fold_id=fold_idx,
                                        auc=auc(preds, fold.test_labels),
                                        precision=pr.precision, recall=pr.recall))
    return CvSummary(records=records)


def write_metrics_table(summary: CvSummary, path) -> None:
    rows = summary.table()
    with open(path, "w") as fh:
        fh.write("model,auc,precision,recall\n")
        for row in rows:
            fh.write(f"{row['model']},{row['auc']},{row['precision']},{row['recall']}\n")
