"""Stage runner: synth -> label -> featurize -> train -> embed -> cluster ->
interpret -> evaluate, each idempotent and resumable.

Every stage writes a manifest (config hash, input/output SHA-256) under
<out_dir>/manifests/. A stage whose manifest, config hash, inputs, and outputs
all match is a no-op; a missing prerequisite raises a dependency error naming
the artifact and the stage that produces it.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import clustering, crossval, features, kdigo, memnet, stats
from .cohort import CohortConfig, generate_cohort, read_cohort, write_cohort
from .errors import ArgumentError, ConfigError, DataError, StageDependencyError
from .kdigo import AkiLabel
from .memnet import HyperConfig

STAGES = ("synth", "label", "featurize", "train", "embed", "cluster",
          "interpret", "evaluate")

MANIFEST_VERSION = 1
CONFIG_SCHEMA_VERSION = 1


@dataclass
class ClusterConfig:
    method: str = "tsne"                  # tsne | pca | autoencoder
    k_range: tuple[int, ...] = (2, 3, 4, 5, 6)
    perplexity: float = 30.0
    tsne_iters: int = 1000
    autoencoder_epochs: int = 400
    restarts: int = 10
    select_rel_tol: float = 0.40
    seed: int = 0

    def validate(self):
        if self.method not in ("tsne", "pca", "autoencoder"):
            raise ConfigError(f"unknown cluster method {self.method!r}")
        if len(self.k_range) == 0 or min(self.k_range) < 2:
            raise ConfigError("k_range must contain values >= 2")


@dataclass
class EvaluateConfig:
    models: tuple[str, ...] = ("lr",)
    outer_folds: int = 5
    inner_folds: int = 5
    grid: tuple[dict, ...] = ()
    seed: int = 0

    def validate(self):
        for m in self.models:
            if m not in crossval.MODEL_IDS:
                raise ConfigError(f"unknown model {m!r}; expected one of "
                                  f"{crossval.MODEL_IDS}")


@dataclass
class RunConfig:
    seed: int = 0
    t1_hours: int = 24
    t2_days: float = 7.0
    out_dir: str = "run"
    cohort_path: str | None = None
    cohort: CohortConfig = field(default_factory=lambda: CohortConfig(n_stays=300))
    model: HyperConfig = field(default_factory=HyperConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    def validate(self):
        if self.t1_hours not in (24, 48):
            raise ConfigError(f"t1_hours must be 24 or 48, got {self.t1_hours}")
        if self.t2_days != 7.0:
            raise ConfigError("t2_days is fixed to 7")
        self.cohort.validate()
        model = replace(self.model, memory_size=self.memory_size)
        model.validate()
        self.cluster.validate()
        self.evaluate.validate()

    @property
    def memory_size(self) -> int:
        return int(self.t1_hours / 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d


def config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    version = raw.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version}")
    known = {"seed", "t1_hours", "t2_days", "out_dir", "cohort_path", "cohort",
             "model", "cluster", "evaluate"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = int(raw.get("seed", 0))

    def section(name, cls, **defaults):
        payload = {**defaults, **raw.get(name, {})}
        try:
            return cls(**payload)
        except TypeError as e:
            raise ConfigError(f"bad '{name}' section: {e}") from e

    cfg = RunConfig(
        seed=seed,
        t1_hours=int(raw.get("t1_hours", 24)),
        t2_days=float(raw.get("t2_days", 7.0)),
        out_dir=str(raw.get("out_dir", "run")),
        cohort_path=raw.get("cohort_path"),
        cohort=section("cohort", CohortConfig, n_stays=300, seed=seed),
        model=section("model", HyperConfig, seed=seed),
        cluster=section("cluster", ClusterConfig, seed=seed),
        evaluate=section("evaluate", EvaluateConfig, seed=seed),
    )
    for name in ("k_range",):
        setattr(cfg.cluster, name, tuple(getattr(cfg.cluster, name)))
    cfg.cohort.subtype_mixture = tuple(cfg.cohort.subtype_mixture)
    cfg.evaluate.models = tuple(cfg.evaluate.models)
    cfg.evaluate.grid = tuple(dict(g) for g in cfg.evaluate.grid)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from e
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

ARTIFACTS = {
    "cohort": "cohort.jsonl",
    "labels": "labels.csv",
    "exclusions": "exclusions.csv",
    "scaling": "scaling.json",
    "vocab": "vocab.txt",
    "stay_values": "stay_values.csv",
    "stay_mask": "stay_mask.csv",
    "static": "static.csv",
    "baseline147": "baseline_features.csv",
    "bow": "bow.csv",
    "checkpoint": "checkpoint.json",
    "loss_history": "loss_history.csv",
    "representations": "representations.csv",
    "embedding2d": "embedding2d.csv",
    "ktable": "ktable.csv",
    "report_csv": "subtype_report.csv",
    "report_txt": "subtype_report.txt",
    "heatmap": "heatmap.csv",
    "stage_composition": "stage_composition.csv",
    "metrics": "metrics.csv",
}

_STAGE_INPUTS = {
    "synth": (),
    "label": ("cohort",),
    "featurize": ("cohort", "labels"),
    "train": ("cohort", "labels", "scaling", "vocab"),
    "embed": ("cohort", "labels", "scaling", "vocab", "checkpoint"),
    "cluster": ("representations", "labels"),
    "interpret": ("cohort", "labels", "embedding2d"),
    "evaluate": ("cohort", "labels"),
}

_STAGE_OUTPUTS = {
    "synth": ("cohort",),
    "label": ("labels", "exclusions"),
    "featurize": ("scaling", "vocab", "stay_values", "stay_mask", "static",
                  "baseline147", "bow"),
    "train": ("checkpoint", "loss_history"),
    "embed": ("representations",),
    "cluster": ("embedding2d", "ktable"),
    "interpret": ("report_csv", "report_txt", "heatmap", "stage_composition"),
    "evaluate": ("metrics",),
}

_STAGE_PRODUCER = {name: stage for stage, names in _STAGE_OUTPUTS.items()
                   for name in names}

_STAGE_CONFIG_FIELDS = {
    "synth": ("cohort", "cohort_path"),
    "label": ("t1_hours", "t2_days"),
    "featurize": ("t1_hours",),
    "train": ("t1_hours", "model"),
    "embed": ("t1_hours", "model"),
    "cluster": ("cluster",),
    "interpret": ("t1_hours",),
    "evaluate": ("t1_hours", "model", "evaluate"),
}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _stage_config_hash(stage: str, config: RunConfig) -> str:
    payload = {name: config.to_dict()[name] for name in _STAGE_CONFIG_FIELDS[stage]}
    payload["seed"] = config.seed
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _artifact_path(config: RunConfig, name: str) -> Path:
    return Path(config.out_dir) / ARTIFACTS[name]


# ---------------------------------------------------------------------------
# label / feature IO helpers
# ---------------------------------------------------------------------------

def write_labels(kept: list[tuple], path) -> None:
    with open(path, "w") as fh:
        fh.write("stay_id,is_case,onset_hours,stage,rule\n")
        for stay, label in kept:
            onset = repr(label.onset_offset_hours) if label.is_case else ""
            stage = str(label.stage) if label.stage is not None else ""
            rule = label.triggering_rule or ""
            fh.write(f"{stay.stay_id},{int(label.is_case)},{onset},{stage},{rule}\n")


def read_labels(path) -> dict[str, AkiLabel]:
    out: dict[str, AkiLabel] = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            is_case = row["is_case"] == "1"
            out[row["stay_id"]] = AkiLabel(
                is_case=is_case,
                onset_offset_hours=float(row["onset_hours"]) if row["onset_hours"] else None,
                stage=int(row["stage"]) if row["stage"] else None,
                triggering_rule=row["rule"] or None,
            )
    return out


def write_scaling(scaling: features.ScalingStats, path) -> None:
    payload = {"split_id": scaling.split_id, "variables": list(scaling.variables),
               "mean": scaling.mean.tolist(), "vmin": scaling.vmin.tolist(),
               "vmax": scaling.vmax.tolist()}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def read_scaling(path) -> features.ScalingStats:
    with open(path) as fh:
        payload = json.load(fh)
    return features.ScalingStats(split_id=payload["split_id"],
                                 mean=np.array(payload["mean"]),
                                 vmin=np.array(payload["vmin"]),
                                 vmax=np.array(payload["vmax"]),
                                 variables=tuple(payload["variables"]))


def write_vocab(vocab: features.Vocabulary, path) -> None:
    Path(path).write_text("\n".join(vocab.tokens) + "\n")


def read_vocab(path) -> features.Vocabulary:
    tokens = Path(path).read_text().splitlines()
    return features.Vocabulary(tokens=tuple(tokens))


def write_representations(stay_ids, matrix: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write("stay_id," + ",".join(f"v{i:03d}" for i in range(matrix.shape[1])) + "\n")
        for sid, row in zip(stay_ids, matrix):
            fh.write(sid + "," + ",".join(repr(float(x)) for x in row) + "\n")


def read_representations(path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path) as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    return ids, np.array(rows)


def write_embedding2d(stay_ids, Y: np.ndarray, clusters: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write("stay_id,x,y,cluster\n")
        for sid, (x, y), c in zip(stay_ids, Y, clusters):
            fh.write(f"{sid},{repr(float(x))},{repr(float(y))},{int(c)}\n")


def read_embedding2d(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    ids, pts, clusters = [], [], []
    with open(path) as fh:
        next(fh)
        for line in fh:
            sid, x, y, c = line.rstrip("\n").split(",")
            ids.append(sid)
            pts.append((float(x), float(y)))
            clusters.append(int(c))
    return ids, np.array(pts), np.array(clusters)


# ---------------------------------------------------------------------------
# stage bodies
# ---------------------------------------------------------------------------

def _load_labeled(config: RunConfig):
    stays = read_cohort(_artifact_path(config, "cohort"))
    labels = read_labels(_artifact_path(config, "labels"))
    labeled = [s for s in stays if s.stay_id in labels]
    return labeled, labels


def _stage_synth(config: RunConfig):
    if config.cohort_path:
        stays = read_cohort(config.cohort_path)
    else:
        stays = generate_cohort(config.cohort)
    write_cohort(stays, _artifact_path(config, "cohort"))


def _stage_label(config: RunConfig):
    stays = read_cohort(_artifact_path(config, "cohort"))
    kept, excluded = kdigo.apply_exclusions(stays, config.t1_hours, config.t2_days)
    write_labels(kept, _artifact_path(config, "labels"))
    with open(_artifact_path(config, "exclusions"), "w") as fh:
        fh.write("stay_id,reason\n")
        for sid, reason in excluded:
            fh.write(f"{sid},{reason}\n")


def _stage_featurize(config: RunConfig):
    labeled, _ = _load_labeled(config)
    if not labeled:
        raise DataError("no labeled stays to featurize")
    tensors = [features.bin_events(s, config.t1_hours) for s in labeled]
    scaled, scaling = features.impute_and_scale(tensors, split_id="full-cohort")
    vocab = features.build_vocabulary(labeled)
    write_scaling(scaling, _artifact_path(config, "scaling"))
    write_vocab(vocab, _artifact_path(config, "vocab"))
    features.write_stay_tensors(scaled, _artifact_path(config, "stay_values"),
                                _artifact_path(config, "stay_mask"))
    with open(_artifact_path(config, "static"), "w") as fh:
        fh.write("stay_id," + ",".join(f"s{i:02d}" for i in range(features.STATIC_DIM)) + "\n")
        for s in labeled:
            vec = features.static_vector(s)
            fh.write(s.stay_id + "," + ",".join(repr(float(x)) for x in vec) + "\n")
    fill = dict(zip(scaling.variables, scaling.mean))
    features.write_baseline_features(
        [features.summarize_for_baselines(s, config.t1_hours, fill) for s in labeled],
        _artifact_path(config, "baseline147"))
    with open(_artifact_path(config, "bow"), "w") as fh:
        fh.write("stay_id," + ",".join(f"t{i:03d}" for i in range(len(vocab))) + "\n")
        for s in labeled:
            bow = features.notes_to_bow(s, vocab)
            fh.write(s.stay_id + "," + ",".join(str(int(x)) for x in bow) + "\n")


def _prepared(config: RunConfig, with_labels: bool = True):
    labeled, labels = _load_labeled(config)
    scaling = read_scaling(_artifact_path(config, "scaling"))
    vocab = read_vocab(_artifact_path(config, "vocab"))
    label_ints = {sid: int(lab.is_case) for sid, lab in labels.items()} \
        if with_labels else None
    hyper = replace(config.model, memory_size=config.memory_size)
    prepared = features.prepare_stays(labeled, label_ints, config.t1_hours, vocab,
                                      scaling, hyper.max_note_len)
    return labeled, labels, prepared, vocab, hyper


def _stage_train(config: RunConfig):
    _, _, prepared, vocab, hyper = _prepared(config)
    result = memnet.train(prepared, hyper, len(vocab))
    memnet.save_checkpoint(result, _artifact_path(config, "checkpoint"))
    with open(_artifact_path(config, "loss_history"), "w") as fh:
        fh.write("epoch,mean_loss\n")
        for i, loss in enumerate(result.loss_history):
            fh.write(f"{i},{repr(loss)}\n")


def _stage_embed(config: RunConfig):
    labeled, _, prepared, _, _ = _prepared(config)
    result = memnet.load_checkpoint(_artifact_path(config, "checkpoint"))
    rows = memnet.embed_stays(result, prepared)
    write_representations([s.stay_id for s in labeled], rows,
                          _artifact_path(config, "representations"))


def _stage_cluster(config: RunConfig):
    ids, X = read_representations(_artifact_path(config, "representations"))
    labels = read_labels(_artifact_path(config, "labels"))
    case_ids = [sid for sid in ids if labels[sid].is_case]
    case_rows = np.array([X[ids.index(sid)] for sid in case_ids])
    if len(case_ids) < max(config.cluster.k_range) + 1:
        raise DataError(f"only {len(case_ids)} cases; too few for "
                        f"k up to {max(config.cluster.k_range)}")
    cc = config.cluster
    if cc.method == "tsne":
        Y = clustering.tsne_embed(case_rows, perplexity=cc.perplexity,
                                  iters=cc.tsne_iters, seed=cc.seed).embedding
    elif cc.method == "pca":
        Y = clustering.pca_project(case_rows, 2)
    else:
        Y = clustering.autoencoder_embed(case_rows, epochs=cc.autoencoder_epochs,
                                         seed=cc.seed).embedding
    best_k, table = clustering.select_k(Y, cc.k_range, seed=cc.seed,
                                        restarts=cc.restarts, rel_tol=cc.select_rel_tol)
    assignment = clustering.kmeans(Y, best_k, seed=cc.seed, restarts=cc.restarts)
    write_embedding2d(case_ids, Y, assignment.labels,
                      _artifact_path(config, "embedding2d"))
    with open(_artifact_path(config, "ktable"), "w") as fh:
        fh.write("k,mcclain_rao,selected\n")
        for k, value in table:
            fh.write(f"{k},{repr(value)},{int(k == best_k)}\n")


def _stage_interpret(config: RunConfig):
    labeled, labels = _load_labeled(config)
    ids, _, clusters = read_embedding2d(_artifact_path(config, "embedding2d"))
    by_id = {s.stay_id: s for s in labeled}
    missing = [sid for sid in ids if sid not in by_id]
    if missing:
        raise DataError(f"clustered stays missing from cohort: {missing[:3]}")
    case_stays = [by_id[sid] for sid in ids]
    report = stats.build_subtype_report(case_stays, clusters)
    stats.write_report_csv(report, _artifact_path(config, "report_csv"))
    stats.write_report_text(report, _artifact_path(config, "report_txt"))
    stats.write_heatmap_matrix(report, case_stays, clusters,
                               _artifact_path(config, "heatmap"))
    counts, pct = stats.stage_composition(clusters, [labels[sid] for sid in ids])
    stats.write_stage_composition(counts, pct, _artifact_path(config, "stage_composition"))


def _stage_evaluate(config: RunConfig):
    labeled, labels = _load_labeled(config)
    label_ints = {sid: int(lab.is_case) for sid, lab in labels.items()}
    hyper = replace(config.model, memory_size=config.memory_size)
    summary = crossval.nested_cv(labeled, label_ints, list(config.evaluate.models),
                                 config.t1_hours, hyper,
                                 n_outer=config.evaluate.outer_folds,
                                 n_inner=config.evaluate.inner_folds,
                                 grid=[dict(g) for g in config.evaluate.grid],
                                 seed=config.evaluate.seed)
    crossval.write_metrics_table(summary, _artifact_path(config, "metrics"))


_STAGE_BODY = {
    "synth": _stage_synth,
    "label": _stage_label,
    "featurize": _stage_featurize,
    "train": _stage_train,
    "embed": _stage_embed,
    "cluster": _stage_cluster,
    "interpret": _stage_interpret,
    "evaluate": _stage_evaluate,
}


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

def _manifest_path(config: RunConfig, stage: str) -> Path:
    return Path(config.out_dir) / "manifests" / f"{stage}.json"


def _check_inputs(config: RunConfig, stage: str) -> dict[str, str]:
    hashes = {}
    for name in _STAGE_INPUTS[stage]:
        path = _artifact_path(config, name)
        if not path.exists():
            producer = _STAGE_PRODUCER[name]
            raise StageDependencyError(
                f"stage '{stage}' requires artifact '{ARTIFACTS[name]}' "
                f"(run stage '{producer}' first)")
        hashes[ARTIFACTS[name]] = _sha256(path)
    return hashes


def run_stage(stage: str, config: RunConfig, force: bool = False) -> dict:
    """Execute one stage (or return its manifest unchanged if nothing changed)."""
    if stage not in STAGES:
        raise ArgumentError(f"unknown stage {stage!r}; expected one of {STAGES}")
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifests").mkdir(exist_ok=True)

    input_hashes = _check_inputs(config, stage)
    config_hash = _stage_config_hash(stage, config)
    mpath = _manifest_path(config, stage)
    if not force and mpath.exists():
        try:
            manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError:
            manifest = None
        if manifest and manifest.get("config_hash") == config_hash \
                and manifest.get("inputs") == input_hashes \
                and all(_artifact_path(config, name).exists()
                        and _sha256(_artifact_path(config, name))
                        == manifest["outputs"].get(ARTIFACTS[name])
                        for name in _STAGE_OUTPUTS[stage]):
            return manifest  # no-op: inputs, config, and outputs all match

    _STAGE_BODY[stage](config)

    manifest = {
        "stage": stage,
        "version": MANIFEST_VERSION,
        "seed": config.seed,
        "config_hash": config_hash,
        "inputs": input_hashes,
        "outputs": {ARTIFACTS[name]: _sha256(_artifact_path(config, name))
                    for name in _STAGE_OUTPUTS[stage]},
    }
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def run_all(config: RunConfig, force: bool = False) -> list[dict]:
    return [run_stage(stage, config, force=force) for stage in STAGES]
