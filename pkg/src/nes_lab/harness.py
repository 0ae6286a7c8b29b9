"""Config-driven experiments: train, sweep, scatter, tree depth, g-vectors, bounds.

Configs are flat ``section.key = value`` text with ``#`` comments.  Every
command writes CSV files whose bodies depend only on the config and seeds;
timing and provenance go to ``#`` lines.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import noise as nz
from .datasets import (Dataset, load_cache, load_idx, make_synthetic, split, subsample,
                       subset_classes)
from .errors import ConfigError, DomainError
from .estimators import evaluate_accuracy, mlp_init, plugin_predict, sgd_epoch, tree_fit
from .losses import BASE_KINDS, LossKind, LossSpec, backward_correct, forward_correct
from .risk import (BoundReport, affine_coefficients, pairwise_gap, simultaneous_minima_window,
                   worst_case_gap, worst_case_gap_from_matrix)
from .training import PolicyKind, RunLog, StoppingPolicy, TrainConfig, run_training

DEFAULTS = {
    "dataset.source": "mnist",
    "dataset.images": "",
    "dataset.labels": "",
    "dataset.cache": "",
    "dataset.subset_size": "14286",
    "dataset.subset_seed": "0",
    "dataset.classes": "",
    "synthetic.n": "2000",
    "synthetic.d": "20",
    "synthetic.informative": "10",
    "synthetic.c": "3",
    "synthetic.seed": "42",
    "noise.kind": "symmetric",
    "noise.eta": "0.36",
    "noise.include_original": "false",
    "noise.pairs": "",
    "noise.groups": "",
    "noise.matrix": "",
    "noise.predictor_samples": "200",
    "loss.kind": "CE",
    "loss.base": "CE",
    "loss.rho": "0.7",
    "loss.alpha": "1.0",
    "loss.beta": "1.0",
    "loss.clip": "-4.0",
    "model.kind": "mlp",
    "model.hidden": "256,128",
    "train.max_epochs": "100",
    "train.patience": "10",
    "train.lr": "0.05",
    "train.batch": "128",
    "split.fractions": "0.7,0.15,0.15",
    "policies": "NES,ES,WES",
    "seeds": "0,1,2",
    "output.dir": "runs",
    "sweep.etas": "0.5,0.6,0.7,0.8,0.85,0.88,0.92,0.95",
    "tree.depths": "1-20",
}

SOURCES = ("mnist", "fashion", "idx", "synthetic", "cache")
NOISE_KINDS = ("none", "symmetric", "pairwise", "circular", "asym-mnist", "superclass-circular",
               "matrix", "ternary", "five-class", "permutation-symmetric", "pca-split",
               "classifier-induced")
ORACLE_KINDS = ("symmetric", "pairwise", "circular", "asym-mnist", "superclass-circular", "matrix",
                "ternary", "five-class", "permutation-symmetric", "none")


def parse_config_text(text: str) -> dict[str, str]:
    out, problems = {}, []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {no}: expected key = value, got {raw.strip()!r}")
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in DEFAULTS:
            problems.append(f"line {no}: unknown key {k!r}")
            continue
        out[k] = v
    if problems:
        raise ConfigError(problems)
    return out


def load_config(path=None, overrides: dict | None = None) -> "ExperimentConfig":
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                values = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from None
    values.update(overrides or {})
    return ExperimentConfig.from_mapping(values)


def parse_ints(s):
    out = []
    for part in filter(None, (p.strip() for p in s.split(","))):
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def _floats(s):
    return [float(p) for p in s.split(",") if p.strip()]


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _pairs(s):
    out = []
    for part in filter(None, (p.strip() for p in s.split(","))):
        a, b = part.split(":")
        out.append((int(a), int(b)))
    return out


def _groups(s):
    return [[int(v) for v in g.replace(",", " ").split()] for g in s.split(";") if g.strip()]


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    source: str
    subset_size: int
    subset_seed: int
    classes: tuple[int, ...]
    synthetic: dict
    noise_kind: str
    eta: float
    include_original: bool
    pairs: tuple
    groups: tuple
    matrix_path: str
    predictor_samples: int
    loss: LossSpec
    correction: LossKind | None
    model_kind: str
    hidden: tuple[int, ...]
    train: TrainConfig
    fractions: tuple[float, ...]
    policies: tuple[PolicyKind, ...]
    seeds: tuple[int, ...]
    out_dir: str
    etas: tuple[float, ...]
    depths: tuple[int, ...]

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        unknown = [k for k in values if k not in DEFAULTS]
        raw = {**DEFAULTS, **{k: str(v) for k, v in values.items()}}
        problems = [f"unknown key {k!r}" for k in unknown]

        def get(key, conv, check=None, msg=""):
            try:
                v = conv(raw[key])
            except (ValueError, TypeError) as exc:
                problems.append(f"{key}: cannot parse {raw[key]!r} ({exc})")
                return None
            if check is not None and not check(v):
                problems.append(f"{key}: {msg} (got {raw[key]!r})")
                return None
            return v

        source = get("dataset.source", str, lambda s: s in SOURCES, f"must be one of {SOURCES}")
        subset_size = get("dataset.subset_size", int, lambda v: v >= 0, "must be >= 0")
        subset_seed = get("dataset.subset_seed", int)
        classes = get("dataset.classes", parse_ints)
        synthetic = {k: get(f"synthetic.{k}", int, lambda v: v >= 1, "must be positive")
                     for k in ("n", "d", "informative", "c")}
        synthetic["seed"] = get("synthetic.seed", int)
        if source == "idx":
            for key in ("dataset.images", "dataset.labels"):
                if not raw[key]:
                    problems.append(f"{key}: required when dataset.source = idx")
                elif not os.path.exists(raw[key]):
                    problems.append(f"{key}: file {raw[key]!r} not found")
        if source == "cache":
            if not raw["dataset.cache"] or not os.path.exists(raw["dataset.cache"]):
                problems.append(f"dataset.cache: file {raw['dataset.cache']!r} not found")
        if source == "synthetic" and all(synthetic[k] for k in ("d", "informative")):
            if synthetic["informative"] > synthetic["d"]:
                problems.append("synthetic.informative: must not exceed synthetic.d")
        if classes is not None and 0 < len(classes) < 2:
            problems.append("dataset.classes: keep at least two classes")

        kind = get("noise.kind", str, lambda s: s in NOISE_KINDS, f"must be one of {NOISE_KINDS}")
        eta = get("noise.eta", float, lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]")
        include = get("noise.include_original", _bool)
        pairs = get("noise.pairs", _pairs)
        groups = get("noise.groups", _groups)
        if kind == "matrix":
            path = raw["noise.matrix"]
            if not path or not os.path.exists(path):
                problems.append(f"noise.matrix: file {path!r} not found")
        if kind == "superclass-circular" and not groups:
            problems.append("noise.groups: required for superclass-circular noise")
        predictor_samples = get("noise.predictor_samples", int, lambda v: v >= 1, "must be positive")

        loss = None
        lkind = get("loss.kind", LossKind, lambda k: k is not LossKind.ZERO_ONE,
                    "the 0-1 loss cannot be trained with gradients")
        base = get("loss.base", LossKind, lambda k: k in BASE_KINDS,
                   f"must be one of {[k.value for k in BASE_KINDS]}")
        rho = get("loss.rho", float)
        alpha = get("loss.alpha", float)
        beta = get("loss.beta", float)
        clip = get("loss.clip", float)
        if None not in (lkind, base, rho, alpha, beta, clip):
            # corrections get their matrix per run; here only the base is built
            first = base if lkind in (LossKind.FCE, LossKind.BCE) else lkind
            try:
                loss = LossSpec(first, rho, alpha, beta, clip)
            except DomainError as exc:
                problems.append(f"loss: {exc}")

        model_kind = get("model.kind", str, lambda s: s in ("mlp", "tree"), "must be mlp or tree")
        hidden = get("model.hidden", parse_ints, lambda v: all(w >= 1 for w in v), "widths must be positive")
        max_epochs = get("train.max_epochs", int, lambda v: v >= 1, "must be >= 1")
        patience = get("train.patience", int, lambda v: v >= 1, "must be >= 1")
        lr = get("train.lr", float, lambda v: v >= 0, "must be >= 0")
        batch = get("train.batch", int, lambda v: v >= 1, "must be >= 1")
        fractions = get("split.fractions", _floats,
                        lambda f: len(f) == 3 and all(x > 0 for x in f) and abs(sum(f) - 1) <= 1e-9,
                        "need three positive fractions summing to 1")
        policies = get("policies", lambda s: [PolicyKind(p.strip()) for p in s.split(",") if p.strip()],
                       lambda v: len(v) > 0, "list at least one policy")
        seeds = get("seeds", parse_ints, lambda v: len(v) > 0, "list at least one seed")
        etas = get("sweep.etas", _floats, lambda v: all(0 <= e < 1 for e in v), "rates must lie in [0, 1)")
        depths = get("tree.depths", parse_ints, lambda v: all(d >= 0 for d in v), "depths must be >= 0")

        if problems:
            raise ConfigError(problems)
        train = TrainConfig(max_epochs, patience, lr, batch, loss or LossSpec())
        return cls(
            raw=raw, source=source, subset_size=subset_size, subset_seed=subset_seed,
            classes=tuple(classes), synthetic=synthetic, noise_kind=kind, eta=eta,
            include_original=include, pairs=tuple(pairs), groups=tuple(tuple(g) for g in groups),
            matrix_path=raw["noise.matrix"], predictor_samples=predictor_samples, loss=loss,
            correction=lkind if lkind in (LossKind.FCE, LossKind.BCE) else None,
            model_kind=model_kind, hidden=tuple(hidden), train=train, fractions=tuple(fractions),
            policies=tuple(policies), seeds=tuple(seeds), out_dir=raw["output.dir"],
            etas=tuple(etas), depths=tuple(depths))

    def with_values(self, **values) -> "ExperimentConfig":
        raw = {k: v for k, v in self.raw.items() if DEFAULTS.get(k) != v}
        raw.update({k.replace("__", "."): str(v) for k, v in values.items()})
        return ExperimentConfig.from_mapping(raw)

    def echo(self) -> list[str]:
        return [f"{k}={self.raw[k]}" for k in sorted(self.raw)]


# ---------------------------------------------------------------------------
# building blocks

_BASE_CACHE: dict = {}


def base_dataset(cfg: ExperimentConfig) -> Dataset:
    key = (cfg.source, cfg.raw["dataset.images"], cfg.raw["dataset.labels"], cfg.raw["dataset.cache"],
           tuple(sorted((k, v) for k, v in cfg.synthetic.items())), cfg.subset_size, cfg.subset_seed,
           cfg.classes)
    if key in _BASE_CACHE:
        return _BASE_CACHE[key]
    if cfg.source in ("mnist", "fashion"):
        from .fetch import load_family

        ds = load_family(cfg.source)
    elif cfg.source == "idx":
        ds = load_idx(cfg.raw["dataset.images"], cfg.raw["dataset.labels"])
    elif cfg.source == "cache":
        ds = load_cache(cfg.raw["dataset.cache"]).clean_only()
    else:
        s = cfg.synthetic
        ds = make_synthetic(s["n"], s["d"], s["informative"], s["c"], s["seed"])
    if cfg.classes:
        ds = subset_classes(ds, cfg.classes)
    if cfg.subset_size and cfg.source != "synthetic":
        ds = subsample(ds, cfg.subset_size, cfg.subset_seed)
    _BASE_CACHE[key] = ds
    return ds


def noise_matrix(cfg: ExperimentConfig, c: int, eta: float | None = None) -> nz.TransitionMatrix | None:
    """Transition matrix of a uniform recipe, or None for instance-dependent ones."""
    eta = cfg.eta if eta is None else eta
    kind = cfg.noise_kind
    if kind == "none":
        return nz.build_symmetric(c, 0.0)
    if kind == "symmetric":
        return nz.symmetric_injection(c, eta, cfg.include_original)
    if kind == "pairwise":
        pairs = cfg.pairs or (nz.CIFAR10_PAIRS if c == 10 else tuple((j, (j + 1) % c) for j in range(c)))
        return nz.build_pairwise(c, pairs, eta)
    if kind == "circular":
        return nz.build_circular(c, eta)
    if kind == "asym-mnist":
        return nz.build_asym_mnist(eta)
    if kind == "superclass-circular":
        return nz.build_superclass_circular(cfg.groups, eta)
    if kind == "matrix":
        return nz.TransitionMatrix.load(cfg.matrix_path)
    if kind == "ternary":
        return nz.ternary_asymmetric(eta)
    if kind == "five-class":
        return nz.FIVE_CLASS_T
    if kind == "permutation-symmetric":
        return nz.PERM_SYMMETRIC_T
    return None


def noise_field(cfg: ExperimentConfig, ds: Dataset, seed: int, eta: float | None = None):
    eta = cfg.eta if eta is None else eta
    T = noise_matrix(cfg, ds.c, eta)
    if T is not None:
        if T.c != ds.c:
            raise ConfigError([f"noise matrix is {T.c}x{T.c} but the dataset has {ds.c} classes"])
        return nz.UniformNoise(T, _kind_tag(cfg.noise_kind), eta)
    if cfg.noise_kind == "pca-split":
        return nz.build_pca_split_field(ds.features, ds.clean_labels, eta, c=ds.c)
    # classifier-induced: a linear softmax model fitted briefly to a small clean sample
    rng_rows = np.random.default_rng(seed).choice(ds.n, size=min(cfg.predictor_samples, ds.n), replace=False)
    lin = mlp_init((ds.d, ds.c), seed)
    sample = ds.take(rng_rows)
    sgd_epoch(lin, sample, LossSpec(), lr=0.05, batch=32, seed=seed, track="clean")
    return nz.build_classifier_induced_field(lin, eta, ds.c)


def _kind_tag(kind):
    return {"asym-mnist": "custom", "superclass-circular": "custom", "matrix": "custom", "ternary": "custom",
            "five-class": "custom", "none": "symmetric"}.get(kind, kind)


def run_loss(cfg: ExperimentConfig, c: int, eta: float) -> LossSpec:
    """Loss for one run; corrections use the true matrix, or symmetric for non-uniform noise."""
    spec = cfg.loss
    if cfg.correction is None:
        return spec
    T = noise_matrix(cfg, c, eta)
    if T is None:
        T = nz.build_symmetric(c, eta)
    return forward_correct(spec, T) if cfg.correction is LossKind.FCE else backward_correct(spec, T)


@dataclass
class SeedResult:
    seed: int
    eta: float
    chosen: dict
    test_acc: dict
    runlog_path: str
    log: RunLog | None = None


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: str, eta: float | None = None,
             gvector: bool = False, keep_log: bool = False) -> SeedResult:
    """One full protocol run: noise, split, train, log."""
    eta = cfg.eta if eta is None else eta
    ds = base_dataset(cfg)
    field = noise_field(cfg, ds, seed, eta)
    noisy = ds.with_noise(field, seed)
    splits = split(noisy, cfg.fractions, seed)
    spec = run_loss(cfg, ds.c, eta)
    train_cfg = replace(cfg.train, loss=spec, seed=seed)
    model = mlp_init((ds.d, *cfg.hidden, ds.c), seed)
    gfield = None
    if gvector:
        T = noise_matrix(cfg, ds.c, eta)
        if T is None:
            raise ConfigError([f"g-vectors need a known uniform noise matrix, not {cfg.noise_kind!r}"])
        gfield = T.entries[:, splits.test.clean_labels].T
    policies = [StoppingPolicy(k) for k in cfg.policies]
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    echo = [*cfg.echo(), f"run.seed={seed}", f"run.eta={eta!r}", f"run.c={ds.c}",
            f"run.noise={field.describe()}", "rng=PCG64",
            f"run.flip_rate_train={float(np.mean(splits.train.noisy_labels != splits.train.clean_labels))!r}"]
    _, log = run_training(model, splits, train_cfg, policies[0], also=policies[1:],
                          checkpoint_dir=str(run_dir / "ckpt"), gvector_field=gfield, config_echo=echo)
    path = run_dir / "runlog.csv"
    log.save(path)
    test_acc = {k: log.test_acc(k) for k in log.chosen}
    return SeedResult(seed, eta, dict(log.chosen), test_acc, str(path), log if keep_log else None)


def _run_many(tasks, jobs: int):
    """Run ``(fn, args)`` tasks, in worker processes when ``jobs`` > 1; keeps task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*args) for fn, args in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *args) for fn, args in tasks]
        return [f.result() for f in futures]


def _mean_std(values):
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def _write(path, lines: Sequence[str], comments: Sequence[str] = ()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for c in comments:
            fh.write(f"#{c}\n")
        for line in lines:
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# commands


@dataclass
class TrainSummary:
    results: list[SeedResult]
    mean: dict
    std: dict
    path: str

    def gap(self, a="NES", b="ES") -> float:
        return self.mean[a] - self.mean[b]


def cmd_train(cfg: ExperimentConfig, out_dir: str | None = None, eta: float | None = None,
              jobs: int = 1, keep_logs: bool = False) -> TrainSummary:
    """Run every seed and write per-seed run logs plus ``summary.csv``."""
    out = Path(out_dir or cfg.out_dir)
    if cfg.model_kind != "mlp":
        raise ConfigError(["train: model.kind must be mlp (use tree-depth for trees)"])
    tasks = [(run_seed, (cfg, s, str(out / f"seed_{s}"), eta, False, keep_logs)) for s in cfg.seeds]
    results = _run_many(tasks, jobs)
    kinds = [k.value for k in cfg.policies]
    mean, std = {}, {}
    for k in kinds:
        mean[k], std[k] = _mean_std([r.test_acc[k] for r in results])
    head = ["seed"] + [f"{k}_{col}" for k in kinds for col in ("epoch", "test_acc")]
    rows = [",".join(head)]
    for r in results:
        rows.append(",".join([str(r.seed)] + [f"{r.chosen[k]},{r.test_acc[k]!r}" for k in kinds]))
    rows.append(",".join(["mean"] + [f",{mean[k]!r}" for k in kinds]))
    rows.append(",".join(["std"] + [f",{std[k]!r}" for k in kinds]))
    path = out / "summary.csv"
    _write(path, rows, [*cfg.echo(), f"eta={cfg.eta if eta is None else eta!r}"])
    return TrainSummary(results, mean, std, str(path))


def recipe_threshold(cfg: ExperimentConfig, c: int) -> float:
    """Largest rate at which the configured recipe stays class-preserving on separable data."""
    if cfg.noise_kind in ("pca-split", "classifier-induced", "matrix", "five-class",
                          "permutation-symmetric", "none"):
        return float("nan")
    thr = nz.class_preserving_threshold(lambda e: noise_matrix(cfg, c, e))
    return round(thr, 9)


@dataclass
class SweepRow:
    eta: float
    mean: dict
    std: dict
    threshold: float


def cmd_sweep(cfg: ExperimentConfig, etas: Sequence[float] | None = None, out_dir: str | None = None,
              jobs: int = 1) -> tuple[list[SweepRow], str]:
    etas = list(cfg.etas if etas is None else etas)
    bad = [e for e in etas if not 0 <= e < 1]
    if not etas or bad:
        raise ConfigError([f"sweep: rates must lie in [0, 1), got {etas}"])
    out = Path(out_dir or cfg.out_dir)
    c = base_dataset(cfg).c
    thr = recipe_threshold(cfg, c)
    tasks = [(run_seed, (cfg, s, str(out / f"eta_{e:g}" / f"seed_{s}"), e)) for e in etas for s in cfg.seeds]
    results = _run_many(tasks, jobs)
    kinds = [k.value for k in cfg.policies]
    rows, table = [], []
    head = ["eta"] + [f"{k}_mean" for k in kinds] + [f"{k}_std" for k in kinds] + ["threshold"]
    table.append(",".join(head))
    for i, e in enumerate(etas):
        rs = results[i * len(cfg.seeds):(i + 1) * len(cfg.seeds)]
        mean, std = {}, {}
        for k in kinds:
            mean[k], std[k] = _mean_std([r.test_acc[k] for r in rs])
        rows.append(SweepRow(e, mean, std, thr))
        table.append(",".join([repr(e)] + [repr(mean[k]) for k in kinds] + [repr(std[k]) for k in kinds]
                              + [repr(thr)]))
    path = out / "sweep.csv"
    _write(path, table, cfg.echo())
    return rows, str(path)


@dataclass
class ScatterFit:
    slope: float
    intercept: float
    r2: float
    theory_slope: float
    theory_intercept: float
    n: int


def scatter_points(log: RunLog, noisy_track="noisy_val_acc", clean_track="clean_val_acc"):
    return log.track(noisy_track), log.track(clean_track)


def fit_line(x, y) -> tuple[float, float, float]:
    """Least-squares ``y = slope * x + intercept`` and its R^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or np.ptp(x) == 0:
        return float("nan"), float("nan"), float("nan")
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else float("nan")
    return float(slope), float(intercept), r2


def _echo_value(log: RunLog, key: str):
    for line in log.config:
        if line.startswith(key + "="):
            return line.split("=", 1)[1]
    return None


def cmd_scatter(runlog_path, out_path=None, eta: float | None = None, c: int | None = None) -> ScatterFit:
    """Noisy-vs-clean accuracy per epoch, with the fitted and the theoretical line.

    Both accuracies are measured on the validation instances (noisy and
    clean labels of the same rows); the theoretical line is the affine
    relation for uniform symmetric noise at the run's effective flip rate.
    """
    log = RunLog.load(runlog_path)
    if not log.records:
        raise ConfigError([f"{runlog_path}: run log has no epochs"])
    noisy, clean = scatter_points(log)
    if eta is None:
        eta = float(_echo_value(log, "run.eta") or "nan")
        if (_echo_value(log, "noise.include_original") or "false").lower() == "true":
            c_ = int(_echo_value(log, "run.c") or "10")
            eta = eta * (c_ - 1) / c_
    if c is None:
        c = int(_echo_value(log, "run.c") or "10")
    ts, ti = affine_coefficients(eta, c)
    slope, intercept, r2 = fit_line(clean, noisy)
    fit = ScatterFit(slope, intercept, r2, ts, ti, len(noisy))
    rows = ["epoch,noisy_acc,clean_acc"] + [f"{r.epoch},{a!r},{b!r}" for r, a, b in zip(log.records, noisy, clean)]
    comments = [f"source={runlog_path}", f"fit_slope={slope!r}", f"fit_intercept={intercept!r}",
                f"fit_r2={r2!r}", f"theory_slope={ts!r}", f"theory_intercept={ti!r}",
                f"theory_eta={eta!r}", f"theory_c={c}"]
    _write(out_path or Path(runlog_path).with_name("scatter.csv"), rows, comments)
    return fit


@dataclass
class DepthResult:
    seed: int
    depths: list[int]
    noisy_val: list[float]
    clean_val: list[float]
    noisy_argmax: int
    clean_argmax: int

    @property
    def deficit(self) -> float:
        """Clean accuracy lost by choosing the depth with the best noisy accuracy."""
        i = self.depths.index(self.noisy_argmax)
        return max(self.clean_val) - self.clean_val[i]


def tree_depth_seed(cfg: ExperimentConfig, seed: int, depths: Sequence[int]) -> DepthResult:
    ds = base_dataset(cfg)
    noisy = ds.with_noise(noise_field(cfg, ds, seed), seed)
    splits = split(noisy, cfg.fractions, seed)
    nv, cv = [], []
    for dep in depths:
        tree = tree_fit(splits.train, dep)
        nv.append(evaluate_accuracy(tree, splits.noisy_val, "noisy"))
        cv.append(evaluate_accuracy(tree, splits.clean_val, "clean"))
    return DepthResult(seed, list(depths), nv, cv, depths[int(np.argmax(nv))], depths[int(np.argmax(cv))])


def cmd_tree_depth(cfg: ExperimentConfig, depths: Sequence[int] | None = None, out_dir: str | None = None,
                   jobs: int = 1) -> tuple[list[DepthResult], str]:
    depths = list(cfg.depths if depths is None else depths)
    if not depths:
        raise ConfigError(["tree-depth: the depth grid is empty"])
    out = Path(out_dir or cfg.out_dir)
    results = _run_many([(tree_depth_seed, (cfg, s, depths)) for s in cfg.seeds], jobs)
    rows = ["seed,depth,noisy_val_acc,clean_val_acc,noisy_argmax,clean_argmax"]
    for r in results:
        for dep, a, b in zip(r.depths, r.noisy_val, r.clean_val):
            rows.append(f"{r.seed},{dep},{a!r},{b!r},{int(dep == r.noisy_argmax)},{int(dep == r.clean_argmax)}")
    summary = [f"seed={r.seed} noisy_argmax={r.noisy_argmax} clean_argmax={r.clean_argmax} "
               f"deficit={r.deficit!r}" for r in results]
    path = out / "tree_depth.csv"
    _write(path, rows, [*cfg.echo(), *summary])
    return results, str(path)


@dataclass
class GvectorResult:
    seed: int
    g: np.ndarray
    window: object
    log: RunLog


def gvector_seed(cfg: ExperimentConfig, seed: int, out_dir: str) -> GvectorResult:
    r = run_seed(cfg, seed, out_dir, gvector=True, keep_log=True)
    g = r.log.gvectors()
    return GvectorResult(seed, g, simultaneous_minima_window(g[:, 1:].T), r.log)


def cmd_gvector(cfg: ExperimentConfig, out_dir: str | None = None, jobs: int = 1) -> tuple[list[GvectorResult], str]:
    if cfg.noise_kind not in ORACLE_KINDS:
        raise ConfigError([f"gvector: noise.kind {cfg.noise_kind!r} has no known noisy posterior"])
    out = Path(out_dir or cfg.out_dir)
    results = _run_many([(gvector_seed, (cfg, s, str(out / f"seed_{s}"))) for s in cfg.seeds], jobs)
    c = results[0].g.shape[1]
    rows = ["seed,epoch," + ",".join(f"g{k + 1}" for k in range(c)) + ",clean_test_acc,noisy_val_acc"]
    for r in results:
        for rec, g in zip(r.log.records, r.g):
            rows.append(f"{r.seed},{rec.epoch}," + ",".join(repr(float(v)) for v in g)
                        + f",{rec.clean_test_acc!r},{rec.noisy_val_acc!r}")
    summary = [f"seed={r.seed} window=({r.window.t1},{r.window.t2}) width={r.window.width} "
               f"degenerate={r.window.degenerate} argmins={list(r.window.argmins)}" for r in results]
    path = out / "gvector.csv"
    _write(path, rows, [*cfg.echo(), *summary])
    return results, str(path)


def cmd_bounds(kind: str, *, noisy_acc: float | None = None, noisy_risk: float | None = None,
               noisy_risk_l: float | None = None, eta: float | None = None, eta_min: float | None = None,
               eta_max: float | None = None, matrix: nz.TransitionMatrix | None = None) -> BoundReport:
    """Evaluate a worst-case gap bound.

    ``kind`` is ``matrix`` (rates read off a column-permutation matrix),
    ``general`` (explicit rates) or ``pairwise``.  Give the best noisy
    performance either as an accuracy or as a risk.
    """
    if (noisy_acc is None) == (noisy_risk is None):
        raise ConfigError(["bounds: give exactly one of noisy accuracy or noisy risk"])
    R = 1.0 - noisy_acc if noisy_risk is None else noisy_risk
    if kind == "pairwise":
        if eta is None:
            raise ConfigError(["bounds: pairwise needs eta"])
        return pairwise_gap(R, eta)
    if kind == "matrix":
        if matrix is None:
            raise ConfigError(["bounds: matrix kind needs a transition matrix"])
        return worst_case_gap_from_matrix(matrix, R, noisy_risk_l)
    if kind == "general":
        missing = [n for n, v in (("eta", eta), ("eta_min", eta_min), ("eta_max", eta_max)) if v is None]
        if missing:
            raise ConfigError([f"bounds: general needs {', '.join(missing)}"])
        return worst_case_gap(R, noisy_risk_l, eta, eta_min, eta_max)
    raise ConfigError([f"bounds: unknown kind {kind!r}"])


def inject_labels(labels, T: nz.TransitionMatrix, seed: int) -> np.ndarray:
    return nz.apply_noise(np.asarray(labels, dtype=np.int64), T, seed=seed)


__all__ = [
    "DEFAULTS", "ExperimentConfig", "load_config", "parse_config_text", "base_dataset", "noise_matrix",
    "noise_field", "run_loss", "run_seed", "cmd_train", "cmd_sweep", "cmd_scatter", "cmd_tree_depth",
    "cmd_gvector", "cmd_bounds", "fit_line", "recipe_threshold", "inject_labels", "tree_depth_seed",
]
