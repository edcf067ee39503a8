"""Experiment runner: sweeps over (dataset, model, method, epsilon, seed).

A sweep is a pure function of its configuration: each cell owns its seeded
generators, the reference model / Hessian / optimal objective are computed
once per (dataset, model), and rows are emitted in a fixed sort order, so
rerunning a config reproduces the results CSV byte for byte (runtime column
aside). Cell seeds deliberately exclude epsilon, so a given seed reuses the
same underlying noise draws across the epsilon grid (common random numbers).
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset as data_mod
from .dataset import Dataset, EncodingSpec, load_csv, load_exported, normalize_unit_ball, scale_features, split, subsample, synthesize
from .influence import HessianOperator, assemble_hessian
from .models import LossModel, make_model
from .privacy import CalibrationConstants, PrivacyBudget, validate_budget
from .trainers import (
    TrainConfig,
    train_data_perturbation,
    train_gated_perturbation,
    train_gradient_perturbation,
    train_output_perturbation,
    train_sgd,
)

__all__ = [
    "DatasetSpec",
    "ExperimentConfig",
    "ResultRow",
    "ResultsTable",
    "ProblemContext",
    "METHODS",
    "load_config",
    "prepare_problem",
    "optimality_gap",
    "run_experiment",
    "emit_plot_data",
]

METHODS = ("nonprivate", "data", "data-gated", "gradient", "output")

RESULT_FIELDS = (
    "dataset",
    "model",
    "method",
    "epsilon",
    "delta",
    "seed",
    "accuracy",
    "optimality_gap",
    "sigma",
    "fraction_noised",
    "runtime",
    "regime",
    "notes",
)


@dataclass(frozen=True)
class DatasetSpec:
    """Where the benchmark data comes from and how it is prepared."""

    kind: str = "synthetic"  # "synthetic" | "csv"
    name: str = "synthetic"
    path: str = ""
    encoding: EncodingSpec | None = None
    subsample: int = 0  # 0 keeps everything
    subsample_seed: int = 0
    train_fraction: float = 0.8
    split_seed: int = 0
    cache_dir: str = ""
    # synthetic parameters
    n: int = 400
    d: int = 10
    margin: float = 1.5
    data_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("synthetic", "csv"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ValueError("csv dataset requires a path")
        if self.kind == "csv" and self.encoding is None:
            raise ValueError("csv dataset requires an encoding")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full sweep description, loadable from an INI file via load_config."""

    dataset: DatasetSpec
    model_kind: str = "logistic"
    lambda_reg: float = 1e-3
    clip_bound: float = 1.0
    mixed_norm_method: str = "spectral"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=100))
    batch_size: int | None = None  # overrides train.sampling_prob once n_train is known
    steps_cv_grid: tuple[int, ...] = ()  # nonempty: choose steps by cross-validation
    method_overrides: dict = field(default_factory=dict)
    delta: float | None = None  # None: 1 / n_train^2
    consts: CalibrationConstants = field(default_factory=CalibrationConstants)
    gate_mode: str = "literal"
    theta_floor: float = 1e-12
    damping: float = 0.0
    methods: tuple[str, ...] = ("data", "data-gated", "gradient", "output")
    epsilons: tuple[float, ...] = (0.1, 0.5, 1.0, 3.0, 7.0)
    seeds: tuple[int, ...] = (0,)
    outdir: str = "out"
    jobs: int = 1

    def __post_init__(self) -> None:
        eps = tuple(float(e) for e in self.epsilons)
        if not eps or any(e <= 0 for e in eps):
            raise ValueError("epsilon grid must be nonempty and strictly positive")
        if list(eps) != sorted(eps) or len(set(eps)) != len(eps):
            raise ValueError("epsilon grid must be strictly ascending")
        object.__setattr__(self, "epsilons", eps)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; expected subset of {METHODS}")
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    model: str
    method: str
    epsilon: float
    delta: float
    seed: int
    accuracy: float
    optimality_gap: float
    sigma: float
    fraction_noised: float
    runtime: float
    regime: str
    notes: str


@dataclass
class ResultsTable:
    rows: list[ResultRow]
    metadata: dict

    @property
    def failures(self) -> int:
        return sum(1 for r in self.rows if r.notes.startswith("error:"))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RESULT_FIELDS)
            for r in self.rows:
                writer.writerow(
                    [
                        r.dataset,
                        r.model,
                        r.method,
                        format(r.epsilon, ".17g"),
                        format(r.delta, ".17g"),
                        r.seed,
                        format(r.accuracy, ".17g"),
                        format(r.optimality_gap, ".17g"),
                        format(r.sigma, ".17g"),
                        format(r.fraction_noised, ".17g"),
                        format(r.runtime, ".6f"),
                        r.regime,
                        r.notes,
                    ]
                )

    def write_metadata(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "ResultsTable":
        rows: list[ResultRow] = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != RESULT_FIELDS:
                raise ValueError(f"{path}: unexpected results header {reader.fieldnames}")
            for rec in reader:
                rows.append(
                    ResultRow(
                        dataset=rec["dataset"],
                        model=rec["model"],
                        method=rec["method"],
                        epsilon=float(rec["epsilon"]),
                        delta=float(rec["delta"]),
                        seed=int(rec["seed"]),
                        accuracy=float(rec["accuracy"]),
                        optimality_gap=float(rec["optimality_gap"]),
                        sigma=float(rec["sigma"]),
                        fraction_noised=float(rec["fraction_noised"]),
                        runtime=float(rec["runtime"]),
                        regime=rec["regime"],
                        notes=rec["notes"],
                    )
                )
        return cls(rows=rows, metadata={})


@dataclass(frozen=True)
class ProblemContext:
    """Everything shared by the cells of one (dataset, model) pair."""

    train: Dataset
    test: Dataset
    scale: float
    model: LossModel
    theta_ref: np.ndarray
    l_star: float
    hessian: HessianOperator
    base_train: TrainConfig
    delta: float
    pretrain_converged: bool


def optimality_gap(model: LossModel, theta_priv: np.ndarray, ds_train: Dataset, l_star: float) -> float:
    """Excess objective of the private model over the non-private optimum.

    ``l_star`` must come from the same objective (same data, same
    regularization). Values below -1e-9 are clamped there with a warning;
    smaller negative values are numeric noise and pass through.
    """
    gap = model.objective(theta_priv, ds_train) - l_star
    if gap < -1e-9:
        warnings.warn(
            f"optimality gap {gap:.3e} below tolerance; clamping (is l_star from the same objective?)"
        )
        gap = -1e-9
    return float(gap)


def _load_raw(spec: DatasetSpec) -> Dataset:
    if spec.kind == "synthetic":
        ds = synthesize(spec.n, spec.d, spec.margin, spec.data_seed)
        return Dataset(ds.X, ds.y, name=spec.name)
    ds = load_csv(spec.path, spec.encoding)
    ds = Dataset(ds.X, ds.y, name=spec.name)
    if spec.subsample > 0:
        ds = subsample(ds, spec.subsample, spec.subsample_seed)
    return ds


def cache_paths(spec: DatasetSpec) -> tuple[Path, Path]:
    base = Path(spec.cache_dir)
    return base / f"{spec.name}.csv", base / f"{spec.name}.meta.json"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def ingest(spec: DatasetSpec) -> tuple[Dataset, float, Path]:
    """Normalize the configured dataset and cache it under its checksum."""
    if not spec.cache_dir:
        raise ValueError("ingest requires dataset.cache to be set")
    ds = _load_raw(spec)
    ds, scale = normalize_unit_ball(ds)
    csv_path, meta_path = cache_paths(spec)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    data_mod.export_private(ds, csv_path)
    meta = {
        "name": spec.name,
        "n": ds.n,
        "d": ds.d,
        "scale": scale,
        "sha256": _sha256(csv_path),
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ds, scale, csv_path


def _load_cached(spec: DatasetSpec) -> Dataset | None:
    if not spec.cache_dir:
        return None
    csv_path, meta_path = cache_paths(spec)
    if not (csv_path.is_file() and meta_path.is_file()):
        return None
    with open(meta_path) as fh:
        meta = json.load(fh)
    digest = _sha256(csv_path)
    if digest != meta.get("sha256"):
        raise ValueError(
            f"cached dataset {csv_path} failed checksum verification; re-run ingest"
        )
    ds = load_exported(csv_path)
    return Dataset(ds.X, ds.y, name=spec.name)


def _choose_steps(
    model: LossModel, train_ds: Dataset, base: TrainConfig, grid: tuple[int, ...], split_seed: int
) -> int:
    """Pick the iteration count by validation accuracy of the plain trainer."""
    fit_ds, val_ds = split(train_ds, 0.8, split_seed + 1)
    best_steps, best_acc = grid[0], -1.0
    for steps in grid:
        cfg = replace(base, steps=steps, rounds=None)
        fit = train_sgd(model, fit_ds, cfg, polish=False)
        acc = model.accuracy(fit.theta, val_ds)
        if acc > best_acc:
            best_steps, best_acc = steps, acc
    return best_steps


def prepare_problem(cfg: ExperimentConfig) -> ProblemContext:
    """Load and split the data, then pretrain the shared reference quantities."""
    spec = cfg.dataset
    cached = _load_cached(spec)
    if cached is not None:
        raw = cached  # already normalized at ingest time
    else:
        raw = _load_raw(spec)
    train_ds, test_ds = split(raw, spec.train_fraction, spec.split_seed)
    train_ds, scale = normalize_unit_ball(train_ds)
    test_ds = scale_features(test_ds, scale)

    model = make_model(
        cfg.model_kind,
        train_ds.d,
        lambda_reg=cfg.lambda_reg,
        clip_bound=cfg.clip_bound,
        mixed_norm_method=cfg.mixed_norm_method,
    )
    base = cfg.train
    if cfg.batch_size is not None:
        base = replace(base, sampling_prob=min(1.0, cfg.batch_size / train_ds.n))
    if cfg.steps_cv_grid:
        chosen = _choose_steps(model, train_ds, base, cfg.steps_cv_grid, spec.split_seed)
        base = replace(base, steps=chosen, rounds=None)
    fit = train_sgd(model, train_ds, base, polish=True)
    hess = assemble_hessian(model, fit.theta, train_ds, damping=cfg.damping)
    delta = cfg.delta if cfg.delta is not None else 1.0 / (train_ds.n**2)
    return ProblemContext(
        train=train_ds,
        test=test_ds,
        scale=scale,
        model=model,
        theta_ref=fit.theta,
        l_star=fit.objective,
        hessian=hess,
        base_train=base,
        delta=delta,
        pretrain_converged=fit.converged,
    )


def _cell_config(cfg: ExperimentConfig, ctx: ProblemContext, method: str, seed: int) -> TrainConfig:
    base = ctx.base_train
    overrides = dict(cfg.method_overrides.get(method, {}))
    overrides["seed"] = seed
    if "steps" in overrides:
        overrides.setdefault("rounds", None)
    return replace(base, **overrides)


def run_cell(
    cfg: ExperimentConfig, ctx: ProblemContext, method: str, epsilon: float, seed: int
) -> ResultRow:
    """Run one (method, epsilon, seed) cell; failures land in the notes field."""
    start = time.perf_counter()
    budget = PrivacyBudget(epsilon, ctx.delta)
    tc = _cell_config(cfg, ctx, method, seed)
    notes = ""
    regime = "n/a"
    try:
        if method == "nonprivate":
            fit = train_sgd(ctx.model, ctx.train, tc, polish=True)
            theta, sigma, fraction = fit.theta, 0.0, 0.0
        elif method == "data":
            out = train_data_perturbation(ctx.model, ctx.train, budget, tc, cfg.consts)
            theta, sigma, fraction = out.theta_priv, out.sigma, 1.0
            regime = _regime(budget, tc.sampling_prob, tc.steps, ctx.train.n, cfg.consts)
        elif method == "data-gated":
            out = train_gated_perturbation(
                ctx.model,
                ctx.train,
                budget,
                tc,
                cfg.consts,
                theta_ref=ctx.theta_ref,
                hess=ctx.hessian,
                gate_mode=cfg.gate_mode,
                theta_floor=cfg.theta_floor,
            )
            theta, sigma, fraction = out.theta_priv, out.sigma, out.fraction_noised
            regime = _regime(budget, 1.0 / ctx.train.n, tc.steps, ctx.train.n, cfg.consts)
        elif method == "gradient":
            out = train_gradient_perturbation(ctx.model, ctx.train, budget, tc, cfg.consts)
            theta, sigma, fraction = out.theta_priv, out.sigma, 1.0
            regime = _regime(budget, tc.sampling_prob, tc.steps, ctx.train.n, cfg.consts)
        elif method == "output":
            out = train_output_perturbation(ctx.model, ctx.train, budget, tc)
            theta, sigma, fraction = out.theta_priv, out.sigma, 1.0
        else:
            raise ValueError(f"unknown method {method!r}")
        accuracy = ctx.model.accuracy(theta, ctx.test)
        gap = optimality_gap(ctx.model, theta, ctx.train, ctx.l_star)
    except Exception as exc:  # per-cell isolation: the sweep continues
        accuracy, gap, sigma, fraction = float("nan"), float("nan"), float("nan"), float("nan")
        notes = f"error: {exc}"
    return ResultRow(
        dataset=ctx.train.name.removesuffix("-train"),
        model=ctx.model.kind,
        method=method,
        epsilon=epsilon,
        delta=ctx.delta,
        seed=seed,
        accuracy=accuracy,
        optimality_gap=gap,
        sigma=sigma,
        fraction_noised=fraction,
        runtime=time.perf_counter() - start,
        regime=regime,
        notes=notes,
    )


def _regime(budget, q, steps, n, consts) -> str:
    return "outside" if validate_budget(budget, q, steps, n, consts) else "inside"


def _run_cell_star(args):
    return run_cell(*args)


def run_experiment(cfg: ExperimentConfig) -> ResultsTable:
    """Execute the full sweep and return rows sorted by (method, epsilon, seed)."""
    ctx = prepare_problem(cfg)
    cells = [
        (cfg, ctx, method, eps, seed)
        for method in cfg.methods
        for eps in cfg.epsilons
        for seed in cfg.seeds
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_run_cell_star, cells, chunksize=1))
    else:
        rows = [run_cell(*cell) for cell in cells]
    rows.sort(key=lambda r: (r.dataset, r.model, r.method, r.epsilon, r.seed))
    metadata = {
        "dataset": {
            "name": cfg.dataset.name,
            "n_train": ctx.train.n,
            "n_test": ctx.test.n,
            "d": ctx.train.d,
            "scale": ctx.scale,
        },
        "model": {
            "kind": cfg.model_kind,
            "lambda_reg": cfg.lambda_reg,
            "clip_bound": cfg.clip_bound,
            "mixed_norm_method": cfg.mixed_norm_method,
        },
        "train": {
            "steps": ctx.base_train.steps,
            "sampling_prob": ctx.base_train.sampling_prob,
            "learning_rate": ctx.base_train.learning_rate,
            "local_steps": ctx.base_train.local_steps,
            "noise_mode": ctx.base_train.noise_mode,
            "steps_by_cross_validation": bool(cfg.steps_cv_grid),
        },
        "privacy": {
            "delta": ctx.delta,
            "delta_rule": "explicit" if cfg.delta is not None else "1/n_train^2",
            "c": cfg.consts.c,
            "c1": cfg.consts.c1,
            "w_floor": cfg.consts.w_floor,
            "infimum": cfg.consts.infimum,
            "gate_mode": cfg.gate_mode,
            "theta_floor": cfg.theta_floor,
            "damping_applied": ctx.hessian.damping,
        },
        "method_overrides": {k: dict(v) for k, v in cfg.method_overrides.items()},
        "pretrain_converged": ctx.pretrain_converged,
        "caveats": [
            "the reference model and Hessian for gating are computed from the raw "
            "training data and carry no privacy accounting",
        ],
    }
    return ResultsTable(rows=rows, metadata=metadata)


def emit_plot_data(table: ResultsTable, outdir: str | Path) -> list[Path]:
    """Write one CSV per (dataset, model, metric): epsilon, then mean/std per method.

    Means and standard deviations (population) aggregate over seeds; cells
    that failed are excluded from the aggregates.
    """
    if not table.rows:
        raise ValueError("cannot emit plot data from an empty table")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    pairs = sorted({(r.dataset, r.model) for r in table.rows})
    for ds_name, model_kind in pairs:
        sub = [r for r in table.rows if r.dataset == ds_name and r.model == model_kind]
        methods = sorted({r.method for r in sub})
        epsilons = sorted({r.epsilon for r in sub})
        for metric in ("accuracy", "optimality_gap"):
            path = outdir / f"{ds_name}_{model_kind}_{metric}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                header = ["epsilon"]
                for m in methods:
                    header += [f"{m}_mean", f"{m}_std"]
                writer.writerow(header)
                for eps in epsilons:
                    row = [format(eps, ".17g")]
                    for m in methods:
                        vals = np.array(
                            [
                                getattr(r, metric)
                                for r in sub
                                if r.method == m and r.epsilon == eps and not r.notes
                            ]
                        )
                        if vals.size:
                            row += [
                                format(float(vals.mean()), ".17g"),
                                format(float(vals.std()), ".17g"),
                            ]
                        else:
                            row += ["nan", "nan"]
                    writer.writerow(row)
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# Configuration files (INI syntax: "key = value" under [section] headers)
# ---------------------------------------------------------------------------

_SECTION_KEYS = {
    "dataset": {
        "kind", "name", "path", "label_column", "label_positive", "label_negative",
        "numeric_columns", "categorical_columns", "drop_other_labels", "subsample",
        "subsample_seed", "cache", "train_fraction", "split_seed", "n", "d",
        "margin", "data_seed",
    },
    "model": {"kind", "lambda_reg", "clip_bound", "mixed_norm"},
    "train": {
        "steps", "cv_grid", "sampling_prob", "batch_size", "learning_rate",
        "local_steps", "noise_mode", "seed",
    },
    "privacy": {
        "delta", "c", "c1", "w_floor", "infimum", "gate_mode", "theta_floor", "damping",
    },
    "sweep": {"methods", "epsilons", "seeds", "jobs"},
    "output": {"dir"},
}

_TRAIN_OVERRIDE_KEYS = {"steps", "sampling_prob", "learning_rate", "local_steps", "noise_mode"}


def _parse_list(raw: str) -> list[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]


def _parse_seeds(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if ":" in raw and "," not in raw:
        lo, hi = raw.split(":", 1)
        return tuple(range(int(lo), int(hi)))
    return tuple(int(s) for s in _parse_list(raw))


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse an experiment config file, validating every key it mentions."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such config file: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read(path)

    for section in parser.sections():
        if section.startswith("method."):
            method = section.split(".", 1)[1]
            if method not in METHODS:
                raise ValueError(f"{path}: unknown method section [{section}]")
            bad = set(parser[section]) - _TRAIN_OVERRIDE_KEYS
            if bad:
                raise ValueError(f"{path}: unknown key {sorted(bad)[0]!r} in [{section}]")
        elif section not in _SECTION_KEYS:
            raise ValueError(f"{path}: unknown section [{section}]")
        else:
            bad = set(parser[section]) - _SECTION_KEYS[section]
            if bad:
                raise ValueError(f"{path}: unknown key {sorted(bad)[0]!r} in [{section}]")

    if "dataset" not in parser:
        raise ValueError(f"{path}: missing required section [dataset]")
    dsec = parser["dataset"]
    kind = dsec.get("kind", "synthetic")
    encoding = None
    if kind == "csv":
        if "label_column" not in dsec:
            raise ValueError(f"{path}: csv dataset requires key 'label_column'")
        label_map: dict[str, int] = {}
        for raw in _parse_list(dsec.get("label_positive", "")):
            label_map[raw] = 1
        for raw in _parse_list(dsec.get("label_negative", "")):
            label_map[raw] = -1
        if not label_map:
            raise ValueError(f"{path}: csv dataset requires label_positive/label_negative")
        categorical = tuple(_parse_list(dsec.get("categorical_columns", "")))
        numeric = tuple(_parse_list(dsec.get("numeric_columns", "")))
        if not numeric:
            with open(dsec["path"], newline="") as fh:
                header = [h.strip() for h in next(csv.reader(fh))]
            numeric = tuple(
                c for c in header if c not in categorical and c != dsec["label_column"]
            )
        encoding = EncodingSpec(
            label=dsec["label_column"],
            label_map=label_map,
            numeric=numeric,
            categorical=categorical,
            drop_unmapped=dsec.getboolean("drop_other_labels", fallback=False),
        )
    default_name = Path(dsec.get("path", "")).stem if kind == "csv" else "synthetic"
    spec = DatasetSpec(
        kind=kind,
        name=dsec.get("name", default_name),
        path=dsec.get("path", ""),
        encoding=encoding,
        subsample=dsec.getint("subsample", fallback=0),
        subsample_seed=dsec.getint("subsample_seed", fallback=0),
        train_fraction=dsec.getfloat("train_fraction", fallback=0.8),
        split_seed=dsec.getint("split_seed", fallback=0),
        cache_dir=dsec.get("cache", ""),
        n=dsec.getint("n", fallback=400),
        d=dsec.getint("d", fallback=10),
        margin=dsec.getfloat("margin", fallback=1.5),
        data_seed=dsec.getint("data_seed", fallback=0),
    )

    msec = parser["model"] if "model" in parser else {}
    tsec = parser["train"] if "train" in parser else {}
    psec = parser["privacy"] if "privacy" in parser else {}
    ssec = parser["sweep"] if "sweep" in parser else {}
    osec = parser["output"] if "output" in parser else {}

    def _get(sec, key, default=None):
        return sec.get(key, default) if hasattr(sec, "get") else default

    steps_raw = _get(tsec, "steps", "100").strip()
    cv_grid: tuple[int, ...] = ()
    if steps_raw == "cv":
        cv_grid = tuple(int(s) for s in _parse_list(_get(tsec, "cv_grid", "50,100,200")))
        steps = cv_grid[0]
    else:
        steps = int(steps_raw)

    lr_raw = _get(tsec, "learning_rate", "auto").strip()
    learning_rate = None if lr_raw == "auto" else float(lr_raw)

    sampling_prob = float(_get(tsec, "sampling_prob", "0.05"))
    batch_size_raw = _get(tsec, "batch_size")
    train_cfg = TrainConfig(
        steps=steps,
        sampling_prob=sampling_prob,
        learning_rate=learning_rate,
        local_steps=int(_get(tsec, "local_steps", "10")),
        seed=int(_get(tsec, "seed", "0")),
        noise_mode=_get(tsec, "noise_mode", "fixed").strip(),
    )

    overrides: dict[str, dict] = {}
    for section in parser.sections():
        if not section.startswith("method."):
            continue
        method = section.split(".", 1)[1]
        o: dict = {}
        sec = parser[section]
        if "steps" in sec:
            o["steps"] = sec.getint("steps")
        if "sampling_prob" in sec:
            o["sampling_prob"] = sec.getfloat("sampling_prob")
        if "learning_rate" in sec:
            raw = sec.get("learning_rate").strip()
            o["learning_rate"] = None if raw == "auto" else float(raw)
        if "local_steps" in sec:
            o["local_steps"] = sec.getint("local_steps")
        if "noise_mode" in sec:
            o["noise_mode"] = sec.get("noise_mode").strip()
        overrides[method] = o

    delta_raw = _get(psec, "delta", "auto").strip()
    delta = None if delta_raw == "auto" else float(delta_raw)
    consts = CalibrationConstants(
        c=float(_get(psec, "c", "2.0")),
        c1=float(_get(psec, "c1", "1.0")),
        w_floor=float(_get(psec, "w_floor", "1e-6")),
        infimum=float(_get(psec, "infimum", "1.0")),
    )

    cfg = ExperimentConfig(
        dataset=spec,
        model_kind=_get(msec, "kind", "logistic").strip(),
        lambda_reg=float(_get(msec, "lambda_reg", "1e-3")),
        clip_bound=float(_get(msec, "clip_bound", "1.0")),
        mixed_norm_method=_get(msec, "mixed_norm", "spectral").strip(),
        train=train_cfg,
        batch_size=None if batch_size_raw is None else int(batch_size_raw),
        steps_cv_grid=cv_grid,
        method_overrides=overrides,
        delta=delta,
        consts=consts,
        gate_mode=_get(psec, "gate_mode", "literal").strip(),
        theta_floor=float(_get(psec, "theta_floor", "1e-12")),
        damping=float(_get(psec, "damping", "0.0")),
        methods=tuple(_parse_list(_get(ssec, "methods", "data,data-gated,gradient,output"))),
        epsilons=tuple(float(e) for e in _parse_list(_get(ssec, "epsilons", "0.1,0.5,1,3,7"))),
        seeds=_parse_seeds(_get(ssec, "seeds", "0:5")),
        outdir=_get(osec, "dir", "out"),
        jobs=int(_get(ssec, "jobs", "1")),
    )
    return cfg
