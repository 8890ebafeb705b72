"""Experiment pipelines behind the CLI: data, models, evaluation tables, sweeps, figure 1."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .attacks import (PGD_ATTACK, PGD_NOISE, AttackConfig, fmn_calibrate_batch, pgd_eot,
                      pgd_untargeted, random_noise_attack)
from .config import ConfigError, ExperimentConfig
from .engine import DrqConfig, drq_cosine_diagnostic, drq_predict_batch
from .geometry import Norm, NormBall
from .network import DenseNetwork, load_network, predict
from .toybench import (Architecture, CorruptionSpec, Dataset, Region, SpuriousIsland, TrainConfig,
                       accuracy, component_mask, corrupt, decision_boundary_raster, island_cell_count,
                       load_csv, make_toy_images, make_two_gaussians, train_classifier)

ATTACKS = ("pgd", "pgd_noise", "pgd_attack", "random_noise")
SWEEP_PARAMETERS = ("iterations", "confidence_threshold", "alpha", "epsilon")
EVAL_COLUMNS = ("condition", "standard", "drq_linf", "drq_l2")
SWEEP_COLUMNS = ("parameter", "value", "clean_standard", "clean_drq_linf", "clean_drq_l2",
                 "attacked_standard", "attacked_drq_linf", "attacked_drq_l2", "mean_epsilon_p")


def pct(fraction: float) -> str:
    return f"{100.0 * fraction:.2f}"


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# -- ordered fan-out --------------------------------------------------------

def fan_out(fn, n: int, chunk_size: int, workers: int, *args) -> list:
    """``fn(lo, hi, *args)`` over fixed chunks of ``range(n)``, results in chunk order.

    Chunk boundaries never depend on ``workers``, so output bytes do not either.
    """
    bounds = [(lo, min(lo + chunk_size, n)) for lo in range(0, n, chunk_size)]
    if workers <= 1 or len(bounds) <= 1:
        return [fn(lo, hi, *args) for lo, hi in bounds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, lo, hi, *args) for lo, hi in bounds]
        return [f.result() for f in futures]


# -- data and model ---------------------------------------------------------

@dataclass
class Splits:
    train: Dataset
    test: Dataset


def build_data(cfg: ExperimentConfig) -> Splits:
    ds_cfg = cfg.dataset
    seed = cfg.data_seed
    if ds_cfg.kind == "csv":
        if ds_cfg.path is None:
            raise ConfigError("dataset.path is required for csv datasets")
        full = load_csv(ds_cfg.path)
        if full.dim == ds_cfg.grid_size ** 2:
            full = load_csv(ds_cfg.path, grid=ds_cfg.grid_size)
        if ds_cfg.test_path is not None:
            train, test = full, load_csv(ds_cfg.test_path, classes=full.classes, grid=full.grid)
        else:
            train, test = full.split(ds_cfg.test_fraction, seed)
    elif ds_cfg.kind == "two_gaussians":
        island = None
        if ds_cfg.island:
            island = SpuriousIsland(tuple(ds_cfg.island_center), ds_cfg.island_points, ds_cfg.island_spread)
        full = make_two_gaussians(ds_cfg.separation, island, ds_cfg.n, seed)
        train, test = full, full
        if ds_cfg.test_fraction > 0:
            # the planted scenario trains on everything; a fresh draw serves as held-out data
            test = make_two_gaussians(ds_cfg.separation, None, ds_cfg.n, seed + 1)
    elif ds_cfg.kind == "toy_images":
        full = make_toy_images(ds_cfg.grid_size, ds_cfg.classes, ds_cfg.n, seed, ds_cfg.noise, ds_cfg.max_shift)
        train, test = full.split(ds_cfg.test_fraction, seed)
    else:
        raise ConfigError(f"unknown dataset kind {ds_cfg.kind!r}")
    if ds_cfg.test_samples is not None:
        test = test.subset(np.arange(min(ds_cfg.test_samples, len(test))))
    return Splits(train, test)


def train_model(cfg: ExperimentConfig, data: Splits) -> DenseNetwork:
    t = cfg.train
    tc = TrainConfig(t.mode, t.epochs, t.lr, t.batch_size, t.epsilon, t.inner_iterations, cfg.box, cfg.seed)
    return train_classifier(data.train, Architecture(tuple(cfg.model.hidden), cfg.model.activation), tc)


def get_model(cfg: ExperimentConfig, data: Splits) -> DenseNetwork:
    if cfg.model.path is not None:
        try:
            return load_network(cfg.model.path)
        except OSError as exc:
            raise ConfigError(f"cannot read model {cfg.model.path}: {exc}") from None
    return train_model(cfg, data)


# -- DRQ configuration ------------------------------------------------------

def _threshold(cfg: ExperimentConfig) -> float | None:
    raw = cfg.drq.confidence_threshold.strip().lower()
    return None if raw in ("sample", "none") else float(raw)


def drq_config(cfg: ExperimentConfig, p, epsilon_p: float | None, **overrides) -> DrqConfig:
    d = cfg.drq
    base = DrqConfig(alpha=d.alpha, confidence_threshold=_threshold(cfg), fixed_epsilon_p=epsilon_p, p=p,
                     top_k=d.top_k, exploration_iterations=d.exploration_iterations,
                     quantification_iterations=d.quantification_iterations,
                     calibration_max_iterations=d.calibration_iterations, box=cfg.box,
                     step_factor=d.step_factor, seed=cfg.seed)
    return base.with_(**overrides) if overrides else base


def mean_calibration_distance(net, X, c, p, cfg: ExperimentConfig) -> tuple[float, float]:
    """Mean epsilon_p over the rows where the search succeeded, and the success rate."""
    thr = np.minimum(predict_confidence(net, X), 1.0 - 1e-9) if c is None else c
    _, eps, found = fmn_calibrate_batch(net, X, thr, p, cfg.drq.calibration_iterations, box=cfg.box)
    if not found.any():
        return float("nan"), 0.0
    return float(eps[found].mean()), float(found.mean())


def predict_confidence(net, X) -> np.ndarray:
    from .network import confidences

    return confidences(net, X).max(axis=1)


def resolve_epsilon(cfg: ExperimentConfig, net, train: Dataset, p) -> float | None:
    """Fixed epsilon_p for a norm, or None for per-sample calibration."""
    p = Norm.parse(p)
    raw = (cfg.drq.epsilon_linf if p is Norm.LINF else cfg.drq.epsilon_l2).strip().lower()
    if raw == "calibrate":
        return None
    if raw == "auto":
        X = train.features[:cfg.drq.calibration_samples]
        mean, rate = mean_calibration_distance(net, X, _threshold(cfg), p, cfg)
        if rate == 0.0:
            raise ConfigError(f"auto epsilon_p: calibration found no {p.value} hits on the training data")
        return mean
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"epsilon_p must be a number, 'auto' or 'calibrate', got {raw!r}") from None
    if value <= 0:
        raise ConfigError("epsilon_p must be positive")
    return value


# -- chunk workers (top level so they pickle) ---------------------------------

def _drq_chunk(lo, hi, net, X, dcfg, explore_mode, quantify_mode, n_random):
    res = drq_predict_batch(net, X[lo:hi], dcfg, sample_ids=np.arange(lo, hi), explore_mode=explore_mode,
                            quantify_mode=quantify_mode, n_random=n_random, random_seed=dcfg.seed)
    labels = np.array([r.label for r in res])
    eps = np.array([r.epsilon_p for r in res])
    win = np.full((hi - lo, X.shape[1]), np.nan)
    for k, r in enumerate(res):
        if r.winning_point is not None:
            win[k] = r.winning_point
    return labels, eps, win


def drq_labels(cfg: ExperimentConfig, net, X, dcfg: DrqConfig, explore_mode="gradient",
               quantify_mode="gradient", n_random=20):
    """DRQ labels, epsilon_p and winning quantified points for every row of ``X``."""
    parts = fan_out(_drq_chunk, len(X), cfg.chunk_size, cfg.workers, net, X, dcfg,
                    explore_mode, quantify_mode, n_random)
    if not parts:
        return np.zeros(0, int), np.zeros(0), np.zeros((0, X.shape[1]))
    return tuple(np.concatenate(z) for z in zip(*parts))


def _attack_chunk(lo, hi, net, X, y, name, eps, p, iterations, random_samples, box, seed):
    ids = np.arange(lo, hi)
    Xc, yc = X[lo:hi], y[lo:hi]
    ball = NormBall(p, Xc, eps, box)
    acfg = AttackConfig(iterations, seed=seed)
    if name == "pgd":
        return pgd_untargeted(net, Xc, yc, ball, acfg, sample_ids=ids)
    if name == "pgd_noise":
        return pgd_eot(net, Xc, yc, ball, acfg, PGD_NOISE, sample_ids=ids)
    if name == "pgd_attack":
        return pgd_eot(net, Xc, yc, ball, acfg, PGD_ATTACK, sample_ids=ids)
    if name == "random_noise":
        out = np.empty_like(Xc)
        for k, i in enumerate(ids):
            one = NormBall(p, Xc[k], eps, box)
            out[k] = random_noise_attack(net, Xc[k], one, random_samples, seed, int(i))[1]
        return out
    raise ConfigError(f"unknown attack {name!r}; choose from {', '.join(ATTACKS)}")


def run_attack(cfg: ExperimentConfig, net, test: Dataset, name: str, eps: float | None = None) -> np.ndarray:
    """Adversarial inputs crafted against the standard classifier (non-adaptive)."""
    a = cfg.attack
    eps = a.epsilon if eps is None else eps
    parts = fan_out(_attack_chunk, len(test), cfg.chunk_size, cfg.workers, net, test.features, test.labels,
                    name, eps, Norm.parse(a.norm), a.iterations, a.random_samples, cfg.box, cfg.seed)
    return np.vstack(parts) if parts else np.zeros((0, test.dim))


def _corruption(entry: str, seed: int) -> CorruptionSpec:
    kind, sep, mag = entry.partition(":")
    if not sep:
        raise ConfigError(f"corruption {entry!r} must look like kind:magnitude")
    try:
        return CorruptionSpec(kind.strip(), float(mag), seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- evaluation table -------------------------------------------------------

@dataclass
class EvalOutcome:
    table: list[list[str]]
    correct: dict[str, dict[str, np.ndarray]]  # condition -> method -> per-sample correctness
    inputs: dict[str, np.ndarray]
    winning: dict[str, dict[str, np.ndarray]]
    epsilons: dict[str, float | None]
    ablation: list[list[str]] | None = None
    cosine: list[list[str]] | None = None


def evaluate(cfg: ExperimentConfig, net, data: Splits) -> EvalOutcome:
    for name in cfg.attack.suite:
        if name not in ATTACKS:
            raise ConfigError(f"unknown attack {name!r}; choose from {', '.join(ATTACKS)}")
    test = data.test
    y = test.labels
    methods = {"linf": Norm.LINF, "l2": Norm.L2}
    eps = {m: resolve_epsilon(cfg, net, data.train, p) for m, p in methods.items()}
    dcfgs = {m: drq_config(cfg, p, eps[m]) for m, p in methods.items()}

    inputs = {"clean": test.features}
    for entry in cfg.eval.corruptions:
        spec = _corruption(entry, cfg.eval.corruption_seed)
        inputs[f"{spec.kind}_{entry.partition(':')[2].strip()}"] = corrupt(test, spec).features
    for name in cfg.attack.suite:
        inputs[name] = run_attack(cfg, net, test, name)

    correct, winning = {}, {}
    for cond, X in inputs.items():
        correct[cond] = {"standard": predict(net, X) == y}
        winning[cond] = {}
        for m, dcfg in dcfgs.items():
            labels, _, win = drq_labels(cfg, net, X, dcfg)
            correct[cond][m] = labels == y
            winning[cond][m] = win

    table = [[cond, pct(c["standard"].mean()), pct(c["linf"].mean()), pct(c["l2"].mean())]
             for cond, c in correct.items()]
    if cfg.attack.suite:
        worst = {k: np.logical_and.reduce([correct[a][k] for a in cfg.attack.suite])
                 for k in ("standard", "linf", "l2")}
        correct["worst_case"] = worst
        table.append(["worst_case", pct(worst["standard"].mean()), pct(worst["linf"].mean()),
                      pct(worst["l2"].mean())])
    out = EvalOutcome(table, correct, inputs, winning, eps)
    if cfg.eval.ablation:
        out.ablation = ablation_rows(cfg, net, test, inputs, dcfgs["linf"])
    if cfg.eval.cosine:
        out.cosine = cosine_rows(cfg, out)
    return out


ABLATION_COLUMNS = ("exploration", "quantification", "clean", "worst_case")


def ablation_rows(cfg, net, test: Dataset, inputs, dcfg) -> list[list[str]]:
    """DRQ-linf clean and worst-case accuracy with each step gradient-based or random."""
    rows = []
    for em in ("gradient", "random"):
        for qm in ("gradient", "random"):
            per = {}
            for cond in ["clean", *cfg.attack.suite]:
                labels = drq_labels(cfg, net, inputs[cond], dcfg, em, qm, cfg.eval.ablation_random_samples)[0]
                per[cond] = labels == test.labels
            attacked = [per[a] for a in cfg.attack.suite]
            worst = np.logical_and.reduce(attacked) if attacked else per["clean"]
            rows.append([em, qm, pct(per["clean"].mean()), pct(worst.mean())])
    return rows


COSINE_COLUMNS = ("condition", "method", "samples", "mean_cosine")


def cosine_rows(cfg, out: EvalOutcome) -> list[list[str]]:
    """Mean cos(x_hat - x_adv, x_adv - x) over attacked samples that DRQ corrected."""
    rows = []
    x = out.inputs["clean"]
    for cond in cfg.attack.suite:
        for m in ("linf", "l2"):
            fixed = ~out.correct[cond]["standard"] & out.correct[cond][m]
            win = out.winning[cond][m]
            values = []
            for i in np.flatnonzero(fixed):
                try:
                    values.append(drq_cosine_diagnostic(x[i], win[i], out.inputs[cond][i]))
                except ValueError:
                    continue
            mean = f"{np.mean(values):.6f}" if values else "nan"
            rows.append([cond, m, str(len(values)), mean])
    return rows


# -- sweeps -----------------------------------------------------------------

def sweep(cfg: ExperimentConfig, net, data: Splits) -> list[list[str]]:
    parameter = cfg.sweep.parameter
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown sweep parameter {parameter!r}; choose from {', '.join(SWEEP_PARAMETERS)}")
    if not cfg.sweep.values:
        raise ConfigError("sweep.values must not be empty")
    test = data.test
    if cfg.sweep.samples is not None:
        test = test.subset(np.arange(min(cfg.sweep.samples, len(test))))
    y = test.labels
    rows = []
    if parameter == "confidence_threshold":
        for c in cfg.sweep.values:
            mean, _ = mean_calibration_distance(net, test.features, float(c), Norm.LINF, cfg)
            rows.append([parameter, _fmt_value(c), "", "", "", "", "", "", f"{mean:.6f}"])
        return rows

    eps = {m: resolve_epsilon(cfg, net, data.train, m) for m in ("linf", "l2")}
    fixed_adv = run_attack(cfg, net, test, "pgd") if parameter != "epsilon" else None
    for value in cfg.sweep.values:
        overrides = {}
        if parameter == "iterations":
            overrides = {"exploration_iterations": int(value), "quantification_iterations": int(value)}
        elif parameter == "alpha":
            overrides = {"alpha": float(value)}
        adv = fixed_adv if fixed_adv is not None else run_attack(cfg, net, test, "pgd", float(value))
        row = [parameter, _fmt_value(value)]
        clean, attacked = [], []
        clean.append(np.mean(predict(net, test.features) == y))
        attacked.append(np.mean(predict(net, adv) == y))
        for m in ("linf", "l2"):
            dcfg = drq_config(cfg, m, eps[m], **overrides)
            clean.append(np.mean(drq_labels(cfg, net, test.features, dcfg)[0] == y))
            attacked.append(np.mean(drq_labels(cfg, net, adv, dcfg)[0] == y))
        rows.append(row + [pct(v) for v in clean] + [pct(v) for v in attacked] + [""])
    return rows


def _fmt_value(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


# -- figure 1 ---------------------------------------------------------------

@dataclass
class Figure1Outcome:
    standard: np.ndarray
    drq: np.ndarray
    probe: np.ndarray
    standard_label: int
    drq_label: int
    epsilon_p: float
    robust_confidence: dict[int, float]
    island_standard: int
    island_drq: int
    diff_fraction: float
    flip_required: bool

    @property
    def flipped(self) -> bool:
        return self.drq_label != self.standard_label


def _raster_chunk(lo, hi, net, points, dcfg):
    return np.array([r.label for r in drq_predict_batch(net, points[lo:hi], dcfg, sample_ids=np.arange(lo, hi))])


def figure1(cfg: ExperimentConfig, net, data: Splits) -> Figure1Outcome:
    if data.train.dim != 2:
        raise ConfigError("figure1 needs a 2-D dataset")
    f = cfg.figure1
    if len(f.region) != 4:
        raise ConfigError("figure1.region must be xmin, xmax, ymin, ymax")
    region = Region(*f.region)
    probe = np.asarray(f.probe if f.probe is not None else cfg.dataset.island_center, dtype=np.float64)
    dcfg = drq_config(cfg, f.norm, resolve_epsilon(cfg, net, data.train, f.norm))

    standard = decision_boundary_raster(lambda P: predict(net, P), region, f.resolution)

    def drq_eval(points):
        return np.concatenate(fan_out(_raster_chunk, len(points), cfg.chunk_size * 20, cfg.workers,
                                      net, points, dcfg))

    drq = decision_boundary_raster(drq_eval, region, f.resolution)
    res = drq_predict_batch(net, probe[None, :], dcfg, sample_ids=[0])[0]
    cell = region.cell_of(probe, f.resolution)
    island = component_mask(standard, cell)
    label = int(standard[cell])
    return Figure1Outcome(
        standard, drq, probe, res.standard_label, res.label, res.epsilon_p, dict(res.robust_confidence),
        island_cell_count(standard, island, label), island_cell_count(drq, island, label),
        float(np.mean(standard != drq)), bool(f.require_flip and cfg.dataset.island),
    )


def train_report(net, data: Splits) -> tuple[float, float]:
    return accuracy(net, data.train), accuracy(net, data.test)
