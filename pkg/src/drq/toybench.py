"""Desk-scale data, training and corruption operators."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .attacks import AttackConfig, keyed_rng, pgd_untargeted
from .geometry import Norm, NormBall
from .network import DenseNetwork, forward, init_network, loss_and_param_gradients, predict

_TRAIN, _NOISE, _ROT, _SHIFT, _SPLIT = 21, 22, 23, 24, 25


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    classes: int | None = None
    seed: int = 0
    grid: int | None = None  # side length for image-like data

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or len(x) < 1 or len(y) != len(x):
            raise ValueError("need an (n, d) feature matrix with one label per row")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        classes = int(y.max()) + 1 if self.classes is None else self.classes
        if y.min() < 0 or y.max() >= classes:
            raise ValueError("labels out of range")
        if self.grid is not None and self.grid * self.grid != x.shape[1]:
            raise ValueError("grid size does not match the feature dimension")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "classes", classes)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.name, self.classes, self.seed, self.grid)

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.labels, self.name, self.classes, self.seed, self.grid)

    def split(self, test_fraction=0.5, seed=None) -> tuple["Dataset", "Dataset"]:
        rng = keyed_rng(self.seed if seed is None else seed, _SPLIT)
        order = rng.permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.subset(np.sort(order[n_test:])), self.subset(np.sort(order[:n_test]))


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{i}" for i in range(ds.dim)] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, name=None, classes=None, grid=None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r]
    if not header or header[-1] != "label" or header[:-1] != [f"f{i}" for i in range(len(header) - 1)]:
        raise ValueError("expected header f0,...,f{d-1},label")
    feats = np.array([[float(v) for v in r[:-1]] for r in body])
    labels = np.array([int(r[-1]) for r in body])
    return Dataset(feats, labels, name or Path(path).stem, classes, 0, grid)


# -- generators -------------------------------------------------------------

@dataclass(frozen=True)
class SpuriousIsland:
    """A tight cluster of class-1 points planted in class-0 territory."""

    center: tuple[float, float] = (-2.0, 0.0)
    n_points: int = 5
    spread: float = 0.25


def make_two_gaussians(separation: float = 4.0, spurious: SpuriousIsland | None = None, n: int = 200,
                       seed: int = 0, std: float = 1.0) -> Dataset:
    """Balanced two-class 2-D data: N((-s/2, 0), std^2 I) vs N((+s/2, 0), std^2 I)."""
    if n < 2 or separation <= 0:
        raise ValueError("need n >= 2 and a positive separation")
    rng = np.random.default_rng(seed)
    half = n // 2
    a = rng.normal(size=(half, 2)) * std + [-separation / 2, 0.0]
    b = rng.normal(size=(n - half, 2)) * std + [separation / 2, 0.0]
    feats = [a, b]
    labels = [np.zeros(half, int), np.ones(n - half, int)]
    if spurious is not None:
        c = np.asarray(spurious.center, dtype=np.float64)
        # clear class-0 samples out of the island so the planted points are uncontested
        keep = np.linalg.norm(a - c, axis=1) > 4 * spurious.spread
        feats[0], labels[0] = a[keep], labels[0][keep]
        feats.append(c + rng.normal(size=(spurious.n_points, 2)) * spurious.spread)
        labels.append(np.ones(spurious.n_points, int))
    return Dataset(np.vstack(feats), np.concatenate(labels), "two_gaussians", 2, seed)


def bar_template(grid_size: int, angle_deg: float, width: float = 1.0) -> np.ndarray:
    """Anti-aliased line through the grid center at ``angle_deg`` (0 = horizontal)."""
    mid = (grid_size - 1) / 2.0
    rows, cols = np.mgrid[0:grid_size, 0:grid_size].astype(np.float64)
    t = np.deg2rad(angle_deg)
    # distance to the line through the center with direction (cos t, -sin t) in (col, row)
    dist = np.abs((cols - mid) * np.sin(t) + (rows - mid) * np.cos(t))
    return np.clip(1.0 - dist / width, 0.0, 1.0)


def templates(grid_size: int, classes: int) -> np.ndarray:
    return np.stack([bar_template(grid_size, 180.0 * k / classes) for k in range(classes)])


def make_toy_images(grid_size: int = 8, classes: int = 4, n: int = 2000, seed: int = 0,
                    noise: float = 0.1, max_shift: int = 0) -> Dataset:
    """Oriented-bar images in [0, 1]^(g*g) with per-sample shift and Gaussian noise."""
    if not 4 <= grid_size <= 16:
        raise ValueError("grid_size must lie in [4, 16]")
    rng = np.random.default_rng(seed)
    tmpl = templates(grid_size, classes)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    imgs = tmpl[labels].copy()
    if max_shift:
        shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
        imgs = np.stack([translate_image(im, int(dx), int(dy)) for im, (dx, dy) in zip(imgs, shifts)])
    if noise:
        imgs = np.clip(imgs + rng.normal(scale=noise, size=imgs.shape), 0.0, 1.0)
    return Dataset(imgs.reshape(n, -1), labels, "toy_images", classes, seed, grid_size)


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class Architecture:
    hidden: tuple[int, ...] = (16, 16)
    activation: str = "tanh"

    def sizes(self, d: int, classes: int) -> tuple[int, ...]:
        return (d, *self.hidden, classes)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "standard"  # or "adversarial"
    epochs: int = 50
    lr: float = 0.01
    batch_size: int = 32
    epsilon: float = 0.1
    inner_iterations: int = 7
    box: tuple[float, float] | None = None
    seed: int = 0


def train_classifier(dataset: Dataset, architecture: Architecture = Architecture(),
                     cfg: TrainConfig = TrainConfig()) -> DenseNetwork:
    """Minibatch Adam on the cross-entropy.

    Adversarial mode swaps every batch for l-inf PGD adversaries
    (``inner_iterations`` steps, random start) before the update.
    """
    if cfg.mode not in ("standard", "adversarial"):
        raise ValueError(f"unknown training mode {cfg.mode!r}")
    net = init_network(architecture.sizes(dataset.dim, dataset.classes), architecture.activation, cfg.seed)
    if cfg.epochs == 0:
        return net
    params = [[w.copy(), b.copy()] for w, b in net.params()]
    m = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params]
    v = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params]
    beta1, beta2, tiny = 0.9, 0.999, 1e-8
    step = 0
    X, y = dataset.features, dataset.labels
    n = len(y)
    for epoch in range(cfg.epochs):
        order = keyed_rng(cfg.seed, _TRAIN, epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = X[idx]
            if cfg.mode == "adversarial":
                current = DenseNetwork.from_params(params, architecture.activation)
                ball = NormBall(Norm.LINF, xb, cfg.epsilon, cfg.box)
                attack = AttackConfig(cfg.inner_iterations, deterministic_start=False,
                                      seed=cfg.seed * 100003 + epoch)
                xb = _last_iterate_pgd(current, xb, y[idx], ball, attack, idx)
            loss, grads = loss_and_param_gradients(params, xb, y[idx], architecture.activation)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            step += 1
            for k, (gw, gb) in enumerate(grads):
                for j, g in enumerate((gw, gb)):
                    m[k][j] = beta1 * m[k][j] + (1 - beta1) * g
                    v[k][j] = beta2 * v[k][j] + (1 - beta2) * g * g
                    mh = m[k][j] / (1 - beta1 ** step)
                    vh = v[k][j] / (1 - beta2 ** step)
                    params[k][j] = params[k][j] - cfg.lr * mh / (np.sqrt(vh) + tiny)
            with np.errstate(over="ignore", invalid="ignore"):
                logits_ok = np.all(np.isfinite(forward(_raw_net(params, architecture.activation), xb)))
            if not logits_ok:
                raise TrainingDivergedError(f"non-finite logits at epoch {epoch}")
    return DenseNetwork.from_params(params, architecture.activation)


def _raw_net(params, activation):
    if not all(np.all(np.isfinite(a)) for layer in params for a in layer):
        raise TrainingDivergedError("non-finite parameters")
    return DenseNetwork.from_params(params, activation)


def _last_iterate_pgd(net, xb, labels, ball, attack: AttackConfig, ids):
    """Training-time PGD: returns the final iterate (no best-so-far tracking)."""
    from .attacks import _start_points
    from .geometry import ascent_direction, project
    from .network import confidences_and_gradient

    bball = NormBall(ball.p, ball.center, np.full(len(xb), float(ball.radius)), ball.box)
    cur = _start_points(bball, attack, ids)
    step = attack.step_for(bball.radius)[:, None]
    for _ in range(attack.iterations):
        _, g = confidences_and_gradient(net, cur, labels)
        cur = project(cur + step * ascent_direction(g, ball.p), bball)
    return cur


def accuracy(net: DenseNetwork, ds: Dataset) -> float:
    return float(np.mean(predict(net, ds.features) == ds.labels))


# -- corruptions ------------------------------------------------------------

@dataclass(frozen=True)
class CorruptionSpec:
    kind: str  # gaussian_noise | rotation | translation
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        bounds = {"gaussian_noise": 1.0, "rotation": 180.0, "translation": 16.0}
        if self.kind not in bounds:
            raise ValueError(f"unknown corruption {self.kind!r}")
        if not 0 <= self.magnitude <= bounds[self.kind]:
            raise ValueError(f"{self.kind} magnitude must lie in [0, {bounds[self.kind]}]")


def translate_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift by ``dx`` columns and ``dy`` rows with zero fill."""
    out = np.zeros_like(img)
    h, w = img.shape
    src_r = slice(max(0, -dy), min(h, h - dy))
    dst_r = slice(max(0, dy), min(h, h + dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_c = slice(max(0, dx), min(w, w + dx))
    out[dst_r, dst_c] = img[src_r, src_c]
    return out


def rotate_image(img: np.ndarray, degrees: float) -> np.ndarray:
    """Bilinear rotation about the grid center, zero padded."""
    if degrees == 0:
        return img.copy()
    return ndimage.rotate(img, degrees, reshape=False, order=1, mode="constant", cval=0.0)


def corrupt(ds: Dataset, spec: CorruptionSpec) -> Dataset:
    """Apply a per-sample random corruption; labels and shape are preserved."""
    n = len(ds)
    if spec.kind == "gaussian_noise":
        out = ds.features.copy()
        if spec.magnitude > 0:
            for i in range(n):
                out[i] += keyed_rng(spec.seed, _NOISE, i).normal(scale=spec.magnitude, size=ds.dim)
            if ds.grid is not None:
                out = np.clip(out, 0.0, 1.0)
        return ds.with_features(out)
    if ds.grid is None:
        raise ValueError(f"{spec.kind} needs an image-grid dataset")
    g = ds.grid
    imgs = ds.features.reshape(n, g, g)
    out = np.empty_like(imgs)
    for i in range(n):
        if spec.kind == "rotation":
            angle = keyed_rng(spec.seed, _ROT, i).uniform(-spec.magnitude, spec.magnitude)
            out[i] = rotate_image(imgs[i], angle)
        else:
            m = int(spec.magnitude)
            dx, dy = keyed_rng(spec.seed, _SHIFT, i).integers(-m, m + 1, size=2)
            out[i] = translate_image(imgs[i], int(dx), int(dy))
    return ds.with_features(np.clip(out, 0.0, 1.0).reshape(n, -1))


# -- rasters ----------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def cell_centers(self, resolution: int) -> np.ndarray:
        """Cell centers in raster order: row 0 is the top (ymax) edge."""
        dx = (self.xmax - self.xmin) / resolution
        dy = (self.ymax - self.ymin) / resolution
        xs = self.xmin + (np.arange(resolution) + 0.5) * dx
        ys = self.ymax - (np.arange(resolution) + 0.5) * dy
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def cell_of(self, point, resolution: int) -> tuple[int, int]:
        col = int((point[0] - self.xmin) / (self.xmax - self.xmin) * resolution)
        row = int((self.ymax - point[1]) / (self.ymax - self.ymin) * resolution)
        return min(max(row, 0), resolution - 1), min(max(col, 0), resolution - 1)


def decision_boundary_raster(evaluator, region: Region, resolution: int = 128) -> np.ndarray:
    """Integer label grid from ``evaluator((n, 2) points) -> labels``."""
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    labels = np.asarray(evaluator(region.cell_centers(resolution)), dtype=np.int64)
    return labels.reshape(resolution, resolution)


def component_mask(raster: np.ndarray, cell: tuple[int, int]) -> np.ndarray:
    """4-connected component of equal labels containing ``cell``."""
    lab, _ = ndimage.label(raster == raster[cell])
    return lab == lab[cell]


def island_cell_count(raster: np.ndarray, island: np.ndarray, label: int) -> int:
    return int(np.sum((raster == label) & island))


def write_pgm(path, raster: np.ndarray, classes: int = 2) -> None:
    scale = 255 // max(classes - 1, 1)
    rows = [" ".join(str(int(v) * scale) for v in row) for row in raster]
    text = f"P2\n{raster.shape[1]} {raster.shape[0]}\n255\n" + "\n".join(rows) + "\n"
    Path(path).write_text(text)


def read_pgm(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h = int(tokens[1]), int(tokens[2])
    return np.array([int(t) for t in tokens[4:4 + w * h]]).reshape(h, w)
