"""Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned."""

import csv
import time
from pathlib import Path

import numpy as np
import pytest

from drq.cli import main
from drq.engine import DrqConfig, drq_predict_batch
from drq.network import cross_entropy, forward, init_network, input_gradient
from drq.theory import CLOSED_FORM_TOL, binary_drq, quadratic_field
from drq.toybench import Architecture, SpuriousIsland, TrainConfig, make_two_gaussians, train_classifier
from grid_oracle import GridField, grid_drq_label

CONFIGS = Path(__file__).parents[1] / "configs"


@pytest.fixture
def report():
    def emit(capsys, criterion, passed, detail):
        with capsys.disabled():
            print(f"\n[criterion {criterion}] {'PASS' if passed else 'FAIL'}: {detail}")

    return emit


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def run_cli(command, config, out, *sets):
    args = [command, "--config", str(CONFIGS / config), "--out", str(out)]
    for s in sets:
        args += ["--set", s]
    start = time.perf_counter()
    code = main(args)
    return code, time.perf_counter() - start


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def toy_eval(work):
    code, elapsed = run_cli("eval", "toy_images.cfg", work / "eval")
    return code, elapsed, work / "eval"


def test_criterion_1_theory_suite(work, report, capsys):
    code, elapsed = run_cli("verify-theory", "theory.cfg", work / "theory")
    rows = read_rows(work / "theory" / "theory.csv")
    reports = {(r["field_kind"], r["field_params"], r["x"], r["epsilon"], r["alpha"]) for r in rows}
    n_random = sum(1 for k in reports if k[0] == "gaussian_mixture")
    n_quad = len({(k[1], k[3], k[4]) for k in reports if k[0] == "quadratic" and ":" not in k[4]})
    violations = sum(r["passed"] != "1" for r in rows)
    equality = binary_drq(quadratic_field(1.0, 0.3, [0.0, 0.0]), [0.0, 0.0], 0.4, 0.5).u_drq
    ok = (code == 0 and violations == 0 and n_random >= 200 and n_quad == 60
          and abs(equality - 0.34) <= CLOSED_FORM_TOL and elapsed < 120)
    report(capsys, 1, ok, f"random={n_random} quadratic={n_quad} violations={violations} "
                          f"bowl u_drq={equality!r} time={elapsed:.1f}s (<120s)")
    assert ok


def test_criterion_2_gradient_correctness(report, capsys):
    start = time.perf_counter()
    worst = 0.0
    h = 1e-5
    for probe in range(100):
        rng = np.random.default_rng(1000 + probe)
        sizes = (int(rng.integers(2, 6)), *rng.integers(3, 9, size=int(rng.integers(1, 3))), int(rng.integers(2, 5)))
        net = init_network(tuple(int(s) for s in sizes), ["relu", "tanh"][probe % 2], seed=probe)
        x = rng.normal(size=sizes[0])
        cls = int(rng.integers(sizes[-1]))
        g = input_gradient(net, x, cls)
        fd = np.array([(cross_entropy(forward(net, x + h * e), cls) - cross_entropy(forward(net, x - h * e), cls))
                       / (2 * h) for e in np.eye(len(x))])
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and elapsed < 10
    report(capsys, 2, ok, f"max relative error {worst:.2e} (<1e-5) over 100 probes, time={elapsed:.2f}s (<10s)")
    assert ok


ORACLE_FIELDS = [  # (island spread, seed, activation, island planted, norm)
    (0.25, 1, "tanh", True, "linf"),
    (0.1, 0, "tanh", True, "l2"),
    (0.25, 2, "relu", False, "linf"),
]


def test_criterion_3_oracle_equivalence(report, capsys):
    start = time.perf_counter()
    eps, alpha, window = 0.5, 0.5, (-4.0, 1.0)
    rates = []
    for spread, seed, act, planted, norm in ORACLE_FIELDS:
        island = SpuriousIsland((-2.0, 0.0), 5, spread) if planted else None
        ds = make_two_gaussians(4.0, island, 400, seed)
        net = train_classifier(ds, Architecture((16, 16), act), TrainConfig(epochs=100, lr=0.01, seed=seed))
        grid = GridField(net, window, 1.5 * eps, eps / 200)
        queries = np.random.default_rng(7).uniform(*window, size=(500, 2))
        res = drq_predict_batch(net, queries, DrqConfig(p=norm, alpha=alpha, fixed_epsilon_p=eps))
        oracle = [grid_drq_label(grid, q, eps, alpha, norm)[0] for q in queries]
        rates.append(float(np.mean([r.label for r in res] == np.array(oracle))))
    elapsed = time.perf_counter() - start
    ok = min(rates) >= 0.95 and elapsed < 300
    report(capsys, 3, ok, f"agreement {', '.join(f'{r:.3f}' for r in rates)} (>=0.95 each), "
                          f"time={elapsed:.1f}s (<300s)")
    assert ok


def test_criterion_4_figure1(work, report, capsys):
    code, elapsed = run_cli("figure1", "figure1.cfg", work / "fig1")
    probe = read_rows(work / "fig1" / "probe.csv")[0]
    summary = {r["metric"]: r["value"] for r in read_rows(work / "fig1" / "summary.csv")}
    code_free, _ = run_cli("figure1", "figure1_no_island.cfg", work / "fig1_free")
    diff_free = float({r["metric"]: r["value"] for r in read_rows(work / "fig1_free" / "summary.csv")}
                      ["raster_diff_fraction"])
    std_cells, drq_cells = int(summary["island_cells_standard"]), int(summary["island_cells_drq"])
    ok = (code == 0 and probe["standard_label"] == "1" and probe["drq_label"] == "0"
          and drq_cells < std_cells and elapsed < 120 and code_free == 0 and diff_free < 0.05)
    report(capsys, 4, ok, f"probe {probe['standard_label']}->{probe['drq_label']}, island cells "
                          f"{std_cells}->{drq_cells}, no-island diff {diff_free:.4f} (<0.05), "
                          f"time={elapsed:.1f}s (<120s)")
    assert ok


def test_criterion_5_directional_robustness(toy_eval, report, capsys):
    code, elapsed, out = toy_eval
    rows = {r["condition"]: r for r in read_rows(out / "eval.csv")}
    noise, worst = rows["gaussian_noise_0.3"], rows["worst_case"]
    d_noise = float(noise["drq_linf"]) - float(noise["standard"])
    d_worst = float(worst["drq_linf"]) - float(worst["standard"])
    ok = code == 0 and d_noise >= 0 and d_worst >= 0 and max(d_noise, d_worst) >= 1.0 and elapsed < 900
    report(capsys, 5, ok, f"noise {noise['standard']}->{noise['drq_linf']}, worst-case "
                          f"{worst['standard']}->{worst['drq_linf']} on 500 samples, margin "
                          f"{max(d_noise, d_worst):.2f}pp (>=1), time={elapsed:.1f}s (<900s)")
    assert ok


def test_criterion_6_ablation(toy_eval, report, capsys):
    rows = {(r["exploration"], r["quantification"]): r for r in read_rows(toy_eval[2] / "ablation.csv")}
    grad, rand = float(rows["gradient", "gradient"]["worst_case"]), float(rows["random", "random"]["worst_case"])
    ok = rand <= grad
    report(capsys, 6, ok, f"worst-case random/random {rand:.2f} <= gradient/gradient {grad:.2f}")
    assert ok


def test_criterion_7_cosine(toy_eval, report, capsys):
    rows = [r for r in read_rows(toy_eval[2] / "cosine.csv")
            if r["condition"] == "pgd" and r["method"] == "linf"]
    mean, n = float(rows[0]["mean_cosine"]), int(rows[0]["samples"])
    ok = n > 0 and mean < 0
    report(capsys, 7, ok, f"mean cos over {n} PGD samples corrected by DRQ-linf = {mean:.4f} (<0)")
    assert ok


def test_criterion_8_monotone_sweeps(work, report, capsys):
    run_cli("sweep", "toy_images.cfg", work / "sweep", "sweep.parameter=confidence_threshold",
            "sweep.values=0.3, 0.5, 0.7, 0.9, 0.99", "sweep.samples=200")
    run_cli("sweep", "toy_images.cfg", work / "sweep", "sweep.parameter=epsilon",
            "sweep.values=0.05, 0.1, 0.2, 0.3, 0.4, 0.5", "sweep.samples=200")
    eps_p = [float(r["mean_epsilon_p"]) for r in read_rows(work / "sweep" / "sweep_confidence_threshold.csv")]
    last = read_rows(work / "sweep" / "sweep_epsilon.csv")[-1]
    final = [float(last[k]) for k in ("attacked_standard", "attacked_drq_linf", "attacked_drq_l2")]
    ok = all(a <= b for a, b in zip(eps_p, eps_p[1:])) and max(final) <= 1.0
    report(capsys, 8, ok, f"mean eps_p over c: {', '.join(f'{e:.4f}' for e in eps_p)}; "
                          f"attacked accuracy at eps={last['value']}: {final} (<=1%)")
    assert ok


def _tree_bytes(path: Path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_criterion_9_determinism(work, toy_eval, report, capsys):
    same = {}
    runs = [
        ("train", "toy_images.cfg", ()),
        ("eval", "toy_images.cfg", ()),
        ("verify-theory", "theory.cfg", ()),
        ("figure1", "figure1.cfg", ()),
        ("sweep", "toy_images.cfg", ("sweep.parameter=alpha", "sweep.values=0, 0.5, 1", "sweep.samples=100")),
    ]
    for command, config, sets in runs:
        a, b = work / f"det_{command}_a", work / f"det_{command}_b"
        if command == "eval":
            a = toy_eval[2]
        else:
            run_cli(command, config, a, *sets)
        run_cli(command, config, b, *sets)
        same[command] = _tree_bytes(a) == _tree_bytes(b)
    ok = all(same.values())
    report(capsys, 9, ok, "byte-identical reruns: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok
