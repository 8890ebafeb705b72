"""Command-line entry point: ``drq {train,eval,verify-theory,figure1,sweep}``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, config_from_mapping, load_config, parse_config_text
from .network import save_network
from .theory import reports_to_csv, theory_sweep
from .toybench import TrainingDivergedError, write_pgm

EXIT_OK, EXIT_ASSERTION, EXIT_ERROR = 0, 1, 2


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


def cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    data = ex.build_data(cfg)
    net = ex.train_model(cfg, data)
    path = out / "model.txt"
    save_network(net, path)
    train_acc, test_acc = ex.train_report(net, data)
    print(f"wrote {path}")
    print(f"train_accuracy={ex.pct(train_acc)} test_accuracy={ex.pct(test_acc)}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, out: Path) -> int:
    data = ex.build_data(cfg)
    net = ex.get_model(cfg, data)
    result = ex.evaluate(cfg, net, data)
    _write(out / "eval.csv", ex.to_csv(ex.EVAL_COLUMNS, result.table))
    if result.ablation is not None:
        _write(out / "ablation.csv", ex.to_csv(ex.ABLATION_COLUMNS, result.ablation))
    if result.cosine is not None:
        _write(out / "cosine.csv", ex.to_csv(ex.COSINE_COLUMNS, result.cosine))
    for row in result.table:
        print(",".join(row))
    return EXIT_OK


def cmd_verify_theory(cfg: ExperimentConfig, out: Path) -> int:
    t = cfg.theory
    reports = theory_sweep(t.n_random, cfg.seed, t.u0, t.negate_first)
    _write(out / "theory.csv", reports_to_csv(reports))
    failed = [row for rep in reports for row in rep.rows() if row[-1] != "1"]
    checks = sum(len(rep.rows()) for rep in reports)
    print(f"reports={len(reports)} checks={checks} violations={len(failed)}")
    for row in failed:
        print("violation: " + ",".join(row), file=sys.stderr)
    return EXIT_ASSERTION if failed else EXIT_OK


def cmd_figure1(cfg: ExperimentConfig, out: Path) -> int:
    data = ex.build_data(cfg)
    net = ex.get_model(cfg, data)
    fig = ex.figure1(cfg, net, data)
    classes = net.class_count
    write_pgm(out / "standard.pgm", fig.standard, classes)
    write_pgm(out / "drq.pgm", fig.drq, classes)
    header = ["x0", "x1", "standard_label", "drq_label", "epsilon_p"] + [f"r_{i}" for i in range(classes)]
    robust = [f"{fig.robust_confidence[i]:.6f}" if i in fig.robust_confidence else "" for i in range(classes)]
    row = [f"{fig.probe[0]:.6f}", f"{fig.probe[1]:.6f}", str(fig.standard_label), str(fig.drq_label),
           f"{fig.epsilon_p:.6f}", *robust]
    _write(out / "probe.csv", ex.to_csv(header, [row]))
    summary = [["island_cells_standard", str(fig.island_standard)],
               ["island_cells_drq", str(fig.island_drq)],
               ["raster_diff_fraction", f"{fig.diff_fraction:.6f}"]]
    _write(out / "summary.csv", ex.to_csv(["metric", "value"], summary))
    print(f"probe standard={fig.standard_label} drq={fig.drq_label} "
          f"island cells {fig.island_standard} -> {fig.island_drq}")
    if fig.flip_required and not fig.flipped:
        print("probe label did not flip under DRQ", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    data = ex.build_data(cfg)
    net = ex.get_model(cfg, data)
    rows = ex.sweep(cfg, net, data)
    _write(out / f"sweep_{cfg.sweep.parameter}.csv", ex.to_csv(ex.SWEEP_COLUMNS, rows))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "verify-theory": cmd_verify_theory,
    "figure1": cmd_figure1,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drq", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--out", help="output directory (overrides config 'out')")
    parser.add_argument("--seed", type=int, help="overrides config 'seed'")
    parser.add_argument("--workers", type=int, help="process pool size for per-sample work")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a single config key (repeatable)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.set:
        cfg = config_from_mapping(parse_config_text("\n".join(args.set)), cfg)
    changes = {}
    if args.out is not None:
        changes["out"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        changes["workers"] = args.workers
    return replace(cfg, **changes)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
