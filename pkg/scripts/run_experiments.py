"""Run every CLI experiment with the shipped configs into ./out."""

import sys
from pathlib import Path

from drq.cli import main

ROOT = Path(__file__).resolve().parents[1]
CFG = ROOT / "configs"
OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "out"

SWEEPS = {
    "iterations": "1, 5, 10, 20",
    "confidence_threshold": "0.3, 0.5, 0.7, 0.9, 0.99",
    "alpha": "0, 0.25, 0.5, 0.75, 1",
    "epsilon": "0.05, 0.1, 0.2, 0.3, 0.4, 0.5",
}

JOBS = [
    ["verify-theory", "--config", CFG / "theory.cfg", "--out", OUT / "theory"],
    ["figure1", "--config", CFG / "figure1.cfg", "--out", OUT / "figure1"],
    ["figure1", "--config", CFG / "figure1_no_island.cfg", "--out", OUT / "figure1_no_island"],
    ["train", "--config", CFG / "toy_images.cfg", "--out", OUT / "toy_images"],
    ["eval", "--config", CFG / "toy_images.cfg", "--out", OUT / "toy_images"],
] + [
    ["sweep", "--config", CFG / "toy_images.cfg", "--out", OUT / "sweeps",
     "--set", f"sweep.parameter={name}", "--set", f"sweep.values={values}", "--set", "sweep.samples=200"]
    for name, values in SWEEPS.items()
]

if __name__ == "__main__":
    failed = 0
    for job in JOBS:
        args = [str(a) for a in job]
        print("$ drq " + " ".join(args), flush=True)
        code = main(args)
        failed += code != 0
    sys.exit(1 if failed else 0)
