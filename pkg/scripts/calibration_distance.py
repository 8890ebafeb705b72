"""Mean calibrated vicinity radius of standard vs adversarially trained toy-image models.

Used to pick the fixed epsilon_p for adversarially trained models.
"""

import argparse

import numpy as np

from drq.attacks import fmn_calibrate_batch
from drq.toybench import Architecture, TrainConfig, make_toy_images, train_classifier

parser = argparse.ArgumentParser()
parser.add_argument("--epsilon", type=float, default=0.2)
parser.add_argument("--samples", type=int, default=300)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

train, _ = make_toy_images(8, 4, 3000, args.seed, noise=0.1, max_shift=1).split(0.5)
X = train.features[:args.samples]
print("model,norm,c,mean_epsilon_p,ratio_to_train_epsilon,found")
for mode in ("standard", "adversarial"):
    cfg = TrainConfig(mode, epochs=30, lr=0.003, batch_size=64, epsilon=args.epsilon, box=(0, 1), seed=args.seed)
    net = train_classifier(train, Architecture((64, 64), "relu"), cfg)
    for p in ("linf", "l2"):
        for c in (0.5, 0.9):
            _, eps, found = fmn_calibrate_batch(net, X, c, p, box=(0, 1))
            mean = float(np.mean(eps[found]))
            print(f"{mode},{p},{c},{mean:.4f},{mean / args.epsilon:.3f},{found.mean():.3f}")
