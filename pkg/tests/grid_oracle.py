"""Exhaustive grid DRQ for two-class 2-D networks (test oracle).

Independent of the attack machinery: every extremum is a brute-force
search over a lattice of pitch eps / 200.
"""

import numpy as np

from drq.network import forward


class GridField:
    """Logit margin z1 - z0 tabulated on a lattice covering ``window`` plus a halo."""

    def __init__(self, net, window, reach, pitch):
        lo, hi = window[0] - reach - 2 * pitch, window[1] + reach + 2 * pitch
        self.pitch = pitch
        self.origin = lo
        self.axis = lo + pitch * np.arange(int(np.ceil((hi - lo) / pitch)) + 1)
        n = len(self.axis)
        margin = np.empty((n, n))
        for r in range(n):  # row r: first coordinate fixed
            pts = np.column_stack([np.full(n, self.axis[r]), self.axis])
            z = forward(net, pts)
            margin[r] = z[:, 1] - z[:, 0]
        self.margin = margin

    def block(self, center, radius, norm):
        """Lattice indices, margins and coordinates inside the ball."""
        k0 = np.searchsorted(self.axis, center - radius - 1e-12)
        k1 = np.searchsorted(self.axis, center + radius + 1e-12, side="right")
        m = self.margin[k0[0]:k1[0], k0[1]:k1[1]]
        gx = self.axis[k0[0]:k1[0]][:, None] - center[0]
        gy = self.axis[k0[1]:k1[1]][None, :] - center[1]
        if norm == "l2":
            mask = gx * gx + gy * gy <= radius * radius * (1 + 1e-12)
        else:
            mask = np.ones(m.shape, dtype=bool)
        return m, mask, k0

    def point(self, k0, ij):
        return np.array([self.axis[k0[0] + ij[0]], self.axis[k0[1] + ij[1]]])


def _conf(margin, cls):
    # softmax over two logits: f1 = sigmoid(z1 - z0)
    f1 = 1.0 / (1.0 + np.exp(-margin))
    return f1 if cls == 1 else 1.0 - f1


def grid_drq_label(field: GridField, x, eps, alpha, norm):
    """Label from exhaustive exploration and quantification on the lattice."""
    x = np.asarray(x, dtype=np.float64)
    robust = {}
    for cls in (0, 1):
        m, mask, k0 = field.block(x, eps, norm)
        label = (m > 0).astype(int)  # ties (m == 0) go to class 0
        ok = mask & (label == cls)
        if not ok.any():
            continue
        score = np.where(ok, _conf(m, cls), -np.inf)
        ij = np.unravel_index(np.argmax(score), score.shape)
        x_tilde = field.point(k0, ij)
        mq, maskq, _ = field.block(x_tilde, alpha * eps, norm)
        robust[cls] = float(np.min(np.where(maskq, _conf(mq, cls), np.inf)))
    return max(sorted(robust), key=lambda c: (robust[c], -c)), robust
