"""Training kernels: one Adam step for a stack of node predictors.

The whole refinement pipeline spends its time in this batch step, so it
comes in two interchangeable implementations:

* a numba ``@njit`` kernel (default when numba imports), and
* a vectorized pure-numpy fallback.

Selection: env var ``SC3D_BACKEND=numba|numpy`` (numpy is also used
automatically when numba is unavailable). Both paths apply the same
update; they differ only in floating-point accumulation order.

Layout: parameters are stacked over nodes with group-major first layers,
``W1[node, group, hidden]``. Masked groups keep zero weights and receive
zero gradients. ``l1_coef[node, group]`` carries the per-group shrinkage
coefficient (the group-lasso weight, plus any penalty terms chained
through the group norms).
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

GROUP_EPS = 1e-12


def _env_backend() -> str:
    choice = os.environ.get("SC3D_BACKEND", "").strip().lower()
    if choice in ("numba", "numpy"):
        if choice == "numba" and numba is None:
            raise RuntimeError("SC3D_BACKEND=numba but numba is not importable")
        return choice
    return "numba" if numba is not None else "numpy"


_ACTIVE = _env_backend()


def active_backend() -> str:
    return _ACTIVE


def set_backend(name: str) -> None:
    global _ACTIVE
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("numba backend requested but numba is not importable")
    _ACTIVE = name


def batch_step_numpy(W1, b1, w2, b2, mW1, vW1, mb1, vb1, mw2, vw2, mb2, vb2,
                     Xb, XbT, Yb, mask, l1_coef,
                     lr, beta1, beta2, eps, step, linear):
    """Vectorized batch step over all nodes; returns summed per-node MSE."""
    nb = Xb.shape[0]
    z = np.matmul(Xb, W1)  # [d, nb, H]
    z += b1[:, None, :]
    a = z if linear else np.tanh(z)
    pred = np.matmul(a, w2[:, :, None])[..., 0] + b2[:, None]  # [d, nb]
    resid = pred - Yb.T
    nll = float((resid ** 2).mean(axis=1).sum())

    dpred = (2.0 / nb) * resid
    dw2 = np.matmul(a.transpose(0, 2, 1), dpred[:, :, None])[..., 0]
    db2 = dpred.sum(axis=1)
    dz = dpred[:, :, None] * w2[:, None, :]
    if not linear:
        dz *= 1.0 - a ** 2
    dW1 = np.matmul(XbT[None, :, :], dz)  # [d, G, H]
    db1 = dz.sum(axis=1)
    norms = np.sqrt((W1 ** 2).sum(axis=2))
    dW1 += (l1_coef / (norms + GROUP_EPS))[:, :, None] * W1
    dW1 *= mask[:, :, None]
    if linear:
        dw2[:] = 0.0
        db1[:] = 0.0

    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for p, g, m, v in ((W1, dW1, mW1, vW1), (b1, db1, mb1, vb1),
                       (w2, dw2, mw2, vw2), (b2, db2, mb2, vb2)):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return nll


def _batch_step_loops(W1, b1, w2, b2, mW1, vW1, mb1, vb1, mw2, vw2, mb2, vb2,
                      Xb, XbT, Yb, mask, l1_coef,
                      lr, beta1, beta2, eps, step, linear):
    d = W1.shape[0]
    G = W1.shape[1]
    H = W1.shape[2]
    nb = Xb.shape[0]
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    inv_nb = 2.0 / nb
    nll = 0.0
    for j in range(d):
        a = np.dot(Xb, W1[j])  # [nb, H]
        for s in range(nb):
            for h in range(H):
                a[s, h] += b1[j, h]
        if not linear:
            for s in range(nb):
                for h in range(H):
                    a[s, h] = np.tanh(a[s, h])
        dz = np.empty((nb, H))
        db2 = 0.0
        node_nll = 0.0
        dw2 = np.zeros(H)
        for s in range(nb):
            pred = b2[j]
            for h in range(H):
                pred += w2[j, h] * a[s, h]
            r = pred - Yb[s, j]
            node_nll += r * r
            dp = inv_nb * r
            db2 += dp
            for h in range(H):
                dw2[h] += dp * a[s, h]
                if linear:
                    dz[s, h] = dp * w2[j, h]
                else:
                    dz[s, h] = dp * w2[j, h] * (1.0 - a[s, h] * a[s, h])
        nll += node_nll / nb
        dW1 = np.dot(XbT, dz)  # [G, H]
        db1 = np.zeros(H)
        for s in range(nb):
            for h in range(H):
                db1[h] += dz[s, h]
        for g in range(G):
            sq = 0.0
            for h in range(H):
                sq += W1[j, g, h] * W1[j, g, h]
            coef = l1_coef[j, g] / (np.sqrt(sq) + GROUP_EPS)
            mg = mask[j, g]
            for h in range(H):
                grad = (dW1[g, h] + coef * W1[j, g, h]) * mg
                m = beta1 * mW1[j, g, h] + (1.0 - beta1) * grad
                v = beta2 * vW1[j, g, h] + (1.0 - beta2) * grad * grad
                mW1[j, g, h] = m
                vW1[j, g, h] = v
                W1[j, g, h] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        for h in range(H):
            gb = 0.0 if linear else db1[h]
            m = beta1 * mb1[j, h] + (1.0 - beta1) * gb
            v = beta2 * vb1[j, h] + (1.0 - beta2) * gb * gb
            mb1[j, h] = m
            vb1[j, h] = v
            b1[j, h] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
            gw = 0.0 if linear else dw2[h]
            m = beta1 * mw2[j, h] + (1.0 - beta1) * gw
            v = beta2 * vw2[j, h] + (1.0 - beta2) * gw * gw
            mw2[j, h] = m
            vw2[j, h] = v
            w2[j, h] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        m = beta1 * mb2[j] + (1.0 - beta1) * db2
        v = beta2 * vb2[j] + (1.0 - beta2) * db2 * db2
        mb2[j] = m
        vb2[j] = v
        b2[j] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return nll


if numba is not None:
    batch_step_numba = numba.njit(cache=True, fastmath=False)(_batch_step_loops)
else:  # pragma: no cover
    batch_step_numba = None


class EnsembleTrainer:
    """Adam training loop state for a stack of node predictors."""

    def __init__(self, W1, b1, w2, b2, mask, lr,
                 beta1=0.9, beta2=0.999, eps=1e-8,
                 linear=False, backend=None):
        self.W1 = np.ascontiguousarray(W1, dtype=float)
        self.b1 = np.ascontiguousarray(b1, dtype=float)
        self.w2 = np.ascontiguousarray(w2, dtype=float)
        self.b2 = np.ascontiguousarray(b2, dtype=float)
        self.mask = np.ascontiguousarray(mask, dtype=float)
        self.W1 *= self.mask[:, :, None]  # masked groups start and stay at zero
        self.mW1 = np.zeros_like(self.W1)
        self.vW1 = np.zeros_like(self.W1)
        self.mb1 = np.zeros_like(self.b1)
        self.vb1 = np.zeros_like(self.b1)
        self.mw2 = np.zeros_like(self.w2)
        self.vw2 = np.zeros_like(self.w2)
        self.mb2 = np.zeros_like(self.b2)
        self.vb2 = np.zeros_like(self.b2)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.linear = bool(linear)
        self.step_count = 0
        self.backend = backend or active_backend()
        if self.backend == "numba" and batch_step_numba is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        self._fn = batch_step_numba if self.backend == "numba" else batch_step_numpy

    def step(self, Xb: np.ndarray, Yb: np.ndarray, l1_coef: np.ndarray) -> float:
        """One minibatch Adam step; returns the summed per-node batch MSE."""
        self.step_count += 1
        Xb = np.ascontiguousarray(Xb)
        XbT = np.ascontiguousarray(Xb.T)
        Yb = np.ascontiguousarray(Yb)
        l1_coef = np.ascontiguousarray(l1_coef)
        return float(self._fn(
            self.W1, self.b1, self.w2, self.b2,
            self.mW1, self.vW1, self.mb1, self.vb1,
            self.mw2, self.vw2, self.mb2, self.vb2,
            Xb, XbT, Yb, self.mask, l1_coef,
            self.lr, self.beta1, self.beta2, self.eps,
            self.step_count, self.linear))

    def group_norms(self) -> np.ndarray:
        """Per-node, per-group first-layer column norms, [d, G]."""
        return np.sqrt((self.W1 ** 2).sum(axis=2))
