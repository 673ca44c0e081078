"""Node-wise grouped-input predictor with hand-written gradients and Adam.

One predictor models a single target variable as a function of its
candidate parents (one input group per parent: a variable at some lag,
or a contemporaneous variable). The Euclidean norm of each first-layer
column is the edge score for that group. These functions are the
reference semantics; the training engines in ``_kernels`` implement the
same math over stacks of predictors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

GROUP_EPS = 1e-12  # smoothing for the group-norm subgradient

Group = tuple[int, int]  # (lag, variable); lag 0 means instantaneous


@dataclass
class NodePredictor:
    """One-hidden-layer tanh predictor with grouped first-layer columns.

    ``linear=True`` bypasses the hidden layer: identity activation with a
    single pass-through unit (``output_weights`` pinned to 1 and
    ``hidden_bias`` to 0), so the output is a direct linear map of the
    window.
    """

    target: int
    groups: list[Group]
    first_layer: np.ndarray  # [hidden, num_groups]
    hidden_bias: np.ndarray  # [hidden]
    output_weights: np.ndarray  # [hidden]
    output_bias: float = 0.0
    linear: bool = False

    def __post_init__(self):
        self.first_layer = np.asarray(self.first_layer, dtype=float)
        self.hidden_bias = np.asarray(self.hidden_bias, dtype=float)
        self.output_weights = np.asarray(self.output_weights, dtype=float)
        h, g = self.first_layer.shape
        if g != len(self.groups):
            raise ValueError(f"first_layer has {g} columns for {len(self.groups)} groups")
        if self.hidden_bias.shape != (h,) or self.output_weights.shape != (h,):
            raise ValueError("hidden_bias/output_weights must match hidden width")
        if self.linear and h != 1:
            raise ValueError("linear predictor uses a single pass-through unit")

    @property
    def hidden_width(self) -> int:
        return self.first_layer.shape[0]

    @property
    def num_groups(self) -> int:
        return self.first_layer.shape[1]


def init_predictor(target: int, groups: list[Group], hidden: int, rng: Rng,
                   linear: bool = False) -> NodePredictor:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    g = len(groups)
    h = 1 if linear else hidden
    bound1 = 1.0 / np.sqrt(max(g, 1))
    w1 = bound1 * (2.0 * rng.uniforms(h * g).reshape(h, g) - 1.0)
    if linear:
        return NodePredictor(target, groups, w1, np.zeros(1), np.ones(1), 0.0, linear=True)
    bound2 = 1.0 / np.sqrt(h)
    w2 = bound2 * (2.0 * rng.uniforms(h) - 1.0)
    return NodePredictor(target, groups, w1, np.zeros(h), w2, 0.0)


def forward(p: NodePredictor, window: np.ndarray) -> float:
    """Predict the target from one window of parent values."""
    window = np.asarray(window, dtype=float)
    if window.shape != (p.num_groups,):
        raise ValueError(f"window has shape {window.shape}, want ({p.num_groups},)")
    z = p.first_layer @ window + p.hidden_bias
    a = z if p.linear else np.tanh(z)
    return float(p.output_bias + p.output_weights @ a)


def group_scores(p: NodePredictor) -> np.ndarray:
    """Euclidean norm of each first-layer column, ordered as the groups."""
    return np.sqrt((p.first_layer ** 2).sum(axis=0))


def loss_and_grad(p: NodePredictor, windows: np.ndarray, targets: np.ndarray,
                  l1_group: float, group_mask: np.ndarray | None = None
                  ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error plus group-l1 penalty, with exact gradients.

    The group-norm subgradient is smoothed as col / (||col|| + 1e-12).
    ``group_mask`` (0/1 per group) zeroes the gradient of masked groups.
    """
    windows = np.asarray(windows, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = windows.shape[0]
    if n == 0:
        raise ValueError("batch must be nonempty")
    if windows.shape[1] != p.num_groups:
        raise ValueError(f"windows have {windows.shape[1]} columns for {p.num_groups} groups")

    z = windows @ p.first_layer.T + p.hidden_bias
    a = z if p.linear else np.tanh(z)
    pred = a @ p.output_weights + p.output_bias
    resid = pred - targets
    norms = np.sqrt((p.first_layer ** 2).sum(axis=0))
    active = np.ones(p.num_groups) if group_mask is None else np.asarray(group_mask, dtype=float)
    loss = float((resid ** 2).mean() + l1_group * (norms * active).sum())

    dpred = 2.0 * resid / n
    dw2 = a.T @ dpred
    db2 = float(dpred.sum())
    da = np.outer(dpred, p.output_weights)
    dz = da if p.linear else da * (1.0 - a ** 2)
    dw1 = dz.T @ windows
    db1 = dz.sum(axis=0)
    dw1 += l1_group * p.first_layer / (norms + GROUP_EPS)
    dw1 *= active
    if p.linear:
        dw2 = np.zeros_like(dw2)
        db1 = np.zeros_like(db1)
    return loss, {"first_layer": dw1, "hidden_bias": db1,
                  "output_weights": dw2, "output_bias": np.float64(db2)}


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a dict of parameter arrays."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float, **kw) -> "AdamState":
        st = cls(lr=lr, **kw)
        st.first_moment = {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()}
        st.second_moment = {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()}
        return st


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """Standard bias-corrected Adam update, in place."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for key, g in grads.items():
        g = np.asarray(g, dtype=float)
        m = state.first_moment[key]
        v = state.second_moment[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[key] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def predictor_params(p: NodePredictor) -> dict[str, np.ndarray]:
    """View the predictor's trainable arrays as an Adam-ready dict."""
    return {"first_layer": p.first_layer, "hidden_bias": p.hidden_bias,
            "output_weights": p.output_weights,
            "output_bias": np.atleast_1d(np.float64(p.output_bias))}
