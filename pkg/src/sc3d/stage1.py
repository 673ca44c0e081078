"""Stage 1: node-wise temporal preselection.

Fits one grouped predictor per node on a sliding window of lagged (and
optionally contemporaneous) parents under a group-l1 penalty, reads edge
scores off the first-layer group norms, and thresholds them into binary
admissibility masks for stage 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import EnsembleTrainer
from .predictor import Group, NodePredictor, init_predictor
from .rng import Rng, derive_seed
from .types import EdgeMasks, TimeSeriesDataset

_TAG_INIT = 20
_TAG_PERM = 21


class StageError(RuntimeError):
    """Raised when a training stage diverges or cannot run."""


@dataclass
class Stage1Config:
    epochs: int = 200
    lambda1: float = 0.15
    lr: float = 3e-3
    batch_size: int = 64
    hidden: int = 32
    instantaneous: bool = True
    rule: str = "relative"  # or "quantile"
    threshold: float = 0.05  # tau_rel for relative, q for quantile
    linear_predictor: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be >= 0")
        if self.rule == "relative":
            if not 0 <= self.threshold <= 1:
                raise ValueError("relative threshold must be in [0, 1]")
        elif self.rule == "quantile":
            if not 0 < self.threshold <= 1:
                raise ValueError("quantile must be in (0, 1]")
        else:
            raise ValueError(f"unknown threshold rule {self.rule!r}")


@dataclass
class ScoreTable:
    """Nonnegative group scores: lag_scores[l-1][j, i] and instant_scores[j, i]."""

    lag_scores: np.ndarray  # [L, d, d]
    instant_scores: np.ndarray  # [d, d], zero diagonal

    def to_dict(self) -> dict:
        return {"lag": self.lag_scores.tolist(), "instant": self.instant_scores.tolist()}

    def row_scores(self, j: int) -> np.ndarray:
        """All group scores of target j, lag blocks then instantaneous."""
        return np.concatenate([self.lag_scores[:, j, :].ravel(), self.instant_scores[j]])


@dataclass
class Stage1Result:
    masks: EdgeMasks
    scores: ScoreTable
    predictors: list[NodePredictor]
    losses: list[float] = field(default_factory=list)


def standardize(ds: TimeSeriesDataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-variable z-scoring over all trajectories and times.

    Returns (standardized values, mean, std); constant variables keep
    std 1 so the transform stays finite. Both stages reuse this same
    transform, keeping group scores comparable across variables.
    """
    flat = ds.values.reshape(-1, ds.dim)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (ds.values - mean) / std, mean, std


def design_matrix(values: np.ndarray, L: int, instantaneous: bool
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Shared design over targets: X [n, d*L (+d)], Y [n, d].

    Column layout: lag blocks first (lag 1 ... lag L, d variables each,
    column (l-1)*d + i holding X_{t+1-l}^i), then an instantaneous block
    of all d current-slice variables. Per-node self-exclusion is applied
    by masking column d*L + j for target j. Pairs are emitted for
    t in [L, T-2] of each trajectory: n = N*(T-L-1).
    """
    N, T, d = values.shape
    if T <= L + 1:
        raise StageError(f"need horizon T > L+1, got T={T} with L={L}")
    rows = T - L - 1
    G = d * L + (d if instantaneous else 0)
    X = np.empty((N * rows, G))
    Y = np.empty((N * rows, d))
    for traj in range(N):
        sl = slice(traj * rows, (traj + 1) * rows)
        # targets X_{t+1} for t = L .. T-2
        Y[sl] = values[traj, L + 1:T]
        for ell in range(1, L + 1):
            X[sl, (ell - 1) * d:ell * d] = values[traj, L + 1 - ell:T - ell]
        if instantaneous:
            X[sl, d * L:] = values[traj, L + 1:T]
    return X, Y


def node_groups(d: int, L: int, instantaneous: bool, target: int) -> list[Group]:
    """Candidate-parent identifiers for one target, self excluded."""
    groups: list[Group] = [(ell, i) for ell in range(1, L + 1) for i in range(d)]
    if instantaneous:
        groups += [(0, i) for i in range(d) if i != target]
    return groups


def build_design(ds: TimeSeriesDataset, L: int, instantaneous: bool
                 ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-node training pairs: [(windows, targets)] with self excluded."""
    X, Y = design_matrix(ds.values, L, instantaneous)
    d = ds.dim
    out = []
    for j in range(d):
        if instantaneous:
            keep = [c for c in range(X.shape[1]) if c != d * L + j]
            out.append((X[:, keep], Y[:, j]))
        else:
            out.append((X.copy(), Y[:, j]))
    return out


def _padded_mask(d: int, L: int, instantaneous: bool) -> np.ndarray:
    G = d * L + (d if instantaneous else 0)
    mask = np.ones((d, G))
    if instantaneous:
        for j in range(d):
            mask[j, d * L + j] = 0.0
    return mask


def _init_stack(d: int, G: int, hidden: int, seed: int, linear: bool,
                tag: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    H = 1 if linear else hidden
    W1 = np.empty((d, G, H))
    b1 = np.zeros((d, H))
    w2 = np.empty((d, H))
    b2 = np.zeros(d)
    bound1 = 1.0 / np.sqrt(G)
    bound2 = 1.0 / np.sqrt(H)
    for j in range(d):
        rng = Rng(derive_seed(seed, tag, j))
        W1[j] = bound1 * (2.0 * rng.uniforms(G * H).reshape(G, H) - 1.0)
        if linear:
            w2[j] = 1.0
        else:
            w2[j] = bound2 * (2.0 * rng.uniforms(H) - 1.0)
    return W1, b1, w2, b2


def _train_ensemble(X: np.ndarray, Y: np.ndarray, trainer: EnsembleTrainer,
                    l1_coef: np.ndarray, epochs: int, batch_size: int,
                    perm_rng: Rng, stage: str) -> list[float]:
    n = X.shape[0]
    losses = []
    for epoch in range(epochs):
        perm = perm_rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            total += trainer.step(X[idx], Y[idx], l1_coef) * len(idx)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            bad = [j for j in range(trainer.W1.shape[0])
                   if not np.all(np.isfinite(trainer.W1[j]))]
            raise StageError(f"{stage}: loss diverged at epoch {epoch}"
                             f" (nodes {bad or 'unknown'})")
        losses.append(epoch_loss)
    return losses


def scores_from_norms(norms: np.ndarray, d: int, L: int, instantaneous: bool,
                      mask: np.ndarray) -> ScoreTable:
    """Rearrange [d, G] group norms into lag and instantaneous score matrices."""
    masked = norms * mask
    lag = np.empty((L, d, d))
    for ell in range(L):
        lag[ell] = masked[:, ell * d:(ell + 1) * d]
    inst = masked[:, d * L:].copy() if instantaneous else np.zeros((d, d))
    np.fill_diagonal(inst, 0.0)
    return ScoreTable(lag, inst)


def threshold_masks(scores: ScoreTable, rule: str = "relative",
                    threshold: float = 0.05) -> EdgeMasks:
    """Binary masks from scores: per-row relative cutoff or global quantile."""
    L, d, _ = scores.lag_scores.shape
    lag_masks = np.zeros((L, d, d), dtype=np.int8)
    inst_mask = np.zeros((d, d), dtype=np.int8)
    has_inst = bool(scores.instant_scores.any())

    if rule == "relative":
        for j in range(d):
            row = scores.row_scores(j)
            rowmax = row.max()
            if rowmax <= 0:
                continue
            cut = threshold * rowmax
            lag_masks[:, j, :] = scores.lag_scores[:, j, :] >= cut
            inst_mask[j] = scores.instant_scores[j] >= cut
    elif rule == "quantile":
        entries = [(scores.lag_scores[ell, j, i], 0, ell, j, i)
                   for ell in range(L) for j in range(d) for i in range(d)]
        if has_inst:
            entries += [(scores.instant_scores[j, i], 1, 0, j, i)
                        for j in range(d) for i in range(d) if i != j]
        entries.sort(key=lambda e: (-e[0], e[1], e[2], e[3], e[4]))
        k = int(round(threshold * len(entries)))
        for value, kind, ell, j, i in entries[:k]:
            if value <= 0:
                break
            if kind == 0:
                lag_masks[ell, j, i] = 1
            else:
                inst_mask[j, i] = 1
    else:
        raise ValueError(f"unknown threshold rule {rule!r}")

    np.fill_diagonal(inst_mask, 0)
    return EdgeMasks(list(lag_masks), inst_mask)


def fit_node(windows: np.ndarray, targets: np.ndarray, config: Stage1Config,
             target: int = 0, groups: list[Group] | None = None
             ) -> tuple[NodePredictor, np.ndarray]:
    """Fit one node's predictor; returns it with its per-group scores."""
    windows = np.asarray(windows, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if windows.shape[0] == 0:
        raise StageError("fit_node needs a nonempty set of pairs")
    G = windows.shape[1]
    if groups is None:
        groups = [(1, i) for i in range(G)]
    rng = Rng(derive_seed(config.seed, _TAG_INIT, target))
    p = init_predictor(target, groups, config.hidden, rng, linear=config.linear_predictor)
    trainer = EnsembleTrainer(
        p.first_layer.T[None], p.hidden_bias[None], p.output_weights[None],
        np.array([p.output_bias]), np.ones((1, G)), lr=config.lr,
        linear=config.linear_predictor)
    perm_rng = Rng(derive_seed(config.seed, _TAG_PERM, target))
    _train_ensemble(windows, targets[:, None], trainer, np.full((1, G), config.lambda1),
                    config.epochs, config.batch_size, perm_rng, f"stage1 node {target}")
    fitted = NodePredictor(target, groups, trainer.W1[0].T.copy(), trainer.b1[0].copy(),
                           trainer.w2[0].copy(), float(trainer.b2[0]),
                           linear=config.linear_predictor)
    return fitted, trainer.group_norms()[0]


def run_stage1(ds: TimeSeriesDataset, config: Stage1Config,
               lag_order: int) -> Stage1Result:
    """Screen candidate parents for every node and threshold into masks."""
    d = ds.dim
    L = lag_order
    values, _, _ = standardize(ds)
    X, Y = design_matrix(values, L, config.instantaneous)
    G = X.shape[1]
    mask = _padded_mask(d, L, config.instantaneous)
    W1, b1, w2, b2 = _init_stack(d, G, config.hidden, config.seed,
                                 config.linear_predictor, _TAG_INIT)
    trainer = EnsembleTrainer(W1, b1, w2, b2, mask, lr=config.lr,
                              linear=config.linear_predictor)
    perm_rng = Rng(derive_seed(config.seed, _TAG_PERM))
    l1_coef = np.full((d, G), config.lambda1)
    losses = _train_ensemble(X, Y, trainer, l1_coef, config.epochs,
                             config.batch_size, perm_rng, "stage1")

    scores = scores_from_norms(trainer.group_norms(), d, L, config.instantaneous, mask)
    masks = threshold_masks(scores, config.rule, config.threshold)
    if not config.instantaneous:
        masks = EdgeMasks(masks.lag_masks, np.zeros((d, d), dtype=np.int8))

    predictors = []
    for j in range(d):
        groups = node_groups(d, L, config.instantaneous, j)
        cols = list(range(d * L))
        if config.instantaneous:
            cols += [d * L + i for i in range(d) if i != j]
        predictors.append(NodePredictor(
            j, groups, trainer.W1[j][cols].T.copy(), trainer.b1[j].copy(),
            trainer.w2[j].copy(), float(trainer.b2[j]),
            linear=config.linear_predictor))
    return Stage1Result(masks, scores, predictors, losses)
