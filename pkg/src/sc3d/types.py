"""Shared domain types: datasets, dynamic graphs, edge masks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYSTEM_TAGS = ("svar", "lorenz96", "tvsem", "nc8", "external")


@dataclass
class DynamicGraph:
    """Weighted lag matrices A_1..A_L plus an instantaneous matrix B.

    Entry convention used throughout the package: ``[j, i]`` is the weight
    of the edge i -> j (row = target). Self-loops are allowed in lag
    matrices but the instantaneous diagonal is identically zero.
    """

    dim: int
    lag_order: int
    lag_matrices: list[np.ndarray]
    instant_matrix: np.ndarray
    instant_enabled: bool = True

    def __post_init__(self):
        d, L = self.dim, self.lag_order
        if d < 1 or L < 1:
            raise ValueError("dim and lag_order must be positive")
        if len(self.lag_matrices) != L:
            raise ValueError(f"expected {L} lag matrices, got {len(self.lag_matrices)}")
        self.lag_matrices = [np.asarray(a, dtype=float) for a in self.lag_matrices]
        self.instant_matrix = np.asarray(self.instant_matrix, dtype=float)
        for ell, a in enumerate(self.lag_matrices, start=1):
            if a.shape != (d, d):
                raise ValueError(f"lag matrix {ell} has shape {a.shape}, want ({d}, {d})")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"lag matrix {ell} contains non-finite entries")
        if self.instant_matrix.shape != (d, d):
            raise ValueError(f"instant matrix has shape {self.instant_matrix.shape}, want ({d}, {d})")
        if not np.all(np.isfinite(self.instant_matrix)):
            raise ValueError("instant matrix contains non-finite entries")
        if np.any(np.diag(self.instant_matrix) != 0):
            raise ValueError("instant matrix diagonal must be zero")
        if not self.instant_enabled and np.any(self.instant_matrix != 0):
            raise ValueError("instant_enabled is false but instant matrix is nonzero")


@dataclass
class EdgeMasks:
    """Binary admissibility masks for lagged and instantaneous edges."""

    lag_masks: list[np.ndarray]
    instant_mask: np.ndarray

    def __post_init__(self):
        self.lag_masks = [np.asarray(m, dtype=np.int8) for m in self.lag_masks]
        self.instant_mask = np.asarray(self.instant_mask, dtype=np.int8)
        d = self.instant_mask.shape[0]
        if self.instant_mask.shape != (d, d):
            raise ValueError("instant mask must be square")
        for ell, m in enumerate(self.lag_masks, start=1):
            if m.shape != (d, d):
                raise ValueError(f"lag mask {ell} has shape {m.shape}, want ({d}, {d})")
            if not np.isin(m, (0, 1)).all():
                raise ValueError(f"lag mask {ell} must be binary")
        if not np.isin(self.instant_mask, (0, 1)).all():
            raise ValueError("instant mask must be binary")
        if np.any(np.diag(self.instant_mask) != 0):
            raise ValueError("instant mask diagonal must be zero")

    @property
    def dim(self) -> int:
        return self.instant_mask.shape[0]

    @property
    def lag_order(self) -> int:
        return len(self.lag_masks)

    def retained_fractions(self) -> tuple[float, float]:
        """(lagged, instantaneous) fraction of admissible edges kept."""
        d, L = self.dim, self.lag_order
        lag_nnz = sum(int(m.sum()) for m in self.lag_masks)
        inst_nnz = int(self.instant_mask.sum())
        rho_lag = lag_nnz / (d * d * L)
        rho_inst = inst_nnz / (d * (d - 1)) if d > 1 else 0.0
        return rho_lag, rho_inst


def all_ones_masks(dim: int, lag_order: int, instantaneous: bool) -> EdgeMasks:
    """Fully permissive masks (used when preselection is disabled)."""
    lag = [np.ones((dim, dim), dtype=np.int8) for _ in range(lag_order)]
    if instantaneous:
        inst = np.ones((dim, dim), dtype=np.int8)
        np.fill_diagonal(inst, 0)
    else:
        inst = np.zeros((dim, dim), dtype=np.int8)
    return EdgeMasks(lag, inst)


@dataclass
class TimeSeriesDataset:
    """N trajectories x T steps x d variables with optional ground truth."""

    values: np.ndarray  # [trajectory, time, variable]
    system_tag: str = "external"
    truth: DynamicGraph | None = None
    regime_boundaries: list[int] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError(f"values must be 3-d [traj, time, var], got shape {self.values.shape}")
        n, t, d = self.values.shape
        if n < 1 or t < 1 or d < 1:
            raise ValueError("all dataset dimensions must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dataset contains non-finite values")
        if self.system_tag not in SYSTEM_TAGS:
            raise ValueError(f"unknown system tag {self.system_tag!r}")
        if self.truth is not None and self.truth.dim != d:
            raise ValueError(f"truth graph dim {self.truth.dim} != dataset dim {d}")
        if self.regime_boundaries is not None:
            rb = list(self.regime_boundaries)
            if any(b2 <= b1 for b1, b2 in zip(rb, rb[1:])) or any(b >= t for b in rb):
                raise ValueError("regime boundaries must be strictly increasing and < T")
            self.regime_boundaries = rb

    @property
    def num_trajectories(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]
