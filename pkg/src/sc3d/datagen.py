"""Benchmark dataset generators with known ground truth.

Four systems: a configurable (non)linear structural VAR, the Lorenz96
chaotic system, a two-variable regime-switching VAR (tvsem) whose
dominant causal direction reverses periodically, and an 8-variable
nonlinear system (nc8) with heterogeneous couplings. Every generator
attaches a ground-truth DynamicGraph and is deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng, derive_seed, gaussian_vector
from .types import DynamicGraph, TimeSeriesDataset

# stream tags for derived seeds
_TAG_STRUCT = 1
_TAG_NOISE = 2

SVAR_BURN_IN = 100
STATIONARITY_BOUND = 0.95


class GenerationError(RuntimeError):
    pass


@dataclass
class SvarSpec:
    """Configuration of the synthetic structural VAR generator.

    ``seed`` controls the sampled structure (and, unless ``noise_seed``
    is given, the noise as well); the two streams are derived
    independently so re-noising never changes the attached truth graph.
    """

    dim: int
    lag_order: int = 3
    horizon: int = 200
    trajectories: int = 1
    s_lag: float = 1.0  # expected lagged indegree per (node, lag)
    s_inst: float = 2.0  # expected instantaneous indegree
    weight_low: float = 0.3  # dead zone below this keeps edges detectable
    weight_high: float = 0.8
    noise_sigma: float = 1.0
    nonlinearity: str = "linear"  # or "tanh"
    seed: int = 0
    noise_seed: int | None = None

    def __post_init__(self):
        if self.dim < 2 or self.lag_order < 1:
            raise ValueError("need dim >= 2 and lag_order >= 1")
        if self.horizon < self.lag_order + 2:
            raise ValueError("horizon too short for the lag order")
        if not (0 < self.weight_low <= self.weight_high):
            raise ValueError("weight range must satisfy 0 < low <= high")
        if self.nonlinearity not in ("linear", "tanh"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.s_lag < 0 or self.s_inst < 0 or self.noise_sigma < 0:
            raise ValueError("s_lag, s_inst and noise_sigma must be nonnegative")


def _draw_weight(rng: Rng, lo: float, hi: float) -> float:
    w = lo + (hi - lo) * rng.uniform()
    return w if rng.uniform() < 0.5 else -w


def companion_spectral_radius(lag_matrices: list[np.ndarray]) -> float:
    """Spectral radius of the block-companion matrix of a linear VAR."""
    d = lag_matrices[0].shape[0]
    L = len(lag_matrices)
    comp = np.zeros((d * L, d * L))
    comp[:d] = np.hstack(lag_matrices)
    if L > 1:
        comp[d:, : d * (L - 1)] = np.eye(d * (L - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def sample_svar_structure(spec: SvarSpec) -> DynamicGraph:
    """Sample ground-truth lag matrices and an acyclic instantaneous matrix."""
    d, L = spec.dim, spec.lag_order
    rng = Rng(derive_seed(spec.seed, _TAG_STRUCT))

    lag = [np.zeros((d, d)) for _ in range(L)]
    p_lag = min(1.0, spec.s_lag / d)
    for a in lag:
        for j in range(d):
            for i in range(d):
                if rng.uniform() < p_lag:
                    a[j, i] = _draw_weight(rng, spec.weight_low, spec.weight_high)

    # acyclic B: edges only from earlier to later in a random order
    order = rng.permutation(d)
    pos = np.empty(d, dtype=int)
    pos[order] = np.arange(d)
    B = np.zeros((d, d))
    p_inst = min(1.0, 2.0 * spec.s_inst / (d - 1)) if spec.s_inst > 0 else 0.0
    for j in range(d):
        for i in range(d):
            if i != j and pos[i] < pos[j] and rng.uniform() < p_inst:
                B[j, i] = _draw_weight(rng, spec.weight_low, spec.weight_high)

    # stationarity guard: shrink all lag matrices by a common factor
    for _ in range(100):
        rho = companion_spectral_radius(lag)
        if rho < STATIONARITY_BOUND:
            break
        scale = 0.95 * STATIONARITY_BOUND / rho
        lag = [a * scale for a in lag]
    else:
        raise GenerationError(f"could not rescale lag matrices below spectral radius {STATIONARITY_BOUND}")

    return DynamicGraph(d, L, lag, B, instant_enabled=bool(np.any(B != 0)) or spec.s_inst > 0)


def svar_step(lag_matrices: list[np.ndarray], instant_matrix: np.ndarray,
              history: list[np.ndarray], eps: np.ndarray,
              nonlinearity: str = "linear") -> np.ndarray:
    """One transition X_{t+1} = (I - B)^(-1) (sum_l A_l f(X_{t+1-l}) + eps).

    ``history[l-1]`` holds X_{t+1-l} (most recent first).
    """
    d = instant_matrix.shape[0]
    f = np.tanh if nonlinearity == "tanh" else (lambda v: v)
    z = np.asarray(eps, dtype=float).copy()
    for ell, a in enumerate(lag_matrices, start=1):
        z += a @ f(np.asarray(history[ell - 1], dtype=float))
    return np.linalg.solve(np.eye(d) - instant_matrix, z)


def simulate_svar(spec: SvarSpec) -> TimeSeriesDataset:
    """Simulate X_{t+1} = (I - B)^(-1) (sum_l A_l f(X_{t+1-l}) + eps)."""
    truth = sample_svar_structure(spec)
    d, L, T, N = spec.dim, spec.lag_order, spec.horizon, spec.trajectories
    lag = truth.lag_matrices
    solve = np.linalg.inv(np.eye(d) - truth.instant_matrix)
    f = np.tanh if spec.nonlinearity == "tanh" else (lambda v: v)

    noise_root = spec.noise_seed if spec.noise_seed is not None else spec.seed
    total = L + SVAR_BURN_IN + T
    values = np.empty((N, T, d))
    for traj in range(N):
        rng = Rng(derive_seed(noise_root, _TAG_NOISE, traj))
        x = np.zeros((total, d))
        for t in range(L):
            x[t] = gaussian_vector(rng, d, 0.1)
        for t in range(L, total):
            z = gaussian_vector(rng, d, spec.noise_sigma)
            for ell in range(1, L + 1):
                z += lag[ell - 1] @ f(x[t - ell])
            x[t] = solve @ z
        values[traj] = x[total - T:]
    if not np.all(np.isfinite(values)):
        raise GenerationError("simulation diverged; check the stationarity of the spec")
    return TimeSeriesDataset(values, system_tag="svar", truth=truth,
                             meta={"spec": "svar", "seed": spec.seed})


def lorenz96_rhs(x: np.ndarray, forcing: float) -> np.ndarray:
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + forcing


def lorenz96_truth(d: int) -> DynamicGraph:
    """Lag-1 parents of node i are {i-2, i-1, i, i+1} mod d."""
    a = np.zeros((d, d))
    for i in range(d):
        for p in (i - 2, i - 1, i, i + 1):
            a[i, p % d] = 1.0
    return DynamicGraph(d, 1, [a], np.zeros((d, d)), instant_enabled=False)


def simulate_lorenz96(d: int, T: int, N: int, seed: int,
                      forcing: float = 8.0, dt: float = 0.01,
                      sigma: float = 0.1) -> TimeSeriesDataset:
    """Euler discretization of Lorenz96 with additive Gaussian noise."""
    if d < 4:
        raise ValueError(f"lorenz96 needs d >= 4 for its cyclic coupling, got {d}")
    values = np.empty((N, T, d))
    for traj in range(N):
        rng = Rng(derive_seed(seed, _TAG_NOISE, traj))
        x = forcing + gaussian_vector(rng, d, 0.01)
        values[traj, 0] = x
        for t in range(1, T):
            x = x + dt * lorenz96_rhs(x, forcing) + gaussian_vector(rng, d, sigma)
            values[traj, t] = x
    return TimeSeriesDataset(values, system_tag="lorenz96", truth=lorenz96_truth(d),
                             meta={"forcing": forcing, "dt": dt, "sigma": sigma})


TVSEM_COUPLINGS = (
    (0.8, 0.1),  # regime 0: y -> x dominates
    (0.2, 0.7),  # regime 1: x -> y dominates
)


def tvsem_matrix(regime: int) -> np.ndarray:
    yx, xy = TVSEM_COUPLINGS[regime % 2]
    return np.array([[0.0, yx], [xy, 0.0]])


def simulate_tvsem(T: int, N: int, seed: int, sigma: float = 0.1,
                   period: int = 200) -> TimeSeriesDataset:
    """Two-variable regime-switching VAR; regimes alternate every ``period`` steps."""
    mats = (tvsem_matrix(0), tvsem_matrix(1))
    values = np.empty((N, T, 2))
    for traj in range(N):
        rng = Rng(derive_seed(seed, _TAG_NOISE, traj))
        x = gaussian_vector(rng, 2, sigma)
        values[traj, 0] = x
        for t in range(1, T):
            x = mats[(t // period) % 2] @ x + gaussian_vector(rng, 2, sigma)
            values[traj, t] = x
    boundaries = [b for b in range(period, T, period)]
    truth = DynamicGraph(2, 1, [tvsem_matrix(0)], np.zeros((2, 2)), instant_enabled=False)
    return TimeSeriesDataset(values, system_tag="tvsem", truth=truth,
                             regime_boundaries=boundaries,
                             meta={"period": period, "sigma": sigma})


# --- NC8: 8 variables, lag order 4, heterogeneous nonlinear couplings ---
#
# Committed structure (this table *is* the ground truth):
#   linear self-memory   A_l[i, i] = 0.5 / (l + 1) for every i != 4, l = 1..4
#   linear cross edges   A_2[5, 4] = 0.6/3,  A_3[6, 5] = 0.6/4,  A_4[7, 6] = 0.6/5
#   nonlinear lag-1 couplings (coefficient 0.8 each):
#       x0 <- sin(x7),  x1 <- tanh(x0),  x2 <- softcube(x1),  x3 <- relu(x2)
#   driver               x4_t = sin(2*pi*t / NC8_DRIVER_PERIOD) + noise, no parents
# The driver satisfies x4_t = 2*cos(2*pi/P)*x4_{t-1} - x4_{t-2} exactly in
# its deterministic part, so its own lag-1/lag-2 edges are part of the truth.

NC8_DIM = 8
NC8_LAGS = 4
NC8_SIGMA = 0.1
NC8_CLAMP = 5.0
NC8_DRIVER_PERIOD = 40
NC8_DRIVER_VAR = 4
NC8_SELF_COEF = 0.5
NC8_CROSS_COEF = 0.6
NC8_PHI_COEF = 0.8
NC8_CROSS_EDGES = ((5, 4, 2), (6, 5, 3), (7, 6, 4))  # (target, source, lag)
NC8_PHI_EDGES = ((0, 7, "sin"), (1, 0, "tanh"), (2, 1, "softcube"), (3, 2, "relu"))


def softcube(z):
    return z ** 3 / (1.0 + np.abs(z))


_NC8_FUNCS = {"sin": np.sin, "tanh": np.tanh, "softcube": softcube,
              "relu": lambda z: np.maximum(z, 0.0)}


def nc8_lag_matrices() -> list[np.ndarray]:
    mats = [np.zeros((NC8_DIM, NC8_DIM)) for _ in range(NC8_LAGS)]
    for ell in range(1, NC8_LAGS + 1):
        for i in range(NC8_DIM):
            if i != NC8_DRIVER_VAR:
                mats[ell - 1][i, i] = NC8_SELF_COEF / (ell + 1)
    for j, i, ell in NC8_CROSS_EDGES:
        mats[ell - 1][j, i] = NC8_CROSS_COEF / (ell + 1)
    return mats


def nc8_truth() -> DynamicGraph:
    mats = nc8_lag_matrices()
    for j, i, _kind in NC8_PHI_EDGES:
        mats[0][j, i] = NC8_PHI_COEF
    # the sinusoidal driver is an exact second-order recursion of itself
    omega = 2.0 * math.pi / NC8_DRIVER_PERIOD
    mats[0][NC8_DRIVER_VAR, NC8_DRIVER_VAR] = 2.0 * math.cos(omega)
    mats[1][NC8_DRIVER_VAR, NC8_DRIVER_VAR] = -1.0
    return DynamicGraph(NC8_DIM, NC8_LAGS, mats,
                        np.zeros((NC8_DIM, NC8_DIM)), instant_enabled=False)


def nc8_phi(x_prev: np.ndarray, t: int) -> np.ndarray:
    """Nonlinear couplings evaluated on the previous state, plus the driver."""
    phi = np.zeros(NC8_DIM)
    for j, i, kind in NC8_PHI_EDGES:
        phi[j] = NC8_PHI_COEF * _NC8_FUNCS[kind](x_prev[i])
    phi[NC8_DRIVER_VAR] = math.sin(2.0 * math.pi * t / NC8_DRIVER_PERIOD)
    return phi


def simulate_nc8(T: int, N: int, seed: int) -> TimeSeriesDataset:
    """Clamped nonlinear AR(4) system with a sinusoidal exogenous driver."""
    mats = nc8_lag_matrices()
    values = np.empty((N, T, NC8_DIM))
    for traj in range(N):
        rng = Rng(derive_seed(seed, _TAG_NOISE, traj))
        x = np.zeros((T, NC8_DIM))
        for t in range(T):
            z = gaussian_vector(rng, NC8_DIM, NC8_SIGMA)
            if t >= 1:
                z += nc8_phi(x[t - 1], t)
            for ell in range(1, min(t, NC8_LAGS) + 1):
                z += mats[ell - 1] @ x[t - ell]
            x[t] = np.clip(z, -NC8_CLAMP, NC8_CLAMP)
        values[traj] = x
    return TimeSeriesDataset(values, system_tag="nc8", truth=nc8_truth(),
                             meta={"sigma": NC8_SIGMA, "driver_period": NC8_DRIVER_PERIOD})


def generate(system: str, *, d: int = 0, L: int = 1, T: int = 200, N: int = 1,
             seed: int = 0, **kwargs) -> TimeSeriesDataset:
    """Dispatch to a generator by system name."""
    if system == "svar":
        spec = SvarSpec(dim=d, lag_order=L, horizon=T, trajectories=N, seed=seed, **kwargs)
        return simulate_svar(spec)
    if system == "lorenz96":
        return simulate_lorenz96(d, T, N, seed, **kwargs)
    if system == "tvsem":
        return simulate_tvsem(T, N, seed, **kwargs)
    if system == "nc8":
        return simulate_nc8(T, N, seed)
    raise ValueError(f"unknown system {system!r}")
