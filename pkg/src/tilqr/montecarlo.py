"""Seeded Euler simulation of the controlled state and Monte Carlo costs.

Noise comes from a counter-based generator (Philox 4x64, 10 rounds), so each
path's stream is a pure function of (seed, stream index, step). That makes
batches bit-reproducible across runs, platforms, chunk sizes, and thread
counts, and gives common random numbers across strategies for free: the same
(seed, path) always sees the same increments, whatever gain is applied.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from ._util import readonly
from .errors import ConfigError, NumericError
from .model import LqrParams
from .riccati import GainLabel, GainSchedule

# Philox 4x64 round constants (multipliers and Weyl key increments).
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = 0x9E3779B97F4A7C15
_W1 = 0xBB67AE8584CAA73B
_MASK32 = np.uint64(0xFFFFFFFF)
_MASK64 = 0xFFFFFFFFFFFFFFFF

# Paths are simulated in fixed-size chunks; chunk boundaries are part of no
# contract (results per path depend only on seed and stream index), but a
# fixed size keeps the reduction order identical for any worker count.
_CHUNK = 8192


def _mulhilo(a: np.uint64, b: np.ndarray):
    # full 64x64 -> 128 bit product via 32-bit halves; lo wraps natively
    lo = a * b
    a_hi, a_lo = a >> np.uint64(32), a & _MASK32
    b_hi, b_lo = b >> np.uint64(32), b & _MASK32
    t = a_lo * b_lo
    u = (t >> np.uint64(32)) + a_hi * b_lo
    v = (u & _MASK32) + a_lo * b_hi
    hi = a_hi * b_hi + (u >> np.uint64(32)) + (v >> np.uint64(32))
    return hi, lo


def _philox_block(c0, c1, c2, c3, key0: int, key1: int):
    """Ten Philox rounds on vectors of 4x64 counters under one key."""
    k0, k1 = key0, key1
    for r in range(10):
        if r:
            k0 = (k0 + _W0) & _MASK64
            k1 = (k1 + _W1) & _MASK64
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0 = hi1 ^ c1 ^ np.uint64(k0)
        c1 = lo1
        c2 = hi0 ^ c3 ^ np.uint64(k1)
        c3 = lo0
    return c0, c1, c2, c3


def raw_blocks(seed: int, stream: np.ndarray, block: np.ndarray):
    """Four raw 64-bit words per (stream, block) counter pair.

    Exposed mainly so tests can check the generator against an independent
    implementation word for word.
    """
    c0 = np.asarray(block, dtype=np.uint64)
    c1 = np.asarray(stream, dtype=np.uint64)
    z = np.zeros_like(c0)
    return _philox_block(c0, c1, z, z, seed, 0)


def normal_stream(seed: int, first_stream: int, n_streams: int, n_draws: int) -> np.ndarray:
    """Standard normals, one row per stream, via inverse CDF of (0,1) uniforms.

    Uniforms take the top 53 bits of each word, offset by half a spacing, so
    they stay strictly inside (0, 1) and the inverse CDF stays finite.
    """
    blocks = (n_draws + 3) // 4
    c0 = np.tile(np.arange(blocks, dtype=np.uint64), n_streams)
    c1 = np.repeat(np.arange(first_stream, first_stream + n_streams, dtype=np.uint64), blocks)
    x0, x1, x2, x3 = raw_blocks(seed, c1, c0)
    words = np.stack([x0, x1, x2, x3], axis=-1).reshape(n_streams, 4 * blocks)[:, :n_draws]
    u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u)


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; defaults are toolkit choices, not model content."""

    n_paths: int = 10_000
    n_steps: int = 1_000
    seed: int = 42
    antithetic: bool = False

    def __post_init__(self):
        if self.n_paths < 1:
            raise ConfigError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.antithetic and self.n_paths % 2 != 0:
            raise ConfigError("antithetic mode needs an even n_paths")


@dataclass(frozen=True)
class TrajectoryBatch:
    """Simulated states and applied controls for one feedback law."""

    params: LqrParams
    config: SimConfig
    states: np.ndarray      # n_paths x (n_steps + 1)
    controls: np.ndarray    # n_paths x n_steps
    strategy_label: GainLabel

    def __post_init__(self):
        object.__setattr__(self, "states", readonly(self.states))
        object.__setattr__(self, "controls", readonly(self.controls))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.params.horizon, self.config.n_steps + 1)

    @property
    def valid_mask(self) -> np.ndarray:
        """True for paths that stayed finite throughout."""
        return (np.isfinite(self.states).all(axis=1)
                & np.isfinite(self.controls).all(axis=1))


@dataclass(frozen=True)
class CostEstimate:
    """Monte Carlo cost with its standard error.

    ``n_paths`` counts the independent samples behind the standard error:
    mirrored pairs count once in antithetic mode.
    """

    mean: float
    stderr: float
    n_paths: int


def _gain_on_sim_grid(gain: GainSchedule, n_steps: int):
    """Left-endpoint gains on the simulation grid by nearest-node lookup."""
    n_ode = gain.grid.n_steps
    if n_ode % n_steps != 0 and n_steps % n_ode != 0:
        raise ConfigError(
            f"ODE grid ({n_ode} steps) and simulation grid ({n_steps} steps) "
            "must be refinement-compatible (one a multiple of the other)")
    i = np.arange(n_steps)
    j = (2 * i * n_ode + n_steps) // (2 * n_steps)  # round half up
    return gain.k_state[j], gain.c_offset[j]


def simulate_paths(gain: GainSchedule, params: LqrParams, config: SimConfig,
                   workers: int = 1) -> TrajectoryBatch:
    """Euler scheme ``X_{i+1} = X_i + (a_bar X_i + b_bar a_i) dt + sigma sqrt(dt) Z``.

    The applied control is ``a_i = -k(t_i) X_i - c(t_i)`` with gains sampled
    at the nearest ODE node (grids must be refinement-compatible). Per-path
    noise depends only on (seed, stream index), so output is bit-identical
    for any ``workers`` value.

    Raises
    ------
    ConfigError
        Horizon mismatch or incompatible grids.
    NumericError
        If more than 0.1% of paths go non-finite (explosive gains).
    """
    if abs(gain.grid.horizon - params.horizon) > 1e-12:
        raise ConfigError(
            f"gain horizon {gain.grid.horizon} does not match model horizon {params.horizon}")
    k_sim, c_sim = _gain_on_sim_grid(gain, config.n_steps)
    n_paths, n_steps = config.n_paths, config.n_steps
    dt = params.horizon / n_steps
    sqdt = math.sqrt(dt)
    states = np.empty((n_paths, n_steps + 1))
    controls = np.empty((n_paths, n_steps))

    def run_chunk(lo: int, hi: int):
        m = hi - lo
        if config.antithetic:
            # one stream per mirrored pair; odd members negate it
            base = normal_stream(config.seed, lo // 2, m // 2, n_steps)
            z = np.empty((m, n_steps))
            z[0::2] = base
            z[1::2] = -base
        else:
            z = normal_stream(config.seed, lo, m, n_steps)
        x = np.full(m, params.x0)
        states[lo:hi, 0] = x
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n_steps):
                a = -k_sim[i] * x - c_sim[i]
                controls[lo:hi, i] = a
                x = x + (params.a_bar * x + params.b_bar * a) * dt + params.sigma * sqdt * z[:, i]
                states[lo:hi, i + 1] = x

    # _CHUNK is even, so mirrored pairs never straddle chunk boundaries
    bounds = [(lo, min(lo + _CHUNK, n_paths)) for lo in range(0, n_paths, _CHUNK)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda b: run_chunk(*b), bounds))
    else:
        for b in bounds:
            run_chunk(*b)

    batch = TrajectoryBatch(params=params, config=config, states=states,
                            controls=controls, strategy_label=gain.label)
    n_bad = int(np.sum(~batch.valid_mask))
    if n_bad > 0.001 * n_paths:
        raise NumericError(f"{n_bad} of {n_paths} paths went non-finite")
    return batch


def _path_costs(batch: TrajectoryBatch, params: LqrParams) -> np.ndarray:
    dt = batch.params.horizon / batch.config.n_steps
    run = 0.5 * dt * np.sum(batch.controls ** 2, axis=1)
    miss = batch.states[:, -1] - params.x0
    return run + 0.5 * params.gamma * miss * miss


def _aggregate(costs: np.ndarray, antithetic: bool) -> CostEstimate:
    if antithetic:
        costs = 0.5 * (costs[0::2] + costs[1::2])
    n = costs.size
    mean = float(np.mean(costs))
    stderr = 0.0 if n < 2 else float(np.std(costs, ddof=1) / math.sqrt(n))
    return CostEstimate(mean=mean, stderr=stderr, n_paths=n)


def estimate_cost(batch: TrajectoryBatch, params: LqrParams) -> CostEstimate:
    """Time-zero cost estimate ``sum_i a_i^2 dt / 2 + gamma/2 (X_T - x0)^2``.

    Uses the left-endpoint running-cost rule matching the Euler drift. Paths
    flagged non-finite are excluded (the simulator already capped them at
    0.1%); in antithetic mode a pair with a bad member is dropped whole.
    """
    if batch.config.n_paths == 0 or batch.states.size == 0:
        raise ConfigError("cannot estimate cost from an empty batch")
    costs = _path_costs(batch, params)
    good = batch.valid_mask
    if batch.config.antithetic:
        pair_good = good[0::2] & good[1::2]
        costs = costs.reshape(-1, 2)[pair_good].reshape(-1)
    else:
        costs = costs[good]
    if costs.size == 0:
        raise ConfigError("no finite paths left to average")
    return _aggregate(costs, batch.config.antithetic)


def estimate_cost_streaming(gain: GainSchedule, params: LqrParams, config: SimConfig,
                            workers: int = 1) -> CostEstimate:
    """Cost estimate without retaining trajectories.

    Same estimator as ``simulate_paths`` + ``estimate_cost``, but chunks are
    reduced to per-path costs on the fly, so path counts in the millions fit
    in memory. Reductions run in fixed chunk order regardless of ``workers``.
    """
    k_sim, c_sim = _gain_on_sim_grid(gain, config.n_steps)
    if abs(gain.grid.horizon - params.horizon) > 1e-12:
        raise ConfigError(
            f"gain horizon {gain.grid.horizon} does not match model horizon {params.horizon}")
    n_paths, n_steps = config.n_paths, config.n_steps
    dt = params.horizon / n_steps
    sqdt = math.sqrt(dt)

    def chunk_costs(lo: int, hi: int) -> np.ndarray:
        m = hi - lo
        if config.antithetic:
            base = normal_stream(config.seed, lo // 2, m // 2, n_steps)
            z = np.empty((m, n_steps))
            z[0::2] = base
            z[1::2] = -base
        else:
            z = normal_stream(config.seed, lo, m, n_steps)
        x = np.full(m, params.x0)
        run = np.zeros(m)
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n_steps):
                a = -k_sim[i] * x - c_sim[i]
                run += a * a
                x = x + (params.a_bar * x + params.b_bar * a) * dt + params.sigma * sqdt * z[:, i]
        costs = 0.5 * dt * run + 0.5 * params.gamma * (x - params.x0) ** 2
        if not np.all(np.isfinite(costs)):
            raise NumericError("non-finite path costs in streaming estimate")
        return costs

    bounds = [(lo, min(lo + _CHUNK, n_paths)) for lo in range(0, n_paths, _CHUNK)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: chunk_costs(*b), bounds))
    else:
        parts = [chunk_costs(*b) for b in bounds]
    return _aggregate(np.concatenate(parts), config.antithetic)


@dataclass(frozen=True)
class StrategyComparison:
    """Per-strategy batches under common noise, with mean-path summaries."""

    params: LqrParams
    config: SimConfig
    labels: tuple
    batches: tuple
    times: np.ndarray
    mean_state: np.ndarray       # n_strategies x (n_steps + 1)
    mean_abs_control: np.ndarray  # n_strategies x n_steps

    def __post_init__(self):
        object.__setattr__(self, "times", readonly(self.times))
        object.__setattr__(self, "mean_state", readonly(self.mean_state))
        object.__setattr__(self, "mean_abs_control", readonly(self.mean_abs_control))


def compare_strategies(params: LqrParams, config: SimConfig,
                       strategies, workers: int = 1) -> StrategyComparison:
    """Simulate every strategy on identical noise and average across paths.

    Common random numbers are automatic: the noise stream depends only on
    (seed, stream index), never on the gain. Duplicate labels get an ordinal
    suffix so downstream columns stay distinguishable.
    """
    strategies = list(strategies)
    if len(strategies) < 2:
        raise ConfigError("comparison needs at least two strategies")
    batches = tuple(simulate_paths(g, params, config, workers=workers) for g in strategies)
    labels = []
    for i, g in enumerate(strategies):
        base = g.label.value
        labels.append(base if sum(1 for s in strategies if s.label is g.label) == 1
                      else f"{base}_{i}")
    mean_state = np.stack([b.states[b.valid_mask].mean(axis=0) for b in batches])
    mean_abs = np.stack([np.abs(b.controls[b.valid_mask]).mean(axis=0) for b in batches])
    return StrategyComparison(params=params, config=config, labels=tuple(labels),
                              batches=batches, times=batches[0].times,
                              mean_state=mean_state, mean_abs_control=mean_abs)
