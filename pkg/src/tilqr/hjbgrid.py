"""Explicit finite-difference solver for the coupled value system.

Backward in time, the equilibrium value field and the parameter-indexed cost
field advance together: each step first reads the parameter-coupling
derivatives of the indexed field on the diagonal, optimizes the control
through the corrected Hamiltonian, then updates the value field and every
parameter line of the indexed field with that control. Two modes share the
stepping core: a single backward sweep (coupling read from the slice just
computed) and a Picard fixed-point iteration (coupling frozen from the
previous iterate, repeated to a tolerance).

The scheme is explicit, so a diffusion stability bound on the time step is
enforced up front. Boundaries close with quadratic extrapolation, which is
exact for the quadratic fields of the linear-quadratic benchmark.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._util import first_bad_index, readonly
from .errors import ConfigError, NumericError, PicardError
from .model import HamiltonianInputs, LqrParams, ModelSpec, extended_hamiltonian
from .riccati import GainLabel, GainSchedule, TimeGrid


@dataclass(frozen=True)
class GridSpec2:
    """Space-time grid for the coupled solve.

    The parameter grid defaults to the state grid; diagonal sampling and gain
    extraction require them to coincide exactly.
    """

    n_t: int
    n_x: int
    x_lo: float
    x_hi: float
    horizon: float
    n_y: Optional[int] = None
    y_lo: Optional[float] = None
    y_hi: Optional[float] = None

    def __post_init__(self):
        if self.n_y is None:
            object.__setattr__(self, "n_y", self.n_x)
        if self.y_lo is None:
            object.__setattr__(self, "y_lo", self.x_lo)
        if self.y_hi is None:
            object.__setattr__(self, "y_hi", self.x_hi)
        if self.n_t < 1:
            raise ConfigError(f"n_t must be >= 1, got {self.n_t}")
        if self.n_x < 4 or self.n_y < 4:
            raise ConfigError("need at least 4 space nodes in each direction")
        if not self.x_lo < self.x_hi:
            raise ConfigError(f"x grid needs x_lo < x_hi, got [{self.x_lo}, {self.x_hi}]")
        if not self.y_lo < self.y_hi:
            raise ConfigError(f"y grid needs y_lo < y_hi, got [{self.y_lo}, {self.y_hi}]")
        if self.horizon <= 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_x + 1)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_lo, self.y_hi, self.n_y + 1)

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.n_x

    @property
    def dy(self) -> float:
        return (self.y_hi - self.y_lo) / self.n_y

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @property
    def aligned(self) -> bool:
        return (self.n_y == self.n_x and self.y_lo == self.x_lo
                and self.y_hi == self.x_hi)


@dataclass(frozen=True)
class PicardWindow:
    """Distance trace of one converged fixed-point window.

    ``k_lo``/``k_hi`` are time-slice indices (the window owns slices
    ``k_lo .. k_hi - 1``; slice ``k_hi`` is its fixed terminal data) and
    ``distances`` holds the sup-norm distance between successive iterates,
    one entry per pass.
    """

    k_lo: int
    k_hi: int
    distances: tuple


@dataclass(frozen=True)
class SchemeReport:
    """Bookkeeping of one solve: mode, stability margin, iteration trace."""

    mode: str
    dt: float
    dx: float
    sigma_max: float
    stability_ratio: float   # sigma_max^2 dt / dx^2, < 1 by the CFL check
    iterations: int
    trace: tuple = ()        # PicardWindow entries, in order of execution


@dataclass(frozen=True)
class GridSolution:
    """Value field, parameter-indexed field, and control field on the grid."""

    grid: GridSpec2
    v: np.ndarray        # (n_t+1) x (n_x+1)
    j: np.ndarray        # (n_t+1) x (n_x+1) x (n_y+1)
    alpha: np.ndarray    # (n_t+1) x (n_x+1)
    report: SchemeReport

    def __post_init__(self):
        for name in ("v", "j", "alpha"):
            object.__setattr__(self, name, readonly(getattr(self, name)))


def _extrapolate_edges(arr: np.ndarray):
    # quadratic extrapolation in the first axis: second difference constant
    arr[0] = 3.0 * arr[1] - 3.0 * arr[2] + arr[3]
    arr[-1] = 3.0 * arr[-2] - 3.0 * arr[-3] + arr[-4]


def _check_cfl(model: ModelSpec, grid: GridSpec2) -> tuple:
    # sample the volatility over the grid to bound the diffusion coefficient
    ts = grid.horizon * np.linspace(0.0, 1.0, min(grid.n_t, 32) + 1)
    xs = grid.xs
    sigma_max = 0.0
    for t in ts:
        sigma_max = max(sigma_max, float(np.max(np.asarray(model.vol(t, xs)))))
    if sigma_max <= 0 or not np.isfinite(sigma_max):
        raise ConfigError("model volatility must be positive and finite on the grid")
    dt_max = grid.dx ** 2 / (1.05 * sigma_max ** 2)
    if grid.dt > dt_max:
        n_min = int(np.ceil(grid.horizon / dt_max))
        raise ConfigError(
            f"explicit scheme unstable: dt = {grid.dt:.6g} exceeds the admissible "
            f"{dt_max:.6g}; use n_t >= {n_min}")
    return sigma_max, sigma_max ** 2 * grid.dt / grid.dx ** 2


def _diag_fields(jslice: np.ndarray, dx: float, dy: float, one_sided: bool):
    """Parameter-coupling derivatives on the diagonal at interior state nodes."""
    n_x = jslice.shape[0] - 1
    i = np.arange(1, n_x)
    d_y = (jslice[i, i + 1] - jslice[i, i - 1]) / (2.0 * dy)
    d_yy = (jslice[i, i + 1] - 2.0 * jslice[i, i] + jslice[i, i - 1]) / dy ** 2
    d_xy = (jslice[i + 1, i + 1] - jslice[i + 1, i - 1]
            - jslice[i - 1, i + 1] + jslice[i - 1, i - 1]) / (4.0 * dx * dy)
    if one_sided:
        # test-only alternative: second-order forward differences in the
        # parameter direction where the stencil fits, centered elsewhere
        ok = i <= n_x - 3
        s = i[ok]
        fwd = lambda r: (-3.0 * jslice[r, s] + 4.0 * jslice[r, s + 1] - jslice[r, s + 2]) / (2.0 * dy)
        d_y[ok] = fwd(s)
        d_yy[ok] = (2.0 * jslice[s, s] - 5.0 * jslice[s, s + 1]
                    + 4.0 * jslice[s, s + 2] - jslice[s, s + 3]) / dy ** 2
        d_xy[ok] = (fwd(s + 1) - fwd(s - 1)) / (2.0 * dx)
    return d_y, d_yy, d_xy


def _slice_control(model: ModelSpec, t: float, grid: GridSpec2,
                   v_slice: np.ndarray, coupling_slice: np.ndarray,
                   drop_adjustment: bool, one_sided: bool):
    """Optimize the control on one time slice and return the update pieces.

    Returns (value_rate, a_interior, a_full): the corrected Hamiltonian value
    at interior nodes, the optimizing control there, and the control extended
    to the boundary by extrapolation.
    """
    xs = grid.xs
    xi = xs[1:-1]
    dx = grid.dx
    v_x = (v_slice[2:] - v_slice[:-2]) / (2.0 * dx)
    sigma = np.broadcast_to(np.asarray(model.vol(t, xi), dtype=float), xi.shape)
    d_y, d_yy, d_xy = _diag_fields(coupling_slice, dx, grid.dy, one_sided)
    if drop_adjustment:
        d_y = d_yy = d_xy = np.zeros_like(xi)
    value_rate, a_int = extended_hamiltonian(model, HamiltonianInputs(
        t=t, x=xi, z=sigma * v_x, grad_param=d_y, hess_param=d_yy,
        mixed=sigma * d_xy))
    value_rate = np.asarray(value_rate, dtype=float)
    a_int = np.broadcast_to(np.asarray(a_int, dtype=float), xi.shape)
    a_full = np.empty(xs.size)
    a_full[1:-1] = a_int
    _extrapolate_edges(a_full)
    return value_rate, a_int, a_full


def _advance_slice(model: ModelSpec, grid: GridSpec2, t_next: float,
                   v_next: np.ndarray, j_next: np.ndarray,
                   value_rate: np.ndarray, a_int: np.ndarray):
    """One explicit backward step of both fields given the slice control."""
    xs, ys = grid.xs, grid.ys
    xi = xs[1:-1]
    dt, dx = grid.dt, grid.dx
    sigma = np.broadcast_to(np.asarray(model.vol(t_next, xi), dtype=float), xi.shape)

    v_xx = (v_next[2:] - 2.0 * v_next[1:-1] + v_next[:-2]) / dx ** 2
    v_k = np.empty_like(v_next)
    v_k[1:-1] = v_next[1:-1] + dt * (value_rate + 0.5 * sigma ** 2 * v_xx)
    _extrapolate_edges(v_k)

    mu = np.asarray(model.drift(t_next, xi, a_int), dtype=float)
    f = np.asarray(model.running_cost(t_next, ys[None, :], xi[:, None],
                                      a_int[:, None]), dtype=float)
    f = np.broadcast_to(f, (xi.size, ys.size))
    j_x = (j_next[2:, :] - j_next[:-2, :]) / (2.0 * dx)
    j_xx = (j_next[2:, :] - 2.0 * j_next[1:-1, :] + j_next[:-2, :]) / dx ** 2
    j_k = np.empty_like(j_next)
    j_k[1:-1, :] = j_next[1:-1, :] + dt * (
        f + mu[:, None] * j_x + 0.5 * (sigma ** 2)[:, None] * j_xx)
    _extrapolate_edges(j_k)
    return v_k, j_k


def _terminal_fields(model: ModelSpec, grid: GridSpec2):
    xs, ys = grid.xs, grid.ys
    v_T = np.asarray(model.terminal_cost(xs, xs), dtype=float)
    j_T = np.asarray(model.terminal_cost(ys[None, :], xs[:, None]), dtype=float)
    j_T = np.broadcast_to(j_T, (xs.size, ys.size)).copy()
    return np.broadcast_to(v_T, xs.shape).copy(), j_T


def _check_finite(name: str, arr: np.ndarray, k: int):
    if not np.all(np.isfinite(arr)):
        where = first_bad_index(arr)
        raise NumericError(f"{name} blew up at time slice {k}, node {where}")


def _require_aligned(grid: GridSpec2):
    if not grid.aligned:
        raise ConfigError(
            "diagonal sampling needs identical x and y grids "
            f"(got x: [{grid.x_lo}, {grid.x_hi}] n={grid.n_x}, "
            f"y: [{grid.y_lo}, {grid.y_hi}] n={grid.n_y})")


def solve_extended_hjb_sweep(model: ModelSpec, grid: GridSpec2,
                             _drop_adjustment: bool = False,
                             _one_sided_diagonal: bool = False) -> GridSolution:
    """Single backward pass of the coupled system.

    Per step, the coupling derivatives come from the slice just computed, so
    the pass is self-contained. The two underscore switches exist for
    validation experiments only: dropping the parameter-coupling terms must
    visibly break agreement with the closed form, and one-sided diagonal
    sampling probes the stencil choice.

    Raises
    ------
    ConfigError
        Misaligned grids or a time step above the diffusion stability bound.
    NumericError
        Non-finite field values, with the offending slice and node named.
    """
    _require_aligned(grid)
    sigma_max, ratio = _check_cfl(model, grid)
    n_t = grid.n_t
    nodes = grid.horizon * np.linspace(0.0, 1.0, n_t + 1)

    v = np.empty((n_t + 1, grid.n_x + 1))
    j = np.empty((n_t + 1, grid.n_x + 1, grid.n_y + 1))
    alpha = np.empty_like(v)

    # a blow-up surfaces through the finiteness check, not as a warning
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        v[n_t], j[n_t] = _terminal_fields(model, grid)
        for k in range(n_t - 1, -1, -1):
            t1 = nodes[k + 1]
            rate, a_int, a_full = _slice_control(
                model, t1, grid, v[k + 1], j[k + 1],
                _drop_adjustment, _one_sided_diagonal)
            alpha[k + 1] = a_full
            v[k], j[k] = _advance_slice(model, grid, t1, v[k + 1], j[k + 1],
                                        rate, a_int)
            _check_finite("value field", v[k], k)
            _check_finite("indexed field", j[k], k)
        _, _, a0 = _slice_control(model, nodes[0], grid, v[0], j[0],
                                  _drop_adjustment, _one_sided_diagonal)
    alpha[0] = a0
    report = SchemeReport(mode="sweep", dt=grid.dt, dx=grid.dx,
                          sigma_max=sigma_max, stability_ratio=ratio, iterations=1)
    return GridSolution(grid=grid, v=v, j=j, alpha=alpha, report=report)


def _window_pass(model: ModelSpec, grid: GridSpec2, nodes: np.ndarray,
                 lo: int, hi: int, v_hi: np.ndarray, j_hi: np.ndarray,
                 j_prev: np.ndarray, drop_adjustment: bool, one_sided: bool):
    """One application of the decoupled solve map on slices ``lo .. hi``.

    The coupling derivatives at each slice are frozen from ``j_prev`` (the
    previous iterate's indexed field on the window, window-local indexing);
    the value field and control re-optimize against them, and the indexed
    field advances with this pass's control. Slice ``hi`` is the window's
    fixed terminal data ``(v_hi, j_hi)``.
    """
    m = hi - lo
    v = np.empty((m + 1, grid.n_x + 1))
    j = np.empty((m + 1,) + j_hi.shape)
    alpha = np.empty_like(v)
    v[m], j[m] = v_hi, j_hi
    for k in range(m - 1, -1, -1):
        t1 = nodes[lo + k + 1]
        rate, a_int, a_full = _slice_control(
            model, t1, grid, v[k + 1], j_prev[k + 1], drop_adjustment, one_sided)
        alpha[k + 1] = a_full
        v[k], j[k] = _advance_slice(model, grid, t1, v[k + 1], j[k + 1], rate, a_int)
        _check_finite("value field", v[k], lo + k)
        _check_finite("indexed field", j[k], lo + k)
    # control on the window's lowest slice, for the iterate distance only;
    # the assembled solution recomputes it from converged fields
    _, _, a0 = _slice_control(model, nodes[lo], grid, v[0], j_prev[0],
                              drop_adjustment, one_sided)
    alpha[0] = a0
    return v, j, alpha


def _iterate_window(model: ModelSpec, grid: GridSpec2, nodes: np.ndarray,
                    lo: int, hi: int, v_hi: np.ndarray, j_hi: np.ndarray,
                    tol: float, max_iter: int,
                    drop_adjustment: bool, one_sided: bool):
    """Fixed-point iteration on one window, from its terminal data extended
    constantly. Returns ``(status, v, j, alpha, distances)`` where status is
    ``"ok"`` (converged), ``"grow"`` (distances stopped decreasing: the map
    does not contract at this window length), ``"blowup"`` (a pass lost
    finiteness), or ``"maxiter"``.
    """
    m = hi - lo
    # expected transient blow-ups abort the window; silence their warnings
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        v_prev = np.tile(v_hi, (m + 1, 1))
        j_prev = np.tile(j_hi, (m + 1, 1, 1))
        _, _, a_hi = _slice_control(model, nodes[hi], grid, v_hi, j_hi,
                                    drop_adjustment, one_sided)
        alpha_prev = np.tile(a_hi, (m + 1, 1))

        distances = []
        for _ in range(max_iter):
            try:
                v, j, alpha = _window_pass(model, grid, nodes, lo, hi,
                                           v_hi, j_hi, j_prev,
                                           drop_adjustment, one_sided)
            except NumericError:
                return "blowup", None, None, None, distances
            dist = max(float(np.max(np.abs(v - v_prev))),
                       float(np.max(np.abs(j - j_prev))),
                       float(np.max(np.abs(alpha - alpha_prev))))
            distances.append(dist)
            v_prev, j_prev, alpha_prev = v, j, alpha
            if dist <= tol:
                return "ok", v, j, alpha, distances
            # contraction check from the second distance on; the first pass
            # only measures how far the constant extension sits from one solve
            if len(distances) >= 3 and distances[-1] >= distances[-2]:
                return "grow", None, None, None, distances
    return "maxiter", None, None, None, distances


def solve_extended_hjb_picard(model: ModelSpec, grid: GridSpec2,
                              tol: float = 1e-9, max_iter: int = 200,
                              _drop_adjustment: bool = False,
                              _one_sided_diagonal: bool = False) -> GridSolution:
    """Fixed-point iteration of the decoupled solve map.

    The map freezes the parameter-coupling derivatives from the previous
    iterate, re-optimizes the control against the current value field, and
    advances both fields; its fixed point is exactly the sweep solution. It
    is a contraction only over sufficiently short time intervals (backward
    error growth outpaces it on long ones), so the solver proceeds in
    windows from the terminal end: it first attempts the whole horizon,
    starting from the terminal data extended constantly in time, and
    whenever the iterate distances stop decreasing or a pass loses
    finiteness it bisects the window and resumes from the terminal side,
    each window starting from its own terminal slice extended constantly.

    A time-consistent model has no coupling, so the second pass reproduces
    the first bitwise and the iteration stops at two with a single
    full-horizon window. The report's trace holds one ``PicardWindow`` per
    converged window; within each, distances after the first decrease
    strictly.

    Raises
    ------
    PicardError
        If a single-step window still fails to converge; carries the full
        distance trace for diagnosis.
    """
    _require_aligned(grid)
    if tol <= 0 or max_iter < 2:
        raise ConfigError(f"need tol > 0 and max_iter >= 2, got {tol}, {max_iter}")
    sigma_max, ratio = _check_cfl(model, grid)
    n_t = grid.n_t
    nodes = grid.horizon * np.linspace(0.0, 1.0, n_t + 1)

    v = np.empty((n_t + 1, grid.n_x + 1))
    j = np.empty((n_t + 1, grid.n_x + 1, grid.n_y + 1))
    alpha = np.empty_like(v)
    v[n_t], j[n_t] = _terminal_fields(model, grid)

    trace = []
    pending = [(0, n_t)]
    while pending:
        lo, hi = pending.pop()
        status, v_w, j_w, a_w, distances = _iterate_window(
            model, grid, nodes, lo, hi, v[hi], j[hi], tol, max_iter,
            _drop_adjustment, _one_sided_diagonal)
        if status == "ok":
            trace.append(PicardWindow(k_lo=lo, k_hi=hi, distances=tuple(distances)))
            v[lo:hi] = v_w[:-1]
            j[lo:hi] = j_w[:-1]
            alpha[lo + 1:hi + 1] = a_w[1:]
            continue
        if hi - lo < 2:
            trace.append(PicardWindow(k_lo=lo, k_hi=hi, distances=tuple(distances)))
            raise PicardError(
                f"no convergence on slices [{lo}, {hi}] ({status} after "
                f"{len(distances)} passes, last distances "
                f"{[f'{d:.3g}' for d in distances[-3:]]})",
                trace=tuple(trace))
        mid = (lo + hi) // 2
        pending.append((lo, mid))
        pending.append((mid, hi))

    # converged everywhere: initial-slice control from the final fields, as
    # in the sweep
    _, _, a0 = _slice_control(model, nodes[0], grid, v[0], j[0],
                              _drop_adjustment, _one_sided_diagonal)
    alpha[0] = a0
    report = SchemeReport(mode="picard", dt=grid.dt, dx=grid.dx,
                          sigma_max=sigma_max, stability_ratio=ratio,
                          iterations=sum(len(w.distances) for w in trace),
                          trace=tuple(trace))
    return GridSolution(grid=grid, v=v, j=j, alpha=alpha, report=report)


def extract_gain(sol: GridSolution, params: LqrParams) -> GainSchedule:
    """Least-squares affine fit of the control field, slice by slice.

    The fit runs over the central half of the state grid, away from the
    extrapolated boundary; ``k_state = -slope`` and ``c_offset = -intercept``
    per slice, with the sup-norm fit residual recorded. A residual above
    ``1e-3 * (1 + max|control|)`` triggers a non-linearity warning: the model
    under the solve was probably not affine in the state.
    """
    grid = sol.grid
    n_x = grid.n_x
    lo, hi = n_x // 4, n_x - n_x // 4
    xc = grid.xs[lo:hi + 1]
    ac = sol.alpha[:, lo:hi + 1]
    x_bar = xc.mean()
    var = float(np.sum((xc - x_bar) ** 2))
    a_bar = ac.mean(axis=1)
    slope = (ac - a_bar[:, None]) @ (xc - x_bar) / var
    intercept = a_bar - slope * x_bar
    fit = slope[:, None] * xc[None, :] + intercept[:, None]
    residual = np.max(np.abs(ac - fit), axis=1)
    thresh = 1e-3 * (1.0 + float(np.max(np.abs(ac))))
    if float(np.max(residual)) > thresh:
        warnings.warn(
            f"control field is not affine in the state (fit residual "
            f"{float(np.max(residual)):.3g} > {thresh:.3g})")
    return GainSchedule(grid=TimeGrid(n_steps=grid.n_t, horizon=grid.horizon),
                        k_state=-slope, c_offset=-intercept,
                        label=GainLabel.CUSTOM, fit_residual=residual)


def diagonal_residual(sol: GridSolution) -> float:
    """Sup distance between the value field and the indexed field's diagonal.

    Restricted to the central half of the state grid, over every time slice.
    The terminal slice contributes exactly zero (shared terminal data); the
    rest shrinks under refinement if the two fields discretize the same
    diagonal identity.
    """
    _require_aligned(sol.grid)
    n_x = sol.grid.n_x
    lo, hi = n_x // 4, n_x - n_x // 4
    i = np.arange(lo, hi + 1)
    diag = sol.j[:, i, i]
    return float(np.max(np.abs(sol.v[:, i] - diag)))
