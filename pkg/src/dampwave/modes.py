"""Fourier-mode solves: single modes, fundamental matrices, transform checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .coeffcalc import OVERFLOW_CAP, CoefficientProfile, big_G

DEFAULT_REL_TOL = 1e-10
# step cap h * (b + g xi^2) <= THETA used for fundamental matrices, so the
# fast decaying column is resolved and log det stays accurate
DEFAULT_THETA = 0.02
# the step controller runs at rel_tol ** TOL_POWER (stricter than rel_tol), so
# the global error shrinks slightly faster than the requested tolerance
TOL_POWER = 1.1


class ModeError(RuntimeError):
    pass


class SolverError(ModeError):
    """Integration failed; ``diagnostics`` holds the stiffness state at failure."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class TransformHorizonError(ModeError):
    pass


class NotConvergedError(ModeError):
    pass


def kernel_params(profile: CoefficientProfile) -> np.ndarray:
    return np.array([profile.c, float(profile.code), profile.alpha])


def _check_grid(t_grid) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1:
        raise ValueError("t_grid must be a non-empty 1-d array")
    if t_grid[0] < 0:
        raise ValueError("t_grid must start at t >= 0")
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    return t_grid


def _check_tol(rel_tol: float):
    if not (1e-12 <= rel_tol <= 1e-3):
        raise ValueError(f"rel_tol must lie in [1e-12, 1e-3], got {rel_tol}")


def step_tol(rel_tol: float) -> float:
    """Tolerance handed to the step controller for a requested rel_tol."""
    return rel_tol**TOL_POWER


_STATUS_TEXT = {
    _kernels.STATUS_NONFINITE: "non-finite coefficient evaluation",
    _kernels.STATUS_MAX_STEPS: "maximum number of steps exceeded",
    _kernels.STATUS_STEP_FLOOR: "step size underflow",
}


def _raise_for_status(status: int, b, g, xi, t_grid, stats_row, filled: int):
    if status == _kernels.STATUS_OK:
        return
    t_fail = float(t_grid[max(filled - 1, 0)])
    diag = {
        "xi": float(xi),
        "t_last_output": t_fail,
        "b": float(b.value(t_fail)),
        "g": float(g.value(t_fail)),
        "damping": float(b.value(t_fail) + g.value(t_fail) * xi * xi),
        "steps": int(stats_row[0]),
        "rejected": int(stats_row[1]),
        "floor_hits": int(stats_row[3]),
    }
    raise SolverError(f"{_STATUS_TEXT.get(status, 'solver failure')} after t={t_fail:g} (xi={xi:g})", diag)


@dataclass
class ModeSolution:
    xi: float
    t_grid: np.ndarray
    u_hat: np.ndarray
    ut_hat: np.ndarray
    steps: int
    rejected: int
    max_step: float
    reduced: np.ndarray = field(repr=False)
    floor_hits: int = 0
    energy_residual: float = 0.0
    energy_increase: float = -np.inf
    rel_tol: float = DEFAULT_REL_TOL

    @property
    def energy(self) -> np.ndarray:
        return 0.5 * (self.ut_hat**2 + self.xi**2 * self.u_hat**2)

    @property
    def stats(self) -> dict:
        return {
            "steps": self.steps,
            "rejected": self.rejected,
            "max_step": self.max_step,
            "floor_hits": self.floor_hits,
            "reduced_samples": int(np.count_nonzero(self.reduced)),
        }

    def energy_monotone(self, factor: float = 10.0) -> bool:
        """Sampled energy never grows by more than ``factor`` tolerances."""
        e = self.energy
        if e.size < 2:
            return True
        scale = np.maximum(e[:-1], np.finfo(float).tiny)
        return bool(np.all((e[1:] - e[:-1]) / scale <= factor * self.rel_tol))


@dataclass
class FundamentalMatrix:
    xi: float
    s: float
    t_grid: np.ndarray
    entries: np.ndarray  # (T, 2, 2); columns are (phi_k, d/dt phi_k)
    log_det: np.ndarray  # accumulated from the step propagators
    exact_log_det: np.ndarray  # minus the integral of b + g xi^2 from s
    steps: int = 0
    reduced: bool = False

    @property
    def det(self) -> np.ndarray:
        return np.exp(self.log_det)

    @property
    def det_entrywise(self) -> np.ndarray:
        e = self.entries
        return e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0]

    def liouville_error(self) -> float:
        """Max relative deviation of det E from exp(-int (b + g xi^2))."""
        diff = self.log_det - self.exact_log_det
        if not np.all(np.isfinite(diff)):
            return np.inf
        return float(np.max(np.abs(np.expm1(diff))))


@dataclass
class TransformCheck:
    v_deviation: float
    w_deviation: float
    horizon: float
    requested_horizon: float

    @property
    def max_deviation(self) -> float:
        return max(self.v_deviation, self.w_deviation)


@dataclass
class ModeLimit:
    value: float
    converged: bool
    window: tuple[float, float]
    ratio: float  # |u_t| / |u| at the last sample


def _atol(y0: np.ndarray, xi: float) -> np.ndarray:
    """Tiny absolute floor per column relative to the weighted data norm."""
    w = max(xi, 1.0)
    norms = np.hypot(w * y0[..., 0, :], y0[..., 1, :])
    return 1e-14 * np.maximum(norms, 1e-300)


def solve_modes(b: CoefficientProfile, g: CoefficientProfile, xis, u0, u1, t_grid,
                rel_tol: float = DEFAULT_REL_TOL, backend: str | None = None,
                allow_reduced: bool = True) -> list[ModeSolution]:
    """Solve many modes sharing coefficients and output grid."""
    _check_tol(rel_tol)
    t_grid = _check_grid(t_grid)
    xis = np.atleast_1d(np.asarray(xis, dtype=float))
    if np.any(xis < 0) or not np.all(np.isfinite(xis)):
        raise ValueError("xi must be finite and >= 0")
    u0 = np.broadcast_to(np.asarray(u0, dtype=float), xis.shape)
    u1 = np.broadcast_to(np.asarray(u1, dtype=float), xis.shape)
    y0 = np.stack([u0, u1], axis=1)[:, :, None]
    atol = np.stack([_atol(y0[m], xis[m]) for m in range(xis.size)])
    Y, _, reduced, stats, status = _kernels.integrate_modes(
        0, xis, kernel_params(b), kernel_params(g), y0, t_grid, step_tol(rel_tol), atol,
        track_energy=True, allow_reduced=allow_reduced, backend=backend)
    out = []
    for m, xi in enumerate(xis):
        _raise_for_status(int(status[m]), b, g, xi, t_grid, stats[m], int(stats[m, 6]))
        out.append(ModeSolution(
            xi=float(xi), t_grid=t_grid, u_hat=Y[m, :, 0, 0].copy(), ut_hat=Y[m, :, 1, 0].copy(),
            steps=int(stats[m, 0]), rejected=int(stats[m, 1]), max_step=float(stats[m, 2]),
            reduced=reduced[m].copy(), floor_hits=int(stats[m, 3]),
            energy_residual=float(stats[m, 4]), energy_increase=float(stats[m, 5]), rel_tol=rel_tol))
    return out


def solve_mode(b: CoefficientProfile, g: CoefficientProfile, xi: float, u0: float, u1: float,
               t_grid, rel_tol: float = DEFAULT_REL_TOL, backend: str | None = None,
               allow_reduced: bool = True) -> ModeSolution:
    """Solve u'' + xi^2 u + (b + g xi^2) u' = 0 with u(t0) = u0, u'(t0) = u1."""
    return solve_modes(b, g, [xi], u0, u1, t_grid, rel_tol, backend, allow_reduced)[0]


def damping_integral(b: CoefficientProfile, g: CoefficientProfile, xi, s, t):
    """Integral of b + g xi^2 over [s, t]."""
    return (b.primitive(t) - b.primitive(s)) + xi * xi * (g.primitive(t) - g.primitive(s))


def fundamental_matrices(b: CoefficientProfile, g: CoefficientProfile, xis, s: float, t_grid,
                         rel_tol: float = DEFAULT_REL_TOL, theta: float = DEFAULT_THETA,
                         backend: str | None = None) -> list[FundamentalMatrix]:
    _check_tol(rel_tol)
    t_grid = _check_grid(t_grid)
    if s != t_grid[0]:
        raise ValueError("fundamental matrix base time must equal t_grid[0]")
    xis = np.atleast_1d(np.asarray(xis, dtype=float))
    if np.any(xis < 0):
        raise ValueError("xi must be >= 0")
    if theta > 0:
        # the theta cap forces at least int(b + g xi^2) / theta steps
        need = float(np.max(damping_integral(b, g, xis, s, t_grid[-1]))) / theta
        if not need < _kernels.MAX_STEPS:
            raise SolverError(f"determinant tracking needs about {need:.3g} steps on [{s:g}, {t_grid[-1]:g}]; "
                              f"shorten the window", {"required_steps": need})
    y0 = np.tile(np.eye(2), (xis.size, 1, 1))
    atol = np.stack([_atol(y0[m], xis[m]) for m in range(xis.size)])
    Y, logdet, reduced, stats, status = _kernels.integrate_modes(
        0, xis, kernel_params(b), kernel_params(g), y0, t_grid, step_tol(rel_tol), atol, theta=theta,
        allow_reduced=True, backend=backend)
    out = []
    for m, xi in enumerate(xis):
        _raise_for_status(int(status[m]), b, g, xi, t_grid, stats[m], int(stats[m, 6]))
        exact = -damping_integral(b, g, xi, s, t_grid)
        out.append(FundamentalMatrix(
            xi=float(xi), s=float(s), t_grid=t_grid, entries=Y[m].copy(), log_det=logdet[m].copy(),
            exact_log_det=np.asarray(exact, dtype=float), steps=int(stats[m, 0]),
            reduced=bool(np.any(reduced[m]))))
    return out


def fundamental_matrix(b: CoefficientProfile, g: CoefficientProfile, xi: float, s: float, t_grid,
                       rel_tol: float = DEFAULT_REL_TOL, theta: float = DEFAULT_THETA,
                       backend: str | None = None) -> FundamentalMatrix:
    """E(t, s, xi) from the two canonical solves with data (1, 0) and (0, 1)."""
    return fundamental_matrices(b, g, [xi], s, t_grid, rel_tol, theta, backend)[0]


def _state_deviation(u, ut, u_ref, ut_ref, xi) -> float:
    w = max(xi, 1.0)
    num = np.sqrt((w * (u - u_ref)) ** 2 + (ut - ut_ref) ** 2)
    den = np.sqrt((w * u_ref) ** 2 + ut_ref**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
    return float(np.max(rel))


def check_transforms(b: CoefficientProfile, g: CoefficientProfile, xi: float, u0: float, u1: float,
                     horizon: float, rel_tol: float = DEFAULT_REL_TOL, samples: int = 201,
                     cap: float = OVERFLOW_CAP, backend: str | None = None) -> TransformCheck:
    """Compare the direct mode with the back-transformed v- and w-solutions.

    Deviations are relative in the weighted state norm sqrt(w^2 u^2 + u_t^2),
    w = max(xi, 1), and only cover times where both exponential factors stay
    below ``cap`` in log.
    """
    _check_tol(rel_tol)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    x2 = xi * xi
    t_full = np.linspace(0.0, horizon, samples)
    log_v = x2 * big_G(g, t_full)
    log_w = 0.5 * damping_integral(b, g, xi, 0.0, t_full)
    ok = (np.abs(log_v) <= cap) & (np.abs(log_w) <= cap)
    n_ok = int(np.argmin(ok)) if not np.all(ok) else samples
    if n_ok < 2:
        raise TransformHorizonError(
            f"exponential factors exceed the overflow cap on the whole horizon (xi={xi:g})")
    t_grid = t_full[:n_ok]
    log_v, log_w = log_v[:n_ok], log_w[:n_ok]

    direct = solve_mode(b, g, xi, u0, u1, t_grid, rel_tol, backend=backend, allow_reduced=False)
    bp, gp = kernel_params(b), kernel_params(g)
    g0, b0 = float(g.value(0.0)), float(b.value(0.0))
    y0 = np.array([
        [[u0], [0.5 * g0 * x2 * u0 + u1]],
        [[u0], [(0.5 * b0 + 0.5 * g0 * x2) * u0 + u1]],
    ])
    results = []
    for eq, data in ((1, y0[0]), (2, y0[1])):
        Y, _, _, stats, status = _kernels.integrate_modes(
            eq, np.array([xi]), bp, gp, data[None], t_grid, step_tol(rel_tol), _atol(data[None], xi),
            allow_reduced=False, backend=backend)
        _raise_for_status(int(status[0]), b, g, xi, t_grid, stats[0], int(stats[0, 6]))
        results.append(Y[0, :, :, 0])

    v, vt = results[0][:, 0], results[0][:, 1]
    fac_v = np.exp(-log_v)
    u_from_v = fac_v * v
    ut_from_v = fac_v * (vt - 0.5 * x2 * g.value(t_grid) * v)
    w, wt = results[1][:, 0], results[1][:, 1]
    fac_w = np.exp(-log_w)
    u_from_w = fac_w * w
    ut_from_w = fac_w * (wt - 0.5 * (b.value(t_grid) + x2 * g.value(t_grid)) * w)
    return TransformCheck(
        v_deviation=_state_deviation(u_from_v, ut_from_v, direct.u_hat, direct.ut_hat, xi),
        w_deviation=_state_deviation(u_from_w, ut_from_w, direct.u_hat, direct.ut_hat, xi),
        horizon=float(t_grid[-1]),
        requested_horizon=float(horizon),
    )


def mode_limit(sol: ModeSolution, ratio_tol: float = 1e-8, strict: bool = False) -> ModeLimit:
    """Plateau value of u over the last dyadic window of the solution.

    Converged when |u_t| < ratio_tol |u| at the final sample, or when the mode
    has decayed below ratio_tol of its peak, in which case the limit is 0.
    """
    t = sol.t_grid
    t_end = t[-1]
    t_start = t[0] + 0.5 * (t_end - t[0])
    win = t >= t_start
    u, ut = sol.u_hat, sol.ut_hat
    w = max(sol.xi, 1.0)
    state = np.sqrt((w * u) ** 2 + ut**2)
    peak = float(np.max(state))
    ratio = abs(ut[-1]) / abs(u[-1]) if u[-1] != 0 else np.inf
    if peak > 0 and float(np.max(state[win])) <= ratio_tol * peak:
        res = ModeLimit(0.0, True, (float(t_start), float(t_end)), float(ratio))
    else:
        value = float(np.mean(u[win]))
        res = ModeLimit(value, bool(ratio < ratio_tol), (float(t_start), float(t_end)), float(ratio))
    if strict and not res.converged:
        raise NotConvergedError(f"mode has not settled on [0, {t_end:g}]: |u_t|/|u| = {ratio:.3g}")
    return res
