"""Two-barrier solver via double penalization.

Each backward step solves y = a + m_dt*(l - y)^+ - n_dt*(y - u)^+ in closed
form (unique by monotonicity).  The two penalty ladders advance jointly; the
iterated limit (inner lower, outer upper) is collapsed onto one geometric
schedule, which preserves both monotone penetration decays.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bdsde_solver import solve_backward
from .condexp import RegressionConfig
from .model import PenaltySchedule, Scenario, SolutionEnsemble
from .paths import NoisePaths, ObstacleGrid, obstacle_on_grid


def implicit_double_step(a, l_val, u_val, m_dt, n_dt):
    """Solve y = a + m_dt*(l_val - y)^+ - n_dt*(y - u_val)^+; returns
    (y, dK_plus, dK_minus).  At most one side is ever active, so the product
    dK_plus * dK_minus vanishes identically."""
    a = np.asarray(a, dtype=float)
    l_arr = np.asarray(l_val, dtype=float)
    u_arr = np.asarray(u_val, dtype=float)
    if np.any(l_arr >= u_arr):
        raise ValueError("barrier crossing: l_val >= u_val")
    if np.any(np.asarray(m_dt) < 0) or np.any(np.asarray(n_dt) < 0):
        raise ValueError("penalty rates must be >= 0")

    below = a < l_arr
    above = a > u_arr
    y = np.where(below, (a + m_dt * l_arr) / (1.0 + m_dt),
                 np.where(above, (a + n_dt * u_arr) / (1.0 + n_dt), a))
    dk_plus = np.where(below, y - a, 0.0)
    dk_minus = np.where(above, a - y, 0.0)
    if y.ndim == 0:
        return float(y), float(dk_plus), float(dk_minus)
    return y, dk_plus, dk_minus


def _check_double_flags(grids: ObstacleGrid) -> None:
    if grids.ordering_bad is not None and np.any(grids.ordering_bad):
        raise ValueError("barrier crossing: L >= U at sampled interior points")
    msgs = []
    if grids.lower_terminal_bad is not None and np.any(grids.lower_terminal_bad):
        msgs.append(f"L_T <= xi fails on {int(np.count_nonzero(grids.lower_terminal_bad))} paths")
    if grids.upper_terminal_bad is not None and np.any(grids.upper_terminal_bad):
        msgs.append(f"xi <= U_T fails on {int(np.count_nonzero(grids.upper_terminal_bad))} paths")
    if msgs:
        raise ValueError("; ".join(msgs))


@dataclass(frozen=True)
class DoubleLevelStat:
    level_lower: float
    level_upper: float
    penetration_lower: float
    penetration_upper: float
    mean_k_plus_T: float
    mean_k_minus_T: float


@dataclass(frozen=True)
class DoublePenalizationTrace:
    levels: tuple[DoubleLevelStat, ...]
    converged: bool


def _double_penetrations(sol: SolutionEnsemble, grids: ObstacleGrid) -> tuple[float, float]:
    lower_short = np.maximum(grids.lower - sol.Y, 0.0)
    upper_over = np.maximum(sol.Y - grids.upper, 0.0)
    return (
        float(np.mean(np.max(lower_short, axis=1) ** 2)),
        float(np.mean(np.max(upper_over, axis=1) ** 2)),
    )


def _solve_double_level(s, p, cfg, picard_iters, grids, m_level, n_level) -> SolutionEnsemble:
    from .reflect_one import OBSTACLE_BASIS_DEGREE, _obstacle_columns

    m_dt = m_level * s.grid.dt
    n_dt = n_level * s.grid.dt

    def reflector(i, a):
        return implicit_double_step(a, grids.lower[:, i], grids.upper[:, i], m_dt, n_dt)

    def extra_columns(i):
        return (
            _obstacle_columns(s.obstacles.lower, grids.lower, p.W_state, i, OBSTACLE_BASIS_DEGREE)
            + _obstacle_columns(s.obstacles.upper, grids.upper, p.W_state, i, OBSTACLE_BASIS_DEGREE)
        )

    return solve_backward(
        s, p, cfg, picard_iters, reflector, scheme="double",
        grids=grids, penalty_lower=m_level, penalty_upper=n_level,
        extra_columns=extra_columns,
    )


def solve_double(
    s: Scenario,
    p: NoisePaths,
    cfg: RegressionConfig | None = None,
    picard_iters: int = 2,
    sched_m: PenaltySchedule | None = None,
    sched_n: PenaltySchedule | None = None,
) -> tuple[SolutionEnsemble, DoublePenalizationTrace]:
    """Advance the lower (m) and upper (n) penalty ladders jointly; a shorter
    ladder clamps at its last level while the longer one keeps growing."""
    if not (s.obstacles.has_lower and s.obstacles.has_upper):
        raise ValueError("configuration error: double reflection needs both barriers")
    cfg = cfg or RegressionConfig()
    sched_m = sched_m or PenaltySchedule.geometric(s.grid.dt)
    sched_n = sched_n or sched_m
    grids = obstacle_on_grid(s, p)
    _check_double_flags(grids)

    m_levels = sched_m.active_levels()
    n_levels = sched_n.active_levels()
    count = max(len(m_levels), len(n_levels))

    stats: list[DoubleLevelStat] = []
    sol = None
    converged = False
    for k in range(count):
        m_level = m_levels[min(k, len(m_levels) - 1)]
        n_level = n_levels[min(k, len(n_levels) - 1)]
        sol = _solve_double_level(s, p, cfg, picard_iters, grids, m_level, n_level)
        pen_lower, pen_upper = _double_penetrations(sol, grids)
        stats.append(DoubleLevelStat(
            level_lower=m_level, level_upper=n_level,
            penetration_lower=pen_lower, penetration_upper=pen_upper,
            mean_k_plus_T=float(sol.K_plus[:, -1].mean()),
            mean_k_minus_T=float(sol.K_minus[:, -1].mean()),
        ))
        if pen_lower <= sched_m.penetration_tol and pen_upper <= sched_n.penetration_tol:
            converged = True
            break

    sol = replace(sol, meta=replace(sol.meta, converged=converged))
    return sol, DoublePenalizationTrace(levels=tuple(stats), converged=converged)


def double_skorohod_residuals(
    sol: SolutionEnsemble, lower: np.ndarray, upper: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-path flat-off-the-barrier sums for both reflection processes:
    sum (Y - L) dK_plus and sum (U - Y) dK_minus."""
    dk_plus = np.diff(sol.K_plus, axis=1)
    dk_minus = np.diff(sol.K_minus, axis=1)
    lower_res = np.sum((sol.Y[:, :-1] - lower[:, :-1]) * dk_plus, axis=1)
    upper_res = np.sum((upper[:, :-1] - sol.Y[:, :-1]) * dk_minus, axis=1)
    return lower_res, upper_res
