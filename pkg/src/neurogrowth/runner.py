"""Case orchestration: init, drive/step loop, domain expansion, batches.

A case runs the controller and the solver until the terminal growth stage
is reached (all neurons), the iteration budget is spent, or the step goes
unstable past its retry budget. The collocation domain expands whenever
the cell approaches a boundary, preserving interior field values exactly
and rebuilding the operators.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import FrameRecord
from .driver import GrowthController
from .model import (ControlFields, InstabilityError, ModelParams, SimState,
                    initialize_state, step)
from .profiles import MorphometricProfile
from .splines import (CollocationOperators, Field, SplineSpace2D,
                      assemble_collocation_operators, collocation_matrix)

__all__ = ["SimConfig", "LogRow", "CaseResult", "CaseFailure",
           "run_case", "expand_domain", "run_batch", "place_neurons"]

STOP_DIV6 = "div6_reached"
STOP_MAX_ITER = "max_iter"
STOP_INSTABILITY = "instability"
STOP_EXPANSION_CAP = "expansion_cap"


@dataclass(frozen=True)
class SimConfig:
    grid: tuple[int, int] = (60, 60)
    centers: tuple[tuple[float, float], ...] | None = None
    n_neurons: int = 1
    seed: int = 0
    params: ModelParams = field(default_factory=ModelParams)
    profile_path: str | None = None
    max_iter: int = 500
    snapshot_cadence: int | None = None     # default: ~60 snapshots per run
    controller_cadence: int = 1
    expansion_margin: int = 10
    expansion_pad: int = 10
    max_grid: int = 1000
    s_um: float = 1.0                       # micrometers per grid unit

    def __post_init__(self):
        m = self.expansion_margin
        r0 = self.params.r0
        if min(self.grid) < 2 * (r0 + m):
            raise ValueError(f"grid must be at least {2 * (r0 + m):.0f} per side "
                             f"for r0={r0} and margin={m}")
        if self.centers is None and not 1 <= self.n_neurons:
            raise ValueError("n_neurons must be >= 1")

    @property
    def effective_snapshot_cadence(self) -> int:
        if self.snapshot_cadence is not None:
            return max(1, self.snapshot_cadence)
        return max(1, round(self.max_iter / 60))

    def load_profile(self) -> MorphometricProfile:
        if self.profile_path is None:
            return MorphometricProfile.default()
        return MorphometricProfile.load(self.profile_path)


@dataclass
class LogRow:
    iteration: int
    l_total: float
    div: float
    n_tips: int
    dt: float

    def format(self) -> str:
        return (f"iter={self.iteration} l_total={self.l_total:.3f} "
                f"div={self.div:g} n_tips={self.n_tips} dt={self.dt:g}")


@dataclass
class CaseResult:
    config: SimConfig
    final_state: SimState
    snapshots: list[FrameRecord]
    div_trajectory: list[float]
    log: list[LogRow]
    runtime: float
    stop_reason: str
    flags: list[str] = field(default_factory=list)


@dataclass
class CaseFailure:
    config: SimConfig
    error: str


def place_neurons(n: int, grid: tuple[int, int], r0: float,
                  rng: np.random.Generator, max_tries: int = 2000) -> np.ndarray:
    """Rejection-sample n seed centers: pairwise distance >= 4*r0, boundary
    margin 2*r0."""
    lo0, hi0 = 2 * r0, grid[0] - 1 - 2 * r0
    lo1, hi1 = 2 * r0, grid[1] - 1 - 2 * r0
    if hi0 <= lo0 or hi1 <= lo1:
        raise ValueError(f"grid {grid} too small to place neurons with margin {2 * r0}")
    centers: list[np.ndarray] = []
    for _ in range(max_tries):
        cand = np.array([rng.uniform(lo0, hi0), rng.uniform(lo1, hi1)])
        if all(np.linalg.norm(cand - c) >= 4 * r0 for c in centers):
            centers.append(cand)
            if len(centers) == n:
                return np.array(centers)
    raise ValueError(f"could not place {n} neurons on grid {grid} "
                     f"(pairwise distance 4*r0={4 * r0:g}); use a larger grid")


def _expansion_sides(mask: np.ndarray, margin: int) -> tuple[bool, bool, bool, bool]:
    return (bool(mask[:margin, :].any()), bool(mask[-margin:, :].any()),
            bool(mask[:, :margin].any()), bool(mask[:, -margin:].any()))


def _evaluate_on(space_old: SplineSpace2D, coeffs: np.ndarray,
                 new_u: np.ndarray, new_v: np.ndarray) -> np.ndarray:
    eu = collocation_matrix(space_old.ku, new_u, 0)
    ev = collocation_matrix(space_old.kv, new_v, 0)
    return eu.dot(ev.dot(coeffs.T).T)


def expand_domain(state: SimState, ops: CollocationOperators,
                  params: ModelParams, rng: np.random.Generator,
                  margin: int = 10, pad: int = 10, max_grid: int = 1000,
                  ) -> tuple[SimState, CollocationOperators, tuple[int, int]]:
    """Grow every side the cell is near by `pad` control cells.

    phi, T, c_tub and phi0 are continued with zeros, theta with fresh
    uniform draws from the case rng; interior values carry over exactly
    (the old spline is re-interpolated at the coinciding interior points).
    The tubulin source keeps its original normalization. Returns the new
    state, rebuilt operators and the (row, col) index offset of old pixels
    inside the new grid. A no-op returns the inputs unchanged with offset
    (0, 0).
    """
    mask = state.phi.values >= 0.5
    lo_u, hi_u, lo_v, hi_v = _expansion_sides(mask, margin)
    if not (lo_u or hi_u or lo_v or hi_v):
        return state, ops, (0, 0)

    old_space = ops.space
    nu, nv = ops.shape
    new_nu = nu + pad * (lo_u + hi_u)
    new_nv = nv + pad * (lo_v + hi_v)
    if max(new_nu, new_nv) > max_grid:
        raise InstabilityError(
            f"expansion to {new_nu}x{new_nv} exceeds the {max_grid} hard cap")

    new_space = SplineSpace2D.uniform(new_nu, new_nv)
    new_ops = assemble_collocation_operators(new_space)
    du = float(pad * lo_u)   # physical offset of the old domain inside the new
    dv = float(pad * lo_v)

    gu = new_space.greville_u - du
    gv = new_space.greville_v - dv
    u_lo, u_hi = old_space.ku.domain
    v_lo, v_hi = old_space.kv.domain
    in_u = np.flatnonzero((gu >= u_lo) & (gu <= u_hi))
    in_v = np.flatnonzero((gv >= v_lo) & (gv <= v_hi))
    block = np.ix_(in_u, in_v)

    def carry(old: Field, fill: np.ndarray) -> Field:
        vals = fill
        vals[block] = _evaluate_on(old_space, old.coeffs, gu[in_u], gv[in_v])
        return Field.from_values(new_ops, vals)

    shape = (new_nu, new_nv)
    theta_fill = rng.random(shape)
    phi = carry(state.phi, np.zeros(shape))
    theta = carry(state.theta, theta_fill)
    temp = carry(state.T, np.zeros(shape))
    c_tub = carry(state.c_tub, np.zeros(shape))
    phi0 = carry(state.phi0, np.zeros(shape))

    g2 = new_ops.dx(phi0.coeffs) ** 2 + new_ops.dy(phi0.coeffs) ** 2
    source = params.epsilon_0 * g2 / state.source_norm
    theta_grad = np.hypot(new_ops.dx(theta.coeffs), new_ops.dy(theta.coeffs))
    offset = (pad * lo_u, pad * lo_v)
    centers = state.centers + np.array(offset, dtype=float)

    new_state = SimState(phi=phi, theta=theta, T=temp, c_tub=c_tub, phi0=phi0,
                         source=source, source_norm=state.source_norm,
                         theta_grad_mag=theta_grad, centers=centers)
    return new_state, new_ops, offset


def run_case(config: SimConfig) -> CaseResult:
    """Run one growth case to its stop condition."""
    t0 = time.time()
    params = config.params
    profile = config.load_profile()
    rng = np.random.default_rng(config.seed)

    space = SplineSpace2D.uniform(*config.grid)
    ops = assemble_collocation_operators(space)
    if config.centers is not None:
        centers = np.asarray(config.centers, dtype=float)
    else:
        centers = place_neurons(config.n_neurons, config.grid, params.r0, rng)
    flags = []
    if len(centers) > 7:
        flags.append("more_than_7_neurons")

    state = initialize_state(centers, params, ops, rng)
    controller = GrowthController(profile, params, rng, s_um=config.s_um)

    snap_every = config.effective_snapshot_cadence
    snapshots = [FrameRecord.capture(0, state.phi.values)]
    div_trajectory: list[float] = []
    log: list[LogRow] = []
    controls: ControlFields | None = None
    statuses = []
    stop_reason = STOP_MAX_ITER

    for it in range(1, config.max_iter + 1):
        if controls is None or (it - 1) % config.controller_cadence == 0:
            controls, statuses = controller.drive(state)

        dt = params.dt
        for attempt in range(4):
            try:
                state = step(state, controls, ops, params, dt=dt, iteration=it)
                break
            except InstabilityError:
                if attempt == 3:
                    stop_reason = STOP_INSTABILITY
                    break
                dt *= 0.5
        if stop_reason == STOP_INSTABILITY:
            break

        try:
            state, ops, offset = expand_domain(
                state, ops, params, rng, margin=config.expansion_margin,
                pad=config.expansion_pad, max_grid=config.max_grid)
        except InstabilityError:
            stop_reason = STOP_EXPANSION_CAP
            break
        if offset != (0, 0):
            controller.shift(*offset)
            controls = None  # grid changed; recompute next iteration

        l_total = sum(s.l_total for s in statuses)
        div = max((s.div for s in statuses), default=profile.divs[0])
        n_tips = sum(s.n_tips for s in statuses)
        div_trajectory.append(div)
        log.append(LogRow(it, l_total, div, n_tips, dt))

        if it % snap_every == 0 or it == config.max_iter:
            if snapshots[-1].iteration != it:
                snapshots.append(FrameRecord.capture(it, state.phi.values))

        if statuses and all(s.terminal for s in statuses):
            stop_reason = STOP_DIV6
            break

    return CaseResult(config=config, final_state=state, snapshots=snapshots,
                      div_trajectory=div_trajectory, log=log,
                      runtime=time.time() - t0, stop_reason=stop_reason,
                      flags=flags)


def _run_case_guarded(config: SimConfig) -> CaseResult | CaseFailure:
    try:
        return run_case(config)
    except Exception as exc:  # isolate per-case failures in batches
        return CaseFailure(config, f"{type(exc).__name__}: {exc}")


def run_batch(configs: list[SimConfig], parallelism: int = 1,
              ) -> list[CaseResult | CaseFailure]:
    """Run independent cases, preserving input order; failures are isolated."""
    if parallelism <= 1:
        return [_run_case_guarded(c) for c in configs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_case_guarded, configs))
