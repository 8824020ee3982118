"""Coupled phase-field / tubulin / temperature evolution on the collocation grid.

The cell is a continuous indicator field phi (1 inside, 0 in the medium)
advanced together with the intracellular tubulin concentration c_tub and
the undercooling temperature T. Tubulin assembly gates an energy term
that drives interface motion; mobility, assembly/disassembly rates and
the energy gate are spatially controlled by the growth controller.

All positions are expressed in collocation-grid index units (one unit per
interior knot span).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .splines import CollocationOperators, Field

__all__ = [
    "ModelParams",
    "SimState",
    "ControlFields",
    "InstabilityError",
    "initialize_state",
    "anisotropy",
    "tubulin_consumption",
    "energy_term",
    "phase_rhs",
    "tubulin_rhs",
    "temperature_rhs",
    "step",
    "stable_dt",
]

# Spectral bound for the cubic-spline collocation Laplacian at unit knot
# spacing (per-direction symbol peaks at 12/h^2; two directions).
_LAPLACIAN_EIG_BOUND = 24.0
_SUBSTEP_SAFETY = 0.8


@dataclass(frozen=True)
class ModelParams:
    """Model constants; defaults give the rat-hippocampal configuration."""

    M_phi_default: float = 60.0      # interface mobility inside active zones
    M_phi_axon: float = 100.0        # elevated mobility for the axon tip
    H: float = 0.007                 # orientation coupling constant
    K: float = 2.0                   # dimensionless latent heat
    alpha_over_pi: float = 0.2865    # energy scaling coefficient
    gamma: float = 10.0              # interfacial energy constant
    delta_t: float = 4.0             # tubulin diffusion rate (um^2/h)
    alpha_t: float = 0.001           # tubulin active transport rate (um/h)
    beta_t: float = 0.001            # tubulin decay rate (1/h)
    epsilon_0: float = 15.0          # tubulin production coefficient
    r_g_default: float = 5.0         # tubulin assembly rate
    r_g_cone: float = 50.0           # assembly rate inside growth cones
    s_g_default: float = 0.1         # tubulin disassembly rate
    s_g_cone: float = 0.0            # disassembly rate inside growth cones
    delta_a: float = 0.05            # anisotropy strength
    j_a: int = 6                     # anisotropy mode number
    a_scale: float = 0.6             # gradient-coefficient scale (interface width)
    T_eq: float = 1.0                # equilibrium temperature
    dt: float = 0.05                 # outer time step per iteration
    r0: float = 20.0                 # seed radius (grid units)
    time_scale: float = 1.0          # hours per simulation time unit
    substeps: int = 0                # 0 = choose from the stability bound

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name in ("M_phi_default", "delta_t", "alpha_t", "beta_t",
                     "epsilon_0", "r_g_default", "s_g_default", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


class InstabilityError(RuntimeError):
    """A field went non-finite (or blew past plausible bounds) during a step."""

    def __init__(self, message: str, iteration: int = 0):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass
class ControlFields:
    """Per-point mobility, tubulin rates and energy activation mask.

    Mobility is zero away from active growth zones, freezing the interface
    there; the controller raises it to the default (or the axon value) on
    growth-cone zones and on the bootstrap interface band.
    """

    M_phi: np.ndarray
    r_g: np.ndarray
    s_g: np.ndarray
    E_mask: np.ndarray

    @classmethod
    def background(cls, shape: tuple[int, int], params: ModelParams) -> "ControlFields":
        """Controller baseline: frozen interface, default rates, energy off."""
        return cls(
            M_phi=np.zeros(shape),
            r_g=np.full(shape, params.r_g_default),
            s_g=np.full(shape, params.s_g_default),
            E_mask=np.zeros(shape, dtype=bool),
        )

    @classmethod
    def uniform(cls, shape: tuple[int, int], params: ModelParams) -> "ControlFields":
        """Everything active everywhere (bare-solver experiments and oracles)."""
        return cls(
            M_phi=np.full(shape, params.M_phi_default),
            r_g=np.full(shape, params.r_g_default),
            s_g=np.full(shape, params.s_g_default),
            E_mask=np.ones(shape, dtype=bool),
        )

    def copy(self) -> "ControlFields":
        return ControlFields(self.M_phi.copy(), self.r_g.copy(),
                             self.s_g.copy(), self.E_mask.copy())


@dataclass
class SimState:
    """Collocation-grid fields plus frozen initial-condition data.

    theta is a static random orientation field; phi0 and the normalized
    tubulin production source are frozen at initialization.
    """

    phi: Field
    theta: Field
    T: Field
    c_tub: Field
    phi0: Field
    source: np.ndarray          # epsilon_0 * |grad phi0|^2 / source_norm
    source_norm: float          # integral of |grad phi0|^2 over the domain
    theta_grad_mag: np.ndarray  # |grad theta|, precomputed (theta is static)
    centers: np.ndarray         # seed centers, index units, shape (k, 2)

    @property
    def shape(self) -> tuple[int, int]:
        return self.phi.values.shape


def _grid_integral(vals: np.ndarray, ops: CollocationOperators) -> float:
    gu = ops.space.greville_u
    gv = ops.space.greville_v
    return float(np.trapz(np.trapz(vals, gv, axis=1), gu))


def initialize_state(centers, params: ModelParams, ops: CollocationOperators,
                     rng) -> SimState:
    """Seed circular cells and set up tubulin, temperature and orientation.

    centers are (row, col) index positions; each must keep a full seed
    radius away from the domain boundary. `rng` is an integer seed or a
    numpy Generator; the orientation field is drawn from it.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    shape = ops.shape
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    for cx, cy in centers:
        if (cx - params.r0 < 0 or cy - params.r0 < 0
                or cx + params.r0 > shape[0] - 1 or cy + params.r0 > shape[1] - 1):
            raise ValueError(
                f"center ({cx}, {cy}) closer than r0={params.r0} to the boundary")

    I, J = np.indices(shape, dtype=float)
    r = np.full(shape, np.inf)
    for cx, cy in centers:
        np.minimum(r, np.hypot(I - cx, J - cy), out=r)

    phi_vals = (r <= params.r0).astype(float)
    c_vals = 0.5 * (1.0 + np.tanh((params.r0 - r) / 2.0))
    theta_vals = rng.random(shape)

    phi = Field.from_values(ops, phi_vals)
    theta = Field.from_values(ops, theta_vals)
    temp = Field.from_values(ops, np.zeros(shape))
    c_tub = Field.from_values(ops, c_vals)
    phi0 = phi.copy()

    g2 = ops.dx(phi0.coeffs) ** 2 + ops.dy(phi0.coeffs) ** 2
    source_norm = _grid_integral(g2, ops)
    if source_norm <= 0:
        raise ValueError("degenerate initial field: |grad phi0|^2 integrates to zero")
    source = params.epsilon_0 * g2 / source_norm

    theta_grad = np.hypot(ops.dx(theta.coeffs), ops.dy(theta.coeffs))
    return SimState(phi=phi, theta=theta, T=temp, c_tub=c_tub, phi0=phi0,
                    source=source, source_norm=source_norm,
                    theta_grad_mag=theta_grad, centers=centers)


def anisotropy(phi_grad_x: np.ndarray, phi_grad_y: np.ndarray,
               theta: np.ndarray, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Interface anisotropy a(psi) and da/dpsi for gradient angle psi.

    a = 1 + delta_a * cos(j_a * (psi - 2*pi*theta)); psi = atan2(dphi/dy,
    dphi/dx), taken as 0 where the gradient vanishes.
    """
    psi = np.arctan2(phi_grad_y, phi_grad_x)
    chi = params.j_a * (psi - 2.0 * np.pi * theta)
    a = 1.0 + params.delta_a * np.cos(chi)
    da = -params.delta_a * params.j_a * np.sin(chi)
    return a, da


def tubulin_consumption(c_tub: np.ndarray, controls: ControlFields) -> np.ndarray:
    """Net microtubule elongation rate dL/dt = r_g * c_tub - s_g."""
    return controls.r_g * c_tub - controls.s_g


def energy_term(state: SimState, controls: ControlFields,
                params: ModelParams) -> np.ndarray:
    """Interface driving energy, active only where the controller allows it.

    E = (alpha/pi) * atan(step(dL/dt) * gamma * (T_eq - T)); the sharp step
    closes the gate wherever tubulin assembly cannot keep up.
    """
    dldt = tubulin_consumption(state.c_tub.values, controls)
    gate = (dldt > 0.0).astype(float)
    e = params.alpha_over_pi * np.arctan(gate * params.gamma * (params.T_eq - state.T.values))
    e[~controls.E_mask] = 0.0
    return e


def phase_rhs(state: SimState, controls: ControlFields, ops: CollocationOperators,
              params: ModelParams, iteration: int = 0) -> np.ndarray:
    """Right-hand side of the interface evolution equation.

    The divergence of the anisotropic flux is expanded by the product rule,
        div(a^2 grad phi) = a^2 lap(phi) + grad(a^2) . grad(phi),
        d/dx (a a_psi phi_y) = (a a_psi)_x phi_y + a a_psi phi_xy,
        d/dy (a a_psi phi_x) = (a a_psi)_y phi_x + a a_psi phi_xy,
    (the mixed-derivative terms cancel in the difference) with the
    gradients of the nonlinear coefficient fields a^2 and a*a_psi taken by
    projecting them onto the spline space and differentiating there.
    """
    c = state.phi.coeffs
    px, py = ops.dx(c), ops.dy(c)
    lap = ops.laplacian(c)

    # The gradient coefficient is a_scale * a(psi): the shape function keeps
    # its unit mean while a_scale sets the diffuse-interface width.
    s2 = params.a_scale * params.a_scale
    if params.delta_a == 0.0:
        diffusion = s2 * lap
    else:
        a, da = anisotropy(px, py, state.theta.values, params)
        a2c = ops.solve(a * a)
        wc = ops.solve(a * da)
        diffusion = s2 * (a * a * lap + ops.dx(a2c) * px + ops.dy(a2c) * py
                          - ops.dx(wc) * py + ops.dy(wc) * px)

    e = energy_term(state, controls, params)
    phi = state.phi.values
    well = phi * (1.0 - phi) * (phi - 0.5 + e + 6.0 * params.H * state.theta_grad_mag)
    rhs = controls.M_phi * (diffusion + well)
    if not np.all(np.isfinite(rhs)):
        raise InstabilityError("non-finite phase-field rhs", iteration)
    return rhs


def tubulin_rhs(state: SimState, ops: CollocationOperators, params: ModelParams,
                iteration: int = 0) -> np.ndarray:
    """Right-hand side for the conserved product field phi * c_tub.

    Active transport moves tubulin outward along -grad(phi)/|grad(phi)|
    (soma to tip); the production source is the frozen normalized
    |grad phi0|^2 profile.
    """
    scale = params.time_scale
    pc = state.phi.coeffs
    phi = state.phi.values
    px, py = ops.dx(pc), ops.dy(pc)

    cc = state.c_tub.coeffs
    cx, cy = ops.dx(cc), ops.dy(cc)
    clap = ops.laplacian(cc)
    diffusion = params.delta_t * scale * (phi * clap + px * cx + py * cy)

    prod = phi * state.c_tub.values
    prod_c = ops.solve(prod)
    gx, gy = ops.dx(prod_c), ops.dy(prod_c)
    gmag = np.hypot(px, py)
    with np.errstate(invalid="ignore", divide="ignore"):
        dx_hat = np.where(gmag > 1e-8, -px / gmag, 0.0)
        dy_hat = np.where(gmag > 1e-8, -py / gmag, 0.0)
    transport = -params.alpha_t * scale * (dx_hat * gx + dy_hat * gy)

    rhs = diffusion + transport - params.beta_t * scale * prod + state.source
    if not np.all(np.isfinite(rhs)):
        raise InstabilityError("non-finite tubulin rhs", iteration)
    return rhs


def temperature_rhs(state: SimState, ops: CollocationOperators, params: ModelParams,
                    dphi_dt: np.ndarray, iteration: int = 0) -> np.ndarray:
    """Undercooling temperature: lap(T) plus latent-heat release K * dphi/dt."""
    rhs = ops.laplacian(state.T.coeffs) + params.K * dphi_dt
    if not np.all(np.isfinite(rhs)):
        raise InstabilityError("non-finite temperature rhs", iteration)
    return rhs


def stable_dt(params: ModelParams, controls: ControlFields) -> float:
    """Explicit-Euler stability limit from the stiffest diffusive coefficient."""
    m_max = float(controls.M_phi.max(initial=0.0))
    coef = max(m_max * (params.a_scale * (1.0 + params.delta_a)) ** 2,
               params.delta_t * params.time_scale,
               1.0)  # temperature diffusivity
    return _SUBSTEP_SAFETY * 2.0 / (_LAPLACIAN_EIG_BOUND * coef)


def step(state: SimState, controls: ControlFields, ops: CollocationOperators,
         params: ModelParams, dt: float | None = None, iteration: int = 0) -> SimState:
    """Advance phi, phi*c_tub and T by one explicit Euler step of length dt.

    When dt exceeds the explicit stability limit the update is carried out
    as equal forward-Euler sub-steps (deterministic count from the bound).
    theta never changes. Raises InstabilityError if any field goes
    non-finite.
    """
    if dt is None:
        dt = params.dt
    n_sub = params.substeps
    if n_sub <= 0:
        n_sub = max(1, int(np.ceil(dt / stable_dt(params, controls))))
    h = dt / n_sub

    phi, temp, c_tub = state.phi, state.T, state.c_tub
    # The conserved product field is the actual unknown; it is threaded
    # through the sub-steps and only divided back out for rhs evaluation.
    psi_vals = state.phi.values * state.c_tub.values
    cur = state
    for _ in range(n_sub):
        dphi = phase_rhs(cur, controls, ops, params, iteration)
        dpsi = tubulin_rhs(cur, ops, params, iteration)
        dtemp = temperature_rhs(cur, ops, params, dphi, iteration)

        phi_vals = cur.phi.values + h * dphi
        psi_vals = psi_vals + h * dpsi
        t_vals = cur.T.values + h * dtemp
        # The product field lives inside the cell; clear residue left in the
        # medium and keep the concentration nonnegative, otherwise roundoff
        # in the near-zero-phi ring compounds through the phi division.
        np.maximum(psi_vals, 0.0, out=psi_vals)
        psi_vals[phi_vals <= 1e-3] = 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            c_vals = np.where(phi_vals > 1e-3, psi_vals / phi_vals, 0.0)

        phi = Field.from_values(ops, phi_vals)
        temp = Field.from_values(ops, t_vals)
        c_tub = Field.from_values(ops, c_vals)
        cur = replace(state, phi=phi, T=temp, c_tub=c_tub)

    for name, f in (("phi", phi), ("T", temp), ("c_tub", c_tub)):
        if not np.all(np.isfinite(f.values)):
            raise InstabilityError(f"non-finite {name} after step", iteration)
    if np.abs(phi.values).max() > 10.0:
        raise InstabilityError("phase field diverging", iteration)
    return cur
