"""Morphometry-driven growth control.

Each controller invocation reads the current phase field, measures every
neuron (tracing, total length, growth stage), constrains the detected tip
count to the stage's quartile range, places external cues from the
turning-angle statistics under a tortuosity acceptance loop, builds
growth-cone zones around the tips and writes the resulting mobility /
assembly-rate / energy-mask fields consumed by the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from .model import ControlFields, ModelParams, SimState
from .morphometry import (NeuriteTrace, TipSet, TraceSet, connected_components,
                          detect_tips, trace_neurites)
from .profiles import MorphometricProfile, determine_div

__all__ = [
    "DIVState",
    "CueRecord",
    "CueSet",
    "GrowthConeSet",
    "NeuronStatus",
    "GrowthController",
    "constrain_tip_count",
    "sample_turning_angle",
    "place_external_cue",
    "build_growth_cones",
    "assign_mobility",
]


@dataclass
class DIVState:
    div: float
    l_total: float           # micrometers
    terminal: bool = False
    s_um: float = 1.0        # micrometers per grid unit


@dataclass
class CueRecord:
    """Per-tip cue bookkeeping carried across controller invocations."""

    tip: tuple[float, float]
    cue: tuple[float, float]
    l_seg_target: float           # refresh once this much arclength has grown
    refresh_d: float              # geodesic tip distance at the last refresh


@dataclass
class CueSet:
    records: list[CueRecord] = field(default_factory=list)


@dataclass
class GrowthConeSet:
    """Square zones around tips plus the cue-facing activation halves."""

    zones: list[tuple[slice, slice]]
    activation: np.ndarray        # bool grid, union of activation sub-zones
    axon_index: int               # tip index holding the elevated mobility


@dataclass
class NeuronStatus:
    """One controller pass over one neuron, for run logs."""

    label: int
    center: tuple[int, int]
    l_total: float
    div: float
    terminal: bool
    n_tips: int
    tips_in_range: bool
    bootstrap: bool
    flags: list[str] = field(default_factory=list)


def constrain_tip_count(phi: np.ndarray, div: float, profile: MorphometricProfile,
                        l_kl: int = 20, gamma_tip: float = 10.0,
                        max_bisect: int = 10) -> tuple[TipSet, bool]:
    """Bisect the tip intensity threshold until the count fits the DIV range.

    Returns the tip set and whether the count landed inside [Q1, Q3]; when
    the range is unattainable the threshold whose count is closest to the
    range is kept.
    """
    row = profile.row(div)
    lo, hi = 0.1, 0.9
    best: TipSet | None = None
    best_gap = np.inf
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        tips = detect_tips(phi, zeta_tip=mid, gamma_tip=gamma_tip, l_kl=l_kl)
        n = tips.n_tips
        if row.ne_q1 <= n <= row.ne_q3:
            return tips, True
        gap = row.ne_q1 - n if n < row.ne_q1 else n - row.ne_q3
        if gap < best_gap:
            best, best_gap = tips, gap
        if n < row.ne_q1:
            lo = mid   # need a higher threshold: more candidate area
        else:
            hi = mid
    assert best is not None
    return best, False


def sample_turning_angle(div: float, rng: np.random.Generator,
                         profile: MorphometricProfile, size=None, clip: bool = True):
    """Signed turning angle(s) in degrees from the DIV's Gaussian statistics.

    The magnitude is drawn from Normal(mu, sigma) (clamped to [0, 90] unless
    `clip` is off, which exposes the raw distribution for statistical
    checks); the sign is a fair coin.
    """
    row = profile.row(div)
    mag = rng.normal(row.theta_mu, row.theta_sigma, size)
    if clip:
        mag = np.clip(mag, 0.0, 90.0)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * mag


def _rotate(vec: np.ndarray, degrees: float) -> np.ndarray:
    t = np.radians(degrees)
    c, s = np.cos(t), np.sin(t)
    return np.array([c * vec[0] - s * vec[1], s * vec[0] + c * vec[1]])


def place_external_cue(trace: NeuriteTrace, div: float, rng: np.random.Generator,
                       profile: MorphometricProfile, d_cue: float = 10.0,
                       max_resample: int = 50) -> tuple[np.ndarray, bool]:
    """Place an attractive cue beyond the tip so growth stays in the
    tortuosity band.

    The neurite direction is the root-to-tip unit vector; a candidate cue
    sits d_cue away from the tip, rotated by a sampled turning angle, and is
    accepted once the tortuosity projected for the extended path falls in
    the DIV's [Q1, Q3]. After `max_resample` draws the candidate closest to
    the band wins. Returns (cue, degenerate_direction_flag).
    """
    row = profile.row(div)
    tip = np.asarray(trace.tip, dtype=float)
    root = np.asarray(trace.root, dtype=float)
    direction = tip - root
    norm = np.linalg.norm(direction)
    degenerate = norm < 1e-12
    if degenerate:
        ang = rng.uniform(0.0, 2.0 * np.pi)
        direction = np.array([np.cos(ang), np.sin(ang)])
    else:
        direction = direction / norm

    l_ext = trace.l_neu + d_cue
    best_cue = None
    best_gap = np.inf
    for _ in range(max_resample):
        theta = float(sample_turning_angle(div, rng, profile))
        cue = tip + d_cue * _rotate(direction, theta)
        chord = np.linalg.norm(cue - root)
        tau_proj = l_ext / chord if chord > 1e-9 else np.inf
        if row.tau_q1 <= tau_proj <= row.tau_q3:
            return cue, degenerate
        gap = row.tau_q1 - tau_proj if tau_proj < row.tau_q1 else tau_proj - row.tau_q3
        if gap < best_gap:
            best_cue, best_gap = cue, gap
    return best_cue, degenerate


def build_growth_cones(tips: np.ndarray, cues: np.ndarray, shape: tuple[int, int],
                       l_gc: int = 5, axon_index: int = -1,
                       cue_offset: float = 0.0) -> GrowthConeSet:
    """Square growth-cone zones of side l_gc around each tip, clipped to the
    grid, with the cue-facing half of each zone marked as the energy
    activation region.

    A positive `cue_offset` shifts each zone toward its cue so the zone
    straddles the advancing front rather than the already-grown tissue.
    """
    half = l_gc // 2
    zones = []
    activation = np.zeros(shape, dtype=bool)
    for k in range(len(tips)):
        ti, tj = tips[k]
        toward = np.asarray(cues[k], dtype=float) - np.array([ti, tj])
        norm = np.linalg.norm(toward)
        unit = toward / norm if norm > 1e-12 else np.zeros(2)
        ci = ti + cue_offset * unit[0]
        cj = tj + cue_offset * unit[1]
        i0 = max(int(round(ci)) - half, 0)
        i1 = min(int(round(ci)) + half + 1, shape[0])
        j0 = max(int(round(cj)) - half, 0)
        j1 = min(int(round(cj)) + half + 1, shape[1])
        zone = (slice(i0, i1), slice(j0, j1))
        zones.append(zone)
        ii, jj = np.mgrid[i0:i1, j0:j1]
        act = (ii - ti) * toward[0] + (jj - tj) * toward[1] >= 0.0
        activation[zone][act] = True
    return GrowthConeSet(zones, activation, axon_index)


def assign_mobility(tips: np.ndarray, p_initial: tuple[float, float]) -> int:
    """Index of the axon tip: the one farthest from the initial cell center."""
    if len(tips) == 0:
        raise ValueError("need at least one tip")
    d = np.hypot(tips[:, 0] - p_initial[0], tips[:, 1] - p_initial[1])
    return int(np.argmax(d))  # argmax takes the lowest index on ties


def _bootstrap_band(mask: np.ndarray) -> np.ndarray:
    """Interface band straddling the cell boundary (lamellipodia stage)."""
    return ndi.binary_dilation(mask, iterations=2) & ~ndi.binary_erosion(mask, iterations=2)


class GrowthController:
    """Stateful Modules B-E pipeline: measure neurons, steer growth cones.

    Holds per-neuron cue registries and sticky growth stages across
    invocations; all randomness comes from the generator passed at
    construction, so a fixed seed reproduces the control sequence exactly.
    """

    def __init__(self, profile: MorphometricProfile, params: ModelParams,
                 rng: np.random.Generator, s_um: float = 1.0,
                 d_cue: float = 10.0, l_gc: int = 5, l_kl: int = 20,
                 gamma_tip: float = 10.0, tip_match_radius: float = 6.0,
                 mobility_halo: int = 3):
        self.profile = profile
        self.params = params
        self.rng = rng
        self.s_um = s_um
        self.d_cue = d_cue
        self.l_gc = l_gc
        self.l_kl = l_kl
        self.gamma_tip = gamma_tip
        self.tip_match_radius = tip_match_radius
        # Zones narrower than the diffuse interface pin the front; mobility
        # extends this many pixels beyond the active zones so the driven
        # front segment can relax and advance.
        self.mobility_halo = mobility_halo
        self.cues: dict[int, CueSet] = {}
        self.div_state: dict[int, DIVState] = {}

    def shift(self, di: int, dj: int) -> None:
        """Translate all stored pixel coordinates (after domain expansion)."""
        for cs in self.cues.values():
            for rec in cs.records:
                rec.tip = (rec.tip[0] + di, rec.tip[1] + dj)
                rec.cue = (rec.cue[0] + di, rec.cue[1] + dj)

    def _neuron_key(self, center_indices: list[int]) -> int:
        return min(center_indices)

    def drive(self, state: SimState) -> tuple[ControlFields, list[NeuronStatus]]:
        """One controller pass; returns solver control fields and per-neuron logs."""
        phi = state.phi.values
        controls = ControlFields.background(state.shape, self.params)
        labelmap = connected_components(phi)
        statuses: list[NeuronStatus] = []

        # group seed centers by the component they sit in
        groups: dict[int, list[int]] = {}
        for k, (ci, cj) in enumerate(state.centers):
            lab = int(labelmap.labels[int(round(ci)), int(round(cj))])
            if lab > 0:
                groups.setdefault(lab, []).append(k)

        for lab, center_ids in sorted(groups.items()):
            key = self._neuron_key(center_ids)
            center = state.centers[key]
            status = self._drive_neuron(state, phi, labelmap.labels == lab, lab,
                                        (float(center[0]), float(center[1])),
                                        key, controls)
            if len(center_ids) > 1:
                status.flags.append("merged_components")
            statuses.append(status)

        if self.mobility_halo > 0:
            active = controls.M_phi > 0
            halo = ndi.binary_dilation(active, iterations=self.mobility_halo)
            controls.M_phi[halo & ~active] = self.params.M_phi_default
        return controls, statuses

    # ------------------------------------------------------------------

    def _drive_neuron(self, state: SimState, phi: np.ndarray, comp: np.ndarray,
                      lab: int, center: tuple[float, float], key: int,
                      controls: ControlFields) -> NeuronStatus:
        params = self.params
        ci, cj = int(round(center[0])), int(round(center[1]))
        ts = trace_neurites(phi, (ci, cj), zeta_soma=params.r0)
        l_total_um = ts.l_total * self.s_um

        res = determine_div(l_total_um, self.profile)
        prev = self.div_state.get(key)
        div = res.div
        if prev is not None and prev.div > div:
            div = prev.div  # growth stages do not regress
        terminal = res.terminal or (prev.terminal if prev else False)
        self.div_state[key] = DIVState(div, l_total_um, terminal, self.s_um)

        phi_comp = np.where(comp, phi, 0.0)
        tips, in_range = constrain_tip_count(phi_comp, div, self.profile,
                                             l_kl=self.l_kl, gamma_tip=self.gamma_tip)
        status = NeuronStatus(label=lab, center=(ci, cj), l_total=l_total_um,
                              div=div, terminal=terminal, n_tips=tips.n_tips,
                              tips_in_range=in_range, bootstrap=False)

        if tips.n_tips == 0:
            # lamellipodia stage: activate the whole interface band
            band = _bootstrap_band(comp)
            controls.M_phi[band] = params.M_phi_default
            controls.E_mask[band] = True
            status.bootstrap = True
            return status

        tip_px = self._snap_tips(tips, ts)
        cue_set = self._refresh_cues(key, tip_px, ts, div, status)
        axon = assign_mobility(tip_px, (ci, cj))
        cues = np.array([rec.cue for rec in cue_set.records])
        cones = build_growth_cones(tip_px, cues, phi.shape,
                                   l_gc=self.l_gc, axon_index=axon,
                                   cue_offset=float(self.l_gc // 2))

        for k, zone in enumerate(cones.zones):
            controls.M_phi[zone] = params.M_phi_axon if k == axon else params.M_phi_default
            controls.r_g[zone] = params.r_g_cone
            controls.s_g[zone] = params.s_g_cone
        controls.E_mask |= cones.activation
        return status

    def _snap_tips(self, tips: TipSet, ts: TraceSet) -> np.ndarray:
        """Move each tip centroid to the farthest (max d_geo) pixel of its
        candidate region, so cones sit at neurite ends rather than region
        middles."""
        out = np.array(tips.tips, dtype=float)
        if tips.region_labels is None:
            return out
        d = ts.d_geo
        for k in range(tips.n_tips):
            region = tips.region_labels == (k + 1)
            dm = np.where(region & np.isfinite(d), d, -np.inf)
            if np.isfinite(dm.max()) and dm.max() >= 0:
                flat = int(np.argmax(dm))
                out[k] = (flat // d.shape[1], flat % d.shape[1])
        return out

    def _refresh_cues(self, key: int, tip_px: np.ndarray, ts: TraceSet,
                      div: float, status: NeuronStatus) -> CueSet:
        """Match tips to carried records; re-place cues whose segment target
        has been outgrown and start fresh records for new tips."""
        row = self.profile.row(div)
        old = self.cues.get(key, CueSet()).records
        new_records: list[CueRecord] = []
        used = set()
        for k in range(len(tip_px)):
            ti, tj = tip_px[k]
            d_tip = float(ts.d_geo[int(ti), int(tj)])
            if not np.isfinite(d_tip):
                d_tip = 0.0
            match = None
            best = self.tip_match_radius
            for idx, rec in enumerate(old):
                if idx in used:
                    continue
                dist = np.hypot(rec.tip[0] - ti, rec.tip[1] - tj)
                if dist <= best:
                    match, best = idx, dist
            trace = self._trace_for_tip(ts, (ti, tj), d_tip)
            if match is None:
                cue, degen = place_external_cue(trace, div, self.rng, self.profile,
                                                d_cue=self.d_cue)
                if degen:
                    status.flags.append("degenerate_direction")
                target = float(self.rng.uniform(row.lseg_q1, row.lseg_q3)) / self.s_um
                new_records.append(CueRecord((ti, tj), tuple(cue), target, d_tip))
            else:
                used.add(match)
                rec = old[match]
                rec.tip = (ti, tj)
                if d_tip - rec.refresh_d > rec.l_seg_target:
                    cue, degen = place_external_cue(trace, div, self.rng, self.profile,
                                                    d_cue=self.d_cue)
                    if degen:
                        status.flags.append("degenerate_direction")
                    rec.cue = tuple(cue)
                    rec.l_seg_target = float(self.rng.uniform(row.lseg_q1, row.lseg_q3)) / self.s_um
                    rec.refresh_d = d_tip
                new_records.append(rec)
        cue_set = CueSet(new_records)
        self.cues[key] = cue_set
        return cue_set

    def _trace_for_tip(self, ts: TraceSet, tip: tuple[float, float],
                       d_tip: float) -> NeuriteTrace:
        """Trace whose endpoint is nearest this tip; falls back to a straight
        stand-in from the soma center when no trace reaches it."""
        best = None
        best_d = 10.0
        for t in ts.traces:
            dist = np.hypot(t.tip[0] - tip[0], t.tip[1] - tip[1])
            if dist < best_d:
                best, best_d = t, dist
        if best is not None:
            return best
        root = ts.source
        l_straight = float(np.hypot(tip[0] - root[0], tip[1] - root[1]))
        return NeuriteTrace([(int(tip[0]), int(tip[1])), root], "primary",
                            max(l_straight, 1.0))
