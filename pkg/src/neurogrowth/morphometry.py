"""Image-domain analysis of the binary phase field.

Connected components, quasi-Euclidean geodesic distances, three-generation
neurite tracing, box-convolution tip detection, tortuosity and turning
angles. Everything works on pixel (index) grids with 8-connectivity and
diagonal cost sqrt(2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse
import scipy.sparse.csgraph

__all__ = [
    "LabelMap",
    "GeodesicField",
    "NeuriteTrace",
    "TraceSet",
    "TipSet",
    "MorphoFeatures",
    "connected_components",
    "geodesic_distance",
    "trace_neurites",
    "box_convolve",
    "detect_tips",
    "tortuosity",
    "turning_angles",
    "measure_features",
]

_EIGHT = np.ones((3, 3), dtype=int)
_OFFSETS = [(-1, -1, np.sqrt(2)), (-1, 0, 1.0), (-1, 1, np.sqrt(2)), (0, -1, 1.0),
            (0, 1, 1.0), (1, -1, np.sqrt(2)), (1, 0, 1.0), (1, 1, np.sqrt(2))]

GENERATIONS = ("primary", "secondary", "tertiary")


@dataclass
class LabelMap:
    labels: np.ndarray
    n_neu: int
    centroids: np.ndarray  # (n_neu, 2) float


@dataclass
class GeodesicField:
    d_geo: np.ndarray      # inf outside the reachable mask
    source: tuple[int, int]


@dataclass
class NeuriteTrace:
    path: list[tuple[int, int]]   # tip -> root, strictly descending d_geo
    generation: str
    l_neu: float

    @property
    def tip(self) -> tuple[int, int]:
        return self.path[0]

    @property
    def root(self) -> tuple[int, int]:
        return self.path[-1]


@dataclass
class TraceSet:
    traces: list[NeuriteTrace]
    l_total: float
    d_geo: np.ndarray
    source: tuple[int, int]


@dataclass
class TipSet:
    tips: np.ndarray             # (n, 2) float centroids
    areas: np.ndarray            # (n,)
    zeta_tip: float
    n_tips: int
    region_labels: np.ndarray | None = None  # candidate-region id per pixel, 1-based


@dataclass
class MorphoFeatures:
    l_total: float
    tortuosities: list[float]
    l_seg: float
    n_e: int
    turning_angles: np.ndarray


def connected_components(phi: np.ndarray, threshold: float = 0.5) -> LabelMap:
    """8-connected labeling of the region phi >= threshold."""
    mask = np.asarray(phi) >= threshold
    labels, n = ndi.label(mask, structure=_EIGHT)
    if n == 0:
        return LabelMap(labels, 0, np.zeros((0, 2)))
    cents = np.array(ndi.center_of_mass(mask, labels, index=range(1, n + 1)))
    return LabelMap(labels, n, cents)


def geodesic_distance(mask: np.ndarray, source: tuple[int, int]) -> GeodesicField:
    """Shortest-path distance inside `mask` from `source`.

    8-neighbor moves with costs 1 and sqrt(2); unreachable or masked-out
    pixels get inf.
    """
    mask = np.asarray(mask, dtype=bool)
    si, sj = int(source[0]), int(source[1])
    if not (0 <= si < mask.shape[0] and 0 <= sj < mask.shape[1]) or not mask[si, sj]:
        raise ValueError(f"source {source!r} is outside the mask")

    ids = np.full(mask.shape, -1, dtype=np.int64)
    k = int(mask.sum())
    ids[mask] = np.arange(k)

    rows, cols, data = [], [], []
    for di, dj, w in _OFFSETS:
        a = ids[max(di, 0): mask.shape[0] + min(di, 0), max(dj, 0): mask.shape[1] + min(dj, 0)]
        b = ids[max(-di, 0): mask.shape[0] + min(-di, 0), max(-dj, 0): mask.shape[1] + min(-dj, 0)]
        ok = (a >= 0) & (b >= 0)
        rows.append(a[ok])
        cols.append(b[ok])
        data.append(np.full(int(ok.sum()), w))
    graph = scipy.sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(k, k))
    dist = scipy.sparse.csgraph.dijkstra(graph, directed=False, indices=ids[si, sj])

    d = np.full(mask.shape, np.inf)
    d[mask] = dist
    return GeodesicField(d, (si, sj))


def _descend(d: np.ndarray, working: np.ndarray, start: tuple[int, int],
             source: tuple[int, int]) -> list[tuple[int, int]]:
    """Steepest-descent walk on d within `working`, from `start` to a local min.

    Ties prefer the neighbor closest to `source`, then the lowest flat index.
    """
    ni, nj = d.shape
    path = [start]
    cur = start
    while True:
        ci, cj = cur
        best = None
        for di, dj, _ in _OFFSETS:
            i, j = ci + di, cj + dj
            if not (0 <= i < ni and 0 <= j < nj) or not working[i, j]:
                continue
            if d[i, j] >= d[ci, cj]:
                continue
            key = (d[i, j], (i - source[0]) ** 2 + (j - source[1]) ** 2, i * nj + j)
            if best is None or key < best[0]:
                best = (key, (i, j))
        if best is None:
            return path
        cur = best[1]
        path.append(cur)


def trace_neurites(phi: np.ndarray, p_initial: tuple[int, int],
                   zeta_soma: float = 20.0, threshold: float = 0.5,
                   clear_radius: int = 2, min_length: float = 3.0,
                   n_generations: int = 3, bridge_gaps: bool = True) -> TraceSet:
    """Trace up to three generations of neurites of one neuron.

    The soma (geodesic ball of radius zeta_soma around p_initial) is
    removed; each remaining connected piece is walked tip-to-root by
    steepest geodesic descent. Traced paths are cleared (with a small
    neighborhood, so the full neurite width is consumed) and the sweep is
    repeated for the next generation. Pieces shorter than `min_length` are
    treated as interface noise and dropped.

    Phase-field shafts freeze mid-transition and can pinch below the
    threshold at single pixels, which would intermittently detach whole
    neurites from the measurement; `bridge_gaps` closes such hairline
    waists before tracing (a no-op on solid masks).
    """
    mask = np.asarray(phi) >= threshold
    if bridge_gaps:
        closed = ndi.binary_closing(mask, structure=_EIGHT.astype(bool), iterations=1)
        mask = mask | closed
    si, sj = int(round(p_initial[0])), int(round(p_initial[1]))
    if not mask[si, sj]:
        raise ValueError(f"p_initial {p_initial!r} is not inside the neuron")
    labels, _ = ndi.label(mask, structure=_EIGHT)
    comp = labels == labels[si, sj]

    gf = geodesic_distance(comp, (si, sj))
    d = gf.d_geo
    working = comp & (d > zeta_soma)

    struct = np.ones((2 * clear_radius + 1,) * 2, dtype=bool)
    traces: list[NeuriteTrace] = []
    for gen in GENERATIONS[:n_generations]:
        if not working.any():
            break
        lab, n = ndi.label(working, structure=_EIGHT)
        cleared = np.zeros_like(working)
        for idx in range(1, n + 1):
            piece = lab == idx
            dm = np.where(piece, d, -np.inf)
            flat = int(np.argmax(dm))
            start = (flat // d.shape[1], flat % d.shape[1])
            path = _descend(d, piece, start, (si, sj))
            l_neu = float(d[path[0]] - d[path[-1]])
            if l_neu >= min_length:
                traces.append(NeuriteTrace(path, gen, l_neu))
                on_path = np.zeros_like(working)
                on_path[tuple(np.array(path).T)] = True
                cleared |= ndi.binary_dilation(on_path, structure=struct)
            else:
                cleared |= piece  # interface noise, drop the whole piece
        working &= ~cleared

    l_total = float(sum(t.l_neu for t in traces))
    return TraceSet(traces, l_total, d, (si, sj))


def box_convolve(phi: np.ndarray, l_kl: int = 20, threshold: float = 0.5) -> np.ndarray:
    """Neighbor-count intensity: phi convolved with an l_kl x l_kl box.

    Zero-padded at the boundary, then masked to the cell (phi >= threshold).
    Low intensity flags pixels with few neighbors, i.e. neurite tips.
    """
    if l_kl < 1:
        raise ValueError("kernel size must be >= 1")
    phi = np.asarray(phi, dtype=float)
    i = ndi.uniform_filter(phi, size=l_kl, mode="constant", cval=0.0) * l_kl * l_kl
    i[phi < threshold] = 0.0
    return i


def detect_tips(phi: np.ndarray, zeta_tip: float = 0.4, gamma_tip: float = 10.0,
                l_kl: int = 20, threshold: float = 0.5) -> TipSet:
    """Detect neurite tips as low-intensity pockets of the box convolution.

    Candidate regions have intensity below zeta_tip * max(I) inside the
    cell; regions with area <= gamma_tip are discarded as noise. Tip
    coordinates are region centroids.
    """
    phi = np.asarray(phi, dtype=float)
    mask = phi >= threshold
    empty = TipSet(np.zeros((0, 2)), np.zeros(0), zeta_tip, 0,
                   np.zeros(phi.shape, dtype=np.int32))
    i = box_convolve(phi, l_kl=l_kl, threshold=threshold)
    mx = i.max()
    if mx <= 0.0:
        return empty
    cand = mask & (i < zeta_tip * mx)
    lab, n = ndi.label(cand, structure=_EIGHT)
    if n == 0:
        return empty
    areas = ndi.sum_labels(cand, lab, index=range(1, n + 1))
    keep = np.flatnonzero(areas > gamma_tip) + 1
    if keep.size == 0:
        return empty
    cents = np.array(ndi.center_of_mass(cand, lab, index=keep))
    # relabel kept regions 1..k in tip order
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[keep] = np.arange(1, keep.size + 1, dtype=np.int32)
    return TipSet(cents, areas[keep - 1], zeta_tip, len(keep), remap[lab])


def tortuosity(trace: NeuriteTrace) -> float:
    """Geodesic length over tip-to-root Euclidean distance (>= 1)."""
    (ti, tj), (ri, rj) = trace.tip, trace.root
    chord = np.hypot(ti - ri, tj - rj)
    if chord == 0.0:
        raise ValueError("tortuosity undefined: trace endpoints coincide")
    return float(trace.l_neu / chord)


def _resample(points: np.ndarray, step: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    targets = np.arange(0.0, total + 1e-9, step)
    out = np.empty((targets.size, 2))
    out[:, 0] = np.interp(targets, s, points[:, 0])
    out[:, 1] = np.interp(targets, s, points[:, 1])
    return out


def turning_angles(trace: NeuriteTrace, resample_step: float = 5.0) -> np.ndarray:
    """Unsigned direction changes (degrees) along the arclength-resampled trace."""
    pts = np.asarray(trace.path, dtype=float)
    if len(pts) < 2:
        return np.zeros(0)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
    if seg < 2.0 * resample_step:
        return np.zeros(0)
    rs = _resample(pts, resample_step)
    d = np.diff(rs, axis=0)
    cross = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
    dot = (d[:-1] * d[1:]).sum(axis=1)
    return np.degrees(np.abs(np.arctan2(cross, dot)))


def measure_features(phi: np.ndarray, p_initial: tuple[int, int],
                     zeta_soma: float = 20.0, zeta_tip: float = 0.4,
                     gamma_tip: float = 10.0, l_kl: int = 20,
                     resample_step: float = 5.0) -> MorphoFeatures:
    """Full morphometric readout for one neuron: lengths, tortuosity, tips, angles."""
    ts = trace_neurites(phi, p_initial, zeta_soma=zeta_soma)
    tips = detect_tips(phi, zeta_tip=zeta_tip, gamma_tip=gamma_tip, l_kl=l_kl)
    taus = []
    angles = []
    for t in ts.traces:
        if np.hypot(t.tip[0] - t.root[0], t.tip[1] - t.root[1]) > 0:
            taus.append(tortuosity(t))
        angles.append(turning_angles(t, resample_step))
    l_seg = ts.l_total / tips.n_tips if tips.n_tips > 0 else 0.0
    return MorphoFeatures(
        l_total=ts.l_total,
        tortuosities=taus,
        l_seg=l_seg,
        n_e=tips.n_tips,
        turning_angles=np.concatenate(angles) if angles else np.zeros(0),
    )
