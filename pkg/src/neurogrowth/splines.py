"""Cubic B-spline bases, Greville abscissae and 2D collocation operators.

The simulation grid is a tensor-product spline space over open knot
vectors. Fields live as control coefficients; values and spatial
derivatives at the Greville collocation points are obtained through
sparse operators assembled here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse


__all__ = [
    "KnotVector",
    "SplineSpace2D",
    "CollocationOperators",
    "Field",
    "open_uniform_knots",
    "basis_eval",
    "basis_derivatives",
    "greville_points",
    "collocation_matrix",
    "assemble_collocation_operators",
]


@dataclass(frozen=True)
class KnotVector:
    """Open knot vector together with the spline degree.

    Attributes
    ----------
    knots : ndarray
        Nondecreasing knot sequence of length ``n + p + 1`` whose first and
        last entries are repeated ``p + 1`` times.
    p : int
        Spline degree.
    """

    knots: np.ndarray
    p: int

    def __post_init__(self):
        knots = np.ascontiguousarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if self.p < 0:
            raise ValueError("degree must be nonnegative")
        if knots.ndim != 1 or knots.size < 2 * (self.p + 1):
            raise ValueError("knot vector too short for degree %d" % self.p)
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if not (np.all(knots[: self.p + 1] == knots[0])
                and np.all(knots[-(self.p + 1):] == knots[-1])):
            raise ValueError("knot vector must be open (end knots repeated p+1 times)")
        if self.n < self.p + 1:
            raise ValueError("need at least p+1 basis functions")

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.p - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])


def open_uniform_knots(n: int, degree: int = 3, domain: tuple[float, float] | None = None) -> KnotVector:
    """Open knot vector with uniformly spaced interior knots for `n` basis functions.

    With the default domain the knot spacing is one grid unit, i.e. the
    parametric domain is ``[0, n - degree]``.
    """
    if n < degree + 1:
        raise ValueError("n must be at least degree + 1")
    spans = n - degree
    if domain is None:
        domain = (0.0, float(spans))
    a, b = domain
    interior = np.linspace(a, b, spans + 1)[1:-1]
    knots = np.concatenate([np.full(degree + 1, a), interior, np.full(degree + 1, b)])
    return KnotVector(knots, degree)


def find_span(kv: KnotVector, u: float) -> int:
    """Index i of the knot span [u_i, u_{i+1}) containing u (0-based)."""
    knots, p, n = kv.knots, kv.p, kv.n
    lo, hi = kv.domain
    if not (lo <= u <= hi):
        raise ValueError("parameter %r outside knot range [%g, %g]" % (u, lo, hi))
    if u >= knots[n]:
        return n - 1
    return int(np.searchsorted(knots, u, side="right") - 1)


def basis_eval(kv: KnotVector, u: float) -> tuple[int, np.ndarray]:
    """Evaluate the p+1 nonzero basis functions at u via the Cox-de Boor recursion.

    Returns
    -------
    first : int
        Index of the first nonzero basis function.
    values : ndarray
        The ``p + 1`` basis values; nonnegative and summing to one.
    """
    knots, p = kv.knots, kv.p
    span = find_span(kv, u)
    vals = np.zeros(p + 1)
    vals[0] = 1.0
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    for j in range(1, p + 1):
        left[j] = u - knots[span + 1 - j]
        right[j] = knots[span + j] - u
        saved = 0.0
        for r in range(j):
            tmp = vals[r] / (right[r + 1] + left[j - r])
            vals[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        vals[j] = saved
    return span - p, vals


def basis_derivatives(kv: KnotVector, u: float, order: int) -> tuple[int, np.ndarray]:
    """Basis function derivatives up to `order` at u.

    Returns (first_index, ders) where ``ders[k, j]`` is the k-th derivative
    of basis function ``first_index + j``. ``order`` may not exceed the
    degree.
    """
    knots, p = kv.knots, kv.p
    if order > p:
        raise ValueError("derivative order %d exceeds degree %d" % (order, p))
    span = find_span(kv, u)

    # Triangular table of all lower-degree bases (The NURBS Book, A2.3).
    ndu = np.zeros((p + 1, p + 1))
    ndu[0, 0] = 1.0
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    for j in range(1, p + 1):
        left[j] = u - knots[span + 1 - j]
        right[j] = knots[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            tmp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        ndu[j, j] = saved

    ders = np.zeros((order + 1, p + 1))
    ders[0, :] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, order + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, order + 1):
        ders[k, :] *= fac
        fac *= p - k
    return span - p, ders


def greville_points(kv: KnotVector) -> np.ndarray:
    """Greville abscissae: averages of p consecutive interior knots."""
    knots, p, n = kv.knots, kv.p, kv.n
    if p == 0:
        return 0.5 * (knots[:-1] + knots[1:])
    pts = np.array([knots[i + 1: i + p + 1].mean() for i in range(n)])
    # Guard against roundoff pushing endpoints outside the domain.
    pts[0], pts[-1] = knots[0], knots[-1]
    return pts


def collocation_matrix(kv: KnotVector, points: np.ndarray, order: int = 0) -> scipy.sparse.csr_matrix:
    """Sparse matrix of basis-function derivatives evaluated at `points`.

    Row i holds the order-th derivative of every basis function at
    points[i]; only the p+1 active functions per row are stored.
    """
    points = np.asarray(points, dtype=float)
    n = kv.n
    rows = np.repeat(np.arange(points.size), kv.p + 1)
    cols = np.empty(points.size * (kv.p + 1), dtype=int)
    data = np.empty(points.size * (kv.p + 1))
    for i, u in enumerate(points):
        if order == 0:
            first, vals = basis_eval(kv, u)
        else:
            first, ders = basis_derivatives(kv, u, order)
            vals = ders[order]
        sl = slice(i * (kv.p + 1), (i + 1) * (kv.p + 1))
        cols[sl] = np.arange(first, first + kv.p + 1)
        data[sl] = vals
    return scipy.sparse.csr_matrix((data, (rows, cols)), shape=(points.size, n))


@dataclass(frozen=True)
class SplineSpace2D:
    """Tensor-product spline space with per-direction Greville points."""

    ku: KnotVector
    kv: KnotVector
    greville_u: np.ndarray = field(init=False)
    greville_v: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "greville_u", greville_points(self.ku))
        object.__setattr__(self, "greville_v", greville_points(self.kv))

    @classmethod
    def uniform(cls, n_u: int, n_v: int, degree: int = 3,
                domain_u: tuple[float, float] | None = None,
                domain_v: tuple[float, float] | None = None) -> "SplineSpace2D":
        return cls(open_uniform_knots(n_u, degree, domain_u),
                   open_uniform_knots(n_v, degree, domain_v))

    @property
    def shape(self) -> tuple[int, int]:
        return self.ku.n, self.kv.n

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical coordinate arrays (X, Y) at the collocation points."""
        return np.meshgrid(self.greville_u, self.greville_v, indexing="ij")


def _banded_form(a: np.ndarray, bw: int) -> np.ndarray:
    """Pack a banded square matrix into scipy.linalg.solve_banded layout."""
    n = a.shape[0]
    ab = np.zeros((2 * bw + 1, n))
    for d in range(-bw, bw + 1):
        diag = np.diagonal(a, d)
        if d >= 0:
            ab[bw - d, d:] = diag
        else:
            ab[bw - d, : n + d] = diag
    return ab


class CollocationOperators:
    """Precomputed value/derivative operators at the Greville points.

    Attributes N, Nx, Ny, Nxx, Nyy, Nxy are sparse (n_u*n_v) x (n_u*n_v)
    operators mapping control coefficients (row-major flattened, u-axis
    first) to point values and partial derivatives. They are assembled
    lazily; application and value->coefficient solves go through the
    univariate factor matrices, which is equivalent and much faster.
    """

    def __init__(self, space: SplineSpace2D):
        self.space = space
        ku, kv = space.ku, space.kv
        gu, gv = space.greville_u, space.greville_v
        self._bu = [collocation_matrix(ku, gu, d) for d in range(3)]
        self._bv = [collocation_matrix(kv, gv, d) for d in range(3)]
        self._ab_u = _banded_form(self._bu[0].toarray(), ku.p)
        self._ab_v = _banded_form(self._bv[0].toarray(), kv.p)
        self._bw = (ku.p, kv.p)
        self._kron_cache: dict[tuple[int, int], scipy.sparse.csr_matrix] = {}

    def _kron(self, du: int, dv: int) -> scipy.sparse.csr_matrix:
        key = (du, dv)
        if key not in self._kron_cache:
            self._kron_cache[key] = scipy.sparse.kron(
                self._bu[du], self._bv[dv], format="csr")
        return self._kron_cache[key]

    @property
    def N(self) -> scipy.sparse.csr_matrix:
        return self._kron(0, 0)

    @property
    def Nx(self) -> scipy.sparse.csr_matrix:
        return self._kron(1, 0)

    @property
    def Ny(self) -> scipy.sparse.csr_matrix:
        return self._kron(0, 1)

    @property
    def Nxx(self) -> scipy.sparse.csr_matrix:
        return self._kron(2, 0)

    @property
    def Nyy(self) -> scipy.sparse.csr_matrix:
        return self._kron(0, 2)

    @property
    def Nxy(self) -> scipy.sparse.csr_matrix:
        return self._kron(1, 1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.space.shape

    def _apply(self, du: int, dv: int, coeffs: np.ndarray) -> np.ndarray:
        # (Bu C) Bv^T via two sparse-dense products
        return self._bv[dv].dot(self._bu[du].dot(coeffs).T).T

    def values(self, coeffs: np.ndarray) -> np.ndarray:
        return self._apply(0, 0, coeffs)

    def dx(self, coeffs: np.ndarray) -> np.ndarray:
        return self._apply(1, 0, coeffs)

    def dy(self, coeffs: np.ndarray) -> np.ndarray:
        return self._apply(0, 1, coeffs)

    def dxx(self, coeffs: np.ndarray) -> np.ndarray:
        return self._apply(2, 0, coeffs)

    def dyy(self, coeffs: np.ndarray) -> np.ndarray:
        return self._apply(0, 2, coeffs)

    def dxy(self, coeffs: np.ndarray) -> np.ndarray:
        return self._apply(1, 1, coeffs)

    def laplacian(self, coeffs: np.ndarray) -> np.ndarray:
        return self.dxx(coeffs) + self.dyy(coeffs)

    def solve(self, values: np.ndarray) -> np.ndarray:
        """Control coefficients interpolating `values` at the Greville points."""
        pu, pv = self._bw
        tmp = scipy.linalg.solve_banded((pu, pu), self._ab_u, values)
        return scipy.linalg.solve_banded((pv, pv), self._ab_v, tmp.T).T


def assemble_collocation_operators(space: SplineSpace2D) -> CollocationOperators:
    """Build all value/derivative collocation operators for `space`."""
    return CollocationOperators(space)


@dataclass
class Field:
    """A scalar field as spline coefficients plus its collocation values."""

    coeffs: np.ndarray
    values: np.ndarray

    @classmethod
    def from_values(cls, ops: CollocationOperators, values: np.ndarray) -> "Field":
        values = np.asarray(values, dtype=float)
        return cls(ops.solve(values), values)

    @classmethod
    def from_coeffs(cls, ops: CollocationOperators, coeffs: np.ndarray) -> "Field":
        coeffs = np.asarray(coeffs, dtype=float)
        return cls(coeffs, ops.values(coeffs))

    def copy(self) -> "Field":
        return Field(self.coeffs.copy(), self.values.copy())
