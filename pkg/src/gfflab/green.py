"""Green's function of the simple random walk killed at the box boundary.

The operator G is the covariance of the zero-boundary Gaussian field on
the box: G = (I - P)^-1 where P is the nearest-neighbor averaging kernel
(weight 1/4 per neighbor) restricted to interior sites.  G(x, y) is the
expected number of visits to y of a walk started at x before it first
hits the boundary; it is extended by zero whenever either argument is a
boundary site.

Two representations are provided.  The dense form stores the full
(N-1)^2 x (N-1)^2 matrix and is intended for N up to the configured cap.
The spectral form stores only the kernel eigenvalues

    lam[j, k] = (cos(pi*j/N) + cos(pi*k/N)) / 2,   1 <= j, k <= N-1,

whose orthonormal eigenmodes are the product sines
psi[j,k](x, y) = (2/N) sin(pi*j*x/N) sin(pi*k*y/N); applying G is then
two fast sine transforms around a diagonal scaling by 1/(1 - lam).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse as sparse
from scipy.sparse.linalg import splu

from .lattice import BoxSpec, Site

DEFAULT_DENSE_CAP = 64


class DenseSizeError(ValueError):
    """Dense representation requested above the configured size cap."""


class RegionShapeError(ValueError):
    """Harmonic-extension region is not a full sub-rectangle."""


class BoundaryDataError(ValueError):
    """Harmonic-extension data does not cover the region boundary exactly."""


def _check_dense_cap(box: BoxSpec, dense_cap: int) -> None:
    if box.side > dense_cap:
        raise DenseSizeError(
            f"side {box.side} exceeds the dense cap {dense_cap} "
            f"({box.interior_count}^2 matrix entries); use the spectral form"
        )


def _walk_eigenvalues(side: int) -> np.ndarray:
    j = np.arange(1, side)
    c = np.cos(np.pi * j / side)
    return (c[:, None] + c[None, :]) / 2.0


def _sine_basis(side: int) -> np.ndarray:
    """Orthonormal 1D sine modes: S[x-1, j-1] = sqrt(2/N) sin(pi j x / N)."""
    grid = np.arange(1, side)
    return np.sqrt(2.0 / side) * np.sin(np.pi * np.outer(grid, grid) / side)


class GreenOperator:
    """Covariance operator of the zero-boundary field on a dyadic box.

    Construct through :func:`green_dense` or :func:`green_spectral`.
    """

    def __init__(self, box: BoxSpec, *, matrix: np.ndarray | None = None,
                 eigenvalues: np.ndarray | None = None):
        if (matrix is None) == (eigenvalues is None):
            raise ValueError("provide exactly one of matrix or eigenvalues")
        self.box = box
        self._matrix = matrix
        self._eigenvalues = eigenvalues
        self._chol: np.ndarray | None = None

    @property
    def kind(self) -> str:
        return "dense" if self._matrix is not None else "spectral"

    @property
    def eigenvalues(self) -> np.ndarray:
        """Walk-kernel eigenvalues lam[j-1, k-1]; Green eigenvalues are 1/(1-lam)."""
        if self._eigenvalues is None:
            self._eigenvalues = _walk_eigenvalues(self.box.side)
        return self._eigenvalues

    def matrix(self) -> np.ndarray:
        """Full matrix over interior sites (reconstructed for spectral form)."""
        if self._matrix is not None:
            return self._matrix
        side = self.box.side
        basis = np.kron(_sine_basis(side), _sine_basis(side))
        weights = 1.0 / (1.0 - self.eigenvalues.ravel())
        return (basis * weights) @ basis.T

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Apply G to a vector over interior sites (flat or (N-1, N-1))."""
        m = self.box.side - 1
        grid = np.asarray(vec, dtype=np.float64).reshape(m, m)
        if self._matrix is not None:
            out = (self._matrix @ grid.ravel()).reshape(m, m)
        else:
            coef = scipy.fft.dstn(grid, type=1, norm="ortho")
            coef /= 1.0 - self.eigenvalues
            out = scipy.fft.dstn(coef, type=1, norm="ortho")
        return out.reshape(np.shape(vec))

    def entry(self, a: Site, b: Site) -> float:
        """G(a, b); zero if either site is on the boundary."""
        if self.box.is_boundary(a) or self.box.is_boundary(b):
            return 0.0
        side = self.box.side
        if self._matrix is not None:
            return float(self._matrix[self.box.interior_index(a),
                                      self.box.interior_index(b)])
        j = np.arange(1, side)
        scale = 2.0 / side

        def mode(site):
            x, y = site
            return (np.sin(np.pi * j * x / side),
                    np.sin(np.pi * j * y / side))

        ax, ay = mode(a)
        bx, by = mode(b)
        weights = 1.0 / (1.0 - self.eigenvalues)
        return float(scale ** 2 * np.einsum(
            "j,k,j,k,jk->", ax, ay, bx, by, weights))

    def diagonal_grid(self) -> np.ndarray:
        """Variances G(z, z) on the interior as an (N-1, N-1) grid."""
        m = self.box.side - 1
        if self._matrix is not None:
            return np.diag(self._matrix).reshape(m, m).copy()
        side = self.box.side
        grid = np.arange(1, side)
        sin2 = (2.0 / side) * np.sin(np.pi * np.outer(grid, grid) / side) ** 2
        weights = 1.0 / (1.0 - self.eigenvalues)
        return sin2 @ weights @ sin2.T

    def cholesky(self) -> np.ndarray:
        """Lower-triangular factor L with L L^T = G (dense form only)."""
        if self._matrix is None:
            raise DenseSizeError("cholesky factor requires the dense form")
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self._matrix)
            except np.linalg.LinAlgError as exc:
                raise ValueError(
                    "covariance matrix is not positive definite") from exc
        return self._chol


def green_dense(box: BoxSpec, dense_cap: int = DEFAULT_DENSE_CAP) -> GreenOperator:
    """Exact dense Green matrix (I - P)^-1 over interior sites."""
    if box.side < 2:
        raise ValueError("box side must be at least 2")
    _check_dense_cap(box, dense_cap)
    m = box.side - 1
    adj = _path_adjacency(m)
    eye = sparse.identity(m)
    op = sparse.identity(m * m) - 0.25 * (
        sparse.kron(adj, eye) + sparse.kron(eye, adj))
    factor = scipy.linalg.cho_factor(op.toarray())
    g = scipy.linalg.cho_solve(factor, np.eye(m * m))
    g = (g + g.T) / 2.0
    return GreenOperator(box, matrix=g)


def green_spectral(box: BoxSpec) -> GreenOperator:
    """Spectral Green operator from the closed-form kernel eigenvalues."""
    if box.side < 2:
        raise ValueError("box side must be at least 2")
    return GreenOperator(box, eigenvalues=_walk_eigenvalues(box.side))


def variance_profile(g: GreenOperator) -> dict[Site, float]:
    """Map from each interior site to its variance G(z, z)."""
    diag = g.diagonal_grid()
    side = g.box.side
    return {(x, y): float(diag[x - 1, y - 1])
            for x in range(1, side) for y in range(1, side)}


# ---------------------------------------------------------------------------
# Discrete Dirichlet solves on rectangular windows.
# ---------------------------------------------------------------------------

def _path_adjacency(m: int) -> sparse.csr_matrix:
    if m <= 1:
        return sparse.csr_matrix((m, m))
    ones = np.ones(m - 1)
    return sparse.diags([ones, ones], [-1, 1], format="csr")


@lru_cache(maxsize=64)
def _window_solver(wx: int, wy: int):
    """Factorized 5-point Dirichlet operator for a (wx+1) x (wy+1) window."""
    p, q = wx - 1, wy - 1
    eye_q = sparse.identity(q)
    eye_p = sparse.identity(p)
    op = sparse.identity(p * q) - 0.25 * (
        sparse.kron(_path_adjacency(p), eye_q)
        + sparse.kron(eye_p, _path_adjacency(q)))
    return splu(op.tocsc())


def dirichlet_window_solve(window: np.ndarray) -> np.ndarray:
    """Solve the discrete mean-value problem inside a rectangular window.

    ``window`` has shape (wx+1, wy+1) with boundary values filled on its
    perimeter (corners are never read).  Returns the (wx-1, wy-1) interior
    satisfying h = average of the four neighbors at every interior site.
    """
    wx, wy = window.shape[0] - 1, window.shape[1] - 1
    if wx < 2 or wy < 2:
        return np.zeros((max(wx - 1, 0), max(wy - 1, 0)))
    rhs = np.zeros((wx - 1, wy - 1))
    rhs[0, :] += window[0, 1:wy]
    rhs[-1, :] += window[wx, 1:wy]
    rhs[:, 0] += window[1:wx, 0]
    rhs[:, -1] += window[1:wx, wy]
    rhs *= 0.25
    sol = _window_solver(wx, wy).solve(rhs.ravel())
    return sol.reshape(wx - 1, wy - 1)


def _region_bounds(region: set[Site]) -> tuple[int, int, int, int]:
    xs = [s[0] for s in region]
    ys = [s[1] for s in region]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    if len(region) != (x1 - x0 + 1) * (y1 - y0 + 1):
        raise RegionShapeError(
            "region does not fill its bounding rectangle "
            f"[{x0},{x1}]x[{y0},{y1}]")
    return x0, x1, y0, y1


def region_boundary(region) -> set[Site]:
    """Discrete boundary of a rectangular region: the sites adjacent to it.

    Corners of the enclosing window are excluded; they have no neighbor
    inside the region.
    """
    region = set(region)
    x0, x1, y0, y1 = _region_bounds(region)
    out: set[Site] = set()
    for y in range(y0, y1 + 1):
        out.add((x0 - 1, y))
        out.add((x1 + 1, y))
    for x in range(x0, x1 + 1):
        out.add((x, y0 - 1))
        out.add((x, y1 + 1))
    return out


def harmonic_extension(box: BoxSpec, region, data: dict[Site, float]) -> dict[Site, float]:
    """Discrete-harmonic extension of boundary data into a rectangular region.

    ``region`` is a set of interior sites forming a full sub-rectangle of
    the box; ``data`` assigns a value to every site of its discrete
    boundary, exactly once.  Returns the solved values on the region.
    """
    region = set(region)
    if not region:
        raise RegionShapeError("region is empty")
    for site in region:
        if not box.is_interior(site):
            raise RegionShapeError(f"region site {site} is not interior to the box")
    x0, x1, y0, y1 = _region_bounds(region)
    boundary = region_boundary(region)
    given = set(data)
    if given != boundary:
        missing = sorted(boundary - given)
        extra = sorted(given - boundary)
        raise BoundaryDataError(
            f"boundary data mismatch: missing {missing[:4]}{'...' if len(missing) > 4 else ''}, "
            f"extra {extra[:4]}{'...' if len(extra) > 4 else ''}")

    window = np.zeros((x1 - x0 + 3, y1 - y0 + 3))
    for (bx, by), val in data.items():
        window[bx - x0 + 1, by - y0 + 1] = val
    if window.shape[0] - 1 >= 2 and window.shape[1] - 1 >= 2:
        interior = dirichlet_window_solve(window)
        window[1:-1, 1:-1] = interior
    return {(x, y): float(window[x - x0 + 1, y - y0 + 1]) for (x, y) in region}


# ---------------------------------------------------------------------------
# CSV export: rows "x1,y1,x2,y2,g", row-major over interior sites, values
# printed with 12 significant digits.  The variance profile uses the same
# schema with (x2, y2) = (x1, y1).
# ---------------------------------------------------------------------------

def write_green_csv(g: GreenOperator, fh, profile: bool = False) -> None:
    sites = g.box.interior_sites()
    fh.write("x1,y1,x2,y2,g\n")
    if profile:
        diag = g.diagonal_grid()
        for (x, y) in sites:
            fh.write(f"{x},{y},{x},{y},{diag[x - 1, y - 1]:.12g}\n")
        return
    mat = g.matrix()
    for i, (x1, y1) in enumerate(sites):
        for k, (x2, y2) in enumerate(sites):
            fh.write(f"{x1},{y1},{x2},{y2},{mat[i, k]:.12g}\n")
