"""Dyadic conditioning structure of the zero-boundary Gaussian field.

Level k cuts the box of side N = 2^n along the horizontal and vertical
lines through the multiples of N/2^k, i.e. through the dyadic coordinate
sets A_1, ..., A_k.  Conditioning the field on its values along those
lines replaces it, inside each of the 4^k sub-boxes of side N/2^k, by
the discrete-harmonic extension of the line values; the residual is an
independent zero-boundary field of the sub-box, one per sub-box.
Iterating over k = 1..n telescopes the field into independent per-level
increments.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .green import DEFAULT_DENSE_CAP, dirichlet_window_solve, green_dense
from .lattice import BoxSpec, Field


@dataclass(frozen=True)
class DyadicSet:
    """Coordinates (2l+1) * N / 2^k: the lines newly cut at level k."""

    box: BoxSpec
    k: int
    members: frozenset[int]


def dyadic_set(box: BoxSpec, k: int) -> DyadicSet:
    if not 1 <= k <= box.n:
        raise ValueError(f"level {k} out of range [1, {box.n}]")
    step = box.side >> k
    members = frozenset((2 * l + 1) * step for l in range(1 << (k - 1)))
    return DyadicSet(box, k, members)


def level_line_coords(box: BoxSpec, k: int) -> list[int]:
    """All line coordinates active at level k: multiples of N/2^k in [0, N]."""
    if not 1 <= k <= box.n:
        raise ValueError(f"level {k} out of range [1, {box.n}]")
    step = box.side >> k
    return list(range(0, box.side + 1, step))


def condition_on_level(field: Field, k: int) -> tuple[Field, Field]:
    """Split a field into (conditional mean, residual) at level k.

    The conditional mean keeps the field's values on the level-k lines and
    replaces each sub-box interior by the harmonic extension of its
    perimeter values; the residual vanishes on all conditioning lines.
    """
    box = field.box
    if not 1 <= k <= box.n:
        raise ValueError(f"level {k} out of range [1, {box.n}]")
    side = box.side
    m = side >> k
    mean = np.zeros_like(field.values)
    for c in range(0, side + 1, m):
        mean[c, :] = field.values[c, :]
        mean[:, c] = field.values[:, c]
    if m >= 2:
        for a in range(side // m):
            for b in range(side // m):
                window = field.values[a * m:(a + 1) * m + 1,
                                      b * m:(b + 1) * m + 1]
                mean[a * m + 1:(a + 1) * m,
                     b * m + 1:(b + 1) * m] = dirichlet_window_solve(window)
    residual = field.values - mean
    return Field(box, mean), Field(box, residual)


def residual_subfields(field: Field) -> list[Field]:
    """Cut the level-1 residual into its four half-box fields.

    Sub-boxes are ordered row-major over (a, b) in {0, 1}^2; sub-box
    (a, b) maps global site (x, y) to local (x - a*N/2, y - b*N/2).
    """
    box = field.box
    if box.n < 1:
        raise ValueError("need side >= 2 to split")
    _, residual = condition_on_level(field, 1)
    m = box.side // 2
    sub_box = BoxSpec(box.n - 1)
    out = []
    for a in (0, 1):
        for b in (0, 1):
            values = residual.values[a * m:(a + 1) * m + 1,
                                     b * m:(b + 1) * m + 1].copy()
            out.append(Field(sub_box, values))
    return out


def line_site_mask(box: BoxSpec, k: int) -> np.ndarray:
    """Boolean mask over interior sites (flat order) lying on level-k lines."""
    m = box.side >> k
    coords = np.arange(1, box.side)
    on_line = (coords % m) == 0
    return (on_line[:, None] | on_line[None, :]).ravel()


def exact_conditional_covariance(box: BoxSpec, k: int,
                                 dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Covariance of the level-k residual, by direct Gaussian conditioning.

    Returns G - G[:, L] G[L, L]^-1 G[L, :] over interior sites, where L is
    the set of interior sites on the level-k lines.  Rows and columns in L
    vanish; the remaining matrix is block diagonal over sub-boxes with
    blocks equal to the sub-box Green matrix.
    """
    g = green_dense(box, dense_cap).matrix()
    lines = np.where(line_site_mask(box, k))[0]
    gl = g[np.ix_(lines, lines)]
    cross = g[lines, :]
    h = scipy.linalg.solve(gl, cross, assume_a="pos")
    res = g - cross.T @ h
    return (res + res.T) / 2.0


def subbox_interior_indices(box: BoxSpec, k: int, a: int, b: int) -> np.ndarray:
    """Flat interior indices of sub-box (a, b), in the sub-box's own order."""
    m = box.side >> k
    if not (0 <= a < box.side // m and 0 <= b < box.side // m):
        raise ValueError(f"sub-box ({a}, {b}) out of range at level {k}")
    cols = box.side - 1
    idx = [(a * m + lx - 1) * cols + (b * m + ly - 1)
           for lx in range(1, m) for ly in range(1, m)]
    return np.asarray(idx, dtype=np.intp)


def markov_block_check(box: BoxSpec, k: int = 1,
                       dense_cap: int = DEFAULT_DENSE_CAP) -> tuple[float, float]:
    """Max deviation of residual-covariance blocks from the sub-box Green
    matrix, and max magnitude outside the diagonal blocks."""
    res = exact_conditional_covariance(box, k, dense_cap)
    m = box.side >> k
    per_side = box.side // m
    off = res.copy()
    block_dev = 0.0
    sub_green = green_dense(BoxSpec(box.n - k), dense_cap).matrix() if m >= 2 else None
    for a in range(per_side):
        for b in range(per_side):
            idx = subbox_interior_indices(box, k, a, b)
            if idx.size == 0:
                continue
            block = res[np.ix_(idx, idx)]
            block_dev = max(block_dev, float(np.abs(block - sub_green).max()))
            off[np.ix_(idx, idx)] = 0.0
    return block_dev, float(np.abs(off).max())


@dataclass
class Decomposition:
    """Telescoped field: per-level increments and per-level residuals.

    ``levels[k-1]`` is the level-k increment (conditional mean at level k
    minus conditional mean at level k-1, with the level-0 mean zero); the
    increments sum back to the original field.  ``residuals[k-1]`` is what
    is left after conditioning at level k.
    """

    box: BoxSpec
    levels: list[Field]
    residuals: list[Field]

    def total(self) -> Field:
        acc = np.zeros((self.box.side + 1, self.box.side + 1))
        for lev in self.levels:
            acc += lev.values
        return Field(self.box, acc)

    def subfields(self, k: int) -> list[Field]:
        """Level-k residual cut into its 4^k sub-box fields (row-major)."""
        if not 1 <= k <= self.box.n:
            raise ValueError(f"level {k} out of range [1, {self.box.n}]")
        m = self.box.side >> k
        sub_box = BoxSpec(self.box.n - k)
        residual = self.residuals[k - 1].values
        out = []
        for a in range(self.box.side // m):
            for b in range(self.box.side // m):
                values = residual[a * m:(a + 1) * m + 1,
                                  b * m:(b + 1) * m + 1].copy()
                out.append(Field(sub_box, values))
        return out


def decompose(field: Field) -> Decomposition:
    """Telescope a field into its independent per-level increments."""
    box = field.box
    if box.n < 1:
        raise ValueError("need side >= 2 to decompose")
    levels: list[Field] = []
    residuals: list[Field] = []
    prev = np.zeros_like(field.values)
    for k in range(1, box.n + 1):
        mean, residual = condition_on_level(field, k)
        levels.append(Field(box, mean.values - prev))
        residuals.append(residual)
        prev = mean.values
    return Decomposition(box, levels, residuals)


@lru_cache(maxsize=32)
def conditional_mean_matrix(n: int, k: int) -> np.ndarray:
    """Dense linear map over interior sites sending a field to its level-k
    conditional mean.  Built column by column; intended for small boxes."""
    box = BoxSpec(n)
    m2 = box.interior_count
    if m2 > 64 * 64:
        raise ValueError("conditional-mean matrix is intended for small boxes")
    out = np.zeros((m2, m2))
    for i in range(m2):
        basis = np.zeros(m2)
        basis[i] = 1.0
        field = Field.from_interior(box, basis.reshape(box.side - 1, -1))
        mean, _ = condition_on_level(field, k)
        out[:, i] = mean.interior.ravel()
    return out


def level_map(box: BoxSpec, k: int) -> np.ndarray:
    """Dense linear map over interior sites producing the level-k increment."""
    prev = (conditional_mean_matrix(box.n, k - 1) if k > 1
            else np.zeros((box.interior_count,) * 2))
    return conditional_mean_matrix(box.n, k) - prev


def write_decomposition_csv(dec: Decomposition, fh) -> None:
    """Field CSV rows for every increment, with a trailing level column."""
    side = dec.box.side
    fh.write("x,y,value,level\n")
    for k, lev in enumerate(dec.levels, start=1):
        for x in range(side + 1):
            for y in range(side + 1):
                fh.write(f"{x},{y},{float(lev.values[x, y])!r},{k}\n")
