"""Dyadic lattice boxes, sites, and field containers.

The geometry throughout is the square box of side N = 2^n: all sites
(x, y) with integer coordinates in [0, N].  Sites with x in {0, N} or
y in {0, N} form the boundary; the remaining (N-1)^2 sites are interior.
A Field assigns one real value to every site and is identically zero on
the boundary.

Sites are plain (x, y) tuples.  Interior sites are enumerated row-major
in x then y, i.e. flat index (x-1)*(N-1) + (y-1); every matrix or vector
indexed "over interior sites" in this package uses that order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

Site = tuple[int, int]


@dataclass(frozen=True)
class BoxSpec:
    """Dyadic box of side N = 2^n."""

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"level exponent must be >= 0, got {self.n}")

    @property
    def side(self) -> int:
        return 1 << self.n

    @property
    def interior_count(self) -> int:
        return (self.side - 1) ** 2

    @classmethod
    def from_side(cls, side: int) -> "BoxSpec":
        if side < 1 or side & (side - 1):
            raise ValueError(f"box side must be a power of two, got {side}")
        return cls(side.bit_length() - 1)

    def contains(self, site: Site) -> bool:
        x, y = site
        return 0 <= x <= self.side and 0 <= y <= self.side

    def is_boundary(self, site: Site) -> bool:
        x, y = site
        return x in (0, self.side) or y in (0, self.side)

    def is_interior(self, site: Site) -> bool:
        return self.contains(site) and not self.is_boundary(site)

    def interior_sites(self) -> list[Site]:
        """All interior sites in flat (row-major) order."""
        side = self.side
        return [(x, y) for x in range(1, side) for y in range(1, side)]

    def interior_index(self, site: Site) -> int:
        if not self.is_interior(site):
            raise ValueError(f"{site} is not interior to a box of side {self.side}")
        x, y = site
        return (x - 1) * (self.side - 1) + (y - 1)


@dataclass
class Field:
    """One realization of a lattice field: values[x, y] over all of the box.

    Boundary values must be exactly zero.
    """

    box: BoxSpec
    values: np.ndarray

    def __post_init__(self):
        side = self.box.side
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (side + 1, side + 1):
            raise ValueError(
                f"field shape {self.values.shape} does not match box side {side}"
            )
        edges = (self.values[0, :], self.values[-1, :],
                 self.values[:, 0], self.values[:, -1])
        if any(e.any() for e in edges):
            raise ValueError("field values on the boundary must be exactly zero")

    @classmethod
    def zeros(cls, box: BoxSpec) -> "Field":
        return cls(box, np.zeros((box.side + 1, box.side + 1)))

    @classmethod
    def from_interior(cls, box: BoxSpec, interior: np.ndarray) -> "Field":
        side = box.side
        interior = np.asarray(interior, dtype=np.float64)
        if interior.shape != (side - 1, side - 1):
            raise ValueError(
                f"interior shape {interior.shape} does not match box side {side}"
            )
        values = np.zeros((side + 1, side + 1))
        values[1:-1, 1:-1] = interior
        return cls(box, values)

    @property
    def interior(self) -> np.ndarray:
        """(N-1) x (N-1) view of the interior values."""
        return self.values[1:-1, 1:-1]

    def __getitem__(self, site: Site) -> float:
        return float(self.values[site])

    def __sub__(self, other: "Field") -> "Field":
        if other.box != self.box:
            raise ValueError("fields live on different boxes")
        return Field(self.box, self.values - other.values)

    def __add__(self, other: "Field") -> "Field":
        if other.box != self.box:
            raise ValueError("fields live on different boxes")
        return Field(self.box, self.values + other.values)


# ---------------------------------------------------------------------------
# Field serialization.  Binary layout: int32 little-endian side N, then
# (N+1)^2 float64 little-endian values in row-major (x, y) order.  CSV
# layout: header "x,y,value", one row per site.
# ---------------------------------------------------------------------------

def write_field_binary(field: Field, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<i", field.box.side))
        fh.write(field.values.astype("<f8").tobytes(order="C"))


def read_field_binary(path) -> Field:
    with open(path, "rb") as fh:
        (side,) = struct.unpack("<i", fh.read(4))
        box = BoxSpec.from_side(side)
        raw = fh.read(8 * (side + 1) ** 2)
    values = np.frombuffer(raw, dtype="<f8").reshape(side + 1, side + 1).copy()
    return Field(box, values)


def write_field_csv(field: Field, path) -> None:
    side = field.box.side
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for x in range(side + 1):
            for y in range(side + 1):
                fh.write(f"{x},{y},{float(field.values[x, y])!r}\n")


def read_field_csv(path) -> Field:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "x,y,value":
            raise ValueError(f"unexpected field CSV header: {header!r}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    side = max(int(r[0]) for r in rows)
    box = BoxSpec.from_side(side)
    values = np.zeros((side + 1, side + 1))
    for xs, ys, vs in rows:
        values[int(xs), int(ys)] = float(vs)
    return Field(box, values)
