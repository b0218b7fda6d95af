"""Uniform tensor meshes and trilinear interpolation.

Spatial grids live on [-L, L]^2 x [0, x3_max].  Vector fields are stored
as (nx, ny, nz, 3) arrays.  Lookups outside the mesh return 0 (fields are
extrapolated as zero beyond the box; the decay of all sources keeps the
truncation monitored elsewhere).
"""

from dataclasses import dataclass

import numpy as np

from ._accel import njit


@dataclass(frozen=True)
class Mesh3:
    lo: tuple
    hi: tuple
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(c) for c in self.lo))
        object.__setattr__(self, "hi", tuple(float(c) for c in self.hi))
        object.__setattr__(self, "shape", tuple(int(c) for c in self.shape))
        if any(n < 2 for n in self.shape):
            raise ValueError("mesh needs at least 2 nodes per axis")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("mesh hi must exceed lo")

    @classmethod
    def box(cls, L, x3_max, n):
        n = tuple(n)
        return cls(lo=(-L, -L, 0.0), hi=(L, L, x3_max), shape=n)

    @property
    def h(self):
        return tuple(
            (hi - lo) / (n - 1) for lo, hi, n in zip(self.lo, self.hi, self.shape)
        )

    def axes(self):
        return [
            np.linspace(lo, hi, n)
            for lo, hi, n in zip(self.lo, self.hi, self.shape)
        ]

    def nodes(self):
        """All mesh nodes as an (N, 3) array in C order."""
        ax = self.axes()
        X, Y, Z = np.meshgrid(*ax, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def zeros_vector(self):
        return np.zeros(self.shape + (3,))

    def zeros_scalar(self):
        return np.zeros(self.shape)

    def pack(self):
        """Mesh spec as a flat float64 array for jitted kernels."""
        return np.array(
            [*self.lo, *self.h, *(float(n) for n in self.shape)], dtype=np.float64
        )

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, d):
        return cls(lo=tuple(d["lo"]), hi=tuple(d["hi"]), shape=tuple(d["shape"]))


@njit(cache=True, fastmath=True)
def interp_vec3(grid, spec, x0, x1, x2, out):
    """Trilinear interpolation of an (nx, ny, nz, 3) grid; zero outside."""
    n0 = int(spec[6])
    n1 = int(spec[7])
    n2 = int(spec[8])
    f0 = (x0 - spec[0]) / spec[3]
    f1 = (x1 - spec[1]) / spec[4]
    f2 = (x2 - spec[2]) / spec[5]
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    if f0 < 0.0 or f1 < 0.0 or f2 < 0.0:
        return
    if f0 > n0 - 1 or f1 > n1 - 1 or f2 > n2 - 1:
        return
    i0 = int(f0)
    i1 = int(f1)
    i2 = int(f2)
    if i0 > n0 - 2:
        i0 = n0 - 2
    if i1 > n1 - 2:
        i1 = n1 - 2
    if i2 > n2 - 2:
        i2 = n2 - 2
    a = f0 - i0
    b = f1 - i1
    c = f2 - i2
    for k in range(3):
        v00 = grid[i0, i1, i2, k] * (1 - a) + grid[i0 + 1, i1, i2, k] * a
        v10 = grid[i0, i1 + 1, i2, k] * (1 - a) + grid[i0 + 1, i1 + 1, i2, k] * a
        v01 = grid[i0, i1, i2 + 1, k] * (1 - a) + grid[i0 + 1, i1, i2 + 1, k] * a
        v11 = grid[i0, i1 + 1, i2 + 1, k] * (1 - a) + grid[i0 + 1, i1 + 1, i2 + 1, k] * a
        out[k] = (v00 * (1 - b) + v10 * b) * (1 - c) + (v01 * (1 - b) + v11 * b) * c


@njit(cache=True)
def interp_scalar(grid, spec, x0, x1, x2):
    """Trilinear interpolation of an (nx, ny, nz) grid; zero outside."""
    n0 = int(spec[6])
    n1 = int(spec[7])
    n2 = int(spec[8])
    f0 = (x0 - spec[0]) / spec[3]
    f1 = (x1 - spec[1]) / spec[4]
    f2 = (x2 - spec[2]) / spec[5]
    if f0 < 0.0 or f1 < 0.0 or f2 < 0.0:
        return 0.0
    if f0 > n0 - 1 or f1 > n1 - 1 or f2 > n2 - 1:
        return 0.0
    i0 = int(f0)
    i1 = int(f1)
    i2 = int(f2)
    if i0 > n0 - 2:
        i0 = n0 - 2
    if i1 > n1 - 2:
        i1 = n1 - 2
    if i2 > n2 - 2:
        i2 = n2 - 2
    a = f0 - i0
    b = f1 - i1
    c = f2 - i2
    v00 = grid[i0, i1, i2] * (1 - a) + grid[i0 + 1, i1, i2] * a
    v10 = grid[i0, i1 + 1, i2] * (1 - a) + grid[i0 + 1, i1 + 1, i2] * a
    v01 = grid[i0, i1, i2 + 1] * (1 - a) + grid[i0 + 1, i1, i2 + 1] * a
    v11 = grid[i0, i1 + 1, i2 + 1] * (1 - a) + grid[i0 + 1, i1 + 1, i2 + 1] * a
    return (v00 * (1 - b) + v10 * b) * (1 - c) + (v01 * (1 - b) + v11 * b) * c


@njit(cache=True)
def interp_plane_vec(grid, spec, x0, x1, out):
    """Bilinear interpolation of an (nx, ny, m) boundary-plane grid."""
    n0 = int(spec[6])
    n1 = int(spec[7])
    f0 = (x0 - spec[0]) / spec[3]
    f1 = (x1 - spec[1]) / spec[4]
    m = grid.shape[2]
    for k in range(m):
        out[k] = 0.0
    if f0 < 0.0 or f1 < 0.0 or f0 > n0 - 1 or f1 > n1 - 1:
        return
    i0 = int(f0)
    i1 = int(f1)
    if i0 > n0 - 2:
        i0 = n0 - 2
    if i1 > n1 - 2:
        i1 = n1 - 2
    a = f0 - i0
    b = f1 - i1
    for k in range(m):
        v0 = grid[i0, i1, k] * (1 - a) + grid[i0 + 1, i1, k] * a
        v1 = grid[i0, i1 + 1, k] * (1 - a) + grid[i0 + 1, i1 + 1, k] * a
        out[k] = v0 * (1 - b) + v1 * b
