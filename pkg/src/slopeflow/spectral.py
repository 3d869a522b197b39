"""Grids, transforms, derivatives, dealiased products and norms on the 2pi-periodic torus.

Conventions (fixed once, used everywhere):

* The torus is [0, 2pi)^d sampled on n equispaced points per axis,
  n even, identical on every axis.  Grid values are stored in a C-order
  array of shape (n,)*d whose **last** axis is the first coordinate x1
  (x1 varies fastest in the flattened stream; checkpoints rely on this).
* Spectral coefficients approximate the Fourier integral
  ``fhat(k) = int_T^d f(x) exp(-i k.x) dx`` by the trapezoid rule, i.e.
  ``fhat = fftn(values) * (2pi/n)**d``.  A constant field 1 therefore has
  fhat(0) = (2pi)^d.  The inverse is exact on the grid.
* Wavenumbers per axis run over {-n/2+1, ..., n/2}; the Nyquist bin is
  labelled +n/2 and is zeroed by odd-order derivatives (restores realness).
* Sobolev sums carry the quadrature weight (2pi)^-d so that the
  homogeneous norm of order 0 coincides with the L2 norm (Parseval).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TorusGrid",
    "Field",
    "transform_forward",
    "spectral_derivative",
    "gradient",
    "laplacian",
    "dealiased_cubic",
    "dealiased_product",
    "norms",
    "l2_norm",
    "lp_norm",
    "sup_norm",
    "sobolev_norm",
    "homogeneous_sobolev_norm",
    "grad_sup_norm",
]


@dataclass(frozen=True)
class TorusGrid:
    """Equispaced discretization of the 2pi-periodic torus T^d.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1, 2 or 3.
    n : int
        Points per axis (even, >= 8); total points n**dim.
    """

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError(f"n must be an even integer >= 8, got {self.n}")

    @property
    def spacing(self) -> float:
        return 2.0 * np.pi / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def npoints(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        """Quadrature weight of one grid cell, (2pi/n)^d."""
        return self.spacing**self.dim

    @property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers of one axis in FFT storage order.

        The Nyquist bin (storage index n/2) is labelled +n/2.
        """
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        k[self.n // 2] = self.n // 2
        return k

    def axis_points(self) -> np.ndarray:
        """Grid points of one axis, [0, 2pi)."""
        return np.arange(self.n) * self.spacing

    def coords(self) -> list:
        """Coordinate meshes (X1, .., Xd); Xj varies along array axis dim-1-j."""
        x = self.axis_points()
        out = []
        for j in range(self.dim):
            shape = [1] * self.dim
            shape[self.dim - 1 - j] = self.n
            out.append(np.broadcast_to(x.reshape(shape), self.shape))
        return out

    def wavenumber_mesh(self, coord_axis: int) -> np.ndarray:
        """Wavenumber mesh of coordinate x_{coord_axis+1} over the full lattice."""
        if not 0 <= coord_axis < self.dim:
            raise ValueError(f"axis {coord_axis} out of range for dim {self.dim}")
        shape = [1] * self.dim
        shape[self.dim - 1 - coord_axis] = self.n
        return np.broadcast_to(self.wavenumbers.reshape(shape), self.shape)

    def k_squared(self) -> np.ndarray:
        """|k|^2 over the full lattice."""
        out = np.zeros(self.shape)
        for j in range(self.dim):
            out = out + self.wavenumber_mesh(j) ** 2
        return out


class Field:
    """Real grid function with lazily synchronized spectral coefficients.

    Immutable from the caller's viewpoint: ``values`` and the cached
    spectrum are write-protected; lazy synchronization is lock-guarded so
    concurrent readers see a consistent pair.
    """

    __slots__ = ("grid", "_values", "_spectral", "_lock", "mean_zero")

    def __init__(self, grid: TorusGrid, values: np.ndarray, mean_zero: bool = False,
                 _spectral: np.ndarray | None = None):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid shape {grid.shape}")
        if not np.all(np.isfinite(values)):
            bad = int(np.count_nonzero(~np.isfinite(values)))
            raise ValueError(f"field values contain {bad} non-finite entries")
        values = values.copy()
        values.setflags(write=False)
        self.grid = grid
        self._values = values
        self._spectral = _spectral
        self._lock = threading.Lock()
        self.mean_zero = bool(mean_zero)

    @classmethod
    def from_values(cls, grid: TorusGrid, values: np.ndarray, mean_zero: bool = False) -> "Field":
        return cls(grid, values, mean_zero=mean_zero)

    @classmethod
    def from_spectral(cls, grid: TorusGrid, coefficients: np.ndarray, mean_zero: bool = False) -> "Field":
        """Build a field from quadrature-scaled coefficients (Hermitian input assumed)."""
        coefficients = np.asarray(coefficients, dtype=np.complex128)
        if coefficients.shape != grid.shape:
            raise ValueError(
                f"coefficient shape {coefficients.shape} does not match grid shape {grid.shape}")
        raw = coefficients / grid.cell_volume
        values = np.fft.ifftn(raw)
        scale = np.max(np.abs(values)) or 1.0
        if np.max(np.abs(values.imag)) > 1e-10 * scale:
            raise ValueError("coefficients are not Hermitian-symmetric: inverse transform is complex")
        f = cls(grid, values.real, mean_zero=mean_zero)
        return f

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "Field":
        return cls(grid, np.zeros(grid.shape), mean_zero=True)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def spectral(self) -> np.ndarray:
        """Quadrature-scaled coefficients fhat(k) = fftn(values) * (2pi/n)^d."""
        if self._spectral is None:
            with self._lock:
                if self._spectral is None:
                    spec = np.fft.fftn(self._values) * self.grid.cell_volume
                    spec.setflags(write=False)
                    self._spectral = spec
        return self._spectral

    @property
    def raw_spectrum(self) -> np.ndarray:
        """Unscaled fftn(values); internal helper for integrators."""
        return self.spectral / self.grid.cell_volume

    def mean(self) -> float:
        return float(np.mean(self._values))

    def __repr__(self):
        return (f"Field(dim={self.grid.dim}, n={self.grid.n}, "
                f"sup={sup_norm(self):.3g}, mean_zero={self.mean_zero})")


def transform_forward(f: Field) -> np.ndarray:
    """Quadrature-scaled DFT of the field (see module conventions)."""
    return f.spectral


def _derivative_multiplier(grid: TorusGrid, coord_axis: int, order: int) -> np.ndarray:
    k = grid.wavenumber_mesh(coord_axis).astype(np.float64)
    mult = (1j * k) ** order
    if order % 2 == 1:
        # zero the Nyquist plane so the derivative of a real field stays real
        nyq = [slice(None)] * grid.dim
        nyq[grid.dim - 1 - coord_axis] = grid.n // 2
        mult = mult.copy()
        mult[tuple(nyq)] = 0.0
    return mult


def spectral_derivative(f: Field, axis: int, order: int) -> Field:
    """order-th derivative along coordinate x_{axis+1}, computed mode-wise."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if not 0 <= axis < f.grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {f.grid.dim}")
    mult = _derivative_multiplier(f.grid, axis, order)
    raw = np.fft.fftn(f.values) * mult
    vals = np.fft.ifftn(raw).real
    return Field(f.grid, vals, mean_zero=True)


def gradient(f: Field) -> list:
    """All first derivatives [d/dx1 f, ..., d/dxd f]."""
    return [spectral_derivative(f, j, 1) for j in range(f.grid.dim)]


def laplacian(f: Field) -> Field:
    raw = np.fft.fftn(f.values) * (-f.grid.k_squared())
    return Field(f.grid, np.fft.ifftn(raw).real, mean_zero=True)


# ---------------------------------------------------------------------------
# zero-padding dealiasing (factor 2: exact for cubic products)
# ---------------------------------------------------------------------------

def _pad_axis(raw: np.ndarray, axis: int, n: int) -> np.ndarray:
    """Embed one axis of an unscaled spectrum into 2n bins, splitting Nyquist."""
    shape = list(raw.shape)
    shape[axis] = 2 * n
    out = np.zeros(shape, dtype=np.complex128)
    half = n // 2

    src = [slice(None)] * raw.ndim
    dst = [slice(None)] * raw.ndim

    # k = 0 .. n/2-1
    src[axis] = slice(0, half)
    dst[axis] = slice(0, half)
    out[tuple(dst)] = raw[tuple(src)]
    # negative block k = -n/2+1 .. -1  (source indices n/2+1 .. n-1)
    src[axis] = slice(half + 1, n)
    dst[axis] = slice(2 * n - (half - 1), 2 * n)
    out[tuple(dst)] = raw[tuple(src)]
    # Nyquist bin: split equally between +n/2 and -n/2 on the big grid
    src[axis] = half
    dst[axis] = half
    out[tuple(dst)] = 0.5 * raw[tuple(src)]
    dst[axis] = 2 * n - half
    out[tuple(dst)] = 0.5 * raw[tuple(src)]
    return out


def _truncate_axis(raw_big: np.ndarray, axis: int, n: int) -> np.ndarray:
    """Inverse of _pad_axis: keep modes {-n/2+1..n/2}, folding -n/2 into +n/2."""
    shape = list(raw_big.shape)
    shape[axis] = n
    out = np.zeros(shape, dtype=np.complex128)
    half = n // 2

    src = [slice(None)] * raw_big.ndim
    dst = [slice(None)] * raw_big.ndim

    src[axis] = slice(0, half)
    dst[axis] = slice(0, half)
    out[tuple(dst)] = raw_big[tuple(src)]
    src[axis] = slice(2 * n - (half - 1), 2 * n)
    dst[axis] = slice(half + 1, n)
    out[tuple(dst)] = raw_big[tuple(src)]
    dst[axis] = half
    src[axis] = half
    fold = raw_big[tuple(src)].copy()
    src[axis] = 2 * n - half
    fold = fold + raw_big[tuple(src)]
    out[tuple(dst)] = fold
    return out


def pad_spectrum(raw: np.ndarray, n: int) -> np.ndarray:
    """Zero-pad an unscaled spectrum from n to 2n bins per axis."""
    out = raw
    for ax in range(raw.ndim):
        out = _pad_axis(out, ax, n)
    return out


def truncate_spectrum(raw_big: np.ndarray, n: int) -> np.ndarray:
    """Truncate an unscaled 2n-spectrum back to n bins per axis."""
    out = raw_big
    for ax in range(raw_big.ndim):
        out = _truncate_axis(out, ax, n)
    return out


def to_padded_values(raw: np.ndarray, n: int) -> np.ndarray:
    """Physical values on the 2x-padded grid of a spectrum given on the n-grid."""
    d = raw.ndim
    return np.fft.ifftn(pad_spectrum(raw, n)).real * (2**d)


def from_padded_values(vals_big: np.ndarray, n: int) -> np.ndarray:
    """Unscaled n-grid spectrum of physical values living on the 2x-padded grid."""
    d = vals_big.ndim
    return truncate_spectrum(np.fft.fftn(vals_big), n) / (2**d)


def dealiased_product(fields: list) -> Field:
    """Pointwise product of the given fields on the 2x zero-padded grid.

    Exact (to roundoff) whenever the combined bandwidth of the factors fits
    the padded grid; for up to three factors of full bandwidth this always
    holds.  Factors are multiplied in a canonical byte order so the result
    is bitwise symmetric under permutation of the inputs.
    """
    if not fields:
        raise ValueError("need at least one field")
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid is not grid and f.grid != grid:
            raise ValueError("fields must share a grid")
    n = grid.n
    padded = [to_padded_values(f.raw_spectrum, n) for f in fields]
    padded.sort(key=lambda a: a.tobytes())
    prod = padded[0]
    for arr in padded[1:]:
        prod = prod * arr
    raw = from_padded_values(prod, n)
    vals = np.fft.ifftn(raw).real
    return Field(grid, vals)


def dealiased_cubic(a: Field, b: Field, c: Field) -> Field:
    """Dealiased pointwise product a*b*c (zero padding factor 2)."""
    return dealiased_product([a, b, c])


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def l2_norm(f: Field) -> float:
    return float(np.sqrt(np.sum(f.values**2) * f.grid.cell_volume))


def lp_norm(f: Field, p: float) -> float:
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    return float((np.sum(np.abs(f.values) ** p) * f.grid.cell_volume) ** (1.0 / p))


def sup_norm(f: Field) -> float:
    return float(np.max(np.abs(f.values)))


def _sobolev_sum(f: Field, weight: np.ndarray) -> float:
    spec = f.spectral
    d = f.grid.dim
    return float(np.sqrt(np.sum(weight * np.abs(spec) ** 2) / (2.0 * np.pi) ** d))


def sobolev_norm(f: Field, s: float) -> float:
    """Inhomogeneous Sobolev norm: lattice sum of (1+|k|^{2s})|fhat|^2/(2pi)^d."""
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s}")
    k2 = f.grid.k_squared()
    return _sobolev_sum(f, 1.0 + k2**s)


def homogeneous_sobolev_norm(f: Field, s: float) -> float:
    """Homogeneous norm: sum of |k|^{2s}|fhat|^2/(2pi)^d; equals l2 at s=0."""
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s}")
    k2 = f.grid.k_squared()
    return _sobolev_sum(f, k2**s)


def norms(f: Field, p: float = 4.0, s: float = 1.0) -> dict:
    """All standard norms of the field in one dictionary."""
    return {
        "l2": l2_norm(f),
        "lp": lp_norm(f, p),
        "sup": sup_norm(f),
        "h_s": sobolev_norm(f, s),
        "hdot_s": homogeneous_sobolev_norm(f, s),
    }


def grad_sup_norm(f: Field) -> float:
    """Max over grid points of the Euclidean norm of the spectral gradient."""
    total = np.zeros(f.grid.shape)
    for g in gradient(f):
        total += g.values**2
    return float(np.sqrt(np.max(total)))
