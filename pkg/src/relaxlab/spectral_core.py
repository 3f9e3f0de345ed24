"""Periodic-grid spectral fields and the discrete Littlewood-Paley toolkit.

Fields live on a uniform grid over the torus [0, L)^d and are stored as
complex Fourier coefficients; all frequency bookkeeping is done in physical
wavenumber units kappa = 2*pi*k/L so that dyadic scales 2^j are physically
meaningful regardless of the box size.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_trapz = getattr(np, "trapezoid", None) or np.trapz

__all__ = [
    "Grid",
    "SpectralField",
    "DyadicScheme",
    "NormSeries",
    "DyadicRangeError",
    "GridMismatchError",
    "dyadic_block",
    "lowfreq_cutoff",
    "besov_norm",
    "chemin_lerner_norm",
    "spectral_derivative",
    "spectral_laplacian",
    "nonlinear_product",
    "lp_norm",
    "block_lp_norms",
    "save_field",
    "load_field",
    "export_block_norms_csv",
]


class DyadicRangeError(ValueError):
    """Requested dyadic index outside the resolvable window."""


class GridMismatchError(ValueError):
    """Operands live on different grids."""


# ---------------------------------------------------------------------------
# smooth cutoff profiles

def _bump(s: np.ndarray) -> np.ndarray:
    """C-infinity monotone step: 1 for s<=0, 0 for s>=1."""
    s = np.asarray(s, dtype=float)
    out = np.ones_like(s)
    out[s >= 1.0] = 0.0
    mid = (s > 0.0) & (s < 1.0)
    sm = s[mid]
    a = np.exp(-1.0 / (1.0 - sm))
    b = np.exp(-1.0 / sm)
    out[mid] = a / (a + b)
    return out


def chi_profile(xi) -> np.ndarray:
    """Radial non-increasing cutoff: 1 on |xi|<=3/4, 0 on |xi|>=4/3."""
    return _bump((np.abs(xi) - 0.75) / (4.0 / 3.0 - 0.75))


def phi_profile(xi) -> np.ndarray:
    """Annulus profile chi(xi/2) - chi(xi), supported on 3/4<=|xi|<=8/3."""
    xi = np.abs(xi)
    return chi_profile(xi / 2.0) - chi_profile(xi)


# ---------------------------------------------------------------------------
# grid

@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid: d dimensions, N points per axis, box length L."""

    d: int
    N: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if self.N < 8 or (self.N & (self.N - 1)) != 0:
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def kappa_min(self) -> float:
        """Smallest nonzero physical wavenumber, 2*pi/L."""
        return 2.0 * np.pi / self.L

    def modes(self) -> np.ndarray:
        """Integer mode numbers along one axis in FFT order."""
        return np.fft.fftfreq(self.N, d=1.0 / self.N)

    def kappa_axes(self) -> list:
        """Physical wavenumber arrays, one per axis, broadcastable to shape."""
        k1 = self.modes() * self.kappa_min
        out = []
        for ax in range(self.d):
            sh = [1] * self.d
            sh[ax] = self.N
            out.append(k1.reshape(sh))
        return out

    def kappa_mag(self) -> np.ndarray:
        """|kappa| on the full lattice."""
        return _grid_tables(self.d, self.N, self.L)[0]

    def dealias_mask(self) -> np.ndarray:
        """True where every |mode| <= N/3 (2/3-rule survivors)."""
        return _grid_tables(self.d, self.N, self.L)[1]

    @property
    def kappa_dealias(self) -> float:
        """Per-axis dealiasing cutoff in physical units."""
        return self.kappa_min * np.floor(self.N / 3.0)

    @property
    def kappa_grid_max(self) -> float:
        """Largest |kappa| among dealias survivors."""
        return float(_grid_tables(self.d, self.N, self.L)[2])

    def coords(self) -> list:
        """Physical coordinate arrays, one per axis, broadcastable."""
        x1 = np.arange(self.N) * self.dx
        out = []
        for ax in range(self.d):
            sh = [1] * self.d
            sh[ax] = self.N
            out.append(x1.reshape(sh))
        return out


@lru_cache(maxsize=32)
def _grid_tables(d: int, N: int, L: float):
    k1 = np.fft.fftfreq(N, d=1.0 / N)
    kmin = 2.0 * np.pi / L
    mag2 = np.zeros((N,) * d)
    keep = np.ones((N,) * d, dtype=bool)
    cut = np.floor(N / 3.0)
    for ax in range(d):
        sh = [1] * d
        sh[ax] = N
        k = k1.reshape(sh)
        mag2 = mag2 + (k * kmin) ** 2
        keep = keep & (np.abs(k) <= cut)
    mag = np.sqrt(mag2)
    kmax = mag[keep].max()
    return mag, keep, kmax


# ---------------------------------------------------------------------------
# spectral fields

class SpectralField:
    """n-component complex Fourier coefficients on a Grid.

    coeffs has shape (n,) + (N,)*d in numpy FFT layout; coeffs[:, 0, ...]
    is the mean. Hermitian symmetry (real physical values) is preserved by
    every operation in this module.
    """

    __slots__ = ("grid", "coeffs")

    def __init__(self, grid: Grid, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape[1:] != grid.shape:
            raise ValueError(f"coefficient shape {coeffs.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.coeffs = coeffs

    # -- constructors ------------------------------------------------------
    @classmethod
    def zero(cls, grid: Grid, n: int = 1) -> "SpectralField":
        return cls(grid, np.zeros((n,) + grid.shape, dtype=complex))

    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray, dealias: bool = True) -> "SpectralField":
        values = np.asarray(values, dtype=float)
        if values.shape == grid.shape:
            values = values[None, ...]
        c = np.fft.fftn(values, axes=tuple(range(1, values.ndim))) / grid.N**grid.d
        f = cls(grid, c)
        return f.dealias() if dealias else f

    # -- basics ------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())

    def to_physical(self) -> np.ndarray:
        """Real-valued grid samples, shape (n,) + grid.shape."""
        axes = tuple(range(1, self.coeffs.ndim))
        phys = np.fft.ifftn(self.coeffs * self.grid.N**self.grid.d, axes=axes)
        return phys.real

    def hermitian_defect(self) -> float:
        """Max |imag| of the physical samples, relative to the field size."""
        axes = tuple(range(1, self.coeffs.ndim))
        phys = np.fft.ifftn(self.coeffs * self.grid.N**self.grid.d, axes=axes)
        scale = np.max(np.abs(phys)) or 1.0
        return float(np.max(np.abs(phys.imag)) / scale)

    def dealias(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * self.grid.dealias_mask())

    def mean(self) -> np.ndarray:
        """Mean value per component (the kappa=0 coefficient)."""
        return self.coeffs[(slice(None),) + (0,) * self.grid.d].real.copy()

    def has_bad_values(self) -> bool:
        return not np.all(np.isfinite(self.coeffs))

    # -- arithmetic (pure, new buffers) -------------------------------------
    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    @staticmethod
    def stack(fields: list) -> "SpectralField":
        """Concatenate components of several fields on one grid."""
        g = fields[0].grid
        for f in fields[1:]:
            if f.grid != g:
                raise GridMismatchError("fields live on different grids")
        return SpectralField(g, np.concatenate([f.coeffs for f in fields], axis=0))


# ---------------------------------------------------------------------------
# dyadic scheme

class DyadicScheme:
    """Cached Fourier multipliers for the dyadic blocks of one grid.

    j_range covers every dyadic index whose annulus [3/4, 8/3]*2^j meets the
    nonzero dealiased lattice, so the base cutoff plus all blocks reproduce
    any dealiased field exactly (telescoping partition of unity).
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        kmin = grid.kappa_min
        kmax = grid.kappa_grid_max
        # smallest j whose annulus reaches above the first nonzero mode
        j = int(np.floor(np.log2(0.375 * kmin))) + 1
        while (8.0 / 3.0) * 2.0**j <= kmin * (1.0 + 1e-12):
            j += 1
        while (8.0 / 3.0) * 2.0 ** (j - 1) > kmin * (1.0 + 1e-12):
            j -= 1
        self.j_min = j
        # largest j whose annulus still meets the dealiased lattice
        j = int(np.ceil(np.log2(kmax * 4.0 / 3.0)))
        while 0.75 * 2.0**j > kmax * (1.0 + 1e-12):
            j -= 1
        self.j_max = j

        mag = grid.kappa_mag()
        self.multipliers = {
            jj: phi_profile(mag / 2.0**jj) for jj in range(self.j_min, self.j_max + 1)
        }
        self.base_multiplier = chi_profile(mag / 2.0**self.j_min)

    @property
    def j_indices(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1)

    def window(self, window) -> np.ndarray:
        """Dyadic indices selected by 'full', ('low', J) or ('high', J).

        Low means j <= J and high means j >= J-1; the two windows share the
        boundary blocks by construction.
        """
        js = self.j_indices
        if window is None or window == "full":
            return js
        kind, J = window
        if kind == "low":
            return js[js <= J]
        if kind == "high":
            return js[js >= J - 1]
        raise ValueError(f"unknown window {window!r}")

    def check_index(self, j: int):
        if j < self.j_min or j > self.j_max:
            raise DyadicRangeError(
                f"dyadic index {j} outside resolvable window [{self.j_min}, {self.j_max}]"
            )


@lru_cache(maxsize=32)
def _scheme_cache(d: int, N: int, L: float) -> DyadicScheme:
    return DyadicScheme(Grid(d, N, L))


def scheme_for(grid: Grid) -> DyadicScheme:
    return _scheme_cache(grid.d, grid.N, grid.L)


# ---------------------------------------------------------------------------
# operations

def dyadic_block(field: SpectralField, j: int) -> SpectralField:
    """Frequency-annulus projection at dyadic scale 2^j."""
    sch = scheme_for(field.grid)
    sch.check_index(j)
    return SpectralField(field.grid, field.coeffs * sch.multipliers[j])


def base_block(field: SpectralField) -> SpectralField:
    """Residual low cutoff below the first annulus (contains the mean)."""
    sch = scheme_for(field.grid)
    return SpectralField(field.grid, field.coeffs * sch.base_multiplier)


def lowfreq_cutoff(field: SpectralField, J: int) -> SpectralField:
    """Sum of the base cutoff and all blocks with j <= J-1."""
    sch = scheme_for(field.grid)
    if J < sch.j_min or J > sch.j_max + 1:
        raise DyadicRangeError(
            f"cutoff index {J} outside [{sch.j_min}, {sch.j_max + 1}]"
        )
    mult = sch.base_multiplier.copy()
    for j in range(sch.j_min, J):
        mult += sch.multipliers[j]
    return SpectralField(field.grid, field.coeffs * mult)


def spectral_derivative(field: SpectralField, axis: int) -> SpectralField:
    """Exact Fourier differentiation along one axis."""
    if axis >= field.grid.d:
        raise ValueError(f"axis {axis} >= d={field.grid.d}")
    kap = field.grid.kappa_axes()[axis]
    return SpectralField(field.grid, field.coeffs * (1j * kap))


def spectral_laplacian(field: SpectralField, weights=None) -> SpectralField:
    """Sum_i w_i d^2/dx_i^2; weights default to 1."""
    g = field.grid
    if weights is None:
        weights = (1.0,) * g.d
    mult = np.zeros(g.shape)
    for ax, kap in enumerate(g.kappa_axes()):
        mult = mult - weights[ax] * kap**2
    return SpectralField(g, field.coeffs * mult)


def nonlinear_product(a: SpectralField, b: SpectralField) -> SpectralField:
    """Pointwise physical-space product with 2/3-rule dealiasing.

    Component counts must match, or one operand must be scalar (n=1), in
    which case it multiplies every component of the other.
    """
    if a.grid != b.grid:
        raise GridMismatchError("fields live on different grids")
    pa = a.dealias().to_physical()
    pb = b.dealias().to_physical()
    prod = pa * pb
    return SpectralField.from_physical(a.grid, prod, dealias=True)


def lp_norm(field: SpectralField, p) -> float:
    """Grid L^p norm; components enter through the pointwise Euclidean norm.

    p=2 is evaluated by Parseval on the coefficients (exact); other p use
    the rectangle rule on physical samples.
    """
    g = field.grid
    if p == 2:
        return float(np.sqrt(g.L**g.d * np.sum(np.abs(field.coeffs) ** 2)))
    phys = field.to_physical()
    mag = np.sqrt(np.sum(phys**2, axis=0))
    if np.isinf(p):
        return float(np.max(mag))
    return float((np.sum(mag**p) * g.dx**g.d) ** (1.0 / p))


def block_lp_norms(field: SpectralField, p, sch: DyadicScheme | None = None) -> np.ndarray:
    """||block_j field||_{L^p} for every j in the scheme's range."""
    sch = sch or scheme_for(field.grid)
    g = field.grid
    out = np.empty(sch.j_max - sch.j_min + 1)
    if p == 2:
        e = np.sum(np.abs(field.coeffs) ** 2, axis=0)
        for i, j in enumerate(sch.j_indices):
            out[i] = np.sqrt(g.L**g.d * np.sum(sch.multipliers[j] ** 2 * e))
        return out
    for i, j in enumerate(sch.j_indices):
        out[i] = lp_norm(dyadic_block(field, j), p)
    return out


def _ell_r(values: np.ndarray, r) -> float:
    if values.size == 0:
        return 0.0
    if np.isinf(r):
        return float(np.max(values))
    return float(np.sum(values**r) ** (1.0 / r))


def besov_norm(field: SpectralField, s: float, p, r=1, window="full") -> float:
    """Homogeneous Besov norm over the selected dyadic window.

    The mean mode never contributes (the annulus profiles vanish at 0).
    An empty window returns 0 and emits a warning.
    """
    sch = scheme_for(field.grid)
    js = sch.window(window)
    if js.size == 0:
        warnings.warn(f"besov_norm: empty dyadic window {window!r}", stacklevel=2)
        return 0.0
    norms = block_lp_norms(field, p, sch)
    sel = np.isin(sch.j_indices, js)
    vals = 2.0 ** (js * s) * norms[sel]
    return _ell_r(vals, r)


# ---------------------------------------------------------------------------
# time series of per-block norms

class NormSeries:
    """Per-block L^p norms of one tracked field along a trajectory."""

    def __init__(self, j_indices: np.ndarray, p):
        self.j_indices = np.asarray(j_indices, dtype=int)
        self.p = p
        self.times: list = []
        self._rows: list = []

    def append(self, t: float, block_norms: np.ndarray):
        if self.times and t <= self.times[-1]:
            raise ValueError(f"times must be strictly increasing, got {t} after {self.times[-1]}")
        if np.any(block_norms < 0):
            raise ValueError("block norms must be nonnegative")
        self.times.append(float(t))
        self._rows.append(np.asarray(block_norms, dtype=float))

    @property
    def table(self) -> np.ndarray:
        """Shape (n_blocks, n_times)."""
        return np.array(self._rows).T if self._rows else np.empty((self.j_indices.size, 0))

    def _select(self, window) -> np.ndarray:
        js = self.j_indices
        if window is None or window == "full":
            return np.ones(js.size, dtype=bool)
        kind, J = window
        if kind == "low":
            return js <= J
        if kind == "high":
            return js >= J - 1
        raise ValueError(f"unknown window {window!r}")

    def besov_at(self, i: int, s: float, r=1, window="full") -> float:
        """Instantaneous Besov norm assembled from the stored blocks."""
        sel = self._select(window)
        vals = 2.0 ** (self.j_indices[sel] * s) * self.table[sel, i]
        return _ell_r(vals, r)

    def besov_curve(self, s: float, r=1, window="full") -> np.ndarray:
        return np.array([self.besov_at(i, s, r, window) for i in range(len(self.times))])


def _time_lebesgue(values: np.ndarray, times: np.ndarray, rho) -> float:
    if np.isinf(rho):
        return float(np.max(values)) if values.size else 0.0
    if values.size < 2:
        raise ValueError("need at least 2 time samples for rho < inf")
    return float(_trapz(values**rho, times) ** (1.0 / rho))


def chemin_lerner_norm(series: NormSeries, rho, s: float, r=1, window="full") -> float:
    """Mixed space-time norm: time-L^rho per block, then weighted l^r in j.

    Time integrals use the trapezoid rule on the stored instants.
    """
    sel = series._select(window)
    js = series.j_indices[sel]
    if js.size == 0:
        warnings.warn(f"chemin_lerner_norm: empty dyadic window {window!r}", stacklevel=2)
        return 0.0
    times = np.asarray(series.times)
    tab = series.table[sel]
    per_j = np.array([_time_lebesgue(tab[i], times, rho) for i in range(js.size)])
    return _ell_r(2.0 ** (js * s) * per_j, r)


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"RLXF"


def save_field(field: SpectralField, path):
    """Self-describing binary container: JSON header + raw complex128."""
    header = {
        "d": field.grid.d,
        "n": field.n,
        "N": field.grid.N,
        "L": field.grid.L,
        "layout": "complex interleaved, row-major wavevector",
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(np.ascontiguousarray(field.coeffs, dtype=complex).tobytes())


def load_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a spectral field container")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        grid = Grid(header["d"], header["N"], header["L"])
        raw = np.frombuffer(fh.read(), dtype=complex)
    coeffs = raw.reshape((header["n"],) + grid.shape).copy()
    return SpectralField(grid, coeffs)


def export_block_norms_csv(path, sch: DyadicScheme, norms: np.ndarray):
    """CSV of a per-block norm table: (j, two_pow_j_physical, norm)."""
    with open(path, "w") as fh:
        fh.write("j,two_pow_j_physical,norm\n")
        for j, v in zip(sch.j_indices, norms):
            fh.write(f"{j},{2.0**j!r},{float(v)!r}\n")
