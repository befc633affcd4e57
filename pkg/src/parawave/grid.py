"""Truncated Fourier fields on the torus T^2 = (R / 2pi Z)^2.

A field is stored densely over the frequency box ``{-n..n}^2``.  The
coefficient array is indexed ``coeffs[j1 + n, j2 + n]`` so that C-order
flattening gives the lexicographic lattice order used by every sparse
operator and every file format in the package.

The collocation grid has ``2n + 1`` points per direction.  Because the size
is odd there is no unpaired Nyquist mode and the box is closed under
``j -> -j``, which makes reality of a field an exact algebraic property.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.fft as sfft

SNAPSHOT_MAGIC = b"PWF1"
_FLAG_REAL = 1
_FLAG_MEANZERO = 2


@dataclass(frozen=True)
class Truncation:
    """Frequency box ``{j in Z^2 : |j_1|, |j_2| <= n_max}``."""

    n_max: int

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 0:
            raise ValueError(f"n_max must be a non-negative integer, got {self.n_max!r}")

    @property
    def size(self) -> int:
        return 2 * self.n_max + 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.size, self.size)

    @property
    def n_modes(self) -> int:
        return self.size * self.size

    @cached_property
    def lattice(self) -> np.ndarray:
        """All lattice points as an ``(n_modes, 2)`` integer array, lexicographic."""
        r = np.arange(-self.n_max, self.n_max + 1)
        j1, j2 = np.meshgrid(r, r, indexing="ij")
        return np.stack([j1.ravel(), j2.ravel()], axis=1)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``(k1, k2)`` of shape ``self.shape`` matching the coefficient layout."""
        r = np.arange(-self.n_max, self.n_max + 1, dtype=float)
        k1, k2 = np.meshgrid(r, r, indexing="ij")
        k1.flags.writeable = False
        k2.flags.writeable = False
        return k1, k2

    @cached_property
    def abs_k(self) -> np.ndarray:
        k1, k2 = self.wavenumbers
        out = np.hypot(k1, k2)
        out.flags.writeable = False
        return out

    @cached_property
    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical collocation points ``(x1, x2)``, each of shape ``self.shape``."""
        x = 2.0 * np.pi * np.arange(self.size) / self.size
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        return x1, x2

    def index(self, j) -> int:
        """Position of lattice point ``j`` in lexicographic order."""
        j1, j2 = int(j[0]), int(j[1])
        n = self.n_max
        if abs(j1) > n or abs(j2) > n:
            raise KeyError(f"{(j1, j2)} outside truncation n_max={n}")
        return (j1 + n) * self.size + (j2 + n)

    def contains(self, j) -> bool:
        return abs(int(j[0])) <= self.n_max and abs(int(j[1])) <= self.n_max

    def ball_mask(self, radius: float) -> np.ndarray:
        """Boolean mask of ``|j| <= radius``."""
        return self.abs_k <= radius + 1e-12

    def dealias_mask(self) -> np.ndarray:
        """Box mask for the 2/3 rule: ``|j_i| <= floor(2 n_max / 3)``."""
        cut = (2 * self.n_max) // 3
        k1, k2 = self.wavenumbers
        return (np.abs(k1) <= cut) & (np.abs(k2) <= cut)


def to_physical(coeffs: np.ndarray, axes=(-2, -1)) -> np.ndarray:
    """Evaluate ``sum_j c_j e^{i j.x}`` on the collocation grid (last two axes)."""
    size = coeffs.shape[axes[0]] * coeffs.shape[axes[1]]
    return sfft.ifft2(sfft.ifftshift(coeffs, axes=axes), axes=axes) * size


def to_coeffs(values: np.ndarray, axes=(-2, -1)) -> np.ndarray:
    """Inverse of :func:`to_physical`."""
    size = values.shape[axes[0]] * values.shape[axes[1]]
    return sfft.fftshift(sfft.fft2(values, axes=axes), axes=axes) / size


def symmetrize_real(coeffs: np.ndarray) -> np.ndarray:
    """Return ``(c + conj(c(-j))) / 2`` so that the field is exactly real."""
    mirrored = np.conj(coeffs[::-1, ::-1])
    return 0.5 * (coeffs + mirrored)


@dataclass
class GridField:
    """Truncated Fourier series ``u(x) = sum_j coeffs[j] e^{i j.x}``.

    The flags are enforced on construction: a real field has its
    coefficients replaced by their Hermitian-symmetric part, a mean-zero
    field has its zero mode cleared.
    """

    trunc: Truncation
    coeffs: np.ndarray
    real_flag: bool = False
    meanzero_flag: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.trunc.shape:
            raise ValueError(f"coeffs shape {c.shape} does not match truncation {self.trunc.shape}")
        c = c.copy()
        if self.real_flag:
            c = symmetrize_real(c)
            n = self.trunc.n_max
            c[n, n] = c[n, n].real
        if self.meanzero_flag:
            c[self.trunc.n_max, self.trunc.n_max] = 0.0
        self.coeffs = c

    # constructors -----------------------------------------------------

    @classmethod
    def zeros(cls, trunc: Truncation, real: bool = False, meanzero: bool = False) -> "GridField":
        return cls(trunc, np.zeros(trunc.shape, complex), real, meanzero)

    @classmethod
    def from_physical(cls, trunc: Truncation, values: np.ndarray, real: bool | None = None,
                      meanzero: bool = False) -> "GridField":
        values = np.asarray(values)
        if real is None:
            real = not np.iscomplexobj(values)
        return cls(trunc, to_coeffs(values), real, meanzero)

    @classmethod
    def from_function(cls, trunc: Truncation, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      real: bool | None = None, meanzero: bool = False) -> "GridField":
        x1, x2 = trunc.grid
        return cls.from_physical(trunc, fn(x1, x2), real=real, meanzero=meanzero)

    @classmethod
    def from_modes(cls, trunc: Truncation, modes: dict, real: bool = False,
                   meanzero: bool = False) -> "GridField":
        """Build from ``{(j1, j2): coefficient}``."""
        c = np.zeros(trunc.shape, complex)
        n = trunc.n_max
        for (j1, j2), v in modes.items():
            c[j1 + n, j2 + n] += v
        return cls(trunc, c, real, meanzero)

    # access -------------------------------------------------------------

    def physical(self) -> np.ndarray:
        """Values on the collocation grid; real dtype when ``real_flag``."""
        v = to_physical(self.coeffs)
        return v.real.copy() if self.real_flag else v

    def coefficient(self, j) -> complex:
        n = self.trunc.n_max
        return complex(self.coeffs[int(j[0]) + n, int(j[1]) + n])

    def flat(self) -> np.ndarray:
        """Coefficients in lexicographic lattice order."""
        return self.coeffs.ravel()

    @classmethod
    def from_flat(cls, trunc: Truncation, vec: np.ndarray, real: bool = False,
                  meanzero: bool = False) -> "GridField":
        return cls(trunc, np.asarray(vec).reshape(trunc.shape), real, meanzero)

    def copy(self) -> "GridField":
        return GridField(self.trunc, self.coeffs.copy(), self.real_flag, self.meanzero_flag)

    def with_coeffs(self, coeffs: np.ndarray, real: bool | None = None,
                    meanzero: bool | None = None) -> "GridField":
        return GridField(self.trunc, coeffs,
                         self.real_flag if real is None else real,
                         self.meanzero_flag if meanzero is None else meanzero)

    # arithmetic -------------------------------------------------------

    def _check(self, other: "GridField"):
        if other.trunc != self.trunc:
            raise ValueError("fields live on different truncations")

    def __add__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.trunc, self.coeffs + other.coeffs,
                             self.real_flag and other.real_flag,
                             self.meanzero_flag and other.meanzero_flag)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.trunc, self.coeffs - other.coeffs,
                             self.real_flag and other.real_flag,
                             self.meanzero_flag and other.meanzero_flag)
        return NotImplemented

    def __neg__(self):
        return GridField(self.trunc, -self.coeffs, self.real_flag, self.meanzero_flag)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            real = self.real_flag and np.isreal(scalar)
            return GridField(self.trunc, self.coeffs * scalar, real, self.meanzero_flag)
        return NotImplemented

    __rmul__ = __mul__

    def product(self, other: "GridField", dealias: bool = False) -> "GridField":
        """Pointwise product computed on the collocation grid."""
        self._check(other)
        a, b = self.coeffs, other.coeffs
        if dealias:
            mask = self.trunc.dealias_mask()
            a, b = a * mask, b * mask
        c = to_coeffs(to_physical(a) * to_physical(b))
        if dealias:
            c = c * self.trunc.dealias_mask()
        return GridField(self.trunc, c, self.real_flag and other.real_flag, False)

    def l2_inner(self, other: "GridField") -> complex:
        """``sum_j u_j conj(v_j)`` (normalised so that it equals the grid mean of u conj v)."""
        self._check(other)
        return complex(np.vdot(other.coeffs, self.coeffs))


# operations -------------------------------------------------------------


def sobolev_norm(u: GridField, s: float, homogeneous: bool = False) -> float:
    """Sobolev norm ``(sum_j w(j)^{2s} |u_j|^2)^{1/2}``.

    ``w(j) = <j>`` in the inhomogeneous case and ``|j|`` (zero mode dropped)
    in the homogeneous case.
    """
    mag2 = np.abs(u.coeffs) ** 2
    if homogeneous:
        k = u.trunc.abs_k
        w2 = np.zeros_like(k)
        nz = k > 0
        w2[nz] = k[nz] ** (2.0 * s)
    else:
        w2 = (1.0 + u.trunc.abs_k ** 2) ** s
    return float(np.sqrt(np.sum(w2 * mag2)))


def frequency_mask(trunc: Truncation, theta) -> np.ndarray:
    """Boolean mask from a frequency set given as mask, callable or iterable of points."""
    if isinstance(theta, np.ndarray) and theta.dtype == bool:
        if theta.shape != trunc.shape:
            raise ValueError("mask shape mismatch")
        return theta
    if callable(theta):
        k1, k2 = trunc.wavenumbers
        return np.asarray(theta(k1, k2), dtype=bool)
    mask = np.zeros(trunc.shape, bool)
    n = trunc.n_max
    for j in theta:
        if not trunc.contains(j):
            raise ValueError(f"frequency {tuple(j)} outside the truncation")
        mask[int(j[0]) + n, int(j[1]) + n] = True
    return mask


def project(u: GridField, theta) -> GridField:
    """Fourier projector onto the frequency set ``theta``."""
    mask = frequency_mask(u.trunc, theta)
    # a real field stays real only if the set is symmetric
    real = u.real_flag and bool(np.array_equal(mask, mask[::-1, ::-1]))
    return GridField(u.trunc, np.where(mask, u.coeffs, 0.0), real, u.meanzero_flag)


def translate(u: GridField, shift) -> GridField:
    """``(tau_h u)(x) = u(x + h)``: multiplies ``u_j`` by ``e^{i j.h}``."""
    k1, k2 = u.trunc.wavenumbers
    phase = np.exp(1j * (k1 * float(shift[0]) + k2 * float(shift[1])))
    return GridField(u.trunc, u.coeffs * phase, u.real_flag, u.meanzero_flag)


def multiplier(trunc: Truncation, kind: str, sigma: float = 1.0) -> np.ndarray:
    """Fourier multiplier array for a named differential operator."""
    k1, k2 = trunc.wavenumbers
    if kind == "grad_x1":
        return 1j * k1
    if kind == "grad_x2":
        return 1j * k2
    if kind == "laplacian":
        return -(k1 ** 2 + k2 ** 2)
    if kind == "absD_power":
        k = trunc.abs_k
        out = np.zeros_like(k)
        nz = k > 0
        out[nz] = k[nz] ** sigma
        return out
    raise ValueError(f"unknown differential kind {kind!r}")


def differential(u: GridField, kind: str, sigma: float = 1.0) -> GridField:
    """Apply ``i j_1``, ``i j_2``, ``-|j|^2`` or ``|j|^sigma`` coefficient-wise."""
    m = multiplier(u.trunc, kind, sigma)
    # every supported multiplier vanishes at j = 0
    return GridField(u.trunc, u.coeffs * m, u.real_flag, True)


def dealias(u: GridField) -> GridField:
    """Zero the modes outside the 2/3-rule box."""
    return GridField(u.trunc, u.coeffs * u.trunc.dealias_mask(), u.real_flag, u.meanzero_flag)


def resample(u: GridField, trunc: Truncation) -> GridField:
    """Zero-pad or truncate ``u`` to another box."""
    out = np.zeros(trunc.shape, complex)
    m = min(u.trunc.n_max, trunc.n_max)
    src = u.coeffs[u.trunc.n_max - m:u.trunc.n_max + m + 1, u.trunc.n_max - m:u.trunc.n_max + m + 1]
    out[trunc.n_max - m:trunc.n_max + m + 1, trunc.n_max - m:trunc.n_max + m + 1] = src
    return GridField(trunc, out, u.real_flag, u.meanzero_flag)


# binary snapshots ---------------------------------------------------------


def write_snapshot(u: GridField, path) -> None:
    """Write ``u`` in the PWF1 binary format."""
    flags = (_FLAG_REAL if u.real_flag else 0) | (_FLAG_MEANZERO if u.meanzero_flag else 0)
    flat = u.flat()
    inter = np.empty(2 * flat.size, dtype="<f8")
    inter[0::2] = flat.real
    inter[1::2] = flat.imag
    with open(Path(path), "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<IB", u.trunc.n_max, flags))
        fh.write(inter.tobytes())


def read_snapshot(path) -> GridField:
    """Read a PWF1 snapshot written by :func:`write_snapshot`."""
    data = Path(path).read_bytes()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not a PWF1 snapshot")
    n_max, flags = struct.unpack("<IB", data[4:9])
    trunc = Truncation(int(n_max))
    inter = np.frombuffer(data[9:], dtype="<f8")
    if inter.size != 2 * trunc.n_modes:
        raise ValueError("snapshot length does not match n_max")
    flat = inter[0::2] + 1j * inter[1::2]
    return GridField.from_flat(trunc, flat, bool(flags & _FLAG_REAL), bool(flags & _FLAG_MEANZERO))


# state container ------------------------------------------------------------


@dataclass
class ZcsState:
    """Surface elevation and trace of the velocity potential at time ``t``."""

    eta: GridField
    psi: GridField
    t: float = 0.0
    kappa: float = 1.0
    g: float = 1.0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("surface tension kappa must be positive")
        if self.eta.trunc != self.psi.trunc:
            raise ValueError("eta and psi must share a truncation")
        self.eta = self.eta.with_coeffs(self.eta.coeffs, real=True, meanzero=True)
        self.psi = self.psi.with_coeffs(self.psi.coeffs, real=True, meanzero=True)

    @property
    def trunc(self) -> Truncation:
        return self.eta.trunc
