"""Bony-Weyl paradifferential calculus on the discrete torus.

A :class:`Symbol` is a function ``a(x, xi)`` sampled on its own periodic
x-grid and evaluated at arbitrary real frequencies ``xi``.  Quantization
couples Fourier modes ``j`` and ``k`` through the x-Fourier coefficient of
the symbol at the midpoint ``(j + k) / 2``::

    Op(a)_{j,k} = chi(j - k, (j + k) / 2) * a_hat(j - k, (j + k) / 2)

The cutoff ``chi`` keeps only symbol frequencies much smaller than the
frequency being acted on.  Operators are stored as sparse matrices over the
lexicographically ordered lattice of a :class:`~parawave.grid.Truncation`.
"""

from __future__ import annotations

import itertools
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .grid import GridField, Truncation, to_coeffs, to_physical

DELTA0 = 0.1
# FD steps for xi-derivatives, relative to <xi>, indexed by derivative order
_FD_STEP = {1: 1e-4, 2: 1e-4, 3: 2e-3, 4: 5e-3}
_HAT_CACHE_BYTES = 256 * 2 ** 20


# cutoffs ------------------------------------------------------------------


def smoothstep(t):
    """C^4 polynomial ramp: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    # the Horner form overshoots [0, 1] by round-off near t = 1
    return np.clip(t ** 5 * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + 70.0 * t)))), 0.0, 1.0)


def plateau(r, inner: float, outer: float):
    """1 for ``|r| <= inner``, 0 for ``|r| >= outer``, C^4 monotone in between."""
    return 1.0 - smoothstep((np.abs(r) - inner) / (outer - inner))


def japanese(xi) -> np.ndarray:
    """``<xi> = sqrt(1 + |xi|^2)`` over the last axis."""
    xi = np.asarray(xi, dtype=float)
    return np.sqrt(1.0 + np.sum(xi * xi, axis=-1))


def cutoff_chi(zeta, xi, delta0: float = DELTA0):
    """Quantization cutoff ``chi(zeta, xi)``.

    Equals 1 for ``|zeta| <= delta0 <xi> / 2`` and 0 for ``|zeta| >= delta0 <xi>``.
    Arguments are arrays with a trailing axis of length 2.
    """
    zeta = np.asarray(zeta, dtype=float)
    r = np.sqrt(np.sum(zeta * zeta, axis=-1)) / japanese(xi)
    return plateau(r, 0.5 * delta0, delta0)


def low_frequency_cut(xi) -> np.ndarray:
    """``1 - bump(|xi|)``: 0 for ``|xi| <= 1/4`` and 1 for ``|xi| >= 1/2``."""
    xi = np.asarray(xi, dtype=float)
    return 1.0 - plateau(np.sqrt(np.sum(xi * xi, axis=-1)), 0.25, 0.5)


# symbols ----------------------------------------------------------------------


def _as_xi(xi) -> tuple[np.ndarray, tuple]:
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != 2:
        raise ValueError("xi must have a trailing axis of length 2")
    lead = xi.shape[:-1]
    return xi.reshape(-1, 2), lead


def _x_multipliers(n_half: int):
    r = np.arange(-n_half, n_half + 1, dtype=float)
    z1, z2 = np.meshgrid(r, r, indexing="ij")
    return 1j * z1, 1j * z2


def _fd_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Central difference offsets and weights for derivative ``order``."""
    if order == 0:
        return np.array([0.0]), np.array([1.0])
    if order == 1:
        return np.array([-1.0, 1.0]), np.array([-0.5, 0.5])
    if order == 2:
        return np.array([-1.0, 0.0, 1.0]), np.array([1.0, -2.0, 1.0])
    if order == 3:
        return np.array([-2.0, -1.0, 1.0, 2.0]), np.array([-0.5, 1.0, -1.0, 0.5])
    if order == 4:
        return np.array([-2.0, -1.0, 0.0, 1.0, 2.0]), np.array([1.0, -4.0, 6.0, -4.0, 1.0])
    raise ValueError("xi-derivatives are supported up to order 4")


class Symbol:
    """Symbol ``a(x, xi)`` of order ``order``.

    Parameters
    ----------
    fn
        Callable mapping an ``(m, 2)`` array of frequencies to an ``(m, g, g)``
        array of values on the symbol's x-grid, ``g = 2 * n_half + 1``.
    n_half
        Half-size of the x-grid; the symbol's x-Fourier content is limited to
        ``|zeta_i| <= n_half``.
    order, homogeneity
        Declared order ``m`` and homogeneity degree in the amplitude
        (``None`` for non-homogeneous).
    real, even, x_independent
        Metadata flags.  ``x_independent`` enables the diagonal fast path.
    r_loc
        Radius ``R`` for R-localized symbols (zero for ``|xi| > 11 R``).
    grad_xi
        Optional pair of symbols giving exact ``d/dxi_1`` and ``d/dxi_2``.
    hat_fn
        Optional exact x-Fourier coefficients, same calling convention as
        ``fn``; used by :meth:`hat` so that prescribed zero coefficients stay
        exactly zero after quantization.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], n_half: int, order: float = 0.0,
                 homogeneity: int | None = None, real: bool = False, even: bool = False,
                 x_independent: bool = False, r_loc: float | None = None,
                 grad_xi: tuple["Symbol", "Symbol"] | None = None, name: str = "",
                 hat_fn: Callable[[np.ndarray], np.ndarray] | None = None):
        self._fn = fn
        self._hat_fn = hat_fn
        self.n_half = int(n_half)
        self.order = float(order)
        self.homogeneity = homogeneity
        self.real = bool(real)
        self.even = bool(even)
        self.x_independent = bool(x_independent)
        self.r_loc = r_loc
        self.grad_xi = grad_xi
        self.name = name
        self._cache: OrderedDict = OrderedDict()
        self._cache_bytes = 0
        self._lock = threading.Lock()

    # constructors -----------------------------------------------------

    @property
    def size(self) -> int:
        return 2 * self.n_half + 1

    @property
    def grid_trunc(self) -> Truncation:
        return Truncation(self.n_half)

    @classmethod
    def from_callable(cls, f: Callable, n_half: int, **kw) -> "Symbol":
        """Wrap ``f(x1, x2, xi1, xi2)`` written with numpy broadcasting."""
        trunc = Truncation(n_half)
        x1, x2 = trunc.grid

        def fn(xi):
            out = f(x1[None], x2[None], xi[:, 0, None, None], xi[:, 1, None, None])
            return np.broadcast_to(out, (xi.shape[0],) + x1.shape).astype(complex)

        return cls(fn, n_half, **kw)

    @classmethod
    def multiplier(cls, m: Callable[[np.ndarray], np.ndarray], order: float = 0.0, **kw) -> "Symbol":
        """x-independent symbol from ``m(xi)`` acting on ``(m, 2)`` arrays."""
        def fn(xi):
            return np.asarray(m(xi), dtype=complex)[:, None, None] * np.ones((1, 1, 1))

        kw.setdefault("x_independent", True)
        return cls(fn, 0, order=order, **kw)

    @classmethod
    def function(cls, u: GridField, homogeneity: int | None = 1, name: str = "") -> "Symbol":
        """Order-0 symbol depending on x only."""
        vals = u.physical()

        def fn(xi):
            return np.broadcast_to(vals, (xi.shape[0],) + vals.shape).astype(complex)

        zero = _zero_like(u.trunc.n_max)
        return cls(fn, u.trunc.n_max, order=0.0, homogeneity=homogeneity, real=u.real_flag,
                   even=True, grad_xi=(zero, zero), name=name)

    @classmethod
    def constant(cls, c: complex) -> "Symbol":
        return cls.multiplier(lambda xi: np.full(xi.shape[0], c, dtype=complex), order=0.0,
                              homogeneity=0, real=np.isreal(c), even=True)

    # evaluation -------------------------------------------------------

    def __call__(self, xi) -> np.ndarray:
        """Values on the x-grid: shape ``xi.shape[:-1] + (g, g)``."""
        flat, lead = _as_xi(xi)
        out = np.asarray(self._fn(flat))
        if out.shape[1:] != (self.size, self.size):
            out = np.broadcast_to(out, (flat.shape[0], self.size, self.size))
        return out.reshape(lead + (self.size, self.size))

    def hat(self, xi) -> np.ndarray:
        """x-Fourier coefficients ``a_hat(zeta, xi)`` indexed ``[zeta1 + n, zeta2 + n]``."""
        if self._hat_fn is not None:
            flat, lead = _as_xi(xi)
            return np.asarray(self._hat_fn(flat)).reshape(lead + (self.size, self.size))
        return to_coeffs(self(xi))

    def hat_at_doubled(self, m2: np.ndarray) -> np.ndarray:
        """Fourier coefficients at midpoints ``xi = m2 / 2`` for integer ``m2``, cached."""
        m2 = np.asarray(m2, dtype=np.int64).reshape(-1, 2)
        out = np.empty((m2.shape[0], self.size, self.size), dtype=complex)
        missing = []
        with self._lock:
            for i, key in enumerate(map(tuple, m2)):
                hit = self._cache.get(key)
                if hit is None:
                    missing.append(i)
                else:
                    self._cache.move_to_end(key)
                    out[i] = hit
        if missing:
            idx = np.asarray(missing)
            chunk = max(1, int(4_000_000 // (self.size * self.size)))
            for s in range(0, idx.size, chunk):
                sel = idx[s:s + chunk]
                out[sel] = self.hat(m2[sel] / 2.0)
            self._store(m2[idx], out[idx])
        return out

    def _store(self, keys, values):
        per = values[0].nbytes if len(values) else 0
        if per == 0 or per * len(values) > _HAT_CACHE_BYTES:
            return
        with self._lock:
            for key, val in zip(map(tuple, keys), values):
                if key in self._cache:
                    continue
                self._cache[key] = val.copy()
                self._cache_bytes += per
            while self._cache_bytes > _HAT_CACHE_BYTES and self._cache:
                self._cache.popitem(last=False)
                self._cache_bytes -= per

    # algebra ----------------------------------------------------------

    def _combine(self, other: "Symbol", op, order, homogeneity, real, even, name):
        n = max(self.n_half, other.n_half)
        f, g = _resampled(self, n), _resampled(other, n)
        return Symbol(lambda xi: op(f(xi), g(xi)), n, order=order, homogeneity=homogeneity,
                      real=real, even=even, x_independent=self.x_independent and other.x_independent,
                      name=name)

    def __add__(self, other):
        if np.isscalar(other):
            other = Symbol.constant(other)
        hom = self.homogeneity if self.homogeneity == other.homogeneity else None
        return self._combine(other, np.add, max(self.order, other.order), hom,
                             self.real and other.real, self.even and other.even,
                             f"({self.name}+{other.name})")

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        if np.isscalar(other):
            other = Symbol.constant(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            c = other
            hat_fn = None
            if self._hat_fn is not None:
                hat_fn = lambda xi, _h=self._hat_fn: c * _h(xi)
            return Symbol(lambda xi: c * self._fn(xi), self.n_half, order=self.order,
                          homogeneity=self.homogeneity, real=self.real and np.isreal(c),
                          even=self.even, x_independent=self.x_independent, r_loc=self.r_loc,
                          name=self.name, hat_fn=hat_fn)
        hom = None
        if self.homogeneity is not None and other.homogeneity is not None:
            hom = self.homogeneity + other.homogeneity
        return self._combine(other, np.multiply, self.order + other.order, hom,
                             self.real and other.real, self.even and other.even,
                             f"{self.name}*{other.name}")

    __rmul__ = __mul__

    def map(self, func: Callable[[np.ndarray], np.ndarray], order: float | None = None,
            real: bool | None = None, name: str = "") -> "Symbol":
        """Apply a pointwise function to the values."""
        return Symbol(lambda xi: func(self._fn(xi)), self.n_half,
                      order=self.order if order is None else order, homogeneity=None,
                      real=self.real if real is None else real, even=self.even,
                      x_independent=self.x_independent, name=name)

    def conj_reflect(self) -> "Symbol":
        """``conj(a(x, -xi))``, the lower-right entry of a real-to-real block."""
        hat_fn = None
        if self._hat_fn is not None:
            # coefficient at zeta is conj(a_hat(-zeta, -xi))
            hat_fn = lambda xi, _h=self._hat_fn: np.conj(_h(-xi)[:, ::-1, ::-1])
        return Symbol(lambda xi: np.conj(self._fn(-xi)), self.n_half, order=self.order,
                      homogeneity=self.homogeneity, real=self.real, even=self.even,
                      x_independent=self.x_independent, r_loc=self.r_loc,
                      name=f"conj({self.name})(-xi)", hat_fn=hat_fn)

    def conj(self) -> "Symbol":
        return Symbol(lambda xi: np.conj(self._fn(xi)), self.n_half, order=self.order,
                      homogeneity=self.homogeneity, real=self.real, even=self.even,
                      x_independent=self.x_independent, r_loc=self.r_loc)

    # derivatives ------------------------------------------------------

    def deriv(self, dx: Sequence[int] = (0, 0), dxi: Sequence[int] = (0, 0)) -> "Symbol":
        """``d_x^dx d_xi^dxi a``; x spectrally, xi by central differences.

        First-order xi-derivatives use ``grad_xi`` when it was supplied.
        """
        dx = tuple(int(v) for v in dx)
        dxi = tuple(int(v) for v in dxi)
        base = self
        if sum(dxi) == 1 and self.grad_xi is not None:
            base = self.grad_xi[0 if dxi[0] == 1 else 1]
            dxi = (0, 0)
        xi_fn = _fd_derivative(base._fn, dxi) if dxi != (0, 0) else base._fn
        if dx == (0, 0):
            fn = xi_fn
        elif base.x_independent:
            return _zero_like(0, order=self.order - sum(dxi))
        else:
            m1, m2 = _x_multipliers(base.n_half)
            mult = m1 ** dx[0] * m2 ** dx[1]

            def fn(xi, _f=xi_fn, _m=mult):
                return to_physical(to_coeffs(_f(xi)) * _m)

        real = self.real
        return Symbol(fn, base.n_half, order=self.order - sum(dxi),
                      homogeneity=self.homogeneity, real=real,
                      x_independent=base.x_independent,
                      name=f"d{dx}{dxi}{self.name}")

    def real_part(self) -> "Symbol":
        return Symbol(lambda xi: self._fn(xi).real.astype(complex), self.n_half, order=self.order,
                      homogeneity=self.homogeneity, real=True, even=self.even,
                      x_independent=self.x_independent)


def _zero_like(n_half: int, order: float = -np.inf) -> Symbol:
    size = 2 * n_half + 1
    return Symbol(lambda xi: np.zeros((xi.shape[0], size, size), complex), n_half,
                  order=order if np.isfinite(order) else 0.0, homogeneity=None, real=True,
                  even=True, x_independent=(n_half == 0), name="0")


def _resampled(a: Symbol, n_half: int) -> Callable:
    """Evaluator of ``a`` on a finer x-grid of half-size ``n_half`` (spectral interpolation)."""
    if a.n_half == n_half:
        return a._fn
    if a.x_independent:
        size = 2 * n_half + 1
        return lambda xi: np.broadcast_to(a._fn(xi)[:, :1, :1], (xi.shape[0], size, size))
    pad = n_half - a.n_half

    def fn(xi):
        c = to_coeffs(a._fn(xi))
        c = np.pad(c, ((0, 0), (pad, pad), (pad, pad)))
        return to_physical(c)

    return fn


def _fd_derivative(fn: Callable, dxi: tuple[int, int]) -> Callable:
    order = dxi[0] + dxi[1]
    off1, w1 = _fd_weights(dxi[0])
    off2, w2 = _fd_weights(dxi[1])
    stencil = [(o1, o2, a * b) for (o1, a), (o2, b) in
               itertools.product(zip(off1, w1), zip(off2, w2)) if a * b != 0.0]
    rel = _FD_STEP[order]

    def out(xi):
        h = rel * np.maximum(japanese(xi), 1.0)
        pts = np.concatenate([xi + h[:, None] * np.array([o1, o2]) for o1, o2, _ in stencil])
        vals = np.asarray(fn(pts))
        vals = vals.reshape((len(stencil), xi.shape[0]) + vals.shape[1:])
        acc = np.zeros(vals.shape[1:], complex)
        for s, (_, _, w) in enumerate(stencil):
            acc += w * vals[s]
        return acc / (h ** order)[:, None, None]

    return out


# quantization -------------------------------------------------------------------


@dataclass
class FreqOperator:
    """Sparse operator over the lattice of a truncation (lexicographic order)."""

    trunc: Truncation
    matrix: sp.csr_matrix
    hermitian: bool = False
    tags: dict = field(default_factory=dict)

    def apply(self, u: GridField, real: bool = False) -> GridField:
        if u.trunc != self.trunc:
            raise ValueError("field and operator live on different truncations")
        return GridField.from_flat(self.trunc, self.matrix @ u.flat(), real=real)

    def __call__(self, u: GridField) -> GridField:
        return self.apply(u)

    def adjoint(self) -> "FreqOperator":
        return FreqOperator(self.trunc, self.matrix.conj().T.tocsr(), self.hermitian, dict(self.tags))

    def __matmul__(self, other: "FreqOperator") -> "FreqOperator":
        return FreqOperator(self.trunc, (self.matrix @ other.matrix).tocsr())

    def __add__(self, other: "FreqOperator") -> "FreqOperator":
        return FreqOperator(self.trunc, (self.matrix + other.matrix).tocsr())

    def __sub__(self, other: "FreqOperator") -> "FreqOperator":
        return FreqOperator(self.trunc, (self.matrix - other.matrix).tocsr())

    def __mul__(self, c) -> "FreqOperator":
        return FreqOperator(self.trunc, (self.matrix * c).tocsr())

    __rmul__ = __mul__

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def hermitian_defect(self) -> float:
        d = self.matrix - self.matrix.conj().T
        return float(np.max(np.abs(d.data))) if d.nnz else 0.0

    def entries(self):
        """Yield ``(j, k, value)`` for stored nonzeros in lexicographic order."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lat = self.trunc.lattice
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            if v != 0:
                yield tuple(lat[r]), tuple(lat[c]), complex(v)

    def export_text(self, path) -> None:
        """Write ``j1 j2 k1 k2 re im`` lines sorted lexicographically."""
        with open(path, "w") as fh:
            for j, k, v in self.entries():
                fh.write(f"{j[0]} {j[1]} {k[0]} {k[1]} {v.real:.17g} {v.imag:.17g}\n")

    @classmethod
    def read_text(cls, trunc: Truncation, path) -> "FreqOperator":
        rows, cols, vals = [], [], []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                j1, j2, k1, k2, re, im = line.split()
                rows.append(trunc.index((int(j1), int(j2))))
                cols.append(trunc.index((int(k1), int(k2))))
                vals.append(float(re) + 1j * float(im))
        m = sp.csr_matrix((vals, (rows, cols)), shape=(trunc.n_modes, trunc.n_modes))
        return cls(trunc, m)


def _offsets(radius: float, n_half: int) -> np.ndarray:
    r = int(math.floor(min(radius, n_half * math.sqrt(2.0) + 1)))
    rng = np.arange(-min(r, n_half), min(r, n_half) + 1)
    z1, z2 = np.meshgrid(rng, rng, indexing="ij")
    z = np.stack([z1.ravel(), z2.ravel()], axis=1)
    return z[np.hypot(z[:, 0], z[:, 1]) < radius]


def _support_indices(trunc: Truncation, sel) -> np.ndarray:
    if sel is None:
        return np.arange(trunc.n_modes)
    sel = np.asarray(sel)
    if sel.dtype == bool:
        return np.flatnonzero(sel.ravel())
    return sel.astype(np.int64).ravel()


def quantize(a: Symbol, trunc: Truncation, cols=None, rows=None,
             delta0: float = DELTA0) -> FreqOperator:
    """Bony-Weyl quantization of ``a`` on ``trunc``.

    ``cols`` / ``rows`` optionally restrict the assembled columns / rows
    (boolean masks over the box or flat indices); the remaining entries are
    left out, which is exact when the operator is applied to a field
    supported on ``cols``.
    """
    n = trunc.n_max
    lat = trunc.lattice
    col_idx = _support_indices(trunc, cols)
    row_ok = None
    if rows is not None:
        row_ok = np.zeros(trunc.n_modes, bool)
        row_ok[_support_indices(trunc, rows)] = True
    if a.x_independent:
        idx = col_idx if row_ok is None else col_idx[row_ok[col_idx]]
        vals = a(lat[idx].astype(float))[:, 0, 0]
        m = sp.csr_matrix((vals, (idx, idx)), shape=(trunc.n_modes, trunc.n_modes))
        return FreqOperator(trunc, m, hermitian=a.real)

    max_xi = math.sqrt(1.0 + 2.0 * n * n)
    offs = _offsets(delta0 * max_xi, a.n_half)
    k = lat[col_idx]
    rr, cc, zz, mm, ch = [], [], [], [], []
    for z in offs:
        j = k + z
        ok = (np.abs(j[:, 0]) <= n) & (np.abs(j[:, 1]) <= n)
        if not ok.any():
            continue
        jr = (j[ok, 0] + n) * trunc.size + (j[ok, 1] + n)
        kc = col_idx[ok]
        if row_ok is not None:
            keep = row_ok[jr]
            jr, kc = jr[keep], kc[keep]
        if jr.size == 0:
            continue
        m2 = lat[kc] * 2 + z
        chi = cutoff_chi(np.broadcast_to(z, m2.shape).astype(float), m2 / 2.0, delta0)
        live = chi > 0
        rr.append(jr[live])
        cc.append(kc[live])
        zz.append(np.broadcast_to(z, (int(live.sum()), 2)))
        mm.append(m2[live])
        ch.append(chi[live])
    if not rr:
        return FreqOperator(trunc, sp.csr_matrix((trunc.n_modes, trunc.n_modes), dtype=complex))
    rr = np.concatenate(rr)
    cc = np.concatenate(cc)
    zz = np.concatenate(zz)
    mm = np.concatenate(mm)
    chi = np.concatenate(ch)
    uniq, inv = np.unique(mm, axis=0, return_inverse=True)
    inv = inv.ravel()
    vals = np.empty(rr.size, complex)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(uniq.shape[0] + 1))
    chunk = max(1, int(2_000_000 // (a.size * a.size)))
    for s in range(0, uniq.shape[0], chunk):
        hats = a.hat_at_doubled(uniq[s:s + chunk])
        lo, hi = bounds[s], bounds[min(s + chunk, uniq.shape[0])]
        pos = order[lo:hi]
        loc = inv[pos] - s
        vals[pos] = hats[loc, zz[pos, 0] + a.n_half, zz[pos, 1] + a.n_half]
    vals *= chi
    m = sp.csr_matrix((vals, (rr, cc)), shape=(trunc.n_modes, trunc.n_modes))
    m.sum_duplicates()
    return FreqOperator(trunc, m, hermitian=a.real)


def apply_bw(a: Symbol, u: GridField, real: bool = False) -> GridField:
    """``Op^BW(a) u`` assembling only the columns in the support of ``u``."""
    support = np.flatnonzero(u.flat() != 0)
    if support.size == 0:
        return GridField.zeros(u.trunc)
    return quantize(a, u.trunc, cols=support).apply(u, real=real)


def adjoint(op: FreqOperator) -> FreqOperator:
    return op.adjoint()


# composition ----------------------------------------------------------------------


def _multi_indices(n: int):
    for a1 in range(n + 1):
        yield (a1, n - a1)


def composition_term(a: Symbol, b: Symbol, n: int) -> Symbol:
    """Term ``p_n(a, b)`` of the asymptotic expansion of the composition symbol."""
    if n == 0:
        return a * b
    terms = []
    for k in range(n + 1):  # |alpha| = k, |beta| = n - k
        for alpha in _multi_indices(k):
            for beta in _multi_indices(n - k):
                coef = (-1.0) ** (n - k) / (math.factorial(alpha[0]) * math.factorial(alpha[1])
                                           * math.factorial(beta[0]) * math.factorial(beta[1]))
                left = a.deriv(dx=beta, dxi=alpha)
                right = b.deriv(dx=alpha, dxi=beta)
                terms.append((coef, left, right))
    pref = 1.0 / (2j) ** n
    n_half = max(a.n_half, b.n_half)
    fns = [(c, _resampled(l, n_half), _resampled(r, n_half)) for c, l, r in terms]

    def fn(xi):
        acc = 0.0
        for c, lf, rf in fns:
            acc = acc + c * lf(xi) * rf(xi)
        return pref * acc

    hom = None
    if a.homogeneity is not None and b.homogeneity is not None:
        hom = a.homogeneity + b.homogeneity
    return Symbol(fn, n_half, order=a.order + b.order - n, homogeneity=hom,
                  x_independent=a.x_independent and b.x_independent, name=f"p{n}")


def compose_expansion(a: Symbol, b: Symbol, rho: int) -> Symbol:
    """``a #_rho b = sum_{n < rho} p_n(a, b)``."""
    if rho < 1:
        raise ValueError("rho must be at least 1")
    out = composition_term(a, b, 0)
    for n in range(1, rho):
        out = out + composition_term(a, b, n)
    out.order = a.order + b.order
    return out


def poisson(a: Symbol, b: Symbol) -> Symbol:
    """Poisson bracket ``{a, b} = grad_xi a . grad_x b - grad_x a . grad_xi b``."""
    parts = []
    for i in range(2):
        e = [0, 0]
        e[i] = 1
        parts.append((1.0, a.deriv(dxi=e), b.deriv(dx=e)))
        parts.append((-1.0, a.deriv(dx=e), b.deriv(dxi=e)))
    n_half = max(a.n_half, b.n_half)
    fns = [(c, _resampled(l, n_half), _resampled(r, n_half)) for c, l, r in parts]

    def fn(xi):
        acc = 0.0
        for c, lf, rf in fns:
            acc = acc + c * lf(xi) * rf(xi)
        return acc

    hom = None
    if a.homogeneity is not None and b.homogeneity is not None:
        hom = a.homogeneity + b.homogeneity
    return Symbol(fn, n_half, order=a.order + b.order - 1, homogeneity=hom,
                  real=a.real and b.real, x_independent=a.x_independent and b.x_independent,
                  name=f"{{{a.name},{b.name}}}")


def moyal(a: Symbol, b: Symbol, rho: int) -> Symbol:
    """``i (a #_rho b - b #_rho a) = sum_{odd n < rho} 2i p_n(a, b)``."""
    if rho < 2:
        raise ValueError("rho must be at least 2")
    out = None
    for n in range(1, rho, 2):
        term = composition_term(a, b, n) * 2j
        out = term if out is None else out + term
    out.order = a.order + b.order - 1
    return out


# real-to-real systems ---------------------------------------------------------------


@dataclass
class RealToRealOperator:
    """2x2 block ``[[Op(d), Op(o)], [Op(conj o(x,-xi)), Op(conj d(x,-xi))]]``."""

    d: FreqOperator
    o: FreqOperator
    o_bar: FreqOperator
    d_bar: FreqOperator

    def apply(self, v: GridField, w: GridField) -> tuple[GridField, GridField]:
        top = self.d.apply(v) + self.o.apply(w)
        bottom = self.o_bar.apply(v) + self.d_bar.apply(w)
        return top, bottom

    def toarray(self) -> np.ndarray:
        return np.block([[self.d.toarray(), self.o.toarray()],
                         [self.o_bar.toarray(), self.d_bar.toarray()]])


def conj_field(v: GridField) -> GridField:
    """Coefficients of ``conj(v(x))``: ``conj(v_{-j})``."""
    return GridField(v.trunc, np.conj(v.coeffs[::-1, ::-1]), v.real_flag, v.meanzero_flag)


def real_to_real_pack(d: Symbol, o: Symbol, trunc: Truncation) -> RealToRealOperator:
    return RealToRealOperator(quantize(d, trunc), quantize(o, trunc),
                              quantize(o.conj_reflect(), trunc), quantize(d.conj_reflect(), trunc))


# probes -------------------------------------------------------------------------


@dataclass
class ProbeResult:
    frequencies: np.ndarray
    norms: np.ndarray
    slope: float
    intercept: float

    @property
    def order(self) -> float:
        return self.slope


def fit_loglog(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def smoothing_order_probe(R: Callable[[GridField], GridField], s: float, n_list: Sequence[int],
                          trunc: Truncation, direction=(1, 0)) -> ProbeResult:
    """Fit ``log ||R e^{i N.x}||_{H^s}`` against ``log N``.

    The input modes are ``N * direction``.  Frequencies must stay inside the
    2/3 dealiasing margin of the truncation.
    """
    from .grid import sobolev_norm

    n_list = list(n_list)
    if len(n_list) < 3 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("need at least three strictly increasing frequencies")
    limit = trunc.n_max * 2.0 / 3.0
    d = np.asarray(direction, dtype=int)
    norms = []
    for N in n_list:
        j = N * d
        if np.max(np.abs(j)) > limit:
            raise ValueError(f"frequency {N} exceeds the dealiasing margin of n_max={trunc.n_max}")
        e = GridField.from_modes(trunc, {(int(j[0]), int(j[1])): 1.0})
        norms.append(sobolev_norm(R(e), s))
    norms = np.asarray(norms)
    slope, icpt = fit_loglog(n_list, norms)
    return ProbeResult(np.asarray(n_list, float), norms, slope, icpt)


def composition_defect_probe(a: Symbol, b: Symbol, rho: int, trunc: Truncation,
                             n_list: Sequence[int], direction=(1, 0)) -> ProbeResult:
    """Fit ``log ||(Op(a) Op(b) - Op(a #_rho b)) e^{i N.x}||_{L^2}`` against ``log N``.

    The composition theorem predicts a slope at most ``m_a + m_b - rho``.
    """
    from .grid import sobolev_norm

    n_list = list(n_list)
    if len(n_list) < 3 or any(q <= p for p, q in zip(n_list, n_list[1:])):
        raise ValueError("need at least three strictly increasing frequencies")
    ab = compose_expansion(a, b, rho)
    d = np.asarray(direction, dtype=int)
    norms = []
    for N in n_list:
        j = N * d
        if np.max(np.abs(j)) > trunc.n_max * 2.0 / 3.0:
            raise ValueError(f"frequency {N} exceeds the dealiasing margin of n_max={trunc.n_max}")
        e = GridField.from_modes(trunc, {(int(j[0]), int(j[1])): 1.0})
        diff = apply_bw(a, apply_bw(b, e)) - apply_bw(ab, e)
        norms.append(sobolev_norm(diff, 0.0))
    norms = np.asarray(norms)
    slope, icpt = fit_loglog(n_list, norms)
    return ProbeResult(np.asarray(n_list, float), norms, slope, icpt)


def seminorm(a: Symbol, m: float, sigma: int, n_max: int, delta: float = 1.0,
             n_circle: int = 16) -> float:
    """Sampled estimate of ``max |d_x^alpha d_xi^beta a| <xi>^{-m + delta |beta|}``.

    Frequencies are sampled on dyadic circles up to ``n_max``; derivative
    orders are capped at 4 in xi.
    """
    radii = [0.5 * 2 ** k for k in range(int(math.log2(max(n_max, 1)) + 2)) if 0.5 * 2 ** k <= n_max]
    ang = 2 * np.pi * np.arange(n_circle) / n_circle
    xi = np.concatenate([np.stack([r * np.cos(ang), r * np.sin(ang)], 1) for r in radii])
    best = 0.0
    for total in range(sigma + 1):
        for nxi in range(min(total, 4) + 1):
            for beta in _multi_indices(nxi):
                for alpha in _multi_indices(total - nxi):
                    vals = np.abs(a.deriv(dx=alpha, dxi=beta)(xi))
                    w = japanese(xi) ** (-m + delta * nxi)
                    best = max(best, float(np.max(vals.reshape(len(xi), -1).max(1) * w)))
    return best
