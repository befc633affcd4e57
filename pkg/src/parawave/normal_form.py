"""Quasi-resonant normal forms for the gravity-capillary dispersion relation.

A symbol ``a(x, xi) = sum_k a_k(xi) e^{ik.x}`` is split by the size of its
x-frequency ``k`` relative to ``xi``:

* average ``a_0(xi)``;
* resonant part, ``|k.xi|`` small and ``|k|`` small: weight ``chi_k chit_k``;
* non-resonant part, weight ``(1 - chi_k) chit_k``;
* smoothing part, ``|k|`` large: weight ``1 - chit_k``;

with ``chi_k(xi) = chi(2 |k|^tau k.xi / <xi>^delta)`` and
``chit_k(xi) = chi(|k| / <xi>^nu)``.  Only the non-resonant part can be
removed by a homological equation with the dispersion ``Lambda``.

The module also builds the block partition of Z^2 left invariant by every
normal-form operator, and the block and high-frequency modified energies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .dirichlet_neumann import NumericalFailure
from .grid import GridField, Truncation, to_coeffs, to_physical
from .paracalc import (DELTA0, Symbol, japanese, low_frequency_cut, moyal,
                       plateau, poisson, quantize, smoothstep)
from .resonance import dispersion, dispersion_grad, dispersion_radial


class ResonanceError(NumericalFailure):
    code = "resonance"


class StepRejected(NumericalFailure):
    code = "step_rejected"


@dataclass(frozen=True)
class NfParams:
    """Quasi-resonance exponents; the admissibility inequalities are checked on construction."""

    delta: float = 15.0 / 16.0
    tau: float = 2.5
    nu: float = 0.25
    r_loc: float = 2.0
    rho: int = 2

    def __post_init__(self):
        if not 7.0 / 8.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (7/8, 1), got {self.delta}")
        if not self.tau > 2.0:
            raise ValueError(f"tau must exceed 2, got {self.tau}")
        if not 0.0 < self.nu < self.delta / (self.tau + 1.0):
            raise ValueError(f"nu must lie in (0, delta/(tau+1) = {self.delta / (self.tau + 1.0)}), got {self.nu}")
        if not self.r_loc > 1.0:
            raise ValueError("r_loc must exceed 1")

    @property
    def mu(self) -> float:
        return 1.0 - self.delta

    def describe(self) -> str:
        return f"delta={self.delta!r} tau={self.tau!r} nu={self.nu!r} r_loc={self.r_loc!r} rho={self.rho!r}"


# cutoffs ----------------------------------------------------------------------------


def chi1(y):
    """One-dimensional cutoff: 1 for ``|y| <= 1/2``, 0 for ``|y| >= 1``."""
    return plateau(y, 0.5, 1.0)


def theta_cut(y):
    """1 for ``|y| <= 10``, 0 for ``|y| >= 11``."""
    return plateau(y, 10.0, 11.0)


def theta_tilde(y):
    """0 for ``y <= 1/3``, 1 for ``y >= 5/12``."""
    return smoothstep((np.asarray(y, float) - 1.0 / 3.0) * 12.0)


def _k_grid(n_half: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.arange(-n_half, n_half + 1, dtype=float)
    return np.meshgrid(r, r, indexing="ij")


def quasi_weights(xi: np.ndarray, n_half: int, p: NfParams) -> tuple[np.ndarray, np.ndarray]:
    """``chi_k(xi)`` and ``chit_k(xi)`` on the ``k``-grid; shapes ``(m, g, g)``."""
    k1, k2 = _k_grid(n_half)
    kabs = np.hypot(k1, k2)
    jx = japanese(xi)[:, None, None]
    kdot = k1[None] * xi[:, 0, None, None] + k2[None] * xi[:, 1, None, None]
    chi_k = chi1(2.0 * kabs[None] ** p.tau * kdot / jx ** p.delta)
    chit_k = chi1(kabs[None] / jx ** p.nu)
    return chi_k, chit_k


def _weighted(a: Symbol, weight_fn, name: str, order: float | None = None) -> Symbol:
    def hat_fn(xi):
        return a.hat(xi) * weight_fn(xi)

    def fn(xi):
        return to_physical(hat_fn(xi))

    return Symbol(fn, a.n_half, order=a.order if order is None else order,
                  homogeneity=a.homogeneity, name=name, hat_fn=hat_fn)


def decompose(a: Symbol, p: NfParams) -> tuple[Symbol, Symbol, Symbol, Symbol]:
    """Split ``a`` into ``(avg, res, nr, sm)``; the four parts sum to ``a``."""
    n = a.n_half
    centre = np.zeros((2 * n + 1, 2 * n + 1))
    centre[n, n] = 1.0
    off = 1.0 - centre

    def w_avg(xi):
        return centre[None]

    def w_res(xi):
        chi_k, chit_k = quasi_weights(xi, n, p)
        return off * chi_k * chit_k

    def w_nr(xi):
        chi_k, chit_k = quasi_weights(xi, n, p)
        return off * (1.0 - chi_k) * chit_k

    def w_sm(xi):
        _, chit_k = quasi_weights(xi, n, p)
        return off * (1.0 - chit_k)

    avg = _weighted(a, w_avg, f"avg({a.name})")
    avg.x_independent = True
    return (avg, _weighted(a, w_res, f"res({a.name})"), _weighted(a, w_nr, f"nr({a.name})"),
            _weighted(a, w_sm, f"sm({a.name})"))


def _generator_factor(xi: np.ndarray, kappa: float) -> np.ndarray:
    """``2 |xi| Lambda(xi) / (3 kappa |xi|^2 + 1)``, the inverse of ``|grad Lambda| / |xi|``."""
    r = np.hypot(xi[:, 0], xi[:, 1])
    return 2.0 * r * dispersion_radial(r, kappa) / (3.0 * kappa * r * r + 1.0)


def g_solve(a: Symbol, p: NfParams, kappa: float) -> Symbol:
    """Solve ``{g, Lambda} = -nr(a)`` mode by mode in ``k``.

    ``g_k = -i F(xi) (1 - chi_k) chit_k a_k / (k.xi)`` with ``F`` from
    :func:`_generator_factor`.  The factor ``1 - chi_k`` vanishes wherever
    ``|k.xi| < <xi>^delta |k|^{-tau} / 4``, so the division is safe.
    """
    n = a.n_half
    k1, k2 = _k_grid(n)
    off = np.ones_like(k1)
    off[n, n] = 0.0

    def hat_fn(xi):
        chi_k, chit_k = quasi_weights(xi, n, p)
        kdot = k1[None] * xi[:, 0, None, None] + k2[None] * xi[:, 1, None, None]
        w = off * (1.0 - chi_k) * chit_k
        live = w != 0.0
        inv = np.zeros_like(kdot)
        inv[live] = 1.0 / kdot[live]
        fac = _generator_factor(xi, kappa)[:, None, None]
        return -1j * fac * w * inv * to_coeffs(a._fn(xi))

    return Symbol(lambda xi: to_physical(hat_fn(xi)), n, order=a.order + 0.5 - p.delta,
                  homogeneity=a.homogeneity, name=f"g[{a.name}]", hat_fn=hat_fn)


def bracket_with_dispersion(g: Symbol, kappa: float, xi: np.ndarray) -> np.ndarray:
    """``{g, Lambda}(x, xi) = -grad_x g . grad_xi Lambda`` using the exact gradient of ``Lambda``."""
    xi = np.asarray(xi, float).reshape(-1, 2)
    c = g.hat(xi)
    k1, k2 = _k_grid(g.n_half)
    grad = dispersion_grad(xi, kappa)
    kdot = k1[None] * grad[:, 0, None, None] + k2[None] * grad[:, 1, None, None]
    return to_physical(-1j * kdot * c)


def homological_residual(a: Symbol, p: NfParams, kappa: float, xi: np.ndarray,
                         g: Symbol | None = None) -> float:
    """``max |a + {g, Lambda} - res(a) - sm(a)|`` over ``xi`` and the x-grid (mean-free ``a``)."""
    xi = np.asarray(xi, float).reshape(-1, 2)
    if g is None:
        g = g_solve(a, p, kappa)
    avg, res, nr, sm = decompose(a, p)
    lhs = a(xi) - avg(xi) + bracket_with_dispersion(g, kappa, xi)
    return float(np.max(np.abs(lhs - res(xi) - sm(xi))))


def homological_iterates(a: Symbol, p: NfParams, kappa: float, steps: int) -> list[Symbol]:
    """Repeated :func:`g_solve` on the non-resonant part of the next Moyal remainder.

    Step ``n`` solves for the part of order ``m - n (delta - 1/2)`` left by
    the third-order term of the Moyal bracket of the previous generator with
    ``Lambda``.
    """
    lam = dispersion_symbol(kappa)
    out = []
    current = a
    for _ in range(steps):
        g = g_solve(current, p, kappa)
        out.append(g)
        current = moyal(g, lam, 4) - poisson(g, lam)
        current.order = g.order + 1.5 - 3.0
    return out


def dispersion_symbol(kappa: float, g: float = 1.0) -> Symbol:
    """``Lambda(xi)`` as an x-independent symbol with exact xi-gradient."""
    def grad(i):
        return Symbol.multiplier(lambda xi: dispersion_grad(xi, kappa, g)[:, i], order=0.5, real=True)

    lam = Symbol.multiplier(lambda xi: dispersion(xi, kappa, g), order=1.5, real=True, even=True,
                            name="Lambda")
    lam.grad_xi = (grad(0), grad(1))
    return lam


def transport_multiplier(xi, kappa: float) -> np.ndarray:
    """``m(xi) = 2 Lambda(xi) / (3 kappa |xi| + |xi|^{-1})``, zero at the origin."""
    xi = np.asarray(xi, float)
    r = np.hypot(xi[..., 0], xi[..., 1])
    lam = dispersion_radial(r, kappa)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0, 2.0 * lam * r / (3.0 * kappa * r * r + 1.0), 0.0)
    return out


def transport_generator(psi: GridField, kappa: float) -> Symbol:
    """``g(x, xi) = psi(x) m(xi)`` cut off for ``|xi| <= 1/2``; solves ``grad psi . xi + {g, Lambda} = 0``."""
    vals = psi.physical()
    n = psi.trunc.n_max

    def fn(xi):
        m = transport_multiplier(xi, kappa) * low_frequency_cut(xi)
        return m[:, None, None] * vals[None]

    return Symbol(fn, n, order=1.0, homogeneity=1, real=psi.real_flag, name="g_half")


def transport_residual(psi: GridField, kappa: float, xi: np.ndarray) -> float:
    """``max |grad psi . xi + {g, Lambda}|`` over ``xi`` with ``|xi| >= 1/2``."""
    xi = np.asarray(xi, float).reshape(-1, 2)
    keep = np.hypot(xi[:, 0], xi[:, 1]) >= 0.5
    xi = xi[keep]
    g = transport_generator(psi, kappa)
    k1, k2 = psi.trunc.wavenumbers
    p1 = to_physical(1j * k1 * psi.coeffs)
    p2 = to_physical(1j * k2 * psi.coeffs)
    lhs = p1[None] * xi[:, 0, None, None] + p2[None] * xi[:, 1, None, None]
    return float(np.max(np.abs(lhs + bracket_with_dispersion(g, kappa, xi)), initial=0.0))


def r_localize(a: Symbol, R: float, side: str = "low") -> Symbol:
    """Multiply by ``theta(<xi>/R)`` (``low``) or ``1 - theta(<xi>/R)`` (``high``)."""
    if not R > 1:
        raise ValueError("R must exceed 1")
    if side not in ("low", "high"):
        raise ValueError("side must be 'low' or 'high'")

    def weight(xi):
        w = theta_cut(japanese(xi) / R)
        return (w if side == "low" else 1.0 - w)[:, None, None]

    out = Symbol(lambda xi: a._fn(xi) * weight(xi), a.n_half, order=a.order,
                 homogeneity=a.homogeneity, real=a.real, even=a.even,
                 x_independent=a.x_independent, r_loc=R if side == "low" else None,
                 name=f"{side}_{R}({a.name})")
    return out


# Birkhoff coefficients --------------------------------------------------------------


Key = tuple[tuple[int, int], tuple[int, int], int, int]


def output_frequency(key: Key) -> tuple[int, int]:
    (j, k, s1, s2) = key
    return (s1 * j[0] + s2 * k[0], s1 * j[1] + s2 * k[1])


def table_divisor(key: Key, kappa: float, g: float = 1.0) -> float:
    j, k, s1, s2 = key
    n = output_frequency(key)
    lam = lambda v: float(dispersion(np.asarray(v, float), kappa, g))
    return s1 * lam(j) + s2 * lam(k) - lam(n)


def random_table(modes: Sequence[tuple[int, int]], rng: np.random.Generator) -> dict:
    """Random complex coefficients ``R[j, k, s1, s2]`` over pairs of ``modes``; zero outputs skipped."""
    table = {}
    for j in modes:
        for k in modes:
            for s1 in (1, -1):
                for s2 in (1, -1):
                    key = (tuple(j), tuple(k), s1, s2)
                    if output_frequency(key) == (0, 0):
                        continue
                    table[key] = complex(rng.normal(), rng.normal())
    return table


def birkhoff_coeffs(R: dict, kappa: float, g: float = 1.0, floor: float = 1e-12) -> dict:
    """``G = -R / (-i (s1 Lambda(j) + s2 Lambda(k) - Lambda(s1 j + s2 k)))``."""
    out = {}
    for key, val in R.items():
        if output_frequency(key) == (0, 0):
            raise ValueError(f"entry {key} has zero output frequency")
        d = table_divisor(key, kappa, g)
        if abs(d) < floor:
            raise ResonanceError("exact three-wave resonance in the coefficient table",
                                 {"key": [list(key[0]), list(key[1]), key[2], key[3]], "divisor": d})
        out[key] = -val / (-1j * d)
    return out


def amplification_violations(R: dict, G: dict, c_emp: float) -> list:
    """Entries breaking ``|G| <= |R| max(|j|,|k|)^2 min(|j|,|k|)^4 / c_emp``."""
    bad = []
    for key, r in R.items():
        a = math.hypot(*key[0])
        b = math.hypot(*key[1])
        bound = abs(r) * max(a, b) ** 2 * min(a, b) ** 4 / c_emp
        if abs(G[key]) > bound * (1.0 + 1e-12):
            bad.append(key)
    return bad


def _table_tensors(tables: Sequence[dict], kappa: float, g: float):
    """Dense tensors ``T[n, a, b]`` over inputs ``(mode, sign)`` and output frequencies."""
    keys = sorted(set().union(*[t.keys() for t in tables]))
    inputs = sorted({(key[0], key[2]) for key in keys} | {(key[1], key[3]) for key in keys})
    outputs = sorted({output_frequency(key) for key in keys})
    ia = {v: i for i, v in enumerate(inputs)}
    io = {v: i for i, v in enumerate(outputs)}
    dense = []
    for t in tables:
        T = np.zeros((len(outputs), len(inputs), len(inputs)), complex)
        for key, val in t.items():
            T[io[output_frequency(key)], ia[(key[0], key[2])], ia[(key[1], key[3])]] += val
        dense.append(T)
    lam = lambda v: float(dispersion(np.asarray(v, float), kappa, g))
    ell_in = np.array([-1j * s * lam(j) for j, s in inputs])
    ell_out = np.array([-1j * lam(n) for n in outputs])
    return dense, ell_in, ell_out, inputs, outputs


def birkhoff_identity_residual(R: dict, G: dict, kappa: float, g: float = 1.0,
                               rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Residuals of ``R + G o (input rotation) - (output rotation) o G = 0``.

    The first value is the entrywise residual of the dense tensors, the
    second evaluates both quadratic maps on a random complex input vector and
    differentiates ``G`` along the linear flow.
    """
    (TR, TG), ell_in, ell_out, inputs, _ = _table_tensors([R, G], kappa, g)
    shift = ell_in[None, :, None] + ell_in[None, None, :]
    res = TR + TG * shift - ell_out[:, None, None] * TG
    dense = float(np.max(np.abs(res))) if res.size else 0.0

    rng = rng or np.random.default_rng(0)
    Z = rng.normal(size=len(inputs)) + 1j * rng.normal(size=len(inputs))
    quad = lambda T, u, v: np.einsum("nab,a,b->n", T, u, v)
    dG = quad(TG, ell_in * Z, Z) + quad(TG, Z, ell_in * Z)
    vec = quad(TR, Z, Z) + dG - ell_out * quad(TG, Z, Z)
    return dense, float(np.max(np.abs(vec))) if vec.size else 0.0


# block partition --------------------------------------------------------------------


def _coupling_offsets(ball_radius: float, p: NfParams) -> np.ndarray:
    reach = float(japanese(np.array([ball_radius, 0.0])) ** p.nu)
    kmax = int(math.floor(reach))
    r = np.arange(-kmax, kmax + 1)
    k1, k2 = np.meshgrid(r, r, indexing="ij")
    k = np.stack([k1.ravel(), k2.ravel()], axis=1)
    nz = np.any(k != 0, axis=1)
    return k[nz & (np.hypot(k[:, 0], k[:, 1]) <= reach + 1e-12)]


def coupling_admissible(j: np.ndarray, jp: np.ndarray, p: NfParams, delta0: float = DELTA0) -> np.ndarray:
    """Edge test between lattice points ``j`` and ``jp`` (arrays of shape ``(m, 2)``)."""
    k = (jp - j).astype(float)
    xm = 0.5 * (j + jp).astype(float)
    kab = np.hypot(k[:, 0], k[:, 1])
    jx = japanese(xm)
    kdot = np.abs(k[:, 0] * xm[:, 0] + k[:, 1] * xm[:, 1])
    with np.errstate(divide="ignore"):
        ok = ((kab <= jx ** p.nu) & (kdot <= jx ** p.delta * kab ** (-p.tau)) & (kab <= delta0 * jx))
    return ok & (kab > 0)


@dataclass
class BlockPartition:
    """Connected components of the coupling graph on a lattice ball, with a merged core block."""

    params: NfParams
    ball_radius: int
    points: np.ndarray            # (m, 2) lattice points of the ball, lexicographic
    labels: np.ndarray            # block index per point; block 0 is the core
    core_radius: float
    violations: list = field(default_factory=list)
    delta0: float = DELTA0

    @property
    def n_blocks(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def block(self, alpha: int) -> np.ndarray:
        return self.points[self.labels == alpha]

    @property
    def blocks(self) -> list[np.ndarray]:
        return [self.block(a) for a in range(self.n_blocks)]

    @property
    def block_max(self) -> np.ndarray:
        norms = np.hypot(self.points[:, 0], self.points[:, 1])
        out = np.zeros(self.n_blocks)
        np.maximum.at(out, self.labels, norms)
        return out

    @property
    def block_min(self) -> np.ndarray:
        norms = np.hypot(self.points[:, 0], self.points[:, 1])
        out = np.full(self.n_blocks, np.inf)
        np.minimum.at(out, self.labels, norms)
        return out

    def meeting_ball(self, radius: float) -> np.ndarray:
        """Indices of blocks that intersect ``B(radius)``."""
        norms = np.hypot(self.points[:, 0], self.points[:, 1])
        return np.unique(self.labels[norms <= radius + 1e-12])

    def I_eps(self, eps: float) -> np.ndarray:
        return self.meeting_ball(1.0 / eps)

    def label_grid(self, trunc: Truncation) -> np.ndarray:
        """Block index on the truncation box, ``-1`` outside the ball."""
        n = trunc.n_max
        out = np.full(trunc.shape, -1, dtype=np.int64)
        inside = (np.abs(self.points[:, 0]) <= n) & (np.abs(self.points[:, 1]) <= n)
        pts = self.points[inside]
        out[pts[:, 0] + n, pts[:, 1] + n] = self.labels[inside]
        return out

    def off_block_mass(self, op) -> float:
        """Sum of ``|entries|`` of a quantized operator between distinct blocks."""
        lab = self.label_grid(op.trunc).ravel()
        coo = op.matrix.tocoo()
        li, lj = lab[coo.row], lab[coo.col]
        cross = (li != lj) & (li >= 0) & (lj >= 0)
        return float(np.sum(np.abs(coo.data[cross])))

    def dyadic_ok(self) -> bool:
        return not self.violations

    def export_text(self, path) -> None:
        with open(path, "w") as fh:
            for (j1, j2), a in zip(self.points, self.labels):
                fh.write(f"{int(a)} {int(j1)} {int(j2)}\n")


def block_partition(p: NfParams, ball_radius: int, delta0: float = DELTA0) -> BlockPartition:
    """Coupling-graph components on ``B(ball_radius)``, merging those that meet ``B(R0)``.

    ``R0`` is the smallest lattice radius for which every component lying
    entirely outside ``B(R0)`` obeys the dyadic bound ``max |xi| <= 2 min |xi|``.
    Components that still break the bound (possible only when ``R0`` reaches
    the ball radius) are listed in ``violations``.
    """
    pts = _lattice_ball_with_origin(ball_radius)
    index = {tuple(v): i for i, v in enumerate(pts)}
    offs = _coupling_offsets(ball_radius, p)
    rows, cols = [], []
    for k in offs:
        jp = pts + k
        inside = np.hypot(jp[:, 0], jp[:, 1]) <= ball_radius + 1e-9
        src = np.flatnonzero(inside)
        ok = coupling_admissible(pts[src], jp[src], p, delta0)
        for a, b in zip(src[ok], jp[src][ok]):
            rows.append(a)
            cols.append(index[tuple(b)])
    m = len(pts)
    graph = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    _, comp = connected_components(graph, directed=False)

    norms = np.hypot(pts[:, 0], pts[:, 1])
    ncomp = int(comp.max()) + 1
    cmax = np.zeros(ncomp)
    cmin = np.full(ncomp, np.inf)
    np.maximum.at(cmax, comp, norms)
    np.minimum.at(cmin, comp, norms)
    bad = cmax > 2.0 * cmin + 1e-12
    # R0 must reach the inner edge of every component that breaks the bound
    core = float(np.max(cmin[bad])) if bad.any() else 0.0
    merged = cmin <= core + 1e-12
    labels = np.empty(m, dtype=np.int64)
    new_id = np.full(ncomp, -1, dtype=np.int64)
    new_id[merged] = 0
    rest = np.flatnonzero(~merged)
    # order the remaining blocks by their smallest lexicographic member
    first = np.full(ncomp, m, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(m))
    rest = rest[np.argsort(first[rest])]
    new_id[rest] = np.arange(1, rest.size + 1)
    labels[:] = new_id[comp]
    part = BlockPartition(p, int(ball_radius), pts, labels, core, [], delta0)
    bm, bmin = part.block_max, part.block_min
    for a in range(1, part.n_blocks):
        if bm[a] > 2.0 * bmin[a] + 1e-12:
            part.violations.append((a, float(bm[a]), float(bmin[a])))
    return part


def _lattice_ball_with_origin(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    rng = np.arange(-r, r + 1)
    j1, j2 = np.meshgrid(rng, rng, indexing="ij")
    pts = np.stack([j1.ravel(), j2.ravel()], axis=1)
    return pts[np.hypot(pts[:, 0], pts[:, 1]) <= radius + 1e-9]


def random_normal_form_symbol(p: NfParams, n_half: int, rng: np.random.Generator,
                              real: bool = True) -> Symbol:
    """Random x-Fourier coefficients kept only on the normal-form support.

    The support is ``|k| <= <xi>^nu`` and ``|k.xi| <= <xi>^delta |k|^{-tau}``
    (``k = 0`` always allowed); coefficients outside are exactly zero.
    """
    g = 2 * n_half + 1
    c = rng.normal(size=(g, g)) + 1j * rng.normal(size=(g, g))
    if real:
        c = 0.5 * (c + np.conj(c[::-1, ::-1]))
    k1, k2 = _k_grid(n_half)
    kab = np.hypot(k1, k2)

    def hat_fn(xi):
        jx = japanese(xi)[:, None, None]
        kdot = np.abs(k1[None] * xi[:, 0, None, None] + k2[None] * xi[:, 1, None, None])
        with np.errstate(divide="ignore"):
            ok = (kab[None] <= jx ** p.nu) & (kdot <= jx ** p.delta * kab[None] ** (-p.tau))
        ok |= (kab == 0)[None]
        return np.where(ok, c[None], 0.0)

    return Symbol(lambda xi: to_physical(hat_fn(xi)), n_half, order=0.0, real=real,
                  name="nf_random", hat_fn=hat_fn)


def random_admissible_symbol(n_half: int, order: float, rng: np.random.Generator) -> Symbol:
    """Real symbol ``sum_k c_k e^{ik.x} <xi>^order (1 + b_k xi_1 / <xi>)`` with random ``c_k, b_k``."""
    g = 2 * n_half + 1
    c = rng.normal(size=(g, g)) + 1j * rng.normal(size=(g, g))
    c = 0.5 * (c + np.conj(c[::-1, ::-1]))
    b = rng.uniform(-0.5, 0.5, size=(g, g))
    b = 0.5 * (b + b[::-1, ::-1])

    def hat_fn(xi):
        jx = japanese(xi)
        shape = (jx ** order)[:, None, None] * (1.0 + b[None] * (xi[:, 0] / jx)[:, None, None])
        return shape * c[None]

    return Symbol(lambda xi: to_physical(hat_fn(xi)), n_half, order=order, real=True,
                  name="random", hat_fn=hat_fn)


# energies ---------------------------------------------------------------------------


def low_energy(u: GridField, s: float, eps: float, P: BlockPartition) -> float:
    """``sum_{alpha in I_eps} M_alpha^{2s} ||Pi_alpha u||^2``."""
    if P.ball_radius < 2.0 / eps - 1e-12:
        raise ValueError(f"partition radius {P.ball_radius} does not cover B(2/eps) = B({2.0 / eps})")
    lab = P.label_grid(u.trunc)
    mass = np.zeros(P.n_blocks)
    inside = lab >= 0
    np.add.at(mass, lab[inside], np.abs(u.coeffs[inside]) ** 2)
    act = P.I_eps(eps)
    return float(np.sum(P.block_max[act] ** (2.0 * s) * mass[act]))


def sandwich_ratios(u: GridField, s: float, eps: float, P: BlockPartition) -> tuple[float, float]:
    """``(E / ||Pi_{<=1/eps} u||_s^2, E / ||u||_s^2)`` with homogeneous weights."""
    E = low_energy(u, s, eps, P)
    k = u.trunc.abs_k
    w = np.where(k > 0, k, 0.0) ** (2.0 * s)
    mag = np.abs(u.coeffs) ** 2
    low = float(np.sum((w * mag)[k <= 1.0 / eps + 1e-12]))
    full = float(np.sum(w * mag))
    return (E / low if low > 0 else np.inf), (E / full if full > 0 else 0.0)


def omega_scale(y: float, kappa: float) -> float:
    """``Omega(y) = sqrt(kappa y^3 + y)``."""
    return math.sqrt(kappa * y ** 3 + y)


def modified_symbol(s: float, eps: float, kappa: float, a: Symbol | None = None,
                    b: Symbol | None = None, check: np.ndarray | None = None) -> Symbol:
    """``(Lambda + a + b)^{4s/3} theta_tilde((Lambda + a + b) / Omega(1/eps))``.

    Raises :class:`NumericalFailure` if ``Re(Lambda + a + b) < Lambda / 2``
    somewhere on the ``check`` frequencies.
    """
    lam = dispersion_symbol(kappa)
    total = lam
    for extra in (a, b):
        if extra is not None:
            total = total + extra
    ref = omega_scale(1.0 / eps, kappa)
    if check is not None:
        check = np.asarray(check, float).reshape(-1, 2)
        vals = total(check).real
        floor = 0.5 * dispersion(check, kappa)[:, None, None]
        if np.any(vals < floor - 1e-14):
            raise NumericalFailure("modified-energy symbol is not elliptic",
                                   {"min_ratio": float(np.min(vals / np.maximum(2 * floor, 1e-300)))})

    def func(v):
        base = np.maximum(v.real, 0.0)
        return (base ** (4.0 * s / 3.0) * theta_tilde(base / ref)).astype(complex)

    out = total.map(func, order=2.0 * s, real=True, name="L2s")
    out.x_independent = total.x_independent
    return out


def modified_energy(z: GridField, s: float, eps: float, kappa: float,
                    a: Symbol | None = None, b: Symbol | None = None) -> float:
    """``<Op^BW(L^(2s) theta_tilde) z, z>`` (real part) over the coefficient inner product."""
    lat = z.trunc.lattice.astype(float)
    sym = modified_symbol(s, eps, kappa, a, b, check=lat)
    if sym.x_independent:
        vals = sym(lat)[:, 0, 0].real.reshape(z.trunc.shape)
        return float(np.sum(vals * np.abs(z.coeffs) ** 2))
    op = quantize(sym, z.trunc)
    return float(np.real(np.vdot(z.flat(), op.matrix @ z.flat())))


def cut_support_radius(s: float, eps: float, kappa: float, trunc: Truncation) -> float:
    """Smallest ``|xi|`` on the lattice where the cut symbol (a = b = 0) is nonzero."""
    lat = trunc.lattice.astype(float)
    vals = modified_symbol(s, eps, kappa)(lat)[:, 0, 0].real
    r = np.hypot(lat[:, 0], lat[:, 1])
    live = vals > 0
    return float(r[live].min()) if live.any() else float("inf")


# flows -------------------------------------------------------------------------------


def flow_integrate(g: Symbol, u0, tau_end: float = 1.0, n_steps: int = 64, tol: float = 1e-6):
    """Integrate ``d/dtau u = Op^BW(i g) u`` by RK4 with a step-doubling error check.

    ``u0`` is a :class:`GridField` or a pair ``(z, zbar)``; the second
    component is driven by ``Op^BW(conj(i g)(x, -xi))``.
    """
    if n_steps < 16:
        raise ValueError("n_steps must be at least 16")
    pair = isinstance(u0, (tuple, list))
    fields = list(u0) if pair else [u0]
    trunc = fields[0].trunc
    gens = [quantize(g * 1j, trunc).matrix]
    if pair:
        gens.append(quantize((g * 1j).conj_reflect(), trunc).matrix)
    h = tau_end / n_steps
    out = []
    for A, f in zip(gens, fields):
        if A.nnz == 0:
            out.append(f.copy())
            continue
        v = f.flat().astype(complex)
        for _ in range(n_steps):
            full = _rk4(A, v, h)
            half = _rk4(A, _rk4(A, v, 0.5 * h), 0.5 * h)
            err = float(np.max(np.abs(full - half))) / max(float(np.max(np.abs(half))), 1e-300)
            if err > tol:
                raise StepRejected("flow step rejected by the step-doubling estimate",
                                   {"local_error": err, "step": h})
            v = half
        out.append(GridField.from_flat(trunc, v))
    return tuple(out) if pair else out[0]


def _rk4(A, v, h):
    k1 = A @ v
    k2 = A @ (v + 0.5 * h * k1)
    k3 = A @ (v + 0.5 * h * k2)
    k4 = A @ (v + h * k3)
    return v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
