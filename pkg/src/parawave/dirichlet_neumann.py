"""Dirichlet-Neumann operator of the infinitely deep fluid below ``z = eta(x)``.

The fluid domain is flattened with ``z = y + eta(x)``, ``y < 0``.  In the new
variables the velocity potential ``phi`` solves

    (d_yy + Delta) phi = -F(eta) phi,
    F = (b - 1) Delta - 2 b grad(eta).grad d_y - b Delta(eta) d_y,
    b = 1 / (1 + |grad eta|^2),

with ``phi(x, 0) = psi``.  Writing ``phi = e^{y|D|} psi + u`` the correction
``u`` is obtained by a fixed-point iteration in which each step inverts
``d_yy - |j|^2`` mode by mode.

The vertical direction is discretised with a Chebyshev collocation on the
half line through the algebraic map ``y = -L (1 + t) / (1 - t)``, so that the
bottom node sits at ``y = -inf`` and no artificial bottom condition is
needed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .grid import GridField, Truncation, ZcsState, resample, to_coeffs, to_physical
from .paracalc import Symbol, apply_bw, low_frequency_cut
from .resonance import symmetrizer_m


class NumericalFailure(RuntimeError):
    """Raised when an iterative solver fails; carries a context dict."""

    code = "numerical_failure"

    def __init__(self, message: str, context: dict | None = None):
        super().__init__(message)
        self.context = context or {}


class NonContractionError(NumericalFailure):
    code = "non_contraction"


# vertical discretisation ----------------------------------------------------------


def chebyshev_matrix(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Lobatto nodes ``t_k = cos(k pi / n)`` and the differentiation matrix."""
    t = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    dt = t[:, None] - t[None, :]
    D = np.outer(c, 1.0 / c) / (dt + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    return t, D


@dataclass(frozen=True)
class VerticalGrid:
    """Mapped Chebyshev grid on ``(-inf, 0]``; node 0 is ``y = -inf``, node ``n`` is ``y = 0``."""

    n: int = 80
    scale: float = 1.0

    @property
    def t(self) -> np.ndarray:
        return _vgrid(self.n, self.scale)[0]

    @property
    def y(self) -> np.ndarray:
        return _vgrid(self.n, self.scale)[1]

    @property
    def Dy(self) -> np.ndarray:
        return _vgrid(self.n, self.scale)[2]

    @property
    def Dyy(self) -> np.ndarray:
        return _vgrid(self.n, self.scale)[3]

    def mode_solver(self):
        return _mode_solver(self.n, self.scale)


@lru_cache(maxsize=16)
def _vgrid(n: int, scale: float):
    t, D = chebyshev_matrix(n)
    a1 = -(1.0 - t) ** 2 / (2.0 * scale)
    a2 = -(1.0 - t) ** 3 / (2.0 * scale ** 2)
    with np.errstate(divide="ignore"):
        y = -scale * (1.0 + t) / (1.0 - t)
    y[0] = -np.inf
    Dy = a1[:, None] * D
    Dyy = (a1 ** 2)[:, None] * (D @ D) + a2[:, None] * D
    for arr in (t, y, Dy, Dyy):
        arr.flags.writeable = False
    return t, y, Dy, Dyy


@lru_cache(maxsize=16)
def _mode_solver(n: int, scale: float):
    """Eigen-decomposition of the interior second-derivative block and the j = 0 solver."""
    t, D = chebyshev_matrix(n)
    _, _, _, Dyy = _vgrid(n, scale)
    A = Dyy[1:n, 1:n]
    mu, V = np.linalg.eig(A)
    if np.max(np.abs(mu.imag)) < 1e-9 * np.max(np.abs(mu)) and np.max(np.abs(V.imag)) < 1e-12:
        mu, V = mu.real, V.real
    Vi = np.linalg.inv(V)
    # zero mode: u(0) = 0 at the top, d_t u = 0 at y = -inf
    A0 = np.zeros((n, n))
    A0[0] = D[0, :n]
    A0[1:] = Dyy[1:n, :n]
    A0i = np.linalg.inv(A0)
    return mu, V, Vi, A0i


# spectral layout ------------------------------------------------------------------


class _Layout:
    """FFT bookkeeping in unshifted order; real fields use the half spectrum."""

    def __init__(self, trunc: Truncation, real: bool):
        self.trunc = trunc
        self.real = real
        S = trunc.size
        k = sfft.fftfreq(S, 1.0 / S)
        if real:
            kk = sfft.rfftfreq(S, 1.0 / S)
            self.k1, self.k2 = np.meshgrid(k, kk, indexing="ij")
        else:
            self.k1, self.k2 = np.meshgrid(k, k, indexing="ij")
        self.q = self.k1 ** 2 + self.k2 ** 2
        self.ak = np.sqrt(self.q)
        self.shape = self.k1.shape

    def fwd(self, values):
        if self.real:
            return sfft.rfft2(values, axes=(-2, -1), norm="forward")
        return sfft.fft2(values, axes=(-2, -1), norm="forward")

    def bwd(self, coeffs):
        S = self.trunc.size
        if self.real:
            return sfft.irfft2(coeffs, s=(S, S), axes=(-2, -1), norm="forward")
        return sfft.ifft2(coeffs, axes=(-2, -1), norm="forward")

    def from_field(self, u: GridField) -> np.ndarray:
        c = sfft.ifftshift(u.coeffs)
        return c[:, : self.shape[1]].copy() if self.real else c

    def to_field(self, c: np.ndarray, meanzero: bool = False) -> GridField:
        if self.real:
            return GridField.from_physical(self.trunc, self.bwd(c), real=True, meanzero=meanzero)
        return GridField(self.trunc, sfft.fftshift(c), False, meanzero)


def _matmul_rows(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``M @ X`` over the leading axis for complex ``X`` with real ``M``."""
    shp = X.shape
    X2 = X.reshape(shp[0], -1)
    if np.isrealobj(M) and np.iscomplexobj(X2):
        out = M @ X2.view(np.float64)
        return out.view(np.complex128).reshape((M.shape[0],) + shp[1:])
    return (M @ X2).reshape((M.shape[0],) + shp[1:])


# strip solver ----------------------------------------------------------------------


@dataclass
class SurfaceGeometry:
    """Pointwise coefficients derived from ``eta`` on the collocation grid."""

    eta: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    lap: np.ndarray
    grad2: np.ndarray
    b: np.ndarray

    @classmethod
    def from_field(cls, eta: GridField) -> "SurfaceGeometry":
        k1, k2 = eta.trunc.wavenumbers
        c = eta.coeffs
        real = lambda z: to_physical(z).real
        e1, e2 = real(1j * k1 * c), real(1j * k2 * c)
        grad2 = e1 * e1 + e2 * e2
        return cls(real(c), e1, e2, real(-(k1 ** 2 + k2 ** 2) * c), grad2, 1.0 / (1.0 + grad2))


@dataclass
class StripField:
    """Potential ``phi`` on the mapped vertical grid, with solve diagnostics."""

    layout: _Layout
    vgrid: VerticalGrid
    phi: np.ndarray        # (n+1,) + layout.shape coefficients
    dphi_dy: np.ndarray    # same shape
    log: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    decay_ok: bool = True
    residual: float = 0.0
    correction: np.ndarray | None = None  # phi minus the flat extension; reusable as ``initial``

    @property
    def y(self) -> np.ndarray:
        return self.vgrid.y

    def level(self, i: int) -> GridField:
        return self.layout.to_field(self.phi[i])

    def derivative_level(self, i: int) -> GridField:
        return self.layout.to_field(self.dphi_dy[i])

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual", "update_ratio"])
            for it, res, ratio in self.log:
                w.writerow([it, f"{res:.17g}", f"{ratio:.17g}"])


def harmonic_flat(psi: GridField, y: float) -> GridField:
    """Harmonic extension below the flat surface: ``e^{y |j|} psi_j``."""
    k = psi.trunc.abs_k
    if y == -np.inf:
        fac = (k == 0).astype(float)
    else:
        fac = np.exp(y * k)
    return GridField(psi.trunc, psi.coeffs * fac, psi.real_flag, psi.meanzero_flag)


def strip_solve(eta: GridField, psi: GridField, tol: float = 1e-10, n_y: int = 80,
                scale: float = 1.0, max_iter: int = 200, initial: np.ndarray | None = None,
                stall_ratio: float = 0.95, stall_count: int = 3) -> StripField:
    """Solve the flattened Laplace problem below ``eta`` with trace ``psi``.

    Iterates ``u <- (d_yy - |D|^2)^{-1} (-F(eta)[phi0 + u])`` until the
    update, relative to ``max |phi|``, falls below ``tol``.  A
    :class:`NonContractionError` is raised when the update ratio stays above
    ``stall_ratio`` for ``stall_count`` consecutive iterations or the
    iteration cap is hit.
    """
    if eta.trunc != psi.trunc:
        raise ValueError("eta and psi must share a truncation")
    real = eta.real_flag and psi.real_flag
    lay = _Layout(eta.trunc, real)
    vg = VerticalGrid(n_y, scale)
    y, Dy, Dyy = vg.y, vg.Dy, vg.Dyy
    mu, V, Vi, A0i = vg.mode_solver()
    geo = SurfaceGeometry.from_field(eta)
    n = n_y

    psi_c = lay.from_field(psi)
    with np.errstate(over="ignore", invalid="ignore"):
        E = np.exp(np.multiply.outer(y[1:], lay.ak))
    E = np.concatenate([(lay.q == 0)[None].astype(float), E], axis=0)
    phi0 = E * psi_c
    dphi0 = lay.ak * phi0

    flat_surface = not np.any(eta.coeffs)
    U = np.zeros_like(phi0) if initial is None else np.array(initial, dtype=phi0.dtype)
    scale_ref = max(float(np.max(np.abs(phi0))), 1e-300)
    qflat = lay.q.reshape(-1)
    denom = mu[:, None] - qflat[None, :]
    nz = lay.q > 0
    b, e1, e2, lap = geo.b, geo.e1, geo.e2, geo.lap
    bm1 = b - 1.0

    def forcing(U):
        phi = phi0 + U
        W = dphi0 + _matmul_rows(Dy, U)
        vals = (bm1 * lay.bwd(-lay.q * phi)
                - 2.0 * b * (e1 * lay.bwd(1j * lay.k1 * W) + e2 * lay.bwd(1j * lay.k2 * W))
                - b * lap * lay.bwd(W))
        return lay.fwd(vals), W

    def invert(rhs):
        out = np.zeros_like(rhs)
        g = rhs[1:n].reshape(n - 1, -1)
        c = _matmul_rows(Vi, g) / denom
        out[1:n] = _matmul_rows(V, c).reshape((n - 1,) + lay.shape)
        out[1:n][:, ~nz] = 0.0
        r0 = rhs[:n, 0, 0].copy()
        r0[0] = 0.0
        out[:n, 0, 0] = A0i @ r0
        return out

    log = []
    prev = None
    stalls = 0
    converged = flat_surface and initial is None
    it = 0
    residual = 0.0
    if not converged:
        for it in range(1, max_iter + 1):
            Fc, _ = forcing(U)
            lhs = _matmul_rows(Dyy, U) - lay.q * U
            residual = float(np.max(np.abs((lhs + Fc)[1:n]))) / scale_ref
            U_new = invert(-Fc)
            upd = float(np.max(np.abs(U_new - U))) / scale_ref
            ratio = upd / prev if prev else float("nan")
            log.append((it, residual, ratio))
            U = U_new
            if not np.isfinite(upd):
                raise NonContractionError("strip iteration produced non-finite values",
                                          {"iteration": it})
            if upd <= tol:
                converged = True
                break
            if prev and ratio >= stall_ratio:
                stalls += 1
                if stalls >= stall_count:
                    raise NonContractionError(
                        "strip iteration is not contracting",
                        {"iteration": it, "update_ratio": ratio, "update": upd})
            else:
                stalls = 0
            prev = upd
        if not converged:
            raise NonContractionError("strip iteration hit the iteration cap",
                                      {"iteration": it, "update": upd})
    phi = phi0 + U
    W = dphi0 + _matmul_rows(Dy, U)
    deep = U[1][nz] if n > 1 else np.zeros(1)
    decay_ok = float(np.max(np.abs(deep), initial=0.0)) <= 1e-8 * scale_ref
    return StripField(lay, vg, phi, W, log, it, converged, decay_ok, residual, U)


def _surface_terms(eta: GridField, psi: GridField, sol: StripField):
    geo = SurfaceGeometry.from_field(eta)
    lay = sol.layout
    k1, k2 = psi.trunc.wavenumbers
    psi1 = to_physical(1j * k1 * psi.coeffs)
    psi2 = to_physical(1j * k2 * psi.coeffs)
    w = lay.bwd(sol.dphi_dy[-1])
    if lay.real:
        psi1, psi2 = psi1.real, psi2.real
    return geo, psi1, psi2, w


def dirichlet_neumann(eta: GridField, psi: GridField, tol: float = 1e-10, n_y: int = 80,
                      scale: float = 1.0, return_solution: bool = False, initial=None):
    """``G(eta) psi = [(1 + |grad eta|^2) d_y phi - grad eta . grad phi]`` at ``y = 0``."""
    sol = strip_solve(eta, psi, tol, n_y=n_y, scale=scale, initial=initial)
    geo, psi1, psi2, w = _surface_terms(eta, psi, sol)
    vals = (1.0 + geo.grad2) * w - geo.e1 * psi1 - geo.e2 * psi2
    out = GridField.from_physical(eta.trunc, vals, real=sol.layout.real)
    # G annihilates constants and has zero mean; the mean is kept as a diagnostic
    if return_solution:
        return out, sol
    return out


# recursion oracle ---------------------------------------------------------------------


def dn_recursion_oracle(eta: GridField, psi: GridField, M: int) -> GridField:
    """Taylor expansion ``sum_{m <= M} G_m(eta) psi`` of the Dirichlet-Neumann operator.

    Expand the decaying harmonic function ``Phi = sum_k A_k e^{|k| z} e^{ik.x}``
    at ``z = eta``.  The Dirichlet condition gives, order by order in eta,

        A_0 = psi,   A_m = -sum_{n=1}^{m} eta^n |D|^n A_{m-n} / n!,

    and the normal derivative ``Phi_z - grad eta . grad Phi`` at ``z = eta``
    collects into

        G_m psi = sum_{n=0}^{m} eta^n |D|^{n+1} A_{m-n} / n!
                  - grad eta . sum_{n=0}^{m-1} eta^n |D|^n grad A_{m-1-n} / n!.
    """
    if not 0 <= M <= 6:
        raise ValueError("the recursion oracle supports 0 <= M <= 6")
    trunc = eta.trunc
    k1, k2 = trunc.wavenumbers
    ak = trunc.abs_k
    eta_x = to_physical(eta.coeffs)
    e1 = to_physical(1j * k1 * eta.coeffs)
    e2 = to_physical(1j * k2 * eta.coeffs)
    phys = to_physical
    coef = to_coeffs

    A = [psi.coeffs.astype(complex)]
    for m in range(1, M + 1):
        acc = np.zeros(trunc.shape, complex)
        for nn in range(1, m + 1):
            acc -= coef(eta_x ** nn * phys(ak ** nn * A[m - nn])) / math.factorial(nn)
        A.append(acc)

    total = np.zeros(trunc.shape, complex)
    for m in range(M + 1):
        vals = np.zeros(trunc.shape, complex)
        for nn in range(m + 1):
            vals += eta_x ** nn * phys(ak ** (nn + 1) * A[m - nn]) / math.factorial(nn)
        for nn in range(m):
            src = A[m - 1 - nn]
            g1 = phys(ak ** nn * 1j * k1 * src)
            g2 = phys(ak ** nn * 1j * k2 * src)
            vals -= eta_x ** nn * (e1 * g1 + e2 * g2) / math.factorial(nn)
        total += coef(vals)
    return GridField(trunc, total, eta.real_flag and psi.real_flag, False)


# velocity, Taylor coefficient, good unknown ------------------------------------------------


def velocity_fields(eta: GridField, psi: GridField, tol: float = 1e-10, n_y: int = 80,
                    G: GridField | None = None):
    """Return ``((V1, V2), B)`` with ``B = (G psi + grad eta.grad psi) / (1 + |grad eta|^2)``."""
    if G is None:
        G = dirichlet_neumann(eta, psi, tol, n_y=n_y)
    trunc = eta.trunc
    k1, k2 = trunc.wavenumbers
    geo = SurfaceGeometry.from_field(eta)
    real = eta.real_flag and psi.real_flag
    cast = (lambda z: z.real) if real else (lambda z: z)
    p1 = cast(to_physical(1j * k1 * psi.coeffs))
    p2 = cast(to_physical(1j * k2 * psi.coeffs))
    g = cast(to_physical(G.coeffs))
    B = (g + geo.e1 * p1 + geo.e2 * p2) * geo.b
    V1 = p1 - B * geo.e1
    V2 = p2 - B * geo.e2
    mk = lambda v: GridField.from_physical(trunc, v, real=real)
    return (mk(V1), mk(V2)), mk(B)


def taylor_coefficient(state: ZcsState, tol: float = 1e-10, n_y: int = 80,
                       dt: float = 1e-4) -> GridField:
    """``a = d_t B + V . grad B`` with ``d_t B`` by a centred difference along the flow."""
    from .simulator import rhs

    if not np.any(state.eta.coeffs) and not np.any(state.psi.coeffs):
        return GridField.zeros(state.trunc, real=True)
    eta_t, psi_t = rhs(state, dn_tol=tol, n_y=n_y, dealias=False)

    def B_at(sign):
        e = state.eta + sign * dt * eta_t
        p = state.psi + sign * dt * psi_t
        return velocity_fields(e, p, tol, n_y=n_y)[1]

    dB = (B_at(+1.0) - B_at(-1.0)) * (1.0 / (2.0 * dt))
    (V1, V2), B = velocity_fields(state.eta, state.psi, tol, n_y=n_y)
    k1, k2 = state.trunc.wavenumbers
    B1 = to_physical(1j * k1 * B.coeffs).real
    B2 = to_physical(1j * k2 * B.coeffs).real
    vals = dB.physical() + V1.physical() * B1 + V2.physical() * B2
    return GridField.from_physical(state.trunc, vals, real=True)


def good_unknown(eta: GridField, psi: GridField, tol: float = 1e-10, n_y: int = 80,
                 B: GridField | None = None) -> GridField:
    """Alinhac good unknown ``omega = psi - Op^BW(B) eta``."""
    if B is None:
        B = velocity_fields(eta, psi, tol, n_y=n_y)[1]
    real = eta.real_flag and psi.real_flag
    return psi - apply_bw(Symbol.function(B, name="B"), eta, real=real)


# paralinearization symbols -------------------------------------------------------------------


def _cut_and_grad(xi):
    """``c(xi) = 1 - bump(|xi|)`` and its gradient."""
    r = np.sqrt(np.sum(xi * xi, axis=-1))
    c = low_frequency_cut(xi)
    t = np.clip((r - 0.25) / 0.25, 0.0, 1.0)
    dstep = 630.0 * t ** 4 * (1.0 - t) ** 4 / 0.25
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r[:, None] > 0, xi / np.where(r > 0, r, 1.0)[:, None], 0.0)
    return c, dstep[:, None] * unit


@dataclass
class DnSymbols:
    lambda1: Symbol
    lambda0: Symbol
    h2: Symbol
    Q: Symbol
    Sigma: Symbol
    b_coeff: GridField
    beta1: GridField
    beta2: tuple
    beta3: GridField
    V: tuple
    B: GridField
    a_taylor: GridField | None
    omega: GridField


def _coarse(eta: GridField, n_half: int | None) -> GridField:
    if n_half is None or n_half >= eta.trunc.n_max:
        return eta
    return resample(eta, Truncation(n_half))


def lambda1_symbol(eta: GridField, n_half: int | None = None) -> Symbol:
    """``lambda1 = sqrt((1 + |grad eta|^2)|xi|^2 - (grad eta . xi)^2)``, cut near ``xi = 0``.

    ``n_half`` evaluates the x-dependence on a coarser grid; for analytic
    ``eta`` with few modes the dropped coefficients are below round-off.
    """
    eta = _coarse(eta, n_half)
    geo = SurfaceGeometry.from_field(eta)
    n = eta.trunc.n_max
    g11 = 1.0 + geo.e2 ** 2  # (1 + |e|^2) - e1^2
    g22 = 1.0 + geo.e1 ** 2
    g12 = -geo.e1 * geo.e2

    def raw(xi):
        x1, x2 = xi[:, 0, None, None], xi[:, 1, None, None]
        return np.sqrt(g11 * x1 * x1 + 2.0 * g12 * x1 * x2 + g22 * x2 * x2)

    def fn(xi):
        c, _ = _cut_and_grad(xi)
        return (c[:, None, None] * raw(xi)).astype(complex)

    def grad(i):
        def g(xi):
            c, dc = _cut_and_grad(xi)
            x1, x2 = xi[:, 0, None, None], xi[:, 1, None, None]
            lam = raw(xi)
            num = (g11 * x1 + g12 * x2) if i == 0 else (g12 * x1 + g22 * x2)
            with np.errstate(invalid="ignore", divide="ignore"):
                d = np.where(lam > 0, num / np.where(lam > 0, lam, 1.0), 0.0)
            return (c[:, None, None] * d + dc[:, i, None, None] * lam).astype(complex)
        return Symbol(g, n, order=0.0, real=True)

    return Symbol(fn, n, order=1.0, homogeneity=None, real=True, even=True,
                  grad_xi=(grad(0), grad(1)), name="lambda1")


def _x_function_times_xi(field_vals: np.ndarray, n: int, name: str) -> Symbol:
    """Symbol ``f(x) . xi`` for a vector field ``f`` given as (2, g, g) values."""
    f1, f2 = field_vals

    def fn(xi):
        return (f1 * xi[:, 0, None, None] + f2 * xi[:, 1, None, None]).astype(complex)

    c1 = Symbol(lambda xi: np.broadcast_to(f1, (xi.shape[0],) + f1.shape).astype(complex), n, real=True)
    c2 = Symbol(lambda xi: np.broadcast_to(f2, (xi.shape[0],) + f2.shape).astype(complex), n, real=True)
    return Symbol(fn, n, order=1.0, real=True, grad_xi=(c1, c2), name=name)


def lambda0_symbol(eta: GridField, lam1: Symbol | None = None, n_half: int | None = None) -> Symbol:
    """``{b grad(eta).xi, b lambda1} / (2 b^2 lambda1) + Delta(eta) / 2``."""
    from .paracalc import poisson

    eta = _coarse(eta, n_half)
    geo = SurfaceGeometry.from_field(eta)
    n = eta.trunc.n_max
    lam1 = lam1 or lambda1_symbol(eta)
    if lam1.n_half != eta.trunc.n_max:
        raise ValueError("lambda1 and lambda0 must share the x-grid")
    b = geo.b
    left = _x_function_times_xi(np.stack([b * geo.e1, b * geo.e2]), n, "b grad eta.xi")
    bsym = Symbol(lambda xi: np.broadcast_to(b, (xi.shape[0],) + b.shape).astype(complex), n,
                  real=True, even=True)
    zero = Symbol(lambda xi: np.zeros((xi.shape[0],) + b.shape, complex), n, real=True)
    bsym.grad_xi = (zero, zero)
    right = bsym * lam1
    right.grad_xi = (bsym * lam1.grad_xi[0], bsym * lam1.grad_xi[1])
    br = poisson(left, right)

    def fn(xi):
        lam = lam1(xi).real
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(lam > 0, br(xi) / (2.0 * b * b * np.where(lam > 0, lam, 1.0)), 0.0)
        return q + 0.5 * geo.lap

    return Symbol(fn, n, order=0.0, real=True, name="lambda0")


def dn_symbols(eta: GridField, psi: GridField, kappa: float, tol: float = 1e-10, n_y: int = 80,
               with_taylor: bool = False) -> DnSymbols:
    """Assemble the paralinearization and symmetrization symbols of ``G(eta)``."""
    geo = SurfaceGeometry.from_field(eta)
    n = eta.trunc.n_max
    lam1 = lambda1_symbol(eta)
    lam0 = lambda0_symbol(eta, lam1)
    b32 = geo.b ** 1.5

    def h2fn(xi):
        v = lam1(xi)
        return v * v * b32

    h2 = Symbol(h2fn, n, order=2.0, real=True, even=True, name="h2")

    def qfn(xi):
        l1 = lam1(xi).real
        return ((l1 / (kappa * h2fn(xi).real + 1.0)) ** 0.25).astype(complex)

    def sfn(xi):
        l1 = lam1(xi).real
        return np.sqrt(l1 * (kappa * h2fn(xi).real + 1.0)).astype(complex)

    Q = Symbol(qfn, n, order=-0.25, real=True, even=True, name="Q")
    Sigma = Symbol(sfn, n, order=1.5, real=True, even=True, name="Sigma")
    V, B = velocity_fields(eta, psi, tol, n_y=n_y)
    omega = good_unknown(eta, psi, tol, B=B)
    mk = lambda v: GridField.from_physical(eta.trunc, v, real=True)
    # F(eta) = beta1 Delta + beta2 . grad d_y + beta3 d_y
    beta1 = mk(geo.b - 1.0)
    beta2 = (mk(-2.0 * geo.b * geo.e1), mk(-2.0 * geo.b * geo.e2))
    beta3 = mk(-geo.b * geo.lap)
    a_t = None
    if with_taylor:
        a_t = taylor_coefficient(ZcsState(eta, psi, kappa=kappa), tol, n_y=n_y)
    return DnSymbols(lam1, lam0, h2, Q, Sigma, mk(geo.b), beta1, beta2, beta3, V, B, a_t, omega)


def paralin_remainder(eta: GridField, psi: GridField, tol: float = 1e-10, n_y: int = 80,
                      lam1: Symbol | None = None, lam0: Symbol | None = None) -> GridField:
    """``G(eta) psi - Op(lambda1 + lambda0) omega - Op(-i V.xi - div V / 2) eta``."""
    G = dirichlet_neumann(eta, psi, tol, n_y=n_y)
    (V1, V2), B = velocity_fields(eta, psi, tol, G=G)
    omega = good_unknown(eta, psi, tol, B=B)
    lam1 = lam1 or lambda1_symbol(eta)
    lam0 = lam0 or lambda0_symbol(eta, lam1)
    total = lam1 + lam0
    trunc = eta.trunc
    k1, k2 = trunc.wavenumbers
    v1 = V1.physical()
    v2 = V2.physical()
    div = to_physical(1j * k1 * V1.coeffs + 1j * k2 * V2.coeffs)
    div = div.real if V1.real_flag else div

    def tfn(xi):
        return (-1j * (v1 * xi[:, 0, None, None] + v2 * xi[:, 1, None, None]) - 0.5 * div).astype(complex)

    transport = Symbol(tfn, trunc.n_max, order=1.0, name="-iV.xi-divV/2")
    return G - apply_bw(total, omega) - apply_bw(transport, eta)


# complex variables ----------------------------------------------------------------------------------


def complexify(state: ZcsState) -> tuple[GridField, GridField]:
    """``z = (M(D)^{-1} eta + i M(D) psi) / sqrt(2)`` and its conjugate field."""
    trunc = state.trunc
    lat = np.stack(trunc.wavenumbers, axis=-1)
    m = symmetrizer_m(lat, state.kappa, state.g)
    z = (state.eta.coeffs / m + 1j * m * state.psi.coeffs) / math.sqrt(2.0)
    zf = GridField(trunc, z, False, True)
    zbar = GridField(trunc, np.conj(z[::-1, ::-1]), False, True)
    return zf, zbar


def decomplexify(z: GridField, kappa: float, g: float = 1.0, t: float = 0.0) -> ZcsState:
    """Inverse of :func:`complexify`."""
    trunc = z.trunc
    lat = np.stack(trunc.wavenumbers, axis=-1)
    m = symmetrizer_m(lat, kappa, g)
    zbar = np.conj(z.coeffs[::-1, ::-1])
    eta = m * (z.coeffs + zbar) / math.sqrt(2.0)
    psi = -1j * (z.coeffs - zbar) / (m * math.sqrt(2.0))
    return ZcsState(GridField(trunc, eta, True, True), GridField(trunc, psi, True, True), t, kappa, g)


def paralin_probe(trunc: Truncation, amplitude: float = 0.05, s: float = 0.0,
                  n_list=(8, 12, 16, 20), tol: float = 1e-12, n_y: int = 48, symbol_half: int = 16):
    """Smoothing-order probe of :func:`paralin_remainder` at ``eta = a (cos x1 + cos x2)``."""
    from .paracalc import smoothing_order_probe

    # exact four-mode field: FFT round-off would give eta full spectral support
    half = 0.5 * amplitude
    eta = GridField.from_modes(trunc, {(1, 0): half, (-1, 0): half, (0, 1): half, (0, -1): half},
                               real=True, meanzero=True)
    lam1 = lambda1_symbol(eta, symbol_half)
    lam0 = lambda0_symbol(eta, lam1, symbol_half)
    return smoothing_order_probe(
        lambda e: paralin_remainder(eta, e, tol, n_y=n_y, lam1=lam1, lam0=lam0), s, n_list, trunc)
