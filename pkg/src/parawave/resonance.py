"""Gravity-capillary dispersion relation and three-wave small divisors.

``Lambda(xi) = sqrt(|xi| (g + kappa |xi|^2))`` and the divisors

    sigma1 Lambda(j) + sigma2 Lambda(k) - Lambda(sigma1 j + sigma2 k)

control whether quadratic interactions can be removed by a normal-form
transformation.  The scans below enumerate every pair in a lattice ball and
weight each divisor by ``max(|j|, |k|)^2 min(|j|, |k|)^4``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .paracalc import plateau

SIGN_PAIRS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def _check_kappa(kappa: float):
    if not kappa > 0:
        raise ValueError(f"surface tension must be positive, got {kappa}")


def dispersion(xi, kappa: float, g: float = 1.0):
    """``Lambda(xi) = sqrt(|xi| (g + kappa |xi|^2))`` over the trailing axis."""
    _check_kappa(kappa)
    xi = np.asarray(xi, dtype=float)
    r = np.sqrt(np.sum(xi * xi, axis=-1))
    return np.sqrt(r * (g + kappa * r * r))


def dispersion_radial(r, kappa: float, g: float = 1.0):
    r = np.asarray(r, dtype=float)
    return np.sqrt(r * (g + kappa * r * r))


def dispersion_grad(xi, kappa: float, g: float = 1.0):
    """Gradient ``xi (g + 3 kappa |xi|^2) / (2 Lambda(xi))``; zero at the origin."""
    xi = np.asarray(xi, dtype=float)
    r = np.sqrt(np.sum(xi * xi, axis=-1))
    lam = dispersion_radial(r, kappa, g)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(r > 0, (g + 3.0 * kappa * r * r) / (2.0 * np.where(lam > 0, lam, 1.0) * np.where(r > 0, r, 1.0)), 0.0)
    return xi * fac[..., None]


def symmetrizer_m(xi, kappa: float, g: float = 1.0):
    """``M(xi) = (|xi| / (g + kappa |xi|^2))^{1/4}`` blended to 1 for ``|xi| <= 1/2``."""
    _check_kappa(kappa)
    xi = np.asarray(xi, dtype=float)
    r = np.sqrt(np.sum(xi * xi, axis=-1))
    low = plateau(r, 0.25, 0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = (r / (g + kappa * r * r)) ** 0.25
    return low * 1.0 + (1.0 - low) * np.where(r > 0, m, 1.0)


def three_wave_divisor(j, k, s1: int, s2: int, kappa: float, g: float = 1.0) -> float:
    """``s1 Lambda(j) + s2 Lambda(k) - Lambda(s1 j + s2 k)``.

    Raises ``ValueError`` when the output frequency vanishes.
    """
    j = np.asarray(j, dtype=float)
    k = np.asarray(k, dtype=float)
    out = s1 * j + s2 * k
    if not np.any(out):
        raise ValueError("degenerate combination: zero output frequency")
    return float(s1 * dispersion(j, kappa, g) + s2 * dispersion(k, kappa, g) - dispersion(out, kappa, g))


def divisor_weight(j, k) -> np.ndarray:
    a = np.sqrt(np.sum(np.asarray(j, float) ** 2, axis=-1))
    b = np.sqrt(np.sum(np.asarray(k, float) ** 2, axis=-1))
    return np.maximum(a, b) ** 2 * np.minimum(a, b) ** 4


@dataclass(frozen=True)
class ResonanceRecord:
    j: tuple[int, int]
    k: tuple[int, int]
    s1: int
    s2: int
    divisor: float
    weight: float

    @property
    def scaled(self) -> float:
        return abs(self.divisor) * self.weight


@dataclass
class ScanResult:
    kappa: float
    K: int
    gamma: float
    min_record: ResonanceRecord
    empirical_c: float
    violations: list = field(default_factory=list)
    n_cases: int = 0
    # minimum |divisor| per (ceil max, ceil min) shell, used for exponent fits
    shell_min: dict = field(default_factory=dict)

    def exponents(self, min_max_shell: int = 2) -> tuple[float, float, float]:
        """Least-squares fit ``log dmin = c + a log max + b log min``; returns ``(a, b, c)``."""
        rows = [(M, m, d) for (M, m), d in self.shell_min.items() if M >= min_max_shell and d > 0]
        if len(rows) < 3:
            raise ValueError("not enough shells for an exponent fit")
        arr = np.array(rows, dtype=float)
        A = np.column_stack([np.log(arr[:, 0]), np.log(arr[:, 1]), np.ones(len(arr))])
        coef, *_ = np.linalg.lstsq(A, np.log(arr[:, 2]), rcond=None)
        return float(coef[0]), float(coef[1]), float(coef[2])


def lattice_ball(K: float) -> np.ndarray:
    """Nonzero lattice points with ``|j| <= K``, lexicographic."""
    r = int(math.floor(K))
    rng = np.arange(-r, r + 1)
    j1, j2 = np.meshgrid(rng, rng, indexing="ij")
    pts = np.stack([j1.ravel(), j2.ravel()], axis=1)
    n2 = np.sum(pts * pts, axis=1)
    return pts[(n2 > 0) & (n2 <= K * K + 1e-9)]


def _scan_chunk(args):
    rows, ball, kappa, gamma, g = args
    lam = dispersion(ball, kappa, g)
    nb = np.sqrt(np.sum(ball.astype(float) ** 2, axis=1))
    shell = np.ceil(nb - 1e-9).astype(np.int64)
    best = (np.inf, None)
    viol = []
    shell_min: dict = {}
    n_cases = 0
    for s1, s2 in SIGN_PAIRS:
        J = ball[rows]
        out = s1 * J[:, None, :] + s2 * ball[None, :, :]
        rout = np.sqrt(np.sum(out.astype(float) ** 2, axis=-1))
        lout = np.sqrt(rout * (g + kappa * rout * rout))
        d = s1 * lam[rows][:, None] + s2 * lam[None, :] - lout
        valid = rout > 0
        n_cases += int(valid.sum())
        a = nb[rows][:, None]
        b = nb[None, :]
        w = np.maximum(a, b) ** 2 * np.minimum(a, b) ** 4
        scaled = np.where(valid, np.abs(d) * w, np.inf)
        i = np.unravel_index(np.argmin(scaled), scaled.shape)
        if scaled[i] < best[0]:
            best = (float(scaled[i]), ResonanceRecord(tuple(int(v) for v in J[i[0]]),
                                                      tuple(int(v) for v in ball[i[1]]),
                                                      s1, s2, float(d[i]), float(w[i])))
        bad = np.argwhere(valid & (np.abs(d) < gamma / w))
        for r_, c_ in bad:
            viol.append(ResonanceRecord(tuple(int(v) for v in J[r_]), tuple(int(v) for v in ball[c_]),
                                        s1, s2, float(d[r_, c_]), float(w[r_, c_])))
        smax = np.maximum(shell[rows][:, None], shell[None, :])
        smin = np.minimum(shell[rows][:, None], shell[None, :])
        key = smax * 100000 + smin
        ad = np.where(valid, np.abs(d), np.inf).ravel()
        key = key.ravel()
        order = np.lexsort((ad, key))
        ks, first = np.unique(key[order], return_index=True)
        for kk, f in zip(ks, first):
            val = ad[order[f]]
            tk = (int(kk // 100000), int(kk % 100000))
            if val < shell_min.get(tk, np.inf):
                shell_min[tk] = float(val)
    return best, viol, shell_min, n_cases


def divisor_scan(K: int, kappa: float, gamma: float = 1e-3, g: float = 1.0,
                 jobs: int = 1, chunk: int = 64) -> ScanResult:
    """Exhaustive scan of every ``|j|, |k| <= K`` and every sign pair."""
    if K < 2:
        raise ValueError("K must be at least 2")
    _check_kappa(kappa)
    ball = lattice_ball(K)
    tasks = [(np.arange(s, min(s + chunk, len(ball))), ball, kappa, gamma, g)
             for s in range(0, len(ball), chunk)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_scan_chunk, tasks))
    else:
        parts = [_scan_chunk(t) for t in tasks]
    best = (np.inf, None)
    viol: list = []
    shell_min: dict = {}
    n_cases = 0
    for b, v, sm, nc in parts:
        if b[0] < best[0]:
            best = b
        viol.extend(v)
        n_cases += nc
        for key, val in sm.items():
            if val < shell_min.get(key, np.inf):
                shell_min[key] = val
    return ScanResult(kappa, K, gamma, best[1], best[0], viol, n_cases, shell_min)


@dataclass
class KappaRow:
    kappa: float
    empirical_c: float
    count_below: int
    min_record: ResonanceRecord


def kappa_badset_scan(kappa_grid, K: int, gamma: float, g: float = 1.0, jobs: int = 1) -> list[KappaRow]:
    """Per-kappa summary of :func:`divisor_scan`."""
    rows = []
    for kappa in kappa_grid:
        res = divisor_scan(K, float(kappa), gamma, g, jobs=jobs)
        rows.append(KappaRow(float(kappa), res.empirical_c, len(res.violations), res.min_record))
    return rows


def resonant_kappa(j, k, s1: int = 1, s2: int = 1, lo: float = 1e-3, hi: float = 10.0,
                   tol: float = 1e-14) -> float:
    """Bisection for a surface tension making the divisor of ``(j, k)`` vanish."""
    f = lambda kap: three_wave_divisor(j, k, s1, s2, kap)
    flo, fhi = f(lo), f(hi)
    if flo * fhi > 0:
        raise ValueError("no sign change of the divisor on the bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or hi - lo < tol:
            return mid
        if flo * fm < 0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)
