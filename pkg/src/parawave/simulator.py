"""Time integration of the Zakharov-Craig-Sulem water-wave system on the torus.

The unknowns are the surface elevation ``eta`` and the surface trace ``psi``
of the velocity potential:

    eta_t = G(eta) psi
    psi_t = -g eta - |grad psi|^2 / 2
            + (grad eta . grad psi + G(eta) psi)^2 / (2 (1 + |grad eta|^2))
            + kappa div(grad eta / sqrt(1 + |grad eta|^2))

The default integrator is a Lawson (integrating factor) RK4 in the complex
variable ``z = (M^{-1} eta + i M psi) / sqrt(2)``, whose linear part is the
diagonal rotation ``exp(-i t Lambda(D))``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dirichlet_neumann import NumericalFailure, complexify, dirichlet_neumann, decomplexify
from .grid import GridField, Truncation, ZcsState, sobolev_norm, to_coeffs, to_physical
from .resonance import dispersion

SCHEMES = ("lawson_rk4", "rk4")
RUN_COLUMNS = ("t", "eta_norm", "psi_norm", "z_norm", "H", "mass", "mom1", "mom2", "E_low", "E_high")


class InstabilityError(NumericalFailure):
    code = "instability"


@dataclass(frozen=True)
class RunConfig:
    n_max: int = 32
    kappa: float = 1.0
    dt: float = 0.005
    t_end: float = 1.0
    scheme: str = "lawson_rk4"
    dealias: bool = True
    dn_tol: float = 1e-10
    snapshot_every: int = 1
    seed: int = 0
    n_y: int = 24
    dn_scale: float = 2.0
    g: float = 1.0
    nonlinear: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end != 0 and not self.t_end >= self.dt:
            raise ValueError("t_end must be zero or at least dt")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be at least 1")
        if self.n_y < 4:
            raise ValueError("n_y must be at least 4")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


# right-hand side -------------------------------------------------------------------


class DnCache:
    """Keeps the last strip correction so consecutive solves start warm."""

    def __init__(self):
        self.correction = None
        self.solves = 0
        self.iterations = 0

    def solve(self, eta: GridField, psi: GridField, tol: float, n_y: int, scale: float = 1.0) -> GridField:
        initial = self.correction
        if initial is not None and initial.shape[0] != n_y + 1:
            initial = None
        G, sol = dirichlet_neumann(eta, psi, tol, n_y=n_y, scale=scale, return_solution=True,
                                   initial=initial)
        self.correction = sol.correction
        self.solves += 1
        self.iterations += sol.iterations
        return G


def _grad(c: np.ndarray, trunc: Truncation):
    k1, k2 = trunc.wavenumbers
    return to_physical(1j * k1 * c).real, to_physical(1j * k2 * c).real


def rhs(state: ZcsState, dn_tol: float = 1e-10, n_y: int = 24, dealias: bool = True,
        cache: DnCache | None = None, dn_scale: float = 2.0) -> tuple[GridField, GridField]:
    """Time derivatives ``(eta_t, psi_t)``; both real and mean-zero."""
    trunc = state.trunc
    if not np.any(state.eta.coeffs) and not np.any(state.psi.coeffs):
        z = GridField.zeros(trunc, real=True, meanzero=True)
        return z, z.copy()
    if cache is None:
        G = dirichlet_neumann(state.eta, state.psi, dn_tol, n_y=n_y, scale=dn_scale)
    else:
        G = cache.solve(state.eta, state.psi, dn_tol, n_y, dn_scale)
    k1, k2 = trunc.wavenumbers
    e1, e2 = _grad(state.eta.coeffs, trunc)
    p1, p2 = _grad(state.psi.coeffs, trunc)
    g_vals = to_physical(G.coeffs).real
    slope2 = 1.0 + e1 * e1 + e2 * e2
    root = np.sqrt(slope2)
    bernoulli = -0.5 * (p1 * p1 + p2 * p2) + 0.5 * (e1 * p1 + e2 * p2 + g_vals) ** 2 / slope2
    curv = 1j * k1 * to_coeffs(e1 / root) + 1j * k2 * to_coeffs(e2 / root)
    psi_t = -state.g * state.eta.coeffs + to_coeffs(bernoulli) + state.kappa * curv
    eta_t = G.coeffs
    if dealias:
        mask = trunc.dealias_mask()
        eta_t = eta_t * mask
        psi_t = psi_t * mask
    return GridField(trunc, eta_t, True, True), GridField(trunc, psi_t, True, True)


def linear_rhs(state: ZcsState) -> tuple[GridField, GridField]:
    """Linearisation ``(|D| psi, -(g + kappa |D|^2) eta)``."""
    ak = state.trunc.abs_k
    return (GridField(state.trunc, ak * state.psi.coeffs, True, True),
            GridField(state.trunc, -(state.g + state.kappa * ak ** 2) * state.eta.coeffs, True, True))


# invariants --------------------------------------------------------------------------


def _integral(values: np.ndarray) -> float:
    return float(np.mean(values)) * (2.0 * math.pi) ** 2


def invariants(state: ZcsState, dn_tol: float = 1e-10, n_y: int = 32,
               G: GridField | None = None, dn_scale: float = 2.0) -> tuple[float, float, float, float]:
    """Hamiltonian, mass and the two momenta by collocation sums."""
    trunc = state.trunc
    eta = state.eta.physical()
    psi = state.psi.physical()
    if G is None:
        if not np.any(state.eta.coeffs) and not np.any(state.psi.coeffs):
            G = GridField.zeros(trunc, real=True)
        else:
            G = dirichlet_neumann(state.eta, state.psi, dn_tol, n_y=n_y, scale=dn_scale)
    e1, e2 = _grad(state.eta.coeffs, trunc)
    kinetic = 0.5 * _integral(psi * G.physical())
    potential = 0.5 * state.g * _integral(eta * eta)
    surface = state.kappa * _integral((e1 * e1 + e2 * e2) / (np.sqrt(1.0 + e1 * e1 + e2 * e2) + 1.0))
    mass = _integral(eta)
    return kinetic + potential + surface, mass, _integral(e1 * psi), _integral(e2 * psi)


# complex variable and stepping -------------------------------------------------------


def _lattice(trunc: Truncation) -> np.ndarray:
    return np.stack(trunc.wavenumbers, axis=-1)


def momentum_scale(state: ZcsState) -> float:
    """``(2 pi)^2 sum_j |j| |eta_j| |psi_j|``, an upper bound for ``|M_1|`` and ``|M_2|``.

    Used to normalise momentum drift: random-phase data have momenta near
    zero, so a relative drift against ``M(0)`` would only measure round-off.
    """
    c = state.eta.coeffs
    d = state.psi.coeffs
    return float((2.0 * math.pi) ** 2 * np.sum(state.trunc.abs_k * np.abs(c) * np.abs(d)))


def frequencies(trunc: Truncation, kappa: float, g: float = 1.0) -> np.ndarray:
    return dispersion(_lattice(trunc), kappa, g)


class Integrator:
    """One-step maps for the configured scheme, sharing a warm DN cache."""

    def __init__(self, cfg: RunConfig, trunc: Truncation):
        self.cfg = cfg
        self.trunc = trunc
        self.cache = DnCache()
        self.omega = frequencies(trunc, cfg.kappa, cfg.g)
        self.mask = trunc.dealias_mask() if cfg.dealias else np.ones(trunc.shape, bool)

    def field_rhs(self, state: ZcsState) -> tuple[GridField, GridField]:
        if not self.cfg.nonlinear:
            return linear_rhs(state)
        return rhs(state, self.cfg.dn_tol, self.cfg.n_y, self.cfg.dealias, self.cache, self.cfg.dn_scale)

    def _state(self, z: np.ndarray, t: float) -> ZcsState:
        return decomplexify(GridField(self.trunc, z, False, True), self.cfg.kappa, self.cfg.g, t)

    def _z_rhs(self, z: np.ndarray, t: float) -> np.ndarray:
        st = self._state(z, t)
        et, pt = self.field_rhs(st)
        zt, _ = complexify(ZcsState(et, pt, t, self.cfg.kappa, self.cfg.g))
        return zt.coeffs

    def _nonlinear_part(self, z: np.ndarray, t: float) -> np.ndarray:
        """``z_t + i Lambda z``; identically zero for the linear flow."""
        if not self.cfg.nonlinear:
            return np.zeros_like(z)
        return self._z_rhs(z, t) + 1j * self.omega * z

    def lawson_step(self, z: np.ndarray, t: float, h: float) -> np.ndarray:
        half = np.exp(-0.5j * h * self.omega)
        full = half * half
        k1 = self._nonlinear_part(z, t)
        k2 = self._nonlinear_part(half * (z + 0.5 * h * k1), t + 0.5 * h)
        k3 = self._nonlinear_part(half * z + 0.5 * h * k2, t + 0.5 * h)
        k4 = self._nonlinear_part(full * z + h * half * k3, t + h)
        return full * z + (h / 6.0) * (full * k1 + 2.0 * half * (k2 + k3) + k4)

    def rk4_step(self, z: np.ndarray, t: float, h: float) -> np.ndarray:
        f = self._z_rhs
        k1 = f(z, t)
        k2 = f(z + 0.5 * h * k1, t + 0.5 * h)
        k3 = f(z + 0.5 * h * k2, t + 0.5 * h)
        k4 = f(z + h * k3, t + h)
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def step_z(self, z: np.ndarray, t: float, h: float | None = None) -> np.ndarray:
        h = self.cfg.dt if h is None else h
        before = float(np.linalg.norm(z))
        if self.cfg.scheme == "lawson_rk4":
            out = self.lawson_step(z, t, h)
        else:
            out = self.rk4_step(z, t, h)
        after = float(np.linalg.norm(out))
        if not np.isfinite(after) or (before > 0 and after > 10.0 * before):
            raise InstabilityError("norm grew more than tenfold in one step",
                                   {"t": t, "dt": h, "norm_before": before, "norm_after": after})
        return out * self.mask

    def to_z(self, state: ZcsState) -> np.ndarray:
        return complexify(state)[0].coeffs * self.mask

    def to_state(self, z: np.ndarray, t: float) -> ZcsState:
        return self._state(z, t)


def step(state: ZcsState, cfg: RunConfig, integrator: Integrator | None = None) -> ZcsState:
    """Advance ``state`` by ``cfg.dt``."""
    if state.kappa != cfg.kappa or state.g != cfg.g:
        raise ValueError("state and configuration disagree on the physical parameters")
    integ = integrator or Integrator(cfg, state.trunc)
    z = integ.step_z(integ.to_z(state), state.t)
    return integ.to_state(z, state.t + cfg.dt)


# initial data --------------------------------------------------------------------------


def run_rng(seed: int, eps: float = 0.0, kappa: float = 0.0) -> np.random.Generator:
    """Per-run generator seeded deterministically from ``(seed, eps, kappa)``."""
    words = [int(seed) & 0xFFFFFFFF]
    for v in (eps, kappa):
        words.extend(np.frombuffer(np.float64(v).tobytes(), dtype=np.uint32).tolist())
    return np.random.default_rng(np.random.SeedSequence(words))


def random_initial(trunc: Truncation, kappa: float, rng: np.random.Generator,
                   annulus: tuple[float, float] = (2.0, 8.0), g: float = 1.0) -> ZcsState:
    """Random phases and moduli in ``[1/2, 1]`` for ``z`` on an annulus; unnormalised.

    Equal moduli would make the data symmetric enough for both momenta to
    vanish identically, which hides momentum drift.
    """
    ak = trunc.abs_k
    band = (ak >= annulus[0]) & (ak <= annulus[1])
    phases = rng.uniform(0.0, 2.0 * math.pi, size=trunc.shape)
    moduli = rng.uniform(0.5, 1.0, size=trunc.shape)
    z = np.where(band, moduli * np.exp(1j * phases), 0.0)
    return decomplexify(GridField(trunc, z, False, True), kappa, g)


def scaled(state: ZcsState, factor: float) -> ZcsState:
    return replace(state, eta=state.eta * factor, psi=state.psi * factor)


def energy_space_norm(state: ZcsState, s: float) -> float:
    """``||eta||_{s+1/4} + ||psi||_{s-1/4}`` with homogeneous weights."""
    return (sobolev_norm(state.eta, s + 0.25, homogeneous=True)
            + sobolev_norm(state.psi, s - 0.25, homogeneous=True))


def initial_by_norm(trunc: Truncation, kappa: float, eps: float, s: float, seed: int,
                    g: float = 1.0) -> ZcsState:
    base = random_initial(trunc, kappa, run_rng(seed, eps, kappa), g=g)
    return scaled(base, eps / energy_space_norm(base, s))


def initial_by_amplitude(trunc: Truncation, kappa: float, amplitude: float, seed: int,
                         g: float = 1.0) -> ZcsState:
    """Random data rescaled so that ``max |eta| = amplitude``."""
    base = random_initial(trunc, kappa, run_rng(seed, amplitude, kappa), g=g)
    return scaled(base, amplitude / float(np.max(np.abs(base.eta.physical()))))


# run records -----------------------------------------------------------------------------


@dataclass
class RunRecord:
    """Time series sampled every ``snapshot_every`` steps; columns as in :data:`RUN_COLUMNS`."""

    s: float
    rows: list = field(default_factory=list)
    aborted: bool = False
    error: dict | None = None
    final: ZcsState | None = None

    def column(self, name: str) -> np.ndarray:
        i = RUN_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def write_csv(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(header.rstrip("\n") + "\n")
            w = csv.writer(fh)
            w.writerow(RUN_COLUMNS)
            for r in self.rows:
                w.writerow([f"{v:.17g}" for v in r])


class EnergyMonitor:
    """Block energy ``E_low`` and multiplier skeleton ``E_high`` of ``z`` at index ``s``.

    The partition must cover ``B(2/eps)`` inside the truncation, so ``eps`` is
    raised to ``2 / n_max`` when needed.
    """

    def __init__(self, trunc: Truncation, s: float, eps: float, kappa: float, params=None):
        from .normal_form import NfParams, block_partition

        self.s = s
        self.kappa = kappa
        self.eps = max(eps, 2.0 / trunc.n_max)
        self.partition = block_partition(params or NfParams(), int(math.ceil(2.0 / self.eps)))

    def __call__(self, z: GridField) -> tuple[float, float]:
        from .normal_form import low_energy, modified_energy

        return (low_energy(z, self.s, self.eps, self.partition),
                modified_energy(z, self.s, self.eps, self.kappa))


def snapshot_row(state: ZcsState, z: GridField, s: float, cfg: RunConfig,
                 monitor: EnergyMonitor | None) -> tuple:
    H, mass, m1, m2 = invariants(state, cfg.dn_tol, max(cfg.n_y, 32), dn_scale=cfg.dn_scale)
    e_low, e_high = monitor(z) if monitor is not None else (float("nan"), float("nan"))
    return (state.t,
            sobolev_norm(state.eta, s + 0.25, homogeneous=True),
            sobolev_norm(state.psi, s - 0.25, homogeneous=True),
            sobolev_norm(z, s, homogeneous=True),
            H, mass, m1, m2, e_low, e_high)


def run(cfg: RunConfig, initial: ZcsState, s: float = 3.0, eps: float | None = None,
        energies: bool = True, stop=None) -> RunRecord:
    """Integrate to ``cfg.t_end``; an instability or DN failure ends the run with a partial record.

    ``stop(t, z)`` may return True to end the run early (used by the lifespan
    experiment).
    """
    trunc = initial.trunc
    if trunc.n_max != cfg.n_max:
        raise ValueError("initial state and configuration disagree on n_max")
    if initial.kappa != cfg.kappa or initial.g != cfg.g:
        raise ValueError("initial state and configuration disagree on the physical parameters")
    integ = Integrator(cfg, trunc)
    z = integ.to_z(initial)
    monitor = None
    if energies:
        if eps is None:
            eps = energy_space_norm(initial, s) or 1.0
        monitor = EnergyMonitor(trunc, s, eps, cfg.kappa)
    rec = RunRecord(s)
    t = initial.t
    state = integ.to_state(z, t)
    rec.rows.append(snapshot_row(state, GridField(trunc, z, False, True), s, cfg, monitor))
    for n in range(1, cfg.n_steps + 1):
        try:
            z = integ.step_z(z, t)
        except NumericalFailure as exc:
            rec.aborted = True
            rec.error = {"code": exc.code, "message": str(exc), "context": exc.context}
            break
        t = initial.t + n * cfg.dt
        done = stop is not None and stop(t, z)
        if n % cfg.snapshot_every == 0 or n == cfg.n_steps or done:
            state = integ.to_state(z, t)
            rec.rows.append(snapshot_row(state, GridField(trunc, z, False, True), s, cfg, monitor))
        if done:
            break
    rec.final = integ.to_state(z, t)
    return rec


def evolve(state: ZcsState, cfg: RunConfig, n_steps: int | None = None) -> ZcsState:
    """Advance ``state`` by ``n_steps`` (default ``cfg.n_steps``) without diagnostics."""
    integ = Integrator(cfg, state.trunc)
    z = integ.to_z(state)
    n_steps = cfg.n_steps if n_steps is None else n_steps
    for n in range(n_steps):
        z = integ.step_z(z, state.t + n * cfg.dt)
    return integ.to_state(z, state.t + n_steps * cfg.dt)


# experiments -------------------------------------------------------------------------------


def linear_frequency_fit(trunc: Truncation, j, kappa: float, amplitude: float = 1e-6,
                         dt: float = 0.01, n_steps: int = 200, nonlinear: bool = True,
                         n_y: int = 24) -> float:
    """Fitted angular frequency of ``z_j`` for a small travelling wave started in mode ``j``."""
    n = trunc.n_max
    z = np.zeros(trunc.shape, complex)
    z[j[0] + n, j[1] + n] = amplitude
    cfg = RunConfig(n_max=n, kappa=kappa, dt=dt, t_end=dt * n_steps, nonlinear=nonlinear, n_y=n_y)
    integ = Integrator(cfg, trunc)
    phases = [np.angle(z[j[0] + n, j[1] + n])]
    for k in range(n_steps):
        z = integ.step_z(z, k * dt)
        phases.append(np.angle(z[j[0] + n, j[1] + n]))
    times = dt * np.arange(n_steps + 1)
    slope = np.polyfit(times, np.unwrap(phases), 1)[0]
    return float(-slope)


@dataclass
class ScalingReport:
    lam: float
    t: float
    mismatch: float
    reference_sup: float


def scaling_check(state: ZcsState, lam: float, cfg: RunConfig) -> ScalingReport:
    """Compare the run of ``(eta, psi)`` under ``(g, kappa)`` to time ``t`` with the run of
    ``(eta, lam psi)`` under ``(lam^2 g, lam^2 kappa)`` to time ``t / lam``.

    Both runs take the same number of steps; the second uses ``dt / lam``.
    The mismatch is ``max(sup |eta - eta_l|, sup |lam psi - psi_l|)``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    ref = evolve(state, cfg)
    scaled_state = ZcsState(state.eta.copy(), state.psi * lam, state.t, state.kappa * lam ** 2,
                            state.g * lam ** 2)
    cfg_l = replace(cfg, dt=cfg.dt / lam, t_end=cfg.t_end / lam, kappa=cfg.kappa * lam ** 2,
                    g=cfg.g * lam ** 2)
    other = evolve(scaled_state, cfg_l, n_steps=cfg.n_steps)
    d_eta = np.max(np.abs(ref.eta.physical() - other.eta.physical()))
    d_psi = np.max(np.abs(lam * ref.psi.physical() - other.psi.physical()))
    sup = max(np.max(np.abs(ref.eta.physical())), np.max(np.abs(lam * ref.psi.physical())))
    return ScalingReport(lam, cfg.t_end, float(max(d_eta, d_psi)), float(sup))


@dataclass
class LifespanRow:
    epsilon: float
    T: float
    censored: bool


@dataclass
class LifespanResult:
    rows: list
    slope: float
    intercept: float
    slope_ci: tuple[float, float]

    def write_csv(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(header.rstrip("\n") + "\n")
            w = csv.writer(fh)
            w.writerow(["epsilon", "T", "censored"])
            for r in self.rows:
                w.writerow([f"{r.epsilon:.17g}", f"{r.T:.17g}", int(r.censored)])


def loglog_fit_ci(x, y, level: float = 0.95) -> tuple[float, float, tuple[float, float]]:
    """OLS slope of ``log y`` on ``log x`` with a Student-t confidence interval."""
    from scipy import stats

    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    res = stats.linregress(lx, ly)
    dof = len(lx) - 2
    if dof < 1 or not np.isfinite(res.stderr):
        return float(res.slope), float(res.intercept), (float("nan"), float("nan"))
    q = stats.t.ppf(0.5 + level / 2.0, dof)
    return float(res.slope), float(res.intercept), (float(res.slope - q * res.stderr),
                                                   float(res.slope + q * res.stderr))


class _ExitMonitor:
    """Stop predicate: ``||z||_{s0} > factor eps``; remembers the exit time."""

    def __init__(self, trunc: Truncation, s0: float, bound: float):
        self.trunc, self.s0, self.bound = trunc, s0, bound
        self.time = None

    def __call__(self, t, z):
        if sobolev_norm(GridField(self.trunc, z, False, True), self.s0, homogeneous=True) > self.bound:
            self.time = t
            return True
        return False


def _lifespan_one(args) -> LifespanRow:
    eps, cfg, s, s0, factor, t_cap, seed = args
    trunc = Truncation(cfg.n_max)
    init = initial_by_norm(trunc, cfg.kappa, eps, s, seed, cfg.g)
    monitor = _ExitMonitor(trunc, s0, factor * eps)
    rec = run(cfg, init, s, eps, energies=False, stop=monitor)
    if monitor.time is not None:
        return LifespanRow(eps, monitor.time, False)
    if rec.aborted:
        return LifespanRow(eps, float(rec.rows[-1][0]), False)
    return LifespanRow(eps, t_cap, True)


def lifespan_experiment(eps_list, kappa: float, s: float = 3.0, factor: float = 2.0,
                        cfg: RunConfig | None = None, t_cap: float = 100.0, s0: float = 3.0,
                        seed: int = 0, jobs: int = 1) -> LifespanResult:
    """``T(eps)``: first time ``||z||_{s0}`` leaves ``[0, factor eps]``, capped at ``t_cap``.

    Censored times enter the fit as the lower bound ``t_cap``.  An aborted run
    (instability) counts as an exit at its last recorded time.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be decreasing with at least three entries")
    cfg = replace(cfg or RunConfig(kappa=kappa), kappa=kappa, t_end=t_cap)
    tasks = [(eps, cfg, s, s0, factor, t_cap, seed) for eps in eps_list]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_lifespan_one, tasks))
    else:
        rows = [_lifespan_one(t) for t in tasks]
    slope, icpt, ci = loglog_fit_ci([r.epsilon for r in rows], [r.T for r in rows])
    return LifespanResult(rows, slope, icpt, ci)


@dataclass
class DriftResult:
    eps: list
    z_drift: list
    low_drift: list
    z_exponent: float
    low_exponent: float


def energy_drift_experiment(cfg: RunConfig, s: float, eps: float, window: float = 1.0,
                            seed: int = 0) -> DriftResult:
    """Drift rates of ``||z||_s^2`` and ``E_low`` over a window, at ``eps, eps/2, eps/4``.

    The rate is ``max_t |E(t) - E(0)| / window``; the exponents are log-log
    slopes against ``eps``.
    """
    cfg = replace(cfg, t_end=window)
    trunc = Truncation(cfg.n_max)
    levels = [eps, eps / 2.0, eps / 4.0]
    zd, ld = [], []
    for e in levels:
        init = initial_by_norm(trunc, cfg.kappa, e, s, seed, cfg.g)
        rec = run(cfg, init, s, e, energies=True)
        if rec.aborted:
            raise InstabilityError("energy drift run aborted", rec.error or {})
        zn = rec.column("z_norm") ** 2
        el = rec.column("E_low")
        zd.append(float(np.max(np.abs(zn - zn[0]))) / window)
        ld.append(float(np.max(np.abs(el - el[0]))) / window)
    z_exp = fit_exponent(levels, zd)
    l_exp = fit_exponent(levels, ld)
    return DriftResult(levels, zd, ld, z_exp, l_exp)


def fit_exponent(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def dt_study(state: ZcsState, cfg: RunConfig, dts: Sequence[float], t_end: float) -> list[tuple[float, float]]:
    """Final-state difference ``sup |z_dt - z_{dt/2}|`` for each ``dt``; used to pick ``dt``."""
    out = []
    for dt in dts:
        a = evolve(state, replace(cfg, dt=dt, t_end=t_end))
        b = evolve(state, replace(cfg, dt=dt / 2.0, t_end=t_end))
        za, zb = complexify(a)[0].coeffs, complexify(b)[0].coeffs
        out.append((float(dt), float(np.max(np.abs(za - zb)))))
    return out


def refinement_order(study: list[tuple[float, float]]) -> float:
    """Observed order from consecutive entries of :func:`dt_study` (halving ``dt``)."""
    if len(study) < 2:
        raise ValueError("need at least two step sizes")
    (h1, e1), (h2, e2) = study[-2], study[-1]
    return float(math.log(e1 / e2) / math.log(h1 / h2))
