import math

import numpy as np
import pytest

from parawave.grid import GridField, Truncation, ZcsState, differential, sobolev_norm
from parawave.dirichlet_neumann import (NonContractionError, complexify, decomplexify,
                                        dirichlet_neumann, dn_recursion_oracle, dn_symbols,
                                        good_unknown, harmonic_flat, lambda1_symbol,
                                        paralin_remainder, strip_solve, taylor_coefficient,
                                        velocity_fields)
from parawave.resonance import dispersion, symmetrizer_m

TR = Truncation(16)


def field(fn, trunc=TR):
    return GridField.from_function(trunc, fn, real=True)


def analytic_pair(amp, trunc=TR):
    eta = field(lambda x, y: amp * np.cos(x), trunc)
    psi = field(lambda x, y: np.exp(amp * np.cos(x)) * np.cos(x), trunc)
    G = field(lambda x, y: np.exp(amp * np.cos(x)) * (np.cos(x) - amp * np.sin(x) ** 2), trunc)
    return eta, psi, G


def random_small(seed, amp, trunc=TR, radius=5):
    rng = np.random.default_rng(seed)
    c = np.zeros(trunc.shape, complex)
    mask = trunc.ball_mask(radius) & (trunc.abs_k > 0)
    c[mask] = rng.normal(size=mask.sum()) + 1j * rng.normal(size=mask.sum())
    u = GridField(trunc, c, True, True)
    return u * (amp / np.max(np.abs(u.physical())))


def halving_ratios(fn, amps):
    vals = [fn(a) for a in amps]
    return [vals[i] / vals[i + 1] for i in range(len(vals) - 1)]


class TestHarmonicFlat:
    def test_surface_is_identity(self):
        psi = random_small(0, 1.0)
        assert np.array_equal(harmonic_flat(psi, 0.0).coeffs, psi.coeffs)

    def test_unit_mode_decay(self):
        psi = GridField.from_modes(TR, {(1, 0): 1.0})
        assert harmonic_flat(psi, -1.0).coefficient((1, 0)) == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_constant_unchanged(self):
        psi = GridField.from_modes(TR, {(0, 0): 2.0})
        assert harmonic_flat(psi, -4.0).coefficient((0, 0)) == 2.0


class TestStripSolve:
    def test_flat_surface_matches_harmonic_extension(self):
        psi = random_small(1, 1.0)
        sol = strip_solve(GridField.zeros(TR, real=True), psi, n_y=40)
        for i in (0, 5, 15):
            want = harmonic_flat(psi, float(sol.y[i])).coeffs
            assert np.max(np.abs(sol.level(i).coeffs - want)) < 1e-12

    def test_interior_matches_analytic_extension(self):
        eta, psi, _ = analytic_pair(0.1)
        sol = strip_solve(eta, psi, 1e-12, n_y=60)
        x1, _ = TR.grid
        # the last node is the surface y = 0; the trace differs from psi only by FFT round-off
        assert sol.y[-1] == 0.0
        assert np.max(np.abs(sol.level(len(sol.y) - 1).coeffs - psi.coeffs)) < 1e-15
        inside = [i for i, y in enumerate(sol.y) if -6.0 < y < 0.0]
        assert len(inside) > 30
        for i in inside:
            want = np.exp(sol.y[i] + 0.1 * np.cos(x1)) * np.cos(x1)
            assert np.max(np.abs(sol.level(i).physical() - want)) < 1e-6

    def test_update_contracts(self):
        eta, psi, _ = analytic_pair(0.1)
        sol = strip_solve(eta, psi, 1e-12, n_y=40)
        ratios = [r for _, _, r in sol.log if np.isfinite(r)]
        assert sol.converged and sol.decay_ok
        assert max(ratios) < 0.5

    def test_log_written(self, tmp_path):
        eta, psi, _ = analytic_pair(0.05)
        sol = strip_solve(eta, psi, 1e-10, n_y=24)
        p = tmp_path / "strip.csv"
        sol.write_log(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "iteration,residual,update_ratio"
        assert len(lines) == sol.iterations + 1

    def test_large_surface_reports_non_contraction(self):
        eta = field(lambda x, y: 1.5 * np.cos(4 * x) * np.cos(3 * y))
        with pytest.raises(NonContractionError) as exc:
            strip_solve(eta, random_small(2, 1.0), n_y=24)
        assert "iteration" in exc.value.context


class TestDirichletNeumann:
    def test_flat_cosine(self):
        psi = field(lambda x, y: np.cos(x))
        out = dirichlet_neumann(GridField.zeros(TR, real=True), psi)
        assert np.max(np.abs(out.coeffs - psi.coeffs)) < 1e-14

    def test_analytic_oracle(self):
        eta, psi, G = analytic_pair(0.1, Truncation(24))
        out = dirichlet_neumann(eta, psi, 1e-12, n_y=60)
        assert sobolev_norm(out - G, 0.0) < 1e-8

    def test_mean_zero(self):
        out = dirichlet_neumann(random_small(3, 0.05), random_small(4, 1.0), n_y=32)
        assert abs(out.coefficient((0, 0))) < 1e-10

    def test_self_adjoint_and_positive(self):
        eta = random_small(5, 0.05)
        p1, p2 = random_small(6, 1.0), random_small(7, 1.0)
        g1 = dirichlet_neumann(eta, p1, 1e-12, n_y=32)
        g2 = dirichlet_neumann(eta, p2, 1e-12, n_y=32)
        assert abs(g1.l2_inner(p2) - p1.l2_inner(g2)) < 1e-8
        assert g1.l2_inner(p1).real >= -1e-10

    def test_recursion_oracle_zero_order(self):
        psi = random_small(8, 1.0)
        out = dn_recursion_oracle(random_small(9, 0.1), psi, 0)
        assert np.allclose(out.coeffs, differential(psi, "absD_power", 1.0).coeffs, atol=1e-14)

    @pytest.mark.parametrize("M, ratio", [(1, 4.0), (2, 8.0)])
    def test_recursion_remainder_order(self, M, ratio):
        shape = random_small(10, 1.0, radius=3)
        psi = random_small(11, 1.0, radius=3)

        def gap(a):
            eta = shape * a
            return sobolev_norm(dirichlet_neumann(eta, psi, 1e-13, n_y=48) - dn_recursion_oracle(eta, psi, M), 0)

        for r in halving_ratios(gap, [0.08, 0.04, 0.02]):
            assert r == pytest.approx(ratio, rel=0.1)

    def test_recursion_rejects_large_order(self):
        with pytest.raises(ValueError):
            dn_recursion_oracle(GridField.zeros(TR), GridField.zeros(TR), 7)


class TestVelocity:
    def test_flat(self):
        psi = random_small(12, 1.0)
        (V1, V2), B = velocity_fields(GridField.zeros(TR, real=True), psi)
        assert np.allclose(B.coeffs, differential(psi, "absD_power", 1.0).coeffs, atol=1e-13)
        assert np.allclose(V1.coeffs, differential(psi, "grad_x1").coeffs, atol=1e-13)
        assert np.allclose(V2.coeffs, differential(psi, "grad_x2").coeffs, atol=1e-13)

    def test_analytic_vertical_velocity(self):
        eta, psi, _ = analytic_pair(0.1, Truncation(24))
        _, B = velocity_fields(eta, psi, 1e-12, n_y=60)
        want = field(lambda x, y: np.exp(0.1 * np.cos(x)) * np.cos(x), Truncation(24))
        assert np.max(np.abs(B.physical() - want.physical())) < 1e-6

    def test_second_order_expansion(self):
        # V = grad psi - B grad eta and B = |D| psi + O(eta), so the quadratic part is -|D|psi grad eta
        shape = random_small(13, 1.0, radius=3)
        psi = random_small(14, 1.0, radius=3)
        dpsi = differential(psi, "absD_power", 1.0).physical()
        g1 = differential(psi, "grad_x1").physical()

        def gap(a):
            eta = shape * a
            (V1, _), _ = velocity_fields(eta, psi, 1e-13, n_y=48)
            e1 = differential(eta, "grad_x1").physical()
            return np.sqrt(np.mean((V1.physical() - g1 + dpsi * e1) ** 2))

        for r in halving_ratios(gap, [0.08, 0.04, 0.02]):
            assert r == pytest.approx(4.0, rel=0.1)


class TestTaylorCoefficient:
    def test_zero_state(self):
        z = GridField.zeros(TR, real=True)
        assert not np.any(taylor_coefficient(ZcsState(z, z)).coeffs)

    def test_linear_term_for_pure_elevation(self):
        kappa = 0.8
        shape = random_small(15, 1.0, radius=3)
        zero = GridField.zeros(TR, real=True)
        lin = differential(shape, "absD_power", 1.0) + differential(shape, "absD_power", 3.0) * kappa

        def gap(a):
            state = ZcsState(shape * a, zero, kappa=kappa)
            return sobolev_norm(taylor_coefficient(state, 1e-13, n_y=40) + lin * a, 0)

        for r in halving_ratios(gap, [0.04, 0.02, 0.01]):
            assert r == pytest.approx(4.0, rel=0.1)


class TestGoodUnknown:
    def test_flat(self):
        psi = random_small(16, 1.0)
        assert np.allclose(good_unknown(GridField.zeros(TR, real=True), psi).coeffs, psi.coeffs, atol=0)

    def test_linear_in_eta_and_real(self):
        # eta must oscillate faster than B for the paraproduct cutoff to keep their product
        shape = field(lambda x, y: np.cos(12 * x + 3 * y))
        psi = random_small(18, 1.0, radius=2)
        outs = {}

        def gap(a):
            w = good_unknown(shape * a, psi, 1e-13, n_y=40)
            outs[a] = w
            return sobolev_norm(w - psi, 0)

        for r in halving_ratios(gap, [0.02, 0.01, 0.005]):
            assert r == pytest.approx(2.0, rel=0.1)
        w = outs[0.02]
        assert np.array_equal(w.coeffs, np.conj(w.coeffs[::-1, ::-1]))


class TestSymbols:
    XI = np.array([[1.0, 0.0], [3.0, -4.0], [12.0, 5.0], [-7.0, 20.0]])

    def test_flat_collapse(self):
        z = GridField.zeros(TR, real=True)
        kappa = 1.3
        sy = dn_symbols(z, random_small(19, 1.0), kappa, n_y=24)
        r = np.hypot(self.XI[:, 0], self.XI[:, 1])[:, None, None]
        assert np.allclose(sy.lambda1(self.XI), r, rtol=1e-14)
        assert np.allclose(sy.h2(self.XI), r ** 2, rtol=1e-14)
        assert np.allclose(sy.Q(self.XI), symmetrizer_m(self.XI, kappa)[:, None, None], rtol=1e-12)
        assert np.allclose(sy.Sigma(self.XI), dispersion(self.XI, kappa)[:, None, None], rtol=1e-12)
        assert np.max(np.abs(sy.lambda0(self.XI))) == 0.0

    def test_lambda1_even_real(self):
        lam = lambda1_symbol(random_small(20, 0.1))
        v = lam(self.XI)
        assert np.array_equal(v, lam(-self.XI))
        assert not np.any(v.imag)

    def test_lambda1_hand_value(self):
        lam = lambda1_symbol(field(lambda x, y: 0.1 * np.cos(x)))
        assert np.allclose(lam(np.array([[1.0, 0.0]])), 1.0, atol=1e-14)

    def test_h2_identity(self):
        eta = random_small(21, 0.1)
        sy = dn_symbols(eta, random_small(22, 1.0), 1.0, n_y=24)
        lam = sy.lambda1(self.XI)
        b = sy.b_coeff.physical()
        assert np.max(np.abs(sy.h2(self.XI) - lam * lam * b ** 1.5)) < 1e-10 * np.max(np.abs(lam)) ** 2

    def test_sigma_quadratic_in_eta(self):
        shape = random_small(23, 1.0, radius=3)
        psi = GridField.zeros(TR, real=True)
        lam = dispersion(self.XI, 1.0)[:, None, None]

        def gap(a):
            return np.max(np.abs(dn_symbols(shape * a, psi, 1.0, n_y=16).Sigma(self.XI) - lam))

        for r in halving_ratios(gap, [0.04, 0.02, 0.01]):
            assert r == pytest.approx(4.0, rel=0.1)


class TestParalinRemainder:
    def test_flat_remainder_vanishes(self):
        out = paralin_remainder(GridField.zeros(TR, real=True), random_small(24, 1.0), n_y=24)
        assert np.max(np.abs(out.coeffs)) < 1e-10

    def test_linear_in_eta(self):
        shape = random_small(25, 1.0, radius=2)
        psi = random_small(26, 1.0, radius=4)

        def gap(a):
            return sobolev_norm(paralin_remainder(shape * a, psi, 1e-13, n_y=40), 0)

        for r in halving_ratios(gap, [0.02, 0.01, 0.005]):
            assert r == pytest.approx(2.0, rel=0.1)


class TestComplexify:
    def test_zero_state(self):
        z = GridField.zeros(TR, real=True)
        zf, zbar = complexify(ZcsState(z, z))
        assert not np.any(zf.coeffs) and not np.any(zbar.coeffs)

    def test_single_mode(self):
        eta = field(lambda x, y: np.cos(x))
        zf, _ = complexify(ZcsState(eta, GridField.zeros(TR, real=True), kappa=1.0))
        assert zf.coefficient((1, 0)) == pytest.approx(0.5 * 2 ** 0.25 / math.sqrt(2), rel=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_and_norm_equivalence(self, seed):
        state = ZcsState(random_small(seed, 0.3, radius=12), random_small(seed + 50, 0.7, radius=12), kappa=0.6)
        zf, zbar = complexify(state)
        back = decomplexify(zf, 0.6)
        assert np.max(np.abs(back.eta.coeffs - state.eta.coeffs)) < 1e-12
        assert np.max(np.abs(back.psi.coeffs - state.psi.coeffs)) < 1e-12
        assert np.array_equal(zbar.coeffs, np.conj(zf.coeffs[::-1, ::-1]))
        for s in (0.0, 1.0, 3.0):
            theorem = sobolev_norm(state.eta, s + 0.25) + sobolev_norm(state.psi, s - 0.25)
            assert 0.25 <= sobolev_norm(zf, s) / theorem <= 4.0
