import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parawave.grid import (GridField, Truncation, ZcsState, differential, project, read_snapshot,
                           resample, sobolev_norm, to_coeffs, to_physical, translate,
                           write_snapshot)


def random_field(trunc, seed, real=False, meanzero=False):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=trunc.shape) + 1j * rng.normal(size=trunc.shape)
    return GridField(trunc, c, real, meanzero)


class TestTruncation:
    def test_lattice_is_lexicographic_and_symmetric(self):
        tr = Truncation(3)
        lat = tr.lattice
        assert lat.shape == (49, 2)
        assert [tuple(p) for p in lat] == sorted(tuple(p) for p in lat)
        assert {tuple(p) for p in lat} == {tuple(-p) for p in lat}
        assert tr.index((0, 0)) == 24

    def test_index_round_trip(self):
        tr = Truncation(4)
        for pos, j in enumerate(tr.lattice):
            assert tr.index(j) == pos

    def test_index_rejects_outside(self):
        with pytest.raises(KeyError):
            Truncation(2).index((3, 0))

    def test_negative_radius_rejected(self):
        with pytest.raises(ValueError):
            Truncation(-1)

    def test_dealias_mask_two_thirds(self):
        tr = Truncation(32)
        k1, _ = tr.wavenumbers
        assert np.abs(k1[tr.dealias_mask()]).max() == 21


class TestSobolevNorm:
    def test_single_mode(self):
        tr = Truncation(4)
        e = GridField.from_modes(tr, {(1, 0): 1.0})
        assert sobolev_norm(e, 0.0) == pytest.approx(1.0)
        assert sobolev_norm(e, 1.0) == pytest.approx(math.sqrt(2.0))
        assert sobolev_norm(e, 1.0, homogeneous=True) == pytest.approx(1.0)

    def test_zero(self):
        assert sobolev_norm(GridField.zeros(Truncation(3)), 2.0) == 0.0

    def test_homogeneous_skips_zero_mode(self):
        tr = Truncation(2)
        u = GridField.from_modes(tr, {(0, 0): 5.0, (0, 2): 1.0})
        assert sobolev_norm(u, 1.5, homogeneous=True) == pytest.approx(2.0 ** 1.5)


class TestTransforms:
    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(1, 12), seed=st.integers(0, 10_000))
    def test_round_trip(self, n, seed):
        u = random_field(Truncation(n), seed)
        back = to_coeffs(to_physical(u.coeffs))
        assert np.max(np.abs(back - u.coeffs)) <= 1e-12 * np.max(np.abs(u.coeffs))

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(1, 12), seed=st.integers(0, 10_000))
    def test_real_flag_gives_real_values(self, n, seed):
        u = random_field(Truncation(n), seed, real=True)
        vals = to_physical(u.coeffs)
        assert np.max(np.abs(vals.imag)) <= 1e-12 * max(1.0, np.max(np.abs(vals)))
        # Hermitian symmetry holds bit for bit
        assert np.array_equal(u.coeffs, np.conj(u.coeffs[::-1, ::-1]))

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(1, 12), seed=st.integers(0, 10_000))
    def test_parseval(self, n, seed):
        u = random_field(Truncation(n), seed)
        quad = np.mean(np.abs(u.physical()) ** 2)
        assert sobolev_norm(u, 0.0) ** 2 == pytest.approx(quad, rel=1e-10)

    def test_meanzero_flag(self):
        u = random_field(Truncation(3), 1, meanzero=True)
        assert u.coefficient((0, 0)) == 0


class TestProjectTranslate:
    def test_full_projection_is_identity(self):
        tr = Truncation(4)
        u = random_field(tr, 2)
        assert np.array_equal(project(u, np.ones(tr.shape, bool)).coeffs, u.coeffs)

    def test_zero_set_on_meanzero(self):
        u = random_field(Truncation(4), 3, meanzero=True)
        assert not np.any(project(u, [(0, 0)]).coeffs)

    def test_ball_projection(self):
        tr = Truncation(4)
        u = GridField.from_modes(tr, {(1, 0): 1.0, (3, 0): 1.0})
        out = project(u, tr.ball_mask(1.0 / 0.5))
        assert out.coefficient((1, 0)) == 1.0 and out.coefficient((3, 0)) == 0.0

    def test_projection_complement_sums_to_identity(self):
        tr = Truncation(5)
        u = random_field(tr, 4)
        mask = tr.ball_mask(3.0)
        total = project(u, mask) + project(u, ~mask)
        assert np.allclose(total.coeffs, u.coeffs, atol=0, rtol=0)

    def test_translate_phase(self):
        tr = Truncation(3)
        u = GridField.from_modes(tr, {(1, 0): 1.0})
        out = translate(u, (math.pi, 0.0))
        assert out.coefficient((1, 0)) == pytest.approx(-1.0)

    def test_translate_zero_is_identity(self):
        u = random_field(Truncation(3), 5)
        assert np.allclose(translate(u, (0.0, 0.0)).coeffs, u.coeffs, rtol=0, atol=0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), v1=st.floats(-10, 10), v2=st.floats(-10, 10),
           s=st.sampled_from([0.0, 1.0, 2.5]))
    def test_translate_isometry(self, seed, v1, v2, s):
        u = random_field(Truncation(6), seed)
        assert sobolev_norm(translate(u, (v1, v2)), s) == pytest.approx(sobolev_norm(u, s), rel=1e-12)


class TestDifferential:
    def test_laplacian_of_diagonal_mode(self):
        tr = Truncation(3)
        u = GridField.from_modes(tr, {(1, 1): 1.0})
        assert differential(u, "laplacian").coefficient((1, 1)) == pytest.approx(-2.0)

    def test_abs_d_of_constant(self):
        tr = Truncation(3)
        u = GridField.from_modes(tr, {(0, 0): 3.0})
        assert not np.any(differential(u, "absD_power", 1.0).coeffs)

    def test_grad_of_cos(self):
        tr = Truncation(4)
        u = GridField.from_function(tr, lambda x, y: np.cos(x))
        x1, _ = tr.grid
        assert np.max(np.abs(differential(u, "grad_x1").physical() + np.sin(x1))) < 1e-13

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            differential(GridField.zeros(Truncation(1)), "curl")


class TestSnapshot:
    def test_round_trip(self, tmp_path):
        u = random_field(Truncation(5), 6, real=True, meanzero=True)
        p = tmp_path / "u.pwf"
        write_snapshot(u, p)
        raw = p.read_bytes()
        assert raw[:4] == b"PWF1"
        assert int.from_bytes(raw[4:8], "little") == 5
        assert raw[8] == 3
        assert len(raw) == 9 + 16 * u.trunc.n_modes
        back = read_snapshot(p)
        assert back.real_flag and back.meanzero_flag
        assert np.array_equal(back.coeffs, u.coeffs)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(ValueError):
            read_snapshot(p)


def test_resample_pads_and_truncates():
    u = random_field(Truncation(3), 7)
    big = resample(u, Truncation(6))
    assert np.array_equal(resample(big, Truncation(3)).coeffs, u.coeffs)


class TestZcsState:
    def test_flags_forced(self):
        tr = Truncation(3)
        st_ = ZcsState(random_field(tr, 8), random_field(tr, 9))
        assert st_.eta.real_flag and st_.eta.meanzero_flag
        assert st_.psi.real_flag and st_.psi.meanzero_flag

    def test_kappa_must_be_positive(self):
        tr = Truncation(2)
        with pytest.raises(ValueError):
            ZcsState(GridField.zeros(tr), GridField.zeros(tr), kappa=0.0)
