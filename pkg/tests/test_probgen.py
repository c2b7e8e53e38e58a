import json

import numpy as np
import pytest

from rkaccel import probgen
from rkaccel.dense import build_matrix, relative_residual
from rkaccel.errors import BadShapeError, RankDeficientError, ZeroRhsError


def test_gaussian_shape_and_determinism():
    A = probgen.gen_gaussian(500, 400, 7)
    assert A.shape == (500, 400)
    assert np.array_equal(A.data, probgen.gen_gaussian(500, 400, 7).data)
    assert not np.array_equal(A.data, probgen.gen_gaussian(500, 400, 8).data)


@pytest.mark.parametrize("m,n", [(3, 4), (0, 0), (5, 0)])
def test_gaussian_bad_shape(m, n):
    with pytest.raises(BadShapeError):
        probgen.gen_gaussian(m, n, 0)


def test_standard_normal_moments():
    z = probgen.standard_normal(np.random.Generator(np.random.Philox(3)), 400_000)
    # sd of the sample mean is 1/sqrt(N) ~ 1.6e-3, of the variance sqrt(2/N) ~ 2.2e-3
    assert abs(z.mean()) < 1e-2
    assert abs(z.var() - 1) < 1.5e-2
    assert np.all(np.isfinite(z))


@pytest.mark.slow
def test_gaussian_spectral_condition_number():
    m, n = 2000, 400
    predicted = (np.sqrt(m) + np.sqrt(n)) / (np.sqrt(m) - np.sqrt(n))
    for seed in range(10):
        sv = np.linalg.svd(probgen.gen_gaussian(m, n, seed).data, compute_uv=False)
        assert sv[0] / sv[-1] == pytest.approx(predicted, rel=0.15)


def test_power_spectrum_small():
    A = probgen.gen_power_spectrum(3, 1.0, 0)
    np.testing.assert_allclose(np.linalg.svd(A.data, compute_uv=False), [1, 1 / 2, 1 / 3], rtol=1e-10)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.3])
def test_power_spectrum_recovers_singular_values(alpha):
    n = 60
    A = probgen.gen_power_spectrum(n, alpha, 5)
    target = np.arange(1, n + 1) ** -alpha
    np.testing.assert_allclose(np.linalg.svd(A.data, compute_uv=False), target, rtol=1e-8)


def test_power_spectrum_closed_form_matches_reported_values():
    assert probgen.power_spectrum_kappa(500, 0.75) == pytest.approx(167.9, rel=2e-2)
    assert probgen.power_spectrum_kappa(500, 0.9) == pytest.approx(367.6, rel=2e-2)


def test_power_spectrum_kappa_matches_svd():
    A = probgen.gen_power_spectrum(80, 0.75, 2)
    assert probgen.kappa_frobenius(A) == pytest.approx(probgen.power_spectrum_kappa(80, 0.75), rel=1e-9)


def test_power_spectrum_argument_checks():
    with pytest.raises(BadShapeError):
        probgen.gen_power_spectrum(0, 1.0, 0)
    with pytest.raises(ValueError):
        probgen.gen_power_spectrum(4, -1.0, 0)


def test_consistent_rhs():
    A = probgen.gen_gaussian(30, 20, 1)
    x_true, b = probgen.gen_consistent(A, 1)
    assert relative_residual(A, x_true, b) <= 1e-12
    x2, b2 = probgen.gen_consistent(A, 1)
    assert np.array_equal(x_true, x2) and np.array_equal(b, b2)


def test_consistent_zero_solution_rejected_downstream():
    A = probgen.gen_gaussian(5, 3, 0)
    x_true, b = probgen.gen_consistent(A, 0, x_true=np.zeros(3))
    with pytest.raises(ZeroRhsError):
        relative_residual(A, x_true, b)


def test_kappa_identity_and_diagonal():
    assert probgen.kappa_frobenius(build_matrix(np.eye(5))) == pytest.approx(np.sqrt(5), rel=1e-14)
    assert probgen.kappa_frobenius(build_matrix(np.diag([2.0, 1.0]))) == pytest.approx(np.sqrt(5), rel=1e-14)


@pytest.mark.parametrize("c", [1e-3, -2.5, 1e4])
def test_kappa_scale_invariant(c):
    A = probgen.gen_gaussian(40, 25, 3)
    assert probgen.kappa_frobenius(A.scaled(c)) == pytest.approx(probgen.kappa_frobenius(A), rel=1e-10)


def test_kappa_lower_bound():
    for seed in range(5):
        A = probgen.gen_gaussian(30, 12, seed)
        assert probgen.kappa_frobenius(A) >= np.sqrt(A.n)


def test_kappa_rank_deficient():
    with pytest.raises(RankDeficientError):
        probgen.kappa_frobenius(build_matrix([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]))
    with pytest.raises(RankDeficientError):
        probgen.kappa_frobenius(build_matrix([[1.0, 2.0, 3.0]]))


def test_make_instance_invariants():
    inst = probgen.make_instance("power_spectrum", 40, 40, 3, alpha=0.75)
    assert relative_residual(inst.A, inst.x_true, inst.b) <= 1e-12
    assert inst.kappa_frob >= np.sqrt(40)
    assert inst.metadata()["family"] == "power_spectrum"
    with pytest.raises(BadShapeError):
        probgen.make_instance("power_spectrum", 40, 30, 3, alpha=0.75)
    with pytest.raises(ValueError):
        probgen.make_instance("sparse", 4, 4, 0)


def test_instance_round_trip(tmp_path):
    inst = probgen.make_instance("gaussian", 12, 7, 4)
    probgen.save_instance(inst, tmp_path / "inst")
    back = probgen.load_instance(tmp_path / "inst")
    assert np.array_equal(back.A.data, inst.A.data)
    assert np.array_equal(back.b, inst.b)
    assert np.array_equal(back.x_true, inst.x_true)
    meta = json.loads((tmp_path / "inst" / "meta.json").read_text())
    assert meta == {**inst.metadata()}
    assert back.family == "gaussian" and back.seed == 4
