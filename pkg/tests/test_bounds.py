import numpy as np
import pytest

from conftest import brute_force, make_model, random_complex
from em_bounds.bounds import (
    CLOSED_FORM, INVALID, BoundResult, effective_rank, fid_bisection_bound, fid_sdr_bound, frob_ni_bound,
    frob_nio_bound, frob_sdr_bound,
)
from em_bounds.model import ModelError, ScenarioModel, apply_gauge, encode, frobenius_sq, transfer
from em_bounds.scenario import target_operator
from em_bounds.sdp import OPTIMAL


def bare_model(h0, a, gamma, b, alpha=0.9, beta=-0.8) -> ScenarioModel:
    c = lambda x: np.atleast_2d(np.asarray(x, dtype=np.complex128))
    return ScenarioModel(c(h0), c(a), c(gamma), c(b), alpha, beta)


def random_gauge(rng, n):
    return np.exp(rng.normal(scale=0.5, size=n) + 1j * rng.uniform(-np.pi, np.pi, size=n))


class TestEffectiveRank:
    @pytest.mark.parametrize("n", [1, 3, 6])
    def test_identity(self, n):
        assert effective_rank(np.eye(n)) == pytest.approx(n)

    def test_rank_one(self, rng):
        v = random_complex(rng, 5)
        assert effective_rank(np.outer(v, v.conj())) == pytest.approx(1.0, abs=1e-9)

    def test_two_equal_values(self):
        assert effective_rank(np.diag([1.0, 1.0, 0.0])) == pytest.approx(2.0)

    def test_zero_matrix(self):
        with pytest.raises(ValueError, match="zero"):
            effective_rank(np.zeros((3, 3)))

    def test_not_psd(self):
        with pytest.raises(ValueError, match="PSD"):
            effective_rank(np.diag([1.0, -0.1]))

    def test_bounded_by_dimension(self, rng):
        g = random_complex(rng, 4, 4)
        assert 1.0 <= effective_rank(g @ g.conj().T) <= 4.0


class TestFrobeniusSdr:
    def test_two_point_problem_is_tight(self, rng):
        for _ in range(3):
            h0, a, b = random_complex(rng, 1, 1), random_complex(rng, 1, 1), random_complex(rng, 1, 1)
            m = bare_model(h0, a, 0.0, b)
            exact = max(abs(h0 + 0.9 * a * b).item(), abs(h0 - 0.8 * a * b).item()) ** 2
            res = frob_sdr_bound(m)
            assert res.solver_status == OPTIMAL
            assert res.value >= exact - 1e-6 * (1 + exact)
            assert res.value == pytest.approx(exact, abs=1e-6 * (1 + exact))

    def test_no_control_gives_direct_path(self, rng):
        h0 = random_complex(rng, 2, 2)
        m = bare_model(h0, np.zeros((2, 3)), 0.1 * random_complex(rng, 3, 3), random_complex(rng, 3, 2))
        res = frob_sdr_bound(m)
        assert res.value == pytest.approx(frobenius_sq(h0), abs=1e-7)

    @pytest.mark.parametrize("coupling", [0.0, 0.3, 0.8])
    def test_dominates_exhaustive_optimum(self, coupling):
        for seed in range(4):
            m = make_model(seed, n_s=6, coupling=coupling)
            res = frob_sdr_bound(m)
            best = brute_force(m)
            assert res.valid and res.value >= 0
            assert res.value >= best - 1e-6 * (1 + res.value)
            assert res.sigma == 1.0 and 1.0 <= res.effective_rank

    def test_repetition_constraints_tighten(self):
        for seed in range(3):
            m = make_model(seed, n_s=5, coupling=0.3)
            assert frob_sdr_bound(m).value <= frob_sdr_bound(m, repetition=False).value + 1e-7

    def test_gauge_invariance(self, rng):
        m = make_model(5, n_s=5, coupling=0.5)
        base = frob_sdr_bound(m).value
        for _ in range(3):
            g = frob_sdr_bound(apply_gauge(m, random_gauge(rng, 5))).value
            assert abs(g - base) <= 1e-5 * (1 + base)


class TestNormInequality:
    def test_unit_example(self):
        res = frob_ni_bound(bare_model(0.0, 1.0, 0.0, 1.0, alpha=1.0, beta=-1.0))
        assert res.value == 1.0 and res.solver_status == CLOSED_FORM

    def test_no_control(self, rng):
        h0 = random_complex(rng, 2, 2)
        m = bare_model(h0, np.zeros((2, 2)), 0.1 * np.eye(2), random_complex(rng, 2, 2))
        assert frob_ni_bound(m).value == pytest.approx(frobenius_sq(h0), rel=1e-14)

    def test_formula(self, rng):
        m = make_model(3, n_s=4, coupling=0.3)
        gam = max(abs(m.alpha), abs(m.beta))
        amp = np.linalg.norm(m.h0) + np.linalg.norm(m.a, 2) * gam / (
            1 - gam * np.linalg.norm(m.gamma, 2)) * np.linalg.norm(m.b)
        assert frob_ni_bound(m).value == pytest.approx(amp**2, rel=1e-13)

    def test_invalid_scenario_is_not_a_number(self):
        m = bare_model(0.0, 1.0, 1.5, 1.0)
        res = frob_ni_bound(m)
        assert res.solver_status == INVALID and not res.valid
        assert np.isnan(res.value)
        assert "NI bound invalid for this scenario" in res.message

    @pytest.mark.parametrize("coupling", [0.0, 0.3, 0.8])
    def test_dominates_exhaustive_optimum(self, coupling):
        for seed in range(4):
            m = make_model(seed, n_s=6, coupling=coupling)
            res = frob_ni_bound(m)
            if res.valid:
                assert res.value >= brute_force(m)


class TestGaugeOptimized:
    def test_never_above_ni(self):
        for seed in range(3):
            m = make_model(seed, n_s=4, coupling=0.3)
            assert frob_nio_bound(m).value <= frob_ni_bound(m).value

    def test_identity_gauge_reproduces_ni(self):
        m = make_model(1, n_s=4, coupling=0.3)
        same = apply_gauge(m, np.ones(4))
        assert frob_ni_bound(same).value == frob_ni_bound(m).value

    def test_imbalanced_scales(self):
        for seed in range(3):
            m0 = make_model(seed, n_s=5, coupling=0.3)
            m = m0.replace(b=10 * m0.b, passive=False)
            nio, ni = frob_nio_bound(m), frob_ni_bound(m)
            assert nio.value < ni.value
            assert nio.value >= brute_force(m)
            assert len(nio.gauge_params["rho"]) == 5

    def test_invalid_falls_back(self):
        res = frob_nio_bound(bare_model(0.0, 1.0, 1.5, 1.0))
        assert res.fallback and res.kind == "frob-nio" and not res.valid


class TestFidelitySdr:
    def test_self_target(self, rng):
        m = make_model(2, n_s=5, coupling=0.3)
        h_des = transfer(m, encode(rng.integers(0, 2, 5), m))
        res = fid_sdr_bound(m, h_des)
        assert res.solver_status == OPTIMAL
        assert res.raw_value >= 1 - 1e-6 and res.value <= 1.0
        assert res.sigma > 0

    @pytest.mark.parametrize("kind", ["identity", "cyclic-permutation", "dft", "random"])
    def test_dominates_exhaustive_optimum(self, kind):
        h_des = target_operator(kind, 2, seed=7)
        for seed in range(3):
            m = make_model(seed, n_s=6, coupling=0.3)
            res = fid_sdr_bound(m, h_des)
            assert 0.0 <= res.value <= 1.0
            assert res.value >= brute_force(m, h_des) - 1e-6

    def test_orthogonal_target(self, rng):
        a, b = random_complex(rng, 2, 2), random_complex(rng, 2, 2)
        m = bare_model(np.zeros((2, 2)), a, np.zeros((2, 2)), b)
        # attainable channels span {a_s b_s^T}; pick h_des orthogonal to that span
        basis = np.array([np.outer(a[:, s], b[s]).ravel() for s in range(2)])
        _, _, vh = np.linalg.svd(basis)
        h_des = vh[-1].reshape(2, 2)
        assert brute_force(m, h_des) <= 1e-12
        assert fid_sdr_bound(m, h_des).value <= 1e-6

    def test_gauge_invariance(self, rng):
        m = make_model(4, n_s=4, coupling=0.5)
        h_des = target_operator("dft", 2)
        base = fid_sdr_bound(m, h_des).value
        for _ in range(3):
            g = fid_sdr_bound(apply_gauge(m, random_gauge(rng, 4)), h_des).value
            assert abs(g - base) <= 1e-5 * (1 + base)

    def test_zero_target(self):
        with pytest.raises(ModelError):
            fid_sdr_bound(make_model(0, n_s=2), np.zeros((2, 2)))

    def test_clamp(self):
        res = BoundResult(1.0, "fid-sdr", OPTIMAL, raw_value=1.0000003)
        assert res.value <= 1.0 < res.raw_value


class TestBisection:
    def test_agrees_with_charnes_cooper(self):
        h_des = target_operator("cyclic-permutation", 2)
        for seed in range(3):
            m = make_model(seed, n_s=4, coupling=0.3)
            cc = fid_sdr_bound(m, h_des)
            bis = fid_bisection_bound(m, h_des)
            assert bis.fallback and bis.kind == "fid-bisection"
            assert abs(bis.value - cc.value) <= 5e-3
            assert bis.value >= brute_force(m, h_des) - 1e-6

    def test_achievable_target(self, rng):
        m = make_model(1, n_s=4, coupling=0.3)
        h_des = transfer(m, encode([1, 0, 1, 1], m))
        assert fid_bisection_bound(m, h_des).value >= 1 - 1e-3
