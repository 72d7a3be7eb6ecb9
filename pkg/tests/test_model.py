import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_model, random_complex
from em_bounds.model import (
    FlipEvaluator, IllConditionedError, ModelError, ScenarioModel, apply_gauge, encode, fidelity,
    frobenius_sq, load_model, model_from_dict, model_to_dict, reduce_fixed, save_model, transfer,
    transfer_bits,
)


def tiny_model(gamma=None, alpha=0.9, beta=-0.8, passive=False):
    rng = np.random.default_rng(7)
    n_s = 3
    return ScenarioModel(
        h0=0.1 * random_complex(rng, 2, 2), a=0.1 * random_complex(rng, 2, n_s),
        gamma=np.zeros((n_s, n_s)) if gamma is None else gamma, b=0.1 * random_complex(rng, n_s, 2),
        alpha=alpha, beta=beta, passive=passive,
    )


def reference_transfer(model, r):
    # explicit textbook formula, independent of the solve-based implementation
    n = model.n_s
    inv = np.linalg.inv(np.eye(n) - np.diag(r) @ model.gamma)
    return model.h0 + model.a @ inv @ np.diag(r) @ model.b


class TestEncode:
    def test_all_zeros_gives_alpha(self):
        m = tiny_model()
        assert np.all(encode([0, 0, 0], m) == m.alpha)

    def test_all_ones_gives_beta(self):
        m = tiny_model()
        assert np.all(encode([1, 1, 1], m) == m.beta)

    def test_mixed(self):
        np.testing.assert_array_equal(encode([0, 1, 0], tiny_model()), [0.9, -0.8, 0.9])

    def test_length_mismatch(self):
        with pytest.raises(ModelError):
            encode([0, 1], tiny_model())

    def test_non_binary(self):
        with pytest.raises(ModelError):
            encode([0, 2, 1], tiny_model())


class TestTransfer:
    def test_uncoupled_is_affine(self, rng):
        m = tiny_model()
        r = encode([1, 0, 1], m)
        np.testing.assert_allclose(transfer(m, r), m.h0 + m.a @ np.diag(r) @ m.b, rtol=0, atol=1e-15)

    def test_zero_alpha_leaves_h0(self):
        m = tiny_model(alpha=0.0)
        np.testing.assert_array_equal(transfer_bits(m, [0, 0, 0]), m.h0)

    def test_matches_reference(self, rng):
        for seed in range(20):
            m = make_model(seed, n_s=3, coupling=0.6)
            v = rng.integers(0, 2, 3)
            h = transfer_bits(m, v)
            ref = reference_transfer(m, encode(v, m))
            assert np.linalg.norm(h - ref) <= 1e-12 * np.linalg.norm(ref)

    def test_resonance_is_reported(self):
        g = np.diag([1 / 0.9, 0.0, 0.0]).astype(complex)
        m = tiny_model(gamma=g)
        with pytest.raises(IllConditionedError) as exc:
            transfer_bits(m, [0, 0, 0])
        assert "ill-conditioned" in str(exc.value)
        assert exc.value.cond > 1e12

    def test_cond_cap_is_configurable(self):
        g = np.diag([1.0, 0.0, 0.0]).astype(complex)
        m = tiny_model(gamma=g)
        transfer_bits(m, [0, 0, 0])
        with pytest.raises(IllConditionedError):
            transfer_bits(m, [0, 0, 0], cond_cap=5.0)

    def test_single_flip_difference_is_rank_one_without_coupling(self, rng):
        m = make_model(3, n_s=5, coupling=0.0)
        v = rng.integers(0, 2, 5)
        for i in range(5):
            w = v.copy()
            w[i] ^= 1
            d = transfer_bits(m, v) - transfer_bits(m, w)
            sv = np.linalg.svd(d, compute_uv=False)
            assert sv[1] <= 1e-12 * max(sv[0], 1e-30)

    def test_gauge_invariance(self, rng):
        for seed in range(10):
            m = make_model(seed, n_s=4, coupling=0.5)
            d = np.exp(rng.normal(size=4) + 1j * rng.uniform(-np.pi, np.pi, 4))
            g = apply_gauge(m, d)
            v = rng.integers(0, 2, 4)
            h, hg = transfer_bits(m, v), transfer_bits(g, v)
            assert np.max(np.abs(h - hg)) <= 1e-11


class TestReduce:
    def test_all_used_is_identity(self):
        m = make_model(0, n_s=4)
        assert reduce_fixed(m, range(4)) is m

    def test_uncoupled_formulas(self):
        m = make_model(1, n_s=5, coupling=0.0)
        red = reduce_fixed(m, [0, 2])
        np.testing.assert_array_equal(red.gamma, np.zeros((2, 2)))
        np.testing.assert_array_equal(red.a, m.a[:, [0, 2]])
        np.testing.assert_array_equal(red.b, m.b[[0, 2]])
        s2 = [1, 3, 4]
        np.testing.assert_allclose(red.h0, m.h0 + m.alpha * m.a[:, s2] @ m.b[s2], atol=1e-15)

    def test_matches_full_model_with_fixed_loads(self, rng):
        for seed in range(10):
            m = make_model(seed, n_s=6, coupling=0.7)
            red = reduce_fixed(m, [0, 1, 2])
            v = rng.integers(0, 2, 3)
            full = transfer_bits(m, np.concatenate([v, [0, 0, 0]]))
            assert np.linalg.norm(transfer_bits(red, v) - full) <= 1e-12 * np.linalg.norm(full)

    def test_rejects_bad_indices(self):
        m = make_model(0, n_s=3)
        with pytest.raises(ModelError):
            reduce_fixed(m, [0, 0])
        with pytest.raises(ModelError):
            reduce_fixed(m, [5])

    def test_only_alpha_supported(self):
        with pytest.raises(ModelError):
            reduce_fixed(make_model(0, n_s=3), [0], fixed_state="beta")


class TestMetrics:
    def test_frobenius_examples(self):
        assert frobenius_sq(np.eye(2)) == 2
        assert frobenius_sq(np.zeros((2, 2))) == 0
        assert frobenius_sq(np.array([[3, 4]])) == 25

    def test_self_fidelity(self, rng):
        h = random_complex(rng, 3, 2)
        assert fidelity(h, h) == pytest.approx(1.0, abs=1e-14)

    def test_orthogonal_fidelity(self):
        assert fidelity(np.array([[1, 0], [0, 0]]), np.array([[0, 0], [0, 1]])) == 0.0

    def test_scale_invariance(self, rng):
        h, hd = random_complex(rng, 2, 2), random_complex(rng, 2, 2)
        assert abs(fidelity((2 + 3j) * h, hd) - fidelity(h, hd)) <= 1e-14

    def test_zero_norm_is_an_error(self):
        with pytest.raises(ModelError):
            fidelity(np.zeros((2, 2)), np.eye(2))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
    def test_fidelity_range_and_equality(self, seed, re, im):
        rng = np.random.default_rng(seed)
        h, hd = random_complex(rng, 2, 3), random_complex(rng, 2, 3)
        f = fidelity(h, hd)
        assert 0.0 <= f <= 1.0
        a = complex(re, im)
        if abs(a) > 1e-3:
            assert fidelity(a * hd, hd) == pytest.approx(1.0, abs=1e-10)


class TestFlipEvaluator:
    def test_double_flip_restores(self, rng):
        m = make_model(2, n_s=6, coupling=0.6)
        ev = FlipEvaluator.from_bits(m, rng.integers(0, 2, 6))
        h0 = ev.h.copy()
        ev.commit(3)
        ev.commit(3)
        assert np.max(np.abs(ev.h - h0)) <= 1e-10

    def test_flip_does_not_mutate(self, rng):
        m = make_model(2, n_s=6, coupling=0.6)
        ev = FlipEvaluator.from_bits(m, rng.integers(0, 2, 6))
        bits, h = ev.bits.copy(), ev.h.copy()
        ev.flip(2)
        np.testing.assert_array_equal(ev.bits, bits)
        np.testing.assert_array_equal(ev.h, h)

    def test_flip_matches_full_solve(self, rng):
        for k in range(100):
            m = make_model(k % 10, n_s=5, coupling=0.8)
            v = rng.integers(0, 2, 5)
            i = int(rng.integers(0, 5))
            ev = FlipEvaluator.from_bits(m, v)
            w = v.copy()
            w[i] ^= 1
            ref = transfer_bits(m, w)
            assert np.linalg.norm(ev.flip(i) - ref) <= 1e-10 * np.linalg.norm(ref)

    def test_commit_chain_drift(self, rng):
        m = make_model(4, n_s=8, coupling=0.8)
        ev = FlipEvaluator.from_bits(m, np.zeros(8, dtype=int))
        for i in rng.integers(0, 8, 50):
            ev.commit(int(i))
        assert np.max(np.abs(ev.h - transfer_bits(m, ev.bits))) <= 1e-8

    def test_breakdown_falls_back(self):
        # toggling element 0 from beta to alpha makes the resolvent singular
        g = np.zeros((3, 3), dtype=complex)
        g[0, 0] = 1 / 0.9
        m = tiny_model(gamma=g)
        ev = FlipEvaluator.from_bits(m, [1, 0, 0])
        with pytest.raises(IllConditionedError):
            ev.flip(0)
        assert ev.fallbacks == 1


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path):
        m = make_model(5, n_s=4)
        path = tmp_path / "m.json"
        save_model(m, path)
        back = load_model(path)
        for name in ("h0", "a", "gamma", "b"):
            np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
        assert back.alpha == m.alpha and back.beta == m.beta
        assert back.passive and back.seed == 5
        assert back.digest() == m.digest()

    def test_schema_uses_re_im_pairs(self):
        d = model_to_dict(make_model(0, n_s=2))
        assert len(d["h0"][0][0]) == 2
        assert set(d) >= {"n_t", "n_r", "n_s", "alpha", "beta", "h0", "a", "gamma", "b"}

    def test_missing_field(self):
        d = model_to_dict(make_model(0, n_s=2))
        del d["gamma"]
        with pytest.raises(ModelError, match="gamma"):
            model_from_dict(d)

    def test_wrong_shape(self):
        d = json.loads(json.dumps(model_to_dict(make_model(0, n_s=2))))
        d["b"] = d["b"][:1]
        with pytest.raises(ModelError):
            model_from_dict(d)


class TestValidation:
    def test_alpha_equals_beta(self):
        with pytest.raises(ModelError):
            tiny_model(alpha=0.5, beta=0.5)

    def test_passivity_checked(self):
        with pytest.raises(ModelError):
            ScenarioModel(h0=5 * np.eye(2), a=np.zeros((2, 1)), gamma=np.zeros((1, 1)), b=np.zeros((1, 2)),
                          alpha=0.5, beta=-0.5, passive=True)

    def test_arrays_are_read_only(self):
        m = make_model(0, n_s=2)
        with pytest.raises(ValueError):
            m.gamma[0, 0] = 1.0
