"""Synthetic reciprocal, passive scenarios with a tunable coupling regime."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .model import ModelError, ScenarioModel

FAMILIES = ("free-space-like", "rich-scattering-like")
TARGET_KINDS = ("identity", "cyclic-permutation", "dft", "random")

MAX_ROUNDS = 50
ROUND_TOL = 1e-6
TARGET_TOL = 0.05
FREE_SPACE_DAMPING = 0.1


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    n_t: int
    n_r: int
    n_s: int
    coupling_strength: float
    loss_factor: float = 0.95
    alpha: complex = 0.9
    beta: complex = -0.8
    seed: int = 0
    family: str = "rich-scattering-like"

    def __post_init__(self) -> None:
        errors = self.validation_errors()
        if errors:
            raise ModelError("; ".join(errors))
        object.__setattr__(self, "alpha", complex(self.alpha))
        object.__setattr__(self, "beta", complex(self.beta))

    def validation_errors(self) -> list[str]:
        errs = []
        for name in ("n_t", "n_r", "n_s"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or val < 1:
                errs.append(f"{name}: must be a positive integer, got {val!r}")
        if not 0 <= self.coupling_strength < 1:
            errs.append(f"coupling_strength: must lie in [0, 1), got {self.coupling_strength!r}")
        if not 0 < self.loss_factor <= 1:
            errs.append(f"loss_factor: must lie in (0, 1], got {self.loss_factor!r}")
        elif self.coupling_strength >= self.loss_factor:
            errs.append("coupling_strength: must be below loss_factor")
        if complex(self.alpha) == complex(self.beta):
            errs.append("alpha/beta: the two load states must differ")
        for name in ("alpha", "beta"):
            if abs(complex(getattr(self, name))) > 1:
                errs.append(f"{name}: |{name}| must not exceed 1")
        if not 0 <= int(self.seed) < 2**64:
            errs.append("seed: must be a 64-bit unsigned integer")
        if self.family not in FAMILIES:
            errs.append(f"family: must be one of {FAMILIES}, got {self.family!r}")
        return errs

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ModelError(f"unknown spec fields: {sorted(unknown)}")
        kw = dict(d)
        for name in ("alpha", "beta"):
            if isinstance(kw.get(name), (list, tuple)):
                re, im = kw[name]
                kw[name] = complex(re, im)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ModelError(str(exc)) from None

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["alpha"] = [self.alpha.real, self.alpha.imag]
        d["beta"] = [self.beta.real, self.beta.imag]
        return d


def _blocks(spec: ScenarioSpec):
    t = slice(0, spec.n_t)
    r = slice(spec.n_t, spec.n_t + spec.n_r)
    s = slice(spec.n_t + spec.n_r, spec.n_t + spec.n_r + spec.n_s)
    return t, r, s


def generate_s(spec: ScenarioSpec) -> np.ndarray:
    """Full N x N scattering matrix, ports ordered (transmit, receive, tunable)."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_t + spec.n_r + spec.n_s
    g = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    s = (g + g.T) / 2
    s *= spec.loss_factor / np.linalg.norm(s, 2)
    _, _, sl = _blocks(spec)
    if spec.family == "free-space-like":
        gam = s[sl, sl]
        damp = np.full(gam.shape, FREE_SPACE_DAMPING)
        np.fill_diagonal(damp, 1.0)
        s[sl, sl] = gam * damp
    c, lf = spec.coupling_strength, spec.loss_factor
    if c == 0:
        s[sl, sl] = 0
        s *= lf / np.linalg.norm(s, 2)
        return s

    # alternate between the coupling target and the passivity target
    prev = np.inf
    for _ in range(MAX_ROUNDS):
        s[sl, sl] *= c / np.linalg.norm(s[sl, sl], 2)
        s *= lf / np.linalg.norm(s, 2)
        g_norm = np.linalg.norm(s[sl, sl], 2)
        if abs(g_norm - c) <= ROUND_TOL * c or abs(g_norm - prev) <= ROUND_TOL * c:
            break
        prev = g_norm
    s_norm = np.linalg.norm(s, 2)
    g_norm = np.linalg.norm(s[sl, sl], 2)
    if abs(g_norm - c) > TARGET_TOL * c:
        raise GenerationError(f"coupling_strength target missed: ||Gamma||_2 = {g_norm:.4g}, wanted {c:.4g}")
    if not (1 - TARGET_TOL) * lf <= s_norm <= lf * (1 + 1e-12):
        raise GenerationError(f"loss_factor target missed: ||S||_2 = {s_norm:.4g}, wanted {lf:.4g}")
    return s


def split_s(s: np.ndarray, spec: ScenarioSpec, tag: str | None = None) -> ScenarioModel:
    t, r, sl = _blocks(spec)
    return ScenarioModel(
        h0=s[r, t], a=s[r, sl], gamma=s[sl, sl], b=s[sl, t],
        alpha=spec.alpha, beta=spec.beta, passive=True, seed=int(spec.seed), tag=tag,
    )


def generate(spec: ScenarioSpec, tag: str | None = None) -> ScenarioModel:
    """Deterministic (in ``spec.seed``) passive reciprocal scenario."""
    return split_s(generate_s(spec), spec, tag=tag)


def target_operator(kind: str, n: int, seed: int = 0) -> np.ndarray:
    """Named n x n target operator, scaled to unit Frobenius norm."""
    if n < 1:
        raise ValueError("n must be positive")
    if kind == "identity":
        m = np.eye(n, dtype=np.complex128)
    elif kind == "cyclic-permutation":
        m = np.roll(np.eye(n, dtype=np.complex128), 1, axis=0)
    elif kind == "dft":
        k = np.arange(n)
        m = np.exp(-2j * np.pi * np.outer(k, k) / n)
    elif kind == "random":
        rng = np.random.default_rng(seed)
        m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    else:
        raise ValueError(f"unknown target kind {kind!r}; expected one of {TARGET_KINDS}")
    return m / np.linalg.norm(m)
