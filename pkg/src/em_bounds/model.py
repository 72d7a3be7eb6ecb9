"""Multiport-network model of a system with 1-bit tunable lumped loads.

The end-to-end channel seen between the transmit and receive ports is

    H(r) = H0 + A (I - diag(r) Gamma)^-1 diag(r) B

where ``r`` holds the reflection coefficients of the loads terminating the
tunable "virtual" ports and every load is either ``alpha`` (bit 0) or
``beta`` (bit 1).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

DEFAULT_COND_CAP = 1e12
PASSIVITY_TOL = 1e-9
WOODBURY_BREAKDOWN = 1e-14


class ModelError(ValueError):
    """Raised for inconsistent scenario data."""


class IllConditionedError(np.linalg.LinAlgError):
    """The resolvent I - diag(r) Gamma is singular or too close to it."""

    def __init__(self, cond: float, cap: float):
        self.cond = cond
        self.cap = cap
        super().__init__(
            f"resonant/ill-conditioned configuration: cond(I - diag(r) Gamma) = {cond:.3e} exceeds {cap:.1e}"
        )


def _frozen(x: Any, ndim: int) -> np.ndarray:
    arr = np.array(x, dtype=np.complex128)
    if arr.ndim != ndim:
        raise ModelError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScenarioModel:
    """Parameters (H0, A, Gamma, B, alpha, beta) of one reconfigurable system.

    ``h0`` is the direct receive-by-transmit block, ``a`` couples the tunable
    ports to the receivers, ``gamma`` is the tunable-to-tunable block and
    ``b`` couples the transmitters to the tunable ports.
    """

    h0: np.ndarray
    a: np.ndarray
    gamma: np.ndarray
    b: np.ndarray
    alpha: complex
    beta: complex
    passive: bool = False
    seed: int | None = None
    tag: str | None = None

    def __post_init__(self) -> None:
        for name in ("h0", "a", "gamma", "b"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2))
        object.__setattr__(self, "alpha", complex(self.alpha))
        object.__setattr__(self, "beta", complex(self.beta))
        n_r, n_t = self.h0.shape
        n_s = self.gamma.shape[0]
        if self.gamma.shape != (n_s, n_s):
            raise ModelError(f"gamma must be square, got {self.gamma.shape}")
        if self.a.shape != (n_r, n_s):
            raise ModelError(f"a must be {(n_r, n_s)}, got {self.a.shape}")
        if self.b.shape != (n_s, n_t):
            raise ModelError(f"b must be {(n_s, n_t)}, got {self.b.shape}")
        if self.alpha == self.beta:
            raise ModelError("alpha and beta must differ")
        if not all(np.isfinite(m).all() for m in (self.h0, self.a, self.gamma, self.b)):
            raise ModelError("non-finite model entries")
        if self.passive:
            norm = np.linalg.norm(self.assembled_s(), 2) if self.assembled_s().size else 0.0
            if norm > 1 + PASSIVITY_TOL:
                raise ModelError(f"scenario tagged passive but ||S||_2 = {norm:.6g} > 1")
            if max(abs(self.alpha), abs(self.beta)) > 1 + PASSIVITY_TOL:
                raise ModelError("scenario tagged passive but |alpha| or |beta| exceeds 1")

    @property
    def n_t(self) -> int:
        return self.h0.shape[1]

    @property
    def n_r(self) -> int:
        return self.h0.shape[0]

    @property
    def n_s(self) -> int:
        return self.gamma.shape[0]

    def assembled_s(self) -> np.ndarray:
        """The known part of the scattering matrix, rows (R, S) by columns (T, S).

        This is a submatrix of the full S, so its spectral norm never exceeds
        that of a passive S.
        """
        return np.block([[self.h0, self.a], [self.b, self.gamma]])

    def replace(self, **changes: Any) -> "ScenarioModel":
        fields = dict(
            h0=self.h0, a=self.a, gamma=self.gamma, b=self.b, alpha=self.alpha,
            beta=self.beta, passive=self.passive, seed=self.seed, tag=self.tag,
        )
        fields.update(changes)
        return ScenarioModel(**fields)

    def digest(self) -> str:
        """Short content hash, stable across save/load round trips."""
        h = hashlib.sha256()
        for m in (self.h0, self.a, self.gamma, self.b):
            h.update(np.ascontiguousarray(m).tobytes())
        h.update(np.array([self.alpha, self.beta]).tobytes())
        return h.hexdigest()[:16]


def _as_bits(v: Iterable[int] | np.ndarray, n_s: int) -> np.ndarray:
    bits = np.asarray(v)
    if bits.shape != (n_s,):
        raise ModelError(f"control vector must have length {n_s}, got shape {bits.shape}")
    if not np.isin(bits, (0, 1)).all():
        raise ModelError("control vector entries must be 0 or 1")
    return bits.astype(np.int8)


def encode(v: Sequence[int] | np.ndarray, model: ScenarioModel) -> np.ndarray:
    """Map a binary control vector to the load reflection coefficients."""
    bits = _as_bits(v, model.n_s)
    return np.where(bits == 1, model.beta, model.alpha).astype(np.complex128)


def _check_loads(model: ScenarioModel, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.complex128)
    if r.shape != (model.n_s,):
        raise ModelError(f"load vector must have length {model.n_s}, got shape {r.shape}")
    return r


def solve_x(model: ScenarioModel, r: np.ndarray, cond_cap: float = DEFAULT_COND_CAP) -> np.ndarray:
    """X = (I - diag(r) Gamma)^-1 diag(r) B via a dense solve."""
    r = _check_loads(model, r)
    n = model.n_s
    if n == 0:
        return np.zeros((0, model.n_t), dtype=np.complex128)
    m = np.eye(n) - r[:, None] * model.gamma
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > cond_cap:
        raise IllConditionedError(float(cond), cond_cap)
    return np.linalg.solve(m, r[:, None] * model.b)


def transfer(model: ScenarioModel, r: np.ndarray, cond_cap: float = DEFAULT_COND_CAP) -> np.ndarray:
    """End-to-end transfer matrix H(r) (n_r x n_t)."""
    return model.h0 + model.a @ solve_x(model, r, cond_cap)


def transfer_bits(model: ScenarioModel, v: Sequence[int] | np.ndarray, cond_cap: float = DEFAULT_COND_CAP) -> np.ndarray:
    return transfer(model, encode(v, model), cond_cap)


def transfer_batch(model: ScenarioModel, bits: np.ndarray) -> np.ndarray:
    """H for every row of a (k, n_s) bit array; returns (k, n_r, n_t)."""
    bits = np.asarray(bits)
    if bits.ndim != 2 or bits.shape[1] != model.n_s:
        raise ModelError(f"expected a (k, {model.n_s}) bit array, got {bits.shape}")
    r = np.where(bits == 1, model.beta, model.alpha).astype(np.complex128)
    if model.n_s == 0:
        return np.broadcast_to(model.h0, (bits.shape[0],) + model.h0.shape).copy()
    m = np.eye(model.n_s) - r[:, :, None] * model.gamma[None]
    x = np.linalg.solve(m, r[:, :, None] * model.b[None])
    return model.h0[None] + model.a[None] @ x


def reduce_fixed(model: ScenarioModel, used: Sequence[int], fixed_state: str = "alpha") -> ScenarioModel:
    """Fold the unused tunable elements, terminated by ``alpha``, into the static part.

    Returns a model over the ``used`` elements only (in the given order) whose
    transfer function equals the full model's with the other loads held at
    ``alpha``.
    """
    if fixed_state != "alpha":
        raise ModelError("only fixed_state='alpha' is supported")
    used = [int(i) for i in used]
    if len(set(used)) != len(used) or any(i < 0 or i >= model.n_s for i in used):
        raise ModelError(f"used must be distinct indices in [0, {model.n_s})")
    s1 = np.array(used, dtype=int)
    s2 = np.array([i for i in range(model.n_s) if i not in set(used)], dtype=int)
    if s2.size == 0 and np.array_equal(s1, np.arange(model.n_s)):
        return model
    g = model.gamma
    g11 = g[np.ix_(s1, s1)]
    if s2.size == 0:
        return model.replace(gamma=g11, a=model.a[:, s1], b=model.b[s1])
    g12 = g[np.ix_(s1, s2)]
    g21 = g[np.ix_(s2, s1)]
    g22 = g[np.ix_(s2, s2)]
    inner = np.eye(s2.size) - model.alpha * g22
    cond = np.linalg.cond(inner)
    if not np.isfinite(cond) or cond > DEFAULT_COND_CAP:
        raise IllConditionedError(float(cond), DEFAULT_COND_CAP)
    # (I - Phi2 G22)^-1 Phi2 applied to the blocks that feed the fixed elements
    k_g = np.linalg.solve(inner, model.alpha * g21)
    k_b = np.linalg.solve(inner, model.alpha * model.b[s2])
    a2 = model.a[:, s2]
    return model.replace(
        gamma=g11 + g12 @ k_g,
        b=model.b[s1] + g12 @ k_b,
        a=model.a[:, s1] + a2 @ k_g,
        h0=model.h0 + a2 @ k_b,
    )


def apply_gauge(model: ScenarioModel, d: np.ndarray) -> ScenarioModel:
    """Diagonal-similarity gauge: Gamma -> D Gamma D^-1, A -> A D^-1, B -> D B.

    Leaves the map from loads to H unchanged since D commutes with diag(r).
    """
    d = np.asarray(d, dtype=np.complex128)
    if d.shape != (model.n_s,) or np.any(d == 0):
        raise ModelError("gauge must be a length-n_s vector of nonzero entries")
    return model.replace(
        gamma=d[:, None] * model.gamma / d[None, :],
        a=model.a / d[None, :],
        b=d[:, None] * model.b,
        passive=False,
    )


def frobenius_sq(h: np.ndarray) -> float:
    h = np.asarray(h)
    return float(np.sum(h.real**2 + h.imag**2))


def fidelity(h: np.ndarray, h_des: np.ndarray) -> float:
    """Scale-invariant alignment |tr(h_des^H h)|^2 / (||h_des||^2 ||h||^2)."""
    h = np.asarray(h, dtype=np.complex128)
    h_des = np.asarray(h_des, dtype=np.complex128)
    nh, nd = frobenius_sq(h), frobenius_sq(h_des)
    if nh == 0.0 or nd == 0.0:
        raise ModelError("fidelity is undefined for a zero-norm matrix")
    inner = np.vdot(h_des, h)
    return float(min(1.0, (inner.real**2 + inner.imag**2) / (nh * nd)))


@dataclass
class FlipEvaluator:
    """Incremental evaluation of H under single-element load toggles.

    Caches the resolvent T = (I - diag(r) Gamma)^-1, X = T diag(r) B and H.
    Toggling element i perturbs diag(r) by a rank-one term, so by
    Sherman-Morrison

        H' = H + d / (1 - d (Gamma T)_ii) * (A T e_i) (B + Gamma X)_i

    with d = r_i' - r_i. ``flip`` costs O(n_s (n_r + n_t)); ``commit`` also
    updates T in O(n_s^2).
    """

    model: ScenarioModel
    r: np.ndarray
    cond_cap: float = DEFAULT_COND_CAP
    fallbacks: int = 0
    _t: np.ndarray = field(init=False, repr=False)
    _x: np.ndarray = field(init=False, repr=False)
    h: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.r = _check_loads(self.model, self.r).copy()
        self.refresh()

    @classmethod
    def from_bits(cls, model: ScenarioModel, v: Sequence[int] | np.ndarray, **kw: Any) -> "FlipEvaluator":
        return cls(model, encode(v, model), **kw)

    @property
    def bits(self) -> np.ndarray:
        return (self.r == self.model.beta).astype(np.int8)

    def refresh(self) -> None:
        """Recompute the cache from scratch at the current loads."""
        m = self.model
        n = m.n_s
        res = np.eye(n) - self.r[:, None] * m.gamma
        cond = np.linalg.cond(res) if n else 1.0
        if not np.isfinite(cond) or cond > self.cond_cap:
            raise IllConditionedError(float(cond), self.cond_cap)
        self._t = np.linalg.solve(res, np.eye(n, dtype=np.complex128))
        self._x = self._t @ (self.r[:, None] * m.b)
        self.h = m.h0 + m.a @ self._x

    def _toggled(self, i: int) -> complex:
        m = self.model
        return m.alpha if self.r[i] == m.beta else m.beta

    def _update_terms(self, i: int):
        m = self.model
        d = self._toggled(i) - self.r[i]
        g_i = m.gamma[i]
        den = 1.0 - d * (g_i @ self._t[:, i])
        z_i = m.b[i] + g_i @ self._x
        return d, den, z_i

    def flip(self, i: int) -> np.ndarray:
        """H with element i toggled; the cached state is left untouched."""
        d, den, z_i = self._update_terms(i)
        if abs(den) < WOODBURY_BREAKDOWN:
            self.fallbacks += 1
            r = self.r.copy()
            r[i] = self._toggled(i)
            return transfer(self.model, r, self.cond_cap)
        return self.h + np.outer(self.model.a @ self._t[:, i], (d / den) * z_i)

    def commit(self, i: int) -> np.ndarray:
        """Toggle element i in the cached state and return the new H."""
        m = self.model
        d, den, z_i = self._update_terms(i)
        if abs(den) < WOODBURY_BREAKDOWN:
            self.fallbacks += 1
            self.r[i] = self._toggled(i)
            self.refresh()
            return self.h
        u = self._t[:, i].copy()
        coef = d / den
        w = m.gamma[i] @ self._t
        self._t += coef * np.outer(u, w)
        self._x += np.outer(coef * u, z_i)
        self.h = self.h + np.outer(m.a @ u, coef * z_i)
        self.r[i] = self._toggled(i)
        return self.h


# -- scenario JSON ------------------------------------------------------------

def _mat_to_json(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _mat_from_json(x: Any, shape: tuple[int, int], name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if shape[0] * shape[1] == 0:
        return np.zeros(shape, dtype=np.complex128)
    if arr.shape != shape + (2,):
        raise ModelError(f"field '{name}' must have shape {shape} of [re, im] pairs, got {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def _scalar_from_json(x: Any, name: str) -> complex:
    if isinstance(x, (int, float)):
        return complex(x)
    if isinstance(x, (list, tuple)) and len(x) == 2:
        return complex(float(x[0]), float(x[1]))
    raise ModelError(f"field '{name}' must be a number or an [re, im] pair")


def model_to_dict(model: ScenarioModel) -> dict[str, Any]:
    out: dict[str, Any] = {
        "n_t": model.n_t,
        "n_r": model.n_r,
        "n_s": model.n_s,
        "alpha": [model.alpha.real, model.alpha.imag],
        "beta": [model.beta.real, model.beta.imag],
        "h0": _mat_to_json(model.h0),
        "a": _mat_to_json(model.a),
        "gamma": _mat_to_json(model.gamma),
        "b": _mat_to_json(model.b),
        "passive": model.passive,
    }
    if model.seed is not None:
        out["seed"] = model.seed
    if model.tag is not None:
        out["tag"] = model.tag
    return out


def model_from_dict(d: dict[str, Any]) -> ScenarioModel:
    try:
        n_t, n_r, n_s = int(d["n_t"]), int(d["n_r"]), int(d["n_s"])
        return ScenarioModel(
            h0=_mat_from_json(d["h0"], (n_r, n_t), "h0"),
            a=_mat_from_json(d["a"], (n_r, n_s), "a"),
            gamma=_mat_from_json(d["gamma"], (n_s, n_s), "gamma"),
            b=_mat_from_json(d["b"], (n_s, n_t), "b"),
            alpha=_scalar_from_json(d["alpha"], "alpha"),
            beta=_scalar_from_json(d["beta"], "beta"),
            passive=bool(d.get("passive", False)),
            seed=d.get("seed"),
            tag=d.get("tag"),
        )
    except KeyError as exc:
        raise ModelError(f"scenario is missing field {exc.args[0]!r}") from None


def save_model(model: ScenarioModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path: str | Path) -> ScenarioModel:
    return model_from_dict(json.loads(Path(path).read_text()))
