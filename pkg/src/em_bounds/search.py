"""Discrete configuration optimizers: ES, CD, GA and projected-SDR rounding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lift import unvec
from .model import FlipEvaluator, ModelError, ScenarioModel, fidelity, frobenius_sq, transfer_batch, transfer_bits

ES_CAP = 20
REFRESH_EVERY = 512
TIE_TOL = 1e-12


@dataclass(frozen=True)
class Objective:
    """A scalar figure of merit of the channel H, to be maximized."""

    name: str
    fn: Callable[[np.ndarray], float]
    batch_fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, h: np.ndarray) -> float:
        return float(self.fn(h))

    def batch(self, hs: np.ndarray) -> np.ndarray:
        return np.asarray(self.batch_fn(hs), dtype=float)

    def at_bits(self, model: ScenarioModel, v: np.ndarray) -> float:
        return self(transfer_bits(model, v))


def frobenius_objective() -> Objective:
    return Objective("frobenius", frobenius_sq, lambda hs: np.sum(np.abs(hs) ** 2, axis=(1, 2)))


def fidelity_objective(h_des: np.ndarray) -> Objective:
    h_des = np.asarray(h_des, dtype=np.complex128)
    nd = frobenius_sq(h_des)
    if nd == 0:
        raise ModelError("target operator has zero norm")

    def batch(hs: np.ndarray) -> np.ndarray:
        inner = np.einsum("ij,kij->k", h_des.conj(), hs)
        nh = np.sum(np.abs(hs) ** 2, axis=(1, 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.abs(inner) ** 2 / (nh * nd)
        return np.minimum(np.nan_to_num(out, nan=0.0), 1.0)

    return Objective("fidelity", lambda h: fidelity(h, h_des), batch)


@dataclass
class OptResult:
    best_v: np.ndarray
    best_value: float
    evaluations: int
    method: str
    trace: list[float] = field(default_factory=list)


def _finish(model: ScenarioModel, objective: Objective, v: np.ndarray, evals: int,
            method: str, trace: list[float]) -> OptResult:
    # store the fresh value so best_value always matches a clean re-evaluation
    v = np.asarray(v, dtype=np.int8).copy()
    return OptResult(v, objective.at_bits(model, v), evals, method, trace)


def exhaustive_search(model: ScenarioModel, objective: Objective, n_s_cap: int = ES_CAP) -> OptResult:
    """Global optimum by Gray-code enumeration with single-flip updates."""
    n = model.n_s
    if n > n_s_cap:
        raise ValueError(f"exhaustive search limited to n_s <= {n_s_cap}, got {n}")
    v = np.zeros(n, dtype=np.int8)
    ev = FlipEvaluator.from_bits(model, v)
    best_val, best_v = objective(ev.h), v.copy()
    for k in range(1, 2**n):
        i = (k & -k).bit_length() - 1          # bit that changes between gray(k-1) and gray(k)
        h = ev.commit(i)
        v[i] ^= 1
        if k % REFRESH_EVERY == 0:
            ev.refresh()
            h = ev.h
        val = objective(h)
        if val > best_val:
            best_val, best_v = val, v.copy()
    return _finish(model, objective, best_v, 2**n, "es", [])


def naive_search(model: ScenarioModel, objective: Objective) -> OptResult:
    """Reference enumeration with a full solve per configuration."""
    n = model.n_s
    bits = ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.int8)
    vals = objective.batch(transfer_batch(model, bits))
    k = int(np.argmax(vals))
    return _finish(model, objective, bits[k], 2**n, "es", [])


def coordinate_descent(model: ScenarioModel, objective: Objective, seed: int = 0,
                       n_init: int = 100) -> OptResult:
    """Best of n_init random starts, then cyclic single-bit flips kept only if
    strictly improving; stops after n_s consecutive rejected flips."""
    rng = np.random.default_rng(seed)
    n = model.n_s
    inits = rng.integers(0, 2, size=(n_init, n)).astype(np.int8)
    vals = objective.batch(transfer_batch(model, inits))
    k = int(np.argmax(vals))
    ev = FlipEvaluator.from_bits(model, inits[k])
    cur = objective(ev.h)
    trace = [cur]
    evals = n_init
    misses, i = 0, 0
    while misses < n:
        val = objective(ev.flip(i))
        evals += 1
        if val > cur:
            ev.commit(i)
            cur = val
            misses = 0
        else:
            misses += 1
        trace.append(cur)
        i = (i + 1) % n
    return _finish(model, objective, ev.bits, evals, "cd", trace)


@dataclass
class GaOptions:
    population: int = 200
    generations_per_element: int = 100
    stall_generations: int = 50
    function_tol: float = 1e-6
    tournament: int = 3
    crossover_rate: float = 0.9
    elite: int = 2


def genetic_algorithm(model: ScenarioModel, objective: Objective, seed: int = 0,
                      opts: GaOptions | None = None) -> OptResult:
    """Binary GA: tournament selection, uniform crossover, per-bit mutation
    at rate 1/n_s and elitism. Stops after the generation cap or when the best
    value improved by at most function_tol (relative) over the last
    stall_generations generations."""
    opts = opts or GaOptions()
    rng = np.random.default_rng(seed)
    n, p = model.n_s, opts.population
    pop = rng.integers(0, 2, size=(p, n)).astype(np.int8)
    fit = objective.batch(transfer_batch(model, pop))
    evals = p
    trace = [float(fit.max())]
    max_gen = opts.generations_per_element * n
    gen = 0
    for gen in range(1, max_gen + 1):
        order = np.argsort(-fit, kind="stable")
        elite = pop[order[:opts.elite]]
        n_child = p - opts.elite
        contenders = rng.integers(0, p, size=(2 * n_child, opts.tournament))
        winners = contenders[np.arange(2 * n_child), np.argmax(fit[contenders], axis=1)]
        pa, pb = pop[winners[:n_child]], pop[winners[n_child:]]
        mask = rng.random((n_child, n)) < 0.5
        cross = rng.random(n_child) < opts.crossover_rate
        kids = np.where(mask & cross[:, None], pb, pa)
        flips = rng.random((n_child, n)) < 1.0 / n
        kids = kids ^ flips.astype(np.int8)
        kid_fit = objective.batch(transfer_batch(model, kids))
        evals += n_child
        pop = np.vstack([elite, kids])
        fit = np.concatenate([fit[order[:opts.elite]], kid_fit])
        trace.append(float(fit.max()))
        if gen >= opts.stall_generations:
            old = trace[gen - opts.stall_generations]
            if trace[gen] - old <= opts.function_tol * max(1.0, abs(old)):
                break
    k = int(np.argmax(fit))
    return _finish(model, objective, pop[k], evals, "ga", trace)


def project_sdr(model: ScenarioModel, y: np.ndarray, objective: Objective, sigma: float = 1.0) -> OptResult:
    """Round a relaxed solution: X = unvec(y / sigma), Z = B + Gamma X and
    element s takes beta iff ||X_s - beta Z_s|| < ||X_s - alpha Z_s||."""
    x = unvec(np.asarray(y) / sigma, model.n_s, model.n_t)
    z = model.b + model.gamma @ x
    r_a = np.linalg.norm(x - model.alpha * z, axis=1)
    r_b = np.linalg.norm(x - model.beta * z, axis=1)
    v = (r_b < r_a - TIE_TOL).astype(np.int8)
    return _finish(model, objective, v, 1, "p-sdr", [])
