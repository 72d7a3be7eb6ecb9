"""Upper bounds on the Frobenius norm and fidelity of the end-to-end channel.

SDR bounds solve the lifted relaxation; NI/NIO are closed-form norm
inequalities used as benchmarks.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .lift import LiftedProblem, QuadraticForm, assemble_cc_sdp, assemble_frobenius_sdp, embed_real
from .model import ModelError, ScenarioModel, apply_gauge, frobenius_sq
from .sdp import (
    MAX_ITER, NUMERICAL, OPTIMAL, LiftedBlocks, NumericalFailure, SolverOptions, extract_blocks, solve,
)

log = logging.getLogger(__name__)

KINDS = ("frob-sdr", "frob-ni", "frob-nio", "fid-sdr", "fid-sdr-raw", "fid-bisection")
CLOSED_FORM = "closed-form"
INVALID = "invalid"
SIGMA_DIVERGENCE = 1e12


@dataclass
class BoundResult:
    value: float
    kind: str
    solver_status: str
    sigma: float | None = None
    effective_rank: float | None = None
    gauge_params: dict[str, Any] | None = None
    raw_value: float | None = None
    fallback: bool = False
    message: str = ""
    blocks: LiftedBlocks | None = field(default=None, repr=False)

    @property
    def valid(self) -> bool:
        """True when value is a certified upper bound."""
        return self.solver_status in (OPTIMAL, CLOSED_FORM) and bool(np.isfinite(self.value))


def effective_rank(m: np.ndarray) -> float:
    """exp of the Shannon entropy of the normalized singular values."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("effective rank needs a square matrix")
    h = (m + m.conj().T) / 2
    ev = np.linalg.eigvalsh(h)
    if ev.size and ev[0] < -1e-9 * max(1.0, abs(ev[-1])):
        raise ValueError(f"matrix is not PSD (min eigenvalue {ev[0]:.3e})")
    sv = np.linalg.svd(h, compute_uv=False)
    total = sv.sum()
    if total <= 0:
        raise ValueError("effective rank of the zero matrix is undefined")
    p = sv[sv > 0] / total
    return float(np.exp(-np.sum(p * np.log(p))))


def _solve_lifted(lp: LiftedProblem, opts: SolverOptions | None):
    data = embed_real(lp)
    sol = solve(data, opts)
    blocks = None
    msg = sol.message
    status = sol.status
    if status in (OPTIMAL, MAX_ITER):
        try:
            blocks = extract_blocks(sol, lp, data)
        except NumericalFailure as exc:
            status, msg = NUMERICAL, "; ".join(s for s in (msg, str(exc)) if s)
    return sol, blocks, status, msg


def _safe_rank(m: np.ndarray) -> float | None:
    try:
        return effective_rank(m)
    except ValueError:
        return None


# -- Frobenius ------------------------------------------------------------------

def frob_sdr_bound(model: ScenarioModel, opts: SolverOptions | None = None,
                   repetition: bool = True) -> BoundResult:
    lp = assemble_frobenius_sdp(model, repetition=repetition)
    _, blocks, status, msg = _solve_lifted(lp, opts)
    if blocks is None:
        return BoundResult(np.nan, "frob-sdr", status, message=msg)
    value = lp.objective_at(blocks.big_y, blocks.y, 1.0)
    return BoundResult(max(value, 0.0), "frob-sdr", status, sigma=1.0,
                       effective_rank=_safe_rank(blocks.big_y), raw_value=value,
                       message=msg, blocks=blocks)


def _ni_value(model: ScenarioModel) -> float | None:
    gam = max(abs(model.alpha), abs(model.beta))
    margin = 1.0 - gam * np.linalg.norm(model.gamma, 2)
    if margin <= 0:
        return None
    amp = np.linalg.norm(model.h0) + np.linalg.norm(model.a, 2) * gam / margin * np.linalg.norm(model.b)
    return float(amp**2)


def frob_ni_bound(model: ScenarioModel) -> BoundResult:
    value = _ni_value(model)
    if value is None:
        return BoundResult(np.nan, "frob-ni", INVALID,
                           message="NI bound invalid for this scenario (1 - gamma ||Gamma||_2 <= 0)")
    return BoundResult(value, "frob-ni", CLOSED_FORM)


@dataclass
class NioOptions:
    fd_step: float = 1e-6
    max_iter: int = 500
    rel_tol: float = 1e-9
    armijo_c: float = 1e-4
    max_halvings: int = 60


def _gauged_ni(model: ScenarioModel, params: np.ndarray) -> float:
    n = model.n_s
    d = np.exp(params[:n] + 1j * params[n:])
    val = _ni_value(apply_gauge(model, d))
    return np.inf if val is None else val


def frob_nio_bound(model: ScenarioModel, opts: NioOptions | None = None) -> BoundResult:
    """NI bound minimized over diagonal gauges D = diag(exp(rho + j theta))."""
    opts = opts or NioOptions()
    ni = frob_ni_bound(model)
    if not ni.valid:
        return dataclasses.replace(ni, kind="frob-nio", fallback=True,
                                   message=ni.message + "; no valid gauge iterate, NI result returned")
    n = model.n_s
    x = np.zeros(2 * n)
    fx = _gauged_ni(model, x)
    h = opts.fd_step
    it = 0
    for it in range(1, opts.max_iter + 1):
        grad = np.zeros_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            fp, fm = _gauged_ni(model, x + e), _gauged_ni(model, x - e)
            if np.isfinite(fp) and np.isfinite(fm):
                grad[i] = (fp - fm) / (2 * h)
        g2 = float(grad @ grad)
        if g2 == 0.0:
            break
        t = 1.0 / max(1.0, np.sqrt(g2) / max(fx, 1e-300))
        for _ in range(opts.max_halvings):
            x_new = x - t * grad
            f_new = _gauged_ni(model, x_new)
            if f_new <= fx - opts.armijo_c * t * g2:
                break
            t *= 0.5
        else:
            break
        decrease = fx - f_new
        x, fx = x_new, f_new
        if decrease <= opts.rel_tol * fx:
            break
    gauge = {"rho": x[:n].tolist(), "theta": x[n:].tolist(), "iterations": it}
    if fx >= ni.value:
        return BoundResult(ni.value, "frob-nio", CLOSED_FORM, gauge_params={"rho": [0.0] * n, "theta": [0.0] * n,
                                                                             "iterations": it})
    return BoundResult(float(fx), "frob-nio", CLOSED_FORM, gauge_params=gauge)


# -- fidelity -------------------------------------------------------------------

def fid_sdr_bound(model: ScenarioModel, h_des: np.ndarray, opts: SolverOptions | None = None,
                  repetition: bool = True) -> BoundResult:
    """Charnes-Cooper relaxation; value clamped to [0, 1], raw value kept."""
    if frobenius_sq(h_des) == 0:
        raise ModelError("target operator has zero norm")
    lp = assemble_cc_sdp(model, h_des, repetition=repetition)
    _, blocks, status, msg = _solve_lifted(lp, opts)
    if blocks is None:
        return BoundResult(np.nan, "fid-sdr", status, message=msg)
    sigma = blocks.sigma
    if not sigma > 0 or sigma > SIGMA_DIVERGENCE * lp.sigma_min:
        note = f"scaling variable diverged (sigma = {sigma:.3e}, floor {lp.sigma_min:.3e}); try fid_bisection_bound"
        return BoundResult(np.nan, "fid-sdr", NUMERICAL, sigma=sigma, message=note)
    raw = lp.objective_at(blocks.big_y, blocks.y, sigma)
    return BoundResult(float(np.clip(raw, 0.0, 1.0)), "fid-sdr", status, sigma=sigma,
                       effective_rank=_safe_rank(blocks.big_y / sigma), raw_value=raw,
                       message=msg, blocks=blocks)


def _combine(num: QuadraticForm, den: QuadraticForm, f: float) -> QuadraticForm:
    return QuadraticForm(num.r_mat - f * den.r_mat, num.p - f * den.p, num.q - f * den.q, num.tau - f * den.tau)


@dataclass
class BisectionOptions:
    tol: float = 1e-3
    feas_tol: float = 1e-7


def fid_bisection_bound(model: ScenarioModel, h_des: np.ndarray, opts: SolverOptions | None = None,
                        bopts: BisectionOptions | None = None) -> BoundResult:
    """Bisection on the fidelity threshold f.

    f is feasible when the relaxation admits a lifted point with
    numerator - f * denominator >= 0. The denominator form is PSD, so
    feasibility is monotone in f. Returns the upper end of the final
    bracket, which stays a valid bound. Solves that fail are treated as
    feasible so the result never drops below the true threshold.
    """
    bopts = bopts or BisectionOptions()
    if frobenius_sq(h_des) == 0:
        raise ModelError("target operator has zero norm")
    cc = assemble_cc_sdp(model, h_des, sigma_min=0.0)
    num, den = cc.objective, cc.normalization
    base = assemble_frobenius_sdp(model)
    history: list[tuple[float, bool]] = []
    failures = 0

    def feasible(f: float) -> bool:
        nonlocal failures
        lp = dataclasses.replace(base, objective=_combine(num, den, f))
        _, blocks, status, _ = _solve_lifted(lp, opts)
        if blocks is None or status != OPTIMAL:
            failures += 1
            ok = True
        else:
            g = lp.objective_at(blocks.big_y, blocks.y)
            scale = 1.0 + abs(num.lifted_value(blocks.big_y, blocks.y).real) \
                + f * abs(den.lifted_value(blocks.big_y, blocks.y).real)
            ok = g >= -bopts.feas_tol * scale
        for f_old, ok_old in history:
            if ok and not ok_old and f_old < f:
                raise NumericalFailure(f"feasibility is not monotone: infeasible at {f_old:.4g}, feasible at {f:.4g}")
        history.append((f, ok))
        return ok

    lo, hi = 0.0, 1.0
    if feasible(hi):
        lo = hi
    while hi - lo > bopts.tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    if failures == len(history):
        raise NumericalFailure("every feasibility solve failed")
    status = OPTIMAL if failures == 0 else MAX_ITER
    return BoundResult(hi, "fid-bisection", status, raw_value=lo, fallback=True,
                       message=f"{len(history)} feasibility solves, {failures} failed",
                       gauge_params=None)
