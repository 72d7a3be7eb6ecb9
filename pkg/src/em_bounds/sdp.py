"""Dense primal-dual interior-point solver for single-block real SDPs.

Problem form (as produced by :func:`em_bounds.lift.embed_real`)::

    maximize    tr(C M)
    subject to  tr(A_k M) = b_k,   k = 1..K
                M >= 0

Internally the solver works on the equivalent minimization of tr(-C M)
with an infeasible-start path-following method using the Nesterov-Todd
scaling and Mehrotra's predictor-corrector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .lift import LiftedProblem, RealSdpData, complexify, expand_point

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max-iterations"
INFEASIBLE = "infeasible"
NUMERICAL = "numerical-failure"


class NumericalFailure(RuntimeError):
    pass


@dataclass
class SolverOptions:
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: int = 200
    max_dim: int = 600
    rank_tol: float = 1e-10
    tol_infeas: float = 1e-8
    step_frac: float = 0.98


@dataclass
class SdpSolution:
    m_opt: np.ndarray
    objective: float
    status: str
    primal_residual: float
    dual_residual: float
    duality_gap: float
    iterations: int
    dual_objective: float = np.nan
    dual_y: np.ndarray | None = None
    dual_z: np.ndarray | None = None
    dropped: list[int] = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _presolve(data: RealSdpData, opts: SolverOptions):
    """Normalize rows and drop linearly dependent ones.

    Returns (kept indices, normalized A, normalized b, norms, message) or
    raises ValueError('infeasible: ...') when a dependent row is
    inconsistent.
    """
    k, m, _ = data.a.shape
    vec = data.a.reshape(k, m * m)
    norms = np.linalg.norm(vec, axis=1)
    b = np.asarray(data.b, dtype=float)
    zero = norms <= 1e-300
    if np.any(zero & (np.abs(b) > 0)):
        raise ValueError("infeasible: a zero constraint row has a nonzero right-hand side")
    live = np.flatnonzero(~zero)
    vn = vec[live] / norms[live, None]
    bn = b[live] / norms[live]
    if live.size == 0:
        return live, vn, bn, norms, ""
    _, r, piv = sla.qr(vn.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > opts.rank_tol * diag[0]))
    keep = np.sort(piv[:rank])
    drop = np.setdiff1d(np.arange(live.size), keep)
    msg = ""
    if drop.size:
        coef, *_ = np.linalg.lstsq(vn[keep].T, vn[drop].T, rcond=None)
        predicted = coef.T @ bn[keep]
        bad = np.abs(predicted - bn[drop]) > 1e-8 * (1 + np.abs(bn[drop]) + np.abs(predicted))
        if np.any(bad):
            raise ValueError("infeasible: linearly dependent constraints with inconsistent right-hand sides")
        msg = f"dropped {drop.size} linearly dependent constraint(s)"
        log.info(msg)
    return live[keep], vn[keep], bn[keep], norms, msg


def _max_step(lam: np.ndarray, d: np.ndarray) -> float:
    """Largest t with diag(lam) + t d >= 0."""
    s = 1.0 / np.sqrt(lam)
    ev = np.linalg.eigvalsh(s[:, None] * d * s[None, :])[0]
    return np.inf if ev >= 0 else -1.0 / ev


def _is_pd(x: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        return False
    return True


def _sym(x: np.ndarray) -> np.ndarray:
    return (x + x.T) / 2


def solve(data: RealSdpData, opts: SolverOptions | None = None) -> SdpSolution:
    opts = opts or SolverOptions()
    m = data.m
    if m > opts.max_dim:
        raise ValueError(f"block dimension {m} exceeds the configured cap {opts.max_dim}")
    for mat in (data.c, *data.a):
        if np.max(np.abs(mat - mat.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(mat), initial=0.0)):
            raise ValueError("SDP data matrices must be symmetric")
    k_all = data.a.shape[0]

    def failed(status: str, msg: str, it: int = 0) -> SdpSolution:
        return SdpSolution(np.zeros((m, m)), np.nan, status, np.inf, np.inf, np.inf, it, message=msg)

    try:
        keep, vec, b, norms, pre_msg = _presolve(data, opts)
    except ValueError as exc:
        return failed(INFEASIBLE, str(exc))

    k = keep.size
    c_scale = max(1.0, np.linalg.norm(data.c))
    b_scale = max(1.0, np.max(np.abs(b), initial=0.0))
    c = -_sym(data.c) / c_scale
    b = b / b_scale
    amat = vec.reshape(k, m, m)
    norm_b, norm_c = np.linalg.norm(b), np.linalg.norm(c)

    q_basis, r_basis = np.linalg.qr(vec.T)
    xi = max(10.0, np.sqrt(m), m * np.max((1 + np.abs(b)) / 2, initial=1.0))
    eta = max(10.0, np.sqrt(m), np.linalg.norm(c))
    x = xi * np.eye(m)
    z = eta * np.eye(m)
    y = np.zeros(k)

    status, msg, it = MAX_ITER, "", 0
    best = (np.inf, x, y, z, np.inf, np.inf, np.inf, 0)
    rel_p = rel_d = rel_gap = np.inf
    for it in range(opts.max_iter + 1):
        rp = b - vec @ x.ravel()
        rd = c - (y @ vec).reshape(m, m) - z
        pobj = float(np.sum(c * x))
        dobj = float(b @ y)
        rel_p = np.linalg.norm(rp) / (1 + norm_b)
        rel_d = np.linalg.norm(rd) / (1 + norm_c)
        rel_gap = max(abs(pobj - dobj), float(np.sum(x * z))) / (1 + abs(pobj) + abs(dobj))
        if rel_p <= opts.tol_feas and rel_d <= opts.tol_feas and rel_gap <= opts.tol_gap:
            status = OPTIMAL
            break
        merit = max(rel_p / opts.tol_feas, rel_d / opts.tol_feas, rel_gap / opts.tol_gap)
        if merit < best[0]:
            best = (merit, x, y, z, rel_p, rel_d, rel_gap, it)
        if dobj > 0:
            aty = (y @ vec).reshape(m, m)
            if np.linalg.eigvalsh(aty)[-1] <= opts.tol_infeas * dobj:
                status, msg = INFEASIBLE, "primal infeasible (Farkas certificate from the dual iterate)"
                break
        if pobj < 0 and np.linalg.norm(vec @ x.ravel()) <= opts.tol_infeas * -pobj and rel_p > opts.tol_feas:
            status, msg = INFEASIBLE, "dual infeasible (primal objective unbounded)"
            break
        if it == opts.max_iter:
            break

        try:
            lx = np.linalg.cholesky(x)
            lz = np.linalg.cholesky(z)
        except np.linalg.LinAlgError:
            status, msg = NUMERICAL, "iterate lost positive definiteness"
            break
        _, lam, vt = np.linalg.svd(lz.T @ lx)
        if lam[-1] <= 0:
            status, msg = NUMERICAL, "degenerate scaling point"
            break
        rs = lx @ vt.T / np.sqrt(lam)[None, :]          # scaling matrix R
        at = np.matmul(np.matmul(rs.T[None], amat), rs[None])  # R^T A_k R
        atv = at.reshape(k, m * m)
        # QR of the scaled constraints instead of Cholesky of the Schur
        # complement; normal equations square the conditioning
        rr = np.linalg.qr(atv.T, mode="r")
        dmin = np.min(np.abs(np.diag(rr)))
        if not np.isfinite(dmin) or dmin <= 1e-300:
            status, msg = NUMERICAL, "Schur complement is singular"
            break

        def schur_solve(rhs: np.ndarray) -> np.ndarray:
            w = sla.solve_triangular(rr, rhs, trans="T", lower=False)
            return sla.solve_triangular(rr, w, lower=False)

        rd_t = rs.T @ rd @ rs
        mu = float(np.sum(lam**2)) / m

        def direction(s_mat: np.ndarray):
            rhs = rp - atv @ (s_mat - rd_t).ravel()
            dy = schur_solve(rhs)
            dz = _sym(rd_t - (dy @ atv).reshape(m, m))
            dx = _sym(s_mat - dz)
            for _ in range(2):
                # refinement keeps A(dX) = rp once the scaling is ill-conditioned
                err = rp - atv @ dx.ravel()
                if np.linalg.norm(err) <= 1e-15 * (1 + np.linalg.norm(rp)):
                    break
                ddy = schur_solve(err)
                corr = _sym((ddy @ atv).reshape(m, m))
                dy = dy + ddy
                dx = dx + corr
                dz = dz - corr
            return dx, dy, dz

        lam_mat = np.diag(lam)
        dx_a, _, dz_a = direction(-lam_mat)
        ap = min(1.0, _max_step(lam, dx_a))
        ad = min(1.0, _max_step(lam, dz_a))
        mu_aff = float(np.sum((lam_mat + ap * dx_a) * (lam_mat + ad * dz_a))) / m
        expon = max(1.0, 3 * min(ap, ad) ** 2)
        sigma = min(1.0, max(0.0, mu_aff / mu) ** expon)
        t = sigma * mu * np.eye(m) - lam_mat**2 - _sym(dx_a @ dz_a)
        s_mat = 2 * t / (lam[:, None] + lam[None, :])
        dx, dy, _ = direction(s_mat)
        # the dual step is taken in the original space so A^T y + Z = C
        # stays exact; only the primal step goes through the scaling
        dz_full = _sym(rd - (dy @ vec).reshape(m, m))
        dz = rs.T @ dz_full @ rs
        ap = min(1.0, opts.step_frac * _max_step(lam, dx))
        ad = min(1.0, opts.step_frac * _max_step(lam, _sym(dz)))
        if ap < 1e-12 and ad < 1e-12:
            status, msg = NUMERICAL, "step length collapsed"
            break
        dx_full = rs @ dx @ rs.T
        if not np.all(np.isfinite(dx_full)):
            status, msg = NUMERICAL, "search direction overflowed"
            break
        if rel_p <= opts.tol_feas and _max_step(lam, dx) == np.inf:
            # a feasible iterate moving along a PSD direction that keeps A(X)
            # fixed and improves the objective is a primal improving ray
            gain = -float(np.sum(c * dx_full))
            if gain > 0 and np.linalg.norm(vec @ dx_full.ravel()) <= opts.tol_infeas * gain:
                status, msg = INFEASIBLE, "dual infeasible (primal objective unbounded)"
                break
        # project out the round-off in A(dX) with the fixed, well-conditioned
        # constraint basis: A(dX) = rp holds to machine precision afterwards
        dx_fix = dx_full + (q_basis @ sla.solve_triangular(
            r_basis, rp - vec @ dx_full.ravel(), trans="T", lower=False)).reshape(m, m)
        x_fix = _sym(x + ap * dx_fix)
        if _is_pd(x_fix):
            dx_full = dx_fix
        x_new, z_new = _sym(x + ap * dx_full), _sym(z + ad * dz_full)
        for _ in range(30):
            # rounding in the scaled step can leave the true iterate indefinite
            if _is_pd(x_new) and _is_pd(z_new):
                break
            if not _is_pd(x_new):
                ap *= 0.5
                x_new = _sym(x + ap * dx_full)
            if not _is_pd(z_new):
                ad *= 0.5
                z_new = _sym(z + ad * dz_full)
        else:
            status, msg = NUMERICAL, "iterate lost positive definiteness"
            break
        x, y, z = x_new, y + ad * dy, z_new

    if status in (NUMERICAL, MAX_ITER) and best[0] < np.inf:
        # fall back to the most accurate iterate seen before the breakdown
        _, x, y, z, rel_p, rel_d, rel_gap, _ = best
    x_true = x * b_scale
    obj = float(np.sum(data.c * x_true))
    y_full = np.zeros(k_all)
    y_full[keep] = -c_scale * y / norms[keep]
    dual_obj = -c_scale * b_scale * float(b @ y)
    sol = SdpSolution(
        m_opt=x_true, objective=obj, status=status, primal_residual=float(rel_p),
        dual_residual=float(rel_d), duality_gap=float(rel_gap), iterations=it,
        dual_objective=dual_obj, dual_y=y_full, dual_z=c_scale * z,
        dropped=sorted(set(range(k_all)) - set(keep.tolist())),
        message="; ".join(s for s in (pre_msg, msg) if s),
    )
    if status == INFEASIBLE:
        sol.objective = np.nan
    return sol


@dataclass
class LiftedBlocks:
    big_y: np.ndarray
    y: np.ndarray
    sigma: float
    slack: float | None
    min_eig: float
    defect: float           # complex-side residual / objective mismatch, relative
    asymmetry: float = 0.0  # distance of the real optimizer from the embedded structure


def extract_blocks(sol: SdpSolution, lp: LiftedProblem, data: RealSdpData | None = None,
                   defect_tol: float = 1e-6, psd_tol: float = 1e-7) -> LiftedBlocks:
    """Recover (Y, y, sigma) from the real solution of an embedded lifted problem.

    The real optimizer is mapped back through the J-symmetric average, which
    is itself optimal for the real problem. The embedding is accepted when
    that complex point satisfies the lifted equalities and reproduces the real
    objective to ``defect_tol`` (relative to 1 + tr M); a non-unique optimum
    can make the raw real solution asymmetric without any inconsistency.

    ``data`` must be the embedded problem that was solved whenever it carries
    a facial-reduction basis.
    """
    if sol.status not in (OPTIMAL, MAX_ITER):
        raise NumericalFailure(f"cannot extract blocks from a solve with status {sol.status}")
    if data is not None:
        mcx, asym = expand_point(sol.m_opt, data)
    else:
        mcx, asym = complexify(sol.m_opt, sol.m_opt.shape[0] // 2)
    cc = lp.kind == "charnes-cooper"
    n = lp.dim
    if mcx.shape[0] != n + 1 + cc:
        raise ValueError("solution size does not match the lifted problem; pass the embedded data")
    big_y, y, corner = mcx[:n, :n], mcx[:n, n].copy(), float(mcx[n, n].real)
    errs = list(np.abs(lp.residuals(big_y, y, corner)))
    errs.append(abs(lp.objective_at(big_y, y, corner) - sol.objective))
    if cc:
        slack = float(mcx[n + 1, n + 1].real)
        errs.append(abs(slack - corner + lp.sigma_min))
    else:
        slack = None
        errs.append(abs(corner - 1.0))
    defect = float(max(errs) / (1.0 + abs(np.trace(mcx).real)))
    if defect > defect_tol:
        raise NumericalFailure(f"embedding consistency violated (defect {defect:.2e})")
    block = mcx[:n + 1, :n + 1]
    min_eig = float(np.linalg.eigvalsh(block)[0])
    if min_eig < -psd_tol * max(1.0, np.trace(block).real):
        raise NumericalFailure(f"bordered block is not PSD (min eigenvalue {min_eig:.2e})")
    sigma = 1.0 if not cc else corner
    return LiftedBlocks(big_y, y, sigma, slack, min_eig, defect, asym)
