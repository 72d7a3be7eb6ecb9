"""Quadratic forms, QCQP constraint sets and their lifted SDP data.

Vectorization is column-stacking throughout: for an n_s x n_t matrix X,
entry (s, t) of X sits at index ``t * n_s + s`` of ``y = vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelError, ScenarioModel, frobenius_sq, solve_x, transfer_batch

HERMITIAN_TOL = 1e-12


class ConstructionError(AssertionError):
    """Internal inconsistency while building lifted problems."""


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """value(y) = y^H R y + y^H p + q^H y + tau."""

    r_mat: np.ndarray
    p: np.ndarray
    q: np.ndarray
    tau: complex

    @property
    def dim(self) -> int:
        return self.r_mat.shape[0]

    def value(self, y: np.ndarray) -> complex:
        y = np.asarray(y)
        return complex(np.vdot(y, self.r_mat @ y) + np.vdot(y, self.p) + np.vdot(self.q, y) + self.tau)

    def lifted_value(self, big_y: np.ndarray, y: np.ndarray, sigma: float = 1.0) -> complex:
        """tr(R Y) + y^H p + q^H y + tau * sigma."""
        return complex(np.sum(self.r_mat * big_y.T) + np.vdot(y, self.p) + np.vdot(self.q, y) + self.tau * sigma)

    def bordered(self) -> np.ndarray:
        """K with tr(K M) = lifted_value for M = [[Y, y], [y^H, sigma]]."""
        n = self.dim
        k = np.zeros((n + 1, n + 1), dtype=np.complex128)
        k[:n, :n] = self.r_mat
        k[:n, n] = self.p
        k[n, :n] = self.q.conj()
        k[n, n] = self.tau
        return k

    def scaled(self, c: float) -> "QuadraticForm":
        return QuadraticForm(c * self.r_mat, c * self.p, c * self.q, c * self.tau)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        k = self.bordered()
        return bool(np.max(np.abs(k - k.conj().T), initial=0.0) <= tol * max(1.0, np.max(np.abs(k), initial=0.0)))


def _vec(m: np.ndarray) -> np.ndarray:
    return np.asarray(m).reshape(-1, order="F")


def unvec(y: np.ndarray, n_s: int, n_t: int) -> np.ndarray:
    return np.asarray(y).reshape((n_s, n_t), order="F")


def y_of_loads(model: ScenarioModel, r: np.ndarray) -> np.ndarray:
    """Lifting variable y = vec((I - diag(r) Gamma)^-1 diag(r) B)."""
    return _vec(solve_x(model, r))


def _selectors(model: ScenarioModel, s: int, t: int) -> tuple[np.ndarray, np.ndarray]:
    """e_{s,t} = w_t (x) u_s and f_{s,t} = w_t (x) (Gamma^T u_s)."""
    n_s = model.n_s
    n = n_s * model.n_t
    e = np.zeros(n, dtype=np.complex128)
    e[t * n_s + s] = 1.0
    f = np.zeros(n, dtype=np.complex128)
    f[t * n_s:(t + 1) * n_s] = model.gamma[s, :]
    return e, f


def build_frobenius_objective(model: ScenarioModel) -> QuadraticForm:
    a = model.a
    r0 = np.kron(np.eye(model.n_t), a.conj().T @ a)
    q0 = _vec(a.conj().T @ model.h0)
    return QuadraticForm(r0, q0, q0.copy(), complex(frobenius_sq(model.h0)))


def _pair_form(lhs: np.ndarray, lhs_b: complex, mu: complex,
               rhs: np.ndarray, rhs_b: complex, nu: complex) -> QuadraticForm:
    """Expansion of (lhs^T y - mu lhs_b)^* (rhs^T y - nu rhs_b)."""
    return QuadraticForm(
        r_mat=np.outer(lhs.conj(), rhs),
        p=-nu * rhs_b * lhs.conj(),
        q=-mu * lhs_b * rhs.conj(),
        tau=complex(np.conj(mu) * nu * np.conj(lhs_b) * rhs_b),
    )


def build_binary_constraints(model: ScenarioModel) -> list[QuadraticForm]:
    """One form per (s, t): X_st equals alpha Z_st or beta Z_st."""
    al, be = model.alpha, model.beta
    forms = []
    for t in range(model.n_t):
        for s in range(model.n_s):
            e, f = _selectors(model, s, t)
            b_st = model.b[s, t]
            forms.append(_pair_form(e - al * f, b_st, al, e - be * f, b_st, be))
    return forms


def build_repetition_constraints(model: ScenarioModel, t0: int = 0) -> list[QuadraticForm]:
    """Two forms per (s, t != t0) tying column t's branch choice to column t0's."""
    al, be = model.alpha, model.beta
    forms = []
    for t in range(model.n_t):
        if t == t0:
            continue
        for s in range(model.n_s):
            e_t, f_t = _selectors(model, s, t)
            e_0, f_0 = _selectors(model, s, t0)
            for mu, nu in ((al, be), (be, al)):
                forms.append(_pair_form(e_t - mu * f_t, model.b[s, t], mu,
                                        e_0 - nu * f_0, model.b[s, t0], nu))
    return forms


def build_fidelity_forms(model: ScenarioModel, h_des: np.ndarray) -> tuple[QuadraticForm, QuadraticForm]:
    """Numerator |tr(h_des^H H)|^2 and denominator ||h_des||^2 ||H||^2 as forms in y."""
    h_des = np.asarray(h_des, dtype=np.complex128)
    if h_des.shape != (model.n_r, model.n_t):
        raise ModelError(f"target must be {(model.n_r, model.n_t)}, got {h_des.shape}")
    h = frobenius_sq(h_des)
    if h == 0:
        raise ModelError("target operator has zero norm")
    c0 = np.vdot(h_des, model.h0)
    q_des = _vec(model.a.conj().T @ h_des)
    q1 = c0 * q_des
    num = QuadraticForm(np.outer(q_des, q_des.conj()), q1, q1.copy(), complex(abs(c0) ** 2))
    den = build_frobenius_objective(model).scaled(h)
    return num, den


@dataclass(frozen=True, eq=False)
class LiftedProblem:
    """maximize objective over M = [[Y, y], [y^H, corner]] >= 0 subject to
    every eq_constraint lifted value = 0.

    For ``kind='frobenius'`` the corner is pinned to 1. For
    ``kind='charnes-cooper'`` the corner is the scaling variable sigma, the
    normalization form is pinned to 1 and sigma >= sigma_min.
    """

    dim: int
    n_s: int
    n_t: int
    objective: QuadraticForm
    eq_constraints: list[QuadraticForm]
    kind: str
    normalization: QuadraticForm | None = None
    sigma_min: float = 0.0
    null_vectors: np.ndarray | None = None

    @property
    def n_constraints(self) -> int:
        return len(self.eq_constraints) + (self.normalization is not None)

    def objective_at(self, big_y: np.ndarray, y: np.ndarray, sigma: float = 1.0) -> float:
        return float(self.objective.lifted_value(big_y, y, sigma).real)

    def residuals(self, big_y: np.ndarray, y: np.ndarray, sigma: float = 1.0) -> np.ndarray:
        """Complex residuals of every equality (normalization last, minus 1)."""
        res = [c.lifted_value(big_y, y, sigma) for c in self.eq_constraints]
        if self.normalization is not None:
            res.append(self.normalization.lifted_value(big_y, y, sigma) - 1.0)
        return np.array(res, dtype=np.complex128)

    def rank_one_point(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """(Y, y, sigma) of the lifted point built from an unscaled QCQP point y."""
        y = np.asarray(y, dtype=np.complex128)
        if self.kind == "frobenius":
            return np.outer(y, y.conj()), y, 1.0
        den = self.normalization.value(y).real
        if den <= 0:
            raise ModelError("denominator is not positive at this point")
        sigma = 1.0 / den
        return sigma * np.outer(y, y.conj()), sigma * y, sigma


def implied_null_vectors(model: ScenarioModel, t0: int = 0) -> np.ndarray | None:
    """Directions v with v^H Y v = 0 forced by the binary and repetition constraints.

    An element with no mutual coupling has y[s, t] = r_s B[s, t] for every t,
    so B[s, t0] y[s, t] - B[s, t] y[s, t0] = 0 is linear in y. The lifted
    constraints then pin the matching quadratic to zero, which leaves the
    relaxation without a strictly feasible point unless the face is removed.
    """
    g = model.gamma
    tol = 1e-14 * max(1.0, np.linalg.norm(g))
    ns, nt = model.n_s, model.n_t
    vecs = []
    for s in range(ns):
        if np.linalg.norm(g[s]) > tol or np.linalg.norm(g[:, s]) > tol:
            continue
        for t in range(nt):
            if t == t0:
                continue
            v = np.zeros(ns * nt, dtype=np.complex128)
            v[t * ns + s] = np.conj(model.b[s, t0])
            v[t0 * ns + s] = -np.conj(model.b[s, t])
            nv = np.linalg.norm(v)
            if nv > 0:
                vecs.append(v / nv)
    return np.array(vecs) if vecs else None


def assemble_frobenius_sdp(model: ScenarioModel, repetition: bool = True) -> LiftedProblem:
    cons = build_binary_constraints(model)
    if repetition:
        cons += build_repetition_constraints(model)
    return LiftedProblem(
        dim=model.n_s * model.n_t, n_s=model.n_s, n_t=model.n_t,
        objective=build_frobenius_objective(model), eq_constraints=cons, kind="frobenius",
        null_vectors=implied_null_vectors(model) if repetition else None,
    )


def sigma_floor(model: ScenarioModel, h_des: np.ndarray, samples: int = 100, seed: int = 0) -> float:
    """1e-9 / max denominator over random feasible configurations."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(samples, model.n_s))
    hs = transfer_batch(model, bits)
    fd = frobenius_sq(h_des) * np.max(np.sum(np.abs(hs) ** 2, axis=(1, 2)))
    if fd <= 0:
        raise ModelError("denominator vanishes on every sampled configuration")
    return 1e-9 / fd


def assemble_cc_sdp(model: ScenarioModel, h_des: np.ndarray, repetition: bool = True,
                    sigma_min: float | None = None) -> LiftedProblem:
    num, den = build_fidelity_forms(model, h_des)
    cons = build_binary_constraints(model)
    if repetition:
        cons += build_repetition_constraints(model)
    if sigma_min is None:
        sigma_min = sigma_floor(model, h_des)
    return LiftedProblem(
        dim=model.n_s * model.n_t, n_s=model.n_s, n_t=model.n_t,
        objective=num, eq_constraints=cons, kind="charnes-cooper",
        normalization=den, sigma_min=sigma_min,
        null_vectors=implied_null_vectors(model) if repetition else None,
    )


# -- real embedding -------------------------------------------------------------

def realify(h: np.ndarray) -> np.ndarray:
    """[[Re H, -Im H], [Im H, Re H]]; tr of a product doubles under this map."""
    return np.block([[h.real, -h.imag], [h.imag, h.real]])


def complexify(m: np.ndarray, n: int) -> tuple[np.ndarray, float]:
    """Inverse of realify for a real symmetric 2n x 2n matrix.

    Returns the complex Hermitian matrix and the relative size of the part
    that does not have the embedded structure.
    """
    p, qt = m[:n, :n], m[:n, n:]
    q, s = m[n:, :n], m[n:, n:]
    out = (p + s) / 2 + 1j * (q - qt) / 2
    out = (out + out.conj().T) / 2
    defect = np.linalg.norm(p - s) + np.linalg.norm(q + qt)
    return out, float(defect / max(1.0, np.linalg.norm(m)))


@dataclass(frozen=True, eq=False)
class RealSdpData:
    """maximize tr(C M) s.t. tr(A_k M) = b_k, M >= 0 (real symmetric M)."""

    c: np.ndarray
    a: np.ndarray  # (k, m, m)
    b: np.ndarray
    complex_dim: int | None = None
    labels: list[str] = field(default_factory=list)
    basis: np.ndarray | None = None     # complex M = V M_r V^H after facial reduction

    @property
    def m(self) -> int:
        return self.c.shape[0]

    def objective(self, m: np.ndarray) -> float:
        return float(np.sum(self.c * m))

    def residuals(self, m: np.ndarray) -> np.ndarray:
        return np.einsum("kij,ij->k", self.a, m) - self.b


def _hermitian_parts(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian H1, H2 with tr(K M) = tr(H1 M) + 1j tr(H2 M) for Hermitian M."""
    return (k + k.conj().T) / 2, (k - k.conj().T) / 2j


def complex_constraint_data(lp: LiftedProblem) -> tuple[np.ndarray, list[tuple[np.ndarray, complex, str]]]:
    """Bordered Hermitian cost and (K, rhs, label) complex equalities of lp.

    Charnes-Cooper problems get one extra diagonal slack entry holding
    sigma - sigma_min.
    """
    n = lp.dim
    cc = lp.kind == "charnes-cooper"
    mc = n + 1 + cc
    obj = lp.objective
    if not obj.is_hermitian():
        raise ConstructionError("objective form is not Hermitian")

    def pad(k: np.ndarray) -> np.ndarray:
        if k.shape[0] == mc:
            return k
        out = np.zeros((mc, mc), dtype=np.complex128)
        out[:n + 1, :n + 1] = k
        return out

    cost = pad(obj.bordered())
    cost = (cost + cost.conj().T) / 2
    eqs: list[tuple[np.ndarray, complex, str]] = []
    for i, form in enumerate(lp.eq_constraints):
        eqs.append((pad(form.bordered()), 0.0, f"qcqp[{i}]"))
    if cc:
        eqs.append((pad(lp.normalization.bordered()), 1.0, "normalization"))
        k = np.zeros((mc, mc), dtype=np.complex128)
        k[n + 1, n + 1] = 1.0
        k[n, n] = -1.0
        eqs.append((k, -lp.sigma_min, "sigma-floor"))
    else:
        k = np.zeros((mc, mc), dtype=np.complex128)
        k[n, n] = 1.0
        eqs.append((k, 1.0, "corner"))
    return cost, eqs


def embed_real(lp: LiftedProblem, couple_copies: bool = False) -> RealSdpData:
    """Real symmetric standard-form data equivalent to the complex lifted SDP.

    Each complex equality splits into its Hermitian (real part) and
    anti-Hermitian (imaginary part) components; data matrices are halved so
    tr(C_r M_r) equals the complex tr(C M) for M_r = realify(M).

    The real problem is invariant under M_r -> J M_r J^T with
    J = [[0, -I], [I, 0]], so its optimal value equals the complex one
    without extra constraints. ``couple_copies`` adds the equalities that
    force the embedded structure explicitly.
    """
    cost, eqs = complex_constraint_data(lp)
    mc = cost.shape[0]
    basis = face_basis(lp)
    if basis is not None:
        cost = basis.conj().T @ cost @ basis
        eqs = [(basis.conj().T @ k @ basis, b, label) for k, b, label in eqs]
    mr = cost.shape[0]
    mats, rhs, labels = [], [], []
    for k, b, label in eqs:
        h_re, h_im = _hermitian_parts(k)
        scale = max(1.0, np.max(np.abs(k), initial=0.0))
        for h, val, part in ((h_re, complex(b).real, "re"), (h_im, complex(b).imag, "im")):
            if np.max(np.abs(h), initial=0.0) <= 1e-15 * scale and val == 0.0:
                continue
            mats.append(realify(h) / 2)
            rhs.append(val)
            labels.append(f"{label}.{part}")
    if couple_copies:
        m2 = 2 * mr
        for i in range(mr):
            for j in range(i, mr):
                e = np.zeros((m2, m2))
                e[i, j] += 0.5
                e[j, i] += 0.5
                e[mr + i, mr + j] -= 0.5
                e[mr + j, mr + i] -= 0.5
                mats.append(e)
                rhs.append(0.0)
                labels.append(f"couple.diag[{i},{j}]")
                e = np.zeros((m2, m2))
                e[mr + i, j] += 0.5
                e[j, mr + i] += 0.5
                e[mr + j, i] += 0.5
                e[i, mr + j] += 0.5
                mats.append(e)
                rhs.append(0.0)
                labels.append(f"couple.offdiag[{i},{j}]")
    a = np.array(mats)
    a = (a + np.transpose(a, (0, 2, 1))) / 2
    return RealSdpData(c=realify(cost) / 2, a=a, b=np.array(rhs), complex_dim=mc,
                       labels=labels, basis=basis)


def face_basis(lp: LiftedProblem) -> np.ndarray | None:
    """Orthonormal basis of the complement of the implied null directions."""
    if lp.null_vectors is None or len(lp.null_vectors) == 0:
        return None
    mc = lp.dim + 1 + (lp.kind == "charnes-cooper")
    nv = np.zeros((len(lp.null_vectors), mc), dtype=np.complex128)
    nv[:, :lp.dim] = lp.null_vectors.conj()     # rows act as v^H
    _, sv, vh = np.linalg.svd(nv)
    rank = int(np.sum(sv > 1e-12 * sv[0]))
    return vh[rank:].conj().T


def embed_point(big_m: np.ndarray, basis: np.ndarray | None = None) -> np.ndarray:
    big_m = np.asarray(big_m, dtype=np.complex128)
    if basis is not None:
        big_m = basis.conj().T @ big_m @ basis
    return realify(big_m)


def expand_point(m_real: np.ndarray, data: RealSdpData) -> tuple[np.ndarray, float]:
    """Complex M on the full bordered space from a real solution, plus embedding defect."""
    mcx, defect = complexify(m_real, m_real.shape[0] // 2)
    if data.basis is not None:
        mcx = data.basis @ mcx @ data.basis.conj().T
    return mcx, defect


def bordered_point(lp: LiftedProblem, big_y: np.ndarray, y: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """The complex PSD block M (with slack entry for Charnes-Cooper problems)."""
    n = lp.dim
    cc = lp.kind == "charnes-cooper"
    m = np.zeros((n + 1 + cc, n + 1 + cc), dtype=np.complex128)
    m[:n, :n] = big_y
    m[:n, n] = y
    m[n, :n] = np.conj(y)
    m[n, n] = sigma
    if cc:
        m[n + 1, n + 1] = sigma - lp.sigma_min
    return m


# -- SDPA sparse text format ----------------------------------------------------

def dump_sdpa(data: RealSdpData, path: str | Path, tol: float = 0.0) -> None:
    """Write data in SDPA sparse format (our problem is SDPA's dual form:
    F0 = C, F_k = A_k, c_k = b_k)."""
    lines = [f"{len(data.b)}", "1", f"{data.m}", " ".join(repr(float(v)) for v in data.b)]
    for k, mat in enumerate([data.c, *data.a]):
        iu = np.argwhere(np.triu(np.abs(mat) > tol))
        for i, j in iu:
            lines.append(f"{k} 1 {i + 1} {j + 1} {float(mat[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_sdpa(path: str | Path) -> RealSdpData:
    rows = [ln.split("*")[0].strip() for ln in Path(path).read_text().splitlines()]
    rows = [r for r in rows if r and not r.startswith(('"', "*"))]
    k = int(rows[0])
    if int(rows[1]) != 1:
        raise ValueError("only single-block SDPA files are supported")
    m = int(rows[2].replace(",", " ").split()[0])
    b = np.array([float(x) for x in rows[3].replace(",", " ").replace("{", " ").replace("}", " ").split()])
    mats = np.zeros((k + 1, m, m))
    for row in rows[4:]:
        mat, _, i, j, v = row.split()
        mat, i, j = int(mat), int(i) - 1, int(j) - 1
        mats[mat, i, j] = float(v)
        mats[mat, j, i] = float(v)
    return RealSdpData(c=mats[0], a=mats[1:], b=b)
