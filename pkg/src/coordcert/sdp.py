"""Small dense semidefinite programs and infeasibility certificates.

Problems have the form::

    maximize   <F, X> + offset
    subject to <A_k, X> = b_k,  k = 1..m
               X symmetric PSD (n x n)

with each ``A_k`` and ``F`` given as sparse maps over upper-triangle entries:
``{(i, j): c}`` contributes ``c * X[i, j]``.

The solver runs a Mehrotra predictor-corrector on the homogeneous self-dual
embedding of the pair (in minimization form, ``C = -F``)::

    A(X) = b tau,   A*(y) + S = C tau,   b'y - <C, X> = kappa

with Nesterov-Todd scaling. ``tau -> 0`` with ``b'y > 0`` exposes a Farkas
ray ``y``: ``-A*(y)`` is PSD while ``b'y > 0``, so no PSD ``X`` satisfies the
constraints. Dependent constraint rows are removed beforehand; an
inconsistent linear system yields a ray with ``A*(y) = 0`` directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as la

from . import kernels

FEAS_TOL = 1e-8
GAP_TOL = 1e-7
CERT_MARGIN = 1e-9
CERT_EIG_TOL = 1e-9
RANK_TOL = 1e-10
MAX_ITER = 100
STEP_FRACTION = 0.99

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max-iterations"

Entry = tuple[int, int]
CoefMap = Mapping[Entry, float]


class SdpError(ValueError):
    pass


@dataclass(frozen=True)
class SdpOptions:
    feas_tol: float = FEAS_TOL
    gap_tol: float = GAP_TOL
    max_iter: int = MAX_ITER
    seed: int = 0


def _upper(coefs: CoefMap, n: int) -> dict[Entry, float]:
    out: dict[Entry, float] = {}
    for (i, j), c in coefs.items():
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise SdpError(f"entry ({i}, {j}) outside a {n}x{n} matrix")
        key = (i, j) if i <= j else (j, i)
        out[key] = out.get(key, 0.0) + float(c)
    return out


def _sym_matrix(coefs: Mapping[Entry, float], n: int) -> np.ndarray:
    m = np.zeros((n, n))
    for (i, j), c in coefs.items():
        if i == j:
            m[i, i] += c
        else:
            m[i, j] += c / 2
            m[j, i] += c / 2
    return m


@dataclass
class SdpProblem:
    n: int
    constraints: list[tuple[dict[Entry, float], float]]
    objective: dict[Entry, float]
    offset: float = 0.0

    @classmethod
    def from_entries(cls, n: int, constraints: Sequence[tuple[CoefMap, float]],
                     objective: CoefMap, offset: float = 0.0) -> "SdpProblem":
        if n < 1:
            raise SdpError("matrix dimension must be positive")
        cons = [(_upper(c, n), float(b)) for c, b in constraints]
        return cls(n, cons, _upper(objective, n), float(offset))

    @property
    def m(self) -> int:
        return len(self.constraints)

    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense ``(A, b, F)`` with ``A`` of shape ``(m, n, n)``, symmetric slices."""
        a = np.array([_sym_matrix(c, self.n) for c, _ in self.constraints]).reshape(self.m, self.n, self.n)
        b = np.array([rhs for _, rhs in self.constraints], dtype=float)
        return a, b, _sym_matrix(self.objective, self.n)

    def value(self, x: np.ndarray) -> float:
        return float(np.sum(self.matrices()[2] * x) + self.offset)

    def dump(self) -> str:
        lines = ["# sdp problem", f"size {self.n}", f"constraints {self.m}"]
        for coefs, rhs in self.constraints:
            terms = " ".join(f"({i},{j},{c!r})" for (i, j), c in sorted(coefs.items()))
            lines.append(f"  {terms} = {rhs!r}")
        lines.append("objective")
        lines.append("  " + " ".join(f"({i},{j},{c!r})" for (i, j), c in sorted(self.objective.items()))
                     + f" + {self.offset!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Certificate:
    """Farkas ray: ``Z = -A*(y)`` PSD and ``b'y > 0`` (``||y|| = 1``)."""

    y: np.ndarray
    z: np.ndarray
    margin: float
    min_eig: float
    kind: str

    @property
    def valid(self) -> bool:
        return self.margin > CERT_MARGIN and self.min_eig >= -CERT_EIG_TOL

    def as_dict(self) -> dict:
        return {"kind": self.kind, "margin": self.margin, "min_eig": self.min_eig,
                "valid": self.valid, "y": self.y.tolist()}


@dataclass
class SdpSolution:
    status: str
    value: float
    dual_value: float
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    certificate: Certificate | None = None
    regularizations: int = 0
    history: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"status": self.status, "value": self.value, "dual_value": self.dual_value,
                "iterations": self.iterations, "primal_residual": self.primal_residual,
                "dual_residual": self.dual_residual, "gap": self.gap,
                "regularizations": self.regularizations,
                "certificate": self.certificate.as_dict() if self.certificate else None}

    def dump(self) -> str:
        rows = lambda m: "[" + ", ".join("[" + ", ".join(repr(float(v)) for v in r) + "]" for r in m) + "]"
        return (f"# sdp solution\nstatus {self.status}\nvalue {self.value!r}\n"
                f"dual_value {self.dual_value!r}\nx {rows(self.x)}\n"
                f"y [{', '.join(repr(float(v)) for v in self.y)}]\n")


# -- verification -------------------------------------------------------------------

@dataclass(frozen=True)
class FeasibilityReport:
    max_violation: float
    min_eigenvalue: float
    objective: float
    feasible: bool


def check_feasible_point(p: SdpProblem, x: np.ndarray, tol: float = FEAS_TOL) -> FeasibilityReport:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n, p.n):
        raise SdpError(f"matrix has shape {x.shape}, expected {(p.n, p.n)}")
    viol = 0.0
    for coefs, rhs in p.constraints:
        lhs = sum(c * x[i, j] for (i, j), c in coefs.items())
        viol = max(viol, abs(lhs - rhs))
    lam = float(np.linalg.eigvalsh((x + x.T) / 2).min())
    return FeasibilityReport(viol, lam, p.value(x), bool(viol <= tol and lam >= -tol))


def make_certificate(p: SdpProblem, y: np.ndarray, kind: str) -> Certificate | None:
    """Normalize a candidate ray and verify it by direct arithmetic."""
    a, b, _ = p.matrices()
    y = np.asarray(y, dtype=float)
    norm = np.linalg.norm(y)
    if not np.isfinite(norm) or norm == 0:
        return None
    y = y / norm
    z = -np.tensordot(y, a, axes=1)
    z = (z + z.T) / 2
    return Certificate(y, z, float(b @ y), float(np.linalg.eigvalsh(z).min()), kind)


# -- preprocessing ------------------------------------------------------------------

def _svec_rows(a: np.ndarray) -> np.ndarray:
    n = a.shape[1]
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2))
    return a[:, iu[0], iu[1]] * scale


def _reduce(a: np.ndarray, b: np.ndarray):
    """Independent rows of the constraint system, or a ray proving it inconsistent."""
    if len(b) == 0:
        return np.arange(0), None
    rows = _svec_rows(a)
    u, sv, _ = np.linalg.svd(rows, full_matrices=True)
    tol = RANK_TOL * max(1.0, sv[0] if len(sv) else 1.0)
    rank = int(np.sum(sv > tol))
    null = u[:, rank:]
    if null.shape[1]:
        proj = null @ (null.T @ b)
        if np.linalg.norm(proj) > 1e-9 * (1 + np.linalg.norm(b)):
            return None, proj
    _, _, piv = la.qr(rows.T, pivoting=True, mode="economic")
    return np.sort(piv[:rank]), None


def _csr(a: np.ndarray):
    ptr, rows, cols, vals = [0], [], [], []
    for k in range(a.shape[0]):
        r, c = np.nonzero(a[k])
        rows.append(r)
        cols.append(c)
        vals.append(a[k][r, c])
        ptr.append(ptr[-1] + len(r))
    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)
    return np.array(ptr, dtype=np.int64), cat(rows, np.int64), cat(cols, np.int64), cat(vals, float)


# -- interior point -------------------------------------------------------------------

def _nt_scaling(x, s):
    l1 = np.linalg.cholesky(x)
    l2 = np.linalg.cholesky(s)
    u, lam, vt = np.linalg.svd(l2.T @ l1)
    r = l1 @ vt.T / np.sqrt(lam)
    rinv = (u.T @ l2.T) / np.sqrt(lam)[:, None]
    return r, rinv, lam


def _max_step(lam, d):
    """Largest ``t`` keeping ``diag(lam) + t d`` PSD."""
    isq = 1 / np.sqrt(lam)
    e = np.linalg.eigvalsh(d * isq[:, None] * isq[None, :]).min()
    return np.inf if e >= 0 else -1 / e


def solve(p: SdpProblem, options: SdpOptions | None = None) -> SdpSolution:
    """Solve ``p``; deterministic for given input (``seed`` is unused by the default start)."""
    opts = options or SdpOptions()
    n = p.n
    a_full, b_full, f = p.matrices()
    keep, ray = _reduce(a_full, b_full)
    if keep is None:
        cert = make_certificate(p, ray, "linear")
        nanm = np.full((n, n), np.nan)
        return SdpSolution(INFEASIBLE, np.nan, np.nan, nanm, cert.y, nanm, 0, np.inf, np.inf, np.inf, cert)
    a, b = a_full[keep], b_full[keep]
    m = len(b)
    c = -f
    csr = _csr(a)
    bnorm = max(1.0, np.linalg.norm(b))
    cnorm = max(1.0, np.linalg.norm(c))

    def op(x):
        return np.tensordot(a, x, axes=([1, 2], [0, 1])) if m else np.zeros(0)

    def adj(y):
        return np.tensordot(y, a, axes=1) if m else np.zeros((n, n))

    x = np.eye(n)
    s = np.eye(n)
    y = np.zeros(m)
    tau = kappa = 1.0
    regs = 0
    history = []
    status = MAX_ITERATIONS
    it = 0
    for it in range(opts.max_iter + 1):
        rp = op(x) - b * tau
        rd = adj(y) + s - c * tau
        cx, by = float(np.sum(c * x)), float(b @ y)
        rg = cx - by + kappa
        mu = (float(np.sum(x * s)) + tau * kappa) / (n + 1)
        pres = np.linalg.norm(rp) / tau / bnorm
        dres = np.linalg.norm(rd) / tau / cnorm
        pobj, dobj = cx / tau, by / tau
        gap = float(np.sum(x * s)) / tau ** 2
        history.append({"iter": it, "pobj": -pobj, "dobj": -dobj, "pres": pres, "dres": dres,
                        "gap": gap, "tau": tau, "kappa": kappa})
        if pres <= opts.feas_tol and dres <= opts.feas_tol and \
                max(gap, abs(pobj - dobj)) <= opts.gap_tol * (1 + abs(pobj)):
            status = OPTIMAL
            break
        if by > 0 and np.linalg.norm(adj(y) + s) / by <= opts.feas_tol:
            status = INFEASIBLE
            break
        if cx < 0 and np.linalg.norm(op(x)) / -cx <= opts.feas_tol:
            status = UNBOUNDED
            break
        if it == opts.max_iter:
            break
        try:
            r, rinv, lam = _nt_scaling(x, s)
        except np.linalg.LinAlgError:
            break
        w = r @ r.T
        h = kernels.schur_complement(w, *csr) if m else np.zeros((0, 0))
        hscale = max(1.0, float(np.abs(h).max())) if m else 1.0
        reg = 0.0
        while True:
            try:
                factor = la.cho_factor(h + reg * hscale * np.eye(m)) if m else None
                break
            except la.LinAlgError:
                reg = 1e-14 if reg == 0 else 10 * reg
                regs += 1
                if reg > 1e-6:
                    raise SdpError("singular Schur complement after regularization")

        def hsolve(v):
            if not m:
                return v
            z = la.cho_solve(factor, v)
            # one refinement step against the unregularized matrix
            return z + la.cho_solve(factor, v - h @ z)
        wcw = w @ c @ w
        q = hsolve(op(wcw) + b)
        denom_q = float(np.sum(c * (w @ adj(q) @ w - wcw)) - b @ q)
        lsum = lam[:, None] + lam[None, :]

        def direction(eta, rc, rc_tau):
            g = 2 * rc / lsum
            base = r @ g @ r.T + eta * (w @ rd @ w)
            pvec = hsolve(-eta * rp - op(base))
            e0 = base + w @ adj(pvec) @ w
            dtau = (-eta * rg - np.sum(c * e0) + b @ pvec - rc_tau / tau) / (denom_q - kappa / tau)
            dy = pvec + q * dtau
            dx = e0 + (w @ adj(q) @ w - wcw) * dtau
            dx = (dx + dx.T) / 2
            # push the rounding error of the elimination back onto the scaled space
            err = op(dx) - b * dtau + eta * rp
            dx = dx - w @ adj(hsolve(err)) @ w
            ds = -eta * rd - adj(dy) + c * dtau
            ds = (ds + ds.T) / 2
            dkappa = (rc_tau - kappa * dtau) / tau
            return dx, dy, ds, dtau, dkappa

        def step_length(dx, ds, dtau, dkappa):
            dxs = rinv @ dx @ rinv.T
            dss = r.T @ ds @ r
            t = min(_max_step(lam, dxs), _max_step(lam, dss))
            if dtau < 0:
                t = min(t, -tau / dtau)
            if dkappa < 0:
                t = min(t, -kappa / dkappa)
            return t, dxs, dss

        lam2 = np.diag(lam ** 2)
        aff = direction(1.0, -lam2, -tau * kappa)
        t_aff, dxs_a, dss_a = step_length(aff[0], aff[2], aff[3], aff[4])
        t_aff = min(1.0, t_aff)
        sigma = (1 - t_aff) ** 3
        corr = (dxs_a @ dss_a + dss_a @ dxs_a) / 2
        rc = sigma * mu * np.eye(n) - lam2 - corr
        rc_tau = sigma * mu - tau * kappa - aff[3] * aff[4]
        dx, dy, ds, dtau, dkappa = direction(1 - sigma, rc, rc_tau)
        t, _, _ = step_length(dx, ds, dtau, dkappa)
        t = min(1.0, STEP_FRACTION * t)
        x = x + t * dx
        s = s + t * ds
        y = y + t * dy
        tau += t * dtau
        kappa += t * dkappa
        x = (x + x.T) / 2
        s = (s + s.T) / 2

    y_full = np.zeros(len(b_full))
    y_full[keep] = y
    cert = None
    if status == INFEASIBLE:
        cert = make_certificate(p, y_full, "conic")
        value = dual_value = np.nan
        xo, so = x / tau, s / tau
    elif status == UNBOUNDED:
        value, dual_value = np.inf, np.inf
        xo, so = x, s
    else:
        xo, so = x / tau, s / tau
        value = float(np.sum(f * xo) + p.offset)
        dual_value = float(-b @ y / tau + p.offset)
    last = history[-1]
    return SdpSolution(status, value, dual_value, xo, y_full / tau if status != INFEASIBLE else y_full,
                       so, it, float(last["pres"]), float(last["dres"]), float(last["gap"]), cert, regs, history)


def infeasibility_certificate(p: SdpProblem, options: SdpOptions | None = None) -> Certificate | None:
    """A re-verified Farkas ray when ``p`` is infeasible at the solver tolerances, else ``None``."""
    sol = solve(p, options)
    if sol.status != INFEASIBLE or sol.certificate is None or not sol.certificate.valid:
        return None
    return sol.certificate
