"""Dense convex quadratic programming via operator splitting.

Problems have the shape

    minimize   1/2 x^T H x + g^T x
    subject to A x == b
               d_lo <= C x <= d_hi

with H symmetric positive semidefinite.  The solver stacks both
constraint blocks into one row set with equal bounds on the equality
rows and runs an over-relaxed ADMM iteration on Ruiz-equilibrated data,
with periodic refinement through an active-set KKT solve.  Problem
sizes here stay in the tens of rows, so everything is dense and the
per-solve factorization is a plain Cholesky.

Strict inequalities of the underlying formulation are implemented
non-strictly; bounds may be +-inf.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

INF = np.inf

OPTIMAL = "optimal"
MAX_ITER = "max-iterations"
INFEASIBLE = "infeasible"


def _as2d(M, n: int, name: str) -> np.ndarray:
    if M is None:
        return np.zeros((0, n))
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[1] != n:
        raise ValueError(f"{name} must be 2-d with {n} columns")
    return M


def _as1d(v, m: int, name: str, fill: float = 0.0) -> np.ndarray:
    if v is None:
        return np.full(m, fill)
    v = np.asarray(v, dtype=float)
    if v.shape != (m,):
        raise ValueError(f"{name} must have length {m}")
    return v


@dataclass
class QpProblem:
    """Dense QP data. Equality rows in (A, b); box rows in (C, d_lo, d_hi)."""

    H: np.ndarray
    g: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    C: np.ndarray | None = None
    d_lo: np.ndarray | None = None
    d_hi: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        if self.H.ndim != 2 or self.H.shape[0] != self.H.shape[1]:
            raise ValueError("H must be square")
        n = self.H.shape[0]
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-12:
            raise ValueError("H must be symmetric")
        self.g = _as1d(self.g, n, "g")
        self.A = _as2d(self.A, n, "A")
        self.b = _as1d(self.b, self.A.shape[0], "b")
        self.C = _as2d(self.C, n, "C")
        self.d_lo = _as1d(self.d_lo, self.C.shape[0], "d_lo", -INF)
        self.d_hi = _as1d(self.d_hi, self.C.shape[0], "d_hi", INF)
        if np.any(self.d_lo > self.d_hi):
            raise ValueError("d_lo must not exceed d_hi")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m_eq(self) -> int:
        return self.A.shape[0]

    @property
    def m_ineq(self) -> int:
        return self.C.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ self.H @ x) + float(self.g @ x)

    def dumps(self) -> str:
        """Matrices as text, one row per line (debug aid)."""
        out = [f"# qp n={self.n} m_eq={self.m_eq} m_ineq={self.m_ineq}"]

        def block(name, M):
            out.append(name)
            M = np.atleast_2d(M)
            for row in M:
                out.append(" ".join(f"{v:.17g}" for v in row))

        block("H", self.H)
        block("g", self.g)
        block("A", self.A)
        block("b", self.b)
        block("C", self.C)
        block("d_lo", self.d_lo)
        block("d_hi", self.d_hi)
        return "\n".join(out) + "\n"

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.dumps())


@dataclass(frozen=True)
class KktResiduals:
    """Normalized residual norms; each divided by max(1, term scales)."""

    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_eq, self.primal_ineq,
                   self.complementarity)


@dataclass
class QpSolution:
    x: np.ndarray
    y_eq: np.ndarray
    y_ineq: np.ndarray
    status: str
    iterations: int
    residuals: KktResiduals
    polished: bool = False


def kkt_residuals(p: QpProblem, sol: QpSolution) -> KktResiduals:
    """Evaluate optimality residuals of a candidate solution.

    Norms are infinity norms scaled by max(1, magnitude of their
    constituent terms), so well-scaled small problems behave like
    absolute tolerances while badly scaled ones are judged relatively.
    """
    return _residuals(p, sol.x, sol.y_eq, sol.y_ineq)


def _residuals(p: QpProblem, x, y_eq, y_ineq) -> KktResiduals:
    def norm(v):
        return float(np.max(np.abs(v), initial=0.0))

    Hx = p.H @ x
    Aty = p.A.T @ y_eq if p.m_eq else np.zeros(p.n)
    Cty = p.C.T @ y_ineq if p.m_ineq else np.zeros(p.n)
    stat = norm(Hx + p.g + Aty + Cty) / max(
        1.0, norm(Hx), norm(p.g), norm(Aty), norm(Cty))

    if p.m_eq:
        Ax = p.A @ x
        prim_eq = norm(Ax - p.b) / max(1.0, norm(Ax), norm(p.b))
    else:
        prim_eq = 0.0

    if p.m_ineq:
        Cx = p.C @ x
        viol = np.maximum(p.d_lo - Cx, 0.0) + np.maximum(Cx - p.d_hi, 0.0)
        prim_ineq = norm(viol) / max(1.0, norm(Cx))
        # distance to the bound selected by the multiplier sign
        bound = np.where(y_ineq > 0.0, p.d_hi,
                         np.where(y_ineq < 0.0, p.d_lo, Cx))
        with np.errstate(invalid="ignore"):
            dist = np.where(np.isfinite(bound), np.abs(Cx - bound), 0.0)
        # judged row by row: a huge multiplier on one row must not mask
        # a gross complementarity gap on another
        denom = np.maximum(1.0, np.abs(y_ineq) * np.maximum(1.0,
                                                            np.abs(Cx)))
        comp = norm(y_ineq * dist / denom)
        # a multiplier whose sign points at a bound that does not exist
        # is pure dual error; weigh it against the multiplier scale
        wrong = ~np.isfinite(bound)
        if np.any(wrong):
            comp = max(comp, norm(y_ineq[wrong]) / max(1.0, norm(y_ineq)))
    else:
        prim_ineq = 0.0
        comp = 0.0
    return KktResiduals(stat, prim_eq, prim_ineq, comp)


def solve(p: QpProblem, tol: float = 1e-6,
          max_iter: int = 4000) -> QpSolution:
    """One-shot solve with a fresh solver (no warm start)."""
    solver = AdmmQpSolver(QpSettings(tol=tol, max_iter=max_iter))
    return solver.solve(p, warm_start=False)


@dataclass
class QpSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6              # over-relaxation
    tol: float = 1e-6
    max_iter: int = 4000
    check_interval: int = 25
    scaling_iters: int = 10
    rho_eq_scale: float = 1e3       # stiffer step on equality rows
    adaptive_rho: bool = True
    polish: bool = True
    warm_start: bool = True


class _Scaling:
    """Ruiz equilibration of the stacked problem plus cost scaling."""

    def __init__(self, H, g, G, lo, hi, iters: int):
        n = H.shape[0]
        m = G.shape[0]
        d = np.ones(n)
        e = np.ones(m)
        c = 1.0
        Hs, gs, Gs = H.copy(), g.copy(), G.copy()
        for _ in range(iters):
            cn = np.abs(Hs).max(axis=0, initial=0.0)
            if m:
                cn = np.maximum(cn, np.abs(Gs).max(axis=0))
                rn = np.abs(Gs).max(axis=1, initial=0.0)
            else:
                rn = np.zeros(0)
            dx = 1.0 / np.sqrt(np.clip(cn, 1e-10, 1e10))
            de = 1.0 / np.sqrt(np.clip(rn, 1e-10, 1e10)) if m else rn
            Hs = Hs * dx[:, None] * dx[None, :]
            gs = gs * dx
            if m:
                Gs = Gs * de[:, None] * dx[None, :]
            d *= dx
            e *= de
            # cost scaling keeps the quadratic part near unit size
            cost_norm = np.abs(Hs).max(axis=0, initial=0.0).mean() if n \
                else 1.0
            gamma = 1.0 / np.clip(max(cost_norm,
                                      np.abs(gs).max(initial=0.0)),
                                  1e-10, 1e10)
            Hs *= gamma
            gs *= gamma
            c *= gamma
        self.d, self.e, self.c = d, e, c
        self.H, self.g, self.G = Hs, gs, Gs
        with np.errstate(invalid="ignore"):
            self.lo = lo * e
            self.hi = hi * e


class AdmmQpSolver:
    """Over-relaxed ADMM with warm starting and KKT polishing.

    One instance may be reused across a sequence of related problems;
    it keeps the previous solution as the next warm start whenever the
    dimensions still match.  Never raises on bad conditioning: the
    outcome is reported through QpSolution.status.
    """

    def __init__(self, settings: QpSettings | None = None):
        self.settings = settings or QpSettings()
        self._x = None
        self._y = None

    def reset(self) -> None:
        self._x = None
        self._y = None

    # -- main entry ----------------------------------------------------------

    def solve(self, p: QpProblem,
              warm_start: bool | None = None) -> QpSolution:
        s = self.settings
        n, me, mi = p.n, p.m_eq, p.m_ineq
        m = me + mi
        G = np.vstack([p.A, p.C]) if m else np.zeros((0, n))
        lo = np.concatenate([p.b, p.d_lo])
        hi = np.concatenate([p.b, p.d_hi])
        eq_mask = np.zeros(m, dtype=bool)
        eq_mask[:me] = True
        eq_mask[me:][np.isfinite(p.d_lo) & (p.d_lo == p.d_hi)] = True

        sc = _Scaling(p.H, p.g, G, lo, hi, s.scaling_iters)

        use_warm = s.warm_start if warm_start is None else warm_start
        if use_warm and self._x is not None and len(self._x) == n \
                and len(self._y) == m:
            x = self._x / sc.d
            y = sc.c * (self._y / sc.e) if m else np.zeros(0)
        else:
            x = np.zeros(n)
            y = np.zeros(m)

        rho_bar = s.rho
        rho = self._rho_vector(rho_bar, eq_mask)
        solve_kkt = self._factor(sc.H, sc.G, rho, s.sigma)
        z = np.clip(sc.G @ x, sc.lo, sc.hi) if m else np.zeros(0)

        status = MAX_ITER
        iterations = s.max_iter
        best = None
        polished = False
        y_last_check = y.copy()
        for k in range(1, s.max_iter + 1):
            if m:
                w = rho * z - y
                rhs = s.sigma * x - sc.g + sc.G.T @ w
            else:
                rhs = s.sigma * x - sc.g
            x_t = solve_kkt(rhs)
            x_prev, z_prev = x, z
            x = s.alpha * x_t + (1.0 - s.alpha) * x_prev
            if m:
                z_t = sc.G @ x_t
                z_r = s.alpha * z_t + (1.0 - s.alpha) * z_prev
                z = np.clip(z_r + y / rho, sc.lo, sc.hi)
                y = y + rho * (z_r - z)

            if k % s.check_interval == 0 or k == s.max_iter:
                xu, yu, zu = self._unscale(sc, x, y, z)
                res = self._unscaled_residuals(p, G, xu, yu, zu)
                if max(res) <= s.tol:
                    status = OPTIMAL
                    iterations = k
                    best = (xu, yu)
                    break
                if s.polish and max(res) <= 100.0 * s.tol:
                    pol = self._polish(p, sc, G, lo, hi, eq_mask, z)
                    if pol is not None:
                        xu, yu = pol
                        status = OPTIMAL
                        iterations = k
                        best = (xu, yu)
                        polished = True
                        break
                if m and self._primal_infeasible(
                        sc, G, lo, hi, y - y_last_check):
                    status = INFEASIBLE
                    iterations = k
                    best = (xu, yu)
                    break
                y_last_check = y.copy()
                if s.adaptive_rho:
                    new_bar = self._adapt_rho(sc, x, y, z, rho, rho_bar)
                    if new_bar is not None:
                        rho_bar = new_bar
                        rho = self._rho_vector(rho_bar, eq_mask)
                        solve_kkt = self._factor(sc.H, sc.G, rho, s.sigma)

        if best is None:
            best = self._unscale(sc, x, y, z)[:2]
        xu, yu = best
        if s.polish and not polished and status != INFEASIBLE:
            pol = self._polish(p, sc, G, lo, hi, eq_mask, z)
            if pol is not None:
                xu, yu = pol
                polished = True
                status = OPTIMAL
        if status == INFEASIBLE:
            # diverged duals make a poor warm start for the next problem
            self.reset()
        else:
            self._x, self._y = xu.copy(), yu.copy()
        y_eq = yu[:me]
        y_ineq = yu[me:]
        res = _residuals(p, xu, y_eq, y_ineq)
        return QpSolution(x=xu, y_eq=y_eq, y_ineq=y_ineq, status=status,
                          iterations=iterations, residuals=res,
                          polished=polished)

    # -- internals -------------------------------------------------------------

    @staticmethod
    def _rho_vector(rho_bar: float, eq_mask: np.ndarray) -> np.ndarray:
        rho = np.full(len(eq_mask), rho_bar)
        rho[eq_mask] *= 1e3
        return rho

    @staticmethod
    def _factor(H, G, rho, sigma):
        K = H + sigma * np.eye(H.shape[0])
        if G.shape[0]:
            K = K + (G.T * rho) @ G
        try:
            cho = scipy.linalg.cho_factor(K, lower=True,
                                          check_finite=False)
            return lambda r: scipy.linalg.cho_solve(cho, r,
                                                    check_finite=False)
        except np.linalg.LinAlgError:
            lu = scipy.linalg.lu_factor(K, check_finite=False)
            return lambda r: scipy.linalg.lu_solve(lu, r,
                                                   check_finite=False)

    @staticmethod
    def _unscale(sc: _Scaling, x, y, z):
        xu = sc.d * x
        yu = (sc.e * y) / sc.c if len(y) else y
        zu = z / sc.e if len(z) else z
        return xu, yu, zu

    @staticmethod
    def _unscaled_residuals(p: QpProblem, G, xu, yu, zu):
        Gx = G @ xu if G.shape[0] else np.zeros(0)
        if G.shape[0]:
            pri = np.max(np.abs(Gx - zu))
            pri_scale = max(1.0, np.max(np.abs(Gx)), np.max(np.abs(zu)))
        else:
            pri, pri_scale = 0.0, 1.0
        Hx = p.H @ xu
        Gty = G.T @ yu if G.shape[0] else np.zeros(p.n)
        dua = np.max(np.abs(Hx + p.g + Gty))
        dua_scale = max(1.0, np.max(np.abs(Hx)),
                        np.max(np.abs(p.g), initial=0.0),
                        np.max(np.abs(Gty)))
        return (pri / pri_scale, dua / dua_scale)

    @staticmethod
    def _adapt_rho(sc, x, y, z, rho, rho_bar):
        Gx = sc.G @ x
        pri = np.max(np.abs(Gx - z), initial=0.0) / max(
            np.max(np.abs(Gx), initial=0.0),
            np.max(np.abs(z), initial=0.0), 1e-10)
        Hx = sc.H @ x
        Gty = sc.G.T @ y
        dua = np.max(np.abs(Hx + sc.g + Gty)) / max(
            np.max(np.abs(Hx), initial=0.0),
            np.max(np.abs(sc.g), initial=0.0),
            np.max(np.abs(Gty), initial=0.0), 1e-10)
        est = rho_bar * np.sqrt(max(pri, 1e-12) / max(dua, 1e-12))
        est = float(np.clip(est, 1e-6, 1e6))
        if est > 5.0 * rho_bar or est < rho_bar / 5.0:
            return est
        return None

    def _primal_infeasible(self, sc, G, lo, hi, dy_scaled) -> bool:
        if not len(dy_scaled):
            return False
        dy = (sc.e * dy_scaled) / sc.c
        norm = np.max(np.abs(dy))
        if norm < 1e-12:
            return False
        dy = dy / norm
        eps = 1e-8
        if np.max(np.abs(G.T @ dy)) > eps:
            return False
        up = np.maximum(dy, 0.0)
        dn = np.minimum(dy, 0.0)
        # rows whose relevant bound is infinite must not participate
        if np.any(up[np.isinf(hi)] > eps) or np.any(-dn[np.isinf(lo)] > eps):
            return False
        support = float(np.sum(hi[np.isfinite(hi)] * up[np.isfinite(hi)])
                        + np.sum(lo[np.isfinite(lo)] * dn[np.isfinite(lo)]))
        return support < -eps

    def _polish(self, p: QpProblem, sc, G, lo, hi, eq_mask, z):
        """Active-set KKT refinement; returns unscaled (x, y) or None.

        Actives are read off the projected iterate: np.clip writes the
        bound value verbatim, so a clipped row matches its scaled bound
        exactly.  The KKT system is solved in the equilibrated space,
        where the regularization delta is meaningful regardless of how
        stiff the original data is.
        """
        s = self.settings
        m = G.shape[0]
        if m == 0:
            try:
                x = np.linalg.solve(
                    p.H + 1e-12 * np.eye(p.n), -p.g)
            except np.linalg.LinAlgError:
                return None
            if np.max(np.abs(p.H @ x + p.g)) <= s.tol * max(
                    1.0, np.max(np.abs(p.g), initial=0.0)):
                return x, np.zeros(0)
            return None
        low_act = (~eq_mask) & np.isfinite(sc.lo) & (z == sc.lo)
        hi_act = (~eq_mask) & np.isfinite(sc.hi) & (z == sc.hi)
        delta = 1e-9
        xs = None
        # primal-dual active-set loop: a multiplier whose sign disagrees
        # with its bound marks a row ADMM clipped but the optimum does
        # not bind (release it); a row the trial point then crosses gets
        # activated instead
        for _ in range(10):
            act = eq_mask | low_act | hi_act
            idx = np.flatnonzero(act)
            Ga = sc.G[idx]
            ba = np.where(low_act, sc.lo,
                          np.where(hi_act, sc.hi, sc.lo))[idx]
            na = len(idx)
            KKT = np.zeros((p.n + na, p.n + na))
            KKT[:p.n, :p.n] = sc.H + delta * np.eye(p.n)
            KKT[:p.n, p.n:] = Ga.T
            KKT[p.n:, :p.n] = Ga
            KKT[p.n:, p.n:] = -delta * np.eye(na)
            rhs = np.concatenate([-sc.g, ba])
            try:
                lu = scipy.linalg.lu_factor(KKT, check_finite=False)
                sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
                # iterative refinement against the unregularized KKT
                K0 = KKT.copy()
                K0[:p.n, :p.n] -= delta * np.eye(p.n)
                K0[p.n:, p.n:] += delta * np.eye(na)
                for _ in range(2):
                    resid = rhs - K0 @ sol
                    sol = sol + scipy.linalg.lu_solve(lu, resid,
                                                      check_finite=False)
            except (np.linalg.LinAlgError, ValueError):
                return None
            lam = sol[p.n:]
            wrong_hi = hi_act[idx] & (lam < 0.0)
            wrong_lo = low_act[idx] & (lam > 0.0)
            if wrong_hi.any() or wrong_lo.any():
                hi_act[idx[wrong_hi]] = False
                low_act[idx[wrong_lo]] = False
                continue
            zs = sc.G @ sol[:p.n]
            below = (~act) & np.isfinite(sc.lo) & (zs < sc.lo)
            above = (~act) & np.isfinite(sc.hi) & (zs > sc.hi)
            if below.any() or above.any():
                low_act |= below
                hi_act |= above
                continue
            xs = sol[:p.n]
            break
        if xs is None:
            return None
        ys = np.zeros(m)
        ys[idx] = lam
        x, y, _ = self._unscale(sc, xs, ys, np.zeros(m))
        Gx = G @ x
        feas = np.all(Gx >= lo - s.tol * np.maximum(1.0, np.abs(lo))
                      - s.tol) and \
            np.all(Gx <= hi + s.tol * np.maximum(1.0, np.abs(hi)) + s.tol)
        if not feas:
            return None
        pri, dua = self._unscaled_residuals(p, G, x, y, np.clip(Gx, lo, hi))
        if pri <= s.tol and dua <= s.tol:
            return x, y
        return None
