"""Complex linear algebra primitives and small concave-QCQP engines.

Everything here operates on dense complex numpy arrays and is pure: no
global state, safe to call from concurrent trial workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class SingularSystem(Exception):
    """Linear system remained ill-conditioned after regularization."""


class NoBracket(Exception):
    """Bisection endpoints do not bracket the target."""


class Infeasible(Exception):
    """QCQP constraint bound is negative on entry."""


class MaxIterExceeded(Exception):
    """Iterative solve did not reach the requested KKT residual."""


COND_LIMIT = 1e14


def hermitize(a: np.ndarray) -> np.ndarray:
    """Hermitian part (A + A^H)/2; guards against accumulation drift."""
    return 0.5 * (a + a.conj().T)


def herm_solve(a: np.ndarray, b: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Solve (A + ridge*I) x = b for Hermitian A.

    A is symmetrized before factorization.  Raises SingularSystem when the
    regularized matrix has a condition estimate above 1e14.  The returned
    solution satisfies ||(A + ridge*I)x - b|| <= 1e-9 ||b|| (one step of
    iterative refinement is applied if the first solve misses that bound).
    """
    a = hermitize(np.asarray(a, dtype=complex))
    b = np.asarray(b, dtype=complex)
    if ridge:
        a = a + ridge * np.eye(a.shape[0])
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystem(f"condition estimate {cond:.3e} exceeds {COND_LIMIT:.0e}")
    x = scipy.linalg.solve(a, b, assume_a="her")
    bnorm = np.linalg.norm(b)
    resid = np.linalg.norm(a @ x - b)
    if resid > 1e-9 * max(bnorm, 1e-300):
        x = x + scipy.linalg.solve(a, b - a @ x, assume_a="her")
        resid = np.linalg.norm(a @ x - b)
        if resid > 1e-9 * max(bnorm, 1e-300):
            raise SingularSystem(f"residual {resid:.3e} after refinement, cond {cond:.3e}")
    return x


def bisect(f, lo: float, hi: float, tol: float, target: float = 0.0) -> float:
    """Bisection for monotone f: find x with f(x) ~= target on [lo, hi].

    Stops when |f(x) - target| <= tol or the interval width drops below
    tol * max(1, |hi|).  Raises NoBracket if f(lo) and f(hi) lie on the
    same side of the target.
    """
    flo = f(lo) - target
    if abs(flo) <= tol:
        return lo
    fhi = f(hi) - target
    if abs(fhi) <= tol:
        return hi
    if (flo > 0) == (fhi > 0):
        raise NoBracket(f"f({lo})={flo + target:.6g}, f({hi})={fhi + target:.6g} do not bracket {target:.6g}")
    width_tol = tol * max(1.0, abs(hi))
    max_iter = max(1, math.ceil(math.log2(max((hi - lo) / max(tol, 1e-300), 1.0)))) + 2
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid) - target
        if abs(fm) <= tol or (hi - lo) <= 2 * width_tol:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def project_magnitude_caps(x: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {|x_m| <= cap_m}: clip magnitudes, keep phases."""
    x = np.asarray(x, dtype=complex)
    caps = np.broadcast_to(np.asarray(caps, dtype=float), x.shape)
    if np.any(caps < 0):
        raise ValueError("caps must be nonnegative")
    mag = np.abs(x)
    scale = np.where(mag > caps, caps / np.where(mag > 0, mag, 1.0), 1.0)
    return x * scale


@dataclass
class QcqpProblem:
    """Concave QCQP in canonical form.

        maximize    Re{b^H x} - x^H A x
        subject to  x^H Q_i x <= c_i          (Q_i Hermitian PSD, c_i >= 0)
                    |x_m| <= caps_m           (optional, per element)

    A must be Hermitian PSD; x = 0 is always feasible when all c_i >= 0.
    """

    quad: np.ndarray
    lin: np.ndarray
    constraints: list = field(default_factory=list)
    caps: np.ndarray | None = None

    def __post_init__(self):
        self.quad = hermitize(np.asarray(self.quad, dtype=complex))
        self.lin = np.asarray(self.lin, dtype=complex).ravel()
        n = self.lin.size
        if self.quad.shape != (n, n):
            raise ValueError(f"quad shape {self.quad.shape} does not match lin length {n}")
        checked = []
        for q, c in self.constraints:
            q = hermitize(np.asarray(q, dtype=complex))
            if q.shape != (n, n):
                raise ValueError("constraint matrix dimension mismatch")
            w = np.linalg.eigvalsh(q)
            if w[0] < -1e-10 * max(1.0, w[-1]):
                raise ValueError(f"constraint matrix not PSD (min eig {w[0]:.3e})")
            checked.append((q, float(c)))
        self.constraints = checked
        if self.caps is not None:
            self.caps = np.asarray(self.caps, dtype=float).ravel()
            if self.caps.size != n:
                raise ValueError("caps length mismatch")
            if np.any(self.caps < 0):
                raise ValueError("caps must be nonnegative")


def _bisect_feasible(g, lo, hi, cap, tol, max_iter=200):
    """Bisection for non-increasing g with g(lo) > cap >= g(hi): returns a
    multiplier on the feasible side (g <= cap) within tol*cap of the bound."""
    val_hi = g(hi)
    for _ in range(max_iter):
        if cap - val_hi <= tol * max(cap, 1e-30) or (hi - lo) <= 1e-14 * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        val = g(mid)
        if val > cap:
            lo = mid
        else:
            hi, val_hi = mid, val
    return hi


def _pinv_maximizer(eigvals, eigvecs, rhs):
    """x = A^+ rhs in the eigenbasis; second return flags a null-space
    component of rhs (no finite stationary point exists in that case)."""
    scale = max(eigvals[-1], 1e-300)
    cut = 1e-12 * scale
    keep = eigvals > cut
    r = eigvecs.conj().T @ rhs
    inconsistent = np.linalg.norm(r[~keep]) > 1e-10 * max(np.linalg.norm(r), 1e-300)
    x = eigvecs @ np.where(keep, r / np.where(keep, eigvals, 1.0), 0.0)
    return x, inconsistent


def _shifted_solution(eigvals, eigvecs, rhs, lam):
    """x = (A + lam*I)^{-1} rhs via a precomputed eigendecomposition of A."""
    if lam <= 0:
        return _pinv_maximizer(eigvals, eigvecs, rhs)
    r = eigvecs.conj().T @ rhs
    return eigvecs @ (r / (eigvals + lam)), False


def _solve_ball(a, b, q_scale, cap, tol):
    """max Re{b^H x} - x^H a x  s.t.  q_scale * ||x||^2 <= cap.

    The constraint matrix is q_scale * I.  Returns (x, lam)."""
    eigvals, eigvecs = np.linalg.eigh(a)
    rhs = 0.5 * b

    def point(lam):
        return _shifted_solution(eigvals, eigvecs, rhs, lam * q_scale)

    x0, inconsistent = point(0.0)
    if not inconsistent and q_scale * np.vdot(x0, x0).real <= cap * (1 + 1e-10) + 1e-300:
        return x0, 0.0

    def g(lam):
        x, bad = point(lam)
        if bad:
            return np.inf
        return q_scale * np.vdot(x, x).real

    hi = max(1.0, eigvals[-1])
    while g(hi) > cap:
        hi *= 4.0
        if hi > 1e30:
            raise MaxIterExceeded("ball multiplier bracket expansion failed")
    lam = _bisect_feasible(g, 0.0, hi, cap, tol)
    x, _ = point(lam)
    return x, lam


def _null_restricted(a, b, q):
    """Solution when the bound is exactly zero: x confined to null(q)."""
    w, v = np.linalg.eigh(q)
    null = v[:, w <= 1e-14 * max(w[-1], 1e-300)]
    if null.shape[1] == 0:
        return np.zeros_like(b), 0.0
    a_r = hermitize(null.conj().T @ a @ null)
    b_r = null.conj().T @ b
    ev, evec = np.linalg.eigh(a_r)
    z, inconsistent = _pinv_maximizer(np.maximum(ev, 0.0), evec, 0.5 * b_r)
    if inconsistent:
        raise Infeasible("objective unbounded on the null space of a zero-bound constraint")
    return null @ z, 0.0


def _eig_general(a, q):
    """Factor q = L L^H and return the eigendecomposition of L^{-1} a L^{-H}.

    Reduces (a + lam*q) solves to diagonal shifts when q is PD."""
    ell = np.linalg.cholesky(q)
    mid = np.linalg.solve(ell, np.linalg.solve(ell, a.conj().T).conj().T)
    eigvals, eigvecs = np.linalg.eigh(hermitize(mid))
    return ell, eigvals, eigvecs


def _solve_one_ellipsoid(a, b, q, cap, tol):
    """max Re{b^H x} - x^H a x  s.t.  x^H q x <= cap, for general PSD q."""
    n = b.size
    qnorm = np.linalg.norm(q)
    if cap <= 1e-300:
        return _null_restricted(a, b, q)
    iq = np.eye(n)
    if qnorm > 0 and np.allclose(q, q[0, 0].real * iq, atol=1e-13 * max(abs(q[0, 0]), 1.0)) and q[0, 0].real > 0:
        return _solve_ball(a, b, q[0, 0].real, cap, tol)
    eigvals, eigvecs = np.linalg.eigh(a)
    x0, inconsistent = _pinv_maximizer(np.maximum(eigvals, 0.0), eigvecs, 0.5 * b)
    if not inconsistent and (np.vdot(x0, q @ x0).real <= cap * (1 + 1e-10) + 1e-300):
        return x0, 0.0
    qeigs = np.linalg.eigvalsh(q)
    if qeigs[0] > 1e-12 * max(qnorm, 1e-300):
        # q PD: whiten (y = L^H x) so the constraint is a plain norm ball and
        # the multiplier becomes a diagonal shift; x^H q x = ||y||^2
        ell, w, v = _eig_general(a, q)
        w = np.maximum(w, 0.0)
        r_w = v.conj().T @ np.linalg.solve(ell, 0.5 * b)

        def y_of(lam):
            if lam <= 0:
                # limit verdict comes from the unconstrained probe above
                return None if inconsistent else v.conj().T @ (ell.conj().T @ x0)
            return r_w / (w + lam)

        def g(lam):
            y = y_of(lam)
            return np.inf if y is None else float(np.vdot(y, y).real)

        hi = max(1.0, w[-1])
        while g(hi) > cap:
            hi *= 4.0
            if hi > 1e30:
                raise MaxIterExceeded("ellipsoid multiplier bracket expansion failed")
        lam = _bisect_feasible(g, 0.0, hi, cap, tol)
        y = y_of(lam)
        if y is None:
            lam = 1e-12 * max(w[-1], 1.0)
            y = y_of(lam)
        return np.linalg.solve(ell.conj().T, v @ y), lam

    # singular q: per-evaluation Hermitian solves with pinv fallback.  At
    # lam = 0 reuse the verdict from the unconstrained probe above: when b
    # has a null(a) component the limit of x^H q x as lam -> 0+ is +inf.
    def point(lam):
        if lam <= 0:
            return None if inconsistent else x0
        m = a + lam * q
        ev, evec = np.linalg.eigh(hermitize(m))
        x, bad = _pinv_maximizer(np.maximum(ev, 0.0), evec, 0.5 * b)
        return None if bad else x

    def g(lam):
        x = point(lam)
        if x is None:
            return np.inf
        return np.vdot(x, q @ x).real

    hi = max(1.0, np.linalg.norm(a) / max(qnorm, 1e-300))
    while g(hi) > cap:
        hi *= 4.0
        if hi > 1e30:
            raise MaxIterExceeded("ellipsoid multiplier bracket expansion failed")
    lam = _bisect_feasible(g, 0.0, hi, cap, tol)
    x = point(lam)
    if x is None:
        raise SingularSystem("stationary system inconsistent at the bisected multiplier")
    return x, lam


def _solve_two_ellipsoids(a, b, q1, c1, q2, c2, tol, max_iter):
    """Dual bisection for two coupled PSD quadratic constraints.

    For each trial multiplier lam2 the inner single-constraint problem is
    solved exactly; the map lam2 -> x^H q2 x along that path is
    non-increasing (convexity of the partial dual), so an outer bisection
    recovers complementary slackness.
    """
    x, _ = _solve_one_ellipsoid(a, b, q1, c1, tol)
    if x is not None and np.vdot(x, q2 @ x).real <= c2 * (1 + 1e-8) + 1e-300:
        return x
    x, _ = _solve_one_ellipsoid(a, b, q2, c2, tol)
    if x is not None and np.vdot(x, q1 @ x).real <= c1 * (1 + 1e-8) + 1e-300:
        return x

    def inner(lam2):
        return _solve_one_ellipsoid(a + lam2 * q2, b, q1, c1, tol)[0]

    def g2(lam2):
        x = inner(lam2)
        return np.vdot(x, q2 @ x).real

    hi = max(1.0, np.linalg.norm(a) / max(np.linalg.norm(q2), 1e-300))
    it = 0
    while g2(hi) > c2:
        hi *= 4.0
        it += 1
        if it > 100:
            raise MaxIterExceeded("outer multiplier bracket expansion failed")
    lam2 = _bisect_feasible(g2, 0.0, hi, c2, tol)
    return inner(lam2)


def _fista_caps(a, b, caps, x0, tol, max_iter):
    """Projected accelerated gradient ascent of Re{b^H x} - x^H a x over the
    magnitude-cap box, with Jacobi preconditioning.

    The diagonal rescale keeps the per-element projection exact (the box is
    separable) while flattening the diagonal spread of a.  When the scaled
    matrix is strongly convex the constant heavy-ball momentum is used,
    otherwise FISTA weights with monotone restarts.  Returns
    (x, kkt_residual) with the residual measured on the scaled gradient.
    """
    diag = np.real(np.diag(a))
    d = np.sqrt(np.maximum(diag, 1e-12 * max(diag.max(initial=0.0), 1e-300)))
    d = np.maximum(d, 1e-150)
    a_s = a / np.outer(d, d)
    b_s = b / d
    caps_s = caps * d
    eigs = np.linalg.eigvalsh(a_s)
    lmax = max(float(eigs[-1]), 1e-300)
    lmin = max(float(eigs[0]), 0.0)
    step = 1.0 / (2.0 * lmax)
    strong = lmin / lmax > 1e-10
    beta_sc = ((math.sqrt(lmax) - math.sqrt(lmin)) / (math.sqrt(lmax) + math.sqrt(lmin))) if strong else 0.0
    gscale = max(np.linalg.norm(b_s), 2.0 * lmax * np.linalg.norm(caps_s), 1e-300)
    x = project_magnitude_caps(x0 * d, caps_s)
    y = x.copy()
    t = 1.0
    fx = -np.inf
    res = np.inf
    check_every = 8
    for it in range(max_iter):
        x_new = project_magnitude_caps(y + step * (b_s - 2.0 * (a_s @ y)), caps_s)
        if strong:
            y = x_new + beta_sc * (x_new - x)
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x = x_new
        if (it + 1) % check_every == 0 or it + 1 == max_iter:
            f_new = np.real(np.vdot(b_s, x)) - np.vdot(x, a_s @ x).real
            if f_new < fx - 1e-15 * abs(fx):  # momentum overshoot: restart
                y = x.copy()
                t = 1.0
            fx = f_new
            gx = b_s - 2.0 * (a_s @ x)
            res = np.linalg.norm(x - project_magnitude_caps(x + step * gx, caps_s)) / (step * gscale)
            if res <= tol:
                break
    return x / d, res


def _solve_caps(a, b, q, cap, caps, tol, max_iter, warm=None):
    """Caps-constrained route: projected gradient ascent with the ellipsoid
    constraint (if present) handled by bisection on its own multiplier.

    warm, if given, is a dict carrying the previous solve's multiplier and
    point to seed the bracket and the gradient iterations.
    """
    pga_tol = max(tol, 1e-9)
    search_tol = max(100.0 * pga_tol, 3e-7)
    if q is None:
        x0 = np.zeros_like(b) if warm is None else warm.get("x", np.zeros_like(b))
        x, res = _fista_caps(a, b, caps, x0, pga_tol, max_iter)
        if res > pga_tol:
            raise MaxIterExceeded(f"KKT residual {res:.3e} > {pga_tol:.1e}")
        if warm is not None:
            warm["x"] = x
        return x
    # fast path: if the cap-free optimum already satisfies the caps it is optimal
    x_try, _ = _solve_one_ellipsoid(a, b, q, cap, tol)
    if x_try is not None and np.all(np.abs(x_try) <= caps * (1 + 1e-10) + 1e-300):
        if warm is not None:
            warm["lam"] = None
        return x_try

    state = {"x": np.zeros_like(b) if warm is None else warm.get("x", np.zeros_like(b))}

    def inner(lam, inner_tol):
        x, res = _fista_caps(a + lam * q, b, caps, state["x"], inner_tol, max_iter)
        state["x"] = x
        return x, res

    def g(lam):
        x, _ = inner(lam, search_tol)
        return np.vdot(x, q @ x).real

    x0, _ = inner(0.0, search_tol)
    if np.vdot(x0, q @ x0).real <= cap * (1 + 1e-8) + 1e-300:
        x, res = inner(0.0, pga_tol)
        if res > pga_tol:
            raise MaxIterExceeded(f"KKT residual {res:.3e} > {pga_tol:.1e}")
        if warm is not None:
            warm["x"], warm["lam"] = x, 0.0
        return x

    lo, hi = 0.0, max(1.0, np.linalg.norm(a) / max(np.linalg.norm(q), 1e-300))
    prev = None if warm is None else warm.get("lam")
    if prev:  # try a narrow bracket around the previous multiplier first
        if g(2.0 * prev) <= cap:
            hi = 2.0 * prev
            if g(0.5 * prev) >= cap:
                lo = 0.5 * prev
    it = 0
    while g(hi) > cap:
        hi *= 4.0
        it += 1
        if it > 100:
            raise MaxIterExceeded("caps-route multiplier bracket expansion failed")
    lam = _bisect_feasible(g, lo, hi, cap, tol)
    x, res = inner(lam, pga_tol)
    if res > pga_tol:
        raise MaxIterExceeded(f"KKT residual {res:.3e} > {pga_tol:.1e}")
    if warm is not None:
        warm["x"], warm["lam"] = x, lam
    return x


def qcqp_objective(p: QcqpProblem, x: np.ndarray) -> float:
    return float(np.real(np.vdot(p.lin, x)) - np.vdot(x, p.quad @ x).real)


def _problem_scales(a, b, constraints, caps):
    """Pick (xscale, fscale) so the normalized problem has O(1) feasible
    radius and O(1) objective; makes the absolute tolerances meaningful."""
    radii = []
    for q, c in constraints:
        lam = np.linalg.eigvalsh(q)[-1]
        if lam > 0 and c > 0:
            radii.append(math.sqrt(c / lam))
    if caps is not None and caps.size and np.max(caps) > 0:
        radii.append(float(np.max(caps)))
    if radii:
        xscale = min(radii)
    else:
        lam_a = np.linalg.eigvalsh(a)[-1]
        bn = np.linalg.norm(b)
        xscale = bn / (2.0 * lam_a) if lam_a > 0 and bn > 0 else 1.0
    xscale = max(xscale, 1e-150)
    lam_a = np.linalg.eigvalsh(a)[-1]
    fscale = max(lam_a * xscale * xscale, np.linalg.norm(b) * xscale, 1e-150)
    return xscale, fscale


def solve_concave_qcqp(p: QcqpProblem, tol: float = 1e-7, max_iter: int = 20000,
                       warm: dict | None = None) -> np.ndarray:
    """Maximize Re{b^H x} - x^H A x under PSD quadratic constraints and
    optional per-element magnitude caps.

    Two strategies, matching the shapes that actually occur:
      * no caps, up to two ellipsoids: nested dual bisection with the
        closed-form stationary point x(lam) = (A + sum lam_i Q_i)^{-1} b/2;
      * caps present (at most one ellipsoid): projected gradient ascent with
        per-element magnitude projection, the ellipsoid handled by its own
        multiplier bisection.

    The problem is normalized once (unit feasible radius, O(1) objective) so
    the tolerances act relatively regardless of the physical scales.
    """
    for _, c in p.constraints:
        if c < 0:
            raise Infeasible(f"constraint bound {c} < 0")
    xs, fs = _problem_scales(p.quad, p.lin, p.constraints, p.caps)
    a = p.quad * (xs * xs / fs)
    b = p.lin * (xs / fs)
    cons = [(q * (xs * xs / fs), c / fs) for q, c in p.constraints]
    caps = None if p.caps is None else p.caps / xs

    if caps is not None:
        if len(cons) > 1:
            raise ValueError("caps route supports at most one quadratic constraint")
        q, c = cons[0] if cons else (None, 0.0)
        w = None
        if warm is not None:
            w = {}
            if warm.get("x") is not None:
                w["x"] = np.asarray(warm["x"], dtype=complex) / xs
            if warm.get("lam") is not None:
                w["lam"] = warm["lam"]
        x = _solve_caps(a, b, q, c, caps, tol, max_iter, warm=w)
        if warm is not None:
            warm["x"] = w.get("x", x) * xs
            warm["lam"] = w.get("lam")
    elif len(cons) == 0:
        eigvals, eigvecs = np.linalg.eigh(a)
        x, inconsistent = _pinv_maximizer(np.maximum(eigvals, 0.0), eigvecs, 0.5 * b)
        if inconsistent:
            raise Infeasible("unbounded objective: no constraints and b outside range(A)")
    elif len(cons) == 1:
        q, c = cons[0]
        x, _ = _solve_one_ellipsoid(a, b, q, c, tol)
    elif len(cons) == 2:
        (q1, c1), (q2, c2) = cons
        x = _solve_two_ellipsoids(a, b, q1, c1, q2, c2, tol, max_iter)
    else:
        raise ValueError("solver supports at most two quadratic constraints")
    return x * xs
