"""Quasi-Newton maximization (BFGS) with a strong Wolfe line search.

The solver works natively in maximization orientation: objectives return
``(value, gradient)`` and the search direction is an ascent direction.
This is the inner solver for the weighted-logit M-step and for the plain
MNL / latent-class membership problems, so robustness matters more than
raw speed; the update safeguards follow Nocedal & Wright (ch. 6).
"""

from dataclasses import dataclass

import numpy as np

from .errors import LineSearchError, NonFiniteObjectiveError

WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9
# Internal acceptance uses a tighter curvature constant than the contract
# value; near-exact line minima give finite termination on quadratics.
# Every accepted step therefore satisfies the (c1, c2) = (1e-4, 0.9) pair.
ZOOM_C2 = 0.01
CURVATURE_SKIP_TOL = 1e-10


@dataclass(frozen=True)
class OptimResult:
    """Outcome of a BFGS maximization.

    ``converged`` is True iff the infinity norm of the gradient at
    ``x_star`` is at or below the requested tolerance.
    """

    x_star: np.ndarray
    f_star: float
    grad_norm: float
    iterations: int
    converged: bool


def _evaluate(objective, x):
    f, g = objective(x)
    f = float(f)
    g = np.asarray(g, dtype=float)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjectiveError(
            f"objective or gradient non-finite at x = {np.array2string(x, precision=6)}",
            point=np.array(x),
        )
    return f, g


def _wolfe_line_search(objective, x, direction, f0, g0, c1=WOLFE_C1, c2=WOLFE_C2,
                       alpha0=1.0, max_bracket=60, max_zoom=100, alpha_max=1e12):
    """Find a step satisfying the strong Wolfe conditions (maximization form).

    phi(a) = f(x + a*direction) must show sufficient increase,
    |phi'(a)| <= c2 * phi'(0), with phi'(0) > 0 required on entry.

    Returns (alpha, f_new, g_new).  Raises LineSearchError once the
    bracketing or zoom budget is exhausted without an acceptable step.
    """
    dphi0 = float(g0 @ direction)
    if dphi0 <= 0.0:
        raise LineSearchError("search direction is not an ascent direction")
    # Near an optimum the true increase drops below what float64 can resolve
    # in f; value comparisons get this slack while the curvature condition,
    # which only needs gradients, stays exact.
    noise = 4.0 * np.finfo(float).eps * (1.0 + abs(f0))

    def phi(alpha):
        f, g = _evaluate(objective, x + alpha * direction)
        return f, g, float(g @ direction)

    def zoom(lo, phi_lo, dphi_lo, hi, phi_hi):
        # Invariant: lo satisfies the sufficient-increase condition and
        # phi'(lo) points from lo toward hi.
        for _ in range(max_zoom):
            span = hi - lo
            # Quadratic interpolation through (lo, phi_lo, dphi_lo), (hi, phi_hi);
            # exact for quadratic objectives.  Safeguard with bisection.
            denom = 2.0 * (phi_hi - phi_lo - dphi_lo * span)
            if denom != 0.0:
                alpha = lo - dphi_lo * span * span / denom
            else:
                alpha = lo + 0.5 * span
            lower, upper = (lo, hi) if lo < hi else (hi, lo)
            width = upper - lower
            if not (lower + 0.05 * width <= alpha <= upper - 0.05 * width):
                alpha = lo + 0.5 * span
            f_a, g_a, dphi_a = phi(alpha)
            if f_a < f0 + c1 * alpha * dphi0 - noise or f_a <= phi_lo - noise:
                hi, phi_hi = alpha, f_a
            else:
                if abs(dphi_a) <= c2 * dphi0:
                    return alpha, f_a, g_a
                if dphi_a * span <= 0.0:
                    # Slope at the trial points back toward lo: the maximum
                    # sits between lo and the trial.
                    hi, phi_hi = lo, phi_lo
                lo, phi_lo, dphi_lo = alpha, f_a, dphi_a
        raise LineSearchError("line search failed: zoom budget exhausted")

    alpha_prev, phi_prev, dphi_prev = 0.0, f0, dphi0
    alpha = alpha0
    for i in range(max_bracket):
        f_a, g_a, dphi_a = phi(alpha)
        if f_a < f0 + c1 * alpha * dphi0 - noise or (i > 0 and f_a <= phi_prev - noise):
            return zoom(alpha_prev, phi_prev, dphi_prev, alpha, f_a)
        if abs(dphi_a) <= c2 * dphi0:
            return alpha, f_a, g_a
        if dphi_a <= 0.0:
            return zoom(alpha, f_a, dphi_a, alpha_prev, phi_prev)
        if alpha >= alpha_max:
            raise LineSearchError("line search failed: step bound reached while still ascending")
        alpha_prev, phi_prev, dphi_prev = alpha, f_a, dphi_a
        alpha = min(alpha * 2.0, alpha_max)
    raise LineSearchError("line search failed: no bracket after maximum expansions")


def bfgs_maximize(objective, x0, grad_tol=1e-6, max_iter=200):
    """Maximize a differentiable objective with BFGS.

    Parameters
    ----------
    objective : callable
        Maps a parameter vector to ``(value, gradient)``.
    x0 : array-like
        Starting point; the objective must be finite there.
    grad_tol : float
        Convergence threshold on the infinity norm of the gradient.
    max_iter : int
        Cap on accepted BFGS steps.

    The inverse-Hessian approximation is kept positive definite by
    skipping updates whose curvature ``s'y`` falls below 1e-10, and is
    rescaled after the first accepted step.  The achieved value never
    falls below the value at ``x0``.

    A line-search breakdown on the very first step raises
    :class:`~lcmix.errors.LineSearchError`; a breakdown after progress has
    been made (objective flat to float precision, or an unbounded
    separation tail) stops the iteration at the best point reached, with
    ``converged`` reflecting the gradient test.
    """
    x = np.asarray(x0, dtype=float).copy()
    if x.ndim != 1:
        raise ValueError("x0 must be a 1-D vector")
    f, g = _evaluate(objective, x)
    n = x.size
    H = np.eye(n)
    scaled = False
    iterations = 0
    grad_norm = float(np.max(np.abs(g))) if n else 0.0

    while grad_norm > grad_tol and iterations < max_iter:
        p = H @ g
        dphi = float(g @ p)
        if dphi <= 0.0:
            # Numerical loss of positive definiteness: restart from steepest ascent.
            H = np.eye(n)
            scaled = False
            p = g.copy()
            dphi = float(g @ g)
        at_noise_floor = dphi <= 4.0 * np.finfo(float).eps * (1.0 + abs(f))
        try:
            alpha, f_new, g_new = _wolfe_line_search(objective, x, p, f, g, c2=ZOOM_C2)
        except LineSearchError:
            if at_noise_floor or iterations > 0:
                # Precision exhaustion, or a flat/unbounded tail after real
                # progress (the complete-separation signature): keep the
                # best point reached and stop.
                break
            raise
        s = alpha * p
        y = g - g_new  # curvature pair for the maximization orientation
        x = x + s
        f, g = f_new, g_new
        sy = float(s @ y)
        if sy > CURVATURE_SKIP_TOL:
            if not scaled:
                H *= sy / float(y @ y)
                scaled = True
            Hy = H @ y
            rho = 1.0 / sy
            H -= rho * (np.outer(s, Hy) + np.outer(Hy, s))
            H += (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
        iterations += 1
        grad_norm = float(np.max(np.abs(g)))

    return OptimResult(
        x_star=x,
        f_star=f,
        grad_norm=grad_norm,
        iterations=iterations,
        converged=grad_norm <= grad_tol,
    )


def check_gradient(objective, x, step=1e-5):
    """Compare the analytic gradient with central finite differences.

    Returns the maximum over coordinates of
    ``|g_analytic - g_fd| / max(1, |g_fd|)``.
    """
    x = np.asarray(x, dtype=float)
    _, g = _evaluate(objective, x)
    g_fd = np.empty_like(g)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        f_plus, _ = _evaluate(objective, x + e)
        f_minus, _ = _evaluate(objective, x - e)
        g_fd[i] = (f_plus - f_minus) / (2.0 * step)
    denom = np.maximum(1.0, np.abs(g_fd))
    if g.size == 0:
        return 0.0
    return float(np.max(np.abs(g - g_fd) / denom))
