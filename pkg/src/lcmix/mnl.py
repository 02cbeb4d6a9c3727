"""Multinomial logit core: choice probabilities, weighted panel likelihood, fitting.

All probability work happens in the log domain with max-subtraction, so
utilities up to +/-700 cannot overflow.  Unavailable alternatives are
masked out (log-probability -inf) and the remaining probabilities are
renormalized, which reduces to the textbook logit when everything is
available.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteObjectiveError, ValidationError
from .optim import bfgs_maximize

SEPARATION_BOUND = 50.0


@dataclass(frozen=True)
class MnlParams:
    """Coefficient vector of one multinomial logit (or one latent class)."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(beta)):
            raise ValidationError("logit coefficients must be finite")
        object.__setattr__(self, "beta", beta)


def _beta_vector(beta):
    if isinstance(beta, MnlParams):
        return beta.beta
    return np.asarray(beta, dtype=float).reshape(-1)


def choice_log_probs(situation, beta):
    """Log choice probabilities for one situation; -inf where unavailable."""
    b = _beta_vector(beta)
    u = situation.attrs @ b
    masked = np.where(situation.available, u, -np.inf)
    peak = masked.max()
    lse = peak + np.log(np.exp(masked - peak).sum())
    return masked - lse


def _utilities(ds, beta):
    packed = ds.packed
    u = packed.attrs @ _beta_vector(beta)
    return np.where(packed.available, u, -np.inf)


def all_choice_log_probs(ds, beta):
    """(S, J) matrix of log choice probabilities over every situation."""
    masked = _utilities(ds, beta)
    peak = masked.max(axis=1, keepdims=True)
    lse = peak + np.log(np.exp(masked - peak).sum(axis=1, keepdims=True))
    return masked - lse


def chosen_log_probs(ds, beta):
    """(S,) log probability of the chosen alternative in each situation."""
    log_probs = all_choice_log_probs(ds, beta)
    return log_probs[np.arange(log_probs.shape[0]), ds.packed.chosen]


def person_choice_loglik(ds, beta):
    """(N,) per-person panel log-likelihood: sum over the person's situations."""
    packed = ds.packed
    return np.bincount(packed.person_of, weights=chosen_log_probs(ds, beta),
                       minlength=ds.n_persons)


def weighted_panel_loglik(ds, beta, weights):
    """Per-person-weighted panel log-likelihood and its analytic gradient.

    Value:    sum_n w_n * sum_t log P(chosen | X, beta)
    Gradient: sum_n w_n * sum_t (x_chosen - sum_j P_j x_j)
    """
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.shape[0] != ds.n_persons:
        raise ValidationError("weights must have one entry per person")
    packed = ds.packed
    masked = _utilities(ds, beta)
    if not np.all(np.isfinite(masked[packed.available])):
        raise NonFiniteObjectiveError("non-finite utility encountered",
                                      point=_beta_vector(beta))
    peak = masked.max(axis=1, keepdims=True)
    expu = np.exp(masked - peak)
    denom = expu.sum(axis=1, keepdims=True)
    log_probs = (masked - peak) - np.log(denom)
    s_idx = np.arange(masked.shape[0])
    w_situation = weights[packed.person_of]
    value = float(np.dot(w_situation, log_probs[s_idx, packed.chosen]))
    probs = expu / denom
    x_chosen = packed.attrs[s_idx, packed.chosen]
    x_mean = np.einsum("sj,sjp->sp", probs, packed.attrs)
    grad = (x_chosen - x_mean).T @ w_situation
    return value, grad


def fit_weighted_mnl(ds, weights, beta0, grad_tol=1e-6, max_iter=200):
    """Maximize the weighted panel log-likelihood by BFGS from ``beta0``.

    Warns when any coefficient drifts past +/-50, the heuristic signature
    of complete separation.
    """
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if not np.any(weights > 0.0):
        raise ValidationError("at least one weight must be positive")

    def objective(b):
        return weighted_panel_loglik(ds, b, weights)

    result = bfgs_maximize(objective, _beta_vector(beta0), grad_tol=grad_tol, max_iter=max_iter)
    if np.any(np.abs(result.x_star) > SEPARATION_BOUND):
        warnings.warn(
            "coefficient magnitude exceeds 50; possible complete separation",
            UserWarning, stacklevel=2,
        )
    return MnlParams(result.x_star)


def fit_mnl(ds, grad_tol=1e-6, max_iter=200):
    """Plain multinomial logit MLE (unit weights); returns (params, log-likelihood)."""
    check_identification(ds)
    weights = np.ones(ds.n_persons)
    params = fit_weighted_mnl(ds, weights, np.zeros(ds.attr_count),
                              grad_tol=grad_tol, max_iter=max_iter)
    value, _ = weighted_panel_loglik(ds, params, weights)
    return params, value


def check_identification(ds):
    """Warn when within-situation attribute differences are rank deficient.

    Only utility differences are identified in a logit, so the stacked
    matrix of (x_j - x_ref) rows must have full column rank P.
    """
    packed = ds.packed
    diffs = []
    for s in range(packed.attrs.shape[0]):
        avail = np.flatnonzero(packed.available[s])
        ref = avail[0]
        diffs.append(packed.attrs[s, avail[1:]] - packed.attrs[s, ref])
    stacked = np.vstack(diffs)
    rank = np.linalg.matrix_rank(stacked)
    if rank < ds.attr_count:
        warnings.warn(
            f"attribute-difference matrix has rank {rank} < {ds.attr_count}; "
            "some coefficients are not identified",
            UserWarning, stacklevel=2,
        )
    return rank
