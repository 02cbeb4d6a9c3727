"""EM engines for the mixture-membership and traditional latent class models.

Two estimators share the machinery here:

* the hybrid model, whose class membership component is a Gaussian-Bernoulli
  mixture over person characteristics (fit on the joint likelihood of
  characteristics and choices), and
* the traditional latent class choice model, whose membership component is
  a multinomial logit of the characteristics (fit on the choice likelihood).

Both alternate an exact-Bayes E-step with closed-form/BFGS M-steps, track a
non-decreasing likelihood trace, and run under a multi-start protocol whose
best restart is selected on the marginal (choice) log-likelihood.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import mixture, mnl
from .errors import EmptyClassError, EstimationError, ValidationError
from .mixture import GbmMembershipParams
from .mnl import MnlParams
from .optim import bfgs_maximize

EMPTY_CLASS_FRACTION = 1e-6
LL_TIE_TOL = 1e-9

#: Responsibilities are plain (N, K) arrays: rows sum to 1, entries in [0, 1].
Responsibilities = np.ndarray


@dataclass(frozen=True)
class GbmLccmParams:
    """Full parameter set of the hybrid model: membership mixture + K logits."""

    membership: GbmMembershipParams
    betas: np.ndarray

    def __post_init__(self):
        betas = np.atleast_2d(np.asarray(self.betas, dtype=float))
        if betas.shape[0] != self.membership.n_classes:
            raise ValidationError("need one coefficient vector per class")
        if not np.all(np.isfinite(betas)):
            raise ValidationError("choice coefficients must be finite")
        object.__setattr__(self, "betas", betas)

    @property
    def n_classes(self):
        return self.membership.n_classes

    def validate(self):
        self.membership.validate()
        return self


@dataclass(frozen=True)
class LccmParams:
    """Traditional latent class model: membership logit coefficients + K logits.

    ``gamma`` has one row per class except the last, which is fixed at zero
    for identification; columns are [constant, continuous chars, binary chars].
    """

    gamma: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.ndim != 2:
            gamma = gamma.reshape(0, 0) if gamma.size == 0 else np.atleast_2d(gamma)
        betas = np.atleast_2d(np.asarray(self.betas, dtype=float))
        if gamma.shape[0] != betas.shape[0] - 1:
            raise ValidationError("gamma must have K-1 rows")
        if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(betas))):
            raise ValidationError("parameters must be finite")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "betas", betas)

    @property
    def n_classes(self):
        return self.betas.shape[0]

    def validate(self):
        return self


@dataclass(frozen=True)
class FitResult:
    """Converged parameters plus fit statistics and the restart protocol record.

    ``iter_seconds`` holds per-iteration wall time for the convergence log;
    it is diagnostic only and never serialized.
    """

    model: str
    params: object
    marginal_ll: float
    joint_ll: float
    iterations: int
    converged: bool
    ll_trace: tuple
    restart_lls: tuple = ()
    ll_variance: float = None
    n_restarts: int = 1
    iter_seconds: tuple = ()


def validate_responsibilities(resp, tol=1e-12):
    resp = np.asarray(resp, dtype=float)
    if resp.ndim != 2:
        raise ValidationError("responsibilities must be an N x K matrix")
    if np.any(resp < -tol) or np.any(resp > 1.0 + tol):
        raise ValidationError("responsibilities must lie in [0, 1]")
    if np.max(np.abs(resp.sum(axis=1) - 1.0)) > max(tol, 1e-12):
        raise ValidationError("responsibility rows must sum to 1")
    return resp


def _softmax_rows(log_rows):
    peak = log_rows.max(axis=1, keepdims=True)
    out = np.exp(log_rows - peak)
    out /= out.sum(axis=1, keepdims=True)
    return out


def _logsumexp_rows(log_rows):
    peak = log_rows.max(axis=1)
    return peak + np.log(np.exp(log_rows - peak.reshape(-1, 1)).sum(axis=1))


def _choice_loglik_matrix(ds, betas):
    """(N, K): per-person panel choice log-likelihood under each class's logit."""
    betas = np.atleast_2d(betas)
    cols = [mnl.person_choice_loglik(ds, betas[k]) for k in range(betas.shape[0])]
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# hybrid model (mixture membership)


def _gbm_log_rows(ds, params):
    packed = ds.packed
    rows = mixture.membership_log_joint_matrix(packed.s_cont, packed.s_bin, params.membership)
    rows += _choice_loglik_matrix(ds, params.betas)
    return rows


def estep_gbm(ds, params):
    """Posterior class responsibilities given characteristics *and* choices."""
    rows = _gbm_log_rows(ds, params)
    if not np.all(np.isfinite(rows.max(axis=1))):
        raise EstimationError("non-finite log-joint in the E-step")
    return _softmax_rows(rows)


def _membership_mstep(ds, resp, structure):
    """Closed-form membership updates from responsibilities."""
    packed = ds.packed
    nk = resp.sum(axis=0)
    if np.any(nk < EMPTY_CLASS_FRACTION * ds.n_persons):
        raise EmptyClassError(
            f"class {int(np.argmin(nk))} emptied out (N_k = {float(nk.min()):.3e})"
        )
    pi = mixture.floor_mixing(nk / ds.n_persons)
    mu_c = resp.T @ packed.s_cont / nk[:, None]
    sigma_c = mixture.covariance_mstep(packed.s_cont, resp, mu_c, structure)
    mu_d = mixture.clamp_bernoulli(resp.T @ packed.s_bin / nk[:, None])
    return GbmMembershipParams(pi=pi, mu_c=mu_c, sigma_c=sigma_c, mu_d=mu_d, structure=structure)


def mstep_gbm(ds, resp, structure, prev):
    """Full M-step: closed-form membership blocks plus one weighted logit per class.

    The class logits are warm-started at the previous iterate, so the inner
    BFGS never decreases the expected complete-data objective.
    """
    resp = np.asarray(resp, dtype=float)
    membership = _membership_mstep(ds, resp, structure)
    betas = np.empty_like(np.atleast_2d(prev.betas))
    for k in range(membership.n_classes):
        fitted = mnl.fit_weighted_mnl(ds, resp[:, k], prev.betas[k])
        betas[k] = fitted.beta
    return GbmLccmParams(membership=membership, betas=betas)


def joint_loglik(ds, params):
    """Log-likelihood of characteristics and choices jointly (the EM objective)."""
    return float(_logsumexp_rows(_gbm_log_rows(ds, params)).sum())


def marginal_loglik(ds, params):
    """Choice log-likelihood with membership integrated out.

    Membership enters through the Bayes posterior given characteristics
    only, so the value is comparable across membership model families and
    is always <= 0.
    """
    packed = ds.packed
    post = mixture.membership_posterior_matrix(packed.s_cont, packed.s_bin, params.membership)
    rows = np.log(np.maximum(post, 1e-300)) + _choice_loglik_matrix(ds, params.betas)
    return float(_logsumexp_rows(rows).sum())


def _perturbed_clone(warm_params, rng):
    """Grow a K-1 solution by one class cloned (and jittered) from the largest."""
    mem = warm_params.membership
    j = int(np.argmax(mem.pi))
    d_c, d_d = mem.cont_dim, mem.bin_dim
    scale = np.sqrt(np.diag(mem.covariance(j))) if d_c else np.zeros(0)
    new_mu_c = mem.mu_c[j] + 0.1 * scale * rng.standard_normal(d_c)
    new_mu_d = mixture.clamp_bernoulli(mem.mu_d[j] + rng.uniform(-0.05, 0.05, size=d_d))
    pi = np.append(mem.pi, mem.pi[j] / 2.0)
    pi[j] /= 2.0
    mu_c = np.vstack([mem.mu_c, new_mu_c]) if d_c else np.zeros((mem.n_classes + 1, 0))
    mu_d = np.vstack([mem.mu_d, new_mu_d]) if d_d else np.zeros((mem.n_classes + 1, 0))
    if mem.structure == "full":
        sigma = np.concatenate([mem.sigma_c, mem.sigma_c[j][None]], axis=0)
    elif mem.structure == "tied":
        sigma = mem.sigma_c
    else:
        sigma = np.concatenate([mem.sigma_c, mem.sigma_c[j][None]], axis=0)
    membership = GbmMembershipParams(
        pi=mixture.floor_mixing(pi), mu_c=mu_c, sigma_c=sigma, mu_d=mu_d,
        structure=mem.structure,
    )
    betas = np.vstack([warm_params.betas, np.zeros(warm_params.betas.shape[1])])
    return GbmLccmParams(membership=membership, betas=betas)


def _parse_init(init):
    membership, _, choice = str(init).partition("+")
    if membership not in ("random", "kmeans", "incremental", "zero"):
        raise ValidationError(f"unknown initialization strategy {init!r}")
    if choice == "":
        choice = "zero"
    if choice not in ("zero", "random"):
        raise ValidationError(f"unknown choice-model initialization in {init!r}")
    return membership, choice


def _initial_resp(ds, n_classes, membership_init, rng):
    packed = ds.packed
    if membership_init == "kmeans":
        chars = np.hstack([packed.s_cont, packed.s_bin])
        return mixture.kmeans_init(chars, n_classes, rng.integers(2**31))
    resp = rng.random((ds.n_persons, n_classes))
    return resp / resp.sum(axis=1, keepdims=True)


def _initial_betas(shape, choice_init, rng):
    if choice_init == "random":
        return rng.normal(scale=0.1, size=shape)
    return np.zeros(shape)


def fit_gbm_lccm(ds, n_classes, structure, init="random", seed=0, tol=1e-7,
                 max_iter=500, warm_from=None):
    """Fit the hybrid model by EM from one initialization.

    ``init`` is a strategy tag: membership part "random", "kmeans", or
    "incremental" (requires ``warm_from``, a K-1 fit), optionally followed
    by "+random" to randomize the choice-model start (default zero).
    Convergence is declared when the relative change of the joint
    log-likelihood falls below ``tol``.
    """
    n_classes = int(n_classes)
    if n_classes < 1:
        raise ValidationError("need at least one class")
    mixture.validate_structure(structure)
    membership_init, choice_init = _parse_init(init)
    if membership_init == "zero":
        raise ValidationError("the mixture membership model has no zero initialization")
    rng = np.random.default_rng(seed)

    if membership_init == "incremental":
        if warm_from is None:
            raise ValidationError("incremental initialization needs a previous fit")
        base = warm_from.params if isinstance(warm_from, FitResult) else warm_from
        if base.n_classes != n_classes - 1:
            raise ValidationError("incremental warm start must come from a K-1 fit")
        params = _perturbed_clone(base, rng)
        if choice_init == "random":
            betas = np.array(params.betas)
            betas[-1] = rng.normal(scale=0.1, size=betas.shape[1])
            params = GbmLccmParams(membership=params.membership, betas=betas)
    else:
        resp0 = _initial_resp(ds, n_classes, membership_init, rng)
        membership = _membership_mstep(ds, resp0, structure)
        betas = _initial_betas((n_classes, ds.attr_count), choice_init, rng)
        params = GbmLccmParams(membership=membership, betas=betas)

    trace = []
    seconds = []
    ll = joint_loglik(ds, params)
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        tick = time.perf_counter()
        resp = estep_gbm(ds, params)
        params = mstep_gbm(ds, resp, structure, prev=params)
        ll_new = joint_loglik(ds, params)
        trace.append(ll_new)
        seconds.append(time.perf_counter() - tick)
        if abs(ll_new - ll) <= tol * max(1.0, abs(ll)):
            ll = ll_new
            converged = True
            break
        ll = ll_new

    return FitResult(
        model="gbm-lccm",
        params=params,
        marginal_ll=marginal_loglik(ds, params),
        joint_ll=ll,
        iterations=iteration,
        converged=converged,
        ll_trace=tuple(trace),
        iter_seconds=tuple(seconds),
    )


# ---------------------------------------------------------------------------
# traditional latent class model (logit membership)


def membership_design(ds):
    """(N, 1 + D_c + D_d) design matrix [constant, characteristics]."""
    packed = ds.packed
    return np.hstack([np.ones((ds.n_persons, 1)), packed.s_cont, packed.s_bin])


def _lccm_membership_logprobs(z, gamma):
    """(N, K) log membership probabilities; class K's coefficients are zero."""
    k = gamma.shape[0] + 1
    u = np.hstack([z @ gamma.T, np.zeros((z.shape[0], 1))])
    peak = u.max(axis=1, keepdims=True)
    return u - (peak + np.log(np.exp(u - peak).sum(axis=1, keepdims=True)))


def _fit_membership_logit(z, resp, gamma0):
    """Weighted multinomial logit over classes with fractional targets.

    Maximizes sum_n sum_k resp[n, k] * log P(class k | z_n, gamma) by BFGS;
    the gradient for class k < K is sum_n (resp[n, k] - P[n, k]) z_n.
    """
    n, d = z.shape
    k = resp.shape[1]

    def objective(theta):
        gamma = theta.reshape(k - 1, d)
        logp = _lccm_membership_logprobs(z, gamma)
        value = float(np.sum(resp * logp))
        probs = np.exp(logp)
        grad = (resp[:, : k - 1] - probs[:, : k - 1]).T @ z
        return value, grad.reshape(-1)

    result = bfgs_maximize(objective, gamma0.reshape(-1))
    return result.x_star.reshape(k - 1, d)


def lccm_marginal_loglik(ds, params):
    """Observed-data choice log-likelihood of the traditional model."""
    z = membership_design(ds)
    rows = _lccm_membership_logprobs(z, params.gamma) + _choice_loglik_matrix(ds, params.betas)
    return float(_logsumexp_rows(rows).sum())


def estep_lccm(ds, params):
    z = membership_design(ds)
    rows = _lccm_membership_logprobs(z, params.gamma) + _choice_loglik_matrix(ds, params.betas)
    return _softmax_rows(rows)


def fit_lccm(ds, n_classes, init="random", seed=0, tol=1e-7, max_iter=500, warm_from=None):
    """Fit the traditional latent class model by EM from one initialization.

    Membership covariates are the constant plus all person characteristics.
    ``init``: membership part "zero", "random", or "incremental", optional
    "+random" choice start.  Convergence is on the relative change of the
    observed-data (marginal) log-likelihood, which is also the trace.
    """
    n_classes = int(n_classes)
    if n_classes < 1:
        raise ValidationError("need at least one class")
    membership_init, choice_init = _parse_init(init)
    rng = np.random.default_rng(seed)
    z = membership_design(ds)
    d = z.shape[1]

    if membership_init == "incremental":
        if warm_from is None:
            raise ValidationError("incremental initialization needs a previous fit")
        base = warm_from.params if isinstance(warm_from, FitResult) else warm_from
        if base.n_classes != n_classes - 1:
            raise ValidationError("incremental warm start must come from a K-1 fit")
        gamma = np.vstack([base.gamma, rng.normal(scale=0.1, size=d)]) \
            if n_classes > 1 else np.zeros((0, d))
        betas = np.vstack([base.betas, np.zeros(ds.attr_count)])
        if choice_init == "random":
            betas[-1] = rng.normal(scale=0.1, size=ds.attr_count)
    else:
        if membership_init == "kmeans":
            raise ValidationError("k-means initialization applies to the mixture membership model")
        gamma = (rng.normal(scale=0.1, size=(n_classes - 1, d))
                 if membership_init == "random" else np.zeros((n_classes - 1, d)))
        betas = _initial_betas((n_classes, ds.attr_count), choice_init, rng)
    params = LccmParams(gamma=gamma, betas=betas)

    trace = []
    seconds = []
    ll = lccm_marginal_loglik(ds, params)
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        tick = time.perf_counter()
        resp = estep_lccm(ds, params)
        nk = resp.sum(axis=0)
        if np.any(nk < EMPTY_CLASS_FRACTION * ds.n_persons):
            raise EmptyClassError(
                f"class {int(np.argmin(nk))} emptied out (N_k = {float(nk.min()):.3e})"
            )
        gamma = (_fit_membership_logit(z, resp, params.gamma)
                 if n_classes > 1 else params.gamma)
        betas = np.empty_like(params.betas)
        for k in range(n_classes):
            betas[k] = mnl.fit_weighted_mnl(ds, resp[:, k], params.betas[k]).beta
        params = LccmParams(gamma=gamma, betas=betas)
        ll_new = lccm_marginal_loglik(ds, params)
        trace.append(ll_new)
        seconds.append(time.perf_counter() - tick)
        if abs(ll_new - ll) <= tol * max(1.0, abs(ll)):
            ll = ll_new
            converged = True
            break
        ll = ll_new

    return FitResult(
        model="lccm",
        params=params,
        marginal_ll=ll,
        joint_ll=None,
        iterations=iteration,
        converged=converged,
        ll_trace=tuple(trace),
        iter_seconds=tuple(seconds),
    )


# ---------------------------------------------------------------------------
# prediction


def predict(params, ds_holdout):
    """Predictive log-likelihood and per-situation choice probabilities.

    The class mix uses the membership posterior given characteristics only
    (no peeking at held-out choices); per-situation probabilities are the
    posterior-weighted class-conditional logits and sum to 1 over the
    available alternatives.
    """
    packed = ds_holdout.packed
    if isinstance(params, (MnlParams, np.ndarray)):
        beta = params.beta if isinstance(params, MnlParams) else np.asarray(params, float)
        if beta.shape[0] != ds_holdout.attr_count:
            raise ValidationError("coefficient count does not match the dataset attributes")
        log_probs = mnl.all_choice_log_probs(ds_holdout, beta)
        total = float(log_probs[np.arange(log_probs.shape[0]), packed.chosen].sum())
        return total, np.exp(log_probs)

    if isinstance(params, GbmLccmParams):
        if params.betas.shape[1] != ds_holdout.attr_count:
            raise ValidationError("coefficient count does not match the dataset attributes")
        if (params.membership.cont_dim != ds_holdout.cont_count
                or params.membership.bin_dim != ds_holdout.bin_count):
            raise ValidationError("characteristic dimensions do not match the model")
        post = mixture.membership_posterior_matrix(packed.s_cont, packed.s_bin,
                                                   params.membership)
        total = marginal_loglik(ds_holdout, params)
    elif isinstance(params, LccmParams):
        if params.betas.shape[1] != ds_holdout.attr_count:
            raise ValidationError("coefficient count does not match the dataset attributes")
        z = membership_design(ds_holdout)
        if z.shape[1] != params.gamma.shape[1] and params.n_classes > 1:
            raise ValidationError("characteristic dimensions do not match the model")
        post = np.exp(_lccm_membership_logprobs(z, params.gamma))
        total = lccm_marginal_loglik(ds_holdout, params)
    else:
        raise ValidationError(f"cannot predict from parameters of type {type(params).__name__}")

    probs = np.zeros((packed.attrs.shape[0], ds_holdout.alt_count))
    post_situation = post[packed.person_of]
    for k in range(params.n_classes):
        class_probs = np.exp(mnl.all_choice_log_probs(ds_holdout, params.betas[k]))
        probs += post_situation[:, k:k + 1] * class_probs
    return total, probs


# ---------------------------------------------------------------------------
# restart protocol


@dataclass(frozen=True)
class RestartSpec:
    """One entry of a multi-start plan."""

    init: str
    seed: int


def gbm_restart_plan(n_trials=5, incremental=False, base_seed=0):
    """The standard strategy grid for the hybrid model.

    {random, kmeans} membership x {zero, random} choice starts, each run
    ``n_trials`` times, plus ``n_trials`` incremental warm starts when a
    K-1 fit is available.  With n_trials = 5 and the incremental block the
    plan has the customary 25 entries.
    """
    entries = []
    seed = int(base_seed)
    for membership in ("random", "kmeans"):
        for choice in ("zero", "random"):
            for _ in range(n_trials):
                entries.append(RestartSpec(init=f"{membership}+{choice}", seed=seed))
                seed += 1
    if incremental:
        for _ in range(n_trials):
            entries.append(RestartSpec(init="incremental", seed=seed))
            seed += 1
    return tuple(entries)


def lccm_restart_plan(n_trials=5, incremental=False, base_seed=0):
    """Strategy grid for the traditional model: a single zero start, the
    zero/random and random/{zero,random} cells, plus incremental entries."""
    entries = [RestartSpec(init="zero+zero", seed=int(base_seed))]
    seed = int(base_seed) + 1
    for tag in ("zero+random", "random+zero", "random+random"):
        for _ in range(n_trials):
            entries.append(RestartSpec(init=tag, seed=seed))
            seed += 1
    if incremental:
        for _ in range(n_trials):
            entries.append(RestartSpec(init="incremental", seed=seed))
            seed += 1
    return tuple(entries)


def run_restarts(ds, model, n_classes, plan, structure="full", tol=1e-7,
                 max_iter=500, warm_from=None, threads=1):
    """Execute a restart plan and keep the best fit by marginal log-likelihood.

    Ties within 1e-9 go to the entry with the lower seed.  Restarts that
    fail (empty class, optimizer breakdown) are recorded and skipped; if
    every restart fails an :class:`EstimationError` is raised.  The
    variance of the marginal log-likelihood over completed restarts is the
    population variance.
    """
    plan = tuple(plan)
    if not plan:
        raise ValidationError("restart plan is empty")

    def run_one(entry):
        try:
            if model == "gbm-lccm":
                return entry, fit_gbm_lccm(
                    ds, n_classes, structure, init=entry.init, seed=entry.seed,
                    tol=tol, max_iter=max_iter, warm_from=warm_from,
                ), None
            if model == "lccm":
                return entry, fit_lccm(
                    ds, n_classes, init=entry.init, seed=entry.seed,
                    tol=tol, max_iter=max_iter, warm_from=warm_from,
                ), None
            raise ValidationError(f"unknown model tag {model!r}")
        except EstimationError as exc:
            return entry, None, f"{type(exc).__name__}: {exc}"

    if threads > 1 and len(plan) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_one, plan))
    else:
        outcomes = [run_one(entry) for entry in plan]

    completed = [(entry, fit) for entry, fit, err in outcomes if fit is not None]
    failures = [(entry, err) for entry, fit, err in outcomes if fit is None]
    if not completed:
        details = "; ".join(f"seed {e.seed} ({e.init}): {err}" for e, err in failures[:5])
        raise EstimationError(f"all {len(plan)} restarts failed: {details}")

    lls = np.array([fit.marginal_ll for _, fit in completed])
    best_ll = float(lls.max())
    candidates = [(entry, fit) for (entry, fit), ll in zip(completed, lls)
                  if ll >= best_ll - LL_TIE_TOL]
    entry, best = min(candidates, key=lambda pair: pair[0].seed)
    return replace(
        best,
        restart_lls=tuple(float(v) for v in lls),
        ll_variance=float(np.var(lls)),
        n_restarts=len(completed),
    )


# ---------------------------------------------------------------------------
# model specification and the full estimation pipeline


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to estimate one model on a dataset."""

    model: str = "gbm-lccm"
    n_classes: int = 1
    structure: str = "full"
    tol: float = 1e-7
    max_iter: int = 500
    standardize: tuple = ()
    n_trials: int = 5
    incremental: bool = True

    def __post_init__(self):
        if self.model not in ("mnl", "lccm", "gbm-lccm"):
            raise ValidationError(f"unknown model tag {self.model!r}")
        if self.model == "gbm-lccm":
            mixture.validate_structure(self.structure)
        if self.n_classes < 1:
            raise ValidationError("n_classes must be at least 1")
        if self.model == "mnl" and self.n_classes != 1:
            raise ValidationError("the plain logit has exactly one class")
        object.__setattr__(self, "standardize", tuple(int(i) for i in self.standardize))


def _fit_spec(ds, spec, seed, threads):
    """Restart-protocol fit of an already-standardized dataset."""
    if spec.model == "mnl":
        params, ll = mnl.fit_mnl(ds)
        return FitResult(
            model="mnl", params=params, marginal_ll=ll, joint_ll=None,
            iterations=1, converged=True, ll_trace=(ll,),
            restart_lls=(ll,), ll_variance=0.0, n_restarts=1,
        )
    warm = None
    if spec.incremental and spec.n_classes > 1:
        warm = _fit_spec(ds, replace(spec, n_classes=spec.n_classes - 1), seed, threads)
    if spec.model == "gbm-lccm":
        plan = gbm_restart_plan(spec.n_trials, incremental=warm is not None, base_seed=0)
    else:
        plan = lccm_restart_plan(spec.n_trials, incremental=warm is not None, base_seed=0)
    plan = tuple(RestartSpec(init=e.init, seed=_fanout_seed(seed, spec.n_classes, e.seed))
                 for e in plan)
    return run_restarts(
        ds, spec.model, spec.n_classes, plan, structure=spec.structure,
        tol=spec.tol, max_iter=spec.max_iter, warm_from=warm, threads=threads,
    )


def _fanout_seed(base_seed, level, index):
    """Counter-style derivation of per-restart seeds from one base seed."""
    return int((int(base_seed) * 1_000_003 + level * 10_007 + index) % (2**63))


def estimate(ds, spec, seed=0, threads=1):
    """Standardize, run the restart protocol, and return (fit, record).

    ``record`` is the training-set :class:`~lcmix.data.StandardizationRecord`
    (None when no variables were standardized); prediction on new data must
    apply it first.
    """
    from . import data as data_mod

    record = None
    if spec.standardize:
        ds, record = data_mod.standardize(ds, spec.standardize)
    mnl.check_identification(ds)
    fit = _fit_spec(ds, spec, seed, threads)
    return fit, record
