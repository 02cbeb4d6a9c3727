"""Model selection and interpretation: AIC/BIC, cross-validation, VOT, profiles, SEs.

The comparison metric across model families is the marginal (choice)
log-likelihood; the observation count entering BIC is the total number of
choice situations, not persons.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import data as data_mod
from . import em, mixture, mnl
from .errors import EstimationError, ValidationError


@dataclass(frozen=True)
class ModelSummary:
    """One comparison-table row."""

    model: str
    n_classes: int
    structure: str
    param_count: int
    marginal_ll: float
    aic: float
    bic: float
    joint_ll: float = None
    pred_ll: float = None
    ll_variance: float = None
    notes: str = ""


def count_params(model, n_classes, structure=None, n_attrs=0, cont_dim=0, bin_dim=0,
                 membership_covariates=0):
    """Number of free parameters of a fitted model configuration.

    gbm-lccm: K*P + (K-1) + K*D_c + cov(structure) + K*D_d, where the
    covariance block contributes K*D_c*(D_c+1)/2 (full), D_c*(D_c+1)/2
    (tied), K*D_c (diagonal) or K (spherical); with no continuous
    characteristics the covariance block is empty.
    lccm: K*P + (K-1)*membership_covariates (count includes the constant).
    mnl: P.
    """
    k, p = int(n_classes), int(n_attrs)
    if model == "mnl":
        return p
    if model == "lccm":
        return k * p + (k - 1) * int(membership_covariates)
    if model == "gbm-lccm":
        d_c, d_d = int(cont_dim), int(bin_dim)
        mixture.validate_structure(structure)
        if d_c == 0:
            cov = 0
        elif structure == "full":
            cov = k * d_c * (d_c + 1) // 2
        elif structure == "tied":
            cov = d_c * (d_c + 1) // 2
        elif structure == "diagonal":
            cov = k * d_c
        else:
            cov = k
        return k * p + (k - 1) + k * d_c + cov + k * d_d
    raise ValidationError(f"unknown model tag {model!r}")


def information_criteria(marginal_ll, param_count, n_obs):
    """(AIC, BIC) from the marginal log-likelihood.

    ``n_obs`` is the total number of choice situations.
    """
    if n_obs < 1:
        raise ValidationError("n_obs must be at least 1")
    aic = -2.0 * marginal_ll + 2.0 * param_count
    bic = -2.0 * marginal_ll + param_count * math.log(n_obs)
    return aic, bic


def value_of_time(beta_time, beta_cost, cost_unit_in_currency=1.0, currency_per_dollar=1.0):
    """Willingness to pay for travel time, in dollars per hour.

    ``beta_time`` is per hour, ``beta_cost`` per cost unit;
    ``cost_unit_in_currency`` converts the cost unit into local currency
    and ``currency_per_dollar`` is the exchange rate.
    """
    if beta_cost == 0:
        raise ValidationError("cost coefficient must be nonzero")
    return (beta_time / beta_cost) * cost_unit_in_currency / currency_per_dollar


def summarize_fit(fit, ds, membership_covariates=None):
    """Build the comparison-table row for a fit on its training data."""
    if membership_covariates is None:
        membership_covariates = 1 + ds.cont_count + ds.bin_count
    structure = fit.params.membership.structure if fit.model == "gbm-lccm" else None
    n_classes = fit.params.n_classes if fit.model != "mnl" else 1
    p = count_params(
        fit.model, n_classes, structure=structure, n_attrs=ds.attr_count,
        cont_dim=ds.cont_count, bin_dim=ds.bin_count,
        membership_covariates=membership_covariates,
    )
    aic, bic = information_criteria(fit.marginal_ll, p, ds.n_situations)
    notes = "" if fit.converged else "did not converge"
    return ModelSummary(
        model=fit.model, n_classes=n_classes, structure=structure or "",
        param_count=p, marginal_ll=fit.marginal_ll, aic=aic, bic=bic,
        joint_ll=fit.joint_ll, ll_variance=fit.ll_variance, notes=notes,
    )


def render_summary_table(summaries):
    """Aligned text table in the usual comparison-row layout."""
    header = ["model", "K", "structure", "params", "joint LL", "LL",
              "variance", "AIC", "BIC", "pred LL", "notes"]
    rows = []
    for s in summaries:
        rows.append([
            s.model, str(s.n_classes), s.structure or "-", str(s.param_count),
            f"{s.joint_ll:.2f}" if s.joint_ll is not None else "-",
            f"{s.marginal_ll:.2f}",
            f"{s.ll_variance:.4g}" if s.ll_variance is not None else "-",
            f"{s.aic:.2f}", f"{s.bic:.2f}",
            f"{s.pred_ll:.2f}" if s.pred_ll is not None else "-",
            s.notes or "-",
        ])
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def summary_to_kv(summary, prefix="summary."):
    out = {
        f"{prefix}model": summary.model,
        f"{prefix}classes": summary.n_classes,
        f"{prefix}structure": summary.structure or "",
        f"{prefix}params": summary.param_count,
        f"{prefix}marginal_ll": summary.marginal_ll,
        f"{prefix}aic": summary.aic,
        f"{prefix}bic": summary.bic,
    }
    if summary.joint_ll is not None:
        out[f"{prefix}joint_ll"] = summary.joint_ll
    if summary.ll_variance is not None:
        out[f"{prefix}ll_variance"] = summary.ll_variance
    if summary.pred_ll is not None:
        out[f"{prefix}pred_ll"] = summary.pred_ll
    if summary.notes:
        out[f"{prefix}notes"] = summary.notes
    return out


# ---------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class CrossValidationResult:
    """Per-fold predictive log-likelihoods plus their mean over completed folds."""

    fold_pred_lls: tuple
    mean_pred_ll: float
    fold_sizes: tuple
    failures: tuple

    @property
    def n_failed(self):
        return sum(1 for f in self.failures if f)


def cross_validate(ds, spec, k_folds, seed, threads=1):
    """k-fold person-level cross-validation of one model specification.

    Each fold is held out once; the model is estimated on the remaining
    folds with the spec's full restart plan, standardization is recomputed
    on each training split and applied to the held-out persons, and the
    held-out predictive log-likelihood is recorded.  Fold failures are
    recorded rather than raised unless every fold fails.
    """
    folds = data_mod.split_folds(ds, k_folds, seed)

    def run_fold(i):
        test_idx = folds[i]
        train_idx = np.sort(np.concatenate([folds[j] for j in range(len(folds)) if j != i]))
        train = data_mod.subset_persons(ds, train_idx)
        test = data_mod.subset_persons(ds, test_idx)
        try:
            fit, record = em.estimate(train, spec, seed=_fold_seed(seed, i), threads=1)
            if record is not None:
                test = data_mod.apply_standardization(test, record)
            pred_ll, _ = em.predict(fit.params, test)
            return float(pred_ll), None
        except EstimationError as exc:
            return None, f"fold {i}: {type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_fold, range(len(folds))))
    else:
        outcomes = [run_fold(i) for i in range(len(folds))]

    lls = tuple(ll for ll, _ in outcomes)
    failures = tuple(err for _, err in outcomes)
    completed = [ll for ll in lls if ll is not None]
    if not completed:
        raise EstimationError("every cross-validation fold failed: " + "; ".join(
            err for err in failures if err))
    return CrossValidationResult(
        fold_pred_lls=lls,
        mean_pred_ll=float(np.mean(completed)),
        fold_sizes=tuple(len(f) for f in folds),
        failures=failures,
    )


def _fold_seed(base_seed, fold):
    return int((int(base_seed) * 1_000_033 + 7_919 * (fold + 1)) % (2**63))


# ---------------------------------------------------------------------------
# class profiling


@dataclass(frozen=True)
class ProfileRow:
    variable: str
    category: str  # None for continuous variables
    values: tuple


@dataclass(frozen=True)
class ClassProfile:
    class_shares: tuple
    rows: tuple


def class_profile(params, standardization=None, cont_labels=None, bin_labels=None):
    """Describe the latent classes of a mixture membership model.

    Continuous rows hold de-standardized class means; each binary variable
    renders as a yes/no pair of category shares summing to 1.
    """
    mem = params.membership
    cont_labels = tuple(cont_labels) if cont_labels is not None else tuple(
        f"cont_{i}" for i in range(mem.cont_dim))
    bin_labels = tuple(bin_labels) if bin_labels is not None else tuple(
        f"bin_{i}" for i in range(mem.bin_dim))
    if len(cont_labels) != mem.cont_dim:
        raise ValidationError(
            f"{len(cont_labels)} continuous labels for {mem.cont_dim} variables")
    if len(bin_labels) != mem.bin_dim:
        raise ValidationError(f"{len(bin_labels)} binary labels for {mem.bin_dim} variables")
    rows = []
    for i, label in enumerate(cont_labels):
        values = []
        for k in range(mem.n_classes):
            v = float(mem.mu_c[k, i])
            if standardization is not None:
                v = standardization.destandardize_mean(i, v)
            values.append(v)
        rows.append(ProfileRow(variable=label, category=None, values=tuple(values)))
    for i, label in enumerate(bin_labels):
        yes = tuple(float(mem.mu_d[k, i]) for k in range(mem.n_classes))
        rows.append(ProfileRow(variable=label, category="yes", values=yes))
        rows.append(ProfileRow(variable=label, category="no",
                               values=tuple(1.0 - v for v in yes)))
    return ClassProfile(class_shares=tuple(float(v) for v in mem.pi), rows=tuple(rows))


def render_class_profile(profile):
    k = len(profile.class_shares)
    header = ["variable", "category"] + [f"class {i + 1}" for i in range(k)]
    rows = [["share", "-"] + [f"{v:.4f}" for v in profile.class_shares]]
    for row in profile.rows:
        rows.append([row.variable, row.category or "mean"]
                    + [f"{v:.4f}" for v in row.values])
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# standard errors


@dataclass(frozen=True)
class StandardErrorTable:
    labels: tuple
    estimates: np.ndarray
    se: np.ndarray          # nan where unavailable
    p_values: np.ndarray    # nan where unavailable
    available: np.ndarray


def _pack_parameters(params, model, attr_labels=None):
    """Flatten a parameter object into (theta, labels, unpack, bound_slack).

    ``bound_slack[i]`` caps the finite-difference step so probability-type
    parameters stay inside their open domain.
    """
    def attr_label(i):
        return attr_labels[i] if attr_labels else f"x{i}"

    if model == "mnl":
        beta = params.beta if isinstance(params, mnl.MnlParams) else np.asarray(params)
        labels = [f"beta.{attr_label(i)}" for i in range(beta.size)]
        slack = np.full(beta.size, np.inf)

        def unpack(theta):
            return mnl.MnlParams(theta)

        return beta.copy(), labels, unpack, slack

    if model == "lccm":
        gamma, betas = params.gamma, params.betas
        theta = np.concatenate([gamma.reshape(-1), betas.reshape(-1)])
        labels = [f"gamma.{k}.{i}" for k in range(gamma.shape[0])
                  for i in range(gamma.shape[1])]
        labels += [f"beta.{k}.{attr_label(i)}" for k in range(betas.shape[0])
                   for i in range(betas.shape[1])]
        slack = np.full(theta.size, np.inf)
        g_size = gamma.size

        def unpack(theta):
            return em.LccmParams(
                gamma=theta[:g_size].reshape(gamma.shape),
                betas=theta[g_size:].reshape(betas.shape),
            )

        return theta, labels, unpack, slack

    if model == "gbm-lccm":
        mem = params.membership
        k, d_c, d_d = mem.n_classes, mem.cont_dim, mem.bin_dim
        pieces, labels, slack = [], [], []
        pieces.append(mem.pi[: k - 1])
        labels += [f"pi.{i}" for i in range(k - 1)]
        slack += [min(p, 1.0 - p) / 4.0 for p in mem.pi[: k - 1]]
        pieces.append(mem.mu_c.reshape(-1))
        labels += [f"mu_c.{kk}.{i}" for kk in range(k) for i in range(d_c)]
        slack += [np.inf] * (k * d_c)
        tril = np.tril_indices(d_c)
        if d_c:
            if mem.structure == "full":
                for kk in range(k):
                    pieces.append(mem.sigma_c[kk][tril])
                    labels += [f"sigma_c.{kk}.{i}.{j}" for i, j in zip(*tril)]
                    slack += [np.inf] * tril[0].size
            elif mem.structure == "tied":
                pieces.append(mem.sigma_c[tril])
                labels += [f"sigma_c.{i}.{j}" for i, j in zip(*tril)]
                slack += [np.inf] * tril[0].size
            elif mem.structure == "diagonal":
                pieces.append(mem.sigma_c.reshape(-1))
                labels += [f"sigma_c.{kk}.{i}" for kk in range(k) for i in range(d_c)]
                slack += [np.inf] * (k * d_c)
            else:
                pieces.append(mem.sigma_c)
                labels += [f"sigma_c.{kk}" for kk in range(k)]
                slack += [np.inf] * k
        pieces.append(mem.mu_d.reshape(-1))
        labels += [f"mu_d.{kk}.{i}" for kk in range(k) for i in range(d_d)]
        slack += [min(v, 1.0 - v) / 4.0 for v in mem.mu_d.reshape(-1)]
        pieces.append(params.betas.reshape(-1))
        labels += [f"beta.{kk}.{attr_label(i)}" for kk in range(k)
                   for i in range(params.betas.shape[1])]
        slack += [np.inf] * params.betas.size
        theta = np.concatenate([np.asarray(p, float).reshape(-1) for p in pieces])
        sizes = {"pi": k - 1, "mu_c": k * d_c, "mu_d": k * d_d, "beta": params.betas.size}

        def unpack(th):
            pos = 0
            pi_free = th[pos:pos + sizes["pi"]]; pos += sizes["pi"]
            pi = np.append(pi_free, 1.0 - pi_free.sum())
            mu_c = th[pos:pos + sizes["mu_c"]].reshape(k, d_c); pos += sizes["mu_c"]
            if d_c:
                if mem.structure == "full":
                    sigma = np.empty((k, d_c, d_c))
                    m = tril[0].size
                    for kk in range(k):
                        lower = th[pos:pos + m]; pos += m
                        sigma[kk][tril] = lower
                        sigma[kk].T[tril] = lower
                elif mem.structure == "tied":
                    m = tril[0].size
                    lower = th[pos:pos + m]; pos += m
                    sigma = np.empty((d_c, d_c))
                    sigma[tril] = lower
                    sigma.T[tril] = lower
                elif mem.structure == "diagonal":
                    sigma = th[pos:pos + k * d_c].reshape(k, d_c); pos += k * d_c
                else:
                    sigma = th[pos:pos + k]; pos += k
            else:
                sigma = mem.sigma_c
            mu_d = th[pos:pos + sizes["mu_d"]].reshape(k, d_d); pos += sizes["mu_d"]
            betas = th[pos:pos + sizes["beta"]].reshape(params.betas.shape)
            membership = mixture.GbmMembershipParams(
                pi=pi, mu_c=mu_c, sigma_c=sigma, mu_d=mu_d, structure=mem.structure)
            return em.GbmLccmParams(membership=membership, betas=betas)

        return theta, labels, unpack, np.array(slack)

    raise ValidationError(f"unknown model tag {model!r}")


def _marginal_ll_fn(ds, model):
    if model == "mnl":
        return lambda params: float(mnl.person_choice_loglik(ds, params.beta).sum())
    if model == "lccm":
        return lambda params: em.lccm_marginal_loglik(ds, params)
    return lambda params: em.marginal_loglik(ds, params)


def standard_errors(ds, params, model, step_scale=1e-4, attr_labels=None):
    """Finite-difference standard errors and normal p-values at a converged fit.

    The Hessian of the marginal log-likelihood is built from central second
    differences; SEs are the square roots of the diagonal of its negative
    inverse.  Directions in which the Hessian is singular (within a
    relative eigenvalue tolerance) have their parameters flagged
    unavailable instead of reporting garbage.
    """
    theta, labels, unpack, slack = _pack_parameters(params, model, attr_labels)
    ll = _marginal_ll_fn(ds, model)
    n = theta.size
    steps = np.minimum(step_scale * np.maximum(1.0, np.abs(theta)), slack)

    def f(th):
        value = ll(unpack(th))
        if not np.isfinite(value):
            raise EstimationError("non-finite likelihood while differencing the Hessian")
        return value

    f0 = f(theta)
    hessian = np.empty((n, n))
    f_plus = np.empty(n)
    f_minus = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = steps[i]
        f_plus[i] = f(theta + e)
        f_minus[i] = f(theta - e)
        hessian[i, i] = (f_plus[i] - 2.0 * f0 + f_minus[i]) / steps[i] ** 2
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n); ei[i] = steps[i]
            ej = np.zeros(n); ej[j] = steps[j]
            fpp = f(theta + ei + ej)
            fpm = f(theta + ei - ej)
            fmp = f(theta - ei + ej)
            fmm = f(theta - ei - ej)
            hessian[i, j] = hessian[j, i] = (fpp - fpm - fmp + fmm) / (
                4.0 * steps[i] * steps[j])

    info = -hessian  # observed information
    eigvals, eigvecs = np.linalg.eigh(info)
    max_eig = float(np.max(np.abs(eigvals))) if n else 0.0
    tiny = eigvals <= 1e-10 * max(max_eig, 1.0)
    available = np.ones(n, dtype=bool)
    if np.any(tiny):
        # Parameters with weight in a (near-)null direction are unidentified.
        null_weight = np.abs(eigvecs[:, tiny]).max(axis=1)
        available &= null_weight <= 1e-6
    se = np.full(n, np.nan)
    if np.any(~tiny):
        inv_eig = np.zeros(n)
        inv_eig[~tiny] = 1.0 / eigvals[~tiny]
        cov = (eigvecs * inv_eig) @ eigvecs.T
        variances = np.diag(cov).copy()
        good = available & (variances > 0.0) & np.isfinite(variances)
        se[good] = np.sqrt(variances[good])
        available = good
    else:
        available[:] = False
    p_values = np.full(n, np.nan)
    nonzero = available & (se > 0.0)
    z = np.abs(theta[nonzero] / se[nonzero])
    p_values[nonzero] = 2.0 * stats.norm.sf(z)
    return StandardErrorTable(
        labels=tuple(labels), estimates=theta, se=se,
        p_values=p_values, available=available,
    )


def render_standard_errors(table):
    header = ["parameter", "estimate", "std err", "p-value"]
    rows = []
    for i, label in enumerate(table.labels):
        if table.available[i]:
            rows.append([label, f"{table.estimates[i]:.6g}",
                         f"{table.se[i]:.6g}", f"{table.p_values[i]:.4f}"])
        else:
            rows.append([label, f"{table.estimates[i]:.6g}", "n/a", "n/a"])
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"
