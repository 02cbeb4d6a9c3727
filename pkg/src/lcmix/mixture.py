"""Gaussian-Bernoulli mixture membership model.

Log-densities for the continuous (Gaussian) and binary (Bernoulli) blocks
of the per-person characteristics, the four covariance structures with
their structure-constrained M-step updates, k-means++ initialization, and
the Bayes posterior over classes given characteristics only.

The continuous and binary blocks are treated as independent; degenerate
dimensions (no continuous or no binary characteristics) simply drop the
corresponding term.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import kv
from .errors import EmptyClassError, EstimationError, ValidationError

COVARIANCE_STRUCTURES = ("full", "tied", "diagonal", "spherical")

VARIANCE_RIDGE = 1e-6
RIDGE_MAX = 1e-2
BERNOULLI_EPS = 1e-6
PI_FLOOR = 1e-10


def validate_structure(structure):
    if structure not in COVARIANCE_STRUCTURES:
        raise ValidationError(
            f"unknown covariance structure {structure!r}; "
            f"expected one of {', '.join(COVARIANCE_STRUCTURES)}"
        )
    return structure


@dataclass(frozen=True)
class GbmMembershipParams:
    """Mixing coefficients plus Gaussian and Bernoulli component parameters.

    ``sigma_c`` storage depends on the structure tag:
    full (K, D_c, D_c), tied (D_c, D_c), diagonal (K, D_c), spherical (K,).
    """

    pi: np.ndarray
    mu_c: np.ndarray
    sigma_c: np.ndarray
    mu_d: np.ndarray
    structure: str

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float).reshape(-1))
        object.__setattr__(self, "mu_c", np.atleast_2d(np.asarray(self.mu_c, dtype=float)))
        object.__setattr__(self, "sigma_c", np.asarray(self.sigma_c, dtype=float))
        object.__setattr__(self, "mu_d", np.atleast_2d(np.asarray(self.mu_d, dtype=float)))
        validate_structure(self.structure)

    @property
    def n_classes(self):
        return self.pi.shape[0]

    @property
    def cont_dim(self):
        return self.mu_c.shape[1]

    @property
    def bin_dim(self):
        return self.mu_d.shape[1]

    def covariance(self, k):
        """Realize class k's covariance as a dense D_c x D_c matrix."""
        d = self.cont_dim
        if self.structure == "full":
            return np.array(self.sigma_c[k])
        if self.structure == "tied":
            return np.array(self.sigma_c)
        if self.structure == "diagonal":
            return np.diag(self.sigma_c[k])
        return float(self.sigma_c[k]) * np.eye(d)

    def covariances(self):
        return np.array([self.covariance(k) for k in range(self.n_classes)])

    def validate(self):
        k, d_c, d_d = self.n_classes, self.cont_dim, self.bin_dim
        if k < 1:
            raise ValidationError("need at least one class")
        if abs(float(self.pi.sum()) - 1.0) > 1e-12:
            raise ValidationError("mixing coefficients must sum to 1")
        if np.any(self.pi < PI_FLOOR):
            raise ValidationError(f"mixing coefficients must be at least {PI_FLOOR}")
        if self.mu_c.shape != (k, d_c):
            raise ValidationError("Gaussian mean matrix has the wrong shape")
        if self.mu_d.shape != (k, d_d):
            raise ValidationError("Bernoulli mean matrix has the wrong shape")
        if d_d and not np.all((self.mu_d >= BERNOULLI_EPS) & (self.mu_d <= 1.0 - BERNOULLI_EPS)):
            raise ValidationError("Bernoulli means must lie inside [1e-6, 1 - 1e-6]")
        expected = {
            "full": (k, d_c, d_c), "tied": (d_c, d_c),
            "diagonal": (k, d_c), "spherical": (k,),
        }[self.structure]
        if self.sigma_c.shape != expected:
            raise ValidationError(
                f"covariance storage shape {self.sigma_c.shape} does not match "
                f"structure {self.structure!r}"
            )
        if d_c:
            for kk in range(k):
                cov = self.covariance(kk)
                if not np.allclose(cov, cov.T):
                    raise ValidationError("covariance matrix is not symmetric")
                if np.min(np.linalg.eigvalsh(cov)) < -1e-10:
                    raise ValidationError("covariance matrix has a negative eigenvalue")
        return self


def floor_mixing(pi):
    """Clip mixing coefficients at the floor and renormalize."""
    pi = np.maximum(np.asarray(pi, dtype=float), PI_FLOOR)
    return pi / pi.sum()


def clamp_bernoulli(mu_d):
    return np.clip(np.asarray(mu_d, dtype=float), BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)


def _cholesky_with_ridge(sigma):
    """Lower Cholesky factor, escalating the diagonal ridge on failure."""
    ridge = 0.0
    d = sigma.shape[0]
    while True:
        try:
            return linalg.cholesky(sigma + ridge * np.eye(d), lower=True)
        except linalg.LinAlgError:
            ridge = VARIANCE_RIDGE if ridge == 0.0 else ridge * 10.0
            if ridge > RIDGE_MAX:
                raise EstimationError(
                    "covariance factorization failed even after ridge escalation"
                ) from None


def gaussian_logpdf(s_c, mu, sigma):
    """Multivariate normal log-density via triangular factorization."""
    s_c = np.asarray(s_c, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = s_c.shape[0]
    if d == 0:
        return 0.0
    chol = _cholesky_with_ridge(sigma)
    z = linalg.solve_triangular(chol, s_c - mu, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (d * np.log(2.0 * np.pi) + log_det + z @ z))


def gaussian_logpdf_matrix(s_matrix, params):
    """(N, K) Gaussian log-densities of the rows of ``s_matrix`` under each class."""
    n = s_matrix.shape[0]
    k = params.n_classes
    if params.cont_dim == 0:
        return np.zeros((n, k))
    out = np.empty((n, k))
    d = params.cont_dim
    for kk in range(k):
        chol = _cholesky_with_ridge(params.covariance(kk))
        z = linalg.solve_triangular(chol, (s_matrix - params.mu_c[kk]).T, lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, kk] = -0.5 * (d * np.log(2.0 * np.pi) + log_det + np.sum(z * z, axis=0))
    return out


def bernoulli_logpmf(s_d, mu_d):
    """Log-probability of a binary vector under independent Bernoulli means."""
    s_d = np.asarray(s_d, dtype=float).reshape(-1)
    mu_d = np.asarray(mu_d, dtype=float).reshape(-1)
    if s_d.size == 0:
        return 0.0
    if not np.all((s_d == 0.0) | (s_d == 1.0)):
        raise ValidationError("binary characteristics must be 0 or 1")
    return float(s_d @ np.log(mu_d) + (1.0 - s_d) @ np.log1p(-mu_d))


def bernoulli_logpmf_matrix(s_matrix, params):
    """(N, K) Bernoulli log-probabilities of the rows of ``s_matrix``."""
    n = s_matrix.shape[0]
    if params.bin_dim == 0:
        return np.zeros((n, params.n_classes))
    return s_matrix @ np.log(params.mu_d).T + (1.0 - s_matrix) @ np.log1p(-params.mu_d).T


def membership_log_joint(s_c, s_d, params):
    """Per-class log of (mixing coefficient x Gaussian density x Bernoulli mass)."""
    out = np.log(params.pi).copy()
    if params.cont_dim:
        for k in range(params.n_classes):
            out[k] += gaussian_logpdf(s_c, params.mu_c[k], params.covariance(k))
    if params.bin_dim:
        for k in range(params.n_classes):
            out[k] += bernoulli_logpmf(s_d, params.mu_d[k])
    return out


def membership_log_joint_matrix(s_cont, s_bin, params):
    """(N, K) joint log-densities for all persons at once."""
    return (
        np.log(params.pi)[None, :]
        + gaussian_logpdf_matrix(s_cont, params)
        + bernoulli_logpmf_matrix(s_bin, params)
    )


def membership_posterior(s_c, s_d, params):
    """Bayes posterior over classes given the characteristics only.

    Note this conditions on S alone; the EM responsibilities additionally
    condition on observed choices.
    """
    log_joint = membership_log_joint(s_c, s_d, params)
    log_joint -= log_joint.max()
    post = np.exp(log_joint)
    return post / post.sum()


def membership_posterior_matrix(s_cont, s_bin, params):
    log_joint = membership_log_joint_matrix(s_cont, s_bin, params)
    log_joint -= log_joint.max(axis=1, keepdims=True)
    post = np.exp(log_joint)
    return post / post.sum(axis=1, keepdims=True)


def covariance_mstep(s_matrix, resp, mu_c, structure):
    """Structure-constrained covariance update from weighted second moments.

    full      per-class weighted scatter / N_k
    tied      sum_k N_k * Sigma_k(full) / N   (pooled)
    diagonal  diagonal of the full update
    spherical mean of that diagonal per class

    Each variance receives a 1e-6 ridge.  A class whose responsibility
    mass N_k has vanished raises :class:`EmptyClassError`.
    """
    validate_structure(structure)
    s_matrix = np.asarray(s_matrix, dtype=float)
    resp = np.asarray(resp, dtype=float)
    mu_c = np.atleast_2d(np.asarray(mu_c, dtype=float))
    n, d = s_matrix.shape
    k = resp.shape[1]
    nk = resp.sum(axis=0)
    if np.any(nk <= 1e-8):
        raise EmptyClassError(
            f"class {int(np.argmin(nk))} has vanished (N_k = {float(nk.min()):.3e})"
        )
    if d == 0:
        empty = {
            "full": np.zeros((k, 0, 0)), "tied": np.zeros((0, 0)),
            "diagonal": np.zeros((k, 0)), "spherical": np.zeros(k),
        }
        return empty[structure]

    full = np.empty((k, d, d))
    for kk in range(k):
        diff = s_matrix - mu_c[kk]
        full[kk] = (resp[:, kk] * diff.T) @ diff / nk[kk]

    if structure == "full":
        for kk in range(k):
            full[kk].flat[:: d + 1] += VARIANCE_RIDGE
        return full
    if structure == "tied":
        pooled = np.tensordot(nk, full, axes=1) / nk.sum()
        pooled.flat[:: d + 1] += VARIANCE_RIDGE
        return pooled
    diagonals = full[:, np.arange(d), np.arange(d)]
    if structure == "diagonal":
        return diagonals + VARIANCE_RIDGE
    return diagonals.mean(axis=1) + VARIANCE_RIDGE


def kmeans_init(s_matrix, n_clusters, seed):
    """Hard assignments from k-means++ seeding plus Lloyd iterations.

    Binary characteristics participate as plain 0/1 coordinates.  Returns
    one-hot responsibilities of shape (N, K); deterministic given the seed.
    """
    s_matrix = np.asarray(s_matrix, dtype=float)
    n = s_matrix.shape[0]
    k = int(n_clusters)
    if k < 1:
        raise ValidationError("need at least one cluster")
    if k > n:
        raise ValidationError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centers = np.empty((k, s_matrix.shape[1]))
    centers[0] = s_matrix[rng.integers(n)]
    closest = np.sum((s_matrix - centers[0]) ** 2, axis=1)
    for kk in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            centers[kk] = s_matrix[rng.integers(n)]
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r))
            centers[kk] = s_matrix[min(idx, n - 1)]
        closest = np.minimum(closest, np.sum((s_matrix - centers[kk]) ** 2, axis=1))

    assignment = np.zeros(n, dtype=np.intp)
    for _ in range(100):
        dist = ((s_matrix[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assignment = dist.argmin(axis=1)
        for kk in range(k):
            mask = new_assignment == kk
            if mask.any():
                centers[kk] = s_matrix[mask].mean(axis=0)
            else:
                # Re-seed an emptied cluster on the farthest point.
                far = int(dist.min(axis=1).argmax())
                centers[kk] = s_matrix[far]
                new_assignment[far] = kk
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment

    resp = np.zeros((n, k))
    resp[np.arange(n), assignment] = 1.0
    return resp


# ---------------------------------------------------------------------------
# key-value serialization of membership parameters


def membership_to_kv(params, prefix=""):
    """Flatten membership parameters into ordered (key, value) pairs."""
    items = [
        (f"{prefix}structure", params.structure),
        (f"{prefix}classes", params.n_classes),
        (f"{prefix}cont_dim", params.cont_dim),
        (f"{prefix}bin_dim", params.bin_dim),
        (f"{prefix}pi", params.pi),
    ]
    for k in range(params.n_classes):
        items.append((f"{prefix}mu_c.{k}", params.mu_c[k]))
    if params.structure == "full":
        for k in range(params.n_classes):
            for i in range(params.cont_dim):
                items.append((f"{prefix}sigma_c.{k}.{i}", params.sigma_c[k, i]))
    elif params.structure == "tied":
        for i in range(params.cont_dim):
            items.append((f"{prefix}sigma_c.{i}", params.sigma_c[i]))
    elif params.structure == "diagonal":
        for k in range(params.n_classes):
            items.append((f"{prefix}sigma_c.{k}", params.sigma_c[k]))
    else:
        items.append((f"{prefix}sigma_c", params.sigma_c))
    for k in range(params.n_classes):
        items.append((f"{prefix}mu_d.{k}", params.mu_d[k]))
    return items


def membership_from_kv(mapping, prefix=""):
    """Inverse of :func:`membership_to_kv`; round-trip safe."""
    structure = validate_structure(mapping[f"{prefix}structure"])
    k = int(mapping[f"{prefix}classes"])
    d_c = int(mapping[f"{prefix}cont_dim"])
    d_d = int(mapping[f"{prefix}bin_dim"])
    pi = kv.parse_floats(mapping[f"{prefix}pi"])
    mu_c = np.array([kv.parse_floats(mapping[f"{prefix}mu_c.{kk}"]) for kk in range(k)])
    mu_c = mu_c.reshape(k, d_c)
    if structure == "full":
        sigma = np.array(
            [[kv.parse_floats(mapping[f"{prefix}sigma_c.{kk}.{i}"]) for i in range(d_c)]
             for kk in range(k)]
        ).reshape(k, d_c, d_c)
    elif structure == "tied":
        sigma = np.array(
            [kv.parse_floats(mapping[f"{prefix}sigma_c.{i}"]) for i in range(d_c)]
        ).reshape(d_c, d_c)
    elif structure == "diagonal":
        sigma = np.array(
            [kv.parse_floats(mapping[f"{prefix}sigma_c.{kk}"]) for kk in range(k)]
        ).reshape(k, d_c)
    else:
        sigma = kv.parse_floats(mapping[f"{prefix}sigma_c"])
    mu_d = np.array([kv.parse_floats(mapping[f"{prefix}mu_d.{kk}"]) for kk in range(k)])
    mu_d = mu_d.reshape(k, d_d)
    return GbmMembershipParams(pi=pi, mu_c=mu_c, sigma_c=sigma, mu_d=mu_d, structure=structure)
