"""Fitted-model files: everything needed to reload, predict, and profile.

One flat key-value text file holds the model tag, all parameters, the
training standardization record, the column labels (used to check schema
compatibility at prediction time), and the fit statistics including the
iteration trace and the restart log-likelihoods.  Floats round-trip
bit-exactly.
"""

from dataclasses import dataclass

import numpy as np

from . import kv, mixture
from .data import StandardizationRecord
from .em import FitResult, GbmLccmParams, LccmParams
from .errors import ValidationError
from .mnl import MnlParams

FORMAT_TAG = "lcmix-model/1"


@dataclass(frozen=True)
class ModelLabels:
    """Column names the model was trained with."""

    attr: tuple = ()
    cont: tuple = ()
    bin: tuple = ()

    @classmethod
    def from_schema(cls, schema):
        return cls(attr=tuple(schema.attr_cols), cont=tuple(schema.cont_cols),
                   bin=tuple(schema.bin_cols))


@dataclass(frozen=True)
class LoadedModel:
    model: str
    params: object
    alt_count: int
    labels: ModelLabels
    standardization: StandardizationRecord
    fit: FitResult

    @property
    def n_classes(self):
        return 1 if self.model == "mnl" else self.params.n_classes


def save_model(path, fit, alt_count, labels=None, standardization=None):
    """Write a fitted model (any of the three families) to ``path``."""
    labels = labels or ModelLabels()
    items = [
        ("format", FORMAT_TAG),
        ("model", fit.model),
        ("alt_count", int(alt_count)),
        ("attr_labels", ",".join(labels.attr)),
        ("cont_labels", ",".join(labels.cont)),
        ("bin_labels", ",".join(labels.bin)),
    ]
    params = fit.params
    if fit.model == "mnl":
        items.append(("beta", params.beta))
    elif fit.model == "lccm":
        items.append(("classes", params.n_classes))
        items.append(("gamma_cols", params.gamma.shape[1] if params.gamma.size else 0))
        for k in range(params.gamma.shape[0]):
            items.append((f"gamma.{k}", params.gamma[k]))
        for k in range(params.n_classes):
            items.append((f"beta.{k}", params.betas[k]))
    elif fit.model == "gbm-lccm":
        items.extend(mixture.membership_to_kv(params.membership, prefix="membership."))
        for k in range(params.n_classes):
            items.append((f"beta.{k}", params.betas[k]))
    else:
        raise ValidationError(f"unknown model tag {fit.model!r}")
    if standardization is not None:
        items.append(("standardize.indices", list(standardization.indices)))
        items.append(("standardize.means", list(standardization.means)))
        items.append(("standardize.stds", list(standardization.stds)))
    items.extend([
        ("marginal_ll", fit.marginal_ll),
        ("iterations", fit.iterations),
        ("converged", fit.converged),
        ("ll_trace", list(fit.ll_trace)),
        ("restart_lls", list(fit.restart_lls)),
        ("n_restarts", fit.n_restarts),
    ])
    if fit.joint_ll is not None:
        items.append(("joint_ll", fit.joint_ll))
    if fit.ll_variance is not None:
        items.append(("ll_variance", fit.ll_variance))
    kv.write(path, items)


def load_model(path):
    """Read a model file back; inverse of :func:`save_model`."""
    mapping = kv.read(path)
    if mapping.get("format") != FORMAT_TAG:
        raise ValidationError(f"{path}: not a model file (format tag missing or unknown)")
    model = mapping["model"]
    if model == "mnl":
        params = MnlParams(kv.parse_floats(mapping["beta"]))
    elif model == "lccm":
        k = int(mapping["classes"])
        cols = int(mapping["gamma_cols"])
        gamma = np.array([kv.parse_floats(mapping[f"gamma.{i}"]) for i in range(k - 1)])
        gamma = gamma.reshape(k - 1, cols)
        betas = np.array([kv.parse_floats(mapping[f"beta.{i}"]) for i in range(k)])
        params = LccmParams(gamma=gamma, betas=betas)
    elif model == "gbm-lccm":
        membership = mixture.membership_from_kv(mapping, prefix="membership.")
        betas = np.array(
            [kv.parse_floats(mapping[f"beta.{i}"]) for i in range(membership.n_classes)]
        )
        params = GbmLccmParams(membership=membership, betas=betas)
    else:
        raise ValidationError(f"{path}: unknown model tag {model!r}")

    standardization = None
    if "standardize.indices" in mapping:
        standardization = StandardizationRecord(
            indices=tuple(kv.parse_ints(mapping["standardize.indices"])),
            means=tuple(kv.parse_floats(mapping["standardize.means"])),
            stds=tuple(kv.parse_floats(mapping["standardize.stds"])),
        )
    labels = ModelLabels(
        attr=kv.parse_strings(mapping.get("attr_labels", "")),
        cont=kv.parse_strings(mapping.get("cont_labels", "")),
        bin=kv.parse_strings(mapping.get("bin_labels", "")),
    )
    fit = FitResult(
        model=model,
        params=params,
        marginal_ll=float(mapping["marginal_ll"]),
        joint_ll=float(mapping["joint_ll"]) if "joint_ll" in mapping else None,
        iterations=int(mapping["iterations"]),
        converged=kv.parse_bool(mapping["converged"]),
        ll_trace=tuple(kv.parse_floats(mapping.get("ll_trace", ""))),
        restart_lls=tuple(kv.parse_floats(mapping.get("restart_lls", ""))),
        ll_variance=float(mapping["ll_variance"]) if "ll_variance" in mapping else None,
        n_restarts=int(mapping.get("n_restarts", 1)),
    )
    return LoadedModel(
        model=model, params=params, alt_count=int(mapping["alt_count"]),
        labels=labels, standardization=standardization, fit=fit,
    )
