"""Measurement-error imputation.

Clean units pin down ``(phi, Phi)``; a corrupted unit's field is then
``B @ [1, dv]`` with ``B = [phi, -2 Phi_1, ..., -2 Phi_{p_v}]``, and the
fitted coefficients beyond the leading 1 estimate the covariate error ``dv``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .loss import _guarded_exp, exponents
from .model import Dataset, ExtendedParams, PopulationMatrix, UnitFields, mse, norm_2inf
from .optimizer import FitConfig, FitReport, batched_box_pgd, pgd_fit_shared

log = logging.getLogger(__name__)


class ConditioningWarning(UserWarning):
    """The basis matrix is close to rank deficient."""


@dataclass(frozen=True)
class BasisMatrix:
    B: np.ndarray
    kappa: float

    @property
    def p_v(self):
        return self.B.shape[1] - 1


def build_B(phi_hat, Phi_hat, p_v):
    phi_hat = np.asarray(phi_hat, dtype=float).ravel()
    Phi_hat = Phi_hat.theta_mat if isinstance(Phi_hat, PopulationMatrix) else np.asarray(Phi_hat, dtype=float)
    p = phi_hat.size
    if Phi_hat.shape != (p, p):
        raise InvalidArgument(f"Phi is {Phi_hat.shape}, phi has length {p}")
    if not 0 <= p_v <= p:
        raise InvalidArgument(f"p_v={p_v} out of range for p={p}")
    B = np.column_stack([phi_hat, -2.0 * Phi_hat[:p_v].T])
    kappa = float(np.linalg.eigvalsh(B.T @ B)[0] / p)
    B.setflags(write=False)
    return BasisMatrix(B, max(kappa, 0.0))


def _shifted_value_grad(lead, theta, X, p_v, xm):
    """Objective and gradient in ``dv`` with the covariates centered on their
    shifted support, i.e. the loss evaluated at ``w = x - [dv, 0]``."""
    two_theta_v = 2.0 * theta[:, :p_v]

    def terms(Z, rows):
        W = X[rows].copy()
        W[:, :p_v] -= Z
        return W, _guarded_exp(exponents(theta, lead[None, :], W, xm))

    def value_fn(Z, idx=None):
        rows = slice(None) if idx is None else idx
        return np.sum(terms(Z, rows)[1], axis=1)

    def grad_fn(Z, idx):
        W, T = terms(Z, idx)
        g = (T * W) @ two_theta_v
        own = lead[:p_v] + 2.0 * (W @ theta[:, :p_v])
        return g + T[:, :p_v] * (own - W[:, :p_v] * np.diag(two_theta_v)[None, :])

    return value_fn, grad_fn


def fit_measurement_errors(basis: BasisMatrix, X, population, bounds, cfg: FitConfig = FitConfig(), x_max=None,
                           centering="shifted"):
    """Coefficient fits for a batch of corrupted units (one row of ``X`` each).

    The leading coefficient is pinned at 1; the rest are confined to
    ``[-alpha, alpha]``. With ``centering="nominal"`` every coordinate's
    statistics are centered on ``[-x_max, x_max]``. The default ``"shifted"``
    centers each corrupted covariate on its own support ``dv + [-x_max, x_max]``;
    the non-covariate terms are the same in both modes. Returns
    ``(delta_v_hat, fields, coefficients)``.
    """
    theta = population.theta_mat if isinstance(population, PopulationMatrix) else np.asarray(population, float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    xm = bounds.x_max if x_max is None else x_max
    B = basis.B
    lead, rest = B[:, 0], B[:, 1:]
    p_v = basis.p_v
    if centering == "shifted":
        value_fn, grad_fn = _shifted_value_grad(lead, theta, X, p_v, xm)
    elif centering == "nominal":
        base = exponents(theta, np.zeros_like(X), X, xm) - lead[None, :] * X

        def value_fn(Z, idx=None):
            rows = slice(None) if idx is None else idx
            return np.sum(_guarded_exp(base[rows] - (Z @ rest.T) * X[rows]), axis=1)

        def grad_fn(Z, idx):
            W = _guarded_exp(base[idx] - (Z @ rest.T) * X[idx])
            return -(W * X[idx]) @ rest
    else:
        raise InvalidArgument(f"unknown centering {centering!r}")

    Z, _, _ = batched_box_pgd(value_fn, grad_fn, np.zeros((X.shape[0], p_v)),
                              -bounds.alpha, bounds.alpha, cfg)
    coefs = np.column_stack([np.ones(X.shape[0]), Z])
    fields = coefs @ B.T
    return Z, fields, coefs


def fit_measurement_error(basis: BasisMatrix, x_i, population, bounds, cfg: FitConfig = FitConfig(), x_max=None,
                          centering="shifted"):
    """Single-unit version; returns ``(delta_v_hat, theta_hat_i)``."""
    dv, fields, _ = fit_measurement_errors(basis, np.asarray(x_i, float)[None, :], population, bounds, cfg, x_max,
                                           centering)
    return dv[0], fields[0]


@dataclass
class ImputationResult:
    phi_hat: np.ndarray
    theta_hat: PopulationMatrix
    unit_fields: UnitFields
    delta_v_hat: np.ndarray
    basis: BasisMatrix
    fit_report: FitReport
    metrics: dict = field(default_factory=dict)

    def extended_params(self):
        return ExtendedParams(self.theta_hat, self.unit_fields)


def imputation_metrics(result: ImputationResult, truth):
    """Error metrics against a known simulation truth."""
    true_fields = truth.unit_fields
    mses = [mse(a, b) for a, b in zip(result.unit_fields.fields, true_fields)]
    dv_err = np.sum((result.delta_v_hat - truth.delta_v) ** 2, axis=1)
    return {
        "theta_matrix_err": norm_2inf(result.theta_hat.theta_mat - truth.joint.Phi),
        "theta_vector_max_mse": float(np.max(mses)),
        "delta_v_max_sq_err": float(np.max(dv_err)),
        "delta_v_clean_mse": float(np.mean(dv_err[truth.clean_mask])) if truth.clean_mask.any() else 0.0,
    }


def impute_pipeline(data: Dataset, clean_mask, bounds, cfg: FitConfig = FitConfig(), truth=None,
                    kappa_threshold=0.05, unit_cfg: FitConfig = None, centering="shifted"):
    """Fit from clean units, build the basis, then fit every corrupted unit.

    ``bounds.x_max`` is the model support used for centering; ``data`` may
    carry a wider support for the shifted covariates.
    """
    clean_mask = np.asarray(clean_mask, dtype=bool).ravel()
    if clean_mask.size != data.n:
        raise InvalidArgument("clean mask length differs from the number of units")
    if clean_mask.sum() < 2:
        raise InvalidArgument("need at least 2 clean units")
    p_v = data.dims.p_v
    clean = Dataset(data.X[clean_mask], data.dims, data.x_max)
    phi_hat, theta_hat, report = pgd_fit_shared(clean, bounds, cfg, x_max=bounds.x_max)
    basis = build_B(phi_hat, theta_hat, p_v)
    if basis.kappa < kappa_threshold:
        msg = f"basis conditioning kappa={basis.kappa:.4g} is below the threshold {kappa_threshold}"
        log.warning(msg)
        warnings.warn(msg, ConditioningWarning, stacklevel=2)
    fields = np.tile(phi_hat, (data.n, 1))
    dv_hat = np.zeros((data.n, p_v))
    bad = np.nonzero(~clean_mask)[0]
    if bad.size and p_v > 0:
        dv, f_bad, _ = fit_measurement_errors(basis, data.X[bad], theta_hat, bounds,
                                              unit_cfg or cfg, x_max=bounds.x_max,
                                              centering=centering)
        dv_hat[bad] = dv
        fields[bad] = f_bad
    result = ImputationResult(phi_hat, theta_hat, UnitFields(fields), dv_hat, basis, report)
    result.metrics = {"kappa_hat": basis.kappa, "stage1_iterations": report.iterations,
                      "stage1_loss": report.final_loss}
    if truth is not None:
        result.metrics.update(imputation_metrics(result, truth))
    return result
