"""Counterfactual outcome means under alternate interventions.

For unit ``i`` the outcomes given covariates ``v`` and intervention ``a`` have
density proportional to ``exp(psi . y + y' Psi y)`` on the outcome box, with

    psi = theta_i[y] + 2 v' Theta[v, y] + 2 a' Theta[a, y],   Psi = Theta[y, y].

The mean is computed by tensor quadrature for up to three outcomes and by
Gibbs sampling otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, UnsupportedDimension
from .model import Dataset, Dims, ExtendedParams, PopulationMatrix, _frozen
from .quadrature import expectation, log_partition, quadratic_log_density, tensor_nodes
from .sampler import GibbsConfig, gibbs_batch, gibbs_chains

MAX_QUADRATURE_DIM = 3
BATCH_UNITS = 256

# per-unit Monte Carlo defaults for outcome blocks beyond quadrature range
COUNTERFACTUAL_GIBBS = GibbsConfig(burn_in=200, thin=2, grid_nodes=128, chains=16)


@dataclass(frozen=True)
class OutcomeConditional:
    psi: np.ndarray
    Psi: np.ndarray
    x_max: float = 1.0

    def __post_init__(self):
        psi = _frozen(np.atleast_1d(self.psi))
        Psi = np.atleast_2d(np.asarray(self.Psi, dtype=float))
        if Psi.shape != (psi.size, psi.size):
            raise InvalidArgument(f"Psi is {Psi.shape}, psi has length {psi.size}")
        if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(Psi))):
            raise InvalidArgument("conditional parameters must be finite")
        if not np.allclose(Psi, Psi.T, rtol=0.0, atol=1e-12):
            raise InvalidArgument("Psi must be symmetric")
        if self.x_max <= 0:
            raise InvalidArgument("x_max must be positive")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "Psi", _frozen(Psi))

    @property
    def p_y(self):
        return self.psi.size


def conditional_outcome_params(theta_hat_unit, population, v_i, a_alt, dims: Dims, x_max=1.0):
    """Assemble the outcome conditional of one unit under intervention ``a_alt``."""
    theta = population.theta_mat if isinstance(population, PopulationMatrix) else np.asarray(population, float)
    field = np.asarray(theta_hat_unit, dtype=float).ravel()
    v_i = np.asarray(v_i, dtype=float).ravel()
    a_alt = np.asarray(a_alt, dtype=float).ravel()
    if field.size != dims.p or theta.shape != (dims.p, dims.p):
        raise InvalidArgument(f"parameters do not match p={dims.p}")
    if v_i.size != dims.p_v or a_alt.size != dims.p_a:
        raise InvalidArgument(f"need p_v={dims.p_v} covariates and p_a={dims.p_a} interventions")
    ys, vs, as_ = dims.y_slice, dims.v_slice, dims.a_slice
    psi = field[ys] + 2.0 * v_i @ theta[vs, ys] + 2.0 * a_alt @ theta[as_, ys]
    return OutcomeConditional(psi, theta[ys, ys].copy(), x_max)


def outcome_log_partition(cond: OutcomeConditional, nodes=64):
    if cond.p_y > MAX_QUADRATURE_DIM:
        raise UnsupportedDimension(f"quadrature supports p_y <= {MAX_QUADRATURE_DIM}")
    pts, logw = tensor_nodes(cond.p_y, nodes, cond.x_max)
    return log_partition(logw, quadratic_log_density(pts, cond.psi, cond.Psi))


def mean_outcome_quadrature(cond: OutcomeConditional, nodes=64):
    """``E[y]`` by a Gauss-Legendre tensor rule with ``nodes`` points per axis."""
    if cond.p_y > MAX_QUADRATURE_DIM:
        raise UnsupportedDimension(
            f"quadrature supports p_y <= {MAX_QUADRATURE_DIM}, got {cond.p_y}; use mean_outcome_gibbs")
    if nodes < 2:
        raise InvalidArgument("need at least 2 nodes")
    pts, logw = tensor_nodes(cond.p_y, nodes, cond.x_max)
    return expectation(pts, logw, quadratic_log_density(pts, cond.psi, cond.Psi), pts)


def _chain_batch_stderr(Y, chain):
    """Standard error of the pooled mean from per-chain batch sums."""
    counts = np.bincount(chain)
    C = counts.size
    if C < 2:
        return np.full(Y.shape[1], np.nan)
    sums = np.zeros((C, Y.shape[1]))
    np.add.at(sums, chain, Y)
    resid = sums - counts[:, None] * Y.mean(axis=0)[None, :]
    return np.sqrt(C / (C - 1) * np.sum(resid ** 2, axis=0)) / Y.shape[0]


def mean_outcome_gibbs(cond: OutcomeConditional, mc: GibbsConfig = GibbsConfig(), n_samples=10_000, stream=0):
    """Monte Carlo ``E[y]`` and its standard error from per-chain batch means."""
    if n_samples < 100:
        raise InvalidArgument("n_samples must be at least 100")
    Y, chain = gibbs_chains(cond.psi, cond.Psi, cond.x_max, n_samples, mc, stream=stream, return_chain_ids=True)
    return Y.mean(axis=0), _chain_batch_stderr(Y, chain)


def estimate_counterfactuals(fit: ExtendedParams, data: Dataset, alt_interventions, nodes=64,
                             mc: GibbsConfig = COUNTERFACTUAL_GIBBS, n_samples=2_000, v_override=None, x_max=None):
    """``n x p_y`` matrix of counterfactual outcome means.

    Quadrature for ``p_y <= 3``; otherwise Gibbs, batched over blocks of
    units (block ``b`` uses random stream ``b``). ``v_override`` replaces the
    observed covariates, for instance with imputed ones; ``x_max`` defaults
    to the data support.
    """
    dims = data.dims
    alt = np.atleast_2d(np.asarray(alt_interventions, dtype=float))
    if alt.shape != (data.n, dims.p_a):
        raise InvalidArgument(f"alternate interventions are {alt.shape}, need {(data.n, dims.p_a)}")
    if fit.n != data.n or fit.p != data.p:
        raise InvalidArgument("fit and data disagree in shape")
    V = data.V if v_override is None else np.atleast_2d(np.asarray(v_override, dtype=float))
    if V.shape != (data.n, dims.p_v):
        raise InvalidArgument("covariate override has the wrong shape")
    xm = data.x_max if x_max is None else x_max
    theta = fit.theta
    ys = dims.y_slice
    Psi = theta[ys, ys]
    psis = fit.fields[:, ys] + 2.0 * V @ theta[dims.v_slice, ys] + 2.0 * alt @ theta[dims.a_slice, ys]
    mu = np.empty((data.n, dims.p_y))
    if dims.p_y <= MAX_QUADRATURE_DIM:
        pts, logw = tensor_nodes(dims.p_y, nodes, xm)
        quad = quadratic_log_density(pts, np.zeros(dims.p_y), Psi)
        for i in range(data.n):
            mu[i] = expectation(pts, logw, quad + pts @ psis[i], pts)
        return mu
    if n_samples < 100:
        raise InvalidArgument("n_samples must be at least 100")
    for b, lo in enumerate(range(0, data.n, BATCH_UNITS)):
        block = slice(lo, min(lo + BATCH_UNITS, data.n))
        Y, _ = gibbs_batch(psis[block], Psi, xm, n_samples, mc, stream=b)
        mu[block] = Y.mean(axis=1)
    return mu
