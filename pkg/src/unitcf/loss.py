"""Pooled convex loss, its exact gradient, and its per-node / per-unit parts.

For unit ``i`` and coordinate ``t`` the loss term is ``exp(E[i, t])`` with

    E[i, t] = -(theta_i[t] + 2 * sum_{u != t} Theta[t, u] x_i[u]) * x_i[t]
              - Theta[t, t] * (x_i[t]**2 - x_max**2 / 3)

and the loss is ``(1/n) * sum_{i, t} exp(E[i, t])``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericOverflow, UnsupportedDimension
from .model import ExtendedParams, PopulationMatrix, centering_constants
from .quadrature import log_weights_box, quadratic_log_density, tensor_nodes

EXP_CLAMP = 700.0


@dataclass(frozen=True)
class LossGradient:
    """Gradient of the loss.

    ``d_population[t, u]`` for ``t != u`` is the derivative with respect to the
    single shared entry ``Theta[t, u] = Theta[u, t]``, so it collects the
    contributions of both node objectives. The Frobenius-metric gradient over
    symmetric matrices is ``frobenius_population()``.
    """

    d_population: np.ndarray
    d_units: np.ndarray

    def frobenius_population(self):
        g = 0.5 * self.d_population
        np.fill_diagonal(g, np.diag(self.d_population))
        return g


def _check_shapes(theta, fields, X):
    n, p = X.shape
    if theta.shape != (p, p):
        raise InvalidArgument(f"interaction matrix is {theta.shape}, data has p={p}")
    if fields.shape != (n, p):
        raise InvalidArgument(f"unit fields are {fields.shape}, data is {X.shape}")


def exponents(theta, fields, X, x_max):
    """Matrix ``E`` of loss exponents, shape ``(n, p)``.

    ``fields`` may also be a single p-vector broadcast over units.
    """
    _, c2 = centering_constants(x_max)
    diag = np.diag(theta)
    coupling = X @ theta - X * diag  # sum_{u != t} Theta[t, u] x[u]
    return -(fields + 2.0 * coupling) * X - diag * (X * X - c2)


def _guarded_exp(E):
    if not np.all(np.isfinite(E)) or np.max(np.abs(E)) > EXP_CLAMP:
        bad = ~np.isfinite(E) | (np.abs(E) > EXP_CLAMP)
        loc = tuple(int(k) for k in np.argwhere(bad)[0]) if E.ndim == 2 else (0, int(np.argmax(bad)))
        raise NumericOverflow(f"loss exponent out of range at (unit, coordinate) = {loc}", location=loc)
    return np.exp(E)


def loss_terms(params: ExtendedParams, data, x_max=None):
    """Per ``(unit, coordinate)`` terms ``exp(E)``; the loss is their sum over n."""
    X = data.X
    _check_shapes(params.theta, params.fields, X)
    return _guarded_exp(exponents(params.theta, params.fields, X, data.x_max if x_max is None else x_max))


def loss_value(params: ExtendedParams, data, x_max=None):
    W = loss_terms(params, data, x_max)
    return float(np.sum(W.sum(axis=0)) / data.n)


def loss_node(t, params: ExtendedParams, data, x_max=None):
    """The ``t``-th node objective; these sum to ``loss_value``."""
    if not 0 <= t < data.p:
        raise InvalidArgument(f"coordinate index {t} out of range for p={data.p}")
    W = loss_terms(params, data, x_max)
    return float(np.sum(W[:, t]) / data.n)


def unit_exponents(field, theta, x_i, x_max):
    field = np.asarray(field, dtype=float)
    x_i = np.asarray(x_i, dtype=float)
    return exponents(theta, field[None, :], x_i[None, :], x_max)[0]


def loss_unit(i, field, population: PopulationMatrix, x_i, x_max, n=None):
    """Objective of unit ``i`` with the interaction matrix held fixed.

    ``n`` is only used to range-check ``i``.
    """
    if i < 0 or (n is not None and i >= n):
        raise InvalidArgument(f"unit index {i} out of range")
    theta = population.theta_mat if isinstance(population, PopulationMatrix) else np.asarray(population)
    E = unit_exponents(field, theta, x_i, x_max)
    return float(np.sum(_guarded_exp(E[None, :])))


def gradient_from_terms(W, X, x_max):
    n = X.shape[0]
    _, c2 = centering_constants(x_max)
    WX = W * X
    d_units = -WX / n
    M = WX.T @ X  # M[t, u] = sum_i w_it x_it x_iu
    d_pop = -(2.0 / n) * (M + M.T)
    np.fill_diagonal(d_pop, -np.sum(W * (X * X - c2), axis=0) / n)
    return LossGradient(d_pop, d_units)


def gradient(params: ExtendedParams, data, x_max=None):
    xm = data.x_max if x_max is None else x_max
    W = loss_terms(params, data, xm)
    return gradient_from_terms(W, data.X, xm)


def value_and_gradient(params: ExtendedParams, data, x_max=None):
    xm = data.x_max if x_max is None else x_max
    W = loss_terms(params, data, xm)
    return float(np.sum(W.sum(axis=0)) / data.n), gradient_from_terms(W, data.X, xm)


def expected_loss_quadrature(candidate: ExtendedParams, truth: ExtendedParams, bounds, nodes=32):
    """Loss of ``candidate`` averaged over data drawn from ``truth``.

    Unit ``i``'s observation is integrated against the density proportional to
    ``exp(f_i . x + x' Theta x)`` on the support box, with a Gauss-Legendre
    tensor rule of ``nodes`` points per axis.
    """
    p, n = truth.p, truth.n
    if p > 2:
        raise UnsupportedDimension(f"tensor quadrature supports p <= 2, got p={p}")
    if nodes < 8:
        raise InvalidArgument("need at least 8 quadrature nodes per dimension")
    if candidate.p != p or candidate.n != n:
        raise InvalidArgument("candidate and truth disagree in shape")
    pts, logw = tensor_nodes(p, nodes, bounds.x_max)
    total = 0.0
    for i in range(n):
        logdens = quadratic_log_density(pts, truth.fields[i], truth.theta)
        lw = log_weights_box(logw, logdens)
        E = exponents(candidate.theta, np.broadcast_to(candidate.fields[i], pts.shape), pts, bounds.x_max)
        total += float(np.sum(np.exp(lw)[:, None] * _guarded_exp(E)))
    return total / n
