"""Gauss-Legendre tensor rules on the cube ``[-x_max, x_max]^d``."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import logsumexp


@lru_cache(maxsize=32)
def _gauss_legendre(nodes):
    return np.polynomial.legendre.leggauss(nodes)


def tensor_nodes(dim, nodes, x_max):
    """Points ``(nodes**dim, dim)`` and log weights of the tensor rule."""
    x, w = _gauss_legendre(int(nodes))
    x = x * x_max
    logw1 = np.log(w * x_max)
    if dim == 0:
        return np.zeros((1, 0)), np.zeros(1)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([logw1] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    logw = np.sum(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return pts, logw


def log_weights_box(logw, logdens):
    """Normalized log weights of an unnormalized log density on the rule."""
    a = logw + logdens
    return a - logsumexp(a)


def log_partition(logw, logdens):
    return float(logsumexp(logw + logdens))


def quadratic_log_density(pts, lin, quad):
    """``lin . x + x' quad x`` evaluated at every point."""
    return pts @ lin + np.einsum("kt,tu,ku->k", pts, quad, pts)


def expectation(pts, logw, logdens, f_vals):
    """``E[f]`` under the density ``exp(logdens)`` restricted to the cube."""
    w = np.exp(log_weights_box(logw, logdens))
    return np.tensordot(w, f_vals, axes=(0, 0))
