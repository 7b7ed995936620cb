"""Computable checks of the modelling assumptions.

* ``lambda_min``: smallest eigenvalue of ``E[s s']`` with
  ``s = (x_t, 2 x_{-t} x_t, x_t**2 - x_max**2 / 3)`` under the model with a
  given field. Spot checks at chosen ``(field, t)`` pairs, not a certificate
  for the infimum over all units.
* Dobrushin bound: ``2 sqrt(2) x_max**2 ||abs(Theta)||_op``, passing at <= 1/2.
* Proper-loss probe: expected loss at the truth against random feasible
  perturbations, by quadrature.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgument, UnsupportedDimension
from .loss import expected_loss_quadrature
from .model import Bounds, ExtendedParams, PopulationMatrix, centering_constants
from .optimizer import project_population_array, project_unit_fields
from .quadrature import log_weights_box, quadratic_log_density, tensor_nodes
from .sampler import GibbsConfig, gibbs_batch, make_rng

DOBRUSHIN_THRESHOLD = 0.5
MAX_QUADRATURE_DIM = 3
DIAGNOSTIC_GIBBS = GibbsConfig(burn_in=300, thin=2, grid_nodes=256, chains=32)
MC_STREAM = 0x1a3b


@dataclass(frozen=True)
class LambdaMin:
    value: float
    method: str
    stderr: float = 0.0
    coordinate: int = -1


def _theta(population):
    return population.theta_mat if isinstance(population, PopulationMatrix) else np.asarray(population, float)


def statistic_vectors(X, t, x_max):
    """Rows ``(x_t, 2 x_{-t} x_t, x_t**2 - c2)``, shape ``(m, p + 1)``."""
    _, c2 = centering_constants(x_max)
    xt = X[:, t:t + 1]
    rest = np.delete(X, t, axis=1)
    return np.hstack([xt, 2.0 * rest * xt, xt * xt - c2])


def autocorrelation(X, t, x_max, weights=None):
    S = statistic_vectors(X, t, x_max)
    if weights is None:
        return S.T @ S / S.shape[0]
    return (S * weights[:, None]).T @ S


def _min_eig(M):
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def lambda_min_all(field_vec, population, x_max, method="quadrature", nodes=32,
                   mc: GibbsConfig = DIAGNOSTIC_GIBBS, n_samples=20_000, groups=16):
    """``LambdaMin`` for every coordinate ``t`` of one field.

    Monte Carlo estimates share one set of Gibbs draws across coordinates and
    carry a delete-one-group jackknife standard error.
    """
    theta = _theta(population)
    f = np.asarray(field_vec, dtype=float).ravel()
    p = f.size
    if theta.shape != (p, p):
        raise InvalidArgument("field and interaction matrix disagree in p")
    if method == "quadrature":
        if p > MAX_QUADRATURE_DIM:
            raise UnsupportedDimension(f"quadrature needs p <= {MAX_QUADRATURE_DIM}, got {p}")
        pts, logw = tensor_nodes(p, nodes, x_max)
        w = np.exp(log_weights_box(logw, quadratic_log_density(pts, f, theta)))
        return [LambdaMin(_min_eig(autocorrelation(pts, t, x_max, w)), "quadrature", 0.0, t) for t in range(p)]
    if method != "monte-carlo":
        raise InvalidArgument(f"unknown method {method!r}")
    X, chain = gibbs_batch(f[None, :], theta, x_max, n_samples, mc, stream=MC_STREAM)
    return _lambda_from_samples(X[0], chain, x_max, groups)


def _lambda_from_samples(X, chain, x_max, groups=16):
    group = chain % min(groups, int(chain.max()) + 1)
    G = int(group.max()) + 1
    counts = np.bincount(group, minlength=G)
    out = []
    for t in range(X.shape[1]):
        S = statistic_vectors(X, t, x_max)
        parts = np.stack([S[group == g].T @ S[group == g] for g in range(G)])
        total = parts.sum(axis=0)
        value = _min_eig(total / X.shape[0])
        if G > 1:
            jack = np.array([_min_eig((total - parts[g]) / (X.shape[0] - counts[g])) for g in range(G)])
            se = float(np.sqrt((G - 1) / G * np.sum((jack - jack.mean()) ** 2)))
        else:
            se = float("nan")
        out.append(LambdaMin(value, "monte-carlo", se, t))
    return out


def lambda_min_check(field_vec, population, t, x_max, method="quadrature", nodes=32,
                     mc: GibbsConfig = DIAGNOSTIC_GIBBS, n_samples=20_000):
    """Smallest eigenvalue of the statistic autocorrelation at coordinate ``t``."""
    theta = _theta(population)
    if not 0 <= t < theta.shape[0]:
        raise InvalidArgument(f"coordinate {t} out of range")
    return lambda_min_all(field_vec, theta, x_max, method, nodes, mc, n_samples)[t].value


def dobrushin_bound(population, x_max):
    """``(value, passes)`` for the coupling-matrix bound."""
    theta = _theta(population)
    if theta.size == 0:
        return 0.0, True
    value = 2.0 * np.sqrt(2.0) * x_max ** 2 * float(np.linalg.norm(np.abs(theta), 2))
    return value, bool(value <= DOBRUSHIN_THRESHOLD)


@dataclass
class ProperLossReport:
    loss_at_truth: float
    min_gap: float
    grad_norm: float
    gaps: np.ndarray

    @property
    def proper(self):
        return bool(self.min_gap >= -1e-9)


def _pack(params: ExtendedParams):
    iu = np.triu_indices(params.p)
    return np.concatenate([params.theta[iu], params.fields.ravel()])


def _unpack(vec, n, p):
    iu = np.triu_indices(p)
    k = iu[0].size
    T = np.zeros((p, p))
    T[iu] = vec[:k]
    T = T + T.T - np.diag(np.diag(T))
    return ExtendedParams.from_arrays(T, vec[k:].reshape(n, p))


def proper_loss_probe(truth: ExtendedParams, bounds: Bounds, n_perturb=100, magnitude=0.5, nodes=32, seed=0,
                      fd_step=1e-5):
    """Expected-loss gaps at random feasible perturbations of ``truth``.

    A perturbation draws a direction uniformly on the sphere over the free
    parameters (upper triangle of ``Theta`` and all fields), scales it by
    ``magnitude * U(0, 1)``, and projects back onto the feasible set.
    """
    if truth.p > 2:
        raise UnsupportedDimension("the probe integrates by tensor quadrature and needs p <= 2")
    n, p = truth.n, truth.p
    base = expected_loss_quadrature(truth, truth, bounds, nodes)
    x0 = _pack(truth)
    rng = make_rng(seed, 0x9b0be)
    gaps = np.empty(int(n_perturb))
    for k in range(gaps.size):
        d = rng.normal(size=x0.size)
        d *= magnitude * rng.random() / np.linalg.norm(d)
        cand = _unpack(x0 + d, n, p)
        T = project_population_array(cand.theta, bounds)
        F = project_unit_fields(cand.fields, bounds.alpha)
        gaps[k] = expected_loss_quadrature(ExtendedParams.from_arrays(T, F), truth, bounds, nodes) - base
    grad = np.empty(x0.size)
    for j in range(x0.size):
        e = np.zeros(x0.size)
        e[j] = fd_step
        hi = expected_loss_quadrature(_unpack(x0 + e, n, p), truth, bounds, nodes)
        lo = expected_loss_quadrature(_unpack(x0 - e, n, p), truth, bounds, nodes)
        grad[j] = (hi - lo) / (2.0 * fd_step)
    min_gap = float(gaps.min()) if gaps.size else 0.0
    return ProperLossReport(base, min_gap, float(np.linalg.norm(grad)), gaps)


@dataclass
class DiagnosticsReport:
    lambda_min_estimate: float
    lambda_method: str
    lambda_stderr: float
    lambda_unit: int
    lambda_coordinate: int
    dobrushin_value: float
    dobrushin_pass: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def diagnose(params: ExtendedParams, bounds: Bounds, units=None, method=None, nodes=32,
             mc: GibbsConfig = DIAGNOSTIC_GIBBS, n_samples=20_000):
    """Dobrushin bound plus the smallest ``lambda_min`` over the chosen units.

    ``units`` defaults to the first five; ``method`` defaults to quadrature
    when ``p <= 3`` and Monte Carlo otherwise (one batched sampler run).
    """
    p = params.p
    method = method or ("quadrature" if p <= MAX_QUADRATURE_DIM else "monte-carlo")
    units = list(range(min(5, params.n))) if units is None else [int(u) for u in units]
    if not units or min(units) < 0 or max(units) >= params.n:
        raise InvalidArgument(f"units must be a nonempty subset of 0..{params.n - 1}")
    if method == "monte-carlo":
        X, chain = gibbs_batch(params.fields[units], params.theta, bounds.x_max, n_samples, mc, stream=MC_STREAM)
        per_unit = [_lambda_from_samples(X[k], chain, bounds.x_max) for k in range(len(units))]
    else:
        per_unit = [lambda_min_all(params.fields[i], params.theta, bounds.x_max, method, nodes) for i in units]
    i, est = min(((i, e) for i, ests in zip(units, per_unit) for e in ests), key=lambda ie: ie[1].value)
    value, ok = dobrushin_bound(params.population, bounds.x_max)
    notes = [f"lambda_min is a spot check over units {units} and all coordinates, not a bound over all units"]
    if not ok:
        notes.append("coupling bound exceeds 1/2; weak-dependence guarantees do not apply")
    return DiagnosticsReport(est.value, est.method, est.stderr, i, est.coordinate, value, ok, notes)
