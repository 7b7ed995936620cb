"""Projected gradient descent over the feasible parameter sets.

Unit fields live in the box ``|theta| <= alpha`` and the interaction matrix
in the set of symmetric matrices with entries bounded by ``alpha`` and row
l1 norms bounded by ``beta``. The box projection is exact; the matrix set is
handled with Dykstra's alternating projections followed by a pass that makes
the output exactly feasible.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericOverflow
from .loss import _guarded_exp, exponents, gradient_from_terms
from .model import Dataset, ExtendedParams, PopulationMatrix, UnitFields, population_violations, validate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 2000
    step_init: float = 1.0
    tol_grad: float = 1e-7
    tol_obj: float = 1e-10
    backtrack_factor: float = 0.5
    dykstra_rounds: int = 5
    seed: int = 0

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise InvalidArgument("max_iters must be at least 1")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise InvalidArgument("backtrack_factor must lie in (0, 1)")
        if self.step_init <= 0:
            raise InvalidArgument("step_init must be positive")
        if self.tol_grad < 0 or self.tol_obj < 0:
            raise InvalidArgument("tolerances must be nonnegative")
        if int(self.dykstra_rounds) < 1:
            raise InvalidArgument("dykstra_rounds must be positive")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass
class FitReport:
    iterations: int
    final_loss: float
    grad_map_norm: float
    loss_trace: list = field(default_factory=list)
    feasible: bool = True
    stop_reason: str = ""

    def to_dict(self):
        return asdict(self)


# -- projections ---------------------------------------------------------


def project_unit_fields(M, alpha):
    """Euclidean projection onto the entrywise box ``[-alpha, alpha]``."""
    if alpha <= 0:
        raise InvalidArgument("alpha must be positive")
    return np.clip(np.asarray(M, dtype=float), -alpha, alpha)


def _project_rows_l1(M, radius):
    """Project every row of ``M`` onto the l1 ball of ``radius`` (sort and threshold)."""
    M = np.asarray(M, dtype=float)
    absM = np.abs(M)
    norms = absM.sum(axis=1)
    out = M.copy()
    rows = np.nonzero(norms > radius)[0]
    if rows.size == 0:
        return out
    if radius == 0:
        out[rows] = 0.0
        return out
    A = absM[rows]
    S = -np.sort(-A, axis=1)
    css = np.cumsum(S, axis=1)
    k = np.arange(1, A.shape[1] + 1)
    cond = S - (css - radius) / k > 0
    rho = A.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = (css[np.arange(rows.size), rho] - radius) / (rho + 1)
    out[rows] = np.sign(M[rows]) * np.maximum(A - tau[:, None], 0.0)
    return out


def project_l1_ball(v, radius):
    """Euclidean projection of ``v`` onto ``{c : ||c||_1 <= radius}``."""
    if radius < 0:
        raise InvalidArgument("radius must be nonnegative")
    v = np.asarray(v, dtype=float)
    if np.sum(np.abs(v)) <= radius:
        return v.copy()
    return _project_rows_l1(v.reshape(1, -1), radius).reshape(v.shape)


def _feasible_pass(T, bounds):
    T = 0.5 * (T + T.T)
    T = np.clip(T, -bounds.alpha, bounds.alpha)
    worst = np.max(np.sum(np.abs(T), axis=1)) if T.size else 0.0
    if worst > bounds.beta:
        T = T * (bounds.beta / worst)
        # rounding can leave a row a hair above the bound
        while np.max(np.sum(np.abs(T), axis=1)) > bounds.beta:
            T = T * (1.0 - 1e-15)
    return T


def project_population_array(T, bounds, rounds=5):
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise InvalidArgument("interaction matrix must be square")
    projections = (
        lambda M: 0.5 * (M + M.T),
        lambda M: np.clip(M, -bounds.alpha, bounds.alpha),
        lambda M: _project_rows_l1(M, bounds.beta),
    )
    x = T.copy()
    incr = [np.zeros_like(T) for _ in projections]
    for _ in range(int(rounds)):
        for k, proj in enumerate(projections):
            y = proj(x + incr[k])
            incr[k] = x + incr[k] - y
            x = y
    return _feasible_pass(x, bounds)


def project_population(T, bounds, rounds=5):
    """Approximate projection onto the interaction-matrix set.

    ``rounds`` Dykstra cycles over (symmetric, entry box, row l1 balls),
    then symmetrize, clip and rescale so that the result is exactly feasible.
    Feasible symmetric inputs come back unchanged.
    """
    return PopulationMatrix(project_population_array(T, bounds, rounds))


# -- generic block PGD ---------------------------------------------------


def _pgd(x0, value_terms, grad_blocks, project, scales, cfg, callback=None):
    """Projected gradient with backtracking over a list of array blocks.

    Block ``b`` moves with step ``eta * scales[b]``; the sufficient-decrease
    test uses the matching scaled metric.
    """
    x = [np.array(b, dtype=float) for b in x0]
    f, aux = value_terms(x)
    trace = [f]
    g = grad_blocks(x, aux)
    eta = cfg.step_init
    gm = np.inf
    reason = "max_iters"
    it = 0
    for it in range(1, int(cfg.max_iters) + 1):
        eta = min(cfg.step_init, eta / cfg.backtrack_factor) if it > 1 else cfg.step_init
        while True:
            y = project([xb - eta * s * gb for xb, s, gb in zip(x, scales, g)])
            d = [yb - xb for yb, xb in zip(y, x)]
            try:
                fy, aux_y = value_terms(y)
            except NumericOverflow:
                fy, aux_y = np.inf, None
            lin = sum(float(np.sum(gb * db)) for gb, db in zip(g, d))
            quad = sum(float(np.sum(db * db)) / s for db, s in zip(d, scales)) / (2.0 * eta)
            if fy <= f and fy <= f + lin + quad + 1e-15 * abs(f):
                break
            eta *= cfg.backtrack_factor
            if eta < 1e-30:
                y, fy, aux_y, d = x, f, aux, [np.zeros_like(xb) for xb in x]
                break
        if not np.isfinite(fy):
            raise NumericOverflow("non-finite loss during descent", trace=trace)
        gm = np.sqrt(sum(float(np.sum((db / (eta * s)) ** 2)) for db, s in zip(d, scales)))
        decrease = f - fy
        x, f, aux = y, fy, aux_y
        trace.append(f)
        if callback is not None:
            callback(it, x)
        if gm <= cfg.tol_grad:
            reason = "tol_grad"
            break
        if decrease <= cfg.tol_obj:
            reason = "tol_obj"
            break
        g = grad_blocks(x, aux)
    return x, FitReport(it, float(f), float(gm), trace, True, reason)


def _canonical_order(X):
    # lexicographic row order makes reductions independent of input unit order
    return np.lexsort(X.T[::-1])


def pgd_fit(data: Dataset, bounds, cfg: FitConfig = FitConfig(), x_max=None, callback=None):
    """Jointly fit the interaction matrix and every unit's field.

    Starts from all zeros. Unit-field blocks step ``n`` times larger than the
    matrix block, which offsets the ``1/n`` weight each unit carries in the
    loss; both block projections stay exact under this scaling.
    Returns ``(ExtendedParams, FitReport)``.
    """
    xm = bounds.x_max if x_max is None else x_max
    order = _canonical_order(data.X)
    X = data.X[order]
    n, p = X.shape

    def value_terms(blocks):
        W = _guarded_exp(exponents(blocks[0], blocks[1], X, xm))
        return float(np.sum(W.sum(axis=0)) / n), W

    def grad_blocks(blocks, W):
        gr = gradient_from_terms(W, X, xm)
        return [gr.frobenius_population(), gr.d_units]

    def project(blocks):
        return [project_population_array(blocks[0], bounds, cfg.dykstra_rounds),
                project_unit_fields(blocks[1], bounds.alpha)]

    cb = None
    if callback is not None:
        inv = np.argsort(order)
        cb = lambda it, blocks: callback(it, ExtendedParams.from_arrays(blocks[0], blocks[1][inv]))

    x, report = _pgd([np.zeros((p, p)), np.zeros((n, p))], value_terms, grad_blocks, project,
                     [1.0, float(n)], cfg, cb)
    fields = np.empty_like(x[1])
    fields[order] = x[1]
    params = ExtendedParams.from_arrays(x[0], fields)
    report.feasible = validate(params, bounds).feasible
    return params, report


def pgd_fit_shared(data: Dataset, bounds, cfg: FitConfig = FitConfig(), x_max=None, callback=None):
    """Fit with every unit tied to one field vector ``phi``.

    The field gradient is the exact gradient of the tied objective, i.e. the
    sum of the per-unit field gradients. Returns ``(phi, PopulationMatrix, FitReport)``.
    """
    xm = bounds.x_max if x_max is None else x_max
    X = data.X[_canonical_order(data.X)]
    n, p = X.shape

    def value_terms(blocks):
        W = _guarded_exp(exponents(blocks[0], blocks[1][None, :], X, xm))
        return float(np.sum(W.sum(axis=0)) / n), W

    def grad_blocks(blocks, W):
        gr = gradient_from_terms(W, X, xm)
        return [gr.frobenius_population(), gr.d_units.sum(axis=0)]

    def project(blocks):
        return [project_population_array(blocks[0], bounds, cfg.dykstra_rounds),
                project_unit_fields(blocks[1], bounds.alpha)]

    cb = None
    if callback is not None:
        cb = lambda it, blocks: callback(it, ExtendedParams.from_arrays(blocks[0], blocks[1][None, :]))

    x, report = _pgd([np.zeros((p, p)), np.zeros(p)], value_terms, grad_blocks, project,
                     [1.0, 1.0], cfg, cb)
    pop = PopulationMatrix(x[0])
    report.feasible = not population_violations(pop.theta_mat, bounds) and bool(np.all(np.abs(x[1]) <= bounds.alpha))
    return x[1], pop, report


# -- per-unit problems -----------------------------------------------------


def batched_box_pgd(value_fn, grad_fn, z0, lo, hi, cfg: FitConfig):
    """Independent box-constrained problems solved side by side.

    ``value_fn(Z)`` returns one objective per row, ``grad_fn(Z)`` the matching
    row gradients. Each row keeps its own step size and stopping state.
    Returns ``(Z, iterations, converged_mask)``.
    """
    Z = np.clip(np.array(z0, dtype=float), lo, hi)
    m = Z.shape[0]
    f = value_fn(Z)
    eta = np.full(m, float(cfg.step_init))
    active = np.ones(m, dtype=bool)
    it = 0
    for it in range(1, int(cfg.max_iters) + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        Za, fa = Z[idx], f[idx]
        G = grad_fn(Za, idx)
        et = np.minimum(cfg.step_init, eta[idx] / cfg.backtrack_factor) if it > 1 else eta[idx]
        pending = np.ones(idx.size, dtype=bool)
        Y = Za.copy()
        fy = fa.copy()
        for _ in range(200):
            if not pending.any():
                break
            k = np.nonzero(pending)[0]
            Yk = np.clip(Za[k] - et[k, None] * G[k], lo, hi)
            D = Yk - Za[k]
            with np.errstate(over="ignore", invalid="ignore"):
                fk = value_fn(Yk, idx[k])
            ok = (fk <= fa[k]) & (fk <= fa[k] + np.sum(G[k] * D, axis=1)
                                  + np.sum(D * D, axis=1) / (2 * et[k]) + 1e-15 * np.abs(fa[k]))
            acc = k[ok]
            Y[acc], fy[acc] = Yk[ok], fk[ok]
            pending[acc] = False
            et[k[~ok]] *= cfg.backtrack_factor
            tiny = k[~ok][et[k[~ok]] < 1e-30]
            pending[tiny] = False
        D = Y - Za
        gm = np.sqrt(np.sum(D * D, axis=1)) / et
        dec = fa - fy
        Z[idx], f[idx], eta[idx] = Y, fy, et
        done = (gm <= cfg.tol_grad) | (dec <= cfg.tol_obj)
        active[idx[done]] = False
    return Z, it, ~active


def fit_unit_fields(theta_hat, data: Dataset, bounds, cfg: FitConfig = FitConfig(), x_max=None):
    """Second stage: each unit's field with the interaction matrix held at ``theta_hat``.

    A unit whose coordinate is exactly 0 has a flat objective in that
    coordinate; it stays at its starting value 0.
    """
    theta = theta_hat.theta_mat if isinstance(theta_hat, PopulationMatrix) else np.asarray(theta_hat, float)
    xm = bounds.x_max if x_max is None else x_max
    X = data.X
    base = exponents(theta, np.zeros_like(X), X, xm)  # exponent without the field term

    def value_fn(F, idx=None):
        rows = slice(None) if idx is None else idx
        return np.sum(_guarded_exp(base[rows] - F * X[rows]), axis=1)

    def grad_fn(F, idx):
        return -X[idx] * _guarded_exp(base[idx] - F * X[idx])

    F, _, _ = batched_box_pgd(value_fn, grad_fn, np.zeros_like(X), -bounds.alpha, bounds.alpha, cfg)
    return UnitFields(F)
