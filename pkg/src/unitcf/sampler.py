"""Synthetic data: Gibbs sampling of truncated pairwise exponential families,
random interaction matrices, and measurement-error injection.

Each coordinate update draws from ``exp(eta * x + q * x**2)`` on
``[-x_max, x_max]`` by inverting a trapezoid-integrated CDF table.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import GenerationFailure, InvalidArgument, NumericUnderflow
from .model import Bounds, Dataset, Dims, JointParams, population_violations

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GibbsConfig:
    burn_in: int = 500
    thin: int = 10
    seed: int = 0
    grid_nodes: int = 512
    chains: int = 64

    def __post_init__(self):
        if self.burn_in < 0:
            raise InvalidArgument("burn_in must be nonnegative")
        if self.thin < 1:
            raise InvalidArgument("thin must be positive")
        if self.grid_nodes < 64:
            raise InvalidArgument("grid_nodes must be at least 64")
        if self.chains < 1:
            raise InvalidArgument("chains must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return GibbsConfig(**d)


@dataclass(frozen=True)
class SimTruth:
    joint: JointParams
    delta_v: np.ndarray
    clean_mask: np.ndarray
    raw: np.ndarray = None
    kappa: float = float("nan")

    @property
    def unit_fields(self):
        """True per-unit fields ``phi - 2 Phi[:p_v].T @ delta_v``."""
        p_v = self.delta_v.shape[1]
        return self.joint.phi[None, :] - 2.0 * self.delta_v @ self.joint.Phi[:p_v, :]


def make_rng(seed, *stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), *stream])))


def conditional_density_unnorm(eta, q, x_max):
    """``x -> exp(eta x + q x^2)`` on the support, zero outside."""
    eta, q, x_max = float(eta), float(q), float(x_max)

    def density(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= x_max, np.exp(eta * x + q * x * x), 0.0)

    return density


def cdf_table(eta, q, x_max, grid_nodes=512):
    """Grid, segment masses and cumulative masses of the (unnormalized) tables.

    ``eta`` and ``q`` are arrays of equal shape ``(m,)``; returns arrays of
    shape ``(G,)``, ``(m, G-1)``, ``(m, G-1)``.
    """
    grid = np.linspace(-x_max, x_max, int(grid_nodes))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    L = eta[:, None] * grid + q[:, None] * (grid * grid)
    L -= L.max(axis=1, keepdims=True)
    f = np.exp(L)
    seg = 0.5 * (grid[1] - grid[0]) * (f[:, 1:] + f[:, :-1])
    cum = np.cumsum(seg, axis=1)
    if not np.all(np.isfinite(cum[:, -1])) or np.any(cum[:, -1] <= 0):
        raise NumericUnderflow("conditional density normalizes to zero or non-finite")
    return grid, seg, cum


def _draw_from_logtable(L, grid, u):
    """Inverse-CDF draws for rows of log densities ``L`` tabulated on ``grid``.

    ``L`` is overwritten. Trapezoid masses with linear interpolation inside
    the selected segment; constant factors cancel in the normalization.
    """
    L -= L.max(axis=1, keepdims=True)
    np.exp(L, out=L)
    seg = L[:, 1:] + L[:, :-1]
    cum = np.cumsum(seg, axis=1)
    total = cum[:, -1]
    if not np.all(np.isfinite(total)) or np.any(total <= 0):
        raise NumericUnderflow("conditional density normalizes to zero or non-finite")
    target = u * total
    k = np.minimum(np.count_nonzero(cum < target[:, None], axis=1), cum.shape[1] - 1)
    rows = np.arange(L.shape[0])
    prev = np.where(k > 0, cum[rows, k - 1], 0.0)
    mass = seg[rows, k]
    frac = np.where(mass > 0, (target - prev) / np.where(mass > 0, mass, 1.0), 0.5)
    h = grid[1] - grid[0]
    return np.clip(grid[k] + np.clip(frac, 0.0, 1.0) * h, grid[0], grid[-1])


def inverse_cdf_draw(eta, q, x_max, u, grid_nodes=512):
    """Map uniforms ``u`` through the tabulated inverse CDF (vectorized)."""
    grid = np.linspace(-x_max, x_max, int(grid_nodes))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    L = np.multiply.outer(eta, grid) + np.multiply.outer(q, grid * grid)
    return _draw_from_logtable(L, grid, np.asarray(u, dtype=float))


def table_cdf(eta, q, x_max, x, grid_nodes=512):
    """CDF of the law that ``inverse_cdf_draw`` actually samples, at points ``x``."""
    grid, seg, cum = cdf_table([eta], [q], x_max, grid_nodes)
    full = np.concatenate([[0.0], cum[0]]) / cum[0, -1]
    return np.interp(x, grid, full)


def sample_coord(eta, q, x_max, rng, grid_nodes=512):
    """One draw from ``exp(eta x + q x^2)`` on ``[-x_max, x_max]``."""
    u = rng.random(1)
    return float(inverse_cdf_draw([eta], [q], x_max, u, grid_nodes)[0])


def gibbs_batch(phis, Phi, x_max, n_samples, cfg: GibbsConfig, stream=0):
    """Gibbs runs for ``m`` fields (rows of ``phis``) sharing ``Phi``.

    Each field gets ``cfg.chains`` chains. Every chain runs ``burn_in``
    sweeps, then keeps one state every ``thin`` sweeps. Returns samples of
    shape ``(m, n_samples, p)`` ordered by retention round, then chain, and
    the chain id of each sample. With ``m = 1`` this consumes the random
    stream exactly as :func:`gibbs_chains` does.
    """
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    Phi = np.asarray(Phi, dtype=float)
    m, p = phis.shape
    if Phi.shape != (p, p):
        raise InvalidArgument(f"Phi is {Phi.shape}, fields have p={p}")
    n_samples = int(n_samples)
    if n_samples < 1:
        raise InvalidArgument("n_samples must be at least 1")
    C = min(int(cfg.chains), n_samples)
    rounds = -(-n_samples // C)
    rng = make_rng(cfg.seed, 0x61bb5, int(stream))
    state = rng.uniform(-x_max, x_max, size=(m * C, p))
    lin = np.repeat(phis, C, axis=0)
    diag = np.diag(Phi).copy()
    off = Phi - np.diag(diag)
    out = np.empty((rounds, m * C, p))
    total_sweeps = cfg.burn_in + rounds * cfg.thin
    kept = 0
    grid = np.linspace(-x_max, x_max, int(cfg.grid_nodes))
    quad = np.multiply.outer(diag, grid * grid)
    for sweep in range(1, total_sweeps + 1):
        U = rng.random((p, m * C))
        for t in range(p):
            eta = lin[:, t] + 2.0 * (state @ off[t])
            L = np.multiply.outer(eta, grid)
            L += quad[t]
            state[:, t] = _draw_from_logtable(L, grid, U[t])
        if sweep > cfg.burn_in and (sweep - cfg.burn_in) % cfg.thin == 0:
            out[kept] = state
            kept += 1
    samples = out.reshape(rounds, m, C, p).transpose(1, 0, 2, 3).reshape(m, rounds * C, p)[:, :n_samples]
    return samples, np.tile(np.arange(C), rounds)[:n_samples]


def gibbs_chains(phi, Phi, x_max, n_samples, cfg: GibbsConfig, stream=0, return_chain_ids=False):
    """Systematic-scan Gibbs with ``cfg.chains`` parallel chains.

    Every chain runs ``burn_in`` sweeps, then keeps one state every ``thin``
    sweeps. Rows are ordered by retention round, then chain.
    """
    samples, chain = gibbs_batch(np.asarray(phi, dtype=float).ravel()[None, :], Phi, x_max, n_samples, cfg, stream)
    if return_chain_ids:
        return samples[0], chain
    return samples[0]


def gibbs_sample(params: JointParams, n_samples, dims: Dims, bounds: Bounds, cfg: GibbsConfig = GibbsConfig()):
    """``n_samples x p`` draws approximately from ``exp(phi.w + w' Phi w)`` on the box."""
    if params.p != dims.p:
        raise InvalidArgument("parameters and dims disagree in p")
    return gibbs_chains(params.phi, params.Phi, bounds.x_max, n_samples, cfg)


# -- truth generation ------------------------------------------------------


def basis_kappa(phi, Phi, p_v):
    """``lambda_min(B'B) / p`` for ``B = [phi, -2 Phi_1, ..., -2 Phi_{p_v}]``."""
    B = np.column_stack([phi, -2.0 * np.asarray(Phi)[:p_v].T])
    return float(np.linalg.eigvalsh(B.T @ B)[0] / B.shape[0])


def _rescale_spd(M, bounds):
    """Clip to the entry bound, shift to positive definite, then rescale so
    every row l1 norm equals ``beta``.

    The rescaling is a congruence by a positive diagonal matrix followed by a
    positive scalar, so symmetry and definiteness survive.
    """
    M = 0.5 * (M + M.T)
    M = np.clip(M, -bounds.alpha, bounds.alpha)
    lam = np.linalg.eigvalsh(M)[0]
    scale = np.max(np.abs(np.diag(M))) if M.size else 1.0
    delta = max(0.0, -lam) + 1e-3 * scale
    M = M + delta * np.eye(M.shape[0])
    # symmetric balancing D M D keeps symmetry and definiteness while pushing every row norm to beta
    for _ in range(200):
        r = np.sum(np.abs(M), axis=1)
        if np.max(np.abs(r / bounds.beta - 1.0)) < 1e-10:
            break
        d = np.sqrt(bounds.beta / r)
        M = M * d[:, None] * d[None, :]
    M = 0.5 * (M + M.T)
    M = M * (bounds.beta / np.max(np.sum(np.abs(M), axis=1)))
    while np.max(np.sum(np.abs(M), axis=1)) > bounds.beta:
        M = M * (1.0 - 1e-15)
    if np.max(np.abs(M)) > bounds.alpha:
        # clipping a dominant diagonal can only lower row norms; restore definiteness by shrinking off-diagonals
        D = np.diag(np.clip(np.diag(M), -bounds.alpha, bounds.alpha))
        O = np.clip(M - np.diag(np.diag(M)), -bounds.alpha, bounds.alpha)
        shrink = 1.0
        while np.linalg.eigvalsh(D + shrink * O)[0] <= 0:
            shrink *= 0.5
        M = D + shrink * O
    return M


def random_spd(p, rng, density=None, spread=0.3):
    """Sparse random factor ``A = I + S``; returns ``A' A`` normalized to unit diagonal."""
    density = min(1.0, 2.0 / p) if density is None else density
    S = spread * rng.normal(size=(p, p)) * (rng.random((p, p)) < density)
    np.fill_diagonal(S, 0.0)
    A = np.eye(p) + S
    M = A.T @ A
    d = 1.0 / np.sqrt(np.diag(M))
    return M * d[:, None] * d[None, :]


def generate_spd_interaction(p, bounds: Bounds, target_kappa=0.15, seed=0, p_v=None, max_tries=50):
    """Random positive definite interaction truth with ``phi = 1``.

    Retries fresh seeds until ``basis_kappa >= target_kappa``. Returns
    ``(JointParams, kappa)``.
    """
    if p < 1:
        raise InvalidArgument("p must be positive")
    p_v = max(1, min(4, p - 1)) if p_v is None else int(p_v)
    best = (-np.inf, None)
    for attempt in range(int(max_tries)):
        rng = make_rng(seed, 0x5bd1, attempt)
        Phi = _rescale_spd(random_spd(p, rng), bounds)
        phi = np.ones(p)
        kappa = basis_kappa(phi, Phi, p_v) if p_v > 0 else 1.0
        if kappa > best[0]:
            best = (kappa, Phi)
        if kappa >= target_kappa:
            assert not population_violations(Phi, bounds)
            log.info("interaction truth p=%d kappa=%.4g max row l0=%d", p, kappa,
                     int(np.max(np.count_nonzero(Phi, axis=1))))
            return JointParams(phi, Phi), kappa
    raise GenerationFailure(
        f"no interaction matrix reached kappa >= {target_kappa} in {max_tries} tries "
        f"(best {best[0]:.4g})", best_kappa=best[0]
    )


def simulate_measurement_study(p, p_v, n, bounds: Bounds, seed=0, target_kappa=0.15,
                               gibbs: GibbsConfig = None, curvature=1.0, joint: JointParams = None):
    """Clean draws for the second half of the units, additive covariate noise
    ``Uniform[0.9, 1]`` on the first half.

    ``curvature`` multiplies the generated interaction matrix (``-1`` turns
    the positive definite draw into a concave, truncated-Gaussian model).
    Returns ``(Dataset, SimTruth)``; the dataset's support is widened by 1 to
    hold the shifted covariates.
    """
    if n < 2 or n % 2:
        raise InvalidArgument("n must be even and at least 2")
    if not 0 <= p_v < p:
        raise InvalidArgument("need 0 <= p_v < p")
    if (p - p_v) % 2:
        raise InvalidArgument("p - p_v must be even so that p_a = p_y")
    p_a = (p - p_v) // 2
    dims = Dims(p_v, p_a, p_a, n)
    if joint is None:
        joint, kappa = generate_spd_interaction(p, bounds, target_kappa, seed, p_v=p_v)
        joint = JointParams(joint.phi, curvature * joint.Phi)
    else:
        kappa = basis_kappa(joint.phi, joint.Phi, p_v)
    gibbs = GibbsConfig(seed=seed) if gibbs is None else gibbs
    W = gibbs_chains(joint.phi, joint.Phi, bounds.x_max, n, gibbs, stream=1)
    noise_rng = make_rng(seed, 0xde17a)
    half = n // 2
    delta = np.zeros((n, p_v))
    delta[:half] = noise_rng.uniform(0.9, 1.0, size=(half, p_v))
    X = W.copy()
    X[:, :p_v] += delta
    clean = np.zeros(n, dtype=bool)
    clean[half:] = True
    data = Dataset(X, dims, bounds.x_max + 1.0)
    return data, SimTruth(joint, delta, clean, W, kappa)
