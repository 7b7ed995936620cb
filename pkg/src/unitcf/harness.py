"""Error-scaling studies for the measurement-error pipeline.

Every (grid point, trial) cell simulates a dataset, runs the imputation
pipeline and records its error metrics in long format. Cell seeds come from
``SeedSequence([master, grid_index, trial])`` so results do not depend on the
number of workers or on execution order.
"""
from __future__ import annotations

import logging
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np
import scipy

from . import __version__
from .errors import InvalidArgument, UnitCFError
from .imputation import impute_pipeline
from .model import Bounds, mse, norm_2inf
from .optimizer import FitConfig, pgd_fit_shared
from .sampler import GibbsConfig, simulate_measurement_study
from .serialization import bounds_from_dict, bounds_to_dict, records_to_csv

log = logging.getLogger(__name__)

STUDIES = ("theta_matrix_vs_n", "theta_vector_vs_n", "delta_v_vs_n", "shared_recovery")
IMPUTATION_METRICS = ("theta_matrix_err", "theta_vector_max_mse", "delta_v_max_sq_err")
SHARED_METRICS = ("theta_matrix_err", "phi_mse", "final_loss")
COLUMNS = ("study", "p", "p_v", "n", "trial", "metric", "value")

# simulation-grade sampler settings; see README for the accuracy trade-off
STUDY_GIBBS = GibbsConfig(burn_in=500, thin=10, grid_nodes=128, chains=32)


def metrics_for(study):
    return SHARED_METRICS if study == "shared_recovery" else IMPUTATION_METRICS


@dataclass(frozen=True)
class ExperimentConfig:
    study: str
    grid: tuple
    trials: int = 5
    bounds: Bounds = Bounds(6.0, 4.0, 1.0)
    fit: FitConfig = FitConfig()
    gibbs: GibbsConfig = STUDY_GIBBS
    seed: int = 0
    curvature: float = -1.0
    target_kappa: float = 0.15
    kappa_threshold: float = 0.05
    centering: str = "shifted"

    def __post_init__(self):
        if self.study not in STUDIES:
            raise InvalidArgument(f"unknown study {self.study!r}; choose from {', '.join(STUDIES)}")
        grid = tuple(tuple(int(v) for v in g) for g in self.grid)
        if not grid or any(len(g) != 3 for g in grid):
            raise InvalidArgument("grid must be a nonempty list of (p, p_v, n) triples")
        if int(self.trials) < 1:
            raise InvalidArgument("trials must be at least 1")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "trials", int(self.trials))

    def to_dict(self):
        return {
            "study": self.study, "grid": [list(g) for g in self.grid], "trials": self.trials,
            "bounds": bounds_to_dict(self.bounds), "fit": asdict(self.fit), "gibbs": self.gibbs.to_dict(),
            "seed": self.seed, "curvature": self.curvature, "target_kappa": self.target_kappa,
            "kappa_threshold": self.kappa_threshold, "centering": self.centering,
        }

    @classmethod
    def from_dict(cls, d):
        """Accepts either an explicit ``grid`` or ``p``/``p_v``/``n`` lists (Cartesian product)."""
        d = dict(d)
        if "study" not in d:
            raise InvalidArgument("config needs a 'study'")
        if "grid" in d:
            grid = d["grid"]
        else:
            try:
                grid = list(product(*(np.atleast_1d(d[k]).tolist() for k in ("p", "p_v", "n"))))
            except KeyError as exc:
                raise InvalidArgument(f"config needs 'grid' or p/p_v/n lists (missing {exc})") from None
        kw = {"study": d["study"], "grid": grid}
        if "bounds" in d:
            kw["bounds"] = bounds_from_dict(d["bounds"])
        if "fit" in d:
            kw["fit"] = FitConfig.from_dict(d["fit"])
        if "gibbs" in d:
            kw["gibbs"] = STUDY_GIBBS.replace(**d["gibbs"])
        for k in ("trials", "seed", "curvature", "target_kappa", "kappa_threshold", "centering"):
            if k in d:
                kw[k] = d[k]
        return cls(**kw)


def desk_config(study="theta_matrix_vs_n", seed=0):
    """Reduced-scale default grid: p in {16, 32, 64}, p_v = 4, n = 2^7..2^12, 5 trials."""
    grid = [(p, 4, 2 ** k) for p in (16, 32, 64) for k in range(7, 13)]
    return ExperimentConfig(study, grid, trials=5, seed=seed)


@dataclass
class ExperimentResult:
    records: list
    provenance: dict = field(default_factory=dict)

    def to_csv(self):
        return records_to_csv(self.records, COLUMNS)

    def values(self, metric, p=None, p_v=None, n=None):
        out = [r for r in self.records if r["metric"] == metric
               and (p is None or r["p"] == p) and (p_v is None or r["p_v"] == p_v) and (n is None or r["n"] == n)]
        return np.array([r["value"] for r in out], dtype=float)

    def summary(self):
        """Mean, standard error and count of finite values per (study, p, p_v, n, metric)."""
        groups = {}
        for r in self.records:
            groups.setdefault((r["study"], r["p"], r["p_v"], r["n"], r["metric"]), []).append(r["value"])
        rows = []
        for key, vals in groups.items():
            v = np.asarray(vals, dtype=float)
            v = v[np.isfinite(v)]
            mean = float(v.mean()) if v.size else float("nan")
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
            rows.append(dict(zip(("study", "p", "p_v", "n", "metric"), key), mean=mean, stderr=se, count=int(v.size)))
        return rows


def cell_seed(master, grid_index, trial):
    return int(np.random.SeedSequence([int(master), int(grid_index), int(trial)]).generate_state(1, np.uint64)[0]
               % (2 ** 63))


def run_cell(cfg: ExperimentConfig, grid_index, trial):
    """Metrics for one cell as ``{metric: value}``; failures raise."""
    p, p_v, n = cfg.grid[grid_index]
    seed = cell_seed(cfg.seed, grid_index, trial)
    gibbs = cfg.gibbs.replace(seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data, truth = simulate_measurement_study(p, p_v, n, cfg.bounds, seed=seed, target_kappa=cfg.target_kappa,
                                                 gibbs=gibbs, curvature=cfg.curvature)
        if cfg.study == "shared_recovery":
            clean = data.subset(truth.clean_mask)
            phi_hat, theta_hat, report = pgd_fit_shared(clean, cfg.bounds, cfg.fit, x_max=cfg.bounds.x_max)
            return {"theta_matrix_err": norm_2inf(theta_hat.theta_mat - truth.joint.Phi),
                    "phi_mse": mse(phi_hat, truth.joint.phi), "final_loss": report.final_loss}
        result = impute_pipeline(data, truth.clean_mask, cfg.bounds, cfg.fit, truth=truth,
                                 kappa_threshold=cfg.kappa_threshold, centering=cfg.centering)
    return {m: result.metrics[m] for m in IMPUTATION_METRICS}


def _run_cell_safe(args):
    cfg, gi, trial = args
    try:
        return gi, trial, run_cell(cfg, gi, trial), None
    except (UnitCFError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return gi, trial, None, f"{type(exc).__name__}: {exc}"


def run_study(cfg: ExperimentConfig, workers=1):
    """Run every cell; per-cell failures become NaN records listed in provenance."""
    tasks = [(cfg, gi, t) for gi in range(len(cfg.grid)) for t in range(cfg.trials)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            outcomes = list(pool.map(_run_cell_safe, tasks))
    else:
        outcomes = [_run_cell_safe(t) for t in tasks]
    outcomes.sort(key=lambda o: (o[0], o[1]))
    records, failures = [], []
    for gi, trial, metrics, err in outcomes:
        p, p_v, n = cfg.grid[gi]
        if err is not None:
            log.warning("cell p=%d p_v=%d n=%d trial=%d failed: %s", p, p_v, n, trial, err)
            failures.append({"p": p, "p_v": p_v, "n": n, "trial": trial, "error": err})
        for m in metrics_for(cfg.study):
            value = float("nan") if metrics is None else float(metrics[m])
            records.append({"study": cfg.study, "p": p, "p_v": p_v, "n": n, "trial": trial,
                            "metric": m, "value": value})
    provenance = {
        "config": cfg.to_dict(),
        "cell_seeds": {f"{gi}:{t}": cell_seed(cfg.seed, gi, t) for gi in range(len(cfg.grid))
                       for t in range(cfg.trials)},
        "failures": failures,
        "versions": {"unitcf": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    return ExperimentResult(records, provenance)


def fit_slope(points):
    """Least-squares ``(slope, intercept)`` of ``log y`` on ``log x``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise InvalidArgument("need at least 2 (x, y) points")
    if np.any(~np.isfinite(pts)) or np.any(pts <= 0):
        raise InvalidArgument("slope fitting needs finite, strictly positive x and y")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise InvalidArgument("x values must not all be equal")
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def slope_vs_n(result: ExperimentResult, metric, p, p_v):
    """Slope of the per-n mean of ``metric`` against ``n``."""
    rows = [r for r in result.summary() if r["metric"] == metric and r["p"] == p and r["p_v"] == p_v]
    rows.sort(key=lambda r: r["n"])
    return fit_slope([(r["n"], r["mean"]) for r in rows])
