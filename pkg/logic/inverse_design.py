"""
Designer: gradient ascent on the inputs of a frozen strength predictor.

The predictor's weights are constants here; the compliance vector is the
variable. Every iterate stays on the fixed-mean slice of the sampling box,
candidates are re-simulated with the exact detachment model and ranked by
that verified strength.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import spearmanr

from logic.array_geometry import FibrilArray
from logic.contact_mechanics import simulate_detachment
from logic.dataset import Dataset, sample_design
from logic.errors import DesignError, ModelShapeError
from logic.runtime import DESIGN_STREAM, parallel_map, rng_stream

logger = logging.getLogger(__name__)

MEAN_TOL = 1e-12
DUPLICATE_TOL = 1e-9
DISCREPANCY_THRESHOLD = 0.03
INNER_RADIUS = 0.2
OUTER_RADIUS = 0.8
_BISECTION_ITERS = 200


# =============================================================================
# CONSTRAINT SET
# =============================================================================

def project(c, mean_c: float, bounds: Sequence[float]) -> np.ndarray:
    """
    Euclidean projection onto {mean(c) = mean_c} intersected with [c_lo, c_hi]^N.

    The projection is clip(c + mu) for the scalar mu that restores the mean;
    mu is bracketed by bisection, then solved exactly on the coordinates that
    ended up strictly inside the box.

    Args:
        c: point to project
        mean_c: required mean
        bounds: (c_lo, c_hi)

    Returns:
        Feasible design vector (a copy; `c` is not modified)
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    mean_c = float(mean_c)
    scale = max(1.0, abs(mean_c))
    if not (lo <= hi and lo - MEAN_TOL * scale <= mean_c <= hi + MEAN_TOL * scale):
        raise DesignError(f"infeasible constraint set: need c_lo <= mean_c <= c_hi, got "
                          f"c_lo={lo}, mean_c={mean_c}, c_hi={hi}")
    c = np.asarray(c, dtype=float).ravel()
    if not np.all(np.isfinite(c)):
        raise DesignError("cannot project a design with non-finite entries")
    n = c.shape[0]
    if n == 0:
        return c.copy()

    if c.min() >= lo and c.max() <= hi and abs(c.mean() - mean_c) <= MEAN_TOL * scale:
        return c.copy()
    if hi - lo <= MEAN_TOL * scale:
        return np.full(n, mean_c)

    def excess(mu: float) -> float:
        return float(np.clip(c + mu, lo, hi).mean()) - mean_c

    mu_lo, mu_hi = lo - float(c.max()), hi - float(c.min())
    for _ in range(_BISECTION_ITERS):
        mu = 0.5 * (mu_lo + mu_hi)
        gap = excess(mu)
        if abs(gap) <= MEAN_TOL * scale:
            break
        if gap < 0:
            mu_lo = mu
        else:
            mu_hi = mu
    x = np.clip(c + mu, lo, hi)

    # polish: exact shift on the free coordinates
    free = (x > lo) & (x < hi)
    if np.any(free):
        fixed_sum = float(x[~free].sum())
        mu_exact = (n * mean_c - fixed_sum - float(c[free].sum())) / int(free.sum())
        candidate = c[free] + mu_exact
        if candidate.min() >= lo and candidate.max() <= hi:
            x[free] = candidate
    return x


def _box_project(c, bounds: Sequence[float]) -> np.ndarray:
    return np.clip(np.asarray(c, dtype=float), float(bounds[0]), float(bounds[1]))


# =============================================================================
# PROBLEM / RESULT
# =============================================================================

@dataclass
class DesignProblem:
    layout: FibrilArray
    # frozen SurrogateModel: n_inputs, predict_one(c), input_gradient(c)
    predictor: object
    mean_c: float
    bounds: Tuple[float, float]
    n_starts: int = 100
    max_iters: int = 2000
    step_size: float = 0.05
    tolerance: float = 1e-7
    window: int = 5
    max_halvings: int = 20
    enforce_mean: bool = True
    init_style: str = "mixed"
    master_seed: int = 0
    discrepancy_threshold: float = DISCREPANCY_THRESHOLD

    def __post_init__(self):
        lo, hi = float(self.bounds[0]), float(self.bounds[1])
        if not lo < self.mean_c < hi:
            raise DesignError(f"design bounds must satisfy c_lo < mean_c < c_hi, got "
                              f"c_lo={lo}, mean_c={self.mean_c}, c_hi={hi}")
        if self.n_starts < 1:
            raise DesignError(f"n_starts must be >= 1, got {self.n_starts}")
        if self.max_iters < 0 or self.window < 1 or self.max_halvings < 0:
            raise DesignError("max_iters, window and max_halvings must be non-negative (window >= 1)")
        self.bounds = (lo, hi)

    def constrain(self, c) -> np.ndarray:
        if self.enforce_mean:
            return project(c, self.mean_c, self.bounds)
        return _box_project(c, self.bounds)


@dataclass
class DesignResult:
    c_opt: np.ndarray
    predicted_strength: float
    verified_strength: float
    start_id: int
    iterations: int
    converged: bool
    discrepancy: float = 0.0
    discrepancy_flag: bool = False
    rank: int = 0

    def summary(self) -> Dict:
        return {
            "rank": self.rank,
            "start_id": self.start_id,
            "predicted_strength": self.predicted_strength,
            "verified_strength": self.verified_strength,
            "discrepancy": self.discrepancy,
            "discrepancy_flag": self.discrepancy_flag,
            "iterations": self.iterations,
            "converged": self.converged,
            "mean_compliance": float(self.c_opt.mean()),
        }


@dataclass
class _Ascent:
    start_id: int
    c: np.ndarray
    predicted: float
    iterations: int
    converged: bool
    diverged: bool = False
    reason: str = ""
    trajectory: List[float] = field(default_factory=list)


# =============================================================================
# ASCENT
# =============================================================================

def _ascend(problem: DesignProblem, start_id: int) -> _Ascent:
    predictor = problem.predictor
    rng = rng_stream(problem.master_seed, DESIGN_STREAM, start_id)
    c = problem.constrain(sample_design(problem.layout, problem.mean_c, problem.bounds, problem.init_style, rng))
    y = float(predictor.predict_one(c))
    if not math.isfinite(y):
        return _Ascent(start_id, c, y, 0, False, diverged=True, reason="non-finite prediction at start")

    eta = problem.step_size
    trajectory = [y]
    deltas: List[float] = []
    iterations = 0
    converged = False
    for _ in range(problem.max_iters):
        g = np.asarray(predictor.input_gradient(c), dtype=float)
        if not np.all(np.isfinite(g)):
            return _Ascent(start_id, c, y, iterations, False, diverged=True,
                           reason=f"non-finite gradient after {iterations} steps", trajectory=trajectory)
        g_max = float(np.abs(g).max())
        if g_max == 0.0:
            converged = True
            break
        direction = problem.mean_c * g / g_max

        trial = eta
        accepted = False
        for _ in range(problem.max_halvings + 1):
            c_new = problem.constrain(c + trial * direction)
            y_new = float(predictor.predict_one(c_new))
            if math.isfinite(y_new) and y_new >= y:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            # no step size improves the prediction: stationary on the constraint set
            converged = True
            break

        deltas.append(abs(y_new - y))
        c, y = c_new, y_new
        trajectory.append(y)
        iterations += 1
        eta = min(problem.step_size, 2.0 * trial)
        if len(deltas) >= problem.window and max(deltas[-problem.window:]) < problem.tolerance:
            converged = True
            break

    return _Ascent(start_id, c, y, iterations, converged, trajectory=trajectory)


def verify(c, layout: FibrilArray, beta_x: float = 0.0, beta_y: float = 0.0) -> float:
    """Strength of design `c` from the exact detachment simulator."""
    return simulate_detachment(layout, c, beta_x=beta_x, beta_y=beta_y).strength


def _rank(results: List[DesignResult]) -> List[DesignResult]:
    ordered = sorted(results, key=lambda r: (-r.verified_strength, -r.predicted_strength, r.start_id))
    for position, result in enumerate(ordered, start=1):
        result.rank = position
    return ordered


def optimize(problem: DesignProblem, threads: Optional[int] = None) -> List[DesignResult]:
    """
    Multi-start projected gradient ascent on the frozen predictor.

    Start s draws its feasible initial point from rng_stream(master_seed,
    DESIGN_STREAM, s). Every start that did not diverge is verified with
    the simulator.

    Returns:
        Results ordered by verified strength (descending), then predicted
        strength (descending), then start id; `rank` starts at 1
    """
    n_inputs = getattr(problem.predictor, "n_inputs", None)
    if n_inputs != problem.layout.n_fibrils:
        raise ModelShapeError(f"predictor takes {n_inputs} inputs but the layout has "
                              f"{problem.layout.n_fibrils} fibrils")

    logger.info(f"[DESIGN] Running {problem.n_starts} starts on {problem.layout!r} "
                f"(mean C={problem.mean_c:.6g}, step={problem.step_size}, max_iters={problem.max_iters})")
    runs = parallel_map(lambda s: _ascend(problem, s), range(problem.n_starts), threads=threads, prefer="threads")

    finished = [r for r in runs if not r.diverged]
    if not finished:
        reasons = "; ".join(f"start {r.start_id}: {r.reason}" for r in runs[:5])
        raise DesignError(f"all {len(runs)} starts diverged ({reasons})")
    for r in runs:
        if r.diverged:
            logger.warning(f"[DESIGN] Start {r.start_id} dropped: {r.reason}")

    verified = parallel_map(lambda r: verify(r.c, problem.layout), finished, threads=threads, prefer="threads")

    results = []
    for run, strength in zip(finished, verified):
        discrepancy = run.predicted - strength
        results.append(DesignResult(
            c_opt=run.c,
            predicted_strength=run.predicted,
            verified_strength=strength,
            start_id=run.start_id,
            iterations=run.iterations,
            converged=run.converged,
            discrepancy=discrepancy,
            discrepancy_flag=abs(discrepancy) > problem.discrepancy_threshold,
        ))
    results = _rank(results)

    flagged = sum(r.discrepancy_flag for r in results)
    if flagged:
        logger.warning(f"[DESIGN] {flagged} of {len(results)} designs differ from the simulator by more than "
                       f"{problem.discrepancy_threshold}")
    best = results[0]
    logger.info(f"[DESIGN] Best verified strength {best.verified_strength:.4f} "
                f"(predicted {best.predicted_strength:.4f}, start {best.start_id}); "
                f"{sum(r.converged for r in results)}/{len(results)} converged")
    return results


# =============================================================================
# FEEDBACK
# =============================================================================

def feedback(dataset: Dataset, results: Sequence[DesignResult], k: int) -> Dataset:
    """
    Append the top-k verified designs to the dataset as feedback samples.

    Results are taken in rank order; a design closer than 1e-9 to an existing
    sample (or to one already added) is skipped and the next one is used.
    The labels are the verified strengths, exempt from the dataset ceiling.
    """
    if k <= 0 or not results:
        return dataset
    ordered = sorted(results, key=lambda r: (r.rank or 0, r.start_id))
    existing = dataset.designs
    added_c: List[np.ndarray] = []
    added_y: List[float] = []
    for result in ordered:
        if len(added_c) == k:
            break
        c = np.asarray(result.c_opt, dtype=float)
        pool = existing if not added_c else np.vstack([existing, np.array(added_c)])
        if pool.shape[0] and float(np.linalg.norm(pool - c, axis=1).min()) < DUPLICATE_TOL:
            logger.warning(f"[DESIGN] Skipping feedback design from start {result.start_id}: duplicate of an existing sample")
            continue
        added_c.append(c)
        added_y.append(float(result.verified_strength))

    if not added_c:
        return dataset
    logger.info(f"[DESIGN] Appending {len(added_c)} verified designs to the dataset ({dataset.n_samples} samples)")
    return dataset.extended(np.array(added_c), np.array(added_y), split_tag="train")


# =============================================================================
# RADIAL PROFILES
# =============================================================================

@dataclass
class ProfileReport:
    fibril_id: np.ndarray
    r_over_R: np.ndarray
    compliance: np.ndarray
    normalized: Optional[np.ndarray]
    inner_mean: Optional[float]
    outer_mean: Optional[float]
    spearman: Optional[float]

    @property
    def normalization_defined(self) -> bool:
        return self.normalized is not None

    @property
    def softer_periphery(self) -> bool:
        if self.inner_mean is None or self.outer_mean is None or self.spearman is None:
            return False
        return self.outer_mean > self.inner_mean and self.spearman > 0

    def rows(self) -> List[Tuple]:
        return [
            (int(i), float(r), float(c), None if self.normalized is None else float(z))
            for i, r, c, z in zip(
                self.fibril_id, self.r_over_R, self.compliance,
                self.normalized if self.normalized is not None else [None] * len(self.fibril_id),
            )
        ]

    def statement(self) -> str:
        if self.inner_mean is None or self.outer_mean is None:
            return "no fibrils on one side of the inner/outer split; periphery check not applicable"
        verdict = "softer periphery" if self.softer_periphery else "no softer periphery"
        rho = "undefined" if self.spearman is None else f"{self.spearman:.3f}"
        return (f"{verdict}: mean C over r/R > {OUTER_RADIUS} is {self.outer_mean:.6g}, "
                f"over r/R < {INNER_RADIUS} is {self.inner_mean:.6g}, Spearman(r/R, C) = {rho}")

    def summary(self) -> Dict:
        return {
            "normalization_defined": self.normalization_defined,
            "inner_mean": self.inner_mean,
            "outer_mean": self.outer_mean,
            "spearman": self.spearman,
            "softer_periphery": self.softer_periphery,
            "statement": self.statement(),
        }


def profile_report(design: Union[DesignResult, np.ndarray], layout: FibrilArray) -> ProfileReport:
    """
    Compliance against normalised radial position.

    Normalised compliance is (C - C_min)/(C_max - C_min); it is left
    undefined when every fibril has the same compliance. Inner and outer
    means use r/R < 0.2 and r/R > 0.8 on the raw compliances.
    """
    c = design.c_opt if isinstance(design, DesignResult) else design
    c = np.asarray(c, dtype=float).ravel()
    if c.shape[0] != layout.n_fibrils:
        raise ModelShapeError(f"design has {c.shape[0]} entries for {layout.n_fibrils} fibrils")

    rho = layout.radial_distance / layout.characteristic_radius
    span = float(c.max() - c.min())
    normalized = (c - c.min()) / span if span > 0 else None

    inner, outer = rho < INNER_RADIUS, rho > OUTER_RADIUS
    inner_mean = float(c[inner].mean()) if np.any(inner) else None
    outer_mean = float(c[outer].mean()) if np.any(outer) else None

    spearman = None
    if layout.n_fibrils > 1 and span > 0 and np.ptp(rho) > 0:
        value, _ = spearmanr(rho, c)
        spearman = float(value) if math.isfinite(value) else None

    return ProfileReport(
        fibril_id=np.arange(layout.n_fibrils),
        r_over_R=rho,
        compliance=c,
        normalized=normalized,
        inner_mean=inner_mean,
        outer_mean=outer_mean,
        spearman=spearman,
    )
