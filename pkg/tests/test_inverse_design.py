import numpy as np
import pytest

from logic.array_geometry import FibrilArray
from logic.dataset import default_bounds, generate, sample_design
from logic.errors import DesignError, ModelShapeError
from logic.inverse_design import (
    DesignProblem, DesignResult, _ascend, feedback, optimize, profile_report, project,
)
from logic.mlp import MlpModel
from logic.runtime import DESIGN_STREAM, rng_stream

MEAN_C = 20.0 / 3.0
BOUNDS = (1.0, 20.0)


class LinearPredictor:
    """y = w.c + b, in compliance units."""

    def __init__(self, w, b=0.0):
        self.w = np.asarray(w, dtype=float)
        self.b = b
        self.n_inputs = self.w.shape[0]

    def predict_one(self, c):
        return float(self.w @ np.asarray(c, dtype=float) + self.b)

    def input_gradient(self, c):
        return self.w.copy()


class BrokenPredictor(LinearPredictor):
    def predict_one(self, c):
        return float("nan")


def waterfill(w, mean_c, lo, hi):
    """Maximiser of w.c over the fixed-mean box: fill the largest weights first."""
    n = len(w)
    c = np.full(n, lo)
    budget = n * mean_c - n * lo
    for i in np.argsort(-np.asarray(w), kind="stable"):
        step = min(hi - lo, budget)
        c[i] += step
        budget -= step
    return c


def test_project_keeps_feasible_points():
    c = np.array([5.0, 6.0, 7.0])
    assert np.array_equal(project(c, 6.0, (1.0, 10.0)), c)


def test_project_shifts_when_the_box_is_inactive():
    assert project([1.0, 2.0, 3.0], 3.0, (0.0, 10.0)) == pytest.approx([2.0, 3.0, 4.0], abs=1e-12)


def test_project_with_an_active_bound():
    x = project([0.1, 5.0], 3.0, (0.5, 10.0))
    assert x == pytest.approx([0.55, 5.45], abs=1e-12)
    assert x.mean() == pytest.approx(3.0, abs=1e-12)


def test_project_random_points_are_feasible(rng):
    for _ in range(200):
        c = rng.normal(MEAN_C, 10.0, size=int(rng.integers(1, 40)))
        x = project(c, MEAN_C, BOUNDS)
        assert x.mean() == pytest.approx(MEAN_C, abs=1e-9)
        assert x.min() >= BOUNDS[0] and x.max() <= BOUNDS[1]


def test_project_degenerate_box():
    assert np.array_equal(project([1.0, 9.0], 4.0, (4.0, 4.0)), [4.0, 4.0])


def test_project_infeasible_bounds():
    with pytest.raises(DesignError):
        project([1.0, 2.0], 11.0, (0.5, 10.0))


def test_problem_rejects_bounds_not_bracketing_the_mean(small_circle):
    with pytest.raises(DesignError):
        DesignProblem(small_circle, LinearPredictor(np.ones(21)), MEAN_C, (MEAN_C, 20.0))


def test_linear_predictor_reaches_the_waterfill_vertex(small_circle, rng):
    w = rng.permutation(np.linspace(-1.0, 1.0, small_circle.n_fibrils))
    problem = DesignProblem(small_circle, LinearPredictor(w), MEAN_C, BOUNDS, n_starts=3, max_iters=2000,
                            master_seed=1)
    results = optimize(problem, threads=1)
    vertex = waterfill(w, MEAN_C, *BOUNDS)
    for result in results:
        assert result.converged
        assert result.c_opt == pytest.approx(vertex, abs=1e-6)
        assert result.predicted_strength == pytest.approx(w @ vertex, abs=1e-6)


def test_zero_iterations_returns_the_projected_start(small_circle):
    problem = DesignProblem(small_circle, LinearPredictor(np.ones(21)), MEAN_C, BOUNDS, n_starts=2, max_iters=0,
                            master_seed=4)
    results = optimize(problem, threads=1)
    for result in results:
        start = sample_design(small_circle, MEAN_C, BOUNDS, "mixed", rng_stream(4, DESIGN_STREAM, result.start_id))
        assert result.c_opt == pytest.approx(project(start, MEAN_C, BOUNDS), abs=1e-12)
        assert result.iterations == 0
        assert not result.converged


def mlp_predictor(rng, n):
    sizes = [n, 8, 8, 1]
    weights = [rng.normal(scale=0.5, size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.normal(scale=0.1, size=b) for b in sizes[1:]]
    return MlpModel(sizes, weights, biases, MEAN_C, MEAN_C, 0.6, 0.05)


def test_ascent_never_decreases_the_prediction(small_circle, rng):
    problem = DesignProblem(small_circle, mlp_predictor(rng, 21), MEAN_C, BOUNDS, max_iters=200, master_seed=2)
    for start in range(4):
        run = _ascend(problem, start)
        assert all(b >= a for a, b in zip(run.trajectory, run.trajectory[1:]))
        assert run.c.mean() == pytest.approx(MEAN_C, abs=1e-9)
        assert run.c.min() >= BOUNDS[0] and run.c.max() <= BOUNDS[1]


def test_box_only_ascent_leaves_the_mean_free(small_circle):
    problem = DesignProblem(small_circle, LinearPredictor(np.ones(21)), MEAN_C, BOUNDS, max_iters=500,
                            enforce_mean=False, master_seed=2)
    run = _ascend(problem, 0)
    assert run.c == pytest.approx(np.full(21, BOUNDS[1]))


def test_results_are_ranked_and_reproducible(small_circle, rng):
    predictor = mlp_predictor(rng, 21)
    problem = DesignProblem(small_circle, predictor, MEAN_C, BOUNDS, n_starts=6, max_iters=50, master_seed=8)
    a = optimize(problem, threads=1)
    b = optimize(problem, threads=3)
    assert [r.rank for r in a] == list(range(1, 7))
    keys = [(-r.verified_strength, -r.predicted_strength, r.start_id) for r in a]
    assert keys == sorted(keys)
    assert [r.start_id for r in a] == [r.start_id for r in b]
    for x, y in zip(a, b):
        assert np.array_equal(x.c_opt, y.c_opt)
    for r in a:
        assert r.discrepancy == pytest.approx(r.predicted_strength - r.verified_strength)
        assert r.discrepancy_flag == (abs(r.discrepancy) > 0.03)
        assert r.summary()["mean_compliance"] == pytest.approx(MEAN_C)


def test_predictor_width_must_match_the_layout(small_circle):
    problem = DesignProblem(small_circle, LinearPredictor(np.ones(5)), MEAN_C, BOUNDS, n_starts=1)
    with pytest.raises(ModelShapeError):
        optimize(problem)


def test_all_starts_diverged(small_circle):
    problem = DesignProblem(small_circle, BrokenPredictor(np.ones(21)), MEAN_C, BOUNDS, n_starts=3)
    with pytest.raises(DesignError, match="diverged"):
        optimize(problem, threads=1)


@pytest.fixture
def feedback_dataset(small_circle):
    return generate(small_circle, 5, MEAN_C, default_bounds(MEAN_C), filter_ceiling=1.01, master_seed=2)


def result_for(c, rank, strength=0.8):
    return DesignResult(c_opt=np.asarray(c, dtype=float), predicted_strength=strength, verified_strength=strength,
                        start_id=rank, iterations=1, converged=True, rank=rank)


def test_feedback_with_k_zero_is_a_no_op(feedback_dataset):
    results = [result_for(np.full(21, MEAN_C), 1)]
    assert feedback(feedback_dataset, results, 0) is feedback_dataset


def test_feedback_appends_top_k(feedback_dataset):
    results = [result_for(np.full(21, MEAN_C) + 0.1 * i * np.sign(np.arange(21) - 10), i + 1, 0.9 - 0.1 * i)
               for i in range(3)]
    grown = feedback(feedback_dataset, results, 2)
    assert grown.n_samples == 7
    assert grown.strengths[-2:] == pytest.approx([0.9, 0.8])
    assert grown.feedback[-2:].all()


def test_feedback_skips_duplicates(feedback_dataset):
    duplicate = result_for(feedback_dataset.designs[0], 1)
    fresh = result_for(np.full(21, MEAN_C), 2, 0.7)
    grown = feedback(feedback_dataset, [duplicate, fresh], 1)
    assert grown.n_samples == 6
    assert np.array_equal(grown.designs[-1], fresh.c_opt)
    assert grown.strengths[-1] == 0.7


def test_profile_of_a_uniform_design(small_circle):
    report = profile_report(np.full(21, MEAN_C), small_circle)
    assert not report.normalization_defined
    assert report.spearman is None
    assert not report.softer_periphery
    assert all(row[3] is None for row in report.rows())


def test_profile_of_a_single_fibril():
    single = FibrilArray(np.zeros((1, 2)), 1.0, 5.0, 0.75)
    report = profile_report(np.array([MEAN_C]), single)
    assert report.r_over_R.tolist() == [0.0]
    assert report.inner_mean == MEAN_C and report.outer_mean is None
    assert "not applicable" in report.statement()


def test_profile_detects_a_softer_periphery(small_circle):
    c = project(2.0 + small_circle.radial_distance, MEAN_C, BOUNDS)
    report = profile_report(c, small_circle)
    assert report.normalization_defined
    assert report.normalized.min() == 0.0 and report.normalized.max() == 1.0
    assert report.spearman == pytest.approx(1.0)
    assert report.softer_periphery
    assert report.summary()["softer_periphery"]

    reversed_report = profile_report(project(12.0 - small_circle.radial_distance, MEAN_C, BOUNDS), small_circle)
    assert not reversed_report.softer_periphery


def test_profile_width_mismatch(small_circle):
    with pytest.raises(ModelShapeError):
        profile_report(np.ones(3), small_circle)
