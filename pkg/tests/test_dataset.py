import numpy as np
import pytest

from logic import dataset as dataset_io
from logic.array_geometry import FibrilArray
from logic.contact_mechanics import simulate_detachment
from logic.dataset import default_bounds, generate, sample_design, split
from logic.errors import ArtifactParseError, DatasetError, MissingArtifactError, UnsupportedVersionError
from logic.runtime import rng_stream

MEAN_C = 20.0 / 3.0


@pytest.fixture
def tiny_dataset(small_circle):
    data = generate(small_circle, 12, MEAN_C, default_bounds(MEAN_C), filter_ceiling=1.01, master_seed=7)
    split(data, 0.25)
    return data


@pytest.mark.parametrize("style", ["iid_uniform", "radial_smooth", "field_smooth", "mixed"])
def test_sample_design_is_feasible(small_circle, style):
    lo, hi = default_bounds(MEAN_C)
    for k in range(20):
        c = sample_design(small_circle, MEAN_C, (lo, hi), style, rng_stream(1, 1, k))
        assert c.shape == (small_circle.n_fibrils,)
        assert c.mean() == pytest.approx(MEAN_C, abs=1e-9)
        assert c.min() >= lo and c.max() <= hi


def test_field_smooth_designs_respect_mirror_symmetry(small_circle):
    x, y = small_circle.x_hat, small_circle.y_hat
    mirror = [int(np.flatnonzero((np.abs(x + x[i]) < 1e-9) & (np.abs(y - y[i]) < 1e-9))[0])
              for i in range(small_circle.n_fibrils)]
    for k in range(10):
        c = sample_design(small_circle, MEAN_C, (1.0, 20.0), "field_smooth", rng_stream(2, 1, k))
        assert c == pytest.approx(c[mirror], abs=1e-9)
        assert c.mean() == pytest.approx(MEAN_C, abs=1e-9)


def test_equal_load_sharing_design_is_linear_in_exposure(small_circle):
    s = small_circle.neighbour_coupling()
    c = MEAN_C + s.mean() - s
    u = small_circle.exposure()
    assert c == pytest.approx(c.min() + (c.max() - c.min()) * u, abs=1e-9)
    assert simulate_detachment(small_circle, c).strength == pytest.approx(1.0, abs=1e-9)


def test_generate_counts_the_field_style(small_circle):
    data = generate(small_circle, 4, MEAN_C, (1.0, 20.0), filter_ceiling=1.01, master_seed=2, style="field_smooth")
    counts = data.stats["style_counts"]
    assert counts["field_smooth"] == 4
    assert counts["iid_uniform"] == counts["radial_smooth"] == 0


def test_sample_design_degenerate_cases(small_circle):
    c = sample_design(small_circle, MEAN_C, (MEAN_C, MEAN_C), "mixed", rng_stream(1, 1))
    assert np.all(c == MEAN_C)
    single = FibrilArray(np.zeros((1, 2)), 1.0, 5.0, 0.75)
    for style in ("iid_uniform", "radial_smooth", "field_smooth", "mixed"):
        assert sample_design(single, MEAN_C, default_bounds(MEAN_C), style, rng_stream(1, 1)).tolist() == [MEAN_C]


def test_sample_design_rejects_infeasible_bounds(small_circle):
    with pytest.raises(DatasetError):
        sample_design(small_circle, MEAN_C, (10.0, 20.0), "mixed", rng_stream(1, 1))
    with pytest.raises(DatasetError):
        sample_design(small_circle, MEAN_C, default_bounds(MEAN_C), "gaussian", rng_stream(1, 1))


def test_generate_without_ceiling_keeps_everything(tiny_dataset):
    assert tiny_dataset.n_samples == 12
    assert tiny_dataset.stats["candidates_drawn"] == 12
    assert tiny_dataset.stats["acceptance_rate"] == 1.0
    for c, y in zip(tiny_dataset.designs, tiny_dataset.strengths):
        assert simulate_detachment(tiny_dataset.layout, c).strength == y


def test_generate_filters_by_ceiling(small_circle):
    unfiltered = generate(small_circle, 20, MEAN_C, default_bounds(MEAN_C), filter_ceiling=1.01, master_seed=3)
    ceiling = float(np.median(unfiltered.strengths))
    data = generate(small_circle, 10, MEAN_C, default_bounds(MEAN_C), filter_ceiling=ceiling, master_seed=3)
    assert data.n_samples == 10
    assert np.all(data.strengths < ceiling)
    assert data.stats["candidates_drawn"] >= 10


def test_generate_is_deterministic_and_thread_independent(small_circle):
    a = generate(small_circle, 8, MEAN_C, default_bounds(MEAN_C), 0.9, master_seed=11, threads=1)
    b = generate(small_circle, 8, MEAN_C, default_bounds(MEAN_C), 0.9, master_seed=11, threads=2)
    assert np.array_equal(a.designs, b.designs)
    assert np.array_equal(a.strengths, b.strengths)


def test_generate_acceptance_floor(small_circle):
    with pytest.raises(DatasetError, match="ceiling"):
        generate(small_circle, 5, MEAN_C, default_bounds(MEAN_C), filter_ceiling=0.01, master_seed=1,
                 pilot_size=20)


def test_split_sizes():
    single = FibrilArray(np.zeros((1, 2)), 1.0, 5.0, 0.75)
    data = dataset_io.Dataset(single, np.full((5, 1), MEAN_C), np.ones(5), MEAN_C, (1.0, 10.0), 1.01, 4)
    assignment = split(data, 0.2)
    assert (assignment == "test").sum() == 1
    assert np.array_equal(split(data, 0.2), assignment)

    big = dataset_io.Dataset(single, np.full((2500, 1), MEAN_C), np.ones(2500), MEAN_C, (1.0, 10.0), 1.01, 4)
    assignment = split(big, 0.2)
    assert (assignment == "test").sum() == 500
    assert (assignment == "train").sum() == 2000


def test_save_load_round_trip(tmp_path, tiny_dataset):
    dataset_io.save(tiny_dataset, tmp_path / "dataset")
    loaded = dataset_io.load(tmp_path / "dataset", verify_fraction=1.0)
    assert np.array_equal(loaded.designs, tiny_dataset.designs)
    assert np.array_equal(loaded.strengths, tiny_dataset.strengths)
    assert np.array_equal(loaded.split_assignment, tiny_dataset.split_assignment)
    assert loaded.metadata() == tiny_dataset.metadata()


def test_same_seed_writes_identical_files(tmp_path, small_circle):
    for name in ("a", "b"):
        data = generate(small_circle, 6, MEAN_C, default_bounds(MEAN_C), 1.01, master_seed=5)
        split(data, 0.2)
        dataset_io.save(data, tmp_path / name)
    for filename in ("metadata.json", "samples.csv", "layout.csv"):
        assert (tmp_path / "a" / filename).read_bytes() == (tmp_path / "b" / filename).read_bytes()


def test_load_missing_dataset_names_the_stage(tmp_path):
    with pytest.raises(MissingArtifactError, match="dataset"):
        dataset_io.load(tmp_path / "nowhere")


def test_load_truncated_file(tmp_path, tiny_dataset):
    dataset_io.save(tiny_dataset, tmp_path / "d")
    samples = tmp_path / "d" / "samples.csv"
    lines = samples.read_text().splitlines()
    samples.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ArtifactParseError, match="truncated"):
        dataset_io.load(tmp_path / "d")


def test_load_bad_number_reports_location(tmp_path, tiny_dataset):
    dataset_io.save(tiny_dataset, tmp_path / "d")
    samples = tmp_path / "d" / "samples.csv"
    lines = samples.read_text().splitlines()
    fields = lines[3].split(",")
    fields[2] = "oops"
    lines[3] = ",".join(fields)
    samples.write_text("\n".join(lines) + "\n")
    with pytest.raises(ArtifactParseError) as info:
        dataset_io.load(tmp_path / "d")
    assert info.value.line == 4
    assert info.value.field == "c_2"


def test_load_rejects_other_versions(tmp_path, tiny_dataset):
    dataset_io.save(tiny_dataset, tmp_path / "d")
    meta = tmp_path / "d" / "metadata.json"
    meta.write_text(meta.read_text().replace('"format_version": 1', '"format_version": 99'))
    with pytest.raises(UnsupportedVersionError):
        dataset_io.load(tmp_path / "d")


def test_load_detects_tampered_label(tmp_path, tiny_dataset):
    tiny_dataset.strengths[0] += 0.01
    dataset_io.save(tiny_dataset, tmp_path / "d")
    with pytest.raises(DatasetError, match="label"):
        dataset_io.load(tmp_path / "d", verify_fraction=1.0)


def test_samples_view_matches_the_arrays(tiny_dataset):
    grown = tiny_dataset.extended(np.full((1, tiny_dataset.n_fibrils), MEAN_C), [0.9])
    samples = grown.samples
    assert len(samples) == 13
    assert np.array_equal(samples[4].c, grown.designs[4])
    assert samples[4].strength == grown.strengths[4]
    assert [s.feedback for s in samples] == [False] * 12 + [True]


def test_extended_marks_feedback(tiny_dataset):
    c = np.full((1, tiny_dataset.n_fibrils), MEAN_C)
    grown = tiny_dataset.extended(c, [0.9])
    assert grown.n_samples == tiny_dataset.n_samples + 1
    assert grown.feedback[-1] and not grown.feedback[:-1].any()
    assert grown.split_assignment[-1] == "train"
    assert grown.stats["feedback_samples"] == 1
    assert tiny_dataset.n_samples == 12
