"""
Labelled training data: random compliance distributions at a fixed mean,
each labelled with its simulated adhesive strength.

Candidate k of a dataset always uses the generator
rng_stream(master_seed, DATASET_STREAM, k), so labelling can be spread over
workers and the accepted samples (and the rejection sequence) only depend
on the master seed.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from logic.array_geometry import FibrilArray, export_layout_csv, load_layout_csv
from logic.artifacts import parse_float_rows, read_csv, read_json, write_csv, write_json
from logic.contact_mechanics import simulate_detachment
from logic.errors import ArtifactParseError, DatasetError, UnsupportedVersionError
from logic.runtime import DATASET_STREAM, SPLIT_STREAM, parallel_map, resolve_threads, rng_stream

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
STYLES = ("iid_uniform", "radial_smooth", "field_smooth", "mixed")
MEAN_TOL = 1e-9
LABEL_TOL = 1e-9


def default_bounds(mean_c: float) -> Tuple[float, float]:
    return mean_c / 10.0, mean_c * 10.0


def _check_bounds(mean_c: float, bounds: Sequence[float]) -> Tuple[float, float]:
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (0 < lo <= mean_c <= hi):
        raise DatasetError(f"infeasible sampling bounds: need 0 < c_lo <= mean_c <= c_hi, got "
                           f"c_lo={lo}, mean_c={mean_c}, c_hi={hi}")
    return lo, hi


def _smooth_profile(coordinate: np.ndarray, mean_c: float, lo: float, hi: float,
                    rng: np.random.Generator) -> np.ndarray:
    # cubic in a [0, 1] coordinate with random coefficients, mapped log-symmetrically around the mean
    coeffs = rng.normal(size=4)
    p = np.polyval(coeffs, coordinate)
    p = p - p.mean()
    span = np.abs(p).max()
    z = p / span if span > 0 else np.zeros_like(p)
    amplitude = rng.uniform(0.0, 0.5 * math.log(hi / lo))
    return np.clip(mean_c * np.exp(amplitude * z), lo, hi)


def _draw(layout: FibrilArray, mean_c: float, lo: float, hi: float, style: str,
          rng: np.random.Generator) -> Tuple[np.ndarray, str]:
    from logic.inverse_design import project

    if style not in STYLES:
        raise DatasetError(f"unknown sampling style '{style}', expected one of {', '.join(STYLES)}")
    if style == "mixed":
        style = "iid_uniform" if rng.random() < 0.5 else "radial_smooth"

    n = layout.n_fibrils
    if n == 1 or hi - lo <= MEAN_TOL * mean_c:
        return np.full(n, float(mean_c)), style

    if style == "iid_uniform":
        raw = rng.uniform(lo, hi, size=n)
    elif style == "radial_smooth":
        raw = _smooth_profile(layout.radial_distance / layout.characteristic_radius, mean_c, lo, hi, rng)
    else:
        raw = _smooth_profile(layout.exposure(), mean_c, lo, hi, rng)
    return project(raw, mean_c, (lo, hi)), style


def sample_design(layout: FibrilArray, mean_c: float, bounds: Sequence[float], style: str,
                  rng_stream: np.random.Generator) -> np.ndarray:
    """
    Draw one random design with entries in bounds and mean exactly mean_c.

    Args:
        layout: array the design is for
        mean_c: fixed average compliance
        bounds: (c_lo, c_hi)
        style: iid_uniform, radial_smooth, field_smooth (smooth in neighbour
            exposure) or mixed (coin flip between iid_uniform and radial_smooth)
        rng_stream: generator owned by this sample

    Returns:
        Compliance vector of length N
    """
    lo, hi = _check_bounds(mean_c, bounds)
    return _draw(layout, mean_c, lo, hi, style, rng_stream)[0]


@dataclass
class Sample:
    c: np.ndarray
    strength: float
    feedback: bool = False


class Dataset:
    def __init__(
        self,
        layout: FibrilArray,
        designs: np.ndarray,
        strengths: np.ndarray,
        mean_compliance: float,
        bounds: Tuple[float, float],
        filter_ceiling: float,
        master_seed: int,
        style: str = "mixed",
        split_assignment: Optional[np.ndarray] = None,
        feedback: Optional[np.ndarray] = None,
        stats: Optional[Dict] = None,
    ):
        self.layout = layout
        self.designs = np.asarray(designs, dtype=float).reshape(-1, layout.n_fibrils)
        self.strengths = np.asarray(strengths, dtype=float).ravel()
        self.mean_compliance = float(mean_compliance)
        self.bounds = (float(bounds[0]), float(bounds[1]))
        self.filter_ceiling = float(filter_ceiling)
        self.master_seed = int(master_seed)
        self.style = style
        self.split_assignment = None if split_assignment is None else np.asarray(split_assignment, dtype="<U5")
        n = self.n_samples
        self.feedback = np.zeros(n, dtype=bool) if feedback is None else np.asarray(feedback, dtype=bool)
        self.stats = dict(stats or {})
        if self.strengths.shape[0] != n or self.feedback.shape[0] != n:
            raise DatasetError("designs, strengths and feedback flags disagree in length")

    @property
    def n_samples(self) -> int:
        return self.designs.shape[0]

    @property
    def n_fibrils(self) -> int:
        return self.layout.n_fibrils

    @property
    def samples(self) -> List[Sample]:
        return [Sample(c=self.designs[i], strength=float(self.strengths[i]), feedback=bool(self.feedback[i]))
                for i in range(self.n_samples)]

    def _mask(self, tag: str) -> np.ndarray:
        if self.split_assignment is None:
            raise DatasetError("dataset has no train/test split; call split() first")
        return self.split_assignment == tag

    def train_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        mask = self._mask("train")
        return self.designs[mask], self.strengths[mask]

    def test_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        mask = self._mask("test")
        return self.designs[mask], self.strengths[mask]

    def extended(self, designs: np.ndarray, strengths: np.ndarray, split_tag: str = "train") -> "Dataset":
        """New dataset with extra feedback samples appended (exempt from the ceiling)."""
        designs = np.asarray(designs, dtype=float).reshape(-1, self.n_fibrils)
        strengths = np.asarray(strengths, dtype=float).ravel()
        split_assignment = None
        if self.split_assignment is not None:
            split_assignment = np.concatenate([self.split_assignment, np.full(len(strengths), split_tag, dtype="<U5")])
        stats = dict(self.stats)
        stats["feedback_samples"] = int(self.feedback.sum()) + len(strengths)
        return Dataset(
            self.layout,
            np.vstack([self.designs, designs]),
            np.concatenate([self.strengths, strengths]),
            self.mean_compliance, self.bounds, self.filter_ceiling, self.master_seed, self.style,
            split_assignment=split_assignment,
            feedback=np.concatenate([self.feedback, np.ones(len(strengths), dtype=bool)]),
            stats=stats,
        )

    def metadata(self) -> Dict:
        return {
            "format_version": FORMAT_VERSION,
            "layout": self.layout.descriptor(),
            "mean_compliance": self.mean_compliance,
            "bounds": list(self.bounds),
            "filter_ceiling": self.filter_ceiling,
            "master_seed": self.master_seed,
            "style": self.style,
            "n_samples": self.n_samples,
            "n_fibrils": self.n_fibrils,
            "split": None if self.split_assignment is None else self.split_assignment.tolist(),
            "feedback_indices": np.flatnonzero(self.feedback).tolist(),
            "stats": self.stats,
        }


# =============================================================================
# GENERATION
# =============================================================================

def _label_chunk(layout: FibrilArray, mean_c: float, lo: float, hi: float, style: str,
                 master_seed: int, indices: Sequence[int]) -> List[Tuple[np.ndarray, str, float]]:
    out = []
    for k in indices:
        c, used = _draw(layout, mean_c, lo, hi, style, rng_stream(master_seed, DATASET_STREAM, k))
        out.append((c, used, simulate_detachment(layout, c).strength))
    return out


def generate(
    layout: FibrilArray,
    n_target: int,
    mean_c: float,
    bounds: Sequence[float],
    filter_ceiling: float,
    master_seed: int,
    style: str = "mixed",
    acceptance_floor: float = 0.01,
    pilot_size: int = 200,
    threads: Optional[int] = None,
) -> Dataset:
    """
    Draw candidates in index order, label each with the exact simulator and
    keep those with strength below `filter_ceiling` until n_target are kept.

    Raises DatasetError when fewer than `acceptance_floor` of the first
    `pilot_size` candidates pass the filter.
    """
    if n_target < 1:
        raise DatasetError(f"n_target must be >= 1, got {n_target}")
    lo, hi = _check_bounds(mean_c, bounds)
    if style not in STYLES:
        raise DatasetError(f"unknown sampling style '{style}', expected one of {', '.join(STYLES)}")

    n_jobs = resolve_threads(threads)
    chunk = 32
    batch = chunk * n_jobs

    designs, strengths = [], []
    style_counts = {s: 0 for s in STYLES if s != "mixed"}
    drawn = 0
    last_accepted = -1
    next_index = 0
    logger.info(f"[DATASET] Labelling candidates for {n_target} samples on {layout!r} "
                f"(mean C={mean_c:.6g}, bounds=[{lo:.6g}, {hi:.6g}], ceiling={filter_ceiling})")

    while len(designs) < n_target:
        indices = list(range(next_index, next_index + batch))
        next_index += batch
        chunks = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]
        labelled = parallel_map(
            lambda idx: _label_chunk(layout, mean_c, lo, hi, style, master_seed, idx),
            chunks, threads=n_jobs, prefer="threads",
        )
        for k, (c, used, strength) in zip(indices, (item for part in labelled for item in part)):
            drawn += 1
            if strength < filter_ceiling:
                designs.append(c)
                strengths.append(strength)
                style_counts[used] += 1
                last_accepted = k
                if len(designs) == n_target:
                    break
            if drawn == pilot_size and len(designs) / drawn < acceptance_floor:
                raise DatasetError(
                    f"only {len(designs)} of the first {drawn} candidates fall below the ceiling "
                    f"{filter_ceiling}; widen the bounds or change the sampling style"
                )

    n_candidates = last_accepted + 1
    labels = np.array(strengths)
    stats = {
        "candidates_drawn": n_candidates,
        "acceptance_rate": n_target / n_candidates,
        "label_min": float(labels.min()),
        "label_mean": float(labels.mean()),
        "label_max": float(labels.max()),
        "style_counts": style_counts,
        "feedback_samples": 0,
    }
    logger.info(f"[DATASET] Accepted {n_target} of {n_candidates} candidates "
                f"(rate {stats['acceptance_rate']:.3f}), labels in [{stats['label_min']:.4f}, {stats['label_max']:.4f}]")
    return Dataset(layout, np.array(designs), labels, mean_c, (lo, hi), filter_ceiling, master_seed,
                   style=style, stats=stats)


def split(dataset: Dataset, test_fraction: float = 0.2, seed: Optional[int] = None) -> np.ndarray:
    """
    Random train/test assignment with round(n * test_fraction) test samples.

    The assignment is stored on the dataset and returned.
    """
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = dataset.n_samples
    n_test = int(math.floor(n * test_fraction + 0.5))
    rng = rng_stream(dataset.master_seed if seed is None else seed, SPLIT_STREAM)
    test_idx = rng.permutation(n)[:n_test]
    assignment = np.full(n, "train", dtype="<U5")
    assignment[test_idx] = "test"
    dataset.split_assignment = assignment
    return assignment


# =============================================================================
# PERSISTENCE
# =============================================================================

def save(dataset: Dataset, path) -> List[Path]:
    """Write metadata.json, samples.csv and layout.csv under directory `path`."""
    path = Path(path)
    header = [f"c_{i}" for i in range(dataset.n_fibrils)] + ["strength"]
    rows = (list(dataset.designs[i]) + [dataset.strengths[i]] for i in range(dataset.n_samples))
    return [
        write_json(path / "metadata.json", dataset.metadata()),
        write_csv(path / "samples.csv", header, rows),
        export_layout_csv(dataset.layout, path / "layout.csv"),
    ]


def load(path, verify_fraction: float = 0.01, stage: Optional[str] = "dataset") -> Dataset:
    """
    Read a dataset directory written by save().

    Args:
        path: dataset directory
        verify_fraction: share of samples re-simulated to confirm their labels
        stage: stage name used in "run stage X first" errors

    Returns:
        Dataset equal field-for-field to the one saved
    """
    path = Path(path)
    meta = read_json(path / "metadata.json", stage=stage)
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path / 'metadata.json'}: dataset format version {version} "
                                      f"is not supported (expected {FORMAT_VERSION})")
    try:
        n_fibrils = int(meta["n_fibrils"])
        n_samples = int(meta["n_samples"])
        descriptor = meta["layout"]
        mean_c = float(meta["mean_compliance"])
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactParseError(str(path / "metadata.json"), f"missing or invalid field: {e}")

    layout = load_layout_csv(path / "layout.csv", layout_kind=descriptor.get("layout_kind", "custom"),
                             shape_param=descriptor.get("shape_param"), spacing=descriptor.get("spacing"))
    if layout.n_fibrils != n_fibrils:
        raise ArtifactParseError(str(path / "layout.csv"), f"layout has {layout.n_fibrils} fibrils, metadata says {n_fibrils}")

    csv_path = path / "samples.csv"
    header, rows = read_csv(csv_path, stage=stage)
    expected = [f"c_{i}" for i in range(n_fibrils)] + ["strength"]
    if header != expected:
        raise ArtifactParseError(str(csv_path), f"header does not match {n_fibrils} fibrils", line=1)
    if len(rows) != n_samples:
        raise ArtifactParseError(str(csv_path), f"truncated: {len(rows)} rows, metadata says {n_samples}",
                                 line=len(rows) + 1)
    table = parse_float_rows(csv_path, header, rows)

    split_assignment = meta.get("split")
    feedback = np.zeros(n_samples, dtype=bool)
    feedback[np.asarray(meta.get("feedback_indices", []), dtype=int)] = True
    dataset = Dataset(
        layout, table[:, :-1], table[:, -1], mean_c, tuple(meta["bounds"]), meta["filter_ceiling"],
        meta["master_seed"], style=meta.get("style", "mixed"),
        split_assignment=None if split_assignment is None else np.array(split_assignment, dtype="<U5"),
        feedback=feedback, stats=meta.get("stats"),
    )

    means = dataset.designs.mean(axis=1)
    bad = np.flatnonzero(np.abs(means - mean_c) > MEAN_TOL * max(1.0, mean_c))
    if len(bad):
        raise DatasetError(f"{csv_path}: sample {bad[0]} has mean compliance {means[bad[0]]!r}, expected {mean_c!r}")

    if verify_fraction > 0 and n_samples:
        n_check = min(n_samples, int(math.ceil(verify_fraction * n_samples)))
        for i in np.unique(np.linspace(0, n_samples - 1, n_check).round().astype(int)):
            strength = simulate_detachment(layout, dataset.designs[i]).strength
            if abs(strength - dataset.strengths[i]) > LABEL_TOL:
                raise DatasetError(f"{csv_path}: stored label of sample {i} ({dataset.strengths[i]!r}) "
                                   f"does not match the simulator ({strength!r})")
    logger.info(f"[DATASET] Loaded {n_samples} samples from {path}")
    return dataset
