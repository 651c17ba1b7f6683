"""
Plain-file outputs: detachment traces, force-deflection polylines, the
model-comparison table, design results, predicted-vs-actual scatter and
radial compliance profiles. Data only, no plotting.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from logic.array_geometry import FibrilArray
from logic.artifacts import parse_float_rows, read_csv, write_csv, write_json
from logic.contact_mechanics import DetachmentTrace
from logic.errors import ArtifactParseError
from logic.inverse_design import DesignResult, ProfileReport
from logic.model_selection import COMPARISON_HEADER, ComparisonRow, CvResult

logger = logging.getLogger(__name__)

TRACE_HEADER = ["event_index", "D_event", "force_before", "detached_id", "force_after", "cascade"]
POLYLINE_HEADER = ["D", "force"]
SCATTER_HEADER = ["sample", "actual", "predicted", "abs_error", "within_band"]
PROFILE_HEADER = ["fibril_id", "r_over_R", "C", "C_normalized"]
RANKED_HEADER = ["rank", "predicted", "verified"]
DESIGN_HEADER = ["fibril_id", "C"]
BAND = 0.03


def write_trace(trace: DetachmentTrace, out_dir, polyline: bool = True) -> List[Path]:
    out_dir = Path(out_dir)
    files = [write_csv(out_dir / "trace.csv", TRACE_HEADER, (
        (e.index, e.D_event, e.force_before, e.detached_id, e.force_after, e.cascade) for e in trace.events
    ))]
    if polyline:
        try:
            files.append(write_csv(out_dir / "force_deflection.csv", POLYLINE_HEADER, trace.polyline()))
        except OSError as e:
            logger.warning(f"[SIMULATE] Could not write force-deflection polyline: {e}")

    summary = trace.summary()
    summary.update({
        "method": trace.method,
        "n_events": len(trace.events),
        "cascade_events": sum(e.cascade for e in trace.events),
        "stiffness_rebuilds": trace.rebuilds,
        "force_at_zero": trace.force_at_zero,
        "first_detachment_D": trace.events[0].D_event if trace.events else None,
        "last_detachment_D": trace.events[-1].D_event if trace.events else None,
    })
    files.append(write_json(out_dir / "summary.json", summary))
    return files


def write_comparison(rows: Sequence[ComparisonRow], path) -> Path:
    return write_csv(path, COMPARISON_HEADER, (row.as_row() for row in rows))


def write_cv_table(cv: CvResult, path) -> Path:
    keys = list(cv.table[0].params)
    header = keys + [f"fold_{f}_mse" for f in range(cv.k)] + ["mean_mse", "n_parameters", "selected"]
    rows = (
        [cell.params[key] for key in keys] + cell.fold_mse + [cell.mean_mse, cell.n_parameters,
                                                              cell.params == cv.best_params]
        for cell in cv.table
    )
    return write_csv(path, header, rows)


def write_scatter(y_true, y_pred, path, band: float = BAND) -> float:
    """Predicted-vs-actual rows with a within-band flag; returns the within-band fraction."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    error = np.abs(y_pred - y_true)
    within = error <= band
    write_csv(path, SCATTER_HEADER, (
        (i, y_true[i], y_pred[i], error[i], bool(within[i])) for i in range(y_true.shape[0])
    ))
    return float(within.mean()) if within.size else 0.0


# =============================================================================
# DESIGNS
# =============================================================================

def design_file(out_dir, rank: int) -> Path:
    return Path(out_dir) / "designs" / f"rank_{rank:03d}.csv"


def write_design_results(results: Sequence[DesignResult], out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    files = [write_json(out_dir / "results.json", [r.summary() for r in results])]
    for r in results:
        files.append(write_csv(design_file(out_dir, r.rank), DESIGN_HEADER, enumerate(r.c_opt)))
    files.append(write_ranked([r.summary() for r in results], out_dir / "ranked_strength.csv"))
    return files


def write_ranked(entries: Sequence[Dict], path) -> Path:
    """Rank, predicted and verified strength from result summaries."""
    return write_csv(path, RANKED_HEADER, (
        (e["rank"], e["predicted_strength"], e["verified_strength"]) for e in entries
    ))


def read_design(path, n_fibrils: int, stage: Optional[str] = "design") -> np.ndarray:
    header, rows = read_csv(path, stage=stage)
    if header != DESIGN_HEADER:
        raise ArtifactParseError(str(path), f"expected header {','.join(DESIGN_HEADER)}", line=1)
    table = parse_float_rows(path, header, rows)
    if table.shape[0] != n_fibrils or not np.array_equal(table[:, 0], np.arange(n_fibrils)):
        raise ArtifactParseError(str(path), f"expected fibril ids 0..{n_fibrils - 1} in order")
    return table[:, 1]


def write_profile(report: ProfileReport, path) -> Path:
    return write_csv(path, PROFILE_HEADER, report.rows())


def profile_summaries(reports: Dict[int, ProfileReport]) -> List[Dict]:
    return [dict(rank=rank, **report.summary()) for rank, report in sorted(reports.items())]


def uniform_baseline(layout: FibrilArray, mean_c: float) -> np.ndarray:
    return np.full(layout.n_fibrils, float(mean_c))
