"""
Compliance assembly and displacement-controlled detachment.

Dimensionless system (loads in units of the pull-off force f_c, tip
displacements in units of d0 = f_c/(E* pi a)):

    d_i/d0 = sum_j C_ij f_j/f_c        C_ij = a/r_ij                   (i != j)
                                       C_ii = 16/(3 pi)(a/a_i) + C_i
    f_i/f_c = sum_j K_ij d_j/d0        K = C^-1 over attached fibrils

A fibril detaches when its load reaches 1. Between detachments every load is
affine in the separation D, so the event-driven solver jumps straight to the
next crossing instead of stepping D.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from config.settings import settings
from logic.array_geometry import FibrilArray
from logic.errors import AssemblyError, NonDetachingError, SimulationError

logger = logging.getLogger(__name__)

# absolute slack on the f_i/f_c = 1 detachment condition
LOAD_TOL = 1e-12
# relative slack when two fibrils reach the detachment condition at the same D
TIE_RTOL = 1e-12
_PIVOT_TOL = 1e-12

DesignVector = np.ndarray


def check_design(design, n_fibrils: int) -> DesignVector:
    c = np.asarray(design, dtype=float).ravel()
    if c.shape[0] != n_fibrils:
        raise AssemblyError(f"design has {c.shape[0]} compliances for {n_fibrils} fibrils")
    if not np.all(np.isfinite(c)) or np.any(c <= 0):
        raise AssemblyError("fibril compliances must be positive and finite")
    return c


@dataclass
class LoadCase:
    """
    Prescribed separation D = d_bar/d0 plus tilt.

    Tip displacement of fibril j is D + beta_x x_j + beta_y y_j, with
    beta = tan(theta) a/d0 for a physical misalignment angle theta.
    """
    D: float = 0.0
    beta_x: float = 0.0
    beta_y: float = 0.0

    def tip_displacements(self, array: FibrilArray) -> np.ndarray:
        return self.D + self.beta_x * array.x_hat + self.beta_y * array.y_hat


def _invert_spd(C: np.ndarray, context: str = "") -> np.ndarray:
    if C.shape[0] == 0:
        return np.empty((0, 0))
    try:
        factor = scipy.linalg.cho_factor(C, lower=True, check_finite=True)
        K = scipy.linalg.cho_solve(factor, np.eye(C.shape[0]))
    except (np.linalg.LinAlgError, ValueError) as e:
        raise AssemblyError(f"compliance matrix is not positive definite{context}: {e}")
    return 0.5 * (K + K.T)


class ComplianceSystem:
    """
    Compliance matrix C of the whole array and the stiffness K of the
    currently attached fibrils.

    K is kept in a working order (`_order`) so that removing a fibril is a
    swap to the last slot plus an in-place Schur downdate of the leading
    block; no N x N copies are made per detachment.
    """

    def __init__(self, C: np.ndarray, K: np.ndarray):
        self.C = C
        self.n_total = C.shape[0]
        self._K = np.array(K, dtype=float, copy=True)
        self._order = np.arange(self.n_total)
        self._m = self.n_total
        # C_sub @ 1 in working order, for the O(n^2) health check K (C 1) = 1
        self._c_rowsum = C.sum(axis=1)
        self.rebuilds = 0

    # --- views in working order -------------------------------------------

    @property
    def n_attached(self) -> int:
        return self._m

    @property
    def working_ids(self) -> np.ndarray:
        return self._order[:self._m]

    @property
    def working_K(self) -> np.ndarray:
        return self._K[:self._m, :self._m]

    # --- views in fibril index order --------------------------------------

    @property
    def attached_ids(self) -> np.ndarray:
        return np.sort(self.working_ids)

    @property
    def attached(self) -> np.ndarray:
        mask = np.zeros(self.n_total, dtype=bool)
        mask[self.working_ids] = True
        return mask

    @property
    def K(self) -> np.ndarray:
        perm = np.argsort(self.working_ids)
        return self.working_K[np.ix_(perm, perm)]

    def attached_compliance(self) -> np.ndarray:
        ids = self.attached_ids
        return self.C[np.ix_(ids, ids)]

    def residual(self) -> float:
        """||K C - I||_inf on the attached set (O(n^3), diagnostics only)."""
        if self._m == 0:
            return 0.0
        ids = self.working_ids
        R = self.working_K @ self.C[np.ix_(ids, ids)] - np.eye(self._m)
        return float(np.abs(R).sum(axis=1).max())

    # --- detachment ---------------------------------------------------------

    def detach_local(self, local: int, method: str = "downdate") -> int:
        """Remove the fibril at working position `local`; returns its fibril id."""
        m = self._m
        last = m - 1
        K = self._K
        if local != last:
            K[[local, last], :m] = K[[last, local], :m]
            K[:m, [local, last]] = K[:m, [last, local]]
            self._order[[local, last]] = self._order[[last, local]]
            self._c_rowsum[[local, last]] = self._c_rowsum[[last, local]]
        removed = int(self._order[last])
        self._m = last
        if last == 0:
            return removed

        remaining = self._order[:last]
        self._c_rowsum[:last] -= self.C[remaining, removed]

        if method == "reinvert":
            self.rebuild()
            return removed

        kii = K[last, last]
        if abs(kii) < _PIVOT_TOL * max(1.0, float(np.abs(K[:m, last]).max())):
            logger.warning(f"Stiffness pivot {kii:.3e} too small for downdate, re-factorizing")
            self.rebuild()
            return removed

        k = K[:last, last].copy()
        K[:last, :last] -= np.outer(k, k / kii)

        drift = K[:last, :last] @ self._c_rowsum[:last] - 1.0
        if float(np.abs(drift).max()) > settings.FIBRIL_RESIDUAL_TOL:
            logger.warning(f"Stiffness drifted after {self.n_total - last} removals, re-factorizing")
            self.rebuild()
        return removed

    def rebuild(self):
        ids = self.working_ids
        C_sub = self.C[np.ix_(ids, ids)]
        self._K[:self._m, :self._m] = _invert_spd(C_sub, f" for attached set of {self._m}")
        self._c_rowsum[:self._m] = C_sub.sum(axis=1)
        self.rebuilds += 1


def assemble(array: FibrilArray, design) -> ComplianceSystem:
    c = check_design(design, array.n_fibrils)
    C = array.coupling_matrix() + np.diag(c)
    K = _invert_spd(C, f" for {array!r} (design min {c.min():.4g}, max {c.max():.4g})")
    return ComplianceSystem(C, K)


def downdate_stiffness(K: np.ndarray, i: int, compliance: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Inverse of the compliance submatrix with row/column i deleted, from K.

    K' = K_rr - K_ri K_ir / K_ii. When K_ii is too small the deleted
    compliance matrix is re-inverted instead (requires `compliance`).
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if n == 1:
        return np.empty((0, 0))
    keep = np.arange(n) != i
    kii = K[i, i]
    if abs(kii) < _PIVOT_TOL * max(1.0, float(np.abs(K[:, i]).max())):
        if compliance is None:
            raise AssemblyError(f"stiffness pivot K[{i},{i}] = {kii:.3e} is too small to downdate")
        return _invert_spd(np.asarray(compliance)[np.ix_(keep, keep)])
    return K[np.ix_(keep, keep)] - np.outer(K[keep, i], K[i, keep]) / kii


def fibril_loads(system: ComplianceSystem, load: LoadCase, array: FibrilArray) -> np.ndarray:
    """f_i/f_c of the attached fibrils, in ascending fibril index order."""
    ids = system.working_ids
    d = load.tip_displacements(array)[ids]
    loads = system.working_K @ d
    return loads[np.argsort(ids)]


def total_force(loads, n_fibrils: int) -> float:
    """F/(N f_c) with N the original fibril count."""
    loads = np.asarray(loads, dtype=float)
    if loads.size == 0:
        return 0.0
    return float(loads.sum()) / n_fibrils


# =============================================================================
# DETACHMENT PROCESS
# =============================================================================

@dataclass
class DetachmentEvent:
    index: int
    D_event: float
    force_before: float
    force_after: float
    detached_id: int
    cascade: bool


@dataclass
class DetachmentTrace:
    n_fibrils: int
    beta_x: float = 0.0
    beta_y: float = 0.0
    events: List[DetachmentEvent] = field(default_factory=list)
    method: str = "event"
    rebuilds: int = 0
    # F/(N f_c) at D = 0, non-zero only under tilt
    force_at_zero: float = 0.0

    @property
    def strength(self) -> float:
        """Peak F_c/(N f_c) over the process."""
        if not self.events:
            return 0.0
        return min(1.0, max(e.force_before for e in self.events))

    @property
    def detachment_order(self) -> List[int]:
        return [e.detached_id for e in self.events]

    def detachment_D(self) -> np.ndarray:
        """Separation at which each fibril (by index) detached."""
        out = np.full(self.n_fibrils, np.nan)
        for e in self.events:
            out[e.detached_id] = e.D_event
        return out

    def polyline(self) -> List[Tuple[float, float]]:
        """Force-deflection curve (D, F/(N f_c)) from D = 0 down to F = 0."""
        if not self.events:
            return [(0.0, self.force_at_zero)]
        first = self.events[0]
        points = [(0.0, self.force_at_zero)] if first.D_event > 0 else []
        for e in self.events:
            points.append((e.D_event, e.force_before))
            points.append((e.D_event, e.force_after))
        return points

    def summary(self) -> Dict:
        return {
            "n_fibrils": self.n_fibrils,
            "strength": self.strength,
            "beta_x": self.beta_x,
            "beta_y": self.beta_y,
        }


def _pick_lowest_id(candidates: np.ndarray, ids: np.ndarray) -> int:
    local = np.flatnonzero(candidates)
    return int(local[np.argmin(ids[local])])


def _start_trace(array: FibrilArray, design, beta_x: float, beta_y: float, method: str,
                 kind: str) -> Tuple[ComplianceSystem, np.ndarray, DetachmentTrace]:
    if method not in ("downdate", "reinvert"):
        raise SimulationError(f"unknown stiffness update method '{method}'")
    system = assemble(array, design)
    tilt = beta_x * array.x_hat + beta_y * array.y_hat
    trace = DetachmentTrace(n_fibrils=array.n_fibrils, beta_x=beta_x, beta_y=beta_y, method=kind,
                            force_at_zero=float(np.minimum(system.working_K @ tilt[system.working_ids], 1.0).sum())
                            / array.n_fibrils)
    return system, tilt, trace


def _next_crossing(slope: np.ndarray, offset: np.ndarray, n_attached: int,
                   beta_x: float, beta_y: float) -> np.ndarray:
    """Separation at which each attached fibril reaches f_c (inf when its load never rises)."""
    rising = slope > 0
    if not np.any(rising):
        raise NonDetachingError(
            f"non-detaching configuration: {n_attached} attached fibrils "
            f"carry loads that never reach f_c (beta_x={beta_x}, beta_y={beta_y})"
        )
    crossing = np.full(slope.shape, np.inf)
    crossing[rising] = (1.0 - offset[rising]) / slope[rising]
    return crossing


def _finish(trace: DetachmentTrace, system: ComplianceSystem) -> DetachmentTrace:
    trace.rebuilds = system.rebuilds
    logger.debug(f"Detachment of {trace.n_fibrils} fibrils ({trace.method}) finished: "
                 f"strength {trace.strength:.6f}, {system.rebuilds} re-factorizations")
    return trace


def _run_detachment(array: FibrilArray, design, beta_x: float, beta_y: float, method: str) -> DetachmentTrace:
    system, tilt, trace = _start_trace(array, design, beta_x, beta_y, method, "event")
    n = array.n_fibrils

    D = 0.0
    last_D = None
    while system.n_attached:
        ids = system.working_ids
        K = system.working_K
        slope = K.sum(axis=1)
        offset = K @ tilt[ids]
        loads = slope * D + offset

        over = loads >= 1.0 - LOAD_TOL
        if np.any(over):
            # cascade at fixed D: largest violator first
            peak = float(loads[over].max())
            local = _pick_lowest_id(over & (loads >= peak - TIE_RTOL * max(1.0, abs(peak))), ids)
        else:
            crossing = _next_crossing(slope, offset, system.n_attached, beta_x, beta_y)
            D_next = float(crossing.min())
            tied = crossing <= D_next + TIE_RTOL * max(1.0, abs(D_next))
            local = _pick_lowest_id(tied, ids)
            D = max(D, D_next)
            loads = slope * D + offset
            # every fibril reaching f_c at this D carries exactly f_c
            loads[tied] = 1.0

        force_before = float(np.minimum(loads, 1.0).sum()) / n
        removed = system.detach_local(local, method=method)
        force_after = 0.0
        if system.n_attached:
            remaining = system.working_ids
            after = system.working_K @ (D + tilt[remaining])
            force_after = float(np.minimum(after, 1.0).sum()) / n
        trace.events.append(DetachmentEvent(
            index=len(trace.events),
            D_event=D,
            force_before=force_before,
            force_after=force_after,
            detached_id=removed,
            cascade=last_D is not None and D == last_D,
        ))
        last_D = D

    return _finish(trace, system)


def _run_stepped(array: FibrilArray, design, beta_x: float, beta_y: float, delta_D: float,
                 method: str) -> DetachmentTrace:
    system, tilt, trace = _start_trace(array, design, beta_x, beta_y, method, "stepped")
    n = array.n_fibrils

    step = 0
    while system.n_attached:
        D = step * delta_D
        ids = system.working_ids
        K = system.working_K
        slope = K.sum(axis=1)
        offset = K @ tilt[ids]
        loads = slope * D + offset

        over = loads >= 1.0 - LOAD_TOL
        if not np.any(over):
            # grid points before the next crossing detach nothing
            D_next = float(_next_crossing(slope, offset, system.n_attached, beta_x, beta_y).min())
            step = max(step + 1, int(math.ceil(D_next / delta_D)))
            continue

        # the force is read before removal, overloaded fibrils at their full load
        force_before = float(loads.sum()) / n
        for fid in np.sort(ids[over]):
            system.detach_local(int(np.flatnonzero(system.working_ids == fid)[0]), method=method)
        force_after = 0.0
        if system.n_attached:
            remaining = system.working_ids
            force_after = float((system.working_K @ (D + tilt[remaining])).sum()) / n
        for k, fid in enumerate(np.sort(ids[over])):
            trace.events.append(DetachmentEvent(
                index=len(trace.events),
                D_event=D,
                force_before=force_before if k == 0 else force_after,
                force_after=force_after,
                detached_id=int(fid),
                cascade=k > 0,
            ))
        step += 1

    return _finish(trace, system)


def simulate_detachment(array: FibrilArray, design, beta_x: float = 0.0, beta_y: float = 0.0,
                        method: str = "downdate") -> DetachmentTrace:
    """
    Exact event-driven detachment under increasing separation D.

    Each event detaches one fibril: either the next one to reach f_c as D
    grows, or (at fixed D, after a removal redistributes load) the most
    overloaded one. Ties go to the lowest fibril index.

    Args:
        array: fibril layout
        design: per-fibril extension compliances C_i
        beta_x, beta_y: dimensionless tilt coefficients
        method: "downdate" (Schur update of K per event) or "reinvert"

    Returns:
        DetachmentTrace with every event; `strength` is the peak force
    """
    return _run_detachment(array, design, beta_x, beta_y, method)


def stepped_simulate(array: FibrilArray, design, beta_x: float = 0.0, beta_y: float = 0.0,
                     delta_D: float = 1e-3, method: str = "downdate") -> DetachmentTrace:
    """
    Fixed-increment detachment: D^{k+1} = D^k + delta_D.

    At each grid point the total force is recorded with every load counted
    in full, then all fibrils at or above f_c detach together before D is
    incremented. Fibrils pushed over f_c by that removal detach at the next
    grid point. Grid points with no fibril at f_c are jumped over, which
    records nothing either way. The first fibril of a batch carries the
    recorded force; the rest are flagged as cascade events.
    """
    if not delta_D > 0:
        raise SimulationError(f"delta_D must be positive, got {delta_D}")
    return _run_stepped(array, design, beta_x, beta_y, float(delta_D), method)
