"""
Fibril array layouts and single-fibril compliance.

All lengths are dimensionless, in units of the average fibril radius a.
Layouts are square lattices aligned with the axes with one node at the
origin; fibril index order (y outer, x inner, both ascending) is the
canonical ordering used everywhere else.
"""

import csv
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist, squareform

from logic.errors import ArtifactParseError, GeometryError

logger = logging.getLogger(__name__)

LAYOUT_KINDS = ("circle", "square", "triangle", "custom")
LAYOUT_CSV_HEADER = ["fibril_id", "x_hat", "y_hat", "radius_ratio", "length_ratio", "modulus_ratio"]

# self-compliance of a flat punch on the half-space, in units of a/a_i
PUNCH_SELF_COMPLIANCE = 16.0 / (3.0 * math.pi)

_BOUNDARY_TOL = 1e-9
_TRIANGLE_ORIENTATION = "apex +y, centroid at origin"


class FibrilSpec(BaseModel):
    x_hat: float = 0.0
    y_hat: float = 0.0
    radius_ratio: float = Field(1.0, gt=0)
    length_ratio: float = Field(5.0, gt=0)
    modulus_ratio: float = Field(0.75, gt=0)

    class Config:
        frozen = True


class ElasticContext(BaseModel):
    poisson_ratio: float = 0.5
    modulus_ratio_raw: float = Field(1.0, gt=0)

    @field_validator("poisson_ratio")
    @classmethod
    def _poisson_in_range(cls, v: float) -> float:
        if not -1.0 < v <= 0.5:
            raise ValueError(f"poisson_ratio must lie in (-1, 0.5], got {v}")
        return v


def plane_strain_ratio(ctx: ElasticContext) -> float:
    """E_f/E* with E* = E/(1 - nu^2) the backing layer's plane-strain modulus."""
    return ctx.modulus_ratio_raw * (1.0 - ctx.poisson_ratio ** 2)


def fibril_compliance(spec: FibrilSpec) -> float:
    """Extension compliance C_i = (E*/E_i)(a/a_i)^2(h_i/a)."""
    return spec.length_ratio / (spec.modulus_ratio * spec.radius_ratio ** 2)


def default_template(length_ratio: float = 5.0, modulus_ratio_raw: float = 1.0,
                     poisson_ratio: float = 0.5) -> FibrilSpec:
    ctx = ElasticContext(poisson_ratio=poisson_ratio, modulus_ratio_raw=modulus_ratio_raw)
    return FibrilSpec(radius_ratio=1.0, length_ratio=length_ratio, modulus_ratio=plane_strain_ratio(ctx))


class FibrilArray:
    """Positions and per-fibril material ratios of one adhesive patch."""

    def __init__(
        self,
        positions: np.ndarray,
        radius_ratio: np.ndarray,
        length_ratio: np.ndarray,
        modulus_ratio: np.ndarray,
        layout_kind: str = "custom",
        shape_param: Optional[float] = None,
        spacing: Optional[float] = None,
    ):
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        n = positions.shape[0]
        if n < 1:
            raise GeometryError("fibril array is empty")
        if layout_kind not in LAYOUT_KINDS:
            raise GeometryError(f"unknown layout kind '{layout_kind}'")

        self.positions = positions
        self.radius_ratio = np.broadcast_to(np.asarray(radius_ratio, dtype=float), (n,)).copy()
        self.length_ratio = np.broadcast_to(np.asarray(length_ratio, dtype=float), (n,)).copy()
        self.modulus_ratio = np.broadcast_to(np.asarray(modulus_ratio, dtype=float), (n,)).copy()
        self.layout_kind = layout_kind
        self.shape_param = shape_param
        self.spacing = spacing
        self._coupling: Optional[np.ndarray] = None

        self._validate()

    def _validate(self):
        if not np.all(np.isfinite(self.positions)):
            raise GeometryError("fibril positions must be finite")
        for name in ("radius_ratio", "length_ratio", "modulus_ratio"):
            values = getattr(self, name)
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise GeometryError(f"{name} must be positive and finite for every fibril")

        mean_radius = float(self.radius_ratio.mean())
        if abs(mean_radius - 1.0) > 1e-9:
            raise GeometryError(f"radius_ratio must average to 1 (a is the mean radius), got {mean_radius:.12g}")

        if self.n_fibrils > 1:
            tree = cKDTree(self.positions)
            pairs = tree.query_pairs(r=2.0 * float(self.radius_ratio.max()) + _BOUNDARY_TOL, output_type="ndarray")
            if len(pairs):
                i, j = pairs[:, 0], pairs[:, 1]
                dist = np.linalg.norm(self.positions[i] - self.positions[j], axis=1)
                overlap = dist < self.radius_ratio[i] + self.radius_ratio[j] - _BOUNDARY_TOL
                if np.any(overlap):
                    a, b = pairs[np.argmax(overlap)]
                    raise GeometryError(f"fibrils {a} and {b} overlap (center distance {dist[np.argmax(overlap)]:.6g})")

    @property
    def n_fibrils(self) -> int:
        return self.positions.shape[0]

    @property
    def x_hat(self) -> np.ndarray:
        return self.positions[:, 0]

    @property
    def y_hat(self) -> np.ndarray:
        return self.positions[:, 1]

    @property
    def fibrils(self) -> List[FibrilSpec]:
        return [
            FibrilSpec(
                x_hat=float(x), y_hat=float(y), radius_ratio=float(r),
                length_ratio=float(h), modulus_ratio=float(e),
            )
            for (x, y), r, h, e in zip(self.positions, self.radius_ratio, self.length_ratio, self.modulus_ratio)
        ]

    @property
    def radial_distance(self) -> np.ndarray:
        return np.hypot(self.x_hat, self.y_hat)

    @property
    def characteristic_radius(self) -> float:
        """R used to normalise radial profiles (r/R)."""
        if self.layout_kind != "custom" and self.shape_param:
            return float(self.shape_param)
        r_max = float(self.radial_distance.max())
        return r_max if r_max > 0 else 1.0

    def fibril_compliances(self) -> np.ndarray:
        return self.length_ratio / (self.modulus_ratio * self.radius_ratio ** 2)

    def coupling_matrix(self) -> np.ndarray:
        """
        Backing-layer part of the compliance matrix.

        Off-diagonal a/r_ij, diagonal 16/(3 pi) (a/a_i). Depends only on the
        geometry, so it is computed once and shared by every design on this
        layout. Callers must not modify the returned array.
        """
        if self._coupling is None:
            if self.n_fibrils == 1:
                coupling = np.array([[PUNCH_SELF_COMPLIANCE / self.radius_ratio[0]]])
            else:
                r = squareform(pdist(self.positions))
                np.fill_diagonal(r, 1.0)
                coupling = 1.0 / r
                np.fill_diagonal(coupling, PUNCH_SELF_COMPLIANCE / self.radius_ratio)
            coupling.setflags(write=False)
            self._coupling = coupling
        return self._coupling

    def neighbour_coupling(self) -> np.ndarray:
        """s_i = sum over j != i of a/r_ij, the load a fibril feels through the backing layer."""
        coupling = self.coupling_matrix()
        return coupling.sum(axis=1) - np.diag(coupling)

    def exposure(self) -> np.ndarray:
        """
        Neighbour coupling rescaled to [0, 1]: 0 for the most shielded fibril,
        1 for the most exposed one. Fibrils related by a layout symmetry share
        a value. Zero everywhere when the coupling is constant.
        """
        s = self.neighbour_coupling()
        span = float(s.max() - s.min())
        if span <= 1e-12 * max(float(np.abs(s).max()), 1.0):
            return np.zeros(self.n_fibrils)
        return (s.max() - s) / span

    def in_region(self) -> np.ndarray:
        """Point-in-region test of every fibril center against the declared layout."""
        if self.layout_kind == "custom":
            return np.ones(self.n_fibrils, dtype=bool)
        return _region_mask(self.layout_kind, float(self.shape_param), self.x_hat, self.y_hat)

    def descriptor(self) -> Dict:
        descriptor = {
            "layout_kind": self.layout_kind,
            "shape_param": self.shape_param,
            "spacing": self.spacing,
            "n_fibrils": self.n_fibrils,
            "grid": "square lattice, node at origin, boundary inclusive",
        }
        if self.layout_kind == "triangle":
            descriptor["orientation"] = _TRIANGLE_ORIENTATION
        return descriptor

    def __getstate__(self):
        # workers rebuild the coupling matrix instead of receiving N^2 floats
        state = self.__dict__.copy()
        state["_coupling"] = None
        return state

    def __repr__(self) -> str:
        return f"FibrilArray(kind={self.layout_kind}, n={self.n_fibrils}, shape_param={self.shape_param}, spacing={self.spacing})"


# =============================================================================
# LAYOUT BUILDERS
# =============================================================================

def _region_mask(kind: str, param: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    tol = _BOUNDARY_TOL * max(1.0, param)
    if kind == "circle":
        return x * x + y * y <= param * param + tol
    if kind == "square":
        return (np.abs(x) <= param + tol) & (np.abs(y) <= param + tol)
    if kind == "triangle":
        # apex at (0, R), base at y = -R/2; height 1.5 R
        sqrt3 = math.sqrt(3.0)
        return (
            (y >= -0.5 * param - tol)
            & (sqrt3 * x + y <= param + tol)
            & (-sqrt3 * x + y <= param + tol)
        )
    raise GeometryError(f"no region test for layout kind '{kind}'")


def _build(kind: str, param: float, spacing: float, template: FibrilSpec) -> FibrilArray:
    if not param > 0:
        raise GeometryError(f"{kind} size must be positive, got {param}")
    if abs(template.radius_ratio - 1.0) > 1e-12:
        raise GeometryError("template radius_ratio must be 1 for uniform layouts (a is the mean radius)")
    if spacing < 2.0 * template.radius_ratio:
        raise GeometryError(f"spacing {spacing} lets neighbouring fibrils overlap (needs >= 2)")

    m = int(math.floor(param / spacing + _BOUNDARY_TOL))
    ticks = np.arange(-m, m + 1, dtype=float) * spacing
    gx, gy = np.meshgrid(ticks, ticks)
    x, y = gx.ravel(), gy.ravel()
    keep = _region_mask(kind, param, x, y)
    if not np.any(keep):
        raise GeometryError(f"{kind} of size {param} with spacing {spacing} contains no fibril")

    positions = np.column_stack([x[keep], y[keep]])
    array = FibrilArray(
        positions,
        radius_ratio=template.radius_ratio,
        length_ratio=template.length_ratio,
        modulus_ratio=template.modulus_ratio,
        layout_kind=kind,
        shape_param=float(param),
        spacing=float(spacing),
    )
    logger.debug(f"Built {array}")
    return array


def build_circle(radius_hat: float, spacing: float, fibril_template: Optional[FibrilSpec] = None) -> FibrilArray:
    return _build("circle", radius_hat, spacing, fibril_template or default_template())


def build_square(half_side_hat: float, spacing: float, fibril_template: Optional[FibrilSpec] = None) -> FibrilArray:
    return _build("square", half_side_hat, spacing, fibril_template or default_template())


def build_triangle(circumradius_hat: float, spacing: float, fibril_template: Optional[FibrilSpec] = None) -> FibrilArray:
    return _build("triangle", circumradius_hat, spacing, fibril_template or default_template())


def build_layout(kind: str, size: float, spacing: float, fibril_template: Optional[FibrilSpec] = None) -> FibrilArray:
    builders = {"circle": build_circle, "square": build_square, "triangle": build_triangle}
    if kind not in builders:
        raise GeometryError(f"layout kind '{kind}' cannot be built from a size; use a layout CSV")
    return builders[kind](size, spacing, fibril_template)


# =============================================================================
# LAYOUT CSV
# =============================================================================

def export_layout_csv(array: FibrilArray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LAYOUT_CSV_HEADER)
        for i in range(array.n_fibrils):
            writer.writerow([
                i,
                repr(float(array.positions[i, 0])),
                repr(float(array.positions[i, 1])),
                repr(float(array.radius_ratio[i])),
                repr(float(array.length_ratio[i])),
                repr(float(array.modulus_ratio[i])),
            ])
    return path


def load_layout_csv(path, layout_kind: str = "custom", shape_param: Optional[float] = None,
                    spacing: Optional[float] = None) -> FibrilArray:
    """Read a layout CSV back into a FibrilArray, validating every field."""
    path = Path(path)
    if not path.exists():
        raise ArtifactParseError(str(path), "layout file not found")

    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LAYOUT_CSV_HEADER:
            raise ArtifactParseError(str(path), f"expected header {','.join(LAYOUT_CSV_HEADER)}", line=1)
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(LAYOUT_CSV_HEADER):
                raise ArtifactParseError(str(path), f"expected {len(LAYOUT_CSV_HEADER)} fields, got {len(row)}", line=line_no)
            values = []
            for name, raw in zip(LAYOUT_CSV_HEADER, row):
                try:
                    values.append(int(raw) if name == "fibril_id" else float(raw))
                except ValueError:
                    raise ArtifactParseError(str(path), f"not a number: {raw!r}", line=line_no, field=name)
            if values[0] != line_no - 2:
                raise ArtifactParseError(str(path), "fibril_id out of order", line=line_no, field="fibril_id")
            rows.append(values[1:])

    if not rows:
        raise ArtifactParseError(str(path), "layout has no fibrils")
    data = np.array(rows, dtype=float)
    return FibrilArray(
        data[:, 0:2],
        radius_ratio=data[:, 2],
        length_ratio=data[:, 3],
        modulus_ratio=data[:, 4],
        layout_kind=layout_kind,
        shape_param=shape_param,
        spacing=spacing,
    )
