import math

import numpy as np
import pytest

from logic.array_geometry import (
    PUNCH_SELF_COMPLIANCE, ElasticContext, FibrilArray, FibrilSpec, build_circle, build_layout, build_square,
    build_triangle, default_template, export_layout_csv, fibril_compliance, load_layout_csv, plane_strain_ratio,
)
from logic.errors import ArtifactParseError, GeometryError


def test_plane_strain_ratio():
    assert plane_strain_ratio(ElasticContext(poisson_ratio=0.5, modulus_ratio_raw=1.0)) == pytest.approx(0.75)
    assert plane_strain_ratio(ElasticContext(poisson_ratio=0.0, modulus_ratio_raw=1.0)) == pytest.approx(1.0)
    assert plane_strain_ratio(ElasticContext(poisson_ratio=0.5, modulus_ratio_raw=2.0)) == pytest.approx(1.5)


def test_poisson_ratio_out_of_range():
    with pytest.raises(ValueError):
        ElasticContext(poisson_ratio=0.6)


def test_fibril_compliance():
    assert fibril_compliance(FibrilSpec(modulus_ratio=1.0, length_ratio=5.0)) == pytest.approx(5.0)
    assert fibril_compliance(FibrilSpec(modulus_ratio=0.75, length_ratio=5.0)) == pytest.approx(20.0 / 3.0)
    assert fibril_compliance(default_template()) == pytest.approx(20.0 / 3.0)
    assert fibril_compliance(FibrilSpec(length_ratio=1e-9)) < 1e-8


def test_circle_counts():
    assert build_circle(1.0, 3.0).n_fibrils == 1
    assert build_circle(3.0, 3.0).n_fibrils == 5
    expected = sum(1 for i in range(-25, 26) for j in range(-25, 26) if i * i + j * j <= 625)
    assert build_circle(75.0, 3.0).n_fibrils == expected


def test_square_counts():
    assert build_square(3.0, 3.0).n_fibrils == 9
    assert build_square(0.5, 3.0).n_fibrils == 1
    assert build_square(75.0, 3.0).n_fibrils == 51 ** 2


def test_triangle_counts():
    assert build_triangle(1.0, 3.0).n_fibrils == 1
    R = 75.0
    s3 = math.sqrt(3.0)
    expected = 0
    for j in range(-25, 26):
        for i in range(-25, 26):
            x, y = 3.0 * i, 3.0 * j
            if y >= -R / 2 - 1e-7 and s3 * x + y <= R + 1e-7 and -s3 * x + y <= R + 1e-7:
                expected += 1
    array = build_triangle(R, 3.0)
    assert array.n_fibrils == expected
    assert array.in_region().all()
    assert array.descriptor()["orientation"] == "apex +y, centroid at origin"


def test_canonical_order_is_y_then_x(small_circle):
    keys = list(zip(small_circle.y_hat, small_circle.x_hat))
    assert keys == sorted(keys)
    assert small_circle.n_fibrils == 21


@pytest.mark.parametrize("kind,size,spacing", [
    ("circle", 0.0, 3.0),
    ("triangle", -1.0, 3.0),
    ("square", 5.0, 1.5),
])
def test_invalid_layouts(kind, size, spacing):
    with pytest.raises(GeometryError):
        build_layout(kind, size, spacing)


def test_custom_kind_needs_csv():
    with pytest.raises(GeometryError):
        build_layout("custom", 5.0, 3.0)


def test_overlap_rejected():
    with pytest.raises(GeometryError, match="overlap"):
        FibrilArray(np.array([[0.0, 0.0], [1.5, 0.0]]), 1.0, 5.0, 0.75)


def test_radius_must_average_to_one():
    with pytest.raises(GeometryError):
        FibrilArray(np.array([[0.0, 0.0], [4.0, 0.0]]), [1.0, 1.2], 5.0, 0.75)


def test_coupling_matrix(pair):
    coupling = pair.coupling_matrix()
    assert coupling[0, 0] == pytest.approx(PUNCH_SELF_COMPLIANCE)
    assert coupling[0, 1] == pytest.approx(1.0 / 3.0)
    assert np.array_equal(coupling, coupling.T)
    assert pair.coupling_matrix() is coupling
    with pytest.raises(ValueError):
        coupling[0, 1] = 0.0


def test_neighbour_coupling_and_exposure(pair, small_circle):
    assert pair.neighbour_coupling() == pytest.approx([1.0 / 3.0, 1.0 / 3.0])
    assert np.array_equal(pair.exposure(), np.zeros(2))

    u = small_circle.exposure()
    r = small_circle.radial_distance
    assert u.min() == 0.0 and u.max() == 1.0
    assert u[np.argmin(r)] == 0.0
    assert u[r >= 6.0].mean() > u[r <= 3.0].mean()
    coupling = small_circle.coupling_matrix()
    assert small_circle.neighbour_coupling()[0] == pytest.approx(coupling[0].sum() - coupling[0, 0])


def test_fibril_specs_mirror_the_arrays(small_square):
    specs = small_square.fibrils
    assert len(specs) == small_square.n_fibrils
    assert isinstance(specs[0], FibrilSpec)
    assert (specs[5].x_hat, specs[5].y_hat) == tuple(small_square.positions[5])
    assert specs[5].modulus_ratio == pytest.approx(default_template().modulus_ratio)
    assert {s.length_ratio for s in specs} == {5.0}


def test_characteristic_radius(small_circle):
    assert small_circle.characteristic_radius == 7.0
    custom = FibrilArray(np.array([[0.0, 0.0], [0.0, 4.0]]), 1.0, 5.0, 0.75)
    assert custom.characteristic_radius == pytest.approx(4.0)


def test_layout_csv_round_trip(tmp_path, small_square):
    path = export_layout_csv(small_square, tmp_path / "layout.csv")
    loaded = load_layout_csv(path)
    assert loaded.layout_kind == "custom"
    assert np.array_equal(loaded.positions, small_square.positions)
    assert np.array_equal(loaded.fibril_compliances(), small_square.fibril_compliances())


def test_layout_csv_reports_bad_field(tmp_path, pair):
    path = export_layout_csv(pair, tmp_path / "layout.csv")
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace("3.0", "abc", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ArtifactParseError) as info:
        load_layout_csv(path)
    assert info.value.line == 3
    assert info.value.field == "x_hat"
