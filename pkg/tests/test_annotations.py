import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cablekit.annotations import (
    AnnotationSet,
    BBox,
    ImageMeta,
    ParseError,
    Polyline,
    ValidationError,
    dump_annotations,
    hflip_annotations,
    parse_annotations,
    rasterize_cables,
    rasterize_exclusions,
    rasterize_pylons,
)
from oracles import boxes_brute, thick_line_brute


def doc(*images):
    return json.dumps({"images": list(images)})


def image(**kw):
    rec = {"image_id": "a", "width": 10, "height": 8, "recording_id": "r", "location_group": "g", "cables": [], "pylons": []}
    rec.update(kw)
    return rec


def test_parse_minimal():
    ds = parse_annotations(doc(image(cables=[[[1, 2], [3, 4]]])))
    assert len(ds) == 1
    a = ds.items[0]
    assert len(a.cables) == 1 and a.cables[0].points == ((1.0, 2.0), (3.0, 4.0))
    assert a.exclusions == ()  # missing key means empty


def test_unknown_keys_ignored():
    ds = parse_annotations(json.dumps({"images": [image(camera="x")], "version": 3}))
    assert ds.items[0].meta.recording_id == "r"


def test_degenerate_box_rejected():
    with pytest.raises(ValidationError, match=r"pylons\[0\]"):
        parse_annotations(doc(image(pylons=[[2, 1, 2, 5]])))


def test_duplicate_image_id_rejected():
    with pytest.raises(ValidationError, match="duplicate"):
        parse_annotations(doc(image(), image()))


def test_out_of_bounds_point_names_image_and_index():
    with pytest.raises(ValidationError, match=r"a: cables\[1\] point 0"):
        parse_annotations(doc(image(cables=[[[0, 0], [1, 1]], [[11, 0], [1, 1]]])))


@pytest.mark.parametrize(
    "bad, where",
    [
        ("not json", "invalid JSON"),
        (json.dumps({"imgs": []}), "images"),
        (doc({"image_id": "a", "width": 4}), r"images\[0\]: missing key 'height'"),
        (doc(image(cables=[[[1, 2, 3]]])), r"cables\[0\]"),
        (doc(image(pylons=[[1, 2, 3]])), r"pylons\[0\]"),
    ],
)
def test_malformed_documents(bad, where):
    with pytest.raises(ParseError, match=where):
        parse_annotations(bad)


def test_single_point_polyline_rejected():
    with pytest.raises(ValidationError, match="at least 2"):
        parse_annotations(doc(image(cables=[[[1, 2]]])))


def test_box_outside_image_rejected():
    with pytest.raises(ValidationError, match="does not intersect"):
        parse_annotations(doc(image(exclusions=[[10, 0, 12, 3]])))


def test_dump_parse_round_trip():
    ds = parse_annotations(doc(image(cables=[[[1.25, 2], [3, 4], [9, 8]]], pylons=[[-2, 1, 3, 4]], exclusions=[[5, 5, 6, 6]])))
    assert parse_annotations(dump_annotations(ds)) == ds


# rasterization ---------------------------------------------------------------


def test_empty_cable_list():
    assert not rasterize_cables([], 8, 8).any()


def test_horizontal_segment():
    m = rasterize_cables([Polyline([(1.5, 4.5), (6.5, 4.5)])], 8, 8, 5)
    expected = np.zeros((8, 8), dtype=bool)
    expected[2:7, 1:7] = True
    expected[3:6, 0] = expected[3:6, 7] = True  # round caps of radius 2
    np.testing.assert_array_equal(m, expected)
    np.testing.assert_array_equal(m, thick_line_brute([[(1.5, 4.5), (6.5, 4.5)]], 8, 8, 5))


def test_diagonal_segment():
    m = rasterize_cables([Polyline([(0.5, 0.5), (7.5, 7.5)])], 8, 8, 5)
    np.testing.assert_array_equal(m, thick_line_brute([[(0.5, 0.5), (7.5, 7.5)]], 8, 8, 5))


def test_axis_aligned_width_is_thickness():
    m = rasterize_cables([Polyline([(0, 10.5), (32, 10.5)])], 32, 32, 5)
    assert set(m.sum(axis=0)) == {5}


@pytest.mark.parametrize("bad", [0, 4, -1])
def test_thickness_must_be_odd_positive(bad):
    with pytest.raises(ValueError):
        rasterize_cables([], 8, 8, bad)


def test_non_positive_dimensions():
    with pytest.raises(ValueError):
        rasterize_cables([], 0, 8)


def test_random_polylines_match_brute_force(rng):
    for _ in range(200):
        n = rng.integers(2, 5)
        pts = [tuple(p) for p in rng.uniform(0, 32, size=(n, 2))]
        thickness = int(rng.choice([1, 3, 5, 7]))
        np.testing.assert_array_equal(
            rasterize_cables([Polyline(pts)], 32, 32, thickness), thick_line_brute([pts], 32, 32, thickness)
        )


@pytest.mark.parametrize("raster", [rasterize_pylons, rasterize_exclusions])
def test_single_box(raster):
    m = raster([BBox(2, 2, 5, 5)], 8, 8)
    expected = np.zeros((8, 8), dtype=bool)
    expected[2:5, 2:5] = True
    np.testing.assert_array_equal(m, expected)


@pytest.mark.parametrize("raster", [rasterize_pylons, rasterize_exclusions])
def test_overlapping_boxes_union(raster):
    a, b = BBox(1, 1, 5, 4), BBox(3, 2, 7, 7)
    np.testing.assert_array_equal(raster([a, b], 8, 8), raster([a], 8, 8) | raster([b], 8, 8))


@pytest.mark.parametrize("raster", [rasterize_pylons, rasterize_exclusions])
def test_partially_outside_box_is_clipped(raster):
    boxes = [(-3.2, 5.1, 2.7, 12.0)]
    np.testing.assert_array_equal(raster([BBox(*boxes[0])], 8, 8), boxes_brute(boxes, 8, 8))


def test_box_foreground_count_matches_center_tests(rng):
    for _ in range(50):
        boxes = []
        for _ in range(rng.integers(1, 4)):
            x0, y0 = rng.uniform(-5, 20, 2)
            boxes.append((x0, y0, x0 + rng.uniform(0.3, 10), y0 + rng.uniform(0.3, 10)))
        m = rasterize_pylons([BBox(*b) for b in boxes], 16, 16)
        assert m.sum() == boxes_brute(boxes, 16, 16).sum()


def test_translation_consistency(rng):
    pts = [tuple(p) for p in rng.uniform(8, 24, size=(4, 2))]
    base = rasterize_cables([Polyline(pts)], 40, 40)
    dx, dy = 3, 5
    moved = rasterize_cables([Polyline([(x + dx, y + dy) for x, y in pts])], 40, 40)
    np.testing.assert_array_equal(moved[dy:, dx:], base[: 40 - dy, : 40 - dx])


# horizontal flip ---------------------------------------------------------------


def test_hflip_polyline():
    a = AnnotationSet(ImageMeta("a", 10, 4), [Polyline([(1, 2), (3, 2)])])
    assert hflip_annotations(a).cables[0].points == ((9, 2), (7, 2))


def test_hflip_box():
    a = AnnotationSet(ImageMeta("a", 10, 4), pylons=[BBox(2, 0, 5, 1)])
    assert hflip_annotations(a).pylons[0] == BBox(5, 0, 8, 1)


coord = st.integers(0, 40)


@st.composite
def annotation_sets(draw):
    w, h = draw(st.integers(8, 40)), draw(st.integers(8, 40))
    line = st.lists(st.tuples(st.integers(0, w), st.integers(0, h)), min_size=2, max_size=5).map(Polyline)

    def box():
        x0, x1 = sorted(draw(st.lists(st.integers(-3, w + 3), min_size=2, max_size=2, unique=True)))
        y0, y1 = sorted(draw(st.lists(st.integers(-3, h + 3), min_size=2, max_size=2, unique=True)))
        return BBox(x0, y0, x1, y1)

    return AnnotationSet(
        ImageMeta("x", w, h),
        draw(st.lists(line, max_size=3)),
        [box() for _ in range(draw(st.integers(0, 3)))],
        [box() for _ in range(draw(st.integers(0, 2)))],
    )


@given(annotation_sets())
def test_hflip_involution(a):
    assert hflip_annotations(hflip_annotations(a)) == a


def test_hflip_involution_real_coordinates(rng):
    pts = [tuple(p) for p in rng.uniform(0, 10, size=(5, 2))]
    a = AnnotationSet(ImageMeta("a", 10, 10), [Polyline(pts)], [BBox(0.3, 0.1, 7.9, 4.2)])
    b = hflip_annotations(hflip_annotations(a))
    # w - (w - x) can differ from x in the last bit for non-dyadic x
    np.testing.assert_allclose(b.cables[0].as_array(), a.cables[0].as_array(), rtol=0, atol=1e-12)
    np.testing.assert_allclose(b.pylons[0].as_tuple(), a.pylons[0].as_tuple(), rtol=0, atol=1e-12)


@given(annotation_sets())
def test_hflip_commutes_with_rasterization(a):
    # integer box edges avoid the half-open/half-closed swap a reflection causes at pixel centres
    w, h = a.meta.width, a.meta.height
    f = hflip_annotations(a)
    np.testing.assert_array_equal(rasterize_cables(f.cables, w, h), rasterize_cables(a.cables, w, h)[:, ::-1])
    np.testing.assert_array_equal(rasterize_pylons(f.pylons, w, h), rasterize_pylons(a.pylons, w, h)[:, ::-1])
    np.testing.assert_array_equal(
        rasterize_exclusions(f.exclusions, w, h), rasterize_exclusions(a.exclusions, w, h)[:, ::-1]
    )
