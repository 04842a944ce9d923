import math

import numpy as np
import pytest

from vinefuse import annotate, polyops
from vinefuse.errors import DegeneratePolygonError

import oracles


def rect(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def mask(mid, polygon, score=0.9, bundle="b01", modality="visual"):
    return annotate.Mask(mid, bundle, modality, polygon, score, "oracle")


def maskset(masks, width=100, height=100, bundle="b01", modality="visual"):
    return annotate.MaskSet(bundle, modality, width, height, tuple(masks))


# --- simplify_contour ---------------------------------------------------------


def test_simplify_removes_collinear_midpoint():
    poly = ((0.0, 0.0), (20.0, 0.0), (20.0, 60.0), (10.0, 60.0), (0.0, 60.0))
    out = annotate.simplify_contour(poly, 0.02)
    assert len(out) == 4
    assert set(out) == {(0.0, 0.0), (20.0, 0.0), (20.0, 60.0), (0.0, 60.0)}


def test_simplify_keeps_perfect_square():
    poly = rect(0, 0, 10, 10)
    assert annotate.simplify_contour(poly, 0.02) == poly


def test_simplify_32gon_to_rectangle():
    # 32 points marching around a 20x60 rectangle boundary
    corners = [(0.0, 0.0), (20.0, 0.0), (20.0, 60.0), (0.0, 60.0)]
    pts = []
    for k in range(4):
        a = np.array(corners[k])
        b = np.array(corners[(k + 1) % 4])
        for f in np.linspace(0.0, 1.0, 8, endpoint=False):
            pts.append(tuple(a + f * (b - a)))
    assert len(pts) == 32
    out = annotate.simplify_contour(pts, 0.02)
    assert 4 <= len(out) <= 6
    assert polyops.polygon_area(out) >= 0.8 * polyops.polygon_area(pts)


def test_simplify_rejects_degenerate():
    with pytest.raises(DegeneratePolygonError):
        annotate.simplify_contour(((0, 0), (1, 1)), 0.02)


def test_simplify_preserves_area_floor():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(4, 24))
        angles = np.sort(rng.uniform(0, 2 * math.pi, n))
        radii = rng.uniform(5, 20, n)
        poly = [(30 + r * math.cos(a), 30 + r * math.sin(a)) for r, a in zip(radii, angles)]
        out = annotate.simplify_contour(poly, 0.02)
        assert polyops.polygon_area(out) >= 0.8 * polyops.polygon_area(poly) - 1e-9


# --- shape_filter ---------------------------------------------------------------


def test_shape_filter_keeps_standing_rectangle():
    ms = maskset([mask("a", rect(10, 10, 30, 70))])  # h/w = 3
    assert len(annotate.shape_filter(ms, 1.2, 4)) == 1


def test_shape_filter_drops_lying_rectangle():
    ms = maskset([mask("a", rect(10, 10, 70, 30))])  # h/w = 1/3
    assert len(annotate.shape_filter(ms, 1.2, 4)) == 0


def test_shape_filter_drops_triangle():
    ms = maskset([mask("a", ((10, 10), (20, 10), (15, 40)))])
    assert len(annotate.shape_filter(ms, 1.2, 4)) == 0
    # literal reading (>2 vertices) keeps it
    assert len(annotate.shape_filter(ms, 1.2, 3)) == 1


# --- occupancy_filter --------------------------------------------------------------


def test_occupancy_drops_half_frame_mask():
    ms = maskset([mask("a", rect(0, 0, 100, 50))])  # 50%
    assert len(annotate.occupancy_filter(ms)) == 0


def test_occupancy_drops_tiny_mask():
    ms = maskset([mask("a", rect(0, 0, 10, 20))])  # 2%
    assert len(annotate.occupancy_filter(ms)) == 0


def test_occupancy_boundary_kept():
    ms = maskset([mask("a", rect(0, 0, 50, 80)), mask("b", rect(0, 0, 25, 20))])
    # exactly 40% and exactly 5%
    out = annotate.occupancy_filter(ms)
    assert [m.mask_id for m in out.masks] == ["a", "b"]


# --- mask_iou --------------------------------------------------------------------


def test_iou_identical_masks():
    a = mask("a", rect(5, 5, 15, 15))
    b = mask("b", rect(5, 5, 15, 15))
    assert annotate.mask_iou(a, b, 100, 100) == pytest.approx(1.0)


def test_iou_disjoint_masks():
    a = mask("a", rect(0, 0, 10, 10))
    b = mask("b", rect(50, 50, 60, 60))
    assert annotate.mask_iou(a, b, 100, 100) == 0.0


def test_iou_half_overlap_matches_pixel_count():
    a = mask("a", rect(0, 0, 10, 10))
    b = mask("b", rect(0, 5, 10, 15))
    got = annotate.mask_iou(a, b, 100, 100)
    assert got == pytest.approx(50.0 / 150.0)
    assert got == pytest.approx(oracles.rect_iou_pixelcount((0, 0, 10, 10), (0, 5, 10, 15)))


def test_iou_symmetric_and_self_unit():
    rng = np.random.default_rng(8)
    for _ in range(20):
        x0, y0 = rng.integers(0, 40, 2)
        a = mask("a", rect(x0, y0, x0 + rng.integers(5, 30), y0 + rng.integers(5, 30)))
        x0, y0 = rng.integers(0, 40, 2)
        b = mask("b", rect(x0, y0, x0 + rng.integers(5, 30), y0 + rng.integers(5, 30)))
        ab = annotate.mask_iou(a, b, 100, 100)
        ba = annotate.mask_iou(b, a, 100, 100)
        assert ab == pytest.approx(ba)
        assert annotate.mask_iou(a, a, 100, 100) == pytest.approx(1.0)


# --- iou_dedup ----------------------------------------------------------------------


def test_dedup_keeps_higher_score():
    a = mask("a", rect(10, 10, 30, 60), score=0.9)
    b = mask("b", rect(10, 10, 30, 60), score=0.8)
    out = annotate.iou_dedup(maskset([b, a]))
    assert [m.mask_id for m in out.masks] == ["a"]


def test_dedup_below_threshold_keeps_both():
    a = mask("a", rect(0, 0, 10, 10), score=0.9)
    b = mask("b", rect(0, 6, 10, 16), score=0.8)  # IoU = 4/16 = 0.25
    out = annotate.iou_dedup(maskset([a, b]))
    assert len(out) == 2


def test_dedup_triple_identical_keeps_one():
    ms = maskset([mask(f"m{k}", rect(10, 10, 30, 60), score=0.5) for k in range(3)])
    out = annotate.iou_dedup(ms)
    assert len(out) == 1
    assert out.masks[0].mask_id == "m0"  # id tie-break


def test_dedup_survivors_pairwise_below_threshold():
    rng = np.random.default_rng(13)
    masks = []
    for k in range(12):
        x0 = float(rng.integers(0, 50))
        y0 = float(rng.integers(0, 30))
        masks.append(
            mask(f"m{k:02d}", rect(x0, y0, x0 + 20, y0 + 40), score=float(rng.uniform(0.2, 1)))
        )
    out = annotate.iou_dedup(maskset(masks), threshold=0.5)
    for i, a in enumerate(out.masks):
        for b in out.masks[i + 1 :]:
            assert annotate.mask_iou(a, b, 100, 100) <= 0.5


# --- filter properties ---------------------------------------------------------------


def random_simple_polygon(rng: np.random.Generator) -> tuple:
    # star-shaped polygons are simple by construction
    n = int(rng.integers(3, 16))
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    if len(np.unique(angles)) < n:
        angles = angles + np.arange(n) * 1e-6
    radii = rng.uniform(2, 30, n)
    cx, cy = rng.uniform(30, 70, 2)
    return tuple(
        (float(cx + r * math.cos(a)), float(cy + r * math.sin(a)))
        for r, a in zip(radii, angles)
    )


@pytest.mark.parametrize(
    "filter_fn",
    [
        lambda ms: annotate.shape_filter(ms),
        lambda ms: annotate.occupancy_filter(ms),
        lambda ms: annotate.iou_dedup(ms),
    ],
    ids=["shape", "occupancy", "dedup"],
)
def test_filters_idempotent_and_subset(filter_fn):
    rng = np.random.default_rng(21)
    polys = [random_simple_polygon(rng) for _ in range(40)]
    ms = maskset(
        [mask(f"m{k:03d}", p, score=float(rng.uniform(0, 1))) for k, p in enumerate(polys)]
    )
    once = filter_fn(ms)
    twice = filter_fn(once)
    assert [m.mask_id for m in twice.masks] == [m.mask_id for m in once.masks]
    ids_in = [m.mask_id for m in ms.masks]
    ids_out = [m.mask_id for m in once.masks]
    assert set(ids_out) <= set(ids_in)
    assert ids_out == [i for i in ids_in if i in set(ids_out)]  # order preserved


def test_mask_roundtrip_through_interchange_file(tmp_path):
    ms = maskset(
        [mask("a", rect(1, 2, 11, 42), score=0.75), mask("b", rect(3, 4, 13, 44), score=0.5)]
    )
    annotate.write_maskset(tmp_path, ms)
    back = annotate.read_maskset(tmp_path, "b01", "visual", 100, 100)
    assert back == ms
