
import numpy as np

from vinefuse import associate
from vinefuse.annotate import Mask
from vinefuse.geometry import Projection

import oracles


def rect(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def make_mask(mid="m0", modality="visual", polygon=rect(10, 10, 30, 40)):
    return Mask(mid, "b01", modality, polygon, 0.9, "oracle")


def projection_from(uv, ranges):
    uv = np.asarray(uv, dtype=float)
    return Projection(
        indices=np.arange(len(uv)),
        u=uv[:, 0],
        v=uv[:, 1],
        ranges=np.asarray(ranges, dtype=float),
    )


# --- lift_mask ---------------------------------------------------------------


def test_lift_zero_variance_keeps_all():
    uv = [(15, 15), (16, 20), (20, 25), (25, 30), (18, 35), (22, 12)]
    pts = np.array([[5.0, k * 0.1, 0.5] for k in range(6)])
    lifted = associate.lift_mask(make_mask(), projection_from(uv, [5.0] * 6), pts)
    assert lifted is not None
    assert lifted.n_raw == lifted.n_inlier == 6
    np.testing.assert_allclose(lifted.centroid, pts.mean(axis=0))
    assert lifted.range_stddev == 0.0


def test_lift_removes_background_point():
    uv = [(15, 15), (16, 20), (20, 25), (25, 30), (18, 35), (22, 12)]
    ranges = [5.0, 5.05, 4.95, 5.0, 5.0, 12.0]
    pts = np.vstack([np.tile([5.0, 0.0, 0.5], (5, 1)), [[12.0, 0.0, 0.5]]])
    keep_oracle = oracles.two_sigma_keep_flags(ranges)
    assert keep_oracle == [True] * 5 + [False]
    lifted = associate.lift_mask(make_mask(), projection_from(uv, ranges), pts)
    assert lifted is not None
    assert lifted.n_raw == 6
    assert lifted.n_inlier == 5
    np.testing.assert_allclose(lifted.centroid, pts[:5].mean(axis=0))


def test_lift_rejects_below_min_points():
    uv = [(15, 15), (16, 20), (20, 25)]
    pts = np.tile([5.0, 0.0, 0.5], (3, 1))
    assert associate.lift_mask(make_mask(), projection_from(uv, [5.0] * 3), pts) is None


def test_lift_ignores_points_outside_polygon():
    uv = [(15, 15), (16, 20), (20, 25), (25, 30), (18, 35), (90, 90)]
    pts = np.vstack([np.tile([5.0, 0.0, 0.5], (5, 1)), [[99.0, 99.0, 99.0]]])
    lifted = associate.lift_mask(make_mask(), projection_from(uv, [5.0] * 6), pts)
    assert lifted is not None
    assert lifted.n_raw == 5
    np.testing.assert_allclose(lifted.centroid, [5.0, 0.0, 0.5])


def test_lift_predicate_matches_oracle_on_random_vectors():
    rng = np.random.default_rng(42)
    mask = make_mask(polygon=rect(0, 0, 100, 100))
    for _ in range(500):
        n = int(rng.integers(5, 40))
        ranges = rng.uniform(1.0, 20.0, n)
        uv = rng.uniform(1, 99, (n, 2))
        pts = rng.uniform(-5, 5, (n, 3))
        lifted = associate.lift_mask(mask, projection_from(uv, ranges), pts, min_points=1)
        keep = oracles.two_sigma_keep_flags(ranges)
        expected_n = sum(keep)
        assert lifted is not None
        assert lifted.n_inlier == expected_n
        # post-filter spread never exceeds pre-filter spread
        _, pre_sigma = oracles.mean_std(ranges)
        assert lifted.range_stddev <= pre_sigma + 1e-12
        np.testing.assert_allclose(
            lifted.centroid, pts[np.array(keep)].mean(axis=0), atol=1e-12
        )


# --- associate_bundle -----------------------------------------------------------


def lifted_at(mid, modality, centroid, score=0.9):
    mask = Mask(mid, "b01", modality, rect(10, 10, 30, 40), score, "oracle")
    c = np.asarray(centroid, dtype=float)
    return associate.LiftedMask(
        mask=mask,
        inlier_points=np.tile(c, (6, 1)),
        centroid=c,
        range_mean=float(np.linalg.norm(c)),
        range_stddev=0.0,
        n_raw=6,
        n_inlier=6,
    )


brute_force_associate = oracles.brute_force_associate


def result_groups(sets):
    return {
        frozenset((mod, lm.mask_id) for mod, lm in s.members.items()) for s in sets
    }


def test_three_modalities_near_one_point_span3():
    lifted = {
        "visual": [lifted_at("v0", "visual", [3.0, 1.0, 0.4])],
        "nir": [lifted_at("n0", "nir", [3.01, 1.01, 0.41])],
        "thermal": [lifted_at("t0", "thermal", [2.99, 0.99, 0.39])],
    }
    sets = associate.associate_bundle(lifted, threshold=0.10)
    assert len(sets) == 1
    assert sets[0].span == 3
    expected = np.mean(
        [[3.0, 1.0, 0.4], [3.01, 1.01, 0.41], [2.99, 0.99, 0.39]], axis=0
    )
    np.testing.assert_allclose(sets[0].fused_centroid, expected, atol=1e-12)
    assert result_groups(sets) == brute_force_associate(lifted, 0.10)


def test_two_trunks_one_meter_apart_no_cross_merge():
    a = np.array([3.0, 1.0, 0.4])
    b = a + [1.0, 0.0, 0.0]
    lifted = {
        "visual": [lifted_at("v0", "visual", a + 0.02), lifted_at("v1", "visual", b - 0.02)],
        "nir": [lifted_at("n0", "nir", a - 0.01), lifted_at("n1", "nir", b + 0.01)],
        "thermal": [lifted_at("t0", "thermal", a), lifted_at("t1", "thermal", b)],
    }
    sets = associate.associate_bundle(lifted, threshold=0.10)
    assert sorted(s.span for s in sets) == [3, 3]
    groups = result_groups(sets)
    assert frozenset({("visual", "v0"), ("nir", "n0"), ("thermal", "t0")}) in groups
    assert frozenset({("visual", "v1"), ("nir", "n1"), ("thermal", "t1")}) in groups
    assert groups == brute_force_associate(lifted, 0.10)


def test_above_threshold_singletons():
    lifted = {
        "visual": [lifted_at("v0", "visual", [0.0, 0.0, 0.0])],
        "nir": [lifted_at("n0", "nir", [0.15, 0.0, 0.0])],
    }
    sets = associate.associate_bundle(lifted, threshold=0.10)
    assert sorted(s.span for s in sets) == [1, 1]


def test_every_mask_in_exactly_one_set():
    rng = np.random.default_rng(3)
    lifted = {
        mod: [
            lifted_at(f"{mod[0]}{k}", mod, rng.uniform(0, 3, 3)) for k in range(5)
        ]
        for mod in ("visual", "nir", "thermal")
    }
    sets = associate.associate_bundle(lifted, threshold=0.10)
    seen = [
        (mod, lm.mask_id) for s in sets for mod, lm in s.members.items()
    ]
    assert len(seen) == 15
    assert len(set(seen)) == 15


def test_pairwise_distance_invariant_within_sets():
    rng = np.random.default_rng(7)
    for _ in range(30):
        lifted = {
            mod: [
                lifted_at(f"{mod[0]}{k}", mod, rng.uniform(0, 0.5, 3)) for k in range(4)
            ]
            for mod in ("visual", "nir", "thermal")
        }
        sets = associate.associate_bundle(lifted, threshold=0.10)
        for s in sets:
            members = list(s.members.values())
            for i, a in enumerate(members):
                for b in members[i + 1 :]:
                    assert np.linalg.norm(a.centroid - b.centroid) < 0.10
        assert result_groups(sets) == brute_force_associate(lifted, 0.10)


def test_association_permutation_invariant():
    rng = np.random.default_rng(17)
    base = {
        mod: [lifted_at(f"{mod[0]}{k}", mod, rng.uniform(0, 0.4, 3)) for k in range(4)]
        for mod in ("visual", "nir", "thermal")
    }
    sets_a = associate.associate_bundle(base, threshold=0.10)
    shuffled = {
        mod: list(reversed(items)) for mod, items in reversed(list(base.items()))
    }
    sets_b = associate.associate_bundle(shuffled, threshold=0.10)
    assert result_groups(sets_a) == result_groups(sets_b)
    assert [s.set_id for s in sets_a] == [s.set_id for s in sets_b]


def test_association_file_roundtrip(tmp_path):
    lifted = {
        "visual": [lifted_at("v0", "visual", [3.0, 1.0, 0.4])],
        "nir": [lifted_at("n0", "nir", [3.01, 1.01, 0.41])],
    }
    sets = associate.associate_bundle(lifted, threshold=0.10)
    associate.write_associations(tmp_path, "b01", sets)
    back = associate.read_associations(tmp_path, "b01")
    assert len(back) == 1
    assert back[0]["members"] == {"nir": "n0", "visual": "v0"}
    np.testing.assert_allclose(
        back[0]["fused_centroid"], sets[0].fused_centroid, atol=1e-6
    )
