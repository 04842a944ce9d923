from pathlib import Path

import numpy as np
import pytest

from vinefuse import sync
from vinefuse.errors import StreamOrderError
from vinefuse.geometry import PointCloud, Pose


def frame(modality: str, stamp: float) -> sync.ModalityFrame:
    return sync.ModalityFrame(
        modality=modality,
        image_path=Path(f"/tmp/{modality}/{int(stamp * 1e9)}.png"),
        width=64,
        height=48,
        channels=sync.MODALITY_CHANNELS[modality],
        stamp=stamp,
        stamp_ns=int(round(stamp * 1e9)),
    )


def stream(modality: str, stamps) -> list[sync.ModalityFrame]:
    return [frame(modality, s) for s in stamps]


def poses_for(stamps) -> list[Pose]:
    return [Pose(np.eye(3), [s, 0.0, 0.0], stamp=s) for s in stamps]


def clouds_for(stamps) -> list[PointCloud]:
    return [PointCloud(np.zeros((1, 3)), stamp=s) for s in stamps]


def test_identical_stamps_make_complete_bundles():
    stamps = [0.0, 0.1, 0.2]
    frames = {m: stream(m, stamps) for m in sync.MODALITIES}
    bundles = sync.bundle_streams(
        frames, clouds_for(stamps), poses_for(stamps), tolerance=0.05
    )
    assert len(bundles) == 3
    assert all(b.complete for b in bundles)
    assert [b.reference_stamp for b in bundles] == stamps
    # poses were attached
    assert all(f.pose is not None for b in bundles for f in b.frames.values())


def test_offset_within_tolerance_attaches():
    base = [0.0, 0.1, 0.2]
    frames = {
        "visual": stream("visual", base),
        "nir": stream("nir", base),
        "thermal": stream("thermal", [s + 0.03 for s in base]),
    }
    bundles = sync.bundle_streams(
        frames, clouds_for(base), poses_for(base + [0.23]), tolerance=0.05
    )
    assert all(b.complete for b in bundles)


def test_offset_beyond_tolerance_drops_modality():
    base = [0.0, 0.1, 0.2]
    frames = {
        "visual": stream("visual", base),
        "nir": stream("nir", base),
        "thermal": stream("thermal", [s + 0.08 for s in base]),
    }
    bundles = sync.bundle_streams(
        frames, clouds_for(base), poses_for(base + [0.28]), tolerance=0.05
    )
    # hand enumeration: 0.08 pairs with anchor 0.1, 0.18 with 0.2, 0.28 unused,
    # so the first bundle loses its thermal frame and completeness breaks
    assert not all(b.complete for b in bundles)
    assert "thermal" not in bundles[0].frames
    assert bundles[1].frames["thermal"].stamp == pytest.approx(0.08)
    assert bundles[2].frames["thermal"].stamp == pytest.approx(0.18)


def test_empty_stream_gives_partial_bundles():
    base = [0.0, 0.1]
    frames = {
        "visual": stream("visual", base),
        "nir": [],
        "thermal": stream("thermal", base),
    }
    bundles = sync.bundle_streams(frames, clouds_for(base), poses_for(base))
    assert len(bundles) == 2
    assert all(set(b.frames) == {"visual", "thermal"} for b in bundles)
    assert all(not b.complete for b in bundles)


def test_non_monotonic_stream_rejected():
    frames = {
        "visual": stream("visual", [0.0, 0.2, 0.1]),
        "nir": [],
        "thermal": [],
    }
    with pytest.raises(StreamOrderError) as err:
        sync.bundle_streams(frames, [], poses_for([0.0, 0.2]))
    assert err.value.stamp == pytest.approx(0.1)


def test_no_frame_reuse_across_bundles():
    # two visual frames compete for one thermal frame
    frames = {
        "visual": stream("visual", [0.0, 0.04]),
        "nir": [],
        "thermal": stream("thermal", [0.02]),
    }
    bundles = sync.bundle_streams(
        frames, clouds_for([0.0]), poses_for([0.0, 0.04]), tolerance=0.05
    )
    holders = [b for b in bundles if "thermal" in b.frames]
    assert len(holders) == 1
    assert holders[0].frames["visual"].stamp == 0.0  # nearest anchor got it


def test_member_stamps_within_tolerance_of_reference():
    rng = np.random.default_rng(11)
    base = [round(0.1 * k, 3) for k in range(30)]
    frames = {
        "visual": stream("visual", base),
        "nir": stream("nir", [s + float(rng.uniform(-0.06, 0.06)) + 3.0 for s in base]),
        "thermal": stream(
            "thermal", [s + float(rng.uniform(-0.06, 0.06)) + 3.0 for s in base]
        ),
    }
    # shift nir/thermal to stay positive, then re-anchor visual accordingly
    frames["visual"] = stream("visual", [s + 3.0 for s in base])
    for m in ("nir", "thermal"):
        frames[m] = sorted(frames[m], key=lambda f: f.stamp)
    all_stamps = sorted(f.stamp for fs in frames.values() for f in fs)
    bundles = sync.bundle_streams(
        frames, clouds_for(all_stamps), poses_for(all_stamps), tolerance=0.05
    )
    seen: set[tuple[str, float]] = set()
    for b in bundles:
        for mod, f in b.frames.items():
            assert abs(f.stamp - b.reference_stamp) <= 0.05 + 1e-12
            key = (mod, f.stamp_ns)
            assert key not in seen  # no frame in two bundles
            seen.add(key)


def test_cloud_is_first_at_or_after_reference():
    stamps = [0.0, 0.1, 0.2]
    cloud_stamps = [0.02, 0.12, 0.22]
    frames = {m: stream(m, stamps) for m in sync.MODALITIES}
    bundles = sync.bundle_streams(
        frames,
        clouds_for(cloud_stamps),
        poses_for(stamps + cloud_stamps),
        tolerance=0.05,
    )
    for b, expected in zip(bundles, cloud_stamps):
        assert b.cloud is not None
        assert b.cloud.stamp == pytest.approx(expected)
        assert b.cloud.stamp >= b.reference_stamp


def test_bundle_id_roundtrip():
    bid = sync.bundle_id_for_stamp_ns(1_300_000_000)
    assert bid == "b0001300000000"
    assert sync.stamp_ns_for_bundle_id(bid) == 1_300_000_000
