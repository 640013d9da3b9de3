"""Binary grid formats, JSON codecs, and the deterministic dump helpers."""

import json
import struct

import numpy as np
import pytest

from occmatch.errors import SchemaError
from occmatch.geometry import CameraIntrinsics, DepthMap, PixelPoint, PoseSE3
from occmatch.matching import FeatureGrid, Match
from occmatch.occupancy import OccupancyGrid
from occmatch.formats import (
    dump_json,
    dump_json_line,
    intrinsics_from_json,
    intrinsics_to_json,
    match_from_json,
    match_to_json,
    pose_from_json,
    pose_to_json,
    read_curve_csv,
    read_depth,
    read_features,
    read_json,
    read_matches,
    read_occupancy,
    scene_from_json,
    scene_to_json,
    supervision_from_json,
    supervision_to_json,
    write_curve_csv,
    write_depth,
    write_features,
    write_json,
    write_matches,
    write_occupancy,
)
from occmatch.supervision import CoarseMatchSet, PairStats, PixelClass
from occmatch.synth import make_fixture


def float32_exact(rng, shape):
    """Random values already representable in float32, so binary round trips
    can be compared bit for bit."""
    return rng.uniform(0.0, 8.0, size=shape).astype(np.float32).astype(np.float64)


class TestDepthRoundTrip:
    def test_values_survive_exactly(self, tmp_path):
        rng = np.random.default_rng(1)
        depth = DepthMap(float32_exact(rng, (6, 9)))
        path = tmp_path / "d.odm"
        write_depth(path, depth)
        back = read_depth(path)
        assert np.array_equal(back.data, depth.data)
        assert back.data.shape == (6, 9)

    def test_bad_magic_names_the_file(self, tmp_path):
        path = tmp_path / "bad.odm"
        path.write_bytes(b"XXXX" + struct.pack("<2I", 1, 1) + b"\x00" * 4)
        with pytest.raises(SchemaError, match="bad.odm"):
            read_depth(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "trunc.odm"
        depth = DepthMap(np.full((4, 4), 2.0))
        write_depth(path, depth)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(SchemaError, match="trunc.odm"):
            read_depth(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "tiny.odm"
        path.write_bytes(b"ODM1\x01")
        with pytest.raises(SchemaError, match="truncated header"):
            read_depth(path)


class TestOccupancyRoundTrip:
    def test_values_survive_exactly(self, tmp_path):
        rng = np.random.default_rng(2)
        grid = OccupancyGrid(float32_exact(rng, (3, 4, 8)))
        path = tmp_path / "o.ocg"
        write_occupancy(path, grid)
        assert np.array_equal(read_occupancy(path).values, grid.values)

    def test_bad_leading_dimension_rejected(self, tmp_path):
        path = tmp_path / "lead.ocg"
        path.write_bytes(b"OCG1" + struct.pack("<4I", 2, 1, 1, 1) + b"\x00" * 8)
        with pytest.raises(SchemaError, match="leading dimension"):
            read_occupancy(path)


class TestFeatureRoundTrip:
    def test_values_and_stride_survive(self, tmp_path):
        rng = np.random.default_rng(3)
        grid = FeatureGrid(float32_exact(rng, (16, 5, 7)), stride=8)
        path = tmp_path / "f.ofg"
        write_features(path, grid)
        back = read_features(path)
        assert np.array_equal(back.values, grid.values)
        assert back.stride == 8

    def test_wrong_payload_size_rejected(self, tmp_path):
        path = tmp_path / "short.ofg"
        path.write_bytes(b"OFG1" + struct.pack("<4I", 2, 2, 2, 8) + b"\x00" * 12)
        with pytest.raises(SchemaError, match="float32"):
            read_features(path)


class TestJsonCodecs:
    def test_intrinsics_round_trip(self):
        k = CameraIntrinsics(128.0, 128.0, 95.5, 71.5, 192, 144)
        assert intrinsics_from_json(intrinsics_to_json(k)) == k

    def test_intrinsics_missing_field_names_it(self):
        obj = intrinsics_to_json(CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 2, 2))
        del obj["fx"]
        with pytest.raises(SchemaError, match="fx"):
            intrinsics_from_json(obj)

    def test_pose_round_trip(self):
        c, s = np.cos(0.3), np.sin(0.3)
        pose = PoseSE3(
            np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]),
            np.array([0.25, -0.5, 1.0]),
        )
        back = pose_from_json(pose_to_json(pose))
        assert np.max(np.abs(back.R - pose.R)) < 1e-15
        assert np.array_equal(back.t, pose.t)

    def test_pose_wrong_shape_rejected(self):
        obj = pose_to_json(PoseSE3.identity())
        obj["R"] = [1.0, 0.0]
        with pytest.raises(SchemaError, match="'R'"):
            pose_from_json(obj)

    def test_pose_invalid_rotation_rejected(self):
        obj = pose_to_json(PoseSE3.identity())
        obj["R"] = [2.0, 0, 0, 0, 2.0, 0, 0, 0, 2.0]
        with pytest.raises(SchemaError, match="orthonormal"):
            pose_from_json(obj)

    def test_scene_round_trip_preserves_geometry(self):
        scene = make_fixture("two_plane").scene
        back = scene_from_json(scene_to_json(scene))
        assert len(back.primitives) == len(scene.primitives)
        for orig, copy in zip(scene.primitives, back.primitives):
            assert type(orig) is type(copy)
            assert orig.texture == copy.texture

    def test_supervision_round_trip(self):
        matches = CoarseMatchSet(
            patch_stride=8, vv=[(0, 0), (5, 3)], vo=[(7, 2)], ov=[(1, 6)]
        )
        stats = PairStats(
            counts={cls: 0 for cls in PixelClass},
            occlusion_ratio=0.25,
            overlap_score=0.75,
        )
        back = supervision_from_json(supervision_to_json(matches, stats))
        assert back.patch_stride == 8
        assert back.vv == matches.vv
        assert back.vo == matches.vo
        assert back.ov == matches.ov

    def test_match_round_trip_with_points_and_branch(self):
        m = Match(
            patch_a=3,
            patch_b=7,
            confidence=0.625,
            point_a=PixelPoint(12.5, 20.0),
            point_b=PixelPoint(4.25, 21.0),
            branch=(30.0, 0.0),
            label="vv",
        )
        back = match_from_json(match_to_json(m))
        assert back == m

    def test_match_without_points_defaults_label(self):
        m = Match(patch_a=1, patch_b=2, confidence=0.5)
        back = match_from_json(match_to_json(m))
        assert back.point_a is None
        assert back.point_b is None
        assert back.label == "none"
        assert back.branch is None


class TestMatchesJsonl:
    def test_round_trip_order_and_values(self, tmp_path):
        matches = [
            Match(0, 0, 0.9, PixelPoint(1.0, 2.0), PixelPoint(3.0, 4.0), (0.0, 0.0), "vv"),
            Match(1, 5, 0.4, None, None, None, "vo"),
        ]
        path = tmp_path / "m.jsonl"
        write_matches(path, matches)
        assert read_matches(path) == matches

    def test_one_record_per_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_matches(path, [Match(0, 0, 0.5), Match(1, 1, 0.5)])
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 2
        assert all(json.loads(line) for line in lines)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"a":null,"b":null,"conf":0.5,"label":"none"}\n{oops\n')
        with pytest.raises(SchemaError, match="line 2"):
            read_matches(path)


class TestCurveCsv:
    def test_round_trip(self, tmp_path):
        rows = [(1, 2.0), (2, 3.5), (3, 0.125)]
        path = tmp_path / "c.csv"
        write_curve_csv(path, rows)
        assert read_curve_csv(path) == rows

    def test_header_is_stable(self, tmp_path):
        path = tmp_path / "c.csv"
        write_curve_csv(path, [(1, 1.0)])
        assert path.read_text().splitlines()[0] == "count,mean_err_deg"

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2.0\n")
        with pytest.raises(SchemaError, match="header"):
            read_curve_csv(path)

    def test_floats_survive_via_repr(self, tmp_path):
        value = 0.1234567890123456789
        path = tmp_path / "c.csv"
        write_curve_csv(path, [(1, value)])
        assert read_curve_csv(path)[0][1] == value


class TestJsonDumps:
    def test_line_dump_is_compact_and_sorted(self):
        line = dump_json_line({"b": 1, "a": [1, 2]})
        assert line == '{"a":[1,2],"b":1}'

    def test_pretty_dump_is_sorted_with_trailing_newline(self):
        text = dump_json({"b": 1, "a": 2})
        assert text.index('"a"') < text.index('"b"')
        assert text.endswith("\n")

    def test_dumps_are_deterministic(self):
        obj = {"z": 0.5, "m": {"y": 1, "x": 2}, "a": [3, 2, 1]}
        assert dump_json(obj) == dump_json(json.loads(json.dumps(obj)))

    def test_read_json_requires_object(self, tmp_path):
        path = tmp_path / "arr.json"
        path.write_text("[1, 2, 3]\n")
        with pytest.raises(SchemaError):
            read_json(path)

    def test_read_json_round_trip(self, tmp_path):
        path = tmp_path / "obj.json"
        write_json(path, {"k": [1.5, "s"], "n": None})
        assert read_json(path) == {"k": [1.5, "s"], "n": None}

    def test_malformed_json_names_the_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(SchemaError, match="broken.json"):
            read_json(path)
