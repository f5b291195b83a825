import numpy as np
import pytest

from vqe.errors import PartitionError
from vqe.frames import LumaFrame
from vqe.partition import (HEADER, Tu, TuPartition, boundary_map, build_quadtree, depth_map, format_tu_file,
                           guided_maps, mean_map, owner_map, parse_tu_file, uniform_partition, validate_partition,
                           write_tu_file)


def random_partition(rng, width=64, height=64):
    decisions = {}

    def should_split(x, y, size):
        return decisions.setdefault((x, y, size), bool(rng.random() < 0.5))

    return build_quadtree(width, height, should_split)


def brute_boundary(p):
    owner = owner_map(p)
    out = np.zeros_like(owner, dtype=np.uint8)
    out[:, 1:] |= (owner[:, 1:] != owner[:, :-1])
    out[1:, :] |= (owner[1:, :] != owner[:-1, :])
    return out


def test_guided_map_properties_on_random_partitions():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = random_partition(rng)
        frame = LumaFrame(rng.integers(0, 256, size=(64, 64), dtype=np.uint8))
        assert validate_partition(p, (64, 64)).ok
        maps = guided_maps(frame, p)
        assert np.array_equal(maps.boundary, brute_boundary(p))
        for tu in p.tus:
            block = maps.mean[tu.y:tu.y + tu.size, tu.x:tu.x + tu.size]
            assert np.all(block == block[0, 0])
            true_mean = frame.samples[tu.y:tu.y + tu.size, tu.x:tu.x + tu.size].mean()
            assert abs(float(block[0, 0]) - true_mean) <= 0.5
            assert np.all(maps.depth[tu.y:tu.y + tu.size, tu.x:tu.x + tu.size] == tu.depth)


def test_sidecar_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    parts = [random_partition(rng, 128, 64) for _ in range(3)]
    path = tmp_path / "seq.tu"
    write_tu_file(path, parts, (128, 64))
    dims, parsed = parse_tu_file(path)
    assert dims == (128, 64)
    assert [p.tus for p in parsed] == [p.tus for p in parts]
    assert format_tu_file(parsed, dims) == path.read_text()


def test_tus_are_kept_in_canonical_order():
    p = TuPartition(8, 8, (Tu(4, 4, 4), Tu(0, 4, 4), Tu(4, 0, 4), Tu(0, 0, 4)))
    assert p.tus == (Tu(0, 0, 4), Tu(4, 0, 4), Tu(0, 4, 4), Tu(4, 4, 4))


def _write(tmp_path, body):
    path = tmp_path / "bad.tu"
    path.write_text(f"{HEADER}\ndims 8 8\nframe 0\n{body}")
    return path


def test_overlap_names_both_lines(tmp_path):
    path = _write(tmp_path, "0 0 8\n4 4 4\n")
    with pytest.raises(PartitionError, match="line 5: .*line 4"):
        parse_tu_file(path)


def test_coverage_gap_is_reported(tmp_path):
    path = _write(tmp_path, "0 0 4\n4 0 4\n0 4 4\n")
    with pytest.raises(PartitionError, match=r"coverage gap at \(4,4\)"):
        parse_tu_file(path)


def test_misaligned_tu_is_reported(tmp_path):
    path = _write(tmp_path, "2 0 4\n")
    with pytest.raises(PartitionError, match="alignment"):
        parse_tu_file(path)


def test_missing_header_is_rejected(tmp_path):
    path = tmp_path / "x.tu"
    path.write_text("dims 8 8\n")
    with pytest.raises(PartitionError, match="line 1"):
        parse_tu_file(path)


def test_validate_reports_gap_and_overlap():
    p = TuPartition(8, 8, (Tu(0, 0, 8), Tu(0, 0, 4)))
    report = validate_partition(p)
    assert not report.ok and "overlap at (0,0)" in str(report)
    gap = validate_partition(TuPartition(8, 8, (Tu(0, 0, 4),)))
    assert "coverage gap at (4,0)" in str(gap)


def test_uniform_partition_and_depths():
    p = uniform_partition((64, 32), 16)
    assert len(p) == 8 and validate_partition(p).ok
    assert np.all(depth_map(p) == 2)


def test_boundary_map_excludes_frame_borders():
    p = uniform_partition((16, 16), 8)
    b = boundary_map(p)
    assert b[0].sum() == 1 and b[:, 0].sum() == 1
    assert np.all(b[8] == 1) and np.all(b[:, 8] == 1)


def test_mean_map_rounds_half_up():
    samples = np.zeros((4, 4), dtype=np.uint8)
    samples[0, :2] = 1
    samples[1:3, :] = 3
    p = TuPartition(4, 4, (Tu(0, 0, 4),))
    assert mean_map(LumaFrame(samples), p)[0, 0] == int(np.floor(samples.mean() + 0.5))
