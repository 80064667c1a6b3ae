"""Export pipeline tests: config, resizing, reference fast path, CLI.

Model-dependent tests run against a locally saved randomly initialized
network, so they exercise checkpoint loading, batching, inference, and
resizing without pretrained weights.  The accuracy example needs real
weights and is skipped unless FLOWBRIDGE_CHECKPOINT points at one.
"""
from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from flowbridge import BridgeConfig, export_flows, resize_flow, snap8
from flowbridge.flowio import read_flow_file


def make_frames(directory, count, h, w, seed=0):
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 255, size=(h, w), dtype=np.uint8)
    for i in range(count):
        shifted = np.roll(base, i, axis=1)
        Image.fromarray(shifted, mode="L").save(directory / f"frame_{i:04d}.png")
    return directory


@pytest.fixture(scope="module")
def local_checkpoint(tmp_path_factory):
    torch = pytest.importorskip("torch")
    from torchvision.models.optical_flow import raft_small

    torch.manual_seed(0)
    path = tmp_path_factory.mktemp("ckpt") / "raft_small_random.pt"
    torch.save(raft_small(weights=None).state_dict(), path)
    return path


class TestConfig:
    def test_unknown_model_rejected(self):
        with pytest.raises(ValueError, match="model"):
            BridgeConfig(frames_dir="x", model="flownet")

    def test_negative_reference_rejected(self):
        with pytest.raises(ValueError, match="reference"):
            BridgeConfig(frames_dir="x", reference_index=-1)

    def test_resize_target_must_be_multiple_of_eight(self):
        with pytest.raises(ValueError, match="multiples of 8"):
            BridgeConfig(frames_dir="x", resize_to=(40, 30))


class TestHelpers:
    def test_snap8_values(self):
        assert snap8(8) == 8
        assert snap8(64) == 64
        assert snap8(4) == 8
        assert snap8(100) == 96
        assert snap8(13) == 16
        assert snap8(11) == 8

    def test_resize_flow_rescales_the_vectors(self):
        flow = np.zeros((32, 32, 2), dtype=np.float32)
        flow[..., 0] = 1.0
        flow[..., 1] = 2.0
        out = resize_flow(flow, (64, 48))
        assert out.shape == (64, 48, 2)
        np.testing.assert_allclose(out[..., 0], 1.5, atol=1e-6)
        np.testing.assert_allclose(out[..., 1], 4.0, atol=1e-6)

    def test_resize_flow_same_size_is_identity(self):
        rng = np.random.default_rng(1)
        flow = rng.normal(size=(8, 8, 2)).astype(np.float32)
        np.testing.assert_array_equal(resize_flow(flow, (8, 8)), flow)


class TestExport:
    def test_reference_frame_is_exact_zeros_without_a_model(self, tmp_path):
        frames = make_frames(tmp_path / "frames", 1, 24, 40)
        out = tmp_path / "flow"
        # a single-frame clip never touches the network, so no checkpoint
        # (and no weight download) is needed
        written = export_flows(BridgeConfig(frames_dir=frames, out_dir=out))
        assert [p.name for p in written] == ["frame_0000.flo"]
        field = read_flow_file(written[0])
        assert field.shape == (24, 40, 2)
        assert not field.any()

    def test_missing_frames_dir_reported(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="frames directory"):
            export_flows(BridgeConfig(frames_dir=tmp_path / "nope"))

    def test_empty_frames_dir_reported(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(ValueError, match="no raster frames"):
            export_flows(BridgeConfig(frames_dir=empty))

    def test_reference_index_out_of_range(self, tmp_path):
        frames = make_frames(tmp_path / "frames", 2, 16, 16)
        with pytest.raises(ValueError, match="out of range"):
            export_flows(BridgeConfig(frames_dir=frames, reference_index=5))

    def test_missing_checkpoint_reported(self, tmp_path):
        frames = make_frames(tmp_path / "frames", 2, 16, 16)
        cfg = BridgeConfig(frames_dir=frames, out_dir=tmp_path / "flow",
                           checkpoint=tmp_path / "nope.pt")
        with pytest.raises(FileNotFoundError, match="checkpoint"):
            export_flows(cfg)

    def test_export_with_a_local_checkpoint(self, tmp_path, local_checkpoint):
        frames = make_frames(tmp_path / "frames", 3, 40, 56)
        out = tmp_path / "flow"
        cfg = BridgeConfig(frames_dir=frames, reference_index=1, out_dir=out,
                           checkpoint=local_checkpoint, batch_size=2,
                           iterations=2)
        written = export_flows(cfg)
        assert [p.name for p in written] == [f"frame_{i:04d}.flo"
                                             for i in range(3)]
        assert not list(out.glob("*.tmp"))
        ref = read_flow_file(out / "frame_0001.flo")
        assert not ref.any()
        for i in (0, 2):
            field = read_flow_file(out / f"frame_{i:04d}.flo")
            assert field.shape == (40, 56, 2)
            assert np.isfinite(field).all()

    def test_export_resizes_odd_dimensions(self, tmp_path, local_checkpoint):
        frames = make_frames(tmp_path / "frames", 2, 37, 50)
        out = tmp_path / "flow"
        cfg = BridgeConfig(frames_dir=frames, out_dir=out,
                           checkpoint=local_checkpoint, iterations=1)
        export_flows(cfg)
        field = read_flow_file(out / "frame_0001.flo")
        assert field.shape == (37, 50, 2)
        assert np.isfinite(field).all()

    def test_mismatched_frame_sizes_reported(self, tmp_path, local_checkpoint):
        frames = make_frames(tmp_path / "frames", 2, 16, 16)
        Image.new("L", (24, 16)).save(frames / "frame_0002.png")
        cfg = BridgeConfig(frames_dir=frames, out_dir=tmp_path / "flow",
                           checkpoint=local_checkpoint, iterations=1)
        with pytest.raises(ValueError, match="expected"):
            export_flows(cfg)

    def test_static_clip_yields_near_zero_flow(self, tmp_path):
        checkpoint = os.environ.get("FLOWBRIDGE_CHECKPOINT")
        if not checkpoint:
            pytest.skip("pretrained checkpoint not available "
                        "(set FLOWBRIDGE_CHECKPOINT)")
        frames_dir = tmp_path / "frames"
        frames_dir.mkdir()
        rng = np.random.default_rng(7)
        frame = rng.integers(0, 255, size=(64, 64), dtype=np.uint8)
        for i in range(3):
            Image.fromarray(frame, mode="L").save(
                frames_dir / f"frame_{i:04d}.png")
        out = tmp_path / "flow"
        export_flows(BridgeConfig(frames_dir=frames_dir, out_dir=out,
                                  checkpoint=checkpoint))
        for i in (1, 2):
            field = read_flow_file(out / f"frame_{i:04d}.flo")
            assert np.hypot(field[..., 0], field[..., 1]).mean() < 0.5


class TestCli:
    def run(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "flowbridge", *map(str, args)],
            capture_output=True, text=True)

    def test_end_to_end(self, tmp_path, local_checkpoint):
        frames = make_frames(tmp_path / "frames", 2, 24, 32)
        out = tmp_path / "flow"
        proc = self.run("--frames", frames, "--ref", 0, "--out", out,
                        "--checkpoint", local_checkpoint, "--iters", 1)
        assert proc.returncode == 0, proc.stderr
        assert "2 flow files" in proc.stdout
        assert read_flow_file(out / "frame_0001.flo").shape == (24, 32, 2)

    def test_missing_frames_dir_exits_nonzero(self, tmp_path):
        proc = self.run("--frames", tmp_path / "nope", "--out", tmp_path)
        assert proc.returncode == 1
        assert "frames directory" in proc.stderr
