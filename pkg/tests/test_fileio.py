import numpy as np
import pytest
import torch

from irrflow import fileio
from irrflow.datagen import DataConfig, make_sample, read_dataset, write_dataset
from irrflow.model import ModelConfig, build_model


class TestFlowFile:
    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        flow = rng.normal(scale=10, size=(7, 5, 2)).astype(np.float32)
        path = tmp_path / "f.flo"
        fileio.write_flow(path, flow)
        np.testing.assert_array_equal(fileio.read_flow(path), flow)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.flo"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError):
            fileio.read_flow(path)

    def test_truncated_payload(self, tmp_path):
        flow = np.zeros((4, 4, 2), dtype=np.float32)
        path = tmp_path / "f.flo"
        fileio.write_flow(path, flow)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="payload"):
            fileio.read_flow(path)


class TestOcclusionFile:
    def test_roundtrip(self, tmp_path):
        occ = (np.random.default_rng(1).uniform(size=(6, 9)) > 0.5).astype(np.uint8)
        path = tmp_path / "o.pgm"
        fileio.write_occlusion(path, occ)
        np.testing.assert_array_equal(fileio.read_occlusion(path), occ)

    def test_values_are_binary_bytes(self, tmp_path):
        occ = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        path = tmp_path / "o.pgm"
        fileio.write_occlusion(path, occ)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 2\n255\n")
        assert raw[-4:] == bytes([0, 255, 255, 0])


class TestImageFile:
    def test_roundtrip(self, tmp_path):
        img = np.random.default_rng(2).integers(0, 256, size=(5, 8, 3), dtype=np.uint8)
        path = tmp_path / "i.png"
        fileio.write_image(path, img)
        np.testing.assert_array_equal(fileio.read_image(path), img)


class TestDatasetRoundtrip:
    def test_bitwise_roundtrip(self, tmp_path):
        cfg = DataConfig(width=32, height=32)
        samples = [make_sample(seed, cfg) for seed in (0, 1)]
        write_dataset(samples, tmp_path / "ds", cfg)
        loaded, header = read_dataset(tmp_path / "ds")
        assert header["count"] == 2
        for a, b in zip(samples, loaded):
            np.testing.assert_array_equal(a.image1, b.image1)
            np.testing.assert_array_equal(a.flow_fw, b.flow_fw)
            np.testing.assert_array_equal(a.flow_bw, b.flow_bw)
            np.testing.assert_array_equal(a.occ1, b.occ1)

    def test_manifest_regeneration(self, tmp_path):
        cfg = DataConfig(width=32, height=32)
        samples = [make_sample(seed, cfg) for seed in (7, 13)]
        write_dataset(samples, tmp_path / "ds", cfg)
        loaded, header = read_dataset(tmp_path / "ds")
        regen_cfg = DataConfig.from_dict(header["config"])
        for sample in loaded:
            again = make_sample(sample.seed, regen_cfg)
            np.testing.assert_array_equal(again.flow_fw, sample.flow_fw)
            np.testing.assert_array_equal(again.image2, sample.image2)

    def test_missing_header_rejected(self, tmp_path):
        d = tmp_path / "ds"
        d.mkdir()
        fileio.write_manifest(d / "manifest.jsonl", [{"id": "000000"}])
        with pytest.raises(ValueError):
            read_dataset(d)


class TestCheckpoint:
    def test_roundtrip_exact(self, tmp_path):
        cfg = ModelConfig(variant="pwc", levels=2, base_scale_exp=1, occlusion=True)
        model = build_model(cfg)
        path = tmp_path / "model.ckpt"
        fileio.save_checkpoint(path, model, cfg, extra={"step": 5})
        config_dict, state, extra = fileio.load_checkpoint(path)
        assert extra == {"step": 5}
        rebuilt = build_model(ModelConfig.from_dict(config_dict))
        rebuilt.load_state_dict(state)
        for (name, a), b in zip(model.state_dict().items(), rebuilt.state_dict().values()):
            assert torch.equal(a, b), name

    def test_sidecar_written(self, tmp_path):
        cfg = ModelConfig(variant="flownet", levels=2, iterations=1)
        model = build_model(cfg)
        path = tmp_path / "model.ckpt"
        fileio.save_checkpoint(path, model, cfg)
        assert (tmp_path / "model.ckpt.json").exists()

    def test_identical_weights_identical_bytes(self, tmp_path):
        cfg = ModelConfig(variant="flownet", levels=2, iterations=2, seed=4)
        a = tmp_path / "a.ckpt"
        b = tmp_path / "b.ckpt"
        fileio.save_checkpoint(a, build_model(cfg), cfg)
        fileio.save_checkpoint(b, build_model(cfg), cfg)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"JUNKJUNK" + b"\0" * 16)
        with pytest.raises(ValueError):
            fileio.load_checkpoint(path)
