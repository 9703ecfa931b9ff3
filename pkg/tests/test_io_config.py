import json
import logging

import numpy as np
import pytest
import torch

from hoimotion.config import ConfigError, PipelineConfig
from hoimotion.io import load_checkpoint, load_tensor, read_jsonl, save_checkpoint, save_tensor, write_jsonl


@pytest.mark.parametrize("dtype,np_dtype", [("f32", np.float32), ("f64", np.float64), ("i64", np.int64), ("u8", np.uint8)])
def test_tensor_round_trip(tmp_path, rng, dtype, np_dtype):
    arr = (rng.normal(size=(3, 4, 5)) * 10).astype(np_dtype)
    save_tensor(tmp_path / "x", arr, dtype=dtype, config_hash="abc", fps=30.0)
    back, header = load_tensor(tmp_path / "x.json")
    assert np.array_equal(back, arr)
    assert header == {"dtype": dtype, "shape": [3, 4, 5], "byte_order": "little", "config_hash": "abc", "fps": 30.0}
    assert (tmp_path / "x.bin").stat().st_size == arr.nbytes


def test_hash_mismatch_warns(tmp_path, caplog):
    save_tensor(tmp_path / "x", np.zeros(2), config_hash="aaa")
    with caplog.at_level(logging.WARNING):
        load_tensor(tmp_path / "x", expect_hash="bbb")
    assert "config hash mismatch" in caplog.text


def test_checkpoint_round_trip(tmp_path):
    model = torch.nn.Sequential(torch.nn.Linear(3, 4), torch.nn.LayerNorm(4))
    save_checkpoint(tmp_path / "m.ckpt", model.state_dict(), "h1", 7, model_kwargs={"d": 4})
    state, manifest = load_checkpoint(tmp_path / "m.ckpt", "h1")
    assert manifest["step"] == 7 and manifest["model_kwargs"] == {"d": 4}
    for k, v in model.state_dict().items():
        assert torch.equal(state[k], v)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_jsonl(tmp_path):
    recs = [{"a": 1}, {"b": [1, 2]}]
    write_jsonl(tmp_path / "r.jsonl", recs)
    assert read_jsonl(tmp_path / "r.jsonl") == recs


def test_config_defaults_and_hash():
    a, b = PipelineConfig(), PipelineConfig(out_dir="elsewhere")
    assert a.sigma == 0.2 and a.tau == 0.10 and a.T == 300
    assert a.hash == b.hash
    assert a.hash != PipelineConfig(seed=1).hash


def test_config_yaml_env_and_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("n_clips: 10\nalpha: 2\njoint_guidance: off\n")
    cfg = PipelineConfig.load(path, overrides={"beta": "0.5"}, env={"HOIMOTION_TAU": "0.2", "HOIMOTION_N_CLIPS": "12"})
    assert cfg.n_clips == 12 and cfg.alpha == 2.0 and cfg.beta == 0.5 and cfg.tau == 0.2
    assert cfg.joint_guidance is False
    cfg.dump(tmp_path / "out.yaml")
    assert PipelineConfig.load(tmp_path / "out.yaml", env={}) == cfg


@pytest.mark.parametrize(
    "data",
    [{"bogus": 1}, {"sigma": -1}, {"tau": 0}, {"n_clips": 1.5}, {"scenario": "dance"}, {"stage1_d": 30}, {"test_fraction": 1.0}],
)
def test_config_errors(data):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(data)


def test_config_unreadable(tmp_path):
    (tmp_path / "bad.yaml").write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "bad.yaml", env={})
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "nope.yaml", env={})
    with pytest.raises(ConfigError):
        PipelineConfig.load(None, env={"HOIMOTION_FOOT_GUIDANCE": "maybe"})
