import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from metaplastic import harness
from metaplastic.checkpoint import (
    Checkpoint,
    CheckpointError,
    CorruptCheckpointError,
    VersionMismatchError,
    dumps_checkpoint,
    load_checkpoint,
    loads_checkpoint,
    save_checkpoint,
)
from metaplastic.config import ConfigError, default_config, dump_config, load_config, loads_config, override

from conftest import tiny_cue


def sample_ck():
    rng = np.random.default_rng(0)
    return Checkpoint(
        config={"train": {"seed": 3}},
        params={"w_in": rng.random((3, 4)), "gamma": np.array(0.99)},
        update=7,
        optimizer={"m/w_in": rng.random((3, 4))},
        optimizer_step=7,
        mask_present=np.ones((3, 4)),
        mask_sign=-np.ones((3, 4)),
    )


def test_save_load_save_is_byte_identical(tmp_path):
    ck = sample_ck()
    save_checkpoint(ck, tmp_path / "a.bin")
    save_checkpoint(load_checkpoint(tmp_path / "a.bin"), tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_round_trip_values():
    ck = sample_ck()
    back = loads_checkpoint(dumps_checkpoint(ck))
    assert back.update == 7 and back.optimizer_step == 7 and back.config == ck.config
    for k in ck.params:
        assert np.array_equal(back.params[k], ck.params[k]) and back.params[k].shape == ck.params[k].shape
    assert np.array_equal(back.mask_sign, ck.mask_sign)


def test_blobs_are_little_endian_float64():
    raw = dumps_checkpoint(Checkpoint(config={}, params={"x": np.array([1.5])}))
    assert np.array([1.5], dtype="<f8").tobytes() in raw


@pytest.mark.parametrize("cut", [5, 40, -1])
def test_truncated_file_is_corrupt(tmp_path, cut):
    raw = dumps_checkpoint(sample_ck())
    (tmp_path / "t.bin").write_bytes(raw[:cut])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(tmp_path / "t.bin")


def test_flipped_byte_fails_checksum():
    raw = bytearray(dumps_checkpoint(sample_ck()))
    raw[len(raw) // 2] ^= 0xFF
    with pytest.raises(CorruptCheckpointError):
        loads_checkpoint(bytes(raw))


def test_version_mismatch():
    raw = dumps_checkpoint(Checkpoint(config={}, params={}, version=99))
    with pytest.raises(VersionMismatchError):
        loads_checkpoint(raw)


def test_missing_file():
    with pytest.raises(CheckpointError):
        load_checkpoint("/nonexistent/ck.bin")


@settings(max_examples=30)
@given(st.dictionaries(st.text("abcdefgh_", min_size=1, max_size=6),
                       arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=4),
                              elements=st.floats(allow_nan=False)), max_size=5))
def test_round_trip_property(params):
    ck = Checkpoint(config={"k": 1}, params=params)
    back = loads_checkpoint(dumps_checkpoint(ck))
    assert set(back.params) == set(params)
    for k, v in params.items():
        assert np.array_equal(back.params[k], v)
    assert dumps_checkpoint(back) == dumps_checkpoint(ck)


# config ------------------------------------------------------------------------------------------


def test_config_text_round_trip(tmp_path):
    cfg = override(default_config(), train__seed=5, plasticity__rule="triplet", network__nm_sizes=[32])
    (tmp_path / "c.toml").write_text(dump_config(cfg))
    assert load_config(tmp_path / "c.toml") == cfg


def test_lr_scale_table_round_trips():
    cfg = loads_config("[optimizer.lr_scale]\nw_in = 0.05\n")
    assert cfg.optimizer.lr_scale == {"w_in": 0.05}
    assert loads_config(dump_config(cfg)) == cfg


def test_partial_config_keeps_defaults():
    cfg = loads_config("[cue]\nn_cues = 7\n")
    assert cfg.cue.n_cues == 7 and cfg.train.batch_episodes == default_config().train.batch_episodes


@pytest.mark.parametrize("text", [
    "[train]\ntask = 'maze'\n",
    "[cue]\nn_cues = 0\n",
    "[plasticity]\nmu = 2.0\n",
    "[plasticity]\nrule = 'triplet'\nalpha_slow = 0.5\n",
    "[bogus]\nx = 1\n",
    "[train]\nseed = 'zero'\n",
    "not toml at all [",
    "[optimizer.lr_scale]\nw_in = -1.0\n",
    "[optimizer]\nlr_scale = 3\n",
    "[character]\nscore = 'voltage'\n",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        loads_config(text)


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent.toml")


# cross-M reuse -----------------------------------------------------------------------------------


def test_checkpoint_from_five_cues_evaluates_at_nine(tmp_path):
    cfg = tiny_cue(cue__n_cues=5)
    system = harness.init_system(cfg)
    ck = harness.make_checkpoint(system, 0, harness.OptimizerState())
    save_checkpoint(ck, tmp_path / "m5.bin")
    res = harness.evaluate(tmp_path / "m5.bin", 2, cfg=override(cfg, cue__n_cues=9))
    assert res.n == 2
    again = harness.evaluate(tmp_path / "m5.bin", 2, M=9)
    assert again.accuracy == res.accuracy


def test_incompatible_checkpoint_rejected(tmp_path):
    cfg = tiny_cue()
    ck = harness.make_checkpoint(harness.init_system(cfg), 0, harness.OptimizerState())
    with pytest.raises(harness.ShapeMismatchError):
        harness.evaluate(ck, 2, cfg=override(cfg, cue__n_sensory=24, cue__group_size=6))
