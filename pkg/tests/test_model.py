import numpy as np
import pytest

from swinlstm.config import ModelConfig
from swinlstm.errors import ConfigError, ShapeError
from swinlstm.model import SwinLSTM, parameter_count, stack_frames
from swinlstm.tensor import Tensor, grad_check, no_grad, ops

TINY_B = dict(variant="B", height=8, width=8, patch_size=2, embed_dim=8, depths=(2,),
              window_size=2, heads=2)


def tiny(**kw):
    return ModelConfig(**{**TINY_B, **kw})


def test_b_variant_paper_shape():
    cfg = ModelConfig(variant="B", embed_dim=128, depths=(2,), heads=4)
    m = SwinLSTM(cfg)
    assert cfg.grid == (32, 32)
    with no_grad():
        out, state = m.step(np.random.default_rng(0).random((2, 1, 64, 64)))
    assert out.shape == (2, 1, 64, 64)
    assert state[0].H.shape == (2, 32, 32, 128)


def test_d_variant_stage_grids():
    cfg = ModelConfig(variant="D", embed_dim=16, heads=2, depths=(2, 6, 6, 2))
    assert [s[0] for s in cfg.stages()] == [(32, 32), (16, 16), (16, 16), (32, 32)]
    assert [s[1] for s in cfg.stages()] == [16, 32, 32, 16]
    m = SwinLSTM(cfg)
    assert [len(c.stb.blocks) for c in m.cells] == [2, 6, 6, 2]
    with no_grad():
        out, state = m.step(np.zeros((1, 1, 64, 64), dtype=np.float32))
    assert out.shape == (1, 1, 64, 64)
    assert [s.H.shape[1:] for s in state] == [(32, 32, 16), (16, 16, 32), (16, 16, 32), (32, 32, 16)]


def test_zero_weight_network_outputs_half():
    m = SwinLSTM(tiny(), dtype=np.float64)
    m.params.fill(0.0)
    out = m.rollout(np.random.default_rng(0).random((1, 3, 1, 8, 8)), 1)
    assert out.shape == (1, 1, 1, 8, 8)
    assert np.all(out == 0.5)


def test_output_strictly_inside_unit_interval():
    m = SwinLSTM(tiny(), dtype=np.float64)
    for n in m.params.names():
        m.params[n].data[...] *= 100
    out = m.rollout(np.random.default_rng(1).random((2, 3, 1, 8, 8)), 3)
    assert np.all((out > 0) & (out < 1))


def test_rollout_step_counts():
    m = SwinLSTM(tiny())
    with no_grad():
        warm, preds, handoff = m.unroll(np.zeros((1, 10, 1, 8, 8), dtype=np.float32), 10)
    assert len(warm) == 9 and len(preds) == 10
    assert m.cells[0].stb_calls == 19
    assert m.rollout(np.zeros((1, 10, 1, 8, 8), dtype=np.float32), 40).shape == (1, 40, 1, 8, 8)


def test_rollout_feeds_predictions_back():
    m = SwinLSTM(tiny(), dtype=np.float64)
    x = np.random.default_rng(2).random((1, 4, 1, 8, 8))
    preds = m.rollout(x, 3)
    with no_grad():
        state = None
        for t in range(4):
            frame, state = m.step(x[:, t], state)
        manual = [frame.data]
        for _ in range(2):
            frame, state = m.step(frame, state)
            manual.append(frame.data)
    assert np.array_equal(preds[:, 0], manual[0])
    assert np.array_equal(preds[:, 2], manual[2])


def test_rollout_errors():
    m = SwinLSTM(tiny())
    with pytest.raises(ShapeError):
        m.rollout(np.zeros((1, 0, 1, 8, 8), dtype=np.float32), 1)
    with pytest.raises(ValueError):
        m.rollout(np.zeros((1, 2, 1, 8, 8), dtype=np.float32), 0)
    with pytest.raises(ShapeError):
        m.step(np.zeros((1, 1, 16, 16), dtype=np.float32))


def test_deterministic_forward():
    a = SwinLSTM(tiny(), seed=3).rollout(np.ones((1, 2, 1, 8, 8), dtype=np.float32) * 0.3, 2)
    b = SwinLSTM(tiny(), seed=3).rollout(np.ones((1, 2, 1, 8, 8), dtype=np.float32) * 0.3, 2)
    assert np.array_equal(a, b)


def test_parameter_count_pure_function_of_config():
    assert parameter_count(tiny()) == SwinLSTM(tiny(), seed=99).parameter_count()
    assert parameter_count(tiny(embed_dim=16)) != parameter_count(tiny())


def test_b_parameter_count_closed_form():
    # embed 4*8+8; lp 16*8+8; per block 2*LN(16) + qkv 8*24+24 + proj 72 + rel 9*2 + mlp 8*32+32+32*8+8
    # recon 8*4+4
    block = 2 * 16 + (8 * 24 + 24) + (8 * 8 + 8) + 9 * 2 + (8 * 32 + 32) + (32 * 8 + 8)
    expect = (4 * 8 + 8) + (16 * 8 + 8) + 2 * block + (8 * 4 + 4)
    assert parameter_count(tiny()) == expect


@pytest.mark.parametrize("bad", [
    dict(variant="B", depths=(2, 2)),
    dict(variant="D", depths=(2,)),
    dict(depths=(3,)),
    dict(height=9),
    dict(window_size=3),
    dict(reconstruction="nearest"),
    dict(variant="X"),
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        SwinLSTM(tiny(**bad))


def test_config_problems_listed_together():
    with pytest.raises(ConfigError) as exc:
        tiny(variant="Q", loss="L3", dropout=2.0).validate()
    assert len(exc.value.problems) == 3


# ---------------------------------------------------------------- reconstruction

def test_transposed_identity_p1():
    cfg = tiny(patch_size=1, embed_dim=2, input_channels=2, heads=1, height=4, width=4)
    m = SwinLSTM(cfg, dtype=np.float64)
    m.recon.w.data[...] = np.eye(2)
    H = np.random.default_rng(0).standard_normal((1, 4, 4, 2))
    assert np.array_equal(m.recon(Tensor(H)).data, H.transpose(0, 3, 1, 2))


def test_transposed_locality():
    m = SwinLSTM(tiny(), dtype=np.float64)
    H = np.random.default_rng(0).standard_normal((1, 4, 4, 8))
    base = m.recon(Tensor(H)).data
    H2 = H.copy()
    H2[0, 1, 2] += 1.0
    diff = np.abs(m.recon(Tensor(H2)).data - base)[0, 0] > 0
    expect = np.zeros((8, 8), bool)
    expect[2:4, 4:6] = True
    assert np.array_equal(diff, expect)


def test_bilinear_constant_grid_constant_frame():
    m = SwinLSTM(tiny(reconstruction="bilinear"), dtype=np.float64)
    out = m.recon(Tensor(np.ones((1, 4, 4, 8)) * 0.7)).data
    assert out.shape == (1, 1, 8, 8)
    assert np.allclose(out, out[0, 0, 0, 0], atol=1e-12)


def test_linear_reconstruction_shape():
    m = SwinLSTM(tiny(reconstruction="linear"))
    assert m.params["recon.weight"].shape == (4 * 4 * 8, 64)
    with no_grad():
        assert m.step(np.zeros((2, 1, 8, 8), dtype=np.float32))[0].shape == (2, 1, 8, 8)


def test_init_scheme():
    m = SwinLSTM(ModelConfig(variant="B", depths=(2,), embed_dim=32, heads=2))
    p = m.params
    assert np.all(p["recon.bias"].data == 0)
    assert np.all(p["cell0.stb.0.norm1.weight"].data == 1)
    assert np.all(p["cell0.stb.0.norm1.bias"].data == 0)
    w = p["cell0.stb.0.mlp.fc1.weight"].data
    assert np.max(np.abs(w)) <= 0.04 + 1e-7
    assert abs(w.std() - 0.02) < 0.003


def test_end_to_end_gradient():
    with_cfg = tiny()
    m = SwinLSTM(with_cfg, seed=1, dtype=np.float64)
    frames = np.random.default_rng(4).random((1, 4, 1, 8, 8))
    target = Tensor(frames[:, 1:])

    def f(*_):
        warm, preds, _ = m.unroll(Tensor(frames[:, :2]), 2)
        return ops.square(stack_frames(warm + preds) - target).mean()
    params = [m.params[n] for n in m.params.names()]
    assert grad_check(f, params, max_components=3) < 1e-4
