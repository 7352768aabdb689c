import numpy as np
import pytest

from crispedge import tensor as T
from crispedge.gradcheck import grad_check
from crispedge.losses import hybrid_focal_loss
from crispedge.network import (
    BRM, LAPLACIAN_KERNEL, SDMCM, Encoder, LUSNet, MSCBranch, NetConfig, ResidualBlock,
    laplacian_layer, msc_branch, receptive_field,
)
from crispedge.nn import CondConv2d
from crispedge.tensor import Tensor, backward
from oracles import naive_conv2d


def zero_weights(module):
    for _, p in module.named_parameters():
        if not _.endswith("gamma"):
            p.data[...] = 0.0


def test_laplacian_constant_and_ramp_interior_zero():
    const = laplacian_layer(Tensor(np.full((1, 2, 6, 6), 0.4))).data
    np.testing.assert_allclose(const[..., 1:-1, 1:-1], 0.0, atol=1e-15)
    ramp = np.broadcast_to(np.arange(6.0)[:, None], (6, 6))[None, None]
    assert np.all(laplacian_layer(Tensor(ramp)).data[..., 1:-1, 1:-1] == 0)


def test_laplacian_step_flanks():
    img = np.tile(np.array([0.0, 0.0, 1.0, 1.0]), (5, 1))[None, None]
    row = laplacian_layer(Tensor(img)).data[0, 0, 2]
    assert row[1] == 1.0 and row[2] == -1.0


def test_laplacian_is_fixed_and_not_a_parameter(tmp_path):
    model = LUSNet(NetConfig(stage_widths=(8, 16), decoder_width=4))
    for _, p in model.named_parameters():
        assert not (p.shape[-2:] == (3, 3) and np.array_equal(p.data[0, 0], LAPLACIAN_KERNEL))
    with pytest.raises(ValueError):
        laplacian_layer(Tensor(np.ones((1, 1, 2, 5))))
    model.save(tmp_path / "m.ckpt")
    model.load(tmp_path / "m.ckpt")
    np.testing.assert_array_equal(LAPLACIAN_KERNEL, [[0, 1, 0], [1, -4, 1], [0, 1, 0]])


def test_msc_branch_receptive_field_and_shapes(rng):
    assert receptive_field([1, 2, 3]) == 13
    for d in (1, 2, 3):
        br = MSCBranch(rng, 2, [d])
        assert msc_branch(Tensor(rng.normal(size=(1, 2, 9, 9))), br).shape == (1, 2, 9, 9)
    br = MSCBranch(rng, 2, [1, 2, 3])
    zero_weights(br)
    assert np.all(br(Tensor(rng.normal(size=(1, 2, 9, 9)))).data == 0)


def test_msc_branch_impulse_response_spans_receptive_field(rng):
    br = MSCBranch(rng, 1, [1, 2, 3])
    for conv in br.convs:
        conv.weight.data[...] = 1.0
        conv.bias.data[...] = 0.0
    x = np.zeros((1, 1, 25, 25))
    x[0, 0, 12, 12] = 1.0
    support = np.argwhere(br(Tensor(x)).data[0, 0] > 0)
    assert support.min(axis=0).tolist() == [6, 6] and support.max(axis=0).tolist() == [18, 18]


def test_sdmcm_shapes_and_errors(rng):
    m = SDMCM(rng, 64, 0.25, NetConfig().branch_dilations)
    assert m(Tensor(rng.normal(size=(1, 64, 8, 8)))).shape == (1, 16, 8, 8)
    with pytest.raises(ValueError):
        SDMCM(rng, 6, 0.25, NetConfig().branch_dilations)


@pytest.mark.parametrize("r", [0.5, 0.25, 0.125])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_blocks_preserve_spatial_dims(rng, r, d):
    m = SDMCM(rng, 16, r, ((d,), (d, d), (1, d), (d, 1)))
    assert m(Tensor(rng.normal(size=(2, 16, 8, 8)))).shape == (2, int(16 * r), 8, 8)


def test_sdmcm_zero_weight_collapse_keeps_shortcut(rng):
    m = SDMCM(rng, 8, 0.5, NetConfig().branch_dilations)
    m.eval()
    x = Tensor(rng.normal(size=(1, 8, 6, 6)))
    for branch in m.branches:
        zero_weights(branch)
    m.conv.weight.data[...] = 0.0
    m.bn_conv.beta.data[...] = 0.0
    cx = m.compress(x).data
    # fuse conv sees only the compressed shortcut
    want = naive_conv2d(cx, m.fuse.weight.data, m.fuse.bias.data)
    np.testing.assert_allclose(m(x).data, want, atol=1e-12)


def test_sdmcm_derivative_variants(rng):
    dil = NetConfig().branch_dilations
    x = Tensor(rng.normal(size=(1, 8, 6, 6)))
    none = SDMCM(np.random.default_rng(0), 8, 0.5, dil, derivative="none")
    np.testing.assert_array_equal(none(x).data, none.context(x).data)
    ident = SDMCM(np.random.default_rng(0), 8, 0.5, dil, derivative="identity")
    lap = SDMCM(np.random.default_rng(0), 8, 0.5, dil, derivative="laplacian")
    assert not np.allclose(ident(x).data, lap(x).data)


def test_condconv_single_expert_collapse(rng):
    cc = CondConv2d(rng, 2, 3, 3, experts=1)
    x = Tensor(rng.normal(size=(2, 2, 5, 5)))
    out = cc(x, routing=Tensor(np.ones((2, 1)))).data
    np.testing.assert_allclose(out, naive_conv2d(x.data, cc.experts.data[0], padding=1), atol=1e-12)


def test_condconv_identical_experts_scale_by_routing_sum(rng):
    cc = CondConv2d(rng, 2, 2, 3, experts=4)
    w = rng.normal(size=(2, 2, 3, 3))
    cc.experts.data[...] = w
    x = Tensor(rng.normal(size=(2, 2, 5, 5)))
    r = cc.routing(x).data
    assert r.shape == (2, 4) and np.all((r > 0) & (r < 1))
    out = cc(x).data
    for i in range(2):
        want = naive_conv2d(x.data[i:i + 1], r[i].sum() * w, padding=1)
        np.testing.assert_allclose(out[i:i + 1], want, atol=1e-10)


def test_condconv_routes_per_item(rng):
    cc = CondConv2d(rng, 2, 2, 3, experts=4)
    x = np.stack([np.full((2, 5, 5), -1.0), np.full((2, 5, 5), 2.0)])
    r = cc.routing(Tensor(x)).data
    assert not np.allclose(r[0], r[1])
    k = cc.mixed_kernels(Tensor(r)).data
    assert not np.allclose(k[0], k[1])


def test_condconv_gradients_through_routing(rng):
    cc = CondConv2d(rng, 2, 2, 3, experts=3)
    x = Tensor(rng.normal(size=(2, 2, 5, 5)))
    coef = rng.normal(size=(2, 2, 5, 5))
    loss = lambda _: T.tsum(cc(x) * coef)
    for t in (x, cc.experts, cc.router.weight, cc.router.bias):
        assert grad_check(loss, t) < 1e-6


def test_residual_block_zero_weights_is_relu_identity(rng):
    rb = ResidualBlock(rng, 3).eval()
    zero_weights(rb)
    x = rng.normal(size=(1, 3, 5, 5))
    np.testing.assert_allclose(rb(Tensor(x)).data, np.maximum(x, 0), atol=1e-12)


def test_brm_zero_weight_collapse_trace(rng):
    brm = BRM(rng, 4, 4, 2).eval()
    zero_weights(brm)
    shift = np.array([0.5, -0.2, 0.0, 1.5])
    brm.bn2.beta.data[...] = shift
    x = rng.normal(size=(1, 4, 5, 5))
    # residual passes relu(x); both CondConvs are zero so BN2 emits its shift
    assert brm.residual(Tensor(x)).data.tolist() == np.maximum(x, 0).tolist()
    want = np.broadcast_to(np.maximum(shift, 0).reshape(1, 4, 1, 1), x.shape)
    np.testing.assert_allclose(brm(Tensor(x)).data, want, atol=1e-12)


def test_brm_shape_and_both_residual_paths_get_gradient(rng):
    brm = BRM(rng, 6, 4, 4)
    x = Tensor(rng.normal(size=(2, 6, 6, 6)), requires_grad=True)
    out = brm(x)
    assert out.shape == (2, 4, 6, 6)
    assert BRM(rng, 4, 4, 2)(Tensor(rng.normal(size=(1, 4, 6, 6)))).shape == (1, 4, 6, 6)
    backward(T.tsum(out * rng.normal(size=out.shape)))
    assert np.abs(brm.residual.conv1.weight.grad).sum() > 0
    assert np.abs(brm.proj.conv.weight.grad).sum() > 0


def test_encoder_shapes_and_stride(rng):
    enc = Encoder(rng, 3, (16, 32, 64, 128))
    assert enc.stem_stride == 1 and enc.stem.conv.stride == 1
    shapes = [f.shape for f in enc(Tensor(rng.random((1, 3, 64, 64))))]
    assert shapes == [(1, 16, 64, 64), (1, 32, 32, 32), (1, 64, 16, 16), (1, 128, 8, 8)]
    shapes2 = [f.shape[2:] for f in enc(Tensor(rng.random((1, 3, 128, 64))))]
    assert shapes2 == [(2 * s[2], s[3]) for s in shapes]
    with pytest.raises(ValueError, match="divisible"):
        enc(Tensor(rng.random((1, 3, 60, 64))))


def test_decoder_dense_fan_in():
    cfg = NetConfig()
    ins = cfg.brm_input_channels()
    assert ins[0] == 16 * 0.25 + 3 * cfg.decoder_width
    assert ins[-1] == 128 * 0.25
    sparse = NetConfig(dense=False).brm_input_channels()
    assert sparse[0] == 4 + cfg.decoder_width
    model = LUSNet(cfg)
    assert model.decoder.brms[0].proj.conv.weight.shape[1] == ins[0]


def test_config_validation():
    for bad in (dict(compression_ratio=0.3), dict(branch_dilations=((1,), (4,), (1,), (1,))),
                dict(expert_count=0), dict(derivative="sobel"), dict(branch_dilations=((1,),))):
        with pytest.raises(ValueError):
            NetConfig(**bad)


def test_full_model_range_shape_and_determinism(rng):
    model = LUSNet(NetConfig(), seed=3)
    x = rng.normal(size=(1, 3, 64, 64)) * 5
    out = model.predict(x)
    assert out.shape == (1, 64, 64) and np.all((out >= 0) & (out <= 1))
    np.testing.assert_array_equal(out, model.predict(x))
    with pytest.raises(ValueError):
        model(Tensor(rng.random((1, 1, 64, 64))))


def test_same_seed_same_parameters():
    a, b = LUSNet(seed=5), LUSNet(seed=5)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    assert len(set(a.parameters())) == len(list(a.named_parameters()))


def test_full_model_gradient_check():
    rng = np.random.default_rng(11)
    model = LUSNet(NetConfig(), seed=0)
    x = Tensor(rng.random((1, 3, 32, 32)))
    g = (rng.random((1, 1, 32, 32)) < 0.1).astype(float)
    loss = lambda _: hybrid_focal_loss(model(x), g)
    worst = 0.0
    for _, p in model.named_parameters():
        idx = [int(rng.integers(p.size))]
        worst = max(worst, grad_check(loss, p, eps=1e-6, coords=idx))
    assert worst < 1e-4
