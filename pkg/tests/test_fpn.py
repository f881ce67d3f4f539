import numpy as np
import pytest

from vsscrowd.backbone import FeaturePyramid
from vsscrowd.config import toy_config
from vsscrowd.fpn import HS2FPN, fuse_pyramid
from vsscrowd.gradcheck import check_gradients
from vsscrowd.model import CrowdCounter
from vsscrowd.tensor import Tensor, no_grad

from .conftest import SEEDS

SMALL = dict(base_channels=4, stage_depths=(1, 1, 1), state_dim=2, **{"fusion.lateral_channels": 8})


def small_pyramid(r, scale=1.0):
    return FeaturePyramid(*(Tensor(scale * r.normal(size=s)) for s in ((4, 8, 8), (8, 4, 4), (16, 2, 2))))


def build(variant="hs2fpn", seed=0, **kw):
    cfg = toy_config(**SMALL, **{"fusion.variant": variant}, **kw)
    return HS2FPN(cfg, (4, 8, 16), np.random.default_rng(seed))


def test_fpn_add_zero_pyramid_gives_zero(rng):
    out = fuse_pyramid(small_pyramid(rng, 0.0), build("fpn_add"))
    assert out.shape == (8, 8, 8)
    assert not out.data.any()


def test_default_output_shape():
    model = CrowdCounter(toy_config())
    with no_grad():
        fused = model.fusion(model.backbone(Tensor(np.zeros((3, 64, 64)))))
    assert fused.shape == (64, 16, 16)


@pytest.mark.parametrize("variant", ["hs2fpn", "hs2fpn_no_mhf", "fpn_add", "fgfp_like"])
@pytest.mark.parametrize("connection", ["before", "post"])
def test_output_matches_finest_level(rng, variant, connection):
    out = build(variant, **{"mhf.connection": connection})(small_pyramid(rng))
    assert out.shape == (8, 8, 8)


@pytest.mark.parametrize("connection", ["before", "post"])
def test_gate_of_ones_reduces_to_no_mhf(rng, monkeypatch, connection):
    pyr = small_pyramid(rng)
    with_mhf = build("hs2fpn", **{"mhf.connection": connection})
    plain = build("hs2fpn_no_mhf", **{"mhf.connection": connection})
    for attn in (with_mhf.mhf1, with_mhf.mhf2):
        monkeypatch.setattr(attn, "gate", lambda F_h, f: Tensor(np.ones((1, F_h.shape[1] * f, F_h.shape[2] * f))))
    np.testing.assert_array_equal(with_mhf(pyr).data, plain(pyr).data)


def test_real_gate_changes_output(rng):
    pyr = small_pyramid(rng)
    assert not np.allclose(build("hs2fpn")(pyr).data, build("hs2fpn_no_mhf")(pyr).data)


@pytest.mark.parametrize("variant", ["hs2fpn", "hs2fpn_no_mhf", "fpn_add", "fgfp_like"])
def test_gradient_reaches_every_level(rng, variant):
    pyr = small_pyramid(rng)
    for t in pyr.levels():
        t.requires_grad = True
    (build(variant)(pyr) * rng.normal(size=(8, 8, 8))).sum().backward()
    for t in pyr.levels():
        assert t.grad is not None and np.abs(t.grad).max() > 0


def test_variant_swap_leaves_backbone_and_head_unchanged():
    params = {}
    for variant in ("hs2fpn", "fpn_add"):
        m = CrowdCounter(toy_config(**SMALL, **{"fusion.variant": variant}))
        params[variant] = {n: p.data for n, p in m.named_parameters() if not n.startswith("fusion.")}
    assert params["hs2fpn"].keys() == params["fpn_add"].keys()
    for name, value in params["hs2fpn"].items():
        np.testing.assert_array_equal(value, params["fpn_add"][name], err_msg=name)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("connection", ["before", "post"])
def test_gradcheck(seed, connection):
    r = np.random.default_rng(seed)
    fpn = build("hs2fpn", seed=seed, **{"mhf.connection": connection, "mhf.spatial_kernel": 3})
    pyr = small_pyramid(r)
    # VSS refinement parameters are covered by the block's own check
    params = [p for n, p in fpn.named_parameters() if not n.startswith("refine")]
    rep = check_gradients(lambda a, b, c: fpn(FeaturePyramid(a, b, c)), list(pyr.levels()), 1e-4,
                          params=params, weights=r.normal(size=(8, 8, 8)), name="fuse_pyramid")
    assert rep.passed, rep
