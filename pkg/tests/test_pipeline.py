import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cablekit.pipeline import (
    FlowField,
    Frame,
    PipelineConfig,
    constant_predictor,
    degraded_oracle,
    estimate_flow,
    oracle_predictor,
    pad_frame,
    pad_split,
    run_stream,
    split_coarse,
    stitch,
    temporal_fuse,
    threshold_upscale,
    warp,
)
from cablekit.targets import DistanceMask
from oracles import bilinear_backward


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(patch=1000, out_factor=32)
    with pytest.raises(ValueError):
        PipelineConfig(fuse_weight=1.5)
    with pytest.raises(ValueError):
        PipelineConfig(threshold=0)


@pytest.mark.parametrize(
    "size, grid, pads",
    [((4096, 3000), (4, 3), (0, 72)), ((1024, 1024), (1, 1), (0, 0)), ((1025, 1024), (2, 1), (1023, 0))],
)
def test_pad_split(size, grid, pads):
    lay = pad_split(*size, 1024)
    assert (lay.cols, lay.rows) == grid
    assert (lay.pad_right, lay.pad_bottom) == pads
    assert len(lay.patches) == grid[0] * grid[1]
    # row-major order
    assert [(p.x0, p.y0) for p in lay.patches] == [(c * 1024, r * 1024) for r in range(grid[1]) for c in range(grid[0])]


def test_pad_split_rejects_empty():
    with pytest.raises(ValueError):
        pad_split(0, 10, 16)


def test_pad_frame_replicates_edges():
    img = np.arange(6.0).reshape(2, 3)
    out = pad_frame(img, pad_split(3, 2, 4))
    assert out.shape == (4, 4)
    np.testing.assert_array_equal(out[3], [3, 4, 5, 5])


@pytest.mark.parametrize("factor, shape", [(32, (93, 128)), (16, (187, 256))])
def test_stitch_deployed_shape(factor, shape):
    lay = pad_split(4096, 3000, 1024)
    n = 1024 // factor
    out = stitch([DistanceMask(np.ones((n, n))) for _ in lay.patches], lay, (4096, 3000), factor)
    assert out.shape == shape


def test_stitch_single_patch_identity(rng):
    v = rng.random((32, 32))
    out = stitch([DistanceMask(v)], pad_split(1024, 1024, 1024), (1024, 1024), 32)
    np.testing.assert_array_equal(out.values, v)


def test_stitch_count_mismatch():
    with pytest.raises(ValueError):
        stitch([np.ones((2, 2))], pad_split(64, 32, 32), (64, 32), 16)


@given(st.integers(1, 200), st.integers(1, 200), st.sampled_from([4, 8]), st.integers(0, 2**32 - 1))
def test_split_stitch_round_trip(w, h, factor, seed):
    x = np.random.default_rng(seed).random((h // factor, w // factor))
    lay = pad_split(w, h, 32)
    out = stitch(split_coarse(x, lay, factor), lay, (w, h), factor)
    np.testing.assert_array_equal(out.values, x)


# flow ---------------------------------------------------------------------------


def texture(rng, h, w):
    return rng.random((h, w))


def test_flow_identical_frames_zero(rng):
    img = texture(rng, 48, 48)
    f = estimate_flow(img, img, PipelineConfig())
    assert not f.dx.any() and not f.dy.any()


def test_flow_flat_frames_zero():
    img = np.full((40, 40), 0.3)
    f = estimate_flow(img, img, PipelineConfig())
    assert not f.dx.any() and not f.dy.any()


def test_flow_recovers_translation(rng):
    prev = texture(rng, 64, 64)
    cur = np.roll(prev, 3, axis=1)  # content moves +3 in x
    f = estimate_flow(prev, cur, PipelineConfig())
    interior_dx = f.dx[8:56, 16:56].round().astype(int)
    vals, counts = np.unique(interior_dx, return_counts=True)
    assert vals[counts.argmax()] == 3
    assert np.unique(f.dy[8:56, 16:56].round()).tolist() == [0.0]


def test_flow_scaled_to_coarse_grid(rng):
    prev = texture(rng, 64, 64)
    cur = np.roll(prev, 4, axis=1)
    f = estimate_flow(prev, cur, PipelineConfig(), out_shape=(16, 16))
    # 4 frame pixels are one coarse cell at this scale
    assert f.shape == (16, 16)
    assert np.median(f.dx[4:12, 4:12]) == 1.0


def test_flow_shape_mismatch():
    with pytest.raises(ValueError):
        estimate_flow(np.zeros((8, 8)), np.zeros((8, 9)), PipelineConfig())


def test_flowfield_validation():
    with pytest.raises(ValueError):
        FlowField(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        FlowField(np.full((2, 2), np.nan), np.zeros((2, 2)))


# warp / fuse / threshold --------------------------------------------------------------


@given(arrays(float, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.floats(0, 1)))
def test_warp_zero_flow_identity(v):
    out = warp(DistanceMask(v), FlowField.zeros(v.shape))
    assert out.values.tobytes() == v.tobytes()


def test_warp_moves_zero_cell():
    v = np.ones((4, 5))
    v[1, 1] = 0
    out = warp(v, FlowField(np.ones((4, 5)), np.zeros((4, 5)))).values
    expected = np.ones((4, 5))
    expected[1, 2] = 0
    np.testing.assert_array_equal(out, expected)


def test_warp_outside_grid_is_fill():
    v = np.zeros((4, 4))
    out = warp(v, FlowField(np.full((4, 4), 10.0), np.full((4, 4), -7.5))).values
    assert (out == 1.0).all()


def test_warp_matches_bilinear_oracle(rng):
    for _ in range(30):
        h, w = rng.integers(2, 10, size=2)
        v = rng.random((h, w))
        dx, dy = rng.uniform(-3, 3, (h, w)), rng.uniform(-3, 3, (h, w))
        np.testing.assert_allclose(warp(v, FlowField(dx, dy)).values, bilinear_backward(v, dx, dy), rtol=0, atol=1e-14)


def test_warp_shape_check():
    with pytest.raises(ValueError):
        warp(np.ones((3, 3)), FlowField.zeros((3, 4)))


def test_fuse_examples():
    a = DistanceMask(np.full((2, 2), 0.2))
    b = DistanceMask(np.full((2, 2), 0.6))
    assert np.allclose(temporal_fuse(a, b, 0.5).values, 0.4, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(temporal_fuse(a, b, 0.0).values, b.values)
    np.testing.assert_array_equal(temporal_fuse(b, b, 0.5).values, b.values)
    np.testing.assert_array_equal(temporal_fuse(None, b).values, b.values)


@given(arrays(float, (3, 3), elements=st.floats(0, 1)), arrays(float, (3, 3), elements=st.floats(0, 1)), st.floats(0, 1))
def test_fuse_stays_in_range(a, b, w):
    out = temporal_fuse(a, b, w).values
    assert (out >= 0).all() and (out <= 1).all()


def test_threshold_upscale_all_background():
    assert not threshold_upscale(np.ones((3, 4)), 32, 128, 96, 32).any()


def test_threshold_upscale_single_cell():
    v = np.ones((3, 4))
    v[1, 2] = 0
    m = threshold_upscale(v, 32, 128, 96, 32)
    assert m.sum() == 32 * 32 and m[32:64, 64:96].all()


def test_threshold_upscale_remainder_rows():
    v = np.ones((93, 128))
    v[92, 0] = 0
    m = threshold_upscale(v, 32, 4096, 3000, 32)
    assert m.shape == (3000, 4096)
    rows = np.flatnonzero(m[:, 0])
    assert rows[0] == 2944 and rows[-1] == 2999 and len(rows) == 56


def test_threshold_upscale_target_too_small():
    with pytest.raises(ValueError):
        threshold_upscale(np.ones((4, 4)), 32, 3, 4, 1)


# stream ---------------------------------------------------------------------------


def small_cfg(**kw):
    return PipelineConfig(patch=64, out_factor=16, **kw)


def frames(n, w=100, h=70, **data):
    return [Frame(t, w, h, data=data) for t in range(n)]


def test_constant_predictor_fixed_point():
    cfg = small_cfg()
    out = list(run_stream(frames(4), constant_predictor(0.3, cfg), cfg, flows="zero"))
    for r in out:
        assert (r.fused["cables"].values == 0.3).all()
    assert out[0].fused["cables"].shape == (4, 6)


def test_alternating_predictor_recurrence():
    cfg = small_cfg()
    seq = [0.0, 1.0, 1.0, 0.0, 1.0]

    def predictor(frame, patches):
        return [{c: np.full((4, 4), seq[frame.index]) for c in ("cables", "pylons")} for _ in patches]

    got = [r.fused["cables"].values[0, 0] for r in run_stream(frames(5), predictor, cfg, flows="zero")]
    x = seq[0]
    expected = [x]
    for c in seq[1:]:
        x = (x + c) / 2
        expected.append(x)
    assert got == expected
    assert got[:3] == [0.0, 0.5, 0.75]


def test_one_frame_stream_thresholds_prediction():
    cfg = small_cfg()
    gt = np.ones((4, 6))
    gt[2, 3] = 0
    (r,) = run_stream(frames(1, cables=gt, pylons=np.ones((4, 6))), oracle_predictor(cfg=cfg), cfg)
    np.testing.assert_array_equal(r.masks["cables"], threshold_upscale(gt, 32, 100, 70, 16))


def test_predictor_shape_error_names_frame_and_patch():
    cfg = small_cfg()

    def bad(frame, patches):
        return [{"cables": np.ones((3, 3)), "pylons": np.ones((4, 4))} for _ in patches]

    with pytest.raises(ValueError, match=r"frame 0, patch 0"):
        list(run_stream(frames(1), bad, cfg))


def test_stream_size_change_rejected():
    cfg = small_cfg()
    fr = [Frame(0, 64, 64), Frame(1, 128, 64)]
    with pytest.raises(ValueError):
        list(run_stream(fr, constant_predictor(1.0, cfg), cfg))


def test_batches_respect_config():
    cfg = small_cfg(batch=2)
    sizes = []

    def predictor(frame, patches):
        sizes.append(len(patches))
        return [{c: np.ones((4, 4)) for c in ("cables", "pylons")} for _ in patches]

    list(run_stream(frames(1, w=192, h=128), predictor, cfg))
    assert sizes == [2, 2, 2]


def test_external_flows_used():
    cfg = small_cfg()
    first = np.ones((4, 4))
    first[1, 1] = 0

    def predictor(frame, patches):
        v = first if frame.index == 0 else np.ones((4, 4))
        return [{c: v for c in ("cables", "pylons")} for _ in patches]

    flow = FlowField(np.ones((4, 4)), np.zeros((4, 4)))
    out = list(run_stream(frames(2, w=64, h=64), predictor, cfg, flows=[None, flow]))
    # the warped zero lands one cell to the right, then averages with 1.0
    assert out[1].fused["cables"].values[1, 2] == 0.5


def test_builtin_flow_tracks_moving_object(rng):
    cfg = PipelineConfig(patch=64, out_factor=8, flow_block=8, flow_radius=8)
    base = rng.random((64, 64))
    imgs = [base, np.roll(base, 8, axis=1)]
    gts = [np.ones((8, 8)) for _ in imgs]
    gts[0][4, 3] = 0
    gts[1][4, 4] = 0
    fr = [Frame(t, 64, 64, image=imgs[t], data={"cables": gts[t], "pylons": np.ones((8, 8))}) for t in range(2)]
    out = list(run_stream(fr, oracle_predictor(cfg=cfg), cfg, flows="builtin"))
    assert out[1].fused["cables"].values[4, 4] == 0.0


def test_stream_deterministic():
    cfg = small_cfg()
    gt = np.ones((4, 6))
    gt[1, :] = 0

    def go():
        fr = frames(3, cables=gt, pylons=gt)
        return [r.fused["cables"].values for r in run_stream(fr, oracle_predictor(0.1, 0.3, seed=5, cfg=cfg), cfg)]

    for a, b in zip(go(), go()):
        assert a.tobytes() == b.tobytes()


# degraded oracle ---------------------------------------------------------------------


def test_degraded_identity(rng):
    v = rng.random((5, 5))
    np.testing.assert_array_equal(degraded_oracle(v).values, v)


def test_degraded_full_dropout():
    v = np.ones((6, 6))
    v[2] = 0
    out = degraded_oracle(v, 0.0, 1.0, seed=1).values
    assert (out[2] == 1.0).all()


def test_degraded_seeded(rng):
    v = rng.random((8, 8))
    a = degraded_oracle(v, 0.2, 0.5, seed=3, key="x").values
    b = degraded_oracle(v, 0.2, 0.5, seed=3, key="x").values
    c = degraded_oracle(v, 0.2, 0.5, seed=4, key="x").values
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()
    assert (a >= 0).all() and (a <= 1).all()


def test_degraded_validation():
    with pytest.raises(ValueError):
        degraded_oracle(np.ones((2, 2)), -1.0)
    with pytest.raises(ValueError):
        degraded_oracle(np.ones((2, 2)), 0.0, 1.5)
