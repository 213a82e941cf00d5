import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from raseg.core import (
    NUM_CLASSES,
    PALETTE,
    ChannelStack,
    LabelMap,
    extract_patch,
    normalize_intensity,
    onehot_decode,
    onehot_encode,
)

label_maps = hnp.arrays(np.uint8, (8, 8), elements=st.integers(0, NUM_CLASSES - 1))


def test_onehot_single_pixel():
    out = onehot_encode(np.array([[2]], dtype=np.uint8))
    assert out.shape == (1, 1, 6)
    assert out[0, 0].tolist() == [0, 0, 1, 0, 0, 0]


def test_onehot_all_background():
    out = onehot_encode(np.zeros((4, 4), dtype=np.uint8))
    assert (out[:, :, 0] == 1).all()
    assert (out[:, :, 1:] == 0).all()


def test_onehot_matches_perpixel_loop(rng):
    labels = rng.integers(0, NUM_CLASSES, size=(8, 8)).astype(np.uint8)
    out = onehot_encode(labels)
    for r in range(8):
        for c in range(8):
            expect = np.zeros(NUM_CLASSES)
            expect[labels[r, c]] = 1.0
            assert (out[r, c] == expect).all()
    assert onehot_decode(out).classes.tolist() == labels.tolist()


@given(label_maps)
@settings(max_examples=50, deadline=None)
def test_onehot_roundtrip_and_sum(labels):
    out = onehot_encode(labels)
    assert (out.sum(axis=2) == 1.0).all()
    assert (onehot_decode(out).classes == labels).all()


def test_onehot_rejects_out_of_range():
    bad = np.zeros((2, 2), dtype=np.uint8)
    bad[1, 0] = 6
    with pytest.raises(ValueError, match=r"\(1, 0\)"):
        onehot_encode(bad)


def test_decode_argmax_and_ties():
    px = np.array([[[0.2, 0.2, 0.6, 0, 0, 0]]])
    assert onehot_decode(px).classes[0, 0] == 2
    tie = np.array([[[0.5, 0.5, 0, 0, 0, 0]]])
    assert onehot_decode(tie).classes[0, 0] == 0


def test_decode_rejects_nonfinite():
    bad = np.zeros((1, 1, 6))
    bad[0, 0, 3] = np.nan
    with pytest.raises(ValueError):
        onehot_decode(bad)


def test_normalize_linear_rescale():
    out = normalize_intensity(np.array([[0.0, 50.0, 100.0]]))
    assert out.tolist() == [[0.0, 0.5, 1.0]]


def test_normalize_constant_slice():
    assert (normalize_intensity(np.full((3, 3), 7.3)) == 0).all()


def test_normalize_range_and_idempotence(rng):
    x = rng.normal(20, 5, size=(32, 32))
    y = normalize_intensity(x)
    assert y.min() == 0.0 and y.max() == 1.0
    assert (normalize_intensity(y) == y).all()


@given(hnp.arrays(np.float64, (6, 6), elements=st.floats(-100, 100)))
@settings(max_examples=50, deadline=None)
def test_normalize_idempotent_property(x):
    y = normalize_intensity(x)
    assert (normalize_intensity(y) == y).all()
    assert 0 <= y.min() and y.max() <= 1


def _stack(h, w, c=3, rng=None):
    rng = rng or np.random.default_rng(0)
    return ChannelStack(rng.random((h, w, c)).astype(np.float32), has_prior=(c == 4))


def test_extract_patch_whole_slice(rng):
    stack = _stack(64, 64, rng=rng)
    target = rng.integers(0, 6, size=(64, 64)).astype(np.uint8)
    patch = extract_patch(stack, target, (0, 0))
    assert (patch.data == stack.channels).all()
    assert (patch.target == target).all()
    assert patch.origin == (0, 0)


def test_extract_patch_window_matches_elementwise(rng):
    stack = _stack(128, 128, rng=rng)
    target = rng.integers(0, 6, size=(128, 128)).astype(np.uint8)
    patch = extract_patch(stack, target, (10, 20))
    for r in range(0, 64, 7):
        for c in range(0, 64, 7):
            assert (patch.data[r, c] == stack.channels[10 + r, 20 + c]).all()
            assert patch.target[r, c] == target[10 + r, 20 + c]


def test_extract_patch_out_of_bounds(rng):
    stack = _stack(128, 128, rng=rng)
    target = np.zeros((128, 128), dtype=np.uint8)
    with pytest.raises(ValueError):
        extract_patch(stack, target, (100, 100))


def test_patch_tiling_reconstructs_slice(rng):
    stack = _stack(128, 128, rng=rng)
    target = rng.integers(0, 6, size=(128, 128)).astype(np.uint8)
    rebuilt = np.zeros_like(stack.channels)
    for r0 in (0, 64):
        for c0 in (0, 64):
            p = extract_patch(stack, target, (r0, c0))
            rebuilt[r0 : r0 + 64, c0 : c0 + 64] = p.data
    assert (rebuilt == stack.channels).all()


def test_channel_stack_validation():
    with pytest.raises(ValueError):
        ChannelStack(np.zeros((4, 4, 4), dtype=np.float32), has_prior=False)
    with pytest.raises(ValueError):
        ChannelStack(np.full((4, 4, 3), 2.0, dtype=np.float32), has_prior=False)


def test_palette_wm_is_white():
    assert PALETTE.grays[PALETTE.names.index("wm")] == 255
    assert PALETTE.grays[PALETTE.names.index("background")] == 0
    img = PALETTE.apply(np.array([[3, 0]], dtype=np.uint8))
    assert img.tolist() == [[255, 0]]


def test_label_map_validation():
    with pytest.raises(ValueError):
        LabelMap(np.array([[0, 6]], dtype=np.uint8))
