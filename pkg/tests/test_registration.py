import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from raseg.core import LabelMap, normalize_intensity
from raseg.registration import (
    IDENTITY,
    GateDecision,
    RigidTransform2D,
    gate_fourth_channel,
    register,
    similarity,
    warp_image,
    warp_labels,
)

nonneg_images = hnp.arrays(np.float64, (12, 12), elements=st.floats(0, 1000))


def test_similarity_identical_is_one(rng):
    a = rng.random((16, 16))
    assert similarity(a, a) == 1.0


def test_similarity_disjoint_is_zero():
    a = np.zeros((4, 4))
    a[0, 0] = 3.0
    assert similarity(a, np.zeros((4, 4))) == 0.0


def test_similarity_direct_value():
    assert similarity(np.array([[2.0]]), np.array([[1.0]])) == pytest.approx(2.0 / 3.0)


def test_similarity_both_empty_is_one():
    assert similarity(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


def test_similarity_rejects_shapes_and_negatives():
    with pytest.raises(ValueError, match="shape"):
        similarity(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError, match="nonneg"):
        similarity(np.array([[-1.0]]), np.array([[1.0]]))


@given(nonneg_images, nonneg_images)
@settings(max_examples=100, deadline=None)
def test_similarity_properties(a, b):
    s = similarity(a, b)
    assert 0.0 <= s <= 1.0
    assert s == similarity(b, a)
    assert similarity(a, a) == 1.0


def test_similarity_scale_invariant_on_identical(rng):
    a = rng.random((8, 8)) + 0.1
    for c in (0.5, 3.0, 117.0):
        assert similarity(c * a, c * a) == 1.0


def _brain_slice(phantom_volume, k=12):
    return normalize_intensity(phantom_volume.modalities["T1"][k])


def test_register_identity(phantom_volume):
    img = _brain_slice(phantom_volume)
    transform, warped, sim = register(img, img)
    assert transform == IDENTITY
    assert sim == 1.0
    assert (warped == img).all()


def test_register_recovers_integer_shift(phantom_volume):
    fixed = _brain_slice(phantom_volume)
    moving = np.zeros_like(fixed)
    moving[3:, :-2] = fixed[:-3, 2:]  # fixed shifted by (+3, -2), zero fill
    transform, _, sim = register(fixed, moving)
    assert abs(transform.translation[0] - (-3)) <= 1.0
    assert abs(transform.translation[1] - 2) <= 1.0
    assert abs(math.degrees(transform.rotation)) <= 2.0
    assert sim >= similarity(fixed, moving)


def test_register_recovers_known_rigid(phantom_volume):
    fixed = _brain_slice(phantom_volume)
    rng = np.random.default_rng(7)
    for _ in range(5):
        true = RigidTransform2D(
            math.radians(rng.uniform(-10, 10)),
            (rng.uniform(-5, 5), rng.uniform(-5, 5)),
        )
        moving = warp_image(fixed, true)
        transform, _, sim = register(fixed, moving)
        # registering back should invert the forward warp
        cs, sn = math.cos(true.rotation), math.sin(true.rotation)
        inv_t = (
            -(cs * true.translation[0] + sn * true.translation[1]),
            -(-sn * true.translation[0] + cs * true.translation[1]),
        )
        assert abs(transform.rotation + true.rotation) <= math.radians(2.0)
        assert abs(transform.translation[0] - inv_t[0]) <= 1.0
        assert abs(transform.translation[1] - inv_t[1]) <= 1.0
        assert sim >= similarity(fixed, moving) - 1e-9


def test_register_never_below_identity(phantom_volume, rng):
    a = _brain_slice(phantom_volume, 8)
    b = _brain_slice(phantom_volume, 15)
    _, _, sim = register(a, b)
    assert sim >= similarity(a, b) - 1e-9


def test_register_degenerate_zero_images():
    z = np.zeros((64, 64))
    transform, _, sim = register(z, z)
    assert transform == IDENTITY and sim == 1.0
    a = np.zeros((64, 64))
    a[30:34, 30:34] = 1.0
    transform, _, sim = register(a, z)
    assert transform == IDENTITY and sim == 0.0


def test_warp_labels_identity(phantom_volume):
    labels = LabelMap(phantom_volume.labels[10])
    out = warp_labels(labels, IDENTITY)
    assert (out.classes == labels.classes).all()


def test_warp_labels_integer_translation(phantom_volume):
    labels = phantom_volume.labels[10]
    out = warp_labels(LabelMap(labels), RigidTransform2D(0.0, (5.0, 0.0)))
    expect = np.zeros_like(labels)
    expect[5:] = labels[:-5]
    assert (out.classes == expect).all()


def test_warp_labels_preserves_label_set(phantom_volume):
    labels = LabelMap(phantom_volume.labels[10])
    out = warp_labels(labels, RigidTransform2D(math.radians(7), (1.5, -2.5)))
    assert set(np.unique(out.classes)) <= set(range(6))


def test_gate_threshold_logic(phantom_volume):
    k = 12
    query = phantom_volume.modalities["T1"][k]
    labels = LabelMap(phantom_volume.labels[k])
    accept = gate_fourth_channel(query, query, labels, threshold=0.70, source=("p", k))
    assert accept.use_prior and accept.similarity == 1.0
    assert (accept.warped_prior.classes == labels.classes).all()
    reject = gate_fourth_channel(query, query, labels, threshold=1.0, source=("p", k))
    assert not reject.use_prior
    assert reject.warped_prior is None


def test_gate_decision_invariant_enforced():
    with pytest.raises(ValueError):
        GateDecision(
            use_prior=True,
            similarity=0.9,
            transform=IDENTITY,
            matched_source=("a", 0),
            warped_prior=None,
        )


def test_gate_self_match_any_threshold_below_one(phantom_volume):
    k = 10
    query = phantom_volume.modalities["T1"][k]
    labels = LabelMap(phantom_volume.labels[k])
    for thr in (0.0, 0.5, 0.99):
        d = gate_fourth_channel(query, query, labels, threshold=thr)
        assert d.use_prior
        assert (d.warped_prior.classes == labels.classes).all()
