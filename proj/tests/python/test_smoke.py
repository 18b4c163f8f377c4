import math

import numpy as np
import pytest

import ntlpy


def test_bandwidth_ladder():
    joint = np.array([[0.0], [1.0]])
    assert ntlpy.bandwidths(joint, mul=2.0, num=5) == [0.25, 0.5, 1.0, 2.0, 4.0]


def test_mmd_worked_example():
    a = np.array([[0.0]])
    b = np.array([[1.0]])
    value = ntlpy.mmd_fixed(a, b, [1.0])
    assert value == pytest.approx(2.0 - 2.0 * math.exp(-1.0), abs=1e-12)
    assert ntlpy.mmd(a, a) <= 1e-12


def test_loss_closed_forms():
    probs = np.array([[0.5, 0.5]])
    assert ntlpy.kl_class_loss(probs, [0]) == pytest.approx(math.log(2.0), abs=1e-12)
    assert ntlpy.ntl_star_loss(0.5, 2.0) == pytest.approx(0.3, abs=1e-15)
    parts = ntlpy.ntl_compose(0.5, 2.0, 0.8)
    assert parts["l_dis"] == pytest.approx(0.08, abs=1e-15)
    assert parts["total"] == pytest.approx(0.484, abs=1e-12)


def test_synthetic_pair_and_patch():
    src, tgt = ntlpy.synthetic_pair(seed=7, count=40, num_classes=10)
    assert src.count == 40 and tgt.count == 40
    images = src.images()
    assert images.shape == (40, 3, 32, 32) and images.dtype == np.uint8
    assert sorted(set(src.labels())) == list(range(10))

    patched = ntlpy.apply_patch(src, v=20, channel=0)
    before = images.astype(np.int64)
    after = patched.images().astype(np.int64)
    delta = after - before
    # only channel 0 moves, and only on the even-row-or-column grid
    assert delta[:, 1:, :, :].max() == 0
    assert delta[:, 0, 1::2, 1::2].max() == 0
    bumped = delta[:, 0, 0::2, :]
    assert bumped.min() >= 0 and bumped.max() <= 20
    clamped = before[:, 0, 0::2, :] + 20 > 255
    assert np.all((bumped == 20) | clamped[: bumped.shape[0]])


def test_dataset_round_trip_through_numpy():
    src, _ = ntlpy.synthetic_pair(seed=3, count=20, num_classes=10)
    rebuilt = ntlpy.dataset_from_arrays(src.images(), src.labels(), 10, name="rebuilt")
    assert rebuilt.count == src.count
    assert np.array_equal(rebuilt.images(), src.images())


def test_training_and_verification_smoke():
    src, _ = ntlpy.synthetic_pair(seed=11, count=80, num_classes=10)
    model = ntlpy.build_model(num_classes=10, seed=5)
    accs = ntlpy.train_supervised(model, src, learning_rate=1e-3, epochs=2, seed=5)
    assert len(accs) == 2
    report = ntlpy.verify_ownership(model, src, v=20, channel=0, threshold=0.5)
    assert set(report) == {"acc_without_patch", "acc_with_patch", "gap", "threshold", "verified"}
    assert report["gap"] == pytest.approx(
        report["acc_without_patch"] - report["acc_with_patch"], abs=1e-12
    )


def test_config_error_maps_to_value_error():
    with pytest.raises(ValueError):
        ntlpy.synthetic_pair(seed=1, count=4, num_classes=99)


def test_probe_mi_separable_clusters():
    rng = np.random.default_rng(0)
    z0 = rng.normal(-3.0, 0.3, size=(120, 4))
    z1 = rng.normal(3.0, 0.3, size=(120, 4))
    est = ntlpy.probe_domain_mi(z0, z1, seed=9)
    assert est["value"] <= math.log(2.0) + 1e-9
    assert est["value"] > 0.3
