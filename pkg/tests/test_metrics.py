import numpy as np
import pytest

from sedseg.losses import IGNORE_INDEX
from sedseg.metrics import MIoUAccumulator, compute_miou


def brute_force_miou(pred, label, n):
    ious = []
    keep = label != IGNORE_INDEX
    for c in range(n):
        p = set(np.flatnonzero((pred == c) & keep).tolist())
        g = set(np.flatnonzero((label == c) & keep).tolist())
        union = p | g
        if union:
            ious.append(len(p & g) / len(union))
    return sum(ious) / len(ious)


class TestMIoU:
    def test_hand_confusion(self):
        acc = MIoUAccumulator(2)
        acc.confusion[...] = [[3, 1], [1, 3]]
        miou, iou = compute_miou(acc)
        assert miou == 0.6
        np.testing.assert_array_equal(iou, [0.6, 0.6])

    def test_perfect_prediction(self, rng):
        label = rng.integers(0, 2, (5, 5))
        acc = MIoUAccumulator(2)
        acc.update(label, label)
        assert compute_miou(acc)[0] == 1.0

    def test_absent_class_excluded(self):
        acc = MIoUAccumulator(3)
        acc.update(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]))
        miou, iou = compute_miou(acc)
        assert np.isnan(iou[2])
        assert miou == pytest.approx((1 / 2 + 2 / 3) / 2, abs=0)

    def test_ignored_pixels_not_counted(self):
        acc = MIoUAccumulator(2)
        acc.update(np.array([1, 0]), np.array([IGNORE_INDEX, 0]))
        assert acc.total == 1 and compute_miou(acc)[0] == 1.0

    def test_brute_force_on_random_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(2, 8))
            label = rng.integers(0, n, (6, 7))
            label[rng.random((6, 7)) < 0.1] = IGNORE_INDEX
            pred = rng.integers(0, n, (6, 7))
            acc = MIoUAccumulator(n)
            acc.update(pred, label)
            assert compute_miou(acc)[0] == brute_force_miou(pred, label, n)

    def test_accumulates_across_updates(self, rng):
        preds = [rng.integers(0, 4, (3, 3)) for _ in range(3)]
        labels = [rng.integers(0, 4, (3, 3)) for _ in range(3)]
        a = MIoUAccumulator(4)
        for p, g in zip(preds, labels):
            a.update(p, g)
        b = MIoUAccumulator(4)
        b.update(np.concatenate(preds), np.concatenate(labels))
        np.testing.assert_array_equal(a.confusion, b.confusion)

    def test_empty_is_an_error(self):
        with pytest.raises(ValueError):
            compute_miou(MIoUAccumulator(3))

    def test_out_of_range_class(self):
        with pytest.raises(ValueError):
            MIoUAccumulator(2).update(np.array([2]), np.array([0]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            MIoUAccumulator(2).update(np.zeros(3), np.zeros(4))
