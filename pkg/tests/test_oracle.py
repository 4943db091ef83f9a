"""Oracles: ground-truth reveal, noise-corrupted reveal, and the
asynchronous human-session contract.
"""

import threading
import time

import numpy as np
import pytest

from pixelpick.core import IGNORE_LABEL, GroundTruthMask, LabelSource, LabelledPixel, PixelRef
from pixelpick.oracle import (
    OracleConfig,
    OracleKind,
    PartialSessionError,
    human_collect,
    human_request,
    reveal,
    reveal_noisy,
)


@pytest.fixture
def mask():
    classes = np.zeros((8, 10), dtype=np.int32)
    classes[5, 7] = 3
    classes[0, 0] = IGNORE_LABEL
    return GroundTruthMask("img", classes, num_classes=4)


class TestReveal:
    def test_returns_gt_class(self, mask):
        assert reveal(mask, PixelRef("img", 5, 7)) == 3

    def test_out_of_bounds(self, mask):
        with pytest.raises(ValueError, match="outside"):
            reveal(mask, PixelRef("img", 8, 0))

    def test_ignore_rejected(self, mask):
        with pytest.raises(ValueError, match="IGNORE"):
            reveal(mask, PixelRef("img", 0, 0))

    def test_pure(self, mask):
        u = PixelRef("img", 2, 2)
        assert all(reveal(mask, u) == reveal(mask, u) for _ in range(5))


class TestRevealNoisy:
    def test_zero_rate_always_truthful(self, mask):
        for seed in range(50):
            assert reveal_noisy(mask, PixelRef("img", 5, 7), 0.0, seed) == 3

    def test_full_rate_never_truthful(self, mask):
        for seed in range(50):
            got = reveal_noisy(mask, PixelRef("img", 5, 7), 1.0, seed)
            assert got != 3 and 0 <= got < 4

    def test_order_independent_replay(self, mask):
        refs = [PixelRef("img", r, c) for r in range(1, 8) for c in range(10)]
        fwd = [reveal_noisy(mask, u, 0.3, 99) for u in refs]
        rev = [reveal_noisy(mask, u, 0.3, 99) for u in reversed(refs)]
        assert fwd == rev[::-1]

    def test_marginal_error_rate(self):
        # Monte Carlo oracle: wrong-label fraction 0.10 +/- 0.01 over 10k queries.
        classes = np.full((100, 100), 2, dtype=np.int32)
        gt = GroundTruthMask("big", classes, num_classes=4)
        wrong = 0
        total = 10_000
        for i in range(total):
            u = PixelRef("big", i // 100, i % 100)
            if reveal_noisy(gt, u, 0.1, seed=7) != 2:
                wrong += 1
        assert abs(wrong / total - 0.10) <= 0.01

    def test_wrong_labels_uniform_over_other_classes(self):
        classes = np.full((80, 80), 1, dtype=np.int32)
        gt = GroundTruthMask("big", classes, num_classes=4)
        counts = {0: 0, 2: 0, 3: 0}
        for i in range(6400):
            u = PixelRef("big", i // 80, i % 80)
            got = reveal_noisy(gt, u, 1.0, seed=3)
            counts[got] += 1
        for c, n in counts.items():
            assert abs(n / 6400 - 1.0 / 3.0) < 0.03


class TestOracleConfig:
    def test_error_rate_only_for_noisy(self):
        with pytest.raises(ValueError):
            OracleConfig(kind=OracleKind.SIMULATED, error_rate=0.1)
        with pytest.raises(ValueError):
            OracleConfig(kind=OracleKind.NOISY, error_rate=None)
        assert OracleConfig(kind=OracleKind.NOISY, error_rate=0.1).error_rate == 0.1


class FakeSession:
    """Minimal in-memory session implementing the oracle's protocol."""

    def __init__(self):
        self.queue = []
        self.labels = []
        self.closed = False
        self.lock = threading.Lock()

    def enqueue(self, proposals):
        with self.lock:
            self.queue.extend(proposals)

    def queue_length(self):
        with self.lock:
            return len(self.queue)

    def collected_labels(self):
        with self.lock:
            return tuple(self.labels)

    def is_closed(self):
        with self.lock:
            return self.closed

    def submit(self, class_id):
        with self.lock:
            ref = self.queue[len(self.labels)]
            self.labels.append(LabelledPixel(ref, class_id, 0, LabelSource.HUMAN))

    def close(self):
        with self.lock:
            self.closed = True


class TestHumanOracle:
    def test_labels_arrive_in_proposal_order(self):
        session = FakeSession()
        proposals = [PixelRef("a", 0, 0), PixelRef("a", 0, 1)]
        handle = human_request(session, proposals)

        def annotator():
            time.sleep(0.02)
            session.submit(2)
            session.submit(1)

        t = threading.Thread(target=annotator)
        t.start()
        labels = human_collect(handle, poll_seconds=0.01, timeout=5.0)
        t.join()
        assert [lp.pixel for lp in labels] == proposals
        assert [lp.class_id for lp in labels] == [2, 1]
        assert all(lp.source is LabelSource.HUMAN for lp in labels)

    def test_abandoned_session_yields_partial_error(self):
        session = FakeSession()
        proposals = [PixelRef("a", 0, c) for c in range(3)]
        handle = human_request(session, proposals)
        session.submit(1)
        session.close()
        with pytest.raises(PartialSessionError) as err:
            human_collect(handle, poll_seconds=0.01, timeout=5.0)
        assert len(err.value.labels) == 1
        assert err.value.labels[0].class_id == 1

    def test_empty_proposals_rejected(self):
        with pytest.raises(ValueError, match="proposals"):
            human_request(FakeSession(), [])

    def test_closed_session_rejected(self):
        session = FakeSession()
        session.close()
        with pytest.raises(ValueError, match="closed"):
            human_request(session, [PixelRef("a", 0, 0)])
