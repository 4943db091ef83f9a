"""Domain types: simplex maps, the annotation database, candidate pools."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pixelpick.core import (
    IGNORE_LABEL,
    AnnotationDatabase,
    DuplicatePixelError,
    GroundTruthMask,
    Image,
    LabelSource,
    LabelledPixel,
    PixelRef,
    ProbabilityMap,
    candidate_pool,
    db_insert,
    decode_entry,
    encode_entry,
    load_annotations,
    save_annotations,
    softmax_normalize,
)


def make_image(image_id="img", h=4, w=4, seed=0):
    rng = np.random.default_rng(seed)
    return Image(id=image_id, pixels=rng.random((h, w, 3), dtype=np.float32))


class TestSoftmaxNormalize:
    def test_symmetry(self):
        logits = np.zeros((2, 2, 3))
        pm = softmax_normalize(logits, "a")
        np.testing.assert_allclose(pm.probs, 1.0 / 3.0, atol=1e-12)

    def test_closed_form(self):
        logits = np.zeros((1, 1, 2))
        logits[0, 0] = [math.log(2.0), 0.0]
        pm = softmax_normalize(logits)
        np.testing.assert_allclose(pm.probs[0, 0], [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(3, 5, 4)) * 10
        a = softmax_normalize(z).probs
        b = softmax_normalize(z + 7.0).probs
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_rows_sum_to_one_tightly(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(6, 6, 5)) * 40
        pm = softmax_normalize(z)
        assert np.abs(pm.probs.sum(axis=2) - 1.0).max() < 1e-9

    def test_nonfinite_rejected_with_location(self):
        z = np.zeros((3, 3, 2))
        z[1, 2, 0] = np.nan
        with pytest.raises(ValueError, match=r"\(1, 2\)"):
            softmax_normalize(z, "bad")

    @given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=30, deadline=None)
    def test_simplex_invariant_holds(self, c, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(2, 3, c)) * rng.uniform(0.1, 50)
        pm = softmax_normalize(z)
        assert pm.probs.min() >= 0.0 and pm.probs.max() <= 1.0
        assert np.abs(pm.probs.sum(axis=2) - 1.0).max() < 1e-9


class TestProbabilityMap:
    def test_rejects_bad_sums(self):
        probs = np.full((2, 2, 2), 0.3)
        with pytest.raises(ValueError, match="simplex"):
            ProbabilityMap("x", probs)

    def test_rejects_negative(self):
        probs = np.zeros((1, 1, 2))
        probs[0, 0] = [1.2, -0.2]
        with pytest.raises(ValueError):
            ProbabilityMap("x", probs)

    def test_frozen(self):
        pm = softmax_normalize(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            pm.probs[0, 0, 0] = 5.0


class TestImageAndMask:
    def test_image_bounds_checked(self):
        with pytest.raises(ValueError, match="outside"):
            Image(id="x", pixels=np.full((2, 2, 3), 1.5, dtype=np.float32))

    def test_mask_rejects_out_of_range(self):
        cls = np.zeros((2, 2), dtype=np.int32)
        cls[0, 1] = 7
        with pytest.raises(ValueError, match="class value 7"):
            GroundTruthMask("x", cls, num_classes=3)

    def test_mask_accepts_ignore(self):
        cls = np.zeros((2, 2), dtype=np.int32)
        cls[0, 0] = IGNORE_LABEL
        mask = GroundTruthMask("x", cls, num_classes=2)
        assert mask.classes[0, 0] == IGNORE_LABEL


class TestAnnotationDatabase:
    def test_insert_into_empty(self):
        db = AnnotationDatabase(3)
        db_insert(db, LabelledPixel(PixelRef("a", 0, 0), 1, 0))
        assert len(db) == 1

    def test_duplicate_rejected(self):
        db = AnnotationDatabase(3)
        lp = LabelledPixel(PixelRef("a", 0, 0), 1, 0)
        db.insert(lp)
        with pytest.raises(DuplicatePixelError):
            db.insert(LabelledPixel(PixelRef("a", 0, 0), 2, 0))

    def test_class_bound_enforced(self):
        db = AnnotationDatabase(3)
        with pytest.raises(ValueError, match="num_classes"):
            db.insert(LabelledPixel(PixelRef("a", 0, 0), 3, 0))

    def test_round_monotonicity(self):
        db = AnnotationDatabase(3)
        db.insert(LabelledPixel(PixelRef("a", 0, 0), 1, 2))
        with pytest.raises(ValueError, match="round"):
            db.insert(LabelledPixel(PixelRef("a", 0, 1), 1, 1))

    def test_lookup_consistency(self):
        db = AnnotationDatabase(4)
        lp = LabelledPixel(PixelRef("a", 3, 5), 2, 0, LabelSource.NOISY)
        db.insert(lp)
        assert db.lookup(PixelRef("a", 3, 5)) == lp
        assert PixelRef("a", 3, 5) in db
        assert db.lookup(PixelRef("a", 3, 6)) is None

    def test_cardinality_after_batches(self):
        db = AnnotationDatabase(5)
        k, b = 7, 4
        for r in range(k):
            for i in range(b):
                db.insert(LabelledPixel(PixelRef("img", r, i), (r + i) % 5, r))
        assert len(db) == k * b

    def test_save_load_roundtrip_preserves_order(self, tmp_path):
        # Oracle: enumerate the inserted entries independently and compare.
        rng = np.random.default_rng(3)
        db = AnnotationDatabase(4)
        expected = []
        taken = set()
        sources = list(LabelSource)
        for i in range(50):
            while True:
                ref = PixelRef(f"im{rng.integers(3)}", int(rng.integers(16)), int(rng.integers(16)))
                if ref not in taken:
                    break
            taken.add(ref)
            lp = LabelledPixel(ref, int(rng.integers(4)), i // 10, sources[int(rng.integers(3))])
            expected.append(lp)
            db.insert(lp)
        path = tmp_path / "labels.jsonl"
        save_annotations(db, path)
        loaded = load_annotations(path, num_classes=4)
        assert list(loaded) == expected

    def test_jsonl_wire_format(self):
        lp = LabelledPixel(PixelRef("img_0001", 3, 7), 2, 1, LabelSource.HUMAN)
        line = encode_entry(lp)
        assert line == '{"image":"img_0001","row":3,"col":7,"class":2,"round":1,"source":"human"}'
        assert decode_entry(line) == lp

    def test_malformed_line_diagnostic(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"image":"a","row":0}\n', encoding="utf-8")
        with pytest.raises(ValueError, match="bad.jsonl:1"):
            load_annotations(path)


class TestCandidatePool:
    def test_empty_db(self):
        img = make_image("a", 2, 2)
        pool = candidate_pool([img], AnnotationDatabase())
        assert len(pool) == 4
        assert pool == {PixelRef("a", r, c) for r in range(2) for c in range(2)}

    def test_fully_labelled(self):
        img = make_image("a", 2, 2)
        db = AnnotationDatabase(2)
        for r in range(2):
            for c in range(2):
                db.insert(LabelledPixel(PixelRef("a", r, c), 0, 0))
        assert candidate_pool([img], db) == set()

    def test_partial(self):
        img = make_image("a", 2, 2)
        db = AnnotationDatabase(2)
        db.insert(LabelledPixel(PixelRef("a", 1, 0), 0, 0))
        pool = candidate_pool([img], db)
        assert len(pool) == 3
        assert PixelRef("a", 1, 0) not in pool

    def test_cardinality_multiple_images(self):
        imgs = [make_image("a", 3, 4), make_image("b", 2, 5)]
        db = AnnotationDatabase(2)
        db.insert(LabelledPixel(PixelRef("a", 0, 0), 0, 0))
        db.insert(LabelledPixel(PixelRef("b", 1, 2), 1, 0))
        assert len(candidate_pool(imgs, db)) == 3 * 4 + 2 * 5 - 2
