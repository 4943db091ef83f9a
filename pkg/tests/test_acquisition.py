"""Uncertainty scores against closed forms, selection against brute-force
and RNG-replay oracles, and the orientation/determinism properties.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pixelpick.acquisition import (
    AcquisitionConfig,
    ShortfallError,
    Strategy,
    UncertaintyMap,
    class_diversity,
    load_uncertainty_grid,
    save_selected_refs,
    save_uncertainty_grid,
    score_entropy,
    score_least_confidence,
    score_margin,
    select_random,
    select_variant_a,
    select_variant_b,
)
from pixelpick.core import IGNORE_LABEL, GroundTruthMask, PixelRef, ProbabilityMap


def pmap(rows, image_id="img"):
    """Build a ProbabilityMap from a nested list [[dist, dist, ...], ...]."""
    return ProbabilityMap(image_id, np.asarray(rows, dtype=np.float64))


class TestScores:
    def test_least_confidence_closed_forms(self):
        pm = pmap([[[1.0, 0.0, 0.0], [0.4, 0.35, 0.25]]])
        um = score_least_confidence(pm)
        assert abs(um.values[0, 0] - 0.0) < 1e-9
        assert abs(um.values[0, 1] - 0.6) < 1e-9
        uniform4 = pmap([[[0.25] * 4]])
        assert abs(score_least_confidence(uniform4).values[0, 0] - 0.75) < 1e-9

    def test_margin_closed_forms(self):
        pm = pmap([[[0.7, 0.2, 0.1], [0.5, 0.5, 0.0]]])
        um = score_margin(pm)
        assert abs(um.values[0, 0] - (-0.5)) < 1e-9
        assert abs(um.values[0, 1] - 0.0) < 1e-9
        uniform = pmap([[[1.0 / 3.0] * 3]])
        assert abs(score_margin(uniform).values[0, 0] - 0.0) < 1e-9

    def test_entropy_closed_forms(self):
        one_hot = pmap([[[0.0, 1.0, 0.0]]])
        assert abs(score_entropy(one_hot).values[0, 0] - 0.0) < 1e-9
        uniform3 = pmap([[[1.0 / 3.0] * 3]])
        assert abs(score_entropy(uniform3).values[0, 0] - math.log(3.0)) < 1e-9
        half = pmap([[[0.5, 0.5]]])
        assert abs(score_entropy(half).values[0, 0] - math.log(2.0)) < 1e-9

    @given(st.integers(min_value=2, max_value=10), st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=60, deadline=None)
    def test_orientation(self, c, seed):
        # One-hot gets the minimum, uniform the maximum, for every strategy.
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(c))
        one_hot = np.zeros(c)
        one_hot[int(rng.integers(c))] = 1.0
        uniform = np.full(c, 1.0 / c)
        grid = pmap([[one_hot, p, uniform]])
        for scorer in (score_least_confidence, score_margin, score_entropy):
            vals = scorer(grid).values[0]
            assert vals[0] <= vals[1] + 1e-12
            assert vals[1] <= vals[2] + 1e-12

    @given(st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=40, deadline=None)
    def test_lc_ranking_matches_max_prob_ascending(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.dirichlet(np.ones(4), size=12).reshape(3, 4, 4)
        pm = ProbabilityMap("x", probs)
        lc = score_least_confidence(pm).values.ravel()
        maxp = probs.max(axis=2).ravel()
        # Monotone-transform equivalence: pairwise order agreement.
        for i in range(len(lc)):
            for j in range(len(lc)):
                assert np.sign(lc[i] - lc[j]) == np.sign(maxp[j] - maxp[i])


def brute_force_top_set(values, excluded, top_percent):
    h, w = values.shape
    cands = [(r, c) for r in range(h) for c in range(w) if (r, c) not in excluded]
    ranked = sorted(cands, key=lambda rc: (-values[rc[0], rc[1]], rc[0], rc[1]))
    k = math.ceil(top_percent * len(cands) / 100.0)
    return set(ranked[:k]), len(cands)


class TestVariantB:
    EXAMPLE = np.array([[0.9, 0.1], [0.8, 0.2]])

    def test_top_half_membership(self):
        # Brute-force oracle: top-50% of 4 candidates is {(0,0), (1,0)}.
        top, _ = brute_force_top_set(self.EXAMPLE, set(), 50.0)
        assert top == {(0, 0), (1, 0)}
        for seed in range(20):
            got = select_variant_b(UncertaintyMap("a", self.EXAMPLE), 1, 50.0, None, seed)
            assert (got[0].row, got[0].col) in top

    def test_full_percent_full_n_is_exhaustive(self):
        got = select_variant_b(UncertaintyMap("a", self.EXAMPLE), 4, 100.0, None, seed=0)
        assert {(g.row, g.col) for g in got} == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_exclusion_reranks(self):
        # With (0,0) excluded, 3 candidates remain; top-50% = ceil(1.5) = 2
        # pixels = {(1,0), (1,1)} by brute force.
        excluded = {PixelRef("a", 0, 0)}
        top, n_cand = brute_force_top_set(self.EXAMPLE, {(0, 0)}, 50.0)
        assert n_cand == 3 and top == {(1, 0), (1, 1)}
        for seed in range(20):
            got = select_variant_b(UncertaintyMap("a", self.EXAMPLE), 1, 50.0, excluded, seed)
            assert (got[0].row, got[0].col) in top
            assert got[0] != PixelRef("a", 0, 0)

    def test_shortfall_reported(self):
        with pytest.raises(ShortfallError, match="requested"):
            select_variant_b(UncertaintyMap("a", self.EXAMPLE), 5, 100.0, None, 0)
        with pytest.raises(ShortfallError, match="top"):
            select_variant_b(UncertaintyMap("a", self.EXAMPLE), 2, 25.0, None, 0)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        umap = UncertaintyMap("a", rng.random((6, 6)))
        a = select_variant_b(umap, 4, 40.0, None, seed=123)
        b = select_variant_b(umap, 4, 40.0, None, seed=123)
        assert a == b

    @given(st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=100, deadline=None)
    def test_fuzzed_invariants(self, seed):
        rng = np.random.default_rng(seed)
        h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        values = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=(h, w))  # force ties
        n_excl = int(rng.integers(0, h * w // 2 + 1))
        flat = rng.choice(h * w, size=n_excl, replace=False)
        excluded = {PixelRef("z", int(f // w), int(f % w)) for f in flat}
        m = float(rng.uniform(10, 100))
        n_cand = h * w - n_excl
        top, _ = brute_force_top_set(values, {(p.row, p.col) for p in excluded}, m)
        n = int(rng.integers(1, max(2, len(top) + 1)))
        if n > len(top):
            return
        got = select_variant_b(UncertaintyMap("z", values), n, m, excluded, seed)
        coords = [(g.row, g.col) for g in got]
        assert len(got) == n
        assert len(set(coords)) == n
        assert set(coords) <= top
        assert not (set(got) & excluded)


def replay_variant_a(values, excluded, n, pct, seed):
    """Independent re-simulation of the documented RNG draw sequence."""
    h, w = values.shape
    cands = [(r, c) for r in range(h) for c in range(w) if (r, c) not in excluded]
    k = math.ceil(pct * len(cands) / 100.0)
    rng = np.random.default_rng(seed)
    sub = [cands[i] for i in rng.choice(len(cands), size=k, replace=False)]
    ranked = sorted(sub, key=lambda rc: (-values[rc[0], rc[1]], rc[0], rc[1]))
    return ranked[:n]


class TestVariantA:
    def test_full_subsample_is_global_argmax(self):
        rng = np.random.default_rng(1)
        values = rng.random((5, 5))
        got = select_variant_a(UncertaintyMap("a", values), 3, 100.0, None, seed=0)
        ranked = sorted(
            ((r, c) for r in range(5) for c in range(5)),
            key=lambda rc: (-values[rc[0], rc[1]], rc[0], rc[1]),
        )
        assert [(g.row, g.col) for g in got] == ranked[:3]

    def test_n1_is_argmax_of_subsample(self):
        rng = np.random.default_rng(2)
        values = rng.random((4, 4))
        got = select_variant_a(UncertaintyMap("a", values), 1, 50.0, None, seed=7)
        replay = replay_variant_a(values, set(), 1, 50.0, 7)
        assert [(got[0].row, got[0].col)] == replay

    def test_replay_oracle_on_crafted_map(self):
        values = np.arange(16, dtype=np.float64).reshape(4, 4) / 16.0
        values[1, 1] = values[2, 2]  # introduce a tie
        for seed in range(10):
            got = select_variant_a(UncertaintyMap("a", values), 3, 60.0, None, seed)
            replay = replay_variant_a(values, set(), 3, 60.0, seed)
            assert [(g.row, g.col) for g in got] == replay

    def test_shortfall(self):
        values = np.zeros((3, 3))
        with pytest.raises(ShortfallError, match="subsample"):
            select_variant_a(UncertaintyMap("a", values), 4, 20.0, None, 0)


class TestSelectRandom:
    def test_whole_set_when_n_equals_candidates(self):
        cands = [PixelRef("a", r, c) for r in range(2) for c in range(3)]
        got = select_random(cands, 6, seed=0)
        assert sorted(got) == sorted(cands)

    def test_empirical_uniformity(self):
        # Monte Carlo oracle: each of 4 candidates drawn with freq 0.25 +/- 0.02.
        cands = [PixelRef("a", 0, c) for c in range(4)]
        counts = {c: 0 for c in range(4)}
        draws = 10_000
        for seed in range(draws):
            (ref,) = select_random(cands, 1, seed=seed)
            counts[ref.col] += 1
        for c in range(4):
            assert abs(counts[c] / draws - 0.25) <= 0.02

    def test_per_image_independence(self):
        # Adding a second image must not change the first image's picks.
        a_only = [PixelRef("a", 0, c) for c in range(8)]
        both = a_only + [PixelRef("b", 0, c) for c in range(8)]
        got_a = select_random(a_only, 3, seed=5)
        got_both = select_random(both, 3, seed=5)
        assert [r for r in got_both if r.image_id == "a"] == got_a

    def test_shortfall(self):
        with pytest.raises(ShortfallError):
            select_random([PixelRef("a", 0, 0)], 2, seed=0)


class TestClassDiversity:
    def mask(self, classes, image_id="a"):
        arr = np.asarray(classes, dtype=np.int32)
        return GroundTruthMask(image_id, arr, num_classes=4)

    def test_single_class(self):
        gts = {"a": self.mask([[1, 1], [1, 1]])}
        refs = [PixelRef("a", 0, 0), PixelRef("a", 1, 1)]
        assert class_diversity(refs, gts) == 1.0

    def test_mean_across_images(self):
        gts = {
            "a": self.mask([[0, 1], [2, 3]], "a"),
            "b": self.mask([[1, 1], [1, 1]], "b"),
        }
        refs = [
            PixelRef("a", 0, 0),
            PixelRef("a", 0, 1),
            PixelRef("a", 1, 0),
            PixelRef("b", 0, 0),
        ]
        assert class_diversity(refs, gts) == 2.0  # (3 + 1) / 2

    def test_all_distinct_upper_bound(self):
        gts = {"a": self.mask([[0, 1], [2, 3]])}
        refs = [PixelRef("a", r, c) for r in range(2) for c in range(2)]
        assert class_diversity(refs, gts) == 4.0

    def test_ignore_excluded(self):
        classes = np.array([[1, IGNORE_LABEL]], dtype=np.int32)
        gts = {"a": GroundTruthMask("a", classes, num_classes=4)}
        refs = [PixelRef("a", 0, 0), PixelRef("a", 0, 1)]
        assert class_diversity(refs, gts) == 1.0

    def test_missing_mask_rejected(self):
        with pytest.raises(ValueError, match="no ground-truth"):
            class_diversity([PixelRef("ghost", 0, 0)], {})


class TestConfigAndDumps:
    def test_default_committee_passes(self):
        assert AcquisitionConfig().mc_passes == 20
        assert AcquisitionConfig().top_percent == 5.0

    def test_committee_needs_uncertainty(self):
        with pytest.raises(ValueError, match="committee"):
            AcquisitionConfig(strategy=Strategy.RANDOM, committee=True)

    def test_grid_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        umap = UncertaintyMap("a", rng.random((5, 7)))
        path = tmp_path / "umap.txt"
        save_uncertainty_grid(umap, path)
        loaded = load_uncertainty_grid(path, "a")
        np.testing.assert_array_equal(loaded.values, umap.values)

    def test_refs_jsonl(self, tmp_path):
        refs = [PixelRef("a", 1, 2), PixelRef("b", 0, 3)]
        path = tmp_path / "refs.jsonl"
        save_selected_refs(refs, path)
        lines = path.read_text().splitlines()
        assert lines[0] == '{"image":"a","row":1,"col":2}'
        assert len(lines) == 2
