import numpy as np
import numpy.testing as npt
import pytest

from polysed.augment import (
    AugmentationPlan,
    augment_dataset,
    block_mix,
    is_augmented_id,
    subframe_shift,
    time_stretch,
)
from polysed.features import MelSpectrogram
from polysed.sequences import TargetRoll


def make_pair(n_frames, n_bands=6, n_classes=3, seed=0, ctx="ctx0", rec="rec0"):
    rng = np.random.default_rng(seed)
    spec = MelSpectrogram(
        values=rng.normal(size=(n_frames, n_bands)),
        context_id=ctx,
        recording_id=rec,
    )
    roll = TargetRoll(values=(rng.random((n_frames, n_classes)) < 0.4).astype(np.uint8))
    return spec, roll


class TestTimeStretch:
    def test_identity_factor(self):
        spec, roll = make_pair(50)
        out_spec, out_roll = time_stretch(spec, roll, 1.0)
        npt.assert_array_equal(out_spec.values, spec.values)
        npt.assert_array_equal(out_roll.values, roll.values)

    def test_two_frame_midpoint(self):
        a = np.array([1.0, 2.0, 3.0])
        b = np.array([5.0, 6.0, 7.0])
        spec = MelSpectrogram(values=np.stack([a, b]))
        roll = TargetRoll(values=np.array([[1, 0], [0, 1]], dtype=np.uint8))
        out_spec, out_roll = time_stretch(spec, roll, 1.5)
        assert out_spec.n_frames == 3
        npt.assert_allclose(out_spec.values, np.stack([a, (a + b) / 2, b]))
        assert out_roll.n_frames == 3

    def test_shrink_to_seventy_percent(self):
        spec, roll = make_pair(100)
        out_spec, _ = time_stretch(spec, roll, 0.7)
        assert out_spec.n_frames == 70

    def test_id_tagged(self):
        spec, roll = make_pair(10, rec="r")
        out_spec, _ = time_stretch(spec, roll, 0.7)
        assert out_spec.recording_id == "r_stretch0.7"
        assert is_augmented_id(out_spec.recording_id)


class TestSubframeShift:
    def test_midpoint_shift(self):
        rows = np.array([[0.0, 2.0], [4.0, 6.0], [8.0, 10.0]])
        spec = MelSpectrogram(values=rows)
        roll = TargetRoll(values=np.array([[1], [0], [1]], dtype=np.uint8))
        out_spec, out_roll = subframe_shift(spec, roll, 0.5)
        npt.assert_allclose(out_spec.values, [[2.0, 4.0], [6.0, 8.0]])
        assert out_spec.n_frames == 2
        npt.assert_array_equal(out_roll.values, [[0], [1]])

    def test_small_shift_approaches_input(self):
        spec, roll = make_pair(20)
        out_spec, _ = subframe_shift(spec, roll, 1e-9)
        npt.assert_allclose(out_spec.values, spec.values[:-1], atol=1e-7)

    def test_constant_input_unchanged(self):
        spec = MelSpectrogram(values=np.full((10, 3), 1.25))
        roll = TargetRoll(values=np.ones((10, 2), dtype=np.uint8))
        out_spec, out_roll = subframe_shift(spec, roll, 0.25)
        npt.assert_array_equal(out_spec.values, np.full((9, 3), 1.25))
        assert out_roll.n_frames == 9

    def test_rejects_out_of_range_shift(self):
        spec, roll = make_pair(5)
        for bad in (0.0, 1.0, -0.5):
            with pytest.raises(ValueError):
                subframe_shift(spec, roll, bad)


class TestBlockMix:
    def test_idempotent(self):
        spec, roll = make_pair(30)
        out_spec, out_roll = block_mix(spec, roll, spec, roll)
        npt.assert_array_equal(out_spec.values, spec.values)
        npt.assert_array_equal(out_roll.values, roll.values)

    def test_floor_input_yields_other(self):
        spec_b, roll_b = make_pair(20, seed=5)
        floor = MelSpectrogram(values=np.full_like(spec_b.values, -1e9))
        silent = TargetRoll(values=np.zeros_like(roll_b.values))
        out_spec, out_roll = block_mix(floor, silent, spec_b, roll_b)
        npt.assert_array_equal(out_spec.values, spec_b.values)
        npt.assert_array_equal(out_roll.values, roll_b.values)

    def test_commutative(self):
        a_spec, a_roll = make_pair(25, seed=1)
        b_spec, b_roll = make_pair(25, seed=2)
        ab = block_mix(a_spec, a_roll, b_spec, b_roll)
        ba = block_mix(b_spec, b_roll, a_spec, a_roll)
        npt.assert_array_equal(ab[0].values, ba[0].values)
        npt.assert_array_equal(ab[1].values, ba[1].values)

    def test_truncates_to_shorter(self):
        a_spec, a_roll = make_pair(30, seed=1)
        b_spec, b_roll = make_pair(18, seed=2)
        out_spec, out_roll = block_mix(a_spec, a_roll, b_spec, b_roll)
        assert out_spec.n_frames == 18
        assert out_roll.n_frames == 18

    def test_pointwise_domination_and_polyphony(self):
        for seed in range(100):
            a_spec, a_roll = make_pair(15, seed=seed * 2)
            b_spec, b_roll = make_pair(15, seed=seed * 2 + 1)
            out_spec, out_roll = block_mix(a_spec, a_roll, b_spec, b_roll)
            assert np.all(out_spec.values >= a_spec.values)
            assert np.all(out_spec.values >= b_spec.values)
            counts = out_roll.values.sum(axis=1)
            assert np.all(counts >= a_roll.values.sum(axis=1))
            assert np.all(counts >= b_roll.values.sum(axis=1))

    def test_band_mismatch_rejected(self):
        a_spec, a_roll = make_pair(10, n_bands=4)
        b_spec, b_roll = make_pair(10, n_bands=5)
        with pytest.raises(ValueError, match="band count"):
            block_mix(a_spec, a_roll, b_spec, b_roll)


class TestAugmentDataset:
    def make_dataset(self, contexts=2, recs=2, frames=400):
        pairs = []
        for c in range(contexts):
            for r in range(recs):
                pairs.append(
                    make_pair(
                        frames,
                        seed=c * 10 + r,
                        ctx=f"ctx{c}",
                        rec=f"ctx{c}_rec{r}",
                    )
                )
        return pairs

    def test_per_recording_copies(self):
        pairs = self.make_dataset(contexts=1, recs=1)
        out = augment_dataset(pairs, AugmentationPlan(rng_seed=0))
        stretched = [s for s, _ in out if "_stretch" in s.recording_id]
        shifted = [s for s, _ in out if "_shift" in s.recording_id]
        mixed = [s for s, _ in out if "_mix" in s.recording_id]
        assert len(stretched) == 4
        assert len(shifted) == 3
        assert len(mixed) > 0

    def test_empty_plan_is_noop(self):
        plan = AugmentationPlan(stretch_factors=(), subframe_shifts=(), mix_expansion=0)
        assert augment_dataset(self.make_dataset(), plan) == []

    def test_expansion_ratio_matches_plan(self):
        pairs = self.make_dataset(contexts=2, recs=3, frames=500)
        original = sum(s.n_frames for s, _ in pairs)
        out = augment_dataset(pairs, AugmentationPlan(rng_seed=3))
        augmented = sum(s.n_frames for s, _ in out)
        assert 14.0 <= augmented / original <= 18.0

    def test_alignment_preserved(self):
        out = augment_dataset(self.make_dataset(), AugmentationPlan(rng_seed=1))
        for spec, roll in out:
            assert spec.n_frames == roll.n_frames

    def test_deterministic_for_seed(self):
        pairs = self.make_dataset()
        a = augment_dataset(pairs, AugmentationPlan(rng_seed=11))
        b = augment_dataset(pairs, AugmentationPlan(rng_seed=11))
        assert len(a) == len(b)
        for (sa, ra), (sb, rb) in zip(a, b):
            assert sa.recording_id == sb.recording_id
            npt.assert_array_equal(sa.values, sb.values)
            npt.assert_array_equal(ra.values, rb.values)

    def test_short_context_reduces_blocks(self, caplog):
        pairs = [make_pair(12, seed=0, ctx="tiny", rec="tiny_rec0")]
        plan = AugmentationPlan(rng_seed=0, mix_blocks_per_context=20)
        with caplog.at_level("WARNING", logger="polysed.augment"):
            out = augment_dataset(pairs, plan)
        assert any("reducing block count" in m for m in caplog.messages)
        assert any("_mix" in s.recording_id for s, _ in out)

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            AugmentationPlan(stretch_factors=(1.0,))
        with pytest.raises(ValueError):
            AugmentationPlan(subframe_shifts=(1.5,))
        with pytest.raises(ValueError):
            AugmentationPlan(mix_blocks_per_context=1)
