import math

import numpy as np
import pytest

from dsft.masking import (
    BASE_SAMPLED,
    CurriculumSchedule,
    MaskConfig,
    MaskPlan,
    NoiseLevel,
    Provenance,
    apply_mask,
    base_mask,
    compose_mask_plan,
    curriculum_ratio,
    curriculum_topup,
    number_first_mask,
    plan_to_json,
    sample_noise,
    span_mask,
)
from dsft.rng import substream
from dsft.tokenizer import MASK_ID, SEP_ID, TokenClass, TokenizedSequence


def make_seq(prompt_words: int, completion: str) -> TokenizedSequence:
    """Sequence with synthetic classes: completion spec string of n/o/w."""
    classes = {"n": TokenClass.NUMERIC, "o": TokenClass.OPERATOR, "w": TokenClass.WORD}
    ids = [10] * prompt_words + [SEP_ID]
    cls = [TokenClass.WORD] * prompt_words + [TokenClass.SPECIAL]
    for ch in completion:
        ids.append(20 + "now".index(ch))
        cls.append(classes[ch])
    return TokenizedSequence(tuple(ids), tuple(cls), prompt_words + 1)


def fuzz_seq(rng) -> TokenizedSequence:
    prompt = int(rng.integers(1, 8))
    comp = "".join(rng.choice(list("nnoww"), size=int(rng.integers(1, 30))))
    return make_seq(prompt, comp)


class TestSampleNoise:
    def test_interval_confinement(self):
        rng = substream(0, "t")
        eps = 0.5 - 1e-3
        for _ in range(100):
            t = sample_noise(rng, eps).t
            assert abs(t - 0.5) <= 1e-3

    def test_monte_carlo_mean(self):
        rng = substream(1, "t")
        draws = [sample_noise(rng, 0.01).t for _ in range(10000)]
        assert abs(np.mean(draws) - 0.5) < 0.02

    def test_deterministic(self):
        a = sample_noise(substream(7, "t"), 0.01).t
        b = sample_noise(substream(7, "t"), 0.01).t
        assert a == b

    def test_epsilon_validated(self):
        with pytest.raises(ValueError):
            sample_noise(substream(0, "t"), 0.7)


class TestBaseMask:
    def test_ratio_zero_empty(self):
        seq = make_seq(3, "wwwww")
        assert base_mask(seq, 0.0, substream(0, "m")) == set()

    def test_exact_count_half(self):
        seq = make_seq(4, "w" * 10)
        picked = base_mask(seq, 0.5, substream(0, "m"))
        assert len(picked) == 5
        assert all(p >= seq.prompt_len for p in picked)

    def test_monte_carlo_uniformity(self):
        seq = make_seq(2, "w" * 20)
        counts = np.zeros(len(seq))
        trials = 10000
        rng = substream(3, "m")
        for _ in range(trials):
            for p in base_mask(seq, 0.25, rng):
                counts[p] += 1
        eligible = list(seq.completion_positions)
        p_hat = 5 / 20
        se = math.sqrt(p_hat * (1 - p_hat) / trials)
        for pos in eligible:
            assert abs(counts[pos] / trials - p_hat) <= 3 * se
        assert counts[: seq.prompt_len].sum() == 0


class TestNumberFirst:
    def test_full_fraction_takes_all(self):
        seq = make_seq(2, "wnwnwn")
        numeric = {p for p in seq.completion_positions
                   if seq.classes[p] is TokenClass.NUMERIC}
        assert number_first_mask(seq, set(), 1.0, substream(0, "m")) == numeric

    def test_ceil_rule(self):
        seq = make_seq(2, "nnnww")
        picked = number_first_mask(seq, set(), 0.5, substream(1, "m"))
        assert len(picked) == 2  # ceil(1.5)

    def test_no_numeric_tokens(self):
        seq = make_seq(2, "wwww")
        assert number_first_mask(seq, set(), 0.9, substream(0, "m")) == set()

    def test_disjoint_from_existing(self):
        seq = make_seq(1, "nnnn")
        existing = {1, 2}
        picked = number_first_mask(seq, existing, 1.0, substream(0, "m"))
        assert picked == {3, 4}


class TestSpanMask:
    def test_probability_zero(self):
        seq = make_seq(1, "wwwwww")
        rng = substream(0, "m")
        assert all(span_mask(seq, set(), 0.0, 3, rng) == set() for _ in range(50))

    def test_contiguity(self):
        seq = make_seq(1, "w" * 12)
        rng = substream(5, "m")
        for _ in range(50):
            span = span_mask(seq, set(), 1.0, 3, rng)
            assert len(span) == 3
            assert max(span) - min(span) == 2
            assert min(span) >= seq.prompt_len

    def test_activation_rate(self):
        seq = make_seq(1, "w" * 10)
        rng = substream(9, "m")
        hits = sum(bool(span_mask(seq, set(), 0.1, 3, rng)) for _ in range(10000))
        assert abs(hits / 10000 - 0.1) <= 0.01

    def test_too_short_completion(self):
        seq = make_seq(1, "ww")
        rng = substream(0, "m")
        assert span_mask(seq, set(), 1.0, 5, rng) == set()


class TestCurriculumRatio:
    def test_paper_band_exact(self):
        sched = CurriculumSchedule(0.10, 0.20, 2000)
        assert curriculum_ratio(sched, 0) == 0.10
        assert curriculum_ratio(sched, 2000) == 0.20
        assert curriculum_ratio(sched, 1000) == 0.15

    def test_clamp_beyond_total(self):
        sched = CurriculumSchedule(0.10, 0.20, 2000)
        assert curriculum_ratio(sched, 4000) == 0.20

    def test_monotone(self):
        sched = CurriculumSchedule(0.10, 0.20, 100)
        values = [curriculum_ratio(sched, s) for s in range(0, 120)]
        assert all(a <= b for a, b in zip(values, values[1:]))


class TestCurriculumTopup:
    def test_never_unmasks(self):
        seq = make_seq(1, "w" * 20)
        existing = set(list(seq.completion_positions)[:5])  # ratio 0.25
        assert curriculum_topup(seq, existing, 0.20, substream(0, "m")) == set()

    def test_exact_count(self):
        seq = make_seq(1, "w" * 20)
        existing = set(list(seq.completion_positions)[:2])
        added = curriculum_topup(seq, existing, 0.2, substream(0, "m"))
        assert len(added) == 2
        assert added.isdisjoint(existing)

    def test_combined_ratio_property_1000_cases(self):
        rng = substream(77, "fuzz")
        for _ in range(1000):
            seq = fuzz_seq(rng)
            total = len(seq) - seq.prompt_len
            n_existing = int(rng.integers(0, total + 1))
            existing = set(
                int(p) for p in rng.choice(
                    np.array(list(seq.completion_positions)), size=n_existing, replace=False
                )
            )
            target = float(rng.uniform(0.0, 0.95))
            added = curriculum_topup(seq, existing, target, rng)
            combined = (len(existing) + len(added)) / total
            if len(existing) / total >= target:
                assert added == set()
            else:
                assert combined >= target
                assert combined < target + 1 / total + 1e-12


class TestCompose:
    def default_config(self, **kw):
        return MaskConfig(schedule=CurriculumSchedule(0.10, 0.20, 100), **kw)

    def test_forced_single_mask(self):
        # all flags off, epsilon small so sampled t can fall below 1/|E|
        config = MaskConfig.sft_baseline(epsilon=0.01)
        seq = make_seq(2, "w" * 40)
        forced_seen = False
        for trial in range(200):
            plan = compose_mask_plan(seq, config, 0, substream(trial, "m"))
            assert len(plan.masked) >= 1
            if any(v is Provenance.FORCED for v in plan.provenance.values()):
                forced_seen = True
                assert len(plan.masked) == 1
        assert forced_seen

    def test_sft_reduction_seed_matched(self):
        config = MaskConfig.sft_baseline()
        seq = make_seq(3, "nwownww")
        for trial in range(100):
            plan = compose_mask_plan(seq, config, 5, substream(trial, "x"))
            rng = substream(trial, "x")
            t = sample_noise(rng, config.epsilon)
            manual = base_mask(seq, t.t, rng)
            if not manual:
                manual = {int(p) for p in rng.choice(
                    np.array(list(seq.completion_positions)), size=1, replace=False)}
            assert plan.masked == frozenset(manual)
            assert plan.noise.t == t.t

    def test_composition_invariants_fuzzed(self):
        rng = substream(123, "fuzz")
        config = self.default_config()
        for trial in range(2000):
            seq = fuzz_seq(rng)
            step = int(rng.integers(0, 200))
            trace = []
            plan = compose_mask_plan(seq, config, step,
                                     substream(trial, "plan"), trace=trace)
            assert len(plan.masked) >= 1
            assert min(plan.masked) >= seq.prompt_len
            sizes = [s for _, _, s in trace]
            assert all(a <= b for a, b in zip(sizes, sizes[1:]))
            assert set(plan.provenance) == set(plan.masked)

    def test_number_first_ceil_rule_in_composition(self):
        rng = substream(9, "fuzz")
        config = self.default_config()
        for trial in range(500):
            seq = fuzz_seq(rng)
            trace = []
            compose_mask_plan(seq, config, 10, substream(trial, "nf"), trace=trace)
            stages = {stage: added for stage, added, _ in trace}
            base = stages[Provenance.BASE]
            numeric_avail = [
                p for p in seq.completion_positions
                if seq.classes[p] is TokenClass.NUMERIC and p not in base
            ]
            expected = min(
                math.ceil(config.number_fraction * len(numeric_avail)), len(numeric_avail)
            ) if numeric_avail else 0
            assert len(stages[Provenance.NUMBER_FIRST]) == expected

    def test_provenance_first_writer_wins(self):
        rng = substream(4, "fuzz")
        config = self.default_config(span_prob=1.0)
        for trial in range(200):
            seq = fuzz_seq(rng)
            trace = []
            plan = compose_mask_plan(seq, config, 0, substream(trial, "pv"), trace=trace)
            seen = set()
            for stage, added, _ in trace:
                assert added.isdisjoint(seen)
                for p in added:
                    assert plan.provenance[p] is stage
                seen |= added

    def test_determinism_byte_for_byte(self):
        seq = make_seq(3, "nwownwwn")
        config = self.default_config()
        a = compose_mask_plan(seq, config, 7, substream(42, "d"))
        b = compose_mask_plan(seq, config, 7, substream(42, "d"))
        assert plan_to_json(seq, a) == plan_to_json(seq, b)

    def test_prompt_only_sequence_rejected(self):
        with pytest.raises(ValueError):
            TokenizedSequence((10, SEP_ID), (TokenClass.WORD, TokenClass.SPECIAL), 2)

    def test_step_validated(self):
        seq = make_seq(1, "www")
        with pytest.raises(ValueError):
            compose_mask_plan(seq, self.default_config(), -1, substream(0, "m"))


class TestApplyMask:
    def test_mask_count(self):
        rng = substream(15, "fuzz")
        config = MaskConfig(schedule=CurriculumSchedule(0.10, 0.20, 100))
        for trial in range(200):
            seq = fuzz_seq(rng)
            plan = compose_mask_plan(seq, config, 3, substream(trial, "am"))
            corrupted = apply_mask(seq, plan)
            masked_positions = {i for i, t in enumerate(corrupted) if t == MASK_ID}
            assert masked_positions == set(plan.masked)

    def test_restore_recovers_original(self):
        seq = make_seq(2, "nwn")
        plan = compose_mask_plan(
            seq, MaskConfig(schedule=CurriculumSchedule(0.1, 0.2, 10)), 0, substream(1, "r")
        )
        corrupted = apply_mask(seq, plan)
        for p in plan.masked:
            corrupted[p] = seq.ids[p]
        assert corrupted == list(seq.ids)

    def test_out_of_range_position_rejected(self):
        seq = make_seq(2, "nwn")
        bad = MaskPlan(frozenset({99}), {99: Provenance.BASE}, NoiseLevel(0.5), 0)
        with pytest.raises(ValueError):
            apply_mask(seq, bad)


class TestModeEquivalenceConfig:
    def test_degenerate_dsft_masks_equal_sft_masks(self):
        """With base=sampled-t and all techniques off, the full pipeline
        collapses to the uniform baseline, draw for draw."""
        degenerate = MaskConfig(
            number_fraction=0.0,
            span_prob=0.0,
            enable_number_first=False,
            enable_span=False,
            enable_curriculum=False,
            enable_weighted_loss=False,
            base=BASE_SAMPLED,
        )
        baseline = MaskConfig.sft_baseline()
        seq = make_seq(4, "nwownww")
        for trial in range(100):
            a = compose_mask_plan(seq, degenerate, trial, substream(trial, "eq"))
            b = compose_mask_plan(seq, baseline, trial, substream(trial, "eq"))
            assert plan_to_json(seq, a) == plan_to_json(seq, b)
