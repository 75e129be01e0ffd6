from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from datacf.queries import (AlignmentError, ClassFamily, MissingRegimeError, OutcomeVector,
                            build_matrix, decompose_query, event_probability, flip_probability,
                            informed_flip_probability, render_table)
from datacf.synth import SampleId


def ov(bits, regime="r", labels=None):
    labels = labels if labels is not None else [0] * len(bits)
    ids = tuple(SampleId(c, i) for i, c in enumerate(labels))
    return OutcomeVector(regime, ids, [bool(b) for b in bits])


def count_oracle(base, treated):
    wrong = correct = fw = inv = 0
    for b, t in zip(base, treated):
        if not b:
            wrong += 1
            fw += bool(t)
        else:
            correct += 1
            inv += not t
    return wrong, correct, fw, inv


class TestFlip:
    def test_no_change(self):
        e = flip_probability(ov([0, 1, 0]), ov([0, 1, 0]))
        assert e.forward == 0 and e.inverse == 0

    def test_hand_example(self):
        e = flip_probability(ov([0, 0, 1, 1]), ov([1, 0, 1, 0]))
        assert e.forward == 0.5 and e.inverse == 0.5

    def test_all_correct_base_is_undefined(self):
        e = flip_probability(ov([1, 1]), ov([0, 1]))
        assert e.forward is None
        assert e.inverse == 0.5

    def test_misaligned(self):
        with pytest.raises(AlignmentError):
            flip_probability(ov([0, 1]), ov([0, 1, 1]))
        with pytest.raises(AlignmentError):
            flip_probability(ov([0, 1], labels=[0, 0]), ov([0, 1], labels=[0, 1]))

    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_counting_oracle(self, pairs):
        base, treated = map(list, zip(*pairs))
        e = flip_probability(ov(base), ov(treated))
        wrong, correct, fw, inv = count_oracle(base, treated)
        assert (e.n_wrong_base, e.n_correct_base, e.n_flip_fw, e.n_flip_inv) == \
            (wrong, correct, fw, inv)
        if e.forward is not None:
            assert 0.0 <= e.forward <= 1.0
        # swapping roles: flips forward from a to b are exactly flips inverse from b to a
        swapped = flip_probability(ov(treated), ov(base))
        assert e.n_flip_fw == swapped.n_flip_inv
        assert e.n_flip_inv == swapped.n_flip_fw


class TestDecompose:
    def test_hand_example(self):
        d = decompose_query(ov([0, 0, 1, 1]), ov([1, 0, 1, 0]))
        assert (d.joint, d.marginal) == (0.25, 0.5)
        assert d.ratio() == Fraction(1, 2)

    def test_disjoint_events(self):
        d = decompose_query(ov([0, 1]), ov([0, 1]))
        assert d.joint == 0 and d.ratio() == 0

    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_ratio_identity(self, pairs):
        base, treated = map(list, zip(*pairs))
        e = flip_probability(ov(base), ov(treated))
        assert decompose_query(ov(base), ov(treated)).ratio() == e.forward_fraction


def test_event_probability():
    assert event_probability(ov([1, 1, 1])) == 1.0
    assert event_probability(ov([1, 0, 1, 0])) == 0.5


class TestInformed:
    def test_identity_treatments(self):
        b = ov([0, 1, 0, 1], labels=[0, 0, 1, 1])
        assert informed_flip_probability(b, {0: b, 1: b}).forward == 0

    def test_hand_example(self):
        # misclassified: a, b of class 0 and c of class 1
        labels = [0, 0, 1, 0, 1]
        base = ov([0, 0, 0, 1, 1], labels=labels)
        t0 = ov([1, 0, 0, 1, 1], labels=labels)   # fixes a only
        t1 = ov([0, 0, 1, 1, 1], labels=labels)   # fixes c
        e = informed_flip_probability(base, {0: t0, 1: t1})
        assert e.forward_fraction == Fraction(2, 3)

    def test_single_class_reduces(self):
        base, treated = ov([0, 0, 1]), ov([1, 0, 0])
        assert informed_flip_probability(base, {0: treated}) == flip_probability(base, treated)

    def test_missing_class(self):
        b = ov([0, 1], labels=[0, 1])
        with pytest.raises(MissingRegimeError):
            informed_flip_probability(b, {0: b})


class TestMatrix:
    def test_single_cell_diagonal(self):
        store = {("a", 0): ov([0, 1, 0])}
        m = build_matrix("m", [("a", "a")], [("a", "a")], 1, store)
        cell = m.cell("a", "a")
        assert cell.forward_mean == 0.0
        assert cell.forward_se is None

    def test_two_by_two_against_hand_counts(self):
        store = {
            ("a", 0): ov([0, 0, 1, 1]), ("b", 0): ov([1, 0, 1, 0]),
            ("a", 1): ov([0, 1, 1, 1]), ("b", 1): ov([1, 1, 0, 1]),
        }
        axis = [("a", "a"), ("b", "b")]
        m = build_matrix("m", axis, axis, 2, store)
        # a->b: replicate 0 forward 1/2, replicate 1 forward 1/1
        ab = m.cell("a", "b")
        assert ab.forward_mean == pytest.approx(0.75)
        assert ab.forward_se == pytest.approx(np.std([0.5, 1.0], ddof=1) / np.sqrt(2))
        # b->a: replicate 0 forward 0/2 ... b0 wrong = {1,3}: a0 at 1,3 = 0,1 -> 1/2
        assert m.cell("b", "a").estimates[0].forward == 0.5
        # inverse a->b replicate 1: a1 correct {1,2,3}, b1 wrong at 2 -> 1/3
        assert m.cell("a", "b").estimates[1].inverse == pytest.approx(1 / 3)
        assert m.cell("a", "a").forward_mean == 0.0
        assert m.cell("b", "b").forward_mean == 0.0

    def test_missing_lists_regimes(self):
        with pytest.raises(MissingRegimeError) as exc:
            build_matrix("m", [("a", "a")], [("b", "b")], 2, {("a", 0): ov([0])})
        assert set(exc.value.missing) == {("a", 1), ("b", 0), ("b", 1)}

    def test_family_axis(self):
        labels = [0, 0, 1, 0, 1]
        store = {
            ("base", 0): ov([0, 0, 0, 1, 1], labels=labels),
            ("t0", 0): ov([1, 0, 0, 1, 1], labels=labels),
            ("t1", 0): ov([0, 0, 1, 1, 1], labels=labels),
        }
        fam = ClassFamily.of({0: "t0", 1: "t1"})
        m = build_matrix("m", [("base", "base"), ("inf", fam)], [("inf", fam)], 1, store)
        assert m.cell("base", "inf").forward_mean == pytest.approx(2 / 3)
        assert m.cell("inf", "inf").forward_mean == 0.0

    def test_undefined_rendering(self):
        store = {("a", 0): ov([1, 1])}
        m = build_matrix("m", [("a", "a")], [("a", "a")], 1, store)
        assert m.cell("a", "a").forward_mean is None
        assert "undefined" in render_table(m)
