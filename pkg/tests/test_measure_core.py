"""Atoms + step densities: masses, refinement, integration, pushforwards."""
import math
import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from measurekit.measure import (
    AffinePiece,
    AlignmentError,
    ConstantPiece,
    DomainError,
    HybridMeasure,
    MeasurableMap,
    MeasurableSet,
    Space,
    StepDensity,
    StepFunction,
    compose,
    integrate,
    mass,
    max_deviation,
    pushforward,
    refine,
)

UNIT = Space(intervals=((F(0), F(1)),))
MIX_SPACE = Space(atoms=("a",), intervals=((F(0), F(1)),))


def uniform01():
    return HybridMeasure.uniform(UNIT)


def mixture():
    """0.5 * dirac(a) + 0.5 * uniform[0,1)."""
    return HybridMeasure(MIX_SPACE, {"a": 0.5}, StepDensity(((F(0), F(1)),), (0.5,)),
                         normalized=True)


def brute_mass(m, s):
    """Oracle: enumerate atoms and cells explicitly, no shared code path."""
    total = 0.0
    for key, w in m.atom_weights.items():
        if key in s.atoms:
            total += w
        elif isinstance(key, F) and any(a <= key < b for a, b in s.intervals):
            total += w
    for (a, b), v in zip(m.density.cells, m.density.values):
        for (x, y) in s.intervals:
            if x <= a and b <= y:
                total += v * float(b - a)
    return total


class TestMass:
    def test_uniform_half(self):
        m = refine(uniform01(), [F(1, 2)])
        assert mass(m, MeasurableSet(intervals=((F(0), F(1, 2)),))) == pytest.approx(0.5)

    def test_atomic_lookup(self):
        sp = Space(atoms=("a", "b"))
        m = HybridMeasure.from_atoms(sp, {"a": 0.3, "b": 0.7})
        assert mass(m, MeasurableSet(atoms=frozenset({"a"}))) == 0.3

    def test_mixture_set(self):
        m = refine(mixture(), [F(1, 4)])
        s = MeasurableSet(atoms=frozenset({"a"}), intervals=((F(0), F(1, 4)),))
        expected = brute_mass(m, s)
        assert expected == pytest.approx(0.625, abs=1e-15)
        assert mass(m, s) == pytest.approx(expected, abs=1e-12)

    def test_point_atom_inside_interval_part(self):
        m = HybridMeasure(UNIT, {F(1, 2): 0.25},
                          StepDensity(((F(0), F(1)),), (0.75,)), normalized=True)
        m = refine(m, [F(3, 4)])
        s = MeasurableSet(intervals=((F(0), F(3, 4)),))
        assert mass(m, s) == pytest.approx(0.25 + 0.75 * 0.75)

    def test_misaligned_set_raises(self):
        with pytest.raises(AlignmentError):
            mass(uniform01(), MeasurableSet(intervals=((F(0), F(1, 3)),)))

    def test_additive_over_disjoint_parts(self):
        m = refine(mixture(), [F(1, 4), F(1, 2)])
        parts = [
            MeasurableSet(atoms=frozenset({"a"})),
            MeasurableSet(intervals=((F(0), F(1, 4)),)),
            MeasurableSet(intervals=((F(1, 4), F(1, 2)),)),
            MeasurableSet(intervals=((F(1, 2), F(1)),)),
        ]
        assert sum(mass(m, p) for p in parts) == pytest.approx(m.total_mass, abs=1e-12)


class TestRefine:
    def test_split_uniform(self):
        m = refine(uniform01(), [F(1, 2)])
        assert m.density.cells == ((F(0), F(1, 2)), (F(1, 2), F(1)))
        for cell in m.density.cells:
            assert mass(m, MeasurableSet(intervals=(cell,))) == pytest.approx(0.5)

    def test_empty_refinement_is_identity(self):
        m = mixture()
        assert refine(m, []) == m

    def test_step_density_masses(self):
        m = HybridMeasure(UNIT, {}, StepDensity(((F(0), F(1, 2)), (F(1, 2), F(1))), (2.0, 0.0)),
                          normalized=True)
        m = refine(m, [F(1, 4)])
        cells = m.density.cells
        got = [mass(m, MeasurableSet(intervals=(c,))) for c in cells]
        assert got == pytest.approx([0.5, 0.5, 0.0], abs=1e-15)

    def test_breakpoint_outside_space(self):
        with pytest.raises(DomainError):
            refine(uniform01(), [F(3, 2)])

    @given(st.lists(st.fractions(min_value=0, max_value=1, max_denominator=64),
                    max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_refine_is_noop_on_masses(self, points):
        pts = [p for p in points if 0 < p < 1]
        m = mixture()
        r = refine(m, pts)
        assert max_deviation(m, r) <= 1e-12
        s = MeasurableSet(intervals=((F(0), F(1)),))
        assert mass(m, s) == pytest.approx(mass(r, s), abs=1e-12)


class TestIntegrate:
    def test_constant_one_is_total_mass(self):
        m = mixture()
        assert integrate(StepFunction.constant(MIX_SPACE, 1.0), m) == pytest.approx(1.0)

    def test_indicator_of_half(self):
        s = MeasurableSet(intervals=((F(0), F(1, 2)),))
        f = StepFunction.indicator(UNIT, s)
        assert integrate(f, uniform01()) == pytest.approx(0.5)

    def test_two_cell_function(self):
        f = StepFunction(UNIT, {}, ((F(0), F(1, 2)), (F(1, 2), F(1))), (2.0, 0.0))
        # oracle: explicit cell sum 2*0.5*1 + 0*0.5*1
        assert integrate(f, uniform01()) == pytest.approx(1.0, abs=1e-15)

    def test_indicator_matches_mass(self):
        rng = random.Random(5)
        m = refine(mixture(), [F(1, 8), F(3, 8), F(5, 8)])
        for _ in range(25):
            cells = [c for c in m.density.cells if rng.random() < 0.5]
            atoms = frozenset({"a"}) if rng.random() < 0.5 else frozenset()
            s = MeasurableSet(atoms=atoms, intervals=tuple(cells))
            f = StepFunction.indicator(MIX_SPACE, s)
            assert integrate(f, m) == pytest.approx(mass(m, s), abs=1e-12)


class TestPushforward:
    def test_scaling_halves_density(self):
        sp2 = Space(intervals=((F(0), F(2)),))
        fmap = MeasurableMap(UNIT, sp2, {},
                             (AffinePiece((F(0), F(1)), F(2), F(0)),))
        out = pushforward(uniform01(), fmap)
        assert out.density.values == (0.5,)
        assert out.density.cells == ((F(0), F(2)),)

    def test_quantizer_two_bins(self):
        q = MeasurableMap.quantizer(UNIT, [F(1, 2)], ["a", "b"])
        out = pushforward(uniform01(), q)
        assert out.atom_weights == pytest.approx({"a": 0.5, "b": 0.5})

    def test_mixture_quantizer(self):
        q = MeasurableMap.quantizer(MIX_SPACE, [F(1, 4)], ["b1", "b2"], {"a": "b1"})
        out = pushforward(mixture(), q)
        # oracle: masses of the preimages {a} + [0, 1/4) and [1/4, 1)
        pre1 = brute_mass(refine(mixture(), [F(1, 4)]),
                          MeasurableSet(atoms=frozenset({"a"}),
                                        intervals=((F(0), F(1, 4)),)))
        assert out.atom_weights["b1"] == pytest.approx(pre1, abs=1e-12)
        assert out.atom_weights["b2"] == pytest.approx(1 - pre1, abs=1e-12)

    def test_negative_slope(self):
        fmap = MeasurableMap(UNIT, UNIT, {},
                             (AffinePiece((F(0), F(1)), F(-1), F(1)),))
        out = pushforward(uniform01(), fmap)
        assert out.density.values == (1.0,)

    def test_total_mass_preserved(self):
        rng = random.Random(11)
        for _ in range(20):
            vals = tuple(rng.uniform(0, 2) for _ in range(4))
            m = HybridMeasure(
                MIX_SPACE, {"a": rng.uniform(0, 1)},
                StepDensity(tuple((F(k, 4), F(k + 1, 4)) for k in range(4)), vals))
            q = MeasurableMap.quantizer(MIX_SPACE, [F(1, 4), F(3, 4)],
                                        ["u", "v", "w"], {"a": "w"})
            out = pushforward(m, q)
            assert out.total_mass == pytest.approx(m.total_mass, abs=1e-12)

    def test_composition_matches_two_steps(self):
        inner = MeasurableMap(UNIT, UNIT, {},
                              (AffinePiece((F(0), F(1, 2)), F(2), F(0)),
                               AffinePiece((F(1, 2), F(1)), F(-2), F(2))))
        outer = MeasurableMap.quantizer(UNIT, [F(1, 3), F(2, 3)], ["l", "m", "r"])
        m = refine(uniform01(), [F(1, 4)])
        two_steps = pushforward(pushforward(m, inner), outer)
        one_step = pushforward(m, compose(outer, inner))
        assert two_steps.space == one_step.space
        for k in set(two_steps.atom_weights) | set(one_step.atom_weights):
            assert two_steps.atom_weights.get(k, 0.0) == pytest.approx(
                one_step.atom_weights.get(k, 0.0), abs=1e-12)

    def test_point_atom_through_affine(self):
        m = HybridMeasure(UNIT, {F(1, 3): 1.0}, StepDensity.zero(UNIT))
        sp2 = Space(intervals=((F(0), F(2)),))
        fmap = MeasurableMap(UNIT, sp2, {}, (AffinePiece((F(0), F(1)), F(2), F(0)),))
        out = pushforward(m, fmap)
        assert out.atom_weights == {F(2, 3): 1.0}


class TestSpace:
    def test_touching_intervals_merge(self):
        assert Space(intervals=((F(0), F(1)), (F(1), F(2)))) == \
            Space(intervals=((F(0), F(2)),))

    def test_duplicate_atoms_rejected(self):
        with pytest.raises(ValueError):
            Space(atoms=("a", "a"))

    def test_overlapping_intervals_rejected(self):
        with pytest.raises(ValueError):
            Space(intervals=((F(0), F(2)), (F(1), F(3))))


@given(st.integers(min_value=0, max_value=10 ** 6))
@settings(max_examples=80, deadline=None)
def test_partition_masses_sum_to_total(seed):
    rng = random.Random(seed)
    cuts = sorted({F(rng.randrange(1, 16), 16) for _ in range(rng.randrange(0, 5))})
    m = refine(mixture(), cuts)
    parts = [MeasurableSet(atoms=frozenset({"a"}))]
    parts += [MeasurableSet(intervals=(c,)) for c in m.density.cells]
    assert sum(mass(m, p) for p in parts) == pytest.approx(m.total_mass, abs=1e-12)
