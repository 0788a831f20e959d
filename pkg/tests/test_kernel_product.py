"""Products, kernel products, marginals, sections, and Fubini agreement."""
import random
from fractions import Fraction as F

import pytest

from measurekit.measure import (
    HybridMeasure,
    MeasurableSet,
    Space,
    StepDensity,
    max_deviation,
)
from measurekit.joint import (
    CurveComponent,
    GridFunction,
    JointMeasure,
    KernelSection,
    TrackingAtom,
    TransitionKernel,
    fubini_check,
    joint_max_deviation,
    kernel_times_measure,
    marginal_x,
    marginal_y,
    product_measure,
    rectangle_mass,
    section,
    swap_axes,
)

UNIT = Space(intervals=((F(0), F(1)),))
MIX_SPACE = Space(atoms=("a",), intervals=((F(0), F(1)),))


def unif():
    return HybridMeasure.uniform(UNIT)


def mixture():
    return HybridMeasure(MIX_SPACE, {"a": 0.5}, StepDensity(((F(0), F(1)),), (0.5,)),
                         normalized=True)


def diagonal_joint():
    """X = Y uniform on [0,1): all mass on the identity graph."""
    kernel = TransitionKernel(
        UNIT, UNIT, UNIT.intervals,
        (KernelSection(tracking=(TrackingAtom(F(1), F(0), 1.0),)),),
        normalized=True)
    return kernel_times_measure(kernel, unif())


def quarter_cells():
    return tuple((F(k, 4), F(k + 1, 4)) for k in range(4))


class TestProductMeasure:
    def test_unit_square(self):
        j = product_measure(unif(), unif())
        assert j.grid == ((1.0,),)
        assert j.total_mass == pytest.approx(1.0)

    def test_atom_pair(self):
        a = HybridMeasure.dirac(Space(atoms=("a",)), "a")
        b = HybridMeasure.dirac(Space(atoms=("b",)), "b")
        assert product_measure(a, b).point_atoms == {("a", "b"): 1.0}

    def test_mixture_strip_and_grid(self):
        j = product_measure(mixture(), unif())
        strips = {c.signature: c.mass for c in j.curves}
        assert strips == {("x-const", "a"): pytest.approx(0.5)}
        assert j.grid_mass == pytest.approx(0.5)

    def test_rectangle_masses_on_4x4(self):
        # oracle: P(A x B) = mass(mx, A) * mass(my, B), checked on a 4x4 grid
        from measurekit.measure import mass, refine
        mx = refine(mixture(), [F(1, 4), F(1, 2), F(3, 4)])
        my = refine(unif(), [F(1, 4), F(1, 2), F(3, 4)])
        j = product_measure(mx, my)
        for (xa, xb) in quarter_cells():
            for (ya, yb) in quarter_cells():
                for atoms in (frozenset(), frozenset({"a"})):
                    sx = MeasurableSet(atoms=atoms, intervals=((xa, xb),))
                    sy = MeasurableSet(intervals=((ya, yb),))
                    want = mass(mx, sx) * mass(my, sy)
                    assert rectangle_mass(j, sx, sy) == pytest.approx(want, abs=1e-12)

    def test_marginals_recover_factors(self):
        j = product_measure(mixture(), unif())
        assert max_deviation(marginal_x(j), mixture()) <= 1e-12
        assert max_deviation(marginal_y(j), unif()) <= 1e-12


class TestKernelTimesMeasure:
    def test_tracking_atom_gives_diagonal(self):
        j = diagonal_joint()
        assert len(j.curves) == 1
        c = j.curves[0]
        assert c.slope == 1 and c.intercept == 0
        assert c.mass == pytest.approx(1.0)
        assert j.grid_mass == 0.0

    def test_constant_kernel_is_independence(self):
        k = TransitionKernel.constant(UNIT, unif())
        j = kernel_times_measure(k, unif())
        assert joint_max_deviation(j, product_measure(unif(), unif())) <= 1e-12

    def test_two_atom_rows_make_strips(self):
        bits = Space(atoms=("0", "1"))
        sec = KernelSection(label_atoms={"0": 0.5, "1": 0.5})
        k = TransitionKernel(UNIT, bits, UNIT.intervals, (sec,), normalized=True)
        j = kernel_times_measure(k, unif())
        strips = {c.signature: c.mass for c in j.curves}
        assert strips == {("x-const", "0"): pytest.approx(0.5),
                          ("x-const", "1"): pytest.approx(0.5)}

    def test_y_marginal_recovered_exactly(self):
        rng = random.Random(3)
        for _ in range(10):
            vals = [rng.uniform(0, 2) for _ in range(4)]
            total = sum(v / 4 for v in vals)
            ny = HybridMeasure(UNIT, {},
                               StepDensity(quarter_cells(),
                                           tuple(v / total for v in vals)),
                               normalized=True)
            sec = KernelSection(density=StepDensity(((F(0), F(1)),), (0.6,)),
                                tracking=(TrackingAtom(F(1, 2), F(0), 0.4),))
            k = TransitionKernel(UNIT, UNIT, UNIT.intervals, (sec,), normalized=True)
            j = kernel_times_measure(k, ny)
            assert max_deviation(marginal_y(j), ny) <= 1e-12

    def test_atomic_y_lumps(self):
        ys = Space(atoms=("b",))
        sec = KernelSection(density=StepDensity(((F(0), F(1)),), (1.0,)))
        k = TransitionKernel(ys, UNIT, (), (), {"b": sec}, normalized=True)
        ny = HybridMeasure.dirac(ys, "b")
        j = kernel_times_measure(k, ny)
        # density over x at the atomic y: a horizontal strip
        assert [c.signature for c in j.curves] == [("y-const", "b")]
        assert j.total_mass == pytest.approx(1.0)


class TestMarginals:
    def test_diagonal_marginals_are_uniform(self):
        j = diagonal_joint()
        assert max_deviation(marginal_x(j), unif()) <= 1e-12
        assert max_deviation(marginal_y(j), unif()) <= 1e-12

    def test_unit_square_marginal(self):
        j = product_measure(unif(), unif())
        assert max_deviation(marginal_x(j), unif()) <= 1e-12

    def test_atom_joint_marginal(self):
        xs = Space(atoms=("a",))
        ys = Space(atoms=("b", "c"))
        j = JointMeasure(xs, ys, {("a", "b"): 0.4, ("a", "c"): 0.6}, normalized=True)
        assert marginal_x(j).atom_weights == {"a": pytest.approx(1.0)}

    def test_monotone_curve_change_of_variables(self):
        # mass on x = y/2: the x marginal is density 2 on [0, 1/2)
        c = CurveComponent("y", ((F(0), F(1)),), (1.0,), F(1, 2), F(0), None)
        j = JointMeasure(UNIT, UNIT, {}, (), (), (), (c,), normalized=True)
        mx = marginal_x(j)
        assert mx.density.cells == ((F(0), F(1, 2)), (F(1, 2), F(1)))
        assert mx.density.values == (2.0, 0.0)


class TestSection:
    def test_diagonal_section_is_point(self):
        j = diagonal_joint()
        s = section(j, F(3, 10))
        assert s.atom_weights == {F(3, 10): 1.0}
        assert s.density.mass == 0.0

    def test_square_section_is_density(self):
        j = product_measure(unif(), unif())
        s = section(j, F(1, 3))
        assert s.density.values == (1.0,)

    def test_atom_row_section(self):
        xs = Space(atoms=("x1", "x2"))
        ys = Space(atoms=("b",))
        j = JointMeasure(xs, ys, {("x1", "b"): 0.3, ("x2", "b"): 0.7}, normalized=True)
        s = section(j, "b")
        assert s.atom_weights == pytest.approx({"x1": 0.3, "x2": 0.7})

    def test_y_outside_space(self):
        from measurekit.measure import DomainError
        with pytest.raises(DomainError):
            section(diagonal_joint(), F(3, 2))


class TestSwapAxes:
    def test_involution_on_mixed_joint(self):
        c = CurveComponent("y", ((F(0), F(1)),), (0.25,), F(-1, 2), F(1, 2), None)
        j = JointMeasure(MIX_SPACE, UNIT, {("a", F(1, 3)): 0.25},
                         MIX_SPACE.intervals, UNIT.intervals, ((0.5,),), (c,),
                         normalized=True)
        back = swap_axes(swap_axes(j))
        assert joint_max_deviation(j, back) <= 1e-12

    def test_swap_exchanges_marginals(self):
        j = product_measure(mixture(), unif())
        s = swap_axes(j)
        assert max_deviation(marginal_x(s), marginal_y(j)) <= 1e-12
        assert max_deviation(marginal_y(s), marginal_x(j)) <= 1e-12


class TestFubini:
    def test_constant_one(self):
        f = GridFunction(UNIT, UNIT, ((F(0), F(1)),), ((F(0), F(1)),), ((1.0,),))
        assert fubini_check(f, unif(), unif()) == pytest.approx((1.0, 1.0, 1.0))

    def test_quadrant_indicator(self):
        halves = ((F(0), F(1, 2)), (F(1, 2), F(1)))
        f = GridFunction(UNIT, UNIT, halves, halves, ((1.0, 0.0), (0.0, 0.0)))
        assert fubini_check(f, unif(), unif()) == pytest.approx((0.25, 0.25, 0.25))

    def test_random_grids_agree(self):
        rng = random.Random(7)
        cells8 = tuple((F(k, 8), F(k + 1, 8)) for k in range(8))
        for _ in range(10):
            vals = tuple(tuple(rng.uniform(0, 3) for _ in range(8)) for _ in range(8))
            f = GridFunction(UNIT, UNIT, cells8, cells8, vals)
            mx = HybridMeasure(UNIT, {}, StepDensity(
                cells8, tuple(rng.uniform(0, 2) for _ in range(8))))
            my = HybridMeasure(UNIT, {}, StepDensity(
                cells8, tuple(rng.uniform(0, 2) for _ in range(8))))
            p, ixy, iyx = fubini_check(f, mx, my)
            # oracle: the direct double sum
            want = sum(vals[i][jj] * mx.density.values[i] * my.density.values[jj] / 64
                       for i in range(8) for jj in range(8))
            assert p == pytest.approx(want, abs=1e-9)
            assert ixy == pytest.approx(want, abs=1e-9)
            assert iyx == pytest.approx(want, abs=1e-9)

    def test_with_atoms(self):
        f = GridFunction(MIX_SPACE, UNIT, ("a", (F(0), F(1))), ((F(0), F(1)),),
                         ((2.0,), (1.0,)))
        p, ixy, iyx = fubini_check(f, mixture(), unif())
        want = 2.0 * 0.5 * 1.0 + 1.0 * 0.5 * 1.0
        for got in (p, ixy, iyx):
            assert got == pytest.approx(want, abs=1e-12)
