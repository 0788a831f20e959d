"""Joint measures on a product space, transition kernels, and their products.

A joint measure decomposes into point atoms, a grid step density, and
curve components: line masses on the graph of an affine map.  Monotone
curves are the representable form of singular dependence (mass on
``x = phi(y)``); constant curves are atom-times-density strips in either
orientation.  The class is closed under products, kernel products,
marginalisation, sections, and coordinate pushforwards.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

from .measure import (
    MASS_TOL,
    AffinePiece,
    AtomKey,
    Cell,
    ConstantPiece,
    DomainError,
    HybridMeasure,
    MeasurableMap,
    MeasurableSet,
    Space,
    SpaceMismatchError,
    StepDensity,
    _check_cells_sorted_disjoint,
    accumulate_step,
    as_fraction,
    refine_cells,
)

#: Curve signatures: a monotone affine graph, a vertical strip at an x key,
#: or a horizontal strip at a y key.
SIG_AFFINE = "affine"
SIG_X_CONST = "x-const"   # x == target, parameterised by y
SIG_Y_CONST = "y-const"   # y == target, parameterised by x


@dataclass(frozen=True)
class CurveComponent:
    """Line mass on the graph of an affine map inside the product space.

    ``axis`` names the parameter coordinate.  With ``axis="y"`` the graph is
    ``x = slope*y + intercept`` (slope != 0) or ``x = target`` (slope == 0);
    with ``axis="x"`` only the constant form ``y = target`` is allowed, since
    a strictly monotone graph is canonically parameterised by y.  `cells`
    and `values` give the line density along the parameter axis; `weight`
    is a convenience factor folded into the values at canonicalisation.
    """

    axis: str
    cells: tuple[Cell, ...]
    values: tuple[float, ...]
    slope: Fraction = Fraction(0)
    intercept: Fraction | None = None
    target: AtomKey | None = None
    weight: float = 1.0

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise ValueError("curve axis must be 'x' or 'y'")
        cells = tuple(sorted((as_fraction(a), as_fraction(b)) for a, b in self.cells))
        _check_cells_sorted_disjoint(cells, "CurveComponent.cells")
        values_in = self.values
        if len(cells) != len(values_in):
            raise ValueError("one line-density value per cell required")
        slope = as_fraction(self.slope)
        if slope != 0:
            if self.axis != "y":
                raise ValueError("monotone curves are parameterised by y")
            if self.target is not None:
                raise ValueError("monotone curve cannot carry a constant target")
            if self.intercept is None:
                raise ValueError("monotone curve needs an intercept")
            object.__setattr__(self, "intercept", as_fraction(self.intercept))
        else:
            if self.target is None:
                raise ValueError("constant curve needs a target atom or point")
            if self.intercept is not None:
                raise ValueError("constant curve takes a target, not an intercept")
            if not isinstance(self.target, str):
                object.__setattr__(self, "target", as_fraction(self.target))
        w = float(self.weight)
        if not math.isfinite(w) or w < 0:
            raise ValueError("curve weight must be finite and >= 0")
        values = tuple(float(v) * w for v in values_in)
        for v in values:
            if not math.isfinite(v) or v < 0:
                raise ValueError("line density values must be finite and >= 0")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "slope", slope)
        object.__setattr__(self, "weight", 1.0)

    @property
    def signature(self):
        if self.slope != 0:
            return (SIG_AFFINE, self.slope, self.intercept)
        if self.axis == "y":
            return (SIG_X_CONST, self.target)
        return (SIG_Y_CONST, self.target)

    def phi(self, t: Fraction) -> AtomKey:
        """Graph location for parameter value t."""
        if self.slope != 0:
            return self.slope * t + self.intercept
        return self.target

    def value_at(self, t: Fraction) -> float:
        for (a, b), v in zip(self.cells, self.values):
            if a <= t < b:
                return v
        return 0.0

    @property
    def mass(self) -> float:
        return sum(v * float(b - a) for (a, b), v in zip(self.cells, self.values))

    def refined(self, points: Iterable[Fraction]) -> "CurveComponent":
        pts = sorted(set(points))
        cells: list[Cell] = []
        values: list[float] = []
        for (a, b), v in zip(self.cells, self.values):
            lo = bisect.bisect_right(pts, a)
            hi = bisect.bisect_left(pts, b)
            left = a
            for p in pts[lo:hi]:
                cells.append((left, p))
                values.append(v)
                left = p
            cells.append((left, b))
            values.append(v)
        return CurveComponent(self.axis, tuple(cells), tuple(values),
                              self.slope, self.intercept, self.target)

    def support_cells(self) -> list[Cell]:
        return [c for c, v in zip(self.cells, self.values) if v > 0]


def _merge_curves(curves: Sequence[CurveComponent]) -> tuple[CurveComponent, ...]:
    """Canonicalise: one component per signature, overlaps summed."""
    by_sig: dict[tuple, list[CurveComponent]] = {}
    for c in curves:
        by_sig.setdefault(c.signature, []).append(c)
    out = []
    for sig, group in sorted(by_sig.items(), key=lambda kv: repr(kv[0])):
        proto = group[0]
        if len(group) == 1:
            out.append(proto)
            continue
        pts: set[Fraction] = set()
        for c in group:
            for a, b in c.cells:
                pts |= {a, b}
        refined = [g.refined(pts) for g in group]
        acc: dict[Cell, float] = {}
        for g in refined:
            for cell, v in zip(g.cells, g.values):
                acc[cell] = acc.get(cell, 0.0) + v
        cells = sorted(acc)
        out.append(CurveComponent(proto.axis, tuple(cells),
                                  tuple(acc[c] for c in cells),
                                  proto.slope, proto.intercept, proto.target))
    return tuple(out)


def _span_slice(sorted_points: list, cells: Sequence[Cell]) -> list:
    """The sorted points that fall inside the overall span of `cells`."""
    if not cells:
        return []
    lo = bisect.bisect_right(sorted_points, cells[0][0])
    hi = bisect.bisect_left(sorted_points, cells[-1][1])
    return sorted_points[lo:hi]


def _refinement_index(cells, new_cells):
    """For each refined cell, the index of the parent cell containing it."""
    starts = [a for a, _b in cells]
    out = []
    for (a, _b) in new_cells:
        i = bisect.bisect_right(starts, a) - 1
        if i < 0 or not (cells[i][0] <= a < cells[i][1]):
            raise AlignmentErrorInternal(a)
        out.append(i)
    return out


def _expand_grid(x_cells, y_cells, values, new_x, new_y):
    """Re-index a step grid onto refined partitions (values repeat)."""
    xi = _refinement_index(x_cells, new_x)
    yi = _refinement_index(y_cells, new_y)
    return tuple(tuple(values[i][j] for j in yi) for i in xi)


class AlignmentErrorInternal(Exception):
    pass


@dataclass(frozen=True)
class JointMeasure:
    """Point atoms + grid step density + curve components on X x Y.

    Construction canonicalises: curves are merged by signature, grid
    partitions are refined so that every curve cell lies inside a single
    grid cell of its parameter axis (so slice densities are constant per
    grid cell).
    """

    x_space: Space
    y_space: Space
    point_atoms: Mapping[tuple[AtomKey, AtomKey], float] = field(default_factory=dict)
    x_cells: tuple[Cell, ...] = ()
    y_cells: tuple[Cell, ...] = ()
    grid: tuple[tuple[float, ...], ...] = ()
    curves: tuple[CurveComponent, ...] = ()
    normalized: bool = False

    def __post_init__(self):
        atoms: dict[tuple[AtomKey, AtomKey], float] = {}
        for (kx, ky), w in self.point_atoms.items():
            kx = kx if isinstance(kx, str) else as_fraction(kx)
            ky = ky if isinstance(ky, str) else as_fraction(ky)
            if not self.x_space.contains_key(kx):
                raise DomainError(f"x key {kx!r} outside space")
            if not self.y_space.contains_key(ky):
                raise DomainError(f"y key {ky!r} outside space")
            w = float(w)
            if not math.isfinite(w) or w < 0:
                raise ValueError("atom weights must be finite and >= 0")
            atoms[(kx, ky)] = atoms.get((kx, ky), 0.0) + w

        x_cells = tuple((as_fraction(a), as_fraction(b)) for a, b in self.x_cells)
        y_cells = tuple((as_fraction(a), as_fraction(b)) for a, b in self.y_cells)
        if not x_cells:
            x_cells = self.x_space.intervals
        if not y_cells:
            y_cells = self.y_space.intervals
        grid = tuple(tuple(float(v) for v in row) for row in self.grid)
        if not grid:
            grid = tuple(tuple(0.0 for _ in y_cells) for _ in x_cells)
        if len(grid) != len(x_cells) or any(len(r) != len(y_cells) for r in grid):
            raise ValueError("grid shape must be len(x_cells) x len(y_cells)")
        for row in grid:
            for v in row:
                if not math.isfinite(v) or v < 0:
                    raise ValueError("grid values must be finite and >= 0")

        curves = _merge_curves(self.curves)
        for c in curves:
            param_space = self.y_space if c.axis == "y" else self.x_space
            other_space = self.x_space if c.axis == "y" else self.y_space
            for a, b in c.cells:
                if not any(ia <= a and b <= ib for ia, ib in param_space.intervals):
                    raise DomainError(f"curve cell [{a},{b}) outside the parameter space")
            if c.slope != 0:
                for a, b in c.cells:
                    lo, hi = sorted((c.phi(a), c.phi(b)))
                    if not any(ia <= lo and hi <= ib for ia, ib in other_space.intervals):
                        raise DomainError("curve image leaves the x space")
            else:
                if not other_space.contains_key(c.target):
                    raise DomainError(f"curve target {c.target!r} outside space")

        # align grid partitions with curve cells (and vice versa)
        y_pts = {p for c in curves if c.axis == "y" for cell in c.cells for p in cell}
        x_pts = {p for c in curves if c.axis == "x" for cell in c.cells for p in cell}
        new_x = tuple(refine_cells(x_cells, x_pts))
        new_y = tuple(refine_cells(y_cells, y_pts))
        if new_x != x_cells or new_y != y_cells:
            grid = _expand_grid(x_cells, y_cells, grid, new_x, new_y)
            x_cells, y_cells = new_x, new_y
        grid_x_bounds = sorted({p for cell in x_cells for p in cell})
        grid_y_bounds = sorted({p for cell in y_cells for p in cell})
        refined_curves = []
        for c in curves:
            pts = _span_slice(grid_y_bounds if c.axis == "y" else grid_x_bounds,
                              c.cells)
            refined_curves.append(c.refined(pts) if pts else c)
        curves = tuple(refined_curves)

        try:
            _check_partitions(self.x_space.intervals, x_cells)
            _check_partitions(self.y_space.intervals, y_cells)
        except ValueError as e:
            raise DomainError(str(e)) from None

        object.__setattr__(self, "point_atoms", atoms)
        object.__setattr__(self, "x_cells", x_cells)
        object.__setattr__(self, "y_cells", y_cells)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "curves", curves)
        if self.normalized and abs(self.total_mass - 1.0) > MASS_TOL:
            raise ValueError(f"normalized joint has mass {self.total_mass}")

    @property
    def grid_mass(self) -> float:
        total = 0.0
        for (xa, xb), row in zip(self.x_cells, self.grid):
            for (ya, yb), v in zip(self.y_cells, row):
                total += v * float(xb - xa) * float(yb - ya)
        return total

    @property
    def total_mass(self) -> float:
        return (sum(self.point_atoms.values()) + self.grid_mass
                + sum(c.mass for c in self.curves))

    def grid_value_at(self, x: Fraction, y: Fraction) -> float:
        for (xa, xb), row in zip(self.x_cells, self.grid):
            if xa <= x < xb:
                for (ya, yb), v in zip(self.y_cells, row):
                    if ya <= y < yb:
                        return v
        return 0.0


def _check_partitions(intervals, cells):
    cursor_cells = sorted(cells)
    i = 0
    for a, b in intervals:
        cursor = a
        while cursor < b:
            if i >= len(cursor_cells) or cursor_cells[i][0] != cursor:
                raise ValueError(f"grid cells do not tile the space at {cursor}")
            cursor = cursor_cells[i][1]
            i += 1
    if i != len(cursor_cells):
        raise ValueError("grid cells extend outside the space")


def refine_joint(j: JointMeasure, x_points: Iterable[Fraction] = (),
                 y_points: Iterable[Fraction] = ()) -> JointMeasure:
    """Same joint on grid partitions refined at the given points."""
    new_x = tuple(refine_cells(j.x_cells, (as_fraction(p) for p in x_points)))
    new_y = tuple(refine_cells(j.y_cells, (as_fraction(p) for p in y_points)))
    grid = _expand_grid(j.x_cells, j.y_cells, j.grid, new_x, new_y)
    return JointMeasure(j.x_space, j.y_space, j.point_atoms, new_x, new_y, grid,
                        j.curves, j.normalized)


# ---------------------------------------------------------------------------
# Transition kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrackingAtom:
    """An atom of a kernel section at the moving point slope*y + intercept."""

    slope: Fraction
    intercept: Fraction
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "slope", as_fraction(self.slope))
        object.__setattr__(self, "intercept", as_fraction(self.intercept))
        object.__setattr__(self, "weight", float(self.weight))
        if self.slope == 0:
            raise ValueError("a fixed atom belongs in point_atoms, not tracking")
        if not math.isfinite(self.weight) or self.weight < 0:
            raise ValueError("tracking weight must be finite and >= 0")

    def phi(self, y: Fraction) -> Fraction:
        return self.slope * y + self.intercept


@dataclass(frozen=True)
class KernelSection:
    """One conditional measure over X: atoms, tracked atoms, step density."""

    label_atoms: Mapping[str, float] = field(default_factory=dict)
    point_atoms: Mapping[Fraction, float] = field(default_factory=dict)
    tracking: tuple[TrackingAtom, ...] = ()
    density: StepDensity | None = None

    def __post_init__(self):
        object.__setattr__(self, "label_atoms",
                           {k: float(v) for k, v in self.label_atoms.items()})
        object.__setattr__(self, "point_atoms",
                           {as_fraction(k): float(v) for k, v in self.point_atoms.items()})
        for v in list(self.label_atoms.values()) + list(self.point_atoms.values()):
            if not math.isfinite(v) or v < 0:
                raise ValueError("section weights must be finite and >= 0")

    @property
    def mass(self) -> float:
        total = sum(self.label_atoms.values()) + sum(self.point_atoms.values())
        total += sum(t.weight for t in self.tracking)
        if self.density is not None:
            total += self.density.mass
        return total

    def at_point(self, y: Fraction) -> "KernelSection":
        """Resolve tracked atoms at a concrete parameter value."""
        pts = dict(self.point_atoms)
        for t in self.tracking:
            loc = t.phi(y)
            pts[loc] = pts.get(loc, 0.0) + t.weight
        return KernelSection(self.label_atoms, pts, (), self.density)

    def as_measure(self, space: Space, normalized: bool = False) -> HybridMeasure:
        if self.tracking:
            raise ValueError("resolve tracking atoms (at_point) before converting")
        weights: dict[AtomKey, float] = dict(self.label_atoms)
        weights.update(self.point_atoms)
        dens = self.density if self.density is not None else StepDensity.zero(space)
        return HybridMeasure(space, weights, dens, normalized)

    @classmethod
    def from_measure(cls, m: HybridMeasure) -> "KernelSection":
        return cls(m.label_atoms(), m.point_atoms(), (), m.density)


@dataclass(frozen=True)
class TransitionKernel:
    """A measurable family y -> measure on X, constant per from-space cell.

    `cell_sections[i]` holds for every y in `y_cells[i]`; tracked atoms make
    the section's point part move affinely with y.  Sections at labelled
    atoms of the from space are listed separately, as are finitely many
    exceptional points (needed when conditioning on a measure with point
    atoms).  Measurability in y holds by construction.
    """

    from_space: Space
    to_space: Space
    y_cells: tuple[Cell, ...] = ()
    cell_sections: tuple[KernelSection, ...] = ()
    atom_sections: Mapping[str, KernelSection] = field(default_factory=dict)
    point_sections: Mapping[Fraction, KernelSection] = field(default_factory=dict)
    normalized: bool = False

    def __post_init__(self):
        y_cells = tuple((as_fraction(a), as_fraction(b)) for a, b in self.y_cells)
        if not y_cells and self.from_space.intervals:
            raise ValueError("kernel needs cell sections over the from-space intervals")
        _check_partitions(self.from_space.intervals, y_cells)
        if len(y_cells) != len(self.cell_sections):
            raise ValueError("one section per from-space cell required")
        for a in self.from_space.atoms:
            if a not in self.atom_sections:
                raise ValueError(f"missing section for atom {a!r}")
        for key, s in self.atom_sections.items():
            if s.tracking:
                raise ValueError("atom sections cannot track (y is fixed)")
        for key, s in self.point_sections.items():
            if s.tracking:
                raise ValueError("point sections cannot track (y is fixed)")
        point_sections = {as_fraction(k): v for k, v in self.point_sections.items()}
        for cell, s in zip(y_cells, self.cell_sections):
            for t in s.tracking:
                a, b = cell
                fa, fb = t.phi(a), t.phi(b)
                lo, hi = (fa, fb) if fa < fb else (fb, fa)
                ok = False
                for ia, ib in self.to_space.intervals:
                    if ia <= lo and hi <= ib:
                        # a negative slope attains the upper end at y = a; if
                        # that point is excluded from the half-open target, a
                        # point override must supply the section there
                        if t.slope < 0 and hi == ib and a not in point_sections:
                            continue
                        ok = True
                if not ok:
                    raise DomainError("tracking atom leaves the target space")
            if s.density is not None:
                _check_partitions(self.to_space.intervals, s.density.cells)
        object.__setattr__(self, "y_cells", y_cells)
        object.__setattr__(self, "atom_sections", dict(self.atom_sections))
        object.__setattr__(self, "point_sections", point_sections)
        if self.normalized:
            for where, s in self.iter_sections():
                if abs(s.mass - 1.0) > MASS_TOL:
                    raise ValueError(f"section at {where!r} has mass {s.mass}")

    def iter_sections(self):
        for cell, s in zip(self.y_cells, self.cell_sections):
            yield cell, s
        for k, s in self.atom_sections.items():
            yield k, s
        for k, s in self.point_sections.items():
            yield k, s

    def section_at(self, y: AtomKey) -> KernelSection:
        """The conditional measure at a concrete y (tracking resolved)."""
        if isinstance(y, str):
            if y not in self.atom_sections:
                raise DomainError(f"no section for atom {y!r}")
            return self.atom_sections[y]
        y = as_fraction(y)
        if y in self.point_sections:
            return self.point_sections[y]
        for cell, s in zip(self.y_cells, self.cell_sections):
            if cell[0] <= y < cell[1]:
                return s.at_point(y)
        raise DomainError(f"{y} outside the kernel's from space")

    @classmethod
    def constant(cls, from_space: Space, m: HybridMeasure) -> "TransitionKernel":
        """The kernel that ignores y: every section equals `m`."""
        sec = KernelSection.from_measure(m)
        return cls(from_space, m.space,
                   from_space.intervals, tuple(sec for _ in from_space.intervals),
                   {a: sec for a in from_space.atoms}, {},
                   normalized=m.normalized)


# ---------------------------------------------------------------------------
# Products
# ---------------------------------------------------------------------------

def product_measure(mx: HybridMeasure, my: HybridMeasure) -> JointMeasure:
    """The product: atom pairs, density products, and atom-density strips."""
    atoms: dict[tuple[AtomKey, AtomKey], float] = {}
    for kx, wx in mx.atom_weights.items():
        for ky, wy in my.atom_weights.items():
            if wx * wy != 0.0:
                atoms[(kx, ky)] = wx * wy
    grid = tuple(tuple(vx * vy for vy in my.density.values) for vx in mx.density.values)
    curves: list[CurveComponent] = []
    for kx, wx in mx.atom_weights.items():
        if wx == 0.0:
            continue
        vals = tuple(wx * v for v in my.density.values)
        if any(v > 0 for v in vals):
            curves.append(CurveComponent("y", my.density.cells, vals, Fraction(0),
                                         None, kx))
    for ky, wy in my.atom_weights.items():
        if wy == 0.0:
            continue
        vals = tuple(wy * v for v in mx.density.values)
        if any(v > 0 for v in vals):
            curves.append(CurveComponent("x", mx.density.cells, vals, Fraction(0),
                                         None, ky))
    return JointMeasure(mx.space, my.space, atoms,
                        mx.density.cells, my.density.cells, grid, tuple(curves),
                        normalized=mx.normalized and my.normalized)


def kernel_times_measure(k: TransitionKernel, ny: HybridMeasure) -> JointMeasure:
    """The joint ``(k x ny)(S) = integral of k(y, S_y) dny(y)``."""
    if k.from_space != ny.space:
        raise SpaceMismatchError("kernel's from space must be the measure's space")
    x_space = k.to_space
    atoms: dict[tuple[AtomKey, AtomKey], float] = {}
    curves: list[CurveComponent] = []

    def add_atom(kx, ky, w):
        if w != 0.0:
            atoms[(kx, ky)] = atoms.get((kx, ky), 0.0) + w

    # lumps: atomic y values of ny
    for ky, wy in ny.atom_weights.items():
        if wy == 0.0:
            continue
        sec = k.section_at(ky)
        for a, w in sec.label_atoms.items():
            add_atom(a, ky, wy * w)
        for p, w in sec.point_atoms.items():
            add_atom(p, ky, wy * w)
        if sec.density is not None and any(v > 0 for v in sec.density.values):
            curves.append(CurveComponent(
                "x", sec.density.cells,
                tuple(wy * v for v in sec.density.values),
                Fraction(0), None, ky))

    # continuous y mass: common refinement of ny's cells and the kernel's
    dens = ny.density.refined(p for c in k.y_cells for p in c)
    x_breaks: set[Fraction] = set(p for iv in x_space.intervals for p in iv)
    for _, s in k.iter_sections():
        if s.density is not None:
            x_breaks |= s.density.breakpoints
    x_cells = tuple(refine_cells(x_space.intervals, x_breaks))
    x_index = {cell: i for i, cell in enumerate(x_cells)}
    y_cells = tuple(dens.cells)
    grid = [[0.0 for _ in y_cells] for _ in x_cells]

    def cell_section(y: Fraction) -> KernelSection:
        for cell, s in zip(k.y_cells, k.cell_sections):
            if cell[0] <= y < cell[1]:
                return s
        raise DomainError(f"no kernel section over {y}")

    for jy, ((ya, yb), q) in enumerate(zip(dens.cells, dens.values)):
        if q == 0.0:
            continue
        s = cell_section(ya)
        if s.density is not None:
            sd = s.density.refined(x_breaks)
            for (xa, xb), v in zip(sd.cells, sd.values):
                if v == 0.0:
                    continue
                grid[x_index[(xa, xb)]][jy] += v * q
        for a, w in s.label_atoms.items():
            if w * q > 0:
                curves.append(CurveComponent("y", ((ya, yb),), (w * q,),
                                             Fraction(0), None, a))
        for p, w in s.point_atoms.items():
            if w * q > 0:
                curves.append(CurveComponent("y", ((ya, yb),), (w * q,),
                                             Fraction(0), None, p))
        for t in s.tracking:
            if t.weight * q > 0:
                curves.append(CurveComponent("y", ((ya, yb),), (t.weight * q,),
                                             t.slope, t.intercept, None))

    return JointMeasure(x_space, ny.space, atoms, x_cells, y_cells,
                        tuple(tuple(row) for row in grid), tuple(curves),
                        normalized=k.normalized and ny.normalized)


# ---------------------------------------------------------------------------
# Marginals, sections, swaps
# ---------------------------------------------------------------------------

def marginal_x(j: JointMeasure) -> HybridMeasure:
    """Integrate out y: grid rows, curve images, strip densities."""
    weights: dict[AtomKey, float] = {}

    def add(key, w):
        if w != 0.0:
            weights[key] = weights.get(key, 0.0) + w

    for (kx, _ky), w in j.point_atoms.items():
        add(kx, w)

    contributions: list[tuple[Cell, float]] = []
    for (xa, xb), row in zip(j.x_cells, j.grid):
        v = sum(val * float(yb - ya) for (ya, yb), val in zip(j.y_cells, row))
        if v != 0.0:
            contributions.append(((xa, xb), v))
    for c in j.curves:
        if c.axis == "y":
            if c.slope == 0:
                add(c.target, c.mass)
            else:
                for (a, b), v in zip(c.cells, c.values):
                    if v == 0.0:
                        continue
                    lo, hi = sorted((c.phi(a), c.phi(b)))
                    contributions.append(((lo, hi), v / abs(float(c.slope))))
        else:
            for (a, b), v in zip(c.cells, c.values):
                if v != 0.0:
                    contributions.append(((a, b), v))
    cells, values = accumulate_step(j.x_space.intervals, contributions)
    return HybridMeasure(j.x_space, weights,
                         StepDensity(cells, values).merged(),
                         normalized=j.normalized)


def marginal_y(j: JointMeasure) -> HybridMeasure:
    return marginal_x(swap_axes(j))


def swap_axes(j: JointMeasure) -> JointMeasure:
    """Exchange the coordinates (monotone curves re-parameterised exactly)."""
    atoms = {(ky, kx): w for (kx, ky), w in j.point_atoms.items()}
    grid = tuple(tuple(j.grid[i][jy] for i in range(len(j.x_cells)))
                 for jy in range(len(j.y_cells)))
    curves = []
    for c in j.curves:
        if c.slope != 0:
            # x = s*y + i becomes y' = s*x' + i, i.e. x' = (y' - i)/s
            new_slope = 1 / c.slope
            new_intercept = -c.intercept / c.slope
            cells = []
            values = []
            for (a, b), v in zip(c.cells, c.values):
                lo, hi = sorted((c.phi(a), c.phi(b)))
                cells.append((lo, hi))
                values.append(v / abs(float(c.slope)))
            order = sorted(range(len(cells)), key=lambda i: cells[i])
            curves.append(CurveComponent(
                "y", tuple(cells[i] for i in order), tuple(values[i] for i in order),
                new_slope, new_intercept, None))
        else:
            curves.append(CurveComponent(
                "x" if c.axis == "y" else "y", c.cells, c.values,
                Fraction(0), None, c.target))
    return JointMeasure(j.y_space, j.x_space, atoms, j.y_cells, j.x_cells, grid,
                        tuple(curves), j.normalized)


def section(j: JointMeasure, y: AtomKey) -> HybridMeasure:
    """The x-measure along the slice at y.

    At an atomic y (a labelled atom, or a point carrying lump mass) this is
    the lump slice: point atoms plus horizontal-strip densities.  At any
    other point it is the density slice per unit y-length: the grid row
    plus an atom at phi(y) for each curve through y.
    """
    if isinstance(y, str):
        if y not in j.y_space.atoms:
            raise DomainError(f"{y!r} not an atom of the y space")
    else:
        y = as_fraction(y)
        if not j.y_space.contains_point(y):
            raise DomainError(f"{y} outside the y space")

    lump_atoms: dict[AtomKey, float] = {}
    lump_cells: list[tuple[Cell, float]] = []
    for (kx, ky), w in j.point_atoms.items():
        if ky == y:
            lump_atoms[kx] = lump_atoms.get(kx, 0.0) + w
    for c in j.curves:
        if c.axis == "x" and c.target == y:
            for cell, v in zip(c.cells, c.values):
                if v != 0.0:
                    lump_cells.append((cell, v))
    if lump_atoms or lump_cells or isinstance(y, str):
        cells, values = accumulate_step(j.x_space.intervals, lump_cells)
        return HybridMeasure(j.x_space, lump_atoms, StepDensity(cells, values))

    weights: dict[AtomKey, float] = {}
    for c in j.curves:
        if c.axis == "y":
            v = c.value_at(y)
            if v != 0.0:
                key = c.phi(y)
                weights[key] = weights.get(key, 0.0) + v
    jy = None
    for idx, (ya, yb) in enumerate(j.y_cells):
        if ya <= y < yb:
            jy = idx
            break
    values = tuple(row[jy] if jy is not None else 0.0 for row in j.grid)
    return HybridMeasure(j.x_space, weights, StepDensity(j.x_cells, values))


# ---------------------------------------------------------------------------
# Rectangle masses and comparisons
# ---------------------------------------------------------------------------

def rectangle_mass(j: JointMeasure, sx: MeasurableSet, sy: MeasurableSet) -> float:
    """Mass of (sx x sy); interval parts need not be grid-aligned."""
    total = 0.0
    for (kx, ky), w in j.point_atoms.items():
        if _key_in(kx, sx) and _key_in(ky, sy):
            total += w
    x_pts = {p for c in sx.intervals for p in c}
    y_pts = {p for c in sy.intervals for p in c}
    for (xa, xb), row in zip(refine_cells(j.x_cells, x_pts),
                             _expand_grid(j.x_cells, j.y_cells, j.grid,
                                          tuple(refine_cells(j.x_cells, x_pts)),
                                          tuple(refine_cells(j.y_cells, y_pts)))):
        if not _cell_inside(( xa, xb), sx.intervals):
            continue
        for (ya, yb), v in zip(refine_cells(j.y_cells, y_pts), row):
            if _cell_inside((ya, yb), sy.intervals):
                total += v * float(xb - xa) * float(yb - ya)
    for c in j.curves:
        param_set, other_set = (sy, sx) if c.axis == "y" else (sx, sy)
        pts = set(p for cell in param_set.intervals for p in cell)
        if c.slope != 0:
            for q in (p for cell in other_set.intervals for p in cell):
                t = (q - c.intercept) / c.slope
                pts.add(t)
        rc = c.refined(pts)
        for (a, b), v in zip(rc.cells, rc.values):
            if v == 0.0 or not _cell_inside((a, b), param_set.intervals):
                continue
            if c.slope != 0:
                lo, hi = sorted((c.phi(a), c.phi(b)))
                if _cell_inside((lo, hi), other_set.intervals):
                    total += v * float(b - a)
            else:
                if _key_in(c.target, other_set):
                    total += v * float(b - a)
    return total


def _key_in(key: AtomKey, s: MeasurableSet) -> bool:
    if key in s.atoms:
        return True
    if isinstance(key, Fraction):
        return any(a <= key < b for a, b in s.intervals)
    return False


def _cell_inside(cell: Cell, intervals: Sequence[Cell]) -> bool:
    a, b = cell
    return any(x <= a and b <= y for x, y in intervals)


def joint_max_deviation(j1: JointMeasure, j2: JointMeasure) -> float:
    """Largest atom/cell/curve-piece mass discrepancy between two joints."""
    if j1.x_space != j2.x_space or j1.y_space != j2.y_space:
        raise SpaceMismatchError("joints live on different product spaces")
    worst = 0.0
    for key in set(j1.point_atoms) | set(j2.point_atoms):
        worst = max(worst, abs(j1.point_atoms.get(key, 0.0) - j2.point_atoms.get(key, 0.0)))
    x_pts = {p for c in j1.x_cells for p in c} | {p for c in j2.x_cells for p in c}
    y_pts = {p for c in j1.y_cells for p in c} | {p for c in j2.y_cells for p in c}
    a = refine_joint(j1, x_pts, y_pts)
    b = refine_joint(j2, x_pts, y_pts)
    for i, (xa, xb) in enumerate(a.x_cells):
        for jj, (ya, yb) in enumerate(a.y_cells):
            area = float(xb - xa) * float(yb - ya)
            worst = max(worst, abs(a.grid[i][jj] - b.grid[i][jj]) * area)
    sigs = {c.signature: c for c in a.curves}
    sigs2 = {c.signature: c for c in b.curves}
    for sig in set(sigs) | set(sigs2):
        c1, c2 = sigs.get(sig), sigs2.get(sig)
        if c1 is None or c2 is None:
            present = c1 or c2
            worst = max(worst, present.mass)
            continue
        pts = {p for cell in c1.cells for p in cell} | {p for cell in c2.cells for p in cell}
        r1, r2 = c1.refined(pts), c2.refined(pts)
        vals1 = dict(zip(r1.cells, r1.values))
        vals2 = dict(zip(r2.cells, r2.values))
        for cell in set(vals1) | set(vals2):
            ln = float(cell[1] - cell[0])
            worst = max(worst, abs(vals1.get(cell, 0.0) - vals2.get(cell, 0.0)) * ln)
    return worst


def joints_close(j1: JointMeasure, j2: JointMeasure, tol: float = MASS_TOL) -> bool:
    return joint_max_deviation(j1, j2) <= tol


# ---------------------------------------------------------------------------
# Fubini consistency check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridFunction:
    """A nonnegative step function on the product: one value per key pair.

    Keys are atom labels or cells of the respective spaces.
    """

    x_space: Space
    y_space: Space
    x_keys: tuple[Union[str, Cell], ...]
    y_keys: tuple[Union[str, Cell], ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        cells_x = [k for k in self.x_keys if not isinstance(k, str)]
        cells_y = [k for k in self.y_keys if not isinstance(k, str)]
        _check_partitions(self.x_space.intervals, cells_x)
        _check_partitions(self.y_space.intervals, cells_y)
        for row in self.values:
            for v in row:
                if not math.isfinite(v) or v < 0:
                    raise ValueError("fubini check expects nonnegative values")


def fubini_check(f: GridFunction, mx: HybridMeasure,
                 my: HybridMeasure) -> tuple[float, float, float]:
    """Integral against the product measure and both iterated integrals."""
    from .measure import StepFunction, integrate

    prod = product_measure(mx, my)
    product_integral = 0.0
    for i, kx in enumerate(f.x_keys):
        sx = (MeasurableSet(atoms=frozenset({kx})) if isinstance(kx, str)
              else MeasurableSet(intervals=(kx,)))
        for jj, ky in enumerate(f.y_keys):
            v = f.values[i][jj]
            if v == 0.0:
                continue
            sy = (MeasurableSet(atoms=frozenset({ky})) if isinstance(ky, str)
                  else MeasurableSet(intervals=(ky,)))
            product_integral += v * rectangle_mass(prod, sx, sy)

    def iterated(first_m, second_m, transpose):
        # integrate over the first coordinate for each key of the second,
        # then integrate the resulting step function
        outer_atom_vals: dict[AtomKey, float] = {}
        outer_cells = []
        outer_values = []
        second_keys = f.y_keys if not transpose else f.x_keys
        for idx2, k2 in enumerate(second_keys):
            inner_atom_vals: dict[AtomKey, float] = {}
            inner_cells, inner_vals = [], []
            first_keys = f.x_keys if not transpose else f.y_keys
            for idx1, k1 in enumerate(first_keys):
                v = f.values[idx1][idx2] if not transpose else f.values[idx2][idx1]
                if isinstance(k1, str):
                    inner_atom_vals[k1] = v
                else:
                    inner_cells.append(k1)
                    inner_vals.append(v)
            g = StepFunction(first_m.space, inner_atom_vals,
                             tuple(inner_cells), tuple(inner_vals))
            val = integrate(g, first_m)
            if isinstance(k2, str):
                outer_atom_vals[k2] = val
            else:
                outer_cells.append(k2)
                outer_values.append(val)
        g2 = StepFunction(second_m.space, outer_atom_vals,
                          tuple(outer_cells), tuple(outer_values))
        return integrate(g2, second_m)

    iter_x_first = iterated(mx, my, transpose=False)
    iter_y_first = iterated(my, mx, transpose=True)
    return product_integral, iter_x_first, iter_y_first


# ---------------------------------------------------------------------------
# Coordinate pushforwards
# ---------------------------------------------------------------------------

def pushforward_joint(j: JointMeasure, fx: MeasurableMap,
                      fy: MeasurableMap) -> JointMeasure:
    """Image of the joint under coordinatewise maps (F(x), G(y))."""
    if fx.from_space != j.x_space or fy.from_space != j.y_space:
        raise SpaceMismatchError("maps do not match the joint's spaces")
    atoms: dict[tuple[AtomKey, AtomKey], float] = {}
    curves: list[CurveComponent] = []

    def add_atom(kx, ky, w):
        if w != 0.0:
            atoms[(kx, ky)] = atoms.get((kx, ky), 0.0) + w

    for (kx, ky), w in j.point_atoms.items():
        add_atom(fx.apply_key(kx), fy.apply_key(ky), w)

    # grid cells through the coordinate pieces
    xr = tuple(refine_cells(j.x_cells, (p for pc in fx.pieces for p in pc.cell)))
    yr = tuple(refine_cells(j.y_cells, (p for pc in fy.pieces for p in pc.cell)))
    grid = _expand_grid(j.x_cells, j.y_cells, j.grid, xr, yr)
    out_grid_parts: list[tuple[Cell, Cell, float]] = []
    for (xa, xb), row in zip(xr, grid):
        px = fx.piece_at(xa)
        for (ya, yb), v in zip(yr, row):
            if v == 0.0:
                continue
            py = fy.piece_at(ya)
            lx, ly = float(xb - xa), float(yb - ya)
            if isinstance(px, AffinePiece) and isinstance(py, AffinePiece):
                ix = tuple(sorted((px.apply(xa), px.apply(xb))))
                iy = tuple(sorted((py.apply(ya), py.apply(yb))))
                out_grid_parts.append((ix, iy, v / abs(float(px.slope) * float(py.slope))))
            elif isinstance(px, ConstantPiece) and isinstance(py, AffinePiece):
                iy = tuple(sorted((py.apply(ya), py.apply(yb))))
                curves.append(CurveComponent("y", (iy,),
                                             (v * lx / abs(float(py.slope)),),
                                             Fraction(0), None, px.target))
            elif isinstance(px, AffinePiece) and isinstance(py, ConstantPiece):
                ix = tuple(sorted((px.apply(xa), px.apply(xb))))
                curves.append(CurveComponent("x", (ix,),
                                             (v * ly / abs(float(px.slope)),),
                                             Fraction(0), None, py.target))
            else:
                add_atom(px.target, py.target, v * lx * ly)

    for c in j.curves:
        if c.axis == "y":
            _push_y_curve(c, fx, fy, curves, add_atom)
        else:
            _push_x_strip(c, fx, fy, curves, add_atom)

    # assemble the target grid from affine-affine pieces
    xb_pts = {p for cell, _, _ in out_grid_parts for p in cell}
    yb_pts = {p for _, cell, _ in out_grid_parts for p in cell}
    x_cells = tuple(refine_cells(fx.to_space.intervals, xb_pts))
    y_cells = tuple(refine_cells(fy.to_space.intervals, yb_pts))
    out_grid = [[0.0 for _ in y_cells] for _ in x_cells]
    for (ix, iy, v) in out_grid_parts:
        for i, (xa, xb) in enumerate(x_cells):
            if not (ix[0] <= xa and xb <= ix[1]):
                continue
            for jj, (ya, yb) in enumerate(y_cells):
                if iy[0] <= ya and yb <= iy[1]:
                    out_grid[i][jj] += v
    return JointMeasure(fx.to_space, fy.to_space, atoms, x_cells, y_cells,
                        tuple(tuple(r) for r in out_grid), tuple(curves),
                        normalized=j.normalized)


def _push_y_curve(c: CurveComponent, fx: MeasurableMap, fy: MeasurableMap,
                  curves: list, add_atom) -> None:
    pts = {p for pc in fy.pieces for p in pc.cell}
    if c.slope != 0:
        for q in (p for pc in fx.pieces for p in pc.cell):
            pts.add((q - c.intercept) / c.slope)
    rc = c.refined(pts)
    for (a, b), v in zip(rc.cells, rc.values):
        if v == 0.0:
            continue
        py = fy.piece_at(a)
        if c.slope == 0:
            tx = fx.apply_key(c.target)
            if isinstance(py, AffinePiece):
                iy = tuple(sorted((py.apply(a), py.apply(b))))
                curves.append(CurveComponent("y", (iy,), (v / abs(float(py.slope)),),
                                             Fraction(0), None, tx))
            else:
                add_atom(tx, py.target, v * float(b - a))
            continue
        mid = (a + b) / 2
        px = fx.piece_at(c.phi(mid))
        if isinstance(py, AffinePiece):
            if isinstance(px, AffinePiece):
                # x' = px(c.phi(py^{-1}(y')))
                slope = px.slope * c.slope / py.slope
                intercept = (px.slope * (c.intercept - c.slope * py.intercept / py.slope)
                             + px.intercept)
                iy = tuple(sorted((py.apply(a), py.apply(b))))
                curves.append(CurveComponent("y", (iy,), (v / abs(float(py.slope)),),
                                             slope, intercept, None))
            else:
                iy = tuple(sorted((py.apply(a), py.apply(b))))
                curves.append(CurveComponent("y", (iy,), (v / abs(float(py.slope)),),
                                             Fraction(0), None, px.target))
        else:
            ty = py.target
            if isinstance(px, AffinePiece):
                lo, hi = sorted((px.apply(c.phi(a)), px.apply(c.phi(b))))
                dens = v / abs(float(c.slope)) / abs(float(px.slope))
                curves.append(CurveComponent("x", ((lo, hi),), (dens,),
                                             Fraction(0), None, ty))
            else:
                add_atom(px.target, ty, v * float(b - a))


def _push_x_strip(c: CurveComponent, fx: MeasurableMap, fy: MeasurableMap,
                  curves: list, add_atom) -> None:
    ty = fy.apply_key(c.target)
    rc = c.refined(p for pc in fx.pieces for p in pc.cell)
    for (a, b), v in zip(rc.cells, rc.values):
        if v == 0.0:
            continue
        px = fx.piece_at(a)
        if isinstance(px, AffinePiece):
            ix = tuple(sorted((px.apply(a), px.apply(b))))
            curves.append(CurveComponent("x", (ix,), (v / abs(float(px.slope)),),
                                         Fraction(0), None, ty))
        else:
            add_atom(px.target, ty, v * float(b - a))
