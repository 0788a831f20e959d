"""Hybrid measures with exact supports.

The representable class: finitely many weighted atoms (labels, or exact
rational points inside the intervals) plus a piecewise-constant density on
half-open intervals with rational endpoints.  Interval endpoints, cell
breakpoints, and map coefficients are `fractions.Fraction`, so all support
and null-set questions are decided by exact set algebra; weights and
density values are floats compared with a global mass tolerance.

Everything here is immutable and every operation is a pure function.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

#: Tolerance for numeric mass identities (normalisation, additivity, ...).
MASS_TOL = 1e-12

AtomKey = Union[str, Fraction]
Cell = tuple[Fraction, Fraction]


class AlignmentError(ValueError):
    """A set or function is not aligned with a measure's cell partition."""


class DomainError(ValueError):
    """A point, breakpoint, or map piece falls outside the relevant space."""


class SpaceMismatchError(ValueError):
    """Two objects that must share a space do not."""


def as_fraction(x) -> Fraction:
    """Convert int / str / Fraction to an exact Fraction (floats rejected)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int) or isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"exact rational required, got {type(x).__name__}: {x!r}")


def _check_cells_sorted_disjoint(cells: Sequence[Cell], what: str) -> None:
    for a, b in cells:
        if not (isinstance(a, Fraction) and isinstance(b, Fraction)):
            raise TypeError(f"{what}: endpoints must be Fractions")
        if not a < b:
            raise ValueError(f"{what}: empty or reversed cell [{a}, {b})")
    for (a1, b1), (a2, b2) in zip(cells, cells[1:]):
        if not b1 <= a2:
            raise ValueError(f"{what}: overlapping cells [{a1},{b1}) and [{a2},{b2})")


@dataclass(frozen=True)
class Space:
    """A measurable space: labelled atoms plus half-open rational intervals.

    Intervals are canonicalised at construction (sorted, touching intervals
    merged), so two spaces covering the same point set compare equal.
    """

    atoms: tuple[str, ...] = ()
    intervals: tuple[Cell, ...] = ()

    def __post_init__(self):
        atoms = tuple(self.atoms)
        if len(set(atoms)) != len(atoms):
            raise ValueError("atom labels must be unique")
        ivs = sorted(((as_fraction(a), as_fraction(b)) for a, b in self.intervals))
        _check_cells_sorted_disjoint(ivs, "Space.intervals")
        merged: list[Cell] = []
        for a, b in ivs:
            if merged and merged[-1][1] == a:
                merged[-1] = (merged[-1][0], b)
            else:
                merged.append((a, b))
        if not atoms and not merged:
            raise ValueError("a space needs at least one atom or interval")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "intervals", tuple(merged))
        object.__setattr__(self, "_atom_set", frozenset(atoms))

    def contains_point(self, p: Fraction) -> bool:
        return any(a <= p < b for a, b in self.intervals)

    def contains_key(self, key: AtomKey) -> bool:
        if isinstance(key, str):
            return key in self._atom_set
        return self.contains_point(key)

    @property
    def total_length(self) -> Fraction:
        return sum((b - a for a, b in self.intervals), Fraction(0))


def _partition_of(intervals: Sequence[Cell], cells: Sequence[Cell], what: str) -> None:
    """Check that `cells` exactly tile `intervals`."""
    _check_cells_sorted_disjoint(sorted(cells), what)
    cells = sorted(cells)
    i = 0
    for a, b in intervals:
        cursor = a
        while cursor < b:
            if i >= len(cells) or cells[i][0] != cursor:
                raise AlignmentError(f"{what}: gap at {cursor}")
            cursor = cells[i][1]
            i += 1
            if cursor > b:
                raise AlignmentError(f"{what}: cell crosses interval end {b}")
    if i != len(cells):
        raise AlignmentError(f"{what}: cells outside the intervals")


def refine_cells(cells: Sequence[Cell], points: Iterable[Fraction]) -> list[Cell]:
    """Split `cells` at every point that falls strictly inside one of them."""
    pts = sorted(set(points))
    out: list[Cell] = []
    for a, b in cells:
        lo = bisect.bisect_right(pts, a)
        hi = bisect.bisect_left(pts, b)
        left = a
        for p in pts[lo:hi]:
            out.append((left, p))
            left = p
        out.append((left, b))
    return out


def accumulate_step(base_cells: Sequence[Cell],
                    contributions: Sequence[tuple[Cell, float]]
                    ) -> tuple[tuple[Cell, ...], tuple[float, ...]]:
    """Sum interval-constant contributions onto a refined partition of
    `base_cells`.  Covered cells are located by bisection, so cells with no
    contribution stay exactly 0.0 (support decisions need exact zeros)."""
    breaks: set[Fraction] = set()
    for (lo, hi), _v in contributions:
        breaks.add(lo)
        breaks.add(hi)
    cells = tuple(refine_cells(base_cells, breaks))
    starts = [a for a, _b in cells]
    values = [0.0] * len(cells)
    for (lo, hi), v in contributions:
        i = bisect.bisect_left(starts, lo)
        while i < len(cells) and cells[i][1] <= hi:
            values[i] += v
            i += 1
    return cells, tuple(values)


@dataclass(frozen=True)
class StepDensity:
    """Piecewise-constant nonnegative values on a cell partition.

    The support is the literal set of cells with value > 0; nothing is
    thresholded away.
    """

    cells: tuple[Cell, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        cells = tuple((as_fraction(a), as_fraction(b)) for a, b in self.cells)
        values = tuple(float(v) for v in self.values)
        if len(cells) != len(values):
            raise ValueError("one value per cell required")
        _check_cells_sorted_disjoint(cells, "StepDensity.cells")
        for v in values:
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"density values must be finite and >= 0, got {v}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "values", values)

    @classmethod
    def flat(cls, space: Space, value: float) -> "StepDensity":
        return cls(space.intervals, tuple(value for _ in space.intervals))

    @classmethod
    def zero(cls, space: Space) -> "StepDensity":
        return cls(space.intervals, tuple(0.0 for _ in space.intervals))

    def refined(self, points: Iterable[Fraction]) -> "StepDensity":
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
        return StepDensity(tuple(cells), tuple(values))

    def merged(self) -> "StepDensity":
        """Join touching cells with equal values (the same measure, coarser)."""
        cells: list[Cell] = []
        values: list[float] = []
        for (a, b), v in zip(self.cells, self.values):
            if cells and cells[-1][1] == a and values[-1] == v:
                cells[-1] = (cells[-1][0], b)
            else:
                cells.append((a, b))
                values.append(v)
        return StepDensity(tuple(cells), tuple(values))

    def value_at(self, p: Fraction) -> float:
        for (a, b), v in zip(self.cells, self.values):
            if a <= p < b:
                return v
        raise DomainError(f"point {p} outside the density's cells")

    @property
    def breakpoints(self) -> set[Fraction]:
        pts: set[Fraction] = set()
        for a, b in self.cells:
            pts.add(a)
            pts.add(b)
        return pts

    @property
    def mass(self) -> float:
        return sum(v * float(b - a) for (a, b), v in zip(self.cells, self.values))

    def support_cells(self) -> list[Cell]:
        return [c for c, v in zip(self.cells, self.values) if v > 0]


@dataclass(frozen=True)
class MeasurableSet:
    """A finite union of atoms/points and cell-aligned half-open intervals."""

    atoms: frozenset[AtomKey] = frozenset()
    intervals: tuple[Cell, ...] = ()

    def __post_init__(self):
        ivs = sorted(((as_fraction(a), as_fraction(b)) for a, b in self.intervals))
        _check_cells_sorted_disjoint(ivs, "MeasurableSet.intervals")
        merged: list[Cell] = []
        for a, b in ivs:
            if merged and merged[-1][1] == a:
                merged[-1] = (merged[-1][0], b)
            else:
                merged.append((a, b))
        object.__setattr__(self, "atoms", frozenset(self.atoms))
        object.__setattr__(self, "intervals", tuple(merged))

    def covers_point(self, p: Fraction) -> bool:
        return p in self.atoms or any(a <= p < b for a, b in self.intervals)


@dataclass(frozen=True)
class HybridMeasure:
    """Finite atoms plus a step density w.r.t. length on the intervals.

    `atom_weights` keys are labelled atoms of the space or exact points
    inside its intervals.  With ``normalized=True`` the total mass must be
    1 within MASS_TOL; unnormalised measures (priors, references) are
    allowed with the flag off.
    """

    space: Space
    atom_weights: Mapping[AtomKey, float] = field(default_factory=dict)
    density: StepDensity | None = None
    normalized: bool = False

    def __post_init__(self):
        density = self.density if self.density is not None else StepDensity.zero(self.space)
        weights: dict[AtomKey, float] = {}
        for key, w in self.atom_weights.items():
            if isinstance(key, str):
                if key not in self.space.atoms:
                    raise DomainError(f"atom {key!r} not in space")
            else:
                key = as_fraction(key)
                if not self.space.contains_point(key):
                    raise DomainError(f"point atom {key} outside the intervals")
            w = float(w)
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"atom weight must be finite and >= 0, got {w}")
            weights[key] = w
        _partition_of(self.space.intervals, density.cells, "HybridMeasure.density")
        object.__setattr__(self, "atom_weights", weights)
        object.__setattr__(self, "density", density)
        if self.normalized and abs(self.total_mass - 1.0) > MASS_TOL:
            raise ValueError(f"normalized measure has mass {self.total_mass}")

    @property
    def total_mass(self) -> float:
        return sum(self.atom_weights.values()) + self.density.mass

    @classmethod
    def from_atoms(cls, space: Space, weights: Mapping[AtomKey, float],
                   normalized: bool = True) -> "HybridMeasure":
        return cls(space, dict(weights), StepDensity.zero(space), normalized)

    @classmethod
    def uniform(cls, space: Space) -> "HybridMeasure":
        """Uniform probability density over the intervals (no atom mass)."""
        total = space.total_length
        if total == 0:
            raise DomainError("space has no intervals to be uniform on")
        value = 1.0 / float(total)
        return cls(space, {}, StepDensity.flat(space, value), normalized=True)

    @classmethod
    def length(cls, space: Space) -> "HybridMeasure":
        """The length reference measure on the intervals (density 1)."""
        return cls(space, {}, StepDensity.flat(space, 1.0), normalized=False)

    @classmethod
    def dirac(cls, space: Space, key: AtomKey) -> "HybridMeasure":
        return cls(space, {key: 1.0}, StepDensity.zero(space), normalized=True)

    def point_atoms(self) -> dict[Fraction, float]:
        return {k: w for k, w in self.atom_weights.items() if isinstance(k, Fraction)}

    def label_atoms(self) -> dict[str, float]:
        return {k: w for k, w in self.atom_weights.items() if isinstance(k, str)}

    def scaled(self, factor: float) -> "HybridMeasure":
        return HybridMeasure(
            self.space,
            {k: w * factor for k, w in self.atom_weights.items()},
            StepDensity(self.density.cells, tuple(v * factor for v in self.density.values)),
            normalized=False,
        )


@dataclass(frozen=True)
class StepFunction:
    """A piecewise-constant function on a space, with explicit atom values.

    At a labelled atom the value is ``atom_values.get(label, 0)``; at a
    point inside the intervals it is the containing cell's value unless an
    explicit point entry overrides it.
    """

    space: Space
    atom_values: Mapping[AtomKey, float] = field(default_factory=dict)
    cells: tuple[Cell, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        cells = tuple((as_fraction(a), as_fraction(b)) for a, b in self.cells)
        if not cells and self.space.intervals:
            cells = self.space.intervals
            object.__setattr__(self, "values", tuple(0.0 for _ in cells))
        _partition_of(self.space.intervals, cells, "StepFunction.cells")
        if len(cells) != len(self.values):
            raise ValueError("one value per cell required")
        vals = {}
        for key, v in self.atom_values.items():
            if isinstance(key, str):
                if key not in self.space.atoms:
                    raise DomainError(f"atom {key!r} not in space")
            else:
                key = as_fraction(key)
            vals[key] = float(v)
        object.__setattr__(self, "atom_values", vals)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def indicator(cls, space: Space, s: MeasurableSet) -> "StepFunction":
        pts: set[Fraction] = set()
        for a, b in s.intervals:
            pts.add(a)
            pts.add(b)
        cells = tuple(refine_cells(space.intervals, pts))
        values = tuple(1.0 if any(x1 <= a and b <= y1 for x1, y1 in s.intervals) else 0.0
                       for a, b in cells)
        atom_values = {k: 1.0 for k in s.atoms}
        return cls(space, atom_values, cells, values)

    @classmethod
    def constant(cls, space: Space, value: float) -> "StepFunction":
        atom_values = {a: value for a in space.atoms}
        return cls(space, atom_values, space.intervals, tuple(value for _ in space.intervals))

    def value_at(self, key: AtomKey) -> float:
        if key in self.atom_values:
            return self.atom_values[key]
        if isinstance(key, str):
            return 0.0
        return self.cell_value_at(key)

    def cell_value_at(self, p: Fraction) -> float:
        """The containing cell's value, ignoring point overrides (length-null)."""
        for (a, b), v in zip(self.cells, self.values):
            if a <= p < b:
                return v
        raise DomainError(f"point {p} outside the space")


# ---------------------------------------------------------------------------
# Measurable maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffinePiece:
    """x -> slope*x + intercept on `cell`, slope != 0 (strictly monotone)."""

    cell: Cell
    slope: Fraction
    intercept: Fraction

    def __post_init__(self):
        object.__setattr__(self, "cell", (as_fraction(self.cell[0]), as_fraction(self.cell[1])))
        object.__setattr__(self, "slope", as_fraction(self.slope))
        object.__setattr__(self, "intercept", as_fraction(self.intercept))
        if self.slope == 0:
            raise ValueError("affine piece must have nonzero slope")

    def apply(self, p: Fraction) -> Fraction:
        return self.slope * p + self.intercept

    def invert(self, q: Fraction) -> Fraction:
        return (q - self.intercept) / self.slope

    def image(self) -> Cell:
        a, b = self.cell
        fa, fb = self.apply(a), self.apply(b)
        return (fa, fb) if fa < fb else (fb, fa)


@dataclass(frozen=True)
class ConstantPiece:
    """Everything in `cell` maps to one target atom label or point."""

    cell: Cell
    target: AtomKey

    def __post_init__(self):
        object.__setattr__(self, "cell", (as_fraction(self.cell[0]), as_fraction(self.cell[1])))
        if not isinstance(self.target, str):
            object.__setattr__(self, "target", as_fraction(self.target))


Piece = Union[AffinePiece, ConstantPiece]


@dataclass(frozen=True)
class MeasurableMap:
    """A piecewise map between spaces: atom relabelling plus interval pieces.

    The pieces must tile the source intervals and land inside the target
    space; every source atom must be mapped.
    """

    from_space: Space
    to_space: Space
    atom_map: Mapping[str, str] = field(default_factory=dict)
    pieces: tuple[Piece, ...] = ()

    def __post_init__(self):
        for a in self.from_space.atoms:
            if a not in self.atom_map:
                raise DomainError(f"source atom {a!r} not mapped")
        for a, t in self.atom_map.items():
            if a not in self.from_space.atoms:
                raise DomainError(f"unknown source atom {a!r}")
            if t not in self.to_space.atoms:
                raise DomainError(f"target atom {t!r} not in target space")
        pieces = tuple(sorted(self.pieces, key=lambda p: p.cell))
        _partition_of(self.from_space.intervals, [p.cell for p in pieces], "MeasurableMap.pieces")
        for p in pieces:
            if isinstance(p, AffinePiece):
                lo, hi = p.image()
                if not any(a <= lo and hi <= b for a, b in self.to_space.intervals):
                    raise DomainError(f"affine piece image [{lo},{hi}) outside target space")
            else:
                if not self.to_space.contains_key(p.target):
                    raise DomainError(f"constant piece target {p.target!r} outside target space")
        object.__setattr__(self, "atom_map", dict(self.atom_map))
        object.__setattr__(self, "pieces", pieces)

    def piece_at(self, p: Fraction) -> Piece:
        for piece in self.pieces:
            a, b = piece.cell
            if a <= p < b:
                return piece
        raise DomainError(f"point {p} not covered by any piece")

    def apply_key(self, key: AtomKey) -> AtomKey:
        if isinstance(key, str):
            return self.atom_map[key]
        piece = self.piece_at(key)
        if isinstance(piece, AffinePiece):
            return piece.apply(key)
        return piece.target

    @classmethod
    def identity(cls, space: Space) -> "MeasurableMap":
        return cls(space, space,
                   {a: a for a in space.atoms},
                   tuple(AffinePiece(c, Fraction(1), Fraction(0)) for c in space.intervals))

    @classmethod
    def quantizer(cls, space: Space, cuts: Sequence[Fraction], labels: Sequence[str],
                  atom_targets: Mapping[str, str] | None = None) -> "MeasurableMap":
        """Bin the intervals at `cuts` into len(cells) labelled atoms.

        Existing source atoms go to `atom_targets` (default: first label).
        """
        cuts = [as_fraction(c) for c in cuts]
        cells = refine_cells(space.intervals, cuts)
        if len(labels) != len(cells):
            raise ValueError(f"need {len(cells)} labels, got {len(labels)}")
        to_space = Space(atoms=tuple(dict.fromkeys(labels)))
        atom_map = {}
        for a in space.atoms:
            atom_map[a] = (atom_targets or {}).get(a, labels[0])
            if atom_map[a] not in to_space.atoms:
                raise DomainError(f"atom target {atom_map[a]!r} not a bin label")
        pieces = tuple(ConstantPiece(c, lab) for c, lab in zip(cells, labels))
        return cls(space, to_space, atom_map, pieces)


def compose(outer: MeasurableMap, inner: MeasurableMap) -> MeasurableMap:
    """The map x -> outer(inner(x))."""
    if inner.to_space != outer.from_space:
        raise SpaceMismatchError("inner map must land in outer map's source space")
    atom_map = {a: outer.atom_map[t] for a, t in inner.atom_map.items()}
    pieces: list[Piece] = []
    for p in inner.pieces:
        if isinstance(p, ConstantPiece):
            pieces.append(ConstantPiece(p.cell, outer.apply_key(p.target)))
            continue
        lo, hi = p.image()
        outer_breaks = sorted({q for op in outer.pieces for q in op.cell} | {lo, hi})
        inner_splits = sorted(p.invert(q) for q in outer_breaks if lo < q < hi)
        for sub in refine_cells([p.cell], inner_splits):
            mid = (sub[0] + sub[1]) / 2
            op = outer.piece_at(p.apply(mid))
            if isinstance(op, AffinePiece):
                pieces.append(AffinePiece(sub, op.slope * p.slope,
                                          op.slope * p.intercept + op.intercept))
            else:
                pieces.append(ConstantPiece(sub, op.target))
    return MeasurableMap(inner.from_space, outer.to_space, atom_map, tuple(pieces))


# ---------------------------------------------------------------------------
# Operations on measures
# ---------------------------------------------------------------------------

def _check_alignment(m: HybridMeasure, s: MeasurableSet) -> None:
    bounds = m.density.breakpoints
    for a, b in s.intervals:
        if a not in bounds or b not in bounds:
            raise AlignmentError(
                f"set interval [{a},{b}) not aligned to the cell partition; refine first")


def mass(m: HybridMeasure, s: MeasurableSet) -> float:
    """Measure of an aligned set: atom weights in `s` plus the density integral."""
    _check_alignment(m, s)
    total = 0.0
    for key, w in m.atom_weights.items():
        if key in s.atoms:
            total += w
        elif isinstance(key, Fraction) and any(a <= key < b for a, b in s.intervals):
            total += w
    for (a, b), v in zip(m.density.cells, m.density.values):
        if any(x <= a and b <= y for x, y in s.intervals):
            total += v * float(b - a)
    return total


def refine(m: HybridMeasure, extra_breakpoints: Iterable[Fraction]) -> HybridMeasure:
    """The same measure on a finer cell partition (exact, no rounding)."""
    pts = [as_fraction(p) for p in extra_breakpoints]
    for p in pts:
        if not m.space.contains_point(p) and not any(p == b for _, b in m.space.intervals):
            raise DomainError(f"breakpoint {p} outside the space's intervals")
    return HybridMeasure(m.space, m.atom_weights, m.density.refined(pts), m.normalized)


def common_refinement(*measures: HybridMeasure) -> tuple[HybridMeasure, ...]:
    """Refine all measures to the union of their breakpoints."""
    spaces = {m.space for m in measures}
    if len(spaces) != 1:
        raise SpaceMismatchError("common refinement requires one shared space")
    pts: set[Fraction] = set()
    for m in measures:
        pts |= m.density.breakpoints
    return tuple(refine(m, pts) for m in measures)


def integrate(f: StepFunction, m: HybridMeasure) -> float:
    """Integrate a step function: cell values times cell masses plus atom terms."""
    if f.space != m.space:
        raise SpaceMismatchError("function and measure live on different spaces")
    dens = m.density.refined(q for c in f.cells for q in c)
    total = 0.0
    # after refinement every density cell sits inside exactly one function cell
    for (a, b), v in zip(dens.cells, dens.values):
        total += f.cell_value_at(a) * v * float(b - a)
    for key, w in m.atom_weights.items():
        total += f.value_at(key) * w
    return total


def pushforward(m: HybridMeasure, F: MeasurableMap) -> HybridMeasure:
    """Image measure under F: affine pieces rescale densities, constants atomise."""
    if F.from_space != m.space:
        raise SpaceMismatchError("map is not defined on the measure's space")
    out_atoms: dict[AtomKey, float] = {}

    def add_atom(key: AtomKey, w: float) -> None:
        out_atoms[key] = out_atoms.get(key, 0.0) + w

    for key, w in m.atom_weights.items():
        add_atom(F.apply_key(key), w)

    piece_breaks = {q for p in F.pieces for q in p.cell}
    dens = m.density.refined(piece_breaks)
    # density contributions per target sub-interval
    contributions: list[tuple[Cell, float]] = []
    for (a, b), v in zip(dens.cells, dens.values):
        piece = F.piece_at(a)
        if isinstance(piece, ConstantPiece):
            add_atom(piece.target, v * float(b - a))
            continue
        fa, fb = piece.apply(a), piece.apply(b)
        lo, hi = (fa, fb) if fa < fb else (fb, fa)
        contributions.append(((lo, hi), v / abs(float(piece.slope))))
    out_cells, out_values = accumulate_step(F.to_space.intervals, contributions)
    return HybridMeasure(F.to_space, out_atoms,
                         StepDensity(out_cells, out_values),
                         normalized=m.normalized)


def max_deviation(m1: HybridMeasure, m2: HybridMeasure) -> float:
    """Largest cell/atom mass discrepancy after common refinement."""
    if m1.space != m2.space:
        raise SpaceMismatchError("measures live on different spaces")
    a, b = common_refinement(m1, m2)
    worst = 0.0
    for key in set(a.atom_weights) | set(b.atom_weights):
        worst = max(worst, abs(a.atom_weights.get(key, 0.0) - b.atom_weights.get(key, 0.0)))
    for (cell, va), vb in zip(zip(a.density.cells, a.density.values), b.density.values):
        worst = max(worst, abs(va - vb) * float(cell[1] - cell[0]))
    return worst


def measures_close(m1: HybridMeasure, m2: HybridMeasure, tol: float = MASS_TOL) -> bool:
    return max_deviation(m1, m2) <= tol
