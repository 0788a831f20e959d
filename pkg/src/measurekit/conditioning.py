"""Absolute continuity, Radon-Nikodym derivatives, and disintegration.

Support questions on the representable class are decided by exact set
algebra: an atom needs a matching atom, a positive density cell needs a
positive reference cell, and a curve needs a matching curve of the same
affine signature.  Derivatives are ratios on the reference's support and 0
(by convention) off it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional

from .measure import (
    MASS_TOL,
    AtomKey,
    Cell,
    HybridMeasure,
    MeasurableSet,
    Space,
    SpaceMismatchError,
    StepDensity,
    StepFunction,
    accumulate_step,
    common_refinement,
    refine_cells,
)
from .joint import (
    CurveComponent,
    JointMeasure,
    KernelSection,
    TrackingAtom,
    TransitionKernel,
    kernel_times_measure,
    marginal_x,
    marginal_y,
    refine_joint,
)


@dataclass(frozen=True)
class SingularWitness:
    """A named set with reference mass 0 but positive mass under P."""

    kind: str          # "atom" | "cell" | "curve"
    description: str
    p_mass: float


@dataclass(frozen=True)
class ACReport:
    absolutely_continuous: bool
    singular_witness: Optional[SingularWitness] = None
    rn_derivative: object | None = None


def ac_check(p: HybridMeasure, q: HybridMeasure) -> ACReport:
    """Decide P << Q exactly; on success return dP/dQ as a step function."""
    if p.space != q.space:
        raise SpaceMismatchError("ac_check needs both measures on one space")
    for key, w in p.atom_weights.items():
        if w > 0 and q.atom_weights.get(key, 0.0) <= 0.0:
            return ACReport(False, SingularWitness(
                "atom", f"atom {key!r} carries P-mass but no Q-mass", w))
    pr, qr = common_refinement(p, q)
    for (cell, pv), qv in zip(zip(pr.density.cells, pr.density.values),
                              qr.density.values):
        if pv > 0 and qv <= 0.0:
            return ACReport(False, SingularWitness(
                "cell", f"density cell [{cell[0]},{cell[1]}) has P-density {pv} "
                        f"but zero Q-density", pv * float(cell[1] - cell[0])))
    atom_vals = {}
    for key, qw in qr.atom_weights.items():
        atom_vals[key] = (pr.atom_weights.get(key, 0.0) / qw) if qw > 0 else 0.0
    values = tuple((pv / qv if qv > 0 else 0.0)
                   for pv, qv in zip(pr.density.values, qr.density.values))
    deriv = StepFunction(p.space, atom_vals, pr.density.cells, values)
    return ACReport(True, None, deriv)


@dataclass(frozen=True)
class JointDerivative:
    """dJ/dQ piecewise on the common refinement: (J, Q) mass pairs per piece.

    Ratios are J-value / Q-value on Q's support and 0 elsewhere;
    `curve_pairs` maps a curve signature to aligned cells with line-density
    pairs.  Atom entries pair weights, grid entries pair density values.
    """

    x_cells: tuple[Cell, ...]
    y_cells: tuple[Cell, ...]
    atom_pairs: Mapping[tuple[AtomKey, AtomKey], tuple[float, float]]
    grid_pairs: tuple[tuple[tuple[float, float], ...], ...]
    curve_pairs: Mapping[tuple, tuple[tuple[Cell, ...], tuple[float, ...], tuple[float, ...]]]

    def ratio_at_atom(self, key) -> float:
        jv, qv = self.atom_pairs.get(key, (0.0, 0.0))
        return jv / qv if qv > 0 else 0.0

    def pieces(self):
        """Yield (j_mass, q_mass) over every piece of the decomposition."""
        for jv, qv in self.atom_pairs.values():
            yield jv, qv
        for (xa, xb), row in zip(self.x_cells, self.grid_pairs):
            for (ya, yb), (jv, qv) in zip(self.y_cells, row):
                area = float(xb - xa) * float(yb - ya)
                yield jv * area, qv * area
        for cells, jvals, qvals in self.curve_pairs.values():
            for (a, b), jv, qv in zip(cells, jvals, qvals):
                ln = float(b - a)
                yield jv * ln, qv * ln


def ac_check_joint(j: JointMeasure, q: JointMeasure) -> ACReport:
    """Decide J << Q on the product space.

    A strictly monotone curve of J is singular unless Q carries a curve of
    the same affine signature covering its support; constant curves compare
    as strips; atoms and grid cells compare directly.
    """
    if j.x_space != q.x_space or j.y_space != q.y_space:
        raise SpaceMismatchError("joints live on different product spaces")
    for key, w in j.point_atoms.items():
        if w > 0 and q.point_atoms.get(key, 0.0) <= 0.0:
            return ACReport(False, SingularWitness(
                "atom", f"point atom {key!r} carries mass but has no reference mass", w))

    x_pts = {p for c in j.x_cells for p in c} | {p for c in q.x_cells for p in c}
    y_pts = {p for c in j.y_cells for p in c} | {p for c in q.y_cells for p in c}
    jr = refine_joint(j, x_pts, y_pts)
    qr = refine_joint(q, x_pts, y_pts)
    for i, (xa, xb) in enumerate(jr.x_cells):
        for k, (ya, yb) in enumerate(jr.y_cells):
            if jr.grid[i][k] > 0 and qr.grid[i][k] <= 0.0:
                return ACReport(False, SingularWitness(
                    "cell", f"grid cell [{xa},{xb})x[{ya},{yb}) has density "
                            f"{jr.grid[i][k]} but zero reference density",
                    jr.grid[i][k] * float(xb - xa) * float(yb - ya)))

    q_curves = {c.signature: c for c in qr.curves}
    curve_pairs = {}
    for c in jr.curves:
        match = q_curves.get(c.signature)
        if match is None:
            if c.mass > 0:
                return ACReport(False, SingularWitness(
                    "curve", f"curve {c.signature} carries mass on a graph that "
                             f"is null for the reference", c.mass))
            continue
        pts = {p for cell in c.cells for p in cell} | \
              {p for cell in match.cells for p in cell}
        cr, mr = c.refined(pts), match.refined(pts)
        mvals = dict(zip(mr.cells, mr.values))
        for cell, v in zip(cr.cells, cr.values):
            if v > 0 and mvals.get(cell, 0.0) <= 0.0:
                return ACReport(False, SingularWitness(
                    "curve", f"curve {c.signature} has line density {v} on "
                             f"[{cell[0]},{cell[1]}) where the reference curve "
                             f"vanishes", v * float(cell[1] - cell[0])))
        qv = tuple(mvals.get(cell, 0.0) for cell in cr.cells)
        curve_pairs[c.signature] = (cr.cells, cr.values, qv)
    # reference curves without J mass still belong to the decomposition
    for sig, mc in q_curves.items():
        if sig not in curve_pairs:
            curve_pairs[sig] = (mc.cells, tuple(0.0 for _ in mc.values), mc.values)

    atom_pairs = {}
    for key in set(jr.point_atoms) | set(qr.point_atoms):
        atom_pairs[key] = (jr.point_atoms.get(key, 0.0), qr.point_atoms.get(key, 0.0))
    grid_pairs = tuple(
        tuple((jr.grid[i][k], qr.grid[i][k]) for k in range(len(jr.y_cells)))
        for i in range(len(jr.x_cells)))
    deriv = JointDerivative(jr.x_cells, jr.y_cells, atom_pairs, grid_pairs, curve_pairs)
    return ACReport(True, None, deriv)


def derivative_check(deriv: JointDerivative, tol: float = 1e-9) -> bool:
    """Verify sum of ratio x reference mass reproduces J's mass pieces."""
    for jm, qm in deriv.pieces():
        back = (jm / qm) * qm if qm > 0 else 0.0
        if abs(back - jm) > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# Disintegration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionalDensityTable:
    """p(x|y) w.r.t. a reference on X: one step function per y cell/atom/point.

    Every section integrates to 1 against the reference.
    """

    reference: HybridMeasure
    y_cells: tuple[Cell, ...]
    cell_functions: tuple[StepFunction, ...]
    atom_functions: Mapping[str, StepFunction]
    point_functions: Mapping[Fraction, StepFunction]

    def at(self, y: AtomKey) -> StepFunction:
        if isinstance(y, str):
            return self.atom_functions[y]
        if y in self.point_functions:
            return self.point_functions[y]
        for cell, f in zip(self.y_cells, self.cell_functions):
            if cell[0] <= y < cell[1]:
                return f
        raise KeyError(y)


@dataclass(frozen=True)
class Disintegration:
    """P_{X|Y} as a kernel, with the fixed conditional used where p(y) = 0."""

    kernel: TransitionKernel
    null_convention: HybridMeasure
    conditional_density: Optional[ConditionalDensityTable] = None


def _y_lumps(j: JointMeasure):
    """Lump mass at atomic y values: (per-key atoms over X, strip densities)."""
    lumps: dict[AtomKey, dict] = {}
    for (kx, ky), w in j.point_atoms.items():
        if w > 0:
            entry = lumps.setdefault(ky, {"atoms": {}, "cells": []})
            entry["atoms"][kx] = entry["atoms"].get(kx, 0.0) + w
    for c in j.curves:
        if c.axis == "x" and any(v > 0 for v in c.values):
            entry = lumps.setdefault(c.target, {"atoms": {}, "cells": []})
            for cell, v in zip(c.cells, c.values):
                if v > 0:
                    entry["cells"].append((cell, v))
    return lumps


def _lump_section(j: JointMeasure, entry, scale: float) -> KernelSection:
    cells, raw = accumulate_step(j.x_space.intervals, entry["cells"])
    values = tuple(v * scale for v in raw)
    label_atoms = {k: w * scale for k, w in entry["atoms"].items() if isinstance(k, str)}
    point_atoms = {k: w * scale for k, w in entry["atoms"].items()
                   if isinstance(k, Fraction)}
    return KernelSection(label_atoms, point_atoms, (),
                         StepDensity(cells, values))


def disintegrate(j: JointMeasure) -> Disintegration:
    """Factor a normalized joint into P_{X|Y} x P_Y.

    Kernel sections on the continuous y part are the grid column over the
    slice density, with tracked atoms for monotone curves and fixed atoms
    for vertical strips; atomic y values get their lump slice.  Where the
    slice has zero mass the section is the x marginal: whatever is chosen
    there cannot change the reconstructed joint.
    """
    if not j.normalized:
        raise ValueError("disintegration needs a normalized joint")
    null_measure = marginal_x(j)
    null_section = KernelSection.from_measure(null_measure)

    # slice density per y cell: grid columns plus y-parameterised curves
    cell_sections = []
    for k, (ya, yb) in enumerate(j.y_cells):
        p_y = sum(row[k] * float(xb - xa)
                  for (xa, xb), row in zip(j.x_cells, j.grid))
        curve_hits = []
        for c in j.curves:
            if c.axis == "y":
                v = c.value_at(ya)
                if v > 0:
                    curve_hits.append((c, v))
                    p_y += v
        if p_y <= 0.0:
            cell_sections.append(null_section)
            continue
        dens = StepDensity(j.x_cells,
                           tuple(row[k] / p_y for row in j.grid))
        label_atoms: dict[str, float] = {}
        point_atoms: dict[Fraction, float] = {}
        tracking: list[TrackingAtom] = []
        for c, v in curve_hits:
            if c.slope != 0:
                tracking.append(TrackingAtom(c.slope, c.intercept, v / p_y))
            elif isinstance(c.target, str):
                label_atoms[c.target] = label_atoms.get(c.target, 0.0) + v / p_y
            else:
                point_atoms[c.target] = point_atoms.get(c.target, 0.0) + v / p_y
        cell_sections.append(KernelSection(label_atoms, point_atoms,
                                           tuple(tracking), dens))

    lumps = _y_lumps(j)
    atom_sections: dict[str, KernelSection] = {}
    point_sections: dict[Fraction, KernelSection] = {}
    for b in j.y_space.atoms:
        entry = lumps.get(b)
        if entry is None:
            atom_sections[b] = null_section
            continue
        m_b = sum(entry["atoms"].values()) + sum(v * float(c[1] - c[0])
                                                 for c, v in entry["cells"])
        atom_sections[b] = _lump_section(j, entry, 1.0 / m_b)
    for ky, entry in lumps.items():
        if isinstance(ky, str):
            continue
        m_p = sum(entry["atoms"].values()) + sum(v * float(c[1] - c[0])
                                                 for c, v in entry["cells"])
        point_sections[ky] = _lump_section(j, entry, 1.0 / m_p)

    # a downward-tracking atom can attain the excluded endpoint of the x
    # space at its cell's left edge; override that single (null) parameter
    # value so every section is a measure on X
    for (a, _b), sec in zip(j.y_cells, cell_sections):
        if a not in point_sections and any(
                t.slope < 0 and not j.x_space.contains_point(t.phi(a))
                for t in sec.tracking):
            point_sections[a] = null_section

    kernel = TransitionKernel(j.y_space, j.x_space, j.y_cells,
                              tuple(cell_sections), atom_sections, point_sections,
                              normalized=True)
    return Disintegration(kernel, null_measure)


def reconstruct(d: Disintegration, my: HybridMeasure) -> JointMeasure:
    """kernel x marginal; inverse of `disintegrate` up to float error."""
    return kernel_times_measure(d.kernel, my)


def _section_density_wrt(section: KernelSection, mu: HybridMeasure) -> StepFunction | None:
    """dS/dmu for one kernel section, or None if S is not dominated."""
    if any(t.weight > 0 for t in section.tracking):
        return None   # a moving atom escapes every fixed reference
    atom_vals: dict[AtomKey, float] = {}
    for k, w in list(section.label_atoms.items()) + list(section.point_atoms.items()):
        mw = mu.atom_weights.get(k, 0.0)
        if w > 0 and mw <= 0:
            return None
        if mw > 0:
            atom_vals[k] = w / mw
    if section.density is not None:
        sd = section.density.refined(mu.density.breakpoints)
        md = mu.density.refined(section.density.breakpoints)
        values = []
        for (cell, sv), mv in zip(zip(sd.cells, sd.values), md.values):
            if sv > 0 and mv <= 0:
                return None
            values.append(sv / mv if mv > 0 else 0.0)
        cells = sd.cells
    else:
        cells, values = mu.density.cells, [0.0 for _ in mu.density.cells]
    for k, mw in mu.atom_weights.items():
        atom_vals.setdefault(k, 0.0)
    return StepFunction(mu.space, atom_vals, cells, tuple(values))


def conditional_density(j: JointMeasure,
                        mu: HybridMeasure) -> Optional[ConditionalDensityTable]:
    """p(x|y) w.r.t. mu, present iff every kernel section is dominated by mu.

    Absence is a legitimate outcome: mass on a strictly monotone curve has
    no conditional density w.r.t. any measure in the representable class.
    """
    if mu.space != j.x_space:
        raise SpaceMismatchError("reference must live on the x space")
    d = disintegrate(j)
    k = d.kernel
    cell_fns = []
    for sec in k.cell_sections:
        f = _section_density_wrt(sec, mu)
        if f is None:
            return None
        cell_fns.append(f)
    atom_fns = {}
    for key, sec in k.atom_sections.items():
        f = _section_density_wrt(sec, mu)
        if f is None:
            return None
        atom_fns[key] = f
    point_fns = {}
    for key, sec in k.point_sections.items():
        f = _section_density_wrt(sec, mu)
        if f is None:
            return None
        point_fns[key] = f
    return ConditionalDensityTable(mu, k.y_cells, tuple(cell_fns), atom_fns, point_fns)
