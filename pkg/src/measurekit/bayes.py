"""Evidence, Bayes posteriors, and the validity gate.

The likelihood is a transition kernel from the parameter space to the
observation space.  Its density w.r.t. the model reference (counting on
labelled outcomes and declared fixed points, length on the intervals) is
what Bayes' formula integrates; parts of the kernel with no such density
(tracked atoms over a diffuse prior) are invisible to the formula, and the
gate detects exactly that: the formula yields a conditional distribution
iff the joint passes the regularity conditions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional

from .measure import (
    MASS_TOL,
    AtomKey,
    HybridMeasure,
    Space,
    SpaceMismatchError,
    StepDensity,
    StepFunction,
    refine_cells,
)
from .joint import (
    JointMeasure,
    KernelSection,
    TransitionKernel,
    joint_max_deviation,
    kernel_times_measure,
    marginal_x,
    marginal_y,
    swap_axes,
)
from .regularity import ConditionReport, check_conditions


@dataclass(frozen=True)
class LikelihoodModel:
    """A normalized prior over X and a normalized observation kernel X -> Y."""

    prior: HybridMeasure
    likelihood: TransitionKernel

    def __post_init__(self):
        if not self.prior.normalized:
            raise ValueError("prior must be a probability measure")
        if self.likelihood.from_space != self.prior.space:
            raise SpaceMismatchError("likelihood must condition on the prior's space")
        if not self.likelihood.normalized:
            raise ValueError("every likelihood section must be normalized")

    @property
    def y_space(self) -> Space:
        return self.likelihood.to_space


def reference_point_atoms(m: LikelihoodModel) -> set[Fraction]:
    """Fixed points of the observation space carrying representable point mass.

    These join the labelled outcomes as atoms of the model reference: the
    section's declared fixed points, plus tracked-atom images at the prior's
    own point atoms (finitely many, so still a valid reference).  The
    reference is sigma-finite by construction (finitely many atoms, finite
    total interval length), so the restriction-to-a-sigma-finite-part step
    that a pathological reference would require is the identity here.
    """
    pts: set[Fraction] = set()
    for _, sec in m.likelihood.iter_sections():
        pts |= {k for k, w in sec.point_atoms.items() if w > 0}
    for kx, w in m.prior.atom_weights.items():
        if w <= 0 or not isinstance(kx, Fraction):
            continue
        sec = m.likelihood.section_at(kx)
        pts |= {k for k, w2 in sec.point_atoms.items() if w2 > 0}
    return pts


def _section_value(sec: KernelSection, y: AtomKey, atomic: bool) -> float:
    """p(y | x) for a resolved section: mass at y if y is a reference atom,
    the density value at y otherwise."""
    if isinstance(y, str):
        return sec.label_atoms.get(y, 0.0)
    if atomic:
        return sec.point_atoms.get(y, 0.0)
    if sec.density is not None:
        for (a, b), v in zip(sec.density.cells, sec.density.values):
            if a <= y < b:
                return v
    return 0.0


def evidence(m: LikelihoodModel, y: AtomKey) -> float:
    """p(y): the likelihood density integrated against the prior, exactly."""
    if isinstance(y, str):
        if y not in m.y_space.atoms:
            raise SpaceMismatchError(f"outcome {y!r} not in the observation space")
        atomic = True
    else:
        y = Fraction(y)
        if not m.y_space.contains_point(y):
            raise SpaceMismatchError(f"outcome {y} outside the observation space")
        atomic = y in reference_point_atoms(m)
    total = 0.0
    for kx, w in m.prior.atom_weights.items():
        if w > 0:
            total += w * _section_value(m.likelihood.section_at(kx), y, atomic)
    dens = m.prior.density.refined(p for c in m.likelihood.y_cells for p in c)
    for (a, b), v in zip(dens.cells, dens.values):
        if v == 0.0:
            continue
        sec = _cell_section(m.likelihood, a)
        # tracked atoms integrate to zero against a density: the indicator
        # [phi(x) = y] is supported on a single x
        total += v * float(b - a) * _section_value(sec, y, atomic)
    return total


def _cell_section(k: TransitionKernel, x: Fraction) -> KernelSection:
    for cell, s in zip(k.y_cells, k.cell_sections):
        if cell[0] <= x < cell[1]:
            return s
    raise SpaceMismatchError(f"{x} outside the kernel's from space")


@dataclass(frozen=True)
class PosteriorResult:
    """Posterior over X for one observation, with the evidence and a flag."""

    posterior: HybridMeasure
    posterior_density: Optional[StepFunction]
    evidence: float
    valid: bool
    normalization_deficit: float = 0.0
    note: str = ""


def bayes_posterior(m: LikelihoodModel, y: AtomKey) -> PosteriorResult:
    """posterior(S) = integral over S of p(y|x) dP_X / p(y).

    Zero evidence marks the observation as impossible under the prior and
    returns the prior unchanged with ``valid=False`` rather than raising:
    in sequential use this signals model misspecification.
    """
    e = evidence(m, y)
    if e <= 0.0:
        return PosteriorResult(m.prior, None, e, False,
                               note="prior-impossible observation (evidence 0)")
    atomic = isinstance(y, str) or Fraction(y) in reference_point_atoms(m)
    atom_weights: dict[AtomKey, float] = {}
    for kx, w in m.prior.atom_weights.items():
        if w <= 0:
            continue
        val = _section_value(m.likelihood.section_at(kx), y, atomic)
        if val > 0:
            atom_weights[kx] = w * val / e
    dens = m.prior.density.refined(p for c in m.likelihood.y_cells for p in c)
    values = []
    for (a, b), v in zip(dens.cells, dens.values):
        sec_val = _section_value(_cell_section(m.likelihood, a), y, atomic) \
            if v > 0 else 0.0
        values.append(v * sec_val / e)
    raw = sum(atom_weights.values()) + sum(
        v * float(b - a) for (a, b), v in zip(dens.cells, values))
    deficit = raw - 1.0
    scale = 1.0 / raw
    posterior = HybridMeasure(
        m.prior.space,
        {k: w * scale for k, w in atom_weights.items()},
        StepDensity(dens.cells, tuple(v * scale for v in values)),
        normalized=True)
    density_fn = StepFunction(m.prior.space, dict(posterior.atom_weights),
                              posterior.density.cells, posterior.density.values)
    return PosteriorResult(posterior, density_fn, e, True,
                           normalization_deficit=deficit)


# ---------------------------------------------------------------------------
# The validity gate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateResult:
    """The formula-route verdict next to the condition-checker report."""

    formula_valid: bool
    report: ConditionReport
    detail: str = ""

    @property
    def consistent(self) -> bool:
        return self.report.agree and self.formula_valid == self.report.all_hold


def model_joint(m: LikelihoodModel) -> JointMeasure:
    """The joint P_{X,Y} induced by the model, with X on the first axis."""
    j_yx = kernel_times_measure(m.likelihood, m.prior)
    j = swap_axes(j_yx)
    return JointMeasure(j.x_space, j.y_space, j.point_atoms, j.x_cells, j.y_cells,
                        j.grid, j.curves, normalized=True)


def _formula_route(m: LikelihoodModel, j: JointMeasure, tol: float = 1e-9
                   ) -> tuple[bool, str]:
    """Decide whether Bayes' formula yields a conditional distribution.

    Two requirements, both checked piecewise: the evidence function must be
    a density of the Y marginal w.r.t. the model reference, and the
    formula's posteriors must reassemble the joint against that marginal.
    """
    my = marginal_y(j)
    ref_atoms: set[AtomKey] = set(m.y_space.atoms) | reference_point_atoms(m)
    for key, w in my.atom_weights.items():
        if w > 0 and key not in ref_atoms:
            return False, (f"the Y marginal carries mass at {key!r} that the "
                           "declared likelihood density cannot see")
    for key in ref_atoms:
        e_val = evidence(m, key)
        got = my.atom_weights.get(key, 0.0)
        if abs(e_val - got) > tol:
            return False, (f"evidence at {key!r} is {e_val}, but the Y marginal "
                           f"carries {got}")
    pts = {p for _, sec in m.likelihood.iter_sections() if sec.density is not None
           for p in sec.density.breakpoints}
    dens = my.density.refined(pts)
    for (a, b), v in zip(dens.cells, dens.values):
        mid = (a + b) / 2
        e_val = evidence(m, mid)
        if abs(e_val - v) > tol:
            return False, (f"evidence density {e_val} on [{a},{b}) does not match "
                           f"the Y marginal density {v}")

    # reassemble the joint from the formula's posteriors
    null_section = KernelSection.from_measure(marginal_x(j))
    cell_sections = []
    for (a, b) in dens.cells:
        mid = (a + b) / 2
        r = bayes_posterior(m, mid)
        cell_sections.append(KernelSection.from_measure(r.posterior)
                             if r.valid else null_section)
    atom_sections = {}
    for key in m.y_space.atoms:
        r = bayes_posterior(m, key)
        atom_sections[key] = (KernelSection.from_measure(r.posterior)
                              if r.valid else null_section)
    point_sections = {}
    for key in reference_point_atoms(m):
        r = bayes_posterior(m, key)
        point_sections[key] = (KernelSection.from_measure(r.posterior)
                               if r.valid else null_section)
    formula_kernel = TransitionKernel(m.y_space, m.prior.space, dens.cells,
                                      tuple(cell_sections), atom_sections,
                                      point_sections, normalized=True)
    rebuilt = kernel_times_measure(formula_kernel,
                                   HybridMeasure(my.space, my.atom_weights,
                                                 dens, normalized=True))
    dev = joint_max_deviation(rebuilt, j)
    if dev > tol:
        return False, f"formula posteriors reassemble the joint off by {dev:.3g}"
    return True, ""


def validity_gate(m: LikelihoodModel) -> GateResult:
    """Run the regularity checkers and the formula route on the model's joint.

    The two verdicts must coincide; a GateResult with consistent=False is a
    bug certificate in the same sense as a disagreeing ConditionReport.
    """
    j = model_joint(m)
    report = check_conditions(j)
    valid, detail = _formula_route(m, j)
    return GateResult(valid, report, detail)


# ---------------------------------------------------------------------------
# Construction helpers
# ---------------------------------------------------------------------------

def kernel_from_outcome_functions(theta_space: Space, outcomes: Space,
                                  fns: Mapping[str, StepFunction]
                                  ) -> TransitionKernel:
    """Build the likelihood kernel from per-outcome densities p(o | theta).

    Each function gives the probability of outcome `o` as a step function
    of theta; at every theta the outcome values must sum to one.
    """
    if set(fns) != set(outcomes.atoms):
        raise ValueError("need exactly one function per outcome label")
    pts: set[Fraction] = set()
    for f in fns.values():
        if f.space != theta_space:
            raise SpaceMismatchError("outcome functions must live on the theta space")
        pts |= {p for c in f.cells for p in c}
    cells = tuple(refine_cells(theta_space.intervals, pts))
    cell_sections = tuple(
        KernelSection(label_atoms={o: fns[o].cell_value_at(a) for o in outcomes.atoms})
        for (a, b) in cells)
    atom_sections = {
        t: KernelSection(label_atoms={o: fns[o].value_at(t) for o in outcomes.atoms})
        for t in theta_space.atoms}
    return TransitionKernel(theta_space, outcomes, cells, cell_sections,
                            atom_sections, {}, normalized=True)


def finite_model(prior_weights: Mapping[str, float],
                 likelihood_table: Mapping[str, Mapping[str, float]]
                 ) -> LikelihoodModel:
    """A fully discrete model: prior over labels, table p(outcome | label)."""
    theta_space = Space(atoms=tuple(prior_weights))
    outcome_labels = tuple(sorted({o for row in likelihood_table.values()
                                   for o in row}))
    outcomes = Space(atoms=outcome_labels)
    prior = HybridMeasure.from_atoms(theta_space, dict(prior_weights))
    atom_sections = {t: KernelSection(label_atoms=dict(likelihood_table[t]))
                     for t in theta_space.atoms}
    kernel = TransitionKernel(theta_space, outcomes, (), (), atom_sections, {},
                              normalized=True)
    return LikelihoodModel(prior, kernel)
