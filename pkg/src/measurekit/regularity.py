"""Independent checkers for the five regularity conditions, and mutual information.

Each condition gets its own decision procedure over the representable
class; the equivalence of all five is a theorem, so any disagreement
between the checkers is a bug certificate, not a recoverable state.
Mutual information is gated by the product-absolute-continuity check and
set to +infinity when the gate fails.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .measure import (
    AtomKey,
    HybridMeasure,
    MeasurableMap,
    Space,
    StepDensity,
    refine_cells,
)
from .joint import (
    CurveComponent,
    JointMeasure,
    KernelSection,
    TransitionKernel,
    marginal_x,
    marginal_y,
    product_measure,
    pushforward_joint,
    refine_joint,
)
from .conditioning import (
    ac_check,
    ac_check_joint,
    conditional_density,
    disintegrate,
)

__all__ = [
    "CONDITION_NAMES", "ConditionReport", "ExtendedReal", "JointProfile",
    "PROFILES", "SuiteResult", "check_condition6", "check_conditions",
    "equivalence_certificate", "mutual_information",
    "mutual_information_discrete_y", "random_joint", "run_equivalence_suite",
]

CONDITION_NAMES = ("c1_joint_density", "c2_ac_product", "c3_conditional_density",
                   "c4_kernel_ac_marginal", "c5_dominating_reference")


@dataclass(frozen=True)
class ExtendedReal:
    """A nonnegative value or +infinity (the singular-information convention)."""

    value: float

    def __post_init__(self):
        if not (self.value >= 0 or math.isinf(self.value)):
            raise ValueError(f"extended real must be >= 0 or inf, got {self.value}")

    @classmethod
    def infinite(cls) -> "ExtendedReal":
        return cls(math.inf)

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class ConditionReport:
    """Five independently computed verdicts plus witnesses of failure.

    `agree` must always hold; a report with agree=False certifies a bug in
    at least one checker and is meant to be serialised verbatim.
    """

    c1_joint_density: bool
    c2_ac_product: bool
    c3_conditional_density: bool
    c4_kernel_ac_marginal: bool
    c5_dominating_reference: bool
    witnesses: Mapping[str, str] = field(default_factory=dict)

    @property
    def flags(self) -> tuple[bool, ...]:
        return (self.c1_joint_density, self.c2_ac_product,
                self.c3_conditional_density, self.c4_kernel_ac_marginal,
                self.c5_dominating_reference)

    @property
    def agree(self) -> bool:
        return len(set(self.flags)) == 1

    @property
    def all_hold(self) -> bool:
        return all(self.flags)

    def as_dict(self) -> dict:
        return {name: flag for name, flag in zip(CONDITION_NAMES, self.flags)} | {
            "agree": self.agree, "witnesses": dict(self.witnesses)}


# ---------------------------------------------------------------------------
# The five procedures
# ---------------------------------------------------------------------------

def _check_c1(j: JointMeasure, prod: JointMeasure) -> tuple[bool, str]:
    """Construct a candidate joint density w.r.t. the marginal product and
    verify it reproduces the joint's mass (mass escaping onto product-null
    pieces means no density exists)."""
    recovered = 0.0
    for key, w in j.point_atoms.items():
        if prod.point_atoms.get(key, 0.0) > 0:
            recovered += w
    x_pts = {p for c in j.x_cells for p in c} | {p for c in prod.x_cells for p in c}
    y_pts = {p for c in j.y_cells for p in c} | {p for c in prod.y_cells for p in c}
    jr = refine_joint(j, x_pts, y_pts)
    qr = refine_joint(prod, x_pts, y_pts)
    for i, (xa, xb) in enumerate(jr.x_cells):
        for k, (ya, yb) in enumerate(jr.y_cells):
            if qr.grid[i][k] > 0:
                recovered += jr.grid[i][k] * float(xb - xa) * float(yb - ya)
    prod_curves = {c.signature: c for c in qr.curves}
    for c in jr.curves:
        match = prod_curves.get(c.signature)
        if match is None:
            continue
        pts = {p for cell in match.cells for p in cell}
        rc = c.refined(pts)
        mvals = dict(zip(match.refined({p for cell in c.cells for p in cell}).cells,
                         match.refined({p for cell in c.cells for p in cell}).values))
        for cell, v in zip(rc.cells, rc.values):
            if mvals.get(cell, 0.0) > 0:
                recovered += v * float(cell[1] - cell[0])
    deficit = j.total_mass - recovered
    if abs(deficit) <= 1e-9:
        return True, ""
    return False, (f"candidate density loses mass {deficit:.6g}: that part of the "
                   f"joint sits on a product-null set")


def _check_c4(j: JointMeasure, px: HybridMeasure) -> tuple[bool, str]:
    """Every kernel section must be absolutely continuous w.r.t. the x marginal.

    Sections with tracked atoms are probed at more parameter values than the
    marginal has atoms: an affine point can coincide with a fixed atom at most
    once, so if every probe passes the section is genuinely dominated.
    """
    d = disintegrate(j)
    n_atoms = len([w for w in px.atom_weights.values() if w > 0])
    for where, sec in d.kernel.iter_sections():
        if isinstance(where, tuple):
            a, b = where
            if sec.tracking:
                probes = [a + (b - a) * Fraction(i + 1, n_atoms + 2)
                          for i in range(n_atoms + 1)]
            else:
                probes = [a]
            for y in probes:
                r = ac_check(sec.at_point(y).as_measure(px.space), px)
                if not r.absolutely_continuous:
                    return False, (f"section at y={y} in cell [{a},{b}): "
                                   f"{r.singular_witness.description}")
        else:
            r = ac_check(sec.as_measure(px.space), px)
            if not r.absolutely_continuous:
                return False, f"section at y={where!r}: {r.singular_witness.description}"
    return True, ""


def _check_c5(j: JointMeasure, px: HybridMeasure) -> tuple[bool, str]:
    """Search for one representable reference dominating every section and
    giving the x marginal a density.

    The search is restricted to the representable class; a section's tracked
    atom sweeps a continuum of points, which no finite-atom reference can
    cover, so its presence on a positive-mass slice decides the search.
    """
    d = disintegrate(j)
    needed_atoms: set[AtomKey] = set()
    needed_cells: set = set()
    for _, sec in d.kernel.iter_sections():
        for t in sec.tracking:
            if t.weight > 0:
                return False, ("a section carries a moving atom "
                               f"(slope {t.slope}, intercept {t.intercept}); no "
                               "representable reference dominates all sections")
        needed_atoms |= {k for k, w in sec.label_atoms.items() if w > 0}
        needed_atoms |= {k for k, w in sec.point_atoms.items() if w > 0}
        if sec.density is not None:
            needed_cells |= set(sec.density.support_cells())
    needed_atoms |= {k for k, w in px.atom_weights.items() if w > 0}
    needed_cells |= set(px.density.support_cells())

    pts = {p for c in needed_cells for p in c}
    cells = tuple(refine_cells(px.space.intervals, pts))
    values = tuple(1.0 if any(a <= ca and cb <= b for a, b in needed_cells) else 0.0
                   for ca, cb in cells)
    mu = HybridMeasure(px.space, {k: 1.0 for k in needed_atoms},
                       StepDensity(cells, values))
    if not ac_check(px, mu).absolutely_continuous:
        return False, "constructed reference fails to dominate the x marginal"
    for where, sec in d.kernel.iter_sections():
        probe = sec if not sec.tracking else sec.at_point(where[0])
        if not ac_check(probe.as_measure(px.space), mu).absolutely_continuous:
            return False, f"constructed reference fails at section {where!r}"
    return True, ""


def check_conditions(j: JointMeasure) -> ConditionReport:
    """Run all five condition checkers on a normalized joint."""
    if not j.normalized:
        raise ValueError("condition checks need a normalized joint")
    px, py = marginal_x(j), marginal_y(j)
    prod = product_measure(px, py)
    witnesses: dict[str, str] = {}

    c1, w1 = _check_c1(j, prod)
    if not c1:
        witnesses["c1_joint_density"] = w1

    r2 = ac_check_joint(j, prod)
    c2 = r2.absolutely_continuous
    if not c2:
        witnesses["c2_ac_product"] = r2.singular_witness.description

    table = conditional_density(j, px)
    c3 = table is not None
    if not c3:
        witnesses["c3_conditional_density"] = (
            "no conditional density w.r.t. the x marginal (or any "
            "representable sigma-finite reference)")

    c4, w4 = _check_c4(j, px)
    if not c4:
        witnesses["c4_kernel_ac_marginal"] = w4

    c5, w5 = _check_c5(j, px)
    if not c5:
        witnesses["c5_dominating_reference"] = w5

    return ConditionReport(c1, c2, c3, c4, c5, witnesses)


def check_condition6(j: JointMeasure, fx: MeasurableMap,
                     fy: MeasurableMap) -> tuple[ConditionReport, ConditionReport]:
    """Reports before and after pushing both coordinates forward.

    All-true before must imply all-true after (forward preservation); the
    converse direction may fail and is reported, never asserted.
    """
    before = check_conditions(j)
    pushed = pushforward_joint(j, fx, fy)
    pushed = JointMeasure(pushed.x_space, pushed.y_space, pushed.point_atoms,
                          pushed.x_cells, pushed.y_cells, pushed.grid,
                          pushed.curves, normalized=True)
    after = check_conditions(pushed)
    return before, after


# ---------------------------------------------------------------------------
# Mutual information
# ---------------------------------------------------------------------------

def mutual_information(j: JointMeasure) -> ExtendedReal:
    """I(X;Y) in nats; +infinity when the joint is singular w.r.t. the
    product of its marginals, with 0*log(0) taken as 0."""
    if not j.normalized:
        raise ValueError("mutual information needs a normalized joint")
    prod = product_measure(marginal_x(j), marginal_y(j))
    report = ac_check_joint(j, prod)
    if not report.absolutely_continuous:
        return ExtendedReal.infinite()
    total = 0.0
    for jm, qm in report.rn_derivative.pieces():
        if jm > 0:
            total += jm * math.log(jm / qm)
    if total < 0:
        if total < -1e-9:
            raise ArithmeticError(f"mutual information computed as {total}")
        total = 0.0
    return ExtendedReal(total)


def mutual_information_discrete_y(j: JointMeasure) -> ExtendedReal:
    """I(X;Y) for a joint whose Y marginal is purely atomic, evaluated as the
    average divergence of the y slices from the X marginal.

    Equal to `mutual_information` where both apply, but linear in the number
    of outcomes: the product of the marginals is never materialised.
    """
    import bisect as _bisect

    if not j.normalized:
        raise ValueError("mutual information needs a normalized joint")
    if j.grid_mass > 0 or any(c.axis == "y" and c.mass > 0 for c in j.curves):
        raise ValueError("the Y marginal must be purely atomic")
    px = marginal_x(j)
    px_starts = [a for a, _b in px.density.cells]
    px_vals = px.density.values

    def px_density(a: Fraction) -> float:
        i = _bisect.bisect_right(px_starts, a) - 1
        return px_vals[i] if i >= 0 else 0.0

    # lump slices per atomic y: point atoms and horizontal strips
    slices: dict[AtomKey, dict] = {}
    for (kx, ky), w in j.point_atoms.items():
        if w > 0:
            entry = slices.setdefault(ky, {"atoms": {}, "pieces": []})
            entry["atoms"][kx] = entry["atoms"].get(kx, 0.0) + w
    for c in j.curves:
        if c.axis == "x" and c.mass > 0:
            entry = slices.setdefault(c.target, {"atoms": {}, "pieces": []})
            for cell, v in zip(c.cells, c.values):
                if v > 0:
                    entry["pieces"].append((cell, v))
    total = 0.0
    for entry in slices.values():
        w_y = sum(entry["atoms"].values()) + sum(
            v * float(b - a) for (a, b), v in entry["pieces"])
        for kx, w in entry["atoms"].items():
            ref = px.atom_weights.get(kx, 0.0)
            if ref <= 0:
                return ExtendedReal.infinite()
            total += w * math.log((w / w_y) / ref)
        for (a, b), v in entry["pieces"]:
            for (ca, cb) in _split_by(px_starts, a, b):
                ref = px_density(ca)
                if ref <= 0:
                    return ExtendedReal.infinite()
                total += v * float(cb - ca) * math.log((v / w_y) / ref)
    if total < 0:
        if total < -1e-9:
            raise ArithmeticError(f"mutual information computed as {total}")
        total = 0.0
    return ExtendedReal(total)


def _split_by(sorted_points: list, a: Fraction, b: Fraction):
    import bisect as _bisect
    lo = _bisect.bisect_right(sorted_points, a)
    hi = _bisect.bisect_left(sorted_points, b)
    left = a
    for p in sorted_points[lo:hi]:
        yield (left, p)
        left = p
    yield (left, b)


# ---------------------------------------------------------------------------
# Random joints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JointProfile:
    """Size caps and class mix for the random-joint generator."""

    kind: str = "mixed"            # "atoms" | "grid" | "mixed"
    max_atoms: int = 4
    max_cells: int = 4
    singular_prob: float = 0.5
    point_atom_prob: float = 0.4
    strip_prob: float = 0.4
    denominator: int = 8


PROFILES = {
    "atoms": JointProfile(kind="atoms", max_atoms=6),
    "grid": JointProfile(kind="grid"),
    "mixed": JointProfile(kind="mixed"),
}


def random_joint(seed: int, profile: str | JointProfile = "mixed") -> JointMeasure:
    """A seeded, normalized joint drawn from the requested class mix."""
    if isinstance(profile, str):
        profile = PROFILES[profile]
    rng = random.Random(f"{seed}:{profile.kind}")
    if profile.kind == "atoms":
        return _random_atom_joint(rng, profile)
    return _random_hybrid_joint(rng, profile)


def _random_atom_joint(rng: random.Random, profile: JointProfile) -> JointMeasure:
    nx = rng.randint(2, profile.max_atoms)
    ny = rng.randint(2, profile.max_atoms)
    xs = Space(atoms=tuple(f"x{i}" for i in range(nx)))
    ys = Space(atoms=tuple(f"y{i}" for i in range(ny)))
    weights = {}
    for i in range(nx):
        for k in range(ny):
            if rng.random() < 0.3:
                continue
            weights[(f"x{i}", f"y{k}")] = rng.uniform(0.05, 1.0)
    if not weights:
        weights[("x0", "y0")] = 1.0
    total = sum(weights.values())
    return JointMeasure(xs, ys, {k: w / total for k, w in weights.items()},
                        normalized=True)


def _dyadic_cells(rng: random.Random, n_cells: int, denom: int) -> tuple:
    cuts = sorted(rng.sample(range(1, denom), n_cells - 1)) if n_cells > 1 else []
    pts = [Fraction(0)] + [Fraction(c, denom) for c in cuts] + [Fraction(1)]
    return tuple((pts[i], pts[i + 1]) for i in range(len(pts) - 1))


def _random_monotone_curve(rng: random.Random, denom: int) -> CurveComponent | None:
    slope = rng.choice([Fraction(1), Fraction(-1), Fraction(1, 2), Fraction(2),
                        Fraction(-1, 2)])
    for _ in range(20):
        a = Fraction(rng.randrange(0, denom), denom)
        b = Fraction(rng.randrange(1, denom + 1), denom)
        if not a < b:
            continue
        intercept = Fraction(rng.randrange(-denom, denom), denom)
        lo, hi = sorted((slope * a + intercept, slope * b + intercept))
        if 0 <= lo and hi <= 1:
            cells = tuple(refine_cells([(a, b)],
                                       [Fraction(rng.randrange(1, denom), denom)]))
            values = tuple(rng.uniform(0.2, 1.0) for _ in cells)
            return CurveComponent("y", cells, values, slope, intercept, None)
    return None


def _random_hybrid_joint(rng: random.Random, profile: JointProfile) -> JointMeasure:
    unit = ((Fraction(0), Fraction(1)),)
    with_x_atom = profile.kind == "mixed" and rng.random() < 0.5
    with_y_atom = profile.kind == "mixed" and rng.random() < 0.3
    xs = Space(atoms=("a",) if with_x_atom else (), intervals=unit)
    ys = Space(atoms=("b",) if with_y_atom else (), intervals=unit)
    denom = profile.denominator

    x_cells = _dyadic_cells(rng, rng.randint(1, profile.max_cells), denom)
    y_cells = _dyadic_cells(rng, rng.randint(1, profile.max_cells), denom)
    grid = [[rng.uniform(0.1, 1.0) if rng.random() > 0.3 else 0.0
             for _ in y_cells] for _ in x_cells]
    if all(v == 0.0 for row in grid for v in row):
        grid[0][0] = 1.0

    atoms: dict = {}
    curves: list[CurveComponent] = []
    if profile.kind == "mixed":
        if rng.random() < profile.point_atom_prob:
            for _ in range(rng.randint(1, 2)):
                kx = "a" if with_x_atom and rng.random() < 0.5 else \
                    Fraction(rng.randrange(0, denom), denom)
                ky = "b" if with_y_atom and rng.random() < 0.5 else \
                    Fraction(rng.randrange(0, denom), denom)
                atoms[(kx, ky)] = atoms.get((kx, ky), 0.0) + rng.uniform(0.1, 0.5)
        if rng.random() < profile.strip_prob:
            target = "a" if with_x_atom else Fraction(rng.randrange(0, denom), denom)
            cells = _dyadic_cells(rng, rng.randint(1, 2), denom)
            curves.append(CurveComponent("y", cells,
                                         tuple(rng.uniform(0.1, 1.0) for _ in cells),
                                         Fraction(0), None, target))
        if rng.random() < profile.strip_prob:
            target = "b" if with_y_atom else Fraction(rng.randrange(0, denom), denom)
            cells = _dyadic_cells(rng, rng.randint(1, 2), denom)
            curves.append(CurveComponent("x", cells,
                                         tuple(rng.uniform(0.1, 1.0) for _ in cells),
                                         Fraction(0), None, target))
        if rng.random() < profile.singular_prob:
            for _ in range(rng.randint(1, 2)):
                c = _random_monotone_curve(rng, denom)
                if c is not None:
                    curves.append(c)

    draft = JointMeasure(xs, ys, atoms, x_cells, y_cells,
                         tuple(tuple(row) for row in grid), tuple(curves))
    total = draft.total_mass
    scaled_atoms = {k: w / total for k, w in draft.point_atoms.items()}
    scaled_grid = tuple(tuple(v / total for v in row) for row in draft.grid)
    scaled_curves = tuple(
        CurveComponent(c.axis, c.cells, tuple(v / total for v in c.values),
                       c.slope, c.intercept, c.target) for c in draft.curves)
    return JointMeasure(xs, ys, scaled_atoms, draft.x_cells, draft.y_cells,
                        scaled_grid, scaled_curves, normalized=True)


# ---------------------------------------------------------------------------
# Equivalence suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteResult:
    draws: int
    agreed: int
    certificates: tuple[dict, ...]

    @property
    def ok(self) -> bool:
        return self.agreed == self.draws and not self.certificates


def equivalence_certificate(seed: int, profile: str,
                            report: ConditionReport) -> dict:
    """Structured description of a checker disagreement, for serialisation."""
    return {
        "kind": "condition-equivalence-violation",
        "seed": seed,
        "profile": profile,
        "conditions": {n: f for n, f in zip(CONDITION_NAMES, report.flags)},
        "witnesses": dict(report.witnesses),
    }


def check_draw(index: int, seed: int,
               profiles: Sequence[str]) -> Optional[dict]:
    """Run one suite draw; a certificate dict if the checkers disagree."""
    profile = profiles[index % len(profiles)]
    draw_seed = seed * 1_000_003 + index
    report = check_conditions(random_joint(draw_seed, profile))
    if report.agree:
        return None
    return equivalence_certificate(draw_seed, profile, report)


def _suite_chunk(args) -> list[dict]:
    start, count, seed, profiles = args
    out = []
    for i in range(start, start + count):
        cert = check_draw(i, seed, profiles)
        if cert is not None:
            out.append(cert)
    return out


def run_equivalence_suite(draws: int, seed: int = 0,
                          profiles: Sequence[str] = ("atoms", "grid", "mixed"),
                          workers: int = 1) -> SuiteResult:
    """Draw random joints and demand that all five checkers agree on each.

    Each draw's seed is a pure function of its index, so fanning out across
    workers cannot change the result.
    """
    certificates: list[dict] = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunk = max(1, (draws + workers - 1) // workers)
        jobs = [(start, min(chunk, draws - start), seed, tuple(profiles))
                for start in range(0, draws, chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_suite_chunk, jobs):
                certificates.extend(result)
    else:
        for i in range(draws):
            cert = check_draw(i, seed, profiles)
            if cert is not None:
                certificates.append(cert)
    certificates.sort(key=lambda c: c["seed"])
    return SuiteResult(draws, draws - len(certificates), tuple(certificates))
