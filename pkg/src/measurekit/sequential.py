"""Sequential adaptive estimation: Bayes updates, greedy placement, termination.

A placement is a finite-outcome observation whose likelihood is a step
function of the parameter.  The engine keeps the running posterior, scores
placements by the information their outcome is expected to give about the
parameter (in nats), and terminates on an entropy threshold, a trial cap,
or (opt-in) when no placement has any gain left.  Outcome sampling uses
Python's Mersenne Twister (`random.Random`) seeded per run, so histories
are bit-reproducible within this implementation; cross-implementation
comparisons go through fixed outcome scripts instead.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .measure import (
    AtomKey,
    HybridMeasure,
    Space,
    StepFunction,
    refine_cells,
)
from .joint import JointMeasure, TransitionKernel, kernel_times_measure, swap_axes
from .bayes import (
    LikelihoodModel,
    bayes_posterior,
    kernel_from_outcome_functions,
)

GAIN_EPS = 1e-15


@dataclass(frozen=True)
class Placement:
    """A trial type: finitely many outcomes with step-function likelihoods."""

    label: str
    outcomes: tuple[str, ...]
    functions: Mapping[str, StepFunction]

    def __post_init__(self):
        if set(self.functions) != set(self.outcomes):
            raise ValueError(f"placement {self.label!r}: one function per outcome")
        object.__setattr__(self, "functions", dict(self.functions))

    def kernel(self, theta_space: Space) -> TransitionKernel:
        return kernel_from_outcome_functions(theta_space,
                                             Space(atoms=self.outcomes),
                                             self.functions)

    def outcome_value(self, outcome: str, theta: AtomKey) -> float:
        return self.functions[outcome].value_at(theta)


@dataclass(frozen=True)
class ExperimentConfig:
    theta_prior: HybridMeasure
    placements: tuple[Placement, ...]
    t_max: int
    policy: str = "greedy"                  # "greedy" | "fixed"
    entropy_threshold: Optional[float] = None
    zero_gain_stop: bool = False
    fixed_sequence: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not self.theta_prior.normalized:
            raise ValueError("the parameter prior must be a probability measure")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1 (no unbounded experiments)")
        if self.policy not in ("greedy", "fixed"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.policy == "fixed" and not self.fixed_sequence:
            raise ValueError("fixed policy needs a placement sequence")
        labels = [p.label for p in self.placements]
        if len(set(labels)) != len(labels):
            raise ValueError("placement labels must be unique")
        for lab in self.fixed_sequence:
            if lab not in labels:
                raise ValueError(f"fixed sequence names unknown placement {lab!r}")

    def placement(self, label: str) -> Placement:
        for p in self.placements:
            if p.label == label:
                return p
        raise KeyError(label)


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    placement: str
    outcome: str
    expected_gain: float      # gain of the chosen placement before observing
    posterior_entropy: float  # after the update


@dataclass(frozen=True)
class ExperimentState:
    posterior: HybridMeasure
    history: tuple[TrialRecord, ...] = ()
    terminated: bool = False
    reason: str = ""
    flag: str = ""

    @classmethod
    def initial(cls, config: ExperimentConfig) -> "ExperimentState":
        state = cls(config.theta_prior)
        return _apply_termination(config, state)


def posterior_entropy(m: HybridMeasure) -> float:
    """Entropy w.r.t. counting on atoms plus length on cells, in nats.

    Shannon entropy for purely atomic measures; the density part contributes
    differentially and may push the total negative.
    """
    total = 0.0
    for w in m.atom_weights.values():
        if w > 0:
            total -= w * math.log(w)
    for (a, b), v in zip(m.density.cells, m.density.values):
        if v > 0:
            total -= v * float(b - a) * math.log(v)
    return total


def support_length(m: HybridMeasure) -> Fraction:
    return sum((b - a for (a, b), v in zip(m.density.cells, m.density.values)
                if v > 0), Fraction(0))


def expected_gain(state: ExperimentState | HybridMeasure, placement: Placement
                  ) -> float:
    """I(parameter; outcome) under the current posterior, via the finite sum."""
    post = state.posterior if isinstance(state, ExperimentState) else state
    gain = 0.0
    for o in placement.outcomes:
        f = placement.functions[o]
        e_o = 0.0
        terms = []
        for key, w in post.atom_weights.items():
            if w > 0:
                p = f.value_at(key)
                e_o += w * p
                terms.append((w, p))
        dens = post.density.refined(q for c in f.cells for q in c)
        for (a, b), v in zip(dens.cells, dens.values):
            if v > 0:
                p = f.cell_value_at(a)
                mass_part = v * float(b - a)
                e_o += mass_part * p
                terms.append((mass_part, p))
        for w, p in terms:
            if p > 0 and e_o > 0:
                gain += w * p * math.log(p / e_o)
    return max(gain, 0.0) if gain > -1e-9 else gain


@dataclass(frozen=True)
class PlacementDecision:
    placement: Optional[str]    # None means terminate
    reason: str = ""
    gains: Mapping[str, float] = field(default_factory=dict)


def choose_placement(config: ExperimentConfig, state: ExperimentState
                     ) -> PlacementDecision:
    """Greedy argmax of expected gain (lowest index breaks ties), or the next
    configured placement under the fixed policy; termination wins over both."""
    if state.terminated:
        return PlacementDecision(None, state.reason)
    gains = {p.label: expected_gain(state, p) for p in config.placements}
    if config.policy == "fixed":
        idx = len(state.history)
        if idx >= len(config.fixed_sequence):
            return PlacementDecision(None, "fixed sequence exhausted", gains)
        return PlacementDecision(config.fixed_sequence[idx], "fixed", gains)
    best = None
    for p in config.placements:
        if best is None or gains[p.label] > gains[best] + GAIN_EPS:
            best = p.label
    if config.zero_gain_stop and gains[best] <= GAIN_EPS:
        return PlacementDecision(None, "no placement has positive gain", gains)
    return PlacementDecision(best, "greedy", gains)


def _apply_termination(config: ExperimentConfig,
                       state: ExperimentState) -> ExperimentState:
    if state.terminated:
        return state
    if config.entropy_threshold is not None and \
            posterior_entropy(state.posterior) <= config.entropy_threshold:
        return replace(state, terminated=True, reason="entropy threshold reached")
    if len(state.history) >= config.t_max:
        return replace(state, terminated=True, reason="trial cap reached")
    return state


def update(config: ExperimentConfig, state: ExperimentState,
           x: str, y: str) -> ExperimentState:
    """One Bayes update; outcome order is immaterial for independent trials.

    Zero evidence flags the state (model misspecification) and applies no
    update rather than raising.
    """
    if state.terminated:
        raise ValueError(f"experiment already terminated: {state.reason}")
    placement = config.placement(x)
    if y not in placement.outcomes:
        raise ValueError(f"outcome {y!r} not in placement {x!r}")
    gain = expected_gain(state, placement)
    model = LikelihoodModel(state.posterior, placement.kernel(state.posterior.space))
    result = bayes_posterior(model, y)
    if not result.valid:
        return replace(state, flag=f"evidence 0 at ({x}, {y}); no update applied")
    record = TrialRecord(len(state.history) + 1, x, y, gain,
                         posterior_entropy(result.posterior))
    new_state = ExperimentState(result.posterior, state.history + (record,))
    return _apply_termination(config, new_state)


@dataclass(frozen=True)
class SimulationSummary:
    trials: int
    cumulative_expected_gain: float
    entropy_trajectory: tuple[float, ...]
    reason: str


def run_simulation(config: ExperimentConfig, true_theta: AtomKey,
                   seed: Optional[int] = None
                   ) -> tuple[ExperimentState, SimulationSummary]:
    """Drive the policy against outcomes sampled from the true parameter."""
    prior = config.theta_prior
    if isinstance(true_theta, str):
        if prior.atom_weights.get(true_theta, 0.0) <= 0:
            raise ValueError(f"true parameter {true_theta!r} outside the prior support")
    else:
        true_theta = Fraction(true_theta)
        if not prior.space.contains_point(true_theta):
            raise ValueError(f"true parameter {true_theta} outside the space")
    rng = random.Random(config.seed if seed is None else seed)
    state = ExperimentState.initial(config)
    while not state.terminated:
        decision = choose_placement(config, state)
        if decision.placement is None:
            state = replace(state, terminated=True, reason=decision.reason)
            break
        placement = config.placement(decision.placement)
        probs = [placement.outcome_value(o, true_theta) for o in placement.outcomes]
        u = rng.random() * sum(probs)
        acc = 0.0
        outcome = placement.outcomes[-1]
        for o, p in zip(placement.outcomes, probs):
            acc += p
            if u < acc:
                outcome = o
                break
        state = update(config, state, placement.label, outcome)
        if state.flag:
            state = replace(state, terminated=True, reason=state.flag)
    summary = SimulationSummary(
        trials=len(state.history),
        cumulative_expected_gain=sum(r.expected_gain for r in state.history),
        entropy_trajectory=tuple(r.posterior_entropy for r in state.history),
        reason=state.reason)
    return state, summary


# ---------------------------------------------------------------------------
# Whole-history joints
# ---------------------------------------------------------------------------

SEQ_SEP = "|"


def sequence_model(config: ExperimentConfig,
                   sequence: Sequence[str]) -> LikelihoodModel:
    """The model whose single observation is the whole outcome tuple of a
    fixed placement sequence; its joint carries I(parameter; full history)."""
    placements = [config.placement(lab) for lab in sequence]
    prior = config.theta_prior
    combos: list[tuple[str, ...]] = [()]
    for p in placements:
        combos = [c + (o,) for c in combos for o in p.outcomes]
    labels = tuple(SEQ_SEP.join(c) for c in combos)
    pts = {q for p in placements for f in p.functions.values()
           for c in f.cells for q in c}
    cells = tuple(refine_cells(prior.space.intervals, pts))
    fns = {}
    for combo, label in zip(combos, labels):
        atom_vals = {}
        for t in list(prior.space.atoms) + list(prior.point_atoms()):
            v = 1.0
            for p, o in zip(placements, combo):
                v *= p.functions[o].value_at(t)
            atom_vals[t] = v
        values = []
        for (a, b) in cells:
            v = 1.0
            for p, o in zip(placements, combo):
                v *= p.functions[o].cell_value_at(a)
            values.append(v)
        fns[label] = StepFunction(prior.space, atom_vals, cells, tuple(values))
    kernel = kernel_from_outcome_functions(prior.space, Space(atoms=labels), fns)
    return LikelihoodModel(prior, kernel)


def history_joint(config: ExperimentConfig,
                  sequence: Sequence[str]) -> JointMeasure:
    """The joint of (parameter, outcome tuple) for a fixed sequence."""
    m = sequence_model(config, sequence)
    j = swap_axes(kernel_times_measure(m.likelihood, m.prior))
    return JointMeasure(j.x_space, j.y_space, j.point_atoms, j.x_cells,
                        j.y_cells, j.grid, j.curves, normalized=True)


# ---------------------------------------------------------------------------
# The digit-by-digit observation demonstration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DigitsRecord:
    t: int
    mi_nats: float
    support_length: Fraction
    posterior_entropy: float


def binary_digits_demo(t_max: int, x0: Fraction = Fraction(1, 3)
                       ) -> tuple[DigitsRecord, ...]:
    """Observe the binary digits of a uniform variable one at a time.

    After t digits the posterior is uniform on a dyadic interval of length
    2^-t, and the information about the variable has grown to t*log(2):
    every step adds one full bit forever, which is the finite-t witness that
    the full digit sequence admits no joint density with the variable.
    """
    if not 1 <= t_max <= 24:
        raise ValueError("t_max must be between 1 and 24")
    x0 = Fraction(x0)
    if not 0 <= x0 < 1:
        raise ValueError("the observed point must lie in [0, 1)")
    unit = Space(intervals=((Fraction(0), Fraction(1)),))
    posterior = HybridMeasure.uniform(unit)
    records = [DigitsRecord(0, 0.0, Fraction(1), posterior_entropy(posterior))]
    for t in range(1, t_max + 1):
        digit = (x0 * 2 ** t).__floor__() % 2
        scale = Fraction(1, 2 ** t)
        # a version of the t-th digit function: exact on the dyadic grid at
        # level t wherever the posterior lives (its support is one dyadic
        # interval, so only the midpoint split matters)
        breaks = sorted({c for cell in posterior.density.cells for c in cell} |
                        {k * scale for k in range(2 ** t)
                         if any(a <= k * scale < b
                                for (a, b), v in zip(posterior.density.cells,
                                                     posterior.density.values)
                                if v > 0)})
        cells = tuple(refine_cells(unit.intervals, breaks))
        values = tuple(
            float(((a / scale).__floor__()) % 2 == 1) for a, b in cells)
        f1 = StepFunction(unit, {}, cells, values)
        f0 = StepFunction(unit, {}, cells, tuple(1.0 - v for v in values))
        kernel = kernel_from_outcome_functions(
            unit, Space(atoms=("0", "1")), {"0": f0, "1": f1})
        result = bayes_posterior(LikelihoodModel(posterior, kernel), str(digit))
        posterior = result.posterior
        records.append(DigitsRecord(t, _digits_mi(t), support_length(posterior),
                                    posterior_entropy(posterior)))
    return tuple(records)


def _digits_mi(t: int) -> float:
    """I(X; first t digits) evaluated on the level-t joint."""
    from .joint import CurveComponent
    from .regularity import mutual_information_discrete_y

    if t <= 16:
        unit = Space(intervals=((Fraction(0), Fraction(1)),))
        seq_space = Space(atoms=tuple(format(k, f"0{t}b") for k in range(2 ** t)))
        scale = Fraction(1, 2 ** t)
        curves = tuple(
            CurveComponent("x", ((k * scale, (k + 1) * scale),), (1.0,),
                           Fraction(0), None, format(k, f"0{t}b"))
            for k in range(2 ** t))
        j = JointMeasure(unit, seq_space, {}, (), (), (), curves, normalized=True)
        return mutual_information_discrete_y(j).value
    # beyond 2^16 outcome atoms the strips are congruent by construction:
    # each contributes 2^-t * log(2^t), and there are 2^t of them
    return t * math.log(2.0)
