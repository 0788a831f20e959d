"""Factorized joints over a DAG of nodes, assembly, and per-node checks.

Each node carries a conditional density table over its own states (labelled
atoms and/or interval cells), constant per combination of parent states.
Everything in this representation has a density, which is the point: a node
that copied a continuous parent outright would need a moving atom, and no
field here can express one, so such joints are unrepresentable by
construction.  Assembly is exponential in the node count and is capped.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence, Union

import numpy as np

from .measure import (
    MASS_TOL,
    AffinePiece,
    Cell,
    ConstantPiece,
    DomainError,
    MeasurableMap,
    Space,
    as_fraction,
    refine_cells,
)

MAX_NODES = 8
MAX_PRODUCT_CELLS = 10 ** 6

#: A node state: a labelled atom, an exact point atom, or an interval cell.
StateKey = tuple[str, Union[str, Fraction, Cell]]


class CapExceededError(ValueError):
    """The product state space is too large to assemble explicitly."""


def _space_states(space: Space, cells: Sequence[Cell]) -> tuple[StateKey, ...]:
    states: list[StateKey] = [("atom", a) for a in space.atoms]
    states += [("cell", c) for c in cells]
    return tuple(states)


def _state_length(state: StateKey) -> float:
    if state[0] == "atom":
        return 1.0
    a, b = state[1]
    return float(b - a)


@dataclass(frozen=True)
class NetNode:
    """One variable: its space, state partition, parents, and table.

    ``table[i][s]`` is the conditional density of state `s` given the i-th
    parent-state combination (row-major over the parents in index order),
    w.r.t. counting on atoms and length on cells.
    """

    name: str
    space: Space
    cells: tuple[Cell, ...]
    parents: tuple[int, ...]
    table: tuple[tuple[float, ...], ...]

    @property
    def states(self) -> tuple[StateKey, ...]:
        return _space_states(self.space, self.cells)


@dataclass(frozen=True)
class BayesNet:
    """Topologically indexed nodes; parents always have smaller index."""

    nodes: tuple[NetNode, ...]

    def __post_init__(self):
        if len(self.nodes) > MAX_NODES:
            raise CapExceededError(f"at most {MAX_NODES} nodes supported")
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("node names must be unique")
        for k, node in enumerate(self.nodes):
            for p in node.parents:
                if not 0 <= p < k:
                    raise ValueError(
                        f"node {node.name!r}: parent index {p} not before {k}")
            n_combos = 1
            for p in node.parents:
                n_combos *= len(self.nodes[p].states)
            if len(node.table) != n_combos:
                raise ValueError(
                    f"node {node.name!r}: {len(node.table)} rows, need {n_combos}")
            for row in node.table:
                if len(row) != len(node.states):
                    raise ValueError(f"node {node.name!r}: row width mismatch")
                total = sum(v * _state_length(s) for v, s in zip(row, node.states))
                if any(v < 0 or not math.isfinite(v) for v in row):
                    raise ValueError(f"node {node.name!r}: negative table entry")
                if abs(total - 1.0) > MASS_TOL:
                    raise ValueError(
                        f"node {node.name!r}: conditional row sums to {total}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(n.states) for n in self.nodes)


@dataclass(frozen=True)
class AssembledJoint:
    """The explicit joint: density values and masses per product state."""

    names: tuple[str, ...]
    states: tuple[tuple[StateKey, ...], ...]
    values: np.ndarray    # densities w.r.t. the product reference
    masses: np.ndarray    # values times product of state lengths

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def marginal(self, k: int) -> np.ndarray:
        axes = tuple(i for i in range(self.masses.ndim) if i != k)
        return self.masses.sum(axis=axes)


def _check_cap(shape: Sequence[int]) -> None:
    cells = 1
    for n in shape:
        cells *= n
    if cells > MAX_PRODUCT_CELLS:
        raise CapExceededError(
            f"product state space has {cells} cells (cap {MAX_PRODUCT_CELLS})")


def assemble_joint(net: BayesNet) -> AssembledJoint:
    """Multiply the conditional tables into the full product array."""
    shape = net.shape
    _check_cap(shape)
    values = np.ones(shape, dtype=float)
    for k, node in enumerate(net.nodes):
        dims = [len(net.nodes[p].states) for p in node.parents]
        t = np.asarray(node.table, dtype=float).reshape(dims + [len(node.states)])
        bshape = [1] * len(shape)
        for axis_pos, p in enumerate(node.parents):
            bshape[p] = dims[axis_pos]
        bshape[k] = len(node.states)
        # row-major combos over ascending parent indices line up with reshape
        values = values * t.reshape(bshape)
    masses = values.copy()
    for k, node in enumerate(net.nodes):
        lengths = np.array([_state_length(s) for s in node.states])
        bshape = [1] * len(shape)
        bshape[k] = len(node.states)
        masses = masses * lengths.reshape(bshape)
    total = float(masses.sum())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"assembled joint has mass {total}")
    return AssembledJoint(tuple(n.name for n in net.nodes),
                          tuple(n.states for n in net.nodes), values, masses)


# ---------------------------------------------------------------------------
# Condition checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetReport:
    """Global product-AC verdict next to the per-node section checks."""

    global_c2: bool
    per_node_c4: Mapping[str, bool]
    witnesses: Mapping[str, str] = field(default_factory=dict)

    @property
    def agree(self) -> bool:
        return self.global_c2 == all(self.per_node_c4.values())

    @property
    def all_hold(self) -> bool:
        return self.global_c2 and all(self.per_node_c4.values())

    def as_dict(self) -> dict:
        return {"global_c2": self.global_c2,
                "per_node_c4": dict(self.per_node_c4),
                "agree": self.agree,
                "witnesses": dict(self.witnesses)}


def _global_c2(assembled: AssembledJoint) -> tuple[bool, str]:
    """Joint mass only where every single-node marginal has mass."""
    marginals = [assembled.marginal(k) for k in range(assembled.masses.ndim)]
    support = assembled.masses > 0
    for idx in np.argwhere(support):
        for k, i in enumerate(idx):
            if marginals[k][i] <= 0:
                return False, (f"joint mass at {tuple(int(v) for v in idx)} but "
                               f"marginal of {assembled.names[k]} vanishes there")
    return True, ""


def _parent_combo_masses(assembled: AssembledJoint, parents: tuple[int, ...]
                         ) -> np.ndarray:
    axes = tuple(i for i in range(assembled.masses.ndim) if i not in parents)
    return assembled.masses.sum(axis=axes) if axes else assembled.masses


def check_conditions_net(net: BayesNet) -> NetReport:
    """Global AC w.r.t. the product of marginals, and per-node section AC.

    Per-node checks run only over parent combinations with positive
    probability: a conditional is determined almost everywhere, so rows on
    null parent sets are a free choice and cannot break the factorization.
    """
    assembled = assemble_joint(net)
    ok2, w2 = _global_c2(assembled)
    witnesses = {}
    if not ok2:
        witnesses["global_c2"] = w2
    per_node = {}
    for k, node in enumerate(net.nodes):
        marg = assembled.marginal(k)
        parent_mass = _parent_combo_masses(assembled, node.parents)
        flat = parent_mass.reshape(-1)
        verdict = True
        for i, row in enumerate(node.table):
            if flat[i] <= 0:
                continue
            for s, v in enumerate(row):
                if v > 0 and marg[s] <= 0:
                    verdict = False
                    witnesses[node.name] = (
                        f"conditional puts mass on state {node.states[s]} where "
                        f"the marginal of {node.name} vanishes")
                    break
            if not verdict:
                break
        per_node[node.name] = verdict
    return NetReport(ok2, per_node, witnesses)


def chain_factorization(assembled: AssembledJoint) -> BayesNet:
    """The canonical network: parents of node k are all nodes before it.

    Rows on zero-probability prefixes fall back to the node's marginal,
    which keeps every row a probability density.
    """
    nodes = []
    n = assembled.masses.ndim
    for k in range(n):
        states = assembled.states[k]
        lengths = np.array([_state_length(s) for s in states])
        marg = assembled.marginal(k)
        marg_density = (marg / marg.sum()) / lengths
        prefix_axes = tuple(range(k + 1))
        m_with = assembled.masses.sum(axis=tuple(range(k + 1, n))) \
            if k + 1 < n else assembled.masses
        m_prior = m_with.sum(axis=k) if k > 0 else None
        rows = []
        for combo in itertools.product(*(range(len(assembled.states[i]))
                                         for i in range(k))):
            denom = float(m_prior[combo]) if k > 0 else 1.0
            if denom <= 0:
                rows.append(tuple(marg_density))
                continue
            cond_mass = np.array([float(m_with[combo + (s,)])
                                  for s in range(len(states))])
            rows.append(tuple(cond_mass / denom / lengths))
        atoms = tuple(s[1] for s in states if s[0] == "atom" and isinstance(s[1], str))
        cells = tuple(s[1] for s in states if s[0] == "cell")
        # point-atom states keep their exact location as extra labels
        point_labels = tuple(str(s[1]) for s in states
                             if s[0] == "atom" and not isinstance(s[1], str))
        space = Space(atoms=atoms + point_labels, intervals=_cover(cells))
        node = NetNode(assembled.names[k], space, cells, tuple(range(k)),
                       tuple(rows))
        nodes.append(node)
    return BayesNet(tuple(nodes))


def _cover(cells: Sequence[Cell]) -> tuple[Cell, ...]:
    return tuple(sorted(cells))


def report_from_assembled(assembled: AssembledJoint) -> NetReport:
    """Condition report for a bare joint via its canonical factorization."""
    ok2, w2 = _global_c2(assembled)
    chain = chain_factorization(assembled)
    chained = check_conditions_net(chain)
    witnesses = dict(chained.witnesses)
    if not ok2:
        witnesses["global_c2"] = w2
    return NetReport(ok2, chained.per_node_c4, witnesses)


# ---------------------------------------------------------------------------
# Per-node pushforwards
# ---------------------------------------------------------------------------

def _axis_transfer(states: Sequence[StateKey], fmap: MeasurableMap
                   ) -> tuple[tuple[StateKey, ...], np.ndarray]:
    """New states and the mass-split matrix for one coordinate map."""
    new_states: list[StateKey] = [("atom", a) for a in fmap.to_space.atoms]
    image_breaks: set[Fraction] = set()
    plans = []
    for state in states:
        if state[0] == "atom":
            plans.append([("key", fmap.apply_key(state[1]), 1.0)])
            continue
        a, b = state[1]
        plan = []
        for (u, v) in refine_cells([(a, b)], (p for pc in fmap.pieces
                                              for p in pc.cell)):
            share = float((v - u) / (b - a))
            piece = fmap.piece_at(u)
            if isinstance(piece, ConstantPiece):
                plan.append(("key", piece.target, share))
            else:
                lo, hi = sorted((piece.apply(u), piece.apply(v)))
                plan.append(("interval", (lo, hi), share))
                image_breaks |= {lo, hi}
        plans.append(plan)
    new_cells = tuple(refine_cells(fmap.to_space.intervals, image_breaks)) \
        if image_breaks else ()
    for c in new_cells:
        new_states.append(("cell", c))
    index = {s: i for i, s in enumerate(new_states)}

    def key_state(key) -> StateKey:
        return ("atom", key)

    matrix = np.zeros((len(states), len(new_states)))
    for i, plan in enumerate(plans):
        for kind, payload, share in plan:
            if kind == "key":
                s = key_state(payload)
                if s not in index:
                    index[s] = len(new_states)
                    new_states.append(s)
                    matrix = np.pad(matrix, ((0, 0), (0, 1)))
                matrix[i][index[s]] += share
            else:
                lo, hi = payload
                for c in new_cells:
                    if lo <= c[0] and c[1] <= hi:
                        matrix[i][index[("cell", c)]] += share * \
                            float((c[1] - c[0]) / (hi - lo))
    return tuple(new_states), matrix


def pushforward_assembled(assembled: AssembledJoint,
                          maps: Sequence[MeasurableMap]) -> AssembledJoint:
    if len(maps) != assembled.masses.ndim:
        raise ValueError("one map per node required")
    masses = assembled.masses
    new_states_all = []
    for k, fmap in enumerate(maps):
        new_states, matrix = _axis_transfer(assembled.states[k], fmap)
        masses = np.moveaxis(np.tensordot(masses, matrix, axes=([k], [0])), -1, k)
        new_states_all.append(new_states)
    values = masses.copy()
    for k, states in enumerate(new_states_all):
        lengths = np.array([_state_length(s) for s in states])
        bshape = [1] * masses.ndim
        bshape[k] = len(states)
        values = values / lengths.reshape(bshape)
    return AssembledJoint(assembled.names, tuple(new_states_all), values, masses)


def pushforward_net(net: BayesNet, maps: Sequence[MeasurableMap]
                    ) -> tuple[NetReport, NetReport]:
    """Reports before and after mapping every node through its own function."""
    before = check_conditions_net(net)
    pushed = pushforward_assembled(assemble_joint(net), maps)
    after = report_from_assembled(pushed)
    return before, after
