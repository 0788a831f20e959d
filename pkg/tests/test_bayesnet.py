"""Assembly of factorized joints, per-node checks, and nodewise pushforwards."""
import itertools
import math
import random
from fractions import Fraction as F

import numpy as np
import pytest

from measurekit.measure import MeasurableMap, Space
from measurekit.bayesnet import (
    BayesNet,
    CapExceededError,
    NetNode,
    assemble_joint,
    chain_factorization,
    check_conditions_net,
    pushforward_assembled,
    pushforward_net,
    report_from_assembled,
)

import gens

BIT = Space(atoms=("0", "1"))
UNIT = Space(intervals=((F(0), F(1)),))


def coin(name):
    return NetNode(name, BIT, (), (), ((0.5, 0.5),))


def enumerate_joint(net):
    """Oracle: explicit product over all state combinations, pure Python."""
    state_lists = [list(range(len(n.states))) for n in net.nodes]
    out = {}
    for combo in itertools.product(*state_lists):
        p = 1.0
        for k, node in enumerate(net.nodes):
            row_idx = 0
            for pi in node.parents:
                row_idx = row_idx * len(net.nodes[pi].states) + combo[pi]
            v = node.table[row_idx][combo[k]]
            s = node.states[combo[k]]
            length = 1.0 if s[0] == "atom" else float(s[1][1] - s[1][0])
            p *= v * length
        out[combo] = p
    return out


class TestAssembleJoint:
    def test_two_fair_coins(self):
        net = BayesNet((coin("X1"), coin("X2")))
        a = assemble_joint(net)
        assert a.masses.tolist() == [[0.25, 0.25], [0.25, 0.25]]

    def test_noisy_copy_chain(self):
        n2 = NetNode("X2", BIT, (), (0,), ((0.9, 0.1), (0.1, 0.9)))
        a = assemble_joint(BayesNet((coin("X1"), n2)))
        np.testing.assert_allclose(a.masses, [[0.45, 0.05], [0.05, 0.45]],
                                   atol=1e-15)

    def test_matches_enumeration_exactly(self):
        for seed in range(40):
            net = gens.random_net(seed, atoms_only=True)
            a = assemble_joint(net)
            oracle = enumerate_joint(net)
            for combo, want in oracle.items():
                assert float(a.masses[combo]) == want

    def test_total_mass_one(self):
        for seed in range(30):
            net = gens.random_net(seed)
            assert assemble_joint(net).total_mass == pytest.approx(1.0, abs=1e-9)

    def test_cap_rejection(self):
        big = Space(atoms=tuple(f"a{i}" for i in range(40)))
        row = tuple(1.0 / 40 for _ in range(40))
        nodes = [NetNode("X0", big, (), (), (row,))]
        for k in range(1, 5):
            nodes.append(NetNode(f"X{k}", big, (), (),
                                 (row,)))
        with pytest.raises(CapExceededError):
            assemble_joint(BayesNet(tuple(nodes)))

    def test_too_many_nodes_rejected(self):
        with pytest.raises(CapExceededError):
            BayesNet(tuple(coin(f"X{i}") for i in range(9)))


class TestConditionChecks:
    def test_chain_all_true(self):
        n2 = NetNode("X2", BIT, (), (0,), ((0.9, 0.1), (0.1, 0.9)))
        rep = check_conditions_net(BayesNet((coin("X1"), n2)))
        assert rep.all_hold and rep.agree

    def test_three_node_mixed(self):
        mid = NetNode("U", UNIT, ((F(0), F(1, 2)), (F(1, 2), F(1))), (),
                      ((1.0, 1.0),))
        leaf = NetNode("B", BIT, (), (1,), ((0.8, 0.2), (0.3, 0.7)))
        net = BayesNet((coin("X1"), mid, leaf))
        rep = check_conditions_net(net)
        assert rep.all_hold
        # oracle: brute-force support comparison on the explicit table
        a = assemble_joint(net)
        marg = [a.marginal(k) for k in range(3)]
        for combo, mass in np.ndenumerate(a.masses):
            if mass > 0:
                assert all(marg[k][combo[k]] > 0 for k in range(3))

    def test_equivalence_global_vs_per_node(self):
        for seed in range(120):
            net = gens.random_net(seed)
            rep = check_conditions_net(net)
            assert rep.agree, (seed, rep.as_dict())

    def test_product_net_derivative_is_one(self):
        net = BayesNet((coin("X1"), coin("X2"), coin("X3")))
        a = assemble_joint(net)
        marg = [a.marginal(k) for k in range(3)]
        for combo, mass in np.ndenumerate(a.masses):
            prod = math.prod(marg[k][combo[k]] for k in range(3))
            assert mass / prod == pytest.approx(1.0, abs=1e-12)


class TestChainFactorization:
    def test_roundtrip(self):
        for seed in range(30):
            net = gens.random_net(seed)
            a = assemble_joint(net)
            rebuilt = assemble_joint(chain_factorization(a))
            assert float(np.abs(a.masses - rebuilt.masses).max()) <= 1e-9

    def test_marginal_consistency(self):
        # marginals of the assembled joint match forward-propagated ones
        for seed in range(30):
            net = gens.random_net(seed, atoms_only=True)
            a = assemble_joint(net)
            oracle = enumerate_joint(net)
            for k in range(len(net.nodes)):
                marg = a.marginal(k)
                for s in range(len(net.nodes[k].states)):
                    want = sum(p for combo, p in oracle.items() if combo[k] == s)
                    assert float(marg[s]) == pytest.approx(want, abs=1e-9)


class TestPushforwardNet:
    def test_relabelling_preserved(self):
        n2 = NetNode("X2", BIT, (), (0,), ((0.9, 0.1), (0.1, 0.9)))
        net = BayesNet((coin("X1"), n2))
        flip = MeasurableMap(BIT, BIT, {"0": "1", "1": "0"}, ())
        before, after = pushforward_net(net, [flip, flip])
        assert before.all_hold and after.all_hold

    def test_quantizer_on_continuous_node(self):
        mid = NetNode("U", UNIT, ((F(0), F(1, 2)), (F(1, 2), F(1))), (),
                      ((0.6, 1.4),))
        leaf = NetNode("B", BIT, (), (0,), ((0.8, 0.2), (0.3, 0.7)))
        net = BayesNet((mid, leaf))
        q = MeasurableMap.quantizer(UNIT, [F(1, 2)], ["lo", "hi"])
        ident = MeasurableMap(BIT, BIT, {"0": "0", "1": "1"}, ())
        before, after = pushforward_net(net, [q, ident])
        assert before.all_hold and after.all_hold
        pushed = pushforward_assembled(assemble_joint(net), [q, ident])
        # oracle: P(lo) = 0.6/2, P(hi) = 1.4/2; leaf rows unchanged
        np.testing.assert_allclose(
            pushed.masses, [[0.3 * 0.8, 0.3 * 0.2], [0.7 * 0.3, 0.7 * 0.7]],
            atol=1e-12)

    def test_identity_maps_identical_reports(self):
        for seed in range(15):
            net = gens.random_net(seed)
            maps = []
            for node in net.nodes:
                maps.append(MeasurableMap.identity(node.space))
            before, after = pushforward_net(net, maps)
            assert before.all_hold == after.all_hold

    def test_forward_preservation(self):
        rng = random.Random(4)
        for seed in range(40):
            net = gens.random_net(seed)
            maps = []
            for node in net.nodes:
                if node.space.atoms and not node.space.intervals:
                    labels = list(node.space.atoms)
                    targets = {a: rng.choice(labels[:2]) for a in labels}
                    to = Space(atoms=tuple(dict.fromkeys(targets.values())))
                    maps.append(MeasurableMap(node.space, to, targets, ()))
                else:
                    maps.append(MeasurableMap.quantizer(
                        node.space, [F(1, 2)], ["lo", "hi"],
                        {a: "lo" for a in node.space.atoms}))
            before, after = pushforward_net(net, maps)
            if before.all_hold:
                assert after.all_hold, seed
