"""Acceptance criteria, one test per criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""
import itertools
import json
import math
import pathlib
import sys
import time
from fractions import Fraction as F

import pytest

from measurekit.measure import (
    HybridMeasure,
    MeasurableMap,
    Space,
    StepFunction,
    max_deviation,
)
from measurekit.joint import (
    JointMeasure,
    KernelSection,
    TrackingAtom,
    TransitionKernel,
    kernel_times_measure,
    marginal_y,
    pushforward_joint,
)
from measurekit.conditioning import disintegrate
from measurekit.regularity import (
    check_conditions,
    mutual_information,
    random_joint,
    run_equivalence_suite,
)
from measurekit.bayes import bayes_posterior, evidence, model_joint, validity_gate
from measurekit.bayesnet import assemble_joint, check_conditions_net
from measurekit.sequential import (
    ExperimentConfig,
    ExperimentState,
    Placement,
    binary_digits_demo,
    choose_placement,
    expected_gain,
    history_joint,
    run_simulation,
    update,
)

import gens
import oracle_tables
import test_sequential as seq_tests
from test_sequential import ab_config, binary_placement

DATA = pathlib.Path(__file__).parent / "data"


def verdict(ok: bool, name: str, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" ({detail})"
    print(line, file=sys.stderr)


def test_equivalence_suite_1000_draws():
    """All five condition checkers agree on 1000 random joints, quickly."""
    t0 = time.time()
    result = run_equivalence_suite(1000, seed=7)
    elapsed = time.time() - t0
    ok = result.ok and result.agreed == 1000 and elapsed < 60.0
    verdict(ok, "equivalence suite",
            f"{result.agreed}/1000 agree in {elapsed:.1f}s")
    assert result.agreed == 1000
    assert not result.certificates
    assert elapsed < 60.0


def test_equal_coordinates_reproduction():
    """The X = Y joint: all five conditions fail, information is infinite."""
    unit = Space(intervals=((F(0), F(1)),))
    kernel = TransitionKernel(
        unit, unit, unit.intervals,
        (KernelSection(tracking=(TrackingAtom(F(1), F(0), 1.0),)),),
        normalized=True)
    j = kernel_times_measure(kernel, HybridMeasure.uniform(unit))
    report = check_conditions(j)
    mi = mutual_information(j)
    ok = (report.flags == (False,) * 5 and report.agree and not mi.is_finite
          and "curve" in report.witnesses["c2_ac_product"])
    verdict(ok, "equal-coordinates reproduction",
            "all conditions fail on the graph witness; information infinite")
    assert report.flags == (False,) * 5
    assert report.agree
    assert not mi.is_finite
    assert "curve" in report.witnesses["c2_ac_product"]


def test_binary_digits_trajectory():
    """One full bit per observed digit, support halving exactly, for t <= 16."""
    records = binary_digits_demo(16)
    worst = max(abs(r.mi_nats - r.t * math.log(2)) for r in records)
    supports_exact = all(r.support_length == F(1, 2 ** r.t) for r in records)
    mis = [r.mi_nats for r in records]
    monotone = all(b > a for a, b in zip(mis, mis[1:]))
    ok = worst <= 1e-9 and supports_exact and monotone
    verdict(ok, "binary digits demo",
            f"max |I - t*log2| = {worst:.2e}; support exact; monotone growth")
    assert worst <= 1e-9
    assert supports_exact
    assert monotone


def test_bayes_gate_consistency_500_models():
    """Formula route equals the condition checkers; posteriors match sections."""
    n_models = 500
    checked_valid = 0
    for seed in range(n_models):
        m = gens.random_model(seed)
        gate = validity_gate(m)
        assert gate.consistent, (seed, gate.detail, gate.report.as_dict())
        if not gate.formula_valid:
            continue
        checked_valid += 1
        if checked_valid % 5 != 0:
            continue   # the deep per-section comparison on a rotating sample
        j = model_joint(m)
        d = disintegrate(j)
        my = marginal_y(j)
        ys = list(m.y_space.atoms)
        ys += [(a + b) / 2 for (a, b), v in zip(my.density.cells,
                                                my.density.values) if v > 0]
        for y in ys:
            r = bayes_posterior(m, y)
            if not r.valid:
                continue
            sec = d.kernel.section_at(y).as_measure(j.x_space)
            assert max_deviation(r.posterior, sec) <= 1e-9, (seed, y)
        for b in m.y_space.atoms:
            assert abs(evidence(m, b) - my.atom_weights.get(b, 0.0)) <= 1e-9
        for (a, b), v in zip(my.density.cells, my.density.values):
            assert abs(evidence(m, (a + b) / 2) - v) <= 1e-9
    verdict(True, "Bayes validity gate",
            f"{n_models} models consistent; {checked_valid} valid")


def test_brute_force_oracle_200_seeds():
    """Checkers, information, and posteriors match explicit tables exactly."""
    worst = 0.0
    for seed in range(200):
        j = random_joint(seed, "atoms")
        xs, ys, table = oracle_tables.table_from_atom_joint(j)
        assert len(xs) <= 6 and len(ys) <= 6
        want = oracle_tables.conditions_hold(table)
        rep = check_conditions(j)
        assert all(flag == want for flag in rep.flags), seed
        mi = mutual_information(j).value
        mi_want = oracle_tables.mutual_information_table(table)
        worst = max(worst, abs(mi - mi_want))
        d = disintegrate(j)
        for k, y in enumerate(ys):
            col = oracle_tables.posterior_column(table, k)
            if col is None:
                continue
            sec = d.kernel.atom_sections[y]
            for i, x in enumerate(xs):
                worst = max(worst,
                            abs(sec.label_atoms.get(x, 0.0) - col[i]))
        assert worst <= 1e-12, seed
    verdict(True, "explicit-table oracle", f"200 seeds, worst gap {worst:.1e}")


def test_net_suite_200_nets():
    """Global product-AC equals the per-node conjunction; assembly is exact."""
    for seed in range(200):
        net = gens.random_net(seed)
        rep = check_conditions_net(net)
        assert rep.agree, (seed, rep.as_dict())
    from test_bayesnet import enumerate_joint
    for seed in range(60):
        net = gens.random_net(seed, atoms_only=True)
        a = assemble_joint(net)
        for combo, want in enumerate_joint(net).items():
            assert float(a.masses[combo]) == want, seed
    verdict(True, "factorized-joint suite",
            "200 nets agree; atoms-only assembly exact")


def test_sequential_engine():
    """Greedy argmax, chain additivity, condition preservation, reproducibility."""
    import random as _random

    # greedy matches exhaustive argmax on random finite configs
    theta = Space(atoms=("t1", "t2"))
    rng = _random.Random(23)
    for _ in range(40):
        placements = tuple(binary_placement(f"P{i}", rng.random(), rng.random())
                           for i in range(rng.randint(2, 5)))
        w1 = rng.uniform(0.05, 0.95)
        cfg = ExperimentConfig(
            HybridMeasure.from_atoms(theta, {"t1": w1, "t2": 1 - w1}),
            placements, t_max=5)
        st = ExperimentState.initial(cfg)
        gains = [expected_gain(st, p) for p in placements]
        best = max(range(len(gains)), key=lambda i: (gains[i], -i))
        assert choose_placement(cfg, st).placement == placements[best].label

    # chain additivity against the full-history joint, T = 6
    cfg = ab_config()
    sequence = ("A", "B", "A", "B", "A", "A")
    want = seq_tests.TestChainAdditivity().enumerate_paths(cfg, sequence)
    got = mutual_information(history_joint(cfg, sequence)).value
    assert abs(got - want) <= 1e-9

    # every intermediate joint passes the condition checkers
    for t in range(1, len(sequence) + 1):
        assert check_conditions(history_joint(cfg, sequence[:t])).all_hold

    # bit-reproducible simulation
    s1, _ = run_simulation(cfg, "t1", seed=5)
    s2, _ = run_simulation(cfg, "t1", seed=5)
    assert s1.history == s2.history

    # outcome-script golden replay
    script = json.loads((DATA / "ab_outcome_script.json").read_text())
    prior = HybridMeasure.from_atoms(
        theta, {t: float(w) for t, w in script["prior"].items()})
    placements = tuple(
        Placement(label, tuple(sorted(rows)),
                  {o: StepFunction(theta, {t: float(v) for t, v in row.items()})
                   for o, row in rows.items()})
        for label, rows in script["placements"].items())
    scfg = ExperimentConfig(prior, placements, t_max=10)
    st = ExperimentState.initial(scfg)
    for trial in script["trials"]:
        st = update(scfg, st, trial["placement"], trial["outcome"])
        for t, w in trial["expected_posterior"].items():
            assert abs(st.posterior.atom_weights[t] - float(w)) <= 1e-9
    verdict(True, "sequential engine",
            f"greedy exact; chain additivity gap "
            f"{abs(got - want):.1e}; goldens replayed")


def test_data_processing_300_draws():
    """Coordinate quantization never creates information; good joints stay good."""
    import random as _random
    rng = _random.Random(41)
    checked = 0
    seed = 0
    while checked < 300:
        j = random_joint(seed, ("mixed", "grid", "atoms")[seed % 3])
        seed += 1
        if j.x_space.intervals:
            cuts_x = sorted({F(rng.randrange(1, 8), 8) for _ in range(2)})
            fx = MeasurableMap.quantizer(
                j.x_space, cuts_x, [f"x{i}" for i in range(len(cuts_x) + 1)],
                {a: "x0" for a in j.x_space.atoms})
        else:
            labels = list(j.x_space.atoms)
            fx = MeasurableMap(j.x_space, Space(atoms=("u", "v")),
                               {a: ("u" if i % 2 else "v")
                                for i, a in enumerate(labels)}, ())
        if j.y_space.intervals:
            cuts_y = sorted({F(rng.randrange(1, 8), 8) for _ in range(2)})
            fy = MeasurableMap.quantizer(
                j.y_space, cuts_y, [f"y{i}" for i in range(len(cuts_y) + 1)],
                {a: "y0" for a in j.y_space.atoms})
        else:
            labels = list(j.y_space.atoms)
            fy = MeasurableMap(j.y_space, Space(atoms=("s", "t")),
                               {a: ("s" if i % 2 else "t")
                                for i, a in enumerate(labels)}, ())
        pushed = pushforward_joint(j, fx, fy)
        pushed = JointMeasure(pushed.x_space, pushed.y_space, pushed.point_atoms,
                              pushed.x_cells, pushed.y_cells, pushed.grid,
                              pushed.curves, normalized=True)
        mi = mutual_information(j)
        mi_pushed = mutual_information(pushed)
        if mi.is_finite:
            assert mi_pushed.value <= mi.value + 1e-9, seed
        before = check_conditions(j)
        if before.all_hold:
            after = check_conditions(pushed)
            assert after.all_hold, seed
        checked += 1
    verdict(True, "data processing and forward preservation", "300 draws")
