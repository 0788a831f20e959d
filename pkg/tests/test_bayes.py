"""Evidence, posteriors, and the equivalence of the gate's two routes."""
import math
from fractions import Fraction as F

import pytest

from measurekit.measure import (
    HybridMeasure,
    MeasurableSet,
    Space,
    StepDensity,
    StepFunction,
    mass,
)
from measurekit.joint import (
    KernelSection,
    TrackingAtom,
    TransitionKernel,
    marginal_y,
)
from measurekit.conditioning import disintegrate
from measurekit.bayes import (
    LikelihoodModel,
    bayes_posterior,
    evidence,
    finite_model,
    kernel_from_outcome_functions,
    model_joint,
    validity_gate,
)

import gens
import oracle_tables

UNIT = Space(intervals=((F(0), F(1)),))


def ab_model():
    return finite_model({"t1": 0.5, "t2": 0.5},
                        {"t1": {"1": 0.8, "0": 0.2}, "t2": {"1": 0.4, "0": 0.6}})


class TestEvidence:
    def test_two_term_sum(self):
        # oracle: 0.5*0.8 + 0.5*0.4
        _, e = oracle_tables.bayes_posterior_table([0.5, 0.5],
                                                   [[0.2, 0.8], [0.6, 0.4]], 1)
        assert e == pytest.approx(0.6)
        assert evidence(ab_model(), "1") == pytest.approx(e, abs=1e-12)

    def test_likelihood_independent_of_x(self):
        m = finite_model({"t1": 0.3, "t2": 0.7},
                         {"t1": {"1": 0.25, "0": 0.75}, "t2": {"1": 0.25, "0": 0.75}})
        assert evidence(m, "1") == pytest.approx(0.25, abs=1e-12)

    def test_degenerate_prior(self):
        m = finite_model({"t1": 1.0, "t2": 0.0},
                         {"t1": {"1": 0.8, "0": 0.2}, "t2": {"1": 0.4, "0": 0.6}})
        assert evidence(m, "1") == pytest.approx(0.8, abs=1e-12)

    def test_outcome_outside_space(self):
        from measurekit.measure import SpaceMismatchError
        with pytest.raises(SpaceMismatchError):
            evidence(ab_model(), "zz")


class TestBayesPosterior:
    def test_two_thirds_one_third(self):
        r = bayes_posterior(ab_model(), "1")
        post, _ = oracle_tables.bayes_posterior_table([0.5, 0.5],
                                                      [[0.2, 0.8], [0.6, 0.4]], 1)
        assert r.valid
        assert r.posterior.atom_weights == pytest.approx(
            {"t1": post[0], "t2": post[1]}, abs=1e-12)
        assert r.posterior.atom_weights["t1"] == pytest.approx(2 / 3)

    def test_uninformative_keeps_prior(self):
        m = finite_model({"t1": 0.3, "t2": 0.7},
                         {"t1": {"1": 0.5, "0": 0.5}, "t2": {"1": 0.5, "0": 0.5}})
        r = bayes_posterior(m, "0")
        assert r.posterior.atom_weights == pytest.approx({"t1": 0.3, "t2": 0.7},
                                                         abs=1e-12)

    def test_two_cell_density_posterior(self):
        cells = ((F(0), F(1, 2)), (F(1, 2), F(1)))
        f1 = StepFunction(UNIT, {}, cells, (0.2, 0.6))
        f0 = StepFunction(UNIT, {}, cells, (0.8, 0.4))
        k = kernel_from_outcome_functions(UNIT, Space(atoms=("0", "1")),
                                          {"1": f1, "0": f0})
        m = LikelihoodModel(HybridMeasure.uniform(UNIT), k)
        assert evidence(m, "1") == pytest.approx(0.4, abs=1e-12)
        r = bayes_posterior(m, "1")
        assert r.posterior.density.values == pytest.approx((0.5, 1.5), abs=1e-12)

    def test_zero_evidence_flagged_not_raised(self):
        m = finite_model({"t1": 1.0, "t2": 0.0},
                         {"t1": {"1": 0.0, "0": 1.0}, "t2": {"1": 1.0, "0": 0.0}})
        r = bayes_posterior(m, "1")
        assert not r.valid
        assert r.evidence == 0.0
        assert "impossible" in r.note
        assert r.posterior.atom_weights == m.prior.atom_weights

    def test_posterior_normalized(self):
        for seed in range(40):
            m = gens.random_model(seed)
            for y in m.y_space.atoms or (F(1, 3),):
                r = bayes_posterior(m, y)
                if r.valid:
                    assert r.posterior.total_mass == pytest.approx(1.0, abs=1e-12)


class TestValidityGate:
    def test_density_table_model_is_valid(self):
        g = validity_gate(ab_model())
        assert g.formula_valid and g.report.all_hold and g.consistent

    def test_copying_kernel_is_invalid(self):
        k = TransitionKernel(UNIT, UNIT, UNIT.intervals,
                             (KernelSection(tracking=(TrackingAtom(F(1), F(0), 1.0),)),),
                             normalized=True)
        m = LikelihoodModel(HybridMeasure.uniform(UNIT), k)
        g = validity_gate(m)
        assert not g.formula_valid
        assert g.report.flags == (False,) * 5
        assert g.consistent

    def test_finite_models_necessarily_valid(self):
        for seed in range(25):
            g = validity_gate(gens.random_model(seed, "finite"))
            assert g.formula_valid and g.report.all_hold

    def test_gate_consistent_across_random_models(self):
        for seed in range(60):
            g = validity_gate(gens.random_model(seed))
            assert g.consistent, (seed, g.detail, g.report.as_dict())

    def test_partial_singularity_detected(self):
        g = validity_gate(gens.random_model(3, "singular"))
        assert not g.formula_valid and not g.report.all_hold and g.consistent


class TestBayesDisintegrationConsistency:
    def test_posterior_matches_section(self):
        checked = 0
        for seed in range(40):
            m = gens.random_model(seed)
            g = validity_gate(m)
            if not g.formula_valid:
                continue
            j = model_joint(m)
            d = disintegrate(j)
            my = marginal_y(j)
            ys = list(m.y_space.atoms)
            ys += [(a + b) / 2 for a, b in my.density.cells
                   if my.density.value_at((a + b) / 2) > 0]
            for y in ys:
                r = bayes_posterior(m, y)
                if not r.valid:
                    continue
                sec = d.kernel.section_at(y).as_measure(j.x_space)
                from measurekit.measure import max_deviation
                assert max_deviation(r.posterior, sec) <= 1e-9
            checked += 1
        assert checked >= 20

    def test_evidence_is_marginal_density(self):
        for seed in range(30):
            m = gens.random_model(seed)
            g = validity_gate(m)
            if not g.formula_valid:
                continue
            my = marginal_y(model_joint(m))
            for b in m.y_space.atoms:
                assert evidence(m, b) == pytest.approx(
                    my.atom_weights.get(b, 0.0), abs=1e-9)
            for (a, b), v in zip(my.density.cells, my.density.values):
                assert evidence(m, (a + b) / 2) == pytest.approx(v, abs=1e-9)
