"""Independent explicit-table implementation for atoms-only joints.

Everything here works on plain nested lists of probabilities and never
touches the package's measure machinery, so it can serve as a brute-force
oracle for the checkers, mutual information, and posteriors.
"""
import math


def table_from_atom_joint(j):
    """Extract (x_labels, y_labels, P) from an atoms-only JointMeasure."""
    xs = list(j.x_space.atoms)
    ys = list(j.y_space.atoms)
    table = [[j.point_atoms.get((x, y), 0.0) for y in ys] for x in xs]
    return xs, ys, table


def marginals(table):
    px = [sum(row) for row in table]
    py = [sum(row[k] for row in table) for k in range(len(table[0]))]
    return px, py


def conditions_hold(table):
    """All five conditions coincide on finite tables: support containment."""
    px, py = marginals(table)
    for i, row in enumerate(table):
        for k, p in enumerate(row):
            if p > 0 and px[i] * py[k] <= 0:
                return False
    return True


def mutual_information_table(table):
    px, py = marginals(table)
    total = 0.0
    for i, row in enumerate(table):
        for k, p in enumerate(row):
            if p > 0:
                total += p * math.log(p / (px[i] * py[k]))
    return max(total, 0.0)


def posterior_column(table, k):
    """p(x | y_k): the normalised k-th column, or None if p(y_k) = 0."""
    col = [row[k] for row in table]
    s = sum(col)
    if s <= 0:
        return None
    return [c / s for c in col]


def bayes_posterior_table(prior, likelihood_rows, outcome):
    """prior: p(theta_i); likelihood_rows[i][outcome]; returns (posterior, evidence)."""
    joint = [prior[i] * likelihood_rows[i][outcome] for i in range(len(prior))]
    evidence = sum(joint)
    if evidence <= 0:
        return None, 0.0
    return [w / evidence for w in joint], evidence


def expected_gain_table(prior, likelihood_rows):
    """I(Theta; Y) for a finite prior and finite outcome likelihood table."""
    n_out = len(likelihood_rows[0])
    gain = 0.0
    for o in range(n_out):
        e = sum(prior[i] * likelihood_rows[i][o] for i in range(len(prior)))
        for i, p in enumerate(prior):
            lk = likelihood_rows[i][o]
            if p > 0 and lk > 0:
                gain += p * lk * math.log(lk / e)
    return max(gain, 0.0)


def entropy_table(probs):
    return -sum(p * math.log(p) for p in probs if p > 0)
