"""Command-line front end: checkers, demos, simulation, and the service.

Structured output (JSON, CSV) goes to stdout; human-readable tables go to
stderr so pipelines stay clean.  Exit codes: 0 success, 1 validation error,
2 an equivalence certificate was emitted, 3 internal error.
"""
from __future__ import annotations

import csv
import io
import json
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import click

from . import modelspec
from .bayes import LikelihoodModel, bayes_posterior, model_joint, validity_gate
from .bayesnet import BayesNet, check_conditions_net
from .joint import JointMeasure, KernelSection, TrackingAtom, TransitionKernel, \
    kernel_times_measure
from .measure import DomainError, HybridMeasure, Space, SpaceMismatchError
from .modelspec import ModelValidationError
from .regularity import (
    CONDITION_NAMES,
    check_conditions,
    mutual_information,
    run_equivalence_suite,
)
from .sequential import ExperimentConfig, binary_digits_demo, run_simulation

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CERTIFICATE = 2
EXIT_INTERNAL = 3


def _fail(code: str, message: str, exit_code: int):
    print(json.dumps({"error": {"code": code, "message": message}}),
          file=sys.stderr)
    sys.exit(exit_code)


def _load(path: str):
    try:
        return modelspec.load(path)
    except FileNotFoundError:
        _fail("file_not_found", f"no such model file: {path}", EXIT_VALIDATION)
    except json.JSONDecodeError as e:
        _fail("invalid_json", str(e), EXIT_VALIDATION)
    except ModelValidationError as e:
        _fail("validation_error", str(e), EXIT_VALIDATION)


def _as_joint(obj) -> JointMeasure:
    if isinstance(obj, JointMeasure):
        return obj
    if isinstance(obj, LikelihoodModel):
        return model_joint(obj)
    _fail("wrong_kind", "this verb needs a joint or likelihood model",
          EXIT_VALIDATION)


def _report_table(report) -> str:
    lines = ["condition                       verdict"]
    for name, flag in zip(CONDITION_NAMES, report.flags):
        lines.append(f"{name:<30}  {'holds' if flag else 'FAILS'}")
    lines.append(f"{'agree':<30}  {report.agree}")
    for name, w in report.witnesses.items():
        lines.append(f"  witness [{name}]: {w}")
    return "\n".join(lines)


def _parse_observation(space: Space, text: str):
    if text in space.atoms:
        return text
    try:
        point = Fraction(text)
    except (ValueError, ZeroDivisionError):
        _fail("invalid_observation",
              f"{text!r} is neither an outcome label nor a fraction",
              EXIT_VALIDATION)
    return point


@click.group()
def main():
    """Exact conditioning, Bayes-validity checking, and sequential estimation."""


@main.command()
@click.argument("model", type=click.Path())
def check(model):
    """Run the five regularity checkers on a joint (or likelihood) model."""
    j = _as_joint(_load(model))
    report = check_conditions(j)
    print(_report_table(report), file=sys.stderr)
    print(json.dumps(report.as_dict(), indent=2))
    if not report.agree:
        _fail("equivalence_violation", "checkers disagree; see report",
              EXIT_CERTIFICATE)


@main.command()
@click.argument("model", type=click.Path())
def mi(model):
    """Mutual information of the model's joint, in nats."""
    j = _as_joint(_load(model))
    value = mutual_information(j)
    if value.is_finite:
        print(json.dumps({"mutual_information_nats": value.value}))
        print(f"I(X;Y) = {value.value:.9f} nats", file=sys.stderr)
    else:
        print(json.dumps({"mutual_information_nats": "infinite"}))
        print("I(X;Y) = infinite (joint singular w.r.t. product of marginals)",
              file=sys.stderr)


@main.command()
@click.argument("model", type=click.Path())
@click.option("--observe", required=True, help="outcome label or fraction")
@click.option("--out", type=click.Path(), default=None,
              help="write the posterior JSON here instead of stdout")
def bayes(model, observe, out):
    """Posterior for one observation under a likelihood model."""
    m = _load(model)
    if not isinstance(m, LikelihoodModel):
        _fail("wrong_kind", "bayes needs a likelihood model", EXIT_VALIDATION)
    y = _parse_observation(m.y_space, observe)
    try:
        result = bayes_posterior(m, y)
    except SpaceMismatchError as e:
        _fail("invalid_observation", str(e), EXIT_VALIDATION)
    payload = {
        "evidence": result.evidence,
        "valid": result.valid,
        "note": result.note,
        "posterior": modelspec.dump_measure(result.posterior),
    }
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text)
        print(f"posterior written to {out}", file=sys.stderr)
    else:
        print(text)
    print(f"evidence p(y) = {result.evidence:.9g}; "
          f"{'valid' if result.valid else 'INVALID: ' + result.note}",
          file=sys.stderr)


@main.command("net-check")
@click.argument("model", type=click.Path())
def net_check(model):
    """Per-node and global condition checks for a Bayes-network model."""
    net = _load(model)
    if not isinstance(net, BayesNet):
        _fail("wrong_kind", "net-check needs a net model", EXIT_VALIDATION)
    report = check_conditions_net(net)
    print(json.dumps(report.as_dict(), indent=2))
    verdict = "holds" if report.all_hold else "FAILS"
    print(f"global product-AC {verdict}; per-node agree = {report.agree}",
          file=sys.stderr)
    if not report.agree:
        _fail("equivalence_violation", "global and per-node verdicts disagree",
              EXIT_CERTIFICATE)


@main.command()
@click.argument("model", type=click.Path())
@click.option("--theta", required=True, help="true parameter (label or fraction)")
@click.option("--seed", type=int, default=0)
@click.option("--trials", type=int, default=None, help="override t_max")
def simulate(model, theta, seed, trials):
    """Drive the configured policy against sampled outcomes; CSV to stdout."""
    cfg = _load(model)
    if not isinstance(cfg, ExperimentConfig):
        _fail("wrong_kind", "simulate needs an experiment model", EXIT_VALIDATION)
    if trials is not None:
        from dataclasses import replace
        cfg = replace(cfg, t_max=trials)
    true_theta = _parse_observation(cfg.theta_prior.space, theta)
    try:
        state, summary = run_simulation(cfg, true_theta, seed)
    except ValueError as e:
        _fail("validation_error", str(e), EXIT_VALIDATION)
    writer = csv.writer(sys.stdout)
    writer.writerow(["trial", "placement", "outcome", "expected_gain_nats",
                     "posterior_entropy_nats"])
    for r in state.history:
        writer.writerow([r.trial, r.placement, r.outcome,
                         f"{r.expected_gain:.12g}", f"{r.posterior_entropy:.12g}"])
    print(f"{summary.trials} trials; cumulative expected gain "
          f"{summary.cumulative_expected_gain:.6f} nats; stopped: {summary.reason}",
          file=sys.stderr)


@main.group()
def demo():
    """Built-in demonstrations."""


@demo.command("example1")
def demo_example1():
    """The equal-coordinates joint: every condition fails, information infinite."""
    unit = Space(intervals=((Fraction(0), Fraction(1)),))
    kernel = TransitionKernel(
        unit, unit, unit.intervals,
        (KernelSection(tracking=(TrackingAtom(Fraction(1), Fraction(0), 1.0),)),),
        normalized=True)
    j = kernel_times_measure(kernel, HybridMeasure.uniform(unit))
    report = check_conditions(j)
    value = mutual_information(j)
    payload = report.as_dict()
    payload["mutual_information_nats"] = \
        value.value if value.is_finite else "infinite"
    print(json.dumps(payload, indent=2))
    print(_report_table(report), file=sys.stderr)
    print("mutual information: infinite" if not value.is_finite
          else f"mutual information: {value.value}", file=sys.stderr)
    if report.agree and not report.all_hold and not value.is_finite:
        print("result matches: all five conditions fail on the diagonal "
              "and the information diverges", file=sys.stderr)
    else:
        _fail("demo_mismatch", "the diagonal demo did not produce the "
              "expected all-false report", EXIT_INTERNAL)


@demo.command("binary-digits")
@click.option("--t", "t_max", type=int, default=16)
def demo_binary_digits(t_max):
    """Observe binary digits one at a time: one full bit per step, forever."""
    try:
        records = binary_digits_demo(t_max)
    except ValueError as e:
        _fail("validation_error", str(e), EXIT_VALIDATION)
    rows = [{"t": r.t, "mi_nats": r.mi_nats, "mi_bits": r.mi_nats / math.log(2),
             "support_length": str(r.support_length)} for r in records]
    print(json.dumps({"trajectory": rows}, indent=2))
    grows = all(b["mi_nats"] > a["mi_nats"] for a, b in zip(rows, rows[1:]))
    print(f"t = 0..{t_max}: information grows by one bit per digit "
          f"({'monotone, unbounded' if grows else 'NOT monotone'}); "
          f"final support length {rows[-1]['support_length']}", file=sys.stderr)


@main.command()
@click.option("--draws", type=int, default=1000)
@click.option("--seed", type=int, default=0)
@click.option("--profiles", default="atoms,grid,mixed",
              help="comma-separated generator profiles")
@click.option("--workers", type=int, default=1,
              help="fan the draws out over processes (same result)")
@click.option("--certificate-dir", type=click.Path(), default=".")
def verify(draws, seed, profiles, workers, certificate_dir):
    """Draw random joints and demand the five checkers agree on every one."""
    profile_list = tuple(p.strip() for p in profiles.split(",") if p.strip())
    t0 = time.time()
    result = run_equivalence_suite(draws, seed=seed, profiles=profile_list,
                                   workers=workers)
    elapsed = time.time() - t0
    print(f"{result.agreed}/{result.draws} agree ({elapsed:.1f}s)")
    if result.ok:
        sys.exit(EXIT_OK)
    cert_dir = Path(certificate_dir)
    cert_dir.mkdir(parents=True, exist_ok=True)
    path = cert_dir / f"certificate-{seed}-{int(time.time())}.json"
    path.write_text(json.dumps(list(result.certificates), indent=2))
    _fail("equivalence_violation",
          f"{len(result.certificates)} disagreement(s); certificate at {path}",
          EXIT_CERTIFICATE)


@main.command()
@click.option("--port", type=int, default=8763)
@click.option("--host", default="127.0.0.1", help="loopback by default")
@click.option("--state-dir", type=click.Path(), default="./sessions")
def serve(port, host, state_dir):
    """Serve the sequential engine to the experiment console."""
    import uvicorn

    from .service import create_app

    app = create_app(Path(state_dir))
    uvicorn.run(app, host=host, port=port, log_level="warning")


def entry():
    try:
        main(standalone_mode=False)
    except click.ClickException as e:
        _fail("usage_error", e.format_message(), EXIT_VALIDATION)
    except click.Abort:
        sys.exit(EXIT_VALIDATION)
    except SystemExit:
        raise
    except Exception as e:   # noqa: BLE001 - the contract is exit code 3
        _fail("internal_error", f"{type(e).__name__}: {e}", EXIT_INTERNAL)


if __name__ == "__main__":
    entry()
