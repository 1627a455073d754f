"""``mdplab`` command line.

Exit codes: 0 success, 1 I/O or parse error, 2 validation or precondition
failure, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import hardness, lowerbound, simulator, tolerances
from .confusing import build_confusing
from .core import diameter, solve_optimal, validate
from .errors import ConvergenceError, InputError, ModelError, PreconditionError
from .model import Mdp, Policy, load_named_policies, model_from_json, read_json
from .structure import contract

SIGNIFICANT = 12

LB_METHODS = ("general", "bandit", "recurrent", "switching", "no-navigation")
LB_CLASSES = {"fixed-kernel": "fixed_kernel_rewards", "constructive": "constructive"}
CHECKS = ("quasiflow", "pseudoregret", "navigation", "loglik")


class Failure(Exception):
    def __init__(self, message: str, code: int, payload: dict | None = None):
        super().__init__(message)
        self.code = code
        self.payload = payload


# ---------------------------------------------------------------------------
# output

def rounded(obj):
    """Copy of a JSON-like object with floats cut to 12 significant digits.

    Infinite values become the strings "inf" / "-inf" and NaN becomes null,
    so the output stays strict JSON.
    """
    if isinstance(obj, dict):
        return {str(k): rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return rounded(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(f"{v:.{SIGNIFICANT}g}")
    return obj


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump(obj, pretty: bool) -> str:
    return json.dumps(rounded(obj), indent=2 if pretty else None, allow_nan=False) + "\n"


def emit(args, payload: dict) -> None:
    text = dump(payload, args.pretty)
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# inputs

def load(path) -> tuple[Mdp, dict]:
    data = read_json(path)
    if not isinstance(data, dict):
        raise InputError(f"{path}: a model file holds a JSON object")
    model = model_from_json(data)
    report = validate(model)
    if not report.valid:
        raise ModelError(report.summary())
    return model, data


def policy_arg(model: Mdp, data: dict, text: str) -> Policy:
    """A policy named in the model file, ``uniform``, or a path to a policy JSON file."""
    named = load_named_policies(model, data)
    if text in named:
        return named[text]
    if text == "uniform":
        return Policy.uniform(model)
    if os.path.exists(text):
        return Policy.from_json(model, read_json(text))
    raise InputError(f"unknown policy {text!r} (known: {', '.join(sorted(named)) or 'none'})")


def measure_arg(model: Mdp, path) -> np.ndarray:
    """Per-action measure from a JSON object, or from the ``mu`` field of an lb report."""
    data = read_json(path)
    if isinstance(data, dict) and isinstance(data.get("mu"), dict):
        data = data["mu"]
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected an action -> value object")
    mu = np.zeros(model.n_pairs)
    for a, v in data.items():
        mu[model.pair(a)] = math.inf if v in ("inf", "Infinity") else float(v)
    return mu


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def pair_list(model: Mdp, text: str | None) -> list[int] | None:
    if text is None:
        return None
    return [model.pair(a.strip()) for a in text.split(",") if a.strip()]


# ---------------------------------------------------------------------------
# subcommands

def cmd_solve(args) -> dict:
    model, _ = load(args.model)
    sol = solve_optimal(model)
    return {
        "gain": sol.gain_star,
        "bias": dict(zip(model.states, sol.bias_star)),
        "gaps": dict(zip(model.actions, sol.gaps)),
        "classification": sol.classification(model),
        "optimal_policy": sol.optimal_policy.to_json(model),
        "span_bias": sol.span_bias,
        "diameter": diameter(model),
    }


def cmd_lb(args) -> dict:
    model, _ = load(args.model)
    if args.method == "general":
        report = lowerbound.lower_bound_general(model, LB_CLASSES[args.model_class],
                                                neighborhood_k=args.neighborhood,
                                                navigation=args.navigation)
    elif args.method == "bandit":
        report = lowerbound.bandit_closed_form(model)
    elif args.method == "recurrent":
        report = lowerbound.recurrent_closed_form(model)
    elif args.method == "switching":
        report = lowerbound.switching_bandit_bound(model)
    else:
        report = lowerbound.no_navigation_bound(model)
    payload = report.to_json()
    if args.emit_mu:
        write_atomic(args.emit_mu, dump(report.mu_by_action(), args.pretty))
    if args.figure:
        from .plotting import mu_figure
        mu_figure(report, args.figure)
    if not report.converged:
        raise Failure("cutting planes stopped before convergence", 3, payload)
    return payload


def cmd_confuse(args) -> dict:
    model, data = load(args.model)
    policy = policy_arg(model, data, args.policy)
    kappa = measure_arg(model, args.kappa) if args.kappa else np.ones(model.n_pairs)
    cert = build_confusing(model, policy, kappa, kernel_fixed=args.kernel_fixed)
    if not cert:
        return {"certificate": None, "reason": cert.reason}
    if args.emit_model:
        write_atomic(args.emit_model, dump(cert.model.to_json(), args.pretty))
    return {"certificate": cert.to_json(), "reason": None}


def cmd_contract(args) -> dict:
    model, _ = load(args.model)
    pairs = pair_list(model, args.pairs)
    if pairs is None:
        pairs = solve_optimal(model).optimal_pairs
    minor = contract(model, pairs)
    return {
        "contracted": [model.actions[x] for x in minor.contracted_set],
        "state_map": {s: minor.minor.states[k] for s, k in zip(model.states, minor.state_map)},
        "minor": minor.minor.to_json(),
    }


def cmd_knapsack(args) -> dict:
    kp = hardness.KnapsackInstance(tuple(args.values), tuple(args.weights), args.W, args.V)
    variant = args.variant.replace("-", "_")
    family = hardness.build_widget_family(kp, variant)
    if variant == "confusing_model":
        decision = hardness.decide_confusing_model(family)
        oracle = hardness.kp_feasible(kp)
        thresholds = {"alpha": family.alpha(), "beta": family.beta()}
    else:
        decision = hardness.decide_regret(family)
        oracle = hardness.co_kp_holds(kp)
        thresholds = {"rho": family.rho()}
    out = {
        "variant": variant.replace("_", "-"),
        "decision": "yes" if decision.answer else "no",
        "oracle": "yes" if oracle else "no",
        "thresholds": thresholds,
    }
    if isinstance(decision.witness, dict):
        out["witness_mu"] = decision.witness
    elif decision.witness is not None:
        out["witness"] = list(decision.witness)
    if args.emit_family:
        out["family_dir"] = str(emit_family(family, Path(args.emit_family), args.pretty))
    return out


def emit_family(family, root: Path, pretty: bool) -> Path:
    """Reference model, a compact descriptor and one model file per subset."""
    write_atomic(root / "reference.json", dump(family.reference_model().to_json(), pretty))
    descriptor = {"variant": family.variant, "values": family.kp.values, "weights": family.kp.weights,
                  "capacity": family.kp.capacity, "threshold": family.kp.threshold,
                  "epsilon": family.epsilon, "delta": family.delta, "sigma2": family.sigma2,
                  "members": {}}
    for subset in hardness.subsets(family.n):
        tag = "K_" + ("-".join(str(k) for k in subset) or "empty")
        write_atomic(root / f"{tag}.json", dump(family.model_for(subset).to_json(), pretty))
        descriptor["members"][tag] = {"items": list(subset),
                                      "gain": family.subset_gain(subset),
                                      "info": family.subset_info(subset)}
    write_atomic(root / "family.json", dump(descriptor, pretty))
    return root


def make_agent(model: Mdp, data: dict, text: str):
    kind, _, rest = text.partition(":")
    if kind == "policy":
        return simulator.policy_agent(policy_arg(model, data, rest), rest)
    if kind == "uniform":
        return simulator.uniform_random(model)
    if kind == "forced":
        c = float(rest) if rest else 2.0
        mu = lowerbound.lower_bound_general(model).mu
        return simulator.forced_explore(model, mu, c)
    raise InputError(f"unknown agent {text!r} (policy:NAME, uniform or forced[:c])")


def _need_policy_agent(agent, check):
    if not isinstance(agent, simulator.PolicyAgent):
        raise PreconditionError(f"--check {check} needs a stationary agent (policy:NAME or uniform)")


def cmd_simulate(args) -> dict:
    model, data = load(args.model)
    agent = make_agent(model, data, args.agent)
    seeds = range(args.seed, args.seed + args.seeds)
    s0 = args.s0 if args.s0 is not None else model.states[0]
    if args.check is None:
        traj = simulator.simulate(model, agent, s0, args.T, args.seed)
        if args.trajectory:
            write_atomic(args.trajectory, traj.to_jsonl())
        return {"agent": traj.agent, "seed": args.seed, "T": args.T,
                "total_reward": float(traj.rewards.sum()),
                "counts": dict(zip(model.actions, traj.counts().tolist()))}
    if args.check == "quasiflow":
        closed = pair_list(model, args.closed)
        if closed is None:
            closed = solve_optimal(model).optimal_pairs
        worst = 0
        for seed in seeds:
            traj = simulator.simulate(model, agent, s0, args.T, seed)
            worst = max(worst, int(np.abs(simulator.quasi_flow_residual(traj, model, closed)).max()))
        return {"check": "quasiflow", "closed_set": [model.actions[x] for x in closed],
                "runs": len(seeds), "max_abs_residual": worst, "passed": worst == 0}
    if args.check == "pseudoregret":
        _need_policy_agent(agent, "pseudoregret")
        rep = simulator.pseudo_regret_check(model, agent.policy, s0, args.T, seeds)
        return {"check": "pseudoregret", "runs": len(seeds), "T": args.T,
                "regret_mean": rep.regret_mean, "gap_sum_mean": rep.gap_sum_mean,
                "difference": rep.difference, "standard_error": rep.standard_error,
                "bound": rep.bound, "passed": rep.passed}
    if args.check == "navigation":
        horizons = args.horizons or [100, 1000, 10000]
        curve = simulator.navigation_distance(model, agent, s0, horizons, seeds)
        if args.figure:
            from .plotting import navigation_figure
            navigation_figure(curve, args.figure)
        return {"check": "navigation", "runs": len(seeds), "horizons": list(curve.horizons),
                "distances": list(curve.distances)}
    _need_policy_agent(agent, "loglik")
    if not args.alt:
        raise PreconditionError("--check loglik needs --alt ALT.json (the alternative model)")
    alt, _ = load(args.alt)
    rep = simulator.loglik_check(model, alt, agent.policy, s0, args.T, seeds)
    return {"check": "loglik", "runs": len(seeds), "T": args.T, "mean": rep.mean,
            "standard_error": rep.standard_error, "expected": rep.expected,
            "support_violations": rep.support_violations, "passed": rep.passed}


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="pretty", action="store_false", help="compact JSON (default)")
    fmt.add_argument("--pretty", dest="pretty", action="store_true", help="indented JSON")
    common.set_defaults(pretty=False)
    common.add_argument("-o", "--output", help="write the report here instead of stdout")

    parser = argparse.ArgumentParser(prog="mdplab", description="Regret lower bounds for average-reward MDPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="optimal gain, bias and gaps")
    p.add_argument("model")
    p.set_defaults(run=cmd_solve)

    p = sub.add_parser("lb", parents=[common], help="regret lower bound")
    p.add_argument("model")
    p.add_argument("--method", choices=LB_METHODS, default="general")
    p.add_argument("--class", dest="model_class", choices=tuple(LB_CLASSES), default="fixed-kernel")
    p.add_argument("--neighborhood", type=int, default=None, metavar="K",
                   help="only policies within K changes of an optimal one")
    p.add_argument("--navigation", choices=("full", "minor"), default="full")
    p.add_argument("--emit-mu", metavar="PATH")
    p.add_argument("--figure", metavar="PATH", help="bar chart of mu*")
    p.set_defaults(run=cmd_lb)

    p = sub.add_parser("confuse", parents=[common], help="confusing-model certificate for a policy")
    p.add_argument("model")
    p.add_argument("--policy", required=True, help="policy name from the model file, 'uniform' or a JSON path")
    p.add_argument("--kappa", metavar="MU.json", help="pair weights (default all ones)")
    p.add_argument("--kernel-fixed", action="store_true", help="only modify rewards")
    p.add_argument("--emit-model", metavar="PATH")
    p.set_defaults(run=cmd_confuse)

    p = sub.add_parser("contract", parents=[common], help="minor by a closed set (default X_opt)")
    p.add_argument("model")
    p.add_argument("--pairs", help="comma-separated actions of the closed set")
    p.set_defaults(run=cmd_contract)

    p = sub.add_parser("knapsack", parents=[common], help="knapsack reduction instances")
    p.add_argument("--values", type=int_list, required=True)
    p.add_argument("--weights", type=int_list, required=True)
    p.add_argument("-W", type=int, required=True, help="capacity")
    p.add_argument("-V", type=int, required=True, help="value threshold")
    p.add_argument("--variant", choices=("confusing-model", "regret"), default="confusing-model")
    p.add_argument("--emit-family", metavar="DIR")
    p.set_defaults(run=cmd_knapsack)

    p = sub.add_parser("simulate", parents=[common], help="seeded trajectories and identity checks")
    p.add_argument("model")
    p.add_argument("--agent", default="uniform", help="policy:NAME, uniform or forced[:c]")
    p.add_argument("-T", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds for checks")
    p.add_argument("--s0", help="initial state (default: first state)")
    p.add_argument("--check", choices=CHECKS)
    p.add_argument("--closed", help="closed set for quasiflow (default X_opt)")
    p.add_argument("--horizons", type=int_list, help="navigation horizons (default 100,1000,10000)")
    p.add_argument("--alt", help="alternative model for loglik")
    p.add_argument("--trajectory", metavar="PATH", help="write the run as JSONL")
    p.add_argument("--figure", metavar="PATH", help="navigation distance against T")
    p.set_defaults(run=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 2 is reserved for preconditions
        return 1 if exc.code == 2 else (exc.code or 0)
    try:
        tol = tolerances.from_environment()
    except ValueError as exc:
        print(f"mdplab: MDPLAB_TOL: {exc}", file=sys.stderr)
        return 1
    with tolerances.using(tol):
        return run(args)


def run(args) -> int:
    try:
        if getattr(args, "seeds", 1) < 1:
            raise InputError("--seeds must be >= 1")
        emit(args, args.run(args))
        return 0
    except Failure as exc:
        if exc.payload is not None:
            emit(args, exc.payload)
        print(f"mdplab: {exc}", file=sys.stderr)
        return exc.code
    except ModelError as exc:
        print(f"mdplab: invalid model: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"mdplab: {exc}", file=sys.stderr)
        return 1
    except PreconditionError as exc:
        print(f"mdplab: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"mdplab: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
