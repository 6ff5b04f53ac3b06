"""Command-line entry point: ``armor <subcommand> [options]``.

Exit codes: 0 on success, 1 on usage or input errors, 2 when the invariant
suite reports a failure. Every output file is a pure function of the
arguments, so reruns with the same seed are byte-identical.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import properties
from .armor_iter import ArmorConfig, run_armor
from .data_io import SCHEMES, load_dataset, sample_dataset, save_dataset
from .errors import ArmorError
from .exact_game import (
    class_returns,
    enumerate_policies,
    optimistic_solution,
    regret_psi,
    solve_generalized_pessimism,
    solve_relative_pessimism,
)
from .experiments import (
    ALPHA_GRID,
    BETA_GRID,
    TOY_ARMOR,
    Instance,
    coverage_trial,
    objective_separation_search,
    random_instance,
    rpi_sweep,
    toy_instance,
)
from .mdp_core import PolicyTable, evaluate_policy, load_mdp, save_mdp
from .toy_chain import LEFT, RIGHT
from .version_space import build_version_space, calibrate_alpha, load_class, save_class

OBJECTIVES = ("relative", "absolute", "regret", "optimistic")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- inputs


def _instance(args) -> Instance:
    """Instance from ``--mdp``/``--class`` files, else a built-in one."""
    if getattr(args, "mdp", None):
        M = load_mdp(args.mdp)
        if getattr(args, "model_class", None):
            mc = load_class(args.model_class, true_model=M)
        else:
            from .version_space import perturbed_class
            mc = perturbed_class(M, args.class_size, args.perturb_scale, args.seed)
        uniform = PolicyTable.uniform(M.num_states, M.num_actions)
        return Instance(M, uniform, uniform, mc, Path(args.mdp).stem)
    if args.instance == "toy":
        inst = toy_instance()
    else:
        inst = random_instance(args.seed, args.states, args.actions, args.class_size, args.perturb_scale,
                               reference="expert")
    if getattr(args, "model_class", None):
        inst = dataclasses.replace(inst, model_class=load_class(args.model_class, true_model=inst.M_true))
    return inst


def _policy(spec: str, inst: Instance) -> PolicyTable:
    S, A = inst.M_true.num_states, inst.M_true.num_actions
    if spec == "always-left":
        return PolicyTable.deterministic([LEFT] * S, A)
    if spec == "always-right":
        return PolicyTable.deterministic([RIGHT] * S, A)
    if spec == "behavior":
        return inst.behavior
    if spec == "reference":
        return inst.reference
    if spec == "uniform":
        return PolicyTable.uniform(S, A)
    if spec.startswith("file:"):
        doc = json.loads(Path(spec[5:]).read_text())
        probs = doc["probs"] if isinstance(doc, dict) else doc
        return PolicyTable(np.asarray(probs, dtype=float))
    raise UsageError(f"unknown policy {spec!r}")


def _dataset(args, inst: Instance, behavior: PolicyTable):
    if getattr(args, "data", None):
        return load_dataset(args.data)
    return sample_dataset(inst.M_true, behavior, args.n, args.seed)


def _policy_doc(pi: PolicyTable) -> list:
    return [[float(x) for x in row] for row in pi.probs]


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, out: Path) -> int:
    inst = _instance(args)
    mu = _policy(args.behavior, inst)
    D = sample_dataset(inst.M_true, mu, args.n, args.seed, scheme=args.scheme, reward_noise=args.reward_noise,
                       behavior_id=args.behavior)
    save_dataset(D, out / "data.jsonl")
    save_mdp(inst.M_true, out / "mdp.json")
    save_class(inst.model_class, out / "class.json")
    print(f"wrote {len(D)} transitions to {out / 'data.jsonl'}")
    return 0


def cmd_solve_exact(args, out: Path) -> int:
    inst = _instance(args)
    mc, M = inst.model_class, inst.M_true
    S, A = M.num_states, M.num_actions
    ref = _policy(args.ref, inst)
    D = _dataset(args, inst, _policy(args.behavior, inst))
    if args.calibrate_delta is not None:
        alpha = calibrate_alpha(mc, M, _policy(args.behavior, inst), max(len(D), 1), args.calibrate_delta,
                                args.calibrate_trials, args.seed)
    else:
        alpha = args.alpha
    vs = build_version_space(mc, D, alpha)
    Pi, _ = enumerate_policies(S, A).with_policy(ref, "reference")
    J = class_returns(mc, Pi)
    if args.objective == "relative":
        sol = solve_relative_pessimism(vs, Pi, ref, returns=J)
    elif args.objective == "absolute":
        sol = solve_generalized_pessimism(vs, Pi, {m: 0.0 for m in vs.member_indices}, returns=J)
    elif args.objective == "regret":
        sol = solve_generalized_pessimism(vs, Pi, regret_psi(vs, Pi, returns=J), returns=J)
    else:
        sol = optimistic_solution(vs, Pi, returns=J)
    pi_hat = Pi.policies[sol.policy_index]
    doc = {
        "objective": args.objective,
        "alpha": alpha,
        "members": [mc.labels[i] for i in vs.member_indices],
        "policy_index": sol.policy_index,
        "policy_label": Pi.labels[sol.policy_index],
        "policy": _policy_doc(pi_hat),
        "value": sol.value,
        "worst_model_index": sol.worst_model_index,
        "worst_model_label": mc.labels[sol.worst_model_index],
        "J_true": evaluate_policy(M, pi_hat).expected_return,
        "J_ref": evaluate_policy(M, ref).expected_return,
    }
    _write_json(out / "solution.json", doc)
    with open(out / "per_policy_values.csv", "w") as fh:
        fh.write("index,label,value\n")
        for i, (label, v) in enumerate(zip(Pi.labels, sol.per_policy_values)):
            fh.write(f"{i},{label},{float(v)!r}\n")
    print(f"policy {doc['policy_label']} value {sol.value:.6g} J_true {doc['J_true']:.6g} J_ref {doc['J_ref']:.6g}")
    return 0


ARMOR_FIELDS = [f.name for f in dataclasses.fields(ArmorConfig)]


def _armor_config(args) -> ArmorConfig:
    return ArmorConfig(**{k: getattr(args, k) for k in ARMOR_FIELDS if getattr(args, k, None) is not None})


def cmd_run_armor(args, out: Path) -> int:
    inst = _instance(args)
    ref = _policy(args.ref, inst)
    D = _dataset(args, inst, _policy(args.behavior, inst))
    cfg = _armor_config(args)
    res = run_armor(inst.M_true, D, ref, cfg)
    res.write_csv(out / "trace.csv")
    J = evaluate_policy(inst.M_true, res.final_policy).expected_return
    J_ref = evaluate_policy(inst.M_true, ref).expected_return
    _write_json(out / "result.json", {"config": res.config.to_dict(), "final_policy": _policy_doc(res.final_policy),
                                      "J_true": J, "J_ref": J_ref})
    print(f"J_true {J:.6g} J_ref {J_ref:.6g}")
    return 0


def cmd_sweep(args, out: Path) -> int:
    inst = _instance(args)
    mode = args.mode.replace("-", "_")
    grid = args.grid or (list(ALPHA_GRID) if mode == "exact_alpha" else list(BETA_GRID))
    seeds = [args.seed + i for i in range(args.seeds)]
    overrides = {"steps_K": args.steps_K} if args.steps_K is not None else None
    res = rpi_sweep(mode, inst, grid, seeds, n=args.n, baseline_alpha=args.baseline_alpha,
                    armor_overrides=overrides)
    res.write_csv(out / "sweep.csv")
    res.write_svg(out / "sweep.svg")
    _write_json(out / "summary.json", {"mode": mode, "instance": inst.label, "summary": res.summary(),
                                       "min_improvement": res.min_improvement()})
    print(f"{len(res.rows)} rows, min J_learned - J_ref = {res.min_improvement():.6g}")
    return 0


def cmd_coverage(args, out: Path) -> int:
    inst = _instance(args)
    table = coverage_trial(inst, args.n_grid, args.delta, args.trials, args.seed, calib_n=args.calib_n)
    table.write_csv(out / "coverage.csv")
    _write_json(out / "coverage.json", {"alpha": table.alpha, "constant": table.constant, "delta": table.delta,
                                        "rows": table.rows})
    for r in table.rows:
        print(f"n={r['n']}: true model {r['true_freq']:.3f}, median wrong model {r['median_wrong_freq']:.3f}")
    return 0


def cmd_separation(args, out: Path) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    report = objective_separation_search(seeds, args.states, args.actions, args.class_size, args.perturb_scale)
    _write_json(out / "separation.json", report)
    if report["found"]:
        print(f"witness at seed {report['seed']}: absolute {report['absolute_policy']} vs regret "
              f"{report['regret_policy']} (verified={report['verified']})")
    else:
        print(f"no witness in {report['seeds_tried']} seeds")
    return 0


def cmd_check_properties(args, out: Path) -> int:
    results = properties.run_suite(args.scale)
    for r in results:
        print(r.line())
    _write_json(out / "properties.json", [r.to_dict() for r in results])
    return 0 if all(r.passed for r in results) else 2


# ---------------------------------------------------------------- parser


def _common(p):
    p.add_argument("--config", help="JSON object of option defaults (keys are option names with underscores)")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--seed", type=int, default=0)


def _instance_opts(p, data: bool = True):
    p.add_argument("--instance", choices=("toy", "random"), default="toy")
    p.add_argument("--mdp", help="true MDP JSON file (overrides --instance)")
    p.add_argument("--class", dest="model_class", help="model class JSON file")
    p.add_argument("--class-size", type=int, default=10)
    p.add_argument("--perturb-scale", type=float, default=0.3)
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--actions", type=int, default=2)
    if data:
        p.add_argument("--data", help="dataset JSONL file; sampled from --behavior when omitted")
        p.add_argument("--n", type=int, default=1000)
        p.add_argument("--behavior", default="behavior",
                       help="always-left | always-right | behavior | reference | uniform | file:PATH")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="armor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample an offline dataset")
    _common(p)
    _instance_opts(p, data=False)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--behavior", default="behavior")
    p.add_argument("--scheme", choices=SCHEMES, default="occupancy_iid")
    p.add_argument("--reward-noise", type=float, default=0.0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("solve-exact", help="solve the maximin game by enumeration")
    _common(p)
    _instance_opts(p)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--calibrate-delta", type=float, default=None)
    p.add_argument("--calibrate-trials", type=int, default=200)
    p.add_argument("--ref", default="always-right")
    p.add_argument("--objective", choices=OBJECTIVES, default="relative")
    p.set_defaults(func=cmd_solve_exact)

    p = sub.add_parser("run-armor", help="run the iterative adversarial solver")
    _common(p)
    _instance_opts(p)
    p.add_argument("--ref", default="always-right")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--w", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=5e-3)
    p.add_argument("--eta-fast", type=float, default=TOY_ARMOR["eta_fast"])
    p.add_argument("--eta-slow", type=float, default=TOY_ARMOR["eta_slow"])
    p.add_argument("--horizon", dest="horizon_H", type=int, default=TOY_ARMOR["horizon_H"])
    p.add_argument("--steps", dest="steps_K", type=int, default=TOY_ARMOR["steps_K"])
    p.add_argument("--warmstart", choices=("ref", "bc", "none"), default=TOY_ARMOR["warmstart"])
    p.add_argument("--warmstart-steps", type=int, default=1000)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default=TOY_ARMOR["optimizer"])
    p.add_argument("--batch-real", type=int, default=TOY_ARMOR["batch_real"])
    p.add_argument("--batch-model", type=int, default=TOY_ARMOR["batch_model"])
    p.add_argument("--buffer-cap", type=int, default=TOY_ARMOR["buffer_cap"])
    p.add_argument("--eval-period", type=int, default=TOY_ARMOR["eval_period"])
    p.add_argument("--vmax", type=float, default=None)
    p.set_defaults(func=cmd_run_armor)

    p = sub.add_parser("sweep", help="robust-improvement sweep over alpha or beta")
    _common(p)
    _instance_opts(p, data=False)
    p.add_argument("--mode", choices=("exact-alpha", "iterative-beta"), required=True)
    p.add_argument("--grid", type=_floats, default=None, help="comma-separated parameter values")
    p.add_argument("--seeds", type=int, default=5, help="number of dataset seeds starting at --seed")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--baseline-alpha", type=float, default=1.0)
    p.add_argument("--steps", dest="steps_K", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("coverage", help="Monte-Carlo version-space coverage table")
    _common(p)
    _instance_opts(p, data=False)
    p.add_argument("--n-grid", type=_ints, default=[100, 1000, 10_000])
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--calib-n", type=int, default=1000)
    p.set_defaults(func=cmd_coverage, instance="random", perturb_scale=0.1)

    p = sub.add_parser("separation-search", help="find a space where worst-case return and regret disagree")
    _common(p)
    p.add_argument("--seeds", type=int, default=500)
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--actions", type=int, default=2)
    p.add_argument("--class-size", type=int, default=5)
    p.add_argument("--perturb-scale", type=float, default=0.5)
    p.set_defaults(func=cmd_separation)

    p = sub.add_parser("check-properties", help="run the invariant suite")
    _common(p)
    p.add_argument("--scale", choices=("quick", "full"), default="quick")
    p.set_defaults(func=cmd_check_properties)
    return parser


def _apply_config(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.exit(1, f"armor: error: cannot read config: {exc}\n")
    if not isinstance(doc, dict):
        parser.exit(1, "armor: error: config must be a JSON object\n")
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest for a in subparser._actions}
    unknown = sorted(set(doc) - dests)
    if unknown:
        parser.exit(1, f"armor: error: unknown config keys {unknown}\n")
    subparser.set_defaults(**doc)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return args.func(args, out)
    except (ArmorError, UsageError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"armor: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
