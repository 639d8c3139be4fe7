"""``vlkey`` command line.

Every command prints one JSON document that embeds the configuration it ran
with, so ``vlkey run --config result.json`` replays it.  Exit status is 0 when
all bound checks pass, 1 on a bound violation and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from vlkey.bounds import (BoundReport, audit_scheme, coinciding_entropy_range, coinciding_key_bounds,
                          key_length_bounds, regime_bounds)
from vlkey.channel import enumerate_protocol, read_key_law, sample_protocol, write_key_law
from vlkey.converter import convert
from vlkey.entropy_model import (StopRule, coinciding_entropy, coinciding_entropy_stderr,
                                 read_entropy_keys, run_halving_protocol, write_entropy_keys)
from vlkey.errors import ContractError, EnumerationLimitError, InfeasibleCodeError, NonTerminationError
from vlkey.gf2 import gv_parity_check
from vlkey.keyops import (FixedGuess, RandomGuess, ReplayGuess, concat_keys, guessing_game,
                          per_bit_guarantees, run_payoff_game, segment_distance)
from vlkey.prob import JointSource, KeyLaw, distance_from_ideal, is_exact, mutual_information
from vlkey.schemes import PrefixSchemeConfig, erasure_scheme, prefix_matching_scheme
from vlkey.sources import BUILTIN

SEED_ENV = "VLKEY_SEED"
USAGE_ERRORS = (ContractError, EnumerationLimitError, InfeasibleCodeError, NonTerminationError,
                ValueError, OSError)


class UsageError(Exception):
    pass


def number(v):
    """JSON form of a probability-like value: float, plus the exact fraction when available."""
    if is_exact(v):
        q = Fraction(v)
        return {"value": float(q), "exact": f"{q.numerator}/{q.denominator}"}
    return {"value": float(v)}


def parse_fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def load_source(spec: str) -> JointSource:
    """``builtin:NAME[:k=v,...]`` or a path to a source JSON file."""
    if spec.startswith("builtin:"):
        _, _, rest = spec.partition(":")
        name, _, params = rest.partition(":")
        if name not in BUILTIN:
            raise UsageError(f"unknown builtin source {name!r}; choose from {sorted(BUILTIN)}")
        kwargs = {}
        for item in filter(None, params.split(",")):
            k, eq, v = item.partition("=")
            if not eq:
                raise UsageError(f"source parameter {item!r} must look like key=value")
            kwargs[k.replace("-", "_")] = int(v) if k == "m" else Fraction(v)
        try:
            return BUILTIN[name](**kwargs)
        except TypeError as exc:
            raise UsageError(f"source {name}: {exc}") from None
    return JointSource.from_json(Path(spec).read_text())


def _seed(args) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    return int(env) if env else None


def _keys_law(path: str) -> KeyLaw:
    with open(path) as fp:
        return read_key_law(fp)


def _distance_doc(law: KeyLaw) -> dict:
    d = distance_from_ideal(law)
    return {"sup_distance": number(d.value),
            "per_l_distance": {str(l): number(v) for l, v in sorted(d.per_length.items())}}


def _build_scheme(args, source: JointSource):
    if args.scheme == "prefix":
        return prefix_matching_scheme(PrefixSchemeConfig(args.m, args.t))
    if args.scheme == "erasure":
        return erasure_scheme(args.m)
    raise UsageError(f"unknown scheme {args.scheme!r}")


def _scheme_law(args, source: JointSource) -> KeyLaw:
    alice, bob = _build_scheme(args, source)
    if args.trials:
        seed = _seed(args)
        if seed is None:
            raise UsageError("sampled mode needs --seed (or VLKEY_SEED)")
        return sample_protocol(source, alice, bob, seed, args.trials).law.key_law()
    return enumerate_protocol(source, alice, bob).key_law()


def cmd_mi(args) -> dict:
    return {"I": mutual_information(load_source(args.source))}


def cmd_scheme(args) -> dict:
    source = load_source(args.source)
    law = _scheme_law(args, source)
    if args.keys_out:
        with open(args.keys_out, "w") as fp:
            write_key_law(law, fp)
    return {"E_L": number(law.expected_length()), **_distance_doc(law)}


def cmd_audit(args) -> dict:
    source = load_source(args.source)
    law = _keys_law(args.keys) if args.keys else _scheme_law(args, source)
    reports = audit_scheme(source, law)
    report = per_bit_guarantees(law) if law.exact else None
    doc = {"E_L": number(law.expected_length()), **_distance_doc(law),
           "reports": [r.to_dict() for r in reports]}
    if report is not None:
        doc["per_bit_violations"] = report.violations()
    return doc


def cmd_entropy_model(args) -> dict:
    source = load_source(args.source)
    rule = StopRule(args.eps)
    seed = _seed(args)
    keys = run_halving_protocol(source, args.m, rule, seed=seed, trials=args.trials,
                                conditional_trials=args.conditional_trials)
    if args.keys_out:
        if not keys.mass:
            raise UsageError("--keys-out in sampled mode needs --conditional-trials")
        with open(args.keys_out, "w") as fp:
            write_entropy_keys(keys, fp)
    doc = {"P_disagree": number(keys.p_disagree()), "E_T": number(keys.expected_stop_round()),
           "stop_histogram": {str(t): number(p) for t, p in keys.stop_rounds().items()}}
    if keys.mass:
        doc["H_eq"] = coinciding_entropy(keys)
        doc["H_eq_stderr"] = coinciding_entropy_stderr(keys)
    return doc


def _convert_doc(out) -> tuple[dict, list[BoundReport]]:
    bad, live = out.error_mass()
    reports = [
        BoundReport("converter length guarantee", "lower", out.length_bound, float(out.expected_length),
                    {"H_eq": out.h_eq, "eps_prime": float(out.eps_prime)}),
        BoundReport("converter distance target", "upper", float(out.eps_prime), float(out.distance.value),
                    {"eps_prime": float(out.eps_prime)}),
        BoundReport("converter error control", "upper", float(out.eps_prime * live), float(bad),
                    {"P(L>0)": float(live)}),
    ]
    doc = {"E_L": number(out.expected_length), **_distance_doc(out.law), "H_eq": out.h_eq,
           "length_guarantee": out.length_bound,
           "bound_satisfied": all(r.satisfied for r in reports),
           "searches_satisfied": out.searches_satisfied,
           "reports": [r.to_dict() for r in reports]}
    return doc, reports


def cmd_convert(args) -> dict:
    with open(args.keys) as fp:
        keys = read_entropy_keys(fp)
    out = convert(keys, args.eps_prime, seed=_seed(args) or 0)
    if args.keys_out:
        with open(args.keys_out, "w") as fp:
            write_key_law(out.law, fp)
    return _convert_doc(out)[0]


def cmd_pipeline(args) -> dict:
    source = load_source(args.source)
    keys = run_halving_protocol(source, args.m, StopRule(args.eps))
    out = convert(keys, args.eps_prime, seed=_seed(args) or 0)
    doc, _ = _convert_doc(out)
    audit = audit_scheme(source, out.law, h_eq=out.h_eq, eps_prime=float(args.eps_prime))
    doc["reports"] += [r.to_dict() for r in audit]
    doc["P_disagree_entropy_model"] = number(keys.p_disagree())
    return doc


def cmd_bounds(args) -> dict:
    doc: dict = {"I": args.I}
    if args.eps is not None:
        lo, up = key_length_bounds(args.I, args.eps)
        doc["key_length"] = {"eps": args.eps, "lower": lo, "upper": up}
        if args.kappa is not None:
            lo2, up2 = coinciding_key_bounds(args.kappa, args.eps)
            doc["coinciding_entropy"] = {"kappa": args.kappa, "lower": lo2, "upper": up2,
                                         "upper_note": "binding only for an upper bound on kappa"}
    if args.lam is not None:
        lo, up = regime_bounds(args.I, lam=args.lam)
        doc["lambda_regime"] = {"lam": args.lam, "lower": lo, "upper": up}
    if args.nu is not None:
        lo, up = regime_bounds(args.I, nu=args.nu)
        doc["nu_regime"] = {"nu": args.nu, "lower": lo, "upper": up}
    lo, up = coinciding_entropy_range(args.I)
    doc["kappa_range"] = {"lower": lo, "upper": up}
    return doc


def cmd_concat(args) -> dict:
    if len(args.keys) < 2:
        raise UsageError("concat needs at least two --keys files")
    law = _keys_law(args.keys[0])
    for path in args.keys[1:]:
        law = concat_keys(law, _keys_law(path))
    if args.keys_out:
        with open(args.keys_out, "w") as fp:
            write_key_law(law, fp)
    report = per_bit_guarantees(law)
    return {"E_L": number(law.expected_length()), **_distance_doc(law),
            "bit_errors": {f"{l}:{i}": number(e) for (l, i), e in sorted(report.bit_errors.items())},
            "entropy_A": {str(l): h for l, h in sorted(report.entropy_a.items())},
            "entropy_B": {str(l): h for l, h in sorted(report.entropy_b.items())},
            "violations": report.violations()}


def cmd_code(args) -> dict:
    code = gv_parity_check(args.n, args.d, args.k, seed=_seed(args) or 0)
    return {"n": code.n, "k": code.k, "min_distance": code.min_distance,
            "parity_check": code.to_strings()}


ADVERSARIES = {
    "fixed": lambda game: FixedGuess(1),
    "replay": lambda game: ReplayGuess(1),
    "random": lambda game: RandomGuess(game.actions),
}


def cmd_split(args) -> dict:
    law = _keys_law(args.keys)
    doc: dict = {"t": args.t, "segment_distance": number(segment_distance(law, args.t))}
    if args.game:
        if args.game != "guess":
            raise UsageError(f"unknown game {args.game!r}")
        seed = _seed(args)
        if seed is None:
            raise UsageError("the payoff game needs --seed (or VLKEY_SEED)")
        game = guessing_game(args.t)
        results = {}
        for i, name in enumerate(args.adversary):
            r = run_payoff_game(law, game, ADVERSARIES[name](game), seed + i, args.trials)
            results[name] = {"mean": r.mean, "stderr": r.stderr, "bound": r.bound,
                             "bound_text_variant": r.bound_text, "g_star": number(r.g_star),
                             "satisfied": r.satisfied}
        doc["payoff"] = results
    return doc


COMMANDS = {
    "mi": cmd_mi, "scheme": cmd_scheme, "audit": cmd_audit, "entropy-model": cmd_entropy_model,
    "convert": cmd_convert, "pipeline": cmd_pipeline, "bounds": cmd_bounds, "concat": cmd_concat,
    "code": cmd_code, "split": cmd_split,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vlkey", description="Variable-length secret key experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--csv", action="store_true", help="flatten the result to path,value rows")
    common.add_argument("--out", help="also write the result document to this file")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.add_argument("--seed", type=int, help=f"master seed (default: ${SEED_ENV})")
        return sp

    sp = add("mi", "mutual information of a source")
    sp.add_argument("--source", required=True)

    for name, help_ in (("scheme", "run a key scheme"), ("audit", "check a scheme against the bounds")):
        sp = add(name, help_)
        sp.add_argument("--source", required=True)
        sp.add_argument("--scheme", choices=["prefix", "erasure"], default="prefix")
        sp.add_argument("--m", type=int, default=8)
        sp.add_argument("--t", type=int, default=3)
        sp.add_argument("--trials", type=int, help="sample this many runs instead of enumerating")
        if name == "scheme":
            sp.add_argument("--keys-out", help="write the key law as JSONL")
        else:
            sp.add_argument("--keys", help="audit this key log instead of running a scheme")

    sp = add("entropy-model", "candidate-set halving protocol")
    sp.add_argument("--source", required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--eps", type=parse_fraction, required=True)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--conditional-trials", type=int, default=0,
                    help="sampled transcripts whose exact key law feeds H_eq")
    sp.add_argument("--keys-out")

    sp = add("convert", "entropy-model keys to a variable-length key")
    sp.add_argument("--keys", required=True)
    sp.add_argument("--eps-prime", type=parse_fraction, required=True)
    sp.add_argument("--keys-out")

    sp = add("pipeline", "enumerate the halving protocol, convert and audit")
    sp.add_argument("--source", required=True)
    sp.add_argument("--m", type=int, default=2)
    sp.add_argument("--eps", type=parse_fraction, required=True)
    sp.add_argument("--eps-prime", type=parse_fraction, required=True)

    sp = add("bounds", "evaluate the closed-form bounds")
    sp.add_argument("--I", type=float, required=True)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--lam", type=float)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--kappa", type=float)

    sp = add("concat", "concatenate independent key laws")
    sp.add_argument("--keys", action="append", required=True)
    sp.add_argument("--keys-out")

    sp = add("code", "build a parity-check matrix")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--k", type=int)

    sp = add("split", "split keys into segments and play the guessing game")
    sp.add_argument("--keys", required=True)
    sp.add_argument("--t", type=int, required=True)
    sp.add_argument("--game", choices=["guess"])
    sp.add_argument("--adversary", action="append", choices=sorted(ADVERSARIES))
    sp.add_argument("--trials", type=int, default=10_000)

    sp = sub.add_parser("run", help="replay the configuration embedded in a result document",
                        parents=[common])
    sp.add_argument("--config", required=True)
    return p


def _config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("csv", "out")}
    if "seed" in cfg:
        cfg["seed"] = _seed(args)
    return {k: (str(v) if isinstance(v, Fraction) else v) for k, v in cfg.items()}


def _replay_args(parser: argparse.ArgumentParser, path: str) -> argparse.Namespace:
    doc = json.loads(Path(path).read_text())
    cfg = doc.get("config", doc)
    command = cfg.get("command")
    if command not in COMMANDS:
        raise UsageError(f"config.command: unknown command {command!r}")
    argv = [command]
    for k, v in cfg.items():
        if k == "command" or v is None or v is False:
            continue
        flag = "--" + k.replace("_", "-")
        if isinstance(v, list):
            for item in v:
                argv += [flag, str(item)]
        elif v is True:
            argv.append(flag)
        else:
            argv += [flag, str(v)]
    return parser.parse_args(argv)


def _flatten(doc, prefix="") -> list[tuple[str, object]]:
    if isinstance(doc, dict):
        return [row for k, v in doc.items() for row in _flatten(v, f"{prefix}{k}.")]
    if isinstance(doc, list):
        return [row for i, v in enumerate(doc) for row in _flatten(v, f"{prefix}{i}.")]
    return [(prefix.rstrip("."), doc)]


def _violations(doc) -> bool:
    reports = doc.get("reports", []) if isinstance(doc, dict) else []
    bad = any(not r["satisfied"] and not r.get("advisory") for r in reports)
    if doc.get("bound_satisfied") is False or doc.get("per_bit_violations"):
        bad = True
    payoff = doc.get("payoff", {})
    return bad or any(not r["satisfied"] for r in payoff.values())


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            outer = args
            args = _replay_args(parser, args.config)
            args.csv, args.out = outer.csv, outer.out
        if args.command == "split" and args.game and not args.adversary:
            args.adversary = ["fixed", "replay", "random"]
        result = COMMANDS[args.command](args)
    except (UsageError, *USAGE_ERRORS) as exc:
        sampled = args.command in ("scheme", "audit", "entropy-model")
        hint = " (try sampled mode with --trials and --seed)" if sampled and isinstance(exc, EnumerationLimitError) else ""
        print(f"vlkey: error: {exc}{hint}", file=sys.stderr)
        return 2
    doc = {"config": _config(args), "result": result}
    if args.csv:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "value"])
        writer.writerows(_flatten(doc))
        text = buf.getvalue()
    else:
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 1 if _violations(result) else 0


if __name__ == "__main__":
    sys.exit(main())
