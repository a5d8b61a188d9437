"""Command line entry point: ``run``, ``fuzz``, ``check`` and ``oracle``.

Exit status 0 means pass, 1 a verdict failure or non-convergence, 2 a usage
or I/O error.  Trace files go to ``--out`` or, by default, to the directory
named by ``STEINERSTAB_OUT`` (current directory when unset).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from . import checkers as C
from .graph import GraphError, load_graph, weight_to_json
from .oracle import OracleBudgetExceeded, optimal_steiner
from .protocol import ProtocolError
from .simulator import ADVERSARIES, ATOMICITY, CorruptionSpec, Scenario, Trace, load_scenario, run

OUT_ENV = "STEINERSTAB_OUT"

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    scenario_path: Path
    seed: Optional[int] = None
    max_rounds: Optional[int] = None
    adversary: Optional[str] = None
    atomic: Optional[str] = None
    out: Optional[Path] = None

    def resolve(self) -> Scenario:
        """Load the scenario and apply the overrides."""
        try:
            s = load_scenario(self.scenario_path)
        except FileNotFoundError:
            raise UsageError(f"{self.scenario_path}: no such file") from None
        except (OSError, ValueError, KeyError, GraphError) as exc:
            raise UsageError(f"{self.scenario_path}: {exc}") from None
        overrides = {
            k: v
            for k, v in (
                ("seed", self.seed),
                ("max_rounds", self.max_rounds),
                ("adversary", self.adversary),
                ("atomic", self.atomic),
            )
            if v is not None
        }
        try:
            return replace(s, **overrides)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def out_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or ".")


def _config(args) -> RunConfig:
    return RunConfig(
        scenario_path=Path(args.scenario),
        seed=args.seed,
        max_rounds=args.max_rounds,
        adversary=args.adversary,
        atomic=args.atomic,
        out=Path(args.out) if args.out else None,
    )


def _write_trace(trace: Trace, cfg: RunConfig, name: str) -> Path:
    out = cfg.out_dir()
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / name
        trace.write(path)
    except OSError as exc:
        raise UsageError(f"cannot write trace: {exc}") from None
    return path


def final_verdicts(trace: Trace) -> list[C.Verdict]:
    """Every checker that applies to ``trace``."""
    verdicts = [C.check_trace_consistency(trace), C.check_no_deadlock(trace)]
    if trace.converged:
        c = trace.final_configuration()
        verdicts += [C.check_legitimate(c), C.check_competitiveness(c), C.check_round_bound(trace)]
    else:
        v = C.Verdict("convergence")
        v.fail(f"not quiescent after {trace.summary['rounds']} rounds", round=trace.summary["rounds"])
        verdicts.append(v)
    events = trace.scenario.events
    if len(events) == 1 and events[0].in_lambda and trace.snapshots("quiescent"):
        first = trace.snapshots("quiescent")[0]
        if first["r"] <= events[0].at_round:
            try:
                verdicts.append(C.check_passage(trace))
            except ValueError as exc:
                v = C.Verdict("passage")
                v.fail(str(exc))
                verdicts.append(v)
    return verdicts


def cmd_run(cfg: RunConfig) -> int:
    s = cfg.resolve()
    trace = run(s)
    path = _write_trace(trace, cfg, f"{cfg.scenario_path.name.split('.')[0]}.seed{s.seed}.trace.jsonl")
    summ = trace.summary
    if trace.converged:
        print(f"converged in {summ['rounds_to_converge']} rounds")
    else:
        print(f"not converged after {summ['rounds']} rounds")
    print(f"W(T) = {summ['tree_weight']}  tree {summ['tree_edges']}")
    if trace.converged:
        comp = C.check_competitiveness(trace.final_configuration())
        if not comp.skipped and "ratio" in comp.metrics:
            print(f"W(T)/W(T*) = {comp.metrics['ratio']} (bound {comp.metrics['bound']})")
    print(f"trace written to {path}")
    return EXIT_PASS if trace.converged else EXIT_FAIL


def cmd_fuzz(cfg: RunConfig, n_seeds: int) -> int:
    if n_seeds < 1:
        raise UsageError("--n-seeds must be at least 1")
    base = cfg.resolve()
    if base.corruption.mode != "random":
        base = replace(base, corruption=CorruptionSpec())
    start = base.seed
    failures = 0
    exceed = 0
    reported = False
    for seed in range(start, start + n_seeds):
        s = replace(base, seed=seed)
        try:
            trace = run(s)
            verdicts = final_verdicts(trace)
        except ProtocolError as exc:
            v = C.Verdict("protocol")
            v.fail(str(exc))
            verdicts, trace = [v], None
        bad = [v for v in verdicts if not v.passed and v.name != "round-bound"]
        exceed += any(v.name == "round-bound" and not v.passed for v in verdicts)
        if bad:
            failures += 1
            if not reported:
                reported = True
                path = cfg.out_dir() / f"reproducer.seed{seed}.json"
                try:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    path.write_text(json.dumps(s.to_dict(), sort_keys=True, indent=1))
                except OSError as exc:
                    raise UsageError(f"cannot write reproducer: {exc}") from None
                print(f"seed {seed}: FAIL " + "; ".join(v.summary_line() for v in bad))
                print(f"reproduce with: steinerstab run {path}")
    print(
        f"{n_seeds} seeds, {n_seeds - failures} passed, {failures} failed, "
        f"{exceed} over the round bound"
    )
    return EXIT_FAIL if failures else EXIT_PASS


def cmd_check(path: Path, as_json: bool = True) -> int:
    try:
        trace = Trace.read(path)
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except (OSError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    try:
        verdicts = final_verdicts(trace) + [C.check_replay(trace)]
    except (KeyError, TypeError, ValueError, GraphError) as exc:
        raise UsageError(f"{path}: malformed trace ({exc})") from None
    ok = all(v.passed for v in verdicts)
    if as_json:
        print(json.dumps({"pass": ok, "verdicts": [v.to_dict() for v in verdicts]}, indent=1, default=str))
    for v in verdicts:
        print(v.summary_line(), file=sys.stderr)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_oracle(path: Path) -> int:
    try:
        g = load_graph(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except (OSError, GraphError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    try:
        sol = optimal_steiner(g)
    except OracleBudgetExceeded as exc:
        raise UsageError(str(exc)) from None
    print(f"weight {weight_to_json(sol.weight)}")
    print(json.dumps({"weight": weight_to_json(sol.weight), "edges": [list(e) for e in sorted(sol.edges)]}))
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="steinerstab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    def scenario_args(sp):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--max-rounds", type=int)
        sp.add_argument("--adversary", choices=ADVERSARIES)
        sp.add_argument("--atomic", choices=ATOMICITY)
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")

    scenario_args(sub.add_parser("run", help="run one scenario and write its trace"))
    fz = sub.add_parser("fuzz", help="run many corrupted starts and check every trace")
    scenario_args(fz)
    fz.add_argument("--n-seeds", type=int, default=100)
    ck = sub.add_parser("check", help="check a trace file")
    ck.add_argument("trace")
    oc = sub.add_parser("oracle", help="exact optimal Steiner tree of a graph file")
    oc.add_argument("graph")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        if args.cmd == "run":
            return cmd_run(_config(args))
        if args.cmd == "fuzz":
            return cmd_fuzz(_config(args), args.n_seeds)
        if args.cmd == "check":
            return cmd_check(Path(args.trace))
        return cmd_oracle(Path(args.graph))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
