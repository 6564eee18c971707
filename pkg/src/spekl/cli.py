"""The ``spekl`` command line."""

import argparse
import json
import random
import sys
import time
from pathlib import Path

from . import analysis
from .analysis import ExplorationBudget, Status
from .attacker import ATTACKS, run_attacker
from .cases import find_case
from .classic import FUEL, UNSAFE, Terminated, run_syscall
from .ksl import KslSyntaxError, parse_cmd, parse_system, print_system
from .lang import InvalidSystem
from .layout import (DistributionError, Layout, Placement, check_layout, default_distribution,
                     delta_exact, delta_lower_bound, sample_layout, user_layout)
from .speculative import StuckError, drive, parse_directive, syscall_state
from .transforms import PASSES
from .values import FALSE, NIL, TRUE, format_value

EXIT_OK, EXIT_USAGE, EXIT_UNSAFE, EXIT_BUDGET = 0, 1, 2, 3

BAD = {Status.UNSAFE, Status.INTERFERING, Status.MISMATCH, Status.VIOLATED}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="layout / fuzzing seed")
    p.add_argument("--kappa-u", type=int, default=d(None), help="user address-space size")
    p.add_argument("--kappa-k", type=int, default=d(None), help="kernel address-space size")
    p.add_argument("--theta", type=int, default=d(None), help="layout slot size")
    p.add_argument("--fuel", type=int, default=d(1000), help="step bound for runs")
    p.add_argument("--json", action="store_true", default=d(False), help="JSON output")


def _budget_args(p):
    p.add_argument("--max-steps", type=int, default=40)
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--max-directives", type=int, default=24)
    p.add_argument("--layout-cap", type=int, default=10_000)
    p.add_argument("--probes", help="comma-separated Jump targets (default: all kernel addresses)")
    p.add_argument("--with-bt", action="store_true", help="do not prune backtracking")


def build_parser():
    top = Parser(prog="spekl", description="Toy-kernel safety lab: classic and "
                 "speculative semantics, layout randomization and fence passes.")
    _common(top, False)
    sub = top.add_subparsers(dest="command", parser_class=Parser, required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _common(p, True)
        return p

    p = cmd("run", "classic run of a syscall or an attacker program")
    p.add_argument("file")
    p.add_argument("--sys", help="syscall to run in kernel mode")
    p.add_argument("--args", nargs="*", default=[], help="syscall arguments")
    p.add_argument("--entry", help="user program in ksl syntax (attacker forms allowed)")
    p.add_argument("--layout", help="kernel placement, e.g. fn=8,a=12")
    p.add_argument("--trace", choices=["json"], help="emit one JSON line per step")

    p = cmd("spec-run", "speculative run of a syscall under directives")
    p.add_argument("file")
    p.add_argument("--sys", required=True)
    p.add_argument("--args", nargs="*", default=[])
    p.add_argument("--directives", default="", help="e.g. branch:1:1,jump:2:8,step")
    p.add_argument("--buffer", default="", help="initial write buffer, e.g. 12:0,13:1")
    p.add_argument("--misspec", action="store_true", help="start mis-speculating")
    p.add_argument("--layout")
    p.add_argument("--trace", choices=["json"])

    p = cmd("attack", "run a built-in or bundled attacker")
    p.add_argument("file")
    p.add_argument("attack", help="attack-a, attack-b, attack-c or a case attacker name")
    p.add_argument("--transform", choices=sorted(PASSES), default="identity")
    p.add_argument("--layout")
    p.add_argument("--all-layouts", action="store_true", help="report over every layout")
    p.add_argument("--lo", type=int)
    p.add_argument("--hi", type=int)

    p = cmd("transform", "apply a fence pass and print the result")
    p.add_argument("file")
    p.add_argument("--pass", dest="pass_", choices=sorted(set(PASSES) - {"identity"}),
                   required=True)
    p.add_argument("-o", "--output", help="write here instead of stdout")

    p = cmd("check", "decide a property within a budget")
    p.add_argument("file")
    p.add_argument("--property", required=True,
                   choices=["ks", "sks", "lni", "sclni", "equiv", "imposes", "delta"])
    p.add_argument("--sys", help="syscall for lni / sclni (default: first)")
    p.add_argument("--transform", choices=sorted(PASSES), default="identity")
    p.add_argument("--against", choices=sorted(PASSES), default="identity",
                   help="equiv: compare the transformed system with this pass")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--arg-values", help="comma-separated argument sweep (default: all)")
    _budget_args(p)

    p = cmd("table1", "attack matrix over the fence passes")
    p.add_argument("file", nargs="?", default="sigma6")
    _budget_args(p)

    p = cmd("delta", "probability bound that a kernel probe misses")
    p.add_argument("file")
    p.add_argument("--attacker", help="also estimate Pr[unsafe] for this attacker")
    p.add_argument("--trials", type=int, default=10_000)
    return top


# -- helpers -----------------------------------------------------------------------

def load_system(a):
    path = Path(a.file)
    case = None
    if path.exists():
        text = path.read_text()
    else:
        case = find_case(a.file)
        if case is None:
            raise UsageError(f"no such file or bundled case: {a.file}")
        text = case.source()
    system = parse_system(text, a.kappa_u, a.kappa_k)
    return system, case


def parse_value(tok):
    low = tok.lower()
    if low in ("true", "false", "nil"):
        return {"true": TRUE, "false": FALSE, "nil": NIL}[low]
    try:
        return int(tok)
    except ValueError:
        raise UsageError(f"bad value {tok!r}") from None


def resolve_value(system, layout, tok):
    """An argument: literal, or an identifier name meaning its address."""
    if tok in system:
        return layout[tok]
    return parse_value(tok)


def theta_of(a, system, case):
    return a.theta or (case.theta if case and case.theta else None)


def dist_of(a, system, case):
    return default_distribution(system, theta_of(a, system, case))


def pick_layout(a, system, case):
    if getattr(a, "layout", None):
        bases = user_layout(system)
        for part in a.layout.split(","):
            name, _, addr = part.partition("=")
            if name.strip() not in system:
                raise UsageError(f"unknown identifier {name!r} in --layout")
            bases[name.strip()] = int(addr)
        lay = Layout(bases)
        problems = check_layout(system, lay)
        if problems:
            raise UsageError("; ".join(problems))
        return lay
    return sample_layout(system, dist_of(a, system, case), random.Random(a.seed))


def budget_of(a):
    probes = None
    if a.probes:
        probes = tuple(int(x) for x in a.probes.split(","))
    return ExplorationBudget(a.max_steps, a.max_depth, probes, a.max_directives, a.layout_cap,
                             a.fuel, with_bt=a.with_bt)


def outcome_text(out):
    if isinstance(out, Terminated):
        return f"Terminated ret={format_value(out.value)}"
    return repr(out)


def outcome_code(out):
    if out is UNSAFE:
        return EXIT_UNSAFE
    if out is FUEL:
        return EXIT_BUDGET
    return EXIT_OK


def outcome_json(out):
    if isinstance(out, Terminated):
        return {"outcome": "Terminated", "ret": format_value(out.value),
                "store": {k: _jsonable(v) for k, v in out.store.items()}}
    return {"outcome": repr(out)}


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, int) and not isinstance(v, bool):
        return v
    return format_value(v) if not hasattr(v, "body") else f"<proc {v.name}>"


def emit(a, report, text):
    if a.json:
        print(json.dumps(report, sort_keys=True))
    else:
        print(text)


# -- subcommands --------------------------------------------------------------------

def cmd_run(a):
    system, case = load_system(a)
    lay = pick_layout(a, system, case)
    trace = [] if a.trace else None
    if a.sys:
        if a.sys not in system.syscalls:
            raise UsageError(f"unknown syscall {a.sys!r}")
        args = tuple(resolve_value(system, lay, t) for t in a.args)
        out, _ = run_syscall(system, lay, a.sys, args, fuel=a.fuel, trace=trace)
        obs = []
    else:
        entry = a.entry or "(skip)"
        if case and entry in case.attackers:
            entry = case.attackers[entry]
        prog = parse_cmd(entry, system)
        r = run_attacker(system, lay, prog, fuel=a.fuel, trace=trace)
        out, obs = r.outcome, r.observations
    for rec in trace or ():
        print(json.dumps(rec, sort_keys=True))
    report = {"layout": lay.as_dict(), **outcome_json(out),
              "observations": [repr(o) for o in obs]}
    emit(a, report, f"layout {lay!r}\n{outcome_text(out)}")
    return outcome_code(out)


def cmd_spec_run(a):
    system, case = load_system(a)
    if a.sys not in system.syscalls:
        raise UsageError(f"unknown syscall {a.sys!r}")
    lay = pick_layout(a, system, case)
    pl = Placement(system, lay)
    args = tuple(resolve_value(system, lay, t) for t in a.args)
    buf = []
    for part in filter(None, a.buffer.split(",")):
        addr, _, v = part.partition(":")
        buf.append((int(addr), parse_value(v)))
    ds = [parse_directive(d) for d in filter(None, a.directives.split(","))]
    state = syscall_state(pl, a.sys, args, tuple(buf), ms=a.misspec)
    trace = [] if a.trace else None
    try:
        out, obs, _, applied = drive(pl, state, ds, fuel=a.fuel, trace=trace)
    except StuckError as e:
        raise UsageError(str(e)) from None
    for rec in trace or ():
        print(json.dumps(rec, sort_keys=True))
    report = {"layout": lay.as_dict(), **outcome_json(out),
              "directives": [repr(d) for d in applied],
              "observations": [repr(o) for o in obs]}
    text = (f"layout {lay!r}\n{outcome_text(out)}\n"
            f"observations {' '.join(repr(o) for o in obs)}")
    emit(a, report, text)
    return outcome_code(out)


def _attacker_for(a, system, case):
    if a.attack in ATTACKS:
        return ATTACKS[a.attack](system, lo=a.lo, hi=a.hi)
    if case and a.attack in case.attackers:
        return parse_cmd(case.attackers[a.attack], system)
    raise UsageError(f"unknown attack {a.attack!r}")


def cmd_attack(a):
    system, case = load_system(a)
    system = PASSES[a.transform](system)
    prog = _attacker_for(a, system, case)
    if a.all_layouts:
        layouts = [lay for lay, _ in analysis.enumerate_layouts(system, dist_of(a, system, case))]
    else:
        layouts = [pick_layout(a, system, case)]
    rows = []
    for lay in layouts:
        r = run_attacker(system, lay, prog, fuel=max(a.fuel, 100_000))
        rows.append({"layout": lay.as_dict(), "outcome": repr(r.outcome) if not isinstance(
            r.outcome, Terminated) else "Terminated", "discovered": r.discovered(),
            "observations": [repr(o) for o in r.observations], "steps": r.steps})
    hits = sum(row["outcome"] == "Unsafe" for row in rows)
    report = {"attack": a.attack, "transform": a.transform, "layouts": len(rows),
              "unsafe": hits, "runs": rows}
    lines = []
    for row in rows:
        lines.append(f"layout {row['layout']}: {row['outcome']}, discovered address "
                     f"{row['discovered']}")
        if len(rows) == 1:
            lines.append("observations " + " ".join(row["observations"]))
    lines.append(f"{a.attack} on {a.transform}: unsafe in {hits}/{len(rows)} layouts")
    emit(a, report, "\n".join(lines))
    return EXIT_UNSAFE if hits else EXIT_OK


def cmd_transform(a):
    system, _ = load_system(a)
    text = print_system(PASSES[a.pass_](system))
    if a.output:
        Path(a.output).write_text(text)
        if a.json:
            print(json.dumps({"pass": a.pass_, "output": a.output}))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _verdict_code(v):
    if v.status in BAD:
        return EXIT_UNSAFE
    if v.status is Status.BUDGET_EXCEEDED:
        return EXIT_BUDGET
    return EXIT_OK


def cmd_check(a):
    system, case = load_system(a)
    base = system
    system = PASSES[a.transform](system)
    budget = budget_of(a)
    dist = dist_of(a, system, case)
    domain = None
    if a.arg_values:
        domain = tuple(parse_value(t) for t in a.arg_values.split(","))
    elif case is not None:
        domain = case.domain
    name = a.sys or (case.syscall if case and case.syscall else None)
    if name is None and system.syscalls:
        name = next(iter(system.syscalls))
    t0 = time.perf_counter()
    p = a.property
    if p == "ks":
        v = analysis.check_kernel_safety(system, budget, dist, domain)
    elif p == "sks":
        v = analysis.check_spec_kernel_safety(system, budget, dist, domain)
    elif p == "imposes":
        v = analysis.check_safety_imposition(system, budget, dist, domain)
    elif p in ("lni", "sclni"):
        if name not in system.syscalls:
            raise UsageError("the system has no such syscall")
        regs = list(analysis.syscall_args(system, name, domain))
        if p == "lni":
            v = analysis.check_layout_ni(system, name, regs_list=regs, fuel=a.fuel, dist=dist)
        else:
            v = analysis.check_sc_layout_ni(system, name, budget=budget, dist=dist,
                                            regs_list=regs)
    elif p == "equiv":
        other = PASSES[a.against](base)
        v = analysis.check_semantic_equivalence(other, system, a.trials, a.seed,
                                                a.fuel, dist)
    else:  # delta
        return _delta_report(a, system, case, dist)
    elapsed = time.perf_counter() - t0
    report = {**v.as_dict(), "property": p, "budget": budget.as_dict(),
              "elapsed": round(elapsed, 3)}
    text = f"{p}: {v.status.value}" + ("" if v.exhausted else " (not exhaustive)")
    if v.witness is not None:
        w = v.witness.as_dict() if hasattr(v.witness, "as_dict") else v.witness
        text += "\nwitness " + json.dumps(w, sort_keys=True)
    for n in v.notes:
        text += f"\nnote: {n}"
    emit(a, report, text)
    return _verdict_code(v)


def _delta_report(a, system, case, dist):
    lower = delta_lower_bound(system, dist)
    exact = delta_exact(system, dist) if dist.support_size(system) <= 100_000 else None
    report = {"delta-lower-bound": str(lower), "delta-exact": str(exact) if exact else None,
              "unsafe-bound": str(1 - lower)}
    text = f"delta >= {lower} (exact {exact}); Pr[unsafe] <= {1 - lower}"
    attacker = getattr(a, "attacker", None)
    if attacker:
        src = case.attackers.get(attacker, attacker) if case else attacker
        prog = parse_cmd(src, system)
        est = analysis.estimate_unsafe_probability(system, prog, dist, a.trials, a.seed)
        report.update({"estimate": est.estimate, "radius": est.radius, "trials": est.trials})
        text += f"\nestimated Pr[unsafe] = {est.estimate:.4f} +/- {est.radius:.4f}"
    emit(a, report, text)
    return EXIT_OK


def cmd_delta(a):
    system, case = load_system(a)
    return _delta_report(a, system, case, dist_of(a, system, case))


def cmd_table1(a):
    system, case = load_system(a)
    budget = budget_of(a)
    dist = dist_of(a, system, case)
    t0 = time.perf_counter()
    table = analysis.table1(system, budget, dist)
    elapsed = time.perf_counter() - t0
    report = {"rows": {p: {k: c.as_dict() for k, c in row.items()} for p, row in table.items()},
              "budget": budget.as_dict()}
    attacks = list(ATTACKS)
    lines = ["pass      " + "  ".join(f"{k:>9}" for k in attacks)]
    for p, row in table.items():
        marks = ("succeeded" if row[k].succeeded else "blocked" for k in attacks)
        lines.append(f"{p:<9} " + "  ".join(f"{m:>9}" for m in marks))
    lines.append(f"({elapsed:.2f}s)")
    emit(a, report, "\n".join(lines))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "spec-run": cmd_spec_run, "attack": cmd_attack,
            "transform": cmd_transform, "check": cmd_check, "table1": cmd_table1,
            "delta": cmd_delta}


def main(argv=None):
    a = build_parser().parse_args(argv)
    try:
        return COMMANDS[a.command](a)
    except KslSyntaxError as e:
        print(f"spekl: parse error: {e}", file=sys.stderr)
    except InvalidSystem as e:
        print(f"spekl: invalid system: {e}", file=sys.stderr)
    except (UsageError, DistributionError, ValueError, OSError) as e:
        print(f"spekl: {e}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
