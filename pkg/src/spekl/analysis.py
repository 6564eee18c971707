"""Bounded checkers for the safety and non-interference properties.

Every checker returns a ``Verdict``. Unsafe-style verdicts carry a
``Trace`` that ``replay`` re-executes deterministically.
"""

import enum
import itertools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import classic
from .attacker import ATTACKS, run_attacker
from .classic import ERR, FUEL, UNSAFE, Terminated
from .lang import USER, arity
from .layout import Placement, default_distribution, enumerate_layouts, sample_layout
from .speculative import (StepD, enabled_directives, kernel_probes, state_outcome, syscall_state,
                          try_step)
from .values import FALSE, NIL, TRUE


class Status(enum.Enum):
    SAFE = "Safe"
    UNSAFE = "Unsafe"
    BUDGET_EXCEEDED = "BudgetExceeded"
    NON_INTERFERING = "NonInterfering"
    INTERFERING = "Interfering"
    EQUIVALENT = "Equivalent"
    MISMATCH = "Mismatch"
    HOLDS = "Holds"
    VIOLATED = "Violated"


@dataclass(frozen=True)
class ExplorationBudget:
    max_steps: int = 40
    max_depth: int = 3            # configurations above the bottom one
    probe_set: tuple = None       # Jump targets; None means every kernel address
    max_directives: int = 24      # non-Step directives per path
    layout_cap: int = 10_000
    fuel: int = 200               # classic runs
    syscall_chain: int = 1        # classic syscalls run before the probed one
    with_bt: bool = False

    def __post_init__(self):
        for k in ("max_steps", "max_depth", "max_directives", "layout_cap", "fuel",
                  "syscall_chain"):
            if getattr(self, k) < 1:
                raise ValueError(f"budget {k} must be positive")

    def as_dict(self):
        d = dict(self.__dict__)
        d["probe_set"] = None if self.probe_set is None else list(self.probe_set)
        return d


@dataclass
class Trace:
    """How to reach a state: layout, syscall entries and directives.

    ``entry`` is a tuple of (syscall, args); all but the last run
    classically, the last one speculatively under ``directives``. An
    empty directive tuple with ``classic`` set means a classic run.
    """
    layout: object
    entry: tuple
    directives: tuple = ()
    observations: tuple = ()
    final: str = ""
    buffer: tuple = ()
    misspec: bool = False
    classic: bool = False

    def as_dict(self):
        return {"layout": self.layout.as_dict(),
                "entry": [[s, [repr(a) for a in args]] for s, args in self.entry],
                "directives": [repr(d) for d in self.directives],
                "observations": [repr(o) for o in self.observations],
                "final": self.final, "buffer": [[a, repr(v)] for a, v in self.buffer],
                "misspec": self.misspec, "classic": self.classic}


@dataclass
class Verdict:
    status: Status
    exhausted: bool = True
    witness: object = None
    stats: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status in (Status.SAFE, Status.NON_INTERFERING, Status.EQUIVALENT,
                               Status.HOLDS)

    def as_dict(self):
        w = self.witness
        if hasattr(w, "as_dict"):
            w = w.as_dict()
        return {"verdict": self.status.value, "exhausted": self.exhausted, "witness": w,
                "stats": self.stats, "notes": self.notes}


def outcome_tag(out):
    if out is None:
        return "Running"
    if isinstance(out, Terminated):
        return "Terminated"
    return repr(out)


# -- entries -------------------------------------------------------------------

def arg_domain(system):
    """Every address plus the non-integer values."""
    return tuple(range(system.size)) + (NIL, TRUE, FALSE)


def syscall_args(system, name, domain=None):
    domain = arg_domain(system) if domain is None else domain
    return itertools.product(domain, repeat=arity(system.syscalls[name]))


def _prefix_memory(pl, entry, fuel):
    """Run all but the last entry classically; memory or an outcome."""
    mem = pl.memory
    for name, args in entry[:-1]:
        out, cfg = classic.run_syscall(pl.system, pl, name, args, fuel=fuel, mem=mem)
        if not isinstance(out, Terminated):
            return None, out
        mem = cfg.mem
    return mem, None


def replay(system, trace, fuel=1000):
    """Re-execute a trace: (final tag, observations)."""
    pl = Placement(system, trace.layout)
    mem, stopped = _prefix_memory(pl, trace.entry, fuel)
    if stopped is not None:
        return outcome_tag(stopped), ()
    name, args = trace.entry[-1]
    if trace.classic:
        out, _ = classic.run_syscall(system, pl, name, args, fuel=fuel, mem=mem)
        return outcome_tag(out), ()
    state = syscall_state(pl, name, args, trace.buffer, mem, trace.misspec)
    obs = []
    for d in trace.directives:
        r = try_step(pl, state, d)
        if r is None:
            raise ValueError(f"directive {d!r} does not apply during replay")
        state, o = r
        obs.append(o)
    return outcome_tag(state_outcome(pl, state)), tuple(obs)


# -- speculative exploration -----------------------------------------------------

def _spec_cost(d):
    return 0 if type(d) is StepD else 1


def _path(node):
    ds, os_ = [], []
    while node is not None:
        d, o, node = node
        ds.append(d)
        os_.append(o)
    return tuple(reversed(ds)), tuple(reversed(os_))


class Exploration:
    """Result of one bounded DFS: witness path or None, and truncation."""
    __slots__ = ("path", "truncated", "states")

    def __init__(self, path, truncated, states):
        self.path, self.truncated, self.states = path, truncated, states


def explore(pl, state, budget, target=UNSAFE, seen=None):
    """Depth-first search for a directive sequence reaching ``target``.

    Bt is pruned unless the budget enables it; the path is reported as
    (directives, observations). ``seen`` may be shared between searches on
    one placement: a failed search has fully explored every state it records.
    """
    probes = budget.probe_set
    seen = {} if seen is None else seen
    truncated = False
    stack = [(state, 0, 0, None)]
    count = 0
    while stack:
        st, steps, spent, node = stack.pop()
        count += 1
        if state_outcome(pl, st) is not None:
            continue
        if steps >= budget.max_steps:
            truncated = True
            continue
        moves = enabled_directives(pl, st, probes, budget.with_bt)
        for d in reversed(moves):
            cost = spent + _spec_cost(d)
            if cost > budget.max_directives:
                truncated = True
                continue
            r = try_step(pl, st, d)
            if r is None:
                continue
            new, obs = r
            if new is target:
                return Exploration(_path((d, obs, node)), truncated, count)
            if len(new) - 1 > budget.max_depth:
                truncated = True
                continue
            prev = seen.get(new)
            if prev is not None and prev[0] <= steps + 1 and prev[1] <= cost:
                continue
            seen[new] = (steps + 1, cost)
            stack.append((new, steps + 1, cost, (d, obs, node)))
    return Exploration(None, truncated, count)


def _layouts(system, dist, budget):
    dist = dist or default_distribution(system)
    return [lay for lay, _ in enumerate_layouts(system, dist, budget.layout_cap)]


def _chains(system, n):
    """Prefix syscall sequences for classic memory set-up (no arguments)."""
    names = sorted(system.syscalls)
    out = [()]
    for k in range(1, n):
        out += [tuple((s, (0,) * arity(system.syscalls[s])) for s in combo)
                for combo in itertools.product(names, repeat=k)]
    return out


def check_kernel_safety(system, budget=None, dist=None, domain=None):
    """Classic safety over every layout and single-syscall invocation."""
    budget = budget or ExplorationBudget()
    fuel_hits = 0
    runs = 0
    for lay in _layouts(system, dist, budget):
        pl = Placement(system, lay)
        for name in sorted(system.syscalls):
            for args in syscall_args(system, name, domain):
                out, _ = classic.run_syscall(system, pl, name, args, fuel=budget.fuel)
                runs += 1
                if out is UNSAFE:
                    w = Trace(lay, ((name, args),), final="Unsafe", classic=True)
                    return Verdict(Status.UNSAFE, True, w, {"runs": runs})
                if out is FUEL:
                    fuel_hits += 1
    stats = {"runs": runs, "fuel-exhausted": fuel_hits}
    if fuel_hits:
        return Verdict(Status.SAFE, False, None, stats,
                       ["some runs exhausted fuel before terminating"])
    return Verdict(Status.SAFE, True, None, stats)


def check_spec_kernel_safety(system, budget=None, dist=None, domain=None, entries=None):
    """Bounded directive exploration from every syscall's initial state.

    ``entries`` optionally restricts the (syscall, args) pairs explored.
    """
    budget = budget or ExplorationBudget()
    truncated = False
    explored = 0
    for lay in _layouts(system, dist, budget):
        pl = Placement(system, lay)
        seen = {}
        todo = entries if entries is not None else [
            (n, a) for n in sorted(system.syscalls) for a in syscall_args(system, n, domain)]
        for prefix in _chains(system, budget.syscall_chain):
            mem, stopped = _prefix_memory(pl, prefix + (None,), budget.fuel)
            if stopped is not None:
                continue
            for name, args in todo:
                state = syscall_state(pl, name, args, (), mem)
                res = explore(pl, state, budget, seen=seen)
                explored += res.states
                truncated |= res.truncated
                if res.path is not None:
                    ds, os_ = res.path
                    w = Trace(lay, prefix + ((name, tuple(args)),), ds, os_, "Unsafe")
                    return Verdict(Status.UNSAFE, not truncated, w, {"states": explored})
    stats = {"states": explored}
    if truncated:
        return Verdict(Status.BUDGET_EXCEEDED, False, None, stats,
                       ["no Unsafe state found, but the budget cut exploration short"])
    return Verdict(Status.SAFE, True, None, stats)


# -- non-interference ------------------------------------------------------------

def _ni_class(out):
    """Outcomes up to the relation merging Err with Unsafe."""
    if out is ERR or out is UNSAFE:
        return ("fail",)
    if out is FUEL:
        return ("fuel",)
    return ("ok", out.value, tuple(sorted(out.store.items())))


def check_layout_ni(system, syscall, layouts=None, regs_list=None, fuel=200, dist=None,
                    stores=None):
    """Classic layout non-interference of one syscall.

    Every argument vector in ``regs_list`` (default: the full sweep) must
    give related outcomes under all ``layouts``. Pairs where one side
    exhausts fuel are reported in the stats, not as interference.
    """
    if layouts is None:
        layouts = [lay for lay, _ in enumerate_layouts(system, dist or default_distribution(system))]
    regs_list = list(syscall_args(system, syscall)) if regs_list is None else regs_list
    stores = [None] if stores is None else stores
    fuel_pairs = []
    placed = [Placement(system, lay) for lay in layouts]
    for store in stores:
        for args in regs_list:
            outs = []
            for pl in placed:
                mem = None
                if store is not None:
                    from .layout import compose
                    mem = compose(system, pl.layout, store)
                out, _ = classic.run_syscall(system, pl, syscall, args, fuel=fuel, mem=mem)
                outs.append(out)
            base = _ni_class(outs[0])
            for pl, out in zip(placed[1:], outs[1:]):
                c = _ni_class(out)
                if "fuel" in (c[0], base[0]):
                    if c != base:
                        fuel_pairs.append((args, placed[0].layout, pl.layout))
                    continue
                if c != base:
                    w = {"syscall": syscall, "args": [repr(a) for a in args],
                         "layouts": [placed[0].layout.as_dict(), pl.layout.as_dict()],
                         "outcomes": [repr(outs[0]), repr(out)]}
                    return Verdict(Status.INTERFERING, True, w)
    stats = {"fuel-pairs": len(fuel_pairs)}
    return Verdict(Status.NON_INTERFERING, not fuel_pairs, None, stats)


def _lockstep(p1, p2, s1, s2, budget):
    """Search for a directive sequence that tells the two layouts apart."""
    seen = set()
    truncated = False
    stack = [(s1, s2, 0, None)]
    while stack:
        a, b, steps, node = stack.pop()
        if steps >= budget.max_steps:
            truncated = True
            continue
        moves = list(dict.fromkeys(
            enabled_directives(p1, a, budget.probe_set, True)
            + enabled_directives(p2, b, budget.probe_set, True)))
        for d in moves:
            ra, rb = try_step(p1, a, d), try_step(p2, b, d)
            if ra is None and rb is None:
                continue
            if ra is None or rb is None or ra[1] != rb[1]:
                ds, _ = _path((d, None, node))
                return ds, (ra and ra[1], rb and rb[1]), truncated
            na, nb = ra[0], rb[0]
            if na is UNSAFE or nb is UNSAFE:
                continue
            if len(na) - 1 > budget.max_depth or len(nb) - 1 > budget.max_depth:
                truncated = True
                continue
            key = (na, nb)
            if key in seen:
                continue
            seen.add(key)
            stack.append((na, nb, steps + 1, (d, ra[1], node)))
    return None, None, truncated


def check_sc_layout_ni(system, syscall, layouts=None, budget=None, dist=None, regs_list=None):
    """Side-channel layout non-interference over bounded directive sequences.

    Bt is always enabled here since its observation is part of the trace.
    """
    budget = budget or ExplorationBudget()
    if layouts is None:
        layouts = _layouts(system, dist, budget)
    regs_list = list(syscall_args(system, syscall)) if regs_list is None else regs_list
    placed = [Placement(system, lay) for lay in layouts]
    truncated = False
    base = placed[0]
    for args in regs_list:
        s_base = syscall_state(base, syscall, args)
        for other in placed[1:]:
            ds, obs, cut = _lockstep(base, other, s_base, syscall_state(other, syscall, args),
                                     budget)
            truncated |= cut
            if ds is not None:
                w = {"syscall": syscall, "args": [repr(a) for a in args],
                     "layouts": [base.layout.as_dict(), other.layout.as_dict()],
                     "directives": [repr(d) for d in ds],
                     "last-observations": [repr(o) for o in obs]}
                return Verdict(Status.INTERFERING, True, w)
    if truncated:
        return Verdict(Status.NON_INTERFERING, False, None, {},
                       ["no distinguishing sequence within budget"])
    return Verdict(Status.NON_INTERFERING, True)


# -- semantic equivalence --------------------------------------------------------

def _visible(system, out):
    """Outcome restricted to user identifiers and kernel arrays."""
    if not isinstance(out, Terminated):
        return out
    keep = {i.name for i in system.identifiers if i.space == USER or i.is_array}
    return ("ok", out.value, tuple(sorted((k, v) for k, v in out.store.items() if k in keep)))


def equivalence_cases(system, trials, seed, dist=None, size=6):
    """Deterministic (program, layout) pairs for fuzzing."""
    from .generate import random_attacker
    rng = random.Random(seed)
    dist = dist or default_distribution(system)
    out = []
    for _ in range(trials):
        prog = random_attacker(rng, system, size)
        out.append((prog, sample_layout(system, dist, rng)))
    return out


def run_cases(system, cases, fuel):
    outs = []
    placements = {}
    for prog, lay in cases:
        pl = placements.get(lay)
        if pl is None:
            pl = placements[lay] = Placement(system, lay)
        outs.append(classic.run(system, pl, prog, fuel=fuel))
    return outs


def check_semantic_equivalence(sys1, sys2, trials=1000, seed=0, fuel=500, dist=None,
                               cases=None, baseline=None):
    """Fuzz both systems with the same attacker programs and layouts.

    ``baseline`` may hold sys1's outcomes on ``cases`` to skip rerunning it.
    """
    if set(sys1.syscalls) != set(sys2.syscalls) or sys1.user_ids != sys2.user_ids:
        raise ValueError("systems differ in syscall names or user identifiers")
    cases = equivalence_cases(sys1, trials, seed, dist) if cases is None else cases
    outs1 = run_cases(sys1, cases, fuel) if baseline is None else baseline
    outs2 = run_cases(sys2, cases, fuel)
    fuel_pairs, asym = 0, 0
    for (prog, lay), o1, o2 in zip(cases, outs1, outs2):
        if o1 is FUEL or o2 is FUEL:
            fuel_pairs += 1
            if o1 is not o2:
                asym += 1
            continue
        if _visible(sys1, o1) != _visible(sys2, o2):
            from .ksl import format_cmd
            w = {"program": format_cmd(prog), "layout": lay.as_dict(),
                 "outcomes": [repr(o1), repr(o2)]}
            return Verdict(Status.MISMATCH, True, w, {"trials": len(cases)})
    stats = {"trials": len(cases), "fuel-pairs": fuel_pairs, "asymmetric-fuel": asym}
    notes = [f"{asym} programs exhausted fuel on one side only"] if asym else []
    return Verdict(Status.EQUIVALENT, not asym, None, stats, notes)


# -- safety imposition -----------------------------------------------------------

def buffer_menu(system, pl):
    """Write buffers over kernel arrays with values from a small menu."""
    values = [0, 1, system.kappa_u, system.kappa_u + 1]
    values += [pl.layout[i.name] for i in system.identifiers if i.is_kernel and i.is_proc]
    values = list(dict.fromkeys(values))
    addrs = sorted(pl.arrays_k)
    out = [()]
    out += [((a, v),) for a in addrs for v in values]
    # one stale entry under a fresh one, per address
    out += [((a, values[1]), (a, v)) for a in addrs for v in values if v != values[1]]
    return out


def check_safety_imposition(system, budget=None, dist=None, domain=None, buffers=None,
                            misspec=(False,)):
    """Every speculative Unsafe must have a classic Unsafe counterpart.

    The classic run starts from the committed buffer with the same
    syscall and arguments.
    """
    budget = budget or ExplorationBudget()
    truncated = False
    states = 0
    for lay in _layouts(system, dist, budget):
        pl = Placement(system, lay)
        seen = {}
        menu = buffer_menu(system, pl) if buffers is None else buffers
        for name in sorted(system.syscalls):
            for args in syscall_args(system, name, domain):
                for buf in menu:
                    mem = pl.memory
                    if buf:
                        from .speculative import commit
                        mem = commit((buf, pl.memory))
                    out, _ = classic.run_syscall(system, pl, name, args, fuel=budget.fuel,
                                                 mem=mem)
                    if out is UNSAFE:
                        continue
                    for ms in misspec:
                        state = syscall_state(pl, name, args, buf, pl.memory, ms)
                        res = explore(pl, state, budget, seen=seen)
                        states += res.states
                        truncated |= res.truncated
                        if res.path is not None:
                            ds, os_ = res.path
                            w = Trace(lay, ((name, tuple(args)),), ds, os_, "Unsafe", buf, ms)
                            return Verdict(Status.VIOLATED, True, w,
                                           {"states": states, "classic": repr(out)})
    stats = {"states": states}
    if truncated:
        return Verdict(Status.HOLDS, False, None, stats,
                       ["no violation found, but the budget cut exploration short"])
    return Verdict(Status.HOLDS, True, None, stats)


# -- probabilities -----------------------------------------------------------------

@dataclass
class Estimate:
    estimate: float
    radius: float
    unsafe: int
    trials: int

    @property
    def interval(self):
        return wilson(self.unsafe, self.trials)


def wilson(k, n, z=1.959963984540054):
    """Wilson score interval (low, high) for k successes in n trials."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, centre - half), min(1.0, centre + half)


def estimate_unsafe_probability(system, attacker, dist=None, trials=10_000, seed=0, fuel=10_000):
    """Monte Carlo over sampled layouts; radius is the Wilson half-width."""
    dist = dist or default_distribution(system)
    rng = random.Random(seed)
    cache = {}
    hits = 0
    for _ in range(trials):
        lay = sample_layout(system, dist, rng)
        r = cache.get(lay)
        if r is None:
            r = cache[lay] = run_attacker(system, lay, attacker, fuel).unsafe
        hits += r
    lo, hi = wilson(hits, trials)
    return Estimate(hits / trials if trials else 0.0, (hi - lo) / 2, hits, trials)


def exact_unsafe_probability(system, attacker, dist=None, fuel=10_000, cap=100_000):
    dist = dist or default_distribution(system)
    total = Fraction(0)
    for lay, p in enumerate_layouts(system, dist, cap):
        if run_attacker(system, lay, attacker, fuel).unsafe:
            total += p
    return total


# -- attack matrix -----------------------------------------------------------------

# probed entry of each built-in attack as a function of the probe y
ATTACK_ENTRIES = {
    "attack-a": ("s", lambda y: (FALSE, y)),
    "attack-b": ("t", lambda y: (y,)),
    "attack-c": ("u", lambda y: (0,)),
}


@dataclass
class Cell:
    succeeded: bool
    layouts_unsafe: int
    layouts: int
    explored_unsafe: bool
    exhausted: bool

    def as_dict(self):
        return dict(self.__dict__)


def attack_cell(system, attack, budget=None, dist=None):
    """Run the attack under every layout and explore its syscall family."""
    budget = budget or ExplorationBudget()
    build = ATTACKS[attack]
    name, args_for = ATTACK_ENTRIES[attack]
    prog = build(system)
    layouts = _layouts(system, dist, budget)
    n_unsafe = 0
    explored = False
    exhausted = True
    probes = budget.probe_set if budget.probe_set is not None else kernel_probes(system)
    for lay in layouts:
        pl = Placement(system, lay)
        n_unsafe += run_attacker(system, pl, prog).unsafe
        if explored:
            continue
        for args in dict.fromkeys(args_for(y) for y in probes):
            res = explore(pl, syscall_state(pl, name, args), budget)
            exhausted &= not res.truncated
            if res.path is not None:
                explored = True
                break
    return Cell(n_unsafe > 0 or explored, n_unsafe, len(layouts), explored, exhausted)


def table1(system, budget=None, dist=None, passes=None):
    """{pass: {attack: Cell}} over the transformation passes."""
    from .transforms import PASSES
    passes = passes or list(PASSES)
    out = {}
    for p in passes:
        t = PASSES[p](system)
        out[p] = {a: attack_cell(t, a, budget, dist) for a in ATTACKS}
    return out
