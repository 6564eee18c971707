"""Directive-driven speculative semantics over buffered memories.

A speculative state is a tuple of configurations, top first, or the
``UNSAFE`` marker. Pushing a configuration keeps the one below it as the
point to roll back to.
"""

from dataclasses import dataclass
from typing import NamedTuple

from .classic import ERR, FUEL, UNSAFE, Terminated
from .lang import RET, Assign, Call, Fence, If, Load, SCall, Skip, Store, Syscall, While
from .layout import Placement, recover_store
from .machine import Frame, StuckError, code_of, eval_expr, frame, initial_regs, returned
from .values import (NONE_OBS, BranchObs, BtObs, JumpObs, MemObs, to_addr, to_bool)


# -- directives ----------------------------------------------------------------

class Directive:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class StepD(Directive):
    def __repr__(self):
        return "step"


@dataclass(frozen=True, slots=True)
class BtD(Directive):
    def __repr__(self):
        return "bt"


@dataclass(frozen=True, slots=True)
class Branch(Directive):
    label: int
    taken: bool

    def __repr__(self):
        return f"branch({self.label},{'T' if self.taken else 'F'})"


@dataclass(frozen=True, slots=True)
class Jump(Directive):
    label: int
    addr: int

    def __repr__(self):
        return f"jump({self.label},{self.addr})"


@dataclass(frozen=True, slots=True)
class LoadIdx(Directive):
    label: int
    index: int

    def __repr__(self):
        return f"load({self.label},{self.index})"


STEP = StepD()
BT = BtD()


def parse_directive(text):
    """Read 'step', 'bt', 'branch:L:1', 'jump:L:ADDR' or 'load:L:I'."""
    parts = text.strip().lower().split(":")
    kind = parts[0]
    if kind == "step" and len(parts) == 1:
        return STEP
    if kind == "bt" and len(parts) == 1:
        return BT
    if len(parts) != 3:
        raise ValueError(f"bad directive {text!r}")
    label, arg = int(parts[1]), parts[2]
    if kind == "branch":
        return Branch(label, arg in ("1", "t", "true"))
    if kind == "jump":
        return Jump(label, int(arg))
    if kind in ("load", "loadidx"):
        return LoadIdx(label, int(arg))
    raise ValueError(f"bad directive {text!r}")


# -- buffered memory -----------------------------------------------------------

def bufread(bm, addr, n=0):
    """The n-th most recent value for addr and whether it is stale."""
    buf, mem = bm
    stale = False
    for a, v in buf:
        if a == addr:
            if n == 0:
                return v, stale
            n -= 1
            stale = True
    return mem[addr], stale


def commit(bm):
    """Fold the buffer into memory; the newest write to an address wins."""
    buf, mem = bm
    if not buf:
        return mem
    out = list(mem)
    for a, v in reversed(buf):
        out[a] = v
    return tuple(out)


def entries_for(buf, addr):
    return sum(1 for a, _ in buf if a == addr)


# -- configurations ------------------------------------------------------------

class Live(NamedTuple):
    stack: tuple
    buf: tuple
    mem: tuple
    ms: bool


class ErrCfg(NamedTuple):
    ms: bool


class NotApplicable(StuckError):
    pass


def initial_state(cmd, regs=None, mode=None, mem=None, buf=(), ms=False):
    return (Live((frame(cmd, regs, mode),), tuple(buf), mem, ms),)


def syscall_state(pl, name, args=(), buf=(), mem=None, ms=False):
    mem = pl.memory if mem is None else mem
    return initial_state(pl.system.syscalls[name], initial_regs(args), name, mem, buf, ms)


def _bt(state):
    if len(state) < 2:
        return None
    top = state[0]
    if top.ms:
        return state[1:], BtObs(True)
    return (top,), BtObs(False)


def _callee(mem, add, args, regs, layout, mode):
    vals = [eval_expr(a, regs, layout) for a in args]
    return Frame(code_of(mem[add].body), initial_regs(vals), mode)


def try_step(pl, state, d):
    """Apply directive d; None when it is not applicable."""
    if state is UNSAFE or not state:
        return None
    if d is BT or type(d) is BtD:
        return _bt(state)
    top = state[0]
    if type(top) is ErrCfg:
        return None
    stack, buf, mem, ms = top
    f = stack[0]
    code, regs, mode = f
    below = stack[1:]
    tail = state[1:]
    step = type(d) is StepD
    layout = pl.layout
    if code is None:
        if step and below:
            caller = below[0]
            back = Frame(caller.code, returned(regs, caller.regs), caller.mode)
            return (Live((back,) + below[1:], buf, mem, ms),) + tail, NONE_OBS
        return None
    ins = code.instr
    t = type(ins)
    rest = code.advance()
    if t is Assign or t is Skip:
        if not step:
            return None
        if t is Assign:
            regs = regs.set(ins.reg, eval_expr(ins.expr, regs, layout))
        return (Live((Frame(rest, regs, mode),) + below, buf, mem, ms),) + tail, NONE_OBS
    if t is Fence:
        if not step or ms:
            return None
        committed = commit((buf, mem))
        return (Live((Frame(rest, regs, mode),) + below, (), committed, ms),) + tail, NONE_OBS
    if t is Load:
        idx = type(d) is LoadIdx and d.label == ins.label
        if not (step or idx):
            return None
        add = to_addr(eval_expr(ins.addr, regs, layout), pl.size)
        verdict = pl.access(mode, add)
        if verdict == "err":
            return (ErrCfg(ms),) + tail, NONE_OBS
        if verdict == "unsafe":
            return UNSAFE, MemObs(add)
        v, stale = bufread((buf, mem), add, 0 if step else d.index)
        new = Live((Frame(rest, regs.set(ins.reg, v), mode),) + below, buf, mem, ms or stale)
        if step:
            return (new,) + tail, MemObs(add)
        return (new,) + state, MemObs(add)
    if t is Store:
        if not step:
            return None
        add = to_addr(eval_expr(ins.addr, regs, layout), pl.size)
        verdict = pl.access(mode, add)
        if verdict == "err":
            return (ErrCfg(ms),) + tail, NONE_OBS
        if verdict == "unsafe":
            return UNSAFE, NONE_OBS
        v = eval_expr(ins.value, regs, layout)
        new = Live((Frame(rest, regs, mode),) + below, ((add, v),) + buf, mem, ms)
        return (new,) + tail, MemObs(add)
    if t is Call or t is SCall:
        target = to_addr(eval_expr(ins.target, regs, layout), pl.size)
        if step:
            verdict = pl.access(mode, target, fns=True)
            if verdict == "err":
                return (ErrCfg(ms),) + tail, NONE_OBS
            if verdict == "unsafe":
                return UNSAFE, JumpObs(target)
            callee = _callee(mem, target, ins.args, regs, layout, mode)
            new = Live((callee, Frame(rest, regs, mode)) + below, buf, mem, ms)
            return (new,) + tail, JumpObs(target)
        if t is SCall or type(d) is not Jump or d.label != ins.label:
            return None
        add = to_addr(d.addr, pl.size)
        wrong = ms or add != target
        verdict = pl.access(mode, add, fns=True)
        if verdict == "err":
            return (ErrCfg(wrong),) + state, NONE_OBS
        if verdict == "unsafe":
            return UNSAFE, JumpObs(add)
        callee = _callee(mem, add, ins.args, regs, layout, mode)
        new = Live((callee, Frame(rest, regs, mode)) + below, buf, mem, wrong)
        return (new,) + state, JumpObs(add)
    if t is Syscall:
        if not step:
            return None
        vals = [eval_expr(a, regs, layout) for a in ins.args]
        new_mode = ins.name if mode is None else mode
        callee = Frame(code_of(pl.system.syscalls[ins.name]), initial_regs(vals), new_mode)
        new = Live((callee, Frame(rest, regs, mode)) + below, buf, mem, ms)
        return (new,) + tail, NONE_OBS
    if t is If or t is While:
        guarded = type(d) is Branch and d.label == ins.label
        if not (step or guarded):
            return None
        actual = to_bool(eval_expr(ins.cond, regs, layout))
        taken = actual if step else d.taken
        if t is If:
            nxt = code_of(ins.then, rest) if taken else code_of(ins.orelse, rest)
        else:
            nxt = code_of(ins.body, code) if taken else rest
        if step:
            return (Live((Frame(nxt, regs, mode),) + below, buf, mem, ms),) + tail, BranchObs(taken)
        new = Live((Frame(nxt, regs, mode),) + below, buf, mem, ms or taken != actual)
        return (new,) + state, BranchObs(taken)
    raise StuckError(f"no speculative rule for {ins!r}")


def spec_step(pl, state, d):
    """One speculative transition: (state', observation)."""
    r = try_step(pl, state, d)
    if r is None:
        raise NotApplicable(f"{d!r} does not apply")
    return r


def kernel_probes(system):
    return range(system.kappa_u, system.size)


def enabled_directives(pl, state, probe_set=None, with_bt=True):
    """Every directive that fires on state, Jump limited to probe_set."""
    if state is UNSAFE or not state:
        return []
    out = []
    top = state[0]
    if type(top) is Live:
        stack, buf, mem, ms = top
        code, regs, mode = stack[0]
        if code is None:
            if len(stack) > 1:
                out.append(STEP)
        else:
            ins = code.instr
            t = type(ins)
            if t is Fence:
                if not ms:
                    out.append(STEP)
            elif t is Load:
                out.append(STEP)
                add = to_addr(eval_expr(ins.addr, regs, pl.layout), pl.size)
                n = entries_for(buf, add) if pl.access(mode, add) == "ok" else 0
                out.extend(LoadIdx(ins.label, i) for i in range(n + 1))
            elif t is Call:
                out.append(STEP)
                probes = kernel_probes(pl.system) if probe_set is None else probe_set
                out.extend(Jump(ins.label, a) for a in probes)
            elif t is If or t is While:
                out.extend((STEP, Branch(ins.label, True), Branch(ins.label, False)))
            else:
                out.append(STEP)
    if with_bt and len(state) >= 2:
        out.append(BT)
    return out


# -- whole runs ----------------------------------------------------------------

def state_outcome(pl, state):
    """Outcome of a state no further Step applies to, or None if running."""
    if state is UNSAFE:
        return UNSAFE
    if len(state) != 1:
        return None
    top = state[0]
    if type(top) is ErrCfg:
        return ERR if not top.ms else None
    stack, buf, mem, ms = top
    if ms or len(stack) != 1 or stack[0].code is not None:
        return None
    store = recover_store(pl.system, pl.layout, commit((buf, mem)))
    return Terminated(stack[0].regs.read(RET), store)


def record(d, obs, state):
    if state is UNSAFE:
        ms, height, blen = None, 0, 0
    else:
        top = state[0]
        ms, height = top.ms, len(state)
        blen = len(top.buf) if type(top) is Live else 0
    return {"directive": repr(d), "observation": repr(obs), "top-misspec": ms,
            "stack-height": height, "buffer-length": blen}


def _costs_fuel(state):
    top = state[0]
    if type(top) is not Live:
        return True
    code = top.stack[0].code
    return code is None or type(code.instr) is not Fence


def spec_run_steps_only(system, layout, cmd, regs=None, mode=None, buf=(), mem=None,
                        fuel=1000, trace=None):
    """Drive the speculative semantics with Step only.

    Returns (outcome, observations, final state).
    """
    pl = layout if isinstance(layout, Placement) else Placement(system, layout)
    mem = pl.memory if mem is None else mem
    state = initial_state(cmd, regs, mode, mem, buf)
    observations = []
    while True:
        out = state_outcome(pl, state)
        if out is not None:
            return out, observations, state
        if _costs_fuel(state):
            if fuel <= 0:
                return FUEL, observations, state
            fuel -= 1
        r = try_step(pl, state, STEP)
        if r is None:
            raise StuckError("Step-only run got stuck")
        state, obs = r
        observations.append(obs)
        if trace is not None:
            trace.append(record(STEP, obs, state))


def drive(pl, state, directives=(), fuel=1000, trace=None, fallback=True):
    """Apply the given directives in order, then (optionally) finish the run.

    Each requested directive must apply. Afterwards Step is used, falling
    back to Bt when Step is stuck. Returns (outcome-or-None, observations,
    final state, applied directives).
    """
    observations, applied = [], []
    for d in directives:
        state, obs = spec_step(pl, state, d)
        observations.append(obs)
        applied.append(d)
        if trace is not None:
            trace.append(record(d, obs, state))
        if state is UNSAFE:
            return UNSAFE, observations, state, applied
    while fallback:
        out = state_outcome(pl, state)
        if out is not None:
            return out, observations, state, applied
        if fuel <= 0:
            return FUEL, observations, state, applied
        fuel -= 1
        r = try_step(pl, state, STEP)
        d = STEP
        if r is None:
            r = try_step(pl, state, BT)
            d = BT
        if r is None:
            raise StuckError("no Step or Bt applies")
        state, obs = r
        observations.append(obs)
        applied.append(d)
        if trace is not None:
            trace.append(record(d, obs, state))
    return state_outcome(pl, state), observations, state, applied
