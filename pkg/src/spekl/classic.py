"""Non-speculative instrumented semantics and the evaluation function."""

from dataclasses import dataclass
from typing import NamedTuple

from .lang import RET, Assign, Call, Fence, If, Load, SCall, Skip, Store, Syscall, While
from .layout import Placement, compose, recover_store
from .machine import (Frame, Regs, StuckError, code_of, digest, eval_expr, frame,
                      initial_regs, returned)
from .values import to_addr, to_bool


class Running(NamedTuple):
    stack: tuple      # frames, top first
    mem: tuple


class Halt:
    """Err, Unsafe and FuelExhausted markers."""
    __slots__ = ("name", "key")

    def __init__(self, name, key):
        self.name, self.key = name, key

    def __repr__(self):
        return self.name

    def __reduce__(self):
        return self.key


ERR = Halt("Err", "ERR")
UNSAFE = Halt("Unsafe", "UNSAFE")
FUEL = Halt("FuelExhausted", "FUEL")


@dataclass(frozen=True)
class Terminated:
    value: object
    store: dict

    def __repr__(self):
        return f"Terminated({self.value!r})"


def is_final(cfg):
    return type(cfg) is Running and len(cfg.stack) == 1 and cfg.stack[0].code is None


def start(placement, cmd, regs=None, mode=None, mem=None):
    mem = placement.memory if mem is None else mem
    return Running((frame(cmd, regs, mode),), mem)


def _push_call(pl, stack, top, rest, target, args, mem, regs, layout):
    mode = top.mode
    add = to_addr(eval_expr(target, regs, layout), pl.size)
    verdict = pl.access(mode, add, fns=True)
    if verdict != "ok":
        return (UNSAFE if verdict == "unsafe" else ERR), None
    vals = [eval_expr(a, regs, layout) for a in args]
    callee = Frame(code_of(mem[add].body), initial_regs(vals), mode)
    return Running((callee, Frame(rest, regs, mode)) + stack[1:], mem), add


def step(pl, cfg):
    """One classic step. Returns (config, rule name)."""
    if type(cfg) is not Running:
        raise StuckError(f"cannot step {cfg!r}")
    stack, mem = cfg
    top = stack[0]
    code, regs, mode = top
    layout = pl.layout
    if code is None:
        if len(stack) == 1:
            raise StuckError("terminal configuration")
        caller = stack[1]
        back = Frame(caller.code, returned(regs, caller.regs), caller.mode)
        return Running((back,) + stack[2:], mem), "pop"
    ins = code.instr
    rest = code.advance()
    t = type(ins)
    if t is Assign:
        new = Frame(rest, regs.set(ins.reg, eval_expr(ins.expr, regs, layout)), mode)
        return Running((new,) + stack[1:], mem), "op"
    if t is Skip:
        return Running((Frame(rest, regs, mode),) + stack[1:], mem), "skip"
    if t is Fence:
        return Running((Frame(rest, regs, mode),) + stack[1:], mem), "fence"
    if t is Load:
        add = to_addr(eval_expr(ins.addr, regs, layout), pl.size)
        verdict = pl.access(mode, add)
        if verdict == "err":
            return ERR, "load-error"
        if verdict == "unsafe":
            return UNSAFE, "load-unsafe"
        new = Frame(rest, regs.set(ins.reg, mem[add]), mode)
        return Running((new,) + stack[1:], mem), "load"
    if t is Store:
        add = to_addr(eval_expr(ins.addr, regs, layout), pl.size)
        verdict = pl.access(mode, add)
        if verdict == "err":
            return ERR, "store-error"
        if verdict == "unsafe":
            return UNSAFE, "store-unsafe"
        val = eval_expr(ins.value, regs, layout)
        mem = mem[:add] + (val,) + mem[add + 1:]
        return Running((Frame(rest, regs, mode),) + stack[1:], mem), "store"
    if t is Call or t is SCall:
        out, _ = _push_call(pl, stack, top, rest, ins.target, ins.args, mem, regs, layout)
        name = "call" if t is Call else "scall"
        if out is ERR:
            return ERR, name + "-error"
        if out is UNSAFE:
            return UNSAFE, name + "-unsafe"
        return out, name
    if t is Syscall:
        vals = [eval_expr(a, regs, layout) for a in ins.args]
        body = pl.system.syscalls[ins.name]
        new_mode = ins.name if mode is None else mode
        callee = Frame(code_of(body), initial_regs(vals), new_mode)
        return Running((callee, Frame(rest, regs, mode)) + stack[1:], mem), "syscall"
    if t is If:
        if to_bool(eval_expr(ins.cond, regs, layout)):
            return Running((Frame(code_of(ins.then, rest), regs, mode),) + stack[1:], mem), "if-true"
        return Running((Frame(code_of(ins.orelse, rest), regs, mode),) + stack[1:], mem), "if-false"
    if t is While:
        if to_bool(eval_expr(ins.cond, regs, layout)):
            return Running((Frame(code_of(ins.body, code), regs, mode),) + stack[1:], mem), "while-true"
        return Running((Frame(rest, regs, mode),) + stack[1:], mem), "while-false"
    raise StuckError(f"no classic rule for {ins!r}")


def costs_fuel(cfg):
    """Fences are architecturally free, so they do not consume fuel.

    This keeps fuel accounting identical between a system and its
    fence-inserted transforms.
    """
    top = cfg.stack[0]
    return top.code is None or type(top.code.instr) is not Fence


def final_outcome(pl, cfg):
    if cfg is ERR or cfg is UNSAFE:
        return cfg
    regs = cfg.stack[0].regs
    return Terminated(regs.read(RET), recover_store(pl.system, pl.layout, cfg.mem))


def drive(pl, cfg, fuel, trace=None):
    """Step until final, Err, Unsafe or out of fuel. Returns (outcome, cfg)."""
    while True:
        if cfg is ERR or cfg is UNSAFE or is_final(cfg):
            return final_outcome(pl, cfg), cfg
        paid = costs_fuel(cfg)
        if paid:
            if fuel <= 0:
                return FUEL, cfg
            fuel -= 1
        before = cfg
        cfg, rule = step(pl, cfg)
        if trace is not None:
            trace.append(trace_record(before, rule))


def trace_record(cfg, rule):
    top = cfg.stack[0]
    return {"pc-digest": digest(top.code), "rule-name": rule,
            "mode": "user" if top.mode is None else f"kernel({top.mode})",
            "stack-depth": len(cfg.stack)}


def run(system, layout, entry, regs=None, mode=None, fuel=1000, store=None, trace=None):
    """Evaluate entry from a fresh memory; the classic evaluation function.

    ``store`` replaces the system's initial store when given; ``trace``
    is a list that receives one JSON-ready record per step.
    """
    pl = layout if isinstance(layout, Placement) else Placement(system, layout)
    mem = None
    if store is not None:
        mem = compose(system, pl.layout, store)
    cfg = start(pl, entry, regs if regs is not None else Regs(), mode, mem)
    outcome, _ = drive(pl, cfg, fuel, trace)
    return outcome


def run_syscall(system, layout, name, args=(), fuel=1000, store=None, mem=None, trace=None):
    """Evaluate a single syscall as the kernel runs it: mode kernel(name)."""
    pl = layout if isinstance(layout, Placement) else Placement(system, layout)
    if mem is None and store is not None:
        mem = compose(system, pl.layout, store)
    cfg = start(pl, system.syscalls[name], initial_regs(args), name, mem)
    return drive(pl, cfg, fuel, trace)
