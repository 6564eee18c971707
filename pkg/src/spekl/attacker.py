"""Attacker language and hybrid configurations.

An attacker is an ordinary user-mode command that may also use three
extra instructions: ``Spec`` runs a victim command speculatively,
``Poison`` queues a directive for the predictors and ``Observe`` pops
the most recent side-channel observation into a register.
"""

import itertools
from dataclasses import dataclass, replace
from typing import NamedTuple

from . import classic
from .classic import ERR, FUEL, UNSAFE, Running, Terminated
from .lang import (RET, Assign, Call, Const, If, Load, Op, Reg, SCall, Syscall, While,
                   find_labels, max_label)
from .layout import Placement, compose, recover_store
from .machine import Frame, StuckError, eval_expr, frame, EMPTY_REGS
from .speculative import (BT, STEP, Branch, ErrCfg, Jump, Live, LoadIdx, commit,
                          record, try_step)
from .values import FALSE, NIL, TRUE, to_addr, to_bool


@dataclass(frozen=True, slots=True)
class Spec:
    body: tuple


@dataclass(frozen=True, slots=True)
class Poison:
    """Queue a directive; ``arg`` is evaluated when Poison runs.

    kind is 'branch' (arg: truth), 'jump' (arg: address) or 'load'
    (arg: buffer index).
    """
    kind: str
    label: int
    arg: object


@dataclass(frozen=True, slots=True)
class Observe:
    reg: str


ATTACKER_INSTRS = (Spec, Poison, Observe)


class Plain(NamedTuple):
    stack: tuple
    mem: tuple
    directives: tuple     # head = next to use
    observations: tuple   # head = most recent


class Hybrid(NamedTuple):
    spec: tuple
    stack: tuple
    directives: tuple
    observations: tuple


def _directive(pl, ins, regs):
    v = eval_expr(ins.arg, regs, pl.layout)
    if ins.kind == "branch":
        return Branch(ins.label, to_bool(v))
    if ins.kind == "jump":
        return Jump(ins.label, to_addr(v, pl.size))
    if ins.kind == "load":
        return LoadIdx(ins.label, max(v, 0) if type(v) is int else 0)
    raise ValueError(f"unknown poison kind {ins.kind!r}")


def _spec_exit(pl, cfg):
    """Spec-Term, Spec-Error and Spec-Unsafe; None if none applies."""
    spec = cfg.spec
    if spec is UNSAFE:
        return UNSAFE
    if len(spec) != 1:
        return None
    top = spec[0]
    if type(top) is ErrCfg:
        return ERR if not top.ms else None
    stack, buf, mem, ms = top
    if ms or len(stack) != 1 or stack[0].code is not None:
        return None
    resume = cfg.stack[0]
    back = Frame(resume.code, stack[0].regs, resume.mode)
    return Plain((back,) + cfg.stack[1:], commit((buf, mem)), cfg.directives, cfg.observations)


def attacker_step(pl, cfg):
    """One attacker step: (config, observation, directive used).

    Observation and directive are None for steps outside spec sections.
    """
    if type(cfg) is Hybrid:
        out = _spec_exit(pl, cfg)
        if out is not None:
            return out, None, None
        ds = cfg.directives
        used, r = None, None
        if ds:
            r = try_step(pl, cfg.spec, ds[0])
            if r is not None:
                used, ds = ds[0], ds[1:]
        if r is None:
            used, r = STEP, try_step(pl, cfg.spec, STEP)
        if r is None:
            used, r = BT, try_step(pl, cfg.spec, BT)
        if r is None:
            raise StuckError("speculative section is stuck")
        spec, obs = r
        if spec is UNSAFE:
            return UNSAFE, obs, used
        return Hybrid(spec, cfg.stack, ds, (obs,) + cfg.observations), obs, used
    if type(cfg) is not Plain:
        raise StuckError(f"cannot step {cfg!r}")
    stack, mem, ds, os_ = cfg
    top = stack[0]
    code, regs, mode = top
    if code is not None:
        ins = code.instr
        t = type(ins)
        rest = code.advance()
        if t is Poison:
            d = _directive(pl, ins, regs)
            return Plain((Frame(rest, regs, mode),) + stack[1:], mem, (d,) + ds, os_), None, None
        if t is Observe:
            if os_:
                v, os_ = os_[0], os_[1:]
            else:
                v = NIL
            return Plain((Frame(rest, regs.set(ins.reg, v), mode),) + stack[1:], mem, ds, os_), None, None
        if t is Spec:
            live = Live((frame(ins.body, regs, mode),), (), mem, False)
            return Hybrid((live,), (Frame(rest, regs, mode),) + stack[1:], ds, os_), None, None
    out, _ = classic.step(pl, Running(stack, mem))
    if out is ERR or out is UNSAFE:
        return out, None, None
    return Plain(out.stack, out.mem, ds, os_), None, None


def is_final(cfg):
    return type(cfg) is Plain and len(cfg.stack) == 1 and cfg.stack[0].code is None


@dataclass
class AttackRun:
    outcome: object
    observations: list
    steps: int
    regs: dict = None
    trace: list = None

    @property
    def unsafe(self):
        return self.outcome is UNSAFE

    def discovered(self):
        """Address of the last jump observation, if any."""
        for o in reversed(self.observations):
            if type(o).__name__ == "JumpObs":
                return o.addr
        return None


def run_attacker(system, layout, attacker, fuel=100_000, store=None, trace=None):
    pl = layout if isinstance(layout, Placement) else Placement(system, layout)
    mem = pl.memory if store is None else compose(system, pl.layout, store)
    cfg = Plain((frame(attacker, EMPTY_REGS, None),), mem, (), ())
    log = []
    steps = 0
    while True:
        if cfg is ERR or cfg is UNSAFE:
            return AttackRun(cfg, log, steps, None, trace)
        if is_final(cfg):
            regs = cfg.stack[0].regs
            out = Terminated(regs.read(RET), recover_store(system, pl.layout, cfg.mem))
            return AttackRun(out, log, steps, dict(regs), trace)
        if steps >= fuel:
            return AttackRun(FUEL, log, steps, None, trace)
        cfg, obs, used = attacker_step(pl, cfg)
        steps += 1
        if obs is not None:
            log.append(obs)
            if trace is not None:
                trace.append(record(used, obs, cfg.spec if type(cfg) is Hybrid else UNSAFE))


# -- built-in attacks ----------------------------------------------------------

def _c(v):
    return Const(v)


def _r(n):
    return Reg(n)


def _drain(reg="x"):
    """x := observe; while x is neither a jump nor nil: x := observe."""
    keep = Op("not", (Op("or", (Op("isjump", (_r(reg),)), Op("=", (_r(reg), _c(NIL))))),))
    return (Observe(reg), While(keep, (Observe(reg),)))


def probing_loop(system, body_for_probe, lo=None, hi=None):
    """y ranges over [lo, hi); body_for_probe(y_expr) gives the loop body."""
    lo = system.kappa_u if lo is None else lo
    hi = system.size if hi is None else hi
    body = tuple(body_for_probe(_r("y"))) + _drain() + (
        Assign("y", Op("+", (_r("y"), _c(1)))),)
    loop = While(Op("<", (_r("y"), _c(hi))), body)
    return label_attacker((Assign("y", _c(lo)), loop), max_label(system))


def label_attacker(cmd, start):
    """Fresh labels past ``start`` for the attacker's own instructions.

    Poison keeps the victim label it targets.
    """
    counter = itertools.count(start + 1)

    def go(cmd):
        out = []
        for ins in cmd:
            t = type(ins)
            if t is Spec:
                ins = Spec(go(ins.body))
            elif t is If:
                label = next(counter)
                ins = If(ins.cond, go(ins.then), go(ins.orelse), label)
            elif t is While:
                label = next(counter)
                ins = While(ins.cond, go(ins.body), label)
            elif t in (Load, Call, SCall):
                ins = replace(ins, label=next(counter))
            out.append(ins)
        return tuple(out)

    return go(cmd)


def first_label(system, syscall, kind):
    labels = find_labels(system.syscalls[syscall], kind)
    if not labels:
        raise ValueError(f"syscall {syscall} has no instruction of kind {kind!r}")
    return labels[0]


def attack_a(system, syscall="s", lo=None, hi=None):
    """Branch-predictor probing: force the guarded call for each probe y."""
    label = first_label(system, syscall, If)
    return probing_loop(system, lambda y: (
        Poison("branch", label, _c(TRUE)),
        Spec((Syscall(syscall, (_c(FALSE), y)),)),
    ), lo, hi)


def attack_b(system, syscall="t", lo=None, hi=None):
    """Store-to-load probing: read the overwritten value of the buffer slot."""
    label = first_label(system, syscall, Load)
    return probing_loop(system, lambda y: (
        Poison("load", label, _c(1)),
        Spec((Syscall(syscall, (y,)),)),
    ), lo, hi)


def attack_c(system, syscall="u", lo=None, hi=None):
    """Branch-target probing: redirect the call to each probe y."""
    # transformed systems keep the label on the scall
    label = first_label(system, syscall, (Call, SCall))
    return probing_loop(system, lambda y: (
        Poison("jump", label, y),
        Spec((Syscall(syscall, (_c(0),)),)),
    ), lo, hi)


def spec_probe(system, syscall, args, guard=None):
    """poison(branch T); spec(if guard then syscall else skip); x := observe."""
    guard = _c(FALSE) if guard is None else guard
    label = max_label(system) + 1
    body = (If(guard, (Syscall(syscall, tuple(args)),), (), label),)
    return (Poison("branch", label, _c(TRUE)), Spec(body), Observe("x"))


ATTACKS = {"attack-a": attack_a, "attack-b": attack_b, "attack-c": attack_c}

ATTACK_SYSCALL = {"attack-a": "s", "attack-b": "t", "attack-c": "u"}
