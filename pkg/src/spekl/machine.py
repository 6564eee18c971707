"""Shared run-time structures: code pointers, register maps and frames."""

from typing import NamedTuple

from .lang import ARG_REGS, RET, Const, Ident, Op, Reg
from .values import NIL, apply_op


class Code:
    """Continuation: position ``i`` inside ``block``, then ``rest``.

    Blocks are compared by identity, which keeps hashing cheap; they are
    always shared with the System the code came from.
    """
    __slots__ = ("block", "i", "rest", "_h")

    def __init__(self, block, i, rest):
        self.block, self.i, self.rest = block, i, rest
        self._h = hash((id(block), i, rest))

    @property
    def instr(self):
        return self.block[self.i]

    def advance(self):
        if self.i + 1 < len(self.block):
            return Code(self.block, self.i + 1, self.rest)
        return self.rest

    def __eq__(self, other):
        return (self is other or (type(other) is Code and self._h == other._h
                and self.block is other.block and self.i == other.i and self.rest == other.rest))

    def __hash__(self):
        return self._h

    def remaining(self):
        out, c = [], self
        while c is not None:
            out.extend(c.block[c.i:])
            c = c.rest
        return tuple(out)

    def __repr__(self):
        return f"Code({len(self.remaining())} instrs)"


def code_of(cmd, rest=None):
    """Pointer to the start of cmd followed by rest."""
    return Code(cmd, 0, rest) if cmd else rest


def remaining(code):
    return () if code is None else code.remaining()


class Regs(dict):
    """Register map; absent registers read as nil. Treated as immutable."""
    __slots__ = ("_h",)

    def __hash__(self):
        try:
            return self._h
        except AttributeError:
            self._h = hash(frozenset(self.items()))
            return self._h

    def read(self, name):
        return self.get(name, NIL)

    def set(self, name, value):
        r = Regs(self)
        r[name] = value
        return r


EMPTY_REGS = Regs()


def initial_regs(args=()):
    """R0 with the arguments in x1..xn."""
    if len(args) > len(ARG_REGS):
        raise ValueError(f"at most {len(ARG_REGS)} arguments")
    return Regs({ARG_REGS[i]: v for i, v in enumerate(args)})


def returned(callee_regs, caller_regs):
    return caller_regs.set(RET, callee_regs.read(RET))


class Frame(NamedTuple):
    code: object      # Code or None
    regs: Regs
    mode: object      # None for user mode, else the syscall name


def frame(cmd, regs=None, mode=None):
    return Frame(code_of(cmd), regs if regs is not None else EMPTY_REGS, mode)


def eval_expr(e, regs, layout):
    t = type(e)
    if t is Reg:
        return regs.get(e.name, NIL)
    if t is Const:
        return e.value
    if t is Ident:
        return layout[e.name]
    if t is Op:
        return apply_op(e.op, [eval_expr(a, regs, layout) for a in e.args])
    raise TypeError(f"not an expression: {e!r}")


class StuckError(RuntimeError):
    """Raised when asked to step a configuration no rule applies to."""


def digest(obj):
    """Short stable-per-process digest used in traces."""
    return format(hash(obj) & 0xFFFFFFFF, "08x")
