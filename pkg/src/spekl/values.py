"""Run-time values and the operator table.

Integers are plain Python ints kept in signed 64-bit range. Booleans get
their own class so that ``TRUE`` never compares equal to ``1``.
"""

from dataclasses import dataclass

INT_BITS = 64
_MOD = 1 << INT_BITS
_HALF = 1 << (INT_BITS - 1)


def wrap(n):
    """Wrap an int into the signed 64-bit range."""
    return ((n + _HALF) % _MOD) - _HALF


class Bool:
    __slots__ = ("value",)

    def __init__(self, value):
        object.__setattr__(self, "value", bool(value))

    def __setattr__(self, name, value):
        raise AttributeError("Bool is immutable")

    def __eq__(self, other):
        return type(other) is Bool and other.value == self.value

    def __hash__(self):
        return hash(("bool", self.value))

    def __bool__(self):
        return self.value

    def __repr__(self):
        return "true" if self.value else "false"


TRUE = Bool(True)
FALSE = Bool(False)


def boolean(b):
    return TRUE if b else FALSE


class _Nil:
    __slots__ = ()
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "nil"

    def __reduce__(self):
        return (_Nil, ())


NIL = _Nil()


# Observations double as values: an attacker can keep them in registers.

class Observation:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class NoneObs(Observation):
    def __repr__(self):
        return "onone"


@dataclass(frozen=True, slots=True)
class BranchObs(Observation):
    taken: bool

    def __repr__(self):
        return f"obranch({'T' if self.taken else 'F'})"


@dataclass(frozen=True, slots=True)
class MemObs(Observation):
    addr: int

    def __repr__(self):
        return f"omem({self.addr})"


@dataclass(frozen=True, slots=True)
class JumpObs(Observation):
    addr: int

    def __repr__(self):
        return f"ojump({self.addr})"


@dataclass(frozen=True, slots=True)
class BtObs(Observation):
    misspec: bool

    def __repr__(self):
        return f"obt({'T' if self.misspec else 'F'})"


NONE_OBS = NoneObs()


def is_int(v):
    return type(v) is int


def is_value(v):
    return type(v) is int or type(v) is Bool or v is NIL or isinstance(v, Observation)


def to_bool(v):
    """Total cast to a truth value; only Bool and Int carry truth."""
    t = type(v)
    if t is Bool:
        return v.value
    if t is int:
        return v != 0
    return False


def to_addr(v, size):
    """Total cast to an address in [0, size)."""
    if type(v) is int:
        if 0 <= v < size:
            return v
        return v % size
    return 0


def _arith(fn):
    def op(a, b):
        if type(a) is int and type(b) is int:
            return wrap(fn(a, b))
        return NIL
    return op


def _logic(fn):
    def op(a, b):
        if type(a) is Bool and type(b) is Bool:
            return boolean(fn(a.value, b.value))
        return NIL
    return op


def _lt(a, b):
    if type(a) is int and type(b) is int:
        return boolean(a < b)
    return NIL


def _not(a):
    if type(a) is Bool:
        return boolean(not a.value)
    return NIL


def _isjump(a):
    return boolean(type(a) is JumpObs)


# tag -> (arity, implementation). Equality is defined on every value pair.
OPERATORS = {
    "+": (2, _arith(lambda a, b: a + b)),
    "-": (2, _arith(lambda a, b: a - b)),
    "*": (2, _arith(lambda a, b: a * b)),
    "=": (2, lambda a, b: boolean(a == b)),
    "!=": (2, lambda a, b: boolean(a != b)),
    "<": (2, _lt),
    "and": (2, _logic(lambda a, b: a and b)),
    "or": (2, _logic(lambda a, b: a or b)),
    "not": (1, _not),
    "isjump": (1, _isjump),
}


def apply_op(tag, args):
    return OPERATORS[tag][1](*args)


def format_value(v):
    if v is NIL:
        return "nil"
    if type(v) is Bool:
        return "true" if v.value else "false"
    return repr(v)
