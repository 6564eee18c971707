"""Victim language: expressions, instructions, identifiers and systems."""

from dataclasses import dataclass, field, replace

from .values import OPERATORS, Observation, is_value

USER = "user"
KERNEL = "kernel"
ARRAY = "array"
PROC = "proc"

MAX_ARGS = 8
ARG_REGS = tuple(f"x{i}" for i in range(1, MAX_ARGS + 1))
RET = "ret"


# -- expressions ------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Const:
    value: object


@dataclass(frozen=True, slots=True)
class Reg:
    name: str


@dataclass(frozen=True, slots=True)
class Ident:
    name: str


@dataclass(frozen=True, slots=True)
class Op:
    op: str
    args: tuple


# -- instructions ------------------------------------------------------------
# A command (Cmd) is a tuple of instructions; the empty tuple is nil.

@dataclass(frozen=True, slots=True)
class Skip:
    pass


@dataclass(frozen=True, slots=True)
class Assign:
    reg: str
    expr: object


@dataclass(frozen=True, slots=True)
class Load:
    reg: str
    addr: object
    label: object = None


@dataclass(frozen=True, slots=True)
class Store:
    addr: object
    value: object


@dataclass(frozen=True, slots=True)
class Call:
    target: object
    args: tuple = ()
    label: object = None


@dataclass(frozen=True, slots=True)
class SCall:
    """Call whose target is never speculated."""
    target: object
    args: tuple = ()
    label: object = None


@dataclass(frozen=True, slots=True)
class Syscall:
    name: str
    args: tuple = ()


@dataclass(frozen=True, slots=True)
class If:
    cond: object
    then: tuple
    orelse: tuple = ()
    label: object = None


@dataclass(frozen=True, slots=True)
class While:
    cond: object
    body: tuple
    label: object = None


@dataclass(frozen=True, slots=True)
class Fence:
    pass


LABELED = (Load, Call, SCall, If, While)


@dataclass(frozen=True, slots=True)
class Identifier:
    name: str
    kind: str      # ARRAY or PROC
    space: str     # USER or KERNEL
    size: int = 1

    @property
    def is_array(self):
        return self.kind == ARRAY

    @property
    def is_proc(self):
        return self.kind == PROC

    @property
    def is_kernel(self):
        return self.space == KERNEL


@dataclass(frozen=True)
class System:
    """Identifier table, initial store, syscall map and capability map.

    ``store`` maps arrays to tuples of values and procedures to commands.
    ``syscalls`` and ``caps`` are keyed by syscall name.
    """
    identifiers: tuple
    store: dict
    syscalls: dict
    caps: dict
    kappa_u: int = 8
    kappa_k: int = 8
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {i.name: i for i in self.identifiers})

    @property
    def size(self):
        return self.kappa_u + self.kappa_k

    def ident(self, name):
        return self._index[name]

    def __contains__(self, name):
        return name in self._index

    def names(self, kind=None, space=None):
        return [i.name for i in self.identifiers
                if (kind is None or i.kind == kind) and (space is None or i.space == space)]

    @property
    def kernel_ids(self):
        return self.names(space=KERNEL)

    @property
    def user_ids(self):
        return self.names(space=USER)

    def max_kernel_size(self):
        return max((i.size for i in self.identifiers if i.is_kernel), default=1)

    def with_(self, **changes):
        return replace(self, **changes)


def make_system(identifiers, store, syscalls, caps, kappa_u=8, kappa_k=8, relabel=True):
    """Build a System; missing array contents default to zeros."""
    identifiers = tuple(identifiers)
    full = {}
    for i in identifiers:
        if i.is_array:
            full[i.name] = tuple(store.get(i.name, (0,) * i.size))
        else:
            full[i.name] = tuple(store.get(i.name, ()))
    sysmap = {k: tuple(v) for k, v in syscalls.items()}
    capmap = {k: frozenset(caps.get(k, ())) for k in sysmap}
    system = System(identifiers, full, sysmap, capmap, kappa_u, kappa_k)
    return label_system(system) if relabel else system


# -- traversal ---------------------------------------------------------------

def expr_children(e):
    return e.args if type(e) is Op else ()


def walk_expr(e):
    yield e
    if type(e) is Op:
        for a in e.args:
            yield from walk_expr(a)


def instr_exprs(ins):
    t = type(ins)
    if t is Assign:
        return (ins.expr,)
    if t is Load:
        return (ins.addr,)
    if t is Store:
        return (ins.addr, ins.value)
    if t is Call or t is SCall:
        return (ins.target,) + tuple(ins.args)
    if t is Syscall:
        return tuple(ins.args)
    if t is If or t is While:
        return (ins.cond,)
    return ()


def sub_cmds(ins):
    t = type(ins)
    if t is If:
        return (ins.then, ins.orelse)
    if t is While:
        return (ins.body,)
    return ()


def walk(cmd):
    """All instructions of cmd, depth first in source order."""
    for ins in cmd:
        yield ins
        for sub in sub_cmds(ins):
            yield from walk(sub)


def ids(cmd):
    """Identifiers literally occurring in cmd."""
    out = set()
    for ins in walk(cmd):
        for e in instr_exprs(ins):
            for sub in walk_expr(e):
                if type(sub) is Ident:
                    out.add(sub.name)
    return out


def syscalls_of(cmd):
    return {ins.name for ins in walk(cmd) if type(ins) is Syscall}


def registers(cmd):
    """Registers read or written by cmd."""
    out = set()
    for ins in walk(cmd):
        if type(ins) in (Assign, Load):
            out.add(ins.reg)
        for e in instr_exprs(ins):
            for sub in walk_expr(e):
                if type(sub) is Reg:
                    out.add(sub.name)
    return out


def arity(cmd):
    """Number of leading argument registers the command reads."""
    n = 0
    for r in registers(cmd):
        if r in ARG_REGS:
            n = max(n, ARG_REGS.index(r) + 1)
    return n


class UnknownName(KeyError):
    pass


def refs(system, cmd, strict=True):
    """Least set of identifiers and syscalls reachable from cmd.

    Procedure and syscall bodies are closed over in full: the identifiers
    and syscalls they mention are both added. Unknown names raise unless
    ``strict`` is off, in which case they are skipped.
    """
    id_set, sys_set = set(), set()
    todo = [cmd]
    while todo:
        c = todo.pop()
        for name in ids(c):
            if name not in system:
                if strict:
                    raise UnknownName(f"unknown identifier {name!r}")
                continue
            if name not in id_set:
                id_set.add(name)
                if system.ident(name).is_proc:
                    todo.append(system.store[name])
        for name in syscalls_of(c):
            if name not in system.syscalls:
                if strict:
                    raise UnknownName(f"unknown syscall {name!r}")
                continue
            if name not in sys_set:
                sys_set.add(name)
                todo.append(system.syscalls[name])
    return id_set, sys_set


# -- labels --------------------------------------------------------------------

def _relabel_cmd(cmd, counter):
    out = []
    for ins in cmd:
        t = type(ins)
        if t is If:
            label = next(counter)
            then = _relabel_cmd(ins.then, counter)
            ins = If(ins.cond, then, _relabel_cmd(ins.orelse, counter), label)
        elif t is While:
            label = next(counter)
            ins = While(ins.cond, _relabel_cmd(ins.body, counter), label)
        elif t in (Load, Call, SCall):
            ins = replace(ins, label=next(counter))
        out.append(ins)
    return tuple(out)


def label_order(system):
    """Code bodies in the canonical labelling order."""
    for i in system.identifiers:
        if i.is_proc:
            yield ("proc", i.name), system.store[i.name]
    for name, body in system.syscalls.items():
        yield ("sys", name), body


def label_system(system):
    """Assign sequential labels: procedures first, then syscalls."""
    counter = iter(range(1, 1 << 30))
    store = dict(system.store)
    sysmap = dict(system.syscalls)
    for (kind, name), body in list(label_order(system)):
        new = _relabel_cmd(body, counter)
        if kind == "proc":
            store[name] = new
        else:
            sysmap[name] = new
    return system.with_(store=store, syscalls=sysmap)


def max_label(system):
    best = 0
    for _, body in label_order(system):
        for ins in walk(body):
            if type(ins) in LABELED and isinstance(ins.label, int):
                best = max(best, ins.label)
    return best


def find_labels(cmd, kind):
    """Labels of instructions of the given class(es) in source order."""
    kinds = kind if isinstance(kind, tuple) else (kind,)
    return [ins.label for ins in walk(cmd) if type(ins) in kinds]


# -- validation ----------------------------------------------------------------

def _check_exprs(cmd, where, system, diags):
    for ins in walk(cmd):
        for e in instr_exprs(ins):
            for sub in walk_expr(e):
                if type(sub) is Op:
                    if sub.op not in OPERATORS:
                        diags.append(f"{where}: unknown operator {sub.op!r}")
                    elif OPERATORS[sub.op][0] != len(sub.args):
                        diags.append(f"{where}: operator {sub.op!r} expects "
                                     f"{OPERATORS[sub.op][0]} operands")
                elif type(sub) is Const:
                    if not is_value(sub.value) or isinstance(sub.value, Observation):
                        diags.append(f"{where}: constant {sub.value!r} is not a plain value")
                elif type(sub) is Ident and sub.name not in system:
                    diags.append(f"{where}: unknown identifier {sub.name!r}")
        if type(ins) in (Call, SCall, Syscall) and len(ins.args) > MAX_ARGS:
            diags.append(f"{where}: more than {MAX_ARGS} arguments")
        if type(ins) is Syscall and ins.name not in system.syscalls:
            diags.append(f"{where}: unknown syscall {ins.name!r}")


def validate_system(system):
    """Return the list of every invariant violation (empty when well formed)."""
    diags = []
    names = [i.name for i in system.identifiers]
    for n in set(names):
        if names.count(n) > 1:
            diags.append(f"duplicate identifier {n!r}")
    for n in system.syscalls:
        if n in system:
            diags.append(f"syscall {n!r} shadows an identifier")
    for space, cap in ((USER, system.kappa_u), (KERNEL, system.kappa_k)):
        total = sum(i.size for i in system.identifiers if i.space == space)
        if total > cap:
            diags.append(f"{space} identifiers need {total} addresses, only {cap} available")
    for i in system.identifiers:
        if i.size < 1:
            diags.append(f"identifier {i.name!r} has size {i.size}")
        if i.is_proc and i.size != 1:
            diags.append(f"procedure {i.name!r} must have size 1")
        content = system.store.get(i.name)
        if content is None:
            diags.append(f"identifier {i.name!r} has no store entry")
            continue
        if i.is_array:
            if len(content) != i.size:
                diags.append(f"array {i.name!r} initialised with {len(content)} of {i.size} values")
            for v in content:
                if not is_value(v) or isinstance(v, Observation):
                    diags.append(f"array {i.name!r} holds non-plain value {v!r}")
        else:
            _check_exprs(content, f"proc {i.name}", system, diags)
            if i.space == USER:
                bad = sorted(n for n in ids(content) if n in system and system.ident(n).is_kernel)
                if bad:
                    diags.append(f"user procedure {i.name!r} is privileged: mentions {', '.join(bad)}")
    for extra in set(system.store) - set(names):
        diags.append(f"store entry {extra!r} has no identifier")
    for s, body in system.syscalls.items():
        _check_exprs(body, f"syscall {s}", system, diags)
        caps = system.caps.get(s, frozenset())
        for c in sorted(caps):
            if c not in system:
                diags.append(f"capability {c!r} of {s} is not an identifier")
            elif not system.ident(c).is_kernel:
                diags.append(f"capability {c!r} of {s} is not a kernel identifier")
        reach, _ = refs(system, body, strict=False)
        missing = sorted(reach - caps)
        if missing:
            diags.append(f"capability closure violated for {s}: missing {', '.join(missing)}")
    for s in system.caps:
        if s not in system.syscalls:
            diags.append(f"capabilities given for unknown syscall {s!r}")
    seen = {}
    for (kind, name), body in label_order(system):
        for ins in walk(body):
            if type(ins) in LABELED:
                if ins.label is None:
                    diags.append(f"{kind} {name}: unlabelled {type(ins).__name__}")
                elif ins.label in seen:
                    diags.append(f"{kind} {name}: label {ins.label} reused")
                else:
                    seen[ins.label] = name
    return diags


class InvalidSystem(ValueError):
    def __init__(self, diags):
        super().__init__("; ".join(diags))
        self.diagnostics = list(diags)


def check_system(system):
    diags = validate_system(system)
    if diags:
        raise InvalidSystem(diags)
    return system
