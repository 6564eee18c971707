"""Reader and printer for the .ksl system format.

Example::

    (addr-space 8 8)
    (space kernel)
    (array a 2 init 0 0)
    (syscall t (caps a) ((store a 1)))
"""

import re

from .lang import (ARRAY, KERNEL, PROC, USER, Assign, Call, Const, Fence, Ident,
                   Identifier, If, Load, Op, Reg, SCall, Skip, Store, Syscall,
                   While, check_system, make_system, max_label)
from .attacker import Observe, Poison, Spec, label_attacker
from .values import FALSE, NIL, TRUE, OPERATORS, Bool, format_value

ALIASES = {"≠": "!=", "∧": "and", "∨": "or", "¬": "not", "−": "-"}
KEYWORDS = {"true": TRUE, "false": FALSE, "nil": NIL}


class KslSyntaxError(ValueError):
    def __init__(self, msg, line=0, col=0):
        super().__init__(f"{line}:{col}: {msg}")
        self.line, self.col = line, col


class Atom(str):
    """A symbol or number token that remembers where it came from."""
    line = col = 0


class SList(list):
    line = col = 0


_TOKEN = re.compile(r"\s+|;[^\n]*|\(|\)|[^\s();]+")


def read_sexprs(text):
    stack = [SList()]
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        tok = m.group(0)
        if tok == "(":
            lst = SList()
            lst.line, lst.col = line, col
            stack.append(lst)
        elif tok == ")":
            if len(stack) == 1:
                raise KslSyntaxError("unbalanced ')'", line, col)
            done = stack.pop()
            stack[-1].append(done)
        elif not tok[0].isspace() and tok[0] != ";":
            a = Atom(tok)
            a.line, a.col = line, col
            stack[-1].append(a)
        nl = tok.count("\n")
        if nl:
            line += nl
            col = len(tok) - tok.rfind("\n")
        else:
            col += len(tok)
        pos = m.end()
    if len(stack) != 1:
        open_ = stack[-1]
        raise KslSyntaxError("unclosed '('", open_.line, open_.col)
    return stack[0]


def _where(node):
    return getattr(node, "line", 0), getattr(node, "col", 0)


def _err(msg, node):
    return KslSyntaxError(msg, *_where(node))


def _int(tok):
    if isinstance(tok, Atom) and re.fullmatch(r"-?\d+", tok):
        return int(tok)
    raise _err(f"expected an integer, got {tok!r}", tok)


def _name(tok):
    if isinstance(tok, Atom) and re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok) and tok not in KEYWORDS:
        return str(tok)
    raise _err(f"expected a name, got {tok!r}", tok)


def _literal(tok):
    if isinstance(tok, Atom):
        if tok in KEYWORDS:
            return KEYWORDS[tok]
        if re.fullmatch(r"-?\d+", tok):
            return int(tok)
    raise _err(f"expected a literal value, got {tok!r}", tok)


class _Reader:
    def __init__(self, declared, attacker=False):
        self.declared = declared
        self.attacker = attacker

    def expr(self, node):
        if isinstance(node, SList):
            if not node:
                raise _err("empty expression", node)
            op = ALIASES.get(node[0], node[0])
            if op not in OPERATORS:
                raise _err(f"unknown operator {node[0]!r}", node[0])
            arity = OPERATORS[op][0]
            if len(node) - 1 != arity:
                raise _err(f"operator {op!r} takes {arity} operands", node)
            return Op(str(op), tuple(self.expr(a) for a in node[1:]))
        if node in KEYWORDS or re.fullmatch(r"-?\d+", node):
            return Const(_literal(node))
        name = _name(node)
        return Ident(name) if name in self.declared else Reg(name)

    def block(self, node):
        if not isinstance(node, SList):
            raise _err("expected a command list", node)
        return tuple(self.instr(i) for i in node)

    def instr(self, node):
        if not isinstance(node, SList) or not node:
            raise _err("expected a command", node)
        head, rest = node[0], node[1:]

        def need(n, exact=True):
            if (len(rest) != n) if exact else (len(rest) < n):
                raise _err(f"'{head}' expects {n}{'' if exact else '+'} operands", node)

        if head == "skip":
            need(0)
            return Skip()
        if head == "fence":
            need(0)
            return Fence()
        if head == ":=":
            need(2)
            return Assign(self.reg(rest[0]), self.expr(rest[1]))
        if head == "load":
            need(2)
            return Load(self.reg(rest[0]), self.expr(rest[1]))
        if head == "store":
            need(2)
            return Store(self.expr(rest[0]), self.expr(rest[1]))
        if head in ("call", "scall"):
            need(1, exact=False)
            cls = Call if head == "call" else SCall
            return cls(self.expr(rest[0]), tuple(self.expr(a) for a in rest[1:]))
        if head == "sys":
            need(1, exact=False)
            return Syscall(_name(rest[0]), tuple(self.expr(a) for a in rest[1:]))
        if head == "if":
            if len(rest) not in (2, 3):
                raise _err("'if' expects a guard and one or two branches", node)
            orelse = self.block(rest[2]) if len(rest) == 3 else ()
            return If(self.expr(rest[0]), self.block(rest[1]), orelse)
        if head == "while":
            need(2)
            return While(self.expr(rest[0]), self.block(rest[1]))
        if self.attacker:
            if head == "spec":
                need(1)
                return Spec(self.block(rest[0]))
            if head == "poison":
                need(3)
                if rest[0] not in ("branch", "jump", "load"):
                    raise _err("poison kind must be branch, jump or load", rest[0])
                return Poison(str(rest[0]), _int(rest[1]), self.expr(rest[2]))
            if head == "observe":
                need(1)
                return Observe(self.reg(rest[0]))
        raise _err(f"unknown command {head!r}", head)

    def reg(self, tok):
        name = _name(tok)
        if name in self.declared:
            raise _err(f"{name!r} is an identifier, not a register", tok)
        return name


def parse_system(text, kappa_u=None, kappa_k=None, validate=True):
    """Parse .ksl text into a labelled System.

    ``kappa_u``/``kappa_k`` override any ``addr-space`` form.
    """
    forms = read_sexprs(text)
    declared = set()
    for f in forms:
        if not isinstance(f, SList) or not f:
            raise _err("expected a top-level form", f)
        if f[0] in ("array", "proc") and len(f) >= 2:
            declared.add(_name(f[1]))
    reader = _Reader(declared)
    space = USER
    idents, store, syscalls, caps = [], {}, {}, {}
    ku, kk = 8, 8
    for f in forms:
        head = f[0]
        if head == "space":
            if len(f) != 2 or f[1] not in (USER, KERNEL):
                raise _err("expected (space user|kernel)", f)
            space = str(f[1])
        elif head == "addr-space":
            if len(f) != 3:
                raise _err("expected (addr-space KU KK)", f)
            ku, kk = _int(f[1]), _int(f[2])
        elif head == "array":
            if len(f) < 3:
                raise _err("expected (array NAME SIZE init v...)", f)
            name, size = _name(f[1]), _int(f[2])
            vals = ()
            if len(f) > 3:
                if f[3] != "init":
                    raise _err("expected 'init' before initial values", f[3])
                vals = tuple(_literal(v) for v in f[4:])
                if len(vals) != size:
                    raise _err(f"array {name} has size {size} but {len(vals)} initial values", f)
            idents.append(Identifier(name, ARRAY, space, size))
            store[name] = vals or (0,) * size
        elif head == "proc":
            if len(f) != 3:
                raise _err("expected (proc NAME (cmd...))", f)
            name = _name(f[1])
            idents.append(Identifier(name, PROC, space, 1))
            store[name] = reader.block(f[2])
        elif head == "syscall":
            if len(f) != 4 or not isinstance(f[2], SList) or not f[2] or f[2][0] != "caps":
                raise _err("expected (syscall NAME (caps ID...) (cmd...))", f)
            name = _name(f[1])
            if name in syscalls:
                raise _err(f"syscall {name} defined twice", f)
            caps[name] = frozenset(_name(c) for c in f[2][1:])
            syscalls[name] = reader.block(f[3])
        else:
            raise _err(f"unknown top-level form {head!r}", head)
    if kappa_u is not None:
        ku = kappa_u
    if kappa_k is not None:
        kk = kappa_k
    system = make_system(idents, store, syscalls, caps, ku, kk)
    return check_system(system) if validate else system


def parse_cmd(text, system=None, attacker=True):
    """Parse a sequence of commands in the vocabulary of ``system``.

    Attacker instructions are accepted when ``attacker`` is set; loads,
    calls and control flow get fresh labels past the system's own.
    """
    declared = {i.name for i in system.identifiers} if system is not None else set()
    reader = _Reader(declared, attacker)
    cmd = tuple(reader.instr(f) for f in read_sexprs(text))
    start = max_label(system) if system is not None else 0
    return label_attacker(cmd, start)


# -- printing ------------------------------------------------------------------

def format_expr(e):
    t = type(e)
    if t is Const:
        return format_value(e.value)
    if t is Reg or t is Ident:
        return e.name
    return "(" + " ".join([e.op] + [format_expr(a) for a in e.args]) + ")"


def _fmt_block(cmd, indent):
    if not cmd:
        return "()"
    pad = " " * (indent + 1)
    lines = [_fmt_instr(i, indent + 1) for i in cmd]
    return "(" + ("\n" + pad).join(lines) + ")"


def _fmt_instr(ins, indent=0):
    t = type(ins)
    if t is Skip:
        return "(skip)"
    if t is Fence:
        return "(fence)"
    if t is Assign:
        return f"(:= {ins.reg} {format_expr(ins.expr)})"
    if t is Load:
        return f"(load {ins.reg} {format_expr(ins.addr)})"
    if t is Store:
        return f"(store {format_expr(ins.addr)} {format_expr(ins.value)})"
    if t is Call or t is SCall:
        word = "call" if t is Call else "scall"
        return "(" + " ".join([word] + [format_expr(a) for a in (ins.target,) + ins.args]) + ")"
    if t is Syscall:
        return "(" + " ".join(["sys", ins.name] + [format_expr(a) for a in ins.args]) + ")"
    pad = " " * (indent + 2)
    if t is If:
        return (f"(if {format_expr(ins.cond)}\n{pad}{_fmt_block(ins.then, indent + 2)}"
                f"\n{pad}{_fmt_block(ins.orelse, indent + 2)})")
    if t is While:
        return f"(while {format_expr(ins.cond)}\n{pad}{_fmt_block(ins.body, indent + 2)})"
    if t is Spec:
        return f"(spec\n{pad}{_fmt_block(ins.body, indent + 2)})"
    if t is Poison:
        return f"(poison {ins.kind} {ins.label} {format_expr(ins.arg)})"
    if t is Observe:
        return f"(observe {ins.reg})"
    raise TypeError(f"cannot print {ins!r}")


def format_cmd(cmd):
    return "\n".join(_fmt_instr(i) for i in cmd)


def _fmt_literal(v):
    if type(v) is Bool or v is NIL:
        return format_value(v)
    return str(v)


def print_system(system):
    out = [f"(addr-space {system.kappa_u} {system.kappa_k})"]
    space = None
    for i in system.identifiers:
        if i.space != space:
            space = i.space
            out.append(f"(space {space})")
        if i.kind == ARRAY:
            vals = " ".join(_fmt_literal(v) for v in system.store[i.name])
            out.append(f"(array {i.name} {i.size} init {vals})")
        else:
            out.append(f"(proc {i.name}\n  {_fmt_block(system.store[i.name], 2)})")
    for name, body in system.syscalls.items():
        caps = " ".join(sorted(system.caps.get(name, ())))
        caps = f"(caps {caps})" if caps else "(caps)"
        out.append(f"(syscall {name} {caps}\n  {_fmt_block(body, 2)})")
    return "\n".join(out) + "\n"
