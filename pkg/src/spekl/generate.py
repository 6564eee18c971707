"""Grammar-directed random systems, kernel bodies and attacker programs."""

import random

from .lang import (ARRAY, KERNEL, PROC, USER, Assign, Call, Const, Fence, Ident,
                   Identifier, If, Load, Op, Reg, SCall, Skip, Store, Syscall, While,
                   arity, make_system, refs, validate_system)
from .values import FALSE, NIL, TRUE

SCRATCH = ("y", "z", "ret")


class Gen:
    """Random program pieces over a fixed vocabulary."""

    def __init__(self, rng, arrays=(), procs=(), syscalls=None, regs=("x1", "x2") + SCRATCH,
                 size=16, allow_syscalls=True):
        self.rng = rng
        self.arrays = list(arrays)          # (name, size)
        self.procs = list(procs)
        self.syscalls = dict(syscalls or {})  # name -> arity
        self.regs = list(regs)
        self.size = size
        self.allow_syscalls = allow_syscalls

    def const(self):
        r = self.rng.random()
        if r < 0.7:
            return Const(self.rng.choice((0, 1, 2, 1, 0, 3)))
        if r < 0.8:
            return Const(self.rng.randrange(self.size))
        if r < 0.9:
            return Const(self.rng.choice((TRUE, FALSE)))
        return Const(self.rng.choice((NIL, -1, self.size + 1)))

    def atom(self):
        r = self.rng.random()
        if r < 0.45:
            return Reg(self.rng.choice(self.regs))
        if r < 0.6 and (self.arrays or self.procs):
            return Ident(self.rng.choice([a for a, _ in self.arrays] + self.procs))
        return self.const()

    def expr(self, depth=2):
        if depth <= 0 or self.rng.random() < 0.5:
            return self.atom()
        op = self.rng.choice(("+", "+", "-", "*", "=", "!=", "<", "and", "or", "not"))
        if op == "not":
            return Op(op, (self.expr(depth - 1),))
        return Op(op, (self.expr(depth - 1), self.expr(depth - 1)))

    def address(self):
        """Mostly in-bounds array addresses, sometimes anything at all."""
        if self.arrays and self.rng.random() < 0.85:
            name, n = self.rng.choice(self.arrays)
            r = self.rng.random()
            if r < 0.4:
                return Ident(name)
            if r < 0.7:
                return Op("+", (Ident(name), Const(self.rng.randrange(n + 1))))
            return Op("+", (Ident(name), Reg(self.rng.choice(self.regs))))
        return self.expr(1)

    def target(self):
        if self.procs and self.rng.random() < 0.7:
            return Ident(self.rng.choice(self.procs))
        return Reg(self.rng.choice(self.regs))

    def args(self, n):
        return tuple(self.expr(1) for _ in range(n))

    def instr(self, budget, depth):
        rng = self.rng
        choices = ["assign", "assign", "load", "load", "store", "store", "skip", "if"]
        if self.procs or rng.random() < 0.3:
            choices.append("call")
        if depth < 2 and budget >= 3:
            choices += ["if", "loop"]
        if self.allow_syscalls and self.syscalls:
            choices.append("sys")
        if rng.random() < 0.1:
            choices.append("fence")
        kind = rng.choice(choices)
        reg = rng.choice(self.regs)
        if kind == "assign":
            return [Assign(reg, self.expr())], 1
        if kind == "skip":
            return [Skip()], 1
        if kind == "fence":
            return [Fence()], 1
        if kind == "load":
            return [Load(reg, self.address())], 1
        if kind == "store":
            return [Store(self.address(), self.expr(1))], 1
        if kind == "call":
            cls = Call if rng.random() < 0.85 else SCall
            return [cls(self.target(), self.args(rng.randrange(3)))], 1
        if kind == "sys":
            name = rng.choice(sorted(self.syscalls))
            return [Syscall(name, self.args(self.syscalls[name]))], 1
        if kind == "if":
            inner = max(1, budget - 1)
            then, n1 = self.block(rng.randint(0, min(3, inner)), depth + 1)
            orelse, n2 = self.block(rng.randint(0, min(2, max(0, inner - n1))), depth + 1)
            return [If(self.expr(), then, orelse)], 1 + n1 + n2
        # bounded loop over a fresh counter
        counter = "i%d" % depth
        body, n = self.block(rng.randint(1, min(3, budget - 2)), depth + 1)
        bound = Const(rng.randint(0, 3))
        step = Assign(counter, Op("+", (Reg(counter), Const(1))))
        loop = While(Op("<", (Reg(counter), bound)), body + (step,))
        return [Assign(counter, Const(0)), loop], 3 + n

    def block(self, n, depth=0):
        out, used = [], 0
        while used < n:
            ins, k = self.instr(n - used, depth)
            out += ins
            used += k
        return tuple(out), used


def random_kernel_system(rng, n_syscalls=2, n_kernel=3, kappa_u=4, kappa_k=8, theta=2,
                         body_size=6, user_side=True):
    """A valid random system; capabilities are the reference closure plus extras."""
    for _ in range(1000):
        sys = _attempt(rng, n_syscalls, n_kernel, kappa_u, kappa_k, theta, body_size, user_side)
        if not validate_system(sys):
            return sys
    raise RuntimeError("could not generate a valid system with these parameters")


def _attempt(rng, n_syscalls, n_kernel, kappa_u, kappa_k, theta, body_size, user_side):
    n_kernel = rng.randint(1, n_kernel)
    idents = []
    arrays, procs = [], []
    for k in range(n_kernel):
        if rng.random() < 0.6:
            size = rng.randint(1, theta)
            idents.append(Identifier(f"k{k}", ARRAY, KERNEL, size))
            arrays.append((f"k{k}", size))
        else:
            idents.append(Identifier(f"k{k}", PROC, KERNEL, 1))
            procs.append(f"k{k}")
    if user_side:
        ua = max(1, min(2, kappa_u - 1))
        idents.insert(0, Identifier("ua", ARRAY, USER, ua))
        idents.insert(1, Identifier("up", PROC, USER, 1))
    size = kappa_u + kappa_k
    store = {}
    # procedures only call earlier procedures, which bounds recursion
    for i, p in enumerate(procs):
        g = Gen(rng, arrays, procs[:i], size=size, allow_syscalls=False)
        store[p], _ = g.block(rng.randint(1, 3))
    for name, n in arrays:
        store[name] = tuple(rng.choice((0, 1, 2)) for _ in range(n))
    if user_side:
        store["ua"] = (0,) * ua
        store["up"] = (Assign("ret", Op("+", (Reg("x1"), Const(1)))),)
    syscalls = {}
    names = [f"s{i}" for i in range(rng.randint(1, n_syscalls))]
    for i, s in enumerate(names):
        g = Gen(rng, arrays, procs, syscalls={n: 1 for n in names[:i]}, size=size)
        syscalls[s], _ = g.block(rng.randint(1, body_size))
    caps = {}
    sys = make_system(idents, store, syscalls, {}, kappa_u, kappa_k)
    for s in names:
        reach, _ = refs(sys, sys.syscalls[s])
        extra = {n for n, _ in arrays + [(p, 1) for p in procs] if rng.random() < 0.2}
        caps[s] = {n for n in reach | extra if sys.ident(n).is_kernel}
    return sys.with_(caps={s: frozenset(c) for s, c in caps.items()})


def random_kernel_body(rng, system, size=12):
    """A random body over the system's kernel vocabulary."""
    arrays = [(i.name, i.size) for i in system.identifiers if i.is_kernel and i.is_array]
    procs = [i.name for i in system.identifiers if i.is_kernel and i.is_proc]
    g = Gen(rng, arrays, procs, syscalls={s: arity(b) for s, b in system.syscalls.items()},
            size=system.size)
    body, _ = g.block(rng.randint(1, size))
    return body


def random_attacker(rng, system, size=6):
    """An unprivileged user program exercising the system's syscalls."""
    arrays = [(i.name, i.size) for i in system.identifiers if i.space == USER and i.is_array]
    procs = [i.name for i in system.identifiers if i.space == USER and i.is_proc]
    sysar = {s: max(arity(b), 1) for s, b in system.syscalls.items()}
    g = Gen(rng, arrays, procs, syscalls=sysar, regs=("a", "b", "ret"), size=system.size)
    out = []
    for _ in range(rng.randint(1, size)):
        if sysar and rng.random() < 0.6:
            name = rng.choice(sorted(sysar))
            args = tuple(_attacker_arg(rng, system) for _ in range(sysar[name]))
            out.append(Syscall(name, args))
            if rng.random() < 0.3:
                out.append(Assign(rng.choice(("a", "b")), Reg("ret")))
        else:
            ins, _ = g.instr(3, 1)
            out += ins
    return tuple(out)


def _attacker_arg(rng, system):
    r = rng.random()
    if r < 0.5:
        return Const(rng.randrange(system.size))
    if r < 0.7:
        return Const(rng.choice((0, 1, 2)))
    if r < 0.8:
        return Reg(rng.choice(("a", "b", "ret")))
    if r < 0.9:
        return Const(rng.choice((TRUE, FALSE, NIL)))
    return Op("+", (Reg("ret"), Const(1)))


def seeded(seed):
    return random.Random(seed)
