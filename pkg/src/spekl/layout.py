"""Layouts, composed memories, randomisation schemes and the delta bounds."""

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

from .lang import USER, refs


class Layout:
    """Immutable mapping from identifier name to base address."""
    __slots__ = ("_bases", "_key")

    def __init__(self, bases):
        b = dict(bases)
        object.__setattr__(self, "_bases", b)
        object.__setattr__(self, "_key", tuple(sorted(b.items())))

    def __setattr__(self, name, value):
        raise AttributeError("Layout is immutable")

    def __getitem__(self, name):
        return self._bases[name]

    def __contains__(self, name):
        return name in self._bases

    def __iter__(self):
        return iter(self._bases)

    def __len__(self):
        return len(self._bases)

    def get(self, name, default=None):
        return self._bases.get(name, default)

    def items(self):
        return self._bases.items()

    def __eq__(self, other):
        return isinstance(other, Layout) and other._key == self._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        inner = ", ".join(f"{k}={v}" for k, v in sorted(self._bases.items(), key=lambda kv: kv[1]))
        return f"Layout({inner})"

    def as_dict(self):
        return dict(self._bases)


class _Empty:
    __slots__ = ()

    def __repr__(self):
        return "."

    def __reduce__(self):
        return "EMPTY"


EMPTY = _Empty()


@dataclass(frozen=True, eq=True)
class Routine:
    """Procedure code as it sits in memory."""
    name: str
    body: tuple

    def __hash__(self):
        return hash(self.name)


def footprint(system, layout, name):
    base = layout[name]
    ident = system.ident(name)
    if ident.is_proc:
        return range(base, base + 1)
    return range(base, base + ident.size)


def check_layout(system, layout):
    """List the ways a layout fails to be injective and space separated."""
    problems = []
    owner = {}
    for i in system.identifiers:
        if i.name not in layout:
            problems.append(f"{i.name} not placed")
            continue
        lo, hi = (0, system.kappa_u) if i.space == USER else (system.kappa_u, system.size)
        for a in footprint(system, layout, i.name):
            if not lo <= a < hi:
                problems.append(f"{i.name} escapes its space at {a}")
            if a in owner:
                problems.append(f"{i.name} overlaps {owner[a]} at {a}")
            owner[a] = i.name
    return problems


def compose(system, layout, store=None):
    """Memory holding the store's content at the layout's addresses."""
    store = system.store if store is None else store
    mem = [EMPTY] * system.size
    for i in system.identifiers:
        base = layout[i.name]
        content = store[i.name]
        if i.is_proc:
            mem[base] = Routine(i.name, content)
        else:
            mem[base:base + i.size] = content
    return tuple(mem)


def memory_update(mem, addr, value):
    if isinstance(value, (tuple, Routine)):
        raise TypeError("memory updates never write code")
    return mem[:addr] + (value,) + mem[addr + 1:]


def recover_store(system, layout, mem):
    store = {}
    for i in system.identifiers:
        base = layout[i.name]
        if i.is_proc:
            store[i.name] = mem[base].body
        else:
            vals = mem[base:base + i.size]
            assert EMPTY not in vals, f"hole inside array {i.name}"
            store[i.name] = tuple(vals)
    return store


class Placement:
    """A system placed in memory under one layout.

    Precomputes the address sets the step rules consult.
    """

    def __init__(self, system, layout):
        self.system = system
        self.layout = layout
        self.size = system.size
        arr_u, arr_k, fn_u, fn_k = set(), set(), set(), set()
        for i in system.identifiers:
            fp = footprint(system, layout, i.name)
            if i.is_array:
                (arr_k if i.is_kernel else arr_u).update(fp)
            else:
                (fn_k if i.is_kernel else fn_u).update(fp)
        self.arrays = {None: frozenset(arr_u), "k": frozenset(arr_k)}
        self.fns = {None: frozenset(fn_u), "k": frozenset(fn_k)}
        self.arrays_k = self.arrays["k"]
        self.fns_k = self.fns["k"]
        self.caps = {}
        for s, cs in system.caps.items():
            addrs = set()
            for c in cs:
                if c in layout:
                    addrs.update(footprint(system, layout, c))
            self.caps[s] = frozenset(addrs)
        self.memory = compose(system, layout)

    def arrays_for(self, mode):
        return self.arrays[None if mode is None else "k"]

    def fns_for(self, mode):
        return self.fns[None if mode is None else "k"]

    def access(self, mode, addr, fns=False):
        """Classify an access: 'ok', 'err' or 'unsafe'."""
        space = self.fns_for(mode) if fns else self.arrays_for(mode)
        if addr not in space:
            return "err"
        if mode is not None and addr not in self.caps.get(mode, ()):
            return "unsafe"
        return "ok"


def user_layout(system):
    """Fixed user placement: packed from 0 in declaration order."""
    out, at = {}, 0
    for i in system.identifiers:
        if i.space == USER:
            out[i.name] = at
            at += i.size
    return out


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class SlotUniform:
    """Kernel objects go to distinct slots of size theta, chosen uniformly."""
    theta: int

    def slots(self, system):
        return system.kappa_k // self.theta

    def validate(self, system):
        kern = [i for i in system.identifiers if i.is_kernel]
        if self.theta < 1 or system.kappa_k % self.theta:
            raise DistributionError(f"slot size {self.theta} must divide {system.kappa_k}")
        if kern and max(i.size for i in kern) > self.theta:
            raise DistributionError("a kernel object is larger than a slot")
        if len(kern) > self.slots(system):
            raise DistributionError("more kernel objects than slots")

    def support_size(self, system):
        n = len(system.kernel_ids)
        return math.perm(self.slots(system), n)

    def _build(self, system, slots):
        bases = user_layout(system)
        for name, slot in zip(system.kernel_ids, slots):
            bases[name] = system.kappa_u + slot * self.theta
        return Layout(bases)

    def sample(self, system, rng):
        self.validate(system)
        chosen = rng.sample(range(self.slots(system)), len(system.kernel_ids))
        return self._build(system, chosen)

    def enumerate(self, system):
        self.validate(system)
        total = self.support_size(system)
        p = Fraction(1, total)
        for perm in itertools.permutations(range(self.slots(system)), len(system.kernel_ids)):
            yield self._build(system, perm), p


@dataclass(frozen=True)
class ExplicitWeighted:
    """A finite list of (layout, probability) pairs."""
    entries: tuple

    def validate(self, system):
        total = sum(Fraction(p) for _, p in self.entries)
        if total != 1:
            raise DistributionError(f"probabilities sum to {total}")
        fixed = user_layout(system)
        for lay, p in self.entries:
            if p < 0:
                raise DistributionError("negative probability")
            probs = check_layout(system, lay)
            if probs:
                raise DistributionError("; ".join(probs))
            if any(lay[k] != v for k, v in fixed.items()):
                raise DistributionError("user placement differs between layouts")

    def support_size(self, system):
        return len(self.entries)

    def sample(self, system, rng):
        self.validate(system)
        r = Fraction(rng.random())
        acc = Fraction(0)
        for lay, p in self.entries:
            acc += Fraction(p)
            if r < acc:
                return lay
        return self.entries[-1][0]

    def enumerate(self, system):
        self.validate(system)
        for lay, p in self.entries:
            if p:
                yield lay, Fraction(p)


def default_distribution(system, theta=None):
    return SlotUniform(theta or system.max_kernel_size())


def sample_layout(system, dist, rng):
    return dist.sample(system, rng)


def enumerate_layouts(system, dist, cap=100_000):
    if dist.support_size(system) > cap:
        raise DistributionError(f"support of {dist.support_size(system)} layouts exceeds cap {cap}")
    return list(dist.enumerate(system))


def referenced_kernel(system, syscall):
    ids_, _ = refs(system, system.syscalls[syscall])
    return {n for n in ids_ if system.ident(n).is_kernel}


def delta_lower_bound(system, dist):
    """Closed-form bound for the slot scheme, as an exact fraction."""
    dist.validate(system)
    m = dist.slots(system)
    n = len(system.kernel_ids)
    best = Fraction(1)
    for s in system.syscalls:
        r = len(referenced_kernel(system, s))
        if m == r:
            continue  # every slot is referenced: no address left to probe
        best = min(best, Fraction(m - n, m - r))
    return best


def delta_exact(system, dist):
    """Exact delta for an enumerable distribution.

    For each syscall, each placement of its referenced objects that has
    positive probability and each kernel address outside those objects,
    the conditional probability that the address is unallocated; the
    minimum over all of them.
    """
    support = list(dist.enumerate(system))
    kernel = [n for n in system.kernel_ids]
    lo, hi = system.kappa_u, system.size
    best = Fraction(1)
    for s in system.syscalls:
        known = sorted(referenced_kernel(system, s))
        groups = {}
        for lay, p in support:
            groups.setdefault(tuple(lay[k] for k in known), []).append((lay, p))
        for key, members in groups.items():
            mass = sum(p for _, p in members)
            taken = set()
            for k in known:
                taken.update(footprint(system, members[0][0], k))
            for a in range(lo, hi):
                if a in taken:
                    continue
                free = sum(p for lay, p in members
                           if not any(a in footprint(system, lay, k) for k in kernel))
                best = min(best, free / mass)
    return best
