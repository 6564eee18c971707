"""Fence-insertion and speculation-blocking system transformations.

All three rewrite kernel procedures and syscall bodies only. User code,
arrays and capabilities are left untouched, labels are kept and the
inserted fences carry none.
"""

from .lang import (Call, Fence, If, Load, SCall, Store, Syscall, While, KERNEL)

FENCE = Fence()


def _scall(ins):
    return SCall(ins.target, ins.args, ins.label)


def fencetrans(cmd):
    """Fence before every memory access; calls become fenced scalls."""
    out = []
    for ins in cmd:
        t = type(ins)
        if t is Load or t is Store:
            out += [FENCE, ins]
        elif t is Call:
            out += [FENCE, _scall(ins)]
        elif t is If:
            out.append(If(ins.cond, fencetrans(ins.then), fencetrans(ins.orelse), ins.label))
        elif t is While:
            out.append(While(ins.cond, fencetrans(ins.body), ins.label))
        else:
            out.append(ins)
    return tuple(out)


def optfencetrans(cmd, m=True, e=False):
    """Fence only where speculation may be live.

    ``m``: the point may be reached while mis-speculating.
    ``e``: the write buffer is known to be empty there.
    Returns (cmd', m', e').
    """
    out = []
    for ins in cmd:
        t = type(ins)
        if t is Load:
            if not m:
                out.append(ins)
                m, e = not e, e
            else:
                out += [FENCE, ins]
                m, e = False, True
        elif t is Store:
            if m:
                out.append(FENCE)
            out.append(ins)
            m, e = False, False
        elif t is While:
            body, _, _ = optfencetrans(ins.body, True, False)
            out.append(While(ins.cond, body, ins.label))
            m, e = True, False
        elif t is If:
            then, _, _ = optfencetrans(ins.then, True, False)
            orelse, _, _ = optfencetrans(ins.orelse, True, False)
            out.append(If(ins.cond, then, orelse, ins.label))
            m, e = True, False
        elif t is Syscall:
            out.append(ins)
            m, e = True, False
        elif t is Call:
            out += [FENCE, _scall(ins)]
            m, e = True, False
        else:
            out.append(ins)
    return tuple(out), m, e


def nospec(cmd):
    """Block every kind of speculation the model knows about."""
    out = []
    for ins in cmd:
        t = type(ins)
        if t is Store:
            out += [ins, FENCE]
        elif t is If:
            out.append(If(ins.cond, (FENCE,) + nospec(ins.then),
                          (FENCE,) + nospec(ins.orelse), ins.label))
        elif t is While:
            out += [While(ins.cond, (FENCE,) + nospec(ins.body), ins.label), FENCE]
        elif t is Call:
            out.append(_scall(ins))
        else:
            out.append(ins)
    return tuple(out)


def _apply(system, on_proc, on_syscall):
    store = dict(system.store)
    for i in system.identifiers:
        if i.is_proc and i.space == KERNEL:
            store[i.name] = on_proc(system.store[i.name])
    sysmap = {s: on_syscall(body) for s, body in system.syscalls.items()}
    return system.with_(store=store, syscalls=sysmap)


def fencetrans_system(system):
    return _apply(system, fencetrans, fencetrans)


def optfencetrans_system(system):
    def top(c):
        return optfencetrans(c, True, False)[0]
    return _apply(system, top, top)


def nospec_system(system):
    return _apply(system, nospec, lambda c: (FENCE,) + nospec(c))


def identity_system(system):
    return system


PASSES = {
    "identity": identity_system,
    "simple": fencetrans_system,
    "opt": optfencetrans_system,
    "nospec": nospec_system,
}


def erase(cmd):
    """Drop fences and turn scall back into call."""
    out = []
    for ins in cmd:
        t = type(ins)
        if t is Fence:
            continue
        if t is SCall:
            out.append(Call(ins.target, ins.args, ins.label))
        elif t is If:
            out.append(If(ins.cond, erase(ins.then), erase(ins.orelse), ins.label))
        elif t is While:
            out.append(While(ins.cond, erase(ins.body), ins.label))
        else:
            out.append(ins)
    return tuple(out)


def erase_system(system):
    return _apply(system, erase, erase)


def count_fences(cmd):
    n = 0
    for ins in cmd:
        t = type(ins)
        if t is Fence:
            n += 1
        elif t is If:
            n += count_fences(ins.then) + count_fences(ins.orelse)
        elif t is While:
            n += count_fences(ins.body)
    return n


def system_fences(system):
    total = sum(count_fences(b) for b in system.syscalls.values())
    for i in system.identifiers:
        if i.is_proc and i.space == KERNEL:
            total += count_fences(system.store[i.name])
    return total


def _only_fences_and_scalls(orig, new):
    """True when new is orig plus fences, with some calls made scalls."""
    i = 0
    for ins in new:
        t = type(ins)
        if t is Fence:
            continue
        if i >= len(orig):
            return False
        o = orig[i]
        i += 1
        if t is SCall and type(o) is Call:
            if (o.target, o.args, o.label) != (ins.target, ins.args, ins.label):
                return False
        elif t is If and type(o) is If:
            if (o.cond, o.label) != (ins.cond, ins.label):
                return False
            if not (_only_fences_and_scalls(o.then, ins.then)
                    and _only_fences_and_scalls(o.orelse, ins.orelse)):
                return False
        elif t is While and type(o) is While:
            if (o.cond, o.label) != (ins.cond, ins.label):
                return False
            if not _only_fences_and_scalls(o.body, ins.body):
                return False
        elif o != ins:
            return False
    return i == len(orig)


def is_fence_scall_only_delta(original, transformed):
    """Whether transformed only adds fences and call->scall in kernel code."""
    if (original.identifiers != transformed.identifiers or original.caps != transformed.caps
            or original.kappa_u != transformed.kappa_u or original.kappa_k != transformed.kappa_k
            or set(original.syscalls) != set(transformed.syscalls)):
        return False
    for i in original.identifiers:
        a, b = original.store[i.name], transformed.store[i.name]
        if i.is_proc and i.space == KERNEL:
            if not _only_fences_and_scalls(a, b):
                return False
        elif a != b:
            return False
    return all(_only_fences_and_scalls(original.syscalls[s], transformed.syscalls[s])
               for s in original.syscalls)
