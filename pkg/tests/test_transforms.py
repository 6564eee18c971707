import random

import pytest
from hypothesis import given, settings, strategies as st

from spekl.analysis import check_semantic_equivalence
from spekl.generate import random_kernel_body, random_kernel_system
from spekl.lang import Assign, Call, Const, If, Load, Reg, SCall, Skip, Store, Syscall, While, walk
from spekl.transforms import (FENCE, PASSES, count_fences, erase, erase_system, fencetrans,
                              fencetrans_system, is_fence_scall_only_delta, nospec, nospec_system,
                              optfencetrans)

X = Load("x", Reg("e"), 1)
Y = Load("y", Reg("f"), 2)
Z = Store(Reg("z"), Reg("g"))
CALL = Call(Reg("e"), (Reg("y"),), 3)


def test_simple_fencing_examples():
    assert fencetrans((Skip(),)) == (Skip(),)
    assert fencetrans((X,)) == (FENCE, X)
    assert fencetrans((CALL,)) == (FENCE, SCall(CALL.target, CALL.args, 3))
    assert fencetrans((Syscall("s", ()), Assign("x", Const(1)))) == (
        Syscall("s", ()), Assign("x", Const(1)))
    body = (If(Reg("c"), (X,), (Z,), 4),)
    assert fencetrans(body) == (If(Reg("c"), (FENCE, X), (FENCE, Z), 4),)


def test_optimised_fencing_examples():
    assert optfencetrans((X, Y, Z), True, False) == ((FENCE, X, Y, Z), False, False)
    assert optfencetrans((X,), False, True) == ((X,), False, True)
    for m in (True, False):
        for e in (True, False):
            assert optfencetrans((Skip(),), m, e) == ((Skip(),), m, e)
    assert optfencetrans((CALL,), False, True)[1:] == (True, False)
    loop = (While(Reg("c"), (X,), 5),)
    assert optfencetrans(loop, False, True) == (
        (While(Reg("c"), (FENCE, X), 5),), True, False)


def test_speculation_blocking_examples():
    assert nospec((Z,)) == (Z, FENCE)
    body = (If(Reg("c"), (X,), (Skip(),), 4),)
    assert nospec(body) == (If(Reg("c"), (FENCE, X), (FENCE, Skip()), 4),)
    assert nospec((While(Reg("c"), (Skip(),), 5),)) == (
        While(Reg("c"), (FENCE, Skip()), 5), FENCE)
    assert nospec((CALL,)) == (SCall(CALL.target, CALL.args, 3),)


def test_system_passes(sigma6):
    ns = nospec_system(sigma6)
    for name, body in ns.syscalls.items():
        assert body[0] == FENCE and body[1:] == nospec(sigma6.syscalls[name])
    for p in ("simple", "opt", "nospec"):
        t = PASSES[p](sigma6)
        assert is_fence_scall_only_delta(sigma6, t)
        assert t.caps == sigma6.caps and t.identifiers == sigma6.identifiers


def test_delta_predicate_rejects_other_edits(sigma6):
    body = sigma6.syscalls["t"]
    cut = sigma6.with_(syscalls={**sigma6.syscalls, "t": body[1:]})
    assert not is_fence_scall_only_delta(sigma6, cut)
    assert not is_fence_scall_only_delta(sigma6, fencetrans_system(cut))


def test_user_code_is_untouched(msg_checked):
    t = fencetrans_system(msg_checked)
    for i in msg_checked.identifiers:
        if not i.is_kernel:
            assert t.store[i.name] == msg_checked.store[i.name]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_erasure_recovers_the_source(seed):
    # sources with hand-written fences only erase back to their fence-free form
    s = erase_system(random_kernel_system(random.Random(seed)))
    for p in ("simple", "opt", "nospec"):
        t = PASSES[p](s)
        assert erase_system(t) == s
        assert is_fence_scall_only_delta(s, t)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6))
def test_optimised_never_adds_more_fences(seed):
    rng = random.Random(seed)
    body = random_kernel_body(rng, random_kernel_system(rng))
    body = erase(body)
    assert count_fences(optfencetrans(body)[0]) <= count_fences(fencetrans(body))


@pytest.mark.parametrize("n", [2, 3, 5])
def test_straight_line_loads_need_one_fence(n):
    loads = tuple(Load(f"r{i}", Reg("e"), i + 1) for i in range(n))
    assert count_fences(optfencetrans(loads)[0]) == 1 < count_fences(fencetrans(loads)) == n


def test_labels_survive_transformation(sigma6):
    def labels(s):
        return sorted(i.label for b in s.syscalls.values() for i in walk(b)
                      if getattr(i, "label", None) is not None)
    for p in ("simple", "opt", "nospec"):
        assert labels(PASSES[p](sigma6)) == labels(sigma6)


def test_repeated_fencing_is_equivalent(msg_checked):
    once = fencetrans_system(msg_checked)
    twice = fencetrans_system(once)
    v = check_semantic_equivalence(once, twice, trials=200, seed=3, fuel=300)
    assert v.status.value == "Equivalent"
