import random

from hypothesis import given, settings, strategies as st

from spekl import classic
from spekl.classic import ERR, FUEL, UNSAFE, Terminated, run, run_syscall
from spekl.generate import random_attacker, random_kernel_system
from spekl.ksl import parse_cmd, parse_system
from spekl.layout import Layout, Placement, SlotUniform, compose, recover_store
from spekl.machine import Regs, eval_expr
from spekl.lang import Const, Ident, Op
from spekl.values import NIL, TRUE

LAY6 = Layout({"fn": 8, "nop": 10, "a": 12})


def test_eval_expr():
    lay = Layout({"f": 20})
    assert eval_expr(Const(5), Regs(), lay) == 5
    assert eval_expr(Ident("f"), Regs(), lay) == 20
    assert eval_expr(Op("+", (Ident("f"), Const(1))), Regs(), lay) == 21


def test_straight_line_program():
    s = parse_system("")
    out = run(s, Layout({}), parse_cmd("(:= x 1) (:= ret x)", s))
    assert isinstance(out, Terminated) and out.value == 1 and out.store == {}


def test_registers_start_nil():
    s = parse_system("")
    assert run(s, Layout({}), parse_cmd("(:= ret y)", s)).value is NIL


def test_divergence_runs_out_of_fuel():
    s = parse_system("")
    assert run(s, Layout({}), parse_cmd("(while true ((skip)))", s), fuel=100) is FUEL


def test_kernel_loads(sigma6):
    src = """(space kernel) (array a 2 init 4 5) (array b 1 init 0)
    (syscall ok (caps a) ((load ret (+ a 1))))
    (syscall bad (caps a) ((load ret (+ a 4))))"""
    s = parse_system(src, 8, 8)
    lay = Layout({"a": 8, "b": 12})
    assert run_syscall(s, lay, "ok")[0].value == 5
    assert run_syscall(s, lay, "bad")[0] is UNSAFE


def test_user_load_of_unallocated_address_errs():
    s = parse_system("(space user) (array u 1)")
    assert run(s, Layout({"u": 0}), parse_cmd("(load x 5)", s)) is ERR
    assert run(s, Layout({"u": 0}), parse_cmd("(load x 9)", s)) is ERR


def test_syscall_passes_arguments_and_returns(sigma6):
    prog = parse_cmd("(sys s true nop) (:= r2 ret)", sigma6)
    out = run(sigma6, LAY6, prog)
    assert isinstance(out, Terminated)
    # t writes x1 then nop into a and calls a[0]
    out, _ = run_syscall(sigma6, LAY6, "t", (3,))
    assert out.store["a"] == (10, 0)
    assert run_syscall(sigma6, LAY6, "s", (TRUE, 8))[0] is UNSAFE


def test_unbounded_index_send_is_unsafe(msg_unchecked):
    hits = 0
    lays = [lay for lay, _ in SlotUniform(2).enumerate(msg_unchecked)]
    for lay in lays:
        out, _ = run_syscall(msg_unchecked, lay, "send", (0, 99, 7))
        if out is UNSAFE:
            hits += 1
            assert lay["secret"] == lay["buf"] + 2
        else:
            assert out is ERR
    assert hits == 6


def test_fence_and_scall_are_plain_classically(sigma6):
    from spekl.transforms import fencetrans_system
    t = fencetrans_system(sigma6)
    for name, args in (("s", (TRUE, 10)), ("t", (1,)), ("u", (0,))):
        a, _ = run_syscall(sigma6, LAY6, name, args)
        b, _ = run_syscall(t, LAY6, name, args)
        assert repr(a) == repr(b) and getattr(a, "store", 0) == getattr(b, "store", 0)


def test_trace_records(sigma6):
    trace = []
    run_syscall(sigma6, LAY6, "u", (0,), trace=trace)
    assert [r["rule-name"] for r in trace] == ["call", "skip", "pop"]
    assert set(trace[0]) == {"pc-digest", "rule-name", "mode", "stack-depth"}
    assert trace[0]["mode"] == "kernel(u)"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_reachable_memories_keep_their_shape(seed):
    rng = random.Random(seed)
    s = random_kernel_system(rng)
    lay = SlotUniform(2).sample(s, rng)
    pl = Placement(s, lay)
    prog = random_attacker(rng, s)
    cfg = classic.start(pl, prog)
    for _ in range(300):
        if cfg is ERR or cfg is UNSAFE or classic.is_final(cfg):
            break
        # kernel frames always sit above user frames
        modes = [f.mode is None for f in cfg.stack]
        assert modes == sorted(modes)
        store = recover_store(s, lay, cfg.mem)
        assert compose(s, lay, store) == cfg.mem
        assert all(store[p] == s.store[p] for p in s.names("proc"))
        nxt, _ = classic.step(pl, cfg)
        again, _ = classic.step(pl, cfg)
        assert nxt == again
        cfg = nxt
