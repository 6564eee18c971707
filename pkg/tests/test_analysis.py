import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from spekl.analysis import (ExplorationBudget, Status, check_kernel_safety, check_layout_ni,
                            check_safety_imposition, check_sc_layout_ni,
                            check_semantic_equivalence, check_spec_kernel_safety,
                            estimate_unsafe_probability, exact_unsafe_probability, replay, table1,
                            wilson)
from spekl.cases import CASES
from spekl.generate import random_kernel_system
from spekl.ksl import parse_cmd, parse_system
from spekl.layout import SlotUniform, delta_lower_bound
from spekl.speculative import STEP, Branch
from spekl.transforms import PASSES, fencetrans_system, nospec_system
from spekl.values import FALSE, NIL, TRUE

SMALL = dict(kappa_u=2, kappa_k=4, theta=1, body_size=5)
RET1 = "(addr-space 4 4) (space kernel) (array a 1) (syscall one (caps) ((:= ret 1)))"


def tiny(seed):
    return random_kernel_system(random.Random(seed), **SMALL)


def test_budget_rejects_non_positive_fields():
    with pytest.raises(ValueError):
        ExplorationBudget(max_steps=0)


def test_kernel_safety(sigma6, msg_checked):
    v = check_kernel_safety(sigma6)
    assert v.status is Status.UNSAFE
    assert replay(sigma6, v.witness)[0] == "Unsafe"
    empty = parse_system("")
    v = check_kernel_safety(empty)
    assert v.status is Status.SAFE and v.exhausted
    dom = CASES["msgpassing_checked"].domain
    assert check_kernel_safety(msg_checked, domain=dom).status is Status.SAFE


def test_syscall_t_with_fn_argument_is_unsafe(sigma6, sigma6_layouts):
    from spekl.classic import UNSAFE, run_syscall
    for lay in sigma6_layouts:
        # store a x1; store a nop; load y a; call y: the stored fn is overwritten,
        # so t alone is safe, while s with a true guard calls x2 directly
        assert run_syscall(sigma6, lay, "s", (TRUE, lay["fn"]))[0] is UNSAFE


def test_spec_kernel_safety_attack_a_shape(sigma6):
    v = check_spec_kernel_safety(sigma6)
    assert v.status is Status.UNSAFE
    tag, obs = replay(sigma6, v.witness)
    assert tag == "Unsafe" and obs == v.witness.observations
    # without Jump probes the witness is a mispredicted guard and a plain call
    v = check_spec_kernel_safety(sigma6, ExplorationBudget(probe_set=()),
                                 domain=(FALSE, 8, 10, 12))
    assert v.witness.directives[0] == Branch(1, True) and v.witness.directives[1] is STEP
    name, args = v.witness.entry[-1]
    assert name == "s" and args[1] == v.witness.layout["fn"]


def test_transformed_sigma6_stays_classically_unsafe(sigma6):
    for p in ("simple", "opt", "nospec"):
        t = PASSES[p](sigma6)
        assert check_spec_kernel_safety(t).status is Status.UNSAFE
        assert check_kernel_safety(t).status is Status.UNSAFE


def test_transforms_make_checked_message_passing_spec_safe(msg_checked):
    dom = CASES["msgpassing_checked"].domain
    assert check_spec_kernel_safety(msg_checked, domain=dom).status is Status.UNSAFE
    for p in ("simple", "opt", "nospec"):
        v = check_spec_kernel_safety(PASSES[p](msg_checked), domain=dom)
        assert v.status is Status.SAFE and v.exhausted


def test_layout_ni_examples():
    se = CASES["scope_extrusion"].system()
    assert check_layout_ni(se, "s1").status is Status.INTERFERING
    assert check_layout_ni(se, "s2").status is Status.NON_INTERFERING
    one = parse_system(RET1)
    assert check_layout_ni(one, "one").status is Status.NON_INTERFERING
    leak = CASES["sc_leak"].system()
    v = check_layout_ni(leak, "sc_leak")
    assert v.status is Status.NON_INTERFERING and v.exhausted


def test_layout_ni_reports_fuel_pairs():
    src = ("(addr-space 4 4) (space kernel) (proc f ((skip)))"
           " (syscall s (caps f) ((if (= x1 f) ((while true ((skip)))) ())))")
    s = parse_system(src)
    v = check_layout_ni(s, "s", fuel=50)
    assert v.status is Status.NON_INTERFERING and not v.exhausted
    assert v.stats["fuel-pairs"] > 0


def test_side_channel_ni_examples():
    leak = CASES["sc_leak"].system()
    v = check_sc_layout_ni(leak, "sc_leak")
    assert v.status is Status.INTERFERING
    assert v.witness["layouts"][0] != v.witness["layouts"][1]
    one = parse_system(RET1)
    v = check_sc_layout_ni(one, "one")
    assert v.status is Status.NON_INTERFERING and v.exhausted
    single = CASES["single_store"].system()
    assert check_sc_layout_ni(single, "st").status is Status.INTERFERING
    v = check_spec_kernel_safety(single)
    assert v.status is Status.SAFE and v.exhausted


def test_equivalence_examples(msg_checked):
    v = check_semantic_equivalence(msg_checked, msg_checked, trials=100, seed=1)
    assert v.status is Status.EQUIVALENT
    v = check_semantic_equivalence(msg_checked, fencetrans_system(msg_checked), 1000, 0, 500)
    assert v.status is Status.EQUIVALENT and v.stats["asymmetric-fuel"] == 0
    body = msg_checked.syscalls["recv"]
    changed = parse_system(CASES["msgpassing_checked"].source().replace("((:= ret 0))",
                                                                        "((:= ret 5))"))
    assert changed.syscalls["recv"] != body
    v = check_semantic_equivalence(msg_checked, changed, trials=300, seed=0)
    assert v.status is Status.MISMATCH and "program" in v.witness


def test_imposition_on_sigma6(sigma6):
    v = check_safety_imposition(sigma6)
    assert v.status is Status.VIOLATED
    w = v.witness
    assert w.entry[-1][0] == "s" and w.directives[0] == Branch(1, True)
    assert replay(sigma6, w) == ("Unsafe", w.observations)
    dom = (TRUE, FALSE, NIL, 0, 8, 10, 12, 13)
    for p in ("simple", "nospec"):
        v = check_safety_imposition(PASSES[p](sigma6), domain=dom)
        assert v.status is Status.HOLDS and v.exhausted


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_speculation_blocking_imposes_safety(seed):
    s = nospec_system(tiny(seed))
    v = check_safety_imposition(s, dist=SlotUniform(1), misspec=(False, True))
    assert v.status is Status.HOLDS


def test_probability_of_fixed_probe():
    probe = CASES["probe"].system()
    prog = parse_cmd(CASES["probe"].attackers["fixed-probe"], probe)
    dist = SlotUniform(1)
    assert exact_unsafe_probability(probe, prog, dist) == Fraction(1, 4)
    est = estimate_unsafe_probability(probe, prog, dist, trials=4000, seed=5)
    assert abs(est.estimate - 0.25) < 0.03
    bound = 1 - delta_lower_bound(probe, dist)
    assert est.estimate <= bound + est.radius


def test_no_syscalls_means_no_unsafe_runs():
    s = parse_system("(addr-space 4 4) (space kernel) (proc fn ((skip)))")
    prog = parse_cmd("(:= x 5) (load y 6)", s)
    assert estimate_unsafe_probability(s, prog, SlotUniform(1), 200, 0).estimate == 0


def test_wilson_interval():
    lo, hi = wilson(25, 100)
    assert 0.17 < lo < 0.18 and 0.34 < hi < 0.35
    assert wilson(0, 0) == (0.0, 1.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_unsafe_witnesses_replay(seed):
    s = tiny(seed)
    dist = SlotUniform(1)
    for v in (check_kernel_safety(s, dist=dist), check_spec_kernel_safety(s, dist=dist)):
        if v.status is Status.UNSAFE:
            tag, obs = replay(s, v.witness)
            assert tag == "Unsafe" and obs == v.witness.observations


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10**6))
def test_bigger_budgets_never_lose_unsafety(seed):
    s = tiny(seed)
    dist = SlotUniform(1)
    small = check_spec_kernel_safety(s, ExplorationBudget(max_steps=8, max_depth=1), dist)
    big = check_spec_kernel_safety(s, ExplorationBudget(max_steps=40, max_depth=3), dist)
    if small.status is Status.UNSAFE:
        assert big.status is Status.UNSAFE


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10**6))
def test_spec_safety_implies_classic_safety(seed):
    s = tiny(seed)
    dist = SlotUniform(1)
    v = check_spec_kernel_safety(s, dist=dist)
    if v.status is Status.SAFE and v.exhausted:
        assert check_kernel_safety(s, dist=dist).status is Status.SAFE


def test_table1_is_deterministic_and_monotone(sigma6):
    a = table1(sigma6)
    b = table1(sigma6)
    assert {p: {k: c.as_dict() for k, c in r.items()} for p, r in a.items()} == \
           {p: {k: c.as_dict() for k, c in r.items()} for p, r in b.items()}
    big = table1(sigma6, ExplorationBudget(max_steps=60, max_depth=4, max_directives=40))
    for p in a:
        for k in a[p]:
            if not a[p][k].succeeded:
                assert not big[p][k].succeeded
