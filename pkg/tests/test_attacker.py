import random

import pytest
from hypothesis import given, settings, strategies as st

from spekl.attacker import (ATTACKER_INSTRS, ATTACKS, Hybrid, Plain, Poison, Spec, attacker_step,
                            run_attacker, spec_probe)
from spekl.classic import ERR, UNSAFE, Terminated, run
from spekl.generate import random_attacker, random_kernel_system
from spekl.ksl import parse_cmd
from spekl.layout import Layout, SlotUniform
from spekl.lang import Const
from spekl.machine import EMPTY_REGS, frame
from spekl.speculative import Branch, Live, commit
from spekl.values import NIL, TRUE, BranchObs, JumpObs

LAY6 = Layout({"fn": 8, "nop": 10, "a": 12})


def plain(pl, prog):
    return Plain((frame(prog, EMPTY_REGS, None),), pl.memory, (), ())


def test_poison_pushes_a_directive(sigma6_pl):
    cfg, obs, _ = attacker_step(sigma6_pl, plain(sigma6_pl, (Poison("branch", 1, Const(TRUE)),)))
    assert cfg.directives == (Branch(1, True),) and obs is None


def test_observe_on_empty_log_gives_nil(sigma6):
    r = run_attacker(sigma6, LAY6, parse_cmd("(observe x) (:= ret x)", sigma6))
    assert r.outcome.value is NIL


def test_spec_term_commits_the_buffer(sigma6_pl):
    done = frame((), EMPTY_REGS, None)
    buf = ((12, 7),)
    live = Live((done,), buf, sigma6_pl.memory, False)
    h = Hybrid((live,), (frame((), EMPTY_REGS, None),), (), ())
    cfg, _, _ = attacker_step(sigma6_pl, h)
    assert type(cfg) is Plain and cfg.mem == commit((buf, sigma6_pl.memory))


def test_skip_terminates(sigma6):
    assert isinstance(run_attacker(sigma6, LAY6, parse_cmd("(skip)", sigma6)).outcome,
                      Terminated)


def test_guarded_probe_forces_transient_body(sigma6):
    prog = spec_probe(sigma6, "u", (Const(0),))
    r = run_attacker(sigma6, LAY6, prog + parse_cmd("(:= ret x)", sigma6))
    # the body ran although the guard is false; x is the newest observation
    assert JumpObs(10) in r.observations
    assert r.observations[0] == BranchObs(True)
    assert r.outcome.value == r.observations[-1]


@pytest.mark.parametrize("attack", sorted(ATTACKS))
def test_attacks_find_fn_in_every_layout(attack, sigma6, sigma6_layouts):
    prog = ATTACKS[attack](sigma6)
    for lay in sigma6_layouts:
        r = run_attacker(sigma6, lay, prog)
        assert r.unsafe and r.discovered() == lay["fn"]


def test_attack_c_uses_only_jump_poison(sigma6):
    from spekl.lang import walk
    kinds = {i.kind for i in walk(ATTACKS["attack-c"](sigma6)) if type(i) is Poison}
    assert kinds == {"jump"}


def _no_attacker_frames_in_kernel(cfg):
    stacks = []
    if type(cfg) is Plain:
        stacks.append(cfg.stack)
    elif type(cfg) is Hybrid:
        stacks += [c.stack for c in cfg.spec if type(c) is Live]
    for stack in stacks:
        for f in stack:
            if f.mode is not None and f.code is not None:
                code = f.code
                while code is not None:
                    for ins in code.block:
                        assert not isinstance(ins, ATTACKER_INSTRS)
                    code = code.rest


def test_victim_frames_stay_attacker_free(sigma6, sigma6_pl):
    cfg = plain(sigma6_pl, ATTACKS["attack-b"](sigma6))
    for _ in range(400):
        if cfg is ERR or cfg is UNSAFE:
            break
        _no_attacker_frames_in_kernel(cfg)
        if type(cfg) is Plain and len(cfg.stack) == 1 and cfg.stack[0].code is None:
            break
        cfg, _, _ = attacker_step(sigma6_pl, cfg)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_spec_without_directives_matches_classic(seed):
    rng = random.Random(seed)
    s = random_kernel_system(rng)
    lay = SlotUniform(2).sample(s, rng)
    prog = random_attacker(rng, s, 3)
    a = run(s, lay, prog, fuel=400)
    b = run_attacker(s, lay, (Spec(prog),), fuel=400)
    if a is ERR or a is UNSAFE:
        assert b.outcome is a
    elif isinstance(a, Terminated):
        assert isinstance(b.outcome, Terminated) and b.outcome.store == a.store
