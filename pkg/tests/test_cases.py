import pytest

from spekl.attacker import run_attacker
from spekl.cases import CASES, case_names, find_case, run_check
from spekl.ksl import parse_cmd, parse_system, print_system
from spekl.layout import sample_layout, default_distribution

CHECKS = [(name, check) for name in case_names() for check in CASES[name].expected]


@pytest.mark.parametrize("name,check", CHECKS, ids=[f"{n}:{c}" for n, c in CHECKS])
def test_case_matches_expected_table(name, check):
    case = CASES[name]
    v = run_check(case, check)
    assert v.status.value == case.expected[check]


@pytest.mark.parametrize("name", case_names())
def test_case_sources_parse_and_round_trip(name):
    s = CASES[name].system()
    assert parse_system(print_system(s)) == s


def test_find_case_accepts_file_names():
    assert find_case("sigma6.ksl") is CASES["sigma6"]
    assert find_case("nope") is None


def test_overflow_attacker_on_unchecked_message_passing():
    case = CASES["msgpassing"]
    s = case.system()
    import random
    lay = sample_layout(s, default_distribution(s, case.theta), random.Random(0))
    prog = parse_cmd(case.attackers["overflow"], s)
    assert run_attacker(s, lay, prog).unsafe
