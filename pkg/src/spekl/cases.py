"""Bundled case studies and the verdicts they are expected to produce."""

from dataclasses import dataclass, field
from importlib import resources

from .ksl import parse_system
from .values import NIL, TRUE


@dataclass(frozen=True)
class CaseStudy:
    name: str
    file: str
    attackers: dict = field(default_factory=dict)   # name -> ksl attacker text
    expected: dict = field(default_factory=dict)    # check -> status value
    domain: tuple = None                            # argument values for sweeps
    syscall: str = None                             # subject of the NI checks
    theta: int = None

    def source(self):
        return resources.files(__package__).joinpath("cases").joinpath(self.file).read_text()

    def system(self, kappa_u=None, kappa_k=None):
        return parse_system(self.source(), kappa_u, kappa_k)


# small index sweep for the three-argument message-passing calls
_MSG_DOMAIN = (0, 1, 2, 3, -1, NIL, TRUE)

CASES = {c.name: c for c in (
    CaseStudy("sigma6", "sigma6.ksl",
              expected={"ks": "Unsafe", "sks": "Unsafe", "imposes": "Violated",
                        "imposes-simple": "Holds", "imposes-opt": "Holds",
                        "imposes-nospec": "Holds"},
              theta=2),
    CaseStudy("msgpassing", "msgpassing.ksl",
              attackers={"overflow": "(sys send 0 99 7)"},
              expected={"ks": "Unsafe"}, domain=_MSG_DOMAIN, theta=2),
    CaseStudy("msgpassing_checked", "msgpassing_checked.ksl",
              attackers={"probe-recv": "(poison branch 2 true) (spec ((sys recv 0 2))) "
                                       "(observe x)"},
              expected={"ks": "Safe", "sks": "Unsafe", "sks-simple": "Safe",
                        "sks-opt": "Safe", "sks-nospec": "Safe"},
              domain=_MSG_DOMAIN, theta=2),
    CaseStudy("sc_leak", "sc_leak.ksl", syscall="sc_leak",
              expected={"lni": "NonInterfering", "sclni": "Interfering"}, theta=1),
    CaseStudy("single_store", "single_store.ksl", syscall="st",
              expected={"sclni": "Interfering", "sks": "Safe", "ks": "Safe"}, theta=1),
    CaseStudy("probe", "probe.ksl",
              attackers={"fixed-probe": "(sys p 4)"},
              expected={"ks": "Unsafe"}, theta=1),
    CaseStudy("scope_extrusion", "scope_extrusion.ksl", syscall="s1",
              expected={"lni": "Interfering"}, theta=1),
    CaseStudy("empty", "empty.ksl", expected={"ks": "Safe", "sks": "Safe"}),
)}


def case_names():
    return sorted(CASES)


def find_case(name):
    """A case by name, also accepting its file name."""
    base = name[:-4] if name.endswith(".ksl") else name
    return CASES.get(base)


def run_check(case, check, budget=None):
    """Evaluate one entry of a case's expected table; returns a Verdict."""
    from . import analysis
    from .layout import default_distribution
    from .transforms import PASSES
    prop, _, pass_name = check.partition("-")
    system = PASSES[pass_name or "identity"](case.system())
    dist = default_distribution(system, case.theta)
    if prop == "ks":
        return analysis.check_kernel_safety(system, budget, dist, case.domain)
    if prop == "sks":
        return analysis.check_spec_kernel_safety(system, budget, dist, case.domain)
    if prop == "imposes":
        return analysis.check_safety_imposition(system, budget, dist, case.domain)
    if prop == "lni":
        return analysis.check_layout_ni(system, case.syscall, dist=dist)
    if prop == "sclni":
        return analysis.check_sc_layout_ni(system, case.syscall, budget=budget, dist=dist)
    raise ValueError(f"unknown check {check!r}")
