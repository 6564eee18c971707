"""A lab for toy OS kernels under classic and speculative semantics.

Systems are written in a small s-expression format (``.ksl``), placed in
memory by a randomized layout and run either architecturally or under
attacker-chosen speculation directives. Fence-insertion passes and bounded
checkers for kernel safety and layout non-interference sit on top.
"""

from .analysis import (ExplorationBudget, Status, Trace, Verdict, check_kernel_safety,
                       check_layout_ni, check_safety_imposition, check_sc_layout_ni,
                       check_semantic_equivalence, check_spec_kernel_safety,
                       estimate_unsafe_probability, exact_unsafe_probability, replay, table1)
from .attacker import run_attacker
from .classic import ERR, FUEL, UNSAFE, Terminated, run, run_syscall
from .ksl import parse_cmd, parse_system, print_system
from .layout import (Layout, SlotUniform, delta_exact, delta_lower_bound, enumerate_layouts,
                     sample_layout)
from .transforms import (fencetrans, fencetrans_system, nospec, nospec_system,
                         optfencetrans, optfencetrans_system)

__version__ = "0.1.0"
