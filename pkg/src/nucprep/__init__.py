"""Shell-model state preparation: DMRG, staircase circuits and Clifford+T synthesis."""

from .analysis import extrapolate_overlap, pareto_front, wootters_bound
from .decompose import circuit_to_rotations, kak_decompose, zyz
from .dmrg import DmrgConfig, excited_states, ground_state, reverse_sweep_series
from .hamiltonian import (QubitMapping, ShellModelHamiltonian, SymmetrySector, build_mpo,
                          default_ordering, dense_hamiltonian, parse_interaction_file)
from .mps import MPO, MPS, apply_gate, compress, overlap, random_sector_mps
from .staircase import StaircaseCircuit, circuit_to_state, grow_and_compile, optimize_sweep
from .synthesis import SynthesisStrategy, build_database, synth_circuit, synth_rz, synth_u3

__version__ = "0.1.0"
