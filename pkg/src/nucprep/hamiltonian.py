"""Shell-model Hamiltonians in the m-scheme and their qubit images.

The two-body part is read literally::

    H = sum_i e_i n_i + 1/2 sum_{ijkl} V_ijkl a+_i a+_j a_k a_l

Every stored ``(i, j, k, l)`` key contributes exactly once. No antisymmetrization
or symmetrization is applied to user supplied matrix elements, so interaction
files must list each term they want (including Hermitian partners).

Orbitals are mapped onto qubits with the Jordan-Wigner transformation along the
MPS site order. Qubit state ``|1>`` means the orbital is occupied and ``tz2 = +1``
marks a proton.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np

from .mps import MPO, compress_mpo, mpo_direct_sum

__all__ = [
    "Orbital",
    "ShellModelHamiltonian",
    "QubitMapping",
    "SymmetrySector",
    "InteractionFileError",
    "parse_interaction_file",
    "format_interaction_file",
    "default_ordering",
    "build_mpo",
    "dense_hamiltonian",
    "number_operator_diagonals",
    "site_charges",
    "sector_basis",
]

PROTON = 1
NEUTRON = -1
MAX_DENSE_SITES = 16
HERMITIAN_RTOL = 1e-12


class InteractionFileError(ValueError):
    """Raised for malformed interaction files or inconsistent Hamiltonians."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Orbital:
    index: int
    tz2: int
    n: int
    l: int
    j2: int
    jz2: int
    energy: float

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"orbital index must be non-negative, got {self.index}")
        if self.tz2 not in (PROTON, NEUTRON):
            raise ValueError(f"tz2 must be +1 (proton) or -1 (neutron), got {self.tz2}")
        if self.j2 % 2 != 1:
            raise ValueError(f"j2 must be odd for a single-particle orbital, got {self.j2}")
        if abs(self.jz2) > self.j2 or (self.jz2 - self.j2) % 2:
            raise ValueError(f"jz2={self.jz2} incompatible with j2={self.j2}")

    @property
    def is_proton(self) -> bool:
        return self.tz2 == PROTON


@dataclass(frozen=True)
class SymmetrySector:
    n_protons: int
    n_neutrons: int

    def __post_init__(self):
        if self.n_protons < 0 or self.n_neutrons < 0:
            raise ValueError("particle numbers must be non-negative")


@dataclass(frozen=True)
class QubitMapping:
    """Permutation from orbital index to MPS site index."""

    site_of_orbital: tuple

    def __post_init__(self):
        perm = tuple(int(s) for s in self.site_of_orbital)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError("site_of_orbital must be a permutation of 0..n-1")
        object.__setattr__(self, "site_of_orbital", perm)

    @property
    def n_sites(self) -> int:
        return len(self.site_of_orbital)

    @property
    def orbital_of_site(self) -> tuple:
        inv = [0] * self.n_sites
        for orb, site in enumerate(self.site_of_orbital):
            inv[site] = orb
        return tuple(inv)

    @classmethod
    def identity(cls, n: int) -> "QubitMapping":
        return cls(tuple(range(n)))


@dataclass(frozen=True)
class ShellModelHamiltonian:
    orbitals: tuple
    two_body: Mapping = field(default_factory=dict)

    def __post_init__(self):
        orbitals = tuple(self.orbitals)
        for pos, orb in enumerate(orbitals):
            if orb.index != pos:
                raise InteractionFileError(
                    f"orbital indices must be contiguous from 0; found {orb.index} at position {pos}")
        n = len(orbitals)
        tb = {}
        for key, value in dict(self.two_body).items():
            key = tuple(int(x) for x in key)
            if len(key) != 4:
                raise InteractionFileError(f"two-body key {key} must have four indices")
            if any(x < 0 or x >= n for x in key):
                raise InteractionFileError(f"two-body key {key} references an unknown orbital")
            if key[0] == key[1]:
                raise InteractionFileError(f"repeated creation index in {key}")
            if key[2] == key[3]:
                raise InteractionFileError(f"repeated annihilation index in {key}")
            tb[key] = float(value)
        object.__setattr__(self, "orbitals", orbitals)
        object.__setattr__(self, "two_body", MappingProxyType(tb))

    @property
    def n_orbitals(self) -> int:
        return len(self.orbitals)

    @property
    def energies(self) -> np.ndarray:
        return np.array([o.energy for o in self.orbitals], dtype=float)

    def n_proton_orbitals(self) -> int:
        return sum(o.is_proton for o in self.orbitals)

    def n_neutron_orbitals(self) -> int:
        return self.n_orbitals - self.n_proton_orbitals()

    def check_sector(self, sector: SymmetrySector) -> None:
        if sector.n_protons > self.n_proton_orbitals():
            raise ValueError(f"{sector.n_protons} protons do not fit in {self.n_proton_orbitals()} orbitals")
        if sector.n_neutrons > self.n_neutron_orbitals():
            raise ValueError(f"{sector.n_neutrons} neutrons do not fit in {self.n_neutron_orbitals()} orbitals")

    def canonical_two_body(self) -> dict:
        """Collect terms as ``{((i<j), (k<l)): coeff}`` using anticommutation signs."""
        out = {}
        for (i, j, k, l), v in self.two_body.items():
            sign = 1.0
            if i > j:
                i, j, sign = j, i, -sign
            if k > l:
                k, l, sign = l, k, -sign
            key = ((i, j), (k, l))
            out[key] = out.get(key, 0.0) + sign * v
        return out

    def is_hermitian(self, rtol: float = HERMITIAN_RTOL) -> bool:
        terms = self.canonical_two_body()
        scale = max([abs(v) for v in terms.values()] + [1.0])
        for (p, q), v in terms.items():
            if abs(v - terms.get((q, p), 0.0)) > rtol * scale:
                return False
        return True

    def check_hermitian(self) -> None:
        if not self.is_hermitian():
            raise InteractionFileError(
                "two-body terms are not Hermitian: every V_ijkl needs a matching V_lkji "
                "(up to anticommutation)")


def parse_interaction_file(text: str) -> ShellModelHamiltonian:
    """Parse the ``O``/``V`` interaction format.

    ``O <index> <tz2> <n> <l> <j2> <jz2> <energy>`` defines an orbital and
    ``V <i> <j> <k> <l> <value>`` a two-body matrix element (MeV). ``#``
    starts a comment.
    """
    orbitals = {}
    two_body = {}
    v_lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        kind = fields[0]
        try:
            if kind == "O":
                if len(fields) != 8:
                    raise InteractionFileError("O line needs 7 fields", lineno)
                idx, tz2, n, l, j2, jz2 = (int(x) for x in fields[1:7])
                energy = float(fields[7])
                if idx in orbitals:
                    raise InteractionFileError(f"duplicate orbital index {idx}", lineno)
                try:
                    orbitals[idx] = Orbital(idx, tz2, n, l, j2, jz2, energy)
                except ValueError as exc:
                    raise InteractionFileError(str(exc), lineno) from None
            elif kind == "V":
                if len(fields) != 6:
                    raise InteractionFileError("V line needs 5 fields", lineno)
                key = tuple(int(x) for x in fields[1:5])
                value = float(fields[5])
                if key[0] == key[1]:
                    raise InteractionFileError("repeated creation index", lineno)
                if key[2] == key[3]:
                    raise InteractionFileError("repeated annihilation index", lineno)
                if key in two_body:
                    raise InteractionFileError(f"duplicate two-body key {key}", lineno)
                two_body[key] = value
                v_lines.append((lineno, key))
            else:
                raise InteractionFileError(f"unknown keyword {kind!r}", lineno)
        except ValueError as exc:
            if isinstance(exc, InteractionFileError):
                raise
            raise InteractionFileError(f"malformed number ({exc})", lineno) from None

    n = len(orbitals)
    if sorted(orbitals) != list(range(n)):
        raise InteractionFileError("orbital indices must be contiguous from 0")
    for lineno, key in v_lines:
        if any(x >= n or x < 0 for x in key):
            raise InteractionFileError(f"V references unknown orbital in {key}", lineno)
    return ShellModelHamiltonian(tuple(orbitals[i] for i in range(n)), two_body)


def format_interaction_file(h: ShellModelHamiltonian) -> str:
    lines = ["# index tz2 n l j2 jz2 energy_MeV"]
    for o in h.orbitals:
        lines.append(f"O {o.index} {o.tz2:+d} {o.n} {o.l} {o.j2} {o.jz2:+d} {o.energy!r}")
    lines.append("# i j k l value_MeV")
    for (i, j, k, l), v in sorted(h.two_body.items()):
        lines.append(f"V {i} {j} {k} {l} {v!r}")
    return "\n".join(lines) + "\n"


def default_ordering(h: ShellModelHamiltonian) -> QubitMapping:
    """Protons on the left half, neutrons on the right.

    Within a species, j-shells go in increasing single-particle energy and each
    shell is laid out by decreasing ``|jz|`` with time-reversed partners
    ``(+jz, -jz)`` on neighbouring sites.
    """
    order = []
    for species in (PROTON, NEUTRON):
        shells = {}
        for o in h.orbitals:
            if o.tz2 == species:
                shells.setdefault((o.n, o.l, o.j2), []).append(o)
        shell_list = sorted(
            shells.values(),
            key=lambda orbs: (min(o.energy for o in orbs), min(o.index for o in orbs)))
        for orbs in shell_list:
            orbs = sorted(orbs, key=lambda o: (o.energy, -abs(o.jz2), -o.jz2, o.index))
            order.extend(o.index for o in orbs)
    site_of_orbital = [0] * len(order)
    for site, orb in enumerate(order):
        site_of_orbital[orb] = site
    return QubitMapping(tuple(site_of_orbital))


def site_charges(h: ShellModelHamiltonian, m: QubitMapping) -> np.ndarray:
    """Per-site (proton, neutron) charge carried by an occupied qubit."""
    q = np.zeros((m.n_sites, 2), dtype=int)
    for orb, site in enumerate(m.site_of_orbital):
        q[site, 0 if h.orbitals[orb].is_proton else 1] = 1
    return q


# --- MPO construction -----------------------------------------------------------

_I2 = np.eye(2, dtype=complex)
_Z = np.diag([1.0, -1.0]).astype(complex)
_CREATE = np.array([[0, 0], [1, 0]], dtype=complex)   # |1><0|
_ANNIHILATE = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|
_NUMBER = np.diag([0.0, 1.0]).astype(complex)


def _ladder_string(n_sites: int, ops: Sequence[tuple]) -> list:
    """Local operators of a Jordan-Wigner product ``op_1 op_2 ... op_k``.

    ``ops`` holds ``(site, dagger)`` pairs in operator (left-to-right) order.
    """
    local = [_I2.copy() for _ in range(n_sites)]
    for site, dagger in ops:
        factor = _CREATE if dagger else _ANNIHILATE
        for t in range(site):
            local[t] = local[t] @ _Z
        local[site] = local[site] @ factor
    return local


def _product_mpo_tensors(local: list, coeff: complex) -> list:
    tensors = [op.reshape(1, 2, 2, 1).astype(complex) for op in local]
    tensors[0] = tensors[0] * coeff
    return tensors


def _hamiltonian_terms(h: ShellModelHamiltonian, m: QubitMapping):
    """Yield ``(coeff, [(site, dagger), ...])`` for every term of H."""
    s = m.site_of_orbital
    for o in h.orbitals:
        if o.energy != 0.0:
            yield o.energy, [(s[o.index], True), (s[o.index], False)]
    for (i, j, k, l), v in sorted(h.two_body.items()):
        if v != 0.0:
            yield 0.5 * v, [(s[i], True), (s[j], True), (s[k], False), (s[l], False)]


def build_mpo(h: ShellModelHamiltonian, m: QubitMapping, *, cutoff: float = 1e-12,
              batch: int = 24) -> MPO:
    """Jordan-Wigner MPO of ``h`` along the site order of ``m``.

    Terms are summed as bond-dimension-one MPOs and the running sum is
    recompressed by SVD truncation (absolute cutoff ``cutoff``) every ``batch``
    terms. The result carries per-site particle charges for symmetry-aware
    solvers.
    """
    if m.n_sites != h.n_orbitals:
        raise ValueError("mapping size does not match the number of orbitals")
    h.check_hermitian()
    n = m.n_sites
    total = None
    pending = None
    count = 0
    for coeff, ops in _hamiltonian_terms(h, m):
        term = _product_mpo_tensors(_ladder_string(n, ops), coeff)
        pending = term if pending is None else mpo_direct_sum(pending, term)
        count += 1
        if count % batch == 0:
            total = pending if total is None else mpo_direct_sum(total, pending)
            total = compress_mpo(total, cutoff)
            pending = None
    if pending is not None:
        total = pending if total is None else mpo_direct_sum(total, pending)
        total = compress_mpo(total, cutoff)
    if total is None:
        total = [np.zeros((1, 2, 2, 1), dtype=complex) for _ in range(n)]
    return MPO(total, site_charges=site_charges(h, m))


# --- dense oracle ---------------------------------------------------------------

def sector_basis(h: ShellModelHamiltonian, m: QubitMapping,
                 sector: Optional[SymmetrySector]) -> np.ndarray:
    """Basis-state integers (site 0 = most significant bit) spanning a sector."""
    n = m.n_sites
    states = np.arange(2 ** n, dtype=np.int64)
    if sector is None:
        return states
    h.check_sector(sector)
    q = site_charges(h, m)
    bits = (states[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    np_count = bits @ q[:, 0]
    nn_count = bits @ q[:, 1]
    return states[(np_count == sector.n_protons) & (nn_count == sector.n_neutrons)]


def _apply_ladder(states: np.ndarray, n: int, ops: Sequence[tuple]):
    """Act with a ladder-operator product on basis states (rightmost first)."""
    cur = states.copy()
    sign = np.ones(states.shape, dtype=float)
    alive = np.ones(states.shape, dtype=bool)
    for site, dagger in reversed(ops):
        bit = np.int64(1) << (n - 1 - site)
        occupied = (cur & bit) != 0
        alive &= occupied != dagger
        # parity of occupied sites to the left of `site`
        left_mask = ~((np.int64(1) << (n - site)) - 1) & ((np.int64(1) << n) - 1)
        parity = np.bitwise_count(cur & left_mask) & 1
        sign = np.where(parity == 1, -sign, sign)
        cur = cur ^ bit
    return cur, sign, alive


def dense_hamiltonian(h: ShellModelHamiltonian, m: QubitMapping,
                      sector: Optional[SymmetrySector] = None) -> np.ndarray:
    """Dense matrix of ``h`` built directly from fermionic sign counting.

    Independent of the MPO path: basis states are bit strings in site order and
    each ladder operator picks up ``(-1)`` per occupied site to its left.
    """
    h.check_hermitian()
    n = m.n_sites
    if sector is None and n > MAX_DENSE_SITES:
        raise ValueError(f"dense Hamiltonian limited to {MAX_DENSE_SITES} sites, got {n}")
    basis = sector_basis(h, m, sector)
    dim = basis.size
    if dim > 2 ** MAX_DENSE_SITES:
        raise ValueError(f"sector dimension {dim} exceeds 2**{MAX_DENSE_SITES}")
    position = {int(b): i for i, b in enumerate(basis)}
    lookup = np.full(2 ** n, -1, dtype=np.int64) if n <= 24 else None
    if lookup is not None:
        lookup[basis] = np.arange(dim)
    mat = np.zeros((dim, dim), dtype=complex)
    for coeff, ops in _hamiltonian_terms(h, m):
        new, sign, alive = _apply_ladder(basis, n, ops)
        cols = np.nonzero(alive)[0]
        if cols.size == 0:
            continue
        if lookup is not None:
            rows = lookup[new[cols]]
        else:
            rows = np.array([position.get(int(s), -1) for s in new[cols]])
        keep = rows >= 0
        np.add.at(mat, (rows[keep], cols[keep]), coeff * sign[cols[keep]])
    mat = 0.5 * (mat + mat.conj().T)
    return mat


def number_operator_diagonals(h: ShellModelHamiltonian, m: QubitMapping) -> tuple:
    """Diagonals of the proton and neutron number operators in the full space."""
    n = m.n_sites
    states = np.arange(2 ** n, dtype=np.int64)
    bits = (states[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    q = site_charges(h, m)
    return (bits @ q[:, 0]).astype(float), (bits @ q[:, 1]).astype(float)
