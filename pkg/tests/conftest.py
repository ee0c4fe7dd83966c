import os

import numpy as np
import pytest

from nucprep.hamiltonian import (NEUTRON, PROTON, Orbital, ShellModelHamiltonian, SymmetrySector,
                                 build_mpo, default_ordering, dense_hamiltonian, sector_basis,
                                 site_charges)
from nucprep.models import add_hermitian_term, toy_pairing_hamiltonian
from nucprep.synthesis import build_database

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
TOY_SECTOR = SymmetrySector(2, 2)


def random_toy_hamiltonian(n_orbitals: int, n_terms: int, rng: np.random.Generator,
                           conserve_species: bool = False) -> ShellModelHamiltonian:
    """Random Hermitian interaction; orbitals alternate j_z = +-1/2 within each species."""
    n_p = n_orbitals // 2
    orbitals = []
    for i in range(n_orbitals):
        tz2 = PROTON if i < n_p else NEUTRON
        orbitals.append(Orbital(i, tz2, 0, 0, 1, 1 if i % 2 == 0 else -1, float(rng.normal())))
    tz = {o.index: o.tz2 for o in orbitals}
    two_body: dict = {}
    added = 0
    while added < n_terms:
        i, j, k, l = (int(x) for x in rng.choice(n_orbitals, 4))
        if i == j or k == l:
            continue
        if conserve_species and sorted((tz[i], tz[j])) != sorted((tz[k], tz[l])):
            continue
        add_hermitian_term(two_body, (i, j, k, l), float(rng.normal()))
        added += 1
    return ShellModelHamiltonian(tuple(orbitals), two_body)


class Toy:
    """12-orbital pairing instance with its dense sector reference."""

    def __init__(self):
        self.h = toy_pairing_hamiltonian()
        self.mapping = default_ordering(self.h)
        self.mpo = build_mpo(self.h, self.mapping)
        self.charges = site_charges(self.h, self.mapping)
        self.sector = TOY_SECTOR
        hs = dense_hamiltonian(self.h, self.mapping, self.sector)
        self.evals, self.evecs = np.linalg.eigh(hs)
        self.basis = sector_basis(self.h, self.mapping, self.sector)

    @property
    def n_sites(self) -> int:
        return self.mapping.n_sites

    def exact_state(self, which: int = 0) -> np.ndarray:
        psi = np.zeros(2 ** self.n_sites, dtype=complex)
        psi[self.basis] = self.evecs[:, which]
        return psi


@pytest.fixture(scope="session")
def toy():
    return Toy()


@pytest.fixture(scope="session")
def db():
    return build_database(14)


@pytest.fixture(scope="session")
def small_db():
    return build_database(6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _phase_key(m: np.ndarray) -> tuple:
    flat = m.reshape(-1)
    k = int(np.argmax(np.abs(flat) > 1e-6))
    m = m * (abs(flat[k]) / flat[k])
    return tuple(np.round(np.concatenate([m.real.ravel(), m.imag.ravel()]), 8) + 0.0)


def clifford_t_bfs(max_t: int):
    """Every Clifford+T unitary (mod phase) with its minimal T-count, by 0-1 BFS over {H, S, T}.

    Returns ``(t_counts, matrices)`` as arrays.
    """
    from collections import deque

    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    s = np.diag([1, 1j])
    t = np.diag([1, np.exp(0.25j * np.pi)])
    best = {}
    mats = {}
    start = np.eye(2, dtype=complex)
    queue = deque([(0, start)])
    best[_phase_key(start)] = 0
    mats[_phase_key(start)] = start
    while queue:
        cost, m = queue.popleft()
        if best[_phase_key(m)] < cost:
            continue
        for g, w in ((h, 0), (s, 0), (t, 1)):
            nc = cost + w
            if nc > max_t:
                continue
            nm = g @ m
            key = _phase_key(nm)
            if key not in best or best[key] > nc:
                best[key] = nc
                mats[key] = nm
                if w == 0:
                    queue.appendleft((nc, nm))
                else:
                    queue.append((nc, nm))
    keys = list(best)
    return np.array([best[k] for k in keys]), np.array([mats[k] for k in keys])


def min_t_within(target: np.ndarray, eps: float, t_counts: np.ndarray, mats: np.ndarray):
    """Smallest T-count among ``mats`` within ``sqrt(1 - |tr(U^+ V)| / 2) <= eps`` of ``target``."""
    tr = np.abs(np.einsum("ij,kij->k", target.conj(), mats)) / 2
    d = np.sqrt(np.maximum(0.0, 1.0 - tr))
    ok = d <= eps
    return int(t_counts[ok].min()) if ok.any() else None


@pytest.fixture(scope="session")
def bfs6():
    return clifford_t_bfs(6)


SMALL_PIPELINE = {
    "paths.hamiltonian": os.path.join(CONFIG_DIR, "toy_pairing.int"),
    "sector.n_protons": "2",
    "sector.n_neutrons": "2",
    "dmrg.chi_max": "16",
    "compile.target_chi": "4",
    "compile.max_layers": "2",
    "synth.eps_list": "10^-1.0 10^-1.5",
    "synth.strategy": "both",
    "synth.t_budget": "10",
    "seed": "1",
}


def write_config(directory, out_dir, **overrides) -> str:
    """Write a flat config file; keys use ``__`` for the section dot."""
    values = dict(SMALL_PIPELINE)
    values["paths.out_dir"] = str(out_dir)
    for k, v in overrides.items():
        key = k.replace("__", ".")
        if v is None:
            values.pop(key, None)
        else:
            values[key] = str(v)
    path = os.path.join(str(directory), "run.cfg")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path
