"""Small shell-model-like Hamiltonians for testing and demos."""

from __future__ import annotations

import numpy as np

from .hamiltonian import NEUTRON, PROTON, Orbital, ShellModelHamiltonian

__all__ = ["toy_pairing_hamiltonian", "add_hermitian_term"]

# (n, l, j2) shells with proton / neutron single-particle energies (MeV)
_SHELLS = [
    ((1, 0, 1), -3.2, -3.0),
    ((0, 2, 3), 1.6, 1.9),
]


def add_hermitian_term(two_body: dict, key: tuple, value: float) -> None:
    """Add ``value`` to ``key`` and to its Hermitian partner ``(l, k, j, i)``."""
    i, j, k, l = key
    partner = (l, k, j, i)
    two_body[key] = two_body.get(key, 0.0) + value
    if partner != key:
        two_body[partner] = two_body.get(partner, 0.0) + value


def toy_pairing_hamiltonian(pairing: float = 0.6, pn_strength: float = 0.35,
                            noise: float = 0.25, n_noise_terms: int = 40,
                            seed: int = 7, shells=None) -> ShellModelHamiltonian:
    """12-orbital (with the default shells) pairing model plus proton-neutron coupling.

    Like-particle pairing ``-G sum P+_a P_b`` acts between time-reversed pairs,
    a monopole-like ``n_p n_n`` attraction couples the two halves and a few
    seeded random number-conserving terms lift accidental degeneracies.
    """
    shells = _SHELLS if shells is None else shells
    orbitals = []
    for tz2, col in ((PROTON, 1), (NEUTRON, 2)):
        for shell in shells:
            (n, l, j2), energy = shell[0], shell[col]
            for jz2 in range(j2, -j2 - 1, -2):
                orbitals.append(Orbital(len(orbitals), tz2, n, l, j2, jz2, energy))

    two_body: dict = {}
    for species in (PROTON, NEUTRON):
        pairs = []
        for o in orbitals:
            if o.tz2 == species and o.jz2 > 0:
                partner = next(p for p in orbitals if p.tz2 == species and (p.n, p.l, p.j2) == (o.n, o.l, o.j2)
                               and p.jz2 == -o.jz2)
                pairs.append((o.index, partner.index))
        for a in pairs:
            for b in pairs:
                # P+_a P_b = a+_{a+} a+_{a-} a_{b-} a_{b+}; the 1/2 prefactor is compensated
                key = (a[0], a[1], b[1], b[0])
                two_body[key] = two_body.get(key, 0.0) - 2.0 * pairing

    protons = [o.index for o in orbitals if o.tz2 == PROTON]
    neutrons = [o.index for o in orbitals if o.tz2 == NEUTRON]
    for p in protons:
        for q in neutrons:
            # n_p n_q: a+_p a+_q a_q a_p and a+_q a+_p a_p a_q, each weighted 1/2
            for key in ((p, q, q, p), (q, p, p, q)):
                two_body[key] = two_body.get(key, 0.0) - pn_strength

    rng = np.random.default_rng(seed)
    species = {o.index: o.tz2 for o in orbitals}
    added = 0
    while added < n_noise_terms:
        i, j, k, l = (int(x) for x in rng.choice(len(orbitals), 4))
        if i == j or k == l:
            continue
        if sorted((species[i], species[j])) != sorted((species[k], species[l])):
            continue
        add_hermitian_term(two_body, (i, j, k, l), float(noise * rng.normal()))
        added += 1
    return ShellModelHamiltonian(tuple(orbitals), two_body)
