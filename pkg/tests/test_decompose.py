import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from nucprep.decompose import (CX, RotationCircuit, RotationFormatError, circuit_to_rotations, dumps_rotations,
                               elide_trivial_rotations, kak_core, kak_decompose, loads_rotations,
                               phase_invariant_error, rotation_circuit_unitary, ry, rz, zyz)
from nucprep.staircase import StaircaseCircuit, circuit_unitary, haar_unitary

PAULI = {"X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]), "Z": np.diag([1, -1])}
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)


def local(rng):
    return np.kron(haar_unitary(2, rng), haar_unitary(2, rng))


def makhlin_invariants(u):
    """Local-equivalence invariants (G1, G2) from the magic-basis Gram matrix."""
    q = np.array([[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]]) / math.sqrt(2)
    ub = q.conj().T @ u @ q
    m = ub.T @ ub
    det = np.linalg.det(u)
    g1 = np.trace(m) ** 2 / (16 * det)
    g2 = (np.trace(m) ** 2 - np.trace(m @ m)) / (4 * det)
    return g1, g2


def test_core_is_exponential():
    x, y, z = 0.3, -0.2, 0.1
    h = sum(a * np.kron(PAULI[p], PAULI[p]) for a, p in zip((x, y, z), "XYZ"))
    np.testing.assert_allclose(kak_core(x, y, z), expm(1j * h), atol=1e-14)


def test_random_reconstruction_and_chamber():
    rng = np.random.default_rng(0)
    for _ in range(200):
        u = haar_unitary(4, rng)
        k = kak_decompose(u)
        assert np.linalg.norm(k.unitary() - u, 2) < 1e-10
        x, y, z = k.canonical_angles
        assert math.pi / 4 + 1e-12 >= x >= y - 1e-12
        assert y >= abs(z) - 1e-12
        for f in (k.pre_a, k.pre_b, k.post_a, k.post_b):
            np.testing.assert_allclose(f.conj().T @ f, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("gate, angles", [
    (SWAP, (math.pi / 4, math.pi / 4, math.pi / 4)),
    (CX, (math.pi / 4, 0.0, 0.0)),
    (np.eye(4), (0.0, 0.0, 0.0)),
    (np.diag([1, 1, 1, -1]).astype(complex), (math.pi / 4, 0.0, 0.0)),
])
def test_known_gates(gate, angles):
    k = kak_decompose(gate)
    np.testing.assert_allclose(k.canonical_angles, angles, atol=1e-10)
    assert np.linalg.norm(k.unitary() - gate, 2) < 1e-10


def test_angles_match_makhlin_invariants():
    rng = np.random.default_rng(1)
    for _ in range(20):
        u = haar_unitary(4, rng)
        k = kak_decompose(u)
        np.testing.assert_allclose(makhlin_invariants(kak_core(*k.canonical_angles)), makhlin_invariants(u),
                                   atol=1e-10)


def test_locally_equivalent_gates_share_angles():
    rng = np.random.default_rng(2)
    for _ in range(20):
        u = haar_unitary(4, rng)
        v = local(rng) @ u @ local(rng)
        np.testing.assert_allclose(kak_decompose(u).canonical_angles, kak_decompose(v).canonical_angles,
                                   atol=1e-9)


@pytest.mark.parametrize("angles", [(math.pi / 4, 0, 0), (math.pi / 4, math.pi / 4, -math.pi / 4),
                                    (0.3, 0.3, -0.3), (0.2, 0.2, 0.0), (0.0, 0.0, 0.0)])
def test_degenerate_spectra(angles):
    rng = np.random.default_rng(3)
    w = local(rng) @ kak_core(*angles) @ local(rng)
    assert np.linalg.norm(kak_decompose(w).unitary() - w, 2) < 1e-9


def test_kak_rejects_non_unitary():
    with pytest.raises(ValueError):
        kak_decompose(np.ones((4, 4)))


def test_zyz():
    rng = np.random.default_rng(4)
    for _ in range(50):
        u = haar_unitary(2, rng)
        a, b, g, ph = zyz(u)
        assert 0 <= b <= math.pi
        assert all(-math.pi < t <= math.pi for t in (a, g))
        np.testing.assert_allclose(ph * rz(a) @ ry(b) @ rz(g), u, atol=1e-12)


def test_phase_invariant_error():
    rng = np.random.default_rng(5)
    u = haar_unitary(4, rng)
    assert phase_invariant_error(u, np.exp(0.7j) * u) < 1e-14
    assert phase_invariant_error(u, np.eye(4)) > 0.1


@pytest.mark.parametrize("merge", [False, True])
def test_lowering_preserves_unitary(merge):
    c = StaircaseCircuit.random(5, 1, 2, seed=3)
    r, rep = circuit_to_rotations(c, merge)
    assert np.linalg.norm(rotation_circuit_unitary(r) - circuit_unitary(c), 2) < 1e-10
    assert rep.rz_total == r.rz_count() == sum(rep.rz_per_gate)


def test_merge_counts():
    c = StaircaseCircuit.random(5, 1, 2, seed=3)
    _, raw = circuit_to_rotations(c, merge=False)
    _, merged = circuit_to_rotations(c, merge=True)
    assert raw.rz_per_gate == [15] * 8
    assert merged.rz_total < raw.rz_total
    layer = [li for li, *_ in c.gates()]
    assert all(n == 9 for n, li in zip(merged.rz_per_gate, layer) if li == 0)


def test_elision_and_identity_circuit():
    c = StaircaseCircuit.identity(4, 1, 2)
    r, rep = circuit_to_rotations(c)
    assert rep.rz_nontrivial == 0
    e = elide_trivial_rotations(r)
    assert e.rz_count() == 0
    np.testing.assert_allclose(rotation_circuit_unitary(e), np.eye(16), atol=1e-12)


def test_elision_keeps_unitary():
    r = RotationCircuit(1, [("RZ", (0,), math.pi / 2), ("H", (0,), None), ("RZ", (0,), math.pi),
                            ("RZ", (0,), -math.pi / 2), ("RZ", (0,), 0.3), ("RZ", (0,), 1e-13)])
    e = elide_trivial_rotations(r, 1e-10)
    assert e.rz_count() == 1
    np.testing.assert_allclose(rotation_circuit_unitary(e), rotation_circuit_unitary(r), atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(2, 5))
def test_rotation_serialization_roundtrip(seed, n):
    c = StaircaseCircuit.random(n, 0, 1, seed=seed)
    r, _ = circuit_to_rotations(c)
    back = loads_rotations(dumps_rotations(r), n)
    assert back.ops == r.ops
    assert back.global_phase == r.global_phase


@pytest.mark.parametrize("text", ["RZ 0\n", "FOO 1\n", "RZ 0 x\n", "CX 0\n"])
def test_rotation_format_errors(text):
    with pytest.raises(RotationFormatError):
        loads_rotations("H 0\n" + text)
