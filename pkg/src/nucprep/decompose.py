"""Two-qubit KAK decomposition and lowering of staircase circuits to Clifford + RZ.

Conventions
-----------
* ``RZ(t) = diag(exp(-i t/2), exp(i t/2))`` and ``RY(t) = exp(-i t Y/2)``.
* The KAK core is ``exp(i (x XX + y YY + z ZZ))`` with ``pi/4 >= x >= y >= |z|``.
  SWAP has angles ``(pi/4, pi/4, pi/4)``.
* In a two-qubit matrix the lower qubit index is the left Kronecker factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .staircase import StaircaseCircuit

__all__ = [
    "KakFactors",
    "kak_decompose",
    "zyz",
    "RotationCircuit",
    "RotationCountReport",
    "circuit_to_rotations",
    "elide_trivial_rotations",
    "rotation_circuit_unitary",
    "dumps_rotations",
    "loads_rotations",
    "RotationFormatError",
    "phase_invariant_error",
    "rz",
    "ry",
]

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
S = np.diag([1.0, 1j])
SDG = S.conj()
CX = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
CZ = np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)
XX, YY, ZZ = np.kron(X, X), np.kron(Y, Y), np.kron(Z, Z)

CLIFFORD_MATRICES = {"H": H, "S": S, "SDG": SDG, "X": X, "Z": Z, "CX": CX, "CZ": CZ}
SINGLE_CLIFFORDS = ("H", "S", "SDG", "X", "Z")

# magic basis: local SU(2) x SU(2) maps to SO(4), the KAK core becomes diagonal
MAGIC = np.array([[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]], dtype=complex) / math.sqrt(2)
_CORE_SIGNS = np.real(np.array([np.diag(MAGIC.conj().T @ p @ MAGIC) for p in (XX, YY, ZZ)])).T


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def kak_core(x: float, y: float, z: float) -> np.ndarray:
    return MAGIC @ np.diag(np.exp(1j * (_CORE_SIGNS @ np.array([x, y, z])))) @ MAGIC.conj().T


def phase_invariant_error(u: np.ndarray, v: np.ndarray) -> float:
    """Operator-norm distance ``min_phi ||u - e^{i phi} v||`` (upper bound via trace phase)."""
    t = np.trace(v.conj().T @ u)
    ph = t / abs(t) if abs(t) > 1e-300 else 1.0
    return float(np.linalg.norm(u - ph * v, 2))


def _check_unitary(u: np.ndarray, tol: float) -> None:
    err = np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0]))
    if err > tol:
        raise ValueError(f"matrix is not unitary (deviation {err:.3g})")


@dataclass
class KakFactors:
    """``u = global_phase * (post_a (x) post_b) exp(i(x XX + y YY + z ZZ)) (pre_a (x) pre_b)``."""

    pre_a: np.ndarray
    pre_b: np.ndarray
    post_a: np.ndarray
    post_b: np.ndarray
    canonical_angles: tuple
    global_phase: complex

    def core(self) -> np.ndarray:
        return kak_core(*self.canonical_angles)

    def unitary(self) -> np.ndarray:
        return (self.global_phase * np.kron(self.post_a, self.post_b) @ self.core()
                @ np.kron(self.pre_a, self.pre_b))


def _kron_factor(k: np.ndarray):
    """Split ``k = a (x) b`` with ``det a = det b = 1`` up to a returned phase."""
    r = k.reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    u, s, vh = np.linalg.svd(r)
    a = u[:, 0].reshape(2, 2) * math.sqrt(s[0])
    b = vh[0].reshape(2, 2) * math.sqrt(s[0])
    da, db = np.linalg.det(a), np.linalg.det(b)
    a = a / np.sqrt(da)
    b = b / np.sqrt(db)
    return a, b


def _real_diagonalize(m: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Real orthogonal ``P`` with ``P^T m P`` diagonal for symmetric unitary ``m``."""
    re, im = m.real, m.imag
    for attempt in range(50):
        t = rng.uniform(0.1, 0.9) if attempt else 0.5437
        _, p = np.linalg.eigh(t * re + (1 - t) * im)
        d = p.T @ m @ p
        if np.linalg.norm(d - np.diag(np.diag(d))) < 1e-11:
            return p
    # perturbation fallback for pathological degeneracies
    for _ in range(50):
        g = rng.normal(size=(4, 4))
        g = 1e-12 * (g + g.T)
        _, p = np.linalg.eigh(re + rng.uniform(0.1, 0.9) * im + g)
        d = p.T @ m @ p
        if np.linalg.norm(d - np.diag(np.diag(d))) < 1e-9:
            return p
    raise np.linalg.LinAlgError("simultaneous real diagonalization failed")


_SHIFT_OPS = (XX, YY, ZZ)
_SWAP_CONJ = {  # core(a) = L core(a with the pair swapped) R
    (0, 1): (np.kron(SDG, SDG), np.kron(S, S)),
    (0, 2): (np.kron(H, H), np.kron(H, H)),
}


def _canonicalize(ang, k1, k2, phase):
    """Move angles into the Weyl chamber, absorbing corrections into the locals.

    Invariant maintained: ``phase * k1 core(ang) k2`` is unchanged.
    """
    ang = list(ang)
    half = math.pi / 2
    for i in range(3):
        m = round(ang[i] / half)
        if m:
            # core(a) = core(a - m pi/2) (i P(x)P)^m
            ang[i] -= m * half
            k2 = np.linalg.matrix_power(_SHIFT_OPS[i], m % 2) @ k2
            phase *= 1j ** (m % 4)

    def swap(i, j):
        nonlocal k1, k2
        if (i, j) == (1, 2):
            swap(0, 1)
            swap(0, 2)
            swap(0, 1)
            return
        left, right = _SWAP_CONJ[(i, j)]
        ang[i], ang[j] = ang[j], ang[i]
        k1 = k1 @ left
        k2 = right @ k2

    def negate(i, j):
        nonlocal k1, k2
        keep = 3 - i - j
        p = np.kron((X, Y, Z)[keep], I2)
        ang[i], ang[j] = -ang[i], -ang[j]
        k1 = k1 @ p
        k2 = p @ k2

    for _ in range(2):
        for i in (0, 1):
            if abs(ang[i]) < abs(ang[i + 1]):
                swap(i, i + 1)
    if ang[0] < 0 and ang[1] < 0:
        negate(0, 1)
    elif ang[0] < 0:
        negate(0, 2)
    elif ang[1] < 0:
        negate(1, 2)
    if abs(ang[0] - math.pi / 4) < 1e-13 and ang[2] < 0:
        # (pi/4, y, z) ~ (-pi/4, y, z) ~ (pi/4, y, -z)
        ang[0] -= half
        k2 = XX @ k2
        phase *= 1j
        negate(0, 2)
    return ang, k1, k2, phase


def kak_decompose(u: np.ndarray, *, seed: int = 0) -> KakFactors:
    """KAK factorization of a 4x4 unitary via the magic basis."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4):
        raise ValueError("expected a 4x4 matrix")
    _check_unitary(u, 1e-10)
    rng = np.random.default_rng(seed)
    det = np.linalg.det(u)
    su = u / det ** 0.25
    up = MAGIC.conj().T @ su @ MAGIC
    m = up.T @ up
    p = _real_diagonalize(m, rng)
    if np.linalg.det(p) < 0:
        p[:, 0] = -p[:, 0]
    theta = np.angle(np.diag(p.T @ m @ p))
    half = theta / 2
    if round(np.sum(half) / math.pi) % 2:
        half[0] += math.pi
    k1m = up @ p @ np.diag(np.exp(-1j * half))
    # half = g + signs @ (x, y, z)
    sol = np.linalg.solve(np.column_stack([np.ones(4), _CORE_SIGNS]), half)
    ang = sol[1:]
    k1 = MAGIC @ k1m @ MAGIC.conj().T
    k2 = MAGIC @ p.T @ MAGIC.conj().T
    ang, k1, k2, _ = _canonicalize(ang, k1, k2, 1.0)
    post_a, post_b = _kron_factor(k1)
    pre_a, pre_b = _kron_factor(k2)
    rec = np.kron(post_a, post_b) @ kak_core(*ang) @ np.kron(pre_a, pre_b)
    tr = np.trace(rec.conj().T @ u) / 4
    phase = tr / abs(tr)
    return KakFactors(pre_a, pre_b, post_a, post_b, tuple(float(a) + 0.0 for a in ang), complex(phase))


def zyz(u: np.ndarray):
    """``u = phase * RZ(alpha) RY(beta) RZ(gamma)`` with ``beta`` in ``[0, pi]``.

    When ``beta`` is 0 or ``pi`` the free angle is put in ``alpha``.
    """
    u = np.asarray(u, dtype=complex)
    v = u / np.sqrt(np.linalg.det(u))
    beta = 2.0 * math.atan2(abs(v[1, 0]), abs(v[0, 0]))
    if abs(v[1, 0]) < 1e-14:
        alpha, gamma = 2.0 * float(np.angle(v[1, 1])), 0.0
        beta = 0.0
    elif abs(v[0, 0]) < 1e-14:
        alpha, gamma = 2.0 * float(np.angle(v[1, 0])), 0.0
        beta = math.pi
    else:
        s, d = 2.0 * float(np.angle(v[1, 1])), 2.0 * float(np.angle(v[1, 0]))
        alpha, gamma = (s + d) / 2, (s - d) / 2
    alpha, gamma = _wrap(alpha), _wrap(gamma)
    rec = rz(alpha) @ ry(beta) @ rz(gamma)
    t = np.trace(rec.conj().T @ u) / 2
    return alpha, beta, gamma, complex(t / abs(t))


def _wrap(a: float) -> float:
    """Map an angle to ``(-pi, pi]``."""
    a = math.remainder(a, 2 * math.pi)
    return math.pi if a <= -math.pi else a


@dataclass
class RotationCircuit:
    """Clifford + RZ circuit; ``ops`` are tuples ``(name, qubits, angle)``.

    ``angle`` is ``None`` for Clifford ops. The circuit unitary is
    ``global_phase * prod(ops)``.
    """

    n_qubits: int
    ops: list = field(default_factory=list)
    global_phase: complex = 1.0

    def rz_count(self) -> int:
        return sum(1 for op in self.ops if op[0] == "RZ")

    def copy(self) -> "RotationCircuit":
        return RotationCircuit(self.n_qubits, list(self.ops), self.global_phase)


class _Builder:
    def __init__(self, n):
        self.ops = []
        self.phase = 1.0 + 0j

    def cliff(self, name, *qubits):
        self.ops.append((name, tuple(qubits), None))

    def rz(self, q, angle):
        w = _wrap(angle)
        if abs(w - angle) > 1e-12:
            # RZ(a + 2 pi k) = (-1)^k RZ(a)
            k = round((angle - w) / (2 * math.pi))
            self.phase *= (-1) ** (k % 2)
        self.ops.append(("RZ", (q,), w))

    def single(self, q, u):
        """Lower a 2x2 unitary; returns the number of RZ ops emitted (3)."""
        a, b, g, ph = zyz(u)
        self.phase *= ph
        self.rz(q, g)
        self.cliff("SDG", q)
        self.cliff("H", q)
        self.rz(q, b)
        self.cliff("H", q)
        self.cliff("S", q)
        self.rz(q, a)
        return 3

    def core(self, q0, q1, angles):
        x, y, z = angles
        # exp(i t ZZ) = CX (I (x) RZ(-2t)) CX; XX and YY by H and S H conjugation
        self.cliff("H", q0)
        self.cliff("H", q1)
        self._zz(q0, q1, x)
        self.cliff("H", q0)
        self.cliff("H", q1)
        for q in (q0, q1):
            self.cliff("SDG", q)
            self.cliff("H", q)
        self._zz(q0, q1, y)
        for q in (q0, q1):
            self.cliff("H", q)
            self.cliff("S", q)
        self._zz(q0, q1, z)
        return 3

    def _zz(self, q0, q1, t):
        self.cliff("CX", q0, q1)
        self.rz(q1, -2.0 * t)
        self.cliff("CX", q0, q1)


@dataclass
class RotationCountReport:
    rz_total: int
    rz_per_gate: list
    merged_blocks: int
    rz_nontrivial: int = 0


def circuit_to_rotations(c: StaircaseCircuit, merge: bool = True, *, angle_tol: float = 1e-10):
    """Lower every SU(4) to Clifford + RZ via KAK and ZYZ.

    Without merging each gate costs 15 RZ. With merging the single-qubit
    factors left on a wire by one gate are multiplied into the next gate's
    factors, so a gate only owns its incoming rotations (6) and its core (3).
    Rotations still pending at the end are charged to the last gate that
    touched the wire. ``rz_nontrivial`` counts RZ ops that survive
    :func:`elide_trivial_rotations` with ``angle_tol``.
    """
    b = _Builder(c.n_qubits)
    gates = [(pair, u) for _, _, pair, u in c.gates()]
    per_gate = [0] * len(gates)
    pending = [None] * c.n_qubits
    owner = [None] * c.n_qubits
    merged = 0
    for gi, ((q0, q1), u) in enumerate(gates):
        k = kak_decompose(u)
        b.phase *= k.global_phase
        if merge:
            for q, pre in ((q0, k.pre_a), (q1, k.pre_b)):
                if pending[q] is not None:
                    pre = pre @ pending[q]
                    merged += 1
                per_gate[gi] += b.single(q, pre)
            per_gate[gi] += b.core(q0, q1, k.canonical_angles)
            pending[q0], pending[q1] = k.post_a, k.post_b
            owner[q0] = owner[q1] = gi
        else:
            per_gate[gi] += b.single(q0, k.pre_a) + b.single(q1, k.pre_b)
            per_gate[gi] += b.core(q0, q1, k.canonical_angles)
            per_gate[gi] += b.single(q0, k.post_a) + b.single(q1, k.post_b)
    for q in range(c.n_qubits):
        if pending[q] is not None:
            per_gate[owner[q]] += b.single(q, pending[q])
    r = RotationCircuit(c.n_qubits, b.ops, b.phase)
    report = RotationCountReport(r.rz_count(), per_gate, merged,
                                 elide_trivial_rotations(r, angle_tol).rz_count())
    return r, report


_CLIFFORD_RZ = {  # RZ(k pi/2) = phase * gate
    1: ("S", np.exp(-0.25j * math.pi)),
    2: ("Z", -1j),
    -1: ("SDG", np.exp(0.25j * math.pi)),
}


def elide_trivial_rotations(r: RotationCircuit, angle_tol: float = 1e-10) -> RotationCircuit:
    """Drop near-zero RZ ops and replace near-Clifford ones by S, Z or SDG."""
    if angle_tol < 0:
        raise ValueError("angle_tol must be non-negative")
    ops, phase = [], complex(r.global_phase)
    for name, qubits, angle in r.ops:
        if name != "RZ":
            ops.append((name, qubits, angle))
            continue
        k = round(angle / (math.pi / 2))
        if abs(angle - k * math.pi / 2) > angle_tol:
            ops.append((name, qubits, angle))
            continue
        k = ((k + 2) % 4) - 2   # -2..1, angle pi maps to -2
        if k == 0:
            continue
        if k == -2:
            k = 2
            phase *= -1 if angle < 0 else 1  # RZ(-pi) = -RZ(pi)
        gate, ph = _CLIFFORD_RZ[k]
        phase *= ph
        ops.append((gate, qubits, None))
    return RotationCircuit(r.n_qubits, ops, phase)


def _apply_op(state: np.ndarray, n: int, gate: np.ndarray, qubits) -> np.ndarray:
    """Apply a 1- or 2-qubit matrix to axes of a ``(2,)*n + (...)`` tensor."""
    k = len(qubits)
    g = gate.reshape((2,) * (2 * k))
    state = np.tensordot(g, state, axes=(list(range(k, 2 * k)), list(qubits)))
    return np.moveaxis(state, list(range(k)), list(qubits))


def rotation_circuit_unitary(r: RotationCircuit) -> np.ndarray:
    n = r.n_qubits
    u = np.eye(2 ** n, dtype=complex).reshape((2,) * n + (2 ** n,))
    for name, qubits, angle in r.ops:
        g = rz(angle) if name == "RZ" else CLIFFORD_MATRICES[name]
        u = _apply_op(u, n, g, qubits)
    return r.global_phase * u.reshape(2 ** n, 2 ** n)


class RotationFormatError(ValueError):
    pass


def dumps_rotations(r: RotationCircuit) -> str:
    lines = []
    for name, qubits, angle in r.ops:
        q = " ".join(str(x) for x in qubits)
        lines.append(f"RZ {q} {angle!r}" if name == "RZ" else f"{name} {q}")
    ph = complex(r.global_phase)
    lines.append(f"PHASE {ph.real!r} {ph.imag!r}")
    return "\n".join(lines) + "\n"


_ARITY = {"H": 1, "S": 1, "SDG": 1, "X": 1, "Z": 1, "CX": 2, "CZ": 2}


def loads_rotations(text: str, n_qubits: Optional[int] = None) -> RotationCircuit:
    ops, phase, top = [], 1.0 + 0j, -1
    for lineno, raw in enumerate(text.splitlines(), 1):
        f = raw.split()
        if not f:
            continue
        try:
            if f[0] == "PHASE":
                phase = complex(float(f[1]), float(f[2]))
            elif f[0] == "RZ":
                ops.append(("RZ", (int(f[1]),), float(f[2])))
            elif f[0] in _ARITY and len(f) == 1 + _ARITY[f[0]]:
                ops.append((f[0], tuple(int(x) for x in f[1:]), None))
            else:
                raise RotationFormatError(f"line {lineno}: unknown op {raw!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, RotationFormatError):
                raise
            raise RotationFormatError(f"line {lineno}: cannot parse {raw!r}") from exc
        if ops and f[0] != "PHASE":
            top = max(top, *ops[-1][1])
    return RotationCircuit(n_qubits if n_qubits is not None else top + 1, ops, phase)
