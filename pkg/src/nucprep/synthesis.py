"""Approximate single-qubit Clifford+T synthesis by meet-in-the-middle search.

Every single-qubit Clifford+T operator has a unique Matsumoto-Amano normal
form ``N C`` with ``N`` in ``(eps | T) (HT | SHT)*`` and ``C`` one of the 24
Cliffords, and the T-count of the operator is the number of T's in ``N``.
The database stores all ``N`` up to a half budget. A target ``U`` is matched
level by level in total T-count, so the first hit has minimal T-count.

Unitaries are handled as unit quaternions of their SU(2) representative.
The distance ``d(U, V) = sqrt(1 - |tr(U^+ V)| / 2)`` equals
``min(|q_U - q_V|, |q_U + q_V|) / sqrt(2)``, which is how it is computed here
because it avoids cancellation near zero.
"""

from __future__ import annotations

import enum
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .decompose import CLIFFORD_MATRICES, RotationCircuit, rz

__all__ = [
    "CliffordTSequence",
    "CliffordTCircuit",
    "SynthesisDatabase",
    "SynthesisStrategy",
    "SynthesisError",
    "DatabaseBudgetError",
    "build_database",
    "load_or_build_database",
    "synth_rz",
    "synth_u3",
    "synth_circuit",
    "sequence_matrix",
    "unitary_distance",
    "circuit_distance",
    "clifford_t_unitary",
    "dumps_clifford_t",
    "loads_clifford_t",
    "CliffordTFormatError",
    "HALF_BUDGET_CAP",
]

log = logging.getLogger(__name__)

HALF_BUDGET_CAP = 14
DB_VERSION = 1
T = np.diag([1.0, np.exp(0.25j * math.pi)])
GATES = dict(CLIFFORD_MATRICES, T=T, TDG=T.conj())
_LETTER = {"H": GATES["H"], "S": GATES["S"], "T": T}


class SynthesisError(RuntimeError):
    """No sequence within ``eps`` up to the search budget."""

    def __init__(self, message, best_error=None, best_t_count=None, gate_index=None):
        super().__init__(message)
        self.best_error = best_error
        self.best_t_count = best_t_count
        self.gate_index = gate_index


class DatabaseBudgetError(MemoryError):
    def __init__(self, message, count_reached):
        super().__init__(message)
        self.count_reached = count_reached


class SynthesisStrategy(enum.Enum):
    RZ_ONLY = "rz_only"
    HYBRID = "hybrid"


# --------------------------------------------------------------------------- helpers

def _su2(m: np.ndarray) -> np.ndarray:
    """Divide by a square root of the determinant (works on stacks)."""
    return m / np.sqrt(np.linalg.det(m))[..., None, None]


def _quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) of SU(2) matrix stack ``[[a, -b*], [b, a*]]``."""
    a, b = m[..., 0, 0], m[..., 1, 0]
    return np.stack([a.real, a.imag, b.real, b.imag], axis=-1)


def unitary_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Global-phase-invariant distance between two 2x2 unitaries."""
    qu, qv = _quat(_su2(np.asarray(u, dtype=complex))), _quat(_su2(np.asarray(v, dtype=complex)))
    return float(min(np.linalg.norm(qu - qv), np.linalg.norm(qu + qv)) / math.sqrt(2))


def circuit_distance(u: np.ndarray, v: np.ndarray) -> float:
    """``sqrt(1 - |tr(u^+ v)| / N)`` for N x N unitaries."""
    x = abs(np.trace(u.conj().T @ v)) / u.shape[0]
    return math.sqrt(max(0.0, 1.0 - x))


def _word_matrix(word: str) -> np.ndarray:
    m = np.eye(2, dtype=complex)
    for ch in word:
        m = m @ _LETTER[ch]
    return m


def sequence_matrix(gates) -> np.ndarray:
    """Matrix of a gate list in time order."""
    m = np.eye(2, dtype=complex)
    for g in gates:
        m = GATES[g] @ m
    return m


_PHASE_POWER = {"S": 1, "Z": 2, "SDG": 3}


def _peephole(gates: list) -> list:
    """Cancel ``H H`` and fold runs of S, Z, SDG into a single gate."""
    while True:
        out: list = []
        for g in gates:
            if g == "H" and out and out[-1] == "H":
                out.pop()
            elif g in _PHASE_POWER and out and out[-1] in _PHASE_POWER:
                k = (_PHASE_POWER[out.pop()] + _PHASE_POWER[g]) % 4
                if k:
                    out.append(("", "S", "Z", "SDG")[k])
            else:
                out.append(g)
        if out == gates:
            return out
        gates = out


def _clifford_words() -> list:
    """Shortest H/S words for the 24 single-qubit Cliffords (breadth first)."""
    words = [""]
    quats = [_quat(np.eye(2, dtype=complex))]
    frontier = [""]
    while frontier:
        nxt = []
        for w in frontier:
            for ch in "HS":
                cand = w + ch
                q = _quat(_su2(_word_matrix(cand)))
                if all(min(np.linalg.norm(q - p), np.linalg.norm(q + p)) > 1e-9 for p in quats):
                    words.append(cand)
                    quats.append(q)
                    nxt.append(cand)
        frontier = nxt
    assert len(words) == 24
    return words


CLIFFORD_WORDS = _clifford_words()
_CLIFFORD_SU2 = np.array([_su2(_word_matrix(w)) for w in CLIFFORD_WORDS])
_HT = _su2(GATES["H"] @ T)
_SHT = _su2(GATES["S"] @ GATES["H"] @ T)


# --------------------------------------------------------------------------- database

@dataclass
class CliffordTSequence:
    """``global_phase * sequence_matrix(gates)`` approximates the target."""

    gates: list
    t_count: int
    achieved_error: float
    global_phase: complex = 1.0

    def matrix(self) -> np.ndarray:
        return self.global_phase * sequence_matrix(self.gates)


@dataclass
class SynthesisDatabase:
    """Normal-form prefixes ``N`` graded by T-count, plus a KD-tree over them.

    ``levels[t]`` holds the words of T-count ``t`` (operator order, letters
    H, S, T) for ``t <= t_budget``. ``suffix`` holds ``(HT | SHT)^t_budget``,
    the right half used when the total T-count exceeds ``t_budget``.
    """

    t_budget: int
    levels: list
    level_su2: list
    suffix: list
    suffix_su2: np.ndarray
    _tree: Optional[cKDTree] = field(default=None, repr=False)
    _tree_t: Optional[np.ndarray] = field(default=None, repr=False)
    _tree_idx: Optional[np.ndarray] = field(default=None, repr=False)
    _suffix_tree: Optional[cKDTree] = field(default=None, repr=False)

    def __post_init__(self):
        q = np.concatenate([_quat(m) for m in self.level_su2])
        t = np.concatenate([np.full(len(w), k) for k, w in enumerate(self.levels)])
        idx = np.concatenate([np.arange(len(w)) for w in self.levels])
        self._tree = cKDTree(np.concatenate([q, -q]))
        self._tree_t = np.concatenate([t, t])
        self._tree_idx = np.concatenate([idx, idx])
        sq = _quat(self.suffix_su2)
        self._suffix_tree = cKDTree(np.concatenate([sq, -sq]))

    @property
    def max_t_count(self) -> int:
        return 2 * self.t_budget

    def __len__(self) -> int:
        return 24 * sum(len(w) for w in self.levels)

    def entries(self):
        """``(gates, t_count)`` for every normal form ``N C`` with T-count <= t_budget."""
        for t, words in enumerate(self.levels):
            for w in words:
                for c in CLIFFORD_WORDS:
                    yield _word_to_gates(w + c), t

    def save(self, path) -> None:
        np.savez_compressed(
            path, version=DB_VERSION, t_budget=self.t_budget,
            words=np.array([w for lvl in self.levels for w in lvl], dtype=object).astype(str),
            counts=np.array([len(lvl) for lvl in self.levels]),
            suffix=np.array(self.suffix, dtype=str),
            # matrices are stored rather than recomputed so a cached database
            # breaks nearest-neighbour ties exactly like a fresh build
            level_su2=np.concatenate(self.level_su2), suffix_su2=self.suffix_su2)

    @classmethod
    def load(cls, path) -> "SynthesisDatabase":
        with np.load(path, allow_pickle=False) as z:
            if int(z["version"]) != DB_VERSION:
                raise ValueError(f"database cache {path} has version {int(z['version'])}")
            words = [str(w) for w in z["words"]]
            counts = z["counts"]
            suffix = [str(w) for w in z["suffix"]]
            t_budget = int(z["t_budget"])
            all_su2, suffix_su2 = z["level_su2"], z["suffix_su2"]
        if len(all_su2) != len(words) or len(suffix_su2) != len(suffix):
            raise ValueError(f"database cache {path} is inconsistent")
        levels, level_su2, start = [], [], 0
        for c in counts:
            # the empty word round-trips through numpy as ''
            levels.append(words[start:start + c])
            level_su2.append(all_su2[start:start + c])
            start += c
        return cls(t_budget, levels, level_su2, suffix, suffix_su2)


def _word_to_gates(word: str) -> list:
    """Operator-order word to a time-ordered gate list."""
    return _peephole(list(reversed(word)))


def _grow(words, mats):
    return ([w + "HT" for w in words] + [w + "SHT" for w in words],
            np.concatenate([mats @ _HT, mats @ _SHT]))


def build_database(t_budget: int, *, max_entries: int = 2_000_000) -> SynthesisDatabase:
    """Enumerate normal-form prefixes with T-count up to ``t_budget``."""
    if not 0 <= t_budget <= HALF_BUDGET_CAP:
        raise ValueError(f"t_budget must lie in [0, {HALF_BUDGET_CAP}]")
    levels = [[""]]
    mats = [np.eye(2, dtype=complex)[None]]
    count = 1
    if t_budget >= 1:
        levels.append(["T", "HT", "SHT"])
        mats.append(np.array([_su2(T), _HT, _SHT]))
        count += 3
    for t in range(2, t_budget + 1):
        if count + 2 * len(levels[-1]) > max_entries:
            raise DatabaseBudgetError(f"database would exceed {max_entries} entries at T-count {t}", count)
        w, m = _grow(levels[-1], mats[-1])
        levels.append(w)
        mats.append(m)
        count += len(w)
    suffix, smats = [""], np.eye(2, dtype=complex)[None]
    for _ in range(t_budget):
        suffix, smats = _grow(suffix, smats)
    return SynthesisDatabase(t_budget, levels, mats, suffix, smats)


def load_or_build_database(t_budget: int, cache_dir: Optional[str] = None) -> SynthesisDatabase:
    """Build the database, reusing a binary cache in ``cache_dir`` when present."""
    if cache_dir is None:
        return build_database(t_budget)
    path = os.path.join(cache_dir, f"ctdb_v{DB_VERSION}_t{t_budget}.npz")
    if os.path.exists(path):
        try:
            return SynthesisDatabase.load(path)
        except (ValueError, KeyError, OSError) as exc:
            log.warning("ignoring unreadable database cache %s (%s)", path, exc)
    db = build_database(t_budget)
    os.makedirs(cache_dir, exist_ok=True)
    tmp = path + ".tmp.npz"
    db.save(tmp)
    os.replace(tmp, path)
    return db


# --------------------------------------------------------------------------- search

def _finish(word: str, t_count: int, target: np.ndarray) -> CliffordTSequence:
    gates = _word_to_gates(word)
    m = sequence_matrix(gates)
    tr = np.trace(m.conj().T @ target)
    phase = tr / abs(tr)
    return CliffordTSequence(gates, t_count, unitary_distance(target, m), complex(phase))


def _search(u: np.ndarray, eps: float, db: SynthesisDatabase) -> CliffordTSequence:
    if eps <= 0:
        raise ValueError("eps must be positive")
    target = np.asarray(u, dtype=complex)
    su = _su2(target)
    radius = math.sqrt(2) * eps
    # stage 1: U C^+ against all prefixes up to the half budget
    wq = _quat(su @ _CLIFFORD_SU2.conj().transpose(0, 2, 1))
    hits = db._tree.query_ball_point(wq, radius)
    cand_c = np.concatenate([np.full(len(h), ci) for ci, h in enumerate(hits)]).astype(int)
    if cand_c.size:
        pts = np.concatenate([np.asarray(h, dtype=int) for h in hits])
        chord = np.linalg.norm(db._tree.data[pts] - wq[cand_c], axis=1)
        for j in np.lexsort((chord, db._tree_t[pts])):
            t, i = int(db._tree_t[pts[j]]), int(db._tree_idx[pts[j]])
            seq = _finish(db.levels[t][i] + CLIFFORD_WORDS[cand_c[j]], t, target)
            if seq.achieved_error <= eps:
                return seq
    # stage 2: N_a^+ U C^+ against the suffix set, T-count t = t_a + t_budget
    best_err = None
    for ta in range(1, db.t_budget + 1):
        na = db.level_su2[ta]
        w = np.einsum("aij,jk,ckl->acil", na.conj().transpose(0, 2, 1), su,
                      _CLIFFORD_SU2.conj().transpose(0, 2, 1))
        dist, idx = db._suffix_tree.query(_quat(w).reshape(-1, 4), k=1)
        order = np.argsort(dist, kind="stable")
        for flat in order:
            if dist[flat] > radius:
                break
            a, ci = divmod(int(flat), 24)
            s = int(idx[flat]) % len(db.suffix)
            seq = _finish(db.levels[ta][a] + db.suffix[s] + CLIFFORD_WORDS[ci], ta + db.t_budget, target)
            if seq.achieved_error <= eps:
                return seq
        d0 = float(dist.min()) / math.sqrt(2)
        best_err = d0 if best_err is None else min(best_err, d0)
    raise SynthesisError(
        f"no sequence within eps={eps:g} up to T-count {db.max_t_count} (best error {best_err:.3g})",
        best_error=best_err, best_t_count=db.max_t_count)


_EXACT_RZ = {0: [], 1: ["T"], 2: ["S"], 3: ["T", "S"], 4: ["Z"], 5: ["T", "Z"], 6: ["SDG"], 7: ["TDG"]}


def synth_rz(theta: float, eps: float, db: SynthesisDatabase) -> CliffordTSequence:
    """Approximate ``RZ(theta)`` within ``eps``; multiples of pi/4 are exact."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    target = rz(theta)
    k = round(theta / (math.pi / 4))
    if abs(theta - k * math.pi / 4) < 1e-12:
        gates = _EXACT_RZ[k % 8]
        m = sequence_matrix(gates)
        tr = np.trace(m.conj().T @ target)
        return CliffordTSequence(list(gates), sum(g in ("T", "TDG") for g in gates),
                                 unitary_distance(target, m), complex(tr / abs(tr)))
    return _search(target, eps, db)


def synth_u3(u: np.ndarray, eps: float, db: SynthesisDatabase) -> CliffordTSequence:
    """Approximate an arbitrary single-qubit unitary within ``eps``."""
    u = np.asarray(u, dtype=complex)
    if np.linalg.norm(u.conj().T @ u - np.eye(2)) > 1e-10:
        raise ValueError("target is not unitary")
    return _search(u, eps, db)


# --------------------------------------------------------------------------- circuits

@dataclass
class CliffordTCircuit:
    n_qubits: int
    gates: list = field(default_factory=list)  # (name, qubits)
    global_phase: complex = 1.0

    @property
    def t_count(self) -> int:
        return sum(1 for g, _ in self.gates if g in ("T", "TDG"))


def synth_circuit(r: RotationCircuit, eps: float, strategy: SynthesisStrategy,
                  db: SynthesisDatabase, *, cache: Optional[dict] = None):
    """Replace rotations by Clifford+T sequences.

    With ``HYBRID``, every maximal run of single-qubit ops on one wire that
    holds at least two RZ is multiplied out and synthesized as one unitary.
    Ops on different wires commute, so each run is emitted just before the
    two-qubit op that ends it. Returns ``(circuit, total_t_count, errors)``
    with one error per synthesized unit.
    """
    strategy = SynthesisStrategy(strategy)
    cache = {} if cache is None else cache
    out = CliffordTCircuit(r.n_qubits, [], complex(r.global_phase))
    errors: list = []
    runs: dict = {q: [] for q in range(r.n_qubits)}

    def synth(kind, payload, index):
        key = (kind, payload if kind == "rz" else payload.tobytes(), eps)
        if key not in cache:
            try:
                cache[key] = synth_rz(payload, eps, db) if kind == "rz" else synth_u3(payload, eps, db)
            except SynthesisError as exc:
                exc.gate_index = index
                raise SynthesisError(f"op {index}: {exc}", exc.best_error, exc.best_t_count, index) from exc
        return cache[key]

    def emit(seq, q):
        out.gates.extend((g, (q,)) for g in seq.gates)
        out.global_phase *= seq.global_phase
        errors.append(seq.achieved_error)

    def flush(q):
        run = runs[q]
        runs[q] = []
        n_rz = sum(1 for _, (name, _, _) in run if name == "RZ")
        if strategy is SynthesisStrategy.HYBRID and n_rz >= 2:
            u = np.eye(2, dtype=complex)
            for _, (name, _, angle) in run:
                u = (rz(angle) if name == "RZ" else GATES[name]) @ u
            emit(synth("u3", u, run[0][0]), q)
            return
        for index, (name, _, angle) in run:
            if name == "RZ":
                emit(synth("rz", float(angle), index), q)
            else:
                out.gates.append((name, (q,)))

    for index, op in enumerate(r.ops):
        name, qubits, _ = op
        if len(qubits) == 1:
            runs[qubits[0]].append((index, op))
            continue
        for q in qubits:
            flush(q)
        out.gates.append((name, tuple(qubits)))
    for q in range(r.n_qubits):
        flush(q)
    return out, out.t_count, errors


def clifford_t_unitary(c: CliffordTCircuit) -> np.ndarray:
    from .decompose import _apply_op

    n = c.n_qubits
    u = np.eye(2 ** n, dtype=complex).reshape((2,) * n + (2 ** n,))
    for name, qubits in c.gates:
        u = _apply_op(u, n, GATES[name], qubits)
    return c.global_phase * u.reshape(2 ** n, 2 ** n)


class CliffordTFormatError(ValueError):
    pass


_ARITY = {"H": 1, "S": 1, "SDG": 1, "T": 1, "TDG": 1, "X": 1, "Z": 1, "CX": 2, "CZ": 2}


def dumps_clifford_t(c: CliffordTCircuit) -> str:
    lines = [f"CTQ1 {c.n_qubits} {c.t_count}"]
    lines += [f"{g} " + " ".join(str(q) for q in qs) for g, qs in c.gates]
    return "\n".join(lines) + "\n"


def loads_clifford_t(text: str) -> CliffordTCircuit:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0][0] != "CTQ1" or len(lines[0]) != 3:
        raise CliffordTFormatError("missing CTQ1 header")
    try:
        n, t_header = int(lines[0][1]), int(lines[0][2])
        c = CliffordTCircuit(n)
        for f in lines[1:]:
            if f[0] not in _ARITY or len(f) != 1 + _ARITY[f[0]]:
                raise CliffordTFormatError(f"bad gate line {' '.join(f)!r}")
            qubits = tuple(int(x) for x in f[1:])
            if any(not 0 <= q < n for q in qubits) or len(set(qubits)) != len(qubits):
                raise CliffordTFormatError(f"bad qubit indices in {' '.join(f)!r}")
            c.gates.append((f[0], qubits))
    except ValueError as exc:
        if isinstance(exc, CliffordTFormatError):
            raise
        raise CliffordTFormatError(f"malformed integer ({exc})") from None
    if c.t_count != t_header:
        raise CliffordTFormatError("T-count in header does not match the gate list")
    return c
