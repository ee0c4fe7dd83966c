"""Variational compilation of an MPS into V-shaped staircase circuits.

A layer is a chain of two-qubit gates on neighbouring qubits. It starts on
the bond between the proton and neutron halves and then walks outward to
both ends. Gates are updated one at a time by replacing each with the polar
unitary of its environment in ``<target| U |0...0>``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mps import MPS, _overlap_left_step, _overlap_right_step, apply_gate, overlap

__all__ = [
    "StaircaseCircuit",
    "CompileReport",
    "vshape_layer_order",
    "optimize_sweep",
    "grow_and_compile",
    "circuit_to_state",
    "circuit_unitary",
    "embed_two_qubit",
    "haar_unitary",
    "dumps_circuit",
    "loads_circuit",
    "CircuitFormatError",
]

log = logging.getLogger(__name__)

EXACT_SV_TOL = 1e-15
PERTURBATION = 1e-8


class CircuitFormatError(ValueError):
    pass


def vshape_layer_order(n_qubits: int, center_bond: int) -> list:
    """Gate pairs of one layer in application order.

    The center pair comes first, then the arm running down to qubit 0, then
    the arm running up to the last qubit. The two arms act on disjoint
    qubits, so their relative order does not change the layer unitary.
    """
    if n_qubits < 2:
        raise ValueError("a staircase layer needs at least two qubits")
    if not 0 <= center_bond < n_qubits - 1:
        raise ValueError(f"center bond {center_bond} out of range for {n_qubits} qubits")
    pairs = [(center_bond, center_bond + 1)]
    pairs += [(i, i + 1) for i in range(center_bond - 1, -1, -1)]
    pairs += [(i, i + 1) for i in range(center_bond + 1, n_qubits - 1)]
    return pairs


@dataclass
class StaircaseCircuit:
    """Layers of 4x4 unitaries; ``layers[0]`` acts first on ``|0...0>``."""

    n_qubits: int
    center_bond: int
    layers: list = field(default_factory=list)

    def __post_init__(self):
        order = vshape_layer_order(self.n_qubits, self.center_bond)
        layers = []
        for layer in self.layers:
            layer = [((int(p[0]), int(p[1])), np.asarray(u, dtype=complex)) for p, u in layer]
            if [p for p, _ in layer] != order:
                raise ValueError("layer pairs do not follow the V-shaped order")
            layers.append(layer)
        self.layers = layers

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_gates(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def gates(self):
        """``(layer, position, pair, unitary)`` in application order."""
        for li, layer in enumerate(self.layers):
            for pos, (pair, u) in enumerate(layer):
                yield li, pos, pair, u

    def copy(self) -> "StaircaseCircuit":
        return StaircaseCircuit(self.n_qubits, self.center_bond,
                                [[(p, u.copy()) for p, u in layer] for layer in self.layers])

    def with_layer(self, gates: list, first: bool = True) -> "StaircaseCircuit":
        order = vshape_layer_order(self.n_qubits, self.center_bond)
        layer = list(zip(order, gates))
        layers = [[(p, u.copy()) for p, u in lay] for lay in self.layers]
        layers = [layer] + layers if first else layers + [layer]
        return StaircaseCircuit(self.n_qubits, self.center_bond, layers)

    @classmethod
    def identity(cls, n_qubits: int, center_bond: int, n_layers: int) -> "StaircaseCircuit":
        order = vshape_layer_order(n_qubits, center_bond)
        return cls(n_qubits, center_bond, [[(p, np.eye(4, dtype=complex)) for p in order]
                                           for _ in range(n_layers)])

    @classmethod
    def random(cls, n_qubits: int, center_bond: int, n_layers: int, seed: int) -> "StaircaseCircuit":
        rng = np.random.default_rng(seed)
        order = vshape_layer_order(n_qubits, center_bond)
        return cls(n_qubits, center_bond, [[(p, haar_unitary(4, rng)) for p in order]
                                           for _ in range(n_layers)])


@dataclass
class CompileReport:
    overlaps_per_layer: list = field(default_factory=list)
    sweeps_per_stage: list = field(default_factory=list)
    sweep_overlaps: list = field(default_factory=list)
    degenerate_updates: int = 0

    @property
    def final_overlap(self) -> float:
        return self.overlaps_per_layer[-1] if self.overlaps_per_layer else 0.0


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def _polar_unitary(a: np.ndarray) -> np.ndarray:
    u, _, vh = np.linalg.svd(a)
    return u @ vh


def _near_identity(rng: np.random.Generator, scale: float = PERTURBATION) -> np.ndarray:
    z = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    return _polar_unitary(np.eye(4) + scale * z)


def _zero_state(n: int) -> MPS:
    return MPS.product_state([0] * n)


def _gate_environment(bra: MPS, ket: MPS, site: int) -> np.ndarray:
    """``E`` with ``<bra| g_(site,site+1) |ket> = Tr(g E)``."""
    env = np.ones((1, 1), dtype=complex)
    for j in range(site):
        env = _overlap_left_step(env, bra.tensors[j], ket.tensors[j])
    renv = np.ones((1, 1), dtype=complex)
    for j in range(bra.n_sites - 1, site + 1, -1):
        renv = _overlap_right_step(renv, bra.tensors[j], ket.tensors[j])
    k = np.tensordot(env, ket.tensors[site], axes=(1, 0))          # (x, c, y')
    k = np.tensordot(k, ket.tensors[site + 1], axes=(2, 0))        # (x, c, d, y'')
    k = np.tensordot(k, renv, axes=(3, 1))                         # (x, c, d, x'')
    b = np.tensordot(bra.tensors[site].conj(), bra.tensors[site + 1].conj(), axes=(2, 0))  # (x, a, b, x'')
    m = np.tensordot(b, k, axes=([0, 3], [0, 3]))                  # (a, b, c, d)
    return m.reshape(4, 4).T


def _apply(state: MPS, u: np.ndarray, site: int, chi: Optional[int]) -> MPS:
    return apply_gate(state, u, site, chi_max=chi, sv_tol=EXACT_SV_TOL, check=False)


def optimize_sweep(c: StaircaseCircuit, target: MPS, chi_env: Optional[int] = None, *,
                   active_layers=None, report: Optional[CompileReport] = None):
    """One forward-then-backward pass of polar updates over the active gates.

    Returns the updated circuit and ``|<target| U |0>|`` after the pass.
    """
    c = c.copy()
    flat = [(li, pos, pair) for li, pos, pair, _ in c.gates()]
    active = set(range(c.n_layers)) if active_layers is None else set(active_layers)
    gate = {(li, pos): u for li, pos, _, u in c.gates()}
    n = c.n_qubits
    K = len(flat)
    if K == 0:
        return c, abs(overlap(target, _zero_state(n)))

    def update(k, bra, ket):
        li, pos, pair = flat[k]
        if li not in active:
            return abs(np.trace(gate[(li, pos)] @ _gate_environment(bra, ket, pair[0])))
        env = _gate_environment(bra, ket, pair[0])
        w, s, vh = np.linalg.svd(env)
        if s[0] <= 1e-300:
            log.warning("degenerate environment at layer %d gate %d; using identity", li, pos)
            if report is not None:
                report.degenerate_updates += 1
            gate[(li, pos)] = np.eye(4, dtype=complex)
            return 0.0
        gate[(li, pos)] = vh.conj().T @ w.conj().T
        return float(np.sum(s))

    # backward states B_k = G_{k+1}^+ ... G_K^+ |target>
    back = [None] * K
    back[K - 1] = target
    for k in range(K - 1, 0, -1):
        back[k - 1] = _apply(back[k], gate[flat[k][:2]].conj().T, flat[k][2][0], chi_env)
    fwd = [None] * (K + 1)
    fwd[0] = _zero_state(n)
    ov = 0.0
    for k in range(K):
        ov = update(k, back[k], fwd[k])
        fwd[k + 1] = _apply(fwd[k], gate[flat[k][:2]], flat[k][2][0], chi_env)
    cur = target
    for k in range(K - 1, -1, -1):
        ov = update(k, cur, fwd[k])
        cur = _apply(cur, gate[flat[k][:2]].conj().T, flat[k][2][0], chi_env)
    layers = [[(pair, gate[(li, pos)]) for pos, (pair, _) in enumerate(layer)]
              for li, layer in enumerate(c.layers)]
    return StaircaseCircuit(n, c.center_bond, layers), float(ov)


def _converge(c, target, chi_env, rel_tol, max_sweeps, active, report, history):
    ov_prev = None
    sweeps = 0
    while sweeps < max_sweeps:
        c, ov = optimize_sweep(c, target, chi_env, active_layers=active, report=report)
        sweeps += 1
        history.append(ov)
        if ov_prev is not None and abs(ov - ov_prev) <= rel_tol * max(ov, 1e-300):
            break
        ov_prev = ov
    return c, sweeps


def grow_and_compile(target: MPS, max_layers: int, rel_tol: float = 1e-4,
                     chi_env: Optional[int] = None, *, center_bond: Optional[int] = None,
                     max_sweeps: int = 200, seed: int = 0):
    """Grow a staircase circuit one layer at a time.

    The first layer starts from random gates. Each further layer is inserted
    next to ``|0...0>`` as (nearly) identity gates, optimized on its own
    against the residual ``U_old^+ |target>``, and then all layers are
    optimized together. Returns the circuit at every depth and a report.
    """
    if max_layers < 1:
        raise ValueError("max_layers must be >= 1")
    n = target.n_sites
    if center_bond is None:
        center_bond = n // 2 - 1
    if chi_env is None:
        chi_env = 2 * target.max_bond
    target = target.normalized()
    rng = np.random.default_rng(seed)
    report = CompileReport()
    circuits = []
    c = StaircaseCircuit(n, center_bond, [])
    for depth in range(1, max_layers + 1):
        history = []
        order = vshape_layer_order(n, center_bond)
        if depth == 1:
            c = c.with_layer([haar_unitary(4, rng) for _ in order])
            c, sweeps = _converge(c, target, chi_env, rel_tol, max_sweeps, None, report, history)
        else:
            c = c.with_layer([_near_identity(rng) for _ in order], first=True)
            c, s1 = _converge(c, target, chi_env, rel_tol, max_sweeps, [0], report, history)
            c, s2 = _converge(c, target, chi_env, rel_tol, max_sweeps, None, report, history)
            sweeps = s1 + s2
        report.sweeps_per_stage.append(sweeps)
        report.sweep_overlaps.append(history)
        report.overlaps_per_layer.append(history[-1])
        circuits.append(c.copy())
        log.info("depth %d overlap %.8f after %d sweeps", depth, history[-1], sweeps)
    return circuits, report


def circuit_to_state(c: StaircaseCircuit, chi_max: Optional[int] = None) -> MPS:
    """``U |0...0>`` by sequential gate application."""
    s = _zero_state(c.n_qubits)
    for _, _, pair, u in c.gates():
        s = apply_gate(s, u, pair[0], chi_max=chi_max, sv_tol=EXACT_SV_TOL)
    return s


def circuit_unitary(c: StaircaseCircuit) -> np.ndarray:
    """Dense unitary (site 0 most significant); small circuits only."""
    n = c.n_qubits
    u = np.eye(2 ** n, dtype=complex)
    for _, _, pair, g in c.gates():
        u = embed_two_qubit(g, pair[0], n) @ u
    return u


def embed_two_qubit(g: np.ndarray, site: int, n: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(2 ** site), g), np.eye(2 ** (n - site - 2)))


def dumps_circuit(c: StaircaseCircuit) -> str:
    lines = [f"SU4C1 {c.n_qubits} {c.n_layers}"]
    for li, _, (i, j), u in c.gates():
        lines.append(f"G {li} {i} {j}")
        for z in u.reshape(-1):
            lines.append(f"{z.real:.17g} {z.imag:.17g}")
    return "\n".join(lines) + "\n"


def loads_circuit(text: str, center_bond: Optional[int] = None) -> StaircaseCircuit:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CircuitFormatError("empty circuit file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "SU4C1":
        raise CircuitFormatError(f"bad circuit header {lines[0]!r}")
    n, n_layers = int(head[1]), int(head[2])
    layers = [[] for _ in range(n_layers)]
    pos = 1
    while pos < len(lines):
        f = lines[pos].split()
        if f[0] != "G" or len(f) != 4:
            raise CircuitFormatError(f"expected gate header, got {lines[pos]!r}")
        li, i, j = int(f[1]), int(f[2]), int(f[3])
        if j != i + 1 or not 0 <= li < n_layers:
            raise CircuitFormatError(f"invalid gate header {lines[pos]!r}")
        vals = np.array([[float(x) for x in ln.split()] for ln in lines[pos + 1:pos + 17]])
        if vals.shape != (16, 2):
            raise CircuitFormatError("truncated gate matrix")
        layers[li].append(((i, j), (vals[:, 0] + 1j * vals[:, 1]).reshape(4, 4)))
        pos += 17
    if center_bond is None:
        center_bond = layers[0][0][0][0] if n_layers and layers[0] else n // 2 - 1
    return StaircaseCircuit(n, center_bond, layers)
