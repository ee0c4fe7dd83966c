"""Acceptance checks, one test per numbered criterion.

Every test prints a single ``[PASS]`` or ``[FAIL]`` line (visible even when
pytest captures output) so that ``pytest -v`` doubles as the acceptance report.
"""

import contextlib
import csv
import math
import os
import time

import numpy as np
import pytest

from nucprep.analysis import OverlapDataset, extrapolate_overlap, wootters_bound
from nucprep.cli import main
from nucprep.decompose import (RotationCircuit, circuit_to_rotations, kak_decompose, rotation_circuit_unitary,
                               rz, zyz)
from nucprep.dmrg import DmrgConfig, excited_states, ground_state, reverse_sweep_series
from nucprep.hamiltonian import build_mpo, default_ordering, dense_hamiltonian
from nucprep.mps import MPS, compress, overlap, random_sector_mps
from nucprep.pipeline import clifford_t_state
from nucprep.staircase import StaircaseCircuit, circuit_to_state, circuit_unitary, grow_and_compile, haar_unitary
from nucprep.synthesis import SynthesisError, SynthesisStrategy, synth_circuit, synth_rz

from conftest import CONFIG_DIR, clifford_t_bfs, min_t_within, random_toy_hamiltonian

SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)


@pytest.fixture
def criterion(capsys):
    """Context manager printing one verdict line; fill ``info['detail']`` inside the block."""

    @contextlib.contextmanager
    def run(label):
        info = {"detail": ""}
        t0 = time.perf_counter()
        try:
            yield info
        except BaseException as exc:
            msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            with capsys.disabled():
                print(f"\n[FAIL] criterion {label}: {msg} ({time.perf_counter() - t0:.1f} s)")
            raise
        with capsys.disabled():
            print(f"\n[PASS] criterion {label}: {info['detail']} ({time.perf_counter() - t0:.1f} s)")

    return run


def phase_adjusted_error(u, v):
    tr = np.trace(v.conj().T @ u)
    ph = tr / abs(tr) if abs(tr) > 0 else 1.0
    return float(np.linalg.norm(u - ph * v, 2))


@pytest.fixture(scope="module")
def toy_ground(toy):
    """Converged toy ground state, its chi = 8 compression and the exact vector."""
    init = random_sector_mps(toy.charges, toy.sector, 16, seed=1)
    gs = ground_state(toy.mpo, DmrgConfig(chi_max=32), init)
    target = compress(gs.state.normalized(), 8).normalized()
    return gs, target, toy.exact_state(0)


@pytest.fixture(scope="module")
def compiled(toy, toy_ground):
    _, target, _ = toy_ground
    n_p = int(toy.charges[:, 0].sum())
    circuits, report = grow_and_compile(target, 5, rel_tol=1e-4, center_bond=n_p - 1, seed=1)
    return circuits, report


# --------------------------------------------------------------------------- 1

def test_c01_mpo_matches_dense_oracle(criterion):
    with criterion("1 (MPO vs dense Jordan-Wigner oracle)") as info:
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst, sizes = 0.0, []
        for k in range(24):
            n = int(rng.integers(2, 11))
            h = random_toy_hamiltonian(n, int(rng.integers(1, 4 * n)), rng)
            m = default_ordering(h)
            worst = max(worst, float(np.max(np.abs(build_mpo(h, m).to_dense() - dense_hamiltonian(h, m)))))
            sizes.append(n)
        elapsed = time.perf_counter() - t0
        assert worst < 1e-10, f"max deviation {worst:.3e}"
        assert elapsed < 60, f"runtime {elapsed:.1f} s"
        info["detail"] = f"24 instances on {min(sizes)}-{max(sizes)} qubits, max |dev| = {worst:.2e}"


# --------------------------------------------------------------------------- 2

def test_c02_dmrg_three_lowest_states(criterion, toy):
    with criterion("2 (DMRG energies, sector (2,2), lambda = 0,1,2)") as info:
        t0 = time.perf_counter()
        init = random_sector_mps(toy.charges, toy.sector, 16, seed=1)
        res = excited_states(toy.mpo, 3, DmrgConfig(chi_max=64), init)
        elapsed = time.perf_counter() - t0
        rel = [abs(r.energy - e) / abs(e) for r, e in zip(res, toy.evals[:3])]
        assert max(rel) < 1e-5, f"relative errors {rel}"
        assert elapsed < 120, f"runtime {elapsed:.1f} s"
        info["detail"] = ("E = " + ", ".join(f"{r.energy:.8f}" for r in res)
                          + f" MeV, max rel err {max(rel):.1e}")


# --------------------------------------------------------------------------- 3

def test_c03_compression_trend(criterion, toy):
    with criterion("3 (1 - |<Phi(chi)|exact>| vs chi)") as info:
        exact = toy.exact_state(0)
        # full rank: largest Schmidt rank of the exact state over all cuts
        psi = exact.reshape([2] * toy.n_sites)
        ranks = []
        for cut in range(1, toy.n_sites):
            s = np.linalg.svd(psi.reshape(2 ** cut, -1), compute_uv=False)
            ranks.append(int(np.sum(s > 1e-12 * s[0])))
        full_rank = max(ranks)
        init = random_sector_mps(toy.charges, toy.sector, 16, seed=1)
        chis = [2, 4, 8, 16, 32]
        errs = []
        for chi in chis:
            r = ground_state(toy.mpo, DmrgConfig(chi_max=chi), init)
            errs.append(1 - abs(np.vdot(exact, r.state.normalized().to_dense())))
        assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:])), f"not monotone: {errs}"
        at_full = [e for c, e in zip(chis, errs) if c >= full_rank]
        assert at_full and at_full[0] < 1e-3, f"error {at_full} at full rank {full_rank}"
        info["detail"] = (f"full rank {full_rank}; " +
                          ", ".join(f"chi={c}: {max(e, 0.0):.1e}" for c, e in zip(chis, errs)))


# --------------------------------------------------------------------------- 4

def test_c04_compilation_monotone(criterion, compiled):
    with criterion("4 (staircase growth and sweep monotonicity)") as info:
        circuits, rep = compiled
        ovs = rep.overlaps_per_layer
        assert len(ovs) == 5
        assert all(b >= a for a, b in zip(ovs, ovs[1:])), f"overlaps per layer {ovs}"
        drops = [min(np.diff(h)) for h in rep.sweep_overlaps if len(h) > 1]
        worst_drop = -min(drops + [0.0])
        assert worst_drop <= 1e-9, f"sweep overlap dropped by {worst_drop:.2e}"

        rng = np.random.default_rng(8)
        n = 8
        shapes = [(1 if i == 0 else 2, 2, 1 if i == n - 1 else 2) for i in range(n)]
        target = MPS([rng.normal(size=s) + 1j * rng.normal(size=s) for s in shapes]).normalized()
        _, rep2 = grow_and_compile(target, 1, center_bond=3, seed=0)
        assert rep2.overlaps_per_layer[0] > 1 - 1e-6, f"chi=2 overlap {rep2.overlaps_per_layer[0]}"
        info["detail"] = ("per layer " + ", ".join(f"{o:.6f}" for o in ovs)
                          + f"; worst sweep drop {worst_drop:.1e}; chi=2 one layer "
                          + f"1 - ov = {max(1 - rep2.overlaps_per_layer[0], 0.0):.1e}")


# --------------------------------------------------------------------------- 5

def test_c05_kak(criterion):
    with criterion("5 (KAK reconstruction and SWAP angles)") as info:
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(1000):
            u = haar_unitary(4, rng)
            k = kak_decompose(u)
            worst = max(worst, phase_adjusted_error(u, k.unitary()))
        assert worst < 1e-9, f"worst reconstruction error {worst:.2e}"
        ang = kak_decompose(SWAP).canonical_angles
        dev = max(abs(a - math.pi / 4) for a in ang)
        assert dev < 1e-10, f"SWAP angles {ang}"
        info["detail"] = f"worst error {worst:.1e} over 1000 Haar samples; SWAP angle deviation {dev:.1e}"


# --------------------------------------------------------------------------- 6

def test_c06_merge(criterion, compiled):
    with criterion("6 (merged vs unmerged rotations, <= 9 RZ per non-final gate)") as info:
        dense = [StaircaseCircuit.random(6, 2, 3, seed=1), StaircaseCircuit.random(8, 3, 2, seed=2),
                 StaircaseCircuit.random(10, 4, 2, seed=3)]
        worst_u, worst_count = 0.0, 0
        for c in dense:
            r_raw, _ = circuit_to_rotations(c, merge=False)
            r_mer, _ = circuit_to_rotations(c, merge=True)
            u_raw = rotation_circuit_unitary(r_raw)
            worst_u = max(worst_u, phase_adjusted_error(rotation_circuit_unitary(r_mer), u_raw),
                          phase_adjusted_error(u_raw, circuit_unitary(c)))
        # the compiled toy circuits have 12 qubits; only the RZ bookkeeping is checked there
        for c in dense + list(compiled[0]):
            _, rep = circuit_to_rotations(c, merge=True)
            last = c.n_layers - 1
            counts = [n for (li, *_), n in zip(c.gates(), rep.rz_per_gate) if li != last]
            worst_count = max([worst_count] + counts)
        assert worst_u < 1e-9, f"unitary mismatch {worst_u:.2e}"
        assert worst_count <= 9, f"a non-final gate owns {worst_count} RZ"
        info["detail"] = (f"{len(dense)} dense circuits up to 10 qubits, max error {worst_u:.1e}, "
                          f"max RZ per non-final gate {worst_count} (15 unmerged)")


# --------------------------------------------------------------------------- 7

def test_c07_synthesis_soundness(criterion, db):
    with criterion("7 (Rz synthesis: error bound, exhaustive minimality, exact k*pi/4)") as info:
        t_counts, mats = clifford_t_bfs(6)
        rng = np.random.default_rng(77)
        failures, compared, violations = 0, 0, []
        for _ in range(500):
            theta = float(rng.uniform(-math.pi, math.pi))
            eps = float(10 ** rng.uniform(-2.5, -1.0))
            try:
                seq = synth_rz(theta, eps, db)
            except SynthesisError:
                failures += 1
                continue
            assert seq.achieved_error <= eps, f"theta={theta}, eps={eps}: error {seq.achieved_error}"
            best = min_t_within(rz(theta), eps, t_counts, mats)
            if best is not None or seq.t_count <= 6:
                compared += 1
                if seq.t_count != best:
                    violations.append((theta, eps, seq.t_count, best))
        assert not violations, f"T-count differs from exhaustive minimum: {violations[:3]}"
        for k in range(-8, 9):
            seq = synth_rz(k * math.pi / 4, 1e-6, db)
            assert seq.t_count == k % 2 and seq.achieved_error < 1e-9, f"Rz({k} pi/4) not exact"
        info["detail"] = (f"500 pairs, {failures} failures, {compared} checked against exhaustive search "
                          "(all minimal), Rz(k pi/4) exact for k = -8..8")


# --------------------------------------------------------------------------- 8

def test_c08_hybrid_advantage(criterion, db):
    with criterion("8 (HYBRID vs RZ_ONLY on merged 3-rotation blocks)") as info:
        rng = np.random.default_rng(88)
        eps = 10 ** -1.5
        ratios, worse = [], []
        cache: dict = {}
        for _ in range(100):
            a, b, g, ph = zyz(haar_unitary(2, rng))
            block = RotationCircuit(1, [("RZ", (0,), g), ("SDG", (0,), None), ("H", (0,), None),
                                        ("RZ", (0,), b), ("H", (0,), None), ("S", (0,), None),
                                        ("RZ", (0,), a)], ph)
            _, t_rz, _ = synth_circuit(block, eps, SynthesisStrategy.RZ_ONLY, db, cache=cache)
            _, t_hy, _ = synth_circuit(block, eps, SynthesisStrategy.HYBRID, db, cache=cache)
            ratios.append(t_hy / t_rz)
            if t_hy > t_rz:
                worse.append((t_hy, t_rz))
        assert not worse, f"HYBRID used more T gates on {len(worse)} blocks, e.g. {worse[:3]}"
        mean = float(np.mean(ratios))
        info["detail"] = (f"mean T-count ratio HYBRID/RZ_ONLY = {mean:.3f} "
                          f"({100 * (1 - mean):.1f}% fewer T gates)")


# --------------------------------------------------------------------------- 9

def test_c09_bound_validity(criterion, db, toy_ground, compiled):
    with criterion("9 (lower bound holds on compiled circuits)") as info:
        _, target, exact = toy_ground
        to_exact = min(abs(np.vdot(exact, target.to_dense())), 1.0)
        states = [circuit_to_state(c) for c in compiled[0]]
        for c in compiled[0][:2]:
            r, _ = circuit_to_rotations(c)
            for eps in (10 ** -1.0, 10 ** -1.5):
                for strat in SynthesisStrategy:
                    ct, _, _ = synth_circuit(r, eps, strat, db)
                    states.append(clifford_t_state(ct))
        worst = -math.inf
        for s in states:
            psi = s.normalized()
            ov = min(abs(overlap(psi, target)), 1.0)
            true = abs(np.vdot(exact, psi.to_dense()))
            gap = wootters_bound(ov, to_exact) - true
            worst = max(worst, gap)
        assert worst <= 1e-9, f"bound exceeds the true overlap by {worst:.2e}"
        value = wootters_bound(0.837, 0.960)
        oracle = math.cos(math.acos(0.837) + math.acos(0.960))
        assert abs(value - oracle) < 1e-6
        info["detail"] = (f"{len(states)} circuit states, max(bound - true) = {worst:.2e}; "
                          f"bound(0.837, 0.960) = {value:.7f} (angle-sum oracle {oracle:.7f})")


@pytest.mark.xfail(strict=True, reason="0.837 * 0.960 - sqrt(1 - 0.837^2) * sqrt(1 - 0.960^2) = 0.6503032, "
                                       "not 0.650301; see the decisions ledger")
def test_c09_bound_literal_reference_value(criterion):
    with criterion("9 (literal reference value 0.650301 +- 1e-6)") as info:
        value = wootters_bound(0.837, 0.960)
        assert abs(value - 0.650301) <= 1e-6, f"bound(0.837, 0.960) = {value:.7f}, off by {value - 0.650301:.1e}"
        info["detail"] = f"{value:.7f}"


# --------------------------------------------------------------------------- 10

def test_c10_extrapolation(criterion, toy):
    with criterion("10 (overlap extrapolation: synthetic and reverse-sweep)") as info:
        small, large = [8, 16, 32, 64], [128, 256, 512, 1024]
        recs, true = [], {}
        for cs in small:
            c = 1 - math.exp(-1.0 - 0.15 * math.log(cs) ** 2)
            true[cs] = c
            a, b = math.log(1 - c) - 0.5, -0.08
            recs += [(cs, cl, c + math.exp(a + b * math.log(cl) ** 2)) for cl in large]
        _, diag = extrapolate_overlap(OverlapDataset(recs), small, large, 256)
        syn_err = max(abs(diag.asymptotes[c] - true[c]) for c in small)
        assert syn_err < 1e-8, f"synthetic asymptote error {syn_err:.2e}"

        chis = [8, 7, 6, 5, 4, 3, 2]
        init = random_sector_mps(toy.charges, toy.sector, 16, seed=1)
        series = reverse_sweep_series(toy.mpo, chis, DmrgConfig(), init)
        states = {c: r.state.normalized() for c, r in zip(chis, series)}
        data = OverlapDataset.from_states(states, lambda a, b: abs(overlap(a, b)))
        est, _ = extrapolate_overlap(data, [2, 3, 4], [5, 6, 7, 8], 8)
        exact = toy.exact_state(0)
        dense_val = abs(np.vdot(exact, states[8].to_dense())) ** 2
        assert abs(est - dense_val) < 0.02, f"estimate {est} vs dense {dense_val}"
        info["detail"] = (f"synthetic max error {syn_err:.1e}; chi=8 estimate {est:.8f} "
                          f"vs dense {dense_val:.8f}")


# --------------------------------------------------------------------------- 11

def _toy_config(tmp_path, name):
    with open(os.path.join(CONFIG_DIR, "toy.cfg"), encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    out = []
    for ln in lines:
        key = ln.split("=", 1)[0].strip()
        if key == "paths.hamiltonian":
            ln = f"paths.hamiltonian = {os.path.join(CONFIG_DIR, 'toy_pairing.int')}"
        elif key == "paths.out_dir":
            ln = f"paths.out_dir = {tmp_path / name}"
        elif key == "paths.db_cache":
            ln = f"paths.db_cache = {tmp_path / 'cache'}"
        out.append(ln)
    path = tmp_path / f"{name}.cfg"
    path.write_text("\n".join(out) + "\n")
    return str(path)


def _csv_files(root):
    found = {}
    for d, _, files in os.walk(root):
        for f in files:
            if f.endswith(".csv"):
                p = os.path.join(d, f)
                with open(p, "rb") as fh:
                    found[os.path.relpath(p, root)] = fh.read()
    return found


def test_c11_pipeline_determinism(criterion, tmp_path, capsys):
    with criterion("11 (end-to-end determinism and Pareto front)") as info:
        times = []
        for name in ("run_a", "run_b"):
            t0 = time.perf_counter()
            assert main(["pipeline", "--config", _toy_config(tmp_path, name)]) == 0
            times.append(time.perf_counter() - t0)
        capsys.readouterr()
        a, b = _csv_files(tmp_path / "run_a"), _csv_files(tmp_path / "run_b")
        assert a.keys() == b.keys() and "pareto.csv" in a
        differing = [k for k in a if a[k] != b[k]]
        assert not differing, f"CSV files differ: {differing}"
        with open(tmp_path / "run_a" / "pareto.csv", newline="") as fh:
            front = list(csv.DictReader(fh))
        with open(tmp_path / "run_a" / "report.csv", newline="") as fh:
            report = list(csv.DictReader(fh))
        assert front, "empty Pareto CSV"
        pts = [(int(r["t_count"]), 1 - float(r["bound_to_exact"]) ** 2) for r in report]
        for r in front:
            t, f = int(r["t_count"]), float(r["infidelity"])
            dominated = [(t2, f2) for t2, f2 in pts if t2 <= t and f2 <= f and (t2 < t or f2 < f)]
            assert not dominated, f"{r['circuit_id']} is dominated by {dominated[0]}"
        assert max(times) < 15 * 60, f"pipeline runtime {max(times):.0f} s"
        info["detail"] = (f"{len(a)} CSV files byte-identical across two runs, {len(front)} Pareto rows "
                          f"out of {len(report)} circuits, runtime {times[0]:.0f} s / {times[1]:.0f} s")
