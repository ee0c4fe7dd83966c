"""File-based pipeline stages: solve, compress, compile, decompose, synth, report.

Each stage reads the artifacts of the previous one from the output
directory, so stages can be rerun one at a time. Outputs depend only on the
inputs, the configuration and the seed; CSV floats are written with ``repr``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import analysis, decompose, dmrg, hamiltonian, mps, staircase, synthesis
from .config import PipelineConfig

log = logging.getLogger(__name__)

DENSE_REFERENCE_MAX_SITES = 14
_CX_REVERSED = np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex)


class StageError(RuntimeError):
    """A stage failed; ``completed`` lists artifacts written before the failure."""

    def __init__(self, stage: str, message: str, completed=(), exit_code: int = 1):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage
        self.completed = list(completed)
        self.exit_code = exit_code


class ConvergenceFailure(RuntimeError):
    pass


@dataclass
class Artifacts:
    out_dir: str
    written: list = field(default_factory=list)

    def path(self, *parts) -> str:
        p = os.path.join(self.out_dir, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def write(self, text: str, *parts) -> str:
        p = self.path(*parts)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.written.append(p)
        return p

    def read(self, *parts) -> str:
        p = os.path.join(self.out_dir, *parts)
        try:
            with open(p, encoding="utf-8") as fh:
                return fh.read()
        except OSError as exc:
            raise FileNotFoundError(f"missing artifact {p} (run the earlier stage first)") from exc


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _read_csv(text: str) -> list:
    return list(csv.DictReader(io.StringIO(text)))


def eps_tag(eps: float) -> str:
    """``10^-1.5`` becomes ``1.50``; other values use their repr."""
    k = -math.log10(eps)
    return f"{k:.2f}" if abs(k * 100 - round(k * 100)) < 1e-6 else repr(eps)


# --------------------------------------------------------------------------- problem setup

@dataclass
class Problem:
    h: hamiltonian.ShellModelHamiltonian
    mapping: hamiltonian.QubitMapping
    mpo: mps.MPO
    charges: np.ndarray


def load_problem(cfg: PipelineConfig) -> Problem:
    if not cfg.hamiltonian:
        raise FileNotFoundError("no Hamiltonian file configured (paths.hamiltonian)")
    try:
        with open(cfg.hamiltonian, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read Hamiltonian file {cfg.hamiltonian}: {exc.strerror}") from None
    h = hamiltonian.parse_interaction_file(text)
    m = hamiltonian.default_ordering(h)
    h.check_sector(cfg.sector)
    return Problem(h, m, hamiltonian.build_mpo(h, m), hamiltonian.site_charges(h, m))


def _initial_state(cfg: PipelineConfig, p: Problem) -> mps.MPS:
    return mps.random_sector_mps(p.charges, cfg.sector, cfg.init_chi, cfg.seed)


def dense_reference(cfg: PipelineConfig, p: Problem):
    """Exact sector eigenpairs and basis, or ``None`` when too large."""
    if p.mapping.n_sites > DENSE_REFERENCE_MAX_SITES:
        return None
    hs = hamiltonian.dense_hamiltonian(p.h, p.mapping, cfg.sector)
    w, v = np.linalg.eigh(hs)
    return w, v, hamiltonian.sector_basis(p.h, p.mapping, cfg.sector)


def _exact_vector(ref, n_sites: int, which: int) -> np.ndarray:
    w, v, basis = ref
    psi = np.zeros(2 ** n_sites, dtype=complex)
    psi[basis] = v[:, which]
    return psi


# --------------------------------------------------------------------------- stages

def stage_solve(cfg: PipelineConfig, art: Artifacts) -> list:
    p = load_problem(cfg)
    init = _initial_state(cfg, p)
    if cfg.n_states == 1:
        results = [dmrg.ground_state(p.mpo, cfg.dmrg, init)]
    else:
        results = dmrg.excited_states(p.mpo, cfg.n_states, cfg.dmrg, init)
    ref = dense_reference(cfg, p)
    rows = []
    for lam, r in enumerate(results):
        art.write(mps.dumps_mps(r.state), "solve", f"state_{lam}.mps")
        art.write(dmrg.convergence_csv(r), "solve", f"convergence_{lam}.csv")
        exact = float(ref[0][lam]) if ref is not None and lam < len(ref[0]) else ""
        rows.append((lam, float(r.energy), exact, int(r.converged), r.max_bond))
    art.write(_csv(("state", "energy_MeV", "dense_energy_MeV", "converged", "max_bond"), rows),
              "solve", "energies.csv")
    if cfg.require_convergence and not all(r.converged for r in results):
        raise ConvergenceFailure(f"DMRG did not converge within {cfg.dmrg.max_sweeps} sweeps")
    return results


def stage_compress(cfg: PipelineConfig, art: Artifacts) -> mps.MPS:
    p = load_problem(cfg)
    state = mps.loads_mps(art.read("solve", f"state_{cfg.target_state}.mps")).normalized()
    target = mps.compress(state, cfg.target_chi).normalized()
    art.write(mps.dumps_mps(target), "compress", "target.mps")
    to_dmrg = abs(mps.overlap(target, state))
    ref = dense_reference(cfg, p)
    to_exact = ""
    if ref is not None:
        to_exact = float(abs(np.vdot(_exact_vector(ref, p.mapping.n_sites, cfg.target_state), target.to_dense())))
    elif cfg.reverse_chis:
        est, _ = stage_extrapolate(cfg, art, problem=p)
        to_exact = math.sqrt(max(est, 0.0))
    art.write(_csv(("target_chi", "overlap_to_dmrg", "overlap_to_exact"),
                   [(cfg.target_chi, float(to_dmrg), to_exact)]), "compress", "target.csv")
    return target


def stage_extrapolate(cfg: PipelineConfig, art: Artifacts, problem=None):
    """Reverse-sweep series plus the two-stage overlap extrapolation at ``target_chi``."""
    if not (cfg.reverse_chis and cfg.chi_small and cfg.chi_large):
        raise ValueError("extrapolate needs extrapolate.reverse_chis, chi_small and chi_large")
    p = problem or load_problem(cfg)
    series = dmrg.reverse_sweep_series(p.mpo, sorted(cfg.reverse_chis, reverse=True), cfg.dmrg,
                                       _initial_state(cfg, p))
    states = {r_chi: r.state.normalized() for r_chi, r in zip(sorted(cfg.reverse_chis, reverse=True), series)}
    data = analysis.OverlapDataset.from_states(states, lambda a, b: abs(mps.overlap(a, b)))
    est, diag = analysis.extrapolate_overlap(data, cfg.chi_small, cfg.chi_large, cfg.target_chi)
    rows = [(cs, diag.asymptotes[cs], diag.stage1_slopes[cs], diag.stage1_residuals[cs]) for cs in sorted(diag.asymptotes)]
    text = _csv(("chi_small", "asymptote_overlap_sq", "slope", "rms_residual"), rows)
    text += _csv(("chi_query", "estimate_overlap_sq", "stage2_intercept", "stage2_slope"),
                 [(cfg.target_chi, est, *diag.stage2_coeffs)])
    art.write(text, "extrapolate", "extrapolation.csv")
    for w in diag.warnings:
        log.warning(w)
    return est, diag


def stage_compile(cfg: PipelineConfig, art: Artifacts) -> list:
    p = load_problem(cfg)
    target = mps.loads_mps(art.read("compress", "target.mps")).normalized()
    n_p = int(np.sum(p.charges[:, 0]))
    center = min(max(n_p - 1, 0), p.mapping.n_sites - 2)
    circuits, report = staircase.grow_and_compile(
        target, cfg.max_layers, cfg.rel_tol, cfg.chi_env, center_bond=center,
        max_sweeps=cfg.max_sweeps, seed=cfg.seed)
    rows = []
    for c, ov, sw in zip(circuits, report.overlaps_per_layer, report.sweeps_per_stage):
        art.write(staircase.dumps_circuit(c), "compile", f"circuit_L{c.n_layers}.su4c")
        rows.append((c.n_layers, float(ov), sw))
    art.write(_csv(("layers", "overlap_to_target", "sweeps"), rows), "compile", "compile_report.csv")
    return circuits


def _load_circuits(cfg, art):
    out = []
    for d in range(1, cfg.max_layers + 1):
        out.append(staircase.loads_circuit(art.read("compile", f"circuit_L{d}.su4c")))
    return out


def stage_decompose(cfg: PipelineConfig, art: Artifacts) -> list:
    rows, out = [], []
    for c in _load_circuits(cfg, art):
        r, rep = decompose.circuit_to_rotations(c, merge=True, angle_tol=cfg.angle_tol)
        r = decompose.elide_trivial_rotations(r, cfg.angle_tol)
        art.write(decompose.dumps_rotations(r), "decompose", f"rotations_L{c.n_layers}.rotc")
        rows.append((c.n_layers, rep.rz_total, rep.rz_nontrivial, rep.merged_blocks, max(rep.rz_per_gate)))
        out.append(r)
    art.write(_csv(("layers", "rz_raw", "rz_nontrivial", "merged_blocks", "max_rz_per_gate"), rows),
              "decompose", "rotation_counts.csv")
    return out


def clifford_t_state(c: synthesis.CliffordTCircuit) -> mps.MPS:
    """``|psi> = C |0...0>`` as an MPS (two-qubit gates must act on neighbours)."""
    s = mps.MPS.product_state([0] * c.n_qubits)
    for name, qubits in c.gates:
        g = synthesis.GATES[name]
        if len(qubits) == 1:
            s = mps.apply_single(s, g, qubits[0])
            continue
        a, b = qubits
        if abs(a - b) != 1:
            raise ValueError(f"{name} on non-adjacent qubits {qubits}")
        if name == "CX" and a > b:
            g = _CX_REVERSED
        s = mps.apply_gate(s, g, min(a, b), sv_tol=1e-14, check=False)
    return s


def stage_synth(cfg: PipelineConfig, art: Artifacts) -> list:
    target = mps.loads_mps(art.read("compress", "target.mps")).normalized()
    db = synthesis.load_or_build_database(cfg.t_budget, cfg.db_cache)
    rows = []
    cache: dict = {}
    for d in range(1, cfg.max_layers + 1):
        r = decompose.loads_rotations(art.read("decompose", f"rotations_L{d}.rotc"), target.n_sites)
        for eps in cfg.eps_list:
            for strat in cfg.strategies:
                ct, t_count, errs = synthesis.synth_circuit(r, eps, synthesis.SynthesisStrategy(strat), db,
                                                            cache=cache)
                cid = f"L{d}_e{eps_tag(eps)}_{strat}"
                art.write(synthesis.dumps_clifford_t(ct), "synth", f"{cid}.ctq")
                ov = abs(mps.overlap(target, clifford_t_state(ct)))
                rows.append((cid, d, float(eps), strat, r.rz_count(), t_count, float(ov), float(sum(errs))))
    art.write(_csv(("circuit_id", "layers", "eps", "strategy", "rz_total", "t_count", "overlap_to_target",
                    "error_sum"), rows), "synth", "synth_summary.csv")
    return rows


def stage_report(cfg: PipelineConfig, art: Artifacts) -> list:
    target_rows = _read_csv(art.read("compress", "target.csv"))
    ref = target_rows[0]["overlap_to_exact"]
    to_exact = float(ref) if ref not in ("", None) else None
    rows = []
    for s in _read_csv(art.read("synth", "synth_summary.csv")):
        ov = min(max(float(s["overlap_to_target"]), 0.0), 1.0)
        bound = analysis.wootters_bound(ov, min(to_exact, 1.0)) if to_exact is not None else float("nan")
        rows.append(analysis.ReportRow(s["circuit_id"], int(s["layers"]), float(s["eps"]), s["strategy"],
                                       int(s["rz_total"]), int(s["t_count"]), ov, bound))
    art.write(analysis.report_csv(rows), "report.csv")

    def point(r):
        if math.isnan(r.bound_to_exact):
            return analysis.ParetoPoint(r.t_count, 1.0 - r.overlap_to_target ** 2, r.circuit_id, r.eps,
                                        r.layers, r.strategy)
        return r.pareto_point()

    points = [point(r) for r in rows]
    art.write(analysis.pareto_csv(analysis.pareto_front(points)), "pareto.csv")
    for strat in cfg.strategies:
        sub = [p for p in points if p.strategy == strat]
        art.write(analysis.pareto_csv(analysis.pareto_front(sub)), f"pareto_{strat}.csv")
    return rows


STAGES = (
    ("solve", stage_solve),
    ("compress", stage_compress),
    ("compile", stage_compile),
    ("decompose", stage_decompose),
    ("synth", stage_synth),
    ("report", stage_report),
)


def run_pipeline(cfg: PipelineConfig, art: Artifacts, stages=None):
    """Run ``stages`` (default: all) in order; returns the last stage's result.

    Failures are re-raised as :class:`StageError` carrying an exit code.
    """
    result = None
    for name in stages or [n for n, _ in STAGES]:
        fn = dict(STAGES)[name]
        t0 = time.perf_counter()
        try:
            result = fn(cfg, art)
        except (FileNotFoundError, hamiltonian.InteractionFileError, ValueError, OSError) as exc:
            raise StageError(name, str(exc), art.written, exit_code=2) from exc
        except (ConvergenceFailure, synthesis.SynthesisError, dmrg.LanczosError,
                dmrg.OrthogonalityError, np.linalg.LinAlgError) as exc:
            raise StageError(name, str(exc), art.written, exit_code=1) from exc
        log.info("stage %s finished in %.1f s", name, time.perf_counter() - t0)
    return result
