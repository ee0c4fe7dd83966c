"""Two-site DMRG with particle-number sectors and penalty-method excited states.

States are stored as dense tensors, but every bond index carries a definite
(proton, neutron) charge counting particles to its left. Two-site tensors
are masked to the target sector and split with block-wise SVDs, so the
sweep never leaves the symmetry sector.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .mps import MPO, MPS, DEFAULT_SV_TOL, expectation, overlap

__all__ = [
    "DmrgConfig",
    "EigenResult",
    "LanczosError",
    "OrthogonalityError",
    "ground_state",
    "excited_states",
    "reverse_sweep_series",
    "occupation_stats",
    "convergence_csv",
]

log = logging.getLogger(__name__)

ORTHOGONALITY_TOL = 1e-4


class LanczosError(RuntimeError):
    pass


class OrthogonalityError(RuntimeError):
    """Penalized states failed to come out orthogonal (penalty weight too small?)."""

    def __init__(self, message: str, results: list, max_overlap: float):
        super().__init__(message)
        self.results = results
        self.max_overlap = max_overlap


@dataclass(frozen=True)
class DmrgConfig:
    chi_max: int = 64
    sv_tol: float = DEFAULT_SV_TOL
    max_sweeps: int = 30
    min_sweeps: int = 2
    energy_rtol: float = 1e-8
    penalty_weight_mev: float = 20.0
    lanczos_dim: int = 20
    lanczos_tol: float = 1e-10
    max_restarts: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.chi_max < 1:
            raise ValueError("chi_max must be >= 1")
        if self.sv_tol < 0:
            raise ValueError("sv_tol must be >= 0")
        if self.penalty_weight_mev <= 0:
            raise ValueError("penalty_weight_mev must be > 0")
        if self.lanczos_dim < 2:
            raise ValueError("lanczos_dim must be >= 2")


@dataclass
class SweepRecord:
    sweep: int
    energy: float
    max_bond: int
    truncation_error: float


@dataclass
class EigenResult:
    state: MPS
    energy: float
    sweep_energies: list
    converged: bool
    log: list = field(default_factory=list)

    @property
    def max_bond(self) -> int:
        return self.state.max_bond


# --- local eigensolver ------------------------------------------------------------

def _lanczos_lowest(matvec, v0: np.ndarray, k: int, tol: float, max_restarts: int,
                    rng: np.random.Generator):
    """Lowest eigenpair by restarted Lanczos with full reorthogonalization."""
    dim = v0.size
    k = min(k, dim)
    v = v0.copy()
    failures = 0
    theta, x = None, None
    restart = 0
    while restart < max_restarts:
        nv = np.linalg.norm(v)
        if not np.isfinite(nv) or nv < 1e-300:
            failures += 1
            if failures > 3:
                raise LanczosError("Lanczos broke down repeatedly (zero or non-finite start vector)")
            v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
            continue
        basis = np.zeros((k + 1, dim), dtype=complex)
        basis[0] = v / nv
        alpha = np.zeros(k)
        beta = np.zeros(k)
        m = k
        for j in range(k):
            w = matvec(basis[j])
            alpha[j] = np.vdot(basis[j], w).real
            for _ in range(2):
                w -= basis[:j + 1].T @ (basis[:j + 1].conj() @ w)
            b = np.linalg.norm(w)
            m = j + 1
            if b < 1e-12 * max(1.0, abs(alpha[j])) or j == k - 1:
                break
            beta[j] = b
            basis[j + 1] = w / b
        tri = np.diag(alpha[:m]) + np.diag(beta[:m - 1], 1) + np.diag(beta[:m - 1], -1)
        evals, evecs = np.linalg.eigh(tri)
        theta = evals[0]
        x = evecs[:, 0] @ basis[:m]
        x /= np.linalg.norm(x)
        resid = np.linalg.norm(matvec(x) - theta * x)
        if not np.isfinite(theta):
            failures += 1
            if failures > 3:
                raise LanczosError("Lanczos produced non-finite Ritz values")
            v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
            continue
        if resid < tol * max(1.0, abs(theta)) or m == dim:
            break
        v = x
        restart += 1
    return float(theta), x


# --- charge bookkeeping -------------------------------------------------------------

def _charge_keys(q: np.ndarray) -> np.ndarray:
    """Encode charge rows ``(p, n)`` as single integers."""
    q = np.asarray(q, dtype=np.int64)
    return q[:, 0] * 100003 + q[:, 1]


def _block_svd(mat: np.ndarray, row_q: np.ndarray, chi_max: Optional[int], sv_tol: float,
               drop_tol: float = 1e-14):
    """SVD of a charge-block-diagonal matrix.

    Rows carry charges ``row_q``; the returned left vectors each carry one
    definite charge. Returns ``u, s, vh, new_q, discarded_weight``.
    """
    keys = _charge_keys(row_q)
    us, ss, vhs, qs = [], [], [], []
    for key in np.unique(keys):
        rows = np.nonzero(keys == key)[0]
        block = mat[rows]
        if not np.any(block):
            continue
        u, s, vh = np.linalg.svd(block, full_matrices=False)
        for idx in range(s.size):
            us.append((rows, u[:, idx]))
        ss.append(s)
        vhs.append(vh)
        qs.extend([row_q[rows[0]]] * s.size)
    if not ss:
        # zero tensor: keep one empty vector with charge of the first row
        u = np.zeros((mat.shape[0], 1), dtype=complex)
        u[0, 0] = 1.0
        return u, np.zeros(1), np.zeros((1, mat.shape[1]), dtype=complex), row_q[:1].copy(), 0.0
    s_all = np.concatenate(ss)
    vh_all = np.concatenate(vhs, axis=0)
    total = np.linalg.norm(s_all)
    order = np.argsort(-s_all, kind="stable")
    keep_mask = s_all[order] > drop_tol * total
    if sv_tol > 0:
        keep_mask &= s_all[order] >= sv_tol * total
    keep = max(1, int(np.count_nonzero(keep_mask)))
    if chi_max is not None:
        keep = min(keep, chi_max)
    chosen = np.sort(order[:keep])  # preserve block grouping for reproducibility
    discarded = float(np.sum(s_all ** 2) - np.sum(s_all[chosen] ** 2))
    u = np.zeros((mat.shape[0], keep), dtype=complex)
    for col, idx in enumerate(chosen):
        rows, vec = us[idx]
        u[rows, col] = vec
    new_q = np.array([qs[idx] for idx in chosen], dtype=int).reshape(keep, -1)
    return u, s_all[chosen], vh_all[chosen], new_q, max(discarded, 0.0)


class _ChargedChain:
    """Mutable working copy of an MPS with charge labels on every bond."""

    def __init__(self, state: MPS, site_q: np.ndarray):
        n = state.n_sites
        self.n = n
        self.site_q = site_q
        ncharge = site_q.shape[1]
        cur = state.canonicalize(0)
        tensors = list(cur.tensors)
        bond_q = [np.zeros((1, ncharge), dtype=int)]
        for i in range(n):
            a = tensors[i]
            chi_l, d, chi_r = a.shape
            row_q = (bond_q[i][:, None, :] + np.arange(d)[None, :, None] * site_q[i][None, None, :])
            row_q = row_q.reshape(chi_l * d, ncharge)
            u, s, vh, new_q, _ = _block_svd(a.reshape(chi_l * d, chi_r), row_q, None, 0.0)
            tensors[i] = u.reshape(chi_l, d, -1)
            carry = s[:, None] * vh
            if i < n - 1:
                tensors[i + 1] = np.tensordot(carry, tensors[i + 1], axes=(1, 0))
            else:
                if carry.shape[0] != 1:
                    raise ValueError("initial state is not in a definite particle-number sector")
                tensors[i] = tensors[i] * carry[0, 0]
            bond_q.append(new_q)
        self.tensors = tensors
        self.bond_q = bond_q
        self.center = n - 1
        self.total_q = bond_q[n][0]

    def mask(self, i: int) -> np.ndarray:
        """Boolean mask of allowed entries of the two-site tensor at ``(i, i+1)``."""
        ql = self.bond_q[i]
        qr = self.bond_q[i + 2]
        d = 2
        s1 = np.arange(d)[:, None] * self.site_q[i][None, :]
        s2 = np.arange(d)[:, None] * self.site_q[i + 1][None, :]
        tot = (ql[:, None, None, None, :] + s1[None, :, None, None, :]
               + s2[None, None, :, None, :])
        return np.all(tot == qr[None, None, None, :, :], axis=-1)

    def to_mps(self) -> MPS:
        return MPS(self.tensors, center=self.center)


# --- environments ----------------------------------------------------------------

def _left_env(env, a, w, b):
    tmp = np.tensordot(env, b, axes=(2, 0))                    # (x, w, t, y')
    tmp = np.tensordot(tmp, w, axes=([1, 2], [0, 2]))          # (x, y', s, w')
    tmp = np.tensordot(a.conj(), tmp, axes=([0, 1], [0, 2]))   # (x', y', w')
    return tmp.transpose(0, 2, 1)


def _right_env(env, a, w, b):
    tmp = np.tensordot(b, env, axes=(2, 2))                    # (y, t, x', w')
    tmp = np.tensordot(w, tmp, axes=([2, 3], [1, 3]))          # (w, s, y, x')
    tmp = np.tensordot(a.conj(), tmp, axes=([1, 2], [1, 3]))   # (x, w, y)
    return tmp


def _left_ov(env, a, b):
    tmp = np.tensordot(env, b, axes=(1, 0))
    return np.tensordot(a.conj(), tmp, axes=([0, 1], [0, 1]))


def _right_ov(env, a, b):
    tmp = np.tensordot(b, env, axes=(2, 1))
    return np.tensordot(a.conj(), tmp, axes=([1, 2], [1, 2]))


def _heff_apply(v, L, W1, W2, R):
    tmp = np.tensordot(L, v, axes=(2, 0))                # (x, w, s1, s2, y')
    tmp = np.tensordot(tmp, W1, axes=([1, 2], [0, 2]))   # (x, s2, y', s1', w')
    tmp = np.tensordot(tmp, W2, axes=([4, 1], [0, 2]))   # (x, y', s1', s2', w'')
    tmp = np.tensordot(tmp, R, axes=([1, 4], [2, 1]))    # (x, s1', s2', x')
    return tmp


# --- observables ------------------------------------------------------------------

def _number_squared_mpo(weights: np.ndarray) -> MPO:
    """MPO for ``N^2`` with ``N = sum_i weights[i] n_i`` (weights 0/1)."""
    n_op = np.diag([0.0, 1.0]).astype(complex)
    eye = np.eye(2, dtype=complex)
    tensors = []
    nsite = len(weights)
    for i, c in enumerate(weights):
        w = np.zeros((3, 2, 2, 3), dtype=complex)
        w[0, :, :, 0] = eye
        w[1, :, :, 1] = eye
        w[2, :, :, 2] = eye
        w[0, :, :, 1] = 2 * c * n_op
        w[0, :, :, 2] = c * n_op
        w[1, :, :, 2] = c * n_op
        if i == 0:
            w = w[:1]
        if i == nsite - 1:
            w = w[:, :, :, 2:]
        tensors.append(w)
    return MPO(tensors)


def _number_mpo(weights: np.ndarray) -> MPO:
    n_op = np.diag([0.0, 1.0]).astype(complex)
    eye = np.eye(2, dtype=complex)
    tensors = []
    nsite = len(weights)
    for i, c in enumerate(weights):
        w = np.zeros((2, 2, 2, 2), dtype=complex)
        w[0, :, :, 0] = eye
        w[1, :, :, 1] = eye
        w[0, :, :, 1] = c * n_op
        if i == 0:
            w = w[:1]
        if i == nsite - 1:
            w = w[:, :, :, 1:]
        tensors.append(w)
    return MPO(tensors)


def occupation_stats(state: MPS, site_charges) -> list:
    """Mean and variance of each charge (e.g. proton and neutron number)."""
    q = np.asarray(site_charges)
    out = []
    for c in range(q.shape[1]):
        mean = expectation(_number_mpo(q[:, c]), state)
        sq = expectation(_number_squared_mpo(q[:, c]), state)
        out.append((mean, max(sq - mean * mean, 0.0)))
    return out


# --- the sweep engine -------------------------------------------------------------

def _run(h: MPO, cfg: DmrgConfig, init: MPS, penalties: Sequence[MPS] = ()) -> EigenResult:
    n = h.n_sites
    if init.n_sites != n:
        raise ValueError(f"initial state has {init.n_sites} sites, Hamiltonian {n}")
    site_q = h.site_charges if h.site_charges is not None else np.zeros((n, 1), dtype=int)
    rng = np.random.default_rng(cfg.seed)
    if n == 1:
        return _single_site(h, init, penalties)
    chain = _ChargedChain(init.normalized(), site_q)
    Ws = h.tensors
    w_pen = cfg.penalty_weight_mev
    pens = [p.normalized().canonicalize(0) for p in penalties]

    L = [None] * (n + 1)
    R = [None] * (n + 1)
    L[0] = np.ones((1, 1, 1), dtype=complex)
    R[n] = np.ones((1, 1, 1), dtype=complex)
    PL = [[None] * (n + 1) for _ in pens]
    PR = [[None] * (n + 1) for _ in pens]
    for k in range(len(pens)):
        PL[k][0] = np.ones((1, 1), dtype=complex)
        PR[k][n] = np.ones((1, 1), dtype=complex)
    t = chain.tensors
    for i in range(n - 1):
        L[i + 1] = _left_env(L[i], t[i], Ws[i], t[i])
        for k, p in enumerate(pens):
            PL[k][i + 1] = _left_ov(PL[k][i], t[i], p.tensors[i])

    def local_update(i: int, direction: str) -> tuple:
        t = chain.tensors
        theta = np.tensordot(t[i], t[i + 1], axes=(2, 0))
        mask = chain.mask(i)
        idx = np.nonzero(mask.reshape(-1))[0]
        if idx.size == 0:
            raise ValueError("empty symmetry sector for the two-site tensor")
        shape = theta.shape
        projs = []
        for k, p in enumerate(pens):
            pv = np.tensordot(PL[k][i], p.tensors[i], axes=(1, 0))
            pv = np.tensordot(pv, p.tensors[i + 1], axes=(2, 0))
            pv = np.tensordot(pv, PR[k][i + 2], axes=(3, 1))
            projs.append(pv.reshape(-1)[idx])
        Li, Ri, W1, W2 = L[i], R[i + 2], Ws[i], Ws[i + 1]

        def matvec(x):
            full = np.zeros(mask.size, dtype=complex)
            full[idx] = x
            y = _heff_apply(full.reshape(shape), Li, W1, W2, Ri).reshape(-1)[idx]
            for pv in projs:
                y = y + w_pen * pv * np.vdot(pv, x)
            return y

        v0 = theta.reshape(-1)[idx]
        energy, x = _lanczos_lowest(matvec, v0, cfg.lanczos_dim, cfg.lanczos_tol, cfg.max_restarts, rng)
        full = np.zeros(mask.size, dtype=complex)
        full[idx] = x
        theta = full.reshape(shape)
        chi_l, d1, d2, chi_r = shape
        row_q = (chain.bond_q[i][:, None, :] + np.arange(d1)[None, :, None] * site_q[i][None, None, :])
        row_q = row_q.reshape(chi_l * d1, -1)
        u, s, vh, new_q, disc = _block_svd(theta.reshape(chi_l * d1, d2 * chi_r), row_q,
                                           cfg.chi_max, cfg.sv_tol)
        s = s / np.linalg.norm(s)
        if direction == "right":
            t[i] = u.reshape(chi_l, d1, -1)
            t[i + 1] = (s[:, None] * vh).reshape(-1, d2, chi_r)
            chain.center = i + 1
        else:
            t[i] = (u * s[None, :]).reshape(chi_l, d1, -1)
            t[i + 1] = vh.reshape(-1, d2, chi_r)
            chain.center = i
        chain.bond_q[i + 1] = new_q
        return energy, disc

    energies = []
    records = []
    converged = False
    prev = None
    for sweep in range(1, cfg.max_sweeps + 1):
        trunc = 0.0
        for i in range(n - 2, -1, -1):
            _, disc = local_update(i, "left")
            trunc += disc
            t = chain.tensors
            R[i + 1] = _right_env(R[i + 2], t[i + 1], Ws[i + 1], t[i + 1])
            for k, p in enumerate(pens):
                PR[k][i + 1] = _right_ov(PR[k][i + 2], t[i + 1], p.tensors[i + 1])
        for i in range(n - 1):
            _, disc = local_update(i, "right")
            trunc += disc
            t = chain.tensors
            L[i + 1] = _left_env(L[i], t[i], Ws[i], t[i])
            for k, p in enumerate(pens):
                PL[k][i + 1] = _left_ov(PL[k][i], t[i], p.tensors[i])
        state = chain.to_mps()
        e = _objective(h, state, pens, w_pen)
        energies.append(e)
        records.append(SweepRecord(sweep, e, state.max_bond, trunc))
        log.debug("sweep %d energy %.12f max bond %d", sweep, e, state.max_bond)
        if prev is not None and sweep >= cfg.min_sweeps:
            if abs(prev - e) < cfg.energy_rtol * max(abs(e), 1.0):
                converged = True
                break
        prev = e
    state = chain.to_mps().normalized()
    _check_sector(state, site_q, chain.total_q)
    return EigenResult(state, expectation(h, state), energies, converged, records)


def _single_site(h: MPO, init: MPS, penalties) -> EigenResult:
    op = h.to_dense()
    vec = init.to_dense()
    occupied = np.abs(vec) > 0
    sub = np.nonzero(occupied)[0]
    block = op[np.ix_(sub, sub)]
    evals, evecs = np.linalg.eigh(block)
    out = np.zeros(2, dtype=complex)
    out[sub] = evecs[:, 0]
    state = MPS([out.reshape(1, 2, 1)], center=0)
    return EigenResult(state, float(evals[0]), [float(evals[0])], True, [])


def _objective(h: MPO, state: MPS, pens, w_pen) -> float:
    e = expectation(h, state)
    nrm = overlap(state, state).real
    for p in pens:
        e += w_pen * abs(overlap(p, state)) ** 2 / nrm
    return e


def _check_sector(state: MPS, site_q: np.ndarray, total_q: np.ndarray) -> None:
    if not np.any(site_q):
        return
    for c, (mean, var) in enumerate(occupation_stats(state, site_q)):
        leak = abs(mean - total_q[c]) + var
        if leak > 1e-8:
            log.warning("sector leakage %.3e in charge %d", leak, c)


# --- public drivers ---------------------------------------------------------------

def ground_state(h: MPO, cfg: DmrgConfig, init: MPS) -> EigenResult:
    """Lowest eigenstate of ``h`` in the sector of ``init``."""
    return _run(h, cfg, init)


def excited_states(h: MPO, k: int, cfg: DmrgConfig, init: MPS) -> list:
    """The ``k`` lowest states via ``H + w sum_{i<lambda} |psi_i><psi_i|``.

    The penalty weight must exceed the gaps being resolved; if the returned
    states overlap by more than ``1e-4`` an :class:`OrthogonalityError` is raised.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    results = []
    for lam in range(k):
        res = _run(h, cfg, init, [r.state for r in results])
        results.append(res)
    worst = 0.0
    for a in range(k):
        for b in range(a):
            worst = max(worst, abs(overlap(results[a].state, results[b].state)))
    if worst >= ORTHOGONALITY_TOL:
        raise OrthogonalityError(
            f"excited states not orthogonal (max overlap {worst:.3e}); increase the penalty weight",
            results, worst)
    return sorted(results, key=lambda r: r.energy)


def reverse_sweep_series(h: MPO, chis: Sequence[int], cfg: DmrgConfig, init: MPS) -> list:
    """Converge at ``chis[0]``, then re-converge at each smaller bond dimension.

    Each run starts from the previous converged state.
    """
    chis = list(chis)
    if not chis:
        raise ValueError("chis must be non-empty")
    if any(b > a for a, b in zip(chis, chis[1:])):
        raise ValueError("chis must be non-increasing")
    out = []
    state = init
    for chi in chis:
        res = _run(h, replace(cfg, chi_max=chi), state)
        out.append(res)
        state = res.state
    return out


def convergence_csv(result: EigenResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sweep", "energy_MeV", "max_bond", "truncation_error_sum"])
    for r in result.log:
        writer.writerow([r.sweep, repr(float(r.energy)), r.max_bond, repr(float(r.truncation_error))])
    return buf.getvalue()
