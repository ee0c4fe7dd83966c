"""Open-boundary matrix product states and operators.

Tensors follow the index convention ``(left bond, physical, right bond)`` for
states and ``(left bond, physical out, physical in, right bond)`` for
operators. Site 0 is the most significant qubit of the dense vector.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "DEFAULT_SV_TOL",
    "MPS",
    "MPO",
    "overlap",
    "expectation",
    "compress",
    "truncate",
    "apply_gate",
    "apply_single",
    "random_sector_mps",
    "compress_mpo",
    "dumps_mps",
    "loads_mps",
    "MPSFormatError",
]

DEFAULT_SV_TOL = 1e-8
UNITARY_TOL = 1e-10
IMAG_TOL = 1e-10


class MPSFormatError(ValueError):
    pass


class MPS:
    """Tensor train ``A[0] A[1] ... A[L-1]`` with optional canonical center.

    When ``center`` is set, tensors left of it are left-orthonormal and tensors
    right of it are right-orthonormal. Instances are treated as immutable:
    every operation returns a new object.
    """

    __slots__ = ("tensors", "center")

    def __init__(self, tensors: Iterable[np.ndarray], center: Optional[int] = None):
        tensors = tuple(np.asarray(t, dtype=complex) for t in tensors)
        if not tensors:
            raise ValueError("an MPS needs at least one site")
        if tensors[0].shape[0] != 1 or tensors[-1].shape[2] != 1:
            raise ValueError("open boundary bonds must have dimension 1")
        for a, b in zip(tensors[:-1], tensors[1:]):
            if a.ndim != 3 or a.shape[2] != b.shape[0]:
                raise ValueError("bond dimensions of neighbouring tensors do not match")
        if center is not None and not 0 <= center < len(tensors):
            raise ValueError(f"center {center} out of range")
        self.tensors = tensors
        self.center = center

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list:
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    def norm(self) -> float:
        if self.center is not None:
            return float(np.linalg.norm(self.tensors[self.center]))
        return float(np.sqrt(abs(overlap(self, self))))

    def normalized(self) -> "MPS":
        s = self if self.center is not None else self.canonicalize(0)
        nrm = s.norm()
        if nrm == 0:
            raise ValueError("cannot normalize a zero state")
        tensors = list(s.tensors)
        tensors[s.center] = tensors[s.center] / nrm
        return MPS(tensors, s.center)

    def scaled(self, factor: complex) -> "MPS":
        tensors = list(self.tensors)
        k = self.center if self.center is not None else 0
        tensors[k] = tensors[k] * factor
        return MPS(tensors, self.center)

    def to_dense(self) -> np.ndarray:
        psi = self.tensors[0].reshape(2, -1)
        for t in self.tensors[1:]:
            psi = (psi @ t.reshape(t.shape[0], -1)).reshape(-1, t.shape[2])
        return psi.reshape(-1)

    def canonicalize(self, center: int) -> "MPS":
        """Mixed-canonical form with orthogonality center at ``center``."""
        n = self.n_sites
        if not 0 <= center < n:
            raise ValueError(f"center {center} out of range")
        tensors = list(self.tensors)
        if self.center is None:
            lo, hi = 0, n - 1
        else:
            lo = hi = self.center
        for i in range(lo, center):
            tensors[i], tensors[i + 1] = _shift_right(tensors[i], tensors[i + 1])
        for i in range(hi, center, -1):
            tensors[i - 1], tensors[i] = _shift_left(tensors[i - 1], tensors[i])
        return MPS(tensors, center)

    @classmethod
    def product_state(cls, bits: Sequence[int]) -> "MPS":
        tensors = []
        for b in bits:
            t = np.zeros((1, 2, 1), dtype=complex)
            t[0, int(b), 0] = 1.0
            tensors.append(t)
        return cls(tensors, center=0)

    @classmethod
    def from_dense(cls, psi: np.ndarray, chi_max: Optional[int] = None,
                   sv_tol: float = 0.0) -> "MPS":
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        n = int(round(np.log2(psi.size)))
        if 2 ** n != psi.size:
            raise ValueError("vector length must be a power of two")
        tensors = []
        rest = psi.reshape(1, -1)
        for _ in range(n - 1):
            chi_l = rest.shape[0]
            mat = rest.reshape(chi_l * 2, -1)
            u, s, vh = np.linalg.svd(mat, full_matrices=False)
            keep = _n_keep(s, chi_max, sv_tol)
            tensors.append(u[:, :keep].reshape(chi_l, 2, keep))
            rest = s[:keep, None] * vh[:keep]
        tensors.append(rest.reshape(rest.shape[0], 2, 1))
        return cls(tensors, center=n - 1)


class MPO:
    """Matrix product operator with optional per-site U(1) charges.

    ``site_charges[i]`` is the charge vector of the occupied state ``|1>`` on
    site ``i``; solvers use it to keep states inside a particle-number sector.
    """

    __slots__ = ("tensors", "site_charges")

    def __init__(self, tensors: Iterable[np.ndarray], site_charges=None):
        tensors = tuple(np.asarray(t, dtype=complex) for t in tensors)
        if tensors[0].shape[0] != 1 or tensors[-1].shape[3] != 1:
            raise ValueError("open boundary MPO bonds must have dimension 1")
        for a, b in zip(tensors[:-1], tensors[1:]):
            if a.shape[3] != b.shape[0]:
                raise ValueError("MPO bond dimensions do not match")
        self.tensors = tensors
        self.site_charges = None if site_charges is None else np.asarray(site_charges, dtype=int)

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list:
        return [t.shape[3] for t in self.tensors[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    def to_dense(self) -> np.ndarray:
        op = self.tensors[0][0]  # (out, in, w)
        dim = 2
        for w in self.tensors[1:]:
            op = np.einsum("abx,xcdy->acbdy", op, w)
            dim *= 2
            op = op.reshape(dim, dim, w.shape[3])
        return op[:, :, 0]

    def __add__(self, other: "MPO") -> "MPO":
        return MPO(compress_mpo(mpo_direct_sum(list(self.tensors), list(other.tensors))),
                   self.site_charges)


# --- small linear-algebra helpers ----------------------------------------------

def _n_keep(s: np.ndarray, chi_max: Optional[int], sv_tol: float) -> int:
    """Number of singular values kept: at most ``chi_max``, dropping ``s < sv_tol*|s|``."""
    if s.size == 0:
        return 1
    total = np.linalg.norm(s)
    keep = int(np.count_nonzero(s >= sv_tol * total)) if sv_tol > 0 else s.size
    if chi_max is not None:
        keep = min(keep, chi_max)
    return max(keep, 1)


def _shift_right(a: np.ndarray, b: np.ndarray):
    chi_l, d, chi_r = a.shape
    q, r = np.linalg.qr(a.reshape(chi_l * d, chi_r))
    q = q.reshape(chi_l, d, -1)
    return q, np.tensordot(r, b, axes=(1, 0))


def _shift_left(a: np.ndarray, b: np.ndarray):
    chi_l, d, chi_r = b.shape
    q, r = np.linalg.qr(b.reshape(chi_l, d * chi_r).T)
    q = q.T.reshape(-1, d, chi_r)
    return np.tensordot(a, r.T, axes=(2, 0)), q


def _split(theta: np.ndarray, chi_max: Optional[int], sv_tol: float,
           absorb: str = "right", renormalize: bool = True):
    """SVD a two-site tensor ``(l, s1, s2, r)`` into two site tensors."""
    chi_l, d1, d2, chi_r = theta.shape
    u, s, vh = np.linalg.svd(theta.reshape(chi_l * d1, d2 * chi_r), full_matrices=False)
    keep = _n_keep(s, chi_max, sv_tol)
    kept = s[:keep]
    discarded = float(np.sum(s[keep:] ** 2))
    if renormalize and discarded > 0:
        nk = np.linalg.norm(kept)
        if nk > 0:
            kept = kept * (np.linalg.norm(s) / nk)
    u = u[:, :keep].reshape(chi_l, d1, keep)
    vh = vh[:keep].reshape(keep, d2, chi_r)
    if absorb == "right":
        return u, kept[:, None, None] * vh, discarded
    return u * kept[None, None, :], vh, discarded


# --- contractions ---------------------------------------------------------------

def _overlap_left_step(env: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``env[x, y]`` with bra tensor ``a`` and ket tensor ``b``."""
    tmp = np.tensordot(env, b, axes=(1, 0))              # (x, s, y')
    return np.tensordot(a.conj(), tmp, axes=([0, 1], [0, 1]))  # (x', y')


def _overlap_right_step(env: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    tmp = np.tensordot(b, env, axes=(2, 1))              # (y, s, x')
    return np.tensordot(a.conj(), tmp, axes=([1, 2], [1, 2]))  # (x, y)


def overlap(a: MPS, b: MPS) -> complex:
    """``<a|b>`` including norms."""
    if a.n_sites != b.n_sites:
        raise ValueError(f"site-count mismatch: {a.n_sites} vs {b.n_sites}")
    env = np.ones((1, 1), dtype=complex)
    for x, y in zip(a.tensors, b.tensors):
        env = _overlap_left_step(env, x, y)
    return complex(env[0, 0])


def _mpo_left_step(env: np.ndarray, a: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``env[x, w, y]`` -> next, bra ``a``, operator ``w``, ket ``b``."""
    tmp = np.tensordot(env, b, axes=(2, 0))                   # (x, w, t, y')
    tmp = np.tensordot(tmp, w, axes=([1, 2], [0, 2]))         # (x, y', s, w')
    return np.tensordot(a.conj(), tmp, axes=([0, 1], [0, 2]))  # (x', y', w')


def _mpo_right_step(env: np.ndarray, a: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    tmp = np.tensordot(b, env, axes=(2, 2))                   # (y, t, x', w')
    tmp = np.tensordot(w, tmp, axes=([2, 3], [1, 3]))         # (w, s, y, x')
    return np.tensordot(a.conj(), tmp, axes=([1, 2], [1, 3]))  # (x, w, y)


def operator_matrix_element(a: MPS, op: MPO, b: MPS) -> complex:
    if not (a.n_sites == b.n_sites == op.n_sites):
        raise ValueError("site-count mismatch between states and operator")
    env = np.ones((1, 1, 1), dtype=complex)
    for x, w, y in zip(a.tensors, op.tensors, b.tensors):
        env = _mpo_left_step(env, x, w, y)
        env = np.transpose(env, (0, 2, 1))
    return complex(env[0, 0, 0])


def expectation(op: MPO, s: MPS) -> float:
    """Rayleigh quotient ``<s|op|s> / <s|s>``."""
    num = operator_matrix_element(s, op, s)
    den = overlap(s, s).real
    val = num / den
    if abs(val.imag) > IMAG_TOL * max(1.0, abs(val.real)):
        raise ValueError(f"expectation value has imaginary part {val.imag:.3e}; operator not Hermitian?")
    return float(val.real)


# --- truncation and compression ---------------------------------------------------

def truncate(s: MPS, chi_max: Optional[int], sv_tol: float = 0.0) -> MPS:
    """One-shot SVD truncation sweep; result is normalized, center at the last site."""
    cur = s.canonicalize(0)
    tensors = list(cur.tensors)
    n = len(tensors)
    for i in range(n - 1):
        a, b = tensors[i], tensors[i + 1]
        theta = np.tensordot(a, b, axes=(2, 0))
        tensors[i], tensors[i + 1], _ = _split(theta, chi_max, sv_tol, absorb="right", renormalize=False)
    out = MPS(tensors, center=n - 1)
    return out.normalized()


def compress(target: MPS, chi_max: int, n_sweeps: int = 4, *, tol: float = 1e-14,
             return_overlaps: bool = False):
    """Variationally fit a unit-norm MPS with bonds ``<= chi_max`` to ``target``.

    Starts from :func:`truncate` and sweeps two-site updates that maximize
    ``|<result|target>|``. With ``return_overlaps`` the overlap after the
    initial truncation and after every sweep is returned as well.
    """
    if chi_max < 1:
        raise ValueError("chi_max must be >= 1")
    n = target.n_sites
    x = truncate(target, chi_max)
    ov = [abs(overlap(x, target))]
    if n == 1:
        return (x, ov) if return_overlaps else (x)
    x = x.canonicalize(0)
    xt = list(x.tensors)
    tt = target.tensors
    right = [None] * (n + 1)
    right[n] = np.ones((1, 1), dtype=complex)
    for i in range(n - 1, 0, -1):
        right[i] = _overlap_right_step(right[i + 1], xt[i], tt[i])
    left = [None] * (n + 1)
    left[0] = np.ones((1, 1), dtype=complex)

    def projected(i):
        th = np.tensordot(left[i], tt[i], axes=(1, 0))
        th = np.tensordot(th, tt[i + 1], axes=(2, 0))
        return np.tensordot(th, right[i + 2], axes=(3, 1))

    for _ in range(n_sweeps):
        for i in range(n - 1):
            theta = projected(i)
            a, b, _ = _split(theta, chi_max, 0.0, absorb="right", renormalize=False)
            nrm = np.linalg.norm(b)
            xt[i], xt[i + 1] = a, b / nrm if nrm > 0 else b
            left[i + 1] = _overlap_left_step(left[i], xt[i], tt[i])
        for i in range(n - 2, -1, -1):
            theta = projected(i)
            a, b, _ = _split(theta, chi_max, 0.0, absorb="left", renormalize=False)
            nrm = np.linalg.norm(a)
            xt[i], xt[i + 1] = (a / nrm if nrm > 0 else a), b
            right[i + 1] = _overlap_right_step(right[i + 2], xt[i + 1], tt[i + 1])
        cur = MPS(xt, center=0)
        ov.append(abs(overlap(cur, target)))
        if ov[-1] - ov[-2] <= tol * max(ov[-1], 1e-300):
            break
    out = MPS(xt, center=0)
    return (out, ov) if return_overlaps else out


# --- gates ----------------------------------------------------------------------

def _check_unitary(g: np.ndarray, tol: float = UNITARY_TOL) -> None:
    err = np.max(np.abs(g.conj().T @ g - np.eye(g.shape[0])))
    if err > tol:
        raise ValueError(f"gate is not unitary (deviation {err:.2e})")


def apply_gate(s: MPS, g: np.ndarray, site: int, chi_max: Optional[int] = None,
               sv_tol: float = DEFAULT_SV_TOL, *, check: bool = True) -> MPS:
    """Apply a 4x4 gate on ``(site, site + 1)``; ``g`` indexes ``(s_site, s_site+1)``.

    The center is moved to ``site`` first so the SVD truncation is optimal; it
    ends on ``site + 1``. Discarded weight is renormalized away.
    """
    n = s.n_sites
    if not 0 <= site < n - 1:
        raise ValueError(f"gate site {site} out of range for {n} sites")
    g = np.asarray(g, dtype=complex)
    if g.shape != (4, 4):
        raise ValueError("two-qubit gate must be 4x4")
    if check:
        _check_unitary(g)
    cur = s.canonicalize(site) if s.center != site else s
    tensors = list(cur.tensors)
    theta = np.tensordot(tensors[site], tensors[site + 1], axes=(2, 0))
    theta = np.tensordot(g.reshape(2, 2, 2, 2), theta, axes=([2, 3], [1, 2]))  # (s1, s2, l, r)
    theta = theta.transpose(2, 0, 1, 3)
    tensors[site], tensors[site + 1], _ = _split(theta, chi_max, sv_tol, absorb="right")
    return MPS(tensors, center=site + 1)


def apply_single(s: MPS, u: np.ndarray, site: int) -> MPS:
    """Apply a 2x2 gate; canonical structure is preserved for unitary ``u``."""
    tensors = list(s.tensors)
    tensors[site] = np.tensordot(u, tensors[site], axes=(1, 1)).transpose(1, 0, 2)
    return MPS(tensors, s.center)


# --- random sector states -----------------------------------------------------

def random_sector_mps(site_charges, sector, chi: int, seed: int) -> MPS:
    """Normalized random MPS supported on one (n_protons, n_neutrons) sector.

    Many distinct in-sector occupation patterns are drawn, summed with
    random complex weights and SVD-truncated to bond dimension ``chi``.
    ``site_charges`` has one ``(proton, neutron)`` row per site.
    """
    q = np.asarray(site_charges, dtype=int)
    n = q.shape[0]
    proton_sites = np.nonzero(q[:, 0])[0]
    neutron_sites = np.nonzero(q[:, 1])[0]
    n_p, n_n = sector.n_protons, sector.n_neutrons
    if n_p > proton_sites.size or n_n > neutron_sites.size:
        raise ValueError(f"sector ({n_p}, {n_n}) infeasible for {proton_sites.size} proton and "
                         f"{neutron_sites.size} neutron sites")
    if chi < 1:
        raise ValueError("chi must be >= 1")
    rng = np.random.default_rng(seed)
    n_patterns = _comb(proton_sites.size, n_p) * _comb(neutron_sites.size, n_n)
    n_terms = min(n_patterns, max(64, 4 * chi * chi), 1024)
    patterns = []
    seen = set()
    attempts = 0
    while len(patterns) < n_terms and attempts < 50 * n_terms:
        attempts += 1
        bits = np.zeros(n, dtype=int)
        bits[rng.permutation(proton_sites)[:n_p]] = 1
        bits[rng.permutation(neutron_sites)[:n_n]] = 1
        key = tuple(bits)
        if key not in seen:
            seen.add(key)
            patterns.append(bits)
    weights = rng.normal(size=len(patterns)) + 1j * rng.normal(size=len(patterns))
    total = None
    for w, bits in zip(weights, patterns):
        term = [t.copy() for t in MPS.product_state(bits).tensors]
        term[0] = term[0] * w
        total = term if total is None else _mps_direct_sum(total, term)
    return truncate(MPS(total), chi)


def _comb(n: int, k: int) -> int:
    from math import comb
    return comb(n, k)


def _mps_direct_sum(a: list, b: list) -> list:
    n = len(a)
    if n == 1:
        return [a[0] + b[0]]
    out = []
    for i, (x, y) in enumerate(zip(a, b)):
        if i == 0:
            out.append(np.concatenate([x, y], axis=2))
        elif i == n - 1:
            out.append(np.concatenate([x, y], axis=0))
        else:
            t = np.zeros((x.shape[0] + y.shape[0], 2, x.shape[2] + y.shape[2]), dtype=complex)
            t[:x.shape[0], :, :x.shape[2]] = x
            t[x.shape[0]:, :, x.shape[2]:] = y
            out.append(t)
    return out


def mpo_direct_sum(a: list, b: list) -> list:
    n = len(a)
    if n == 1:
        return [a[0] + b[0]]
    out = []
    for i, (x, y) in enumerate(zip(a, b)):
        if i == 0:
            out.append(np.concatenate([x, y], axis=3))
        elif i == n - 1:
            out.append(np.concatenate([x, y], axis=0))
        else:
            t = np.zeros((x.shape[0] + y.shape[0], 2, 2, x.shape[3] + y.shape[3]), dtype=complex)
            t[:x.shape[0], :, :, :x.shape[3]] = x
            t[x.shape[0]:, :, :, x.shape[3]:] = y
            out.append(t)
    return out


# --- MPO compression ----------------------------------------------------------------

def compress_mpo(tensors: Sequence[np.ndarray], cutoff: float = 1e-12) -> list:
    """Left QR sweep, then right-to-left SVD dropping singular values ``<= cutoff``."""
    ts = [np.asarray(t, dtype=complex) for t in tensors]
    n = len(ts)
    for i in range(n - 1):
        wl, d1, d2, wr = ts[i].shape
        q, r = np.linalg.qr(ts[i].reshape(wl * d1 * d2, wr))
        ts[i] = q.reshape(wl, d1, d2, -1)
        ts[i + 1] = np.tensordot(r, ts[i + 1], axes=(1, 0))
    for i in range(n - 1, 0, -1):
        wl, d1, d2, wr = ts[i].shape
        u, s, vh = np.linalg.svd(ts[i].reshape(wl, d1 * d2 * wr), full_matrices=False)
        keep = max(1, int(np.count_nonzero(s > cutoff)))
        ts[i] = vh[:keep].reshape(keep, d1, d2, wr)
        ts[i - 1] = np.tensordot(ts[i - 1], u[:, :keep] * s[:keep], axes=(3, 0))
    return ts


# --- serialization ---------------------------------------------------------------

def dumps_mps(s: MPS) -> str:
    """Text form: ``MPS1 <n>`` then ``T <chi_l> 2 <chi_r>`` blocks of ``re im`` lines."""
    lines = [f"MPS1 {s.n_sites}"]
    for t in s.tensors:
        lines.append(f"T {t.shape[0]} {t.shape[1]} {t.shape[2]}")
        for z in t.reshape(-1):
            lines.append(f"{z.real:.17g} {z.imag:.17g}")
    return "\n".join(lines) + "\n"


def loads_mps(text: str) -> MPS:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MPSFormatError("empty MPS file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "MPS1":
        raise MPSFormatError(f"bad MPS header {lines[0]!r}")
    n = int(head[1])
    pos = 1
    tensors = []
    try:
        for _ in range(n):
            f = lines[pos].split()
            if f[0] != "T" or len(f) != 4:
                raise MPSFormatError(f"expected tensor header, got {lines[pos]!r}")
            shape = tuple(int(x) for x in f[1:])
            size = int(np.prod(shape))
            vals = np.array([[float(x) for x in ln.split()] for ln in lines[pos + 1:pos + 1 + size]])
            if vals.shape != (size, 2):
                raise MPSFormatError("truncated tensor data")
            tensors.append((vals[:, 0] + 1j * vals[:, 1]).reshape(shape))
            pos += 1 + size
    except IndexError:
        raise MPSFormatError("unexpected end of MPS file") from None
    return MPS(tensors)
