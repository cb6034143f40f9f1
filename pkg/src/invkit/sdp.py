"""Block conic programs and a dense primal-dual interior-point solver.

Standard form::

    minimize  c.x   subject to  A x = b,  x in K

where ``K`` is a product of PSD cones (stored as scaled lower-triangular
vectors, off-diagonals multiplied by sqrt(2)), nonnegative orthants and free
variables. The dual is ``maximize b.y  s.t.  A^T y + s = c, s in K*`` with
``s = 0`` on free coordinates.

The solver uses Nesterov-Todd scaling with a Mehrotra predictor-corrector and
an infeasible starting point. Free variables are kept in an augmented
(saddle-point) Newton system rather than split.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


class PresolveError(ValueError):
    def __init__(self, rows, msg=""):
        self.rows = list(rows)
        super().__init__(msg or f"inconsistent dependent constraint rows: {self.rows[:20]}")


@dataclass(frozen=True)
class Block:
    kind: str  # psd | nonneg | free
    dim: int

    def __post_init__(self):
        if self.kind not in ("psd", "nonneg", "free"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("block dimension must be >= 1")

    @property
    def size(self) -> int:
        return self.dim * (self.dim + 1) // 2 if self.kind == "psd" else self.dim


@lru_cache(maxsize=None)
def tril_indices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-major lower-triangle indices and the svec scaling for dimension ``n``."""
    ii, jj = [], []
    for j in range(n):
        for i in range(j, n):
            ii.append(i)
            jj.append(j)
    ii = np.array(ii, dtype=np.int64)
    jj = np.array(jj, dtype=np.int64)
    scale = np.where(ii == jj, 1.0, SQRT2)
    for arr in (ii, jj, scale):
        arr.setflags(write=False)
    return ii, jj, scale


def svec(M: np.ndarray) -> np.ndarray:
    ii, jj, sc = tril_indices(M.shape[0])
    return M[ii, jj] * sc


def smat(v: np.ndarray, n: int | None = None) -> np.ndarray:
    if n is None:
        n = int(round((math.sqrt(8 * len(v) + 1) - 1) / 2))
    ii, jj, sc = tril_indices(n)
    M = np.zeros((n, n))
    vals = v / sc
    M[ii, jj] = vals
    M[jj, ii] = vals
    return M


@dataclass
class ConicProblem:
    blocks: list
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    row_labels: list | None = None
    var_labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.blocks = [b if isinstance(b, Block) else Block(*b) for b in self.blocks]
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.A = sp.csr_matrix(self.A, dtype=float)
        n = sum(b.size for b in self.blocks)
        if self.A.shape != (len(self.b), n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(len(self.b), n)}")
        if self.c.shape != (n,):
            raise ValueError(f"c has length {self.c.size}, expected {n}")

    @property
    def offsets(self) -> list[int]:
        out, o = [], 0
        for b in self.blocks:
            out.append(o)
            o += b.size
        return out

    @property
    def nvars(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def nrows(self) -> int:
        return len(self.b)

    def block_slice(self, i: int) -> slice:
        o = self.offsets[i]
        return slice(o, o + self.blocks[i].size)

    def block_value(self, x: np.ndarray, i: int) -> np.ndarray:
        blk = self.blocks[i]
        v = x[self.block_slice(i)]
        return smat(v, blk.dim) if blk.kind == "psd" else v.copy()

    def indices_of(self, kind: str) -> np.ndarray:
        idx = [np.arange(o, o + b.size) for b, o in zip(self.blocks, self.offsets) if b.kind == kind]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)

    def summary(self) -> dict:
        psd = [b.dim for b in self.blocks if b.kind == "psd"]
        return {"rows": self.nrows, "vars": self.nvars, "psd_blocks": len(psd),
                "max_psd_dim": max(psd, default=0),
                "nonneg": int(sum(b.dim for b in self.blocks if b.kind == "nonneg")),
                "free": int(sum(b.dim for b in self.blocks if b.kind == "free"))}


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str
    primal_objective: float
    dual_objective: float
    iterations: int
    residuals: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    solve_time: float = 0.0


# ---------------------------------------------------------------------------
# presolve
# ---------------------------------------------------------------------------

def _pivoted_gram(A: sp.csr_matrix, tol: float):
    norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    zero = norms == 0
    An = sp.diags(1.0 / np.where(zero, 1.0, norms)) @ A
    G = np.asfortranarray((An @ An.T).toarray())
    L, piv, rank, info = la.lapack.dpstrf(G, tol=tol, lower=1)
    if info < 0:
        raise ValueError(f"dpstrf failed with info={info}")
    rank = int(rank) if info > 0 else A.shape[0]
    return np.tril(L), piv - 1, rank, norms, zero


def find_dependent_rows(A: sp.spmatrix, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Split rows of ``A`` into an independent set and a dependent remainder.

    Pivoted Cholesky (LAPACK ``pstrf``) of the row-normalized Gram matrix
    ``A A^T``; a pivot, i.e. the squared distance of a row to the span of the
    rows accepted before it, below ``tol`` marks the row dependent.
    """
    A = sp.csr_matrix(A)
    m = A.shape[0]
    if m == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    _, piv, rank, _, zero = _pivoted_gram(A, tol)
    indep = np.sort(piv[:rank])
    indep = indep[~zero[indep]]
    dep = np.setdiff1d(np.arange(m), indep)
    return indep, dep


def presolve(problem: ConicProblem, tol: float = 1e-14) -> tuple[ConicProblem, np.ndarray]:
    """Drop dependent rows; raise ``PresolveError`` if they are inconsistent."""
    A, b = sp.csr_matrix(problem.A), problem.b
    m = A.shape[0]
    L, piv, rank, norms, zero = _pivoted_gram(A, tol)
    if rank == m and not zero.any():
        return problem, np.arange(m)
    # with P^T G P = L L^T, dependent row d equals L_d L_r^{-1} times the pivot rows
    bn = b / np.where(zero, 1.0, norms)
    lead, rest = piv[:rank], piv[rank:]
    z = la.solve_triangular(L[:rank, :rank], bn[lead], lower=True) if rank else np.zeros(0)
    pred = L[rank:, :rank] @ z
    bad = rest[np.abs(pred - bn[rest]) > 1e-8 * (1 + np.abs(bn[rest]))]
    bad = np.union1d(bad, np.nonzero(zero & (b != 0))[0])
    if bad.size:
        raise PresolveError(bad)
    indep = np.sort(lead[~zero[lead]])
    labels = [problem.row_labels[i] for i in indep] if problem.row_labels else None
    reduced = ConicProblem(problem.blocks, problem.c, A[indep], b[indep], labels, problem.var_labels)
    log.info("presolve removed %d dependent rows", m - len(indep))
    return reduced, indep


# ---------------------------------------------------------------------------
# interior point method
# ---------------------------------------------------------------------------

class _PsdBlock:
    """Precomputed structure for the Schur complement contribution of one block."""

    def __init__(self, A: sp.csc_matrix, off: int, n: int, chunk_elems: int, kernel: str = "auto"):
        self.n = n
        self.off = off
        size = n * (n + 1) // 2
        sub = sp.csr_matrix(A[:, off:off + size])
        rows = np.unique(sub.nonzero()[0])
        self.rows = rows
        sub = sp.coo_matrix(sub[rows])
        ii, jj, sc = tril_indices(n)
        r = sub.row
        a = ii[sub.col]
        bcol = jj[sub.col]
        val = sub.data / sc[sub.col]
        off_diag = a != bcol
        rr = np.concatenate([r, r[off_diag]])
        aa = np.concatenate([a, bcol[off_diag]])
        bb = np.concatenate([bcol, a[off_diag]])
        vv = np.concatenate([val, val[off_diag]])
        R = len(rows)
        self.U = sp.csr_matrix((vv, (rr, aa * n + bb)), shape=(R, n * n))
        counts = np.bincount(rr, minlength=R)
        # gather kernel: W A_i W as a product of gathered columns and rows of W,
        # n^2 * nnz_i work per row instead of n^3
        self.gather = (counts.mean() < n if R else False) if kernel == "auto" else kernel == "gather"
        if self.gather:
            order = np.argsort(rr, kind="stable")
            rr, aa, bb, vv = rr[order], aa[order], bb[order], vv[order]
            starts = np.concatenate([[0], np.cumsum(counts)])
            by_nnz = np.argsort(counts, kind="stable")
            self.groups = []
            pos = 0
            while pos < R:
                p = max(1, int(counts[by_nnz[pos]]))
                k = max(1, chunk_elems // max(1, n * n))
                sel = by_nnz[pos:pos + k]
                p = max(1, int(counts[sel].max()))
                ia = np.zeros((len(sel), p), dtype=np.int64)
                ib = np.zeros((len(sel), p), dtype=np.int64)
                va = np.zeros((len(sel), p))
                for q, r_ in enumerate(sel):
                    s0, s1 = starts[r_], starts[r_ + 1]
                    ia[q, :s1 - s0] = aa[s0:s1]
                    ib[q, :s1 - s0] = bb[s0:s1]
                    va[q, :s1 - s0] = vv[s0:s1]
                self.groups.append((sel, ia, ib, va))
                pos += len(sel)
        else:
            self.stack = sp.csr_matrix((vv, (rr * n + aa, bb)), shape=(R * n, n))
            step = max(1, chunk_elems // max(1, n * n))
            self.chunks = [slice(s, min(R, s + step)) for s in range(0, R, step)]

    def schur(self, W: np.ndarray) -> np.ndarray:
        n = self.n
        R = len(self.rows)
        out = np.empty((R, R))
        if self.gather:
            for sel, ia, ib, va in self.groups:
                Wa = W[:, ia].transpose(1, 0, 2) * va[:, None, :]  # (k, n, p)
                Wb = W[ib, :]  # (k, p, n)
                Z = np.matmul(Wa, Wb).reshape(len(sel), n * n)
                out[:, sel] = self.U @ Z.T
            return out
        for ch in self.chunks:
            k = ch.stop - ch.start
            P = (self.stack[ch.start * n:ch.stop * n] @ W).reshape(k, n, n)
            Z = np.matmul(W, P).reshape(k, n * n)
            out[:, ch] = self.U @ Z.T
        return out


def _nt_scaling(X: np.ndarray, S: np.ndarray):
    L = la.cholesky(X, lower=True)
    Rs = la.cholesky(S, lower=True)
    U, sv, Vt = la.svd(Rs.T @ L)
    G = L @ Vt.T / np.sqrt(sv)
    return G, sv, L, Rs


def _max_step(L: np.ndarray, dX: np.ndarray) -> float:
    T = la.solve_triangular(L, dX, lower=True)
    T = la.solve_triangular(L, T.T, lower=True)
    lam = la.eigvalsh((T + T.T) / 2)[0]
    return math.inf if lam >= 0 else -1.0 / lam


def _jordan(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    P = A @ B
    return (P + P.T) / 2


class _FreeRowReduction:
    """Exact treatment of rows that involve free variables only.

    Such rows ``F x_J = b_F`` (``J`` the free columns they touch) are solved
    through an SVD, ``x_J = x_p + N z`` with ``N`` an orthonormal null-space
    basis, so they hold to machine precision however badly conditioned they
    are. The remaining rows see ``z`` as new free variables.
    """

    def __init__(self, problem: ConicProblem, rows: np.ndarray, rank_tol: float = 1e-10):
        A = problem.A.tocsr()
        n = problem.nvars
        self.problem = problem
        self.Fr = rows
        self.O = np.setdiff1d(np.arange(problem.nrows), rows)
        AF = A[rows]
        self.J = np.unique(AF.indices)
        self.Rest = np.setdiff1d(np.arange(n), self.J)
        M = AF[:, self.J].toarray()
        bF = problem.b[rows]
        U, sv, Vt = la.svd(M, full_matrices=True)
        r = int(np.sum(sv > rank_tol * sv.max())) if sv.size else 0
        resid = U[:, r:].T @ bF
        if resid.size and np.abs(resid).max() > 1e-8 * (1 + np.abs(bF).max()):
            bad = rows[np.argsort(-np.abs(U[:, r:] @ resid))[:5]]
            raise PresolveError(bad)
        self.Ur, self.sr, self.Vr = U[:, :r], sv[:r], Vt[:r].T
        self.N = Vt[r:].T
        self.xp = self.Vr @ ((self.Ur.T @ bF) / self.sr)
        AO = A[self.O]
        AOJ = AO[:, self.J].toarray()
        self.AOJ = AOJ
        AZ = AOJ @ self.N
        AZ[np.abs(AZ) < 1e-15 * max(1.0, np.abs(AZ).max(initial=0.0))] = 0.0
        Ar = sp.hstack([AO[:, self.Rest], sp.csr_matrix(AZ)]).tocsr()
        br = problem.b[self.O] - AOJ @ self.xp
        cJ = problem.c[self.J]
        cr = np.concatenate([problem.c[self.Rest], self.N.T @ cJ])
        # keep the block order of the rest; z is appended as one free block
        jset = np.zeros(n, dtype=bool)
        jset[self.J] = True
        blocks = []
        for blk, off in zip(problem.blocks, problem.offsets):
            left = blk.size - int(jset[off:off + blk.size].sum())
            if left:
                blocks.append(blk if blk.kind == "psd" else Block(blk.kind, left))
        nz = self.N.shape[1]
        if nz:
            blocks.append(Block("free", nz))
        else:
            Ar = Ar[:, :len(self.Rest)]
            cr = cr[:len(self.Rest)]
        labels = [problem.row_labels[i] for i in self.O] if problem.row_labels else None
        self.nz = nz
        self.reduced = ConicProblem(blocks, cr, Ar, br, labels)

    @classmethod
    def find(cls, problem: ConicProblem):
        fr = problem.indices_of("free")
        if not len(fr) or not problem.nrows:
            return None
        A = problem.A.tocsr()
        isfree = np.zeros(problem.nvars, dtype=bool)
        isfree[fr] = True
        nnz_conic = np.asarray(A[:, ~isfree].astype(bool).sum(axis=1)).ravel()
        rows = np.nonzero((nnz_conic == 0) & (np.diff(A.indptr) > 0))[0]
        return cls(problem, rows) if len(rows) else None

    def lift(self, xr, yr, sr):
        n = self.problem.nvars
        nrest = len(self.Rest)
        x = np.zeros(n)
        s = np.zeros(n)
        x[self.Rest] = xr[:nrest]
        s[self.Rest] = sr[:nrest]
        x[self.J] = self.xp + (self.N @ xr[nrest:] if self.nz else 0.0)
        y = np.zeros(self.problem.nrows)
        y[self.O] = yr
        g = self.problem.c[self.J] - self.AOJ.T @ yr
        y[self.Fr] = self.Ur @ ((self.Vr.T @ g) / self.sr)
        return x, y, s


def _drop_columns(problem: ConicProblem, gone: np.ndarray) -> list:
    out = []
    for blk, off in zip(problem.blocks, problem.offsets):
        left = blk.size - int(gone[off:off + blk.size].sum())
        if left:
            if blk.kind == "psd" and left != blk.size:
                raise ValueError("cannot drop part of a PSD block")
            out.append(blk if blk.kind == "psd" else Block(blk.kind, left))
    return out


class _FreeSingletonElimination:
    """Substitute out free variables defined by a row with no other free variable.

    A row ``a x_j + g^T x_K = b`` whose only free column is ``j`` gives
    ``x_j`` as an affine function of conic variables; eliminating it adds no
    free-free coupling. Pivot rows ``P`` and columns ``J`` are removed together.
    """

    def __init__(self, problem: ConicProblem, piv_rows: np.ndarray, piv_cols: np.ndarray):
        A = problem.A.tocsr()
        self.problem = problem
        self.P, self.J = piv_rows, piv_cols
        m, n = problem.nrows, problem.nvars
        self.O = np.setdiff1d(np.arange(m), self.P)
        gone = np.zeros(n, dtype=bool)
        gone[self.J] = True
        self.K = np.nonzero(~gone)[0]
        self.d = np.asarray(A[self.P, self.J]).ravel()
        Dinv = sp.diags(1.0 / self.d)
        self.APK = A[self.P][:, self.K]
        self.AOJ = A[self.O][:, self.J]
        T = self.AOJ @ Dinv
        Ar = (A[self.O][:, self.K] - T @ self.APK).tocsr()
        Ar.eliminate_zeros()
        br = problem.b[self.O] - T @ problem.b[self.P]
        cr = problem.c[self.K] - self.APK.T @ (problem.c[self.J] / self.d)
        labels = [problem.row_labels[i] for i in self.O] if problem.row_labels else None
        self.reduced = ConicProblem(_drop_columns(problem, gone), cr, Ar, br, labels)

    @classmethod
    def find(cls, problem: ConicProblem, ratio: float = 1e-3, max_col_rows: int = 3):
        fr = problem.indices_of("free")
        if not len(fr) or not problem.nrows:
            return None
        A = problem.A.tocsr()
        isfree = np.zeros(problem.nvars, dtype=bool)
        isfree[fr] = True
        Af = A[:, fr].tocsr()
        nfree = np.diff(Af.indptr)
        rowmax = np.asarray(abs(A).max(axis=1).todense()).ravel()
        # columns spread over many rows would smear their pivot row everywhere
        col_rows = np.diff(A.tocsc().indptr)
        best = {}
        for r in np.nonzero(nfree == 1)[0]:
            j = int(fr[Af.indices[Af.indptr[r]]])
            a = abs(float(Af.data[Af.indptr[r]]))
            score = a / rowmax[r]
            if col_rows[j] > max_col_rows:
                continue
            if score >= ratio and (j not in best or score > best[j][0]):
                best[j] = (score, r)
        if not best:
            return None
        cols = np.array(sorted(best), dtype=np.int64)
        rows = np.array([best[j][1] for j in cols], dtype=np.int64)
        return cls(problem, rows, cols)

    def lift(self, xr, yr, sr):
        n, m = self.problem.nvars, self.problem.nrows
        x = np.zeros(n)
        s = np.zeros(n)
        x[self.K] = xr
        s[self.K] = sr
        x[self.J] = (self.problem.b[self.P] - self.APK @ xr) / self.d
        y = np.zeros(m)
        y[self.O] = yr
        y[self.P] = (self.problem.c[self.J] - self.AOJ.T @ yr) / self.d
        return x, y, s


class _RowPresolve:
    def __init__(self, problem: ConicProblem):
        self.problem = problem
        self.reduced, self.keep = presolve(problem)

    def lift(self, x, y, s):
        yf = np.zeros(self.problem.nrows)
        yf[self.keep] = y
        return x, yf, s


def solve(problem: ConicProblem, tol: float = 1e-8, max_iter: int = 200, quiet: bool = True,
          stall_window: int = 20, chunk_elems: int = 2 ** 18, do_presolve: bool = True,
          callback=None, refine_steps: int = 3, free_rows: bool = True,
          eliminate_free: bool = True) -> ConicSolution:
    """Primal-dual interior-point method (NT direction, Mehrotra corrector).

    Presolve solves rows that involve free variables only exactly and removes
    dependent rows; termination is always measured on the original problem.
    """
    t0 = time.perf_counter()
    orig = problem
    chain = []
    cur = problem
    if do_presolve and cur.nrows:
        red = _FreeSingletonElimination.find(cur) if eliminate_free else None
        if red is not None:
            chain.append(red)
            cur = red.reduced
        red = _FreeRowReduction.find(cur) if free_rows else None
        if red is not None:
            chain.append(red)
            cur = red.reduced
        chain.append(_RowPresolve(cur))
        cur = chain[-1].reduced

    def lift(x, y, s):
        for t in reversed(chain):
            x, y, s = t.lift(x, y, s)
        return x, y, s

    x, y, s, status, it, history = _ipm(cur, orig, lift, tol, max_iter, quiet, stall_window,
                                        chunk_elems, callback, refine_steps)
    sol = ConicSolution(x=x, y=y, s=s, status=status,
                        primal_objective=float(orig.c @ x),
                        dual_objective=float(orig.b @ y) if orig.nrows else 0.0,
                        iterations=it, history=history, solve_time=time.perf_counter() - t0)
    sol.residuals = check_kkt(orig, sol)
    if not quiet:
        log.info("status %s after %d iterations (%.2fs)", status, it, sol.solve_time)
    return sol


# sigma * mu is kept above this fraction of the current infeasibility
_MU_FLOOR = 1e-2


def _ipm(problem, orig, lift, tol, max_iter, quiet, stall_window, chunk_elems, callback, refine_steps):
    blocks = problem.blocks
    offs = problem.offsets
    N = problem.nvars
    m = problem.nrows
    A = problem.A.tocsr()
    b = problem.b.copy()
    c = problem.c

    # row equilibration
    rn = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    rn[rn == 0] = 1.0
    Dr = 1.0 / rn
    A = sp.diags(Dr) @ A
    b = b * Dr
    At = A.T.tocsr()
    Acsc = A.tocsc()

    psd = [(i, offs[i], blk.dim) for i, blk in enumerate(blocks) if blk.kind == "psd"]
    nn_idx = problem.indices_of("nonneg")
    fr_idx = problem.indices_of("free")
    nf = len(fr_idx)
    pblocks = [_PsdBlock(Acsc, o, n, chunk_elems) for _, o, n in psd]
    A_nn = Acsc[:, nn_idx] if len(nn_idx) else None
    A_f = Acsc[:, fr_idx].toarray() if nf else None
    nu = sum(n for _, _, n in psd) + len(nn_idx)

    # starting point
    x = np.zeros(N)
    s = np.zeros(N)
    y = np.zeros(m)
    bnorm_rows = 1 + np.abs(b)
    for (_, o, n), pb in zip(psd, pblocks):
        size = n * (n + 1) // 2
        blockA = Acsc[:, o:o + size]
        rnorms = np.sqrt(np.asarray(blockA.multiply(blockA).sum(axis=1)).ravel())
        touched = rnorms > 0
        xi = max(10.0, math.sqrt(n), n * float(np.max(bnorm_rows[touched] / (1 + rnorms[touched]))) if touched.any() else 10.0)
        eta = max(10.0, math.sqrt(n), float(rnorms.max(initial=0.0)), float(np.linalg.norm(c[o:o + size])))
        x[o:o + size] = svec(xi * np.eye(n))
        s[o:o + size] = svec(eta * np.eye(n))
    if len(nn_idx):
        colA = np.sqrt(np.asarray(A_nn.multiply(A_nn).sum(axis=0)).ravel())
        xi = max(10.0, math.sqrt(len(nn_idx)), float(np.max(bnorm_rows, initial=1.0) / (1 + colA.min())))
        eta = max(10.0, math.sqrt(len(nn_idx)), float(colA.max()), float(np.linalg.norm(c[nn_idx])))
        x[nn_idx] = xi
        s[nn_idx] = eta

    history = []
    status = "stall"
    best = (math.inf, None)
    best_it = 0
    it = 0
    residuals = {}

    def metrics(x, y, s):
        # measured on the original (unscaled, unreduced) problem
        xo, yo, so = lift(x, y * Dr, s)
        rp = orig.b - orig.A @ xo
        rd = orig.c - orig.A.T @ yo - so
        pobj = float(orig.c @ xo)
        dobj = float(orig.b @ yo)
        gap = abs(pobj - dobj) / (1 + abs(pobj))
        return dict(pinf=float(np.abs(rp).max(initial=0.0)), dinf=float(np.abs(rd).max(initial=0.0)),
                    gap=gap, pobj=pobj, dobj=dobj), (xo, yo, so)

    for it in range(max_iter + 1):
        met, lifted = metrics(x, y, s)
        mu = float(x @ s) / nu if nu else 0.0
        met["mu"] = mu
        history.append(met)
        if not quiet:
            log.info("it %3d  pobj %+.9e  dobj %+.9e  gap %.2e  pinf %.2e  dinf %.2e  mu %.2e",
                     it, met["pobj"], met["dobj"], met["gap"], met["pinf"], met["dinf"], mu)
        if callback:
            callback(it, met)
        err = max(met["pinf"], met["dinf"], met["gap"])
        if err < best[0] * 0.99:
            best = (err, (lifted, met))
            best_it = it
        if met["pinf"] <= tol and met["dinf"] <= tol and met["gap"] <= tol:
            status = "optimal"
            break
        if it == max_iter:
            status = "stall"
            break
        if it - best_it >= stall_window:
            status = "stall"
            break
        if np.abs(y).max(initial=0) > 1e13 and met["dobj"] > 0:
            status = "infeasible"
            break
        if np.abs(x).max(initial=0) > 1e13 and met["pobj"] < 0:
            status = "unbounded"
            break

        rp = b - A @ x
        Rd = c - At @ y - s
        Rd[fr_idx] = c[fr_idx] - (At @ y)[fr_idx]

        # scaling and Schur complement
        M = np.zeros((m, m))
        scal = []
        try:
            for (bi, o, n), pb in zip(psd, pblocks):
                size = n * (n + 1) // 2
                Xb = smat(x[o:o + size], n)
                Sb = smat(s[o:o + size], n)
                G, lam, Lx, Ls = _nt_scaling(Xb, Sb)
                Wb = G @ G.T
                Wb = (Wb + Wb.T) / 2
                scal.append((G, lam, Wb, Lx, Ls))
                M[np.ix_(pb.rows, pb.rows)] += pb.schur(Wb)
        except la.LinAlgError:
            status = "stall"
            break
        if len(nn_idx):
            xn, sn = x[nn_idx], s[nn_idx]
            M += (A_nn @ sp.diags(xn / sn) @ A_nn.T).toarray()
        if nf:
            K = np.zeros((m + nf, m + nf))
            K[:m, :m] = M
            K[:m, m:] = A_f
            K[m:, :m] = A_f.T
        else:
            K = M
        try:
            with np.errstate(all="ignore"):
                lu = la.lu_factor(K, check_finite=True)
        except (ValueError, la.LinAlgError):
            status = "stall"
            break

        def direction(Rc_psd, Rc_nn):
            # assemble right-hand side
            h = rp.copy()
            parts = []
            for (bi, o, n), (G, lam, Wb, Lx, Ls), Rc in zip(psd, scal, Rc_psd):
                size = n * (n + 1) // 2
                Rt = 2 * Rc / (lam[:, None] + lam[None, :])
                D1 = G @ Rt @ G.T
                D1 = (D1 + D1.T) / 2
                Rdm = smat(Rd[o:o + size], n)
                T2 = Wb @ Rdm @ Wb
                parts.append((D1, Wb))
                h -= A[:, o:o + size] @ svec(D1) - A[:, o:o + size] @ svec(T2)
            if len(nn_idx):
                wsq = x[nn_idx] / s[nn_idx]
                lam_n = np.sqrt(x[nn_idx] * s[nn_idx])
                D1n = np.sqrt(wsq) * Rc_nn / lam_n
                h -= A_nn @ D1n - A_nn @ (wsq * Rd[nn_idx])
            rhs = np.concatenate([h, Rd[fr_idx]]) if nf else h
            sol = la.lu_solve(lu, rhs)
            sol += la.lu_solve(lu, rhs - K @ sol)

            def recover(sol):
                dy = sol[:m]
                dx = np.zeros(N)
                ds = Rd - At @ dy
                if nf:
                    dx[fr_idx] = sol[m:]
                    ds[fr_idx] = 0.0
                mats = []
                for (bi, o, n), (D1, Wb) in zip(psd, parts):
                    size = n * (n + 1) // 2
                    dS = smat(ds[o:o + size], n)
                    dX = D1 - Wb @ dS @ Wb
                    dX = (dX + dX.T) / 2
                    dx[o:o + size] = svec(dX)
                    mats.append((dX, dS))
                if len(nn_idx):
                    dx[nn_idx] = D1n - wsq * ds[nn_idx]
                return dy, dx, ds, mats

            # refine against the exact operator; the factorized K only preconditions
            dy, dx, ds, mats = recover(sol)
            best_r = math.inf
            for _ in range(refine_steps):
                r1 = rp - A @ dx
                r = np.concatenate([r1, Rd[fr_idx] - A_f.T @ dy]) if nf else r1
                rn_ = float(np.abs(r).max(initial=0.0))
                log.debug("refine %.3e", rn_)
                if rn_ >= 0.5 * best_r or rn_ == 0.0:
                    break
                best_r = rn_
                cand = sol + la.lu_solve(lu, r)
                sol = cand
                dy, dx, ds, mats = recover(sol)
            return dx, dy, ds, mats

        def steplen(dx, ds, mats):
            ap, ad = math.inf, math.inf
            for (G, lam, Wb, Lx, Ls), (dX, dS) in zip(scal, mats):
                ap = min(ap, _max_step(Lx, dX))
                ad = min(ad, _max_step(Ls, dS))
            if len(nn_idx):
                dxn, dsn = dx[nn_idx], ds[nn_idx]
                neg = dxn < 0
                if neg.any():
                    ap = min(ap, float(np.min(-x[nn_idx][neg] / dxn[neg])))
                neg = dsn < 0
                if neg.any():
                    ad = min(ad, float(np.min(-s[nn_idx][neg] / dsn[neg])))
            return ap, ad

        # predictor
        Rc_psd = [-np.diag(lam ** 2) for (G, lam, Wb, Lx, Ls) in scal]
        Rc_nn = -(x[nn_idx] * s[nn_idx]) if len(nn_idx) else None
        try:
            dx_a, dy_a, ds_a, mats_a = direction(Rc_psd, Rc_nn)
        except (ValueError, la.LinAlgError):
            status = "stall"
            break
        ap, ad = steplen(dx_a, ds_a, mats_a)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = float((x + ap * dx_a) @ (s + ad * ds_a)) / nu if nu else 0.0
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        # keep complementarity from outrunning infeasibility
        infeas = max(met["pinf"], met["dinf"])
        if mu > 0 and infeas > tol:
            sigma = min(1.0, max(sigma, _MU_FLOOR * infeas / mu))

        # corrector
        Rc_psd = []
        for (G, lam, Wb, Lx, Ls), (dX, dS) in zip(scal, mats_a):
            Gi = la.solve(G, np.eye(len(lam)))
            dXt = Gi @ dX @ Gi.T
            dSt = G.T @ dS @ G
            Rc_psd.append(sigma * mu * np.eye(len(lam)) - np.diag(lam ** 2) - _jordan(dXt, dSt))
        if len(nn_idx):
            Rc_nn = sigma * mu - x[nn_idx] * s[nn_idx] - dx_a[nn_idx] * ds_a[nn_idx]
        try:
            dx, dy, ds, mats = direction(Rc_psd, Rc_nn)
        except (ValueError, la.LinAlgError):
            status = "stall"
            break
        ap, ad = steplen(dx, ds, mats)
        gamma = 0.9 + 0.09 * min(ap, ad, 1.0)
        ap = min(1.0, gamma * ap)
        ad = min(1.0, gamma * ad)
        if not (np.isfinite(ap) and np.isfinite(ad)) or max(ap, ad) < 1e-10:
            status = "stall"
            break
        log.debug("step ap %.3e ad %.3e sigma %.2e", ap, ad, sigma)
        x = x + ap * dx
        y = y + ad * dy
        s = s + ad * ds
        s[fr_idx] = 0.0

    s[fr_idx] = 0.0
    final_met, lifted = metrics(x, y, s)
    if status != "optimal" and best[1] is not None:
        blifted, bmet = best[1]
        if max(bmet["pinf"], bmet["dinf"], bmet["gap"]) < max(final_met["pinf"], final_met["dinf"], final_met["gap"]):
            lifted, final_met = blifted, bmet
    if status == "stall":
        err = max(final_met["pinf"], final_met["dinf"], final_met["gap"])
        if err <= max(1e3 * tol, 1e-6):
            status = "near"
    xo, yo, so = lifted
    return xo, yo, so, status, it, history


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def check_kkt(problem: ConicProblem, solution: ConicSolution) -> dict:
    x, y, s = solution.x, solution.y, solution.s
    rp = problem.A @ x - problem.b if problem.nrows else np.zeros(0)
    rd = problem.A.T @ y + s - problem.c
    pobj = float(problem.c @ x)
    dobj = float(problem.b @ y) if problem.nrows else 0.0
    min_x, min_s = math.inf, math.inf
    for i, blk in enumerate(problem.blocks):
        sl = problem.block_slice(i)
        if blk.kind == "psd":
            min_x = min(min_x, float(la.eigvalsh(smat(x[sl], blk.dim))[0]))
            min_s = min(min_s, float(la.eigvalsh(smat(s[sl], blk.dim))[0]))
        elif blk.kind == "nonneg":
            min_x = min(min_x, float(x[sl].min()))
            min_s = min(min_s, float(s[sl].min()))
    return {"primal_residual": float(np.abs(rp).max(initial=0.0)),
            "dual_residual": float(np.abs(rd).max(initial=0.0)),
            "gap": abs(pobj - dobj) / (1 + abs(pobj)),
            "pobj": pobj, "dobj": dobj,
            "min_eig_x": min_x, "min_eig_s": min_s}


# ---------------------------------------------------------------------------
# SDPA sparse format
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v)) if np.isfinite(v) else str(v)


def export_sdpa(problem: ConicProblem, path, comment: str = "") -> Path:
    """Write ``problem`` as an SDPA sparse (``.dat-s``) file.

    The standard-form problem is the SDPA dual ``max F0.Y s.t. Fi.Y = ci``
    with ``Fi`` the constraint rows, ``ci = b_i`` and ``F0 = -C``; the SDPA
    primal optimum therefore equals minus the standard-form optimum. Free
    variables are split into pairs of nonnegative variables appended to the
    diagonal (LP) block.
    """
    path = Path(path)
    psd = [(i, b) for i, b in enumerate(problem.blocks) if b.kind == "psd"]
    nn_idx = problem.indices_of("nonneg")
    fr_idx = problem.indices_of("free")
    lp_dim = len(nn_idx) + 2 * len(fr_idx)
    struct = [b.dim for _, b in psd] + ([-lp_dim] if lp_dim else [])
    # column -> (block, row, col, factor) entries in SDPA coordinates
    col_map: dict[int, list] = {}
    for bno, (i, blk) in enumerate(psd, start=1):
        o = problem.offsets[i]
        ii, jj, sc = tril_indices(blk.dim)
        for k in range(blk.size):
            # SDPA lists the upper triangle: (row <= col)
            r, cc = int(jj[k]) + 1, int(ii[k]) + 1
            col_map[o + k] = [(bno, r, cc, 1.0 / sc[k])]
    lp_block = len(psd) + 1
    for p, j in enumerate(nn_idx, start=1):
        col_map[int(j)] = [(lp_block, p, p, 1.0)]
    base = len(nn_idx)
    for p, j in enumerate(fr_idx):
        a = base + 2 * p + 1
        col_map[int(j)] = [(lp_block, a, a, 1.0), (lp_block, a + 1, a + 1, -1.0)]

    lines = []
    if comment:
        lines.extend(f'"{ln}' for ln in comment.splitlines())
    lines.append(f"{problem.nrows} = mDIM")
    lines.append(f"{len(struct)} = nBLOCK")
    lines.append(" ".join(str(d) for d in struct) if struct else "0")
    lines.append(" ".join(_fmt(v) for v in problem.b) if problem.nrows else "{}")
    entries = []
    cvec = problem.c
    for j in np.nonzero(cvec)[0]:
        for bno, r, cc, f in col_map[int(j)]:
            entries.append((0, bno, r, cc, -cvec[j] * f))
    Acoo = problem.A.tocoo()
    for i, j, v in zip(Acoo.row, Acoo.col, Acoo.data):
        if v == 0:
            continue
        for bno, r, cc, f in col_map[int(j)]:
            entries.append((int(i) + 1, bno, r, cc, v * f))
    entries.sort(key=lambda e: e[:4])
    for e in entries:
        lines.append(f"{e[0]} {e[1]} {e[2]} {e[3]} {_fmt(e[4])}")
    path.write_text("\n".join(lines) + "\n")
    return path


@dataclass
class SdpaData:
    m: int
    block_struct: list
    c: np.ndarray
    entries: list  # (matno, block, i, j, value)


def read_sdpa(path) -> SdpaData:
    """Parse an SDPA sparse file (comments, punctuation and ``= mDIM`` tags allowed)."""
    import re

    raw = Path(path).read_text().splitlines()
    body = [ln for ln in raw if ln.strip() and not ln.lstrip().startswith(('"', "*"))]

    def nums(line):
        return [t for t in re.split(r"[\s,{}()=]+", line.split("=")[0] if "=" in line else line) if t]

    m = int(nums(body[0])[0])
    nblk = int(nums(body[1])[0])
    struct = [int(t) for t in nums(body[2])][:nblk]
    c_tokens = [float(t) for t in re.split(r"[\s,{}()]+", body[3]) if t]
    if len(c_tokens) != m:
        raise ValueError(f"objective line has {len(c_tokens)} values, expected {m}")
    entries = []
    for ln in body[4:]:
        t = ln.split()
        entries.append((int(t[0]), int(t[1]), int(t[2]), int(t[3]), float(t[4])))
    return SdpaData(m, struct, np.array(c_tokens), entries)
