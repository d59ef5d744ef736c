"""Numeric kernels of the interior-point solver.

Two interchangeable backends evaluate constraints, barrier values and Newton
systems over the flat CSR program arrays: numba-compiled loops (default when
numba imports) and a pure numpy/scipy fallback.  Set ``DTDD_EE_NO_NUMBA=1``
to force the fallback, or pass ``backend=`` explicitly (the benchmark does).

Both backends implement the same math; they may differ in the last floating
bits because summation orders differ.
"""

from __future__ import annotations

import math
import os

import numpy as np
import scipy.sparse as sp

_FORCE_NUMPY = os.environ.get("DTDD_EE_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _FORCE_NUMPY:
        raise ImportError("numba disabled via DTDD_EE_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment dependent
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap

DEFAULT_BACKEND = "numba" if HAVE_NUMBA else "numpy"


def resolve_backend(backend: str | None) -> str:
    b = backend or DEFAULT_BACKEND
    if b not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {b!r}")
    if b == "numba" and not HAVE_NUMBA:
        return "numpy"
    return b


class ProgData:
    """Flat, solver-ready view of a ConvexProgram (variable scaling applied)."""

    def __init__(self, n, obj_idx, lo, hi, aff_indptr, aff_idx, aff_val,
                 aff_const, term_con, term_w, term_indptr, term_idx, term_val,
                 term_off):
        self.n = int(n)
        self.obj_idx = int(obj_idx)
        self.lo = lo
        self.hi = hi
        self.aff_indptr = aff_indptr
        self.aff_idx = aff_idx
        self.aff_val = aff_val
        self.aff_const = aff_const
        self.term_con = term_con
        self.term_w = term_w
        self.term_indptr = term_indptr
        self.term_idx = term_idx
        self.term_val = term_val
        self.term_off = term_off
        self.nc = aff_const.shape[0]
        self.nt = term_w.shape[0]
        # terms grouped by constraint
        self.con_t_indptr = np.searchsorted(term_con, np.arange(self.nc + 1)).astype(np.int64)
        self._build_grad_pattern()
        self.ilo = np.flatnonzero(np.isfinite(lo)).astype(np.int64)
        self.ihi = np.flatnonzero(np.isfinite(hi)).astype(np.int64)
        self.m_barrier = self.nc + self.ilo.size + self.ihi.size
        self._cache: dict[str, sp.csr_matrix] = {}

    def _build_grad_pattern(self) -> None:
        """Union sparsity of every constraint gradient plus scatter maps."""
        n, nc = self.n, self.nc
        aff_rows = np.repeat(np.arange(nc, dtype=np.int64),
                             np.diff(self.aff_indptr))
        term_rows = np.repeat(self.term_con, np.diff(self.term_indptr))
        entry_con = np.concatenate([aff_rows, term_rows])
        entry_idx = np.concatenate([self.aff_idx, self.term_idx])
        key = entry_con * np.int64(n) + entry_idx
        uniq = np.unique(key)
        pos = np.searchsorted(uniq, key)
        self.gp_idx = (uniq % n).astype(np.int64)
        gp_con = (uniq // n).astype(np.int64)
        self.gp_indptr = np.searchsorted(gp_con, np.arange(nc + 1)).astype(np.int64)
        local = pos - self.gp_indptr[entry_con]
        na = self.aff_idx.shape[0]
        self.aff_pos = local[:na].astype(np.int64)
        self.t_pos = local[na:].astype(np.int64)
        rows = np.diff(self.gp_indptr)
        self.max_row = int(rows.max()) if rows.size else 1

    # sparse matrices for the numpy backend
    def mat(self, key: str) -> sp.csr_matrix:
        if key not in self._cache:
            if key == "A":
                self._cache[key] = sp.csr_matrix(
                    (self.aff_val, self.aff_idx, self.aff_indptr),
                    shape=(self.nc, self.n))
            elif key == "V":
                self._cache[key] = sp.csr_matrix(
                    (self.term_val, self.term_idx, self.term_indptr),
                    shape=(self.nt, self.n))
            elif key == "P":
                self._cache[key] = sp.csr_matrix(
                    (np.ones(self.nt), (self.term_con, np.arange(self.nt))),
                    shape=(self.nc, self.nt))
        return self._cache[key]


def prepare(prog) -> ProgData:
    """Scale a ConvexProgram into solver coordinates x_solver = x / var_scale."""
    s = prog.var_scale
    return ProgData(
        n=prog.n_vars,
        obj_idx=prog.catalog.offset(prog.objective),
        lo=prog.lo / s, hi=prog.hi / s,
        aff_indptr=prog.aff_indptr, aff_idx=prog.aff_idx,
        aff_val=prog.aff_val * s[prog.aff_idx],
        aff_const=prog.aff_const,
        term_con=prog.term_con, term_w=prog.term_w,
        term_indptr=prog.term_indptr, term_idx=prog.term_idx,
        term_val=prog.term_val * s[prog.term_idx],
        term_off=prog.term_off)


def extend_phase1(pd: ProgData, v_hi: float,
                  mask: np.ndarray | None = None) -> ProgData:
    """Append the slack variable v: constraints become g_i(x) + v <= 0.

    With ``mask`` given, v enters only the masked constraints; the rest stay
    hard (their slacks must be positive at the start point).
    """
    n, nc = pd.n, pd.nc
    if mask is None:
        mask = np.ones(nc, dtype=bool)
    rows = np.flatnonzero(mask)
    aff_idx = np.insert(pd.aff_idx, pd.aff_indptr[1:][rows], n)
    aff_val = np.insert(pd.aff_val, pd.aff_indptr[1:][rows], 1.0)
    aff_indptr = pd.aff_indptr + np.concatenate(
        [[0], np.cumsum(mask).astype(np.int64)])
    lo = np.concatenate([pd.lo, [-np.inf]])
    hi = np.concatenate([pd.hi, [v_hi]])
    return ProgData(n=n + 1, obj_idx=n, lo=lo, hi=hi,
                    aff_indptr=aff_indptr, aff_idx=aff_idx, aff_val=aff_val,
                    aff_const=pd.aff_const, term_con=pd.term_con,
                    term_w=pd.term_w, term_indptr=pd.term_indptr,
                    term_idx=pd.term_idx, term_val=pd.term_val,
                    term_off=pd.term_off)


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _eval_np(pd: ProgData, x: np.ndarray):
    y = pd.mat("V") @ x + pd.term_off if pd.nt else np.empty(0)
    g = pd.mat("A") @ x + pd.aff_const
    if pd.nt:
        g = g + pd.mat("P") @ (pd.term_w * y * y)
    return g, y


def _phi_np(pd: ProgData, x: np.ndarray, t: float, g: np.ndarray):
    s = -g
    dlo = x[pd.ilo] - pd.lo[pd.ilo]
    dhi = pd.hi[pd.ihi] - x[pd.ihi]
    if (s.size and s.min() <= 0) or (dlo.size and dlo.min() <= 0) \
            or (dhi.size and dhi.min() <= 0):
        return math.inf, False
    phi = -t * x[pd.obj_idx]
    phi -= float(np.sum(np.log(s))) if s.size else 0.0
    phi -= float(np.sum(np.log(dlo))) if dlo.size else 0.0
    phi -= float(np.sum(np.log(dhi))) if dhi.size else 0.0
    return phi, True


def _newton_np(pd: ProgData, x: np.ndarray, t: float, g: np.ndarray,
               y: np.ndarray):
    s = -g
    inv = 1.0 / s
    grad = np.zeros(pd.n)
    grad[pd.obj_idx] = -t
    A = pd.mat("A")
    grad += A.T @ inv
    if pd.nt:
        cterm = 2.0 * pd.term_w * y
        grad += pd.mat("V").T @ (cterm * inv[pd.term_con])
        G = A + pd.mat("P") @ sp.diags(cterm) @ pd.mat("V")
    else:
        G = A
    Gs = G.multiply(inv[:, None]).tocsr()
    H = (Gs.T @ Gs).toarray()
    if pd.nt:
        Vw = pd.mat("V").multiply(
            (2.0 * pd.term_w * inv[pd.term_con])[:, None]).tocsr()
        H += (Vw.T @ pd.mat("V")).toarray()
    dlo = x[pd.ilo] - pd.lo[pd.ilo]
    dhi = pd.hi[pd.ihi] - x[pd.ihi]
    np.subtract.at(grad, pd.ilo, 1.0 / dlo)
    np.add.at(grad, pd.ihi, 1.0 / dhi)
    np.add.at(H, (pd.ilo, pd.ilo), 1.0 / dlo ** 2)
    np.add.at(H, (pd.ihi, pd.ihi), 1.0 / dhi ** 2)
    return grad, H


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

@njit(cache=True)
def _eval_nb(x, aff_indptr, aff_idx, aff_val, aff_const,
             term_con, term_w, term_indptr, term_idx, term_val, term_off):
    nc = aff_const.shape[0]
    nt = term_w.shape[0]
    y = np.empty(nt)
    g = np.empty(nc)
    for c in range(nc):
        acc = aff_const[c]
        for p in range(aff_indptr[c], aff_indptr[c + 1]):
            acc += aff_val[p] * x[aff_idx[p]]
        g[c] = acc
    for tt in range(nt):
        acc = term_off[tt]
        for p in range(term_indptr[tt], term_indptr[tt + 1]):
            acc += term_val[p] * x[term_idx[p]]
        y[tt] = acc
        g[term_con[tt]] += term_w[tt] * acc * acc
    return g, y


@njit(cache=True)
def _phi_nb(x, t, g, obj_idx, lo, hi, ilo, ihi):
    phi = -t * x[obj_idx]
    for c in range(g.shape[0]):
        s = -g[c]
        if s <= 0.0:
            return np.inf, False
        phi -= np.log(s)
    for p in range(ilo.shape[0]):
        d = x[ilo[p]] - lo[ilo[p]]
        if d <= 0.0:
            return np.inf, False
        phi -= np.log(d)
    for p in range(ihi.shape[0]):
        d = hi[ihi[p]] - x[ihi[p]]
        if d <= 0.0:
            return np.inf, False
        phi -= np.log(d)
    return phi, True


@njit(cache=True)
def _newton_nb(x, t, g, y, n, obj_idx, lo, hi, ilo, ihi,
               aff_indptr, aff_idx, aff_val,
               con_t_indptr, term_w, term_indptr, term_idx, term_val,
               gp_indptr, gp_idx, aff_pos, t_pos, max_row):
    grad = np.zeros(n)
    H = np.zeros((n, n))
    grad[obj_idx] = -t
    nc = aff_indptr.shape[0] - 1
    gval = np.empty(max_row)
    for c in range(nc):
        s = -g[c]
        inv = 1.0 / s
        inv2 = inv * inv
        r0 = gp_indptr[c]
        nr = gp_indptr[c + 1] - r0
        for i in range(nr):
            gval[i] = 0.0
        for p in range(aff_indptr[c], aff_indptr[c + 1]):
            gval[aff_pos[p]] += aff_val[p]
        for tt in range(con_t_indptr[c], con_t_indptr[c + 1]):
            coef = 2.0 * term_w[tt] * y[tt]
            for p in range(term_indptr[tt], term_indptr[tt + 1]):
                gval[t_pos[p]] += coef * term_val[p]
        for i in range(nr):
            gi = gval[i]
            vi = gp_idx[r0 + i]
            grad[vi] += inv * gi
            hcoef = inv2 * gi
            for j in range(nr):
                H[vi, gp_idx[r0 + j]] += hcoef * gval[j]
        for tt in range(con_t_indptr[c], con_t_indptr[c + 1]):
            cw = 2.0 * term_w[tt] * inv
            for p in range(term_indptr[tt], term_indptr[tt + 1]):
                vp = term_idx[p]
                vv = cw * term_val[p]
                for p2 in range(term_indptr[tt], term_indptr[tt + 1]):
                    H[vp, term_idx[p2]] += vv * term_val[p2]
    for p in range(ilo.shape[0]):
        j = ilo[p]
        d = x[j] - lo[j]
        grad[j] -= 1.0 / d
        H[j, j] += 1.0 / (d * d)
    for p in range(ihi.shape[0]):
        j = ihi[p]
        d = hi[j] - x[j]
        grad[j] += 1.0 / d
        H[j, j] += 1.0 / (d * d)
    return grad, H


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def eval_constraints(pd: ProgData, x: np.ndarray, backend: str | None = None):
    if resolve_backend(backend) == "numba":
        return _eval_nb(x, pd.aff_indptr, pd.aff_idx, pd.aff_val, pd.aff_const,
                        pd.term_con, pd.term_w, pd.term_indptr, pd.term_idx,
                        pd.term_val, pd.term_off)
    return _eval_np(pd, x)


def barrier_value(pd: ProgData, x: np.ndarray, t: float, g: np.ndarray,
                  backend: str | None = None):
    if resolve_backend(backend) == "numba":
        return _phi_nb(x, t, g, pd.obj_idx, pd.lo, pd.hi, pd.ilo, pd.ihi)
    return _phi_np(pd, x, t, g)


def newton_system(pd: ProgData, x: np.ndarray, t: float, g: np.ndarray,
                  y: np.ndarray, backend: str | None = None):
    if resolve_backend(backend) == "numba":
        return _newton_nb(x, t, g, y, pd.n, pd.obj_idx, pd.lo, pd.hi,
                          pd.ilo, pd.ihi, pd.aff_indptr, pd.aff_idx,
                          pd.aff_val, pd.con_t_indptr, pd.term_w,
                          pd.term_indptr, pd.term_idx, pd.term_val,
                          pd.gp_indptr, pd.gp_idx, pd.aff_pos, pd.t_pos,
                          pd.max_row)
    return _newton_np(pd, x, t, g, y)
