"""Solver-agnostic description of one convex subproblem.

A program is a flat variable vector with box bounds, a single variable to
maximize, and a list of general constraints ``g_i(x) <= 0`` where every
``g_i`` is an affine form plus a nonnegatively weighted sum of squares of
affine forms.  That structure makes the quadratic part positive semidefinite
by construction and is all the downstream interior-point solver needs.

Storage is flat CSR-style arrays:

* affine parts:   ``aff_indptr/aff_idx/aff_val`` (one row per constraint)
  and ``aff_const``;
* squared terms:  row ``t`` is the affine form ``v_t . x + off_t`` entering
  as ``w_t * (v_t . x + off_t)^2``; ``term_con`` maps terms to constraints
  and must be nondecreasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class VarSpec:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class VariableCatalog:
    """Named views into the flat optimization vector."""

    def __init__(self, specs: list[tuple[str, tuple[int, ...]]]):
        self.specs: list[VarSpec] = []
        off = 0
        for name, shape in specs:
            spec = VarSpec(name=name, offset=off, shape=shape)
            self.specs.append(spec)
            off += spec.size
        self.n = off
        self._by_name = {s.name: s for s in self.specs}
        if len(self._by_name) != len(self.specs):
            raise ValueError("duplicate variable names")

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def spec(self, name: str) -> VarSpec:
        return self._by_name[name]

    def sl(self, name: str) -> slice:
        s = self._by_name[name]
        return slice(s.offset, s.offset + s.size)

    def offset(self, name: str) -> int:
        return self._by_name[name].offset

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray | float]:
        out: dict[str, np.ndarray | float] = {}
        for s in self.specs:
            chunk = x[s.offset:s.offset + s.size]
            out[s.name] = float(chunk[0]) if s.shape == () else chunk.reshape(s.shape).copy()
        return out

    def pack(self, values: dict[str, np.ndarray | float]) -> np.ndarray:
        x = np.empty(self.n)
        for s in self.specs:
            x[s.offset:s.offset + s.size] = np.reshape(values[s.name], -1)
        return x


class ConvexProgram:
    """Immutable convex QCQP with a linear (single-variable) objective."""

    def __init__(self, catalog: VariableCatalog, objective: str,
                 lo: np.ndarray, hi: np.ndarray,
                 labels: list[str],
                 aff_indptr: np.ndarray, aff_idx: np.ndarray,
                 aff_val: np.ndarray, aff_const: np.ndarray,
                 term_con: np.ndarray, term_w: np.ndarray,
                 term_indptr: np.ndarray, term_idx: np.ndarray,
                 term_val: np.ndarray, term_off: np.ndarray,
                 var_scale: np.ndarray | None = None,
                 meta: dict | None = None):
        self.catalog = catalog
        self.objective = objective
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.labels = list(labels)
        self.aff_indptr = np.asarray(aff_indptr, dtype=np.int64)
        self.aff_idx = np.asarray(aff_idx, dtype=np.int64)
        self.aff_val = np.asarray(aff_val, dtype=np.float64)
        self.aff_const = np.asarray(aff_const, dtype=np.float64)
        self.term_con = np.asarray(term_con, dtype=np.int64)
        self.term_w = np.asarray(term_w, dtype=np.float64)
        self.term_indptr = np.asarray(term_indptr, dtype=np.int64)
        self.term_idx = np.asarray(term_idx, dtype=np.int64)
        self.term_val = np.asarray(term_val, dtype=np.float64)
        self.term_off = np.asarray(term_off, dtype=np.float64)
        self.var_scale = (np.ones(catalog.n) if var_scale is None
                          else np.asarray(var_scale, dtype=np.float64))
        self.meta = dict(meta or {})
        self._cache: dict[str, sp.csr_matrix] = {}
        self.validate_structure()

    # -- sizes ----------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return self.catalog.n

    @property
    def n_cons(self) -> int:
        return len(self.labels)

    @property
    def n_terms(self) -> int:
        return self.term_w.shape[0]

    # -- structural invariants -------------------------------------------
    def validate_structure(self) -> None:
        n, nc, nt = self.n_vars, self.n_cons, self.n_terms
        if self.aff_indptr.shape != (nc + 1,) or self.aff_const.shape != (nc,):
            raise ValueError("affine block shape mismatch")
        if self.term_indptr.shape != (nt + 1,):
            raise ValueError("term block shape mismatch")
        if nt and (self.term_con.min() < 0 or self.term_con.max() >= nc):
            raise ValueError("term_con out of range")
        if np.any(np.diff(self.term_con) < 0):
            raise ValueError("terms must be grouped by constraint")
        if np.any(self.term_w < 0):
            raise ValueError("squared-term weights must be nonnegative (PSD)")
        for idx in (self.aff_idx, self.term_idx):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValueError("variable index out of range")
        if np.any(self.lo >= self.hi):
            raise ValueError("box bounds must satisfy lo < hi")
        if self.objective not in self.catalog:
            raise ValueError(f"objective variable {self.objective!r} not in catalog")
        if np.any(self.var_scale <= 0):
            raise ValueError("var_scale must be strictly positive")

    # -- reference evaluation ---------------------------------------------
    def _mat(self, key: str) -> sp.csr_matrix:
        if key not in self._cache:
            n = self.n_vars
            if key == "aff":
                self._cache[key] = sp.csr_matrix(
                    (self.aff_val, self.aff_idx, self.aff_indptr),
                    shape=(self.n_cons, n))
            elif key == "terms":
                self._cache[key] = sp.csr_matrix(
                    (self.term_val, self.term_idx, self.term_indptr),
                    shape=(self.n_terms, n))
            elif key == "incidence":
                nt = self.n_terms
                self._cache[key] = sp.csr_matrix(
                    (np.ones(nt), (self.term_con, np.arange(nt))),
                    shape=(self.n_cons, nt))
        return self._cache[key]

    def term_values(self, x: np.ndarray) -> np.ndarray:
        """Affine form of every squared term at x."""
        return self._mat("terms") @ x + self.term_off

    def eval_constraints(self, x: np.ndarray) -> np.ndarray:
        """g_i(x) of every general constraint (reference implementation)."""
        y = self.term_values(x)
        quad = self._mat("incidence") @ (self.term_w * y * y)
        return self._mat("aff") @ x + self.aff_const + quad

    def constraint_slacks(self, x: np.ndarray) -> np.ndarray:
        return -self.eval_constraints(x)

    def box_violation(self, x: np.ndarray) -> float:
        return float(max(np.max(self.lo - x, initial=0.0),
                         np.max(x - self.hi, initial=0.0)))

    # -- canonical text form ------------------------------------------------
    def dump(self) -> str:
        """One line per bound and per constraint, full float precision."""
        out = ["# convex-program dump v1"]
        for s in self.catalog.specs:
            out.append(f"var {s.name} offset={s.offset} shape={s.shape}")
        for j in range(self.n_vars):
            lo, hi = self.lo[j], self.hi[j]
            if np.isfinite(lo) or np.isfinite(hi):
                out.append(f"box x[{j}] {lo!r} {hi!r}")
        out.append(f"objective maximize {self.objective}")
        for c in range(self.n_cons):
            parts = [f"con {self.labels[c]}:"]
            a0, a1 = self.aff_indptr[c], self.aff_indptr[c + 1]
            aff = " + ".join(f"{self.aff_val[p]!r}*x[{self.aff_idx[p]}]"
                             for p in range(a0, a1))
            parts.append(aff if aff else "0")
            t_lo = int(np.searchsorted(self.term_con, c, side="left"))
            t_hi = int(np.searchsorted(self.term_con, c, side="right"))
            for t in range(t_lo, t_hi):
                v0, v1 = self.term_indptr[t], self.term_indptr[t + 1]
                form = " + ".join(f"{self.term_val[p]!r}*x[{self.term_idx[p]}]"
                                  for p in range(v0, v1))
                parts.append(f"+ {self.term_w[t]!r}*({form} + {self.term_off[t]!r})^2")
            parts.append(f"+ {self.aff_const[c]!r} <= 0")
            out.append(" ".join(parts))
        return "\n".join(out) + "\n"

    def objective_value(self, x: np.ndarray) -> float:
        return float(x[self.catalog.offset(self.objective)])
