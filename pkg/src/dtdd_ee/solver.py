"""Primal log-barrier interior-point solver for the convex subproblems.

The programs have a single-variable linear objective (maximize), box bounds
and constraints that are affine plus nonnegatively weighted sums of squares
of affine forms, so their Hessians are PSD by construction.  A standard
barrier path follows: for increasing t, minimize

    t * (-x[obj]) - sum_i log(-g_i(x)) - sum_j log(box slacks)

by damped Newton steps with backtracking line search that never leaves the
strict interior.  Infeasibility is certified by an auxiliary problem that
maximizes the minimum constraint slack (``phase1``).

Everything here is deterministic: identical inputs produce bitwise-identical
iterates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import kernels
from .kernels import ProgData
from .program import ConvexProgram

log = logging.getLogger(__name__)

DEFAULT_FEAS_TOL = 1e-7
DEFAULT_OPT_TOL = 1e-6
DEFAULT_MAX_ITERS = 200     # outer barrier updates
BARRIER_GROWTH = 10.0
NEWTON_TOL = 1e-7           # stop centering when lambda^2 / 2 is below this
MAX_NEWTON = 100
ARMIJO_C = 1e-4
MIN_STEP = 1e-14


@dataclass
class Solution:
    status: str                       # optimal | infeasible | unbounded | iteration-limit
    primal: dict[str, np.ndarray | float]
    objective: float
    max_constraint_violation: float
    kkt_residual: float
    iterations: int                   # total Newton steps
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class _Stall(Exception):
    pass


def _solve_newton(H: np.ndarray, rhs: np.ndarray, diag_stats: dict) -> np.ndarray | None:
    """Cholesky solve with escalating diagonal regularization."""
    scale = float(np.trace(H)) / H.shape[0]
    if not math.isfinite(scale) or scale <= 0:
        return None
    reg = 0.0
    for attempt in range(9):
        try:
            cf = sla.cho_factor(H if reg == 0.0 else
                                H + reg * np.eye(H.shape[0]), lower=True,
                                check_finite=False)
            return sla.cho_solve(cf, rhs, check_finite=False)
        except np.linalg.LinAlgError:
            pass
        except ValueError:
            return None
        reg = scale * (1e-14 * 10.0 ** attempt)
        diag_stats["regularizations"] = diag_stats.get("regularizations", 0) + 1
    return None


def _centering(pd: ProgData, x: np.ndarray, t: float, backend: str,
               diag_stats: dict, newton_tol: float = NEWTON_TOL,
               max_newton: int = MAX_NEWTON) -> tuple[np.ndarray, int, bool]:
    """Newton minimization of the barrier at fixed t from a strictly
    feasible x.  Returns (x, steps, converged)."""
    for it in range(max_newton):
        g, y = kernels.eval_constraints(pd, x, backend)
        grad, H = kernels.newton_system(pd, x, t, g, y, backend)
        dx = _solve_newton(H, -grad, diag_stats)
        if dx is None:
            return x, it, False
        lam2 = float(-grad @ dx)
        if lam2 <= 2.0 * newton_tol:
            return x, it, True
        phi0, ok0 = kernels.barrier_value(pd, x, t, g, backend)
        if not ok0:
            raise _Stall("iterate left the strict interior")
        alpha = 1.0
        accepted = False
        while alpha >= MIN_STEP:
            xn = x + alpha * dx
            gn, _ = kernels.eval_constraints(pd, xn, backend)
            phin, okn = kernels.barrier_value(pd, xn, t, gn, backend)
            if okn and phin <= phi0 - ARMIJO_C * alpha * lam2:
                x = xn
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return x, it + 1, False
    return x, max_newton, False


def _strictly_feasible_boxes(pd: ProgData, x: np.ndarray) -> bool:
    if pd.ilo.size and np.min(x[pd.ilo] - pd.lo[pd.ilo]) <= 0.0:
        return False
    if pd.ihi.size and np.min(pd.hi[pd.ihi] - x[pd.ihi]) <= 0.0:
        return False
    return True


def _strictly_feasible(pd: ProgData, x: np.ndarray, backend: str,
                       slack_floor: float = 0.0) -> bool:
    g, _ = kernels.eval_constraints(pd, x, backend)
    if g.size and g.max() >= -slack_floor:
        return False
    return _strictly_feasible_boxes(pd, x)


def _phase1_start(pd: ProgData) -> np.ndarray:
    """Heuristic point strictly inside the boxes."""
    x = np.zeros(pd.n)
    finite_lo = np.isfinite(pd.lo)
    finite_hi = np.isfinite(pd.hi)
    both = finite_lo & finite_hi
    x[both] = 0.5 * (pd.lo[both] + pd.hi[both])
    only_lo = finite_lo & ~finite_hi
    x[only_lo] = pd.lo[only_lo] + 1.0
    only_hi = finite_hi & ~finite_lo
    x[only_hi] = pd.hi[only_hi] - 1.0
    return x


def _phase1_core(pd: ProgData, backend: str, feas_tol: float,
                 max_iters: int, x_seed: np.ndarray | None = None,
                 mask: np.ndarray | None = None) -> dict:
    """Maximize the minimum slack of the masked constraints (boxes and
    unmasked constraints stay hard).

    Returns a dict with the optimum bracket [v_lo, v_hi], the final point
    and iteration stats.
    """
    x0 = _phase1_start(pd) if x_seed is None else x_seed.copy()
    g0, _ = kernels.eval_constraints(pd, x0, backend)
    if mask is not None:
        hard_ok = (not np.any(~mask)) or float(np.max(g0[~mask])) < 0.0
        if not (hard_ok and _strictly_feasible_boxes(pd, x0)):
            # the seed cannot keep the unmasked part hard; relax everything
            mask = None
    if mask is None:
        masked_g = g0
    else:
        masked_g = g0[mask]
    v0 = float(np.min(-masked_g)) - 1.0
    v_hi = abs(v0) + 1e3
    pe = kernels.extend_phase1(pd, v_hi, mask)
    xv = np.concatenate([x0, [v0]])
    diag: dict = {}
    # start the path where the seed is roughly centered in the v direction:
    # the centered v satisfies sum(1 / relaxed slack) = t, slacks >= 1 here
    t = max(1.0, float(np.sum(1.0 / (-masked_g - v0))))
    total = 0
    v_now = v0
    gap = math.inf
    status = "iteration-limit"
    fails = 0
    for _ in range(max_iters):
        try:
            xv, steps, ok = _centering(pe, xv, t, backend, diag)
        except _Stall:
            break
        total += steps
        v_now = float(xv[-1])
        gap = pe.m_barrier / t
        if v_now > feas_tol:
            status = "optimal"
            break
        if v_now + gap < -feas_tol:
            status = "optimal"
            break
        if gap <= 0.25 * feas_tol * max(1.0, abs(v_now)):
            status = "optimal"
            break
        # an unconverged centering is tolerable: keep following the path
        fails = fails + 1 if not ok else 0
        if fails >= 3 or total >= 2500:
            break
        t *= BARRIER_GROWTH
    return {"v_lo": v_now, "v_hi": v_now + gap, "x": xv[:-1],
            "iterations": total, "status": status, "diag": diag}


def _finalize(prog: ConvexProgram, pd: ProgData, x: np.ndarray, t: float,
              backend: str, status: str, iterations: int,
              diagnostics: dict) -> Solution:
    g, y = kernels.eval_constraints(pd, x, backend)
    grad, _ = kernels.newton_system(pd, x, t, g, y, backend)
    obj = float(x[pd.obj_idx])
    gap = pd.m_barrier / t
    kkt = max(gap / max(1.0, abs(obj)),
              float(np.max(np.abs(grad))) / t)
    viol = float(max(np.max(g, initial=-math.inf), 0.0)) if g.size else 0.0
    x_phys = x * prog.var_scale
    diagnostics = dict(diagnostics)
    diagnostics["barrier_t"] = t
    diagnostics["duality_gap"] = gap
    return Solution(status=status, primal=prog.catalog.unpack(x_phys),
                    objective=obj, max_constraint_violation=viol,
                    kkt_residual=kkt, iterations=iterations,
                    diagnostics=diagnostics)


def solve(prog: ConvexProgram, feas_tol: float = DEFAULT_FEAS_TOL,
          opt_tol: float = DEFAULT_OPT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
          x0: np.ndarray | None = None, t0: float | None = None,
          backend: str | None = None) -> Solution:
    """Maximize the program objective to within ``opt_tol`` (relative).

    ``x0`` (physical units) is used when strictly feasible; otherwise a
    feasibility phase runs first.  The returned point is strictly feasible,
    so every reported slack is nonnegative.
    """
    backend = kernels.resolve_backend(backend)
    pd = kernels.prepare(prog)
    diagnostics: dict = {"backend": backend}
    x = None
    if x0 is not None:
        xs = np.asarray(x0, dtype=float) / prog.var_scale
        if _strictly_feasible(pd, xs, backend):
            x = xs
        else:
            diagnostics["x0_rejected"] = True
    if x is None:
        p1 = _phase1_core(pd, backend, feas_tol, max_iters)
        diagnostics["phase1"] = {k: p1[k] for k in ("v_lo", "v_hi", "iterations")}
        if p1["v_hi"] < -feas_tol:
            return Solution(status="infeasible", primal=prog.catalog.unpack(
                p1["x"] * prog.var_scale), objective=-math.inf,
                max_constraint_violation=-p1["v_lo"],
                kkt_residual=math.inf, iterations=p1["iterations"],
                diagnostics=diagnostics)
        if p1["v_lo"] <= 0.0:
            log.warning("phase 1 ended in the feasibility gray zone "
                        "[%g, %g]; treating as infeasible-at-boundary",
                        p1["v_lo"], p1["v_hi"])
            diagnostics["boundary_feasible"] = True
            return Solution(status="infeasible", primal=prog.catalog.unpack(
                p1["x"] * prog.var_scale), objective=-math.inf,
                max_constraint_violation=max(0.0, -p1["v_lo"]),
                kkt_residual=math.inf, iterations=p1["iterations"],
                diagnostics=diagnostics)
        x = p1["x"]

    t = float(t0) if t0 else 1.0
    total = 0
    obj_path: list[float] = []
    status = "iteration-limit"
    fails = 0
    for _ in range(max_iters):
        try:
            x, steps, ok = _centering(pd, x, t, backend, diagnostics)
        except _Stall:
            diagnostics["stalled"] = True
            break
        total += steps
        obj = float(x[pd.obj_idx])
        obj_path.append(obj)
        if len(obj_path) >= 2 and obj < obj_path[-2] - 1e-6 * max(1.0, abs(obj)):
            log.warning("barrier path objective decreased: %.12g -> %.12g",
                        obj_path[-2], obj)
        if abs(obj) > 1e14:
            status = "unbounded"
            break
        gap = pd.m_barrier / t
        if gap <= opt_tol * max(1.0, abs(obj)):
            status = "optimal"
            break
        # tolerate isolated unconverged centerings; the next path step
        # re-aims the Newton iteration
        fails = fails + 1 if not ok else 0
        if fails >= 3 or total >= 2500:
            diagnostics["centering_incomplete"] = True
            break
        t *= BARRIER_GROWTH
    diagnostics["objective_path"] = obj_path
    return _finalize(prog, pd, x, t, backend, status, total, diagnostics)


def phase1(prog: ConvexProgram, feas_tol: float = DEFAULT_FEAS_TOL,
           max_iters: int = DEFAULT_MAX_ITERS,
           x_seed: np.ndarray | None = None,
           relax_mask: np.ndarray | None = None,
           backend: str | None = None) -> Solution:
    """Maximize the minimum slack over the general constraints.

    objective > 0 certifies a strictly feasible interior point (returned as
    the primal); objective < -feas_tol certifies infeasibility of the
    program.  With ``relax_mask`` only the masked constraints are relaxed
    (the seed must hold the others strictly); the verdict then applies to
    that subset.
    """
    backend = kernels.resolve_backend(backend)
    pd = kernels.prepare(prog)
    seed = None
    if x_seed is not None:
        seed = np.asarray(x_seed, dtype=float) / prog.var_scale
    p1 = _phase1_core(pd, backend, feas_tol, max_iters, x_seed=seed,
                      mask=relax_mask)
    x_phys = p1["x"] * prog.var_scale
    status = "optimal" if p1["status"] == "optimal" else "iteration-limit"
    return Solution(status=status, primal=prog.catalog.unpack(x_phys),
                    objective=p1["v_lo"],
                    max_constraint_violation=max(0.0, -p1["v_lo"]),
                    kkt_residual=p1["v_hi"] - p1["v_lo"],
                    iterations=p1["iterations"],
                    diagnostics={"backend": backend, "v_hi": p1["v_hi"]})
