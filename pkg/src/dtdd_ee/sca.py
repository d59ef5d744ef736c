"""Successive convex approximation engine.

One run starts from a self-consistent strictly feasible iterate (heuristic
full-power start, optionally refined by a feasibility phase), then
alternates between rebuilding the convex subproblem around the current
iterate and solving it, until the EE surrogate q stalls.  With a free
switching point the final continuous solution is rounded to an integer
sample count; the built-in half-sample margins guarantee the rounded point
still satisfies every design constraint, which is re-verified numerically.

Baselines pin the switching point and reuse the same machinery with the
product constraints collapsing to affine form (margins dropped: nothing is
rounded).  An optional polish stage re-optimizes powers and weights at the
rounded integer switching point, and a warm start can seed the free-switch
run from a baseline solution; the best audited operating point wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import perfeval, solver
from .config import SystemConfig
from .convexify import (OPTIMIZE, ConstructionError, InfeasiblePin, ScaState,
                        SwitchMode, build_subproblem, catalog_for,
                        compose_dl_terms, compose_ul_terms,
                        feasibility_catalog_for, fixed_switch)
from .netmodel import LargeScale
from .perfeval import OperatingPoint, PerformanceReport, QosRequirements

log = logging.getLogger(__name__)

INTERIOR_CLIP = 1e-7     # keeps warm-start primals strictly inside their boxes


class ScaInternalError(RuntimeError):
    """A state the monotone safe-approximation argument rules out."""


@dataclass
class ScaOptions:
    sca_tol: float = 1e-5          # relative change of q that stops the loop
    max_sca_iters: int = 50
    solver_feas_tol: float = 1e-8
    solver_opt_tol: float = 1e-7
    solver_max_iters: int = 200
    init_slack: float = 1e-3       # multiplicative slack of the start point
    jitter: float = 0.0            # optional +-fraction on zeta/theta at start
    keep_margins_when_pinned: bool = False
    polish_iters: int = 6          # pinned refinement after rounding (0 = off)
    backend: str | None = None


@dataclass
class InfeasibilityVerdict:
    min_phase1_slack: float
    binding_qos: list[str]
    boundary: bool = False
    detail: str = ""


@dataclass
class InitResult:
    state: ScaState            # expansion point of the first subproblem
    start: np.ndarray          # strictly feasible start vector (physical units)
    used_phase1: bool = False
    phase1_slack: float | None = None


@dataclass
class RoundingReport:
    tau_a: int
    t_star: float
    power_slack: float
    ul_slacks: np.ndarray
    dl_slacks: np.ndarray


@dataclass
class SchemeOutcome:
    scheme: str
    feasible: bool
    tau_a_star: int
    operating_point: OperatingPoint | None
    report: PerformanceReport | None
    objective_trace: list[float]
    iterations: int
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def ee(self) -> float:
        return self.report.ee if (self.feasible and self.report) else 0.0

    @property
    def sum_se(self) -> float:
        return self.report.sum_se if (self.feasible and self.report) else 0.0

    @property
    def total_power(self) -> float:
        return self.report.total_power if (self.feasible and self.report) else 0.0


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _interior_primals(t: float, zeta: np.ndarray, theta: np.ndarray,
                      w: np.ndarray, ls: LargeScale, cfg: SystemConfig,
                      mode: SwitchMode) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Clamp primals strictly inside their boxes and the per-AP caps."""
    eps = INTERIOR_CLIP
    zeta = np.clip(zeta, eps, 1.0 - eps)
    w = np.clip(w, eps, 1.0 - eps)
    N = cfg.antennas_per_ap
    K = ls.beta.shape[0]
    theta_floor = eps / np.sqrt(N * K * ls.gamma)
    theta = np.maximum(theta, theta_floor)
    used = np.einsum("km,km->m", theta ** 2, ls.gamma)
    cap = (1.0 - eps) / N
    over = used > cap
    if np.any(over):
        theta = theta * np.where(over, np.sqrt(cap / used), 1.0)[None, :]
    if mode.optimize:
        h = mode.margin(cfg)
        t = float(np.clip(t, h + eps * cfg.pre_frac,
                          cfg.pre_frac - h - eps * cfg.pre_frac))
    else:
        t = float(mode.t_fixed)
    return t, zeta, theta, w


def _heuristic_primals(ls: LargeScale, cfg: SystemConfig, mode: SwitchMode,
                       options: ScaOptions, rng: np.random.Generator | None):
    """Full-power start: zeta = w = 1, equal-power DL at the per-AP cap."""
    K, M = ls.beta.shape
    eps = options.init_slack
    t = float(mode.t_fixed) if not mode.optimize else 0.5 * cfg.pre_frac
    zeta = np.full(K, 1.0 - eps)
    w = np.full((K, M), 1.0 - eps)
    theta = np.sqrt((1.0 - eps) / (cfg.antennas_per_ap * K * ls.gamma))
    if options.jitter > 0 and rng is not None:
        zeta = zeta * (1.0 + options.jitter * rng.uniform(-1.0, 1.0, size=K))
        theta = theta * (1.0 + options.jitter * rng.uniform(-1.0, 1.0, size=(K, M)))
    return _interior_primals(t, zeta, theta, w, ls, cfg, mode)


def build_state(t: float, zeta: np.ndarray, theta: np.ndarray, w: np.ndarray,
                ls: LargeScale, cfg: SystemConfig, mode: SwitchMode,
                slack: float) -> ScaState:
    """Self-consistent augmented state around given primals.

    Every auxiliary sits at its defining value with multiplicative slack, so
    the state is strictly feasible for the subproblem built around itself
    (except possibly the QoS floors, which the caller checks).
    """
    K, M = ls.beta.shape
    h = mode.margin(cfg)
    mu = np.sqrt(zeta) * (1.0 - slack)
    mu_tilde = np.sqrt(zeta) * (1.0 + slack)
    a = mu[:, None] * w * (1.0 - slack)
    b = mu_tilde[None, None, :] * w[:, :, None] * (1.0 + slack) + 1e-12
    ul_forms = compose_ul_terms(ls, cfg)
    dl_forms = compose_dl_terms(ls, cfg)
    A0 = ul_forms.numerator(a)
    B0 = ul_forms.denominator(b, w)
    C0 = dl_forms.numerator(theta)
    D0 = dl_forms.denominator(theta)
    r_ul = np.log2(1.0 + A0 ** 2 / B0) * (1.0 - slack)
    r_dl = np.log2(1.0 + C0 ** 2 / D0) * (1.0 - slack)
    z_ul = max(cfg.pre_frac - t - h, 0.0) * r_ul * (1.0 - slack)
    z_dl = max(t - h, 0.0) * r_dl * (1.0 - slack)
    phi = cfg.c_ul * float(zeta.sum()) * (1.0 + slack)
    psi = (cfg.antennas_per_ap * cfg.c_dl
           * float(np.einsum("km,km->", theta ** 2, ls.gamma))) * (1.0 + slack)
    u = ((cfg.pre_frac - t + h) * (cfg.xi_ul + phi)
         + (t + h) * (cfg.xi_dl + psi)) * (1.0 + slack)
    q = (float(z_ul.sum() + z_dl.sum()) / u) * (1.0 - slack)
    return ScaState(t_a=t, zeta=zeta, theta=theta, w=w, q=q, u=u, z_ul=z_ul,
                    z_dl=z_dl, r_ul=r_ul, r_dl=r_dl, mu=mu,
                    mu_tilde=mu_tilde, phi=phi, psi=psi, a=a, b=b)


def _qos_headroom(state: ScaState, qos: QosRequirements) -> np.ndarray:
    """Slack of the SE floors at the start state (negative means violated)."""
    return np.concatenate([state.z_ul - qos.se_ul_min,
                           state.z_dl - qos.se_dl_min])


RESTORE_ROUNDS = 10         # reapproximations of the SINR-target restriction
RESTORE_IMPROVE_TOL = 1e-4  # relative-SINR-margin stall threshold


def _ul_maxmin_margin(ls: LargeScale, cfg: SystemConfig,
                      sinr_targets: np.ndarray, rounds: int = 60) -> float:
    """Lower bound of the max-min SINR_k / target_k over powers and weights.

    Alternates the closed-form optimal combining weights with the classic
    balancing power update; every iterate is an achievable design, so the
    best minimum ratio seen is a valid lower bound.
    """
    K, M = ls.beta.shape
    rho, N = cfg.rho_ul, cfg.antennas_per_ap
    pos = sinr_targets > 0
    if not np.any(pos):
        return math.inf
    zeta = np.where(pos, 1.0, 0.0)
    best = 0.0
    for _ in range(rounds):
        d = rho * (zeta @ ls.beta) + 1.0
        w = ls.gamma / (ls.gamma * d[None, :])          # ~ 1/d per AP
        w = w / w.max(axis=1, keepdims=True)
        gain = np.einsum("km,km->k", w, ls.gamma) ** 2
        den = np.einsum("km,km,m->k", w ** 2, ls.gamma, d)
        sinr = N * rho * zeta * gain / den
        ratio = np.where(pos, sinr / np.where(pos, sinr_targets, 1.0), math.inf)
        best = max(best, float(np.min(ratio[pos])))
        scale = np.where(pos & (sinr > 0), sinr_targets / np.maximum(sinr, 1e-300), 0.0)
        zeta = zeta * scale
        m = zeta.max()
        if m <= 0:
            break
        zeta = zeta / m
    return best


def _sinr_targets(floors: np.ndarray, prelog: float) -> np.ndarray | None:
    """SE floors to SINR targets at a given prelog; None when impossible."""
    pos = floors > 0
    if not np.any(pos):
        return np.zeros_like(floors)
    if prelog <= 1e-12:
        return None
    out = np.zeros_like(floors)
    out[pos] = 2.0 ** (floors[pos] / prelog) - 1.0
    return out


def _ul_switch_cap(ls: LargeScale, cfg: SystemConfig, qos: QosRequirements,
                   margin: float) -> int:
    """Largest DL sample count whose (margin-reduced) UL share still admits
    the UL floors; -1 when even an all-UL block does not."""
    if not np.any(qos.se_ul_min > 0):
        return cfg.data_len
    tau_c = cfg.coherence_len

    def ok(tau: int) -> bool:
        tgt = _sinr_targets(qos.se_ul_min, cfg.pre_frac - tau / tau_c - margin)
        return tgt is not None and _ul_maxmin_margin(ls, cfg, tgt) >= 1.0

    lo, hi = 0, cfg.data_len
    if not ok(lo):
        return -1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def _feas_expansion(vals: dict, t: float) -> ScaState:
    """Wrap restoration primals as a state (unused scalars zeroed)."""
    K = np.asarray(vals["zeta"]).shape[0]
    zeros = np.zeros(K)
    return ScaState(t_a=t, zeta=np.asarray(vals["zeta"], dtype=float),
                    theta=np.asarray(vals["theta"], dtype=float),
                    w=np.asarray(vals["w"], dtype=float), q=0.0, u=0.0,
                    z_ul=zeros, z_dl=zeros, r_ul=zeros, r_dl=zeros,
                    mu=np.asarray(vals["mu"], dtype=float),
                    mu_tilde=np.asarray(vals["mu_tilde"], dtype=float),
                    phi=0.0, psi=0.0, a=np.asarray(vals["a"], dtype=float),
                    b=np.asarray(vals["b"], dtype=float))


def _restore_primals(ls: LargeScale, cfg: SystemConfig, qos: QosRequirements,
                     t_pin: float, real_mode: SwitchMode,
                     options: ScaOptions,
                     rng: np.random.Generator | None) -> tuple:
    """Search the SINR-target restriction for a design meeting every floor.

    Returns (state, start_vector, v) on success and (None, None, v) on a
    stall, where v is the best relative SINR margin reached.
    """
    from .convexify import build_feasibility_program, sinr_target_mask

    h = real_mode.margin(cfg)
    if real_mode.optimize:
        prelog_ul = cfg.pre_frac - t_pin - h
        prelog_dl = t_pin - h
    else:
        prelog_ul = cfg.pre_frac - t_pin
        prelog_dl = t_pin
    tgt_ul = _sinr_targets(qos.se_ul_min, prelog_ul)
    tgt_dl = _sinr_targets(qos.se_dl_min, prelog_dl)
    if tgt_ul is None or tgt_dl is None:
        return None, None, -math.inf

    pin_like = SwitchMode(kind="fixed", t_fixed=t_pin)
    t0, zeta, theta, w = _heuristic_primals(ls, cfg, pin_like, options, rng)
    seed = build_state(t0, zeta, theta, w, ls, cfg, pin_like, options.init_slack)
    cat = feasibility_catalog_for(*ls.beta.shape)
    x = cat.pack({k: getattr(seed, k) for k in
                  ("zeta", "theta", "w", "mu", "mu_tilde", "a", "b")})
    expansion = seed
    v_prev = -math.inf
    v = -math.inf
    for _ in range(RESTORE_ROUNDS):
        prog = build_feasibility_program(expansion, ls, cfg, tgt_ul, tgt_dl)
        p1 = solver.phase1(prog, feas_tol=options.solver_feas_tol,
                           max_iters=options.solver_max_iters, x_seed=x,
                           relax_mask=sinr_target_mask(prog),
                           backend=options.backend)
        v = float(p1.objective)
        vals = p1.primal
        if v > 0.0:
            t_start = t_pin
            state = build_state(
                *_interior_primals(t_start, np.asarray(vals["zeta"]),
                                   np.asarray(vals["theta"]),
                                   np.asarray(vals["w"]), ls, cfg, real_mode),
                ls=ls, cfg=cfg, mode=real_mode, slack=options.init_slack)
            if float(_qos_headroom(state, qos).min()) > 0.0:
                full_cat = catalog_for(ls.beta.shape[0], ls.beta.shape[1],
                                       real_mode.optimize)
                x_full = full_cat.pack(state.to_values(real_mode.optimize))
                return state, x_full, v
        if v <= v_prev + RESTORE_IMPROVE_TOL:
            break
        v_prev = v
        expansion = _feas_expansion(vals, t_pin)
        x = cat.pack(vals)
    return None, None, v


def initialize(ls: LargeScale, cfg: SystemConfig, qos: QosRequirements,
               mode: SwitchMode = OPTIMIZE,
               options: ScaOptions | None = None,
               primals: tuple | None = None,
               rng: np.random.Generator | None = None,
               allow_phase1: bool = True) -> InitResult | InfeasibilityVerdict:
    """Produce a strictly feasible start for the first subproblem.

    The heuristic full-power start (or the supplied primals) is used when it
    already meets the QoS floors.  Otherwise a feasibility restoration runs
    at a pinned switching point: floors become SINR targets and the
    target restriction is reapproximated until every floor holds or the
    common margin stalls.  With a free switching point the pin is chosen at
    the largest DL share the UL floors admit, which is where the DL floors
    have the best chance (both sides are monotone in the switch).
    """
    options = options or ScaOptions()
    K = ls.beta.shape[0]
    if primals is None:
        t, zeta, theta, w = _heuristic_primals(ls, cfg, mode, options, rng)
    else:
        t, zeta, theta, w = _interior_primals(*primals, ls=ls, cfg=cfg, mode=mode)
    state = build_state(t, zeta, theta, w, ls, cfg, mode, options.init_slack)
    cat = catalog_for(K, ls.beta.shape[1], mode.optimize)
    x0 = cat.pack(state.to_values(with_t=mode.optimize))
    headroom = _qos_headroom(state, qos)
    if float(headroom.min()) > 0.0:
        return InitResult(state=state, start=x0)
    if not allow_phase1:
        return InfeasibilityVerdict(
            min_phase1_slack=float(headroom.min()), binding_qos=[],
            detail="start violates QoS floors and phase 1 was disabled")

    h = mode.margin(cfg)
    tau_c = cfg.coherence_len
    if mode.optimize:
        cap = _ul_switch_cap(ls, cfg, qos, h)
        dl_min_tau = 0
        if np.any(qos.se_dl_min > 0):
            dl_min_tau = int(math.floor(h * tau_c)) + 1
        if cap < dl_min_tau:
            return InfeasibilityVerdict(
                min_phase1_slack=-math.inf, binding_qos=[],
                detail="UL floors cap the DL share below what any DL floor "
                       "needs")
        candidates = [c for c in (cap, cap - 1, cap - 2) if c >= dl_min_tau]
    else:
        candidates = [round_half_up(tau_c * float(mode.t_fixed))]

    best_v = -math.inf
    for tau in candidates:
        try:
            st, x_full, v = _restore_primals(ls, cfg, qos, tau / tau_c, mode,
                                             options, rng)
        except (ConstructionError, InfeasiblePin) as exc:
            return InfeasibilityVerdict(min_phase1_slack=-math.inf,
                                        binding_qos=[], detail=str(exc))
        best_v = max(best_v, v)
        if st is not None:
            return InitResult(state=st, start=x_full, used_phase1=True,
                              phase1_slack=v)

    boundary = best_v >= -options.solver_feas_tol
    if boundary:
        log.warning("feasibility restoration ended in the gray zone "
                    "(margin %g); recording as boundary-infeasible", best_v)
    return InfeasibilityVerdict(min_phase1_slack=best_v, binding_qos=[],
                                boundary=boundary,
                                detail="restoration stalled below the floors")


# ---------------------------------------------------------------------------
# Rounding and baselines
# ---------------------------------------------------------------------------

def round_switch(state: ScaState, ls: LargeScale, cfg: SystemConfig
                 ) -> tuple[int, RoundingReport]:
    """Round the continuous switching point and verify the margin guarantee.

    The integer point must satisfy the power budget and both SE surrogate
    floors by direct evaluation; a violation indicates a bug, not bad luck.
    """
    t_star = float(state.t_a)
    tau = round_half_up(cfg.coherence_len * t_star)
    tau = int(np.clip(tau, 0, cfg.data_len))
    if abs(tau / cfg.coherence_len - t_star) > 0.5 / cfg.coherence_len + 1e-12:
        raise ScaInternalError("rounded switching point left the half-sample band")
    op = OperatingPoint(tau_a=tau, zeta=state.zeta, theta=state.theta, w=state.w)
    se_ul, se_dl = perfeval.spectral_efficiencies(ls, op, cfg)
    power_slack = state.u - perfeval.total_power(ls, op, cfg)
    ul_slacks = se_ul - state.z_ul
    dl_slacks = se_dl - state.z_dl
    worst = min(power_slack, float(ul_slacks.min()), float(dl_slacks.min()))
    if worst < -1e-12:
        raise ScaInternalError(
            f"margin verification failed with slack {worst:.3e}; "
            f"t*={t_star!r}, tau={tau}")
    return tau, RoundingReport(tau_a=tau, t_star=t_star,
                               power_slack=float(power_slack),
                               ul_slacks=ul_slacks, dl_slacks=dl_slacks)


def baseline_switch(scheme: str, cfg: SystemConfig,
                    qos: QosRequirements | None = None) -> int:
    """Heuristic integer switching points of the two baselines.

    BL1 splits the data samples equally; BL2 splits them proportionally to
    the summed DL versus total QoS floors.
    """
    if scheme == "BL1":
        return round_half_up(cfg.data_len / 2.0)
    if scheme == "BL2":
        if qos is None:
            raise ValueError("BL2 needs QoS floors")
        dl_sum = float(np.sum(qos.se_dl_min))
        tot = dl_sum + float(np.sum(qos.se_ul_min))
        if tot <= 0.0:
            raise ValueError("BL2 is undefined when all QoS floors are zero")
        tau = round_half_up(cfg.data_len * dl_sum / tot)
        return int(np.clip(tau, 0, cfg.data_len))
    raise ValueError(f"unknown baseline {scheme!r}")


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------

def _sca_loop(state: ScaState, start: np.ndarray, ls: LargeScale,
              cfg: SystemConfig, qos: QosRequirements, mode: SwitchMode,
              options: ScaOptions, max_iters: int,
              trace_writer=None) -> tuple[ScaState, list[float], dict]:
    cat = catalog_for(ls.beta.shape[0], ls.beta.shape[1], mode.optimize)
    trace: list[float] = []
    diag = {"solver_statuses": [], "newton_steps": 0}
    q_prev = None
    t_hint = None
    x0 = start
    bad_streak = 0
    for it in range(1, max_iters + 1):
        prog = build_subproblem(state, ls, cfg, qos, mode)
        sol = solver.solve(prog, feas_tol=options.solver_feas_tol,
                           opt_tol=options.solver_opt_tol,
                           max_iters=options.solver_max_iters,
                           x0=x0, t0=t_hint, backend=options.backend)
        diag["solver_statuses"].append(sol.status)
        diag["newton_steps"] += sol.iterations
        if sol.status == "infeasible":
            raise ScaInternalError(
                "subproblem reported infeasible around a feasible iterate "
                f"(iteration {it}); state={state!r}")
        new_state = ScaState.from_values(
            sol.primal, t_a=None if mode.optimize else mode.t_fixed)
        q_new = float(sol.objective)
        trace.append(q_new)
        if trace_writer is not None:
            slacks = prog.constraint_slacks(cat.pack(sol.primal))
            trace_writer({"iter": it, "q": q_new, "u": float(new_state.u),
                          "t_a": float(new_state.t_a),
                          "slack_min": float(slacks.min()),
                          "slack_max": float(slacks.max()),
                          "solver_status": sol.status,
                          "newton_steps": sol.iterations})
        state = new_state
        x0 = cat.pack(sol.primal)
        t_hint = max(1.0, float(sol.diagnostics.get("barrier_t", 1.0)) / 1e3)
        if sol.status != "optimal":
            bad_streak += 1
            diag["unconverged"] = diag.get("unconverged", 0) + 1
            if bad_streak >= 2:
                break
        else:
            bad_streak = 0
        if q_prev is not None and abs(q_new - q_prev) <= options.sca_tol * max(1.0, abs(q_new)):
            break
        q_prev = q_new
    return state, trace, diag


def _audit(state_or_primals, tau: int, ls: LargeScale, cfg: SystemConfig,
           qos: QosRequirements) -> tuple[OperatingPoint, PerformanceReport]:
    if isinstance(state_or_primals, ScaState):
        op = OperatingPoint(tau_a=tau, zeta=state_or_primals.zeta,
                            theta=state_or_primals.theta, w=state_or_primals.w)
    else:
        op = state_or_primals
    return op, perfeval.evaluate(ls, op, cfg, qos)


def run(ls: LargeScale, cfg: SystemConfig, qos: QosRequirements,
        mode: SwitchMode = OPTIMIZE, options: ScaOptions | None = None,
        scheme: str = "OPT", warm: SchemeOutcome | None = None,
        rng: np.random.Generator | None = None,
        trace_writer=None) -> SchemeOutcome:
    """Full run of one scheme on one channel realization."""
    options = options or ScaOptions()
    diag: dict = {}

    init: InitResult | InfeasibilityVerdict | None = None
    if warm is not None and warm.feasible:
        ws = warm.diagnostics.get("final_state")
        if ws is not None:
            init = initialize(ls, cfg, qos, mode, options,
                              primals=(ws.t_a, ws.zeta, ws.theta, ws.w),
                              allow_phase1=False)
            diag["warm_start"] = isinstance(init, InitResult)
            if isinstance(init, InfeasibilityVerdict):
                init = None
    if init is None or isinstance(init, InfeasibilityVerdict):
        init = initialize(ls, cfg, qos, mode, options, rng=rng)

    if isinstance(init, InfeasibilityVerdict):
        if warm is not None and warm.feasible and warm.operating_point is not None:
            # the baseline point is itself an admissible free-switch design
            op, report = _audit(warm.operating_point, warm.operating_point.tau_a,
                                ls, cfg, qos)
            diag["fallback_to_warm_point"] = True
            return SchemeOutcome(scheme=scheme, feasible=True,
                                 tau_a_star=op.tau_a, operating_point=op,
                                 report=report, objective_trace=[],
                                 iterations=0, diagnostics=diag)
        diag["verdict"] = init
        return SchemeOutcome(scheme=scheme, feasible=False, tau_a_star=-1,
                             operating_point=None, report=None,
                             objective_trace=[], iterations=0,
                             diagnostics=diag)

    diag["init_phase1"] = init.used_phase1
    state, trace, loop_diag = _sca_loop(init.state, init.start, ls, cfg, qos,
                                        mode, options, options.max_sca_iters,
                                        trace_writer)
    diag.update(loop_diag)

    if mode.optimize:
        tau, rounding = round_switch(state, ls, cfg)
        diag["rounding"] = rounding
    else:
        tau = round_half_up(cfg.coherence_len * float(mode.t_fixed))

    candidates: list[tuple[OperatingPoint, PerformanceReport, str]] = []
    op, report = _audit(state, tau, ls, cfg, qos)
    candidates.append((op, report, "sca"))

    if mode.optimize and options.polish_iters > 0:
        pin = fixed_switch(tau, cfg,
                           keep_margins=options.keep_margins_when_pinned)
        p_init = initialize(ls, cfg, qos, pin, options,
                            primals=(tau / cfg.coherence_len, state.zeta,
                                     state.theta, state.w),
                            allow_phase1=False)
        if isinstance(p_init, InitResult):
            p_state, p_trace, p_diag = _sca_loop(
                p_init.state, p_init.start, ls, cfg, qos, pin, options,
                options.polish_iters)
            p_op, p_report = _audit(p_state, tau, ls, cfg, qos)
            if p_report.qos_satisfied:
                candidates.append((p_op, p_report, "polish"))
            diag["polish"] = {"trace": p_trace, **p_diag}

    if warm is not None and warm.feasible and warm.operating_point is not None:
        candidates.append((warm.operating_point, warm.report, "warm-incumbent"))

    op, report, origin = max(candidates, key=lambda c: c[1].ee)
    diag["selected"] = origin
    if not report.qos_satisfied:
        raise ScaInternalError(
            f"final operating point violates QoS floors (scheme {scheme})")
    op.validate(ls, cfg)
    diag["final_state"] = state
    return SchemeOutcome(scheme=scheme, feasible=True, tau_a_star=op.tau_a,
                         operating_point=op, report=report,
                         objective_trace=trace, iterations=len(trace),
                         diagnostics=diag)


def run_scheme(scheme: str, ls: LargeScale, cfg: SystemConfig,
               qos: QosRequirements, options: ScaOptions | None = None,
               warm: SchemeOutcome | None = None,
               rng: np.random.Generator | None = None,
               fixed_tau: int | None = None,
               trace_writer=None) -> SchemeOutcome:
    """Dispatch by scheme name: OPT optimizes the switch, BL1/BL2 pin it."""
    options = options or ScaOptions()
    if scheme == "OPT":
        if fixed_tau is not None:
            mode = fixed_switch(fixed_tau, cfg,
                                keep_margins=options.keep_margins_when_pinned)
        else:
            mode = OPTIMIZE
        return run(ls, cfg, qos, mode, options, scheme=scheme, warm=warm,
                   rng=rng, trace_writer=trace_writer)
    if scheme in ("BL1", "BL2"):
        tau = baseline_switch(scheme, cfg, qos)
        mode = fixed_switch(tau, cfg,
                            keep_margins=options.keep_margins_when_pinned)
        return run(ls, cfg, qos, mode, options, scheme=scheme, rng=rng,
                   trace_writer=trace_writer)
    raise ValueError(f"unknown scheme {scheme!r}")
