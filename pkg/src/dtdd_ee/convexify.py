"""Assembly of one convex subproblem around an expansion point.

Every nonconvex constraint of the relaxed design problem is replaced by a
convex surrogate that is tight at the expansion point: products of variables
go through the bilinear bounds and the two rate constraints go through the
concave log-SINR bound (see :mod:`dtdd_ee.surrogates`).  The switching-point
variable is continuous here; rounding safety is provided by half-sample
margin terms on the time-share and power constraints.

The builder emits flat CSR arrays (see :mod:`dtdd_ee.program`), one tagged
constraint per design inequality, so programs can be diffed textually and
consumed by the interior-point solver without further translation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import SystemConfig
from .netmodel import LargeScale
from .perfeval import QosRequirements
from .program import ConvexProgram, VariableCatalog
from .surrogates import log_sinr_lower_coeffs

log = logging.getLogger(__name__)

DEGENERATE_EPS = 1e-9   # relative floor for expansion denominators
PIN_ZERO_CAP = 1e-9     # cap on z when a pinned prelog factor is exactly zero


class ConstructionError(ValueError):
    """The expansion point cannot parameterize a valid subproblem."""


class InfeasiblePin(ValueError):
    """A pinned switching point leaves no room for a positive QoS floor."""


@dataclass(frozen=True)
class SwitchMode:
    """How the switching point is treated inside the subproblem."""

    kind: str = "optimize"          # "optimize" | "fixed"
    t_fixed: float | None = None    # required for kind == "fixed"
    keep_margins: bool | None = None  # only meaningful for kind == "fixed"

    def __post_init__(self) -> None:
        if self.kind not in ("optimize", "fixed"):
            raise ValueError("kind must be 'optimize' or 'fixed'")
        if self.kind == "fixed" and self.t_fixed is None:
            raise ValueError("fixed mode needs t_fixed")

    @property
    def optimize(self) -> bool:
        return self.kind == "optimize"

    def margin(self, cfg: SystemConfig) -> float:
        """Half-sample rounding margin 1/(2 tau_c), or 0 when dropped."""
        if self.optimize or (self.keep_margins or False):
            return 0.5 / cfg.coherence_len
        return 0.0


OPTIMIZE = SwitchMode(kind="optimize")


def fixed_switch(tau_a: int, cfg: SystemConfig,
                 keep_margins: bool = False) -> SwitchMode:
    return SwitchMode(kind="fixed", t_fixed=tau_a / cfg.coherence_len,
                      keep_margins=keep_margins)


# ---------------------------------------------------------------------------
# Augmented state
# ---------------------------------------------------------------------------

@dataclass
class ScaState:
    """Full augmented iterate of the successive approximation loop."""

    t_a: float              # continuous DL fraction of the coherence block
    zeta: np.ndarray        # (K,)
    theta: np.ndarray       # (K, M)
    w: np.ndarray           # (K, M)
    q: float                # EE surrogate (objective)
    u: float                # power surrogate
    z_ul: np.ndarray        # (K,) SE surrogates
    z_dl: np.ndarray
    r_ul: np.ndarray        # (K,) rate surrogates
    r_dl: np.ndarray
    mu: np.ndarray          # (K,) sqrt-power lower envelopes
    mu_tilde: np.ndarray    # (K,) sqrt-power upper envelopes
    phi: float              # UL amplifier power aggregate
    psi: float              # DL radiated power aggregate
    a: np.ndarray           # (K, M) combining-gain auxiliaries
    b: np.ndarray           # (K, M, K) interference envelopes

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta.shape

    def copy(self) -> "ScaState":
        return ScaState(
            t_a=self.t_a, zeta=self.zeta.copy(), theta=self.theta.copy(),
            w=self.w.copy(), q=self.q, u=self.u, z_ul=self.z_ul.copy(),
            z_dl=self.z_dl.copy(), r_ul=self.r_ul.copy(), r_dl=self.r_dl.copy(),
            mu=self.mu.copy(), mu_tilde=self.mu_tilde.copy(), phi=self.phi,
            psi=self.psi, a=self.a.copy(), b=self.b.copy())

    def to_values(self, with_t: bool) -> dict:
        vals = {
            "zeta": self.zeta, "theta": self.theta, "w": self.w, "q": self.q,
            "u": self.u, "z_ul": self.z_ul, "z_dl": self.z_dl,
            "r_ul": self.r_ul, "r_dl": self.r_dl, "mu": self.mu,
            "mu_tilde": self.mu_tilde, "phi": self.phi, "psi": self.psi,
            "a": self.a, "b": self.b,
        }
        if with_t:
            vals["t_a"] = self.t_a
        return vals

    @classmethod
    def from_values(cls, vals: dict, t_a: float | None = None) -> "ScaState":
        return cls(t_a=float(vals["t_a"]) if t_a is None else float(t_a),
                   zeta=np.asarray(vals["zeta"], dtype=float),
                   theta=np.asarray(vals["theta"], dtype=float),
                   w=np.asarray(vals["w"], dtype=float),
                   q=float(vals["q"]), u=float(vals["u"]),
                   z_ul=np.asarray(vals["z_ul"], dtype=float),
                   z_dl=np.asarray(vals["z_dl"], dtype=float),
                   r_ul=np.asarray(vals["r_ul"], dtype=float),
                   r_dl=np.asarray(vals["r_dl"], dtype=float),
                   mu=np.asarray(vals["mu"], dtype=float),
                   mu_tilde=np.asarray(vals["mu_tilde"], dtype=float),
                   phi=float(vals["phi"]), psi=float(vals["psi"]),
                   a=np.asarray(vals["a"], dtype=float),
                   b=np.asarray(vals["b"], dtype=float))


def make_catalog(K: int, M: int, with_t: bool) -> VariableCatalog:
    specs: list[tuple[str, tuple[int, ...]]] = []
    if with_t:
        specs.append(("t_a", ()))
    specs += [
        ("zeta", (K,)), ("theta", (K, M)), ("w", (K, M)),
        ("q", ()), ("u", ()),
        ("z_ul", (K,)), ("z_dl", (K,)), ("r_ul", (K,)), ("r_dl", (K,)),
        ("mu", (K,)), ("mu_tilde", (K,)), ("phi", ()), ("psi", ()),
        ("a", (K, M)), ("b", (K, M, K)),
    ]
    return VariableCatalog(specs)


_CATALOG_CACHE: dict[tuple[int, int, bool], VariableCatalog] = {}
_LABEL_CACHE: dict[tuple[int, int], list[str]] = {}


def catalog_for(K: int, M: int, with_t: bool) -> VariableCatalog:
    key = (K, M, with_t)
    if key not in _CATALOG_CACHE:
        _CATALOG_CACHE[key] = make_catalog(K, M, with_t)
    return _CATALOG_CACHE[key]


def constraint_labels(K: int, M: int) -> list[str]:
    """Stable tag per emitted constraint, in emission order."""
    key = (K, M)
    if key not in _LABEL_CACHE:
        labels: list[str] = []
        labels += [f"ap_power_cap[{m}]" for m in range(M)]
        labels += [f"ul_se_floor[{k}]" for k in range(K)]
        labels += [f"dl_se_floor[{k}]" for k in range(K)]
        labels += [f"ue_power_sqrt[{k}]" for k in range(K)]
        labels += [f"ue_power_env[{k}]" for k in range(K)]
        labels += ["ul_amp_power", "dl_amp_power"]
        labels += [f"ul_rate_bound[{k}]" for k in range(K)]
        labels += [f"dl_rate_bound[{k}]" for k in range(K)]
        labels += ["ee_product", "power_budget"]
        labels += [f"ul_time_share[{k}]" for k in range(K)]
        labels += [f"dl_time_share[{k}]" for k in range(K)]
        labels += [f"combiner_gain_cap[{k},{m}]"
                   for k in range(K) for m in range(M)]
        labels += [f"interference_env[{k},{m},{j}]"
                   for k in range(K) for m in range(M) for j in range(K)]
        _LABEL_CACHE[key] = labels
    return _LABEL_CACHE[key]


def constraint_count(K: int, M: int) -> int:
    return M + 8 * K + 4 + K * M + K * K * M


# ---------------------------------------------------------------------------
# Rate-term composition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UlRateForms:
    """Affine numerator A_k and convex-quadratic denominator B_k of the UL rate."""

    a_coeff: np.ndarray     # (K, M): A_k = sum_m a_coeff[k,m] * a[k,m]
    b_weight: np.ndarray    # (K, M, K): B_k += b_weight[k,m,j] * b[k,m,j]^2
    w_weight: np.ndarray    # (K, M):    B_k += w_weight[k,m] * w[k,m]^2

    def numerator(self, a: np.ndarray) -> np.ndarray:
        return np.einsum("km,km->k", self.a_coeff, a)

    def denominator(self, b: np.ndarray, w: np.ndarray) -> np.ndarray:
        return (np.einsum("kmj,kmj->k", self.b_weight, b ** 2)
                + np.einsum("km,km->k", self.w_weight, w ** 2))


@dataclass(frozen=True)
class DlRateForms:
    """Affine numerator C_k and convex-quadratic denominator D_k of the DL rate."""

    c_coeff: np.ndarray       # (K, M): C_k = sum_m c_coeff[k,m] * theta[k,m]
    theta_weight: np.ndarray  # (K, K, M): D_k = sum_{j,m} theta_weight[k,j,m] * theta[j,m]^2 + 1

    def numerator(self, theta: np.ndarray) -> np.ndarray:
        return np.einsum("km,km->k", self.c_coeff, theta)

    def denominator(self, theta: np.ndarray) -> np.ndarray:
        return np.einsum("kjm,jm->k", self.theta_weight, theta ** 2) + 1.0


def compose_ul_terms(ls: LargeScale, cfg: SystemConfig) -> UlRateForms:
    """Coefficients such that substituting a = sqrt(zeta) w and
    b[k, m, j] = sqrt(zeta_j) w[k, m] reproduces the closed-form UL SINR."""
    sA = math.sqrt(cfg.antennas_per_ap * cfg.rho_ul)
    b_weight = cfg.rho_ul * ls.gamma[:, :, None] * ls.beta.T[None, :, :]
    return UlRateForms(a_coeff=sA * ls.gamma, b_weight=b_weight,
                       w_weight=ls.gamma.copy())


def compose_dl_terms(ls: LargeScale, cfg: SystemConfig) -> DlRateForms:
    """Coefficients such that C_k^2 / D_k equals the closed-form DL SINR."""
    N = cfg.antennas_per_ap
    sC = N * math.sqrt(cfg.rho_dl)
    theta_weight = N * cfg.rho_dl * np.einsum("jm,km->kjm", ls.gamma, ls.beta)
    return DlRateForms(c_coeff=sC * ls.gamma, theta_weight=theta_weight)


# ---------------------------------------------------------------------------
# Expansion bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expansion:
    """Numerator/denominator values of the rate bounds at the expansion point."""

    A0: np.ndarray
    B0: np.ndarray
    C0: np.ndarray
    D0: np.ndarray


def expansion_point(state: ScaState, ul_forms: UlRateForms,
                    dl_forms: DlRateForms) -> Expansion:
    A0 = ul_forms.numerator(state.a)
    B0 = ul_forms.denominator(state.b, state.w)
    C0 = dl_forms.numerator(state.theta)
    D0 = dl_forms.denominator(state.theta)
    for name, arr in (("A", A0), ("B", B0), ("C", C0), ("D", D0)):
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise ConstructionError(f"nonfinite expansion value {name} for UE {bad}")
        if np.any(arr < 0):
            bad = int(np.flatnonzero(arr < 0)[0])
            raise ConstructionError(f"negative expansion value {name} for UE {bad}")
    # reference magnitudes at full-scale auxiliaries, for relative floors
    refA = np.maximum(ul_forms.a_coeff.sum(axis=1), 1e-300)
    refB = np.maximum(ul_forms.b_weight.sum(axis=(1, 2))
                      + ul_forms.w_weight.sum(axis=1), 1e-300)
    refC = np.maximum(dl_forms.c_coeff.sum(axis=1), 1e-300)
    refD = np.ones_like(refC)
    out = []
    for name, arr, ref in (("A", A0, refA), ("B", B0, refB),
                           ("C", C0, refC), ("D", D0, refD)):
        floor = DEGENERATE_EPS * ref
        if np.any(arr < floor):
            log.warning("perturbing degenerate expansion %s for UEs %s",
                        name, np.flatnonzero(arr < floor).tolist())
            arr = np.maximum(arr, floor)
        out.append(arr)
    return Expansion(A0=out[0], B0=out[1], C0=out[2], D0=out[3])


# ---------------------------------------------------------------------------
# Flat-array assembler
# ---------------------------------------------------------------------------

class _Assembler:
    def __init__(self) -> None:
        self.aff_counts: list[np.ndarray] = []
        self.aff_idx: list[np.ndarray] = []
        self.aff_val: list[np.ndarray] = []
        self.aff_const: list[np.ndarray] = []
        self.n_cons = 0
        self.term_con: list[np.ndarray] = []
        self.term_w: list[np.ndarray] = []
        self.term_counts: list[np.ndarray] = []
        self.term_idx: list[np.ndarray] = []
        self.term_val: list[np.ndarray] = []
        self.term_off: list[np.ndarray] = []

    def rows(self, idx: np.ndarray, val: np.ndarray, const: np.ndarray) -> int:
        """Append constraints with a fixed affine nnz per row.

        ``idx``/``val`` have shape (rows, nnz); returns the base index.
        """
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        val = np.atleast_2d(np.asarray(val, dtype=np.float64))
        const = np.atleast_1d(np.asarray(const, dtype=np.float64))
        rows, nnz = idx.shape
        base = self.n_cons
        self.aff_counts.append(np.full(rows, nnz, dtype=np.int64))
        self.aff_idx.append(idx.reshape(-1))
        self.aff_val.append(val.reshape(-1))
        self.aff_const.append(const)
        self.n_cons += rows
        return base

    def empty_rows(self, rows: int, const: np.ndarray) -> int:
        base = self.n_cons
        self.aff_counts.append(np.zeros(rows, dtype=np.int64))
        self.aff_idx.append(np.empty(0, dtype=np.int64))
        self.aff_val.append(np.empty(0, dtype=np.float64))
        self.aff_const.append(np.atleast_1d(np.asarray(const, dtype=np.float64)))
        self.n_cons += rows
        return base

    def terms(self, con: np.ndarray, w: np.ndarray, idx: np.ndarray,
              val: np.ndarray, off: np.ndarray | float = 0.0) -> None:
        con = np.atleast_1d(np.asarray(con, dtype=np.int64))
        w = np.broadcast_to(np.asarray(w, dtype=np.float64), con.shape)
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        val = np.broadcast_to(np.atleast_2d(np.asarray(val, dtype=np.float64)),
                              idx.shape)
        off = np.broadcast_to(np.asarray(off, dtype=np.float64), con.shape)
        nt, nnz = idx.shape
        self.term_con.append(con)
        self.term_w.append(w.copy())
        self.term_counts.append(np.full(nt, nnz, dtype=np.int64))
        self.term_idx.append(idx.reshape(-1))
        self.term_val.append(val.reshape(-1).copy())
        self.term_off.append(off.copy())

    def finalize(self, catalog: VariableCatalog, objective: str,
                 lo: np.ndarray, hi: np.ndarray, labels: list[str],
                 var_scale: np.ndarray, meta: dict) -> ConvexProgram:
        aff_counts = np.concatenate(self.aff_counts)
        aff_indptr = np.zeros(self.n_cons + 1, dtype=np.int64)
        np.cumsum(aff_counts, out=aff_indptr[1:])
        term_con = (np.concatenate(self.term_con) if self.term_con
                    else np.empty(0, dtype=np.int64))
        order = np.argsort(term_con, kind="stable")
        term_counts = (np.concatenate(self.term_counts) if self.term_counts
                       else np.empty(0, dtype=np.int64))
        # reorder ragged term rows by constraint id
        flat_idx = (np.concatenate(self.term_idx) if self.term_idx
                    else np.empty(0, dtype=np.int64))
        flat_val = (np.concatenate(self.term_val) if self.term_val
                    else np.empty(0, dtype=np.float64))
        starts = np.zeros(term_counts.size + 1, dtype=np.int64)
        np.cumsum(term_counts, out=starts[1:])
        gather = [flat_idx[starts[t]:starts[t + 1]] for t in order]
        gather_v = [flat_val[starts[t]:starts[t + 1]] for t in order]
        term_idx = (np.concatenate(gather) if gather
                    else np.empty(0, dtype=np.int64))
        term_val = (np.concatenate(gather_v) if gather_v
                    else np.empty(0, dtype=np.float64))
        term_counts = term_counts[order]
        term_indptr = np.zeros(term_counts.size + 1, dtype=np.int64)
        np.cumsum(term_counts, out=term_indptr[1:])
        term_w = (np.concatenate(self.term_w)[order] if self.term_w
                  else np.empty(0, dtype=np.float64))
        term_off = (np.concatenate(self.term_off)[order] if self.term_off
                    else np.empty(0, dtype=np.float64))
        return ConvexProgram(
            catalog=catalog, objective=objective, lo=lo, hi=hi, labels=labels,
            aff_indptr=aff_indptr, aff_idx=np.concatenate(self.aff_idx),
            aff_val=np.concatenate(self.aff_val),
            aff_const=np.concatenate(self.aff_const),
            term_con=term_con[order], term_w=term_w, term_indptr=term_indptr,
            term_idx=term_idx, term_val=term_val, term_off=term_off,
            var_scale=var_scale, meta=meta)


# ---------------------------------------------------------------------------
# Subproblem builder
# ---------------------------------------------------------------------------

def build_subproblem(x_prev: ScaState, ls: LargeScale, cfg: SystemConfig,
                     qos: QosRequirements,
                     mode: SwitchMode = OPTIMIZE) -> ConvexProgram:
    """Convex subproblem around ``x_prev``, maximizing the EE surrogate q."""
    K, M = ls.beta.shape
    N = cfg.antennas_per_ap
    with_t = mode.optimize
    cat = catalog_for(K, M, with_t)
    h = mode.margin(cfg)
    pre = cfg.pre_frac
    t0 = float(x_prev.t_a) if with_t else float(mode.t_fixed)

    ul_forms = compose_ul_terms(ls, cfg)
    dl_forms = compose_dl_terms(ls, cfg)
    exp = expansion_point(x_prev, ul_forms, dl_forms)
    c0_ul, cA, cQ = log_sinr_lower_coeffs(exp.A0, exp.B0)
    c0_dl, cC, cQd = log_sinr_lower_coeffs(exp.C0, exp.D0)

    A = _Assembler()

    def off(name: str) -> int:
        return cat.offset(name)

    i_zeta = off("zeta") + np.arange(K)
    i_theta = off("theta") + np.arange(K * M).reshape(K, M)
    i_w = off("w") + np.arange(K * M).reshape(K, M)
    i_q, i_u = off("q"), off("u")
    i_zul = off("z_ul") + np.arange(K)
    i_zdl = off("z_dl") + np.arange(K)
    i_rul = off("r_ul") + np.arange(K)
    i_rdl = off("r_dl") + np.arange(K)
    i_mu = off("mu") + np.arange(K)
    i_mut = off("mu_tilde") + np.arange(K)
    i_phi, i_psi = off("phi"), off("psi")
    i_a = off("a") + np.arange(K * M).reshape(K, M)
    i_b = off("b") + np.arange(K * M * K).reshape(K, M, K)
    i_t = off("t_a") if with_t else -1

    # 1. per-AP DL power caps: sum_k gamma[k,m] theta[k,m]^2 <= 1/N
    base = A.empty_rows(M, np.full(M, -1.0 / N))
    A.terms(con=np.repeat(np.arange(M) + base, K), w=ls.gamma.T.reshape(-1),
            idx=i_theta.T.reshape(-1, 1), val=np.ones((M * K, 1)))

    # 2./3. QoS floors on the SE surrogates: floor - z <= 0
    A.rows(i_zul.reshape(-1, 1), -np.ones((K, 1)), qos.se_ul_min)
    A.rows(i_zdl.reshape(-1, 1), -np.ones((K, 1)), qos.se_dl_min)

    # 4. mu_k^2 <= zeta_k
    base = A.rows(i_zeta.reshape(-1, 1), -np.ones((K, 1)), np.zeros(K))
    A.terms(con=np.arange(K) + base, w=np.ones(K), idx=i_mu.reshape(-1, 1),
            val=np.ones((K, 1)))

    # 5. zeta_k <= mu_tilde_k^2, linearized at mu_tilde0
    mt0 = x_prev.mu_tilde
    A.rows(np.stack([i_zeta, i_mut], axis=1),
           np.stack([np.ones(K), -2.0 * mt0], axis=1), mt0 ** 2)

    # 6. phi >= sum_k c_ul zeta_k
    A.rows(np.concatenate([i_zeta, [i_phi]]).reshape(1, -1),
           np.concatenate([np.full(K, cfg.c_ul), [-1.0]]).reshape(1, -1),
           np.zeros(1))

    # 7. psi >= N c_dl sum_{k,m} gamma theta^2
    base = A.rows(np.array([[i_psi]]), np.array([[-1.0]]), np.zeros(1))
    A.terms(con=np.full(K * M, base), w=(N * cfg.c_dl * ls.gamma).reshape(-1),
            idx=i_theta.reshape(-1, 1), val=np.ones((K * M, 1)))

    # 8. UL rate bounds: r_ul_k <= concave log surrogate of log2(1 + A^2/B)
    aff_idx = np.concatenate([i_rul.reshape(-1, 1), i_a], axis=1)
    aff_val = np.concatenate([np.ones((K, 1)),
                              -(cA * ul_forms.a_coeff.T).T], axis=1)
    base = A.rows(aff_idx, aff_val, -c0_ul)
    A.terms(con=np.arange(K) + base, w=cQ, idx=i_a, val=ul_forms.a_coeff)
    A.terms(con=np.repeat(np.arange(K) + base, M * K),
            w=(cQ[:, None, None] * ul_forms.b_weight).reshape(-1),
            idx=i_b.reshape(-1, 1), val=np.ones((K * M * K, 1)))
    A.terms(con=np.repeat(np.arange(K) + base, M),
            w=(cQ[:, None] * ul_forms.w_weight).reshape(-1),
            idx=i_w.reshape(-1, 1), val=np.ones((K * M, 1)))

    # 9. DL rate bounds: r_dl_k <= concave log surrogate of log2(1 + C^2/D)
    aff_idx = np.concatenate([i_rdl.reshape(-1, 1), i_theta], axis=1)
    aff_val = np.concatenate([np.ones((K, 1)),
                              -(cC * dl_forms.c_coeff.T).T], axis=1)
    base = A.rows(aff_idx, aff_val, -c0_dl + cQd)  # cQd * 1 from the noise term
    A.terms(con=np.arange(K) + base, w=cQd, idx=i_theta, val=dl_forms.c_coeff)
    A.terms(con=np.repeat(np.arange(K) + base, K * M),
            w=(cQd[:, None, None] * dl_forms.theta_weight).reshape(-1),
            idx=np.tile(i_theta.reshape(-1), K).reshape(-1, 1),
            val=np.ones((K * K * M, 1)))

    # 10. EE product: convex overestimate of u*q below the sum of SEs
    du = x_prev.u - x_prev.q
    aff_idx = np.concatenate([[i_u, i_q], i_zul, i_zdl]).reshape(1, -1)
    aff_val = np.concatenate([[-0.5 * du, 0.5 * du],
                              -np.ones(2 * K)]).reshape(1, -1)
    base = A.rows(aff_idx, aff_val, np.array([0.25 * du ** 2]))
    A.terms(con=np.array([base]), w=np.array([0.25]),
            idx=np.array([[i_u, i_q]]), val=np.array([[1.0, 1.0]]))

    # 11. power budget
    if with_t:
        sp0 = t0 + x_prev.phi
        dp0 = t0 - x_prev.psi
        aff_idx = np.array([[i_u, i_phi, i_psi, i_t]])
        aff_val = np.array([[-1.0,
                             (pre + h) - 0.5 * sp0,
                             h + 0.5 * dp0,
                             cfg.xi_dl - cfg.xi_ul - 0.5 * sp0 - 0.5 * dp0]])
        const = np.array([(pre + h) * cfg.xi_ul + h * cfg.xi_dl
                          + 0.25 * sp0 ** 2 + 0.25 * dp0 ** 2])
        base = A.rows(aff_idx, aff_val, const)
        A.terms(con=np.array([base, base]), w=np.array([0.25, 0.25]),
                idx=np.array([[i_t, i_phi], [i_t, i_psi]]),
                val=np.array([[1.0, -1.0], [1.0, 1.0]]))
    else:
        ul_share, dl_share = pre - t0 + h, t0 + h
        aff_idx = np.array([[i_u, i_phi, i_psi]])
        aff_val = np.array([[-1.0, ul_share, dl_share]])
        A.rows(aff_idx, aff_val,
               np.array([ul_share * cfg.xi_ul + dl_share * cfg.xi_dl]))

    # 12./13. time shares: z bounded by (prelog with margin) * rate
    if with_t:
        d0 = t0 - x_prev.r_ul
        aff_idx = np.stack([i_zul, i_rul, np.full(K, i_t)], axis=1)
        aff_val = np.stack([np.ones(K), -(pre - h) + 0.5 * d0, -0.5 * d0], axis=1)
        base = A.rows(aff_idx, aff_val, 0.25 * d0 ** 2)
        A.terms(con=np.arange(K) + base, w=np.full(K, 0.25),
                idx=np.stack([np.full(K, i_t), i_rul], axis=1),
                val=np.array([[1.0, 1.0]]))
        s0 = t0 + x_prev.r_dl
        aff_idx = np.stack([i_zdl, i_rdl, np.full(K, i_t)], axis=1)
        aff_val = np.stack([np.ones(K), h - 0.5 * s0, -0.5 * s0], axis=1)
        base = A.rows(aff_idx, aff_val, 0.25 * s0 ** 2)
        A.terms(con=np.arange(K) + base, w=np.full(K, 0.25),
                idx=np.stack([np.full(K, i_t), i_rdl], axis=1),
                val=np.array([[1.0, -1.0]]))
    else:
        for prelog, floors, zi, ri, side in (
                (pre - t0 - h, qos.se_ul_min, i_zul, i_rul, "UL"),
                (t0 - h, qos.se_dl_min, i_zdl, i_rdl, "DL")):
            if prelog <= 0.0:
                if np.any(floors > 0):
                    raise InfeasiblePin(
                        f"pinned switching point leaves no {side} data time "
                        f"but a positive {side} QoS floor is present")
                # keep an interior: z <= tiny instead of z <= 0 * r
                A.rows(zi.reshape(-1, 1), np.ones((K, 1)),
                       np.full(K, -PIN_ZERO_CAP))
            else:
                A.rows(np.stack([zi, ri], axis=1),
                       np.stack([np.ones(K), np.full(K, -prelog)], axis=1),
                       np.zeros(K))

    # 14. combining-gain caps: a <= mu * w via the concave underestimator
    s0 = (x_prev.mu[:, None] + x_prev.w).reshape(-1)
    aff_idx = np.stack([i_a.reshape(-1),
                        np.repeat(i_mu, M), i_w.reshape(-1)], axis=1)
    aff_val = np.stack([np.ones(K * M), -0.5 * s0, -0.5 * s0], axis=1)
    base = A.rows(aff_idx, aff_val, 0.25 * s0 ** 2)
    A.terms(con=np.arange(K * M) + base, w=np.full(K * M, 0.25),
            idx=np.stack([np.repeat(i_mu, M), i_w.reshape(-1)], axis=1),
            val=np.array([[1.0, -1.0]]))

    # 15. interference envelopes: b >= mu_tilde_j * w_km via the overestimator
    d0 = (x_prev.mu_tilde[None, None, :] - x_prev.w[:, :, None]).reshape(-1)
    mut_idx = np.broadcast_to(i_mut[None, None, :], (K, M, K)).reshape(-1)
    w_idx = np.broadcast_to(i_w[:, :, None], (K, M, K)).reshape(-1)
    aff_idx = np.stack([mut_idx, w_idx, i_b.reshape(-1)], axis=1)
    aff_val = np.stack([-0.5 * d0, 0.5 * d0, -np.ones(K * M * K)], axis=1)
    base = A.rows(aff_idx, aff_val, 0.25 * d0 ** 2)
    A.terms(con=np.arange(K * M * K) + base, w=np.full(K * M * K, 0.25),
            idx=np.stack([mut_idx, w_idx], axis=1), val=np.array([[1.0, 1.0]]))

    # box bounds; q and u are nonnegative by meaning (EE and power), which
    # also removes the only recession ray of the feasibility-phase barrier
    lo = np.full(cat.n, -np.inf)
    hi = np.full(cat.n, np.inf)
    if with_t:
        lo[i_t], hi[i_t] = 0.0, pre
    lo[i_zeta], hi[i_zeta] = 0.0, 1.0
    lo[i_theta.reshape(-1)] = 0.0
    lo[i_w.reshape(-1)], hi[i_w.reshape(-1)] = 0.0, 1.0
    lo[i_q], lo[i_u] = 0.0, 0.0
    lo[i_rul], lo[i_rdl] = 0.0, 0.0
    lo[i_mu], lo[i_mut] = 0.0, 0.0
    lo[i_a.reshape(-1)] = 0.0

    var_scale = np.ones(cat.n)
    var_scale[i_theta.reshape(-1)] = 1.0 / np.sqrt(N * ls.gamma).reshape(-1)

    meta = {"mode": mode, "t0": t0, "margin": h, "K": K, "M": M}
    return A.finalize(cat, "q", lo, hi, constraint_labels(K, M),
                      var_scale, meta)


# ---------------------------------------------------------------------------
# Feasibility-restoration program (pinned switching point)
# ---------------------------------------------------------------------------

def feasibility_catalog(K: int, M: int) -> VariableCatalog:
    return VariableCatalog([
        ("zeta", (K,)), ("theta", (K, M)), ("w", (K, M)),
        ("mu", (K,)), ("mu_tilde", (K,)), ("a", (K, M)), ("b", (K, M, K)),
    ])


_FEAS_CATALOG: dict[tuple[int, int], VariableCatalog] = {}


def feasibility_catalog_for(K: int, M: int) -> VariableCatalog:
    if (K, M) not in _FEAS_CATALOG:
        _FEAS_CATALOG[(K, M)] = feasibility_catalog(K, M)
    return _FEAS_CATALOG[(K, M)]


def build_feasibility_program(primals: ScaState, ls: LargeScale,
                              cfg: SystemConfig, sinr_ul_min: np.ndarray,
                              sinr_dl_min: np.ndarray) -> ConvexProgram:
    """Convex restriction of "every UE meets its SINR target".

    The rate floors at a pinned switching point reduce to SINR targets; each
    target A^2 >= T * B is restricted by linearizing the concave side at the
    expansion point (2*A0*A - A0^2 >= T * B), which moves much faster under
    reapproximation than the log-rate surrogate and is therefore used to
    find feasible starts.  Rows are normalized so a common additive slack is
    a relative SINR margin.  The objective variable is unused (fixed box).
    """
    K, M = ls.beta.shape
    N = cfg.antennas_per_ap
    cat = feasibility_catalog_for(K, M)
    ul_forms = compose_ul_terms(ls, cfg)
    dl_forms = compose_dl_terms(ls, cfg)
    exp = expansion_point(primals, ul_forms, dl_forms)

    A = _Assembler()
    labels: list[str] = []

    def off(name: str) -> int:
        return cat.offset(name)

    i_zeta = off("zeta") + np.arange(K)
    i_theta = off("theta") + np.arange(K * M).reshape(K, M)
    i_w = off("w") + np.arange(K * M).reshape(K, M)
    i_mu = off("mu") + np.arange(K)
    i_mut = off("mu_tilde") + np.arange(K)
    i_a = off("a") + np.arange(K * M).reshape(K, M)
    i_b = off("b") + np.arange(K * M * K).reshape(K, M, K)

    base = A.empty_rows(M, np.full(M, -1.0 / N))
    A.terms(con=np.repeat(np.arange(M) + base, K), w=ls.gamma.T.reshape(-1),
            idx=i_theta.T.reshape(-1, 1), val=np.ones((M * K, 1)))
    labels += [f"ap_power_cap[{m}]" for m in range(M)]

    base = A.rows(i_zeta.reshape(-1, 1), -np.ones((K, 1)), np.zeros(K))
    A.terms(con=np.arange(K) + base, w=np.ones(K), idx=i_mu.reshape(-1, 1),
            val=np.ones((K, 1)))
    labels += [f"ue_power_sqrt[{k}]" for k in range(K)]

    mt0 = primals.mu_tilde
    A.rows(np.stack([i_zeta, i_mut], axis=1),
           np.stack([np.ones(K), -2.0 * mt0], axis=1), mt0 ** 2)
    labels += [f"ue_power_env[{k}]" for k in range(K)]

    # UL targets: (B - (2 A0 A - A0^2) / T) / B0 <= 0, for positive targets
    ul_rows = np.flatnonzero(sinr_ul_min > 0)
    for k in ul_rows:
        T = float(sinr_ul_min[k])
        scale = 1.0 / exp.B0[k]
        aff_idx = i_a[k].reshape(1, -1)
        aff_val = (-2.0 * exp.A0[k] / T * ul_forms.a_coeff[k] * scale).reshape(1, -1)
        base = A.rows(aff_idx, aff_val,
                      np.array([exp.A0[k] ** 2 / T * scale]))
        A.terms(con=np.full(K * M, base),
                w=ul_forms.b_weight[k].reshape(-1) * scale,
                idx=i_b[k].reshape(-1, 1), val=np.ones((K * M, 1)))
        A.terms(con=np.full(M, base), w=ul_forms.w_weight[k] * scale,
                idx=i_w[k].reshape(-1, 1), val=np.ones((M, 1)))
        labels.append(f"ul_sinr_target[{k}]")

    # DL targets: (D - (2 C0 C - C0^2) / T) / D0 <= 0
    dl_rows = np.flatnonzero(sinr_dl_min > 0)
    for k in dl_rows:
        T = float(sinr_dl_min[k])
        scale = 1.0 / exp.D0[k]
        aff_idx = i_theta[k].reshape(1, -1)
        aff_val = (-2.0 * exp.C0[k] / T * dl_forms.c_coeff[k] * scale).reshape(1, -1)
        base = A.rows(aff_idx, aff_val,
                      np.array([(exp.C0[k] ** 2 / T + 1.0) * scale]))
        A.terms(con=np.full(K * M, base),
                w=dl_forms.theta_weight[k].reshape(-1) * scale,
                idx=np.tile(i_theta.reshape(-1), 1).reshape(-1, 1),
                val=np.ones((K * M, 1)))
        labels.append(f"dl_sinr_target[{k}]")

    s0 = (primals.mu[:, None] + primals.w).reshape(-1)
    aff_idx = np.stack([i_a.reshape(-1), np.repeat(i_mu, M),
                        i_w.reshape(-1)], axis=1)
    aff_val = np.stack([np.ones(K * M), -0.5 * s0, -0.5 * s0], axis=1)
    base = A.rows(aff_idx, aff_val, 0.25 * s0 ** 2)
    A.terms(con=np.arange(K * M) + base, w=np.full(K * M, 0.25),
            idx=np.stack([np.repeat(i_mu, M), i_w.reshape(-1)], axis=1),
            val=np.array([[1.0, -1.0]]))
    labels += [f"combiner_gain_cap[{k},{m}]" for k in range(K) for m in range(M)]

    d0 = (primals.mu_tilde[None, None, :] - primals.w[:, :, None]).reshape(-1)
    mut_idx = np.broadcast_to(i_mut[None, None, :], (K, M, K)).reshape(-1)
    w_idx = np.broadcast_to(i_w[:, :, None], (K, M, K)).reshape(-1)
    aff_idx = np.stack([mut_idx, w_idx, i_b.reshape(-1)], axis=1)
    aff_val = np.stack([-0.5 * d0, 0.5 * d0, -np.ones(K * M * K)], axis=1)
    base = A.rows(aff_idx, aff_val, 0.25 * d0 ** 2)
    A.terms(con=np.arange(K * M * K) + base, w=np.full(K * M * K, 0.25),
            idx=np.stack([mut_idx, w_idx], axis=1), val=np.array([[1.0, 1.0]]))
    labels += [f"interference_env[{k},{m},{j}]"
               for k in range(K) for m in range(M) for j in range(K)]

    # boxes: the sqrt-power envelopes never need to exceed 1 (zeta <= 1), so
    # finite caps keep the barrier bounded even for UEs without targets
    lo = np.full(cat.n, -np.inf)
    hi = np.full(cat.n, np.inf)
    lo[i_zeta], hi[i_zeta] = 0.0, 1.0
    lo[i_theta.reshape(-1)] = 0.0
    lo[i_w.reshape(-1)], hi[i_w.reshape(-1)] = 0.0, 1.0
    lo[i_mu], hi[i_mu] = 0.0, 2.0
    lo[i_mut], hi[i_mut] = 0.0, 2.0
    lo[i_a.reshape(-1)], hi[i_a.reshape(-1)] = 0.0, 4.0
    lo[i_b.reshape(-1)], hi[i_b.reshape(-1)] = -1.0, 8.0
    var_scale = np.ones(cat.n)
    var_scale[i_theta.reshape(-1)] = 1.0 / np.sqrt(N * ls.gamma).reshape(-1)
    meta = {"kind": "feasibility", "K": K, "M": M}
    return A.finalize(cat, "zeta", lo, hi, labels, var_scale, meta)


def sinr_target_mask(prog: ConvexProgram) -> np.ndarray:
    return np.fromiter((lab.startswith(("ul_sinr_target", "dl_sinr_target"))
                        for lab in prog.labels), dtype=bool,
                       count=len(prog.labels))


# ---------------------------------------------------------------------------
# Direct evaluation of the (margin-bearing) nonconvex constraints
# ---------------------------------------------------------------------------

def original_constraint_values(state: ScaState, ls: LargeScale,
                               cfg: SystemConfig, qos: QosRequirements,
                               mode: SwitchMode = OPTIMIZE) -> dict[str, np.ndarray]:
    """g(x) <= 0 values of the relaxed nonconvex problem at ``state``.

    These are the constraints the surrogates approximate; any subproblem
    solution must satisfy them (safe approximation).
    """
    K, M = ls.beta.shape
    N = cfg.antennas_per_ap
    pre = cfg.pre_frac
    h = mode.margin(cfg)
    t = state.t_a if mode.optimize else float(mode.t_fixed)
    ul_forms = compose_ul_terms(ls, cfg)
    dl_forms = compose_dl_terms(ls, cfg)
    A0 = ul_forms.numerator(state.a)
    B0 = ul_forms.denominator(state.b, state.w)
    C0 = dl_forms.numerator(state.theta)
    D0 = dl_forms.denominator(state.theta)
    rate_ul = np.log2(1.0 + np.where(B0 > 0, A0 ** 2 / np.maximum(B0, 1e-300), 0.0))
    rate_dl = np.log2(1.0 + C0 ** 2 / D0)
    out: dict[str, np.ndarray] = {}
    out["ap_power_cap"] = np.einsum("km,km->m", state.theta ** 2, ls.gamma) - 1.0 / N
    out["ul_se_floor"] = qos.se_ul_min - state.z_ul
    out["dl_se_floor"] = qos.se_dl_min - state.z_dl
    out["ue_power_sqrt"] = state.mu ** 2 - state.zeta
    out["ue_power_env"] = state.zeta - state.mu_tilde ** 2
    out["ul_amp_power"] = np.array([cfg.c_ul * state.zeta.sum() - state.phi])
    out["dl_amp_power"] = np.array([
        N * cfg.c_dl * float(np.einsum("km,km->", state.theta ** 2, ls.gamma))
        - state.psi])
    out["ul_rate_bound"] = state.r_ul - rate_ul
    out["dl_rate_bound"] = state.r_dl - rate_dl
    out["ee_product"] = np.array([state.u * state.q
                                  - state.z_ul.sum() - state.z_dl.sum()])
    out["power_budget"] = np.array([
        (pre - t + h) * (cfg.xi_ul + state.phi)
        + (t + h) * (cfg.xi_dl + state.psi) - state.u])
    out["ul_time_share"] = state.z_ul - (pre - t - h) * state.r_ul
    out["dl_time_share"] = state.z_dl - (t - h) * state.r_dl
    out["combiner_gain_cap"] = (state.a - state.mu[:, None] * state.w).reshape(-1)
    out["interference_env"] = (state.mu_tilde[None, None, :] * state.w[:, :, None]
                               - state.b).reshape(-1)
    return out
