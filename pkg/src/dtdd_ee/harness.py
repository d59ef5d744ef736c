"""Monte-Carlo campaign driver, aggregation and file formats.

Each realization draws a fresh network (geometry, shadowing, QoS floors)
from per-realization seed branches, runs every requested scheme, and is
fully reproducible from the master seed alone, independent of how many
worker processes execute it.  Infeasible scheme runs enter the headline EE
statistics as zeros; feasible-only companion statistics are reported next
to them.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from .config import SystemConfig
from .netmodel import LargeScale, draw_large_scale
from .perfeval import QosRequirements
from .sca import ScaOptions, SchemeOutcome, run_scheme

log = logging.getLogger(__name__)

FLOAT_FMT = "%.12g"
ALL_SCHEMES = ("OPT", "BL1", "BL2")


@dataclass(frozen=True)
class CaseSpec:
    """Uniform per-UE QoS floor distribution (bits/s/Hz)."""

    name: str
    ul_range: tuple[float, float]
    dl_range: tuple[float, float]

    def __post_init__(self) -> None:
        for lo, hi in (self.ul_range, self.dl_range):
            if not 0 <= lo <= hi:
                raise ValueError("ranges must satisfy 0 <= low <= high")


CASES = {
    "case1": CaseSpec("case1", (0.3, 0.9), (1.2, 1.8)),
    "case2": CaseSpec("case2", (0.5, 1.5), (0.5, 1.5)),
    "case3": CaseSpec("case3", (1.2, 1.8), (0.3, 0.9)),
}


def sample_qos(case: CaseSpec, num_ues: int, seed) -> QosRequirements:
    """Independent uniform per-UE floors, deterministic per seed."""
    rng = np.random.default_rng(seed)
    se_ul = rng.uniform(case.ul_range[0], case.ul_range[1], size=num_ues)
    se_dl = rng.uniform(case.dl_range[0], case.dl_range[1], size=num_ues)
    return QosRequirements(se_ul_min=se_ul, se_dl_min=se_dl)


@dataclass
class CampaignConfig:
    system: SystemConfig
    case: CaseSpec
    schemes: tuple[str, ...] = ALL_SCHEMES
    n_realizations: int = 200
    master_seed: int = 0
    output_dir: str | None = None
    workers: int = 1
    warm_start_from_baseline: bool = False
    fixed_switch: int | None = None     # debug: pin OPT's switching point
    write_traces: bool = False
    sca: ScaOptions = field(default_factory=ScaOptions)

    def __post_init__(self) -> None:
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if not self.schemes:
            raise ValueError("schemes must be nonempty")
        for s in self.schemes:
            if s not in ALL_SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")


@dataclass
class RowRecord:
    """One realization x scheme line of realizations.csv."""

    realization: int
    seed: int
    scheme: str
    feasible: bool
    tau_a_star: int
    ee: float
    sum_se_bits_per_s_per_hz: float
    total_power_w: float
    iterations: int
    se_ul_min: list[float]
    se_dl_min: list[float]
    se_ul: list[float]
    se_dl: list[float]


def _realization_branches(master_seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master_seed).spawn(n)


def realization_inputs(cfg: CampaignConfig, idx: int
                       ) -> tuple[LargeScale, QosRequirements, int, np.random.SeedSequence]:
    """Deterministic per-realization draws from disjoint seed branches."""
    branch = _realization_branches(cfg.master_seed, cfg.n_realizations)[idx]
    geom_ss, shadow_ss, qos_ss, jitter_ss = branch.spawn(4)
    ls = draw_large_scale(cfg.system, geom_ss, shadow_ss)
    qos = sample_qos(cfg.case, cfg.system.num_ues, qos_ss)
    seed_id = int(branch.generate_state(1, np.uint32)[0])
    return ls, qos, seed_id, jitter_ss


def _trace_writer(cfg: CampaignConfig, idx: int, scheme: str):
    if not (cfg.write_traces and cfg.output_dir):
        return None
    path = Path(cfg.output_dir) / "traces" / f"r{idx:04d}_{scheme}.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w")

    def write(record: dict) -> None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")

    write.close = fh.close  # type: ignore[attr-defined]
    return write


def run_realization(cfg: CampaignConfig, idx: int) -> list[RowRecord]:
    """All schemes on one realization.  Raises on internal errors."""
    ls, qos, seed_id, jitter_ss = realization_inputs(cfg, idx)
    rng = np.random.default_rng(jitter_ss)
    outcomes: dict[str, SchemeOutcome] = {}
    order = [s for s in cfg.schemes if s != "OPT"] + \
            [s for s in cfg.schemes if s == "OPT"]
    for scheme in order:
        warm = None
        if scheme == "OPT" and cfg.warm_start_from_baseline:
            feas = [o for o in outcomes.values() if o.feasible]
            warm = max(feas, key=lambda o: o.ee) if feas else None
        writer = _trace_writer(cfg, idx, scheme)
        try:
            outcomes[scheme] = run_scheme(
                scheme, ls, cfg.system, qos, options=cfg.sca, warm=warm,
                rng=rng, fixed_tau=cfg.fixed_switch if scheme == "OPT" else None,
                trace_writer=writer)
        finally:
            if writer is not None:
                writer.close()

    rows = []
    for scheme in cfg.schemes:
        o = outcomes[scheme]
        if o.feasible and o.report is not None:
            se_ul = [float(v) for v in o.report.se_ul]
            se_dl = [float(v) for v in o.report.se_dl]
        else:
            K = cfg.system.num_ues
            se_ul, se_dl = [0.0] * K, [0.0] * K
        rows.append(RowRecord(
            realization=idx, seed=seed_id, scheme=scheme,
            feasible=o.feasible, tau_a_star=o.tau_a_star, ee=o.ee,
            sum_se_bits_per_s_per_hz=o.sum_se, total_power_w=o.total_power,
            iterations=o.iterations,
            se_ul_min=[float(v) for v in qos.se_ul_min],
            se_dl_min=[float(v) for v in qos.se_dl_min],
            se_ul=se_ul, se_dl=se_dl))
    return rows


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass
class SchemeStats:
    scheme: str
    n: int
    n_infeasible: int
    infeasibility_rate: float
    ee_median: float
    ee_q1: float
    ee_q3: float
    sum_se_median: float
    total_power_median: float
    n_feasible: int
    ee_median_feasible: float | None
    sum_se_median_feasible: float | None
    total_power_median_feasible: float | None


@dataclass
class CampaignSummary:
    schemes: dict[str, SchemeStats]
    ee_median_ratios: dict[str, float]
    n_realizations: int
    n_errored: int
    errored: list[int]
    meta: dict

    def cdf(self, scheme: str) -> list[float]:
        return self.meta["cdf"][scheme]


def summarize(rows: list[RowRecord], meta: dict | None = None,
              n_errored: int = 0, errored: list[int] | None = None
              ) -> CampaignSummary:
    """Aggregate persisted rows; infeasible runs count as EE 0."""
    if not rows:
        raise ValueError("no rows to summarize")
    by_scheme: dict[str, list[RowRecord]] = {}
    for r in rows:
        by_scheme.setdefault(r.scheme, []).append(r)
    stats: dict[str, SchemeStats] = {}
    cdfs: dict[str, list[float]] = {}
    for scheme, rs in by_scheme.items():
        ee = np.array([r.ee if r.feasible else 0.0 for r in rs])
        se = np.array([r.sum_se_bits_per_s_per_hz if r.feasible else 0.0 for r in rs])
        pw = np.array([r.total_power_w if r.feasible else 0.0 for r in rs])
        feas = np.array([r.feasible for r in rs])
        nf = int(feas.sum())
        stats[scheme] = SchemeStats(
            scheme=scheme, n=len(rs), n_infeasible=len(rs) - nf,
            infeasibility_rate=(len(rs) - nf) / len(rs),
            ee_median=float(np.median(ee)),
            ee_q1=float(np.percentile(ee, 25)),
            ee_q3=float(np.percentile(ee, 75)),
            sum_se_median=float(np.median(se)),
            total_power_median=float(np.median(pw)),
            n_feasible=nf,
            ee_median_feasible=float(np.median(ee[feas])) if nf else None,
            sum_se_median_feasible=float(np.median(se[feas])) if nf else None,
            total_power_median_feasible=float(np.median(pw[feas])) if nf else None)
        cdfs[scheme] = sorted(float(v) for v in ee)
    ratios: dict[str, float] = {}
    for a in stats:
        for b in stats:
            if a != b and stats[b].ee_median > 0:
                ratios[f"{a}/{b}"] = stats[a].ee_median / stats[b].ee_median
    meta = dict(meta or {})
    meta["cdf"] = cdfs
    n_real = len({r.realization for r in rows})
    return CampaignSummary(schemes=stats, ee_median_ratios=ratios,
                           n_realizations=n_real, n_errored=n_errored,
                           errored=sorted(errored or []), meta=meta)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _csv_header(K: int) -> list[str]:
    cols = ["realization", "seed", "scheme", "feasible", "tau_a_star", "ee",
            "sum_se_bits_per_s_per_hz", "total_power_w", "iterations"]
    cols += [f"se_ul_min_{k}" for k in range(K)]
    cols += [f"se_dl_min_{k}" for k in range(K)]
    cols += [f"se_ul_{k}" for k in range(K)]
    cols += [f"se_dl_{k}" for k in range(K)]
    return cols


def rows_to_csv(rows: list[RowRecord], K: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_csv_header(K))
    for r in rows:
        rec = [str(r.realization), str(r.seed), r.scheme,
               "1" if r.feasible else "0", str(r.tau_a_star),
               FLOAT_FMT % r.ee, FLOAT_FMT % r.sum_se_bits_per_s_per_hz,
               FLOAT_FMT % r.total_power_w, str(r.iterations)]
        for group in (r.se_ul_min, r.se_dl_min, r.se_ul, r.se_dl):
            rec += [FLOAT_FMT % v for v in group]
        writer.writerow(rec)
    return buf.getvalue()


def rows_from_csv(text: str) -> list[RowRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    K = sum(1 for c in header if c.startswith("se_ul_min_"))
    rows = []
    for rec in reader:
        base = 9
        rows.append(RowRecord(
            realization=int(rec[0]), seed=int(rec[1]), scheme=rec[2],
            feasible=rec[3] == "1", tau_a_star=int(rec[4]), ee=float(rec[5]),
            sum_se_bits_per_s_per_hz=float(rec[6]), total_power_w=float(rec[7]),
            iterations=int(rec[8]),
            se_ul_min=[float(v) for v in rec[base:base + K]],
            se_dl_min=[float(v) for v in rec[base + K:base + 2 * K]],
            se_ul=[float(v) for v in rec[base + 2 * K:base + 3 * K]],
            se_dl=[float(v) for v in rec[base + 3 * K:base + 4 * K]]))
    return rows


def _summary_to_json(summary: CampaignSummary) -> str:
    payload = {
        "schemes": {k: asdict(v) for k, v in sorted(summary.schemes.items())},
        "ee_median_ratios": dict(sorted(summary.ee_median_ratios.items())),
        "n_realizations": summary.n_realizations,
        "n_errored": summary.n_errored,
        "errored": summary.errored,
        "meta": {k: v for k, v in summary.meta.items() if k != "cdf"},
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_outputs(out_dir: str, rows: list[RowRecord],
                  summary: CampaignSummary, K: int) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "realizations.csv").write_text(rows_to_csv(rows, K))
    (out / "summary.json").write_text(_summary_to_json(summary))
    for scheme, cdf in summary.meta["cdf"].items():
        lines = ["ee"] + [FLOAT_FMT % v for v in cdf]
        (out / f"cdf_{scheme}.csv").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Campaign driver
# ---------------------------------------------------------------------------

def _limit_blas_threads():
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=1)
    except Exception:  # pragma: no cover - threadpoolctl is a hard dep
        import contextlib
        return contextlib.nullcontext()


_WORKER_CFG: CampaignConfig | None = None


def _worker_init(cfg: CampaignConfig) -> None:
    global _WORKER_CFG
    _WORKER_CFG = cfg
    _limit_blas_threads().__enter__()


def _worker_run(idx: int):
    try:
        return idx, run_realization(_WORKER_CFG, idx), None
    except Exception as exc:  # quarantine, campaign continues
        log.exception("realization %d failed", idx)
        return idx, [], repr(exc)


def run_campaign(cfg: CampaignConfig) -> CampaignSummary:
    """Run every realization x scheme, persist rows, return the summary.

    Deterministic for a fixed master seed regardless of ``cfg.workers``.
    """
    sysc = cfg.system
    meta = {
        "case": cfg.case.name,
        "ul_range": list(cfg.case.ul_range),
        "dl_range": list(cfg.case.dl_range),
        "master_seed": cfg.master_seed,
        "schemes": list(cfg.schemes),
        "num_aps": sysc.num_aps, "num_ues": sysc.num_ues,
        "antennas_per_ap": sysc.antennas_per_ap,
        "coherence_len": sysc.coherence_len, "pilot_len": sysc.pilot_len,
        "noise_power_w": sysc.noise_power_w,
        "bandwidth_hz": sysc.bandwidth_hz,
        "warm_start_from_baseline": cfg.warm_start_from_baseline,
        "fixed_switch": cfg.fixed_switch,
    }
    results: dict[int, list[RowRecord]] = {}
    errors: dict[int, str] = {}
    indices = list(range(cfg.n_realizations))
    if cfg.workers <= 1:
        with _limit_blas_threads():
            for idx in indices:
                try:
                    results[idx] = run_realization(cfg, idx)
                except Exception as exc:
                    log.exception("realization %d failed", idx)
                    errors[idx] = repr(exc)
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers,
                                 initializer=_worker_init,
                                 initargs=(cfg,)) as pool:
            for idx, rows, err in pool.map(_worker_run, indices):
                if err is None:
                    results[idx] = rows
                else:
                    errors[idx] = err

    rows: list[RowRecord] = []
    for idx in indices:
        rows.extend(results.get(idx, []))
    if not rows:
        raise RuntimeError("every realization errored; nothing to summarize")
    summary = summarize(rows, meta=meta, n_errored=len(errors),
                        errored=list(errors))
    if cfg.output_dir:
        write_outputs(cfg.output_dir, rows, summary, sysc.num_ues)
    return summary
