"""Command-line interface: run campaigns and re-aggregate persisted rows."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import SystemConfig, default_system
from .harness import (CASES, CampaignConfig, CaseSpec, rows_from_csv,
                      run_campaign, summarize, write_outputs)
from .sca import ScaOptions


def _case_from_spec(value) -> CaseSpec:
    if isinstance(value, str):
        if value not in CASES:
            raise SystemExit(f"unknown case {value!r}; pick from {sorted(CASES)}")
        return CASES[value]
    return CaseSpec(name=value.get("name", "custom"),
                    ul_range=tuple(value["ul_range"]),
                    dl_range=tuple(value["dl_range"]))


def _build_campaign(args) -> CampaignConfig:
    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())

    sys_kwargs = dict(file_cfg.get("system", {}))
    if args.aps is not None:
        sys_kwargs["num_aps"] = args.aps
    if args.ues is not None:
        sys_kwargs["num_ues"] = args.ues
    if args.antennas is not None:
        sys_kwargs["antennas_per_ap"] = args.antennas
    system = default_system(**sys_kwargs)

    sca_kwargs = dict(file_cfg.get("sca", {}))
    if args.sca_tol is not None:
        sca_kwargs["sca_tol"] = args.sca_tol
    if args.solver_opt_tol is not None:
        sca_kwargs["solver_opt_tol"] = args.solver_opt_tol
    if args.solver_feas_tol is not None:
        sca_kwargs["solver_feas_tol"] = args.solver_feas_tol
    if args.backend is not None:
        sca_kwargs["backend"] = args.backend
    sca = ScaOptions(**sca_kwargs)

    case = _case_from_spec(args.case or file_cfg.get("case", "case1"))
    schemes = tuple(args.schemes.split(",")) if args.schemes else \
        tuple(file_cfg.get("schemes", ("OPT", "BL1", "BL2")))
    return CampaignConfig(
        system=system, case=case, schemes=schemes,
        n_realizations=args.realizations or file_cfg.get("n_realizations", 200),
        master_seed=args.seed if args.seed is not None
        else file_cfg.get("master_seed", 0),
        output_dir=args.out or file_cfg.get("output_dir"),
        workers=args.workers or file_cfg.get("workers", 1),
        warm_start_from_baseline=args.warm_start_from_baseline
        or file_cfg.get("warm_start_from_baseline", False),
        fixed_switch=args.fixed_switch if args.fixed_switch is not None
        else file_cfg.get("fixed_switch"),
        write_traces=args.traces or file_cfg.get("write_traces", False),
        sca=sca)


def _print_digest(summary) -> None:
    for name, st in sorted(summary.schemes.items()):
        print(f"{name}: median EE {st.ee_median:.6g} SE/W, "
              f"infeasible {st.n_infeasible}/{st.n} "
              f"({100 * st.infeasibility_rate:.1f}%)")
    for pair, ratio in sorted(summary.ee_median_ratios.items()):
        print(f"median-EE ratio {pair}: {ratio:.3f}")
    if summary.n_errored:
        print(f"errored realizations: {summary.errored}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dtdd-ee",
        description="EE optimization of the UL/DL switch in cell-free "
        "massive MIMO with dynamic TDD")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a Monte-Carlo campaign")
    run_p.add_argument("--config", help="JSON file mirroring the campaign config")
    run_p.add_argument("--case", choices=sorted(CASES))
    run_p.add_argument("--aps", type=int, help="number of APs")
    run_p.add_argument("--ues", type=int, help="number of UEs")
    run_p.add_argument("--antennas", type=int, help="antennas per AP")
    run_p.add_argument("--realizations", type=int)
    run_p.add_argument("--seed", type=int, help="master seed")
    run_p.add_argument("--schemes", help="comma list from OPT,BL1,BL2")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--workers", type=int)
    run_p.add_argument("--fixed-switch", type=int, dest="fixed_switch",
                       help="debug: pin OPT's DL sample count")
    run_p.add_argument("--warm-start-from-baseline", action="store_true")
    run_p.add_argument("--traces", action="store_true",
                       help="write per-run iteration traces")
    run_p.add_argument("--sca-tol", type=float, dest="sca_tol")
    run_p.add_argument("--solver-opt-tol", type=float, dest="solver_opt_tol")
    run_p.add_argument("--solver-feas-tol", type=float, dest="solver_feas_tol")
    run_p.add_argument("--backend", choices=("numba", "numpy"),
                       help="kernel backend override")

    sum_p = sub.add_parser("summarize",
                           help="re-aggregate a persisted realizations.csv")
    sum_p.add_argument("dir", help="directory holding realizations.csv")

    args = parser.parse_args(argv)
    if args.command == "run":
        cfg = _build_campaign(args)
        summary = run_campaign(cfg)
        _print_digest(summary)
        if cfg.output_dir:
            print(f"outputs written to {cfg.output_dir}")
        return 0
    if args.command == "summarize":
        out = Path(args.dir)
        rows = rows_from_csv((out / "realizations.csv").read_text())
        meta = {}
        summary_path = out / "summary.json"
        if summary_path.exists():
            meta = json.loads(summary_path.read_text()).get("meta", {})
        summary = summarize(rows, meta=meta)
        K = len(rows[0].se_ul) if rows else 0
        write_outputs(str(out), rows, summary, K)
        _print_digest(summary)
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
