"""Command-line surface: run, stats-test, bench and inspect subcommands.

Configuration precedence is built-in defaults < --config file < explicit
flags. The default seed comes from the SEGSCREEN_SEED environment
variable when set; the --seed flag wins over both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .bench import BenchSpec, run_bench
from .gating import GateConfig
from .pipeline import _jsonable, load_manifest, run_manifest
from .stats import TestConfig, two_sample_test

SEED_ENV_VAR = "SEGSCREEN_SEED"

_CONFIG_FLAGS = (
    # (flag, config field, type)
    ("--tau-bin", "tau_bin", float),
    ("--view-rule", "view_rule", str),
    ("--alpha", "alpha", float),
    ("--permutations", "permutations", int),
    ("--sample-cap", "sample_cap", int),
    ("--tau-ks", "tau_ks", float),
    ("--statistic", "statistic", str),
    ("--tau-max", "tau_max", float),
    ("--tau-ratio", "tau_ratio", float),
    ("--a-min", "a_min", int),
    ("--tau-mean", "tau_mean", float),
    ("--tau-intersect", "tau_intersect", float),
    ("--tau-case", "tau_case", float),
    ("--pre-filter-area", "pre_filter_area", int),
    ("--padding-mm", "padding_mm", float),
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file with scoring/statistical/geometric sections")
    for flag, _field, typ in _CONFIG_FLAGS:
        parser.add_argument(flag, type=typ, default=None)
    parser.add_argument("--scales", type=float, nargs="+", default=None,
                        help="ROI scale jitter factors")


def _resolve_config(args: argparse.Namespace) -> GateConfig:
    cfg = GateConfig.from_file(args.config) if args.config else GateConfig()
    overrides = {}
    for flag, field_name, _typ in _CONFIG_FLAGS:
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            overrides[field_name] = value
    if getattr(args, "scales", None) is not None:
        overrides["scales"] = tuple(args.scales)
    return cfg.override(**overrides)


def _default_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SystemExit(f"{SEED_ENV_VAR} must be an integer, got {env!r}")
    return 0


def _read_column(path: str) -> np.ndarray:
    """Single-column numeric text file; errors cite file and line number."""
    values = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as err:
        raise SystemExit(f"cannot open {path}: {err}")
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise SystemExit(f"{path}: line {lineno}: not a number: {text!r}")
    if not values:
        raise SystemExit(f"{path}: no numeric values found")
    return np.array(values, dtype=np.float64)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    seed = _default_seed(args)
    try:
        manifest = load_manifest(args.manifest)
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    result = run_manifest(manifest, cfg, base_seed=seed, jobs=args.jobs,
                          out_dir=args.out, dump_fused=args.dump_fused)
    print(json.dumps(_jsonable(result.summary), sort_keys=True, indent=2))
    return 1 if result.any_failed else 0


def _cmd_stats_test(args: argparse.Namespace) -> int:
    x = _read_column(args.file_x)
    y = _read_column(args.file_y)
    cfg = TestConfig(
        permutations=args.permutations if args.permutations is not None else 199,
        statistic=args.statistic,
        seed=_default_seed(args),
    )
    outcome = two_sample_test(x, y, cfg)
    record = {
        "statistic": outcome.statistic_observed,
        "sigma": outcome.bandwidth_sigma,
        "p_value": outcome.p_value,
        "kind": cfg.statistic,
        "permutations": cfg.permutations,
    }
    print(json.dumps(_jsonable(record), sort_keys=True, indent=2))
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    try:
        spec = BenchSpec.from_file(args.spec) if args.spec else BenchSpec()
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if args.seed is not None or os.environ.get(SEED_ENV_VAR):
        spec = BenchSpec.from_dict(dict(asdict(spec), seed=_default_seed(args)))
    result = run_bench(spec, cfg, jobs=args.jobs, dump_dir=args.dump_dir)
    summary = result.to_dict()
    if not args.per_case:
        summary.pop("cases")
    print(json.dumps(_jsonable(summary), sort_keys=True, indent=2))
    bound = cfg.statistical.alpha + args.fdr_tolerance
    if result.empirical_fdr > bound:
        print(f"empirical FDR {result.empirical_fdr:.4f} exceeds {bound:.4f}", file=sys.stderr)
        return 1
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    try:
        with open(args.report, "r", encoding="utf-8") as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        print(f"error: cannot read report {args.report}: {err}", file=sys.stderr)
        return 2
    lines = [f"image: {report.get('image_id', '?')}"]
    if "error" in report:
        lines.append(f"  FAILED: {report['error']}")
    for roi in report.get("rois", []):
        lines.append(f"  roi scale {roi['scale']}: box {tuple(roi['box'])}")
    l1 = report.get("l1")
    if l1:
        lines.append(f"  L1 existence gate: {'pass' if l1['passed'] else 'FAIL'}")
        for check in l1["checks"]:
            mark = "ok" if check["passed"] else "FAIL"
            lines.append(f"    {check['quantity']} = {check['observed']:.6g} "
                         f"(threshold {check['threshold']:.6g}) [{mark}]")
        for note in l1.get("notes", []):
            lines.append(f"    note: {note}")
    for cand in report.get("candidates", []):
        lines.append(f"  candidate {cand['id']}: area {cand['area']}, "
                     f"mean_prob {cand['mean_prob']:.3f}, "
                     f"overlap {cand['overlap_with_control']:.3f} -> {cand['decision']}")
        if "p_value" in cand:
            lines.append(f"    statistic {cand['statistic']:.6g}, sigma {cand['sigma']:.6g}, "
                         f"p {cand['p_value']:.4g}, bh_kept {cand['bh_kept']}")
    l3 = report.get("l3")
    if l3:
        check = l3["checks"][0]
        lines.append(f"  L3 case gate: {'pass' if l3['passed'] else 'FAIL'} "
                     f"(s_star {check['observed']:.4g} vs {check['threshold']:.4g})")
    lines.append(f"  final: {'positive' if report.get('final_positive') else 'negative (empty mask)'}")
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segscreen",
        description="Statistical screening pipeline for segmentation probability maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="process a dataset manifest end to end")
    p_run.add_argument("--manifest", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--dump-fused", action="store_true",
                       help="also write the fused probability map per image")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_stats = sub.add_parser("stats-test", help="generic two-sample test on numeric columns")
    p_stats.add_argument("file_x")
    p_stats.add_argument("file_y")
    p_stats.add_argument("--statistic", choices=("mmd2", "energy"), default="mmd2")
    p_stats.add_argument("--permutations", type=int, default=None)
    p_stats.add_argument("--seed", type=int, default=None)
    p_stats.set_defaults(func=_cmd_stats_test)

    p_bench = sub.add_parser("bench", help="run the synthetic benchmark")
    p_bench.add_argument("--spec", help="bench spec JSON (defaults apply when omitted)")
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--per-case", action="store_true", help="include per-case rows")
    p_bench.add_argument("--dump-dir", default=None,
                         help="write per-case intensity/fused/mask SGRID files here")
    p_bench.add_argument("--fdr-tolerance", type=float, default=0.014,
                         help="slack above alpha before the exit code turns nonzero")
    _add_config_flags(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    p_inspect = sub.add_parser("inspect", help="pretty-print a case report")
    p_inspect.add_argument("report")
    p_inspect.set_defaults(func=_cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
