"""``tactic`` command line: ``gen``, ``sweep`` and ``check``.

Exit codes: 0 ok, 1 usage or configuration error, 2 I/O error, 3 invariant
violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError, DumpFormatError, InvariantViolation, ValidationError
from .harness import RunConfig
from .kv_model import write_dump, write_manifest

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag -> RunConfig field; every flag defaults to None so that only the flags
# actually given override the config file.
_SHARED = [
    ("--seed", "seed", int),
    ("--out", "out", str),
    ("--cluster-size", "cluster_size", int),
    ("--max-iters", "max_iters", int),
    ("--exact-frac", "exact_frac", float),
    ("--p1", "p1", float),
    ("--p2", "p2", float),
    ("--window-frac", "window_frac", float),
    ("--gqa-group-size", "gqa_group_size", int),
    ("--fixed-budget", "fixed_budget", int),
]
_SYNTH = [
    ("--mode", "mode", str),
    ("--n", "n", int),
    ("--d", "d", int),
    ("--m", "m", int),
    ("--heads", "heads", int),
    ("--layers", "layers", int),
    ("--cluster-count", "cluster_count", int),
    ("--tail-sharpness", "tail_sharpness", float),
    ("--jitter", "jitter", float),
]


def _add(p, specs):
    for flag, dest, typ in specs:
        p.add_argument(flag, dest=dest, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tactic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", help="write synthetic head dumps and a manifest")
    gen.add_argument("--config", default=None)
    _add(gen, _SYNTH + [("--seed", "seed", int), ("--out", "out", str)])

    for name, text in (("sweep", "run all selectors, write sweep.csv + summary.json"),
                       ("check", "verify the error bound and the distance/KL trend")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", default=None)
        p.add_argument("--input", dest="input", default=None,
                       help="dump directory containing manifest.json, or a manifest path")
        p.add_argument("--threshold", dest="thresholds", type=float, action="append", default=None)
        _add(p, _SHARED + _SYNTH)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        setattr(cfg, k, v)
    return cfg


def cmd_gen(cfg: RunConfig) -> int:
    if cfg.out is None:
        raise ConfigError("gen requires --out")
    cfg.input = None
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for inst in harness.load_instances(cfg):
        name = f"layer{inst.layer:03d}_head{inst.head:03d}.tac"
        write_dump(inst.dump, out / name)
        entries.append({"path": name, "layer": inst.layer, "head": inst.head})
        print(out / name)
    write_manifest(entries, out / "manifest.json")
    print(out / "manifest.json")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    rows, summary = harness.run_sweep(cfg)
    harness.check_invariants(rows)
    if cfg.out is not None:
        for path in harness.write_outputs(rows, summary, cfg.out):
            print(path)
    else:
        sys.stdout.write(harness.csv_text(rows))
    for key, s in summary["per_threshold"].items():
        print(f"P={key}: optimal {s['optimal_budget']:.1f}  cluster-optimal "
              f"{s['cluster_optimal_budget']:.1f}  tactic {s['tactic_budget']:.1f}  "
              f"achieved {s['mean_achieved_p']:.3f}  success {s['success_rate']:.2f}",
              file=sys.stderr)
    return EXIT_OK


def cmd_check(cfg: RunConfig) -> int:
    cfg.validate()
    instances = harness.load_instances(cfg)
    rows, _ = harness.run_sweep(cfg, instances)
    bad = harness.bound_violations(rows)
    checked = len(rows) * len(harness.METHODS)
    trend = harness.nested_prefix_trend(instances)
    print(f"bound: {checked - len(bad)} pass, {len(bad)} fail")
    for i, m, eps, bound in bad[:10]:
        print(f"  row {i} {m}: eps {eps:.9g} > bound {bound:.9g}")
    print(f"trend: eps monotone {'pass' if trend['eps_monotone'] else 'fail'}, "
          f"kl monotone {'pass' if trend['kl_monotone'] else 'fail'}, "
          f"spearman(mean eps, mean kl) = {trend['spearman']:.4f}")
    if cfg.out is not None:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        report = {"bound_checked": checked, "bound_violations": len(bad), "trend": trend}
        (out / "check.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_INVARIANT if bad else EXIT_OK


COMMANDS = {"gen": cmd_gen, "sweep": cmd_sweep, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValidationError) as exc:
        print(f"tactic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DumpFormatError) as exc:
        print(f"tactic: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantViolation as exc:
        print(f"tactic: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
