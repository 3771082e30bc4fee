"""Command-line interface: manifest, run, report, sweep."""

import argparse
import json
import sys

from . import harness, proposer
from .errors import SciLoopError


def _add_run_flags(p):
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", required=True, choices=harness.METHODS)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", default="", help="comma-separated subset of manifest seeds")
    p.add_argument("--budget", type=int, default=None, help="override manifest budgets")
    p.add_argument("--noise", type=float, default=None, help="override manifest noise")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--laws", default="", help="laws file for equation-plugin tasks")
    p.add_argument("--endpoint", default="", help="chat-completion endpoint (remote method)")
    p.add_argument("--model-small", default="small")
    p.add_argument("--model-large", default="large")
    p.add_argument("--api-key-env", default="SCILOOP_API_KEY",
                   help="environment variable holding the API key (never logged)")


def _run_config(args) -> harness.RunConfig:
    seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip() != "")
    pconf = proposer.ProposerConfig(
        kind="remote-chat" if args.method == "autoscilab-remote" else "library",
        endpoint=args.endpoint, model_small=args.model_small,
        model_large=args.model_large, api_key_env=args.api_key_env)
    return harness.RunConfig(method=args.method, manifest_path=args.manifest,
                             output_dir=args.out, seeds=seeds,
                             budget_override=args.budget, noise_override=args.noise,
                             proposer_config=pconf, workers=args.workers, laws_path=args.laws)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sciloop",
                                     description="closed-loop mechanism discovery benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p_manifest = sub.add_parser("manifest", help="generate a task manifest file")
    p_manifest.add_argument("--benchmark", required=True,
                            choices=("chem", "grn", "equation-plugin"))
    p_manifest.add_argument("--tiers", default="", help="comma list; default all")
    p_manifest.add_argument("--seeds", type=int, default=3, help="number of seeds")
    p_manifest.add_argument("--budget", type=int, default=None)
    p_manifest.add_argument("--noise", type=float, default=0.0)
    p_manifest.add_argument("--laws", default="", help="laws file for equation-plugin")
    p_manifest.add_argument("--out", required=True)

    p_run = sub.add_parser("run", help="run one method over a manifest")
    _add_run_flags(p_run)

    p_report = sub.add_parser("report", help="aggregate a results directory")
    p_report.add_argument("--results", required=True)
    p_report.add_argument("--reference", default="random")
    p_report.add_argument("--target", type=float, default=0.5)

    p_sweep = sub.add_parser("sweep", help="run a method across a budget grid")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--budgets", required=True, help="comma-separated budgets")

    args = parser.parse_args(argv)
    try:
        if args.command == "manifest":
            tiers = tuple(t for t in args.tiers.split(",") if t) or None
            laws = None
            if args.laws:
                with open(args.laws) as fh:
                    laws = json.load(fh)
            manifests = harness.generate_manifests(args.benchmark, tiers=tiers,
                                                   n_seeds=args.seeds, budget=args.budget,
                                                   noise=args.noise, laws=laws)
            harness.write_manifests(manifests, args.out)
            print(f"wrote {len(manifests)} tasks to {args.out}")
        elif args.command == "run":
            out = harness.run_benchmark(_run_config(args))
            print(f"results in {out}")
        elif args.command == "report":
            harness.report(args.results, reference_method=args.reference, target=args.target)
            print(f"report written under {args.results}")
        elif args.command == "sweep":
            budgets = [int(b) for b in args.budgets.split(",") if b]
            out = harness.sweep(_run_config(args), budgets)
            print(f"sweep results in {out}")
    except (SciLoopError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
