"""Command line for dumping and verifying EMB1 files.

  embdump dump   --model SPEC --glosses FILE --out FILE [--seed N]
                 [--layers N] [--dim N]
  embdump verify --model SPEC --glosses FILE --emb FILE [--seed N]
                 [--layers N] [--dim N] [--json]

Model specs: static:PATH (one-layer text table), toy:LAYERSxDIM (seeded
deterministic encoder), hf:NAME (Hugging Face encoder by name or local
path). --layers/--dim declare the expected inventory; they default to what
the loaded model reports, and a declaration the model cannot meet fails the
run. Exit codes: 0 success (for verify: every check passed), 1 domain error
or failed verification, 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .dump import DumpSpec, dump, verify
from .glosses import DumpError
from .models import load_model


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embdump",
        description="Dump per-layer hidden states for annotated gloss occurrences into EMB1 files.",
    )
    parser.add_argument("--version", action="version", version=f"embdump {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True, help="static:PATH | toy:LAYERSxDIM | hf:NAME")
        p.add_argument("--glosses", required=True, help="glosses.jsonl with annotated occurrences")
        p.add_argument("--seed", type=int, default=0, help="seed for the toy backend")
        p.add_argument("--layers", type=int, help="declared layer count (default: model's)")
        p.add_argument("--dim", type=int, help="declared per-layer width (default: model's)")

    d = sub.add_parser("dump", help="run the model over the occurrences and write an EMB1 file")
    common(d)
    d.add_argument("--out", required=True, help="EMB1 output path; manifest lands beside it")

    v = sub.add_parser("verify", help="check an EMB1 file and its manifest against a spec")
    common(v)
    v.add_argument("--emb", required=True, help="EMB1 file to verify")
    v.add_argument("--json", action="store_true", help="print the report as JSON")
    return parser


def spec_for(args) -> tuple:
    model = load_model(args.model, seed=args.seed)
    spec = DumpSpec.for_model(model, args.glosses)
    if args.layers is not None or args.dim is not None:
        spec = DumpSpec(
            model_id=spec.model_id,
            layer_count=args.layers if args.layers is not None else spec.layer_count,
            dim_per_layer=args.dim if args.dim is not None else spec.dim_per_layer,
            glosses_path=spec.glosses_path,
        )
    return spec, model


def main(argv=None) -> int:
    logging.basicConfig(format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        spec, model = spec_for(args)
        if args.command == "dump":
            result = dump(spec, model, args.out)
            print(
                f"dumped {result.n_records} records to {result.path} "
                f"({spec.layer_count} layers x {spec.dim_per_layer} dims), "
                f"skipped {len(result.skipped)}"
            )
            return 0
        report = verify(args.emb, spec)
        if args.json:
            print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
        else:
            for check in report.checks:
                print(f"{'ok' if check.ok else 'FAIL'} {check.name}: {check.detail}")
        return 0 if report.ok else 1
    except (DumpError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
