"""Command-line entry point: ``fastslow <verb> [flags]``.

Exit codes: 0 success, 1 at least one utterance (or fixture check) failed,
2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from fastslow.errors import ConfigError
from fastslow.harness.checkpoint import init_model, save_checkpoint
from fastslow.harness.config import RunConfig, load_config
from fastslow.harness.fixtures import FixtureSizes, gen_fixtures, load_lattice_fixture
from fastslow.harness.io import load_features, load_manifest
from fastslow.harness.runner import Decoder, decode_record, load_table, run_manifest
from fastslow.oracles import central_difference, max_relative_error
from fastslow.transducer import (
    PathRestriction,
    fastemit_loss,
    fastemit_objective,
    restricted_loss,
    transducer_loss,
)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
log = logging.getLogger("fastslow")


def _config(path: str | None) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_decode(args) -> int:
    config = _config(args.config)
    decoder = Decoder(config)
    features = load_features(args.features)
    if config.model_kind == "table" and args.table is None:
        raise ConfigError("--table", "table model decoding needs --table")
    table = load_table(args.table) if config.model_kind == "table" else None
    record = decode_record(args.id, decoder.decode(features, table))
    text = json.dumps(record, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _config(args.config)
    config.validate_for_decoding()
    manifest = load_manifest(args.manifest)
    result = run_manifest(config, manifest, threads=args.threads)
    result.write(args.out)
    r = result.report
    print(f"utterances={len(r.utterances)} failed={len(r.failed)} wer={r.wer:.4f} "
          f"wer_fast={r.wer_fast:.4f} cr={r.cr:.4f}")
    return result.exit_code


def _check_lattice(path: Path, tol_loss: float, tol_grad: float, h: float) -> list[str]:
    lattice, raw = load_lattice_fixture(path)
    problems = []
    loss, grad = transducer_loss(lattice)
    if abs(loss - raw["expected_loss"]) > tol_loss:
        problems.append(f"loss {loss!r} != expected {raw['expected_loss']!r}")
    f = lambda x: transducer_loss(lattice.with_log_probs(x))[0]  # noqa: E731
    err = max_relative_error(grad, central_difference(f, lattice.log_probs, h))
    if err > tol_grad:
        problems.append(f"transducer gradient rel err {err:.2e}")

    _, fe_grad = fastemit_loss(lattice, 0.5)
    g = lambda x: fastemit_objective(x, lattice, 0.5)  # noqa: E731
    err = max_relative_error(fe_grad, central_difference(g, lattice.log_probs, h))
    if err > tol_grad:
        problems.append(f"fast-emit gradient rel err {err:.2e}")

    align = raw.get("alignment")
    if align is not None and lattice.U > 0:
        restriction = PathRestriction(tuple(align), 1, 1)
        try:
            _, r_grad = restricted_loss(lattice, restriction)
        except ValueError:
            return problems
        fr = lambda x: restricted_loss(lattice.with_log_probs(x), restriction)[0]  # noqa: E731
        err = max_relative_error(r_grad, central_difference(fr, lattice.log_probs, h))
        if err > tol_grad:
            problems.append(f"restricted gradient rel err {err:.2e}")
    return problems


def cmd_loss_check(args) -> int:
    files = sorted(Path(args.fixtures).glob("lattices/*.json")) or sorted(Path(args.fixtures).glob("*.json"))
    if not files:
        raise ConfigError("--fixtures", f"no lattice fixtures under {args.fixtures}")
    failed = 0
    for p in files:
        problems = _check_lattice(p, args.tol_loss, args.tol_grad, args.h)
        if problems:
            failed += 1
            print(f"FAIL {p.name}: {'; '.join(problems)}")
    print(f"checked={len(files)} failed={failed}")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_gen_fixtures(args) -> int:
    sizes = FixtureSizes(lattices=args.lattices, max_T=args.max_T, max_U=args.max_U, max_V=args.max_V)
    try:
        sizes.validate()
    except ValueError as err:
        raise ConfigError("sizes", str(err)) from None
    written = gen_fixtures(args.out, args.seed, sizes)
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def cmd_init_model(args) -> int:
    config = _config(args.config)
    seed = config.seed if args.seed is None else args.seed
    model = init_model(config.arch, seed)
    save_checkpoint(model, args.out)
    n = sum(int(np.asarray(a).size) for _, a in model.named_parameters())
    print(f"wrote {args.out} ({n} parameters, seed {seed})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastslow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("decode", help="decode one utterance to a JSON record")
    p.add_argument("--config")
    p.add_argument("--features", required=True)
    p.add_argument("--table", help="table model JSON (table configs only)")
    p.add_argument("--id", default="utt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="decode and score a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss-check", help="verify losses and gradients on lattice fixtures")
    p.add_argument("--fixtures", required=True)
    p.add_argument("--tol-loss", type=float, default=1e-8)
    p.add_argument("--tol-grad", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("gen-fixtures", help="write seeded oracle fixtures and a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lattices", type=int, default=20)
    p.add_argument("--max-T", dest="max_T", type=int, default=4)
    p.add_argument("--max-U", dest="max_U", type=int, default=3)
    p.add_argument("--max-V", dest="max_V", type=int, default=3)
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("init-model", help="write a randomly initialised checkpoint")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_model)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
