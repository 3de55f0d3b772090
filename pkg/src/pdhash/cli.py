"""Command-line entry point: synth, train, encode, query, eval, selftest.

Every command that writes files also writes ``<output>.manifest.json`` with the
resolved flags and SHA-256 digests of its inputs. Exit codes: 0 success,
1 usage error, 2 data or runtime error, 3 selftest failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codec import CodeBook, binarize_batch, load_codes, save_codes, search_topk
from .data import DataFormatError, load_dataset, make_blobs, save_pdhd
from .evaluation import evaluate
from .model import PRESETS, load_checkpoint, posteriors, preset, save_checkpoint
from .numerics import SgdConfig
from .selftest import run_selftest
from .trainer import DEFAULT_LEARNING_RATE, AugmentConfig, TrainConfig, TrainingDiverged, encode_logits, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SELFTEST = 0, 1, 2, 3

log = logging.getLogger("pdhash")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _digest(path) -> str:
    h = hashlib.sha256()
    for part in str(path).split(","):
        h.update(Path(part).read_bytes())
    return h.hexdigest()


def write_manifest(output, args: argparse.Namespace, inputs: dict[str, str]) -> Path:
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": args.command,
        "flags": flags,
        "seed": flags.get("seed"),
        "inputs": {name: {"path": str(p), "sha256": _digest(p)} for name, p in sorted(inputs.items())},
        "version": __version__,
    }
    path = Path(str(output) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_data(path, per_class: int | None, offset: int = 0):
    ds = load_dataset(path)
    if per_class is not None:
        ds = ds.subset_per_class(per_class, offset)
    if len(ds) == 0:
        raise DataFormatError(f"{path}: dataset is empty")
    return ds


def cmd_synth(args) -> int:
    if args.classes < 2 or args.per_class < 2:
        raise UsageError("--classes and --per-class must both be >= 2")
    ds, desc = make_blobs(args.classes, args.per_class, args.dim, args.spread, args.seed)
    save_pdhd(args.out, ds)
    Path(str(args.out) + ".world.json").write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")
    write_manifest(args.out, args, {})
    print(f"wrote {len(ds)} samples ({args.classes} classes, dim {args.dim}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.epochs < 1:
        raise UsageError("--epochs must be >= 1")
    if args.bits < 1:
        raise UsageError("--bits must be >= 1")
    if args.lr is None:
        args.lr = DEFAULT_LEARNING_RATE[args.arch]
    ds = _load_data(args.data, args.per_class)
    mcfg = preset(args.arch, ds.image_shape, args.bits)
    tcfg = TrainConfig(
        code_bits=args.bits,
        sgd=SgdConfig(args.lr, args.momentum),
        epochs=args.epochs,
        augment=AugmentConfig(args.shift, args.flip),
        seed=args.seed,
    )
    result = train(ds, mcfg, tcfg)
    save_checkpoint(args.out_model, mcfg, result.params)
    Path(str(args.out_model) + ".loss.txt").write_text("".join(f"{v!r}\n" for v in result.losses))
    write_manifest(args.out_model, args, {"data": args.data})
    print(f"trained {args.arch} ({args.bits} bits) for {len(result.losses)} steps; "
          f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}")
    return EXIT_OK


def encode_dataset(model_path, ds) -> CodeBook:
    mcfg, params = load_checkpoint(model_path)
    if ds.image_shape != mcfg.input_shape:
        raise DataFormatError(f"dataset images {ds.image_shape} do not match model input {mcfg.input_shape}")
    words = binarize_batch(posteriors(encode_logits(mcfg, params, ds.images)))
    return CodeBook(mcfg.code_bits, np.arange(len(ds)), ds.labels, words)


def cmd_encode(args) -> int:
    ds = _load_data(args.data, args.per_class, args.offset)
    book = encode_dataset(args.model, ds)
    save_codes(args.out_codes, book)
    write_manifest(args.out_codes, args, {"model": args.model, "data": args.data})
    print(f"encoded {len(book)} items as {book.n_bits}-bit codes to {args.out_codes}")
    return EXIT_OK


def _load_pair(args):
    gallery, queries = load_codes(args.gallery_codes), load_codes(args.query_codes)
    if gallery.n_bits != queries.n_bits:
        raise DataFormatError(f"code length mismatch: gallery has {gallery.n_bits} bits, queries have {queries.n_bits} bits")
    if len(gallery) == 0:
        raise DataFormatError("gallery is empty")
    return gallery, queries


def cmd_query(args) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    gallery, queries = _load_pair(args)
    lines = ["query_id\trank\tid\tdistance\tlabel"]
    for i in range(len(queries)):
        for rank, nb in enumerate(search_topk(gallery, queries.code(i), args.k), start=1):
            lines.append(f"{queries.ids[i]}\t{rank}\t{nb.id}\t{nb.distance}\t{nb.label}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        write_manifest(args.out, args, {"gallery": args.gallery_codes, "queries": args.query_codes})
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_k_list(text: str) -> list[int]:
    try:
        ks = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as e:
        raise UsageError(f"bad --k-list {text!r}") from e
    if not ks or min(ks) < 1:
        raise UsageError("--k-list needs positive integers")
    return ks


def cmd_eval(args) -> int:
    ks = _parse_k_list(args.k_list)
    gallery, queries = _load_pair(args)
    report = evaluate(gallery, queries, ks)
    table = report.to_table()
    if args.out:
        Path(args.out).write_text(report.to_keyvalue())
        Path(str(args.out) + ".table.txt").write_text(table)
        write_manifest(args.out, args, {"gallery": args.gallery_codes, "queries": args.query_codes})
    sys.stdout.write(table)
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest(args.level, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_SELFTEST if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pdhash", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a Gaussian-blob PDHD dataset")
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--spread", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a likelihood estimator")
    s.add_argument("--data", required=True, help="PDHD file or 'images.idx,labels.idx'")
    s.add_argument("--arch", choices=PRESETS, default="mlp-small")
    s.add_argument("--bits", type=int, default=12)
    s.add_argument("--lr", type=float, default=None,
                   help="SGD step size (default 1e-3 for mlp-small, 1e-4 for conv-small)")
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--shift", type=int, default=0, help="max random shift in pixels (0-4)")
    s.add_argument("--flip", action="store_true", help="random horizontal flips")
    s.add_argument("--per-class", type=int, default=None, help="use the first N images of each class")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-model", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("encode", help="binarize a dataset into PDHC codes")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--per-class", type=int, default=None)
    s.add_argument("--offset", type=int, default=0, help="skip the first N images of each class")
    s.add_argument("--out-codes", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("query", help="top-k Hamming neighbors per query")
    s.add_argument("--gallery-codes", required=True)
    s.add_argument("--query-codes", required=True)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("eval", help="mAP and precision@k")
    s.add_argument("--gallery-codes", required=True)
    s.add_argument("--query-codes", required=True)
    s.add_argument("--k-list", default="100,200,400,600,800,1000")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", help="run the property checks")
    s.add_argument("--level", choices=("fast", "full"), default="fast")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"pdhash {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, TrainingDiverged, ValueError, OSError) as e:
        print(f"pdhash {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
