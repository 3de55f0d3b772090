"""Synthetic blob experiment: mAP across code lengths and class spreads.

Trains mlp-small on a 10-class Gaussian blob dataset for every (bits, spread)
pair and prints one row per run. Gallery is the training set, queries are a
fresh draw from the same mixture.

    python3 scripts/synth_experiment.py --bits 8 12 24 --spread 2 5 10
"""
import argparse
import time

from pdhash.codec import CodeBook, binarize_batch
from pdhash.data import make_blobs
from pdhash.evaluation import evaluate
from pdhash.model import posteriors, preset
from pdhash.numerics import SgdConfig
from pdhash.trainer import TrainConfig, encode_logits, train


def encode(mcfg, params, ds):
    words = binarize_batch(posteriors(encode_logits(mcfg, params, ds.images)))
    return CodeBook(mcfg.code_bits, range(len(ds)), ds.labels, words)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bits", type=int, nargs="+", default=[8, 12, 24])
    ap.add_argument("--spread", type=float, nargs="+", default=[2.0, 5.0, 10.0])
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'bits':>4} {'spread':>6} {'mAP':>7} {'p@100':>7} {'loss0':>8} {'lossN':>8} {'sec':>5}")
    for spread in args.spread:
        gallery, _ = make_blobs(args.classes, args.per_class, 2, spread, args.seed + 1)
        queries, _ = make_blobs(args.classes, args.per_class // 4, 2, spread, args.seed + 2)
        for bits in args.bits:
            t0 = time.perf_counter()
            mcfg = preset("mlp-small", (2,), bits)
            tcfg = TrainConfig(bits, SgdConfig(args.lr, 0.9), epochs=args.epochs, seed=args.seed)
            result = train(gallery, mcfg, tcfg)
            report = evaluate(encode(mcfg, result.params, gallery), encode(mcfg, result.params, queries), [100])
            print(f"{bits:>4} {spread:>6g} {report.map:>7.4f} {report.precision_at_k[100]:>7.4f} "
                  f"{result.losses[0]:>8.2f} {result.losses[-1]:>8.2f} {time.perf_counter() - t0:>5.1f}")


if __name__ == "__main__":
    main()
