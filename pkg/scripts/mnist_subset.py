"""Class-balanced MNIST subset run with conv-small.

Reads the four IDX files (plain or gzipped) from ``--mnist-dir``, trains on the
first ``--train-per-class`` images of each digit, uses the training images as
the gallery and the first ``--test-per-class`` test images as queries, and
prints mAP plus the precision@k flatness statistic.

    python3 scripts/mnist_subset.py --mnist-dir ~/data/mnist --out runs/mnist
"""
import argparse
import sys
import time
from pathlib import Path

from pdhash import cli
from pdhash.data import find_mnist
from pdhash.evaluation import parse_keyvalue

K_LIST = "100,200,300,400,500,600,700,800,900,1000"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mnist-dir", required=True)
    ap.add_argument("--out", default="runs/mnist")
    ap.add_argument("--train-per-class", type=int, default=1000)
    ap.add_argument("--test-per-class", type=int, default=200)
    ap.add_argument("--bits", type=int, default=12)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--shift", type=int, default=0)
    args = ap.parse_args(argv)

    train, test = find_mnist(args.mnist_dir, "train"), find_mnist(args.mnist_dir, "test")
    if train is None or test is None:
        print(f"no MNIST IDX files in {args.mnist_dir}", file=sys.stderr)
        return 2
    train, test = ",".join(map(str, train)), ",".join(map(str, test))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    k_max = min(1000, 10 * args.train_per_class)
    k_list = ",".join(k for k in K_LIST.split(",") if int(k) <= k_max)

    t0 = time.perf_counter()
    steps = [
        ["train", "--data", train, "--per-class", args.train_per_class, "--arch", "conv-small",
         "--bits", args.bits, "--lr", args.lr, "--epochs", args.epochs, "--seed", args.seed,
         "--shift", args.shift, "--out-model", out / "m.pdhm"],
        ["encode", "--model", out / "m.pdhm", "--data", train, "--per-class", args.train_per_class,
         "--out-codes", out / "gallery.pdhc"],
        ["encode", "--model", out / "m.pdhm", "--data", test, "--per-class", args.test_per_class,
         "--out-codes", out / "query.pdhc"],
        ["eval", "--gallery-codes", out / "gallery.pdhc", "--query-codes", out / "query.pdhc",
         "--k-list", k_list, "--out", out / "report.txt"],
    ]
    for argv_ in steps:
        code = cli.main([str(a) for a in argv_])
        if code:
            return code
    kv = parse_keyvalue((out / "report.txt").read_text())
    p100 = float(kv["p_at_100"])
    flat = max(abs(float(v) - p100) for k, v in kv.items() if k.startswith("p_at_"))
    print(f"mAP {float(kv['map']):.4f}  max |p@k - p@100| {flat:.4f}  wall {time.perf_counter() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
