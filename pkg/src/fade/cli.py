"""``fade`` command line.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import FadeError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8", newline="\n")


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(args.seed)
    lines = [f"{'PASS' if ok else 'FAIL'}  {name}  [{detail}]" for name, ok, detail in results]
    failed = [name for name, ok, _ in results if not ok]
    lines.append(f"{len(results) - len(failed)}/{len(results)} invariants passed (seed {args.seed})")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    _write(args.out, text)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bench(args) -> int:
    from .profiler import KINDS, OpDesc, bench_run, make_grid, rows_to_csv

    kinds = args.kinds or list(KINDS)
    if args.grid == "custom":
        if not args.channels or not args.sizes:
            print("custom grid needs --channels and --sizes", file=sys.stderr)
            return EXIT_USAGE
        grid = [OpDesc(k, c, s, s, K=args.K, h=args.h, d=args.d) for k in kinds for c in args.channels for s in args.sizes]
    else:
        grid = make_grid(args.grid, kinds, K=args.K, h=args.h, d=args.d)
    rows = bench_run(grid, trials=args.trials, seed=args.seed, timed=not args.no_time)
    csv_text = rows_to_csv(rows)
    _write(args.out, csv_text)
    width = max(len(k) for k in kinds)
    print(f"{'kind':<{width}}  {'C':>4} {'H':>4}  {'GFLOPs':>9}  {'peak MB':>9}  {'ms':>9}")
    for r in rows:
        ms = f"{float(r['wall_ns_median']) / 1e6:9.2f}" if r["wall_ns_median"] else f"{'-':>9}"
        print(f"{r['kind']:<{width}}  {r['C']:>4} {r['H']:>4}  {r['flops'] / 1e9:9.4f}  "
              f"{r['peak_bytes'] / 2**20:9.2f}  {ms}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .autograd import OPS, certify

    ops = args.ops or list(OPS)
    lines, worst = [], 0.0
    for op in ops:
        errs = [certify(op, args.seed + t) for t in range(args.trials)]
        worst = max(worst, max(errs))
        ok = max(errs) <= args.tol
        lines.append(f"{'PASS' if ok else 'FAIL'}  {op:<24} max rel err {max(errs):.3e}")
    lines.append(f"worst relative error {worst:.3e} over {len(ops)} ops x {args.trials} seeds (tol {args.tol:g})")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    _write(args.out, text)
    return EXIT_OK if worst <= args.tol else EXIT_FAIL


def cmd_toy(args) -> int:
    from .experiments import ablation_csv, ablation_suite, make_toy_dataset, train_toy

    if args.ablation:
        reports = ablation_suite(args.seed, args.epochs, args.lr)
    else:
        reports = [train_toy(args.kind, args.epochs, args.lr, args.seed, make_toy_dataset(args.seed))]
    _write(args.out, ablation_csv(reports))
    print(f"{'kind':<14} {'train MSE':>11} {'test MSE':>11}")
    for r in reports:
        print(f"{r.kind:<14} {r.final_train_mse:11.6f} {r.final_test_mse:11.6f}")
    return EXIT_OK


def _load_params(source: str, C: int, args):
    from .upsample import FadeParams

    if source.startswith("random:"):
        seed = int(source.split(":", 1)[1])
        return FadeParams.init(C, d=args.d, K=args.K, h=args.h, fusion_mode=args.mode, seed=seed)
    with np.load(source) as z:
        arrays = {k: z[k].astype(np.float32) for k in z.files}
    return FadeParams.from_dict(arrays, args.mode)


def cmd_upsample(args) -> int:
    from .ften import read_tensor, write_tensor
    from .upsample import fade_forward

    try:
        enc, dec = read_tensor(args.enc), read_tensor(args.dec)
        fp = _load_params(args.params, dec.shape[1], args)
        out = fade_forward(enc, dec.astype(enc.dtype), fp.astype(enc.dtype))
        write_tensor(args.out, out)
    except (FadeError, OSError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {args.out} with shape {'x'.join(map(str, out.shape))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .autograd import OPS
    from .experiments import DEFAULT_EPOCHS, DEFAULT_LR, TOY_KINDS
    from .profiler import KINDS

    p = argparse.ArgumentParser(prog="fade", description="Dynamic x2 feature upsampling toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the invariant suite")
    v.add_argument("--seed", type=int, default=42)
    v.add_argument("--out", help="write the report here")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="analytic cost model and wall-clock timings")
    b.add_argument("--grid", choices=["fig9a", "fig9b", "fig9c", "custom"], default="fig9a")
    b.add_argument("--channels", type=int, nargs="+")
    b.add_argument("--sizes", type=int, nargs="+", help="decoder side lengths")
    b.add_argument("--kinds", nargs="+", choices=KINDS)
    b.add_argument("--K", type=int, default=5)
    b.add_argument("--h", type=int, default=3)
    b.add_argument("--d", type=int, default=64)
    b.add_argument("--trials", type=int, default=3)
    b.add_argument("--seed", type=int, default=42)
    b.add_argument("--no-time", action="store_true", help="skip wall-clock measurement")
    b.add_argument("--out", help="CSV output path")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gradcheck", help="finite-difference certification of every registered op")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--trials", type=int, default=5)
    g.add_argument("--ops", nargs="+", choices=sorted(OPS))
    g.add_argument("--tol", type=float, default=1e-5)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("toy", help="toy detail-reconstruction training")
    which = t.add_mutually_exclusive_group(required=True)
    which.add_argument("--ablation", action="store_true", help="train all six arms")
    which.add_argument("--kind", choices=TOY_KINDS)
    t.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    t.add_argument("--lr", type=float, default=DEFAULT_LR)
    t.add_argument("--seed", type=int, default=42)
    t.add_argument("--out")
    t.set_defaults(func=cmd_toy)

    u = sub.add_parser("upsample", help="upsample FTEN features with the full operator")
    u.add_argument("--enc", required=True)
    u.add_argument("--dec", required=True)
    u.add_argument("--params", default="random:1", help="'random:SEED' or an .npz of named parameter arrays")
    u.add_argument("--mode", choices=["none", "skipping", "gating"], default="gating")
    u.add_argument("--K", type=int, default=5)
    u.add_argument("--h", type=int, default=3)
    u.add_argument("--d", type=int, default=64)
    u.add_argument("--out", required=True)
    u.set_defaults(func=cmd_upsample)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "trials", 1) < 1 or (args.command == "bench" and args.trials < 3):
        print("--trials too small", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "toy" and (args.epochs < 0 or args.lr <= 0):
        print("--epochs must be >= 0 and --lr > 0", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
