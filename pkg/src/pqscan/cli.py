"""Command-line front end: data generation, training, indexing, querying,
and CSV benchmark reports."""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ._binio import FormatError
from ._dist import nearest_k
from .data import (
    GroundTruth,
    exact_knn,
    generate_synthetic,
    read_vecs,
    recall_at_r,
    write_recall_csv,
    write_vecs,
)
from .derived import (
    DerivedPQ,
    load_quantizer_any,
    save_derived,
    search_two_pass,
    train_derived,
)
from .fastscan import fast_scan, group_codes
from .ivf import build_ivf, default_r2, load_ivf, query_ivf, save_ivf
from .quantizer import (
    ProductQuantizer,
    TrainConfig,
    TrainError,
    encode,
    save_quantizer,
    train_opq,
    train_pq,
)
from .quickadc import DEFAULT_INIT_COUNT, qadc_scan
from .scan import CodeList, compute_tables, load_codes, save_codes, scan, transpose_blocks

BENCH_HEADER = (
    "method",
    "m",
    "b",
    "K",
    "ma",
    "r",
    "r2",
    "recall",
    "mean_ms",
    "median_ms",
    "mcodes_per_s",
    "pruned_fraction",
)

_ENCODE_CHUNK = 1 << 17


def _read_auto(path: str) -> np.ndarray:
    kind = Path(path).suffix.lower().lstrip(".")
    if kind not in ("fvecs", "bvecs", "ivecs"):
        raise ValueError(f"cannot infer vector format from extension: {path}")
    return read_vecs(path, kind)


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(
        kmeans_iters=args.iters,
        opq_iters=getattr(args, "opq_iters", 50),
        seed=args.seed,
    )


def _sample(rng: np.random.Generator, arr: np.ndarray, size: int) -> np.ndarray:
    if size <= 0 or size >= arr.shape[0]:
        return arr
    rows = np.sort(rng.choice(arr.shape[0], size=size, replace=False))
    return arr[rows]


def _encode_all(pq: ProductQuantizer, base: np.ndarray) -> np.ndarray:
    codes = np.empty((base.shape[0], pq.m), dtype=pq.code_dtype)
    for start in range(0, base.shape[0], _ENCODE_CHUNK):
        stop = min(start + _ENCODE_CHUNK, base.shape[0])
        codes[start:stop] = encode(pq, base[start:stop])
    return codes


def cmd_generate(args) -> int:
    vecs = generate_synthetic(args.n, args.d, args.clusters, args.seed)
    if args.kind == "bvecs":
        vecs = np.clip(np.rint(vecs), 0, 255).astype(np.uint8)
    write_vecs(args.out, vecs, args.kind)
    print(f"wrote {args.n} x {args.d} {args.kind} to {args.out}")
    return 0


def cmd_train(args) -> int:
    base = _read_auto(args.base)
    rng = np.random.default_rng(args.seed)
    training = _sample(rng, base, args.sample).astype(np.float64)
    cfg = _train_cfg(args)
    if args.bderived is not None:
        if args.opq:
            raise ValueError("derived quantizers do not support a rotation")
        dpq = train_derived(training, args.m, args.b, args.bderived, cfg)
        save_derived(args.out, dpq)
        print(f"trained derived {args.m}x{args.bderived},{args.b} -> {args.out}")
    elif args.opq:
        pq = train_opq(training, args.m, args.b, cfg)
        save_quantizer(args.out, pq)
        print(f"trained opq {args.m}x{args.b} -> {args.out}")
    else:
        pq = train_pq(training, args.m, args.b, cfg)
        save_quantizer(args.out, pq)
        print(f"trained pq {args.m}x{args.b} -> {args.out}")
    return 0


def cmd_encode(args) -> int:
    base = _read_auto(args.base).astype(np.float64)
    quant = load_quantizer_any(args.quantizer)
    pq = quant.pq if isinstance(quant, DerivedPQ) else quant
    codes = _encode_all(pq, base)
    save_codes(args.out, CodeList(codes), pq.b)
    print(f"encoded {base.shape[0]} codes -> {args.out}")
    return 0


def cmd_build_ivf(args) -> int:
    base = _read_auto(args.base).astype(np.float64)
    index = build_ivf(
        base,
        args.K,
        args.m,
        args.b,
        cfg=_train_cfg(args),
        use_opq=args.opq,
        bderived=args.bderived,
    )
    save_ivf(args.out, index)
    print(f"built ivf K={args.K} over {index.n} codes -> {args.out}")
    return 0


def cmd_ground_truth(args) -> int:
    base = _read_auto(args.base).astype(np.float64)
    queries = _read_auto(args.queries).astype(np.float64)
    truth = exact_knn(base, queries, args.k)
    write_vecs(args.out, truth.ids.astype(np.int32), "ivecs")
    if args.distances_out:
        write_vecs(args.distances_out, truth.distances.astype(np.float32), "fvecs")
    print(f"wrote {truth.n_queries} x {args.k} ground truth to {args.out}")
    return 0


def _load_truth(path: str, n_queries: int) -> GroundTruth:
    ids = _read_auto(path)
    if ids.shape[0] < n_queries:
        raise ValueError(
            f"ground truth covers {ids.shape[0]} queries, need {n_queries}"
        )
    ids = ids[:n_queries].astype(np.int64)
    return GroundTruth(ids=ids, distances=np.zeros(ids.shape, dtype=np.float64))


def _exhaustive_search_fn(args, quant, codelist: CodeList):
    """Returns (per-query search fn -> (NeighborSet, checked, pruned), codes/query)."""
    kernel, r = args.kernel, args.r
    if kernel == "adc":
        pq = quant.pq if isinstance(quant, DerivedPQ) else quant

        def run(q):
            nset = scan(codelist, compute_tables(pq, q), r)
            return nset, codelist.n, 0

    elif kernel == "fast-scan":
        pq = quant.pq if isinstance(quant, DerivedPQ) else quant
        if pq.m != 8 or pq.b != 8:
            raise ValueError("fast-scan requires m=8, b=8")
        grouped = group_codes(codelist)
        init = args.init / 100.0

        def run(q):
            nset, stats = fast_scan(grouped, compute_tables(pq, q), init, r)
            return nset, stats.checked, stats.pruned

    elif kernel == "quick-adc":
        pq = quant.pq if isinstance(quant, DerivedPQ) else quant
        if pq.b != 4 or pq.m % 2:
            raise ValueError("quick-adc requires b=4 and even m")
        tlist = transpose_blocks(codelist, 4)
        init_count = min(args.init_count, codelist.n)

        def run(q):
            nset, qt = qadc_scan(tlist, compute_tables(pq, q), init_count, r)
            rescaled = NeighborSetRescaler(nset, qt)
            return rescaled, codelist.n, 0

    elif kernel == "derived":
        if not isinstance(quant, DerivedPQ):
            raise ValueError("derived kernel needs a derived quantizer file")
        r2 = args.r2 if args.r2 is not None else default_r2(r)

        def run(q):
            nset = search_two_pass(quant, codelist, q, r, r2)
            return nset, codelist.n, 0

    else:
        raise ValueError(f"unknown kernel {kernel}")
    return run


class NeighborSetRescaler:
    """Wraps a quantized-distance neighbor set, reporting float distances."""

    def __init__(self, nset, qt):
        self._nset = nset
        self._qt = qt

    def items(self):
        return [(float(self._qt.rescale(d)), i) for d, i in self._nset.items()]


def cmd_query(args) -> int:
    queries = _read_auto(args.queries).astype(np.float64)
    # validate inputs and build the search closure before any output
    if args.index:
        index = load_ivf(args.index)
        if args.kernel == "fast-scan":
            raise ValueError("fast-scan is not available under an inverted index")
        r2 = args.r2 if args.r2 is not None else default_r2(args.r)
        results = [
            query_ivf(
                index,
                q,
                args.ma,
                args.r,
                kernel=args.kernel,
                init_count=args.init_count,
                r2=r2,
            )
            for q in queries
        ]
    else:
        if not (args.codes and args.quantizer):
            raise ValueError("need either --index or both --codes and --quantizer")
        quant = load_quantizer_any(args.quantizer)
        codelist, _ = load_codes(args.codes)
        run = _exhaustive_search_fn(args, quant, codelist)
        results = [run(q)[0] for q in queries]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(("query", "rank", "id", "distance"))
    for qi, nset in enumerate(results):
        for rank, (dist, ident) in enumerate(nset.items()):
            writer.writerow((qi, rank, ident, f"{dist:.9g}"))
    return 0


def _run_timed(run, queries: np.ndarray, threads: int):
    def timed(q):
        t0 = time.perf_counter()
        out = run(q)
        return time.perf_counter() - t0, out

    run(queries[0])
    if threads <= 1:
        return [timed(q) for q in queries]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(timed, queries))


def cmd_bench(args) -> int:
    base = _read_auto(args.base).astype(np.float64)
    if base.shape[0] == 0:
        raise ValueError("empty base")
    queries = _read_auto(args.queries).astype(np.float64)
    if queries.shape[0] == 0:
        raise ValueError("empty query set")
    if not args.truth:
        raise ValueError("recall reporting requires --truth")
    truth = _load_truth(args.truth, queries.shape[0])
    cfg = _train_cfg(args)
    rng = np.random.default_rng(args.seed)
    r = args.r
    r2_used = ""
    if args.K:
        if args.kernel == "fast-scan":
            raise ValueError("fast-scan is not available under an inverted index")
        index = build_ivf(
            base,
            args.K,
            args.m,
            args.b,
            cfg=cfg,
            use_opq=args.opq,
            bderived=args.bderived,
        )
        r2 = args.r2 if args.r2 is not None else default_r2(r)
        if args.kernel == "derived":
            r2_used = r2
        coarse64 = index.coarse.astype(np.float64)

        def run(q):
            nset = query_ivf(
                index,
                q,
                args.ma,
                r,
                kernel=args.kernel,
                init_count=args.init_count,
                r2=r2,
            )
            cells, _ = nearest_k(q[None, :], coarse64, args.ma)
            visited = sum(index.lists[int(c)].n for c in cells[0])
            return nset, visited, 0

        method = f"ivf-{args.kernel}"
        k_col, ma_col = args.K, args.ma
    else:
        training = _sample(rng, base, 100 * (1 << args.b)).astype(np.float64)
        if args.kernel == "derived":
            if args.bderived is None:
                raise ValueError("derived kernel requires --bderived")
            quant = train_derived(training, args.m, args.b, args.bderived, cfg)
            r2_used = args.r2 if args.r2 is not None else default_r2(r)
        elif args.opq:
            quant = train_opq(training, args.m, args.b, cfg)
        else:
            quant = train_pq(training, args.m, args.b, cfg)
        pq = quant.pq if isinstance(quant, DerivedPQ) else quant
        codelist = CodeList(_encode_all(pq, base))
        run = _exhaustive_search_fn(args, quant, codelist)
        method = args.kernel
        k_col, ma_col = "", ""

    outcomes = _run_timed(run, queries, args.threads)
    times = np.array([t for t, _ in outcomes], dtype=np.float64)
    result_ids = np.full((queries.shape[0], r), -1, dtype=np.int64)
    pruned_total = 0
    scanned_total = 0
    for qi, (_, (nset, scanned, pruned)) in enumerate(outcomes):
        pairs = nset.items()
        for rank, (_, ident) in enumerate(pairs[:r]):
            result_ids[qi, rank] = ident
        scanned_total += scanned
        pruned_total += pruned
    recall = recall_at_r(result_ids, truth, r)
    mean_ms = float(times.mean() * 1e3)
    median_ms = float(np.median(times) * 1e3)
    mcodes = (scanned_total + pruned_total) / float(times.sum()) / 1e6
    pruned_col = ""
    if args.kernel == "fast-scan":
        pruned_col = f"{pruned_total / (scanned_total + pruned_total):.4f}"
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(BENCH_HEADER)
    writer.writerow(
        (
            method,
            args.m,
            args.b,
            k_col,
            ma_col,
            r,
            r2_used,
            f"{recall:.4f}",
            f"{mean_ms:.3f}",
            f"{median_ms:.3f}",
            f"{mcodes:.2f}",
            pruned_col,
        )
    )
    if args.csv:
        write_recall_csv(
            args.csv,
            [(method, args.m, args.b, r, f"{recall:.4f}", f"{mean_ms:.3f}")],
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pqscan",
        description="Product-quantization nearest-neighbor toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic fvecs/bvecs dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--clusters", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=("fvecs", "bvecs"), default="fvecs")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a (derived/optimized) product quantizer")
    p.add_argument("--base", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--bderived", type=int, default=None)
    p.add_argument("--opq", action="store_true")
    p.add_argument("--sample", type=int, default=0, help="training rows (0 = all)")
    p.add_argument("--iters", type=int, default=25)
    p.add_argument("--opq-iters", dest="opq_iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("encode", help="encode vectors into a code list")
    p.add_argument("--base", required=True)
    p.add_argument("--quantizer", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("build-ivf", help="build an inverted index")
    p.add_argument("--base", required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--bderived", type=int, default=None)
    p.add_argument("--opq", action="store_true")
    p.add_argument("--iters", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_ivf)

    p = sub.add_parser("ground-truth", help="exact nearest neighbors to ivecs")
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--distances-out", dest="distances_out", default=None)
    p.set_defaults(fn=cmd_ground_truth)

    p = sub.add_parser("query", help="search and print id,distance rows")
    p.add_argument("--queries", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--codes", default=None)
    p.add_argument("--quantizer", default=None)
    p.add_argument("--r", type=int, default=10)
    p.add_argument("--ma", type=int, default=8)
    p.add_argument(
        "--kernel",
        choices=("adc", "fast-scan", "quick-adc", "derived"),
        default="adc",
    )
    p.add_argument("--r2", type=int, default=None)
    p.add_argument("--init", type=float, default=0.5, help="fast-scan prefix, percent")
    p.add_argument("--init-count", dest="init_count", type=int, default=DEFAULT_INIT_COUNT)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("bench", help="time a kernel and report a CSV row")
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--bderived", type=int, default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--ma", type=int, default=8)
    p.add_argument("--r", type=int, default=100)
    p.add_argument("--r2", type=int, default=None)
    p.add_argument("--init", type=float, default=0.5, help="fast-scan prefix, percent")
    p.add_argument("--init-count", dest="init_count", type=int, default=DEFAULT_INIT_COUNT)
    p.add_argument(
        "--kernel",
        choices=("adc", "fast-scan", "quick-adc", "derived"),
        default="adc",
    )
    p.add_argument("--opq", action="store_true")
    p.add_argument("--iters", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--csv", default=None)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (FormatError, TrainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
