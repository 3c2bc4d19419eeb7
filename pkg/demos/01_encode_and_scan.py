"""
Compressing vectors to short codes and scanning them
====================================================

Train a product quantizer on synthetic descriptors, encode a base set to
compact codes, then answer a nearest-neighbor query with table lookups only.
"""

import numpy as np

from pqscan import (
    CodeList,
    TrainConfig,
    compute_tables,
    decode,
    encode,
    exact_knn,
    generate_synthetic,
    scan,
    train_pq,
)

# 20K byte-scale descriptors in 32 dims, drawn from 256 Gaussian blobs.
# The last 5 rows are held out as queries.
rows = generate_synthetic(20_005, 32, 256, seed=0)
base, queries = rows[:20_000], rows[20_000:]

# An 8x8 quantizer splits each vector into 8 sub-vectors of 4 dims and
# learns 256 centroids per sub-space, so one vector becomes 8 bytes.
cfg = TrainConfig(kmeans_iters=12, seed=1)
pq = train_pq(base, m=8, b=8, cfg=cfg)
codes = encode(pq, base)
print(f"compressed {base.nbytes // 1024} KiB of floats "
      f"to {codes.nbytes // 1024} KiB of codes")

# decode() reconstructs the centroid concatenation; the gap to the original
# vector is the quantization error that bounds search accuracy.
err = np.linalg.norm(base[:100] - decode(pq, codes[:100]), axis=1)
print(f"mean reconstruction error over 100 vectors: {err.mean():.2f}")

# A query never touches the base vectors again: distances come from per
# sub-space lookup tables, summed across the 8 components of each code.
codelist = CodeList(codes)
truth = exact_knn(base, queries, 1)
for qi, q in enumerate(queries):
    tables = compute_tables(pq, q)
    top = scan(codelist, tables, r=100)
    ids = [i for _, i in top.items()]
    nn = int(truth.ids[qi, 0])
    rank = ids.index(nn) if nn in ids else None
    where = f"rank {rank}" if rank is not None else "past rank 100"
    print(f"query {qi}: true nearest neighbor (id {nn}) found at {where} "
          f"of the code scan")
