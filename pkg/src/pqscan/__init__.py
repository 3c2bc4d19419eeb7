"""Product-quantization nearest-neighbor search toolkit.

Short-code compression (PQ/OPQ), table-lookup scans, an inverted index over
residuals, and three accelerated scan kernels: a pruned exact scan over
grouped 8x8 codes, a quantized 4-bit block kernel, and a two-pass search
with derived low-resolution quantizers.
"""

from ._binio import FormatError
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
    CBINS,
    CappedBuckets,
    DerivedPQ,
    LazyTables,
    QuantizedCompactTables,
    adc_low_bits,
    build_derived_quantizers,
    compute_compact_tables,
    load_derived,
    load_quantizer_any,
    quantize_255,
    quantize_compact_tables,
    rerank,
    save_derived,
    scan_candidates,
    search_two_pass,
    train_derived,
)
from .fastscan import (
    BINS,
    GroupedDatabase,
    QuantParams,
    ScanStats,
    SmallTables,
    assignment_permutation,
    build_small_tables,
    compute_quant_params,
    fast_scan,
    group_codes,
    group_key,
    load_grouped,
    lower_bound,
    optimize_centroid_assignment,
    pack_code,
    quantize,
    relabel_codes,
    save_grouped,
)
from .ivf import IvfIndex, build_ivf, default_r2, load_ivf, query_ivf, save_ivf
from .quantizer import (
    ProductQuantizer,
    TrainConfig,
    TrainError,
    decode,
    encode,
    kmeans,
    load_quantizer,
    same_size_kmeans,
    save_quantizer,
    train_opq,
    train_pq,
)
from .quickadc import (
    DEFAULT_INIT_COUNT,
    QuantizedTables4,
    qadc_block,
    qadc_scan,
    quantize_tables_4bit,
    quantized_distances,
)
from .scan import (
    CodeList,
    LookupTables,
    NeighborSet,
    TransposedCodeList,
    adc_distance,
    compute_tables,
    detranspose_blocks,
    load_codes,
    save_codes,
    scan,
    scan_distances,
    transpose_blocks,
)

__version__ = "0.1.0"

__all__ = [
    "BINS",
    "CBINS",
    "CappedBuckets",
    "CodeList",
    "DEFAULT_INIT_COUNT",
    "DerivedPQ",
    "FormatError",
    "GroundTruth",
    "GroupedDatabase",
    "IvfIndex",
    "LazyTables",
    "LookupTables",
    "NeighborSet",
    "ProductQuantizer",
    "QuantParams",
    "QuantizedCompactTables",
    "QuantizedTables4",
    "ScanStats",
    "SmallTables",
    "TrainConfig",
    "TrainError",
    "TransposedCodeList",
    "adc_distance",
    "adc_low_bits",
    "assignment_permutation",
    "build_derived_quantizers",
    "build_ivf",
    "build_small_tables",
    "compute_compact_tables",
    "compute_quant_params",
    "compute_tables",
    "decode",
    "default_r2",
    "detranspose_blocks",
    "encode",
    "exact_knn",
    "fast_scan",
    "generate_synthetic",
    "group_codes",
    "group_key",
    "kmeans",
    "load_codes",
    "load_derived",
    "load_grouped",
    "load_ivf",
    "load_quantizer",
    "load_quantizer_any",
    "lower_bound",
    "optimize_centroid_assignment",
    "pack_code",
    "qadc_block",
    "qadc_scan",
    "quantize",
    "quantize_255",
    "quantize_compact_tables",
    "quantize_tables_4bit",
    "quantized_distances",
    "query_ivf",
    "read_vecs",
    "recall_at_r",
    "relabel_codes",
    "rerank",
    "same_size_kmeans",
    "save_codes",
    "save_derived",
    "save_grouped",
    "save_ivf",
    "save_quantizer",
    "scan",
    "scan_candidates",
    "scan_distances",
    "search_two_pass",
    "train_derived",
    "train_opq",
    "train_pq",
    "transpose_blocks",
    "write_recall_csv",
    "write_vecs",
]
