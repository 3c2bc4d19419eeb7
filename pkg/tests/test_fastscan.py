import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqscan import (
    BINS,
    CodeList,
    GroupedDatabase,
    LookupTables,
    QuantParams,
    adc_distance,
    assignment_permutation,
    build_small_tables,
    compute_quant_params,
    compute_tables,
    encode,
    fast_scan,
    group_codes,
    group_key,
    load_grouped,
    lower_bound,
    optimize_centroid_assignment,
    pack_code,
    quantize,
    relabel_codes,
    same_size_kmeans,
    save_grouped,
    scan,
    scan_distances,
)

CODE_BYTES = np.array([0x3F, 0x11, 0x21, 0x00, 0xAB, 0xCD, 0xEF, 0x07], dtype=np.uint8)


def unpack_code(packed):
    """Inverse of pack_code, written independently."""
    out = np.empty(8, dtype=np.uint8)
    out[0] = packed[0] >> 4
    out[1] = packed[0] & 0x0F
    out[2] = packed[1] >> 4
    out[3] = packed[1] & 0x0F
    out[4:8] = packed[2:6]
    return out


def scalar_lower_bound(qtables, mins, code):
    """Saturating sum of group-relative lookups, scalar reference."""
    acc = 0
    for j in range(4):
        acc = min(acc + int(qtables[j][code[j]]), BINS)
    for j in range(4, 8):
        acc = min(acc + int(mins[j - 4][code[j] >> 4]), BINS)
    return acc


def small_instance(seed, n=400):
    rng = np.random.default_rng(seed)
    tables = LookupTables(rng.random((8, 256)).astype(np.float32) * 10)
    codes = rng.integers(0, 256, (n, 8)).astype(np.uint8)
    return tables, CodeList(codes)


# -- quantization ------------------------------------------------------------


def test_quantize_at_qmin_is_zero():
    p = QuantParams(2.0, 10.0)
    assert quantize(p, 2.0) == 0
    row = np.full(16, 2.0, dtype=np.float32)
    np.testing.assert_array_equal(quantize(p, row), np.zeros(16, dtype=np.uint8))


def test_quantize_saturates_at_qmax():
    p = QuantParams(0.0, 8.0)
    assert quantize(p, 8.0) == 127
    assert quantize(p, 100.0) == 127
    assert quantize(p, 7.9999) == 126


@given(st.floats(0, 1e6), st.floats(0, 1e6), st.floats(1e-3, 1e6))
@settings(max_examples=100, deadline=None)
def test_quantize_monotone(v1, v2, span):
    p = QuantParams(0.0, span)
    lo, hi = sorted((v1, v2))
    assert quantize(p, lo) <= quantize(p, hi)


def test_quant_params_r1_first_code_is_nn():
    tables, codelist = small_instance(0, n=50)
    dists = scan_distances(tables, codelist.codes)
    best = float(dists.min())
    order = np.argsort(dists, kind="stable")
    reordered = CodeList(codelist.codes[order])  # true NN first
    p = compute_quant_params(tables, reordered, init=1 / 50, r=1)
    assert p.qmax == best
    assert p.qmin == float(tables.tables.min())


def test_quant_params_rth_of_prefix():
    tables, codelist = small_instance(1, n=200)
    p = compute_quant_params(tables, codelist, init=0.5, r=10)
    prefix = scan_distances(tables, codelist.codes[:100])
    assert p.qmax == float(np.sort(prefix)[9])


def test_quant_params_fewer_than_r_uses_largest():
    tables, codelist = small_instance(2, n=20)
    p = compute_quant_params(tables, codelist, init=0.25, r=50)
    prefix = scan_distances(tables, codelist.codes[:5])
    assert p.qmax == float(prefix.max())


# -- centroid assignment -----------------------------------------------------


def test_assignment_identity_on_low_codebooks(pq88):
    perm = assignment_permutation(pq88)
    for j in range(4):
        np.testing.assert_array_equal(perm[j], np.arange(256))
    for j in range(4, 8):
        assert sorted(perm[j].tolist()) == list(range(256))


def test_assignment_clusters_become_blocks():
    # codebook built from 16 tight blobs: permutation must gather each blob
    # into one aligned 16-block (order inside and among blocks is free)
    rng = np.random.default_rng(3)
    centers = rng.normal(0, 50, (16, 2))
    books = np.empty((8, 256, 2), dtype=np.float32)
    labels = np.repeat(np.arange(16), 16)
    for j in range(8):
        books[j] = centers[labels] + rng.normal(0, 0.01, (256, 2))
    from pqscan import ProductQuantizer

    pq = ProductQuantizer(m=8, b=8, d=16, codebooks=books)
    perm = assignment_permutation(pq)
    _, expect = same_size_kmeans(books[5].astype(np.float64), 16)
    expect_sets = {frozenset(g.tolist()) for g in expect}
    got_sets = {
        frozenset(perm[5][blk * 16 : (blk + 1) * 16].tolist()) for blk in range(16)
    }
    assert got_sets == expect_sets


def test_optimize_assignment_idempotent_min_tables(pq88, queries):
    once = optimize_centroid_assignment(pq88)
    twice = optimize_centroid_assignment(once)
    q = queries[0]
    for pq in (once, twice):
        tables = compute_tables(pq, q)
        params = QuantParams(float(tables.tables.min()), float(tables.tables.max()))
        s1 = build_small_tables(tables, params, (0, 0, 0, 0))
        if pq is once:
            mins_once = s1.tables[4:8].copy()
        else:
            mins_twice = s1.tables[4:8]
    np.testing.assert_array_equal(np.sort(mins_once, 1), np.sort(mins_twice, 1))


def test_relabel_codes_round_trips_decode(pq88, blob_data):
    from pqscan import decode

    opt = optimize_centroid_assignment(pq88)
    codes = encode(pq88, blob_data[:100])
    perm = assignment_permutation(pq88)
    relabeled = relabel_codes(codes, perm)
    np.testing.assert_allclose(
        decode(pq88, codes), decode(opt, relabeled), atol=1e-6
    )


# -- grouping and packing ----------------------------------------------------


def test_group_key_paper_example():
    assert group_key(CODE_BYTES) == (3, 1, 2, 0)


def test_pack_code_layout():
    packed = pack_code(CODE_BYTES)
    assert packed.shape == (6,)
    assert packed[0] == 0xF1  # low nibbles of 0x3f, 0x11
    assert packed[1] == 0x10  # low nibbles of 0x21, 0x00
    np.testing.assert_array_equal(packed[2:6], CODE_BYTES[4:8])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_pack_unpack_low_nibbles(seed):
    rng = np.random.default_rng(seed)
    code = rng.integers(0, 256, 8).astype(np.uint8)
    packed = pack_code(code)
    back = unpack_code(packed)
    np.testing.assert_array_equal(back[:4], code[:4] & 0x0F)
    np.testing.assert_array_equal(back[4:], code[4:])


def test_group_codes_single_group():
    codes = np.tile(CODE_BYTES, (7, 1))
    g = group_codes(CodeList(codes))
    assert g.n_groups == 1
    assert g.counts[0] == 7
    np.testing.assert_array_equal(g.keys[0], [3, 1, 2, 0])


def test_group_codes_multiset_round_trip(codes88):
    g = group_codes(codes88)
    back = g.ungroup()
    order = np.argsort(back.ids)
    np.testing.assert_array_equal(back.codes[order], codes88.codes)
    np.testing.assert_array_equal(back.ids[order], codes88.ids)
    # keys ascending and counts consistent
    assert g.counts.sum() == codes88.n
    merged = (
        (g.keys[:, 0].astype(np.int64) << 12)
        | (g.keys[:, 1].astype(np.int64) << 8)
        | (g.keys[:, 2].astype(np.int64) << 4)
        | g.keys[:, 3].astype(np.int64)
    )
    assert (np.diff(merged) > 0).all()


# -- small tables and lower bounds -------------------------------------------


def test_min_table_paper_example():
    # first 16-entry portion of table 4 has minimum 1 before quantization
    tables = np.ones((8, 256), dtype=np.float32) * 50
    portion = np.array([2, 5, 9, 30, 7, 4, 12, 8, 3, 6, 11, 19, 21, 14, 17, 1])
    tables[4, :16] = portion
    lt = LookupTables(tables)
    params = QuantParams(0.0, 127.0)  # identity-ish mapping: floor(v)
    small = build_small_tables(lt, params, (0, 0, 0, 0))
    assert small.tables[4][0] == quantize(params, 1.0) == 1


def test_small_tables_group_portions():
    tables, _ = small_instance(5)
    params = QuantParams(float(tables.tables.min()), float(tables.tables.max()))
    key = (3, 0, 15, 7)
    small = build_small_tables(tables, params, key)
    qt = quantize(params, tables.tables)
    for j in range(4):
        np.testing.assert_array_equal(
            small.tables[j], qt[j][key[j] * 16 : (key[j] + 1) * 16]
        )
    for j in range(4, 8):
        np.testing.assert_array_equal(
            small.tables[j], qt[j].reshape(16, 16).min(axis=1)
        )


def test_lower_bound_zero_tables():
    small = build_small_tables(
        LookupTables(np.zeros((8, 256), dtype=np.float32)),
        QuantParams(0.0, 1.0),
        (0, 0, 0, 0),
    )
    assert lower_bound(small, pack_code(CODE_BYTES)) == 0


def test_lower_bound_soundness_exhaustive():
    # soundness oracle: lb <= quantize(adc) for every code, several instances
    for seed in range(4):
        tables, codelist = small_instance(seed, n=2500)
        params = compute_quant_params(tables, codelist, init=0.1, r=10)
        qt = quantize(params, tables.tables)
        mins = qt[4:8].reshape(4, 16, 16).min(axis=2)
        for code in codelist.codes:
            small = build_small_tables(tables, params, group_key(code))
            lb = lower_bound(small, pack_code(code))
            assert lb == scalar_lower_bound(qt, mins, code)
            assert lb <= int(quantize(params, adc_distance(tables, code)))


def test_fast_scan_equals_scan(pq88, codes88, queries):
    opt = optimize_centroid_assignment(pq88)
    relab = CodeList(relabel_codes(codes88.codes, assignment_permutation(pq88)))
    g = group_codes(relab)
    for q in queries:
        tables = compute_tables(opt, q)
        for r in (1, 10, 100):
            base = scan(relab, tables, r)
            got, stats = fast_scan(g, tables, 0.05, r)
            assert got.items() == base.items()
            assert stats.checked + stats.pruned == stats.total == relab.n


@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.sampled_from([1, 3, 10]))
@settings(max_examples=25, deadline=None)
def test_fast_scan_property(seed, n, r):
    rng = np.random.default_rng(seed)
    tables = LookupTables(rng.random((8, 256)).astype(np.float32))
    codes = rng.integers(0, 256, (n, 8)).astype(np.uint8)
    codelist = CodeList(codes)
    init = float(rng.uniform(0.01, 1.0))
    base = scan(codelist, tables, r)
    got, _ = fast_scan(group_codes(codelist), tables, init, r)
    assert got.items() == base.items()


def test_fast_scan_small_groups_still_exact(pq88, blob_data, queries):
    # groups far below 50 codes: correctness must hold regardless
    codelist = CodeList(encode(pq88, blob_data[:40]))
    g = group_codes(codelist)
    assert (g.counts < 50).all()
    tables = compute_tables(pq88, queries[0])
    got, _ = fast_scan(g, tables, 0.5, 5)
    assert got.items() == scan(codelist, tables, 5).items()


def test_grouped_file_round_trip(tmp_path, codes88):
    g = group_codes(codes88)
    path = tmp_path / "g.pqg"
    save_grouped(path, g)
    back = load_grouped(path)
    np.testing.assert_array_equal(back.keys, g.keys)
    np.testing.assert_array_equal(back.offsets, g.offsets)
    np.testing.assert_array_equal(back.counts, g.counts)
    np.testing.assert_array_equal(back.packed, g.packed)
    np.testing.assert_array_equal(back.ids, g.ids)
