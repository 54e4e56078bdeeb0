import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nextpoi.dataset import (CheckIn, Sample, TrajectorySplit, build_relation_matrices, dumps_dataset,
                             filter_dataset, load_dataset, make_splits, read_checkin_tsv, relation_scales,
                             save_dataset, sessionize, split_long_short, split_train_val_test)
from nextpoi.trajectory import InputFormatError, haversine, haversine_matrix

from oracles import filter_fixed_point, relation_loops, walk_sessions

H = 3600


def _seq(times, locs=None, user=0):
    locs = locs or [0] * len(times)
    return [CheckIn(user, l, t, 0) for l, t in zip(locs, times)]


def test_sessionize_one_session():
    assert [len(s) for s in sessionize(_seq([0, H, 2 * H]))] == [3]


def test_sessionize_gap_25h():
    assert [len(s) for s in sessionize(_seq([0, 25 * H]))] == [1, 1]


def test_sessionize_mixed_trace_matches_walk():
    # 23 h and 24 h after the first stay in the session; 24 h + 1 s opens a new one
    times = [0, 23 * H, 24 * H, 24 * H + 1, 30 * H, 49 * H, 100 * H, 101 * H]
    got = [[times.index(c.time) for c in s] for s in sessionize(_seq(times))]
    assert got == walk_sessions(times) == [[0, 1, 2], [3, 4], [5], [6, 7]]


@given(st.lists(st.integers(0, 10 * 86_400), max_size=40))
def test_sessionize_idempotent(raw):
    seq = _seq(sorted(raw))
    sessions = sessionize(seq)
    again = [t for s in sessions for t in sessionize(s)]
    assert again == sessions
    assert [[c.time for c in s] for s in sessions] == [[sorted(raw)[i] for i in idx]
                                                      for idx in walk_sessions(sorted(raw))]


def _user_sessions(rng, users=10, pois=10):
    out = {}
    t0 = 0
    for u in range(users):
        sess = []
        for _ in range(int(rng.integers(2, 7))):
            n = int(rng.integers(2, 7))
            sess.append([CheckIn(u, int(rng.integers(0, pois)), t0 + k, 0) for k in range(n)])
            t0 += 100_000
        out[f"u{u}"] = sess
    return out


def test_filter_removes_rare_poi():
    s = {"a": [_seq([0, 1, 2], [0, 0, 0]), _seq([10, 11, 12], [0, 0, 1]), _seq([20, 21, 22], [9, 1, 1])],
         "b": [_seq([0, 1, 2], [1, 1, 0]), _seq([10, 11, 12], [1, 1, 0]), _seq([20, 21, 22], [0, 9, 0])]}
    # loc 9 has 2 visits and is removed, which drops both third sessions and then both users
    with pytest.raises(ValueError, match="empty dataset"):
        filter_dataset(s)
    s["a"][2] = _seq([20, 21, 22], [0, 1, 1])
    s["b"][2] = _seq([20, 21, 22], [0, 1, 0])
    out, lmap = filter_dataset(s)
    assert lmap == {0: 0, 1: 1}
    assert sorted(out) == ["a", "b"]


def test_filter_removes_user_with_two_sessions():
    s = {"a": [_seq([0, 1, 2])] * 3, "b": [_seq([0, 1, 2])] * 2}
    out, _ = filter_dataset(s)
    assert list(out) == ["a"]


def test_filter_matches_round_robin_oracle():
    rng = np.random.default_rng(1)
    nonempty = 0
    for _ in range(30):
        raw = _user_sessions(rng)
        plain = {u: [[(c.location, c.time) for c in s] for s in ss] for u, ss in raw.items()}
        ref = filter_fixed_point(plain)
        try:
            out, lmap = filter_dataset(raw)
        except ValueError:
            assert not ref
            continue
        inverse = {v: k for k, v in lmap.items()}
        got = {u: [[(inverse[c.location], c.time) for c in s] for s in ss] for u, ss in out.items()}
        assert got == ref
        nonempty += 1
        assert sorted(lmap.values()) == list(range(len(lmap)))
        again, second = filter_dataset(out)
        assert again == out
        assert second == {i: i for i in range(len(lmap))}
    assert nonempty >= 10


def test_splits_m4_and_m10():
    train, val, test = split_train_val_test(_seq(list(range(4)), [0, 1, 2, 3]))
    assert len(train) == 1 and train[0].label == 1 and len(train[0].inputs) == 1
    assert val.label == 2 and test.label == 3
    train, _, _ = split_train_val_test(_seq(list(range(10)), list(range(10))))
    assert len(train) == 7
    # labels are check-ins 2..m-2 (1-based)
    assert [s.label for s in train] == list(range(1, 8))


def test_split_short_user_skipped(caplog):
    with caplog.at_level(logging.WARNING):
        assert split_train_val_test(_seq([0, 1, 2])) is None
    assert "skipped" in caplog.text


def test_samples_have_no_leakage(periodic):
    splits = make_splits(periodic)
    for smp in splits.train + splits.val + splits.test:
        assert smp.query_time > max(c.time for c in smp.inputs)


def test_long_short_single_session():
    sp = split_long_short(_seq([0, H, 2 * H, 3 * H, 4 * H]))
    assert sp.long == [] and len(sp.short) == 5


def test_long_short_two_sessions():
    times = [k * H for k in range(8)] + [100 * H, 101 * H, 102 * H]
    sp = split_long_short(_seq(times))
    assert (len(sp.long), len(sp.short)) == (8, 3)


def test_long_short_truncation():
    seq = _seq([k * 10 * H for k in range(150)])
    sp = split_long_short(seq, max_len=100)
    assert sp.long + sp.short == seq[50:]


def test_long_short_fallback_to_last_ten():
    seq = _seq([k * 60 for k in range(30)])
    sp = split_long_short(seq)
    assert (len(sp.long), len(sp.short)) == (20, 10)


@given(st.lists(st.integers(0, 40 * 86_400), min_size=1, max_size=130), st.integers(1, 120))
def test_long_short_concatenation(raw, max_len):
    seq = _seq(sorted(raw))
    sp = split_long_short(seq, max_len=max_len)
    assert sp.long + sp.short == seq[-max_len:]
    assert len(sp.short) >= 1
    assert len(sp.long) + len(sp.short) <= max_len


def _dist_for(coords):
    def f(a, b):
        return haversine(tuple(coords[a]), tuple(coords[b]))
    return f


def test_relation_matrices_match_loops():
    rng = np.random.default_rng(4)
    coords = np.column_stack([rng.uniform(40, 41, 9), rng.uniform(-74, -73, 9)])
    dist = haversine_matrix(coords[:, 0], coords[:, 1], coords[:, 0], coords[:, 1])
    times = sorted(int(x) for x in rng.integers(0, 10 * 86_400, 12))
    locs = [int(x) for x in rng.integers(0, 9, 12)]
    seq = [CheckIn(0, l, t, 0) for l, t in zip(locs, times)]
    qt = times[-1] + 5000
    sp = split_long_short(seq, query_time=qt)
    cands = [3, 0, 8]
    long, short = build_relation_matrices(sp, dist, cands, t_scale=7.0, s_scale=3.0)
    for part, rel in ((sp.long, long), (sp.short, short)):
        dt, ds, cdt, cds = relation_loops([c.time for c in part], [c.location for c in part],
                                          _dist_for(coords), qt, cands)
        np.testing.assert_allclose(rel.dt, dt / 7.0, rtol=0, atol=1e-12)
        np.testing.assert_allclose(rel.ds, ds / 3.0, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(rel.cand_dt, cdt / 7.0, rtol=0, atol=1e-12)
        np.testing.assert_allclose(rel.cand_ds, cds / 3.0, rtol=1e-9, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 20 * 86_400)), min_size=1, max_size=15))
def test_relation_matrix_properties(items):
    coords = np.array([[40.0 + 0.01 * i, -74.0 + 0.02 * i] for i in range(6)])
    dist = haversine_matrix(coords[:, 0], coords[:, 1], coords[:, 0], coords[:, 1])
    items = sorted(items, key=lambda x: x[1])
    seq = [CheckIn(0, l, t, 0) for l, t in items]
    for rel in build_relation_matrices(split_long_short(seq), dist):
        for m in (rel.dt, rel.ds):
            assert np.array_equal(m, m.T)
            assert np.all(np.diag(m) == 0)
        for m in (rel.dt, rel.ds, rel.cand_dt, rel.cand_ds):
            assert np.all(np.isfinite(m)) and np.all(m >= 0)


def test_candidate_at_own_location_is_zero():
    dist = np.array([[0.0, 5.0], [5.0, 0.0]])
    sp = TrajectorySplit([], [CheckIn(0, 1, 100, 0)], 0, 100)
    _, short = build_relation_matrices(sp, dist, [1])
    assert short.cand_dt[0, 0] == 0 and short.cand_ds[0, 0] == 0


def test_relation_scales_clamped():
    dist = np.zeros((2, 2))
    smp = Sample(0, [CheckIn(0, 0, 10, 0)], 1, 10)
    assert relation_scales([smp], dist) == (1.0, 1.0)


def test_dataset_round_trip_bytes(tmp_path, periodic):
    a = tmp_path / "a.ds"
    b = tmp_path / "b.ds"
    save_dataset(a, periodic)
    save_dataset(b, load_dataset(a))
    assert a.read_bytes() == b.read_bytes()
    assert dumps_dataset(load_dataset(a)) == dumps_dataset(periodic)


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "x.ds"
    p.write_text("SOMETHING 1\n{}\n")
    with pytest.raises(ValueError, match="not a dataset"):
        load_dataset(p)


def test_periodic_dataset_invariants(periodic):
    assert periodic.num_users == 20 and periodic.num_locations == 12
    for u in range(periodic.num_users):
        seq = periodic.checkins(u)
        assert all(a.time < b.time for a, b in zip(seq, seq[1:]))
        assert all(0 <= c.location < periodic.num_locations and c.duration >= 0 for c in seq)


def test_read_checkin_tsv(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("b\tv2\tcat\t1.0\t2.0\t0\tTue Apr 03 18:00:09 +0000 2012\n"
                 "a\tv1\tcat\t3.0\t4.0\t-240\t100\n"
                 "a\tv2\tcat\t1.0\t2.0\t-240\t50\n")
    per_user, venues, coords = read_checkin_tsv(p)
    assert venues == ["v1", "v2"]
    assert [(c.location, c.time) for c in per_user["a"]] == [(1, 50), (0, 100)]
    assert per_user["b"][0].time == 1333476009
    np.testing.assert_array_equal(coords, [[3.0, 4.0], [1.0, 2.0]])


def test_read_checkin_tsv_bad_row(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("a\tv1\tcat\t3.0\t4.0\t0\t100\na\tv1\tcat\t3.0\n")
    with pytest.raises(InputFormatError, match="line 2"):
        read_checkin_tsv(p)
