import heapq
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from extbisim.iomodel import (
    BlockCachedArray, BlockDevice, BudgetExceeded, EmptyQueueError, ExternalPriorityQueue,
    ExternalSequence, FormatError, KiB, MachineConfig, MiB, SpillBuffer, external_sort,
    scan_cost, sort_cost_bound,
)

REC = np.dtype([("k", "<u8"), ("v", "<u8")])


def make(n, keys, vals=None):
    a = np.zeros(n, dtype=REC)
    a["k"] = keys
    a["v"] = np.arange(n) if vals is None else vals
    return a


class TestCostModel:
    def test_scan_cost(self):
        cfg = MachineConfig(1000, 100)
        assert scan_cost(0, 8, cfg) == 0
        assert scan_cost(125, 8, cfg) == 10
        assert scan_cost(1001, 1, cfg) == 11

    def test_scan_cost_negative(self):
        with pytest.raises(ValueError):
            scan_cost(-1, 8, MachineConfig(1000, 100))

    def test_config_needs_three_blocks(self):
        with pytest.raises(ValueError):
            MachineConfig(200, 100)

    def test_budget_shares(self):
        dev = BlockDevice(MachineConfig(10 * KiB, KiB))
        try:
            with dev.budget.share("a", 6 * KiB):
                with pytest.raises(BudgetExceeded):
                    dev.budget.reserve("b", 5 * KiB)
            assert dev.budget.used == 0
        finally:
            dev.close()

    def test_temp_dir_removed(self, tmp_path):
        dev = BlockDevice(MachineConfig(MiB, KiB, str(tmp_path)))
        seq = ExternalSequence.from_array(dev, make(10, np.arange(10)))
        d = dev.directory
        assert os.path.exists(seq.path)
        dev.close()
        assert not os.path.exists(d)


class TestSequence:
    def test_roundtrip_and_io_counts(self, device):
        data = make(10_000, np.arange(10_000))
        before = device.stats.copy()
        seq = ExternalSequence.from_array(device, data)
        w = device.stats - before
        assert w.writes == scan_cost(len(data), REC.itemsize, device.cfg)
        before = device.stats.copy()
        assert np.array_equal(seq.read_all(), data)
        r = device.stats - before
        assert r.reads == scan_cost(len(data), REC.itemsize, device.cfg)
        assert r.bytes_read == seq.nbytes

    def test_small_appends_are_block_aligned(self, device):
        seq = ExternalSequence.create(device, REC)
        for i in range(1000):
            seq.append(make(1, [i]))
        seq.finish()
        assert device.stats.writes == scan_cost(1000, REC.itemsize, device.cfg)
        assert np.array_equal(seq.read_all()["k"], np.arange(1000))

    def test_width_must_divide_block(self, device):
        with pytest.raises(ValueError):
            ExternalSequence.create(device, np.dtype([("a", "<u8"), ("b", "<u4")]))

    def test_magic_header(self, device, tmp_path):
        path = str(tmp_path / "x.bin")
        dt = np.dtype([("a", "<u8"), ("b", "<u4")])
        seq = ExternalSequence.create(device, dt, path=path, magic=b"EXBG1")
        arr = np.zeros(777, dtype=dt)
        arr["a"] = np.arange(777)
        seq.append(arr)
        seq.finish()
        back = ExternalSequence.open(device, dt, path, magic=b"EXBG1")
        assert len(back) == 777
        assert np.array_equal(back.read_all(), arr)
        with pytest.raises(FormatError):
            ExternalSequence.open(device, dt, path, magic=b"EXBE1")

    def test_truncated_file(self, device, tmp_path):
        path = str(tmp_path / "x.bin")
        seq = ExternalSequence.create(device, REC, path=path, magic=b"EXBP1")
        seq.append(make(10, np.arange(10)))
        seq.finish()
        with open(path, "r+b") as fh:
            fh.truncate(os.path.getsize(path) - 3)
        with pytest.raises(FormatError):
            ExternalSequence.open(device, REC, path, magic=b"EXBP1")

    def test_take_while_and_pushback(self, device):
        seq = ExternalSequence.from_array(device, make(5000, np.arange(5000) // 3))
        with seq.reader() as rd:
            got = rd.take_while("k", 9)
            assert len(got) == 30
            rd.pushback(got[-3:])
            assert int(rd.peek()["k"]) == 9
            rest = rd.next_chunk()
            assert int(rest[0]["k"]) == 9


class TestExternalSort:
    def test_reverse_sorted(self, device):
        seq = ExternalSequence.from_array(device, make(1000, np.arange(1000, 0, -1)))
        out = external_sort(seq, "k")
        assert np.array_equal(out.read_all()["k"], np.arange(1, 1001))

    def test_random_matches_in_memory(self, tmp_path):
        rng = np.random.default_rng(7)
        with BlockDevice(MachineConfig(MiB, 4 * KiB, str(tmp_path))) as dev:
            data = make(100_000, rng.integers(0, 5000, 100_000))
            seq = ExternalSequence.from_array(dev, data)
            before = dev.stats.copy()
            sorted_seq = external_sort(seq, "k")
            used = dev.stats - before
            out = sorted_seq.read_all()
            expected = data[np.argsort(data["k"], kind="stable")]
            assert np.array_equal(out, expected)
            assert used.total <= sort_cost_bound(len(data), REC.itemsize, dev.cfg)

    def test_multi_pass_is_stable(self, tiny_device):
        rng = np.random.default_rng(1)
        data = make(20_000, rng.integers(0, 50, 20_000))
        seq = ExternalSequence.from_array(tiny_device, data)
        out = external_sort(seq, "k").read_all()
        assert np.array_equal(out, data[np.argsort(data["k"], kind="stable")])
        assert tiny_device.budget.used == 0

    def test_already_sorted_two_passes(self, tmp_path):
        with BlockDevice(MachineConfig(4 * MiB, 64 * KiB, str(tmp_path))) as dev:
            data = make(1_000_000, np.arange(1_000_000))
            seq = ExternalSequence.from_array(dev, data)
            before = dev.stats.copy()
            out = external_sort(seq, "k")
            used = dev.stats - before
            blocks = scan_cost(len(data), REC.itemsize, dev.cfg)
            assert used.total <= 2 * 2 * blocks
            assert np.array_equal(out.read_all(), data)

    def test_lexicographic_key(self, tiny_device):
        rng = np.random.default_rng(3)
        data = make(5000, rng.integers(0, 20, 5000), rng.integers(0, 20, 5000))
        out = external_sort(ExternalSequence.from_array(tiny_device, data), ("k", "v")).read_all()
        assert np.array_equal(out, data[np.lexsort((data["v"], data["k"]))])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 30), max_size=3000))
    def test_permutation_property(self, keys):
        with BlockDevice(MachineConfig(8 * KiB, 512)) as dev:
            data = make(len(keys), keys)
            out = external_sort(ExternalSequence.from_array(dev, data), "k").read_all()
            assert sorted(map(tuple, out.tolist())) == sorted(map(tuple, data.tolist()))
            assert np.all(np.diff(out["k"].astype(np.int64)) >= 0)


class TestPriorityQueue:
    def test_heap_order(self, device):
        with ExternalPriorityQueue(device, REC, "k") as q:
            for k in (3, 1, 2):
                q.insert(k, 0)
            assert [q.extract_min()[0] for _ in range(3)] == [1, 2, 3]
            assert q.peek_min_key() is None
            with pytest.raises(EmptyQueueError):
                q.extract_min()

    def test_ties_follow_insertion_order(self, tiny_device):
        with ExternalPriorityQueue(tiny_device, REC, "k", budget_bytes=4 * KiB) as q:
            for i in range(3000):
                q.insert(i % 7, i)
            out = [q.extract_min() for _ in range(3000)]
            assert out == sorted(out, key=lambda r: r[0])
            for k in range(7):
                pays = [p[0] for kk, p in out if kk == k]
                assert pays == sorted(pays)

    def test_bulk_random_stream_sorted(self, tmp_path):
        rng = np.random.default_rng(11)
        with BlockDevice(MachineConfig(2 * MiB, 4 * KiB, str(tmp_path))) as dev:
            with ExternalPriorityQueue(dev, REC, "k", budget_bytes=256 * KiB) as q:
                keys = rng.integers(0, 1 << 40, 1_000_000)
                for i in range(0, len(keys), 50_000):
                    q.insert_many(make(50_000, keys[i:i + 50_000], np.arange(i, i + 50_000)))
                assert q.spilled_records > 0
                got = q.extract_until(1 << 62)
                assert len(got) == len(keys) and len(q) == 0
                assert np.all(np.diff(got["k"].astype(np.int64)) >= 0)
                assert np.array_equal(np.sort(got["v"]), np.arange(len(keys)))

    def test_replay_against_heapq(self, tiny_device):
        rng = np.random.default_rng(5)
        ref = []
        cursor = 0
        seq_no = 0
        with ExternalPriorityQueue(tiny_device, REC, "k", budget_bytes=4 * KiB) as q:
            for _ in range(100_000):
                if ref and rng.random() < 0.45:
                    want = heapq.heappop(ref)
                    got = q.extract_min()
                    assert got == (want[0], (want[2],))
                    cursor = want[0]
                else:
                    k = cursor + int(rng.integers(0, 200))
                    heapq.heappush(ref, (k, seq_no, seq_no))
                    q.insert(k, seq_no)
                    seq_no += 1
            assert len(q) == len(ref)
            assert q.spilled_records > 0

    def test_extract_until_interleaved(self, tiny_device):
        rng = np.random.default_rng(9)
        ref = []
        with ExternalPriorityQueue(tiny_device, REC, "k", budget_bytes=4 * KiB) as q:
            lo = 0
            for step in range(300):
                keys = lo + rng.integers(0, 500, int(rng.integers(0, 60)))
                batch = make(len(keys), keys, np.arange(len(keys)) + step * 1000)
                q.insert_many(batch)
                ref.extend(map(tuple, batch.tolist()))
                lo += int(rng.integers(0, 40))
                got = q.extract_until(lo)
                ref.sort(key=lambda r: r[0])
                expect = [r for r in ref if r[0] < lo]
                ref = [r for r in ref if r[0] >= lo]
                assert list(map(tuple, got.tolist())) == expect

    def test_composite_key(self, device):
        dt = np.dtype([("a", "<u4"), ("b", "<u4"), ("p", "<u8")])
        with ExternalPriorityQueue(device, dt, ("a", "b")) as q:
            q.insert((1, 5), 10)
            q.insert((0, 9), 11)
            q.insert((1, 2), 12)
            assert q.peek_min_key() == (0, 9)
            assert [q.extract_min()[1][0] for _ in range(3)] == [11, 12, 10]


class TestHelpers:
    def test_block_cached_array(self, tiny_device):
        arr = BlockCachedArray(tiny_device, np.uint64)
        ref = np.zeros(5000, dtype=np.uint64)
        rng = np.random.default_rng(2)
        for _ in range(3000):
            i = int(rng.integers(0, 5000))
            arr[i] = i * 3
            ref[i] = i * 3
        assert np.array_equal(arr.get_range(0, 5000), ref)
        arr.set_range(100, np.arange(400, dtype=np.uint64))
        ref[100:500] = np.arange(400)
        assert np.array_equal(arr.get_range(0, 5000), ref)
        arr.close()

    def test_block_cached_locality(self, device):
        arr = BlockCachedArray(device, np.uint64)
        per = arr.per_block
        for i in range(10 * per):
            arr[i] = arr[i] + 1
            if i:
                arr[i - 1]
        assert arr.misses <= 10
        arr.close()

    def test_spill_buffer(self, tiny_device):
        rng = np.random.default_rng(4)
        buf = SpillBuffer(tiny_device, REC, 2 * KiB)
        data = make(3000, rng.integers(0, 100, 3000))
        for i in range(0, 3000, 100):
            buf.append(data[i:i + 100])
        assert buf.spilled
        out = np.concatenate(list(buf.sorted_chunks("k")))
        assert np.array_equal(out, data[np.argsort(data["k"], kind="stable")])
        assert len(buf) == 0
