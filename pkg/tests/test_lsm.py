import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, rule

from hashkv.lsm import LsmConfig
from hashkv.lsm.bloom import BloomFilter
from hashkv.lsm.entry import IndexEntry, Kind, apply, decode_entry, encode_entry, encoded_size
from hashkv.lsm.sstable import Table, build_table
from hashkv.lsm.tree import LSMTree
from hashkv.record import Area, ValueLocation


def loc(off, n=100, area=Area.SEGMENT):
    return ValueLocation(area, off, n)


@pytest.fixture
def tree(tmp_path):
    t = LSMTree(str(tmp_path / "lsm"), LsmConfig(memtable_bytes=4096, l0_compaction_trigger=4))
    yield t
    t.close()


def disjoint(tree):
    for lvl in range(1, tree.cfg.max_levels):
        ts = sorted(tree.levels[lvl], key=lambda t: t.min_key)
        for a, b in zip(ts, ts[1:]):
            if not a.max_key < b.min_key:
                return False
    return True


def test_read_your_write(tree):
    tree.put(b"k", IndexEntry.inline(b"v"))
    e = tree.get(b"k")
    assert e.kind == Kind.INLINE and e.value == b"v"


def test_last_writer_wins(tree):
    tree.put(b"k", IndexEntry.at(loc(1)))
    tree.put(b"k", IndexEntry.at(loc(2)))
    assert tree.get(b"k").location == loc(2)


def test_never_written(tree):
    assert tree.get(b"nope") is None


def test_memtable_capacity_flushes_one_table(tmp_path):
    t = LSMTree(str(tmp_path / "x"), LsmConfig(memtable_bytes=2 << 20))
    entry = IndexEntry.inline(b"v" * 1000)
    per = encoded_size(b"k" * 24, entry)
    n = (2 << 20) // per + 1
    for i in range(n):
        t.put(b"%024d" % i, entry)
    assert len(t.levels[0]) == 1 and not t.mem
    t.close()


def test_l0_shadows_deeper_levels(tree):
    tree.put(b"k", IndexEntry.inline(b"old"))
    tree.flush_memtable()
    tree.compact(0)
    tree.compact(1)
    assert tree.levels[2] and not tree.levels[0]
    tree.put(b"k", IndexEntry.inline(b"new"))
    tree.flush_memtable()
    assert tree.levels[0]
    assert tree.get(b"k").value == b"new"


def test_scan_examples(tree):
    assert tree.scan(b"a", 3) == []
    for k in (b"a", b"b", b"c"):
        tree.put(k, IndexEntry.inline(k))
    assert [k for k, _ in tree.scan(b"a", 3)] == [b"a", b"b", b"c"]
    tree.put(b"b", IndexEntry.tombstone())
    assert [k for k, _ in tree.scan(b"a", 3)] == [b"a", b"c"]
    assert [k for k, _ in tree.scan(b"a", end=b"c")] == [b"a"]


def test_single_table_compaction_moves_it(tree):
    for i in range(10):
        tree.put(b"k%02d" % i, IndexEntry.inline(b"x" * 10))
    tree.flush_memtable()
    size = tree.levels[0][0].size
    st_ = tree.compact(0)
    assert not tree.levels[0] and len(tree.levels[1]) == 1
    assert st_["bytes_written"] == size


def test_compaction_dedups_versions(tree):
    tree.put(b"k", IndexEntry.inline(b"1"))
    tree.flush_memtable()
    tree.compact(0)
    tree.put(b"k", IndexEntry.inline(b"2"))
    tree.flush_memtable()
    tree.compact(0)
    assert [t.entries for t in tree.levels[1]] == [1]
    assert tree.get(b"k").value == b"2"


def test_tombstone_dropped_when_nothing_below(tree):
    tree.put(b"k", IndexEntry.inline(b"1"))
    tree.put(b"k", IndexEntry.tombstone())
    tree.flush_memtable()
    tree.compact(0)
    assert sum(t.entries for t in tree.all_tables()) == 0


def test_bloom_false_positive_still_not_found(tmp_path):
    items = [(b"key%05d" % i, IndexEntry.inline(b"v")) for i in range(0, 2000, 2)]
    path = tmp_path / "t.sst"
    path.write_bytes(build_table(items))
    t = Table(str(path), 1, 1)
    fp = [b"key%05d" % i for i in range(1, 2000, 2) if t.bloom.may_contain(b"key%05d" % i)]
    assert fp, "expected at least one bloom false positive among 1000 absent keys"
    for k in fp:
        assert t.get(k) is None
    t.close()


def test_bloom_has_no_false_negatives():
    keys = [random.Random(i).randbytes(20) for i in range(5000)]
    bf = BloomFilter.build(keys)
    assert all(bf.may_contain(k) for k in keys)
    again = BloomFilter.from_bytes(bf.to_bytes(), bf.k)
    assert all(again.may_contain(k) for k in keys)


@given(st.binary(min_size=1, max_size=40), st.integers(0, 2 ** 63), st.binary(max_size=300))
def test_entry_codec_round_trip(key, seq, value):
    for e in (IndexEntry.inline(value, seq), IndexEntry.at(loc(seq % 10 ** 9), seq), IndexEntry.tombstone(seq),
              IndexEntry.relocate(loc(1), loc(2, area=Area.COLD), seq)):
        buf = b"pre" + encode_entry(key, e)
        k, got, end = decode_entry(buf, 3)
        assert (k, got, end) == (key, e, len(buf))
        assert encoded_size(key, e) == len(buf) - 3


def test_relocate_applies_only_to_matching_source():
    base = IndexEntry.at(loc(10), 1)
    moved = apply(base, IndexEntry.relocate(loc(10), loc(20), 2))
    assert moved.kind == Kind.LOCATION and moved.location == loc(20)
    stale = apply(IndexEntry.at(loc(11), 3), IndexEntry.relocate(loc(10), loc(20), 4))
    assert stale.location == loc(11)
    assert apply(IndexEntry.tombstone(5), IndexEntry.relocate(loc(10), loc(20), 6)).kind == Kind.TOMBSTONE


def test_merge_prefers_newer_sources(tmp_path):
    # regression: late-bound priorities once made every source tie
    t = LSMTree(str(tmp_path / "m"), LsmConfig(memtable_bytes=1 << 20))
    t.put(b"a", IndexEntry.inline(b"old"))
    t.flush_memtable()
    t.put(b"a", IndexEntry.inline(b"mid"))
    t.flush_memtable()
    t.put(b"a", IndexEntry.inline(b"new"))
    assert t.scan(b"", 5)[0][1].value == b"new"
    t.flush_memtable()
    assert t.scan(b"", 5)[0][1].value == b"new"
    t.close()


def test_reopen_recovers_wal_and_tables(tmp_path):
    d = str(tmp_path / "r")
    t = LSMTree(d, LsmConfig(memtable_bytes=2048))
    for i in range(300):
        t.put(b"k%04d" % i, IndexEntry.inline(b"%d" % i))
    last = t.last_seq
    t.close()
    t2 = LSMTree(d, LsmConfig(memtable_bytes=2048))
    assert t2.last_seq >= last
    assert all(t2.get(b"k%04d" % i).value == b"%d" % i for i in range(300))
    t2.close()


def test_inline_write_amplification_grows(tmp_path):
    t = LSMTree(str(tmp_path / "wa"), LsmConfig(memtable_bytes=16 << 10, fanout=4))
    rng = random.Random(5)
    user = 0
    was = []
    for rnd in range(3):
        for _ in range(4000):
            k = b"%024d" % rng.randrange(20000)
            v = rng.randbytes(100)
            t.put(k, IndexEntry.inline(v))
            user += len(k) + len(v)
        was.append(t.io.total_written / user)
    assert was[0] > 1 and was[-1] > was[0]
    t.close()


class LsmModel(RuleBasedStateMachine):
    """The tree against a dict, with flushes and compactions mixed in."""

    def __init__(self):
        super().__init__()
        import tempfile

        self.dir = tempfile.mkdtemp(dir="/dev/shm")
        self.t = LSMTree(self.dir, LsmConfig(memtable_bytes=512, l0_compaction_trigger=2, fanout=2))
        self.model = {}

    keys = st.binary(min_size=1, max_size=4)

    @rule(k=keys, v=st.binary(max_size=20))
    def put(self, k, v):
        self.t.put(k, IndexEntry.inline(v))
        self.model[k] = v

    @rule(k=keys)
    def delete(self, k):
        self.t.put(k, IndexEntry.tombstone())
        self.model.pop(k, None)

    @rule(k=keys)
    def get(self, k):
        e = self.t.get(k)
        got = None if e is None or e.kind == Kind.TOMBSTONE else e.value
        assert got == self.model.get(k)

    @rule(start=keys, n=st.integers(1, 20))
    def scan(self, start, n):
        want = sorted(k for k in self.model if k >= start)[:n]
        got = self.t.scan(start, n)
        assert [k for k, _ in got] == want
        assert all(e.value == self.model[k] for k, e in got)

    @rule()
    def flush(self):
        self.t.flush_memtable()

    @rule()
    def compact_everything(self):
        self.t.compact_all()

    @invariant()
    def levels_disjoint(self):
        assert disjoint(self.t)

    def teardown(self):
        import shutil

        self.t.close()
        shutil.rmtree(self.dir, ignore_errors=True)


TestLsmModel = LsmModel.TestCase
TestLsmModel.settings = settings(max_examples=40, stateful_step_count=80, deadline=None)
