import random

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, initialize, rule

from hashkv import IncompatibleStore, InvalidArgument, Store, audit
from hashkv.lsm.entry import Kind
from hashkv.record import Area

from conftest import tiny_config


def test_fresh_directory_is_empty(make_store):
    s = make_store()
    assert s.get(b"k") is None and s.scan(b"", 10) == []


def test_durability_round_trip(scratch):
    cfg = tiny_config(scratch)
    with Store(cfg) as s:
        s.put(b"k", b"v" * 500)
        s.put(b"small", b"x")
    with Store(cfg) as s:
        assert s.get(b"k") == b"v" * 500 and s.get(b"small") == b"x"


def test_geometry_mismatch_refused(scratch):
    Store(tiny_config(scratch)).close()
    with pytest.raises(IncompatibleStore):
        Store(tiny_config(scratch, n_main=16))


@pytest.mark.parametrize("key_len,value_len,inline", [
    (24, 16, True),     # 40 B pair
    (24, 1000, False),  # 1 KiB pair
    (24, 160, False),   # encoded size exactly 192
    (24, 159, True),    # one byte under
])
def test_selective_threshold(make_store, key_len, value_len, inline):
    s = make_store()
    k = b"k" * key_len
    s.put(k, b"v" * value_len)
    s.flush()
    assert (s.lsm.get(k).kind == Kind.INLINE) == inline
    assert s.get(k) == b"v" * value_len


def test_oversized_value_rejected(make_store):
    s = make_store()
    with pytest.raises(InvalidArgument):
        s.put(b"k", b"v" * (4096 + 1))
    with pytest.raises(InvalidArgument):
        s.put(b"", b"v")


def test_get_from_cache_does_no_device_reads(make_store):
    s = make_store()
    s.put(b"k", b"v" * 300)
    before = s.io.read_bytes
    assert s.get(b"k") == b"v" * 300
    assert s.io.read_bytes == before


def test_cold_tagged_key_served_from_cold_log(make_store):
    s = make_store(hotness=True, cold_fraction=1.0)
    s.put(b"cold", b"c" * 700)
    s.flush()
    s.gc_group(s.seg.group_of(b"cold"))
    assert s.lsm.get(b"cold").location.area == Area.COLD
    assert s.get(b"cold") == b"c" * 700


def test_delete_examples(make_store):
    s = make_store()
    s.delete(b"never")
    assert s.get(b"never") is None
    s.put(b"k", b"1" * 300)
    s.flush()
    s.delete(b"k")
    assert s.get(b"k") is None
    s.flush()
    assert s.get(b"k") is None
    s.put(b"k", b"2" * 300)
    assert s.get(b"k") == b"2" * 300
    s.flush()
    assert s.get(b"k") == b"2" * 300


def test_inline_scan_reads_no_values(make_store):
    s = make_store()
    for k in (b"a", b"b", b"c"):
        s.put(k, k * 10)
    s.flush()
    before = s.io.read_bytes
    assert s.scan(b"a", 3) == [(b"a", b"a" * 10), (b"b", b"b" * 10), (b"c", b"c" * 10)]
    assert s.io.read_bytes == before


def test_scan_over_scattered_groups_and_cache(make_store):
    s = make_store()
    want = {}
    for i in range(200):
        k = b"key%04d" % i
        want[k] = bytes([i % 250 + 1]) * 400
        s.put(k, want[k])
    s.flush()
    s.put(b"key0100x", b"cached")
    want[b"key0100x"] = b"cached"
    got = s.scan(b"key0095", 10)
    assert [k for k, _ in got] == sorted(k for k in want if k >= b"key0095")[:10]
    assert all(want[k] == v for k, v in got)
    assert s.scan(b"key0000", end=b"key0003") == [(b"key%04d" % i, want[b"key%04d" % i]) for i in range(3)]


@pytest.mark.parametrize("backend", ["hashkv", "vlog"])
def test_threshold_monotonicity(make_store, backend):
    small = make_store(value_backend=backend)
    for i in range(500):
        small.put(b"s%04d" % i, b"x" * 20)
    small.flush()
    assert small.io.written.get("value", 0) == 0

    big = make_store(value_backend=backend)
    for i in range(500):
        big.put(b"b%04d" % i, b"x" * 400)
    big.flush()
    assert all(e.kind != Kind.INLINE for _k, e in big.lsm.iter_range())


def test_inline_backend_never_touches_value_files(make_store):
    s = make_store(value_backend="inline")
    for i in range(300):
        s.put(b"k%03d" % i, b"v" * 900)
    s.flush()
    assert s.io.written.get("value", 0) == 0
    assert s.get(b"k007") == b"v" * 900


def test_out_of_space_surfaces(make_store):
    from hashkv.errors import OutOfSpace

    s = make_store(n_main=1, main_size="8KiB", log_size="2KiB", reserved_fraction=0.5)
    with pytest.raises(OutOfSpace):
        for i in range(1000):
            s.put(b"k%04d" % i, b"v" * 900)
        s.flush()


# ------------------------------------------------------------ model checking
class StoreModel(RuleBasedStateMachine):
    """PUT/GET/DELETE/SCAN against a dict, with flush, GC, compaction and reopen mixed in."""

    @initialize(backend=st.sampled_from(["hashkv", "vlog", "inline"]), hot=st.booleans())
    def open(self, backend, hot):
        import tempfile

        self.dir = tempfile.mkdtemp(dir="/dev/shm")
        self.cfg = tiny_config(self.dir, value_backend=backend, hotness=hot and backend == "hashkv",
                               cold_fraction=0.5, cold_log_chunk_bytes="4KiB", vlog_chunk_bytes="4KiB")
        self.s = Store(self.cfg)
        self.model = {}

    keys = st.integers(0, 60).map(lambda i: b"key%02d" % i)
    sizes = st.sampled_from([1, 30, 183, 184, 400, 1200])

    @rule(k=keys, n=sizes, b=st.integers(1, 255))
    def put(self, k, n, b):
        v = bytes([b]) * n
        self.s.put(k, v)
        self.model[k] = v

    @rule(k=keys)
    def delete(self, k):
        self.s.delete(k)
        self.model.pop(k, None)

    @rule(k=keys)
    def get(self, k):
        assert self.s.get(k) == self.model.get(k)

    @rule(k=keys, n=st.integers(1, 30))
    def scan(self, k, n):
        want = [(x, self.model[x]) for x in sorted(self.model) if x >= k][:n]
        assert self.s.scan(k, n) == want

    @rule()
    def flush(self):
        self.s.flush()

    @rule(rounds=st.integers(1, 4))
    def gc(self, rounds):
        self.s.gc(rounds)

    @rule()
    def compact(self):
        self.s.compact()

    @rule()
    def reopen(self):
        self.s.close()
        self.s = Store(self.cfg)

    def teardown(self):
        import shutil

        try:
            assert audit(self.s) == []
            for k, v in self.model.items():
                assert self.s.get(k) == v
        finally:
            self.s.abandon()
            shutil.rmtree(self.dir, ignore_errors=True)


TestStoreModel = StoreModel.TestCase
TestStoreModel.settings = settings(max_examples=30, stateful_step_count=120, deadline=None,
                                   suppress_health_check=[HealthCheck.too_slow])


def populated(make_store, seed, **kv):
    s = make_store(**kv)
    rng = random.Random(seed)
    for i in range(2500):
        k = b"k%03d" % rng.randrange(150)
        if rng.random() < 0.05:
            s.delete(k)
        else:
            s.put(k, bytes([rng.randrange(1, 256)]) * rng.choice([10, 200, 700, 1500]))
    return s, [b"k%03d" % i for i in range(150)]


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("hot", [False, True])
def test_gc_is_a_semantic_no_op(make_store, seed, hot):
    s, keys = populated(make_store, seed, hotness=hot, cold_fraction=1.0)
    rng = random.Random(seed)
    for _ in range(6):
        before = {k: s.get(k) for k in keys}
        g = rng.randrange(s.seg.n_main)
        if rng.random() < 0.5:
            s.flush()
        s.gc_group(g)
        assert {k: s.get(k) for k in keys} == before
    assert s.gc_stats.lsm_lookups == 0
    assert audit(s) == []


@pytest.mark.parametrize("backend", ["hashkv", "vlog", "inline"])
def test_scan_agrees_with_get(make_store, backend):
    s, keys = populated(make_store, 9, value_backend=backend)
    got = s.scan(b"", None)
    assert [k for k, _ in got] == sorted(k for k in keys if s.get(k) is not None)
    assert all(s.get(k) == v for k, v in got)
