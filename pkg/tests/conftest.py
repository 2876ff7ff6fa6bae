import os
import sys
import shutil
import tempfile

import pytest

from hashkv import Store, small_preset

# tmpfs keeps fsync-heavy tests fast; fall back to the default temp dir elsewhere
SCRATCH = "/dev/shm" if os.path.isdir("/dev/shm") else None


@pytest.fixture
def scratch():
    d = tempfile.mkdtemp(prefix="hashkv-", dir=SCRATCH)
    yield d
    shutil.rmtree(d, ignore_errors=True)


def tiny_config(directory, **kv):
    """A store small enough that flush, GC and compaction all happen within a few thousand puts."""
    base = dict(n_main=8, main_size="64KiB", log_size="4KiB", reserved_fraction=0.3,
                write_cache_bytes="8KiB", lsm_memtable_bytes="16KiB", vlog_chunk_bytes="16KiB",
                cold_log_chunk_bytes="16KiB", checkpoint_journal_bytes="256KiB", fsync=False)
    base.update(kv)
    return small_preset(directory=directory, **base)


@pytest.fixture
def make_store(scratch):
    opened = []

    def _make(**kv):
        s = Store(tiny_config(os.path.join(scratch, f"s{len(opened)}"), **kv))
        opened.append(s)
        return s

    yield _make
    for s in opened:
        try:
            s.abandon()
        except Exception:
            pass


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for mod in list(sys.modules.values()):
        lines.update(getattr(mod, "ACCEPTANCE_LINES", None) or {})
    if lines:
        terminalreporter.section("acceptance")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
