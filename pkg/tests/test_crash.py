"""Systematic crash injection over every labelled crash point."""

import pytest

import crashkit
from conftest import tiny_config

N_OPS = 3000


@pytest.mark.parametrize("variant", [
    {},
    {"hotness": True, "cold_fraction": 0.3, "cold_log_chunk_bytes": "8KiB"},
    {"value_backend": "vlog"},
])
def test_every_label_recovers(scratch, variant):
    cfg = tiny_config(scratch, **variant)
    labels = crashkit.count_points(cfg, N_OPS)
    points = crashkit.pick_points(labels, per_label=1)
    failures = []
    for p in points:
        out = crashkit.crash_at(cfg, p, N_OPS)
        if out.problems:
            failures.append((p, out.label, out.problems[:3]))
    assert failures == []
