"""Store configuration: dataclasses, a ``key = value`` file format and ``HASHKV_*`` env overrides."""

from __future__ import annotations

import math
import os
import re
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Optional

from .errors import InvalidArgument
from .lsm.tree import LsmConfig

KiB = 1 << 10
MiB = 1 << 20
GiB = 1 << 30

BACKENDS = ("hashkv", "vlog", "inline")
GC_POLICIES = ("greedy", "cba", "gra", "random")

_SIZE_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*([kmgt]?i?b?)?\s*$", re.I)
_UNITS = {"": 1, "b": 1, "k": KiB, "kb": KiB, "kib": KiB, "m": MiB, "mb": MiB, "mib": MiB,
          "g": GiB, "gb": GiB, "gib": GiB, "t": GiB << 10, "tb": GiB << 10, "tib": GiB << 10}


def parse_size(text) -> int:
    """'4MiB' -> 4194304. Plain integers pass through. Units are binary."""
    if isinstance(text, int):
        return text
    m = _SIZE_RE.match(str(text))
    if not m:
        raise InvalidArgument(f"cannot parse size {text!r}")
    unit = (m.group(2) or "").lower()
    if unit not in _UNITS:
        raise InvalidArgument(f"unknown size unit in {text!r}")
    return int(float(m.group(1)) * _UNITS[unit])


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise InvalidArgument(f"cannot parse boolean {text!r}")


@dataclass(frozen=True)
class SegmentGeometry:
    n_main: int = 512
    main_size: int = 4 * MiB
    log_size: int = 64 * KiB
    reserved_fraction: float = 0.30
    # cold data log region, as a fraction of the main region (hotness awareness only)
    cold_fraction: float = 0.10

    def __post_init__(self):
        if self.n_main < 1:
            raise InvalidArgument("n_main must be >= 1")
        if self.main_size < 64 or self.log_size < 64:
            raise InvalidArgument("segments must be at least 64 bytes")
        if not 0.0 <= self.reserved_fraction <= 10.0:
            raise InvalidArgument("reserved_fraction out of range")
        if self.cold_fraction < 0:
            raise InvalidArgument("cold_fraction must be >= 0")

    @property
    def main_region(self) -> int:
        return self.n_main * self.main_size

    @property
    def n_log(self) -> int:
        return int(math.ceil(self.main_region * self.reserved_fraction / self.log_size - 1e-9))

    @property
    def reserved_region(self) -> int:
        return self.n_log * self.log_size

    @property
    def cold_size(self) -> int:
        return int(self.main_region * self.cold_fraction)

    @property
    def provisioned(self) -> int:
        """Main plus reserved bytes; the capacity both value backends get."""
        return self.main_region + self.reserved_region

    @property
    def max_record(self) -> int:
        return min(self.main_size, self.log_size)

    @classmethod
    def for_capacity(cls, data_bytes: int, main_size: int, log_size: int, reserved_fraction: float,
                     cold_fraction: float = 0.10) -> "SegmentGeometry":
        n = max(1, int(math.ceil(data_bytes / main_size)))
        return cls(n, main_size, log_size, reserved_fraction, cold_fraction)


@dataclass
class StoreConfig:
    directory: str = ""
    geometry: SegmentGeometry = field(default_factory=SegmentGeometry)
    value_backend: str = "hashkv"
    selective_threshold: int = 192
    write_cache_bytes: int = 1 * MiB
    batch_write_threshold: int = 4 * KiB
    flush_parallelism: int = 8
    gc_policy: str = "greedy"
    gra_d: int = 5
    hotness: bool = False
    gc_read_parallelism: int = 8
    cold_log_chunk_bytes: int = 1 * MiB
    vlog_chunk_bytes: int = 4 * MiB
    journaling: bool = True
    fsync: bool = True
    seed: int = 1
    lsm: LsmConfig = field(default_factory=LsmConfig)
    # checkpoint the segment table once the journals hold this many bytes
    checkpoint_journal_bytes: int = 4 * MiB

    def validate(self) -> "StoreConfig":
        if self.value_backend not in BACKENDS:
            raise InvalidArgument(f"value_backend must be one of {BACKENDS}")
        if self.gc_policy not in GC_POLICIES:
            raise InvalidArgument(f"gc_policy must be one of {GC_POLICIES}")
        if self.selective_threshold < 0:
            raise InvalidArgument("selective_threshold must be >= 0")
        if self.write_cache_bytes < 0 or self.batch_write_threshold < 0:
            raise InvalidArgument("cache sizes must be >= 0")
        if self.gra_d < 1:
            raise InvalidArgument("gra_d must be >= 1")
        if self.flush_parallelism < 1 or self.gc_read_parallelism < 1:
            raise InvalidArgument("parallelism must be >= 1")
        if self.vlog_chunk_bytes < 64 or self.cold_log_chunk_bytes < 64:
            raise InvalidArgument("GC chunk sizes must be >= 64 bytes")
        return self

    def with_overrides(self, **kv: Any) -> "StoreConfig":
        cfg = replace(self, geometry=replace(self.geometry), lsm=replace(self.lsm))
        for k, v in kv.items():
            set_option(cfg, k, v)
        return cfg.validate()


# flat option name -> (section, attribute, parser)
_OPTIONS: dict[str, tuple[Optional[str], str, Any]] = {}


def _register():
    for f in fields(StoreConfig):
        if f.name in ("geometry", "lsm"):
            continue
        _OPTIONS[f.name] = (None, f.name, _parser_for(f.name, f.type))
    for f in fields(SegmentGeometry):
        _OPTIONS[f.name] = ("geometry", f.name, _parser_for(f.name, f.type))
    for f in fields(LsmConfig):
        _OPTIONS["lsm_" + f.name] = ("lsm", f.name, _parser_for(f.name, f.type))


def _parser_for(name: str, typ) -> Any:
    t = str(typ)
    if "bool" in t:
        return parse_bool
    if "float" in t:
        return float
    if "int" in t:
        return parse_size if ("bytes" in name or "size" in name or name.endswith("threshold")) else int
    return str


_register()


def option_names() -> list[str]:
    return sorted(_OPTIONS)


def set_option(cfg: StoreConfig, name: str, value: Any) -> None:
    key = name.strip().lower().replace("-", "_")
    if key not in _OPTIONS:
        raise InvalidArgument(f"unknown config option {name!r}")
    section, attr, parse = _OPTIONS[key]
    val = parse(value) if isinstance(value, str) else value
    if section is None:
        setattr(cfg, attr, val)
    elif section == "geometry":
        cfg.geometry = replace(cfg.geometry, **{attr: val})
    else:
        setattr(cfg.lsm, attr, val)


def load_config_file(path: str, base: Optional[StoreConfig] = None) -> StoreConfig:
    """Read ``key = value`` lines (``#`` comments allowed) on top of ``base``."""
    cfg = base.with_overrides() if base is not None else StoreConfig()
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgument(f"{path}:{lineno}: expected 'key = value'")
            k, v = line.split("=", 1)
            set_option(cfg, k, v.strip())
    return cfg.validate()


def apply_env(cfg: StoreConfig, environ: Optional[dict] = None) -> StoreConfig:
    env = os.environ if environ is None else environ
    for name in _OPTIONS:
        var = "HASHKV_" + name.upper()
        if var in env:
            set_option(cfg, name, env[var])
    return cfg.validate()


def describe_config(cfg: Optional[StoreConfig] = None) -> str:
    cfg = cfg or StoreConfig()
    flat = {}
    for name, (section, attr, _) in _OPTIONS.items():
        src = cfg if section is None else getattr(cfg, section)
        flat[name] = getattr(src, attr)
    g = cfg.geometry
    lines = [f"{k} = {flat[k]}" for k in sorted(flat)]
    lines.append(f"# derived: n_log = {g.n_log}, provisioned = {g.provisioned}, cold_size = {g.cold_size}")
    return "\n".join(lines)


def to_dict(cfg: StoreConfig) -> dict:
    return asdict(cfg)


def desk_preset(**kv) -> StoreConfig:
    """2 GiB of data, 4 MiB main / 64 KiB log segments, 1 MiB write cache."""
    cfg = StoreConfig(geometry=SegmentGeometry(512, 4 * MiB, 64 * KiB, 0.30))
    return cfg.with_overrides(**kv)


def small_preset(**kv) -> StoreConfig:
    """64 MiB of data with the desk preset's ratios (main:log = 64:1); what the test suite runs."""
    cfg = StoreConfig(
        geometry=SegmentGeometry(64, 1 * MiB, 16 * KiB, 0.30),
        write_cache_bytes=64 * KiB,
        flush_parallelism=1,
        gc_read_parallelism=1,
        vlog_chunk_bytes=128 * KiB,
        cold_log_chunk_bytes=128 * KiB,
        checkpoint_journal_bytes=1 * MiB,
        lsm=LsmConfig(memtable_bytes=64 * KiB),
    )
    return cfg.with_overrides(**kv)
