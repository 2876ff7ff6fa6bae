"""HashKV: hash-grouped value storage under an LSM index, with vLog and inline baselines."""

from .audit import audit
from .config import SegmentGeometry, StoreConfig, desk_preset, small_preset
from .devio import CrashInjector, DeviceIO
from .errors import (
    CorruptRecord,
    IncompatibleStore,
    InvalidArgument,
    OutOfSpace,
    RecoveryFailed,
    SimulatedCrash,
    StoreError,
)
from .lsm import LsmConfig
from .store import RecoveryReport, Store, open_store

__version__ = "0.1.0"

__all__ = [
    "CorruptRecord", "CrashInjector", "DeviceIO", "IncompatibleStore", "InvalidArgument", "LsmConfig",
    "OutOfSpace", "RecoveryFailed", "RecoveryReport", "SegmentGeometry", "SimulatedCrash", "Store",
    "StoreConfig", "StoreError", "audit", "desk_preset", "open_store", "small_preset",
]
