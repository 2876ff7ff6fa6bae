"""Exception hierarchy shared by every storage layer."""


class StoreError(Exception):
    """Base class for all store errors."""


class InvalidArgument(StoreError, ValueError):
    pass


class CorruptRecord(StoreError):
    pass


class InvalidLocation(StoreError):
    pass


class NeedsGC(StoreError):
    """Raised by an append when free space is exhausted; the caller runs GC and retries."""


class OutOfSpace(StoreError):
    pass


class NothingToCollect(StoreError):
    pass


class GcAbort(StoreError):
    pass


class RecoveryFailed(StoreError):
    pass


class IncompatibleStore(StoreError):
    pass


class FlushFailed(StoreError):
    pass


class SimulatedCrash(BaseException):
    """Raised by the crash injector. Derives from BaseException so no store code swallows it."""

    def __init__(self, label: str, index: int):
        super().__init__(f"simulated crash #{index} at {label}")
        self.label = label
        self.index = index
