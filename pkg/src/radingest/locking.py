"""Advisory lock serializing landing-zone mutations across processes.

The API service holds this lock for its lifetime; CLI commands that mutate
the landing zone take it per invocation and fail fast when the service (or
another mutator) is running.  Read-only commands never lock.
"""

from __future__ import annotations

import fcntl
import os
from pathlib import Path

LOCK_FILENAME = ".mutation.lock"


class LockHeld(Exception):
    pass


class MutationLock:
    def __init__(self, landing):
        self.path = Path(landing) / LOCK_FILENAME
        self._fh = None

    def acquire(self) -> "MutationLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fh = open(self.path, "w")
        try:
            fcntl.flock(fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            fh.close()
            raise LockHeld(
                f"landing zone is locked by another process ({self.path}); "
                f"stop the API service or the other command first"
            ) from None
        fh.write(str(os.getpid()))
        fh.flush()
        self._fh = fh
        return self

    def release(self) -> None:
        if self._fh is not None:
            fcntl.flock(self._fh.fileno(), fcntl.LOCK_UN)
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "MutationLock":
        return self.acquire()

    def __exit__(self, *exc) -> None:
        self.release()
