"""
Thread-safe evaluation budget.

A budget hands out evaluation allowances; callers ask for as many
evaluations as they would like to perform and receive at most what is left.
`limit=None` means unlimited.
"""

import threading
from typing import Optional


class Budget:
    def __init__(self, limit: Optional[int] = None):
        if limit is not None and limit < 0:
            raise ValueError("budget limit must be non-negative")
        self.limit = limit
        self._used = 0
        self._lock = threading.Lock()

    def take(self, requested: int) -> int:
        """Reserve up to `requested` evaluations and return the granted count."""
        if requested <= 0:
            return 0
        with self._lock:
            if self.limit is None:
                granted = requested
            else:
                granted = max(0, min(requested, self.limit - self._used))
            self._used += granted
            return granted

    @property
    def used(self) -> int:
        with self._lock:
            return self._used

    @property
    def remaining(self) -> Optional[int]:
        with self._lock:
            if self.limit is None:
                return None
            return self.limit - self._used

    @property
    def exhausted(self) -> bool:
        with self._lock:
            return self.limit is not None and self._used >= self.limit

    def __repr__(self) -> str:
        return f"Budget(limit={self.limit}, used={self.used})"
