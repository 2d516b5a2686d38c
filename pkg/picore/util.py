import hashlib
import json
import logging
import os
import time
from collections import defaultdict
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)


class MsgCounterHandler(logging.Handler):
    """https://stackoverflow.com/a/31142078/965332"""

    level2count: dict[str, int]

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.level2count = defaultdict(int)

    def emit(self, record) -> None:
        self.level2count[record.levelname] += 1


class Stopwatch:
    """Accumulates wall time over several `with sw.measure():` blocks."""

    def __init__(self) -> None:
        self.seconds = 0.0

    @contextmanager
    def measure(self) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds += time.perf_counter() - start


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:12]


def array_digest(arr: np.ndarray) -> str:
    """Digest of the exact bytes of an array, for bit-level comparisons."""
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def num_workers(configured: int | None = None) -> int:
    env = os.environ.get("PICORE_NUM_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning(f"Ignoring invalid PICORE_NUM_WORKERS={env!r}")
    if configured:
        return max(1, configured)
    return os.cpu_count() or 1


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": (1, 2), "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_num_workers_env(monkeypatch):
    monkeypatch.setenv("PICORE_NUM_WORKERS", "3")
    assert num_workers(8) == 3
    monkeypatch.delenv("PICORE_NUM_WORKERS")
    assert num_workers(2) == 2
