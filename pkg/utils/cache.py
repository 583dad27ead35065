import hashlib
import json
import threading
import time
from typing import Any, Dict, Optional, Tuple

import numpy as np

from utils.run_log import log_message


class InMemoryCache:
    """Process-local store for fit results, keyed by audio content and config hash"""

    def __init__(self, default_ttl: int = 3600):
        self._entries: Dict[str, Tuple[Any, float]] = {}
        self._lock = threading.Lock()
        self.default_ttl = default_ttl
        self.hits = 0
        self.misses = 0

    @staticmethod
    def make_key(prefix: str, data: Any) -> str:
        digest = hashlib.md5(json.dumps(data, sort_keys=True).encode()).hexdigest()
        return f"{prefix}:{digest}"

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None and entry[1] > time.time():
                self.hits += 1
                return entry[0]
            self._entries.pop(key, None)
            self.misses += 1
            return None

    def set(self, key: str, value: Any, ttl: Optional[int] = None) -> bool:
        with self._lock:
            self._entries[key] = (value, time.time() + (self.default_ttl if ttl is None else ttl))
        return True

    def clear(self):
        with self._lock:
            self._entries.clear()
            self.hits = self.misses = 0

    @staticmethod
    def audio_digest(samples: np.ndarray, sample_rate: int) -> str:
        """md5 over the raw sample bytes and the rate"""
        h = hashlib.md5(np.ascontiguousarray(samples, dtype=np.float64).tobytes())
        h.update(str(int(sample_rate)).encode())
        return h.hexdigest()

    def get_fit_result(self, audio_digest: str, config_hash: str) -> Optional[Any]:
        return self.get(self.make_key("fit", {"audio": audio_digest, "config": config_hash}))

    def set_fit_result(self, audio_digest: str, config_hash: str, result: Any, ttl: int = 86400) -> bool:
        stored = self.set(self.make_key("fit", {"audio": audio_digest, "config": config_hash}), result, ttl)
        if stored:
            log_message(f"💾 Cached fit {audio_digest[:8]}")
        return stored


cache = InMemoryCache()
