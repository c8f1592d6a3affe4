"""
Caching system for ablation sub-runs.

This module stores the summary of each finished training sub-run, keyed by
a hash of everything that determines its result, so that an interrupted
ablation grid resumes without retraining finished rows.
"""

import hashlib
import json
import logging
import os
import time
from pathlib import Path
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)


class RunCache:
    """
    Cache for storing sub-run summaries.

    Entries are JSON files named after a SHA256 key built from the run
    configuration fingerprint and the digest of the dataset it trained on.
    """

    def __init__(self, cache_dir: Optional[str] = None, ttl: Optional[int] = None):
        """
        Initialize the run cache.

        Args:
            cache_dir: Directory to store cache files. Defaults to
                ~/.gaussproto/cache
            ttl: Time-to-live for cache entries in seconds (None: never expire)
        """
        if cache_dir is None:
            cache_dir = os.path.join(os.path.expanduser("~"), ".gaussproto", "cache")

        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.ttl = ttl
        self.enabled = True

    def _generate_key(self, fingerprint: str, data_digest: str) -> str:
        """
        Generate a unique cache key.

        Args:
            fingerprint: RunConfig fingerprint of the sub-run
            data_digest: Digest of the training data

        Returns:
            SHA256 hash as cache key
        """
        key_data = {"fingerprint": fingerprint, "data": data_digest}
        key_string = json.dumps(key_data, sort_keys=True)
        return hashlib.sha256(key_string.encode()).hexdigest()

    def get(self, fingerprint: str, data_digest: str) -> Optional[Dict[str, Any]]:
        """
        Retrieve a cached summary if it exists and is not expired.

        Returns:
            Cached data if available and valid, None otherwise
        """
        if not self.enabled:
            return None

        key = self._generate_key(fingerprint, data_digest)
        cache_file = self.cache_dir / f"{key}.json"
        if not cache_file.exists():
            return None

        try:
            with open(cache_file, "r") as f:
                cached_data = json.load(f)

            timestamp = cached_data.get("timestamp", 0)
            if self.ttl is not None and time.time() - timestamp > self.ttl:
                cache_file.unlink()
                return None

            return cached_data.get("data")

        except (json.JSONDecodeError, IOError):
            logger.debug("Ignoring unreadable cache entry %s", cache_file)
            return None

    def set(self, fingerprint: str, data_digest: str, data: Dict[str, Any]) -> None:
        """Store a sub-run summary."""
        if not self.enabled:
            return

        key = self._generate_key(fingerprint, data_digest)
        cache_file = self.cache_dir / f"{key}.json"
        cache_entry = {"timestamp": time.time(), "data": data}

        try:
            with open(cache_file, "w") as f:
                json.dump(cache_entry, f)
        except IOError as e:
            logger.warning("Could not write cache entry %s: %s", cache_file, e)

    def clear(self) -> int:
        """
        Clear all cache entries.

        Returns:
            Number of cache entries cleared
        """
        count = 0
        for cache_file in self.cache_dir.glob("*.json"):
            try:
                cache_file.unlink()
                count += 1
            except IOError:
                pass
        return count

    def disable(self) -> None:
        """Disable caching."""
        self.enabled = False

    def enable(self) -> None:
        """Enable caching."""
        self.enabled = True


def data_digest(*payloads: bytes) -> str:
    """SHA256 over one or more byte strings (e.g. dataset files)."""
    digest = hashlib.sha256()
    for payload in payloads:
        digest.update(hashlib.sha256(payload).digest())
    return digest.hexdigest()

