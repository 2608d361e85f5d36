"""Common utility functions"""

import hashlib
import os

DEFAULT_OUTPUT_PATH = os.path.join(os.getcwd(), "vidmask-out")


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def file_checksum(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def keep_rate_tag(period: int, static_keep_rate: float) -> str:
    """File-name suffix for one (period, static keep rate) combination, e.g. `P8_ks0.3`."""
    return f"P{period}_ks{static_keep_rate:g}"
