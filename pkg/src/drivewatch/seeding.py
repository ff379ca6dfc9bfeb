"""Deterministic derivation of per-module random seeds.

All randomness in the pipeline flows from one 64-bit seed. Sub-streams are
derived by hashing the base seed together with a label, so the per-frame and
per-side RANSAC draws stay reproducible no matter how many other streams are
added later.
"""

import hashlib


def derive_seed(base_seed: int, label: str) -> int:
    """Return a 64-bit seed for the stream named by ``label``."""
    payload = (base_seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little") + label.encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")
