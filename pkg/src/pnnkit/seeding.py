"""Deterministic seed derivation.

Every random draw in the toolkit is keyed by a seed derived from a single
base seed plus a stage label and optional indices, so reruns with the same
base seed are bit-reproducible regardless of execution order.
"""

import hashlib


def derive_seed(base_seed: int, *labels) -> int:
    """Derive a child seed from ``base_seed`` and a stage label path.

    The derivation hashes ``"{base}|{label}|{label}|..."`` with SHA-256 and
    keeps the top 63 bits, which is stable across platforms and Python
    versions.
    """
    key = "|".join([str(int(base_seed)), *(str(x) for x in labels)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
