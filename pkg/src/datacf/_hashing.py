import hashlib
import json
from dataclasses import asdict, is_dataclass


def canonical_json(obj) -> str:
    if is_dataclass(obj):
        obj = asdict(obj)
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(obj) -> str:
    data = obj if isinstance(obj, bytes) else canonical_json(obj).encode()
    return hashlib.sha256(data).hexdigest()


def stable_seed(*parts) -> int:
    """64-bit seed from an ordered tuple of JSON-serializable parts."""
    digest = hashlib.blake2b(canonical_json(list(parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
