"""Content-addressed blob directory: ``<root>/sha256/<hex>``."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterator

from bikit._io import CHUNK, atomic_write_bytes, sha256_file
from bikit.errors import IntegrityError, NotFound


class BlobStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "sha256").mkdir(parents=True, exist_ok=True)

    def path(self, digest: str) -> Path:
        if len(digest) != 64 or any(c not in "0123456789abcdef" for c in digest):
            raise NotFound(f"not a sha256 digest: {digest!r}")
        return self.root / "sha256" / digest

    def put(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.path(digest)
        if not path.is_file():
            atomic_write_bytes(path, data)
        return digest

    def exists(self, digest: str) -> bool:
        return self.path(digest).is_file()

    def verified_path(self, digest: str) -> Path:
        """Path of the blob after re-hashing it; raises IntegrityError on corruption."""
        path = self.path(digest)
        if not path.is_file():
            raise NotFound(f"blob {digest} is missing", code="blob-missing")
        actual = sha256_file(path)
        if actual != digest:
            raise IntegrityError(f"blob {digest} is corrupt (content hashes to {actual})")
        return path

    def read(self, digest: str) -> bytes:
        data = self.path(digest).read_bytes() if self.exists(digest) else None
        if data is None:
            raise NotFound(f"blob {digest} is missing", code="blob-missing")
        if hashlib.sha256(data).hexdigest() != digest:
            raise IntegrityError(f"blob {digest} is corrupt")
        return data

    def iter_verified(self, digest: str) -> Iterator[bytes]:
        with open(self.verified_path(digest), "rb") as fh:
            yield from iter(lambda: fh.read(CHUNK), b"")
