import logging
import os
from pathlib import Path

import xxhash

logger = logging.getLogger(__name__)


def file_fingerprint(file_path: Path | str, chunk_size: int = 65536) -> str:
    """xxh64 hex digest of a file's bytes, streamed in chunks."""
    hasher = xxhash.xxh64()
    remaining_bytes = os.path.getsize(file_path)

    with open(file_path, 'rb') as f:
        while remaining_bytes > 0:
            data = f.read(min(chunk_size, remaining_bytes))
            if not data:
                break
            hasher.update(data)
            remaining_bytes -= len(data)

    return hasher.hexdigest()

def log_written(file_path: Path | str) -> str:
    digest = file_fingerprint(file_path)
    logger.info(f"Wrote {file_path} (xxh64 {digest})")
    return digest
