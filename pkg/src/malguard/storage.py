"""Deterministic persistence and seeding utilities.

Array containers are zip files holding ``meta.json`` plus one ``.npy`` entry
per array. Entries are written in sorted order, uncompressed, with fixed
timestamps, so identical contents always produce identical bytes. That
property is what lets a rebuild from the same config reproduce a container
file exactly. Content digests and the scheme that fans a root seed out to
named stages live here too.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile

import numpy as np

# Zip cannot represent timestamps before 1980; this is the canonical floor.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write *meta* and *arrays* to *path* as a byte-stable container."""
    payload = json.dumps(meta, sort_keys=True, separators=(",", ":"))
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "meta.json", payload.encode("utf-8"))
        for name in sorted(arrays):
            if name == "meta":
                raise ValueError("array name 'meta' collides with the metadata entry")
            buf = io.BytesIO()
            np.lib.format.write_array(
                buf, np.ascontiguousarray(arrays[name]), version=(1, 0)
            )
            _write_entry(zf, name + ".npy", buf.getvalue())


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json").decode("utf-8"))
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)))
    return meta, arrays


def expect_format(meta: dict, fmt: str, path) -> None:
    found = meta.get("format")
    if found != fmt:
        raise ValueError(f"{path}: expected container format {fmt!r}, found {found!r}")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def stable_seed(text: str) -> int:
    """64-bit integer derived from a name; stable across runs and platforms."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stage_seed(root_seed: int, stage: str) -> int:
    """Derive the seed for a named stage from the experiment root seed."""
    return stable_seed(f"{root_seed}:{stage}")
