"""Binary token-embedding files and the JSON dataset manifest.

Token file layout (all little-endian, header exactly 20 bytes):

    offset  size  field
    0       4     magic ``FTUR``
    4       2     version (u16, must be 1)
    6       2     flags (u16, must be 0)
    8       4     num_images (u32, >= 1)
    12      2     L, tokens per image (u16)
    14      2     D, token dimension (u16)
    16      2     grid_h (u16)
    18      2     grid_w (u16)

followed by ``num_images * L * D`` IEEE-754 float32 values, image-major,
token-major, dim-minor.  Values are stored float32 (compute elsewhere is
float64), so a write/read round trip is bit-exact.

The manifest is a JSON document::

    {"dims": {"L": 16, "D": 8, "grid_h": 4, "grid_w": 4},
     "classes": {"name": [["relative/path.tok", 0], ...], ...}}

Paths resolve relative to the manifest's directory; the declared dims are
validated against every referenced file's header.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .episode import TokenGrid
from .errors import DataError
from .evaluate import TokenDataset

__all__ = [
    "MAGIC",
    "VERSION",
    "HEADER_SIZE",
    "TokenFileError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedFileError",
    "HeaderFieldError",
    "ManifestError",
    "write_tokens",
    "read_tokens",
    "load_dataset",
    "write_manifest",
    "export_dataset",
]

MAGIC = b"FTUR"
VERSION = 1
_HEADER = struct.Struct("<4sHHIHHHH")
HEADER_SIZE = _HEADER.size
assert HEADER_SIZE == 20


class TokenFileError(DataError):
    """A token file violates the binary format."""


class BadMagicError(TokenFileError):
    pass


class UnsupportedVersionError(TokenFileError):
    pass


class TruncatedFileError(TokenFileError):
    pass


class HeaderFieldError(TokenFileError):
    pass


class ManifestError(DataError):
    """The dataset manifest is malformed or references bad data."""


def write_tokens(grids, path) -> None:
    """Write a list of token grids sharing (L, D, grid shape) to one file."""
    grids = list(grids)
    if not grids:
        raise DataError("cannot write an empty token file (num_images >= 1 required)")
    ref = grids[0]
    dims = (ref.num_tokens, ref.dim, ref.grid_h, ref.grid_w)
    for grid in grids:
        got = (grid.num_tokens, grid.dim, grid.grid_h, grid.grid_w)
        if got != dims:
            raise DataError(f"grid dims {got} differ from the file's {dims}")
    l, d, grid_h, grid_w = dims
    for name, value in (("num_images", len(grids)), ("L", l), ("D", d),
                        ("grid_h", grid_h), ("grid_w", grid_w)):
        limit = 0xFFFFFFFF if name == "num_images" else 0xFFFF
        if value > limit:
            raise HeaderFieldError(f"{name}={value} exceeds the header field range")
    header = _HEADER.pack(MAGIC, VERSION, 0, len(grids), l, d, grid_h, grid_w)
    payload = np.stack([grid.tokens for grid in grids]).astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_tokens(path) -> list:
    """Read a token file back into a list of :class:`TokenGrid`.

    Validates magic, version, flags, dims and payload length; each problem
    raises a distinct error naming the offending field and offset.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < HEADER_SIZE:
        raise TruncatedFileError(
            f"{path}: header truncated, expected {HEADER_SIZE} bytes, found {len(data)}"
        )
    magic, version, flags, num_images, l, d, grid_h, grid_w = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported version {version} at offset 4, expected {VERSION}"
        )
    if flags != 0:
        raise HeaderFieldError(f"{path}: unknown flags {flags:#06x} at offset 6")
    if num_images < 1:
        raise HeaderFieldError(f"{path}: num_images must be >= 1 (offset 8)")
    if l < 1 or d < 1 or grid_h * grid_w != l:
        raise HeaderFieldError(
            f"{path}: inconsistent dims L={l} D={d} grid={grid_h}x{grid_w} (offsets 12..18)"
        )
    expected = num_images * l * d * 4
    actual = len(data) - HEADER_SIZE
    if actual != expected:
        raise TruncatedFileError(
            f"{path}: payload expected {expected} bytes after the {HEADER_SIZE}-byte "
            f"header, found {actual}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE)
    tokens = values.reshape(num_images, l, d)
    return [
        TokenGrid(tokens[i], grid_h, grid_w, image_id=f"{path.name}:{i}")
        for i in range(num_images)
    ]


def write_manifest(path, classes: dict, dims: dict) -> None:
    """Write a dataset manifest; ``classes`` maps name -> [(file, index), ...]."""
    doc = {
        "dims": {k: int(dims[k]) for k in ("L", "D", "grid_h", "grid_w")},
        "classes": {
            str(name): [[str(file), int(index)] for file, index in refs]
            for name, refs in classes.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_dataset(manifest_path) -> TokenDataset:
    """Materialize the dataset a manifest describes, validating every reference."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{manifest_path}: cannot parse manifest: {exc}") from exc
    if not isinstance(doc, dict) or "classes" not in doc or "dims" not in doc:
        raise ManifestError(f"{manifest_path}: manifest needs 'dims' and 'classes' keys")
    dims = doc["dims"]
    try:
        declared = (int(dims["L"]), int(dims["D"]), int(dims["grid_h"]), int(dims["grid_w"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{manifest_path}: bad dims entry: {exc}") from exc
    base = manifest_path.parent
    cache = {}
    seen = {}
    classes = {}
    for name, refs in doc["classes"].items():
        grids = []
        for ref in refs:
            try:
                rel, index = str(ref[0]), int(ref[1])
            except (IndexError, TypeError, ValueError) as exc:
                raise ManifestError(f"{manifest_path}: class {name!r}: bad reference "
                                    f"{ref!r}") from exc
            file = base / rel
            if rel not in cache:
                try:
                    cache[rel] = read_tokens(file)
                except OSError as exc:
                    raise ManifestError(
                        f"{manifest_path}: class {name!r}: cannot read {file}: {exc}"
                    ) from exc
            grids_in_file = cache[rel]
            sample = grids_in_file[0]
            got = (sample.num_tokens, sample.dim, sample.grid_h, sample.grid_w)
            if got != declared:
                raise ManifestError(
                    f"{manifest_path}: class {name!r}: file {rel} has "
                    f"(L, D, grid_h, grid_w) = {got}, manifest declares {declared}"
                )
            if not 0 <= index < len(grids_in_file):
                raise ManifestError(
                    f"{manifest_path}: class {name!r}: index {index} outside "
                    f"[0, {len(grids_in_file)}) for {rel}"
                )
            key = (rel, index)
            if key in seen and seen[key] != name:
                raise ManifestError(
                    f"{manifest_path}: reference {key} appears under both "
                    f"{seen[key]!r} and {name!r} (ambiguous label)"
                )
            seen[key] = name
            grids.append(grids_in_file[index])
        classes[name] = grids
    return TokenDataset(classes)


def export_dataset(dataset: TokenDataset, directory, manifest_name="manifest.json") -> Path:
    """Write one token file per class plus a manifest; returns the manifest path.

    Convenience for turning in-memory datasets (for example the synthetic
    generators) into CLI-consumable form.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    refs = {}
    for name, grids in dataset.classes.items():
        file_name = f"{name}.tok"
        write_tokens(grids, directory / file_name)
        refs[name] = [(file_name, i) for i in range(len(grids))]
    sample = next(iter(dataset.classes.values()))[0]
    dims = {"L": sample.num_tokens, "D": sample.dim,
            "grid_h": sample.grid_h, "grid_w": sample.grid_w}
    manifest = directory / manifest_name
    write_manifest(manifest, refs, dims)
    return manifest
