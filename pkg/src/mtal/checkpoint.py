"""MTAL1 checkpoint format.

Layout: the ASCII magic line ``MTAL1``, then ``key=value`` header lines
(``kind``, ``config_hash``, ``meta`` as compact JSON carrying mode and layer
shapes, ``arrays`` as a ``name:dim1xdim2`` list in declaration order), an
``end`` line, then the raw little-endian float64 bytes of each array in
declaration order. Saving is deterministic, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import CheckpointFormatError, CheckpointIntegrityError
from .models import Discriminator, Recognizer

MAGIC = "MTAL1"


def _header_text(model, config_hash: str) -> str:
    meta = model.meta()
    arrays = model.state_arrays()
    array_desc = ",".join(
        f"{name}:{'x'.join(str(d) for d in np.asarray(a).shape)}" for name, a in arrays
    )
    lines = [
        MAGIC,
        f"kind={meta['kind']}",
        f"config_hash={config_hash}",
        f"meta={json.dumps(meta, sort_keys=True, separators=(',', ':'))}",
        f"arrays={array_desc}",
        "end",
    ]
    return "\n".join(lines) + "\n"


def to_bytes(model, config_hash: str = "unspecified") -> bytes:
    blob = _header_text(model, config_hash).encode("ascii")
    for _, a in model.state_arrays():
        blob += np.ascontiguousarray(a, dtype="<f8").tobytes()
    return blob


def save(path, model, config_hash: str = "unspecified") -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(model, config_hash))


def _parse_shape(text: str):
    try:
        return tuple(int(d) for d in text.split("x"))
    except ValueError:
        raise CheckpointFormatError(f"bad array shape '{text}' in checkpoint header") from None


def from_bytes(blob: bytes):
    """Parse checkpoint bytes; returns (model, config_hash)."""
    head_end = blob.find(b"\nend\n")
    if not blob.startswith((MAGIC + "\n").encode("ascii")):
        raise CheckpointFormatError("missing or corrupt MTAL1 magic")
    if head_end < 0:
        raise CheckpointFormatError("checkpoint header has no end marker")
    header = blob[:head_end].decode("ascii", errors="strict")
    fields = {}
    for line in header.splitlines()[1:]:
        if "=" not in line:
            raise CheckpointFormatError(f"bad header line '{line}'")
        key, value = line.split("=", 1)
        fields[key] = value
    try:
        meta = json.loads(fields["meta"])
        kind = fields["kind"]
        config_hash = fields["config_hash"]
        array_desc = fields["arrays"]
    except (KeyError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint header: {exc}") from None
    if kind != meta.get("kind"):
        raise CheckpointFormatError("header kind and meta kind disagree")

    names, shapes = [], []
    for item in array_desc.split(","):
        if ":" not in item:
            raise CheckpointFormatError(f"bad array descriptor '{item}'")
        name, shape_text = item.split(":", 1)
        names.append(name)
        shapes.append(_parse_shape(shape_text))

    payload = blob[head_end + len(b"\nend\n"):]
    expected = sum(int(np.prod(s)) * 8 for s in shapes)
    if len(payload) != expected:
        raise CheckpointIntegrityError(
            f"checkpoint payload has {len(payload)} bytes, header promises {expected}"
        )
    arrays = {}
    offset = 0
    for name, shape in zip(names, shapes):
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=offset
        ).astype(np.float64).reshape(shape)
        offset += count * 8

    if kind == "recognizer":
        model = Recognizer.from_meta(meta)
    elif kind == "discriminator":
        model = Discriminator.from_meta(meta)
    else:
        raise CheckpointFormatError(f"unknown checkpoint kind '{kind}'")
    model.load_state_arrays(arrays)
    return model, config_hash


def load(path):
    """Load a checkpoint file; returns (model, config_hash)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        return from_bytes(blob)
    except UnicodeDecodeError:
        raise CheckpointFormatError("checkpoint header is not ASCII") from None
