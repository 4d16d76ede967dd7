"""TVCK container: magic, version, JSON header, raw little-endian float32 payload.

Layout::

    b"TVCK" | u32 version (=1) | u64 header byte length | UTF-8 JSON header | payload

Header offsets are element counts from the start of the payload.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np

from tvkit.blocks import BlockedTensor, BlockSpec, CoefficientSet, TaskVector
from tvkit.errors import FormatError, ShapeError

MAGIC = b"TVCK"
VERSION = 1
PREFIX = struct.Struct("<4sIQ")
_F32 = np.dtype("<f4")


def _payload_bytes(arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype=_F32).tobytes() for a in arrays)


class _Packer:
    def __init__(self):
        self.arrays: list[np.ndarray] = []
        self.offset = 0

    def add(self, a: np.ndarray) -> tuple[int, int]:
        a = np.asarray(a).reshape(-1)
        start = self.offset
        self.arrays.append(a)
        self.offset += a.size
        return start, a.size


def _blocks_header(packer: _Packer, specs, arrays) -> list[dict]:
    entries = []
    for s, a in zip(specs, arrays):
        off, n = packer.add(a) if a is not None else (0, 0)
        entries.append(dict(s.to_json(), offset_elems=off, len_elems=n))
    return entries


def dumps(obj: Any, meta: dict | None = None) -> bytes:
    """Serialise weights, a task vector, a coefficient set or a dataset."""
    from tvkit.data import Dataset

    packer = _Packer()
    meta = dict(meta or {})
    factored = None
    if isinstance(obj, BlockedTensor):
        if obj.dtype != np.float32:
            raise ShapeError("only 32-bit blocked tensors are persisted")
        kind, fp = "weights", obj.fingerprint()
        blocks = _blocks_header(packer, obj.specs, obj.arrays)
    elif isinstance(obj, TaskVector):
        kind, fp = "taskvector", obj.base_fingerprint
        meta = {**obj.meta, **meta, "id": obj.id}
        if obj.dense is not None:
            blocks = _blocks_header(packer, obj.specs, obj.dense.arrays)
        else:
            blocks = _blocks_header(packer, obj.specs, [None] * len(obj.specs))
            factored = []
            for s in obj.specs:
                f = obj.factors.get(s.name)
                if f is None:
                    continue
                a_off, _ = packer.add(f.A)
                b_off, _ = packer.add(f.B)
                factored.append({"name": s.name, "rank": f.rank, "a_offset": a_off, "b_offset": b_off})
    elif isinstance(obj, CoefficientSet):
        kind, fp = "coeffs", str(obj.meta.get("base_fingerprint", ""))
        off, n = packer.add(obj.values)
        blocks = [{"name": "coefficients", "shape": list(obj.values.shape), "kind": "coefficients",
                   "offset_elems": off, "len_elems": n}]
        meta = {**obj.meta, **meta, "tv_ids": list(obj.tv_ids), "block_names": list(obj.block_names)}
    elif isinstance(obj, Dataset):
        kind, fp = "dataset", ""
        blocks = []
        named = obj.named_arrays()
        for name, a in named.items():
            off, n = packer.add(a)
            blocks.append({"name": name, "shape": list(a.shape), "kind": "data", "offset_elems": off, "len_elems": n})
        meta = {**meta, **obj.header_meta()}
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")
    payload = _payload_bytes(packer.arrays)
    meta.setdefault("content_hash", _payload_hash(payload))
    header = {"kind": kind, "base_fingerprint": fp, "blocks": blocks, "meta": meta}
    if factored is not None:
        header["factored"] = factored
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + payload


def _payload_hash(payload: bytes) -> str:
    import hashlib
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def save(path: str | os.PathLike, obj: Any, meta: dict | None = None) -> None:
    data = dumps(obj, meta)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def parse(data: bytes) -> tuple[dict, np.ndarray, int]:
    """Validate framing and return (header, payload as float32, payload byte offset)."""
    if len(data) < PREFIX.size:
        raise FormatError(f"file too short for TVCK prefix ({len(data)} bytes)", offset=len(data))
    magic, version, hlen = PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    start = PREFIX.size
    if start + hlen > len(data):
        raise FormatError(f"header length {hlen} runs past end of file ({len(data)} bytes)", offset=8)
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        pos = getattr(exc, "pos", getattr(exc, "start", 0))
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}", offset=start + pos) from None
    if not isinstance(header, dict):
        raise FormatError("header is not a JSON object", offset=start)
    for key in ("kind", "base_fingerprint", "blocks", "meta"):
        if key not in header:
            raise FormatError(f"header lacks required field {key!r}", offset=start)
    if header["kind"] not in ("weights", "taskvector", "coeffs", "dataset"):
        raise FormatError(f"unknown kind {header['kind']!r}", offset=start)
    pstart = start + hlen
    nbytes = len(data) - pstart
    if nbytes % 4:
        raise FormatError(f"payload length {nbytes} is not a multiple of 4", offset=pstart + nbytes - nbytes % 4)
    nelems = nbytes // 4
    blocks = header["blocks"]
    factored = header.get("factored") or []
    if not isinstance(blocks, list):
        raise FormatError("'blocks' must be a list", offset=start)
    if not blocks and nelems:
        raise FormatError(f"header declares 0 blocks but payload holds {nelems} elements", offset=pstart)
    used = 0
    for b in blocks:
        try:
            off, n, shape = int(b["offset_elems"]), int(b["len_elems"]), [int(d) for d in b["shape"]]
            b["name"]
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"malformed block entry {b!r}", offset=start) from None
        if off < 0 or n < 0 or off + n > nelems:
            raise FormatError(f"block {b['name']!r} [{off}, {off + n}) exceeds payload of {nelems} elements",
                              offset=pstart + 4 * min(max(off, 0), nelems))
        if n and n != int(np.prod(shape)):
            raise FormatError(f"block {b['name']!r} length {n} does not match shape {shape}", offset=pstart + 4 * off)
        used += n
    shapes = {b["name"]: b["shape"] for b in blocks}
    for f in factored:
        try:
            name, r, a_off, b_off = f["name"], int(f["rank"]), int(f["a_offset"]), int(f["b_offset"])
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"malformed factored entry {f!r}", offset=start) from None
        if name not in shapes or len(shapes[name]) != 2:
            raise FormatError(f"factored entry for unknown or non-matrix block {name!r}", offset=start)
        out_dim, in_dim = shapes[name]
        for what, off, n in (("A", a_off, r * in_dim), ("B", b_off, out_dim * r)):
            if off < 0 or off + n > nelems:
                raise FormatError(f"factor {what} of {name!r} [{off}, {off + n}) exceeds payload of {nelems} elements",
                                  offset=pstart + 4 * min(max(off, 0), nelems))
        used += r * (in_dim + out_dim)
    if used != nelems:
        raise FormatError(f"header accounts for {used} elements but payload holds {nelems}", offset=pstart + 4 * min(used, nelems))
    payload = np.frombuffer(data, dtype=_F32, offset=pstart).astype(np.float32)
    return header, payload, pstart


def loads(data: bytes, verify: bool = False, with_meta: bool = False):
    header, payload, pstart = parse(data)
    meta = header["meta"]
    if verify and "content_hash" in meta:
        actual = _payload_hash(data[pstart:])
        if actual != meta["content_hash"]:
            raise FormatError(f"payload hash {actual} != recorded {meta['content_hash']}", offset=pstart)
    kind = header["kind"]

    def take(off, n, shape):
        return payload[off:off + n].reshape(shape)

    if kind in ("weights", "taskvector"):
        try:
            specs = tuple(BlockSpec(b["name"], tuple(b["shape"]), b["kind"]) for b in header["blocks"])
        except Exception as exc:
            raise FormatError(f"invalid block spec: {exc}", offset=PREFIX.size) from None
    if kind == "weights":
        obj = BlockedTensor(specs, [take(b["offset_elems"], b["len_elems"], -1) for b in header["blocks"]])
    elif kind == "taskvector":
        tv_meta = {k: v for k, v in meta.items() if k not in ("id", "content_hash")}
        if "factored" in header and header["factored"] is not None:
            from tvkit.lora import LoraFactor

            factors = {}
            by_name = {s.name: s for s in specs}
            for f in header["factored"]:
                out_dim, in_dim = by_name[f["name"]].shape
                r = int(f["rank"])
                factors[f["name"]] = LoraFactor(f["name"], take(f["a_offset"], r * in_dim, (r, in_dim)),
                                                take(f["b_offset"], out_dim * r, (out_dim, r)))
            obj = TaskVector(meta["id"], header["base_fingerprint"], specs, factors=factors, meta=tv_meta)
        else:
            dense = BlockedTensor(specs, [take(b["offset_elems"], b["len_elems"], -1) for b in header["blocks"]])
            obj = TaskVector(meta["id"], header["base_fingerprint"], specs, dense=dense, meta=tv_meta)
    elif kind == "coeffs":
        b = header["blocks"][0]
        cmeta = {k: v for k, v in meta.items() if k not in ("tv_ids", "block_names", "content_hash")}
        obj = CoefficientSet(tuple(meta["tv_ids"]), tuple(meta["block_names"]),
                             take(b["offset_elems"], b["len_elems"], b["shape"]), cmeta)
    else:
        from tvkit.data import Dataset

        arrays = {b["name"]: take(b["offset_elems"], b["len_elems"], b["shape"]) for b in header["blocks"]}
        obj = Dataset.from_named_arrays(arrays, meta)
    return (obj, meta) if with_meta else obj


def load(path: str | os.PathLike, verify: bool = False, with_meta: bool = False):
    return loads(Path(path).read_bytes(), verify=verify, with_meta=with_meta)


def read_meta(path: str | os.PathLike) -> dict:
    header, _, _ = parse(Path(path).read_bytes())
    return header["meta"]
