"""Dataset persistence: one binary container per sample plus a manifest.

Container layout (all integers little-endian):

    magic b"ADWS" | u32 version | u32 record count
    per record: u16 name length | name utf-8 | u8 dtype code | u8 ndim
                | u32 * ndim shape | u64 payload bytes | raw array data

Arrays round-trip bit-exactly; scene and instruction metadata travel as a
JSON payload in the ``meta`` record.  No external codecs involved.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .render import SyntheticSample
from .scene import InstructionToken, ObjectSpec, SceneSpec

MAGIC = b"ADWS"
VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i4", 3: "<i8", 4: "|u1"}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}

MANIFEST_NAME = "manifest.txt"


class SchemaError(ValueError):
    """A dataset file or manifest does not match the expected layout."""


def _pack_record(out: list[bytes], name: str, array: np.ndarray) -> None:
    data = np.ascontiguousarray(array)
    if data.dtype.byteorder == ">":
        data = data.astype(data.dtype.newbyteorder("<"))
    code = _DTYPE_CODES.get(np.dtype(data.dtype.str.replace(">", "<")))
    if code is None:
        raise SchemaError(f"unsupported dtype {data.dtype} for record {name!r}")
    raw = data.tobytes()
    out.append(struct.pack("<H", len(name.encode())))
    out.append(name.encode())
    out.append(struct.pack("<BB", code, data.ndim))
    out.append(struct.pack(f"<{data.ndim}I", *data.shape))
    out.append(struct.pack("<Q", len(raw)))
    out.append(raw)


def _scene_meta(sample: SyntheticSample) -> dict:
    scene, instr = sample.scene, sample.instruction
    return {
        "canvas": list(scene.canvas),
        "background": list(scene.background),
        "seed": scene.seed,
        "objects": [
            {
                "kind": o.kind,
                "center": list(o.center),
                "size": o.size,
                "color": list(o.color),
                "depth": o.depth,
            }
            for o in scene.objects
        ],
        "instruction": {"action": instr.action, "target": instr.target, "text": instr.text},
    }


def write_sample(sample: SyntheticSample, path: Path) -> None:
    meta = json.dumps(_scene_meta(sample), sort_keys=True).encode()
    records = [
        ("frames", sample.frames),
        ("depths", sample.depths),
        ("edges", sample.edges),
        ("flows", sample.flows),
        ("meta", np.frombuffer(meta, dtype=np.uint8)),
    ]
    chunks = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, array in records:
        _pack_record(chunks, name, array)
    path.write_bytes(b"".join(chunks))


def _read_exact(buf: bytes, offset: int, n: int, path: Path, what: str) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise SchemaError(f"{path.name}: truncated while reading {what}")
    return buf[offset : offset + n], offset + n


def read_sample(path: Path) -> SyntheticSample:
    buf = path.read_bytes()
    head, offset = _read_exact(buf, 0, 12, path, "header")
    if head[:4] != MAGIC:
        raise SchemaError(f"{path.name}: bad magic {head[:4]!r}")
    version, count = struct.unpack("<II", head[4:])
    if version != VERSION:
        raise SchemaError(f"{path.name}: unsupported version {version}")

    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        raw, offset = _read_exact(buf, offset, 2, path, "record name length")
        (name_len,) = struct.unpack("<H", raw)
        raw, offset = _read_exact(buf, offset, name_len, path, "record name")
        name = raw.decode()
        raw, offset = _read_exact(buf, offset, 2, path, f"record {name!r} dtype/ndim")
        code, ndim = struct.unpack("<BB", raw)
        if code not in _DTYPES:
            raise SchemaError(f"{path.name}: record {name!r} has unknown dtype code {code}")
        raw, offset = _read_exact(buf, offset, 4 * ndim, path, f"record {name!r} shape")
        shape = struct.unpack(f"<{ndim}I", raw)
        raw, offset = _read_exact(buf, offset, 8, path, f"record {name!r} payload size")
        (nbytes,) = struct.unpack("<Q", raw)
        raw, offset = _read_exact(buf, offset, nbytes, path, f"record {name!r} payload")
        array = np.frombuffer(raw, dtype=_DTYPES[code])
        if array.size != int(np.prod(shape, dtype=np.int64)):
            raise SchemaError(f"{path.name}: record {name!r} payload does not match shape {shape}")
        arrays[name] = array.reshape(shape).copy()

    for required in ("frames", "depths", "edges", "flows", "meta"):
        if required not in arrays:
            raise SchemaError(f"{path.name}: missing record {required!r}")

    meta = json.loads(arrays["meta"].tobytes().decode())
    try:
        scene = SceneSpec(
            canvas=tuple(meta["canvas"]),
            objects=tuple(
                ObjectSpec(
                    kind=o["kind"],
                    center=tuple(o["center"]),
                    size=o["size"],
                    color=tuple(o["color"]),
                    depth=o["depth"],
                )
                for o in meta["objects"]
            ),
            background=tuple(meta["background"]),
            seed=meta["seed"],
        )
        instr = InstructionToken(
            action=meta["instruction"]["action"],
            target=meta["instruction"]["target"],
            text=meta["instruction"]["text"],
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path.name}: malformed meta record ({exc})") from exc

    return SyntheticSample(
        frames=arrays["frames"],
        depths=arrays["depths"],
        edges=arrays["edges"],
        flows=arrays["flows"],
        instruction=instr,
        scene=scene,
    )


def write_dataset(samples: list[SyntheticSample], path: str | Path, fingerprint: str = "") -> Path:
    """Write one container per sample plus a plain-text manifest."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for i, sample in enumerate(samples):
        name = f"sample_{i:05d}.bin"
        write_sample(sample, root / name)
        names.append(name)
    lines = [
        "# actiondiff dataset manifest",
        f"# count: {len(names)}",
        f"# fingerprint: {fingerprint}",
    ] + names
    (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return root


def read_manifest(path: str | Path) -> list[str]:
    root = Path(path)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise SchemaError(f"no {MANIFEST_NAME} in {root}")
    names = []
    declared = None
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if line.startswith("# count:"):
            declared = int(line.split(":", 1)[1])
        elif line and not line.startswith("#"):
            names.append(line)
    if declared is not None and declared != len(names):
        raise SchemaError(f"{manifest}: declares {declared} samples but lists {len(names)}")
    return names


def read_dataset(path: str | Path) -> list[SyntheticSample]:
    """Load every sample listed in the directory's manifest."""
    root = Path(path)
    return [read_sample(root / name) for name in read_manifest(root)]
