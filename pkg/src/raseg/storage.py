"""On-disk formats: header+payload arrays, subject manifests, train/test splits.

Every binary file is a plain-text header (one ``key: value`` line per field,
terminated by a blank line) followed by a raw little-endian payload, so
round trips are bit-exact and the files stay portable.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import MODALITIES, Volume

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "uint8": np.dtype("u1"),
    "int64": np.dtype("<i8"),
}


def _dtype_name(arr: np.ndarray) -> str:
    for name, dt in _DTYPES.items():
        if arr.dtype == dt.newbyteorder("="):
            return name
    raise ValueError("unsupported dtype %s" % arr.dtype)


def _write_header(fh, lines):
    for key, value in lines:
        fh.write(("%s: %s\n" % (key, value)).encode("ascii"))
    fh.write(b"\n")


def _read_header(fh):
    """Read ``key: value`` lines up to the blank separator; keys may repeat."""
    items = []
    while True:
        line = fh.readline()
        if not line:
            raise ValueError("truncated header (no blank separator)")
        line = line.decode("ascii").rstrip("\n")
        if line == "":
            return items
        if ": " not in line:
            raise ValueError("malformed header line %r" % line)
        key, value = line.split(": ", 1)
        items.append((key, value))


def write_array(path, arr: np.ndarray, spacing_mm=None, extra=None) -> None:
    """Write one array as a header+payload file."""
    path = Path(path)
    a = np.ascontiguousarray(arr)
    lines = [("shape", " ".join(str(s) for s in a.shape))]
    if spacing_mm is not None:
        lines.append(("spacing_mm", " ".join(repr(float(s)) for s in spacing_mm)))
    lines.append(("dtype", _dtype_name(a)))
    lines.append(("byte_order", "little"))
    for key, value in (extra or {}).items():
        lines.append((key, str(value)))
    try:
        with open(path, "wb") as fh:
            _write_header(fh, lines)
            fh.write(a.astype(_DTYPES[_dtype_name(a)], copy=False).tobytes(order="C"))
    except OSError as exc:
        raise OSError("cannot write %s: %s" % (path, exc)) from exc


def read_array(path):
    """Read a header+payload file; returns (array, header dict)."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            items = _read_header(fh)
            payload = fh.read()
    except OSError as exc:
        raise OSError("cannot read %s: %s" % (path, exc)) from exc
    meta = dict(items)
    for key in ("shape", "dtype", "byte_order"):
        if key not in meta:
            raise ValueError("%s: header missing %r" % (path, key))
    if meta["byte_order"] != "little":
        raise ValueError("%s: unsupported byte order %r" % (path, meta["byte_order"]))
    if meta["dtype"] not in _DTYPES:
        raise ValueError("%s: unsupported dtype %r" % (path, meta["dtype"]))
    shape = tuple(int(s) for s in meta["shape"].split())
    dt = _DTYPES[meta["dtype"]]
    expected = int(np.prod(shape)) * dt.itemsize
    if len(payload) != expected:
        raise ValueError(
            "%s: payload has %d bytes, expected %d" % (path, len(payload), expected)
        )
    arr = np.frombuffer(payload, dtype=dt).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True), meta


def write_tensors(path, tensors: dict, extra=None) -> None:
    """Write named arrays into one header+payload container (order preserved)."""
    path = Path(path)
    lines = [(k, str(v)) for k, v in (extra or {}).items()]
    arrays = []
    for name, arr in tensors.items():
        if any(ch.isspace() for ch in name):
            raise ValueError("tensor name %r contains whitespace" % name)
        shape = np.asarray(arr).shape  # before ascontiguousarray, which promotes 0-d
        a = np.ascontiguousarray(arr)
        dtn = _dtype_name(a)
        lines.append(("tensor", "%s %s %s" % (name, dtn, " ".join(str(s) for s in shape))))
        arrays.append(a.astype(_DTYPES[dtn], copy=False))
    lines.append(("byte_order", "little"))
    try:
        with open(path, "wb") as fh:
            _write_header(fh, lines)
            for a in arrays:
                fh.write(a.tobytes(order="C"))
    except OSError as exc:
        raise OSError("cannot write %s: %s" % (path, exc)) from exc


def read_tensors(path):
    """Read a tensor container; returns (dict name -> array, extra header dict)."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            items = _read_header(fh)
            payload = fh.read()
    except OSError as exc:
        raise OSError("cannot read %s: %s" % (path, exc)) from exc
    tensors = {}
    extra = {}
    specs = []
    for key, value in items:
        if key == "tensor":
            parts = value.split()
            name, dtn = parts[0], parts[1]
            shape = tuple(int(s) for s in parts[2:])
            specs.append((name, dtn, shape))
        else:
            extra[key] = value
    if extra.get("byte_order", "little") != "little":
        raise ValueError("%s: unsupported byte order" % path)
    offset = 0
    for name, dtn, shape in specs:
        dt = _DTYPES[dtn]
        nbytes = int(np.prod(shape)) * dt.itemsize if shape else dt.itemsize
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError("%s: truncated payload at tensor %r" % (path, name))
        arr = np.frombuffer(chunk, dtype=dt).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="), copy=True)
        offset += nbytes
    if offset != len(payload):
        raise ValueError("%s: %d trailing payload bytes" % (path, len(payload) - offset))
    return tensors, extra


@dataclass(frozen=True)
class SubjectManifest:
    """Paths to one subject's modality files plus optional labels and split tag."""

    subject_id: str
    modality_paths: dict
    label_path: Path | None
    split: str = "train"

    def __post_init__(self):
        if set(self.modality_paths) != set(MODALITIES):
            raise ValueError(
                "manifest %s must list exactly modalities %s" % (self.subject_id, MODALITIES)
            )
        if self.split not in ("train", "test"):
            raise ValueError("split must be 'train' or 'test', got %r" % self.split)


def write_manifest(manifest: SubjectManifest, path) -> None:
    path = Path(path)
    base = path.parent
    lines = [("subject_id", manifest.subject_id), ("split", manifest.split)]
    for m in MODALITIES:
        rel = Path(manifest.modality_paths[m]).relative_to(base)
        lines.append(("modality", "%s %s" % (m, rel)))
    if manifest.label_path is not None:
        lines.append(("labels", str(Path(manifest.label_path).relative_to(base))))
    with open(path, "wb") as fh:
        _write_header(fh, lines)


def read_manifest(path) -> SubjectManifest:
    path = Path(path)
    with open(path, "rb") as fh:
        items = _read_header(fh)
    meta = {}
    modality_paths = {}
    for key, value in items:
        if key == "modality":
            name, rel = value.split(" ", 1)
            modality_paths[name] = path.parent / rel
        else:
            meta[key] = value
    label_path = path.parent / meta["labels"] if "labels" in meta else None
    return SubjectManifest(
        subject_id=meta["subject_id"],
        modality_paths=modality_paths,
        label_path=label_path,
        split=meta.get("split", "train"),
    )


def save_volume(volume: Volume, directory) -> SubjectManifest:
    """Write a volume as one file per modality (+labels) and a .subject manifest."""
    directory = Path(directory)
    if not directory.is_dir():
        raise OSError("not a writable directory: %s" % directory)
    sid = volume.subject_id
    modality_paths = {}
    for m in MODALITIES:
        p = directory / ("%s_%s.vol" % (sid, m))
        write_array(p, volume.modalities[m].astype(np.float32), spacing_mm=volume.spacing)
        modality_paths[m] = p
    label_path = None
    if volume.labels is not None:
        label_path = directory / ("%s_labels.vol" % sid)
        write_array(label_path, volume.labels.astype(np.uint8), spacing_mm=volume.spacing)
    manifest = SubjectManifest(
        subject_id=sid, modality_paths=modality_paths, label_path=label_path
    )
    write_manifest(manifest, directory / ("%s.subject" % sid))
    return manifest


def load_volume(manifest: SubjectManifest) -> Volume:
    """Load a volume from its manifest, enforcing shape consistency."""
    modalities = {}
    spacing = None
    ref_shape = None
    ref_name = None
    for m in MODALITIES:
        p = Path(manifest.modality_paths[m])
        if not p.exists():
            raise OSError("missing modality file %s" % p)
        arr, meta = read_array(p)
        if ref_shape is None:
            ref_shape, ref_name = arr.shape, m
            spacing = tuple(float(s) for s in meta.get("spacing_mm", "1 1 1").split())
        elif arr.shape != ref_shape:
            raise ValueError(
                "subject %s: %s shape %s mismatches %s shape %s"
                % (manifest.subject_id, m, arr.shape, ref_name, ref_shape)
            )
        modalities[m] = arr
    labels = None
    if manifest.label_path is not None:
        p = Path(manifest.label_path)
        if not p.exists():
            raise OSError("missing label file %s" % p)
        labels, _ = read_array(p)
        if labels.shape != ref_shape:
            raise ValueError(
                "subject %s: label shape %s mismatches modality shape %s"
                % (manifest.subject_id, labels.shape, ref_shape)
            )
    return Volume(
        modalities=modalities, labels=labels, spacing=spacing, subject_id=manifest.subject_id
    )


def write_dataset_manifest(manifests, path) -> None:
    """Write the dataset index: one .subject path per line, relative to it."""
    path = Path(path)
    with open(path, "w", encoding="ascii") as fh:
        for m in manifests:
            fh.write("%s.subject\n" % m.subject_id)


def read_dataset_manifest(path):
    """Read the dataset index; returns the listed SubjectManifests in order."""
    path = Path(path)
    manifests = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            manifests.append(read_manifest(path.parent / line))
    return manifests


def make_split(manifests, train_ids, test_ids):
    """Partition manifests by id lists; order preserved, split tags set."""
    train_ids = list(train_ids)
    test_ids = list(test_ids)
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise ValueError("train/test ids overlap: %s" % sorted(overlap))
    known = {m.subject_id for m in manifests}
    for sid in train_ids + test_ids:
        if sid not in known:
            raise ValueError("unknown subject id %r" % sid)
    train = [
        dataclasses.replace(m, split="train") for m in manifests if m.subject_id in set(train_ids)
    ]
    test = [
        dataclasses.replace(m, split="test") for m in manifests if m.subject_id in set(test_ids)
    ]
    return train, test
