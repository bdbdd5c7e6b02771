"""File formats for logits, labels, checkpoint series, scores and model blobs.

Binary matrices hold float32 little-endian values behind a 12-byte header
(4-byte magic, u32 rows, u32 cols). Values are widened to float64 on load.
"""

import csv
import hashlib
import logging
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    BadMagicError,
    CsvParseError,
    FormatError,
    NonFiniteError,
    ShapeMismatchError,
    TruncatedFileError,
)
from .models import (
    CheckpointSeries,
    EmbeddingMatrix,
    LabelVector,
    LogitMatrix,
    MetaKind,
    MetaModel,
    ScoreKind,
    ScoreVector,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MATRIX_MAGIC = b"LGT1"
LABEL_MAGIC = b"LBL1"
META_MAGIC = b"AMCM"
MLP_MAGIC = b"MLP1"
BLOB_VERSION = 1

_HEADER = struct.Struct("<4sII")
_U32 = struct.Struct("<I")

_META_KIND_CODES = {MetaKind.LINEAR_LOGISTIC: 0, MetaKind.ONE_HIDDEN_NET: 1}


def _infer_format(path: Path, fmt: Optional[str]) -> str:
    if fmt:
        fmt = fmt.lower()
        if fmt not in ("binary", "csv"):
            raise FormatError(f"unknown format '{fmt}' (expected binary or csv)")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"file not found: {path}")


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------

def encode_matrix(data: np.ndarray) -> bytes:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D matrix, got shape {arr.shape}")
    rows, cols = arr.shape
    body = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return _HEADER.pack(MATRIX_MAGIC, rows, cols) + body


def decode_matrix(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{source}: {len(raw)} bytes is shorter than the header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    expected = rows * cols * 4
    body = raw[_HEADER.size:]
    if len(body) < expected:
        raise TruncatedFileError(
            f"{source}: header declares {rows}x{cols} ({expected} bytes), found {len(body)}"
        )
    if len(body) > expected:
        raise ShapeMismatchError(
            f"{source}: {len(body) - expected} trailing bytes after a {rows}x{cols} matrix"
        )
    arr = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{source}: contains NaN or infinite values")
    return arr


def _read_csv_matrix(path: Path) -> np.ndarray:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file", line=1)
        expected = [f"c{j}" for j in range(len(header))]
        if [h.strip() for h in header] != expected:
            raise CsvParseError(f"{path}: header must be c0,c1,...", line=1)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvParseError(
                    f"{path}: expected {len(header)} fields, found {len(row)}", line=line_no
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as e:
                raise CsvParseError(f"{path}: {e}", line=line_no)
    if not rows:
        raise CsvParseError(f"{path}: no data rows", line=2)
    arr = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{path}: contains NaN or infinite values")
    return arr


def _write_csv_matrix(data: np.ndarray, path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"c{j}" for j in range(data.shape[1])])
        for row in data:
            writer.writerow([format(float(v), ".9g") for v in row])


def read_matrix_array(path: PathLike, fmt: Optional[str] = None) -> np.ndarray:
    """Load any matrix file as a float64 array (no class-count constraint)."""
    path = Path(path)
    if _infer_format(path, fmt) == "csv":
        if not path.exists():
            raise FormatError(f"file not found: {path}")
        return _read_csv_matrix(path)
    return decode_matrix(_read_bytes(path), source=str(path))


def write_matrix_array(data: np.ndarray, path: PathLike, fmt: Optional[str] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if _infer_format(path, fmt) == "csv":
        _write_csv_matrix(np.asarray(data, dtype=np.float64), path)
    else:
        path.write_bytes(encode_matrix(data))


def load_matrix(
    path: PathLike, fmt: Optional[str] = None, kind: str = "logits"
) -> Union[LogitMatrix, EmbeddingMatrix]:
    """Load a logit (default) or embedding matrix."""
    arr = read_matrix_array(path, fmt)
    if kind == "logits":
        return LogitMatrix(arr)
    if kind == "embeddings":
        return EmbeddingMatrix(arr)
    raise ValueError(f"unknown matrix kind '{kind}'")


def save_matrix(
    matrix: Union[LogitMatrix, EmbeddingMatrix, np.ndarray],
    path: PathLike,
    fmt: Optional[str] = None,
) -> None:
    data = matrix.data if isinstance(matrix, (LogitMatrix, EmbeddingMatrix)) else matrix
    write_matrix_array(data, path, fmt)


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------

def encode_labels(labels: LabelVector) -> bytes:
    body = np.ascontiguousarray(labels.labels, dtype="<u4").tobytes()
    return LABEL_MAGIC + _U32.pack(len(labels)) + body


def decode_labels(raw: bytes, source: str = "<bytes>") -> LabelVector:
    if len(raw) < 8:
        raise TruncatedFileError(f"{source}: {len(raw)} bytes is shorter than the header")
    if raw[:4] != LABEL_MAGIC:
        raise BadMagicError(f"{source}: bad magic {raw[:4]!r}, expected {LABEL_MAGIC!r}")
    (n,) = _U32.unpack_from(raw, 4)
    body = raw[8:]
    if len(body) < 4 * n:
        raise TruncatedFileError(f"{source}: header declares {n} labels, found {len(body) // 4}")
    if len(body) > 4 * n:
        raise ShapeMismatchError(f"{source}: {len(body) - 4 * n} trailing bytes after {n} labels")
    return LabelVector(np.frombuffer(body, dtype="<u4").astype(np.int64))


def load_labels(path: PathLike, fmt: Optional[str] = None) -> LabelVector:
    path = Path(path)
    if _infer_format(path, fmt) == "binary":
        return decode_labels(_read_bytes(path), source=str(path))
    if not path.exists():
        raise FormatError(f"file not found: {path}")
    values = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["label"]:
            raise CsvParseError(f"{path}: header must be 'label'", line=1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1:
                raise CsvParseError(f"{path}: expected 1 field, found {len(row)}", line=line_no)
            try:
                values.append(int(row[0]))
            except ValueError as e:
                raise CsvParseError(f"{path}: {e}", line=line_no)
    return LabelVector(np.array(values, dtype=np.int64))


def save_labels(labels: LabelVector, path: PathLike, fmt: Optional[str] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if _infer_format(path, fmt) == "binary":
        path.write_bytes(encode_labels(labels))
        return
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"])
        for y in labels.labels:
            writer.writerow([int(y)])


# ---------------------------------------------------------------------------
# Checkpoint series
# ---------------------------------------------------------------------------

def epoch_filename(t: int) -> str:
    return f"epoch_{t:04d}.lgt"


class CheckpointStore:
    """Directory of per-epoch logit files plus a manifest listing them in order.

    Opening a store clears any series already in the directory.
    """

    MANIFEST = "manifest.txt"

    def __init__(self, directory: PathLike):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        stale = sorted(self.directory.glob("epoch_*.lgt"))
        if stale:
            logger.info("removing %d old checkpoints from %s", len(stale), self.directory)
        for old in stale:
            old.unlink()
        (self.directory / self.MANIFEST).unlink(missing_ok=True)
        self._paths: list[Path] = []

    def append(self, logits: LogitMatrix) -> Path:
        """Write the next epoch's logits."""
        path = self.directory / epoch_filename(len(self._paths) + 1)
        save_matrix(logits, path)
        self._paths.append(path)
        return path

    def write_manifest(self) -> Path:
        manifest = self.directory / self.MANIFEST
        manifest.write_text("".join(f"{p.name}\n" for p in self._paths))
        return manifest

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is None:
            self.write_manifest()


def save_series(series: CheckpointSeries, directory: PathLike) -> Path:
    """Write every epoch and return the manifest path."""
    with CheckpointStore(directory) as store:
        for m in series.epochs:
            store.append(m)
    return store.directory / CheckpointStore.MANIFEST


def load_series(path: PathLike) -> CheckpointSeries:
    """Load from a manifest file or an epoch_NNNN.lgt directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("epoch_*.lgt"))
        if not files:
            raise FormatError(f"{path}: no epoch_NNNN.lgt files")
        for t, f in enumerate(files, start=1):
            if f.name != epoch_filename(t):
                raise FormatError(f"{path}: expected {epoch_filename(t)}, found {f.name}")
    else:
        if not path.exists():
            raise FormatError(f"file not found: {path}")
        files = []
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            entry = Path(line)
            files.append(entry if entry.is_absolute() else path.parent / entry)
        if not files:
            raise FormatError(f"{path}: manifest lists no matrices")
    logger.debug("loading %d checkpoints from %s", len(files), path)
    return CheckpointSeries(tuple(load_matrix(f) for f in files))


# ---------------------------------------------------------------------------
# Score vectors
# ---------------------------------------------------------------------------

def save_scores(scores: ScoreVector, path: PathLike, fmt: Optional[str] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if _infer_format(path, fmt) == "binary":
        path.write_bytes(encode_matrix(scores.values.reshape(-1, 1)))
        return
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([scores.kind.value])
        for v in scores.values:
            writer.writerow([format(float(v), ".9g")])


def load_scores(
    path: PathLike, kind: Optional[ScoreKind] = None, fmt: Optional[str] = None
) -> ScoreVector:
    path = Path(path)
    if _infer_format(path, fmt) == "binary":
        if kind is None:
            raise FormatError(f"{path}: binary score files need an explicit score kind")
        arr = decode_matrix(_read_bytes(path), source=str(path))
        if arr.shape[1] != 1:
            raise ShapeMismatchError(f"{path}: score matrix must have one column")
        return ScoreVector(arr[:, 0], kind)
    if not path.exists():
        raise FormatError(f"file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        try:
            file_kind = ScoreKind(header[0].strip()) if header else None
        except ValueError:
            raise CsvParseError(f"{path}: unknown score kind '{header[0]}'", line=1)
        if file_kind is None:
            raise CsvParseError(f"{path}: empty file", line=1)
        values = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                values.append(float(row[0]))
            except ValueError as e:
                raise CsvParseError(f"{path}: {e}", line=line_no)
    return ScoreVector(np.array(values), kind or file_kind)


# ---------------------------------------------------------------------------
# Model blobs
# ---------------------------------------------------------------------------

def _pack_layers(weights, biases) -> bytes:
    parts = [_U32.pack(len(weights))]
    for w in weights:
        parts.append(_U32.pack(w.shape[0]) + _U32.pack(w.shape[1]))
    for w, b in zip(weights, biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def _unpack_layers(raw: bytes, offset: int, source: str):
    def need(count: int):
        if offset + count > len(raw):
            raise TruncatedFileError(f"{source}: blob ends at byte {len(raw)}")

    need(4)
    (n_layers,) = _U32.unpack_from(raw, offset)
    offset += 4
    need(8 * n_layers)
    dims = []
    for _ in range(n_layers):
        dims.append((_U32.unpack_from(raw, offset)[0], _U32.unpack_from(raw, offset + 4)[0]))
        offset += 8
    weights, biases = [], []
    for rows, cols in dims:
        need(4 * (rows * cols + cols))
        w = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=offset)
        offset += 4 * rows * cols
        b = np.frombuffer(raw, dtype="<f4", count=cols, offset=offset)
        offset += 4 * cols
        weights.append(w.astype(np.float64).reshape(rows, cols))
        biases.append(b.astype(np.float64))
    if offset != len(raw):
        raise ShapeMismatchError(f"{source}: {len(raw) - offset} trailing bytes")
    for arr in weights + biases:
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{source}: non-finite parameters")
    return weights, biases


def _check_blob_header(raw: bytes, magic: bytes, source: str) -> int:
    if len(raw) < 8:
        raise TruncatedFileError(f"{source}: {len(raw)} bytes is shorter than the header")
    if raw[:4] != magic:
        raise BadMagicError(f"{source}: bad magic {raw[:4]!r}, expected {magic!r}")
    (version,) = _U32.unpack_from(raw, 4)
    if version != BLOB_VERSION:
        raise FormatError(f"{source}: unsupported blob version {version}")
    return 8


def save_meta_model(model: MetaModel, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = META_MAGIC + _U32.pack(BLOB_VERSION) + bytes([_META_KIND_CODES[model.kind]])
    path.write_bytes(header + _pack_layers(model.weights, model.biases))


def load_meta_model(path: PathLike) -> MetaModel:
    raw = _read_bytes(path)
    offset = _check_blob_header(raw, META_MAGIC, str(path))
    if len(raw) < offset + 1:
        raise TruncatedFileError(f"{path}: missing model kind")
    codes = {v: k for k, v in _META_KIND_CODES.items()}
    if raw[offset] not in codes:
        raise FormatError(f"{path}: unknown meta-model kind {raw[offset]}")
    kind = codes[raw[offset]]
    weights, biases = _unpack_layers(raw, offset + 1, str(path))
    return MetaModel(kind=kind, weights=tuple(weights), biases=tuple(biases))


def save_mlp(net, path: PathLike) -> None:
    """Write an MlpNet as an MLP1 blob."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MLP_MAGIC + _U32.pack(BLOB_VERSION) + _pack_layers(net.weights, net.biases))


def load_mlp(path: PathLike):
    from .trainer.network import MlpNet

    raw = _read_bytes(path)
    offset = _check_blob_header(raw, MLP_MAGIC, str(path))
    weights, biases = _unpack_layers(raw, offset, str(path))
    return MlpNet(weights=tuple(weights), biases=tuple(biases))


# ---------------------------------------------------------------------------
# Digests
# ---------------------------------------------------------------------------

def file_digest(path: PathLike) -> str:
    """SHA256 of the file bytes."""
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
