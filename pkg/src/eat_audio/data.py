"""Audio ingestion: RIFF/WAVE codec, CSV dataset manifests, fixed-duration batches."""

from __future__ import annotations

import csv
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mix import LabeledSample
from .signal import Waveform, pad_or_trim, resample
from .train import Split

log = logging.getLogger(__name__)

FORMAT_PCM = 0x0001
FORMAT_FLOAT = 0x0003
FORMAT_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    """Malformed, truncated or unsupported WAV data."""


def _chunks(buf: bytes):
    pos = 12
    while pos + 8 <= len(buf):
        cid, size = struct.unpack_from("<4sI", buf, pos)
        body = buf[pos + 8 : pos + 8 + size]
        yield cid, size, body
        pos += 8 + size + (size & 1)


def parse_wav(buf: bytes) -> Waveform:
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise WavError("not a RIFF/WAVE file")
    fmt = None
    for cid, size, body in _chunks(buf):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavError("fmt chunk too short")
            tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", body)
            if tag == FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise WavError("extensible fmt chunk too short")
                tag = struct.unpack_from("<H", body, 24)[0]
            fmt = (tag, channels, rate, block_align, bits)
        elif cid == b"data":
            if fmt is None:
                raise WavError("data chunk before fmt chunk")
            if len(body) < size:
                raise WavError(f"truncated data chunk: header says {size} bytes, found {len(body)}")
            return _decode(body, *fmt)
    raise WavError("missing fmt or data chunk")


def _decode(body: bytes, tag: int, channels: int, rate: int, block_align: int, bits: int) -> Waveform:
    if channels < 1 or rate < 1:
        raise WavError(f"invalid channel count {channels} or rate {rate}")
    if tag == FORMAT_PCM and bits == 16:
        data = np.frombuffer(body, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == FORMAT_FLOAT and bits == 32:
        data = np.frombuffer(body, dtype="<f4").astype(np.float64)
    else:
        raise WavError(f"unsupported codec: format tag {tag:#06x} with {bits} bits")
    if data.size % channels:
        raise WavError("data size is not a whole number of frames")
    data = data.reshape(-1, channels)
    if channels > 1:
        log.warning("averaging %d channels to mono", channels)
    return Waveform(data.mean(axis=1) if channels > 1 else data[:, 0], rate)


def read_wav(path) -> Waveform:
    return parse_wav(Path(path).read_bytes())


def encode_wav(x: Waveform, fmt: str = "float32") -> bytes:
    if fmt == "float32":
        tag, bits = FORMAT_FLOAT, 32
        payload = x.samples.astype("<f4").tobytes()
    elif fmt == "pcm16":
        tag, bits = FORMAT_PCM, 16
        ints = np.clip(np.round(x.samples * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
    else:
        raise ValueError(f"unsupported output format {fmt!r}")
    block = bits // 8
    fmt_chunk = struct.pack("<HHIIHH", tag, 1, x.sample_rate, x.sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
    body += b"data" + struct.pack("<I", len(payload)) + payload + (b"\x00" if len(payload) & 1 else b"")
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(path, x: Waveform, fmt: str = "float32") -> None:
    Path(path).write_bytes(encode_wav(x, fmt))


# ---------------------------------------------------------------- manifests


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    fold: int
    labels: tuple[str, ...]


@dataclass
class Manifest:
    records: list[ManifestRecord]
    classes: list[str]
    audio_root: Path = field(default_factory=Path)
    multi_label: bool = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def folds(self) -> list[int]:
        return sorted({r.fold for r in self.records})

    def class_index(self, name: str) -> int:
        return self.classes.index(name)

    def label_vector(self, record: ManifestRecord) -> np.ndarray:
        y = np.zeros(len(self.classes))
        for name in record.labels:
            y[self.class_index(name)] = 1.0
        return y

    def in_folds(self, folds) -> list[ManifestRecord]:
        folds = set(folds)
        return [r for r in self.records if r.fold in folds]


def resolve_root(audio_root=None, manifest_path=None) -> Path:
    """Explicit root, else $EAT_DATA_ROOT, else the manifest's directory (else cwd)."""
    if audio_root is not None:
        return Path(audio_root)
    if "EAT_DATA_ROOT" in os.environ:
        return Path(os.environ["EAT_DATA_ROOT"])
    return Path(manifest_path).parent if manifest_path is not None else Path(".")


def load_manifest(csv_path, audio_root=None) -> Manifest:
    """Read an ESC-50-style CSV (``filename,fold,category``) or the multi-label
    variant with a pipe-separated ``categories`` column. Extra columns are ignored.
    """
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
        header = rows[0].keys() if rows else None
    if not rows:
        raise ManifestError(f"{csv_path}: empty manifest")
    if "filename" not in header or "fold" not in header:
        raise ManifestError("manifest header needs 'filename' and 'fold' columns")
    if "categories" in header:
        multi, column = True, "categories"
    elif "category" in header:
        multi, column = False, "category"
    else:
        raise ManifestError("manifest header needs a 'category' or 'categories' column")
    records, seen = [], set()
    for line, row in enumerate(rows, start=2):
        path = row["filename"].strip()
        if path in seen:
            raise ManifestError(f"line {line}: duplicate path {path!r}")
        seen.add(path)
        try:
            fold = int(row["fold"])
        except (TypeError, ValueError):
            raise ManifestError(f"line {line}: fold {row['fold']!r} is not an integer") from None
        labels = tuple(s.strip() for s in row[column].split("|")) if multi else (row[column].strip(),)
        if not all(labels):
            raise ManifestError(f"line {line}: empty label")
        records.append(ManifestRecord(path, fold, labels))
    folds = sorted({r.fold for r in records})
    if folds != list(range(folds[0], folds[-1] + 1)):
        raise ManifestError(f"folds must form a contiguous range, got {folds}")
    classes = sorted({name for r in records for name in r.labels})
    return Manifest(records, classes, resolve_root(audio_root, csv_path), multi)


def write_manifest(path, rows: list[tuple[str, int, tuple[str, ...] | str]], multi_label: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "fold", "categories" if multi_label else "category"])
        for name, fold, labels in rows:
            w.writerow([name, fold, "|".join(labels) if not isinstance(labels, str) else labels])


def load_clip(manifest: Manifest, record: ManifestRecord, duration_s: float, rate: int, rng=None,
              random_crop: bool = False) -> Waveform:
    try:
        wav = read_wav(manifest.audio_root / record.path)
    except OSError as e:
        raise OSError(f"cannot read {record.path}: {e}") from e
    wav = resample(wav, rate)
    n = int(round(duration_s * rate))
    if random_crop and len(wav) > n:
        start = int(np.random.default_rng(rng).integers(0, len(wav) - n + 1))
        return Waveform(wav.samples[start : start + n], rate)
    return pad_or_trim(wav, n)


def make_batch(manifest: Manifest, records: list[ManifestRecord], duration_s: float, rate: int,
               rng=None, random_crop: bool = False) -> list[LabeledSample]:
    """Resample to ``rate`` and pad/trim each clip to round(duration_s * rate) samples."""
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    rng = np.random.default_rng(rng)
    return [LabeledSample(load_clip(manifest, r, duration_s, rate, rng, random_crop), manifest.label_vector(r))
            for r in records]


def load_split(manifest: Manifest, duration_s: float, rate: int, records=None) -> Split:
    records = manifest.records if records is None else records
    batch = make_batch(manifest, records, duration_s, rate)
    return Split(np.stack([s.waveform.samples for s in batch]), np.stack([s.label for s in batch]), rate,
                 np.array([r.fold for r in records]))
