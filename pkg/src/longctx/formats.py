"""Binary corpus formats.

UDOC holds a tokenized document corpus:

    magic "UDOC" | version u32 LE | repeat: [doc_len u32 LE][doc_len x token u32 LE]

with a sidecar JSON index (list of {id, source, byte_offset, length}) so
documents can be addressed without scanning. byte_offset points at the
record's length field.

UPKD holds packed fixed-length training sequences:

    magic "UPKD" | version u32 LE | target_len u32 LE | separator_id u32 LE
    | sequence_count u64 LE | raw sequences (target_len x u32 LE each)

with a sidecar JSON Lines file of per-sequence boundary metadata.

All integers are little-endian. Readers use memory mapping so multi-GB
files never load eagerly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

UDOC_MAGIC = b"UDOC"
UPKD_MAGIC = b"UPKD"
FORMAT_VERSION = 1


@dataclass
class Document:
    """One tokenized input document."""

    id: str
    source: str
    tokens: np.ndarray  # uint32

    def __post_init__(self):
        self.tokens = np.ascontiguousarray(self.tokens, dtype=np.uint32)
        if self.tokens.size == 0:
            raise FormatError(f"document {self.id!r} is empty")

    @property
    def length(self) -> int:
        return int(self.tokens.size)


def index_path_for(path) -> Path:
    return Path(str(path) + ".index.json")


def write_udoc(path, documents, version: int = FORMAT_VERSION) -> None:
    """Write documents to a UDOC file plus its sidecar index."""
    path = Path(path)
    index = []
    with open(path, "wb") as fh:
        fh.write(UDOC_MAGIC)
        fh.write(struct.pack("<I", version))
        offset = 8
        for doc in documents:
            index.append(
                {"id": doc.id, "source": doc.source, "byte_offset": offset, "length": doc.length}
            )
            fh.write(struct.pack("<I", doc.length))
            fh.write(doc.tokens.astype("<u4").tobytes())
            offset += 4 + 4 * doc.length
    with open(index_path_for(path), "w", encoding="utf-8") as fh:
        json.dump(index, fh)


class UdocReader:
    """Memory-mapped random-access reader for UDOC corpora."""

    def __init__(self, path):
        self.path = Path(path)
        raw = np.memmap(self.path, dtype=np.uint8, mode="r")
        if raw.size < 8 or bytes(raw[:4]) != UDOC_MAGIC:
            raise FormatError(f"{self.path}: bad UDOC magic")
        self.version = int(raw[4:8].view("<u4")[0])
        self._raw = raw
        idx_path = index_path_for(self.path)
        if idx_path.exists():
            with open(idx_path, encoding="utf-8") as fh:
                self.index = json.load(fh)
        else:
            self.index = self._scan_index()
        self._by_id = {rec["id"]: rec for rec in self.index}

    def _scan_index(self):
        index = []
        offset, n = 8, self._raw.size
        i = 0
        while offset < n:
            if offset + 4 > n:
                raise FormatError(f"{self.path}: truncated record header at record {i}")
            length = int(self._raw[offset : offset + 4].view("<u4")[0])
            if offset + 4 + 4 * length > n:
                raise FormatError(f"{self.path}: truncated record body at record {i}")
            index.append({"id": str(i), "source": "", "byte_offset": offset, "length": length})
            offset += 4 + 4 * length
            i += 1
        return index

    def __len__(self) -> int:
        return len(self.index)

    def tokens_at(self, rec) -> np.ndarray:
        start = rec["byte_offset"] + 4
        n = rec["length"]
        return self._raw[start : start + 4 * n].view("<u4")

    def get(self, doc_id: str) -> Document:
        rec = self._by_id.get(doc_id)
        if rec is None:
            raise FormatError(f"{self.path}: no document with id {doc_id!r}")
        return Document(id=rec["id"], source=rec.get("source", ""), tokens=self.tokens_at(rec))

    def __iter__(self):
        for rec in self.index:
            yield Document(id=rec["id"], source=rec.get("source", ""), tokens=self.tokens_at(rec))


def read_jsonl_corpus(path):
    """Iterate documents from a JSON Lines corpus
    ({"id":…, "source":…, "tokens":[…]} per line)."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                yield Document(
                    id=str(rec["id"]),
                    source=str(rec.get("source", "")),
                    tokens=np.asarray(rec["tokens"], dtype=np.uint32),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(f"{path}: bad document record at line {lineno}: {exc}") from exc


def load_corpus(path):
    """Open a corpus file, dispatching on the UDOC magic vs. JSON Lines."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == UDOC_MAGIC:
        return UdocReader(path)
    return list(read_jsonl_corpus(path))


@dataclass
class Boundary:
    """Placement of one document (or continuation) inside a packed sequence."""

    offset: int
    doc_id: str
    is_continuation: bool


@dataclass
class PackedSequence:
    """One fixed-length training sequence with boundary metadata."""

    tokens: np.ndarray
    boundaries: list = field(default_factory=list)
    separator_positions: list = field(default_factory=list)


def boundary_sidecar_path(path) -> Path:
    return Path(str(path) + ".boundaries.jsonl")


def write_upkd(path, sequences, target_len: int, separator_id: int,
               version: int = FORMAT_VERSION) -> None:
    """Write packed sequences to UPKD plus the boundary sidecar."""
    path = Path(path)
    seqs = list(sequences)
    with open(path, "wb") as fh:
        fh.write(UPKD_MAGIC)
        fh.write(struct.pack("<III", version, target_len, separator_id))
        fh.write(struct.pack("<Q", len(seqs)))
        for seq in seqs:
            if seq.tokens.size != target_len:
                raise FormatError(
                    f"sequence length {seq.tokens.size} != target_len {target_len}"
                )
            fh.write(seq.tokens.astype("<u4").tobytes())
    with open(boundary_sidecar_path(path), "w", encoding="utf-8") as fh:
        for i, seq in enumerate(seqs):
            rec = {
                "sequence": i,
                "boundaries": [
                    {"offset": b.offset, "doc_id": b.doc_id, "is_continuation": b.is_continuation}
                    for b in seq.boundaries
                ],
                "separator_positions": seq.separator_positions,
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


class UpkdReader:
    """Memory-mapped reader for UPKD sequence files."""

    HEADER = 4 + 4 * 3 + 8

    def __init__(self, path):
        self.path = Path(path)
        raw = np.memmap(self.path, dtype=np.uint8, mode="r")
        if raw.size < self.HEADER or bytes(raw[:4]) != UPKD_MAGIC:
            raise FormatError(f"{self.path}: bad UPKD magic")
        self.version, self.target_len, self.separator_id = (
            int(v) for v in raw[4:16].view("<u4")
        )
        self.sequence_count = int(raw[16:24].view("<u8")[0])
        expect = self.HEADER + 4 * self.target_len * self.sequence_count
        if raw.size != expect:
            raise FormatError(
                f"{self.path}: size {raw.size} != expected {expect} for "
                f"{self.sequence_count} sequences of {self.target_len}"
            )
        self._tokens = raw[self.HEADER :].view("<u4").reshape(
            self.sequence_count, self.target_len
        )
        self._boundaries = None

    @property
    def tokens(self) -> np.ndarray:
        return self._tokens

    def boundaries(self):
        if self._boundaries is None:
            side = boundary_sidecar_path(self.path)
            if not side.exists():
                raise FormatError(f"missing boundary sidecar {side}")
            recs = []
            with open(side, encoding="utf-8") as fh:
                for line in fh:
                    recs.append(json.loads(line))
            self._boundaries = recs
        return self._boundaries

    def sequences(self):
        boundary_recs = self.boundaries()
        for i in range(self.sequence_count):
            rec = boundary_recs[i]
            yield PackedSequence(
                tokens=np.array(self._tokens[i]),
                boundaries=[
                    Boundary(b["offset"], b["doc_id"], b["is_continuation"])
                    for b in rec["boundaries"]
                ],
                separator_positions=list(rec["separator_positions"]),
            )
