"""Tokenize a text corpus into a fixed-width record store and serve batches.

Two files are written per store:

``<name>.vocab``
    one token per line; the line number is the token id.
``<name>.records``
    a single JSON manifest line followed by ``count`` fixed-width records.
    Each record is ``true_length`` (uint32) followed by ``max_seq_len`` token
    ids (uint16 or uint32, little-endian).

The read path only memory-maps the records file. It never tokenizes.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
RESERVED = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(len(RESERVED))

STORE_FORMAT = "rtd-records-v1"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class DataError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lower-cased words and single punctuation characters."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    def __init__(self, tokens: list[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise DataError("vocab must start with the reserved tokens " + " ".join(RESERVED))
        if len(set(tokens)) != len(tokens):
            raise DataError("vocab has duplicate tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def n_reserved(self) -> int:
        return len(RESERVED)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.itos[int(i)] for i in ids]

    @classmethod
    def build(cls, counts: Counter, size: int) -> "Vocab":
        if size < len(RESERVED) + 1:
            raise DataError(f"vocab size {size} leaves no room beyond {len(RESERVED)} reserved tokens")
        # frequency descending, then lexicographic for a stable order
        ranked = sorted((t for t in counts if t not in RESERVED), key=lambda t: (-counts[t], t))
        return cls(list(RESERVED) + ranked[: size - len(RESERVED)])

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class SequenceRecord:
    token_ids: np.ndarray
    true_length: int


def _read_documents(corpus_path) -> list[str]:
    text = Path(corpus_path).read_text(encoding="utf-8")
    return [line for line in text.splitlines() if line.strip()]


def _frame(ids: list[int], max_seq_len: int) -> list[list[int]]:
    body = max_seq_len - 2
    chunks = [ids[i : i + body] for i in range(0, len(ids), body)] or []
    return [[CLS_ID, *c, SEP_ID] for c in chunks]


def build_store(corpus_path, out_dir, vocab_size: int = 8192, max_seq_len: int = 128, name: str | None = None) -> "RecordStore":
    """Tokenize ``corpus_path`` and write ``<name>.vocab`` / ``<name>.records`` under ``out_dir``.

    Each non-blank line is one document. Documents longer than
    ``max_seq_len - 2`` tokens are split into several records.
    """
    if max_seq_len < 3:
        raise DataError("max_seq_len must leave room for [CLS], one token and [SEP]")
    if vocab_size < len(RESERVED) + 1:
        raise DataError(f"vocab size {vocab_size} leaves no room beyond {len(RESERVED)} reserved tokens")
    docs = [tokenize(d) for d in _read_documents(corpus_path)]
    docs = [d for d in docs if d]
    if not docs:
        raise DataError(f"corpus {corpus_path} is empty")

    counts = Counter(t for d in docs for t in d)
    vocab = Vocab.build(counts, vocab_size)
    rows = [r for d in docs for r in _frame(vocab.encode(d), max_seq_len)]

    id_dtype = "<u2" if len(vocab) <= 0xFFFF else "<u4"
    rec_dtype = np.dtype([("true_length", "<u4"), ("ids", id_dtype, (max_seq_len,))])
    arr = np.zeros(len(rows), dtype=rec_dtype)
    for i, r in enumerate(rows):
        arr[i]["true_length"] = len(r)
        arr[i]["ids"][: len(r)] = r

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = name or Path(corpus_path).stem
    vocab.save(out_dir / f"{name}.vocab")
    manifest = {
        "format": STORE_FORMAT,
        "max_seq_len": max_seq_len,
        "vocab_hash": vocab.digest(),
        "vocab_size": len(vocab),
        "id_dtype": id_dtype,
        "count": len(rows),
    }
    with open(out_dir / f"{name}.records", "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        f.write(arr.tobytes())
    return RecordStore.open(out_dir / f"{name}.records")


class RecordStore:
    """Read-only view of a ``.records`` file."""

    def __init__(self, path, manifest: dict, records: np.ndarray):
        self.path = Path(path)
        self.manifest = manifest
        self._records = records

    @classmethod
    def open(cls, path) -> "RecordStore":
        path = Path(path)
        with open(path, "rb") as f:
            line = f.readline()
        try:
            manifest = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: bad manifest line") from exc
        if manifest.get("format") != STORE_FORMAT:
            raise DataError(f"{path}: unknown store format {manifest.get('format')!r}")
        rec_dtype = np.dtype([("true_length", "<u4"), ("ids", manifest["id_dtype"], (manifest["max_seq_len"],))])
        records = np.memmap(path, dtype=rec_dtype, mode="r", offset=len(line), shape=(manifest["count"],))
        return cls(path, manifest, records)

    def __len__(self) -> int:
        return int(self.manifest["count"])

    @property
    def max_seq_len(self) -> int:
        return int(self.manifest["max_seq_len"])

    @property
    def vocab_size(self) -> int:
        return int(self.manifest["vocab_size"])

    def vocab_path(self) -> Path:
        return self.path.with_suffix(".vocab")

    def __getitem__(self, i: int) -> SequenceRecord:
        r = self._records[i]
        return SequenceRecord(np.array(r["ids"], dtype=np.int64), int(r["true_length"]))

    def gather(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Token-id matrix (n, max_seq_len) and true lengths for ``indices``."""
        rows = self._records[np.asarray(indices)]
        return rows["ids"].astype(np.int64), rows["true_length"].astype(np.int64)


@dataclass
class Batch:
    ids: np.ndarray  # (B, L) int64
    lengths: np.ndarray  # (B,)
    indices: np.ndarray  # record indices

    @property
    def pad_mask(self) -> np.ndarray:
        return np.arange(self.ids.shape[1])[None, :] < self.lengths[:, None]


class BatchSampler:
    """Stream of record indices drawn epoch by epoch without replacement.

    Batches are cut from the concatenation of per-epoch permutations, so a batch
    can straddle an epoch boundary; after ``n`` full epochs every record has been
    served exactly ``n`` times.
    """

    def __init__(self, store: RecordStore, batch_size: int, rng: np.random.Generator):
        if len(store) == 0:
            raise DataError("record store is empty")
        if batch_size > len(store):
            raise DataError(f"batch size {batch_size} exceeds store size {len(store)}")
        self.store = store
        self.batch_size = batch_size
        self.rng = rng
        self._perm = rng.permutation(len(store))
        self._pos = 0
        self.epoch = 0

    def _take(self, n: int) -> np.ndarray:
        out = []
        while n > 0:
            if self._pos == len(self._perm):
                self._perm = self.rng.permutation(len(self.store))
                self._pos = 0
                self.epoch += 1
            k = min(n, len(self._perm) - self._pos)
            out.append(self._perm[self._pos : self._pos + k])
            self._pos += k
            n -= k
        return np.concatenate(out)

    def next_batch(self) -> Batch:
        idx = self._take(self.batch_size)
        ids, lengths = self.store.gather(idx)
        return Batch(ids, lengths, idx)

    def state_dict(self) -> dict:
        return {
            "rng": self.rng.bit_generator.state,
            "perm": self._perm.tolist(),
            "pos": self._pos,
            "epoch": self.epoch,
        }

    def load_state_dict(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self._perm = np.asarray(state["perm"], dtype=np.int64)
        self._pos = int(state["pos"])
        self.epoch = int(state["epoch"])


def next_batch(sampler: BatchSampler) -> Batch:
    return sampler.next_batch()
