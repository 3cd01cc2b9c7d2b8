"""Checkpoints, attention datasets, PGM export and latent-grid sweeps.

All binary formats are little-endian. Every file is written to a temporary
sibling first and moved into place, so a crash never leaves a half-written
artifact under the final name.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from . import tensor as T
from .corpus import ParallelPair, Vocab, encode_corpus
from .cvae import CvaeConfig, CvaeParams, cvae_decode
from .seq2seq import AttentionMatrix, AttentionRecord, Seq2SeqConfig, Seq2SeqParams, encode_source, translate_corpus

CHECKPOINT_MAGIC = b"ATNC"
DATASET_MAGIC = b"ATND"
FORMAT_VERSION = 1
KIND_SEQ2SEQ, KIND_CVAE = 0, 1
SWEEP_HEADER = "z1,z2,bleu,sari,fkgl,length_ratio"


class FormatError(ValueError):
    """Malformed binary artifact; the message names the byte offset."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data, self.pos, self.what = data, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what}: truncated at offset {self.pos} (wanted {n} more bytes, file has {len(self.data)})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").copy()

    def end(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{self.what}: {len(self.data) - self.pos} trailing bytes at offset {self.pos}")


def _header(r: _Reader, magic: bytes) -> None:
    got = r.take(4)
    if got != magic:
        raise FormatError(f"{r.what}: bad magic {got!r} at offset 0, expected {magic!r}")
    (version,) = r.unpack("I")
    if version != FORMAT_VERSION:
        raise FormatError(f"{r.what}: unsupported version {version} at offset 4")


# checkpoints


def checkpoint_bytes(params: Seq2SeqParams | CvaeParams) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    if isinstance(params, Seq2SeqParams):
        c = params.config
        kind, block = KIND_SEQ2SEQ, (c.hidden_dim, c.emb_dim, c.vocab_size, c.max_src_len, c.max_tgt_len, 0)
    elif isinstance(params, CvaeParams):
        c = params.config
        kind, block = KIND_CVAE, (c.cond_dim, 0, 0, c.max_src_len, c.max_tgt_len, c.latent_dim)
    else:
        raise TypeError(f"cannot checkpoint {type(params).__name__}")
    buf.write(struct.pack("<II6I", FORMAT_VERSION, kind, *block))
    buf.write(struct.pack("<Q", len(params.tensors)))
    for name, t in params.tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(params: Seq2SeqParams | CvaeParams, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(params))


def _read_tensors(r: _Reader) -> dict[str, np.ndarray]:
    (count,) = r.unpack("Q")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        at = r.pos
        (n,) = r.unpack("I")
        try:
            name = r.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{r.what}: tensor name at offset {at} is not UTF-8") from exc
        (rank,) = r.unpack("I")
        dims = r.unpack(f"{rank}I") if rank else ()
        if name in out:
            raise FormatError(f"{r.what}: duplicate tensor {name!r} at offset {at}")
        out[name] = r.f32(int(np.prod(dims, dtype=np.int64))).reshape(dims)
    return out


def _assemble(cls, config, arrays: dict[str, np.ndarray], template, what: str):
    expected = {k: t.shape for k, t in template.tensors.items()}
    got = {k: a.shape for k, a in arrays.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        wrong = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
        raise FormatError(f"{what}: tensors do not match config (missing {missing}, unexpected {extra}, bad shape {wrong})")
    tensors = {}
    for name, a in arrays.items():
        tensors[name] = T.parameter(a, dtype=np.float32)
        tensors[name].name = name
    return cls(config, tensors)


def load_checkpoint(path) -> Seq2SeqParams | CvaeParams:
    r = _Reader(Path(path).read_bytes(), str(path))
    _header(r, CHECKPOINT_MAGIC)
    (kind,) = r.unpack("I")
    d, e, V, S, T_, L = r.unpack("6I")
    arrays = _read_tensors(r)
    r.end()
    dummy = np.random.default_rng(0)
    if kind == KIND_SEQ2SEQ:
        layers = sum(1 for k in arrays if k.startswith("enc.") and k.endswith(".W"))
        config = Seq2SeqConfig(V, emb_dim=e, hidden_dim=d, num_layers=layers, max_src_len=S, max_tgt_len=T_)
        return _assemble(Seq2SeqParams, config, arrays, Seq2SeqParams.init(config, dummy), str(path))
    if kind == KIND_CVAE:
        hidden, k = [], 0
        while f"enc.{k}.W" in arrays:
            hidden.append(arrays[f"enc.{k}.W"].shape[1])
            k += 1
        config = CvaeConfig(T_, S, d, latent_dim=L, hidden=tuple(hidden))
        return _assemble(CvaeParams, config, arrays, CvaeParams.init(config, dummy), str(path))
    raise FormatError(f"{path}: unknown model kind {kind} at offset 8")


# attention datasets


def dataset_bytes(records: Sequence[AttentionRecord], max_tgt_len: int, max_src_len: int, cond_dim: int) -> bytes:
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<IQ3I", FORMAT_VERSION, len(records), max_tgt_len, max_src_len, cond_dim))
    for rec in records:
        A = rec.matrix
        if A.weights.shape != (max_tgt_len, max_src_len) or rec.summary.shape != (cond_dim,):
            raise ValueError(f"record shapes {A.weights.shape}/{rec.summary.shape} do not match the dataset header")
        buf.write(struct.pack("<II", A.n, A.m))
        buf.write(np.asarray(rec.summary, dtype="<f4").tobytes())
        buf.write(np.ascontiguousarray(A.weights, dtype="<f4").tobytes())
    return buf.getvalue()


def save_attention_dataset(records: Sequence[AttentionRecord], path, max_tgt_len: int, max_src_len: int, cond_dim: int) -> None:
    atomic_write_bytes(path, dataset_bytes(records, max_tgt_len, max_src_len, cond_dim))


@dataclass
class AttentionDataset:
    records: list[AttentionRecord]
    max_tgt_len: int
    max_src_len: int
    cond_dim: int


def load_attention_dataset(path) -> AttentionDataset:
    r = _Reader(Path(path).read_bytes(), str(path))
    _header(r, DATASET_MAGIC)
    (count,) = r.unpack("Q")
    T_, S, d = r.unpack("3I")
    records = []
    for _ in range(count):
        at = r.pos
        n, m = r.unpack("II")
        if not (1 <= n <= S and 1 <= m <= T_):
            raise FormatError(f"{path}: record at offset {at} has n={n}, m={m} outside [1, {S}] x [1, {T_}]")
        h = r.f32(d)
        W = r.f32(T_ * S).reshape(T_, S)
        records.append(AttentionRecord(AttentionMatrix(W, m, n), h))
    r.end()
    return AttentionDataset(records, T_, S, d)


# images


def pgm_bytes(weights: np.ndarray) -> bytes:
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {W.shape}")
    pixels = np.floor(255.0 * np.clip(W, 0.0, 1.0) + 0.5).astype(np.uint8)
    h, w = W.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def export_attention_pgm(A: AttentionMatrix | np.ndarray, path) -> None:
    """Binary greyscale image, one pixel per cell, row j of A is image row j."""
    atomic_write_bytes(path, pgm_bytes(A.weights if isinstance(A, AttentionMatrix) else A))


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header at offset {pos}")
        fields.append(data[start:pos].decode("ascii"))
    if fields[0] != "P5" or fields[3] != "255":
        raise FormatError(f"{path}: not an 8-bit binary PGM")
    w, h = int(fields[1]), int(fields[2])
    body = data[pos + 1 :]
    if len(body) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes at offset {pos + 1}, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


# sweeps


@dataclass
class SweepGrid:
    lo: float = -2.0
    hi: float = 2.0
    resolution: int = 8

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("grid resolution must be >= 1")
        if self.hi < self.lo:
            raise ValueError(f"empty range {self.lo}:{self.hi}")

    def values(self) -> np.ndarray:
        if self.resolution == 1:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, self.resolution)

    def points(self) -> list[tuple[int, int, float, float]]:
        v = self.values()
        return [(i, j, float(v[i]), float(v[j])) for i in range(len(v)) for j in range(len(v))]


@dataclass
class SweepRow:
    z1: float
    z2: float
    bleu: float
    sari: float
    fkgl: float
    length_ratio: float

    @property
    def z(self) -> tuple[float, float]:
        return (self.z1, self.z2)


@dataclass
class SweepReport:
    rows: list[SweepRow]
    grid: SweepGrid = field(default_factory=SweepGrid)
    seed: int = 0
    viz_index: int = 0

    def to_csv(self) -> str:
        lines = [SWEEP_HEADER]
        for r in self.rows:
            lines.append(",".join(f"{x:.6g}" for x in (r.z1, r.z2, r.bleu, r.sari, r.fkgl, r.length_ratio)))
        return "".join(line + "\n" for line in lines)

    def metadata(self) -> dict:
        return {"grid": asdict(self.grid), "rows": len(self.rows), "seed": self.seed, "viz_index": self.viz_index}


def parse_sweep_csv(text: str) -> list[SweepRow]:
    lines = text.splitlines()
    if not lines or lines[0] != SWEEP_HEADER:
        raise FormatError(f"sweep CSV header must be {SWEEP_HEADER!r}")
    return [SweepRow(*map(float, line.split(","))) for line in lines[1:] if line]


def select_best_z(report: SweepReport | Sequence[SweepRow], objective: str = "bleu") -> tuple[tuple[float, float], float]:
    """Row with the highest ``objective``; ties go to the smallest (z1, z2)."""
    rows = report.rows if isinstance(report, SweepReport) else list(report)
    if not rows:
        raise ValueError("empty sweep report")
    if objective not in ("bleu", "sari"):
        raise ValueError(f"objective must be bleu or sari, got {objective!r}")
    best = min(rows, key=lambda r: (-getattr(r, objective), r.z1, r.z2))
    return best.z, getattr(best, objective)


@dataclass
class _SweepJob:
    s2s: Seq2SeqParams
    cvae: CvaeParams
    src_ids: np.ndarray
    summary: np.ndarray
    sources: list[list[str]]
    references: list[list[list[str]]]
    vocab: Vocab
    viz_index: int


def _score_point(job: _SweepJob, z: tuple[float, float]) -> tuple[SweepRow, np.ndarray]:
    prior = cvae_decode(np.asarray(z), job.summary, job.cvae)
    out = translate_corpus(job.src_ids, job.s2s, prior=prior)
    hyps = [job.vocab.decode(toks) for toks, _ in out]
    rep = metrics.evaluate(job.sources, hyps, job.references)
    return SweepRow(z[0], z[1], rep.bleu, rep.sari, rep.fkgl, rep.length_ratio), prior[job.viz_index]


_WORKER_JOB: _SweepJob | None = None


def _init_worker(job: _SweepJob) -> None:
    global _WORKER_JOB
    _WORKER_JOB = job


def _worker_point(z):
    return _score_point(_WORKER_JOB, z)


def run_sweep(
    s2s: Seq2SeqParams,
    cvae: CvaeParams,
    pairs: Sequence[ParallelPair],
    vocab: Vocab,
    grid: SweepGrid,
    viz_index: int = 0,
    out_dir=None,
    jobs: int = 1,
    seed: int = 0,
) -> SweepReport:
    """Translate the whole corpus in prior mode once per grid point and score it.

    One global code per grid point. With ``out_dir`` set, writes sweep.csv,
    sweep.json and the generated matrices of sentence ``viz_index`` as
    z_<i>_<j>.pgm.
    """
    if not pairs:
        raise ValueError("sweep needs a nonempty evaluation corpus")
    if not 0 <= viz_index < len(pairs):
        raise ValueError(f"viz index {viz_index} outside corpus of {len(pairs)} sentences")
    if cvae.config.latent_dim != 2:
        raise ValueError(f"grid sweeps need a 2-D latent code, model has {cvae.config.latent_dim}")
    if (cvae.config.max_src_len, cvae.config.max_tgt_len) != (s2s.config.max_src_len, s2s.config.max_tgt_len):
        raise ValueError("CVAE and seq2seq models disagree on maximum lengths")
    src_ids = encode_corpus([p.source for p in pairs], vocab, s2s.config.max_src_len)
    with T.no_grad():
        summary = encode_source(src_ids, s2s).summary.data
    job = _SweepJob(s2s, cvae, src_ids, summary, [p.source for p in pairs], [p.references for p in pairs], vocab, viz_index)
    points = grid.points()
    zs = [(z1, z2) for _, _, z1, z2 in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(job,)) as pool:
            results = list(pool.map(_worker_point, zs))
    else:
        results = [_score_point(job, z) for z in zs]
    report = SweepReport([row for row, _ in results], grid, seed, viz_index)
    if out_dir is not None:
        out = Path(out_dir)
        for (i, j, _, _), (_, prior) in zip(points, results):
            export_attention_pgm(prior, out / f"z_{i}_{j}.pgm")
        atomic_write_text(out / "sweep.json", json.dumps(report.metadata(), indent=2, sort_keys=True) + "\n")
        atomic_write_text(out / "sweep.csv", report.to_csv())
    return report
