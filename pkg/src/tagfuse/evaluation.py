"""Objective imputation quality metrics: BLEU-1..4, greedy-match BERT-Score,
per-field reports, and value-distribution histograms."""

from __future__ import annotations

import csv
import io
import json
import math
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .metadata import LIST_FIELDS, TrackMetadata

TokenSeq = tuple[str, ...]

EVAL_FIELDS = ("genres", "speed", "vartags")
DEFAULT_SAMPLE_SIZE = 5000

_EDGE_PUNCT = string.punctuation


def tokenize_field(value: str | Sequence[str]) -> TokenSeq:
    """Lowercased whitespace tokens with edge punctuation stripped.

    List values are joined with single spaces first, so ["hip-hop", "pop"]
    tokenizes to ("hip-hop", "pop").
    """
    if isinstance(value, str):
        text = value
    else:
        text = " ".join(str(v) for v in value)
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(_EDGE_PUNCT)
        if tok:
            tokens.append(tok)
    return tuple(tokens)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped_matches(candidate: Sequence[str], reference: Sequence[str], n: int) -> tuple[int, int]:
    """(clipped match count, candidate n-gram count) for one order n."""
    cand = _ngram_counts(candidate, n)
    total = sum(cand.values())
    if total == 0:
        return 0, 0
    ref = _ngram_counts(reference, n)
    matches = sum(min(count, ref[gram]) for gram, count in cand.items())
    return matches, total


def _bleu_from_counts(stats: list[tuple[int, int]], cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for matches, total in stats:
        if matches == 0 or total == 0:
            return 0.0
        log_sum += math.log(matches / total)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum / len(stats))


def bleu_n(candidate: TokenSeq, reference: TokenSeq, n: int) -> float:
    """Sentence-level BLEU: clipped modified precision, geometric mean of
    orders 1..n, brevity penalty exp(1 - r/c) when the candidate is shorter."""
    if n not in (1, 2, 3, 4):
        raise ValueError(f"n must be in 1..4, got {n}")
    stats = [_clipped_matches(candidate, reference, i) for i in range(1, n + 1)]
    return _bleu_from_counts(stats, len(candidate), len(reference))


def corpus_bleu_n(pairs: Sequence[tuple[TokenSeq, TokenSeq]], n: int) -> float:
    """Corpus-level BLEU: clipped counts pooled over all (candidate, reference)
    pairs, then a single brevity penalty. No smoothing."""
    if n not in (1, 2, 3, 4):
        raise ValueError(f"n must be in 1..4, got {n}")
    stats = []
    for i in range(1, n + 1):
        matches = total = 0
        for candidate, reference in pairs:
            m, t = _clipped_matches(candidate, reference, i)
            matches += m
            total += t
        stats.append((matches, total))
    cand_len = sum(len(c) for c, _ in pairs)
    ref_len = sum(len(r) for _, r in pairs)
    return _bleu_from_counts(stats, cand_len, ref_len)


@dataclass(frozen=True, eq=False)
class TokenEmbeddings:
    """Token sequence with one embedding vector per token."""

    tokens: TokenSeq
    vectors: np.ndarray  # (len(tokens), dim)

    def __post_init__(self) -> None:
        vecs = np.asarray(self.vectors, dtype=np.float64)
        if len(self.tokens) == 0:
            vecs = vecs.reshape(0, vecs.shape[1] if vecs.ndim == 2 else 0)
        if vecs.ndim != 2 or vecs.shape[0] != len(self.tokens):
            raise ValueError(
                f"vector count {vecs.shape} does not match {len(self.tokens)} tokens"
            )
        if vecs.size and not np.isfinite(vecs).all():
            raise ValueError("token embeddings contain non-finite values")
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class BertScore:
    precision: float
    recall: float
    f1: float
    empty_input: bool = False


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return vectors / safe


def bert_score(candidate: TokenEmbeddings, reference: TokenEmbeddings) -> BertScore:
    """Greedy maximum-cosine token matching; harmonic-mean F1, no rescaling."""
    if len(candidate) == 0 or len(reference) == 0:
        return BertScore(0.0, 0.0, 0.0, empty_input=True)
    sims = np.clip(_unit_rows(candidate.vectors) @ _unit_rows(reference.vectors).T, -1.0, 1.0)
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    f1 = 0.0 if precision + recall == 0.0 else 2.0 * precision * recall / (precision + recall)
    return BertScore(precision, recall, f1)


class TokenVectorProvider(Protocol):
    """Source of per-token embedding vectors for BERT-Score."""

    def vectors(self, tokens: Sequence[str]) -> np.ndarray: ...


class FileVectorProvider:
    """Token vectors from a word2vec-style text file.

    First line: ``<count> <dim>``; each following line: ``<token> v1 ... vdim``.
    Unknown tokens map to the zero vector (they score 0 against everything).
    """

    def __init__(self, path: str | Path):
        self._table: dict[str, np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}: expected '<count> <dim>' header")
            count, dim = int(header[0]), int(header[1])
            for line in fh:
                parts = line.rstrip("\n").split(" ")
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}: bad vector line for token {parts[0]!r}")
                self._table[parts[0]] = np.asarray(parts[1:], dtype=np.float64)
        if len(self._table) != count:
            raise ValueError(f"{path}: header count {count} != {len(self._table)} vectors")
        self.dim = dim

    def vectors(self, tokens: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(tokens), self.dim), dtype=np.float64)
        for i, tok in enumerate(tokens):
            vec = self._table.get(tok)
            if vec is not None:
                out[i] = vec
        return out


class HttpVectorProvider:
    """Token vectors from an embedding service: POST {tokens} -> {vectors}."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url
        self.timeout = timeout

    def vectors(self, tokens: Sequence[str]) -> np.ndarray:
        import requests

        resp = requests.post(self.base_url, json={"tokens": list(tokens)}, timeout=self.timeout)
        resp.raise_for_status()
        vectors = np.asarray(resp.json()["vectors"], dtype=np.float64)
        if vectors.shape[0] != len(tokens):
            raise ValueError("embedding service returned wrong vector count")
        return vectors


def embed_tokens(tokens: TokenSeq, provider: TokenVectorProvider) -> TokenEmbeddings:
    if not tokens:
        return TokenEmbeddings((), np.zeros((0, 1)))
    return TokenEmbeddings(tokens, provider.vectors(tokens))


@dataclass(frozen=True)
class FieldReport:
    """Aggregated scores for one metadata field."""

    field: str
    bert_f1: float
    bleu: tuple[float, float, float, float]
    sample_count: int

    def __post_init__(self) -> None:
        for score in (self.bert_f1, *self.bleu):
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"score {score} outside [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "field": self.field,
            "bert_score_f1": self.bert_f1,
            "bleu_1": self.bleu[0],
            "bleu_2": self.bleu[1],
            "bleu_3": self.bleu[2],
            "bleu_4": self.bleu[3],
            "sample_count": self.sample_count,
        }


FieldValue = str | Sequence[str]


def evaluate_field(
    pairs: Sequence[tuple[FieldValue, FieldValue]],
    provider: TokenVectorProvider,
    field_name: str = "",
) -> FieldReport:
    """Corpus BLEU-1..4 plus mean BERT-Score F1 over (original, imputed) pairs.

    Pairs must come from tracks whose original field is non-missing.
    """
    if not pairs:
        raise ValueError("evaluate_field needs at least one pair")
    token_pairs = [
        (tokenize_field(imputed), tokenize_field(original)) for original, imputed in pairs
    ]
    bleu = tuple(corpus_bleu_n(token_pairs, n) for n in (1, 2, 3, 4))
    f1_total = 0.0
    for candidate_tokens, reference_tokens in token_pairs:
        score = bert_score(
            embed_tokens(candidate_tokens, provider),
            embed_tokens(reference_tokens, provider),
        )
        # Cosine-based F1 can dip below zero; report scores live in [0, 1].
        f1_total += max(0.0, score.f1)
    return FieldReport(field_name, f1_total / len(token_pairs), bleu, len(token_pairs))


def sample_field_pairs(
    originals: Mapping[int, TrackMetadata],
    imputeds: Mapping[int, TrackMetadata],
    field_name: str,
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    seed: int = 7,
) -> list[tuple[FieldValue, FieldValue]]:
    """Fixed-seed sample of (original, imputed) values where the original
    field is non-missing and the track appears in both collections."""
    eligible = sorted(
        tid for tid, m in originals.items()
        if tid in imputeds and not m.field_missing(field_name)
    )
    if len(eligible) > sample_size:
        rng = np.random.Generator(np.random.Philox(key=seed))
        chosen = rng.choice(len(eligible), size=sample_size, replace=False)
        eligible = [eligible[i] for i in sorted(chosen)]
    return [
        (getattr(originals[tid], field_name), getattr(imputeds[tid], field_name))
        for tid in eligible
    ]


# --- distributions ------------------------------------------------------------

def field_distribution(records: Iterable[TrackMetadata], field_name: str) -> dict[str, int]:
    """Exact case-folded value counts; the empty key counts missing records."""
    counts: Counter = Counter()
    for m in records:
        if m.field_missing(field_name):
            counts[""] += 1
        elif field_name in LIST_FIELDS:
            for value in getattr(m, field_name):
                counts[value.lower()] += 1
        else:
            counts[getattr(m, field_name).lower()] += 1
    return dict(counts)


def distribution_csv(
    original: Iterable[TrackMetadata],
    imputed: Iterable[TrackMetadata],
    field_name: str,
) -> str:
    """Side-by-side histogram as ``value,count_original,count_imputed`` rows."""
    orig = field_distribution(original, field_name)
    imp = field_distribution(imputed, field_name)
    values = sorted(set(orig) | set(imp), key=lambda v: (-(orig.get(v, 0) + imp.get(v, 0)), v))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["value", "count_original", "count_imputed"])
    for value in values:
        writer.writerow([value, orig.get(value, 0), imp.get(value, 0)])
    return buf.getvalue()


# --- report formatting ----------------------------------------------------------

_METRIC_ROWS = ("BERT-Score", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4")


def _report_cell(report: FieldReport, metric: str) -> float:
    if metric == "BERT-Score":
        return report.bert_f1
    return report.bleu[int(metric[-1]) - 1]


def report_to_json(reports_by_mode: Mapping[str, Mapping[str, FieldReport]]) -> str:
    payload = {
        mode: {field: report.to_json_dict() for field, report in by_field.items()}
        for mode, by_field in reports_by_mode.items()
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def format_report_table(reports_by_mode: Mapping[str, Mapping[str, FieldReport]]) -> str:
    """Aligned-column table: metric rows against per-mode field columns."""
    modes = list(reports_by_mode)
    fields = []
    for by_field in reports_by_mode.values():
        for field_name in by_field:
            if field_name not in fields:
                fields.append(field_name)
    if not modes or not fields:
        return ""
    width = max(8, *(len(f) for f in fields)) + 2
    label_w = max(len(m) for m in _METRIC_ROWS) + 2

    lines = []
    header_groups = "".join(
        f"{mode + ' examples':^{width * len(fields)}}" for mode in modes
    )
    lines.append(" " * label_w + header_groups)
    header = " " * label_w + "".join(
        f"{field.capitalize():>{width}}" for _ in modes for field in fields
    )
    lines.append(header)
    for metric in _METRIC_ROWS:
        cells = []
        for mode in modes:
            for field_name in fields:
                report = reports_by_mode[mode].get(field_name)
                cells.append(
                    f"{_report_cell(report, metric):>{width}.2f}" if report else " " * width
                )
        lines.append(f"{metric:<{label_w}}" + "".join(cells))
    return "\n".join(lines)
