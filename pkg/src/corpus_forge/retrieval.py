"""Transcript retrieval: locate each pseudo-label inside its source book.

Books are split into overlapping word-window shards (1250 words, stride
1000), indexed by tf-idf over word bigrams, and queried with the pseudo
label. The winning shard window is aligned to the pseudo label with a local
Smith-Waterman (match 2, substitution/insertion/deletion -1); digit words of
the matched book text are replaced from the aligned pseudo words; candidates
are accepted when their word error rate against the pseudo label does not
exceed the threshold (default 40%).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

DEFAULT_SHARD_SIZE = 1250
DEFAULT_SHARD_STRIDE = 1000
DEFAULT_WER_THRESHOLD = 0.40
DEFAULT_RARE_THRESHOLD = 3

HYPHEN_SPLIT_CHARS = "-‐"


@dataclass(frozen=True)
class DocumentShard:
    shard_id: int
    book_id: str
    word_offset: int
    words: tuple[str, ...]


@dataclass(frozen=True)
class AlignmentOp:
    """One alignment step; indices are into the query / reference word lists
    (None for the unmatched side of a gap)."""

    kind: str  # match | substitute | insert | delete
    query_index: int | None
    ref_index: int | None


@dataclass(frozen=True)
class AlignmentResult:
    score: int
    ref_span: tuple[int, int]  # half-open word range in the reference
    query_span: tuple[int, int]
    ops: tuple[AlignmentOp, ...]


@dataclass
class RetrievalHit:
    shard: DocumentShard
    score: float


@dataclass
class RetrievalResult:
    hits: list[RetrievalHit]
    status: str  # "ok" | "no_match"


@dataclass
class CandidateTranscript:
    segment_id: str
    words: tuple[str, ...]
    source: tuple[str, tuple[int, int]]  # (book_id, word offset range)
    pseudo_wer: float
    accepted: bool


def shard_book(
    words,
    book_id: str = "",
    shard_size: int = DEFAULT_SHARD_SIZE,
    shard_stride: int = DEFAULT_SHARD_STRIDE,
) -> list[DocumentShard]:
    """Overlapping windows at offsets 0, stride, 2*stride, ...; the final
    shard may be shorter. Empty books yield no shards."""
    if shard_stride > shard_size:
        raise ValueError("shard_stride must be <= shard_size")
    if shard_stride <= 0:
        raise ValueError("shard_stride must be positive")
    words = list(words)
    shards = []
    offset = 0
    while offset < len(words):
        shards.append(
            DocumentShard(
                shard_id=len(shards),
                book_id=book_id,
                word_offset=offset,
                words=tuple(words[offset : offset + shard_size]),
            )
        )
        offset += shard_stride
    return shards


class TfIdfIndex:
    """Bigram tf-idf index over one book's shards.

    tf is the raw bigram count per shard, idf = ln(N/df). Vectors keep no
    zero entries, so a bigram occurring in every shard carries no weight;
    queries whose weighted vector vanishes entirely (single-shard books, or
    a query made only of everywhere-bigrams) fall back to raw-tf dot-product
    scoring so retrieval still functions.
    """

    def __init__(self, shards: list[DocumentShard]):
        if not shards:
            raise ValueError("cannot index zero shards")
        self.shards = list(shards)
        self.n_shards = len(shards)
        self.df: dict[tuple[str, str], int] = {}
        tfs = []
        for shard in self.shards:
            tf = Counter(zip(shard.words, shard.words[1:]))
            tfs.append(tf)
            for gram in tf:
                self.df[gram] = self.df.get(gram, 0) + 1

        self.idf = {g: math.log(self.n_shards / d) for g, d in self.df.items()}

        self.postings: dict[tuple[str, str], list[tuple[int, float]]] = {}
        self.tf_postings: dict[tuple[str, str], list[tuple[int, int]]] = {}
        self.norms = [0.0] * self.n_shards
        for i, tf in enumerate(tfs):
            for gram, count in tf.items():
                self.tf_postings.setdefault(gram, []).append((i, count))
                weight = count * self.idf[gram]
                if weight == 0.0:
                    continue
                self.postings.setdefault(gram, []).append((i, weight))
                self.norms[i] += weight * weight
        self.norms = [math.sqrt(v) for v in self.norms]

    def query_vector(self, words) -> tuple[dict[tuple[str, str], float], bool]:
        """(vector, tf_fallback?): the weighted query vector, or the raw-tf
        vector over known bigrams when every weighted entry vanished."""
        qtf = Counter(zip(words, words[1:]))
        vec = {}
        known = {}
        for gram, count in qtf.items():
            if gram not in self.df:
                continue
            known[gram] = float(count)
            weight = count * self.idf[gram]
            if weight != 0.0:
                vec[gram] = weight
        if vec:
            return vec, False
        return known, True


def build_index(shards: list[DocumentShard]) -> TfIdfIndex:
    return TfIdfIndex(shards)


def retrieve(index: TfIdfIndex, pseudo_label, top_k: int = 1) -> RetrievalResult:
    """Rank shards by cosine similarity to the pseudo label's bigrams.

    A query sharing no indexed bigram (including queries shorter than two
    words) returns status "no_match", distinct from a zero score.
    """
    words = list(pseudo_label)
    qvec, tf_fallback = index.query_vector(words)
    if not qvec:
        return RetrievalResult(hits=[], status="no_match")
    qnorm = math.sqrt(sum(w * w for w in qvec.values()))
    scores: dict[int, float] = {}
    postings = index.tf_postings if tf_fallback else index.postings
    for gram, weight in qvec.items():
        for shard_i, shard_w in postings[gram]:
            scores[shard_i] = scores.get(shard_i, 0.0) + weight * shard_w
    ranked = []
    for shard_i, dot in scores.items():
        if tf_fallback:
            ranked.append((-dot, shard_i))
        else:
            ranked.append((-dot / (qnorm * index.norms[shard_i]), shard_i))
    ranked.sort()  # ties broken by lower shard id
    hits = [
        RetrievalHit(shard=index.shards[i], score=-neg) for neg, i in ranked[:top_k]
    ]
    return RetrievalResult(hits=hits, status="ok")


def smith_waterman(
    query,
    reference,
    match: int = 2,
    mismatch: int = -1,
    gap: int = -1,
) -> AlignmentResult:
    """Word-level local alignment by the standard zero-clamped DP.

    Among equal-score alignments the one with the smallest reference start
    wins, then the shortest reference span. The score table is filled
    row-wise with vectorized recurrences; the in-row gap chain is resolved
    with a prefix-max scan (valid because the gap penalty is linear).
    """
    query = list(query)
    reference = list(reference)
    if not query or not reference:
        raise ValueError("query and reference must be non-empty")
    if gap >= 0 or mismatch >= match:
        raise ValueError("scores must satisfy gap < 0 and mismatch < match")

    ids: dict[str, int] = {}
    q_ids = np.array([ids.setdefault(w, len(ids)) for w in query], dtype=np.int64)
    r_ids = np.array([ids.setdefault(w, len(ids)) for w in reference], dtype=np.int64)
    n, m = len(query), len(reference)

    H = np.zeros((n + 1, m + 1), dtype=np.int64)
    cols = np.arange(1, m + 1, dtype=np.int64)
    gap_ramp = gap * cols
    for i in range(1, n + 1):
        sub = np.where(r_ids == q_ids[i - 1], match, mismatch)
        cand = np.maximum(H[i - 1, :m] + sub, H[i - 1, 1:] + gap)
        np.maximum(cand, 0, out=cand)
        # H[i, j] = max_{k<=j}(cand[k] + gap*(j-k)): prefix-max on cand - gap*k
        H[i, 1:] = np.maximum.accumulate(cand - gap_ramp) + gap_ramp

    best = int(H.max())
    if best == 0:
        return AlignmentResult(score=0, ref_span=(0, 0), query_span=(0, 0), ops=())

    def traceback(i: int, j: int):
        ops = []
        while H[i, j] > 0:
            here = H[i, j]
            s = match if q_ids[i - 1] == r_ids[j - 1] else mismatch
            if i > 0 and j > 0 and here == H[i - 1, j - 1] + s:
                ops.append(
                    AlignmentOp(
                        kind="match" if s == match else "substitute",
                        query_index=i - 1,
                        ref_index=j - 1,
                    )
                )
                i -= 1
                j -= 1
            elif i > 0 and here == H[i - 1, j] + gap:
                ops.append(AlignmentOp(kind="insert", query_index=i - 1, ref_index=None))
                i -= 1
            else:
                ops.append(AlignmentOp(kind="delete", query_index=None, ref_index=j - 1))
                j -= 1
        ops.reverse()
        return i, j, ops

    candidates = []
    for i, j in np.argwhere(H == best):
        qs, rs, ops = traceback(int(i), int(j))
        candidates.append((rs, int(j) - rs, qs, int(i), int(j), ops))
    candidates.sort(key=lambda c: (c[0], c[1], c[2], c[4], c[3]))
    rs, span_len, qs, qe, re_, ops = candidates[0]
    return AlignmentResult(
        score=best,
        ref_span=(rs, re_),
        query_span=(qs, qe),
        ops=tuple(ops),
    )


def _has_digit(word: str) -> bool:
    return any(c.isdigit() for c in word)


def replace_numbers(aligned: AlignmentResult, reference_words, pseudo_words) -> list[str]:
    """Resolve digit words of the aligned book span from the pseudo label.

    Returns the reference span's words with every digit-bearing word replaced
    by the pseudo words aligned against it. Maximal runs of consecutive
    insertion / digit-word ops are replaced jointly, so multi-word readings
    ("four o one" for "401") are reconstructed; digit words aligned only to
    deletions disappear (unread page numbers).
    """
    reference_words = list(reference_words)
    pseudo_words = list(pseudo_words)
    out: list[str] = []
    ops = aligned.ops
    i = 0
    while i < len(ops):
        op = ops[i]
        in_digit_block = op.kind == "insert" or (
            op.ref_index is not None and _has_digit(reference_words[op.ref_index])
        )
        if not in_digit_block:
            if op.ref_index is not None:
                out.append(reference_words[op.ref_index])
            i += 1
            continue
        block = []
        digit_seen = False
        while i < len(ops):
            op = ops[i]
            if op.kind == "insert":
                block.append(op)
            elif op.ref_index is not None and _has_digit(reference_words[op.ref_index]):
                block.append(op)
                digit_seen = True
            else:
                break
            i += 1
        if digit_seen:
            for op in block:
                if op.query_index is not None:
                    out.append(pseudo_words[op.query_index])
        else:
            # pure insertion run next to ordinary text: book text stands
            for op in block:
                if op.ref_index is not None:
                    out.append(reference_words[op.ref_index])
    return out


def fix_rare_wordforms(
    words,
    book_freq: dict[str, int],
    rare_threshold: int = DEFAULT_RARE_THRESHOLD,
) -> list[str]:
    """Hyphen/apostrophe cleanup driven by distinct-book counts.

    Rare hyphenated words are split at their hyphens; rare apostrophe words
    lose the apostrophe unless the stripped form is itself rare, in which
    case the original stands. Frequent forms always pass unchanged.
    """
    out: list[str] = []
    for word in words:
        freq = book_freq.get(word, 0)
        if any(h in word for h in HYPHEN_SPLIT_CHARS):
            if freq < rare_threshold:
                piece = word
                for h in HYPHEN_SPLIT_CHARS:
                    piece = piece.replace(h, " ")
                out.extend(p for p in piece.split() if p)
            else:
                out.append(word)
        elif "'" in word or "’" in word:
            if freq < rare_threshold:
                stripped = word.replace("'", "").replace("’", "")
                if stripped and book_freq.get(stripped, 0) >= rare_threshold:
                    out.append(stripped)
                else:
                    out.append(word)
            else:
                out.append(word)
        else:
            out.append(word)
    return out


def build_book_frequencies(books: dict[str, list[str]]) -> dict[str, int]:
    """word -> number of distinct books it appears in."""
    freq: dict[str, int] = {}
    for words in books.values():
        for w in set(words):
            freq[w] = freq.get(w, 0) + 1
    return freq


def edit_distance(a, b) -> int:
    """Word-level Levenshtein distance, unit costs, two-row table."""
    a = list(a)
    b = list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, wa in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, wb in enumerate(b, 1):
            cost = 0 if wa == wb else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


def wer(hyp, ref) -> float:
    """Word error rate: edit distance divided by reference length."""
    ref = list(ref)
    if not ref:
        raise ValueError("wer reference must be non-empty")
    return edit_distance(hyp, ref) / len(ref)


def accept_candidate(
    candidate_words,
    pseudo_words,
    threshold: float = DEFAULT_WER_THRESHOLD,
    segment_id: str = "",
    source: tuple[str, tuple[int, int]] | None = None,
) -> CandidateTranscript:
    """Accept iff WER(candidate, pseudo) <= threshold (strictly greater is
    filtered out); the WER is recorded either way."""
    candidate_words = list(candidate_words)
    pseudo_words = list(pseudo_words)
    if not candidate_words or not pseudo_words:
        raise ValueError("candidate and pseudo label must be non-empty")
    rate = wer(candidate_words, pseudo_words)
    return CandidateTranscript(
        segment_id=segment_id,
        words=tuple(candidate_words),
        source=source if source is not None else ("", (0, 0)),
        pseudo_wer=rate,
        accepted=rate <= threshold,
    )


def retrieve_transcript(
    book_words,
    shards: list[DocumentShard],
    index: TfIdfIndex,
    pseudo_words,
) -> tuple[list[str], tuple[int, int], AlignmentResult] | None:
    """Full per-segment retrieval: rank shards, align against the top shard
    plus its overlap neighbors (a true span can straddle a stride boundary),
    resolve digit words, and widen the span across unaligned query edges.

    The widening covers pseudo-label words the local alignment trimmed at
    either end (corrupted edge words correspond to real audio, and the book
    text across from them is the best transcript available, the same
    assumption the number replacement makes). Returns (words, book word
    span, alignment) or None when nothing matches.
    """
    book_words = list(book_words)
    pseudo_words = list(pseudo_words)
    hit = retrieve(index, pseudo_words, top_k=1)
    if hit.status != "ok":
        return None
    top = hit.hits[0].shard
    lo = max(0, top.shard_id - 1)
    hi = min(len(shards) - 1, top.shard_id + 1)
    win_start = shards[lo].word_offset
    win_end = shards[hi].word_offset + len(shards[hi].words)
    window = book_words[win_start:win_end]
    aligned = smith_waterman(pseudo_words, window)
    if aligned.score <= 0:
        return None
    core = replace_numbers(aligned, window, pseudo_words)
    lead = aligned.query_span[0]
    trail = len(pseudo_words) - aligned.query_span[1]
    ext_lo = max(0, aligned.ref_span[0] - lead)
    ext_hi = min(len(window), aligned.ref_span[1] + trail)
    span_words = window[ext_lo : aligned.ref_span[0]] + core + window[aligned.ref_span[1] : ext_hi]
    span = (win_start + ext_lo, win_start + ext_hi)
    return span_words, span, aligned
