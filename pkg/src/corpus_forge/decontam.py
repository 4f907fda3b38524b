"""Held-out leakage removal for the language-model corpus.

A candidate book is removed when its title is within word edit distance 1 of
any dev/test book title, or when more than the threshold fraction (default
1%) of its stop-word-filtered 5-grams appear in the dev/test transcripts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .retrieval import edit_distance

NGRAM_ORDER = 5
DEFAULT_CONTAMINATION_THRESHOLD = 0.01
TITLE_DISTANCE_LIMIT = 2  # strictly-less-than match rule


@dataclass
class FiveGramIndex:
    grams: set[tuple[str, ...]] = field(default_factory=set)
    stopwords: frozenset[str] = frozenset()

    def __contains__(self, gram: tuple[str, ...]) -> bool:
        return gram in self.grams

    def __len__(self) -> int:
        return len(self.grams)


def load_stopwords(path: str | Path) -> frozenset[str]:
    """One stop word per line; '#' starts a comment."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            words.add(line)
    return frozenset(words)


def default_stopwords(language_id: str = "en") -> frozenset[str]:
    path = Path(__file__).parent / "data" / "stopwords" / f"{language_id}.stop"
    if not path.exists():
        raise FileNotFoundError(f"no bundled stopword list for {language_id!r}")
    return load_stopwords(path)


def _fivegrams(tokens, stopwords, distinct: bool = True):
    kept = [t for t in tokens if t not in stopwords]
    if distinct:
        out: set[tuple[str, ...]] = set()
        for i in range(len(kept) - NGRAM_ORDER + 1):
            out.add(tuple(kept[i : i + NGRAM_ORDER]))
        return out
    return [tuple(kept[i : i + NGRAM_ORDER]) for i in range(len(kept) - NGRAM_ORDER + 1)]


def title_match(candidate_title, heldout_titles) -> bool:
    """True when the word edit distance to any held-out title is < 2."""
    candidate = list(candidate_title)
    for title in heldout_titles:
        if edit_distance(candidate, list(title)) < TITLE_DISTANCE_LIMIT:
            return True
    return False


def build_heldout_index(texts, stopwords) -> FiveGramIndex:
    """Membership set of every stop-word-filtered 5-gram in the held-out
    texts (a posting-list inverted index adds nothing to a membership test)."""
    index = FiveGramIndex(stopwords=frozenset(stopwords))
    for tokens in texts:
        index.grams |= _fivegrams(list(tokens), index.stopwords)
    return index


def contamination_rate(
    book_tokens, index: FiveGramIndex, count_tokens: bool = False
) -> float:
    """Fraction of the book's 5-grams found in the held-out index.

    Defaults to distinct 5-grams; ``count_tokens`` switches the denominator
    to running occurrences. Books too short for any 5-gram rate 0.
    """
    grams = _fivegrams(list(book_tokens), index.stopwords, distinct=not count_tokens)
    if not grams:
        return 0.0
    hits = sum(1 for g in grams if g in index.grams)
    return hits / len(grams)


@dataclass
class LmBook:
    book_id: str
    title: tuple[str, ...]
    tokens: tuple[str, ...]


def filter_corpus(
    books,
    heldout_titles,
    index: FiveGramIndex,
    threshold: float = DEFAULT_CONTAMINATION_THRESHOLD,
    count_tokens: bool = False,
) -> tuple[list[LmBook], list[LmBook], list[dict]]:
    """Split books into (kept, removed) with a per-book report row."""
    kept: list[LmBook] = []
    removed: list[LmBook] = []
    report: list[dict] = []
    heldout_titles = [list(t) for t in heldout_titles]
    for book in books:
        rate = contamination_rate(book.tokens, index, count_tokens=count_tokens)
        if title_match(book.title, heldout_titles):
            removed.append(book)
            report.append(
                {"book_id": book.book_id, "action": "removed", "reason": "title", "rate": rate}
            )
        elif rate > threshold:
            removed.append(book)
            report.append(
                {"book_id": book.book_id, "action": "removed", "reason": "ngram-overlap", "rate": rate}
            )
        else:
            kept.append(book)
            report.append(
                {"book_id": book.book_id, "action": "kept", "reason": "", "rate": rate}
            )
    return kept, removed, report
