"""Speaker/chapter partitioning and limited-supervision subset carving.

Speakers below a duration threshold always train; from the rest, the 2k
shortest-duration speakers per gender alternate into dev and test (k each),
everyone else trains. Dev/test speakers over the duration cap have whole
segments sampled away under the run seed. Chapters follow their speaker's
partition, exclusively.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

GENDERS = ("M", "F")


class SplitError(ValueError):
    """Unsatisfiable partition request (e.g. dev/test quota deficit)."""


@dataclass(frozen=True)
class SpeakerRecord:
    speaker_id: str
    gender: str
    total_duration: float  # seconds over valid books
    mean_pseudo_wer: float = 0.0

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if self.total_duration < 0:
            raise ValueError("total_duration must be >= 0")
        if not 0.0 <= self.mean_pseudo_wer <= 1.0:
            raise ValueError("mean_pseudo_wer must be in [0, 1]")


@dataclass(frozen=True)
class ChapterRef:
    chapter_id: str
    speaker_id: str
    duration: float = 0.0


@dataclass(frozen=True)
class BookRecord:
    book_id: str
    title: tuple[str, ...]
    author: str
    version: int
    chapters: tuple[ChapterRef, ...]
    multi_speaker: bool = False


@dataclass
class PartitionAssignment:
    speaker_partition: dict[str, str]
    chapter_partition: dict[str, str] = field(default_factory=dict)
    kept_segments: dict[str, tuple[str, ...]] = field(default_factory=dict)
    truncation_report: list[dict] = field(default_factory=list)
    chapter_report: list[dict] = field(default_factory=list)
    partition_duration: dict[str, float] = field(default_factory=dict)
    gender_counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def speakers_in(self, partition: str) -> list[str]:
        return sorted(s for s, p in self.speaker_partition.items() if p == partition)

    def verify(self) -> None:
        """Exhaustive invariant check; raises on any violation."""
        dev = self.gender_counts.get("dev", {})
        test = self.gender_counts.get("test", {})
        for g in GENDERS:
            if dev.get(g, 0) != test.get(g, 0):
                raise AssertionError(
                    f"dev/test speaker counts differ for gender {g}: "
                    f"{dev.get(g, 0)} vs {test.get(g, 0)}"
                )
        for part in self.speaker_partition.values():
            if part not in ("train", "dev", "test"):
                raise AssertionError(f"unknown speaker partition {part}")
        for cid, part in self.chapter_partition.items():
            if part not in ("train", "dev", "test"):
                raise AssertionError(f"chapter {cid} in unknown partition {part}")


def validate_books(books) -> tuple[list[BookRecord], list[dict]]:
    """Drop corrupted-metadata and multi-speaker books; keep only the highest
    version per (author, title). Returns (valid, rejection report)."""
    report = []
    survivors = []
    for book in books:
        if not book.title or not book.author:
            report.append({"book_id": book.book_id, "reason": "corrupted metadata"})
            continue
        if any(not ch.speaker_id for ch in book.chapters):
            report.append({"book_id": book.book_id, "reason": "corrupted metadata"})
            continue
        if book.multi_speaker:
            report.append({"book_id": book.book_id, "reason": "multiple speakers"})
            continue
        survivors.append(book)

    latest: dict[tuple[str, tuple[str, ...]], BookRecord] = {}
    for book in survivors:
        key = (book.author, book.title)
        cur = latest.get(key)
        if cur is None:
            latest[key] = book
        elif book.version > cur.version or (
            book.version == cur.version and book.book_id < cur.book_id
        ):
            report.append({"book_id": cur.book_id, "reason": "superseded version"})
            latest[key] = book
        else:
            report.append({"book_id": book.book_id, "reason": "superseded version"})
    valid = sorted(latest.values(), key=lambda b: b.book_id)
    return valid, report


def _speaker_rng(seed: int, speaker_id: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{speaker_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def partition_speakers(
    speakers,
    dev_test_speakers_per_gender: int,
    train_threshold: float,
    dev_test_cap: float,
    recordings: dict[str, list[tuple[str, float]]] | None = None,
    seed: int = 0,
) -> PartitionAssignment:
    """Assign every speaker to train/dev/test.

    ``recordings`` maps speaker_id to (segment_id, duration_s) pairs; when
    given, dev/test speakers above ``dev_test_cap`` keep only a seeded random
    subset of whole segments fitting under the cap.
    """
    k = dev_test_speakers_per_gender
    if k < 1:
        raise SplitError("dev_test_speakers_per_gender must be >= 1")
    speakers = sorted(speakers, key=lambda s: s.speaker_id)
    assignment = PartitionAssignment(speaker_partition={})
    eligible: dict[str, list[SpeakerRecord]] = {g: [] for g in GENDERS}
    for sp in speakers:
        if sp.total_duration < train_threshold:
            assignment.speaker_partition[sp.speaker_id] = "train"
        else:
            eligible[sp.gender].append(sp)

    for g in GENDERS:
        if len(eligible[g]) < 2 * k:
            raise SplitError(
                f"need {2 * k} speakers of gender {g} above the train threshold, "
                f"found {len(eligible[g])} (deficit {2 * k - len(eligible[g])})"
            )

    for g in GENDERS:
        ranked = sorted(eligible[g], key=lambda s: (s.total_duration, s.speaker_id))
        for idx, sp in enumerate(ranked[: 2 * k]):
            assignment.speaker_partition[sp.speaker_id] = (
                "dev" if idx % 2 == 0 else "test"
            )
        for sp in ranked[2 * k :]:
            assignment.speaker_partition[sp.speaker_id] = "train"

    by_id = {sp.speaker_id: sp for sp in speakers}
    durations: dict[str, float] = {}
    counts: dict[str, dict[str, int]] = {p: {g: 0 for g in GENDERS} for p in ("train", "dev", "test")}
    for sid, part in assignment.speaker_partition.items():
        sp = by_id[sid]
        effective = sp.total_duration
        if part in ("dev", "test") and recordings is not None:
            segs = recordings.get(sid, [])
            total = sum(d for _, d in segs)
            if total > dev_test_cap:
                rng = _speaker_rng(seed, sid)
                shuffled = sorted(segs)  # stable base order
                rng.shuffle(shuffled)
                kept = []
                kept_total = 0.0
                for seg_id, dur in shuffled:
                    if kept_total + dur <= dev_test_cap:
                        kept.append(seg_id)
                        kept_total += dur
                assignment.kept_segments[sid] = tuple(sorted(kept))
                assignment.truncation_report.append(
                    {
                        "speaker_id": sid,
                        "partition": part,
                        "before_s": total,
                        "after_s": kept_total,
                    }
                )
                effective = kept_total
            else:
                effective = total if segs else sp.total_duration
        durations[part] = durations.get(part, 0.0) + effective
        counts[part][sp.gender] += 1
    assignment.partition_duration = durations
    assignment.gender_counts = counts
    assignment.verify()
    return assignment


def enforce_chapter_exclusivity(
    assignment: PartitionAssignment, chapters
) -> PartitionAssignment:
    """Pin every chapter to its speaker's partition; a chapter read by
    speakers in different partitions is dropped and reported."""
    by_chapter: dict[str, set[str]] = {}
    for ch in chapters:
        part = assignment.speaker_partition.get(ch.speaker_id)
        if part is None:
            assignment.chapter_report.append(
                {"chapter_id": ch.chapter_id, "reason": "unknown speaker"}
            )
            continue
        by_chapter.setdefault(ch.chapter_id, set()).add(part)
    for cid in sorted(by_chapter):
        parts = by_chapter[cid]
        if len(parts) == 1:
            assignment.chapter_partition[cid] = next(iter(parts))
        else:
            assignment.chapter_report.append(
                {"chapter_id": cid, "reason": f"spans partitions {sorted(parts)}"}
            )
    # exhaustive re-check
    for cid, part in assignment.chapter_partition.items():
        assert part in ("train", "dev", "test")
    return assignment


def quantile(values, q: float) -> float:
    """Linear-interpolated quantile (the numpy 'linear' convention)."""
    vals = sorted(values)
    if not vals:
        raise ValueError("quantile of empty list")
    if len(vals) == 1:
        return vals[0]
    h = q * (len(vals) - 1)
    lo = int(h)
    hi = min(lo + 1, len(vals) - 1)
    return vals[lo] + (h - lo) * (vals[hi] - vals[lo])


def select_hard_speakers(candidates, reference_wers, percentile: float = 0.80):
    """Keep candidates whose mean pseudo-label WER strictly exceeds the given
    quantile of the reference WER distribution."""
    if not reference_wers:
        raise ValueError("reference_wers must be non-empty")
    cutoff = quantile(reference_wers, percentile)
    return [sp for sp in candidates if sp.mean_pseudo_wer > cutoff]


@dataclass
class LimitedSets:
    ten_minute: tuple[frozenset[str], ...]
    one_hour: frozenset[str]
    ten_hour: frozenset[str]
    report: dict


def make_limited_supervision(
    segments,
    seed: int,
    speakers_per_gender: int = 15,
    minutes_per_gender: float = 5.0,
    remainder_hours_per_gender: float = 4.5,
    n_ten_minute_sets: int = 6,
    speakers_per_set_per_gender: int = 3,
) -> LimitedSets:
    """Carve nested limited-supervision subsets out of the train partition.

    ``segments``: (segment_id, speaker_id, gender, duration_s) rows. Six
    10-minute sets are pairwise disjoint; their union is the 1 h set, which
    the 10 h set extends with up to 4.5 h per gender from the same speaker
    pool. Shortfalls shrink proportionally and are reported.
    """
    rng = random.Random(
        int.from_bytes(hashlib.sha256(f"{seed}:limited".encode()).digest()[:8], "big")
    )
    rows = sorted(segments)
    by_speaker: dict[str, list[tuple[str, float]]] = {}
    gender_of: dict[str, str] = {}
    for seg_id, sp_id, gender, dur in rows:
        if gender not in GENDERS:
            raise ValueError(f"bad gender {gender!r} for speaker {sp_id}")
        by_speaker.setdefault(sp_id, []).append((seg_id, float(dur)))
        gender_of[sp_id] = gender

    report: dict = {"shortfalls": []}
    pool: dict[str, list[str]] = {}
    for g in GENDERS:
        cands = sorted(s for s, gg in gender_of.items() if gg == g)
        if len(cands) < speakers_per_gender:
            report["shortfalls"].append(
                f"only {len(cands)} {g} speakers available (wanted {speakers_per_gender})"
            )
            pool[g] = cands
        else:
            pool[g] = sorted(rng.sample(cands, speakers_per_gender))

    used: set[str] = set()
    duration_of = {seg_id: float(d) for seg_id, _, _, d in rows}

    def draw(speaker_ids, target_s: float, exclude: set[str]) -> list[str]:
        candidates = []
        for sp in sorted(speaker_ids):
            candidates.extend(
                seg for seg, _ in by_speaker.get(sp, []) if seg not in exclude
            )
        rng.shuffle(candidates)
        chosen: list[str] = []
        total = 0.0
        for seg in candidates:
            if total >= target_s:
                break
            chosen.append(seg)
            total += duration_of[seg]
        if total < target_s:
            report["shortfalls"].append(
                f"drew {total:.1f}s of {target_s:.1f}s requested"
            )
        return chosen

    ten_minute: list[frozenset[str]] = []
    for _ in range(n_ten_minute_sets):
        members: set[str] = set()
        for g in GENDERS:
            avail = pool[g]
            take = min(speakers_per_set_per_gender, len(avail))
            chosen_speakers = rng.sample(sorted(avail), take) if avail else []
            members.update(draw(chosen_speakers, minutes_per_gender * 60.0, used))
        used |= members
        ten_minute.append(frozenset(members))

    one_hour = frozenset().union(*ten_minute) if ten_minute else frozenset()

    nine_hour: set[str] = set()
    for g in GENDERS:
        nine_hour.update(draw(pool[g], remainder_hours_per_gender * 3600.0, used))
    ten_hour = frozenset(one_hour | nine_hour)

    report["pool"] = {g: pool[g] for g in GENDERS}
    return LimitedSets(
        ten_minute=tuple(ten_minute),
        one_hour=one_hour,
        ten_hour=ten_hour,
        report=report,
    )
