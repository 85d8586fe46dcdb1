"""Evaluation statistics for annotated dialogue transcripts.

Covers the toolkit used to evaluate a persona end to end: turn-annotation
metric tables (with the speech-recognition error correction), inter-annotator
agreement, the Mann-Whitney U test (exact enumeration for small samples, a
tie-corrected normal approximation otherwise), per-question rating summaries
with N/A discarding, and balanced assignment of rating items into task
batches via median splits on text lengths.

Percentages are reported as round-half-up integers, which is why response
rows can sum to 101%.
"""

from __future__ import annotations

import itertools
import math
import statistics
from dataclasses import dataclass, field
from typing import Optional, Sequence

GIST_LABELS = ("correct", "none", "incorrect")
RESPONSE_LABELS = ("appropriate", "clarification", "inappropriate")


class LengthMismatch(Exception):
    pass


class DegenerateAgreement(Exception):
    pass


class EmptySample(Exception):
    pass


class EmptyInput(Exception):
    pass


class AllNA(Exception):
    pass


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


# ----------------------------------------------------------------------
# turn annotations


@dataclass(frozen=True)
class TurnAnnotation:
    gist: str  # correct | none | incorrect
    response: str  # appropriate | clarification | inappropriate
    asr_error: bool = False

    def __post_init__(self):
        if self.gist not in GIST_LABELS:
            raise ValueError(f"bad gist label {self.gist!r}")
        if self.response not in RESPONSE_LABELS:
            raise ValueError(f"bad response label {self.response!r}")


def correct_for_asr(ann: TurnAnnotation) -> TurnAnnotation:
    """A clarification request is the correct behavior when the input had a
    significant speech-recognition error and no gist was extracted."""
    if ann.asr_error and ann.gist == "none" and ann.response == "clarification":
        return TurnAnnotation(gist=ann.gist, response="appropriate", asr_error=ann.asr_error)
    return ann


@dataclass
class MetricTable:
    n: int
    asr_rate: float
    gist: dict[str, float]
    response: dict[str, float]
    appropriate_given_gist: float

    def percents(self) -> dict[str, int]:
        out = {"asr_errors": round_half_up(100 * self.asr_rate)}
        for label in GIST_LABELS:
            out[f"gist_{label}"] = round_half_up(100 * self.gist[label])
        for label in RESPONSE_LABELS:
            out[f"response_{label}"] = round_half_up(100 * self.response[label])
        out["appropriate_given_gist"] = round_half_up(100 * self.appropriate_given_gist)
        return out


def annotation_metrics(annotations: Sequence[TurnAnnotation], apply_correction: bool = True) -> MetricTable:
    if not annotations:
        raise EmptyInput("no annotations")
    n = len(annotations)
    corrected = [correct_for_asr(a) if apply_correction else a for a in annotations]
    gist = {label: sum(a.gist == label for a in corrected) / n for label in GIST_LABELS}
    response = {label: sum(a.response == label for a in corrected) / n for label in RESPONSE_LABELS}
    with_gist = [a for a in corrected if a.gist != "none"]
    given = (
        sum(a.response == "appropriate" for a in with_gist) / len(with_gist) if with_gist else 0.0
    )
    return MetricTable(
        n=n,
        asr_rate=sum(a.asr_error for a in annotations) / n,
        gist=gist,
        response=response,
        appropriate_given_gist=given,
    )


def averaged_annotation_metrics(
    annotator_lists: Sequence[Sequence[TurnAnnotation]],
    correction_order: str = "before-average",
) -> MetricTable:
    """Average metric tables across annotators.

    ``before-average`` corrects each annotator's labels first and averages
    the resulting fractions. ``after-average`` averages uncorrected
    fractions and then moves the averaged mass of correctable turns
    (error + no gist + clarification) from clarification to appropriate.
    The orders agree whenever the annotators agree turn-by-turn.
    """
    if not annotator_lists:
        raise EmptyInput("no annotators")
    if correction_order not in ("before-average", "after-average"):
        raise ValueError(f"bad correction_order {correction_order!r}")
    corrected = correction_order == "before-average"
    tables = [annotation_metrics(lst, apply_correction=corrected) for lst in annotator_lists]
    k = len(tables)
    avg = MetricTable(
        n=tables[0].n,
        asr_rate=sum(t.asr_rate for t in tables) / k,
        gist={label: sum(t.gist[label] for t in tables) / k for label in GIST_LABELS},
        response={label: sum(t.response[label] for t in tables) / k for label in RESPONSE_LABELS},
        appropriate_given_gist=sum(t.appropriate_given_gist for t in tables) / k,
    )
    if correction_order == "after-average":
        movable = [
            sum(a.asr_error and a.gist == "none" and a.response == "clarification" for a in lst)
            / len(lst)
            for lst in annotator_lists
        ]
        shift = sum(movable) / k
        avg.response["clarification"] -= shift
        avg.response["appropriate"] += shift
        # conditional rate cannot be reconstructed post hoc; recompute from
        # per-annotator corrected tables for it
        avg.appropriate_given_gist = sum(
            annotation_metrics(lst, apply_correction=True).appropriate_given_gist
            for lst in annotator_lists
        ) / k
    return avg


# ----------------------------------------------------------------------
# agreement


def cohens_kappa(a: Sequence, b: Sequence) -> float:
    if len(a) != len(b):
        raise LengthMismatch(f"label lists differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise EmptyInput("empty label lists")
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    labels = set(a) | set(b)
    p_e = sum((list(a).count(l) / n) * (list(b).count(l) / n) for l in labels)
    if p_e >= 1.0:
        raise DegenerateAgreement("chance agreement is 1: kappa undefined")
    return (p_o - p_e) / (1.0 - p_e)


# ----------------------------------------------------------------------
# Mann-Whitney U


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float  # U statistic of the first sample
    p: float  # two-sided


MAX_EXACT = 12


def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def mann_whitney_u(x: Sequence[float], y: Sequence[float], mode: str = "exact") -> MannWhitneyResult:
    """Two-sided rank test. ``exact`` enumerates every assignment of the
    pooled values to the first sample (requires n1 + n2 <= 12);
    ``normal`` uses the tie-corrected normal approximation with a
    continuity correction."""
    if not x or not y:
        raise EmptySample("both samples must be nonempty")
    n1, n2 = len(x), len(y)
    pooled = list(x) + list(y)
    ranks = _midranks(pooled)
    r1 = sum(ranks[:n1])
    u1 = r1 - n1 * (n1 + 1) / 2
    mu = n1 * n2 / 2
    if mode == "exact":
        if n1 + n2 > MAX_EXACT:
            raise ValueError(f"exact mode needs n1+n2 <= {MAX_EXACT}, got {n1 + n2}")
        observed = abs(u1 - mu)
        total = 0
        extreme = 0
        base = n1 * (n1 + 1) / 2
        for combo in itertools.combinations(range(n1 + n2), n1):
            u = sum(ranks[i] for i in combo) - base
            total += 1
            if abs(u - mu) >= observed - 1e-12:
                extreme += 1
        return MannWhitneyResult(u=u1, p=extreme / total)
    if mode == "normal":
        n = n1 + n2
        tie_counts = {}
        for v in pooled:
            tie_counts[v] = tie_counts.get(v, 0) + 1
        tie_term = sum(t**3 - t for t in tie_counts.values())
        var = n1 * n2 / 12 * ((n + 1) - tie_term / (n * (n - 1)))
        if var <= 0:
            return MannWhitneyResult(u=u1, p=1.0)
        z = (abs(u1 - mu) - 0.5) / math.sqrt(var)
        z = max(z, 0.0)
        return MannWhitneyResult(u=u1, p=min(1.0, math.erfc(z / math.sqrt(2))))
    raise ValueError(f"unknown mode {mode!r}")


# ----------------------------------------------------------------------
# rating summaries


@dataclass
class RatingItem:
    """One crowd item: a dialogue context plus the two candidate responses,
    with per-rater Likert ratings (1-5, or None for not-applicable on the
    role/emotion questions)."""

    item_id: str
    context_text: str = ""
    doctor_text: str = ""
    response_a: str = ""
    response_b: str = ""
    system_a: str = "a"
    system_b: str = "b"
    quality_a: str = ""
    quality_b: str = ""
    # (rater, question, side) -> rating; side is "a" or "b"
    ratings: dict = field(default_factory=dict)

    def add_rating(self, rater: str, question: str, side: str, value: Optional[float]):
        if value is None and question in ("q1", "q2"):
            raise ValueError(f"{question} does not allow N/A")
        self.ratings[(rater, question, side)] = value

    def item_average(self, question: str, side: str) -> Optional[float]:
        vals = [
            v
            for (rater, q, s), v in self.ratings.items()
            if q == question and s == side and v is not None
        ]
        if not vals:
            return None
        return sum(vals) / len(vals)

    def system_side(self, system: str) -> Optional[str]:
        if self.system_a == system:
            return "a"
        if self.system_b == system:
            return "b"
        return None


QUESTIONS = ("q1", "q2", "q3", "q4")


@dataclass
class RatingSummary:
    systems: list[str]
    mean: dict[tuple[str, str], float]  # (question, system)
    median: dict[tuple[str, str], float]
    diff_mean: dict[str, float]  # second system minus first
    diff_median: dict[str, float]


def summarize_ratings(items: Sequence[RatingItem], baseline: Optional[str] = None) -> RatingSummary:
    if not items:
        raise EmptyInput("no rating items")
    systems = sorted({s for it in items for s in (it.system_a, it.system_b)})
    if baseline is not None and baseline in systems:
        systems = [baseline] + [s for s in systems if s != baseline]
    if len(systems) != 2:
        raise ValueError(f"expected exactly two systems, got {systems}")
    mean: dict[tuple[str, str], float] = {}
    median: dict[tuple[str, str], float] = {}
    for question in QUESTIONS:
        for system in systems:
            per_item = []
            for it in items:
                side = it.system_side(system)
                if side is None:
                    continue
                avg = it.item_average(question, side)
                if avg is not None:
                    per_item.append(avg)
            if not per_item:
                raise AllNA(f"no usable ratings for {question}/{system}")
            mean[(question, system)] = sum(per_item) / len(per_item)
            median[(question, system)] = statistics.median(per_item)
    first, second = systems
    diff_mean = {q: mean[(q, second)] - mean[(q, first)] for q in QUESTIONS}
    diff_median = {q: median[(q, second)] - median[(q, first)] for q in QUESTIONS}
    return RatingSummary(
        systems=systems, mean=mean, median=median, diff_mean=diff_mean, diff_median=diff_median
    )


# ----------------------------------------------------------------------
# balanced batch assignment


@dataclass
class BalanceReport:
    hits: list[list[str]]  # item ids per batch
    length_deviation: int  # worst per-batch deviation from target on any length bin
    quality_deviation: int  # worst per-batch deviation on any quality label count
    exact: bool
    notes: list[str] = field(default_factory=list)


_LENGTH_FIELDS = ("context_text", "doctor_text", "response_a", "response_b")


def balance_hits(
    items: Sequence[RatingItem], n_hits: int = 20, per_hit: int = 16
) -> BalanceReport:
    """Partition items into batches balanced on a median split of each text
    field's length, and approximately balanced on the quality labels.

    Always returns a full partition; when exact balance is impossible for
    the given counts, the report says so and carries the best deviations
    reached."""
    if not items:
        raise EmptyInput("no items to balance")
    notes = []
    if len(items) != n_hits * per_hit:
        notes.append(
            f"item count {len(items)} != {n_hits} x {per_hit}; batch sizes made as even as possible"
        )

    medians = {
        f: statistics.median(len(getattr(it, f)) for it in items) for f in _LENGTH_FIELDS
    }

    def signature(it: RatingItem) -> tuple:
        return tuple(int(len(getattr(it, f)) > medians[f]) for f in _LENGTH_FIELDS)

    def quality_key(it: RatingItem) -> tuple:
        return (it.quality_a, it.quality_b)

    groups: dict[tuple, list[RatingItem]] = {}
    for it in items:
        groups.setdefault(signature(it), []).append(it)

    hits: list[list[RatingItem]] = [[] for _ in range(n_hits)]
    sizes = [len(items) // n_hits] * n_hits
    for i in range(len(items) % n_hits):
        sizes[i] += 1

    # deal each signature class over consecutive batches (keeping the class
    # spread exactly even), interleaving quality labels within the class and
    # rotating the start by one extra batch per class so quality patterns do
    # not line up across classes
    offset = 0
    for sig in sorted(groups):
        by_quality: dict[tuple, list[RatingItem]] = {}
        for it in sorted(groups[sig], key=lambda it: it.item_id):
            by_quality.setdefault(quality_key(it), []).append(it)
        interleaved = [
            it
            for layer in itertools.zip_longest(*(by_quality[q] for q in sorted(by_quality)))
            for it in layer
            if it is not None
        ]
        for it in interleaved:
            for probe in range(n_hits):
                h = (offset + probe) % n_hits
                if len(hits[h]) < sizes[h]:
                    hits[h].append(it)
                    offset = h + 1
                    break
        offset += 1

    _repair(hits, signature, quality_key)

    length_dev = _worst_deviation(hits, lambda it: signature(it), len(items))
    quality_dev = _worst_deviation(hits, lambda it: quality_key(it), len(items))
    exact = length_dev == 0
    if not exact:
        notes.append("exact length balance not achieved for these counts")
    return BalanceReport(
        hits=[[it.item_id for it in h] for h in hits],
        length_deviation=length_dev,
        quality_deviation=quality_dev,
        exact=exact,
        notes=notes,
    )


def _worst_deviation(hits, key, total) -> int:
    worst = 0
    all_items = [it for h in hits for it in h]
    keys = {key(it) for it in all_items}
    for k in keys:
        global_count = sum(1 for it in all_items if key(it) == k)
        for h in hits:
            target = global_count * len(h) / total
            have = sum(1 for it in h if key(it) == k)
            worst = max(worst, math.ceil(abs(have - target) - 1e-9))
    return worst


def _repair(hits, signature, quality_key, max_swaps: int = 200) -> None:
    """Greedy swap repair: move items between batches while some batch is
    more than one item off its target count for a signature bin, preferring
    swaps that keep quality counts untouched."""
    total = sum(len(h) for h in hits)

    for _ in range(max_swaps):
        sigs = sorted({signature(it) for h in hits for it in h})
        global_count = {
            s: sum(1 for h in hits for it in h if signature(it) == s) for s in sigs
        }
        count = [{s: sum(1 for it in h if signature(it) == s) for s in sigs} for h in hits]
        surplus = [
            {s: count[i][s] - global_count[s] * len(h) / total for s in sigs}
            for i, h in enumerate(hits)
        ]
        worst = max(
            ((i, s) for i in range(len(hits)) for s in sigs), key=lambda par: surplus[par[0]][par[1]]
        )
        i, s_over = worst
        if surplus[i][s_over] < 1.0 - 1e-9:
            return  # within one item of target everywhere
        j = min(range(len(hits)), key=lambda k: surplus[k][s_over])
        give = next(it for it in hits[i] if signature(it) == s_over)
        # take back the item whose signature batch i most lacks
        takeable = [it for it in hits[j] if signature(it) != s_over]
        if not takeable:
            return
        same_quality = [it for it in takeable if quality_key(it) == quality_key(give)]
        pool = same_quality or takeable
        take = min(pool, key=lambda it: surplus[i][signature(it)])
        hits[i].remove(give)
        hits[j].remove(take)
        hits[i].append(take)
        hits[j].append(give)
