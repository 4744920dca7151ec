"""chrF++ and BLEU, computed natively, plus cross-system improvement statistics.

Both metrics reproduce the defaults of sacreBLEU 2.x: chrF with 6 character
orders, 2 word orders, beta 2 and effective-order averaging; BLEU with the 13a
tokenizer and exponential smoothing.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

CHRF_PUNCT = frozenset('!"#$%&\'()*+,-./:;<=>?@[\\]^_`{|}~')
METRIC_NAMES = {"chrf++": "chrfpp", "chrfpp": "chrfpp", "bleu": "bleu"}


class LengthMismatch(ValueError):
    pass


class KeyMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class MetricScore:
    value: float
    metric: str
    granularity: str = "sentence"

    def __post_init__(self):
        if not 0.0 <= self.value <= 100.0 + 1e-9:
            raise ValueError(f"score {self.value} outside [0, 100]")

    def __float__(self) -> float:
        return self.value


# -- chrF++ ---------------------------------------------------------------


def _char_ngrams(text: str, order: int) -> list[Counter]:
    text = "".join(text.split())
    return [Counter(text[i : i + n] for i in range(len(text) - n + 1)) for n in range(1, order + 1)]


def chrf_words(text: str) -> list[str]:
    """Whitespace tokens with one leading or trailing punctuation mark split off."""
    tokens = []
    for w in text.split():
        if len(w) == 1:
            tokens.append(w)
        elif w[-1] in CHRF_PUNCT:
            tokens += [w[:-1], w[-1]]
        elif w[0] in CHRF_PUNCT:
            tokens += [w[0], w[1:]]
        else:
            tokens.append(w)
    return tokens


def _word_ngrams(tokens: list[str], order: int) -> list[Counter]:
    return [
        Counter(" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
        for n in range(1, order + 1)
    ]


def chrf_statistics(hyp: str, ref: str, char_order: int = 6, word_order: int = 2) -> list[int]:
    """Flattened ``[hyp, ref, match]`` counts per n-gram order (characters first)."""
    hyp_grams = _char_ngrams(hyp, char_order)
    ref_grams = _char_ngrams(ref, char_order)
    if word_order:
        hyp_grams += _word_ngrams(chrf_words(hyp), word_order)
        ref_grams += _word_ngrams(chrf_words(ref), word_order)
    stats: list[int] = []
    for h, r in zip(hyp_grams, ref_grams):
        n_hyp = sum(h.values())
        match = sum(min(c, r[g]) for g, c in h.items() if g in r)
        # hypothesis n-grams only count when the reference has n-grams of that order
        stats += [n_hyp if r else 0, sum(r.values()), match]
    return stats


def chrf_from_statistics(stats: Sequence[int], beta: float = 2.0) -> float:
    factor = beta**2
    avg_p = avg_r = 0.0
    effective = 0
    for i in range(0, len(stats), 3):
        n_hyp, n_ref, n_match = stats[i : i + 3]
        if n_hyp > 0 and n_ref > 0:
            avg_p += n_match / n_hyp
            avg_r += n_match / n_ref
            effective += 1
    if effective == 0:
        return 0.0
    avg_p /= effective
    avg_r /= effective
    if avg_p + avg_r == 0:
        return 0.0
    return 100 * (1 + factor) * avg_p * avg_r / (factor * avg_p + avg_r)


def chrf_pp(
    hypothesis: str, reference: str, char_order: int = 6, word_order: int = 2, beta: float = 2
) -> MetricScore:
    stats = chrf_statistics(hypothesis, reference, char_order, word_order)
    return MetricScore(chrf_from_statistics(stats, beta), "chrfpp", "sentence")


def corpus_chrf_pp(
    hypotheses: Sequence[str],
    references: Sequence[str],
    char_order: int = 6,
    word_order: int = 2,
    beta: float = 2,
) -> MetricScore:
    """Corpus chrF++: n-gram counts are summed over segments before the F-score."""
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EmptyInput("empty corpus")
    total = [0] * (3 * (char_order + word_order))
    for hyp, ref in zip(hypotheses, references):
        for i, v in enumerate(chrf_statistics(hyp, ref, char_order, word_order)):
            total[i] += v
    return MetricScore(chrf_from_statistics(total, beta), "chrfpp", "corpus")


# -- BLEU -----------------------------------------------------------------

_13A_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


def tokenize_13a(line: str) -> str:
    """mteval-v13a tokenization: separate punctuation, collapse whitespace."""
    line = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = (
            line.replace("&quot;", '"').replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">")
        )
    line = f" {line} "
    for pattern, repl in _13A_RULES:
        line = pattern.sub(repl, line)
    return " ".join(line.split())


def _ngram_counts(tokens: list[str], max_order: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + n]) for n in range(1, max_order + 1) for i in range(len(tokens) - n + 1)
    )


def bleu_statistics(hyp: str, ref: str, max_order: int = 4) -> list[int]:
    """``[hyp_len, ref_len, correct_1..N, total_1..N]`` for one segment."""
    h = tokenize_13a(hyp.rstrip()).split()
    r = tokenize_13a(ref.rstrip()).split()
    hyp_grams = _ngram_counts(h, max_order)
    ref_grams = _ngram_counts(r, max_order)
    correct = [0] * max_order
    total = [0] * max_order
    for gram, count in hyp_grams.items():
        total[len(gram) - 1] += count
        if gram in ref_grams:
            correct[len(gram) - 1] += min(count, ref_grams[gram])
    return [len(h), len(r), *correct, *total]


def _floored_log(x: float) -> float:
    return math.log(x) if x > 0 else -9999999999


def bleu_from_statistics(stats: Sequence[int], max_order: int = 4, effective_order: bool = False) -> float:
    sys_len, ref_len = stats[0], stats[1]
    correct = list(stats[2 : 2 + max_order])
    total = list(stats[2 + max_order : 2 + 2 * max_order])
    if not any(correct):
        return 0.0
    bp = 1.0
    if sys_len < ref_len:
        bp = math.exp(1 - ref_len / sys_len) if sys_len > 0 else 0.0
    precisions = [0.0] * max_order
    smooth = 1.0
    used = max_order
    for n in range(max_order):
        if total[n] == 0:
            break
        if effective_order:
            used = n + 1
        if correct[n] == 0:
            smooth *= 2
            precisions[n] = 100.0 / (smooth * total[n])
        else:
            precisions[n] = 100.0 * correct[n] / total[n]
    return bp * math.exp(sum(_floored_log(p) for p in precisions[:used]) / used)


def bleu(hypotheses: Sequence[str], references: Sequence[str], max_order: int = 4) -> MetricScore:
    """Corpus BLEU (13a tokenization, exponential smoothing of zero precisions)."""
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EmptyInput("empty corpus")
    total = [0] * (2 + 2 * max_order)
    for hyp, ref in zip(hypotheses, references):
        for i, v in enumerate(bleu_statistics(hyp, ref, max_order)):
            total[i] += v
    # orders with no hypothesis n-grams at all are left out rather than zeroing the score;
    # whenever every order has n-grams this is plain corpus BLEU
    return MetricScore(min(100.0, bleu_from_statistics(total, max_order, True)), "bleu", "corpus")


def sentence_bleu(hypothesis: str, reference: str, max_order: int = 4) -> MetricScore:
    """Segment BLEU with effective-order, as recommended for single sentences."""
    stats = bleu_statistics(hypothesis, reference, max_order)
    return MetricScore(min(100.0, bleu_from_statistics(stats, max_order, True)), "bleu", "sentence")


# -- aggregation ----------------------------------------------------------


@dataclass
class BucketStats:
    """Counts of directions that got better or worse, overall and beyond each threshold."""

    total: int
    improved: int
    degraded: int
    ties: int
    thresholds: tuple[float, ...] = (5, 10, 20)
    improved_gt: dict[float, int] = field(default_factory=dict)
    degraded_gt: dict[float, int] = field(default_factory=dict)

    @property
    def improved_gt5(self) -> int:
        return self.improved_gt[5]

    @property
    def improved_gt10(self) -> int:
        return self.improved_gt[10]

    @property
    def improved_gt20(self) -> int:
        return self.improved_gt[20]

    @property
    def degraded_gt5(self) -> int:
        return self.degraded_gt[5]

    @property
    def degraded_gt20(self) -> int:
        return self.degraded_gt[20]

    def to_dict(self) -> dict:
        out = {"total": self.total, "improved": self.improved, "degraded": self.degraded, "ties": self.ties}
        for t in self.thresholds:
            out[f"improved_gt{t:g}"] = self.improved_gt[t]
        for t in self.thresholds:
            out[f"degraded_gt{t:g}"] = self.degraded_gt[t]
        return out


def score_deltas(baseline: Mapping[str, float], system: Mapping[str, float]) -> dict[str, float]:
    if set(baseline) != set(system):
        missing = sorted(set(baseline) ^ set(system))
        raise KeyMismatch(f"direction sets differ: {missing[:5]}")
    # two-decimal table values: round away float noise so 5.00 is never "> 5"
    return {k: round(float(system[k]) - float(baseline[k]), 9) for k in sorted(baseline)}


def bucket_stats(
    baseline: Mapping[str, float],
    system: Mapping[str, float],
    thresholds: Iterable[float] = (5, 10, 20),
) -> BucketStats:
    thresholds = tuple(sorted(thresholds))
    deltas = list(score_deltas(baseline, system).values())
    ups = [d for d in deltas if d > 0]
    downs = [-d for d in deltas if d < 0]
    return BucketStats(
        total=len(deltas),
        improved=len(ups),
        degraded=len(downs),
        ties=len(deltas) - len(ups) - len(downs),
        thresholds=thresholds,
        improved_gt={t: sum(d > t for d in ups) for t in thresholds},
        degraded_gt={t: sum(d > t for d in downs) for t in thresholds},
    )


def average_scores(scores: Mapping[str, float]) -> float:
    if not scores:
        raise EmptyInput("cannot average an empty score map")
    return math.fsum(float(v) for v in scores.values()) / len(scores)


# -- score files ----------------------------------------------------------


def canonical_metric(name: str) -> str:
    try:
        return METRIC_NAMES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; expected chrf++ or bleu") from None


def read_scores(path: str | Path) -> tuple[str | None, dict[str, float]]:
    """Parse a ``direction<TAB>score`` file with an optional ``# metric=<name>`` header."""
    metric = None
    scores: dict[str, float] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            m = re.match(r"#\s*metric=(\S+)", line)
            if m:
                metric = canonical_metric(m.group(1))
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected direction<TAB>score")
        if parts[0] in scores:
            raise ValueError(f"{path}:{lineno}: duplicate direction {parts[0]!r}")
        scores[parts[0]] = float(parts[1])
    return metric, scores


def format_scores(scores: Mapping[str, float], metric: str) -> str:
    name = "chrf++" if canonical_metric(metric) == "chrfpp" else "bleu"
    lines = [f"# metric={name}"] + [f"{k}\t{scores[k]:.2f}" for k in sorted(scores)]
    return "\n".join(lines) + "\n"
