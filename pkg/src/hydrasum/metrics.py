"""Style and quality metrics for article and summary pairs.

Text is reduced to lowercase alphanumeric word tokens before any counting,
so punctuation and casing never move an overlap score. Casing does feed the
specificity heuristic, which is the one place surface form matters.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidArgumentError, UndefinedMetricError
from .tokenizer import split_sentences

_WORD_RE = re.compile(r"[a-z0-9]+")
_CASED_WORD_RE = re.compile(r"[A-Za-z0-9]+")
_VOWEL_GROUP_RE = re.compile(r"[aeiouy]+")

DEFAULT_OVERLAP_N = 2
COMMON_WORD_RANKS = 500


def metric_tokens(text: str) -> list[str]:
    """Lowercase alphanumeric tokens; the unit for every overlap metric."""
    return _WORD_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# extractive fragments


def extractive_fragments(article: str, summary: str) -> list[list[str]]:
    """Greedy cover of the summary by maximal article substrings.

    Scans the summary left to right; at each position takes the longest
    token run that also appears contiguously in the article (leftmost
    article occurrence on ties), else advances one token.
    """
    a = metric_tokens(article)
    s = metric_tokens(summary)
    fragments: list[list[str]] = []
    i = 0
    while i < len(s):
        best = 0
        for start in range(len(a)):
            length = 0
            while (i + length < len(s) and start + length < len(a)
                   and a[start + length] == s[i + length]):
                length += 1
            if length > best:
                best = length
        if best >= 1:
            fragments.append(s[i:i + best])
            i += best
        else:
            i += 1
    return fragments


def coverage_density(article: str, summary: str) -> tuple[float, float]:
    """(coverage, density): mean copied-fragment mass and squared mass.

    coverage = sum(len(f)) / len(summary); density = sum(len(f)^2) / len(summary).
    An empty summary scores (0.0, 0.0).
    """
    n = len(metric_tokens(summary))
    if n == 0:
        return 0.0, 0.0
    lengths = [len(f) for f in extractive_fragments(article, summary)]
    return sum(lengths) / n, sum(l * l for l in lengths) / n


def _ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def ngram_overlap(article: str, summary: str, n: int = DEFAULT_OVERLAP_N) -> float:
    """Fraction of summary n-grams (with multiplicity) present in the article.

    A summary with no n-grams of order n scores 0.0.
    """
    if n < 1:
        raise InvalidArgumentError("n must be at least 1")
    grams = _ngrams(metric_tokens(summary), n)
    if not grams:
        return 0.0
    article_set = set(_ngrams(metric_tokens(article), n))
    return sum(g in article_set for g in grams) / len(grams)


# ---------------------------------------------------------------------------
# specificity


def build_rare_word_set(texts: Iterable[str], common_ranks: int = COMMON_WORD_RANKS) -> set[str]:
    """Corpus words outside the top common_ranks frequency ranks.

    Ties break lexicographically, so the boundary is deterministic.
    """
    counts = Counter()
    for text in texts:
        counts.update(metric_tokens(text))
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return set(ranked[common_ranks:])


def _logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def specificity(sentence: str, rare_words: set[str] | None = None) -> float:
    """Heuristic in (0, 1): digits, mid-sentence capitals, rare words, length.

    logistic(-1.5 + 4*frac_digit + 3*frac_cap + 2*frac_rare + 0.05*min(words, 20))
    where frac_cap counts capitalized tokens after the first.
    """
    cased = _CASED_WORD_RE.findall(sentence)
    n = len(cased)
    frac_digit = sum(any(c.isdigit() for c in w) for w in cased) / n if n else 0.0
    frac_cap = (sum(w[0].isupper() for w in cased[1:]) / (n - 1)) if n > 1 else 0.0
    if rare_words and n:
        frac_rare = sum(w.lower() in rare_words for w in cased) / n
    else:
        frac_rare = 0.0
    x = -1.5 + 4.0 * frac_digit + 3.0 * frac_cap + 2.0 * frac_rare + 0.05 * min(n, 20)
    return _logistic(x)


def summary_specificity(summary: str, rare_words: set[str] | None = None) -> float:
    """Mean sentence specificity; 0.0 when the summary has no sentences."""
    sentences = split_sentences(summary)
    if not sentences:
        return 0.0
    return sum(specificity(s, rare_words) for s in sentences) / len(sentences)


# ---------------------------------------------------------------------------
# readability


def count_syllables(word: str) -> int:
    """Vowel-group count with one trailing 'e' stripped; at least 1."""
    w = word.lower()
    if len(w) > 2 and w.endswith("e"):
        w = w[:-1]
    return max(1, len(_VOWEL_GROUP_RE.findall(w)))


def flesch_reading_ease(text: str) -> float:
    """206.835 - 1.015*(words/sentences) - 84.6*(syllables/words)."""
    words = metric_tokens(text)
    if not words:
        raise UndefinedMetricError("readability undefined for text with no words")
    n_sentences = max(1, len(split_sentences(text)))
    n_syllables = sum(count_syllables(w) for w in words)
    return (206.835
            - 1.015 * (len(words) / n_sentences)
            - 84.6 * (n_syllables / len(words)))


# ---------------------------------------------------------------------------
# rouge


class RougeTriple(NamedTuple):
    rouge1: float
    rouge2: float
    rougeL: float


def _f1(match: float, n_ref: int, n_cand: int) -> float:
    if match == 0 or n_ref == 0 or n_cand == 0:
        return 0.0
    p = match / n_cand
    r = match / n_ref
    return 2 * p * r / (p + r)


def _clipped_ngram_f1(ref: list[str], cand: list[str], n: int) -> float:
    ref_counts = Counter(_ngrams(ref, n))
    cand_counts = Counter(_ngrams(cand, n))
    if not ref_counts and not cand_counts:
        return 1.0 if ref == cand else 0.0
    match = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
    return _f1(match, sum(ref_counts.values()), sum(cand_counts.values()))


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge(reference: str, candidate: str) -> RougeTriple:
    """Unigram, clipped-bigram, and LCS F1 on word tokens.

    An empty candidate scores 0.0 across the board; when neither side has
    n-grams of some order, that component is 1.0 only for equal token lists.
    """
    ref = metric_tokens(reference)
    cand = metric_tokens(candidate)
    if not cand:
        return RougeTriple(0.0, 0.0, 0.0)
    return RougeTriple(
        rouge1=_clipped_ngram_f1(ref, cand, 1),
        rouge2=_clipped_ngram_f1(ref, cand, 2),
        rougeL=_f1(_lcs_length(ref, cand), len(ref), len(cand)),
    )


def topk_rouge(reference: str, candidates: Sequence[str]) -> RougeTriple:
    """Component-wise best score over a candidate set."""
    if not candidates:
        raise InvalidArgumentError("topk_rouge needs at least one candidate")
    triples = [rouge(reference, c) for c in candidates]
    return RougeTriple(*(max(t[i] for t in triples) for i in range(3)))


# ---------------------------------------------------------------------------
# spread and significance


def style_sigma(values: Sequence[float]) -> float:
    """Population standard deviation of a metric across outputs."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InvalidArgumentError("style_sigma needs at least one value")
    return float(arr.std())


def paired_bootstrap(scores_a: Sequence[float], scores_b: Sequence[float],
                     n_resamples: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Two-sided paired bootstrap: (observed mean difference, p-value).

    Resamples example indices with replacement; a resample counts against
    the observed direction when its difference flips sign or lands on zero.
    A zero observed difference reports p = 1.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise InvalidArgumentError("paired_bootstrap needs two equal-length score lists")
    if n_resamples < 1:
        raise InvalidArgumentError("n_resamples must be positive")
    diff = a - b
    observed = float(diff.mean())
    if observed == 0.0:
        return 0.0, 1.0
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, a.size, size=(n_resamples, a.size))
    resampled = diff[idx].mean(axis=1)
    flips = int(((np.sign(resampled) != np.sign(observed)) | (resampled == 0.0)).sum())
    return observed, min(1.0, 2.0 * flips / n_resamples)


# ---------------------------------------------------------------------------
# bundled reports


@dataclass(frozen=True)
class StyleScores:
    """Per-summary style profile against its article."""

    coverage: float
    density: float
    ngram_overlap: float
    specificity: float
    flesch: float


STYLE_METRIC_NAMES = ("coverage", "density", "ngram_overlap", "specificity", "flesch")


def style_scores(article: str, summary: str, rare_words: set[str] | None = None) -> StyleScores:
    cov, den = coverage_density(article, summary)
    return StyleScores(
        coverage=cov,
        density=den,
        ngram_overlap=ngram_overlap(article, summary),
        specificity=summary_specificity(summary, rare_words),
        flesch=flesch_reading_ease(summary) if metric_tokens(summary) else 0.0,
    )


@dataclass(frozen=True)
class DiversityReport:
    """How far apart a set of candidate summaries sits, style-wise."""

    topk: RougeTriple
    sigma: dict[str, float]
    self_rouge_l: float


def diversity_report(article: str, reference: str, candidates: Sequence[str],
                     rare_words: set[str] | None = None) -> DiversityReport:
    """Top-k reference match, per-metric spread, and candidate self-similarity."""
    if not candidates:
        raise InvalidArgumentError("diversity_report needs at least one candidate")
    profiles = [style_scores(article, c, rare_words) for c in candidates]
    sigma = {name: style_sigma([getattr(p, name) for p in profiles])
             for name in STYLE_METRIC_NAMES}
    pair_scores = [rouge(candidates[i], candidates[j]).rougeL
                   for i in range(len(candidates)) for j in range(i + 1, len(candidates))]
    self_sim = sum(pair_scores) / len(pair_scores) if pair_scores else 0.0
    return DiversityReport(topk=topk_rouge(reference, candidates),
                           sigma=sigma, self_rouge_l=self_sim)
