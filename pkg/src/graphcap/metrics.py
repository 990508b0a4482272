"""Corpus-level caption metrics: BLEU-4, ROUGE-L, CIDEr.

All three operate on tokenized pairs and are pure functions of the pair
collection (iteration order never matters).  Conventions, spelled out because
published variants differ:

* BLEU-4: corpus-level, uniform weights over 1-4-grams, clipped counts, no
  smoothing; any zero modified precision zeroes the score.  The brevity
  penalty uses the closest reference length (ties favor the shorter).
* ROUGE-L: per pair, the LCS F-measure with recall weight 1.2, maximized over
  references; the corpus score is the mean over pairs.
* CIDEr: TF-IDF n-gram cosine consensus (n = 1..4), averaged over references,
  then over n, scaled by 10, averaged over pairs.  Document frequencies come
  from the reference sets of the evaluation run itself.  No stemming is
  applied, and the IDF is smoothed (log((1+D)/(1+df)) + 1) so tiny corpora
  keep nonzero weights; both deviations from the original definition are
  noted in the report header.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .vocab import normalize_text

CIDER_NOTE = "CIDEr: no stemming, smoothed idf; METEOR not computed"


@dataclass
class EvalPair:
    video_id: str
    candidate: list
    references: list = field(default_factory=list)

    def __post_init__(self):
        if not self.references:
            raise ValueError(f"{self.video_id}: needs at least one reference")
        if any(len(r) == 0 for r in self.references):
            raise ValueError(f"{self.video_id}: empty reference after normalization")


def make_pairs(candidates, references):
    """Build EvalPairs from raw strings: {vid: str} x {vid: [str, ...]}."""
    pairs = []
    for vid, cand in candidates.items():
        if vid not in references or not references[vid]:
            raise ValueError(f"no references for video {vid}")
        pairs.append(
            EvalPair(vid, normalize_text(cand), [normalize_text(r) for r in references[vid]])
        )
    return pairs


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(pairs):
    """Corpus BLEU with uniform 1-4-gram weights and brevity penalty."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty evaluation corpus")
    matched = [0] * 5
    total = [0] * 5
    cand_len = 0
    ref_len = 0
    for pair in pairs:
        cand = pair.candidate
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in pair.references)[1]
        for n in range(1, 5):
            counts = _ngram_counts(cand, n)
            total[n] += max(len(cand) - n + 1, 0)
            ceiling = Counter()
            for ref in pair.references:
                for gram, c in _ngram_counts(ref, n).items():
                    ceiling[gram] = max(ceiling[gram], c)
            matched[n] += sum(min(c, ceiling[gram]) for gram, c in counts.items())
    if cand_len == 0:
        return 0.0
    log_precision = 0.0
    for n in range(1, 5):
        if matched[n] == 0 or total[n] == 0:
            return 0.0
        log_precision += math.log(matched[n] / total[n]) / 4.0
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_precision)


def _lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(pairs, recall_weight=1.2):
    """Mean over pairs of the best LCS F-measure against any reference."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty evaluation corpus")
    w2 = recall_weight * recall_weight
    scores = []
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            lcs = _lcs_length(pair.candidate, ref)
            if lcs == 0:
                continue
            precision = lcs / len(pair.candidate)
            recall = lcs / len(ref)
            best = max(best, (1 + w2) * precision * recall / (recall + w2 * precision))
        scores.append(best)
    # summing in sorted order makes the score exactly independent of pair order
    return sum(sorted(scores)) / len(scores)


def _tfidf_vector(tokens, n, idf):
    return {gram: count * idf[gram] for gram, count in _ngram_counts(tokens, n).items()}


def _cosine(u, v):
    dot = sum(val * v[gram] for gram, val in u.items() if gram in v)
    nu = sum(val * val for val in u.values())
    nv = sum(val * val for val in v.values())
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / math.sqrt(nu * nv)


def cider(pairs, max_n=4):
    """TF-IDF n-gram consensus score in [0, 10]."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty evaluation corpus")
    num_docs = len(pairs)

    doc_freq = [Counter() for _ in range(max_n + 1)]
    for pair in pairs:
        for n in range(1, max_n + 1):
            seen = set()
            for ref in pair.references:
                seen.update(_ngram_counts(ref, n))
            doc_freq[n].update(seen)

    def idf_for(n):
        class _Idf(dict):
            def __missing__(self, gram):
                return math.log((1 + num_docs) / (1 + doc_freq[n][gram])) + 1.0
        return _Idf()

    idfs = [None] + [idf_for(n) for n in range(1, max_n + 1)]
    scores = []
    for pair in pairs:
        per_n = 0.0
        for n in range(1, max_n + 1):
            cand_vec = _tfidf_vector(pair.candidate, n, idfs[n])
            sims = [_cosine(cand_vec, _tfidf_vector(ref, n, idfs[n])) for ref in pair.references]
            per_n += sum(sims) / len(sims)
        scores.append(10.0 * per_n / max_n)
    # sorted summation keeps the corpus score independent of pair order
    return sum(sorted(scores)) / num_docs


def metric_table(pairs):
    """All metrics for one pair collection, in report column order."""
    pairs = list(pairs)
    return {
        "bleu4": bleu4(pairs),
        "meteor": None,
        "rouge_l": rouge_l(pairs),
        "cider": cider(pairs),
    }


def format_report(rows):
    """Render metric rows ({split: table}) as the fixed-column text report."""
    lines = [f"# {CIDER_NOTE}"]
    lines.append(f"{'split':<12}{'B@4':>10}{'M':>10}{'R':>10}{'C':>10}")
    for split, table in rows.items():
        meteor = "n/a" if table.get("meteor") is None else f"{table['meteor']:.4f}"
        lines.append(
            f"{split:<12}{table['bleu4']:>10.4f}{meteor:>10}"
            f"{table['rouge_l']:>10.4f}{table['cider']:>10.4f}"
        )
    return "\n".join(lines)


def evaluate(checkpoint, videos, references, beam=None):
    """Decode every video with a trained checkpoint and score against references.

    ``references`` maps video_id to its raw reference strings.  Returns the
    metric table; decoding uses the checkpoint's beam width unless overridden.
    """
    from . import training  # local import: training depends on this module

    candidates = training.decode_videos(checkpoint, videos, beam=beam)
    return metric_table(make_pairs(candidates, references))
