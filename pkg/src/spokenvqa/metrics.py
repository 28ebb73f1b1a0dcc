"""Caption metrics, bbox parsing and localisation accuracy.

All text metrics share :func:`tokenize`: lowercase, every ``{x1, y1, x2, y2}``
group collapsed into one token, other punctuation replaced by spaces,
whitespace split.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Mapping, Sequence

BBOX_RE = re.compile(r"\{\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\}")

Box = tuple[int, int, int, int]


def parse_bbox(text: str) -> Box | None:
    """First ``{int, int, int, int}`` in ``text`` if it is a valid box, else None."""
    m = BBOX_RE.search(text)
    if m is None:
        return None
    x1, y1, x2, y2 = (int(g) for g in m.groups())
    if min(x1, y1) < 0 or x1 >= x2 or y1 >= y2:
        return None
    return (x1, y1, x2, y2)


def iou(a: Sequence[int], b: Sequence[int]) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = max(0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0 else 0.0


def bbox_accuracy(predictions: Sequence[tuple[str, Sequence[int]]], threshold: float = 0.5) -> float:
    """Share of (text, ground truth) pairs whose parsed box reaches ``threshold`` IoU.

    Unparseable predictions count as misses.
    """
    if not predictions:
        raise ValueError("bbox_accuracy needs at least one prediction")
    hits = 0
    for text, gt in predictions:
        box = parse_bbox(text)
        if box is not None and iou(box, tuple(gt)) >= threshold:
            hits += 1
    return hits / len(predictions)


def tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    for m in BBOX_RE.finditer(text):
        tokens += _plain_tokens(text[pos:m.start()])
        tokens.append("{%s}" % ",".join(m.groups()))
        pos = m.end()
    tokens += _plain_tokens(text[pos:])
    return tokens


def _plain_tokens(text: str) -> list[str]:
    return re.sub(r"[^\w\s]", " ", text.lower()).split()


def bleu1(candidate: str, references: Sequence[str]) -> float:
    """Clipped unigram precision times the brevity penalty.  Empty candidates score 0."""
    if not references:
        raise ValueError("bleu1 needs at least one reference")
    cand = tokenize(candidate)
    if not cand:
        return 0.0
    refs = [tokenize(r) for r in references]
    max_ref = Counter()
    for r in refs:
        for tok, n in Counter(r).items():
            max_ref[tok] = max(max_ref[tok], n)
    clipped = sum(min(n, max_ref[tok]) for tok, n in Counter(cand).items())
    c = len(cand)
    # closest reference length, shorter one on ties
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * clipped / c


def rouge1(candidate: str, reference: str) -> tuple[float, float, float]:
    """(precision, recall, F1) of clipped unigram overlap; zeros if either side is empty."""
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return (0.0, 0.0, 0.0)
    overlap = sum((Counter(cand) & Counter(ref)).values())
    p, r = overlap / len(cand), overlap / len(ref)
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return (p, r, f)


def stem(word: str) -> str:
    """Light suffix stripper (plural, -ed, -ing, -ly); bbox tokens and numbers pass through."""
    if not word.isalpha() or len(word) <= 3:
        return word
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith("ies"):
        return word[:-3] + "y"
    for suffix in ("ing", "ed", "ly"):
        if word.endswith(suffix) and len(word) - len(suffix) >= 3:
            return word[: -len(suffix)]
    if word.endswith("s") and not word.endswith("ss") and not word.endswith("us"):
        return word[:-1]
    return word


def align(cand: Sequence[str], ref: Sequence[str]) -> tuple[int, int]:
    """(matches, chunks) of the stem-level alignment with the most matches, then fewest chunks."""
    ckeys = [stem(t) for t in cand]
    rkeys = [stem(t) for t in ref]
    options = [tuple(j for j, k in enumerate(rkeys) if k == ck) for ck in ckeys]
    # ref positions still matchable from candidate i onward; other used bits cannot matter
    live = [0] * (len(ckeys) + 1)
    for i in range(len(ckeys) - 1, -1, -1):
        live[i] = live[i + 1] | sum(1 << j for j in options[i])

    @lru_cache(maxsize=None)
    def best(i: int, used: int, prev: int) -> tuple[int, int]:
        # prev: ref index matched by cand[i-1], or -1 if cand[i-1] was unmatched
        # (or if its successor is not an option here, which scores the same)
        if i == len(ckeys):
            return (0, 0)
        result = step(i + 1, used, -1)
        for j in options[i]:
            if used >> j & 1:
                continue
            m, negc = step(i + 1, used | (1 << j), j)
            new_chunk = 0 if prev >= 0 and j == prev + 1 else 1
            result = max(result, (m + 1, negc - new_chunk))
        return result

    def step(i: int, used: int, prev: int) -> tuple[int, int]:
        if i < len(ckeys) and prev + 1 not in options[i]:
            prev = -1
        return best(i, used & live[i], prev)

    matches, negc = step(0, 0, -1)
    best.cache_clear()
    return matches, -negc


def meteor_lite(candidate: str, reference: str) -> float:
    """Exact+stem unigram METEOR without synonym resources."""
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0
    matches, chunks = align(cand, ref)
    if matches == 0:
        return 0.0
    p, r = matches / len(cand), matches / len(ref)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1 - penalty)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def cider_scores(candidates: Mapping, references: Mapping, max_n: int = 4) -> dict:
    """Per-id CIDEr (base form, corpus IDF from the references, x10)."""
    if set(candidates) != set(references):
        raise ValueError("candidates and references must cover the same ids")
    if not candidates:
        raise ValueError("cider needs at least one id")
    ids = list(references)
    N = len(ids)
    cand_tok = {i: tokenize(candidates[i]) for i in ids}
    ref_tok = {i: [tokenize(r) for r in references[i]] for i in ids}
    df = [Counter() for _ in range(max_n)]
    for i in ids:
        for n in range(1, max_n + 1):
            seen = set()
            for r in ref_tok[i]:
                seen.update(_ngrams(r, n))
            df[n - 1].update(seen)

    def vec(tokens, n):
        return {g: c * math.log(N / max(df[n - 1][g], 1)) for g, c in _ngrams(tokens, n).items()}

    def cos(u, v):
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0 or nv == 0:
            return 0.0
        return sum(x * v.get(g, 0.0) for g, x in u.items()) / (nu * nv)

    out = {}
    for i in ids:
        refs = ref_tok[i]
        sims = []
        for n in range(1, max_n + 1):
            cv = vec(cand_tok[i], n)
            sims.append(sum(cos(cv, vec(r, n)) for r in refs) / len(refs) if refs else 0.0)
        out[i] = 10.0 * sum(sims) / max_n
    return out


def cider(candidates: Mapping, references: Mapping, max_n: int = 4) -> float:
    scores = cider_scores(candidates, references, max_n)
    return sum(scores.values()) / len(scores)


@dataclass
class MetricScores:
    rouge1_f: float
    bleu1: float
    meteor: float
    cider: float
    bbox_accuracy: float
    n: int = 0
    parse_failures: int = 0
    empty_predictions: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def score_predictions(predictions: Mapping[str, str], references: Mapping[str, str],
                      boxes: Mapping[str, Sequence[int] | None], iou_threshold: float = 0.5) -> MetricScores:
    """Aggregate all metrics over one set of (id -> prediction, reference, gt box)."""
    ids = list(references)
    if not ids:
        raise ValueError("no predictions to score")
    n = len(ids)
    located = [(predictions[i], boxes[i]) for i in ids if boxes.get(i) is not None]
    return MetricScores(
        rouge1_f=sum(rouge1(predictions[i], references[i])[2] for i in ids) / n,
        bleu1=sum(bleu1(predictions[i], [references[i]]) for i in ids) / n,
        meteor=sum(meteor_lite(predictions[i], references[i]) for i in ids) / n,
        cider=cider({i: predictions[i] for i in ids}, {i: [references[i]] for i in ids}),
        bbox_accuracy=bbox_accuracy(located, iou_threshold) if located else 0.0,
        n=n,
        parse_failures=sum(parse_bbox(p) is None for p, _ in located),
        empty_predictions=sum(not tokenize(predictions[i]) for i in ids),
    )
