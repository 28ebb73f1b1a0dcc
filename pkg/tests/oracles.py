"""Brute-force reference implementations used to check the production metrics.

These favour obviousness over speed: explicit loops, full enumeration, no
shared helpers with the package except the stemmer (which is part of the
metric definition rather than its computation).
"""

import itertools
import math
import random
import re

from spokenvqa.metrics import stem

_BOX = re.compile(r"\{\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\}")


def tokens(text):
    out = []
    rest = text
    while True:
        m = _BOX.search(rest)
        head = rest if m is None else rest[:m.start()]
        word = ""
        for ch in head.lower():
            if ch.isalnum() or ch == "_":
                word += ch
            elif word:
                out.append(word)
                word = ""
        if word:
            out.append(word)
        if m is None:
            return out
        out.append("{" + ",".join(m.groups()) + "}")
        rest = rest[m.end():]


def iou_cells(a, b):
    """Intersection over union by counting unit cells of the integer grid."""
    in_a = {(x, y) for x in range(a[0], a[2]) for y in range(a[1], a[3])}
    in_b = {(x, y) for x in range(b[0], b[2]) for y in range(b[1], b[3])}
    union = len(in_a | in_b)
    return len(in_a & in_b) / union if union else 0.0


def count(seq, item):
    n = 0
    for x in seq:
        if x == item:
            n += 1
    return n


def bleu1(candidate, references):
    cand = tokens(candidate)
    if not cand:
        return 0.0
    refs = [tokens(r) for r in references]
    clipped = 0
    for word in set(cand):
        clipped += min(count(cand, word), max(count(r, word) for r in refs))
    c = len(cand)
    best = None
    for r in refs:
        key = (abs(len(r) - c), len(r))
        if best is None or key < best:
            best = key
    r = best[1]
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * clipped / c


def rouge1_f(candidate, reference):
    cand, ref = tokens(candidate), tokens(reference)
    if not cand or not ref:
        return 0.0
    pool = list(ref)
    overlap = 0
    for w in cand:
        if w in pool:
            pool.remove(w)
            overlap += 1
    if overlap == 0:
        return 0.0
    p, r = overlap / len(cand), overlap / len(ref)
    return 2 * p * r / (p + r)


def _chunks(pairs):
    pairs = sorted(pairs)
    n = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or not (i == pairs[k - 1][0] + 1 and j == pairs[k - 1][1] + 1):
            n += 1
    return n


def meteor(candidate, reference):
    """Enumerates every one-to-one stem alignment; keeps most matches, then fewest chunks."""
    cand, ref = tokens(candidate), tokens(reference)
    if not cand or not ref:
        return 0.0
    choices = [[None] + [j for j, r in enumerate(ref) if stem(r) == stem(c)] for c in cand]
    best = (0, 0)
    for assignment in itertools.product(*choices):
        used = [j for j in assignment if j is not None]
        if len(used) != len(set(used)):
            continue
        pairs = [(i, j) for i, j in enumerate(assignment) if j is not None]
        key = (len(pairs), -_chunks(pairs))
        if key > best:
            best = key
    matches, chunks = best[0], -best[1]
    if matches == 0:
        return 0.0
    p, r = matches / len(cand), matches / len(ref)
    fmean = p * r / (0.9 * p + 0.1 * r)
    return fmean * (1 - 0.5 * (chunks / matches) ** 3)


def _grams(toks, n):
    out = {}
    for i in range(len(toks) - n + 1):
        g = " ".join(toks[i:i + n])
        out[g] = out.get(g, 0) + 1
    return out


def cider(candidates, references, max_n=4):
    ids = sorted(references)
    N = len(ids)
    total = 0.0
    for i in ids:
        per_n = 0.0
        for n in range(1, max_n + 1):
            def weight(g):
                df = 0
                for k in ids:
                    if any(g in _grams(tokens(r), n) for r in references[k]):
                        df += 1
                return math.log(N / max(df, 1))

            cg = _grams(tokens(candidates[i]), n)
            cvec = {g: c * weight(g) for g, c in cg.items()}
            sims = []
            for ref in references[i]:
                rg = _grams(tokens(ref), n)
                rvec = {g: c * weight(g) for g, c in rg.items()}
                dot = sum(cvec[g] * rvec[g] for g in cvec if g in rvec)
                norm = math.sqrt(sum(v * v for v in cvec.values())) * math.sqrt(sum(v * v for v in rvec.values()))
                sims.append(dot / norm if norm else 0.0)
            per_n += sum(sims) / len(sims)
        total += 10 * per_n / max_n
    return total / N


# -- randomized small cases ------------------------------------------------------

WORDS = ["the", "red", "circle", "circles", "box", "boxes", "is", "at", "left", "of", "shaped",
         "shape", "{1, 2, 3, 4}", "{0, 0, 10, 10}", "a", "sits"]


def random_sentence(rng, lo=0, hi=6):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def random_cases(n=50, seed=7):
    rng = random.Random(seed)
    return [(random_sentence(rng), [random_sentence(rng, 1) for _ in range(rng.randint(1, 3))]) for _ in range(n)]


def random_boxes(n=50, seed=11):
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        boxes = []
        for _ in range(2):
            x1, y1 = rng.randint(0, 12), rng.randint(0, 12)
            boxes.append((x1, y1, x1 + rng.randint(1, 10), y1 + rng.randint(1, 10)))
        out.append(tuple(boxes))
    return out
