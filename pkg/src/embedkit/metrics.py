"""Corpus BLEU@4 and CIDEr for captions scored against multiple references.

CIDEr here is the plain variant: TF-IDF n-gram vectors, cosine similarity
averaged over references and n = 1..4, times 10.  No length penalty and no
count clipping.
"""

import math
from collections import Counter
from dataclasses import dataclass

from .errors import DatasetError
from .sentence import normalize_text

MAX_N = 4


@dataclass
class EvalItem:
    key: str
    candidate: list
    references: list


def ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c_len: int, refs) -> int:
    return min((abs(len(r) - c_len), len(r)) for r in refs)[1]


def bleu4(corpus) -> float:
    """Corpus-level BLEU with n = 1..4, clipped counts, no smoothing."""
    if not corpus:
        raise ValueError("empty corpus")
    matched = [0] * MAX_N
    total = [0] * MAX_N
    c_len = r_len = 0
    for item in corpus:
        if not item.references:
            raise DatasetError(f"{item.key}: no references")
        cand = list(item.candidate)
        c_len += len(cand)
        r_len += _closest_ref_len(len(cand), item.references)
        for n in range(1, MAX_N + 1):
            counts = ngrams(cand, n)
            best = Counter()
            for ref in item.references:
                best |= ngrams(list(ref), n)
            matched[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            total[n - 1] += sum(counts.values())
    if c_len == 0 or min(matched) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / MAX_N
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


def _tfidf(counts: Counter, df: Counter, log_n: float) -> dict:
    return {g: c * (log_n - math.log(max(1, df[g]))) for g, c in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider_scores(corpus) -> list:
    """Per-item CIDEr in [0, 10]; document frequencies come from the reference sets."""
    if not corpus:
        raise ValueError("empty corpus")
    for item in corpus:
        if not item.references:
            raise DatasetError(f"{item.key}: no references")
    log_n = math.log(len(corpus))
    df = [Counter() for _ in range(MAX_N)]
    for item in corpus:
        for n in range(1, MAX_N + 1):
            seen = set()
            for ref in item.references:
                seen.update(ngrams(list(ref), n))
            df[n - 1].update(seen)
    scores = []
    for item in corpus:
        per_n = []
        for n in range(1, MAX_N + 1):
            cvec = _tfidf(ngrams(list(item.candidate), n), df[n - 1], log_n)
            sims = [_cosine(cvec, _tfidf(ngrams(list(r), n), df[n - 1], log_n))
                    for r in item.references]
            per_n.append(sum(sims) / len(sims))
        scores.append(10.0 * sum(per_n) / MAX_N)
    return scores


def cider(corpus) -> float:
    scores = cider_scores(corpus)
    return sum(scores) / len(scores)


def _tokens(caption) -> list:
    text = caption if isinstance(caption, str) else " ".join(caption)
    try:
        return normalize_text(text)
    except ValueError:
        return []


def build_corpus(candidates: dict, references: dict) -> list:
    """``candidates``: key -> caption; ``references``: key -> list of captions."""
    missing = sorted(set(candidates) - set(references))
    if missing:
        raise DatasetError(f"no references for: {', '.join(missing[:5])}")
    corpus = []
    for key in sorted(candidates):
        refs = [_tokens(r) for r in references[key]]
        refs = [r for r in refs if r]
        if not refs:
            raise DatasetError(f"{key}: no references")
        corpus.append(EvalItem(key, _tokens(candidates[key]), refs))
    return corpus


def eval_generated(candidates: dict, references: dict) -> dict:
    """Caption scores in percent; METEOR is reported as ``None`` (not implemented)."""
    corpus = build_corpus(candidates, references)
    return {
        "CIDEr": 100.0 * cider(corpus),
        "BLEU": 100.0 * bleu4(corpus),
        "METEOR": None,
        "n_videos": len(corpus),
        "per_video_CIDEr": {it.key: s for it, s in zip(corpus, cider_scores(corpus))},
    }


def references_for(manifest, split: str) -> dict:
    ids = [v.video_id for v in manifest.videos_in(split)]
    refs = {vid: [] for vid in ids}
    for s in manifest.sentences_of(ids):
        refs[s.video_id].append(list(s.tokens))
    return refs
