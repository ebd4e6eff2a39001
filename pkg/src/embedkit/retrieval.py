"""Video and sentence retrieval evaluation.

A sentence-to-video distance is the median of the squared distances between
the sentence embedding and each clip of the video.  Ranks are 1-based and ties
are broken by candidate position, which callers keep in ascending id order.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbedDims, embed_clips, embed_sentences, init_params
from .errors import DatasetError, ShapeError
from .numeric import Rng

DEFAULT_TOP_K = (1, 5, 10)


@dataclass
class RankingResult:
    query: str
    rank: int                 # recorded ground-truth rank, 1-based
    order: list               # candidate ids, nearest first
    distances: np.ndarray     # ascending, aligned with ``order``
    gt_ranks: list = field(default_factory=list)


def video_query_distance(query, clip_embeddings) -> float:
    clip_embeddings = np.atleast_2d(np.asarray(clip_embeddings, dtype=np.float64))
    if clip_embeddings.shape[0] == 0 or clip_embeddings.size == 0:
        raise DatasetError("video has no clips")
    diff = clip_embeddings - np.asarray(query, dtype=np.float64)
    return float(np.median(np.einsum("ij,ij->i", diff, diff)))


def squared_distances(A, B) -> np.ndarray:
    """(n, m) matrix of squared Euclidean distances between rows of A and B."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"squared_distances: {A.shape} vs {B.shape}")
    # explicit differences keep exact zeros exact; chunk rows to bound memory
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, (1 << 22) // max(1, B.shape[0] * B.shape[1]))
    for lo in range(0, A.shape[0], step):
        diff = A[lo:lo + step, None, :] - B[None, :, :]
        out[lo:lo + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def clip_median_matrix(sentence_emb, clip_emb, clip_video, n_videos) -> np.ndarray:
    """(S, V) matrix of sentence-to-video median clip distances."""
    clip_video = np.asarray(clip_video)
    D = squared_distances(sentence_emb, clip_emb)
    out = np.empty((D.shape[0], n_videos))
    for v in range(n_videos):
        cols = np.flatnonzero(clip_video == v)
        if cols.size == 0:
            raise DatasetError(f"video index {v} has no clips")
        out[:, v] = np.median(D[:, cols], axis=1)
    return out


def rank_of(distances, target: int) -> int:
    """1-based rank of ``target`` with ties resolved by candidate position."""
    d = np.asarray(distances)
    dt = d[target]
    return int(1 + np.count_nonzero(d < dt) + np.count_nonzero(d[:target] == dt))


def _ordered(distances, ids):
    order = np.argsort(distances, kind="stable")
    return [ids[k] for k in order], np.asarray(distances)[order]


def rank_videos(query_id, distances, video_ids, gt_video: int) -> RankingResult:
    """Rank videos for one sentence query; ``distances[v]`` is the clip-median distance."""
    if not 0 <= gt_video < len(video_ids):
        raise DatasetError(f"ground-truth video of query {query_id} not among candidates")
    order, dist = _ordered(distances, video_ids)
    r = rank_of(distances, gt_video)
    return RankingResult(str(query_id), r, order, dist, [r])


def rank_sentences(query_id, distances, sentence_ids, gt_sentences) -> RankingResult:
    """Rank sentences for one video query; records the best rank among its ground truths."""
    gt_sentences = list(gt_sentences)
    if not gt_sentences:
        raise DatasetError(f"video {query_id} has no ground-truth sentences")
    order, dist = _ordered(distances, sentence_ids)
    ranks = [rank_of(distances, j) for j in gt_sentences]
    return RankingResult(str(query_id), min(ranks), order, dist, ranks)


def recall_at_k(ranks, k: int) -> float:
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("recall of an empty rank list")
    return 100.0 * np.count_nonzero(ranks <= k) / ranks.size


def rank_stats(ranks) -> tuple:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("rank statistics of an empty rank list")
    return float(ranks.mean()), float(np.median(ranks))


def summarize(ranks, top_k=DEFAULT_TOP_K) -> dict:
    out = {f"R@{k}": recall_at_k(ranks, k) for k in top_k}
    out["aR"], out["mR"] = rank_stats(ranks)
    return out


def eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("EMBEDKIT_THREADS", "1")))
    except ValueError:
        return 1


def _chunked(fn, n, threads):
    if threads <= 1 or n < 2:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


@dataclass
class RetrievalReport:
    split: str
    video: dict               # R@K, aR, mR for sentence queries ranking videos
    sentence: dict            # the same for video queries ranking sentences
    video_queries: list       # (sentence_id, gt video_id, rank)
    sentence_queries: list    # (video_id, best rank, top sentence_id)
    distance_matrix: np.ndarray = None
    top_sentence: dict = field(default_factory=dict)

    def rows(self):
        yield ("direction", "R@1", "R@5", "R@10", "aR", "mR")
        for name, stats in (("video", self.video), ("sentence", self.sentence)):
            yield (name,) + tuple(stats[k] for k in ("R@1", "R@5", "R@10", "aR", "mR"))


def evaluate_retrieval(params, data, top_k=DEFAULT_TOP_K, threads=None) -> RetrievalReport:
    """Both retrieval directions over one split, in inference mode."""
    threads = eval_threads() if threads is None else threads
    clip_emb = embed_clips([c.frames for c in data.clips], params)
    sent_emb = embed_sentences(data.sentence_vectors, data.web_images, params)
    D = clip_median_matrix(sent_emb, clip_emb, data.clip_video, len(data.video_ids))

    def video_query(j):
        return rank_videos(data.sentence_ids[j], D[j], data.video_ids, int(data.sentence_video[j]))

    gt = [data.sentences_of(v) for v in range(len(data.video_ids))]

    def sentence_query(v):
        return rank_sentences(data.video_ids[v], D[:, v], data.sentence_ids, gt[v])

    vres = _chunked(video_query, len(data.sentence_ids), threads)
    sres = _chunked(sentence_query, len(data.video_ids), threads)
    ks = tuple(sorted(set(top_k) | set(DEFAULT_TOP_K)))
    return RetrievalReport(
        split=data.split,
        video=summarize([r.rank for r in vres], ks),
        sentence=summarize([r.rank for r in sres], ks),
        video_queries=[(r.query, data.video_ids[int(data.sentence_video[j])], r.rank)
                       for j, r in enumerate(vres)],
        sentence_queries=[(r.query, r.rank, r.order[0]) for r in sres],
        distance_matrix=D,
        top_sentence={r.query: r.order[0] for r in sres},
    )


def pair_distance_groups(params, data) -> tuple:
    """Clip-level distances of positive pairs and of all cross-video pairs."""
    clip_emb = embed_clips([c.frames for c in data.clips], params)
    sent_emb = embed_sentences(data.sentence_vectors, data.web_images, params)
    D = squared_distances(clip_emb, sent_emb)
    pos_mask = np.zeros(D.shape, dtype=bool)
    for p in data.positives:
        pos_mask[p.clip, p.sentence] = True
    neg_mask = data.clip_video[:, None] != data.sentence_video[None, :]
    return D[pos_mask], D[neg_mask]


def random_baseline(n_candidates=670, n_queries=5000, sentences_per_video=5, seed=0,
                    dims=None, top_k=DEFAULT_TOP_K) -> dict:
    """Rank statistics of an untrained model on random features.

    Each query draws fresh random candidate videos and sentences, embeds them
    with freshly initialized parameters, and ranks its ground truth.
    """
    dims = dims or EmbedDims(d_v=16, d_c=16, d_h=16, d_e=8)
    rng = Rng(seed)
    params = init_params(dims, rng)
    v_ranks, s_ranks = [], []
    n_sent = n_candidates * sentences_per_video
    for _ in range(n_queries):
        videos = rng.normal((n_candidates, dims.d_v))
        query = rng.normal((1, dims.d_c))
        gt = int(rng.integers(0, n_candidates))
        ve = embed_clips(list(videos[:, None, :]), params)
        qe = embed_sentences(query, [np.zeros((0, dims.d_v))], params)
        v_ranks.append(rank_of(squared_distances(qe, ve)[0], gt))

        sents = rng.normal((n_sent, dims.d_c))
        video = rng.normal((1, 1, dims.d_v))
        gts = rng.choice_without_replacement(n_sent, sentences_per_video)
        se = embed_sentences(sents, [np.zeros((0, dims.d_v))] * n_sent, params)
        vq = embed_clips(list(video), params)
        d = squared_distances(vq, se)[0]
        s_ranks.append(min(rank_of(d, int(j)) for j in gts))
    return {
        "n_candidates": n_candidates,
        "n_queries": n_queries,
        "n_sentence_candidates": n_sent,
        "video": summarize(v_ranks, top_k),
        "sentence": summarize(s_ranks, top_k),
        "expected_video_aR": (n_candidates + 1) / 2.0,
        "expected_video_R@1": 100.0 / n_candidates,
        "expected_sentence_aR": (n_sent + 1) / (sentences_per_video + 1),
    }
