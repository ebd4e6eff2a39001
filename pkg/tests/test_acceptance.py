"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a PASS/FAIL line; the lines are repeated in the terminal
summary at the end of the run.
"""

import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE
from embedkit.cli import main
from embedkit.decoder import DecoderConfig, corpus_loss, generate_greedy, train_decoder
from embedkit.embedding import EmbedDims, embed_clips, embed_sentence, embed_video, init_params
from embedkit.features import load_manifest, load_split, window_clips
from embedkit.gradcheck import run_suite
from embedkit.metrics import EvalItem, bleu4, cider, cider_scores
from embedkit.numeric import Rng
from embedkit.retrieval import (clip_median_matrix, evaluate_retrieval, pair_distance_groups,
                                random_baseline, rank_sentences, recall_at_k)
from embedkit.synth import synth_dataset
from embedkit.trainer import TrainConfig, contrastive_loss, load_checkpoint, save_checkpoint, train

MICRO_DIMS = EmbedDims(d_v=32, d_c=48, d_h=16, d_e=8)
MICRO_INI = Path(__file__).resolve().parents[1] / "configs" / "micro.ini"
MICRO_TRAIN = TrainConfig(n_negatives=5, lr=3e-3, dropout=0.0, max_updates=2000,
                          checkpoint_every=100, epochs=200, seed=7)


def verdict(name, ok, detail):
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_ac1_gradient_suite():
    t0 = time.perf_counter()
    errs = run_suite(n_configs=20, seed=0)
    took = time.perf_counter() - t0
    worst = max(errs.values())
    verdict("AC1 gradient suite", worst < 1e-5 and took < 60,
            f"max rel err {worst:.2e} over {len(errs)} groups x 20 configs, {took:.1f}s")


def test_ac2_micro_overfit(tmp_path):
    t0 = time.perf_counter()
    m = load_manifest(synth_dataset(tmp_path, n_videos=20, seed=7))
    data = load_split(m, "train")
    val = load_split(m, "validation")
    assert (len(data.video_ids), len(data.clips), len(data.sentence_ids)) == (20, 20, 20)
    assert all(z.shape == (2, 32) for z in data.web_images)
    res = train(data, val, MICRO_TRAIN, dims=MICRO_DIMS)
    rep = evaluate_retrieval(res.final.params, data)
    pos, neg = pair_distance_groups(res.final.params, data)
    gap = neg.mean() - pos.mean()
    alpha = res.final.alpha
    took = time.perf_counter() - t0
    ok = (rep.video["R@1"] == 100.0 and rep.sentence["R@1"] == 100.0 and gap >= alpha / 2
          and res.final.step <= 2000 and took < 120)
    verdict("AC2 micro-overfit retrieval", ok,
            f"R@1 video {rep.video['R@1']:.0f}% sentence {rep.sentence['R@1']:.0f}%, "
            f"gap {gap:.3f} vs alpha/2 {alpha / 2:.3f}, {res.final.step} updates, {took:.1f}s")


def test_ac3_random_baseline():
    t0 = time.perf_counter()
    res = random_baseline(n_candidates=670, n_queries=5000, seed=0)
    took = time.perf_counter() - t0
    r1, ar = res["video"]["R@1"], res["video"]["aR"]
    ok = abs(r1 - 100 / 670) <= 0.15 and abs(ar - 335.5) <= 5 and took < 60
    verdict("AC3 random baseline", ok,
            f"R@1 {r1:.3f}% (target 0.149 +/- 0.15), aR {ar:.1f} (target 335.5 +/- 5), "
            f"sentence aR {res['sentence']['aR']:.1f} (expected "
            f"{res['expected_sentence_aR']:.1f}), {took:.1f}s")


def test_ac4_loss_oracle():
    rng = Rng(2024)
    worst = 0.0
    for _ in range(100):
        d_v, d_c, d_h, d_e = (int(x) for x in rng.integers(1, 9, 4))
        p = init_params(EmbedDims(d_v, d_c, d_h, d_e), rng)
        for k in p:
            if k.startswith("b"):
                p[k] = rng.normal(p[k].shape, 0.3)
        n_neg = int(rng.integers(1, 6))

        def images():
            k = int(rng.integers(0, 4))
            return rng.normal((k, d_v)) if k else None
        clip = rng.normal((int(rng.integers(1, 4)), d_v))
        s, z = rng.normal(d_c), images()
        ns = [(rng.normal(d_c), images()) for _ in range(n_neg)]
        nc = [rng.normal((int(rng.integers(1, 4)), d_v)) for _ in range(n_neg)]
        alpha = float(rng.uniform(0.05, 3.0, 1)[0])
        loss, _ = contrastive_loss(clip, s, z, ns, nc, alpha, p, "infer")
        ref = oracles.contrastive(
            oracles.chain(p["W_v1"].tolist(), p["b_v1"].tolist(), p["W_v2"].tolist(),
                          p["b_v2"].tolist(), clip.tolist()),
            embed_sentence(s, z, p).tolist(),
            [embed_sentence(a, b, p).tolist() for a, b in ns],
            [oracles.chain(p["W_v1"].tolist(), p["b_v1"].tolist(), p["W_v2"].tolist(),
                           p["b_v2"].tolist(), c.tolist()) for c in nc],
            alpha)
        worst = max(worst, abs(loss - ref))
    verdict("AC4 loss oracle", worst <= 1e-12, f"max |loss - oracle| {worst:.2e} on 100 instances")


def _tiny_corpus(rng):
    words = ["a", "man", "dog", "is", "playing", "guitar", "runs", "the", "park"]

    def sentence():
        return [words[int(i)] for i in rng.integers(0, len(words), int(rng.integers(1, 8)))]

    corpus = []
    for i in range(int(rng.integers(2, 6))):
        refs = [sentence() for _ in range(int(rng.integers(1, 4)))]
        cand = list(refs[0])
        cand[int(rng.integers(0, len(cand)))] = words[int(rng.integers(0, len(words)))]
        corpus.append(EvalItem(f"v{i}", cand + sentence()[:int(rng.integers(0, 3))], refs))
    return corpus


def test_ac5_metric_oracles():
    rng = Rng(5)
    worst = 0.0
    for _ in range(50):
        corpus = _tiny_corpus(rng)
        cands = [it.candidate for it in corpus]
        refs = [it.references for it in corpus]
        worst = max(worst, abs(bleu4(corpus) - oracles.bleu(cands, refs)))
        mean, per = oracles.cider(cands, refs)
        worst = max(worst, abs(cider(corpus) - mean),
                    max(abs(a - b) for a, b in zip(cider_scores(corpus), per)))
    ident = [EvalItem(f"v{i}", t.split(), [t.split()])
             for i, t in enumerate(["a man is playing a guitar", "the dog runs in the park"])]
    b, c = 100 * bleu4(ident), 100 * cider(ident)
    ok = worst <= 1e-9 and b == pytest.approx(100.0) and c == pytest.approx(1000.0)
    verdict("AC5 metric oracles", ok,
            f"max |metric - oracle| {worst:.2e} on 50 corpora; identity BLEU {b:.1f}% "
            f"CIDEr {c:.1f}%")


TOY_CAPTIONS = [["a", "man", "is", "playing", "a", "guitar"],
                ["a", "dog", "runs", "in", "the", "park"],
                ["two", "women", "are", "cooking"],
                ["a", "baby", "laughs"],
                ["a", "man", "is", "slicing", "an", "onion"]]


def test_ac6_decoder_overfit():
    t0 = time.perf_counter()
    rng = Rng(0)
    embs = [np.tanh(rng.normal(8)) for _ in TOY_CAPTIONS]
    model, _ = train_decoder(embs, TOY_CAPTIONS, DecoderConfig(lr=1e-2, epochs=400, d_w=32))
    ce = corpus_loss(model, embs, TOY_CAPTIONS)
    max_len = 30
    outs = [generate_greedy(e, model, max_len) for e in embs]
    exact = sum(o == c for o, c in zip(outs, TOY_CAPTIONS))
    # shorter than max_len means decoding stopped on <eos>
    by_eos = all(len(o) < max_len for o in outs)
    took = time.perf_counter() - t0
    verdict("AC6 decoder micro-overfit", ce < 0.01 and exact == 5 and by_eos and took < 120,
            f"CE {ce:.2e}, {exact}/5 captions exact, stopped on <eos>: {by_eos}, {took:.1f}s")


def test_ac7_determinism(tmp_path):
    m = load_manifest(synth_dataset(tmp_path / "data", n_videos=20, seed=7))
    data, val = load_split(m, "train"), load_split(m, "validation")
    cfg = TrainConfig(n_negatives=5, lr=1e-3, dropout=0.5, max_updates=100,
                      checkpoint_every=50, seed=11)
    paths = []
    for tag in ("a", "b"):
        res = train(data, val, cfg, dims=MICRO_DIMS, out_dir=tmp_path / tag)
        paths.append(tmp_path / tag / "final.ntsr")
        save_checkpoint(res.final, paths[-1])
    same_ck = paths[0].read_bytes() == paths[1].read_bytes()

    reports = []
    for tag, ck in zip(("a", "b"), paths):
        rdir = tmp_path / f"rep_{tag}"
        rc = main(["eval-retrieval", "--manifest", str(tmp_path / "data" / "manifest.json"),
                   "--checkpoint", str(ck), "--split", "validation", "--report-dir", str(rdir),
                   "--config", str(MICRO_INI)])
        assert rc == 0
        reports.append({p.name: p.read_bytes() for p in sorted(rdir.iterdir())})
    same_reports = reports[0] == reports[1] and len(reports[0]) >= 5

    back = load_checkpoint(paths[0], MICRO_DIMS)
    X = np.concatenate([c.frames for c in data.clips])
    roundtrip = (np.array_equal(embed_video(X, back.params), embed_video(X, res.final.params))
                 and np.array_equal(embed_clips(data.video_frames, back.params),
                                    embed_clips(data.video_frames, res.final.params)))
    verdict("AC7 determinism", same_ck and same_reports and roundtrip,
            f"checkpoints identical: {same_ck}, {len(reports[0])} report files identical: "
            f"{same_reports}, round-trip bit-exact: {roundtrip}")


def test_ac8_protocol():
    rng = Rng(8)
    cases = {"clip count": 0, "median": 0, "min rank of five": 0, "recall monotone": 0}
    bad = {k: 0 for k in cases}

    def tally(key, ok):
        cases[key] += 1
        bad[key] += not ok

    for m in range(1, 31):
        for w in range(1, 8):
            for s in range(1, 5):
                n = len(window_clips(np.zeros((m, 1)), w, s))
                starts = [t for t in range(0, m, s) if t + w <= m]
                expect = (m - w) // s + 1 if m >= w else 1
                tally("clip count", n == expect == (len(starts) or 1))
    for _ in range(200):
        n_v = int(rng.integers(1, 5))
        cv = np.concatenate([np.arange(n_v), rng.integers(0, n_v, int(rng.integers(0, 6)))])
        S, C = rng.normal((3, 2)), rng.normal((len(cv), 2))
        M = clip_median_matrix(S, C, cv, n_v)
        ok = True
        for i in range(3):
            for v in range(n_v):
                ds = [oracles.sqdist(S[i].tolist(), C[c].tolist())
                      for c in np.flatnonzero(cv == v)]
                ok &= abs(M[i, v] - oracles.median(ds)) <= 1e-12
        tally("median", ok)

        d = rng.integers(0, 12, 15).astype(float)
        gts = [int(j) for j in rng.choice_without_replacement(15, 5)]
        # brute force: position of each ground truth in a stable sort
        order = sorted(range(15), key=lambda j: (d[j], j))
        brute = min(order.index(j) + 1 for j in gts)
        r = rank_sentences("q", d, [f"s{j}" for j in range(15)], gts)
        tally("min rank of five", r.rank == brute)

        ranks = rng.integers(1, 20, int(rng.integers(1, 12)))
        rec = [recall_at_k(ranks, k) for k in range(1, 21)]
        brute = [100.0 * sum(1 for x in ranks if x <= k) / len(ranks) for k in range(1, 21)]
        tally("recall monotone", all(abs(a - b) < 1e-12 for a, b in zip(rec, brute))
              and all(a <= b for a, b in zip(rec, rec[1:])))
    verdict("AC8 protocol conformance", not any(bad.values()),
            ", ".join(f"{k} {cases[k] - bad[k]}/{cases[k]}" for k in cases))
