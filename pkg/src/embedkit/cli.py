"""``embedkit`` command line.

Every command reads an optional flat config file (``--config``); flags
override its keys.  Reports go to ``report_dir`` as sorted-key JSON plus a
tab-separated table, with figures alongside where a command has something
to plot.  Errors print their category and exit nonzero.
"""

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .config import load_config
from .embedding import embed_clips
from .errors import ConfigError, DatasetError, EmbedkitError
from .features import load_manifest, load_split, manifest_encoder, relpath, write_blob
from .report import format_table, provenance, write_json, write_tsv

log = logging.getLogger("embedkit")

GRAD_TOL = 1e-5
SPLITS = ("train", "validation", "test")


def _common(p, *, split=None, checkpoint=False, top_k=False, max_len=False):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--manifest", help="dataset manifest (JSON)")
    p.add_argument("--preset", choices=("vgg", "googlenet"))
    p.add_argument("--report-dir", help="where reports and figures are written")
    if split is not None:
        p.add_argument("--split", choices=SPLITS, default=split)
    if checkpoint:
        p.add_argument("--checkpoint",
                       help="embedding checkpoint (default: <checkpoint_dir>/best.ntsr)")
    if top_k:
        p.add_argument("--top-k", help="comma separated K values for R@K, e.g. 1,5,10")
    if max_len:
        p.add_argument("--max-len", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="embedkit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"embedkit {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=20, help="training videos")
    p.add_argument("--val-videos", type=int, default=4)
    p.add_argument("--test-videos", type=int, default=4)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--sentences", type=int, default=1, help="sentences per video")
    p.add_argument("--images", type=int, default=2, help="web images per sentence")
    p.add_argument("--d-v", type=int, default=32)
    p.add_argument("--d-c", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ingest", help="validate a manifest and count its contents")
    _common(p)
    p.add_argument("--encode", action="store_true",
                   help="write missing sentence vectors and update the manifest")

    p = sub.add_parser("train", help="train the joint embedding")
    _common(p)
    p.add_argument("--out", help="checkpoint directory (overrides checkpoint_dir)")
    p.add_argument("--resume", help="snapshot to continue from")
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-updates", type=int)
    p.add_argument("--negatives", type=int, dest="n_negatives")
    p.add_argument("--margin")
    p.add_argument("--d-h", type=int)
    p.add_argument("--d-e", type=int)
    p.add_argument("--checkpoint-every", type=int)

    p = sub.add_parser("eval-retrieval", help="video and sentence retrieval on one split")
    _common(p, split="test", checkpoint=True, top_k=True)

    p = sub.add_parser("train-decoder", help="train the caption decoder on frozen embeddings")
    _common(p, split="train", checkpoint=True, max_len=True)
    p.add_argument("--out", help="decoder checkpoint path (default: <checkpoint_dir>/decoder.ntsr)")
    p.add_argument("--lr", type=float, dest="dec_lr")
    p.add_argument("--epochs", type=int, dest="dec_epochs")
    p.add_argument("--d-w", type=int, dest="dec_d_w")

    p = sub.add_parser("generate", help="greedy captions for every video of a split")
    _common(p, split="test", checkpoint=True, max_len=True)
    p.add_argument("--decoder", help="decoder checkpoint (default: <checkpoint_dir>/decoder.ntsr)")
    p.add_argument("--out", help="captions file (default: <report_dir>/captions_<split>.tsv)")

    p = sub.add_parser("eval-captions", help="CIDEr and BLEU@4 of a captions file")
    _common(p, split="test")
    p.add_argument("--captions", required=True, help="one 'video_id<TAB>caption' per line")

    p = sub.add_parser("grad-check", help="finite-difference check of every analytic gradient")
    _common(p)
    p.add_argument("--configs", type=int, default=20, help="random configurations per group")

    p = sub.add_parser("baseline-random", help="rank statistics of random embeddings")
    _common(p, top_k=True)
    p.add_argument("--candidates", type=int, default=670)
    p.add_argument("--queries", type=int, default=5000)
    p.add_argument("--sentences-per-video", type=int, default=5)
    return ap


_CONFIG_FLAGS = ("seed", "manifest", "preset", "report_dir", "top_k", "max_len", "lr", "dropout",
                 "epochs", "max_updates", "n_negatives", "margin", "d_h", "d_e",
                 "checkpoint_every", "dec_lr", "dec_epochs", "dec_d_w")


def _config(args):
    overrides = {k: getattr(args, k) for k in _CONFIG_FLAGS if hasattr(args, k)}
    if getattr(args, "out", None) and args.command == "train":
        overrides["checkpoint_dir"] = args.out
    return load_config(getattr(args, "config", None), overrides)


def _manifest(cfg, check_blobs=True):
    if cfg.manifest is None:
        raise ConfigError("no manifest given: pass --manifest or set manifest in the config file")
    return load_manifest(cfg.manifest, check_blobs=check_blobs)


def _split(cfg, m, split):
    return load_split(m, split, window=cfg.window, stride=cfg.stride, cap=cfg.gt_cap)


def _checkpoint_path(cfg, args) -> Path:
    return Path(args.checkpoint) if getattr(args, "checkpoint", None) else \
        Path(cfg.checkpoint_dir) / "best.ntsr"


def _emit(rows, title=None):
    if title:
        print(f"# {title}")
    sys.stdout.write(format_table(rows))


# -- commands ---------------------------------------------------------------


def cmd_synth(args, _cfg=None):
    from .synth import synth_dataset

    path = synth_dataset(args.out, n_videos=args.videos, frames_per_video=args.frames,
                         sentences_per_video=args.sentences, d_v=args.d_v, d_c=args.d_c,
                         n_images=args.images, seed=args.seed, val_videos=args.val_videos,
                         test_videos=args.test_videos)
    print(path)
    return 0


def cmd_ingest(args, cfg):
    m = _manifest(cfg)
    cfg.dims(m.d_v, m.d_c)
    if args.encode:
        enc = manifest_encoder(m)
        out_dir = m.root / "sentvec"
        out_dir.mkdir(exist_ok=True)
        written = 0
        for s in m.sentences:
            if s.precomputed_sentence_vector_path:
                continue
            path = out_dir / f"{s.sentence_id}.fvec"
            write_blob(path, enc(s.tokens)[None, :])
            s.precomputed_sentence_vector_path = relpath(path, m.root)
            written += 1
        m.save(Path(cfg.manifest))
        log.info("wrote %d sentence vectors", written)
    rows = [("split", "videos", "clips", "sentences", "positives")]
    counts = {}
    for split in SPLITS:
        if not m.videos_in(split):
            continue
        d = _split(cfg, m, split)
        counts[split] = {"videos": len(d.video_ids), "clips": len(d.clips),
                         "sentences": len(d.sentence_ids), "positives": len(d.positives)}
        rows.append((split,) + tuple(counts[split].values()))
    report = {**provenance(cfg.fingerprint(), cfg.seed, "ingest"),
              "d_v": m.d_v, "d_c": m.d_c, "splits": counts}
    out = Path(cfg.report_dir)
    write_json(out / "ingest.json", report)
    write_tsv(out / "ingest.tsv", rows)
    _emit(rows)
    return 0


def cmd_train(args, cfg):
    from .embedding import init_params
    from .numeric import Rng
    from .plotting import distance_histograms, loss_curve
    from .retrieval import pair_distance_groups
    from .trainer import train

    m = _manifest(cfg)
    dims = cfg.dims(m.d_v, m.d_c)
    tc = cfg.train_config()
    train_data = _split(cfg, m, "train")
    val_data = _split(cfg, m, "validation") if m.videos_in("validation") else train_data
    if val_data is train_data:
        log.warning("manifest has no validation split; selecting on the training split")
    out_dir = Path(cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # the trainer draws its init first from a fresh stream, so this replays it
    before = pair_distance_groups(init_params(dims, Rng(tc.seed)), train_data)
    result = train(train_data, val_data, tc, dims=dims, out_dir=out_dir, resume=args.resume)
    after = pair_distance_groups(result.final.params, train_data)

    report = {**provenance(tc.fingerprint(dims), tc.seed, "train"),
              "dims": {"d_v": dims.d_v, "d_c": dims.d_c, "d_h": dims.d_h, "d_e": dims.d_e},
              "alpha": result.final.alpha, "updates": result.final.step,
              "best_step": result.best.step, "best_val_score": result.best.best_score,
              "log": result.log}
    rdir = Path(cfg.report_dir)
    write_json(rdir / "train.json", report)
    rows = [("step", "mean_loss", "val_score", "pos_mean", "neg_mean", "gap")]
    rows += [(e["step"], e.get("mean_loss"), e.get("val_score"), e["pos_mean"], e["neg_mean"],
              e["gap"]) for e in result.log]
    write_tsv(rdir / "train.tsv", rows)
    loss_curve(result.log, rdir / "train_loss.png")
    distance_histograms(before, after, rdir / "train_distances.png", alpha=result.final.alpha)
    _emit(rows[:1] + rows[-1:], f"alpha={result.final.alpha:.6g} best_step={result.best.step}")
    print(f"checkpoints: {out_dir / 'best.ntsr'} {out_dir / 'final.ntsr'}")
    return 0


def cmd_eval_retrieval(args, cfg):
    from .metrics import eval_generated
    from .plotting import recall_curve
    from .retrieval import evaluate_retrieval
    from .trainer import load_checkpoint

    m = _manifest(cfg)
    ck_path = _checkpoint_path(cfg, args)
    ck = load_checkpoint(ck_path, cfg.dims(m.d_v, m.d_c))
    data = _split(cfg, m, args.split)
    rep = evaluate_retrieval(ck.params, data, top_k=cfg.top_k_list())
    ks = cfg.top_k_list()
    head = ("direction",) + tuple(f"R@{k}" for k in ks) + ("aR", "mR")
    table1 = [head] + [(name,) + tuple(s[f"R@{k}"] for k in ks) + (s["aR"], s["mR"])
                       for name, s in (("video", rep.video), ("sentence", rep.sentence))]

    # captioning by retrieval: each video's top sentence scored against its references
    sent_tokens = dict(zip(data.sentence_ids, data.sentence_tokens))
    refs = {vid: [data.sentence_tokens[j] for j in data.sentences_of(v)]
            for v, vid in enumerate(data.video_ids)}
    cands = {vid: sent_tokens[top] for vid, _, top in rep.sentence_queries}
    caps = eval_generated(cands, refs)
    table2 = [("model", "CIDEr", "BLEU", "METEOR"),
              (ck_path.name, caps["CIDEr"], caps["BLEU"], None)]

    report = {**provenance(ck.fingerprint, ck.seed, "eval-retrieval"), "split": args.split,
              "checkpoint": ck_path.name, "checkpoint_step": ck.step,
              "video": rep.video, "sentence": rep.sentence,
              "video_queries": [list(q) for q in rep.video_queries],
              "sentence_queries": [list(q) for q in rep.sentence_queries],
              "retrieved_captions": {k: caps[k] for k in ("CIDEr", "BLEU", "METEOR", "n_videos")}}
    rdir = Path(cfg.report_dir)
    stem = f"retrieval_{args.split}"
    write_json(rdir / f"{stem}.json", report)
    write_tsv(rdir / f"{stem}.tsv", table1)
    write_tsv(rdir / f"{stem}_captions.tsv", table2)
    write_tsv(rdir / f"{stem}_queries.tsv",
              [("kind", "query", "ground_truth", "rank")]
              + [("video", s, v, r) for s, v, r in rep.video_queries]
              + [("sentence", v, top, r) for v, r, top in rep.sentence_queries])
    recall_curve({"video retrieval": [q[2] for q in rep.video_queries],
                  "sentence retrieval": [q[1] for q in rep.sentence_queries]},
                 rdir / f"{stem}_recall.png")
    _emit(table1, f"retrieval on {args.split} ({len(data.sentence_ids)} sentences, "
                  f"{len(data.video_ids)} videos)")
    _emit(table2, "retrieved sentences as captions (%)")
    return 0


def _video_embeddings(params, data):
    # whole videos, every frame at once
    return embed_clips(data.video_frames, params)


def cmd_train_decoder(args, cfg):
    from .decoder import corpus_loss, train_decoder
    from .plotting import decoder_loss_curve
    from .trainer import load_checkpoint

    m = _manifest(cfg)
    ck = load_checkpoint(_checkpoint_path(cfg, args), cfg.dims(m.d_v, m.d_c))
    data = _split(cfg, m, args.split)
    phis = _video_embeddings(ck.params, data)
    embeddings = [phis[int(v)] for v in data.sentence_video]
    dc = cfg.decoder_config()
    model, history = train_decoder(embeddings, data.sentence_tokens, dc,
                                   embed_fingerprint=ck.fingerprint)
    out = Path(args.out) if args.out else Path(cfg.checkpoint_dir) / "decoder.ntsr"
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    ce = corpus_loss(model, embeddings, data.sentence_tokens)
    report = {**provenance(cfg.fingerprint(), dc.seed, "train-decoder"),
              "embed_fingerprint": ck.fingerprint, "vocab_size": len(model.vocab),
              "pairs": len(embeddings), "final_cross_entropy": ce, "history": history}
    rdir = Path(cfg.report_dir)
    write_json(rdir / "decoder_train.json", report)
    rows = [("epoch", "mean_loss")] + [(h["epoch"], h["mean_loss"]) for h in history]
    write_tsv(rdir / "decoder_train.tsv", rows)
    decoder_loss_curve(history, rdir / "decoder_loss.png")
    _emit([("pairs", "vocab", "cross_entropy"), (len(embeddings), len(model.vocab), ce)])
    print(f"decoder: {out}")
    return 0


def cmd_generate(args, cfg):
    from .decoder import generate_greedy, load_decoder
    from .trainer import load_checkpoint

    m = _manifest(cfg)
    ck = load_checkpoint(_checkpoint_path(cfg, args), cfg.dims(m.d_v, m.d_c))
    dec = load_decoder(args.decoder or Path(cfg.checkpoint_dir) / "decoder.ntsr")
    if dec.embed_fingerprint and dec.embed_fingerprint != ck.fingerprint:
        warnings.warn("decoder was trained on a different embedding checkpoint", stacklevel=1)
    data = _split(cfg, m, args.split)
    phis = _video_embeddings(ck.params, data)
    lines = [f"{vid}\t{' '.join(generate_greedy(phis[v], dec, cfg.max_len))}\n"
             for v, vid in enumerate(data.video_ids)]
    out = Path(args.out) if args.out else Path(cfg.report_dir) / f"captions_{args.split}.tsv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(lines))
    sys.stdout.write("".join(lines))
    return 0


def read_captions(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"captions file not found: {path}")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        vid, sep, cap = line.partition("\t")
        if not sep:
            raise DatasetError(f"{path}:{n}: expected 'video_id<TAB>caption'")
        if vid in out:
            raise DatasetError(f"{path}:{n}: duplicate video {vid}")
        out[vid] = cap
    if not out:
        raise DatasetError(f"{path}: no captions")
    return out


def cmd_eval_captions(args, cfg):
    from .metrics import eval_generated, references_for

    m = _manifest(cfg, check_blobs=False)
    refs = references_for(m, args.split)
    res = eval_generated(read_captions(args.captions), refs)
    table = [("model", "CIDEr", "BLEU", "METEOR"),
             (Path(args.captions).name, res["CIDEr"], res["BLEU"], None)]
    rdir = Path(cfg.report_dir)
    stem = f"captions_eval_{args.split}"
    write_json(rdir / f"{stem}.json", {**provenance(cfg.fingerprint(), cfg.seed, "eval-captions"),
                                       "split": args.split, **res})
    write_tsv(rdir / f"{stem}.tsv", table)
    _emit(table, f"{res['n_videos']} videos, scores in %")
    return 0


def cmd_grad_check(args, cfg):
    from .gradcheck import run_suite

    if args.configs < 1:
        raise ConfigError("--configs must be >= 1")
    res = run_suite(n_configs=args.configs, seed=cfg.seed)
    rows = [("group", "max_rel_error", "status")]
    rows += [(g, f"{e:.3e}", "ok" if e < GRAD_TOL else "FAIL") for g, e in res.items()]
    write_json(Path(cfg.report_dir) / "gradcheck.json",
               {**provenance(cfg.fingerprint(), cfg.seed, "grad-check"),
                "configs": args.configs, "tolerance": GRAD_TOL, "max_rel_error": res})
    write_tsv(Path(cfg.report_dir) / "gradcheck.tsv", rows)
    _emit(rows)
    return 0 if max(res.values()) < GRAD_TOL else 1


def cmd_baseline_random(args, cfg):
    from .retrieval import random_baseline

    res = random_baseline(n_candidates=args.candidates, n_queries=args.queries,
                          sentences_per_video=args.sentences_per_video, seed=cfg.seed,
                          top_k=cfg.top_k_list())
    ks = cfg.top_k_list()
    rows = [("direction",) + tuple(f"R@{k}" for k in ks) + ("aR", "mR", "expected_aR")]
    rows.append(("video",) + tuple(res["video"][f"R@{k}"] for k in ks)
                + (res["video"]["aR"], res["video"]["mR"], res["expected_video_aR"]))
    rows.append(("sentence",) + tuple(res["sentence"][f"R@{k}"] for k in ks)
                + (res["sentence"]["aR"], res["sentence"]["mR"], res["expected_sentence_aR"]))
    rdir = Path(cfg.report_dir)
    write_json(rdir / "baseline_random.json",
               {**provenance(cfg.fingerprint(), cfg.seed, "baseline-random"), **res})
    write_tsv(rdir / "baseline_random.tsv", rows)
    _emit(rows, f"random ranking: {args.candidates} candidates, {args.queries} queries")
    return 0


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train,
    "eval-retrieval": cmd_eval_retrieval, "train-decoder": cmd_train_decoder,
    "generate": cmd_generate, "eval-captions": cmd_eval_captions,
    "grad-check": cmd_grad_check, "baseline-random": cmd_baseline_random,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = None if args.command == "synth" else _config(args)
        return COMMANDS[args.command](args, cfg)
    except EmbedkitError as exc:
        print(f"embedkit: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"embedkit: load error: missing file {exc.filename}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
