"""Contrastive training of the joint embedding.

One update consumes one positive (clip, sentence) pair together with N_c
negative sentences and N_c negative clips drawn from other videos.

RNG draw order: parameter init, then per epoch a shuffle of the positives,
then per update the negative sentences, the negative clips, and the dropout
masks (positive clip, positive sentence, negative sentences, negative clips).
"""

import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .container import load_tensors, require, save_tensors
from .embedding import (EmbedDims, branch_gradients, check_params, dims_of, init_params,
                        sentence_forward, video_forward)
from .errors import ConfigError, DatasetError, LoadError, NonFiniteError, TrainingDiverged
from .numeric import AdamState, Rng, adam_step, check_dropout_ratio
from .retrieval import evaluate_retrieval, pair_distance_groups

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    n_negatives: int = 50
    margin: float | str = "auto"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 15
    dropout: float = 0.5
    checkpoint_every: int = 100
    seed: int = 0
    gt_cap: int = 5
    window: int = 5
    stride: int = 1
    max_updates: int | None = None

    def __post_init__(self):
        if self.n_negatives < 1:
            raise ConfigError("n_negatives must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        check_dropout_ratio(self.dropout)
        if self.margin != "auto":
            self.margin = float(self.margin)
            if not self.margin > 0:
                raise ConfigError(f"margin must be positive, got {self.margin}")

    def fingerprint(self, dims: EmbedDims | None = None) -> str:
        blob = asdict(self)
        if dims is not None:
            blob["dims"] = asdict(dims)
        raw = json.dumps(blob, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode()).hexdigest()[:16]


def sample_negatives(video: int, data, n_negatives: int, rng: Rng) -> tuple:
    """Sentence and clip indices from videos other than ``video``."""
    sent_pool = np.flatnonzero(data.sentence_video != video)
    clip_pool = np.flatnonzero(data.clip_video != video)
    if sent_pool.size == 0 or clip_pool.size == 0:
        raise DatasetError("no negative candidates: the split holds a single video")
    out = []
    for pool in (sent_pool, clip_pool):
        if pool.size <= n_negatives:
            out.append(pool.copy())
        else:
            out.append(pool[rng.choice_without_replacement(pool.size, n_negatives)])
    return out[0], out[1]


def _accumulate(total: dict, part: dict) -> None:
    for k, g in part.items():
        total[k] += g


def contrastive_loss(clip, sentence, images, neg_sentences, neg_clips, alpha, params,
                     mode="train", ratio=0.5, rng=None, ids=None) -> tuple:
    """Hinged contrastive loss for one positive pair and its negatives.

    ``neg_sentences`` is a list of ``(s_Y, images)``; ``neg_clips`` a list of
    frame arrays.  Returns ``(loss, grads)`` with a gradient for every
    parameter (zeros where untouched).  A hinge sitting exactly at the margin
    contributes no gradient.
    """
    if not alpha > 0:
        raise ConfigError(f"margin must be positive, got {alpha}")
    phi_v, cv = video_forward(clip, params, mode, ratio, rng)
    phi_s, cs = sentence_forward(sentence, images, params, mode, ratio, rng)
    neg_s = [sentence_forward(s, z, params, mode, ratio, rng) for s, z in neg_sentences]
    neg_v = [video_forward(x, params, mode, ratio, rng) for x in neg_clips]
    n_terms = 1 + len(neg_s) + len(neg_v)
    scale = 1.0 / n_terms

    diff = phi_v - phi_s
    total = float(diff @ diff)
    adj_v = 2.0 * diff
    adj_s = -2.0 * diff
    grads = {k: np.zeros_like(p) for k, p in params.items()}
    for e, cache in neg_s:
        dd = phi_v - e
        d = float(dd @ dd)
        if alpha - d > 0:
            total += alpha - d
            adj_v -= 2.0 * dd
            _accumulate(grads, branch_gradients(scale * 2.0 * dd, cache, params))
    for e, cache in neg_v:
        dd = e - phi_s
        d = float(dd @ dd)
        if alpha - d > 0:
            total += alpha - d
            adj_s += 2.0 * dd
            _accumulate(grads, branch_gradients(-scale * 2.0 * dd, cache, params))
    _accumulate(grads, branch_gradients(scale * adj_v, cv, params))
    _accumulate(grads, branch_gradients(scale * adj_s, cs, params))
    loss = scale * total
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss for sample {ids}")
    return loss, grads


def init_margin(data, params) -> float:
    """Largest positive-pair distance under ``params`` (inference mode)."""
    if not data.positives:
        raise DatasetError("no training positives to set the margin from")
    pos, _ = pair_distance_groups(params, data)
    alpha = float(pos.max())
    if not alpha > 0:
        raise ConfigError("initial margin is zero (degenerate init); reseed and retry")
    return alpha


@dataclass
class Checkpoint:
    params: dict
    adam: AdamState
    alpha: float
    step: int
    seed: int
    rng_state: dict
    fingerprint: str
    config: dict = field(default_factory=dict)
    epoch: int = 0
    position: int = 0
    order: np.ndarray | None = None
    best_step: int = -1
    best_score: float | None = None
    log: list = field(default_factory=list)

    @property
    def dims(self) -> EmbedDims:
        return dims_of(self.params)


def save_checkpoint(c: Checkpoint, path) -> None:
    tensors = {f"embed.{k}": v for k, v in c.params.items()}
    for k in c.params:
        tensors[f"adam.m.{k}"] = c.adam.m[k]
        tensors[f"adam.v.{k}"] = c.adam.v[k]
    if c.order is not None:
        tensors["train.order"] = np.asarray(c.order, dtype=np.float64)
    meta = {
        "kind": "embedding_checkpoint",
        "alpha": c.alpha,
        "step": c.step,
        "seed": c.seed,
        "rng_state": c.rng_state,
        "fingerprint": c.fingerprint,
        "config": c.config,
        "dims": asdict(c.dims),
        "epoch": c.epoch,
        "position": c.position,
        "best_step": c.best_step,
        "best_score": c.best_score,
        "adam": {"lr": c.adam.lr, "beta1": c.adam.beta1, "beta2": c.adam.beta2,
                 "eps": c.adam.eps, "step": c.adam.step},
        "log": c.log,
    }
    save_tensors(path, tensors, meta)


def load_checkpoint(path, dims: EmbedDims | None = None,
                    fingerprint: str | None = None) -> Checkpoint:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "embedding_checkpoint":
        raise LoadError(f"{path}: not an embedding checkpoint")
    d = EmbedDims(**meta["dims"])
    names = list(d.shapes())
    require(tensors, [f"embed.{n}" for n in names], path)
    params = {n: tensors[f"embed.{n}"].copy() for n in names}
    check_params(params, d)
    if dims is not None:
        check_params(params, dims)
    am = meta["adam"]
    m = {n: tensors.get(f"adam.m.{n}", np.zeros_like(params[n])).copy() for n in names}
    v = {n: tensors.get(f"adam.v.{n}", np.zeros_like(params[n])).copy() for n in names}
    adam = AdamState(lr=am["lr"], beta1=am["beta1"], beta2=am["beta2"], eps=am["eps"],
                     step=am["step"], m=m, v=v)
    if fingerprint is not None and fingerprint != meta["fingerprint"]:
        warnings.warn(f"{path}: config fingerprint {meta['fingerprint']} differs from "
                      f"current {fingerprint}", stacklevel=2)
    order = tensors.get("train.order")
    return Checkpoint(params=params, adam=adam, alpha=meta["alpha"], step=meta["step"],
                      seed=meta["seed"], rng_state=meta["rng_state"],
                      fingerprint=meta["fingerprint"], config=meta.get("config", {}),
                      epoch=meta.get("epoch", 0), position=meta.get("position", 0),
                      order=None if order is None else order.astype(np.int64),
                      best_step=meta.get("best_step", -1), best_score=meta.get("best_score"),
                      log=meta.get("log", []))


def validation_score(params, val_data) -> tuple:
    """Mean of both directions' average rank (lower is better) plus the report."""
    rep = evaluate_retrieval(params, val_data, threads=1)
    return 0.5 * (rep.video["aR"] + rep.sentence["aR"]), rep


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    log: list
    initial: dict


def _copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def _distance_summary(params, data, alpha=None) -> dict:
    pos, neg = pair_distance_groups(params, data)
    out = {"pos_mean": float(pos.mean()), "neg_mean": float(neg.mean()) if neg.size else 0.0}
    out["gap"] = out["neg_mean"] - out["pos_mean"]
    return out


def snapshot_path(out_dir, step: int) -> Path:
    return Path(out_dir) / f"snapshot_{step:06d}.ntsr"


def train(train_data, val_data, config: TrainConfig, dims: EmbedDims | None = None,
          out_dir=None, resume=None, params=None) -> TrainResult:
    """Run the epoch loop and return the best-on-validation snapshot.

    ``dims`` is taken from the data when omitted (d_h and d_e then required
    via ``params``).  ``out_dir`` receives one checkpoint per snapshot plus
    ``best.ntsr``; ``resume`` is a snapshot path to continue from.
    """
    fp = config.fingerprint(dims)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if resume is not None:
        ck = load_checkpoint(resume, dims, fingerprint=fp)
        params = ck.params
        rng = Rng(config.seed)
        rng.set_state(ck.rng_state)
        adam = ck.adam
        alpha = ck.alpha
        step, epoch, position = ck.step, ck.epoch, ck.position
        order = ck.order
        if order is not None and position >= len(order):
            epoch, order, position = epoch + 1, None, 0
        history = list(ck.log)
        best_step, best_score = ck.best_step, ck.best_score
        if best_step == step:
            best_params = _copy_params(params)
        elif best_step >= 0:
            if out_dir is None:
                raise ConfigError("resuming needs out_dir to recover the best snapshot")
            best_params = load_checkpoint(snapshot_path(out_dir, best_step)).params
        else:
            best_params = None
        initial = history[0] if history else {}
    else:
        rng = Rng(config.seed)
        if params is None:
            if dims is None:
                raise ConfigError("train needs either dims or initial params")
            params = init_params(dims, rng)
        else:
            params = _copy_params(params)
        if dims is not None:
            check_params(params, dims)
        alpha = init_margin(train_data, params) if config.margin == "auto" else float(config.margin)
        adam = AdamState.fresh(params, config.lr, config.beta1, config.beta2, config.eps)
        step, epoch, position, order = 0, 0, 0, None
        initial = {"step": 0, "alpha": alpha, **_distance_summary(params, train_data)}
        history = [initial]
        best_step, best_score, best_params = -1, None, None

    positives = train_data.positives
    images = train_data.web_images
    vectors = train_data.sentence_vectors
    clips = train_data.clips
    n_pos = len(positives)
    if n_pos == 0:
        raise DatasetError("training split has no positive pairs")
    loss_sum, loss_count = 0.0, 0
    last_good = None

    def make_checkpoint():
        return Checkpoint(params=params, adam=adam, alpha=alpha, step=step, seed=config.seed,
                          rng_state=rng.get_state(), fingerprint=fp, config=asdict(config),
                          epoch=epoch, position=position, order=order, best_step=best_step,
                          best_score=best_score, log=history)

    def snapshot():
        nonlocal best_step, best_score, best_params, loss_sum, loss_count, last_good
        score, rep = validation_score(params, val_data)
        entry = {"step": step, "epoch": epoch,
                 "mean_loss": loss_sum / loss_count if loss_count else None,
                 "val_score": score,
                 "val_video_aR": rep.video["aR"], "val_sentence_aR": rep.sentence["aR"],
                 "val_video_R@1": rep.video["R@1"], "val_sentence_R@1": rep.sentence["R@1"],
                 **_distance_summary(params, train_data)}
        history.append(entry)
        if best_score is None or score < best_score:
            best_step, best_score = step, score
            best_params = _copy_params(params)
        loss_sum, loss_count = 0.0, 0
        log.info("step %d epoch %d loss %s val %.3f", step, epoch, entry["mean_loss"], score)
        ck = make_checkpoint()
        last_good = ck
        if out_dir is not None:
            save_checkpoint(ck, snapshot_path(out_dir, step))

    limit = config.max_updates
    done = limit is not None and step >= limit
    while epoch < config.epochs and not done:
        if order is None or position >= len(order):
            order = rng.permutation(n_pos)
            position = 0
        while position < len(order):
            p = positives[order[position]]
            v = int(train_data.clip_video[p.clip])
            ns, nc = sample_negatives(v, train_data, config.n_negatives, rng)
            try:
                loss, grads = contrastive_loss(
                    clips[p.clip].frames, vectors[p.sentence], images[p.sentence],
                    [(vectors[j], images[j]) for j in ns], [clips[i].frames for i in nc],
                    alpha, params, "train", config.dropout, rng,
                    ids=(train_data.clips[p.clip].video_id, train_data.sentence_ids[p.sentence]))
                adam_step(params, grads, adam)
            except NonFiniteError as exc:
                raise TrainingDiverged(str(exc), last_good) from exc
            position += 1
            step += 1
            loss_sum += loss
            loss_count += 1
            if step % config.checkpoint_every == 0:
                snapshot()
            if limit is not None and step >= limit:
                done = True
                break
        if position >= len(order):
            epoch += 1
            order = None
            position = 0
    if best_params is None or history[-1]["step"] != step:
        snapshot()

    final = make_checkpoint()
    best = Checkpoint(params=best_params, adam=AdamState.fresh(best_params, config.lr),
                      alpha=alpha, step=best_step, seed=config.seed, rng_state=rng.get_state(),
                      fingerprint=fp, config=asdict(config), best_step=best_step,
                      best_score=best_score, log=history)
    if out_dir is not None:
        save_checkpoint(best, Path(out_dir) / "best.ntsr")
        save_checkpoint(final, Path(out_dir) / "final.ntsr")
    return TrainResult(best=best, final=final, log=history, initial=initial)
