"""Synthetic datasets with learnable video/sentence structure.

Every video gets a distinct (subject, verb, object) triple.  Its frame
features are a fixed random projection of the triple's latent code plus
noise; its sentences are templated from the triple; each sentence's web
images are projections of the same code with their own noise.  Sentence
vectors come from a randomly initialised frozen combine-skip encoder.
"""

import itertools
from pathlib import Path

import numpy as np

from .features import Manifest, SentenceEntry, VideoEntry, write_blob
from .numeric import Rng
from .sentence import SentenceEncoder

SUBJECTS = ["man", "woman", "boy", "girl", "baby", "dog", "cat", "chef"]
VERBS = ["playing", "riding", "cutting", "eating", "slicing", "holding", "washing", "throwing"]
OBJECTS = ["guitar", "horse", "potato", "piano", "onion", "bicycle", "ball", "keyboard"]
TEMPLATES = [
    ["a", "{s}", "is", "{v}", "a", "{o}"],
    ["the", "{s}", "is", "{v}", "the", "{o}"],
    ["a", "{s}", "{v}", "a", "{o}"],
    ["someone", "is", "{v}", "a", "{o}", "with", "a", "{s}"],
    ["a", "{s}", "is", "{v}", "a", "{o}", "outside"],
]
LATENT = 12


def _sentence(triple, template):
    s, v, o = triple
    return [w.format(s=s, v=v, o=o) for w in template]


def synth_dataset(out_dir, n_videos=20, frames_per_video=5, sentences_per_video=1,
                  d_v=32, d_c=48, n_images=2, seed=0, val_videos=4, test_videos=4,
                  frame_noise=0.3, image_noise=0.3, d_w=16, precompute=True) -> Path:
    """Write a manifest, FVEC blobs and the frozen sentence encoder under ``out_dir``.

    ``n_videos`` go to the train split; ``val_videos`` and ``test_videos``
    more are generated for the other splits.  Returns the manifest path.
    """
    out = Path(out_dir)
    for sub in ("frames", "images", "sentvec"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = Rng(seed)
    total = n_videos + val_videos + test_videos
    triples = list(itertools.product(SUBJECTS, VERBS, OBJECTS))
    if total > len(triples):
        raise ValueError(f"at most {len(triples)} distinct synthetic videos")
    picks = rng.choice_without_replacement(len(triples), total)
    word_code = {w: rng.normal(LATENT) for w in SUBJECTS + VERBS + OBJECTS}
    proj_frames = rng.normal((d_v, LATENT), 1.0 / np.sqrt(LATENT))
    proj_images = rng.normal((d_v, LATENT), 1.0 / np.sqrt(LATENT))
    vocab = sorted({w for t in TEMPLATES for w in t if "{" not in w}
                   | set(SUBJECTS) | set(VERBS) | set(OBJECTS))
    d_a = d_c // 2
    encoder = SentenceEncoder.random(rng, vocab, d_w, d_a, d_c - d_a)
    encoder.save(out / "encoder.ntsr")

    videos, sentences = [], []
    for k in range(total):
        split = "train" if k < n_videos else "validation" if k < n_videos + val_videos else "test"
        vid = f"vid{k:04d}"
        triple = triples[int(picks[k])]
        code = sum(word_code[w] for w in triple) / np.sqrt(3.0)
        frames = code @ proj_frames.T + frame_noise * rng.normal((frames_per_video, d_v))
        write_blob(out / "frames" / f"{vid}.fvec", frames)
        videos.append(VideoEntry(vid, f"frames/{vid}.fvec", split))
        for j in range(sentences_per_video):
            sid = f"{vid}_s{j:02d}"
            tokens = _sentence(triple, TEMPLATES[(j + k) % len(TEMPLATES)])
            img_path = None
            if n_images > 0:
                imgs = code @ proj_images.T + image_noise * rng.normal((n_images, d_v))
                write_blob(out / "images" / f"{sid}.fvec", imgs)
                img_path = f"images/{sid}.fvec"
            vec_path = None
            if precompute:
                write_blob(out / "sentvec" / f"{sid}.fvec", encoder(tokens)[None, :])
                vec_path = f"sentvec/{sid}.fvec"
            sentences.append(SentenceEntry(sid, vid, tokens, img_path, vec_path))
    manifest = Manifest(out, d_v, d_c, videos, sentences, "encoder.ntsr")
    path = out / "manifest.json"
    manifest.save(path)
    return path
