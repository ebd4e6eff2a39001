"""Feature ingestion: FVEC blobs, the JSON dataset manifest, clip windowing and
positive-pair assignment."""

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError, LoadError, ManifestError, ShapeError

FVEC_MAGIC = b"FVEC"
FVEC_HEADER = struct.Struct("<4sIII")
SPLITS = ("train", "validation", "test")


def write_blob(path, values) -> None:
    """Write a (count, dim) array as an FVEC blob of little-endian float32."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"FVEC blobs hold 2-D arrays, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise LoadError(f"refusing to write non-finite values to {path}")
    count, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(FVEC_HEADER.pack(FVEC_MAGIC, count, dim, 0))
        fh.write(arr.astype("<f4").tobytes())


def load_blob(path) -> np.ndarray:
    """Read an FVEC blob; returns a float64 array of shape (count, dim)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read feature blob {path}: {exc}") from exc
    if len(data) < FVEC_HEADER.size:
        raise LoadError(f"{path}: truncated header ({len(data)} bytes, offset 0)")
    magic, count, dim, _reserved = FVEC_HEADER.unpack_from(data, 0)
    if magic != FVEC_MAGIC:
        raise LoadError(f"{path}: bad magic {magic!r} at byte offset 0")
    expected = FVEC_HEADER.size + 4 * count * dim
    if len(data) < expected:
        raise LoadError(
            f"{path}: truncated at byte offset {len(data)}, header promises "
            f"{count}x{dim} values ending at {expected}")
    if len(data) > expected:
        raise LoadError(f"{path}: {len(data) - expected} trailing bytes after offset {expected}")
    vals = np.frombuffer(data, dtype="<f4", count=count * dim,
                         offset=FVEC_HEADER.size).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise LoadError(
            f"{path}: non-finite value at byte offset {FVEC_HEADER.size + 4 * int(bad[0])}")
    return vals.reshape(count, dim)


@dataclass
class Clip:
    video_id: str
    frames: np.ndarray  # (M, d_v)
    start: int = 0


def window_clips(frames, window: int, stride: int = 1, video_id: str = "") -> list:
    """Cut a sliding window over the frame sequence.

    A video shorter than ``window`` yields a single clip holding all its frames.
    """
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be >= 1 (got {window}, {stride})")
    frames = np.asarray(frames, dtype=np.float64)
    m = len(frames)
    if m == 0:
        raise DatasetError(f"video {video_id!r} has no frames")
    if m < window:
        return [Clip(video_id, frames, 0)]
    return [Clip(video_id, frames[j:j + window], j)
            for j in range(0, m - window + 1, stride)]


@dataclass
class VideoEntry:
    video_id: str
    frame_feature_path: str
    split: str


@dataclass
class SentenceEntry:
    sentence_id: str
    video_id: str
    tokens: list
    web_image_feature_path: str | None = None
    precomputed_sentence_vector_path: str | None = None


@dataclass
class Manifest:
    root: Path
    d_v: int
    d_c: int
    videos: list
    sentences: list
    sentence_encoder: str | None = None

    def resolve(self, rel) -> Path:
        return self.root / rel

    def videos_in(self, split: str) -> list:
        return sorted((v for v in self.videos if v.split == split),
                      key=lambda v: v.video_id)

    def sentences_of(self, video_ids) -> list:
        wanted = set(video_ids)
        return sorted((s for s in self.sentences if s.video_id in wanted),
                      key=lambda s: s.sentence_id)

    def to_json(self) -> dict:
        out = {"d_v": self.d_v, "d_c": self.d_c}
        if self.sentence_encoder:
            out["sentence_encoder"] = self.sentence_encoder
        out["videos"] = [dict(video_id=v.video_id, frame_feature_path=v.frame_feature_path,
                              split=v.split) for v in self.videos]
        out["sentences"] = []
        for s in self.sentences:
            rec = dict(sentence_id=s.sentence_id, video_id=s.video_id, tokens=list(s.tokens),
                       web_image_feature_path=s.web_image_feature_path)
            if s.precomputed_sentence_vector_path:
                rec["precomputed_sentence_vector_path"] = s.precomputed_sentence_vector_path
            out["sentences"].append(rec)
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")


def load_manifest(path, check_blobs: bool = True) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    try:
        videos = [VideoEntry(str(v["video_id"]), v["frame_feature_path"], v["split"])
                  for v in raw["videos"]]
        sentences = [SentenceEntry(str(s["sentence_id"]), str(s["video_id"]), list(s["tokens"]),
                                   s.get("web_image_feature_path"),
                                   s.get("precomputed_sentence_vector_path"))
                     for s in raw["sentences"]]
        m = Manifest(path.parent, int(raw["d_v"]), int(raw["d_c"]), videos, sentences,
                     raw.get("sentence_encoder"))
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: missing or malformed field {exc}") from exc
    validate_manifest(m, check_blobs=check_blobs)
    return m


def _blob_shape(path) -> tuple:
    with open(path, "rb") as fh:
        head = fh.read(FVEC_HEADER.size)
    if len(head) < FVEC_HEADER.size or head[:4] != FVEC_MAGIC:
        raise LoadError(f"{path}: not an FVEC blob")
    _, count, dim, _ = FVEC_HEADER.unpack(head)
    return count, dim


def validate_manifest(m: Manifest, check_blobs: bool = True) -> None:
    ids = [v.video_id for v in m.videos]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate video_id in manifest (splits must be disjoint)")
    for v in m.videos:
        if v.split not in SPLITS:
            raise ManifestError(f"video {v.video_id}: unknown split {v.split!r}")
    sids = [s.sentence_id for s in m.sentences]
    if len(set(sids)) != len(sids):
        raise ManifestError("duplicate sentence_id in manifest")
    known = set(ids)
    per_video = {vid: 0 for vid in ids}
    for s in m.sentences:
        if s.video_id not in known:
            raise ManifestError(f"sentence {s.sentence_id} references unknown video {s.video_id}")
        if not s.tokens:
            raise ManifestError(f"sentence {s.sentence_id} has no tokens")
        per_video[s.video_id] += 1
    empty = [vid for vid, n in per_video.items() if n == 0]
    if empty:
        raise ManifestError(f"videos without sentences: {', '.join(sorted(empty))}")
    if not check_blobs:
        return
    for v in m.videos:
        count, dim = _blob_shape(m.resolve(v.frame_feature_path))
        if dim != m.d_v:
            raise ManifestError(f"video {v.video_id}: frame dim {dim} != d_v {m.d_v}")
        if count == 0:
            raise ManifestError(f"video {v.video_id}: no frames")
    for s in m.sentences:
        if s.web_image_feature_path:
            count, dim = _blob_shape(m.resolve(s.web_image_feature_path))
            if count and dim != m.d_v:
                raise ManifestError(
                    f"sentence {s.sentence_id}: web-image dim {dim} != d_v {m.d_v}")
        if s.precomputed_sentence_vector_path:
            count, dim = _blob_shape(m.resolve(s.precomputed_sentence_vector_path))
            if count != 1 or dim != m.d_c:
                raise ManifestError(
                    f"sentence {s.sentence_id}: sentence vector blob is {count}x{dim}, "
                    f"expected 1x{m.d_c}")


@dataclass
class PositivePair:
    clip: int
    sentence: int


def assign_ground_truth(clip_video: list, sentence_video: list, sentence_ids: list,
                        cap: int = 5) -> list:
    """Pair every clip with up to ``cap`` sentences of its source video.

    ``clip_video[i]`` / ``sentence_video[j]`` give source video ids; sentences
    are chosen by ascending sentence id so the selection is deterministic.
    """
    if cap < 1:
        raise ValueError(f"ground-truth cap must be >= 1, got {cap}")
    pool = {}
    for j in sorted(range(len(sentence_ids)), key=lambda j: sentence_ids[j]):
        pool.setdefault(sentence_video[j], []).append(j)
    pairs = []
    for i, vid in enumerate(clip_video):
        chosen = pool.get(vid, [])[:cap]
        if not chosen:
            raise ManifestError(f"video {vid} has no sentences to pair with")
        pairs.extend(PositivePair(i, j) for j in chosen)
    return pairs


@dataclass
class SplitData:
    """All features of one split, resolved into arrays and index lists."""

    split: str
    video_ids: list
    clips: list
    clip_video: np.ndarray        # clip -> video index
    sentence_ids: list
    sentence_tokens: list
    sentence_video: np.ndarray    # sentence -> video index
    sentence_vectors: np.ndarray  # (S, d_c)
    web_images: list              # per sentence, (K, d_v)
    video_frames: list            # per video, (M, d_v)
    positives: list = field(default_factory=list)

    def clips_of(self, v: int) -> list:
        return [i for i, cv in enumerate(self.clip_video) if cv == v]

    def sentences_of(self, v: int) -> list:
        return [j for j, sv in enumerate(self.sentence_video) if sv == v]


def load_split(m: Manifest, split: str, window: int = 5, stride: int = 1, cap: int = 5,
               encoder=None) -> SplitData:
    """Load every feature belonging to ``split``.

    ``encoder`` is a callable tokens -> s_Y used for sentences that carry no
    precomputed vector; when omitted the manifest's ``sentence_encoder`` file
    is loaded on demand.
    """
    videos = m.videos_in(split)
    if not videos:
        raise DatasetError(f"split {split!r} is empty")
    vindex = {v.video_id: i for i, v in enumerate(videos)}
    frames, clips, clip_video = [], [], []
    for v in videos:
        fr = load_blob(m.resolve(v.frame_feature_path))
        frames.append(fr)
        for c in window_clips(fr, window, stride, v.video_id):
            clips.append(c)
            clip_video.append(vindex[v.video_id])
    sents = m.sentences_of(vindex)
    vectors, images = [], []
    for s in sents:
        if s.precomputed_sentence_vector_path:
            vec = load_blob(m.resolve(s.precomputed_sentence_vector_path))[0]
        else:
            if encoder is None:
                encoder = manifest_encoder(m)
            vec = np.asarray(encoder(s.tokens), dtype=np.float64)
        if vec.shape != (m.d_c,):
            raise ShapeError(f"sentence {s.sentence_id}: vector dim {vec.shape} != d_c {m.d_c}")
        vectors.append(vec)
        if s.web_image_feature_path:
            images.append(load_blob(m.resolve(s.web_image_feature_path)).reshape(-1, m.d_v))
        else:
            images.append(np.zeros((0, m.d_v)))
    data = SplitData(
        split=split,
        video_ids=[v.video_id for v in videos],
        clips=clips,
        clip_video=np.asarray(clip_video, dtype=np.int64),
        sentence_ids=[s.sentence_id for s in sents],
        sentence_tokens=[list(s.tokens) for s in sents],
        sentence_video=np.asarray([vindex[s.video_id] for s in sents], dtype=np.int64),
        sentence_vectors=np.stack(vectors),
        web_images=images,
        video_frames=frames,
    )
    data.positives = assign_ground_truth(
        list(data.clip_video), list(data.sentence_video), data.sentence_ids, cap)
    return data


def manifest_encoder(m: Manifest):
    from .sentence import load_encoder

    if not m.sentence_encoder:
        raise ManifestError(
            "sentence lacks precomputed_sentence_vector_path and the manifest names "
            "no sentence_encoder")
    enc = load_encoder(m.resolve(m.sentence_encoder))
    if enc.d_c != m.d_c:
        raise ManifestError(f"sentence encoder produces d_c={enc.d_c}, manifest says {m.d_c}")
    return enc


def relpath(path, start) -> str:
    return os.path.relpath(path, start).replace(os.sep, "/")
