"""Feature-bundle and caption file I/O.

A bundle is a directory holding one JSON manifest plus one raw array file per
tensor.  Array files are little-endian float32, row-major, with no header, so
any feature extractor (or another language) can write them bit-exactly.
Captions live in a separate JSON-lines file with one ``{video_id, caption}``
record per line.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
DTYPE_TAG = "f32le"
_DTYPE = np.dtype("<f4")


class BundleError(Exception):
    """Raised when a bundle cannot be read or violates its manifest."""


@dataclass
class VideoFeatures:
    """Pre-extracted features for one video.

    appearance: [T, Da] frame-level appearance features
    motion:     [T, Dm] frame-level motion features
    regions:    [T, N, Dr] region-proposal features (N proposals per frame)
    """

    video_id: str
    appearance: np.ndarray
    motion: np.ndarray
    regions: np.ndarray

    def __post_init__(self):
        self.appearance = np.asarray(self.appearance, dtype=np.float32)
        self.motion = np.asarray(self.motion, dtype=np.float32)
        self.regions = np.asarray(self.regions, dtype=np.float32)
        self.validate()

    def validate(self):
        vid = self.video_id
        if self.appearance.ndim != 2:
            raise ValueError(f"{vid}: appearance must be [T, Da], got shape {self.appearance.shape}")
        if self.motion.ndim != 2:
            raise ValueError(f"{vid}: motion must be [T, Dm], got shape {self.motion.shape}")
        if self.regions.ndim != 3:
            raise ValueError(f"{vid}: regions must be [T, N, Dr], got shape {self.regions.shape}")
        t = self.appearance.shape[0]
        if t < 1:
            raise ValueError(f"{vid}: needs at least one frame")
        if self.motion.shape[0] != t or self.regions.shape[0] != t:
            raise ValueError(
                f"{vid}: frame counts disagree "
                f"(appearance {t}, motion {self.motion.shape[0]}, regions {self.regions.shape[0]})"
            )
        if self.regions.shape[1] < 1:
            raise ValueError(f"{vid}: needs at least one region per frame")
        for name in ("appearance", "motion", "regions"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{vid}: non-finite values in {name}")

    @property
    def num_frames(self):
        return self.appearance.shape[0]

    @property
    def regions_per_frame(self):
        return self.regions.shape[1]

    @property
    def dims(self):
        """(Da, Dm, Dr) feature dimensions."""
        return (self.appearance.shape[1], self.motion.shape[1], self.regions.shape[2])


def _safe_name(index, video_id):
    stem = re.sub(r"[^A-Za-z0-9_.-]", "_", video_id)[:80]
    return f"{index:05d}_{stem}"


def save_bundle(videos, out_dir, force=False):
    """Write a feature bundle (manifest + raw arrays) to ``out_dir``.

    Refuses to overwrite an existing manifest unless ``force`` is set.
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists() and not force:
        raise FileExistsError(f"{manifest_path} already exists (use force to overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for i, video in enumerate(videos):
        video.validate()
        base = _safe_name(i, video.video_id)
        files = {}
        for tensor_name in ("appearance", "motion", "regions"):
            fname = f"{base}.{tensor_name}.f32"
            arr = np.ascontiguousarray(getattr(video, tensor_name), dtype=_DTYPE)
            (out_dir / fname).write_bytes(arr.tobytes())
            files[tensor_name] = fname
        da, dm, dr = video.dims
        entries.append(
            {
                "video_id": video.video_id,
                "frames": int(video.num_frames),
                "regions_per_frame": int(video.regions_per_frame),
                "appearance_dim": int(da),
                "motion_dim": int(dm),
                "region_dim": int(dr),
                "files": files,
            }
        )

    manifest = {"format": "graphcap-bundle", "version": 1, "dtype": DTYPE_TAG, "videos": entries}
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def _read_array(path, shape, video_id, tensor_name):
    if not path.exists():
        raise BundleError(f"{video_id}: missing array file {path.name}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * _DTYPE.itemsize
    if len(raw) != expected:
        raise BundleError(
            f"{video_id}: {tensor_name} file {path.name} holds {len(raw)} bytes, "
            f"manifest declares shape {tuple(shape)} ({expected} bytes)"
        )
    arr = np.frombuffer(raw, dtype=_DTYPE).reshape(shape)
    if not np.isfinite(arr).all():
        raise BundleError(f"{video_id}: non-finite values in {tensor_name}")
    return arr.astype(np.float32)


def load_bundle(path):
    """Load every video declared in a bundle manifest.

    Returns a list of :class:`VideoFeatures` in manifest order.  An empty
    manifest yields an empty list.  Any missing file, shape mismatch or
    non-finite value raises :class:`BundleError` naming the offending video.
    """
    bundle_dir = Path(path)
    manifest_path = bundle_dir / MANIFEST_NAME
    if bundle_dir.is_file():
        manifest_path, bundle_dir = bundle_dir, bundle_dir.parent
    if not manifest_path.exists():
        raise BundleError(f"no manifest found at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc

    if manifest.get("dtype") != DTYPE_TAG:
        raise BundleError(f"unsupported dtype tag {manifest.get('dtype')!r} (expected {DTYPE_TAG!r})")

    videos = []
    for entry in manifest.get("videos", []):
        vid = entry.get("video_id", "<unnamed>")
        try:
            t = int(entry["frames"])
            n = int(entry["regions_per_frame"])
            shapes = {
                "appearance": (t, int(entry["appearance_dim"])),
                "motion": (t, int(entry["motion_dim"])),
                "regions": (t, n, int(entry["region_dim"])),
            }
            files = entry["files"]
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleError(f"{vid}: malformed manifest entry ({exc})") from exc
        arrays = {
            name: _read_array(bundle_dir / files[name], shape, vid, name)
            for name, shape in shapes.items()
        }
        try:
            videos.append(VideoFeatures(video_id=vid, **arrays))
        except ValueError as exc:
            raise BundleError(str(exc)) from exc
    return videos


def save_captions(records, path):
    """Write caption records as JSON lines: one ``{video_id, caption}`` per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for video_id, caption in records:
            fh.write(json.dumps({"video_id": video_id, "caption": caption}) + "\n")
    return path


def load_captions(path):
    """Read caption records written by :func:`save_captions`.

    Returns a list of ``(video_id, caption)`` tuples in file order.
    """
    path = Path(path)
    if not path.exists():
        raise BundleError(f"no captions file at {path}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append((obj["video_id"], obj["caption"]))
        except (json.JSONDecodeError, KeyError) as exc:
            raise BundleError(f"{path}:{lineno}: bad caption record ({exc})") from exc
    return records


def captions_by_video(records):
    """Group caption records into an ordered ``{video_id: [captions]}`` map."""
    grouped = {}
    for video_id, caption in records:
        grouped.setdefault(video_id, []).append(caption)
    return grouped
