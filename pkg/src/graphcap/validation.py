"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

from .bundle import VideoFeatures


def as_feature_list(X):
    """Coerce estimator input into a validated list of :class:`VideoFeatures`.

    Accepts a single VideoFeatures, a list of them, or a list of
    ``(video_id, appearance, motion, regions)`` tuples.
    """
    if isinstance(X, VideoFeatures):
        X = [X]
    videos = []
    for i, item in enumerate(X):
        if isinstance(item, VideoFeatures):
            item.validate()
            videos.append(item)
        elif isinstance(item, (tuple, list)) and len(item) == 4:
            videos.append(VideoFeatures(*item))
        else:
            raise ValueError(
                f"X[{i}] is not a VideoFeatures or (video_id, appearance, motion, regions) tuple"
            )
    if not videos:
        raise ValueError("X must hold at least one video")
    return videos


def as_caption_lists(y, num_videos):
    """Coerce targets into one list of caption strings per video."""
    if y is None:
        raise ValueError("captions are required to fit")
    y = list(y)
    if len(y) != num_videos:
        raise ValueError(f"got {len(y)} caption entries for {num_videos} videos")
    out = []
    for i, entry in enumerate(y):
        if isinstance(entry, str):
            entry = [entry]
        else:
            entry = list(entry)
            if not all(isinstance(c, str) for c in entry):
                raise ValueError(f"y[{i}] must be a string or a list of strings")
        if not entry:
            raise ValueError(f"y[{i}] holds no captions")
        out.append(entry)
    return out
