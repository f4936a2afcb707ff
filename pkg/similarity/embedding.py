import numpy as np

from core.exceptions import ZeroVector
from similarity.scores import ScoreKind, SimilarityResult, normalize


class HistogramEmbedder:
    """
    Toy frozen image encoder: a joint colour histogram of the masked pixels followed by the
    silhouette's centroid and second moments, all in image-normalised units.
    """
    name = 'histogram'

    def __init__(self, bins=4, moment_weight=1.0):
        self.bins = bins
        self.moment_weight = moment_weight

    def __call__(self, rgb, mask=None):
        rgb = np.asarray(rgb, dtype=np.float64)
        height, width = rgb.shape[:2]
        mask = np.ones((height, width), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        count = int(mask.sum())
        if count == 0:
            return np.zeros(self.bins ** 3 + 5)

        levels = np.minimum((rgb[mask] * self.bins).astype(np.int64), self.bins - 1)
        index = (levels[:, 0] * self.bins + levels[:, 1]) * self.bins + levels[:, 2]
        histogram = np.bincount(index, minlength=self.bins ** 3) / count

        rows, cols = np.nonzero(mask)
        x, y = cols / width, rows / height
        cx, cy = x.mean(), y.mean()
        moments = np.array([cx, cy, ((x - cx) ** 2).mean(), ((y - cy) ** 2).mean(), ((x - cx) * (y - cy)).mean()])
        return np.concatenate([histogram, self.moment_weight * moments])


EMBEDDERS = {HistogramEmbedder.name: HistogramEmbedder}


def make_embedder(name='histogram', **params):
    try:
        return EMBEDDERS[name](**params)
    except KeyError as exc:
        raise ValueError(f'Unknown embedder {name!r}.') from exc


def cosine(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise ZeroVector()
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


def embedding_similarity(demo, live, mask, embedder=None, demo_vector=None, live_vector=None, cap=1.0):
    """
    Cosine similarity between the embedding of the masked demo view and that of the live view.

    Either side may be supplied precomputed (``demo_vector``/``live_vector``), which is how an
    external encoder plugs in. Only the demo side is masked; the live view is embedded whole.
    """
    embedder = embedder or HistogramEmbedder()
    if demo_vector is None:
        demo_vector = embedder(demo.rgb, mask)
    if live_vector is None:
        live_vector = embedder(live.rgb)
    raw = cosine(demo_vector, live_vector)
    return SimilarityResult(raw, normalize(raw, ScoreKind.EMBEDDING, cap=cap), ScoreKind.EMBEDDING)
