"""Feeder feature extraction, PCA, k-means with elbow selection, representative picking."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .grid import CUSTOMER_CLASSES, Feeder
from .powerflow import DAY_TYPES, ProfileStore

log = logging.getLogger(__name__)

# fixed flattening order of the numeric feature vector
FEATURE_COLUMNS = (
    "voltage_level_kv",
    "peak_base_load_kw",
    "peak_ev_load_kw",
    "total_transformer_capacity_kva",
    "transformers_1ph", "transformers_2ph", "transformers_3ph",
    "lines_1ph", "lines_2ph", "lines_3ph",
    "load_residential_kw", "load_commercial_kw", "load_industrial_kw", "load_mixed_kw",
)


@dataclass(frozen=True)
class FeederFeatures:
    feeder_id: str
    voltage_level_kv: float
    peak_base_load_kw: float
    peak_ev_load_kw: float
    total_transformer_capacity_kva: float
    transformer_phase_counts: Mapping[int, int]
    line_phase_counts: Mapping[int, int]
    class_load_kw: Mapping[str, float]

    def vector(self) -> np.ndarray:
        return np.array([
            self.voltage_level_kv,
            self.peak_base_load_kw,
            self.peak_ev_load_kw,
            self.total_transformer_capacity_kva,
            *(self.transformer_phase_counts.get(k, 0) for k in (1, 2, 3)),
            *(self.line_phase_counts.get(k, 0) for k in (1, 2, 3)),
            *(self.class_load_kw.get(c, 0.0) for c in CUSTOMER_CLASSES),
        ], dtype=float)

    @classmethod
    def from_vector(cls, feeder_id: str, v: Sequence[float]) -> "FeederFeatures":
        v = [float(x) for x in v]
        return cls(feeder_id, v[0], v[1], v[2], v[3],
                   {1: int(v[4]), 2: int(v[5]), 3: int(v[6])},
                   {1: int(v[7]), 2: int(v[8]), 3: int(v[9])},
                   dict(zip(CUSTOMER_CLASSES, v[10:14])))


def extract_features(feeder: Feeder, profiles: ProfileStore,
                     ev_by_day: Mapping[str, np.ndarray] | None = None,
                     day_types: Sequence[str] = DAY_TYPES) -> FeederFeatures:
    """Feature vector of one feeder.

    ``ev_by_day`` maps day type to the feeder-total 24-hour unmanaged EV demand; the
    peaks are maxima over the representative days.
    """
    peak_base = 0.0
    for d in day_types:
        total = np.zeros(24)
        for ld in feeder.loads:
            total += profiles.multipliers(ld.profile_id, d) * ld.peak_kw
        peak_base = max(peak_base, float(total.max()))
    peak_ev = max((float(np.max(v)) for v in (ev_by_day or {}).values()), default=0.0)
    tx = {1: 0, 2: 0, 3: 0}
    for t in feeder.transformers:
        tx[t.phase_count] += 1
    ln = {1: 0, 2: 0, 3: 0}
    for line in feeder.lines:
        ln[len(line.phases)] += 1
    cls_kw = {c: 0.0 for c in CUSTOMER_CLASSES}
    for ld in feeder.loads:
        cls_kw[ld.customer_class] += ld.peak_kw
    return FeederFeatures(feeder.id, feeder.source.nominal_voltage_kv, peak_base, peak_ev,
                          float(sum(t.rating_kva for t in feeder.transformers)), tx, ln, cls_kw)


def write_features_csv(features: Sequence[FeederFeatures], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feeder_id", *FEATURE_COLUMNS])
        for f in features:
            w.writerow([f.feeder_id, *[repr(float(x)) for x in f.vector()]])


def read_features_csv(path) -> list[FeederFeatures]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("feeder_id", *FEATURE_COLUMNS) if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        return [FeederFeatures.from_vector(r["feeder_id"], [r[c] for c in FEATURE_COLUMNS]) for r in reader]


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    means: np.ndarray
    scales: np.ndarray
    kept: np.ndarray                 # boolean mask of features with nonzero variance
    components: np.ndarray           # (m, n_kept) orthonormal rows
    explained_variance_ratio: np.ndarray  # (m,)
    all_variance_ratio: np.ndarray   # every component, for reporting

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x[:, self.kept] - self.means) / self.scales

    def transform(self, x: np.ndarray) -> np.ndarray:
        return self.standardize(x) @ self.components.T

    def inverse_transform(self, y: np.ndarray) -> np.ndarray:
        """Back to standardized (kept-feature) space."""
        return np.atleast_2d(y) @ self.components

    @property
    def loadings(self) -> np.ndarray:
        """Components expressed over all input features, zeros for dropped ones."""
        full = np.zeros((self.n_components, self.kept.size))
        full[:, self.kept] = self.components
        return full


def fit_pca(vectors, variance_target: float = 0.95) -> PcaModel:
    """z-score, drop constant features, keep the fewest components reaching ``variance_target``."""
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PCA needs at least 2 samples")
    if not 0 < variance_target <= 1:
        raise ValueError("variance_target must lie in (0, 1]")
    means = x.mean(axis=0)
    scales = x.std(axis=0)
    kept = scales > 1e-12 * np.maximum(1.0, np.abs(means))
    if not kept.all():
        log.warning("dropping %d zero-variance feature(s): columns %s",
                    int((~kept).sum()), np.flatnonzero(~kept).tolist())
    if not kept.any():
        raise ValueError("every feature has zero variance")
    z = (x[:, kept] - means[kept]) / scales[kept]
    _, s, vt = np.linalg.svd(z, full_matrices=False)
    var = s ** 2
    ratio = var / var.sum()
    # sign convention: largest-magnitude loading positive, for reproducibility
    for i in range(vt.shape[0]):
        j = np.argmax(np.abs(vt[i]))
        if vt[i, j] < 0:
            vt[i] = -vt[i]
    cum = np.cumsum(ratio)
    m = min(int(np.searchsorted(cum, variance_target - 1e-12)) + 1, len(ratio))
    return PcaModel(means[kept], scales[kept], kept, vt[:m], ratio[:m], ratio)


# ---------------------------------------------------------------------------
# k-means


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray            # (k, d)
    labels: np.ndarray               # (n,)
    wcss: float
    seed: int
    feeder_ids: list[str] = field(default_factory=list)
    history: list[float] = field(default_factory=list)  # WCSS after each Lloyd step, best run

    @property
    def assignments(self) -> dict[str, int]:
        return dict(zip(self.feeder_ids, self.labels.tolist()))


def _wcss(x, centroids, labels) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


def _assign(x, centroids):
    d = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1), d


def _plus_plus(x, k, rng) -> np.ndarray:
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        j = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        idx.append(j)
        d2 = np.minimum(d2, ((x - x[j]) ** 2).sum(axis=1))
    return x[idx].copy()


def _lloyd(x, centroids, max_iter):
    labels, d = _assign(x, centroids)
    history = [_wcss(x, centroids, labels)]
    for _ in range(max_iter):
        new = centroids.copy()
        for j in range(len(centroids)):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                # empty cluster: re-seed at the point worst served by its centroid
                worst = int(np.argmax(d[np.arange(len(x)), labels]))
                new[j] = x[worst]
        centroids = new
        new_labels, d = _assign(x, centroids)
        history.append(_wcss(x, centroids, new_labels))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    # leave centroids as exact member means
    for j in range(len(centroids)):
        members = labels == j
        if members.any():
            centroids[j] = x[members].mean(axis=0)
    return centroids, labels, history


def kmeans(points, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300,
           feeder_ids: Sequence[str] | None = None) -> ClusterModel:
    """Best-of-``restarts`` Lloyd k-means from k-means++ seeds."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > x.shape[0]:
        raise ValueError(f"k = {k} exceeds the number of points ({x.shape[0]})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(restarts, 1)):
        c, labels, hist = _lloyd(x, _plus_plus(x, k, rng), max_iter)
        w = _wcss(x, c, labels)
        if best is None or w < best[0] - 1e-12 * max(1.0, w):
            best = (w, c, labels, hist)
    w, c, labels, hist = best
    ids = list(feeder_ids) if feeder_ids is not None else [str(i) for i in range(x.shape[0])]
    return ClusterModel(k, c, labels, w, seed, ids, hist)


@dataclass
class ElbowResult:
    k: int
    ks: list[int]
    wcss: list[float]
    curvature: dict[int, float]
    models: dict[int, ClusterModel]


def elbow_select(points, k_range: Sequence[int], seed: int = 0, restarts: int = 10,
                 feeder_ids: Sequence[str] | None = None) -> ElbowResult:
    """Pick k at the largest second difference of the WCSS curve.

    Ties go to the smaller k. The curve is forced non-increasing by carrying the best
    WCSS found so far forward, since restarts can leave a larger k slightly worse.
    """
    ks = list(k_range)
    if len(ks) < 3:
        raise ValueError("elbow selection needs at least 3 values of k")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_range must be strictly ascending")
    x = np.asarray(points, dtype=float)
    if ks[-1] > len(x):
        raise ValueError(f"k = {ks[-1]} exceeds the number of points ({len(x)})")
    models = {k: kmeans(x, k, seed, restarts, feeder_ids=feeder_ids) for k in ks}
    w = []
    for k in ks:
        w.append(min(models[k].wcss, w[-1]) if w else models[k].wcss)
    curv = {ks[i]: w[i - 1] - 2 * w[i] + w[i + 1] for i in range(1, len(ks) - 1)}
    top = max(curv.values())
    scale = max(abs(v) for v in w) or 1.0
    chosen = min(k for k, v in curv.items() if v >= top - 1e-12 * scale)
    return ElbowResult(chosen, ks, w, curv, models)


@dataclass(frozen=True)
class Representative:
    cluster: int
    feeder_id: str | None
    distance: float
    size: int


def select_representative(model: ClusterModel, points) -> list[Representative]:
    """Per cluster, the member nearest its centroid; ties to the smaller feeder id."""
    x = np.asarray(points, dtype=float)
    out = []
    for j in range(model.k):
        members = np.flatnonzero(model.labels == j)
        if members.size == 0:
            log.warning("cluster %d is empty; no representative", j)
            out.append(Representative(j, None, float("nan"), 0))
            continue
        dist = np.sqrt(((x[members] - model.centroids[j]) ** 2).sum(axis=1))
        best = min(zip(dist.tolist(), [model.feeder_ids[i] for i in members]), key=lambda t: (t[0], t[1]))
        out.append(Representative(j, best[1], best[0], int(members.size)))
    return out


@dataclass
class ClusterReport:
    features: list[FeederFeatures]
    pca: PcaModel
    reduced: np.ndarray
    elbow: ElbowResult
    model: ClusterModel
    representatives: list[Representative]

    def rows(self) -> list[tuple[str, int, float, bool]]:
        reps = {r.feeder_id for r in self.representatives}
        out = []
        for i, f in enumerate(self.features):
            j = int(self.model.labels[i])
            d = float(np.sqrt(((self.reduced[i] - self.model.centroids[j]) ** 2).sum()))
            out.append((f.feeder_id, j, d, f.feeder_id in reps))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feeder_id", "cluster", "distance_to_centroid", "is_representative"])
            for fid, j, d, rep in self.rows():
                w.writerow([fid, j, repr(d), str(rep).lower()])


def cluster_feeders(features: Sequence[FeederFeatures], k_range: Sequence[int], seed: int = 0,
                    variance_target: float = 0.95, restarts: int = 10) -> ClusterReport:
    """Standardize, reduce, choose k by elbow, and pick one representative per cluster."""
    if len(features) < 3:
        raise ValueError("clustering needs at least 3 feeders")
    ids = [f.feeder_id for f in features]
    x = np.stack([f.vector() for f in features])
    pca = fit_pca(x, variance_target)
    y = pca.transform(x)
    ks = [k for k in k_range if k <= len(features)]
    elbow = elbow_select(y, ks, seed, restarts, feeder_ids=ids)
    model = elbow.models[elbow.k]
    return ClusterReport(list(features), pca, y, elbow, model, select_representative(model, y))
