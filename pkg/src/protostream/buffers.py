"""Memory-bounded per-class prototype stores for rehearsal.

Every class gets its own buffer of capacity b. While a buffer is below
capacity an incoming sample is copied in verbatim with count 1 (CluStream
instead stages raw points until it can initialize its micro-clusters).
Once full, each strategy decides how to compress:

* exstream        merge the two closest prototypes count-weighted, then
                  store the new point in the freed slot
* online_kmeans   fold the new point into its nearest prototype's running
                  mean and bump that prototype's count
* clustream       micro-clusters (n, linear/squared sums, timestamp sums)
                  with an absorb boundary, horizon-based eviction and
                  closest-pair merging
* hpstream        exponentially faded projected clusters with per-cluster
                  dimension bit vectors
* reservoir       classic reservoir sampling (replace with prob b/M)
* queue           FIFO of the last b samples
* full            unbounded; stores everything

Distance ties always resolve to the lowest slot index. Micro-cluster
strategies cost 2 memory units per cluster, everything else 1 per stored
vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from collections import deque

import numpy as np

from .errors import UsageError

STRATEGIES = ("exstream", "online_kmeans", "clustream", "hpstream", "reservoir", "queue", "full")
BOUNDED_STRATEGIES = tuple(s for s in STRATEGIES if s != "full")


@dataclass(frozen=True)
class CluStreamParams:
    """CluStream knobs: eviction horizon, RMS boundary factor, and the
    staged-point multiple (init runs after init_multiplier * b points)."""

    horizon: float = 1000.0
    boundary_factor: float = 2.0
    init_multiplier: int = 2

    def __post_init__(self):
        if self.horizon <= 0 or self.boundary_factor <= 0 or self.init_multiplier < 1:
            raise UsageError("invalid clustream parameters")


@dataclass(frozen=True)
class HPStreamParams:
    """HPStream knobs: decay rate (base-2 exponent per unit time), spread
    radius factor, samples per unit time, and projected dimension count
    (None means half the feature dimension, at least 1)."""

    decay_rate: float = 0.5
    spread_radius_factor: float = 2.0
    speed: float = 200.0
    projected_dims: int | None = None

    def __post_init__(self):
        if self.decay_rate < 0 or self.spread_radius_factor <= 0 or self.speed <= 0:
            raise UsageError("invalid hpstream parameters")
        if self.projected_dims is not None and self.projected_dims < 1:
            raise UsageError("projected_dims must be at least 1")


class ExStreamBuffer:
    """Bounded store that merges the two closest prototypes on overflow.

    The merge is count-weighted, (c_i w_i + c_j w_j) / (c_i + c_j) with
    c_i <- c_i + c_j, and the incoming point takes the freed slot with
    count 1. Total count therefore always equals the number of inserts.
    """

    def __init__(self, capacity: int):
        if capacity < 2:
            raise UsageError("exstream needs capacity >= 2 to merge a closest pair")
        self.capacity = capacity
        self.size = 0
        self._vecs: np.ndarray | None = None
        self._counts: np.ndarray | None = None
        self._triu = None

    def insert(self, x, t=None):
        if self._vecs is None:
            self._vecs = np.zeros((self.capacity, x.shape[0]))
            self._counts = np.zeros(self.capacity, dtype=np.int64)
        if self.size < self.capacity:
            self._vecs[self.size] = x
            self._counts[self.size] = 1
            self.size += 1
            return
        v = self._vecs
        sq = np.einsum("ij,ij->i", v, v)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (v @ v.T)
        if self._triu is None:
            self._triu = np.triu_indices(self.capacity, 1)
        iu, ju = self._triu
        k = int(np.argmin(d2[iu, ju]))  # first minimum = lexicographically lowest (i, j)
        i, j = int(iu[k]), int(ju[k])
        ci, cj = self._counts[i], self._counts[j]
        v[i] = (ci * v[i] + cj * v[j]) / (ci + cj)
        self._counts[i] = ci + cj
        v[j] = x
        self._counts[j] = 1

    def vectors(self):
        if self._vecs is None:
            return np.zeros((0, 0))
        return self._vecs[: self.size]

    def counts(self):
        if self._counts is None:
            return np.zeros(0, dtype=np.int64)
        return self._counts[: self.size]

    def memory_units(self):
        return self.size


class OnlineKMeansBuffer:
    """Bounded store of running means; the nearest prototype absorbs each
    new point, w_i <- (c_i w_i + x) / (c_i + 1)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise UsageError("capacity must be at least 1")
        self.capacity = capacity
        self.size = 0
        self._vecs: np.ndarray | None = None
        self._counts: np.ndarray | None = None

    def insert(self, x, t=None):
        if self._vecs is None:
            self._vecs = np.zeros((self.capacity, x.shape[0]))
            self._counts = np.zeros(self.capacity, dtype=np.int64)
        if self.size < self.capacity:
            self._vecs[self.size] = x
            self._counts[self.size] = 1
            self.size += 1
            return
        v = self._vecs[: self.size]
        d2 = ((v - x) ** 2).sum(axis=1)
        i = int(np.argmin(d2))
        c = self._counts[i]
        self._vecs[i] = (c * self._vecs[i] + x) / (c + 1)
        self._counts[i] = c + 1

    def vectors(self):
        if self._vecs is None:
            return np.zeros((0, 0))
        return self._vecs[: self.size]

    def counts(self):
        if self._counts is None:
            return np.zeros(0, dtype=np.int64)
        return self._counts[: self.size]

    def memory_units(self):
        return self.size


@dataclass
class MicroCluster:
    """CluStream cluster feature vector: count, linear and squared sums,
    and first/second timestamp moments."""

    n: int
    linear_sum: np.ndarray
    squared_sum: np.ndarray
    timestamp_sum: float
    timestamp_sq_sum: float

    @classmethod
    def from_point(cls, x, t):
        return cls(1, x.copy(), x * x, float(t), float(t) ** 2)

    def centroid(self):
        return self.linear_sum / self.n

    def absorb(self, x, t):
        self.n += 1
        self.linear_sum += x
        self.squared_sum += x * x
        self.timestamp_sum += t
        self.timestamp_sq_sum += t * t

    def merge(self, other: "MicroCluster"):
        self.n += other.n
        self.linear_sum += other.linear_sum
        self.squared_sum += other.squared_sum
        self.timestamp_sum += other.timestamp_sum
        self.timestamp_sq_sum += other.timestamp_sq_sum

    def rms_radius(self):
        # root of the summed per-dimension variance, clamped at zero
        var = self.squared_sum / self.n - (self.linear_sum / self.n) ** 2
        return float(np.sqrt(np.maximum(var, 0.0).sum()))

    def relevance_stamp(self, factor):
        mean = self.timestamp_sum / self.n
        var = max(self.timestamp_sq_sum / self.n - mean * mean, 0.0)
        return mean + factor * np.sqrt(var)


class CluStreamBuffer:
    """Micro-cluster store seeded by k-means over a staging pool.

    Raw points are staged until init_multiplier * b arrive, then Lloyd's
    algorithm (seeded k-means++ start) builds exactly b micro-clusters.
    A new point joins its nearest cluster when within boundary_factor
    times the cluster RMS deviation (singletons use the distance to the
    nearest other centroid); otherwise it opens a new cluster and the
    structure sheds one cluster, either by evicting a cluster whose
    relevance stamp fell out of the horizon or by merging the closest pair.
    """

    def __init__(self, capacity: int, params: CluStreamParams, rng: np.random.Generator):
        if capacity < 1:
            raise UsageError("capacity must be at least 1")
        self.capacity = capacity
        self.params = params
        self.rng = rng
        self.staging: list[tuple[np.ndarray, float]] = []
        self.clusters: list[MicroCluster] | None = None

    @property
    def initialized(self):
        return self.clusters is not None

    def insert(self, x, t):
        if self.clusters is None:
            self.staging.append((x.copy(), float(t)))
            if len(self.staging) >= self.params.init_multiplier * self.capacity:
                self._initialize()
            return
        self._stream_insert(x, float(t))

    def _initialize(self):
        points = np.stack([p for p, _ in self.staging])
        times = np.array([t for _, t in self.staging])
        labels = kmeans_lloyd(points, self.capacity, self.rng)[1]
        clusters = []
        for j in range(self.capacity):
            members = np.flatnonzero(labels == j)
            pts = points[members]
            clusters.append(MicroCluster(
                n=len(members),
                linear_sum=pts.sum(axis=0),
                squared_sum=(pts * pts).sum(axis=0),
                timestamp_sum=float(times[members].sum()),
                timestamp_sq_sum=float((times[members] ** 2).sum()),
            ))
        self.clusters = clusters
        self.staging = []

    def _stream_insert(self, x, t):
        clusters = self.clusters
        cents = np.stack([c.centroid() for c in clusters])
        d2 = ((cents - x) ** 2).sum(axis=1)
        near = int(np.argmin(d2))
        dist = float(np.sqrt(d2[near]))
        if clusters[near].n >= 2:
            boundary = self.params.boundary_factor * clusters[near].rms_radius()
        elif len(clusters) > 1:
            others = ((cents - cents[near]) ** 2).sum(axis=1)
            others[near] = np.inf
            boundary = float(np.sqrt(others.min()))
        else:
            boundary = np.inf
        if dist <= boundary:
            clusters[near].absorb(x, t)
            return
        clusters.append(MicroCluster.from_point(x, t))
        threshold = t - self.params.horizon
        stamps = [c.relevance_stamp(self.params.boundary_factor) for c in clusters[:-1]]
        stale = [i for i, s in enumerate(stamps) if s < threshold]
        if stale:
            victim = min(stale, key=lambda i: (stamps[i], i))
            del clusters[victim]
            return
        # merge the closest pair (the fresh singleton is a candidate too)
        cents = np.stack([c.centroid() for c in clusters])
        sq = np.einsum("ij,ij->i", cents, cents)
        pair_d2 = sq[:, None] + sq[None, :] - 2.0 * (cents @ cents.T)
        iu, ju = np.triu_indices(len(clusters), 1)
        k = int(np.argmin(pair_d2[iu, ju]))
        i, j = int(iu[k]), int(ju[k])
        clusters[i].merge(clusters[j])
        del clusters[j]

    def vectors(self):
        if self.clusters is None:
            if not self.staging:
                return np.zeros((0, 0))
            return np.stack([p for p, _ in self.staging])
        return np.stack([c.centroid() for c in self.clusters])

    def memory_units(self):
        if self.clusters is None:
            return len(self.staging)
        return 2 * len(self.clusters)

    @property
    def size(self):
        return len(self.staging) if self.clusters is None else len(self.clusters)


def kmeans_lloyd(points, k, rng, max_iter: int = 100, tol: float = 1e-6):
    """Plain Lloyd's k-means with seeded k-means++ initialization.

    Runs at most max_iter sweeps or until the largest centroid shift drops
    below tol. Empty clusters are re-seeded from the point farthest from
    its assigned centroid. Returns (centroids, labels).
    """
    points = np.asarray(points, dtype=np.float64)
    m = len(points)
    if k < 1 or m < k:
        raise UsageError(f"k-means needs at least k={k} points, got {m}")
    centers = _kmeans_pp(points, k, rng)
    labels = _assign(points, centers)
    for _ in range(max_iter):
        new_centers = centers.copy()
        taken = set()
        for j in range(k):
            members = np.flatnonzero(labels == j)
            if len(members):
                new_centers[j] = points[members].mean(axis=0)
        # re-seed empties from the farthest point, one point per empty cluster
        for j in range(k):
            if not np.flatnonzero(labels == j).size:
                dists = ((points - new_centers[labels]) ** 2).sum(axis=1)
                for idx in taken:
                    dists[idx] = -np.inf
                far = int(np.argmax(dists))
                taken.add(far)
                new_centers[j] = points[far]
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        labels = _assign(points, centers)
        if shift < tol:
            break
    # pathological duplicate data can still leave a cluster empty; steal
    # one point per empty cluster from the largest cluster so every
    # cluster is non-empty
    for j in range(k):
        if not (labels == j).any():
            counts = np.bincount(labels, minlength=k)
            donor = int(np.argmax(counts))
            steal = int(np.flatnonzero(labels == donor)[-1])
            labels[steal] = j
            centers[j] = points[steal]
    return centers, labels


def _assign(points, centers):
    sq = np.einsum("ij,ij->i", centers, centers)
    d2 = sq[None, :] - 2.0 * (points @ centers.T)
    return np.argmin(d2, axis=1)


def _kmeans_pp(points, k, rng):
    m = len(points)
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(m))
    centers[0] = points[first]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            idx = int(rng.choice(m, p=probs))
        else:
            idx = int(rng.integers(m))
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


@dataclass
class FadedCluster:
    """HPStream cluster: exponentially faded weight and sums, the last
    absorb time (drives replacement), an internal last-fade time, and the
    current projected-dimension bit vector."""

    weight: float
    linear_sum: np.ndarray
    squared_sum: np.ndarray
    last_update: float
    last_fade: float
    bits: np.ndarray | None = None

    @classmethod
    def from_point(cls, x, t):
        return cls(1.0, x.copy(), x * x, float(t), float(t))

    def fade_to(self, t, decay_rate):
        gap = t - self.last_fade
        if gap > 0 and decay_rate > 0:
            f = 2.0 ** (-decay_rate * gap)
            self.weight *= f
            self.linear_sum *= f
            self.squared_sum *= f
        self.last_fade = t

    def centroid(self):
        return self.linear_sum / self.weight

    def radii(self):
        if self.weight <= 1.0:
            return np.zeros_like(self.linear_sum)
        mean = self.linear_sum / self.weight
        var = self.squared_sum / self.weight - mean * mean
        return np.sqrt(np.maximum(var, 0.0))

    def absorb(self, x, t):
        self.weight += 1.0
        self.linear_sum += x
        self.squared_sum += x * x
        self.last_update = t


def assign_projected_dims(radii: np.ndarray, dims_per_cluster: int) -> np.ndarray:
    """Pick the k*l globally smallest-radius (cluster, dim) pairs.

    Ties resolve lexicographically by (cluster index, dimension index).
    Any cluster left without a bit afterwards gets its single
    smallest-radius dimension set, so every row has at least one bit.
    """
    radii = np.asarray(radii, dtype=np.float64)
    k, d = radii.shape
    if not 1 <= dims_per_cluster <= d:
        raise UsageError(f"projected_dims must be in [1, {d}], got {dims_per_cluster}")
    budget = min(k * dims_per_cluster, k * d)
    rows = np.repeat(np.arange(k), d)
    cols = np.tile(np.arange(d), k)
    order = np.lexsort((cols, rows, radii.ravel()))
    bits = np.zeros((k, d), dtype=bool)
    chosen = order[:budget]
    bits[rows[chosen], cols[chosen]] = True
    for i in range(k):
        if not bits[i].any():
            bits[i, int(np.argmin(radii[i]))] = True
    return bits


class HPStreamBuffer:
    """Projected faded-cluster store.

    On every insert into a full buffer the clusters fade by
    2^(-decay_rate * gap), bit vectors are recomputed from per-dimension
    radii (weight <= 1 means radius 0 everywhere), and the point joins the
    cluster with the smallest normalized projected distance if that
    distance is within spread_radius_factor times the cluster's mean
    per-set-bit radius; otherwise it replaces the least recently updated
    cluster. Stream time is the sample index divided by speed.

    Cluster statistics live in stacked arrays so the whole update is a
    handful of vectorized operations; the per-cluster arithmetic is the
    same as FadedCluster's, which stays the reference implementation.
    """

    def __init__(self, capacity: int, params: HPStreamParams, dim: int):
        if capacity < 1:
            raise UsageError("capacity must be at least 1")
        self.capacity = capacity
        self.params = params
        self.dims = params.projected_dims if params.projected_dims is not None else max(1, dim // 2)
        if self.dims > dim:
            raise UsageError(f"projected_dims {self.dims} exceeds feature dimension {dim}")
        self._n = 0
        self._weight = np.zeros(capacity)
        self._linear = np.zeros((capacity, dim))
        self._squared = np.zeros((capacity, dim))
        self._last_update = np.zeros(capacity)
        self._last_fade = np.zeros(capacity)
        self._bits = np.zeros((capacity, dim), dtype=bool)

    def insert(self, x, t_sample):
        t = float(t_sample) / self.params.speed
        if self._n < self.capacity:
            i = self._n
            self._weight[i] = 1.0
            self._linear[i] = x
            self._squared[i] = x * x
            self._last_update[i] = t
            self._last_fade[i] = t
            self._n += 1
            return
        gaps = t - self._last_fade
        if self.params.decay_rate > 0:
            factor = np.where(gaps > 0, 2.0 ** (-self.params.decay_rate * gaps), 1.0)
            self._weight *= factor
            self._linear *= factor[:, None]
            self._squared *= factor[:, None]
        self._last_fade[:] = t
        w = self._weight[:, None]
        means = self._linear / w
        var = self._squared / w - means * means
        radii = np.sqrt(np.maximum(var, 0.0))
        radii[self._weight <= 1.0] = 0.0
        bits = assign_projected_dims(radii, self.dims)
        self._bits = bits
        d2 = (x - means) ** 2
        dists = np.sqrt((d2 * bits).sum(axis=1) / bits.sum(axis=1))
        near = int(np.argmin(dists))
        limit = self.params.spread_radius_factor * radii[near, bits[near]].mean()
        if dists[near] <= limit:
            self._weight[near] += 1.0
            self._linear[near] += x
            self._squared[near] += x * x
            self._last_update[near] = t
        else:
            victim = int(np.argmin(self._last_update))
            self._weight[victim] = 1.0
            self._linear[victim] = x
            self._squared[victim] = x * x
            self._last_update[victim] = t
            self._last_fade[victim] = t
            self._bits[victim] = False

    @property
    def clusters(self) -> list[FadedCluster]:
        """Current clusters materialized as FadedCluster snapshots."""
        return [FadedCluster(float(self._weight[i]), self._linear[i].copy(),
                             self._squared[i].copy(), float(self._last_update[i]),
                             float(self._last_fade[i]), self._bits[i].copy())
                for i in range(self._n)]

    def vectors(self):
        if self._n == 0:
            return np.zeros((0, 0))
        return self._linear[: self._n] / self._weight[: self._n, None]

    def memory_units(self):
        return 2 * self._n

    @property
    def size(self):
        return self._n


class ReservoirBuffer:
    """Uniform sample of the stream: the m-th point replaces a uniformly
    chosen slot with probability b/m once the buffer is full."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise UsageError("capacity must be at least 1")
        self.capacity = capacity
        self.rng = rng
        self.samples: list[np.ndarray] = []
        self.seen = 0

    def insert(self, x, t=None):
        self.seen += 1
        if len(self.samples) < self.capacity:
            self.samples.append(x.copy())
            return
        j = int(self.rng.integers(self.seen))
        if j < self.capacity:
            self.samples[j] = x.copy()

    def vectors(self):
        if not self.samples:
            return np.zeros((0, 0))
        return np.stack(self.samples)

    def memory_units(self):
        return len(self.samples)

    @property
    def size(self):
        return len(self.samples)


class QueueBuffer:
    """FIFO of the most recent b samples."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise UsageError("capacity must be at least 1")
        self.capacity = capacity
        self.samples = deque(maxlen=capacity)

    def insert(self, x, t=None):
        self.samples.append(x.copy())

    def vectors(self):
        if not self.samples:
            return np.zeros((0, 0))
        return np.stack(list(self.samples))

    def memory_units(self):
        return len(self.samples)

    @property
    def size(self):
        return len(self.samples)


class FullBuffer:
    """Unbounded store of every sample, for the full-rehearsal baseline."""

    def __init__(self):
        self.samples: list[np.ndarray] = []

    def insert(self, x, t=None):
        self.samples.append(x.copy())

    def vectors(self):
        if not self.samples:
            return np.zeros((0, 0))
        return np.stack(self.samples)

    def memory_units(self):
        return len(self.samples)

    @property
    def size(self):
        return len(self.samples)


class BufferManager:
    """Per-class buffers behind one insert/contents interface.

    Buffers are created lazily on the first sample of each class so the
    feature dimension never has to be declared up front. ``contents``
    returns prototypes in deterministic (class, slot) order.
    """

    def __init__(self, strategy: str, capacity: int, num_classes: int, seed: int = 0,
                 clustream: CluStreamParams | None = None,
                 hpstream: HPStreamParams | None = None):
        if strategy not in STRATEGIES:
            raise UsageError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        if num_classes < 1:
            raise UsageError("num_classes must be at least 1")
        if strategy != "full" and capacity < 1:
            raise UsageError("bounded strategies need capacity >= 1")
        self.strategy = strategy
        self.capacity = capacity
        self.num_classes = num_classes
        self.seed = seed
        self.clustream_params = clustream or CluStreamParams()
        self.hpstream_params = hpstream or HPStreamParams()
        self._buffers: dict[int, object] = {}
        if strategy == "exstream" and capacity < 2:
            raise UsageError("exstream needs capacity >= 2 to merge a closest pair")

    def _buffer(self, label: int, dim: int):
        buf = self._buffers.get(label)
        if buf is None:
            buf = self._make_buffer(label, dim)
            self._buffers[label] = buf
        return buf

    def _make_buffer(self, label, dim):
        s = self.strategy
        if s == "exstream":
            return ExStreamBuffer(self.capacity)
        if s == "online_kmeans":
            return OnlineKMeansBuffer(self.capacity)
        if s == "clustream":
            rng = np.random.default_rng([self.seed, 5, label])
            return CluStreamBuffer(self.capacity, self.clustream_params, rng)
        if s == "hpstream":
            return HPStreamBuffer(self.capacity, self.hpstream_params, dim)
        if s == "reservoir":
            rng = np.random.default_rng([self.seed, 4, label])
            return ReservoirBuffer(self.capacity, rng)
        if s == "queue":
            return QueueBuffer(self.capacity)
        return FullBuffer()

    def insert(self, x, label: int, t: float):
        """Route one sample into its class buffer at stream time t."""
        if not 0 <= label < self.num_classes:
            raise UsageError(f"class label {label} outside [0, {self.num_classes})")
        x = np.asarray(x, dtype=np.float64)
        self._buffer(int(label), x.shape[0]).insert(x, t)

    def contents(self) -> tuple[np.ndarray, np.ndarray]:
        """All stored prototypes as (vectors, labels), classes in order."""
        blocks = []
        labels = []
        for cls in range(self.num_classes):
            buf = self._buffers.get(cls)
            if buf is None:
                continue
            vecs = buf.vectors()
            if len(vecs):
                blocks.append(vecs)
                labels.append(np.full(len(vecs), cls, dtype=np.int64))
        if not blocks:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        return np.concatenate(blocks, axis=0), np.concatenate(labels)

    def class_size(self, label: int) -> int:
        buf = self._buffers.get(label)
        return buf.size if buf is not None else 0

    def memory_cost(self) -> int:
        """Total units held: 2 per micro/faded cluster, 1 per stored vector."""
        return int(sum(b.memory_units() for b in self._buffers.values()))
