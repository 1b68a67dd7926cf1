"""Data catalog: item features, relationship edges, user triples, categories, models.

Everything here is plain file IO plus validation. Item and user ids are opaque
strings; they are mapped to dense integer indices at load time and all numeric
code downstream works on indices. Loaded structures are immutable by convention
and safe to share across threads.

File formats (text files are tab-separated, UTF-8):

* features:   ``#features <N> <F>`` header, then ``<item_id>\\t<v1>..<vF>``.
              Binary mirror: magic ``SMF1``, little-endian u64 N and F, an id
              table of u32-length-prefixed UTF-8 strings, then N*F f64 values
              row-major.
* edges:      ``<src>\\t<dst>\\t<class>`` per line.
* triples:    ``<item_i>\\t<item_j>\\t<user>`` per line.
* categories: ``<item_id>\\t<category_id>`` per line.
* model:      magic ``SMM1``, u32 version, then header + f64 parameter blocks
              (see save_model).
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

RELATION_CLASSES = ("also_viewed", "buy_after_viewing", "also_bought", "bought_together")

_FEATURE_MAGIC = b"SMF1"
_MODEL_MAGIC = b"SMM1"
_MODEL_VERSION = 1


class DataError(Exception):
    """A file or in-memory structure violates the catalog contracts."""


def _fmt(value: float) -> str:
    # repr() is the shortest string that round-trips a float64 exactly.
    return repr(float(value))


def canonical_pair(a: str, b: str) -> tuple[str, str]:
    """Unordered item pair in canonical (sorted) order."""
    return (a, b) if a <= b else (b, a)


@dataclass
class FeatureMatrix:
    """Dense per-item feature vectors, one row per item id."""

    item_ids: list[str]
    values: np.ndarray  # (N, F) float64

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("feature values must be a 2-d array")
        if len(self.item_ids) != self.values.shape[0]:
            raise DataError(
                f"{len(self.item_ids)} item ids but {self.values.shape[0]} feature rows"
            )
        if len(set(self.item_ids)) != len(self.item_ids):
            raise DataError("duplicate item id in feature matrix")
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite feature value")
        self._index = {item: i for i, item in enumerate(self.item_ids)}

    @property
    def n_items(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def index_of(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise DataError(f"unknown item id: {item_id!r}") from None

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    def row(self, item_id: str) -> np.ndarray:
        return self.values[self.index_of(item_id)]

    def normalized(self, kind: str) -> "FeatureMatrix":
        """Return a copy with per-row normalization applied.

        ``none`` returns self unchanged; ``l2_unit`` rescales every row to unit
        L2 norm (zero rows are left as-is).
        """
        if kind == "none":
            return self
        if kind != "l2_unit":
            raise ValueError(f"unknown normalization kind: {kind!r}")
        norms = np.linalg.norm(self.values, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return FeatureMatrix(self.item_ids, self.values / norms)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FeatureMatrix)
            and self.item_ids == other.item_ids
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )


@dataclass
class RelationGraph:
    """Typed, canonicalized item-relationship edges.

    Edges are stored as unordered pairs (lexicographic id order) even for the
    directional "buy after viewing" class: every distance in this package is
    symmetric, so direction is kept only as counts in the provenance fields.
    """

    edges: set  # of (a, b, relation_class) with a < b
    dropped_self_edges: int = 0
    duplicate_edges: int = 0
    reversed_edges: int = 0

    def __post_init__(self):
        for a, b, cls in self.edges:
            if a == b:
                raise DataError(f"self-edge on {a!r}")
            if a > b:
                raise DataError(f"edge ({a!r}, {b!r}) not canonical")
            if cls not in RELATION_CLASSES:
                raise DataError(f"unknown relation class: {cls!r}")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def pairs(self) -> set:
        """Unordered endpoint pairs, classes collapsed."""
        return {(a, b) for a, b, _ in self.edges}

    def validate_endpoints(self, features: FeatureMatrix):
        for a, b, _ in self.edges:
            if a not in features:
                raise DataError(f"edge endpoint {a!r} missing from features")
            if b not in features:
                raise DataError(f"edge endpoint {b!r} missing from features")


@dataclass
class UserTripleSet:
    """Co-purchase pairs annotated with the purchasing user."""

    triples: set  # of (a, b, user) with a < b

    def __post_init__(self):
        for a, b, _ in self.triples:
            if a == b:
                raise DataError(f"self-pair on {a!r} in user triples")
            if a > b:
                raise DataError(f"triple pair ({a!r}, {b!r}) not canonical")

    def user_ids(self) -> list[str]:
        return sorted({u for _, _, u in self.triples})

    def validate_endpoints(self, features: FeatureMatrix):
        for a, b, _ in self.triples:
            if a not in features or b not in features:
                raise DataError(f"triple endpoint missing from features: ({a!r}, {b!r})")


class CategoryMap:
    """item id -> category id. Unmapped items are an error at query time."""

    def __init__(self, mapping: dict):
        self._mapping = dict(mapping)

    def __len__(self) -> int:
        return len(self._mapping)

    def category(self, item_id: str) -> str:
        try:
            return self._mapping[item_id]
        except KeyError:
            raise DataError(f"item {item_id!r} has no category") from None

    def items_in(self, category_id: str) -> list[str]:
        return sorted(i for i, c in self._mapping.items() if c == category_id)

    def categories(self) -> list[str]:
        return sorted(set(self._mapping.values()))


@dataclass
class MetricModel:
    """A learned distance model plus its decision threshold.

    kind selects the parameterization:

    * ``weighted_nn``:   transform is a per-feature weight vector w (F,) and
                         the distance is ||w o (x_i - x_j)||^2.
    * ``low_rank``:      transform is Y (F, K) and the distance is
                         ||(x_i - x_j) Y||^2.
    * ``personalized``:  low_rank plus nonnegative per-user weights over the
                         K projected dimensions.
    """

    kind: str
    transform: np.ndarray  # (F,) for weighted_nn, (F, K) otherwise
    threshold: float  # c: distance at which link probability is 0.5
    user_ids: list[str] | None = None
    user_weights: np.ndarray | None = None  # (U, K), entries >= 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.transform = np.ascontiguousarray(self.transform, dtype=np.float64)
        if self.kind == "weighted_nn":
            if self.transform.ndim != 1:
                raise DataError("weighted_nn expects a 1-d weight vector")
        elif self.kind in ("low_rank", "personalized"):
            if self.transform.ndim != 2:
                raise DataError(f"{self.kind} expects a 2-d transform matrix")
        else:
            raise DataError(f"unknown model kind: {self.kind!r}")
        if not np.all(np.isfinite(self.transform)):
            raise DataError("non-finite model parameter")
        if not np.isfinite(self.threshold):
            raise DataError("non-finite threshold")
        if (self.user_ids is None) != (self.user_weights is None):
            raise DataError("user_ids and user_weights must be supplied together")
        if self.user_weights is not None:
            self.user_weights = np.ascontiguousarray(self.user_weights, dtype=np.float64)
            if self.user_weights.shape != (len(self.user_ids), self.rank):
                raise DataError(
                    f"user weight table {self.user_weights.shape} does not match "
                    f"{len(self.user_ids)} users x rank {self.rank}"
                )
            if not np.all(np.isfinite(self.user_weights)):
                raise DataError("non-finite user weight")
            if np.any(self.user_weights < 0.0):
                raise DataError("negative user weight")

    @property
    def n_features(self) -> int:
        return self.transform.shape[0]

    @property
    def rank(self) -> int:
        # weighted_nn is a diagonal metric over the full feature space.
        return self.transform.shape[0] if self.kind == "weighted_nn" else self.transform.shape[1]

    @property
    def feature_norm(self) -> str:
        return self.metadata.get("feature_norm", "none")

    def user_index(self, user_id: str) -> int:
        try:
            return self.user_ids.index(user_id) if self.user_ids else -1
        except ValueError:
            raise DataError(f"unknown user id: {user_id!r}") from None

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetricModel):
            return False
        same_users = (
            self.user_ids == other.user_ids
            if self.user_weights is None or other.user_weights is None
            else self.user_ids == other.user_ids
            and np.array_equal(self.user_weights, other.user_weights)
        )
        return (
            self.kind == other.kind
            and np.array_equal(self.transform, other.transform)
            and self.threshold == other.threshold
            and (self.user_weights is None) == (other.user_weights is None)
            and same_users
            and self.metadata == other.metadata
        )


# ---------------------------------------------------------------------------
# feature files


def save_features(features: FeatureMatrix, path, binary: bool = False):
    if binary:
        with open(path, "wb") as f:
            f.write(_FEATURE_MAGIC)
            f.write(struct.pack("<QQ", features.n_items, features.n_features))
            for item in features.item_ids:
                raw = item.encode("utf-8")
                f.write(struct.pack("<I", len(raw)))
                f.write(raw)
            f.write(features.values.tobytes(order="C"))
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#features {features.n_items} {features.n_features}\n")
        for item, row in zip(features.item_ids, features.values):
            f.write(item + "\t" + "\t".join(_fmt(v) for v in row) + "\n")


def load_features(path) -> FeatureMatrix:
    """Load a feature file (text or binary mirror, sniffed by magic bytes).

    Raises DataError with the offending line number on dimension mismatch,
    duplicate item id, or non-finite values.
    """
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == _FEATURE_MAGIC:
        return _load_features_binary(path)
    return _load_features_text(path)


def _load_features_text(path) -> FeatureMatrix:
    item_ids: list[str] = []
    seen: set = set()
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        parts = header.split()
        if len(parts) != 3 or parts[0] != "#features":
            raise DataError(f"{path}:1: expected '#features <N> <F>' header")
        try:
            n_items, n_features = int(parts[1]), int(parts[2])
        except ValueError:
            raise DataError(f"{path}:1: malformed feature header") from None
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            item = fields[0]
            if item in seen:
                raise DataError(f"{path}:{lineno}: duplicate item id {item!r}")
            if len(fields) - 1 != n_features:
                raise DataError(
                    f"{path}:{lineno}: expected {n_features} values, got {len(fields) - 1}"
                )
            try:
                row = np.array([float(v) for v in fields[1:]], dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable feature value") from None
            if not np.all(np.isfinite(row)):
                raise DataError(f"{path}:{lineno}: non-finite feature value")
            seen.add(item)
            item_ids.append(item)
            rows.append(row)
    if len(item_ids) != n_items:
        raise DataError(f"{path}: header says {n_items} items but file has {len(item_ids)}")
    values = np.vstack(rows) if rows else np.zeros((0, n_features))
    return FeatureMatrix(item_ids, values)


def _load_features_binary(path) -> FeatureMatrix:
    with open(path, "rb") as f:
        f.read(4)
        head = f.read(16)
        if len(head) != 16:
            raise DataError(f"{path}: truncated binary feature file")
        n_items, n_features = struct.unpack("<QQ", head)
        item_ids = []
        for _ in range(n_items):
            raw_len = f.read(4)
            if len(raw_len) != 4:
                raise DataError(f"{path}: truncated id table")
            (length,) = struct.unpack("<I", raw_len)
            raw = f.read(length)
            if len(raw) != length:
                raise DataError(f"{path}: truncated id table")
            item_ids.append(raw.decode("utf-8"))
        payload = f.read(n_items * n_features * 8)
        if len(payload) != n_items * n_features * 8:
            raise DataError(f"{path}: truncated feature payload")
        if f.read(1):
            raise DataError(f"{path}: trailing bytes after feature payload")
    values = np.frombuffer(payload, dtype="<f8").reshape(n_items, n_features)
    return FeatureMatrix(item_ids, values.copy())


# ---------------------------------------------------------------------------
# edge / triple / category files


def load_edges(path, class_filter=None, features: FeatureMatrix | None = None) -> RelationGraph:
    """Load relationship edges, canonicalized and deduplicated.

    class_filter, when given, keeps only the listed relation classes.
    Self-edges are dropped and counted rather than treated as fatal. When a
    FeatureMatrix is supplied, endpoints are validated against it.
    """
    if class_filter is not None:
        class_filter = set(class_filter)
        unknown = class_filter - set(RELATION_CLASSES)
        if unknown:
            raise DataError(f"unknown relation class in filter: {sorted(unknown)}")
    edges: set = set()
    dropped_self = 0
    duplicates = 0
    reversed_count = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected '<src>\\t<dst>\\t<class>'")
            src, dst, cls = fields
            if cls not in RELATION_CLASSES:
                raise DataError(f"{path}:{lineno}: unknown relation class {cls!r}")
            if class_filter is not None and cls not in class_filter:
                continue
            if src == dst:
                dropped_self += 1
                continue
            if features is not None:
                if src not in features:
                    raise DataError(f"{path}:{lineno}: endpoint {src!r} missing from features")
                if dst not in features:
                    raise DataError(f"{path}:{lineno}: endpoint {dst!r} missing from features")
            if src > dst:
                reversed_count += 1
            edge = canonical_pair(src, dst) + (cls,)
            if edge in edges:
                duplicates += 1
            else:
                edges.add(edge)
    return RelationGraph(edges, dropped_self, duplicates, reversed_count)


def save_edges(graph: RelationGraph, path):
    with open(path, "w", encoding="utf-8") as f:
        for a, b, cls in sorted(graph.edges):
            f.write(f"{a}\t{b}\t{cls}\n")


def load_triples(path, features: FeatureMatrix | None = None) -> UserTripleSet:
    triples: set = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected '<item_i>\\t<item_j>\\t<user>'")
            a, b, user = fields
            if a == b:
                raise DataError(f"{path}:{lineno}: self-pair in user triple")
            if features is not None and (a not in features or b not in features):
                raise DataError(f"{path}:{lineno}: triple endpoint missing from features")
            triples.add(canonical_pair(a, b) + (user,))
    return UserTripleSet(triples)


def save_triples(triples: UserTripleSet, path):
    with open(path, "w", encoding="utf-8") as f:
        for a, b, user in sorted(triples.triples):
            f.write(f"{a}\t{b}\t{user}\n")


def load_categories(path) -> CategoryMap:
    mapping: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DataError(f"{path}:{lineno}: expected '<item_id>\\t<category_id>'")
            item, cat = fields
            if item in mapping and mapping[item] != cat:
                raise DataError(f"{path}:{lineno}: conflicting category for {item!r}")
            mapping[item] = cat
    return CategoryMap(mapping)


def save_categories(categories: CategoryMap, path):
    with open(path, "w", encoding="utf-8") as f:
        for item in sorted(categories._mapping):
            f.write(f"{item}\t{categories._mapping[item]}\n")


# ---------------------------------------------------------------------------
# model files


def save_model(model: MetricModel, path):
    """Write a model file. save_model / load_model round-trip bit-exactly."""
    meta = json.dumps(model.metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MODEL_MAGIC)
        f.write(struct.pack("<I", _MODEL_VERSION))
        kind_raw = model.kind.encode("ascii")
        f.write(struct.pack("<I", len(kind_raw)))
        f.write(kind_raw)
        f.write(struct.pack("<QQ", model.n_features, model.rank))
        f.write(struct.pack("<d", model.threshold))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(model.transform.tobytes(order="C"))
        has_users = model.user_weights is not None
        f.write(struct.pack("<B", 1 if has_users else 0))
        if has_users:
            f.write(struct.pack("<Q", len(model.user_ids)))
            for user in model.user_ids:
                raw = user.encode("utf-8")
                f.write(struct.pack("<I", len(raw)))
                f.write(raw)
            f.write(model.user_weights.tobytes(order="C"))


def load_model(path) -> MetricModel:
    def take(f, n, what):
        raw = f.read(n)
        if len(raw) != n:
            raise DataError(f"{path}: truncated model file ({what})")
        return raw

    with open(path, "rb") as f:
        if take(f, 4, "magic") != _MODEL_MAGIC:
            raise DataError(f"{path}: not a model file")
        (version,) = struct.unpack("<I", take(f, 4, "version"))
        if version != _MODEL_VERSION:
            raise DataError(f"{path}: model version {version} not supported")
        (kind_len,) = struct.unpack("<I", take(f, 4, "kind"))
        kind = take(f, kind_len, "kind").decode("ascii")
        n_features, rank = struct.unpack("<QQ", take(f, 16, "dimensions"))
        (threshold,) = struct.unpack("<d", take(f, 8, "threshold"))
        (meta_len,) = struct.unpack("<I", take(f, 4, "metadata"))
        metadata = json.loads(take(f, meta_len, "metadata").decode("utf-8"))
        if kind == "weighted_nn":
            if rank != n_features:
                raise DataError(f"{path}: weighted_nn requires K == F")
            shape = (n_features,)
        else:
            shape = (n_features, rank)
        count = int(np.prod(shape))
        transform = np.frombuffer(take(f, count * 8, "transform"), dtype="<f8").reshape(shape)
        (has_users,) = struct.unpack("<B", take(f, 1, "user flag"))
        user_ids = None
        user_weights = None
        if has_users:
            (n_users,) = struct.unpack("<Q", take(f, 8, "user table"))
            user_ids = []
            for _ in range(n_users):
                (ulen,) = struct.unpack("<I", take(f, 4, "user table"))
                user_ids.append(take(f, ulen, "user table").decode("utf-8"))
            user_weights = np.frombuffer(
                take(f, n_users * rank * 8, "user weights"), dtype="<f8"
            ).reshape(n_users, rank)
        if f.read(1):
            raise DataError(f"{path}: trailing bytes after model payload")
    return MetricModel(kind, transform.copy(), threshold, user_ids,
                       None if user_weights is None else user_weights.copy(), metadata)
