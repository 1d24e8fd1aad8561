"""Dataset ingestion and generation.

Bag CSV (one instance per row)::

    bag_id,label,f0,f1,...,f{d-1}
    mol_1,1,0.25,-3.5,...

MNIST is read from the standard big-endian IDX files.  Image bag sets are
stored as a JSON manifest that references IDX files and lists, per bag,
the image indices it draws on.
"""

import csv
import dataclasses
import gzip
import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .bag import Bag
from .errors import FormatError, InputError, ParseError

STD_EPS = 1e-12
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IMAGE_BAGS_FORMAT = "rankmil-image-bags/1"


@dataclass
class MilDataset:
    bags: list
    feature_dim: int
    source: str = ""

    def __post_init__(self):
        ids = [b.id for b in self.bags]
        if len(set(ids)) != len(ids):
            raise InputError("bag ids are not unique")
        shapes = {b.instance_shape for b in self.bags}
        if len(shapes) > 1:
            raise InputError(f"bags mix instance shapes {sorted(shapes)}")
        if shapes:
            (shape,) = shapes
            if int(np.prod(shape)) != self.feature_dim:
                raise InputError(f"instance shape {shape} does not match feature_dim {self.feature_dim}")

    @property
    def instance_shape(self):
        return self.bags[0].instance_shape if self.bags else (self.feature_dim,)

    @property
    def labels(self):
        return np.array([b.label for b in self.bags])

    def __len__(self):
        return len(self.bags)


# --- bag CSV -----------------------------------------------------------------


def load_bag_csv(path):
    """Read a bag CSV, grouping rows by ``bag_id`` in order of first appearance."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if len(header) < 3 or header[0].strip() != "bag_id" or header[1].strip() != "label":
            raise ParseError("header must be bag_id,label,f0,...", line=1)
        d = len(header) - 2
        rows, labels, order = {}, {}, []
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != d + 2:
                raise ParseError(f"expected {d + 2} fields, found {len(row)}", line=line)
            bag_id = row[0].strip()
            try:
                label = float(row[1])
            except ValueError:
                raise ParseError(f"label {row[1]!r} is not numeric", line=line) from None
            if label not in (1.0, -1.0):
                raise ParseError(f"label {row[1]!r} not in {{1, -1}}", line=line)
            try:
                feats = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric feature ({exc})", line=line) from None
            if not all(math.isfinite(f) for f in feats):
                raise ParseError("non-finite feature value", line=line)
            if bag_id not in rows:
                rows[bag_id], labels[bag_id] = [], int(label)
                order.append(bag_id)
            elif labels[bag_id] != int(label):
                raise ParseError(f"bag {bag_id!r} has conflicting labels", line=line)
            rows[bag_id].append(feats)
    if not order:
        raise ParseError("file has a header but no instance rows", line=2)
    bags = [Bag(b, labels[b], np.array(rows[b])) for b in order]
    return MilDataset(bags, d, source=os.fspath(path))


def write_bag_csv(path, bags):
    """Inverse of :func:`load_bag_csv`; floats use round-trip repr."""
    bags = list(bags)
    d = int(np.prod(bags[0].instance_shape))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bag_id", "label"] + [f"f{j}" for j in range(d)])
        for bag in bags:
            for inst in bag.instances.reshape(len(bag), -1):
                writer.writerow([bag.id, bag.label] + [repr(float(v)) for v in inst])


# --- normalisation -------------------------------------------------------------


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, obj):
        return cls(np.array(obj["mean"], dtype=np.float64), np.array(obj["std"], dtype=np.float64))


def fit_normalizer(bags):
    """Per-feature mean and population std over all instances of ``bags``."""
    X = np.concatenate([b.instances.reshape(len(b), -1) for b in bags])
    if len(X) == 0:
        raise InputError("cannot fit a normaliser on zero instances")
    return FeatureStats(X.mean(axis=0), np.maximum(X.std(axis=0), STD_EPS))


def normalize_instances(stats, X):
    X = np.asarray(X, dtype=np.float64)
    flat = X.reshape(len(X), -1)
    if flat.shape[1] != len(stats.mean):
        raise InputError(f"normaliser fitted on {len(stats.mean)} features, got {flat.shape[1]}")
    return ((flat - stats.mean) / stats.std).reshape(X.shape)


def apply_normalizer(stats, bags):
    return [dataclasses.replace(b, instances=normalize_instances(stats, b.instances)) for b in bags]


# --- MNIST IDX -----------------------------------------------------------------


def _read_maybe_gzip(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, ndim, path):
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{path}: truncated, expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path):
    """Return ``(images, digits)``: float images ``(N, 1, rows, cols)`` in [0, 1]
    and integer digit labels ``(N,)``.  Gzipped files are accepted."""
    images = _parse_idx(_read_maybe_gzip(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    digits = _parse_idx(_read_maybe_gzip(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if len(images) != len(digits):
        raise FormatError(f"{len(images)} images but {len(digits)} labels")
    if digits.size and digits.max() > 9:
        raise FormatError(f"{labels_path}: label value {digits.max()} outside 0..9")
    return images[:, None].astype(np.float64) / 255.0, digits.astype(np.int64)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


# --- MNIST bags ------------------------------------------------------------------


def draw_mnist_bag_indices(digits, n_bags, mean_size=10, variance=2.0, positive_fraction=0.5,
                           seed=0, target=9, exclude=None):
    """Pick image indices for ``n_bags`` bags; returns ``[(label, indices)]``.

    A bag is positive iff it holds at least one ``target`` digit.  Bag sizes
    are ``round(Normal(mean_size, sqrt(variance)))`` clamped to at least 2.
    """
    digits = np.asarray(digits)
    allowed = np.arange(len(digits))
    if exclude is not None and len(exclude):
        allowed = np.setdiff1d(allowed, np.asarray(exclude))
    hits = allowed[digits[allowed] == target]
    others = allowed[digits[allowed] != target]
    if len(hits) == 0 or len(others) == 0:
        raise InputError(f"image pool needs both digit {target} and other digits")
    if not 0.0 <= positive_fraction <= 1.0:
        raise InputError("positive_fraction must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    n_pos = math.ceil(positive_fraction * n_bags)
    labels = rng.permutation(np.array([1] * n_pos + [-1] * (n_bags - n_pos), dtype=np.int64))
    out = []
    for label in labels:
        size = max(2, int(np.rint(rng.normal(mean_size, math.sqrt(variance)))))
        if label == 1:
            idx = rng.choice(allowed, size, replace=size > len(allowed))
            if not np.any(digits[idx] == target):
                idx[rng.integers(size)] = rng.choice(hits)
        else:
            idx = rng.choice(others, size, replace=size > len(others))
        out.append((int(label), idx.astype(np.int64)))
    return out


def make_mnist_bags(images, digits, n_bags, mean_size=10, variance=2.0, positive_fraction=0.5,
                    seed=0, target=9, exclude=None, prefix="bag"):
    """Bags of digit images labelled by the presence of ``target``.

    Exactly ``ceil(positive_fraction * n_bags)`` bags are positive.  Digit
    labels are kept on each bag as ``instance_labels``; they are ground
    truth for analysis only.
    """
    digits = np.asarray(digits)
    drawn = draw_mnist_bag_indices(digits, n_bags, mean_size, variance, positive_fraction,
                                   seed, target, exclude)
    width = len(str(max(n_bags - 1, 0)))
    bags = [
        Bag(f"{prefix}-{i:0{width}d}", label, images[idx],
            instance_labels=digits[idx], source_indices=idx)
        for i, (label, idx) in enumerate(drawn)
    ]
    shape = images.shape[1:]
    return MilDataset(bags, int(np.prod(shape)), source=f"mnist-bags(seed={seed}, target={target})")


def save_image_bags(path, bags, images_path, labels_path, target=9, meta=None):
    """Write a JSON manifest listing image indices per bag (no pixels)."""
    base = os.path.dirname(os.path.abspath(path))
    doc = {
        "format": IMAGE_BAGS_FORMAT,
        "images": os.path.relpath(os.path.abspath(images_path), base),
        "labels": os.path.relpath(os.path.abspath(labels_path), base),
        "target": target,
        "meta": meta or {},
        "bags": [
            {
                "id": b.id,
                "label": b.label,
                "indices": [int(i) for i in b.source_indices],
                "digits": [int(v) for v in b.instance_labels],
            }
            for b in bags
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_image_bags(path):
    """Materialise the bags of an image-bag manifest from its IDX files."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if doc.get("format") != IMAGE_BAGS_FORMAT:
        raise FormatError(f"{path}: not an image-bag manifest")
    base = os.path.dirname(os.path.abspath(path))
    images, digits = load_mnist_idx(os.path.join(base, doc["images"]), os.path.join(base, doc["labels"]))
    target = doc.get("target", 9)
    bags = []
    for rec in doc["bags"]:
        idx = np.array(rec["indices"], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(images)):
            raise FormatError(f"{path}: bag {rec['id']!r} references images outside the IDX file")
        bags.append(Bag(rec["id"], rec["label"], images[idx],
                        instance_labels=digits[idx], source_indices=idx))
    for b in bags:
        if (b.label == 1) != bool(np.any(b.instance_labels == target)):
            raise FormatError(f"{path}: bag {b.id!r} label disagrees with its digits")
    return MilDataset(bags, int(np.prod(images.shape[1:])), source=os.fspath(path))


def load_dataset(path):
    """Dispatch on file type: ``.json`` image-bag manifest, otherwise bag CSV."""
    if os.fspath(path).endswith(".json"):
        return load_image_bags(path)
    return load_bag_csv(path)


# --- synthetic oracle data -----------------------------------------------------


def gen_synthetic(n_pos, n_neg, d, separation, witness_rate, seed, bag_size=(2, 10), prefix="syn"):
    """Gaussian MIL data with known instance labels.

    Background instances are standard normal.  Each positive bag holds
    ``max(1, Binomial(size, witness_rate))`` witnesses drawn around
    ``separation * e_1``; ``instance_labels`` marks them with 1.
    """
    if separation < 0:
        raise InputError("separation must be nonnegative")
    if not 0.0 < witness_rate <= 1.0:
        raise InputError("witness_rate must lie in (0, 1]")
    lo, hi = bag_size
    if not 1 <= lo <= hi:
        raise InputError("bag_size must be a range (lo, hi) with 1 <= lo <= hi")
    rng = np.random.default_rng(seed)
    shift = np.zeros(d)
    shift[0] = separation
    labels = [1] * n_pos + [-1] * n_neg
    width = len(str(max(len(labels) - 1, 0)))
    bags = []
    for i, label in enumerate(labels):
        size = int(rng.integers(lo, hi + 1))
        X = rng.standard_normal((size, d))
        truth = np.zeros(size, dtype=np.int64)
        if label == 1:
            k = min(size, max(1, int(rng.binomial(size, witness_rate))))
            where = rng.choice(size, k, replace=False)
            X[where] += shift
            truth[where] = 1
        bags.append(Bag(f"{prefix}-{i:0{width}d}", label, X, instance_labels=truth))
    return MilDataset(bags, d, source=f"synthetic(sep={separation}, rate={witness_rate}, seed={seed})")
