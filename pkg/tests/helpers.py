import os

import numpy as np

from rankmil.bag import Bag


def make_bags(scores_pos, scores_neg, d=1):
    """Bags of 1-D instances whose SingleLinear(1) scores under w=1, b=0 equal the given values."""
    bags = []
    for i, s in enumerate(scores_pos):
        bags.append(Bag(f"p{i}", 1, np.asarray(s, dtype=float).reshape(-1, d)))
    for i, s in enumerate(scores_neg):
        bags.append(Bag(f"n{i}", -1, np.asarray(s, dtype=float).reshape(-1, d)))
    return bags


def env_path(name):
    value = os.environ.get(name)
    return value if value and os.path.exists(value) else None


def relative_error(analytic, numeric, floor=1e-8):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(floor, np.abs(analytic) + np.abs(numeric))


def sample_coordinates(spec, per_block, rng):
    """All coordinates for small models, ``per_block`` random ones per block otherwise."""
    from rankmil.models import block_slices, num_params

    if num_params(spec) <= 5000:
        return np.arange(num_params(spec))
    picks = []
    for sl in block_slices(spec).values():
        size = sl.stop - sl.start
        picks.append(sl.start + rng.choice(size, min(size, per_block), replace=False))
    return np.concatenate(picks)


def central_difference(fn, theta, coords, h):
    """Central finite differences of scalar ``fn`` at ``theta`` along ``coords``."""
    out = np.empty(len(coords))
    for n, i in enumerate(coords):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        out[n] = (fn(tp) - fn(tm)) / (2 * h)
    return out


MNIST_NAMES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def mnist_files(root):
    """``(train_images, train_labels, test_images, test_labels)`` under ``root``, gzipped or not."""
    found = []
    for key, names in MNIST_NAMES.items():
        for name in names:
            hits = [os.path.join(root, name + ext) for ext in ("", ".gz")]
            hits = [h for h in hits if os.path.exists(h)]
            if hits:
                found.append(hits[0])
                break
        else:
            raise FileNotFoundError(f"{key} IDX file not found in {root}")
    return tuple(found)


def write_digits_proxy(root, test_fraction=0.5, seed=0):
    """Write sklearn's 8x8 digits, upscaled to 28x28, as MNIST-named IDX files under ``root``.

    Stand-in for MNIST where the real files are unavailable.
    """
    from sklearn.datasets import load_digits

    from rankmil.data import write_idx_images, write_idx_labels

    digits = load_digits()
    images = np.kron(digits.images, np.ones((3, 3)))
    images = np.pad(images, ((0, 0), (2, 2), (2, 2))) * (255 / 16)
    images = np.rint(images).astype(np.uint8)
    order = np.random.default_rng(seed).permutation(len(images))
    cut = int(len(images) * (1 - test_fraction))
    splits = {"train": order[:cut], "t10k": order[cut:]}
    os.makedirs(root, exist_ok=True)
    for name, idx in splits.items():
        write_idx_images(os.path.join(root, f"{name}-images-idx3-ubyte"), images[idx])
        write_idx_labels(os.path.join(root, f"{name}-labels-idx1-ubyte"), digits.target[idx])
    return root
