from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass
class Bag:
    """A labelled group of same-shaped instances.

    ``instances`` is stacked along axis 0.  ``instance_labels`` is optional
    ground truth (digit labels, witness flags) that training never reads;
    ``source_indices`` records where generated instances came from.
    """

    id: str
    label: int
    instances: np.ndarray
    instance_labels: np.ndarray | None = None
    source_indices: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.instances = np.ascontiguousarray(self.instances, dtype=np.float64)
        if self.label not in (1, -1):
            raise InputError(f"bag {self.id!r}: label must be +1 or -1, got {self.label!r}")
        self.label = int(self.label)
        if self.instances.ndim < 2 or len(self.instances) == 0:
            raise InputError(f"bag {self.id!r} has no instances")

    def __len__(self):
        return len(self.instances)

    @property
    def instance_shape(self):
        return self.instances.shape[1:]


def split_by_label(bags):
    pos = [b for b in bags if b.label == 1]
    neg = [b for b in bags if b.label == -1]
    return pos, neg


def require_both_classes(bags):
    pos, neg = split_by_label(bags)
    if not pos:
        raise InputError("bag set has no positive bags")
    if not neg:
        raise InputError("bag set has no negative bags")
    return pos, neg
