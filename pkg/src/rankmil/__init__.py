"""Multiple-instance learning by bag-level pairwise ranking."""

from .bag import Bag
from .data import (
    FeatureStats,
    MilDataset,
    apply_normalizer,
    fit_normalizer,
    gen_synthetic,
    load_bag_csv,
    load_dataset,
    load_image_bags,
    load_mnist_idx,
    make_mnist_bags,
    save_image_bags,
    write_bag_csv,
)
from .errors import (
    DimensionError,
    DivergenceError,
    FormatError,
    InputError,
    MetricUndefinedError,
    MilError,
    ParseError,
    UsageError,
)
from .evaluation import CvReport, run_cv, stratified_kfold
from .metrics import accuracy, auc_roc, select_threshold
from .mil import (
    TrainConfig,
    TrainedModel,
    bag_score,
    empirical_risk,
    pair_loss,
    pair_loss_grad,
    predict_bags,
    score_bags,
    score_instances,
    train,
)
from .models import ModelSpec, backward_instance, forward_instance, init_params, num_params

__all__ = [name for name in dir() if not name.startswith("_")]
