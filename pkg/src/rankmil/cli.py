"""``rankmil`` command-line interface.

Every command writes a JSON run manifest next to its outputs.  Feeding a
manifest to ``rankmil replay`` re-executes the run with the recorded
parameters and rewrites byte-identical outputs.

Errors go to stderr as ``rankmil: error[<code>]: <message>``:

====  =======================================  =========
code  meaning                                  exit code
====  =======================================  =========
E100  generic failure                          1
E101  shape / dimension mismatch               1
E102  invalid input data                       1
E103  CSV parse error (with line number)       1
E104  malformed IDX or bag manifest            1
E105  metric undefined (single class)          1
E106  training diverged                        3
E107  usage error (flags, arch/data mismatch)  2
E108  I/O error                                1
====  =======================================  =========
"""

import hashlib
import json
import os
import sys
import time
from importlib.metadata import PackageNotFoundError, version

import click
import numpy as np

from . import data as D
from . import metrics
from .errors import DimensionError, DivergenceError, MilError, UsageError
from .evaluation import run_cv
from .mil import TrainConfig, TrainedModel, score_bags, score_instances, train
from .models import ModelSpec

ARCHS = ("linear", "mlp", "cnn")
STUDIED_TRAIN_BAGS = (50, 100, 150, 200, 300, 400, 500)


def _version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


class RankmilGroup(click.Group):
    """Group that reports every failure with a stable error-code prefix."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name or "rankmil", complete_var, standalone_mode=False, **extra)
        except click.ClickException as exc:
            _fail(UsageError.code, exc.format_message(), 2)
        except click.Abort:
            _fail("E100", "aborted", 1)
        except DivergenceError as exc:
            _fail(exc.code, str(exc), 3)
        except UsageError as exc:
            _fail(exc.code, str(exc), 2)
        except MilError as exc:
            _fail(exc.code, str(exc), 1)
        except OSError as exc:
            _fail("E108", str(exc), 1)
        sys.exit(rv if isinstance(rv, int) else 0)


def _fail(code, message, exit_code):
    click.echo(f"rankmil: error[{code}]: {message}", err=True)
    sys.exit(exit_code)


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment.  Keys match option names."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_path(path, given):
    return given or os.path.splitext(path)[0] + ".manifest.json"


def write_manifest(path, ctx, started, dataset=None, artifacts=(), **extra):
    """Record the resolved invocation; see ``rankmil replay``."""
    doc = {
        "tool": "rankmil",
        "version": _version(),
        "command": ctx.command.name,
        "params": ctx.params,
        "seed": ctx.params.get("seed"),
        "dataset": dataset,
        "artifacts": {os.path.abspath(p): sha256(p) for p in artifacts},
    }
    doc.update(extra)
    doc["duration_seconds"] = round(time.perf_counter() - started, 3)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _abspaths(ctx, *names):
    for name in names:
        if ctx.params.get(name) is not None:
            ctx.params[name] = os.path.abspath(ctx.params[name])


def _describe(ds, path):
    labels = ds.labels
    return {
        "path": os.path.abspath(path),
        "sha256": sha256(path),
        "source": ds.source,
        "n_bags": len(ds),
        "n_positive": int((labels == 1).sum()),
        "n_negative": int((labels == -1).sum()),
        "n_instances": int(sum(len(b) for b in ds.bags)),
        "instance_shape": list(ds.instance_shape),
    }


def _spec_for(arch, ds):
    shape = tuple(ds.instance_shape)
    if arch == "cnn":
        if shape != (1, 28, 28):
            raise UsageError(f"--arch cnn needs 1x28x28 image bags, data has instances of shape {shape}")
        return ModelSpec.mnist_cnn()
    if len(shape) != 1:
        raise UsageError(f"--arch {arch} needs feature-vector bags, data has instances of shape {shape}")
    return ModelSpec(arch, shape[0])


def _train_config(ctx):
    p = ctx.params
    return TrainConfig(
        epochs=p["epochs"],
        pairs_per_epoch=p["pairs_per_epoch"],
        learning_rate=p["lr"],
        momentum=p["momentum"],
        weight_decay=p["weight_decay"],
        seed=p["seed"],
    )


def _normalize(flag, spec):
    return (not spec.is_image) if flag is None else flag


def hyperparameter_options(fn):
    options = [
        click.option("--epochs", type=click.IntRange(min=0), default=None,
                     help="Epochs [default: 200 for linear/mlp, 30 for cnn]."),
        click.option("--pairs-per-epoch", type=click.IntRange(min=1), default=None,
                     help="Bag pairs per epoch [default: max(#pos, #neg)]."),
        click.option("--lr", type=float, default=1e-3, show_default=True, help="Learning rate."),
        click.option("--momentum", type=float, default=0.9, show_default=True),
        click.option("--weight-decay", type=float, default=0.0, show_default=True),
        click.option("--normalize/--no-normalize", default=None,
                     help="Z-score features on the training bags [default: on for vector data, off for images]."),
        click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


@click.group(cls=RankmilGroup)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="key=value defaults for any command option; explicit flags win.")
@click.version_option(_version(), prog_name="rankmil")
@click.pass_context
def cli(ctx, config_path):
    """Multiple-instance learning with a bag-level pairwise ranking loss."""
    if config_path:
        values = read_config(config_path)
        ctx.default_map = {name: values for name in ctx.command.commands}


@cli.command("train")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Bag CSV or image-bag manifest (.json).")
@click.option("--arch", required=True, type=click.Choice(ARCHS))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Model file (JSON).")
@hyperparameter_options
@click.option("--manifest", type=click.Path(dir_okay=False), default=None,
              help="Run manifest path [default: <out stem>.manifest.json].")
@click.pass_context
def train_cmd(ctx, data, arch, out, epochs, pairs_per_epoch, lr, momentum, weight_decay,
              normalize, seed, manifest):
    """Train a bag scorer and save it with its decision threshold."""
    started = time.perf_counter()
    _abspaths(ctx, "data", "out", "manifest")
    ds = D.load_dataset(data)
    spec = _spec_for(arch, ds)
    cfg = _train_config(ctx)
    norm = _normalize(normalize, spec)
    model = train(ds.bags, spec, cfg, normalize=norm)
    model.save(out)

    scores, _ = score_bags(model, ds.bags)
    labels = ds.labels
    risk = float(np.maximum(0.0, 1.0 - 2.0 * (scores[labels == 1][:, None] - scores[labels == -1][None, :])).sum())
    n_pos, n_neg = int((labels == 1).sum()), int((labels == -1).sum())
    write_manifest(
        _manifest_path(out, manifest), ctx, started, dataset=_describe(ds, data), artifacts=[out],
        resolved_config={**cfg.resolve(spec, n_pos, n_neg).to_dict(), "normalize": norm, "spec": spec.to_dict()},
        training={
            "empirical_risk": risk,
            "auc": metrics.auc_roc(scores, labels),
            "accuracy": metrics.accuracy(scores, labels, model.threshold),
            "threshold": model.threshold,
        },
    )
    click.echo(f"wrote {out} (training risk {risk:.6g}, threshold {model.threshold:.6g})")


def _report_paths(report):
    stem, ext = os.path.splitext(report)
    if ext.lower() == ".json":
        return stem + ".csv", report
    return report, stem + ".json"


@cli.command("cv")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--arch", required=True, type=click.Choice(ARCHS))
@click.option("--runs", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--folds", type=click.IntRange(min=2), default=10, show_default=True)
@click.option("--report", required=True, type=click.Path(dir_okay=False),
              help="CSV report path; a JSON mirror is written beside it.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
              help="Worker processes for folds (results are order-independent).")
@hyperparameter_options
@click.option("--manifest", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def cv_cmd(ctx, data, arch, runs, folds, report, jobs, epochs, pairs_per_epoch, lr, momentum,
           weight_decay, normalize, seed, manifest):
    """Repeated stratified k-fold cross-validation (bag accuracy and AUC)."""
    started = time.perf_counter()
    _abspaths(ctx, "data", "report", "manifest")
    ds = D.load_dataset(data)
    spec = _spec_for(arch, ds)
    cfg = _train_config(ctx)
    result = run_cv(ds.bags, spec, cfg, runs=runs, k=folds, normalize=_normalize(normalize, spec), jobs=jobs)
    csv_path, json_path = _report_paths(report)
    result.write(csv_path, json_path)
    write_manifest(_manifest_path(csv_path, manifest), ctx, started, dataset=_describe(ds, data),
                   artifacts=[csv_path, json_path], summary=result.summary())
    s = result.summary()
    click.echo(
        f"accuracy {s['accuracy_mean']:.4f} +/- {s['accuracy_std']:.4f}, "
        f"AUC {s['auc_mean']:.4f} +/- {s['auc_std']:.4f} over {runs} runs x {folds} folds"
    )


@cli.command("mnist-bags")
@click.option("--images", required=True, type=click.Path(exists=True, dir_okay=False),
              help="IDX image file for training bags.")
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-images", type=click.Path(exists=True, dir_okay=False), default=None,
              help="IDX images for test bags [default: unused images of --images].")
@click.option("--test-labels", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--train-bags", type=click.IntRange(min=1), default=100, show_default=True,
              help=f"Training bags (studied sizes: {', '.join(map(str, STUDIED_TRAIN_BAGS))}).")
@click.option("--test-bags", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--mean-size", type=float, default=10.0, show_default=True)
@click.option("--variance", type=click.FloatRange(min=0.0), default=2.0, show_default=True)
@click.option("--positive-fraction", type=click.FloatRange(0.0, 1.0), default=0.5, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
def mnist_bags_cmd(ctx, images, labels, test_images, test_labels, train_bags, test_bags, mean_size,
                   variance, positive_fraction, seed, out_dir):
    """Write train/test bag manifests of MNIST images (positive iff a 9 is present)."""
    started = time.perf_counter()
    _abspaths(ctx, "images", "labels", "test_images", "test_labels", "out_dir")
    if (test_images is None) != (test_labels is None):
        raise UsageError("--test-images and --test-labels go together")
    os.makedirs(out_dir, exist_ok=True)
    gen = dict(mean_size=mean_size, variance=variance, positive_fraction=positive_fraction)

    imgs, digits = D.load_mnist_idx(images, labels)
    tr = D.make_mnist_bags(imgs, digits, train_bags, seed=seed, prefix="train", **gen)
    if test_images is None:
        used = np.unique(np.concatenate([b.source_indices for b in tr.bags]))
        te = D.make_mnist_bags(imgs, digits, test_bags, seed=[seed, 1], prefix="test", exclude=used, **gen)
        te_paths = (images, labels)
    else:
        timgs, tdigits = D.load_mnist_idx(test_images, test_labels)
        te = D.make_mnist_bags(timgs, tdigits, test_bags, seed=[seed, 1], prefix="test", **gen)
        te_paths = (test_images, test_labels)

    train_path = os.path.join(out_dir, "train_bags.json")
    test_path = os.path.join(out_dir, "test_bags.json")
    D.save_image_bags(train_path, tr.bags, images, labels, meta={"seed": seed, "split": "train", **gen})
    D.save_image_bags(test_path, te.bags, *te_paths, meta={"seed": [seed, 1], "split": "test", **gen})
    write_manifest(os.path.join(out_dir, "manifest.json"), ctx, started,
                   artifacts=[train_path, test_path],
                   inputs={p: sha256(p) for p in {images, labels, *te_paths}})
    click.echo(f"wrote {train_path} ({train_bags} bags) and {test_path} ({test_bags} bags)")


@cli.command("score")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default="scores.csv", show_default=True, type=click.Path(dir_okay=False))
@click.option("--per-instance", is_flag=True, help="One row per instance instead of per bag.")
@click.option("--manifest", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def score_cmd(ctx, model_path, data, out, per_instance, manifest):
    """Score bags with a trained model and write a CSV.

    Columns are bag_id,score,prediction,witness_index, plus
    instance_index,instance_score with --per-instance.
    """
    started = time.perf_counter()
    _abspaths(ctx, "model_path", "data", "out", "manifest")
    model = TrainedModel.load(model_path)
    ds = D.load_dataset(data)
    if tuple(ds.instance_shape) != model.spec.input_shape:
        raise UsageError(f"model expects instances of shape {model.spec.input_shape}, data has {tuple(ds.instance_shape)}")
    header = ["bag_id", "score", "prediction", "witness_index"]
    if per_instance:
        header += ["instance_index", "instance_score"]
    lines = [",".join(header)]
    try:
        for bag in ds.bags:
            s = score_instances(model, bag)
            w = int(np.argmax(s))
            head = [bag.id, repr(float(s[w])), "1" if s[w] > model.threshold else "-1", str(w)]
            if per_instance:
                lines.extend(",".join(head + [str(i), repr(float(v))]) for i, v in enumerate(s))
            else:
                lines.append(",".join(head))
    except DimensionError as exc:
        raise UsageError(str(exc)) from exc
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    write_manifest(_manifest_path(out, manifest), ctx, started, dataset=_describe(ds, data),
                   artifacts=[out], model_sha256=sha256(model_path))
    click.echo(f"wrote {out}")


@cli.command("synth")
@click.option("--n-pos", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--n-neg", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--dim", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--separation", type=click.FloatRange(min=0.0), default=20.0, show_default=True)
@click.option("--witness-rate", type=click.FloatRange(0.0, 1.0, min_open=True), default=1.0, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--manifest", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def synth_cmd(ctx, n_pos, n_neg, dim, separation, witness_rate, seed, out, manifest):
    """Write a Gaussian MIL bag CSV with a known discriminative direction."""
    started = time.perf_counter()
    _abspaths(ctx, "out", "manifest")
    ds = D.gen_synthetic(n_pos, n_neg, dim, separation, witness_rate, seed)
    D.write_bag_csv(out, ds.bags)
    write_manifest(_manifest_path(out, manifest), ctx, started, artifacts=[out])
    click.echo(f"wrote {out}")


@cli.command("replay")
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def replay_cmd(ctx, manifest_path):
    """Re-run the command recorded in a run manifest."""
    with open(manifest_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    name = doc.get("command")
    command = cli.commands.get(name)
    if command is None or name == "replay":
        raise UsageError(f"{manifest_path}: cannot replay command {name!r}")
    params = {p.name: doc["params"][p.name] for p in command.params if p.name in doc["params"]}
    ctx.invoke(command, **params)


def main():
    cli()
