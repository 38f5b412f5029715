"""Experiment command line.

Every subcommand reads an optional flat config file plus flags, writes its
outputs under a run directory, and drops a manifest there recording the
resolved settings and content hashes of all inputs. ``rerun`` re-executes a
manifest into a fresh directory; outputs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import autodiff, classifier, linear_lens, matcher, noise_detect
from ..encoder import (
    EncoderConfig,
    ImageTensor,
    LabeledImages,
    init_params,
    train_contrastive,
    vision_embedder,
)
from ..errors import ArgumentError, EmbedLensError
from ..numerics import derive_seed
from . import csvio, dataset as dataset_mod, manifest as manifest_mod
from .metrics import quality_report
from .projection import pca_project
from .runconfig import dataset_spec_from, encoder_config_from, load_config
from .tensorio import load_named, load_params, load_tensor, save_named, save_params, save_tensor

DATASET_FILE = "dataset.ept"
DATASET_META = "dataset.json"
MODEL_FILE = "model.ept"


# ---------------------------------------------------------------------------
# dataset archive helpers
# ---------------------------------------------------------------------------


def save_dataset(out_dir: Path, ds: dataset_mod.SyntheticDataset) -> None:
    data = ds.data
    save_named(out_dir / DATASET_FILE, {
        "images": np.stack([im.pixels for im in data.images]),
        "labels": np.array(data.labels, dtype=np.float64),
        "train_idx": np.array(ds.train_idx, dtype=np.float64),
        "heldout_idx": np.array(ds.heldout_idx, dtype=np.float64),
        "class_tokens": np.array(data.class_tokens, dtype=np.float64),
    })
    (out_dir / DATASET_META).write_text(
        json.dumps({"class_names": data.class_names}, sort_keys=True) + "\n",
        newline="\n",
    )


def load_dataset(path: str | Path) -> dataset_mod.SyntheticDataset:
    path = Path(path)
    named = load_named(path / DATASET_FILE if path.is_dir() else path)
    meta_path = (path if path.is_dir() else path.parent) / DATASET_META
    names = json.loads(meta_path.read_text())["class_names"]
    images = [ImageTensor(p) for p in named["images"]]
    data = LabeledImages(
        images=images,
        labels=[int(v) for v in named["labels"]],
        class_names=names,
        class_tokens=[tuple(int(t) for t in row) for row in named["class_tokens"]],
    )
    return dataset_mod.SyntheticDataset(
        data=data,
        train_idx=[int(i) for i in named["train_idx"]],
        heldout_idx=[int(i) for i in named["heldout_idx"]],
    )


def _build_labels(params, ds: dataset_mod.SyntheticDataset, mode: str) -> classifier.LabelSet:
    train = ds.train
    if mode == "anchor":
        return classifier.labelset_anchor_mode(
            vision_embedder(params), train.images, train.labels,
            train.class_names, train.class_tokens,
        )
    if mode == "trained":
        return classifier.labelset_from_text_tower(params, train.class_names, train.class_tokens)
    raise ArgumentError(f"unknown label mode {mode!r} (want anchor|trained)")


# ---------------------------------------------------------------------------
# subcommand handlers: handler(settings, out_dir) -> (inputs, outputs)
# ---------------------------------------------------------------------------


def _sigma_grid(settings, key="sigma_grid"):
    return [float(s) for s in str(settings[key]).split(",") if s != ""]


def cmd_gen_data(settings: dict, out: Path):
    spec = dataset_mod.SyntheticDatasetSpec(
        n_classes=int(settings["n_classes"]),
        per_class=int(settings["per_class"]),
        image_hw=int(settings["image_hw"]),
        channels=int(settings["channels"]),
        seed=int(settings["seed"]),
    )
    save_dataset(out, dataset_mod.generate_dataset(spec))
    return {}, [DATASET_FILE, DATASET_META]


def cmd_init_model(settings: dict, out: Path):
    cfg = EncoderConfig(**settings["encoder"])
    save_params(out / MODEL_FILE, init_params(cfg, int(settings["seed"])))
    return {}, [MODEL_FILE]


def cmd_train(settings: dict, out: Path):
    from ..encoder import contrastive_batch_loss

    params = load_params(settings["model"])
    ds = load_dataset(settings["data"])
    train = ds.train
    probe_idx = list(range(0, len(train.images), max(1, len(train.images) // 30)))
    probe_imgs = [train.images[i] for i in probe_idx]
    probe_labs = [train.labels[i] for i in probe_idx]

    def probe_loss(p):
        return contrastive_batch_loss(p, probe_imgs, probe_labs, train.class_tokens)

    rows = [(0, probe_loss(params))]
    new = params
    for epoch in range(1, int(settings["epochs"]) + 1):
        new = train_contrastive(new, train, epochs=1, lr=float(settings["lr"]),
                                seed=derive_seed(int(settings["seed"]), "epoch", epoch))
        rows.append((epoch, probe_loss(new)))
    save_params(out / MODEL_FILE, new)
    csvio.write_csv(out / "loss.csv", ["epoch", "loss"], rows)
    return {"model": settings["model"], "data": _data_file(settings)}, [MODEL_FILE, "loss.csv"]


def _data_file(settings) -> str:
    p = Path(settings["data"])
    return str(p / DATASET_FILE if p.is_dir() else p)


def cmd_zero_shot(settings: dict, out: Path):
    params = load_params(settings["model"])
    ds = load_dataset(settings["data"])
    labels = _build_labels(params, ds, settings["mode"])
    embed = vision_embedder(params)
    split = ds.heldout if settings.get("split", "heldout") == "heldout" else ds.train
    cm = classifier.confusion_matrix(embed, labels, split.images, split.labels)
    csvio.write_confusion_csv(cm, out / "confusion.csv")
    grid_n = min(len(split.images), labels.C)
    probs = [classifier.zero_shot_probs(embed(split.images[i]), labels) for i in range(grid_n)]
    csvio.write_probability_grid_csv(probs, list(range(grid_n)), labels.names,
                                     out / "probs_grid.csv")
    (out / "summary.json").write_text(
        json.dumps({"accuracy": cm.accuracy, "total": cm.total}, sort_keys=True) + "\n",
        newline="\n")
    return {"model": settings["model"], "data": _data_file(settings)}, [
        "confusion.csv", "probs_grid.csv", "summary.json"]


def _match_config(settings) -> matcher.MatchConfig:
    return matcher.MatchConfig(
        lr=float(settings["lr"]),
        max_steps=int(settings["max_steps"]),
        cosine_target=float(settings["cosine_target"]),
        seed=int(settings["seed"]),
    )


def cmd_match(settings: dict, out: Path):
    params = load_params(settings["model"])
    ds = load_dataset(settings["data"])
    train = ds.train
    reps = matcher.class_representatives(params, train)
    idx = int(settings["image_index"])
    target_class = int(settings["target_class"])
    result = matcher.match_embedding(params, train.images[idx], reps[target_class],
                                     _match_config(settings))
    csvio.write_trace_csv(result.trace, out / "trace.csv")
    save_tensor(out / "matched.ept", result.x_matched.pixels)
    q = quality_report(train.images[idx], result.x_matched)
    (out / "quality.json").write_text(json.dumps({
        "status": result.trace.status,
        "steps": result.steps,
        "final_cosine": result.final_cosine,
        "final_loss": result.final_loss,
        "psnr_db": q.psnr_db,
        "psnr_infinite": q.psnr_infinite,
        "ssim": q.ssim,
        "mean_abs_diff": q.mean_abs_diff,
    }, sort_keys=True) + "\n", newline="\n")
    return {"model": settings["model"], "data": _data_file(settings)}, [
        "trace.csv", "matched.ept", "quality.json"]


def cmd_systematic(settings: dict, out: Path):
    params = load_params(settings["model"])
    ds = load_dataset(settings["data"])
    train = ds.train
    labels = _build_labels(params, ds, settings["mode"])
    n_images = min(int(settings["n_images"]), len(train.images))
    rng = np.random.Generator(np.random.Philox(key=derive_seed(int(settings["seed"]), "subset")))
    chosen = sorted(int(i) for i in rng.choice(len(train.images), size=n_images, replace=False))
    subset = LabeledImages(
        images=[train.images[i] for i in chosen],
        labels=[train.labels[i] for i in chosen],
        class_names=train.class_names,
        class_tokens=train.class_tokens,
    )
    report = matcher.systematic_eval(params, labels, subset, _match_config(settings),
                                     rep_data=train)
    csvio.write_systematic_csv(report, out / "records.csv")
    (out / "systematic.json").write_text(json.dumps({
        "match_rate": report.match_rate,
        "systematic_accuracy": report.systematic_accuracy,
        "n_converged": report.n_converged,
        "baseline_accuracy": report.baseline_accuracy,
        "image_indices": chosen,
    }, sort_keys=True) + "\n", newline="\n")
    return {"model": settings["model"], "data": _data_file(settings)}, [
        "records.csv", "systematic.json"]


def cmd_jacobian(settings: dict, out: Path):
    params = load_params(settings["model"])
    ds = load_dataset(settings["data"])
    img = ds.train.images[int(settings["image_index"])]
    report = autodiff.jacobian(params, img)
    spectrum = linear_lens.spectrum_report(report.J, tau=float(settings.get("tau", 0.01)))
    csvio.write_spectrum_csv(spectrum, out / "spectrum.csv")
    save_tensor(out / "jacobian.ept", report.J)
    return {"model": settings["model"], "data": _data_file(settings)}, [
        "spectrum.csv", "jacobian.ept"]


def cmd_predict_noise(settings: dict, out: Path):
    params = load_params(settings["model"])
    ds = load_dataset(settings["data"])
    labels = _build_labels(params, ds, settings["mode"])
    img = ds.train.images[int(settings["image_index"])]
    t0, t1 = int(settings["class_a"]), int(settings["class_b"])
    rows = linear_lens.predicted_vs_empirical(
        linear_lens.PixelMap(params), img.flat(),
        labels.text_embs[t0], labels.text_embs[t1],
        _sigma_grid(settings), int(settings["n_samples"]), int(settings["seed"]),
    )
    csvio.write_prediction_csv(rows, out / "prediction.csv")
    return {"model": settings["model"], "data": _data_file(settings)}, ["prediction.csv"]


def cmd_noisy_confusion(settings: dict, out: Path):
    params = load_params(settings["model"])
    ds = load_dataset(settings["data"])
    labels = _build_labels(params, ds, settings["mode"])
    train = ds.train
    embed = vision_embedder(params)
    reps = {}
    by_class: dict[int, list[int]] = {}
    for i, lab in enumerate(train.labels):
        by_class.setdefault(int(lab), []).append(i)
    for c, idxs in sorted(by_class.items()):
        embs = [embed(train.images[i]) for i in idxs]
        member, _ = matcher.class_representative(embs)
        reps[c] = train.images[idxs[member]]
    images = [reps[c] for c in range(labels.C)]
    cm = noise_detect.noisy_confusion(embed, labels, images, noise_detect.NoiseExperimentConfig(
        sigma=float(settings["sigma"]), n_samples=int(settings["n_samples"]),
        seed=int(settings["seed"])))
    csvio.write_confusion_csv(cm, out / "noisy_confusion.csv")
    return {"model": settings["model"], "data": _data_file(settings)}, ["noisy_confusion.csv"]


def cmd_detect(settings: dict, out: Path):
    params = load_params(settings["model"])
    ds = load_dataset(settings["data"])
    labels = _build_labels(params, ds, settings["mode"])
    if settings.get("image"):
        img = ImageTensor(load_tensor(settings["image"]))
        inputs = {"model": settings["model"], "data": _data_file(settings),
                  "image": settings["image"]}
    else:
        img = ds.train.images[int(settings["image_index"])]
        inputs = {"model": settings["model"], "data": _data_file(settings)}
    flag = noise_detect.detect_modified(
        vision_embedder(params), labels, img,
        noise_detect.DetectionConfig(sigma=float(settings["sigma"]),
                                     votes=int(settings["votes"]),
                                     seed=int(settings["seed"])))
    (out / "detection.json").write_text(
        json.dumps({"modified": bool(flag)}, sort_keys=True) + "\n", newline="\n")
    return inputs, ["detection.json"]


def cmd_sweep_detect(settings: dict, out: Path):
    params = load_params(settings["model"])
    ds = load_dataset(settings["data"])
    labels = _build_labels(params, ds, settings["mode"])
    train = ds.train
    embed = vision_embedder(params)
    reps = matcher.class_representatives(params, train)
    n_pairs = int(settings["n_pairs"])
    seed = int(settings["seed"])
    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "pairs")))
    originals, modified = [], []
    cfg = _match_config(settings)
    for t in range(n_pairs):
        idx = int(rng.integers(len(train.images)))
        target = int(rng.integers(labels.C))
        if target == int(train.labels[idx]):
            target = (target + 1) % labels.C
        res = matcher.match_embedding(params, train.images[idx], reps[target], cfg)
        originals.append(train.images[idx])
        modified.append(res.x_matched)
    report = noise_detect.detection_sweep(
        embed, labels, originals, modified, _sigma_grid(settings),
        noise_detect.DetectionConfig(sigma=0.0, votes=int(settings["votes"]), seed=seed))
    csvio.write_sweep_csv(report, out / "sweep.csv")
    save_named(out / "modified.ept",
               {f"img{j}": m.pixels for j, m in enumerate(modified)})
    return {"model": settings["model"], "data": _data_file(settings)}, [
        "sweep.csv", "modified.ept"]


def cmd_project(settings: dict, out: Path):
    params = load_params(settings["model"])
    ds = load_dataset(settings["data"])
    labels = _build_labels(params, ds, settings["mode"])
    embed = vision_embedder(params)
    split = ds.heldout if settings.get("split", "heldout") == "heldout" else ds.train
    embs = [embed(im) for im in split.images]
    ids = [f"img{i}" for i in range(len(embs))]
    classes = [int(c) for c in split.labels]
    inputs = {"model": settings["model"], "data": _data_file(settings)}
    if settings.get("images"):
        extra = load_named(settings["images"])
        for name in sorted(extra):
            embs.append(embed(ImageTensor(extra[name])))
            ids.append(name)
            classes.append(-1)
        inputs["images"] = settings["images"]
    proj = pca_project(embs, fit_on=list(labels.text_embs) + embs)
    csvio.write_projection_csv(ids, classes, proj.coords, out / "projection.csv")
    return inputs, ["projection.csv"]


def cmd_rerun(settings: dict, out: Path):
    stored = manifest_mod.load_manifest(settings["manifest"])
    command = stored["command"]
    handler = _HANDLERS[command]
    inputs, outputs = handler(stored["settings"], out)
    manifest_mod.write_manifest(out, command, stored["settings"],
                                {k: Path(v) for k, v in stored["input_paths"].items()},
                                outputs)
    return None  # manifest already written


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "init-model": cmd_init_model,
    "train": cmd_train,
    "zero-shot": cmd_zero_shot,
    "match": cmd_match,
    "systematic": cmd_systematic,
    "jacobian": cmd_jacobian,
    "predict-noise": cmd_predict_noise,
    "noisy-confusion": cmd_noisy_confusion,
    "detect": cmd_detect,
    "sweep-detect": cmd_sweep_detect,
    "project": cmd_project,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(sp, model=False, data=False, mode=False):
    sp.add_argument("--config", type=str, default=None, help="flat key=value config file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=str, required=True, help="run directory")
    if model:
        sp.add_argument("--model", type=str, required=True, help="model archive (EPT1)")
    if data:
        sp.add_argument("--data", type=str, required=True, help="dataset directory or archive")
    if mode:
        sp.add_argument("--mode", choices=["anchor", "trained"], default="anchor")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="embedlens",
                                 description="Embedding-space exploration toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="render the synthetic dataset")
    _add_common(sp)

    sp = sub.add_parser("init-model", help="initialize a fresh dual encoder")
    _add_common(sp)

    sp = sub.add_parser("train", help="toy contrastive training")
    _add_common(sp, model=True, data=True)
    sp.add_argument("--epochs", type=int, default=10)
    # gradients through the layer norms of the tiny-init towers are large;
    # the stable step size for plain SGD is of order 1e-5
    sp.add_argument("--lr", type=float, default=1e-5)

    sp = sub.add_parser("zero-shot", help="zero-shot confusion matrix")
    _add_common(sp, model=True, data=True, mode=True)
    sp.add_argument("--split", choices=["train", "heldout"], default="heldout")

    sp = sub.add_parser("match", help="match one image to a class representative")
    _add_common(sp, model=True, data=True)
    sp.add_argument("--image-index", type=int, required=True)
    sp.add_argument("--target-class", type=int, required=True)
    sp.add_argument("--lr", type=float, default=0.002)
    sp.add_argument("--max-steps", type=int, default=30_000)
    sp.add_argument("--cosine-target", type=float, default=0.98)

    sp = sub.add_parser("systematic", help="match every image against every other class")
    _add_common(sp, model=True, data=True, mode=True)
    sp.add_argument("--n-images", type=int, default=50)
    sp.add_argument("--lr", type=float, default=0.002)
    sp.add_argument("--max-steps", type=int, default=30_000)
    sp.add_argument("--cosine-target", type=float, default=0.98)

    sp = sub.add_parser("jacobian", help="materialize a Jacobian and its spectrum")
    _add_common(sp, model=True, data=True)
    sp.add_argument("--image-index", type=int, required=True)
    sp.add_argument("--tau", type=float, default=0.01)

    sp = sub.add_parser("predict-noise", help="predicted vs empirical two-class accuracy")
    _add_common(sp, model=True, data=True, mode=True)
    sp.add_argument("--image-index", type=int, required=True)
    sp.add_argument("--class-a", type=int, required=True)
    sp.add_argument("--class-b", type=int, required=True)
    sp.add_argument("--sigma-grid", type=str, default="0.002,0.005,0.01")
    sp.add_argument("--n-samples", type=int, default=2000)

    sp = sub.add_parser("noisy-confusion", help="confusion matrix of noisy copies")
    _add_common(sp, model=True, data=True, mode=True)
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--n-samples", type=int, default=100)

    sp = sub.add_parser("detect", help="noise-based modification flag for one image")
    _add_common(sp, model=True, data=True, mode=True)
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--votes", type=int, default=5)
    sp.add_argument("--image", type=str, default=None, help="EPT1 image tensor path")
    sp.add_argument("--image-index", type=int, default=0)

    sp = sub.add_parser("sweep-detect", help="detector accuracy over a sigma grid")
    _add_common(sp, model=True, data=True, mode=True)
    sp.add_argument("--sigma-grid", type=str, default="0,0.05,0.15,0.35,0.8,1.5")
    sp.add_argument("--votes", type=int, default=31)
    sp.add_argument("--n-pairs", type=int, default=40)
    sp.add_argument("--lr", type=float, default=0.002)
    sp.add_argument("--max-steps", type=int, default=30_000)
    sp.add_argument("--cosine-target", type=float, default=0.98)

    sp = sub.add_parser("project", help="2-D PCA projection of embeddings")
    _add_common(sp, model=True, data=True, mode=True)
    sp.add_argument("--split", choices=["train", "heldout"], default="heldout")
    sp.add_argument("--images", type=str, default=None,
                    help="named EPT1 archive of extra images to project")

    sp = sub.add_parser("rerun", help="re-execute a run from its manifest")
    sp.add_argument("--manifest", type=str, required=True)
    sp.add_argument("--out", type=str, required=True)

    return ap


def _resolve_settings(args: argparse.Namespace) -> dict:
    """Merge config-file values and flags into one JSON-able settings dict."""
    values = load_config(args.config) if args.config else {}
    cfg = encoder_config_from(values)
    settings: dict = {"seed": args.seed, "encoder": {
        "image_hw": cfg.image_hw, "channels": cfg.channels, "patch": cfg.patch,
        "d": cfg.d, "k": cfg.k, "heads": cfg.heads, "m_mlp": cfg.m_mlp,
        "layers": cfg.layers, "n_embed": cfg.n_embed, "vocab": cfg.vocab,
        "text_len": cfg.text_len, "head_init_std": cfg.head_init_std,
    }}
    if args.command == "gen-data":
        spec = dataset_spec_from(values, default_seed=args.seed)
        settings.update(n_classes=spec.n_classes, per_class=spec.per_class,
                        image_hw=spec.image_hw, channels=spec.channels,
                        seed=int(values.get("dataset_seed", args.seed)))
    for key in ("model", "data", "mode", "split", "epochs", "lr", "max_steps",
                "cosine_target", "image_index", "target_class", "n_images",
                "tau", "class_a", "class_b", "sigma_grid", "n_samples",
                "sigma", "votes", "image", "images", "n_pairs"):
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
        elif key in values:
            settings[key] = values[key]
    return settings


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "rerun":
            cmd_rerun({"manifest": args.manifest}, out)
            return 0
        settings = _resolve_settings(args)
        inputs, outputs = _HANDLERS[args.command](settings, out)
        if args.config:
            inputs = dict(inputs, config=args.config)
        manifest_mod.write_manifest(out, args.command, settings, inputs, outputs)
        return 0
    except EmbedLensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
