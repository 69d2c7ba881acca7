"""Pipeline CLI: every stage reads and writes artifacts under one run
directory, so each stage is independently re-runnable.

Exit codes: 0 success, 2 config error, 3 missing upstream artifact,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, contrastive, evalprobe, gradcon, labeling, models, synthdata
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .numerics import NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

SCORERS = ("severity", "msp", "odin", "mahalanobis")
PROBE_TASKS = tuple(synthdata.BIOMARKER_NAMES) + ("multilabel",)


class MissingArtifactError(RuntimeError):
    """An upstream stage has not produced a required artifact (exit code 3)."""


# ---------------------------------------------------------------------------
# Run-directory plumbing
# ---------------------------------------------------------------------------


def _run_config(run_dir: Path, config_path: str | None, force: bool) -> ExperimentConfig:
    stored = run_dir / "config.ini"
    if config_path is not None:
        cfg = load_config(Path(config_path))
        if stored.exists() and not force:
            if load_config(stored).config_hash() != cfg.config_hash():
                raise ConfigError(
                    "config hash differs from the run directory's config.ini; "
                    "rerun with --force to override")
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(stored)
        return cfg
    if not stored.exists():
        cfg = ExperimentConfig()
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(stored)
        return cfg
    return load_config(stored)


def _check_hash(artifact_hash: str, cfg: ExperimentConfig, what: str, force: bool):
    if artifact_hash != cfg.config_hash() and not force:
        raise ConfigError(
            f"{what} was produced under a different config "
            f"({artifact_hash} != {cfg.config_hash()}); use --force to proceed")


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"missing artifact {path}; run `sevcon {produced_by}` first")
    return path


def _write_csv(path: Path, header: list[str], rows: list[list],
               cfg: ExperimentConfig):
    with open(path, "w", newline="") as f:
        f.write(f"# config_hash={cfg.config_hash()} seed={cfg.seed}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _load_dataset(run_dir: Path, name: str, produced_by: str = "gen-data",
                  with_ground_truth: bool = True) -> synthdata.Dataset:
    directory = run_dir / "data" / name
    _require(directory / "manifest.json", produced_by)
    return synthdata.load_dataset(directory, with_ground_truth)


def _synth_config(cfg: ExperimentConfig) -> synthdata.SynthConfig:
    d = cfg.data
    return synthdata.SynthConfig(d.image_side, d.n_stripes, d.stripe_contrast,
                                 d.noise_std, cfg.seed)


def _policy(cfg: ExperimentConfig) -> contrastive.AugmentationPolicy:
    c = cfg.contrastive
    return contrastive.AugmentationPolicy(
        crop_scale=(c.crop_scale_min, c.crop_scale_max),
        flip_prob=c.flip_prob,
        brightness_jitter=c.brightness_jitter,
        contrast_jitter=c.contrast_jitter,
        normalize_mean=c.normalize_mean,
        normalize_std=c.normalize_std,
    )


def _supcon_config(cfg: ExperimentConfig, seed: int) -> contrastive.SupConConfig:
    c = cfg.contrastive
    return contrastive.SupConConfig(c.tau, c.batch_size, c.epochs, c.learning_rate,
                                    c.momentum, c.balanced_sampler, seed)


def _probe_config(cfg: ExperimentConfig, seed: int) -> evalprobe.ProbeConfig:
    p = cfg.probe
    return evalprobe.ProbeConfig(p.epochs, p.batch_size, p.learning_rate,
                                 p.momentum, seed)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_gen_data(run_dir: Path, cfg: ExperimentConfig):
    sc = _synth_config(cfg)
    d = cfg.data
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed}
    healthy = synthdata.generate_healthy(d.n_healthy, sc)
    synthdata.save_dataset(run_dir / "data" / "healthy", healthy,
                           {**meta, "split": "healthy"})
    unlabeled = synthdata.generate_unlabeled(d.n_unlabeled, d.severity_max, sc)
    synthdata.save_dataset(run_dir / "data" / "unlabeled", unlabeled,
                           {**meta, "split": "unlabeled"})
    splits = synthdata.generate_labeled_splits(
        d.n_labeled_train, d.n_test_per_biomarker, sc,
        severity_max=d.severity_max, n_multilabel_test=d.n_multilabel_test)
    synthdata.save_dataset(run_dir / "data" / "labeled_train", splits.train,
                           {**meta, "split": "labeled_train"})
    for name, ds in splits.binary_tests.items():
        synthdata.save_dataset(run_dir / "data" / f"test_{name}", ds,
                               {**meta, "split": f"test_{name}"})
    synthdata.save_dataset(run_dir / "data" / "test_multilabel", splits.multilabel_test,
                           {**meta, "split": "test_multilabel"})
    print(f"gen-data: wrote {d.n_healthy} healthy, {d.n_unlabeled} unlabeled, "
          f"labeled splits under {run_dir / 'data'}")


def stage_train_gradcon(run_dir: Path, cfg: ExperimentConfig, force: bool):
    healthy = _load_dataset(run_dir, "healthy")
    g = cfg.gradcon
    n_held = min(g.heldout_count, len(healthy) // 4)
    train_imgs = healthy.images[:len(healthy) - n_held]
    held_imgs = healthy.images[len(healthy) - n_held:]
    model = models.build_autoencoder(cfg.data.image_side, g.latent_dim,
                                     cfg.derive_seed("gradcon-model"))
    gcfg = gradcon.GradconConfig(
        alpha=g.alpha, epochs=g.epochs, batch_size=g.batch_size,
        learning_rate=g.learning_rate, momentum=g.momentum,
        warmup_learning_rate=g.warmup_learning_rate,
        constraint_in_update=g.constraint_in_update,
        seed=cfg.derive_seed("gradcon-train"))
    model, ref, log = gradcon.train_gradcon(train_imgs, gcfg, model, heldout=held_imgs)

    out = run_dir / "gradcon"
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "autoencoder.npz", Checkpoint(
        "autoencoder", model.param_dict(), epoch=g.epochs,
        config_hash=cfg.config_hash(), seed=cfg.derive_seed("gradcon-train"),
        extra={"image_side": cfg.data.image_side, "latent_dim": g.latent_dim,
               "model_seed": cfg.derive_seed("gradcon-model")}))
    save_checkpoint(out / "reference.npz", Checkpoint(
        "reference-gradients",
        {f"layer{i}": m for i, m in enumerate(ref.layer_means)},
        config_hash=cfg.config_hash(), seed=cfg.derive_seed("gradcon-train"),
        extra={"count": ref.count}))
    _write_csv(out / "training_log.csv",
               ["epoch", "mean_recon", "mean_alignment", "heldout_alignment"],
               [[e["epoch"], e["mean_recon"], e["mean_alignment"],
                 e.get("heldout_alignment", float("nan"))] for e in log], cfg)
    print(f"train-gradcon: {g.epochs} epochs, final recon "
          f"{log[-1]['mean_recon']:.5f}, reference count {ref.count}")


def _load_gradcon(run_dir: Path, cfg: ExperimentConfig, force: bool):
    ckpt = load_checkpoint(_require(run_dir / "gradcon" / "autoencoder.npz",
                                    "train-gradcon"))
    _check_hash(ckpt.config_hash, cfg, "gradcon autoencoder", force)
    model = models.build_autoencoder(ckpt.extra["image_side"], ckpt.extra["latent_dim"],
                                     ckpt.extra["model_seed"])
    model.load_param_dict(ckpt.params)
    rckpt = load_checkpoint(_require(run_dir / "gradcon" / "reference.npz",
                                     "train-gradcon"))
    n_layers = len(rckpt.params)
    ref = gradcon.ReferenceGradients(
        [rckpt.params[f"layer{i}"] for i in range(n_layers)], rckpt.extra["count"])
    return model, ref


def _train_or_load_classifier(run_dir: Path, cfg: ExperimentConfig, force: bool):
    path = run_dir / "baselines" / "classifier.npz"
    train = _load_dataset(run_dir, "labeled_train")
    b = cfg.baselines
    if path.exists():
        ckpt = load_checkpoint(path)
        _check_hash(ckpt.config_hash, cfg, "supervised classifier", force)
        backbone = models.build_backbone(cfg.data.image_side, 64,
                                         cfg.derive_seed("classifier"))
        backbone.load_param_dict(
            {k[len("b."):]: v for k, v in ckpt.params.items() if k.startswith("b.")})
        combo_classes = np.array(ckpt.extra["combo_classes"], dtype=np.int64)
        rng_head = np.random.default_rng(0)
        from .numerics import Dense, Network
        ml_head = Network([Dense(64, synthdata.N_BIOMARKERS, rng_head)])
        combo_head = Network([Dense(64, combo_classes.shape[0], rng_head)])
        ml_head.load_param_dict(
            {k[len("h."):]: v for k, v in ckpt.params.items() if k.startswith("h.")})
        combo_head.load_param_dict(
            {k[len("c."):]: v for k, v in ckpt.params.items() if k.startswith("c.")})
        return baselines.SupervisedClassifier(backbone, ml_head, combo_head,
                                              combo_classes), train
    ccfg = baselines.ClassifierConfig(b.classifier_epochs, b.classifier_batch_size,
                                      b.classifier_learning_rate, b.classifier_momentum,
                                      cfg.derive_seed("classifier"))
    clf = baselines.train_supervised_classifier(train.images, train.multihot(), ccfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = {f"b.{k}": v for k, v in clf.backbone.net.named_params()}
    params.update({f"h.{k}": v for k, v in clf.multilabel_head.named_params()})
    params.update({f"c.{k}": v for k, v in clf.combo_head.named_params()})
    save_checkpoint(path, Checkpoint(
        "classifier", params, config_hash=cfg.config_hash(),
        seed=cfg.derive_seed("classifier"),
        extra={"combo_classes": clf.combo_classes.tolist()}))
    return clf, train


def _score_corpus(run_dir: Path, cfg: ExperimentConfig, scorer: str, force: bool):
    unlabeled = _load_dataset(run_dir, "unlabeled").training_view()
    if scorer == "severity":
        model, ref = _load_gradcon(run_dir, cfg, force)
        scores = gradcon.score_dataset(model, ref, unlabeled.images, cfg.gradcon.alpha)
        rows = [[sid, s.l_recon, s.l_grad, s.value]
                for sid, s in zip(unlabeled.sample_ids, scores)]
        return unlabeled, rows
    clf, train = _train_or_load_classifier(run_dir, cfg, force)
    b = cfg.baselines
    values = baselines.score_corpus(
        clf, unlabeled.images, scorer, odin_T=b.odin_temperature,
        odin_eps=b.odin_epsilon, mahalanobis_eps=b.mahalanobis_epsilon,
        train_images=train.images, train_multihot=train.multihot())
    rows = [[sid, float("nan"), float("nan"), float(v)]
            for sid, v in zip(unlabeled.sample_ids, values)]
    return unlabeled, rows


def stage_score(run_dir: Path, cfg: ExperimentConfig, scorer: str, force: bool):
    _, rows = _score_corpus(run_dir, cfg, scorer, force)
    out = run_dir / "scores"
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / f"{scorer}.csv", ["sample_id", "l_recon", "l_grad", "severity"],
               rows, cfg)
    print(f"score: wrote {len(rows)} {scorer} scores")


def _load_scores(run_dir: Path, scorer: str) -> tuple[list[str], np.ndarray]:
    path = _require(run_dir / "scores" / f"{scorer}.csv", f"score --scorer {scorer}")
    records = _read_csv(path)
    ids = [r["sample_id"] for r in records]
    return ids, np.array([float(r["severity"]) for r in records])


def stage_make_labels(run_dir: Path, cfg: ExperimentConfig, n_bins: int, scorer: str):
    ids, scores = _load_scores(run_dir, scorer)
    try:
        lab = labeling.assign_severity_labels(scores, n_bins)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = run_dir / "labels"
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / f"{scorer}_bins{n_bins}.csv",
               ["sample_id", "severity", "bin_label"],
               [[sid, float(s), int(l)] for sid, s, l in zip(ids, scores, lab.labels)],
               cfg)
    print(f"make-labels: {len(ids)} samples into {n_bins} bins "
          f"(sizes {lab.bin_sizes.min()}..{lab.bin_sizes.max()})")


def _load_labels(run_dir: Path, scorer: str, n_bins: int,
                 sample_ids: list[str]) -> np.ndarray:
    path = _require(run_dir / "labels" / f"{scorer}_bins{n_bins}.csv",
                    f"make-labels --bins {n_bins} --scorer {scorer}")
    records = {r["sample_id"]: int(r["bin_label"]) for r in _read_csv(path)}
    return np.array([records[sid] for sid in sample_ids], dtype=np.int64)


def _backbone_tag(mode: str, scorer: str, n_bins: int) -> str:
    if mode == "severity":
        return f"{scorer}_b{n_bins}"
    return mode  # "simclr" or "random"


def stage_pretrain(run_dir: Path, cfg: ExperimentConfig, mode: str, scorer: str,
                   n_bins: int, force: bool):
    unlabeled = _load_dataset(run_dir, "unlabeled").training_view()
    tag = _backbone_tag(mode, scorer, n_bins)
    c = cfg.contrastive
    backbone = models.build_backbone(cfg.data.image_side, c.embedding_dim,
                                     cfg.derive_seed("pretrain-backbone"))
    head = models.build_projection_head(c.embedding_dim, c.projection_dim,
                                        cfg.derive_seed("pretrain-head"))
    # the training seed is shared across modes so that severity, simclr, and
    # random runs are a paired comparison: same init, batches, augmentations
    scfg = _supcon_config(cfg, cfg.derive_seed("pretrain-train"))
    policy = _policy(cfg)
    if mode == "severity":
        pseudo = _load_labels(run_dir, scorer, n_bins, unlabeled.sample_ids)
        curve = contrastive.pretrain(backbone, head, unlabeled.images, pseudo,
                                     policy, scfg)
    elif mode == "simclr":
        curve = contrastive.simclr_mode(backbone, head, unlabeled.images, policy, scfg)
    elif mode == "random":
        curve = []  # frozen random-init baseline: no training
    else:
        raise ConfigError(f"unknown pretrain mode {mode!r}")

    out = run_dir / "pretrain"
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / f"backbone_{tag}.npz", Checkpoint(
        "backbone", backbone.param_dict(),
        epoch=len(curve), config_hash=cfg.config_hash(),
        seed=cfg.derive_seed("pretrain-train"),
        extra={"image_side": cfg.data.image_side, "embedding_dim": c.embedding_dim,
               "model_seed": cfg.derive_seed("pretrain-backbone"), "tag": tag}))
    _write_csv(out / f"loss_{tag}.csv", ["epoch", "mean_loss"],
               [[i, v] for i, v in enumerate(curve)], cfg)
    last = f", final loss {curve[-1]:.4f}" if curve else ""
    print(f"pretrain[{tag}]: {len(curve)} epochs{last}")


def _load_backbone(run_dir: Path, cfg: ExperimentConfig, tag: str, force: bool):
    ckpt = load_checkpoint(_require(run_dir / "pretrain" / f"backbone_{tag}.npz",
                                    f"pretrain (tag {tag})"))
    _check_hash(ckpt.config_hash, cfg, f"backbone {tag}", force)
    backbone = models.build_backbone(ckpt.extra["image_side"],
                                     ckpt.extra["embedding_dim"],
                                     ckpt.extra["model_seed"])
    backbone.load_param_dict(ckpt.params)
    return backbone


def stage_probe(run_dir: Path, cfg: ExperimentConfig, task: str, tag: str, force: bool):
    backbone = _load_backbone(run_dir, cfg, tag, force)
    train = _load_dataset(run_dir, "labeled_train")
    multihot = train.multihot()
    if task == "multilabel":
        y = multihot
        out_dim = synthdata.N_BIOMARKERS
    else:
        y = multihot[:, synthdata.BIOMARKER_NAMES.index(task)]
        out_dim = 1
    head = models.build_classifier_head(backbone.embedding_dim, out_dim,
                                        cfg.derive_seed(f"probe-head-{task}"))
    pcfg = _probe_config(cfg, cfg.derive_seed(f"probe-train-{task}"))
    norm = (cfg.contrastive.normalize_mean, cfg.contrastive.normalize_std)
    evalprobe.train_probe(backbone, head, train.images, y, pcfg, normalize=norm)
    out = run_dir / "probe"
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / f"head_{tag}_{task}.npz", Checkpoint(
        "classifier-head", head.param_dict(), epoch=pcfg.epochs,
        config_hash=cfg.config_hash(), seed=pcfg.seed,
        extra={"tag": tag, "task": task, "output_dim": out_dim,
               "embedding_dim": backbone.embedding_dim}))
    print(f"probe[{tag}/{task}]: trained linear head")


def _load_head(run_dir: Path, cfg: ExperimentConfig, tag: str, task: str, force: bool):
    path = run_dir / "probe" / f"head_{tag}_{task}.npz"
    if not path.exists():
        return None
    ckpt = load_checkpoint(path)
    _check_hash(ckpt.config_hash, cfg, f"probe head {tag}/{task}", force)
    head = models.build_classifier_head(ckpt.extra["embedding_dim"],
                                        ckpt.extra["output_dim"], 0)
    head.load_param_dict(ckpt.params)
    return head


def stage_evaluate(run_dir: Path, cfg: ExperimentConfig, tag: str, force: bool):
    backbone = _load_backbone(run_dir, cfg, tag, force)
    binary_heads, binary_tests = {}, {}
    for name in synthdata.BIOMARKER_NAMES:
        head = _load_head(run_dir, cfg, tag, name, force)
        if head is not None:
            ds = _load_dataset(run_dir, f"test_{name}")
            binary_heads[name] = head
            binary_tests[name] = (ds.images,
                                  ds.multihot()[:, synthdata.BIOMARKER_NAMES.index(name)])
    ml_head = _load_head(run_dir, cfg, tag, "multilabel", force)
    ml_test = None
    if ml_head is not None:
        ds = _load_dataset(run_dir, "test_multilabel")
        ml_test = (ds.images, ds.multihot())
    if not binary_heads and ml_head is None:
        raise MissingArtifactError(
            f"no trained probe heads for tag {tag}; run `sevcon probe` first")
    norm = (cfg.contrastive.normalize_mean, cfg.contrastive.normalize_std)
    result = evalprobe.evaluate(backbone, binary_heads, binary_tests, ml_head, ml_test,
                                provenance={"config_hash": cfg.config_hash(),
                                            "seed": cfg.seed, "tag": tag},
                                normalize=norm)
    out = run_dir / "probe"
    out.mkdir(parents=True, exist_ok=True)
    (out / f"result_{tag}.json").write_text(result.to_json())
    ml = f", mean AUC {result.mean_auc:.4f}" if result.per_label_auc else ""
    print(f"evaluate[{tag}]: {len(binary_heads)} binary tasks{ml}")


def stage_ablate(run_dir: Path, cfg: ExperimentConfig, n_bins: int, force: bool):
    unlabeled = _load_dataset(run_dir, "unlabeled").training_view()
    scores_by_scorer = {}
    for scorer in SCORERS:
        ids, scores = _load_scores(run_dir, scorer)
        if ids != unlabeled.sample_ids:
            raise MissingArtifactError(f"score file for {scorer} does not match corpus")
        scores_by_scorer[scorer] = scores
    train = _load_dataset(run_dir, "labeled_train")
    ml = _load_dataset(run_dir, "test_multilabel")
    rows = baselines.ablation_run(
        scores_by_scorer, unlabeled.images,
        (train.images, train.multihot()), (ml.images, ml.multihot()),
        n_bins, _policy(cfg), _supcon_config(cfg, 0),
        _probe_config(cfg, 0), cfg.derive_seed("ablate"))
    out = run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "ablation.csv", ["scorer", "n_bins", "mean_auc"],
               [[r["scorer"], r["n_bins"], r["mean_auc"]] for r in rows], cfg)
    print(f"ablate: {len(rows)} scorers at N={n_bins}")


def stage_report(run_dir: Path, cfg: ExperimentConfig, force: bool):
    out = run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    tags = [f"severity_b{n}" for n in cfg.labeling.report_bin_list()]
    tags += ["simclr", "random"]
    rows = []
    included = []
    for tag in tags:
        path = run_dir / "probe" / f"result_{tag}.json"
        if not path.exists():
            continue
        result = evalprobe.ProbeResult.from_json(path.read_text())
        row = [tag]
        for name in synthdata.BIOMARKER_NAMES:
            if name in result.per_biomarker:
                m = result.per_biomarker[name]
                row.append(f"{m['accuracy']:.4f}/{m['f1']:.4f}")
            else:
                row.append("")
        row.append(result.mean_auc)
        rows.append(row)
        included.append(tag)
    if not rows:
        raise MissingArtifactError(
            "no probe results found; run `sevcon evaluate` for at least one tag")
    _write_csv(out / "table1.csv",
               ["method", *synthdata.BIOMARKER_NAMES, "multi_label"], rows, cfg)

    # Fig. 5 analog: contact sheet of extreme severity bins with ground truth.
    extremes = None
    labels_path = run_dir / "labels" / f"severity_bins{cfg.labeling.n_bins}.csv"
    if labels_path.exists():
        unlabeled = _load_dataset(run_dir, "unlabeled")
        records = _read_csv(labels_path)
        bins = np.array([int(r["bin_label"]) for r in records])
        scores = np.array([float(r["severity"]) for r in records])
        lab = labeling.SeverityLabeling(
            cfg.labeling.n_bins, bins, np.argsort(scores, kind="stable"),
            np.bincount(bins, minlength=cfg.labeling.n_bins))
        k = min(cfg.labeling.extreme_report_k, int(lab.bin_sizes.min()))
        report = labeling.extreme_bin_report(lab, unlabeled.images, k,
                                             seed=cfg.derive_seed("report"))
        labeling.write_pgm(out / "extreme_bins.pgm", report.pop("contact_sheet"))
        gt = unlabeled.severities()
        report["low_bin_mean_gt_severity"] = float(np.mean(gt[report["low_bin_ids"]]))
        report["high_bin_mean_gt_severity"] = float(np.mean(gt[report["high_bin_ids"]]))
        (out / "extremes.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        extremes = report

    (out / "report.json").write_text(json.dumps({
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "methods": included,
        "has_ablation": (out / "ablation.csv").exists(),
        "has_extremes": extremes is not None,
    }, indent=2, sort_keys=True))
    print(f"report: table1.csv with {len(rows)} methods"
          + (", extreme-bin sheet" if extremes else ""))


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sevcon",
        description="Severity pseudo-labeling + supervised contrastive pipeline")
    parser.add_argument("--run-dir", required=True, help="run directory for artifacts")
    parser.add_argument("--config", help="INI config file (stored into the run dir)")
    parser.add_argument("--force", action="store_true",
                        help="proceed despite config-hash mismatches")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data")
    sub.add_parser("train-gradcon")
    p = sub.add_parser("score")
    p.add_argument("--scorer", choices=SCORERS, default="severity")
    p = sub.add_parser("make-labels")
    p.add_argument("--bins", type=int, required=True)
    p.add_argument("--scorer", choices=SCORERS, default="severity")
    p = sub.add_parser("pretrain")
    p.add_argument("--mode", choices=("severity", "simclr", "random"),
                   default="severity")
    p.add_argument("--scorer", choices=SCORERS, default="severity")
    p.add_argument("--bins", type=int, default=None)
    p = sub.add_parser("probe")
    p.add_argument("--task", choices=PROBE_TASKS, required=True)
    p.add_argument("--tag", required=True, help="backbone tag, e.g. severity_b250")
    p = sub.add_parser("evaluate")
    p.add_argument("--tag", required=True)
    p = sub.add_parser("ablate")
    p.add_argument("--bins", type=int, required=True)
    sub.add_parser("report")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    run_dir = Path(args.run_dir)
    try:
        cfg = _run_config(run_dir, args.config, args.force)
        if args.command == "gen-data":
            stage_gen_data(run_dir, cfg)
        elif args.command == "train-gradcon":
            stage_train_gradcon(run_dir, cfg, args.force)
        elif args.command == "score":
            stage_score(run_dir, cfg, args.scorer, args.force)
        elif args.command == "make-labels":
            stage_make_labels(run_dir, cfg, args.bins, args.scorer)
        elif args.command == "pretrain":
            n_bins = args.bins if args.bins is not None else cfg.labeling.n_bins
            stage_pretrain(run_dir, cfg, args.mode, args.scorer, n_bins, args.force)
        elif args.command == "probe":
            stage_probe(run_dir, cfg, args.task, args.tag, args.force)
        elif args.command == "evaluate":
            stage_evaluate(run_dir, cfg, args.tag, args.force)
        elif args.command == "ablate":
            stage_ablate(run_dir, cfg, args.bins, args.force)
        elif args.command == "report":
            stage_report(run_dir, cfg, args.force)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
