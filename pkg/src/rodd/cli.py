"""Command-line pipeline: synth | pretrain | train | fit | score | eval |
corrupt | verify-theory.

Every stage reads its inputs from and writes its artifacts into the --out
directory, so stages can be rerun or swapped individually (externally
produced RODDFEAT1 features can be scored without the encoder).  Each
invocation appends an entry to run.json recording the config hash, the seed,
and the artifact paths.  Exit codes: 0 success, 1 contract/format errors,
2 numeric failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import contrastive, corruptions, encoder, metrics, ood, theory
from .data import (
    Dataset,
    RunConfig,
    parse_config_file,
    parse_float_list,
    parse_int_list,
    read_features,
    write_features,
)
from .errors import ContractViolation, FormatError, NumericFailure
from .linalg import orthonormal_init

COMMANDS = (
    "synth",
    "pretrain",
    "train",
    "fit",
    "score",
    "eval",
    "corrupt",
    "verify-theory",
)


def main(argv=None) -> None:
    sys.exit(run(argv))


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        config = parse_config_file(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = _HANDLERS[args.command]
        artifacts = handler(config, out, args.seed)
        _append_manifest(args, config, out, artifacts)
        return 0
    except (ContractViolation, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rodd",
        description="OOD detection pipeline with orthonormal class embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="run configuration file")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="seed override")
    return parser


def _stage_seed(config: RunConfig, section: str, override) -> int:
    if override is not None:
        return int(override)
    return int(config.get(f"{section}.seed", 0))


def _need(path: Path) -> Path:
    if not path.exists():
        raise FormatError(f"missing artifact: {path}")
    return path


def _read_dataset(path: Path) -> Dataset:
    feats, labels = read_features(_need(path))
    class_count = int(labels.max()) + 1 if labels is not None and labels.size else 0
    return Dataset(feats, labels, class_count)


def _json_dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _append_manifest(args, config: RunConfig, out: Path, artifacts: dict) -> None:
    manifest_path = out / "run.json"
    runs = []
    if manifest_path.exists():
        runs = json.loads(manifest_path.read_text(encoding="utf-8")).get("runs", [])
    digest = hashlib.sha256(Path(args.config).read_bytes()).hexdigest()
    runs.append(
        {
            "command": args.command,
            "config_path": str(args.config),
            "config_sha256": digest,
            "seed": args.seed,
            "out": str(out),
            "artifacts": {k: str(v) for k, v in sorted(artifacts.items())},
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
    )
    _json_dump(manifest_path, {"runs": runs})


# ---------------------------------------------------------------------------
# Stage handlers
# ---------------------------------------------------------------------------


def _cmd_synth(config: RunConfig, out: Path, seed_override) -> dict:
    from .data import synth_gaussian_mixture, synth_ood_cluster

    seed = _stage_seed(config, "synth", seed_override)
    n_classes = int(config.get("synth.classes", 4))
    per_class = int(config.get("synth.per_class", 500))
    test_per_class = int(config.get("synth.test_per_class", max(1, per_class // 5)))
    input_dim = int(config.get("synth.input_dim", 32))
    separation = float(config.get("synth.separation", 6.0))
    noise_sigma = float(config.get("synth.noise_sigma", 1.0))
    full = synth_gaussian_mixture(
        n_classes, per_class + test_per_class, input_dim, separation, noise_sigma, seed
    )
    train_idx, test_idx = [], []
    block = per_class + test_per_class
    for cls in range(n_classes):
        start = cls * block
        train_idx.extend(range(start, start + per_class))
        test_idx.extend(range(start + per_class, start + block))
    ood_set = synth_ood_cluster(
        input_dim,
        int(config.get("synth.ood_n", 500)),
        int(config.get("synth.ood_direction_seed", seed + 1)),
        float(config.get("synth.ood_offset_norm", 9.0)),
        float(config.get("synth.ood_noise_sigma", noise_sigma)),
        seed + 2,
    )
    id_train = full.inputs[train_idx]
    id_test = full.inputs[test_idx]
    ood_inputs = ood_set.inputs
    if bool(config.get("synth.scale_to_unit", True)):
        # Global affine map fitted on ID training data (robust percentile
        # range); keeps the geometry intact while making corruption kinds
        # (which expect [0, 1] inputs) applicable.  Values outside the
        # percentile range, including OOD ones, are clipped into [0, 1].
        lo, hi = np.percentile(id_train, [0.5, 99.5])
        span = max(float(hi - lo), 1e-12)
        scale = lambda x: np.clip((x - lo) / span, 0.0, 1.0)  # noqa: E731
        id_train, id_test, ood_inputs = scale(id_train), scale(id_test), scale(ood_inputs)
    labels_train = full.labels[train_idx]
    labels_test = full.labels[test_idx]
    artifacts = {
        "id_train": out / "id_train.feat",
        "id_test": out / "id_test.feat",
        "ood": out / "ood.feat",
    }
    write_features(artifacts["id_train"], id_train, labels_train)
    write_features(artifacts["id_test"], id_test, labels_test)
    write_features(artifacts["ood"], ood_inputs, None)
    return artifacts


def _build_model_from_config(config: RunConfig, input_dim: int, n_classes: int):
    hidden = tuple(
        parse_int_list(str(config.get("model.hidden_sizes", "128,64")), "model.hidden_sizes")
    )
    return encoder.build_model(
        input_dim,
        n_classes,
        hidden_sizes=hidden,
        feature_dim=int(config.get("model.feature_dim", 16)),
        seed=int(config.get("model.seed", 0)),
    )


def _aug_from_config(config: RunConfig, section: str) -> contrastive.AugmentationSpec:
    return contrastive.AugmentationSpec(
        gaussian_sigma=float(config.get(f"{section}.aug_gaussian_sigma", 0.1)),
        mask_fraction=float(config.get(f"{section}.aug_mask_fraction", 0.0)),
        scale_jitter=float(config.get(f"{section}.aug_scale_jitter", 0.0)),
    )


def _cmd_pretrain(config: RunConfig, out: Path, seed_override) -> dict:
    dataset = _read_dataset(out / "id_train.feat")
    model = _build_model_from_config(config, dataset.input_dim, dataset.class_count)
    adv = None
    if bool(config.get("pretrain.adversarial", False)):
        adv = contrastive.AdversarialSpec(
            epsilon=float(config.get("pretrain.adv_epsilon", 0.03)),
            steps=int(config.get("pretrain.adv_steps", 3)),
            step_size=float(config.get("pretrain.adv_step_size", 0.01)),
        )
    cfg = contrastive.PretrainConfig(
        epochs=int(config.get("pretrain.epochs", 20)),
        batch_size=int(config.get("pretrain.batch_size", 64)),
        lr=float(config.get("pretrain.lr", 0.05)),
        momentum=float(config.get("pretrain.momentum", 0.9)),
        aug=_aug_from_config(config, "pretrain"),
        adv=adv,
        seed=_stage_seed(config, "pretrain", seed_override),
    )
    model, history = contrastive.pretrain(model, dataset, cfg)
    artifacts = {"model": out / "model.ckpt", "pretrain_history": out / "pretrain_history.json"}
    encoder.save_model(artifacts["model"], model)
    _json_dump(artifacts["pretrain_history"], {"loss": history})
    return artifacts


def _cmd_train(config: RunConfig, out: Path, seed_override) -> dict:
    dataset = _read_dataset(out / "id_train.feat")
    ckpt = out / "model.ckpt"
    if ckpt.exists():
        model = encoder.load_model(ckpt)
    else:
        model = _build_model_from_config(config, dataset.input_dim, dataset.class_count)
    cfg = encoder.TrainConfig(
        epochs=int(config.get("train.epochs", 40)),
        batch_size=int(config.get("train.batch_size", 64)),
        lr=float(config.get("train.lr", 0.05)),
        momentum=float(config.get("train.momentum", 0.9)),
        mu=float(config.get("train.mu", 0.0)),
        seed=_stage_seed(config, "train", seed_override),
        contrastive=bool(config.get("train.contrastive", False)),
        aug_gaussian_sigma=float(config.get("train.aug_gaussian_sigma", 0.05)),
        input_noise=float(config.get("train.input_noise", 0.0)),
        grad_clip=float(config.get("train.grad_clip", 5.0)),
    )
    model, history = encoder.train(model, dataset, cfg)
    artifacts = {"model": ckpt, "train_history": out / "train_history.json"}
    encoder.save_model(ckpt, model)
    _json_dump(artifacts["train_history"], {"history": history})
    return artifacts


def _cmd_fit(config: RunConfig, out: Path, seed_override) -> dict:
    dataset = _read_dataset(out / "id_train.feat")
    if dataset.labels is None:
        raise ContractViolation("fit requires a labeled id_train.feat")
    model = encoder.load_model(_need(out / "model.ckpt"))
    feats = encoder.features(model, dataset.inputs)
    subspaces = ood.fit_subspaces(
        feats,
        dataset.labels,
        quantile=float(config.get("ood.quantile", 0.95)),
        abs_cosine=bool(config.get("ood.abs_cosine", False)),
    )
    artifacts = {
        "subspaces": out / "subspaces.json",
        "id_train_features": out / "id_train_features.feat",
    }
    write_features(artifacts["id_train_features"], feats, dataset.labels)
    _json_dump(artifacts["subspaces"], ood.subspaces_to_dict(subspaces))
    return artifacts


def _load_scoring_state(out: Path):
    model = encoder.load_model(_need(out / "model.ckpt"))
    payload = json.loads(_need(out / "subspaces.json").read_text(encoding="utf-8"))
    return model, ood.subspaces_from_dict(payload)


def _resolve_target(out: Path, name: str) -> Path:
    candidate = out / name
    return candidate if candidate.exists() else _need(Path(name))


def _cmd_score(config: RunConfig, out: Path, seed_override) -> dict:
    model, subspaces = _load_scoring_state(out)
    target = _resolve_target(out, str(config.get("ood.target", "id_test.feat")))
    dataset = _read_dataset(target)
    abs_cosine = bool(config.get("ood.abs_cosine", False))
    mode = str(config.get("ood.mode", "single"))
    if mode == "single":
        feats = encoder.features(model, dataset.inputs)
        records = ood.score_records(feats, subspaces, abs_cosine=abs_cosine)
    elif mode == "mc":
        seed = _stage_seed(config, "ood", seed_override)
        noise = contrastive.AugmentationSpec(
            gaussian_sigma=float(config.get("ood.mc_noise_sigma", 0.01))
        )
        k_draws = int(config.get("ood.mc_draws", 50))
        records = [
            ood.mc_detect(
                model,
                subspaces,
                dataset.inputs[i],
                k_draws=k_draws,
                noise=noise,
                seed=seed ^ i,
                sample_id=i,
                abs_cosine=abs_cosine,
            )
            for i in range(dataset.n)
        ]
    else:
        raise ContractViolation(f"ood.mode must be 'single' or 'mc', got {mode!r}")
    stem = target.stem
    artifacts = {f"{stem}_scores": out / f"{stem}_scores.csv"}
    ood.write_scores(artifacts[f"{stem}_scores"], records)
    return artifacts


def _cmd_corrupt(config: RunConfig, out: Path, seed_override) -> dict:
    target = _resolve_target(out, str(config.get("corruption.target", "ood.feat")))
    dataset = _read_dataset(target)
    kind = str(config.get("corruption.kind", "gaussian_noise"))
    severities = parse_int_list(str(config.get("corruption.severities", "1,2,3,4,5")), "corruption.severities")
    seed = _stage_seed(config, "corruption", seed_override)
    artifacts = {}
    for severity in severities:
        spec = corruptions.CorruptionSpec(kind, severity, seed)
        corrupted = corruptions.corrupt_dataset(dataset, spec)
        name = f"{target.stem}_{kind}_s{severity}"
        artifacts[name] = out / f"{name}.feat"
        write_features(artifacts[name], corrupted.inputs, corrupted.labels)
    return artifacts


def _oriented_scores(model, subspaces, inputs, method: str, abs_cosine: bool):
    if method == "rodd":
        feats = encoder.features(model, inputs)
        deltas, _ = ood.uncertainty_scores(feats, subspaces, abs_cosine=abs_cosine)
        return -deltas, deltas
    if method == "msp":
        record = encoder.forward(model, inputs, mode="eval")
        probs = encoder.softmax(record.logits)
        top = probs.max(axis=1)
        return top, None
    raise ContractViolation(f"eval.method must be 'rodd' or 'msp', got {method!r}")


def eval_pipeline(config: RunConfig, out: Path) -> dict:
    """Score ID test and OOD sets (clean plus configured corruption sweep).

    Emits one report row per (ood_set, corruption, severity) with the exact
    EvalReport fields, plus the clean ID accuracy.
    """
    model, subspaces = _load_scoring_state(out)
    id_test = _read_dataset(out / "id_test.feat")
    ood_set = _read_dataset(out / "ood.feat")
    method = str(config.get("eval.method", "rodd"))
    abs_cosine = bool(config.get("ood.abs_cosine", False))
    tpr_target = float(config.get("eval.tpr_target", 0.95))

    id_scores, _ = _oriented_scores(model, subspaces, id_test.inputs, method, abs_cosine)
    record = encoder.forward(model, id_test.inputs, mode="eval")
    id_accuracy = (
        metrics.accuracy(record.logits, id_test.labels)
        if id_test.labels is not None
        else None
    )

    rows = []
    score_tables = {}

    def add_row(name, corruption, severity, id_side, ood_side):
        split = metrics.ScoreSplit(id_side, ood_side)
        report = metrics.evaluate_split(split, tpr_target)
        rows.append(
            {
                "ood_set": name,
                "corruption": corruption,
                "severity": severity,
                **report.to_dict(),
            }
        )

    ood_scores, _ = _oriented_scores(model, subspaces, ood_set.inputs, method, abs_cosine)
    add_row("ood", "none", 0, id_scores, ood_scores)
    if method == "rodd":
        score_tables["id_test"] = ood.score_records(
            encoder.features(model, id_test.inputs), subspaces, abs_cosine=abs_cosine
        )
        score_tables["ood"] = ood.score_records(
            encoder.features(model, ood_set.inputs), subspaces, abs_cosine=abs_cosine
        )

    kind = config.get("corruption.kind")
    if kind is not None:
        severities = parse_int_list(
            str(config.get("corruption.severities", "1,2,3,4,5")),
            "corruption.severities",
        )
        apply_to = str(config.get("corruption.apply_to", "ood"))
        if apply_to not in ("ood", "id"):
            raise ContractViolation(
                f"corruption.apply_to must be 'ood' or 'id', got {apply_to!r}"
            )
        seed = int(config.get("corruption.seed", 0))
        for severity in severities:
            spec = corruptions.CorruptionSpec(str(kind), severity, seed)
            if apply_to == "ood":
                corrupted = corruptions.corrupt_dataset(ood_set, spec)
                cur_scores, _ = _oriented_scores(
                    model, subspaces, corrupted.inputs, method, abs_cosine
                )
                add_row("ood", str(kind), severity, id_scores, cur_scores)
            else:
                corrupted = corruptions.corrupt_dataset(id_test, spec)
                cur_scores, _ = _oriented_scores(
                    model, subspaces, corrupted.inputs, method, abs_cosine
                )
                add_row("ood", str(kind), severity, cur_scores, ood_scores)
    return {"method": method, "id_accuracy": id_accuracy, "rows": rows, "score_tables": score_tables}


def _cmd_eval(config: RunConfig, out: Path, seed_override) -> dict:
    result = eval_pipeline(config, out)
    artifacts = {"eval_json": out / "eval.json", "eval_csv": out / "eval.csv"}
    payload = {
        "method": result["method"],
        "id_accuracy": result["id_accuracy"],
        "rows": result["rows"],
    }
    _json_dump(artifacts["eval_json"], payload)
    header = "ood_set,corruption,severity," + metrics.report_csv_header()
    lines = [header]
    for row in result["rows"]:
        report = metrics.EvalReport(
            fpr95=row["fpr95"],
            auroc=row["auroc"],
            detection_error=row["detection_error"],
            n_id=row["n_id"],
            n_ood=row["n_ood"],
            threshold_used=row["threshold_used"],
        )
        lines.append(f"{row['ood_set']},{row['corruption']},{row['severity']},{report.csv_row()}")
    artifacts["eval_csv"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    for name, records in result["score_tables"].items():
        artifacts[f"{name}_scores"] = out / f"{name}_scores.csv"
        ood.write_scores(artifacts[f"{name}_scores"], records)
    return artifacts


def _cmd_verify_theory(config: RunConfig, out: Path, seed_override) -> dict:
    seed = _stage_seed(config, "theory", seed_override)
    sizes = parse_int_list(str(config.get("theory.class_sizes", "6,5")), "theory.class_sizes")
    graph = theory.build_adjacency(
        sizes,
        float(config.get("theory.delta", 0.05)),
        float(config.get("theory.eta", 0.0)),
        seed,
        str(config.get("theory.normalization", "unit-spectral-per-block")),
    )
    d = int(config.get("theory.d", graph.n))
    proj = orthonormal_init(d, len(sizes), seed + 1)
    targets = theory.one_hot_targets(graph)
    opts = theory.SolveOptions(
        max_iters=int(config.get("theory.max_iters", 2000)),
        lr=float(config.get("theory.lr", 0.05)),
        tol=float(config.get("theory.tol", 1e-12)),
        seed=seed,
    )
    mu = float(config.get("theory.mu", 1e-4))
    result = theory.solve_joint(graph, proj, targets, mu, replace(opts))
    lemma_report = theory.verify_lemma(graph, d, result)
    mu_values = parse_float_list(
        str(config.get("theory.mu_values", "1e-6,1e-4,1e-2,1,100")), "theory.mu_values"
    )
    sweep = theory.mu_sweep(graph, proj, targets, sorted(mu_values), d, replace(opts))
    artifacts = {"theory_report": out / "theory_report.json"}
    _json_dump(artifacts["theory_report"], {"mu": mu, "lemma": lemma_report, "sweep": sweep})
    return artifacts


_HANDLERS = {
    "synth": _cmd_synth,
    "pretrain": _cmd_pretrain,
    "train": _cmd_train,
    "fit": _cmd_fit,
    "score": _cmd_score,
    "eval": _cmd_eval,
    "corrupt": _cmd_corrupt,
    "verify-theory": _cmd_verify_theory,
}
