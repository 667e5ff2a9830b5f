"""Command-line interface.

Subcommands cover every stage (synth, prompt, aggregate, features, pool,
radiomics, select, apply, train-head, loss, eval) plus the end-to-end
``pipeline`` runner and a ``validate`` helper that checks a bundle
against the interchange schema. Exit codes: 0 success, 2 partial
per-case failures (or an empty batch), 1 fatal.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .aggregation import McraConfig, aggregate, sigmoid
from .blocks import FeatureBlocks
from .bundle import BundleError, CaseBundle, load_bundle, save_bundle
from .losses import Stage1Weights, bce_dice_loss, focal_loss, stage1_loss, text_aux_loss
from .metrics import dice_iou
from .pipeline import (EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, PipelineConfig,
                       boxes_to_payload, build_report, candidates_from_bundle,
                       payload_to_boxes, process_case, read_features_csv,
                       run_pipeline, _read_json, _write_json)
from .pooling import MlpHead, mlp_forward, train_head
from .prompts import PromptConfig, fallback_box, generate_candidates
from .radiomics import RadiomicsConfig, extract_all, feature_names
from .selection import FeatureMatrix, SelectionConfig, SelectionModel, fit_selection
from .synthetic import SyntheticSpec, synth_dataset

log = logging.getLogger("lesionkit")


def _pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if getattr(args, "config", None) \
        else PipelineConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = PipelineConfig.from_dict(d)
    return cfg


def _parse_thresholds(text: str):
    return tuple(float(t) for t in text.split(","))


def cmd_synth(args) -> int:
    spec = SyntheticSpec(n_cases=args.n, image_size=args.size, noise=args.noise,
                         embedding_dim=args.dim, seed=args.seed)
    ids = synth_dataset(spec, args.out)
    print(f"wrote {len(ids)} cases to {args.out}")
    return EXIT_OK


def cmd_prompt(args) -> int:
    bundle = load_bundle(args.inp)
    bundle.require("heatmap")
    cfg = PromptConfig(thresholds=_parse_thresholds(args.thresholds),
                       top_k=args.topk, iou_dedup=args.iou, min_area=args.min_area)
    boxes = generate_candidates(bundle.tensors["heatmap"], cfg)
    if not boxes and args.fallback:
        boxes = [fallback_box(bundle.tensors["heatmap"])]
    _write_json(args.out, boxes_to_payload(boxes))
    print(f"{len(boxes)} candidate boxes -> {args.out}")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    bundle = load_bundle(args.inp)
    bundle.require("text_embedding")
    if args.boxes:
        boxes = payload_to_boxes(_read_json(args.boxes))
    else:
        bundle.require("heatmap")
        boxes = generate_candidates(bundle.tensors["heatmap"], PromptConfig())
        if not boxes:
            boxes = [fallback_box(bundle.tensors["heatmap"])]
    cfg = McraConfig(tau_sal=args.tau_sal, tau_sem=args.tau_sem, alpha=args.alpha,
                     theta=args.theta, gamma=args.gamma,
                     cons_reduction=args.cons_reduction)
    cands = candidates_from_bundle(bundle, [b.score for b in boxes])
    result = aggregate(cands, bundle.tensors["text_embedding"], cfg)
    _write_json(args.out, {
        "w_sal": result.w_sal.tolist(),
        "w_sem": result.w_sem.tolist(),
        "w_final": result.w_final.tolist(),
        "high_set": list(result.high_set),
        "low_set": list(result.low_set),
        "consistency_loss": result.consistency_loss,
    })
    updated = bundle.with_tensors(fused_mask_logits=result.fused_mask,
                                  fused_cls_logits=result.fused_logits,
                                  fused_embedding=result.fused_embedding)
    save_bundle(updated, args.inp)
    print(f"aggregated {len(cands)} candidates; L_cons={result.consistency_loss:.6g}")
    return EXIT_OK


def cmd_features(args) -> int:
    bundle = load_bundle(args.inp)
    bundle.require("feature_map")
    fmap = bundle.tensors["feature_map"]
    if args.weights:
        wb = load_bundle(args.weights)
        blocks = _blocks_from_bundle(wb, fmap.shape[0])
    else:
        blocks = FeatureBlocks.random(fmap.shape[0], seed=args.seed)
    fused = blocks.forward(fmap)
    out = bundle.with_tensors(feature_fused=fused)
    save_bundle(out, args.out)
    print(f"feature_fused {list(fused.shape)} -> {args.out}")
    return EXIT_OK


def _blocks_from_bundle(wb: CaseBundle, channels: int) -> FeatureBlocks:
    from .blocks import Conv2dParams, SeParams

    def conv(prefix, dilation=1):
        return Conv2dParams(wb.tensors[f"{prefix}_w"], wb.tensors[f"{prefix}_b"], dilation)

    se = SeParams(wb.tensors["weights_se_w1"], wb.tensors["weights_se_w2"])
    dilations = [int(d) for d in wb.tensors["weights_dilations"]]
    branches = tuple(conv(f"weights_branch{i}", d) for i, d in enumerate(dilations))
    return FeatureBlocks(se, branches, conv("weights_projection"), conv("weights_gate"))


def cmd_pool(args) -> int:
    cfg = _pipeline_config(args)
    out_case = Path(args.out)
    blocks = FeatureBlocks.random(load_bundle(args.inp).tensors["feature_map"].shape[0],
                                  seed=cfg.blocks_seed)
    result = process_case(Path(args.inp), out_case, cfg, blocks)
    print(f"pool_vector[{result.pool_vector.size}] -> {out_case}")
    return EXIT_OK


def cmd_radiomics(args) -> int:
    root = Path(args.inp)
    case_dirs = sorted(p for p in root.iterdir()
                       if p.is_dir() and (p / "manifest.json").is_file())
    if not case_dirs:
        print("no bundles found", file=sys.stderr)
        return EXIT_PARTIAL
    cfg = RadiomicsConfig(n_levels=args.bins, spacing_mm=args.spacing_mm)
    names = feature_names(cfg)
    failures = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("case_id,label," + ",".join(names) + "\n")
        for case_dir in case_dirs:
            try:
                bundle = load_bundle(case_dir)
                bundle.require("image")
                mask_name = args.mask if args.mask in bundle.tensors else "gt_mask"
                bundle.require(mask_name)
                feats = extract_all(bundle.tensors["image"],
                                    bundle.tensors[mask_name], cfg)
                label = "" if bundle.label is None else str(bundle.label)
                fh.write(bundle.case_id + "," + label + ","
                         + ",".join(format(feats[n], ".17g") for n in names) + "\n")
            except (BundleError, ValueError) as exc:
                failures += 1
                log.error("case %s failed: %s", case_dir.name, exc)
    print(f"{len(case_dirs) - failures}/{len(case_dirs)} cases -> {args.out}")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_select(args) -> int:
    matrix, _ = read_features_csv(args.train)
    if matrix.labels is None:
        print("training CSV must carry labels", file=sys.stderr)
        return EXIT_FATAL
    cfg = SelectionConfig(mrmr_k=args.k, folds=args.folds, seed=args.seed)
    model = fit_selection(matrix, cfg)
    model.to_json(args.out)
    print(f"kept {len(model.selected_names)} features "
          f"(lambda*={model.lambda_star:.6g}) -> {args.out}")
    return EXIT_OK


def cmd_apply(args) -> int:
    model = SelectionModel.from_json(args.model)
    matrix, ids = read_features_csv(args.inp)
    reduced = model.transform(matrix)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("case_id,label," + ",".join(reduced.names) + "\n")
        for i, cid in enumerate(ids):
            label = "" if matrix.labels is None else str(int(matrix.labels[i]))
            fh.write(cid + "," + label + ","
                     + ",".join(format(v, ".17g") for v in reduced.values[i]) + "\n")
    print(f"reduced to {len(reduced.names)} columns -> {args.out}")
    return EXIT_OK


def _pool_dataset(root: Path):
    data = []
    for case_dir in sorted(p for p in root.iterdir()
                           if p.is_dir() and (p / "manifest.json").is_file()):
        bundle = load_bundle(case_dir)
        if "pool_vector" in bundle.tensors and bundle.label is not None:
            data.append((bundle.tensors["pool_vector"], bundle.label))
    return data


def cmd_train_head(args) -> int:
    train = _pool_dataset(Path(args.train))
    if not train:
        print("no labeled pool vectors under --train", file=sys.stderr)
        return EXIT_FATAL
    head, history = train_head(train, epochs=args.epochs, lr=args.lr, seed=args.seed)
    save_bundle(CaseBundle("head", {"w1": head.w1, "b1": head.b1,
                                    "w2": head.w2, "b2": head.b2}), args.out)
    msg = f"trained head: loss {history[0]:.4f} -> {history[-1]:.4f}"
    if args.val:
        val = _pool_dataset(Path(args.val))
        if val:
            x = np.stack([f for f, _ in val])
            labels = np.array([y for _, y in val])
            acc = float((np.argmax(mlp_forward(x, head), axis=1) == labels).mean())
            msg += f"; val acc {acc:.3f}"
    print(msg + f" -> {args.out}")
    return EXIT_OK


def _logit(p):
    q = np.clip(p, 1e-6, 1.0 - 1e-6)
    return np.log(q / (1.0 - q))


def cmd_loss(args) -> int:
    root = Path(args.inp)
    if (root / "manifest.json").is_file():
        case_dirs = [root]
    else:
        case_dirs = sorted(p for p in root.iterdir()
                           if p.is_dir() and (p / "manifest.json").is_file())
    if not case_dirs:
        print("no bundles found", file=sys.stderr)
        return EXIT_FATAL
    cls_logits, labels, loc_terms = [], [], []
    regions, texts = [], []
    for case_dir in case_dirs:
        bundle = load_bundle(case_dir)
        if bundle.label is not None:
            logits = bundle.tensors.get("fused_cls_logits",
                                        bundle.tensors.get("cls_logits_0"))
            if logits is not None:
                cls_logits.append(logits)
                labels.append(bundle.label)
        if "heatmap" in bundle.tensors and "gt_mask" in bundle.tensors:
            loc_terms.append(bce_dice_loss(_logit(bundle.tensors["heatmap"]),
                                           bundle.tensors["gt_mask"]))
        emb = bundle.tensors.get("fused_embedding", bundle.tensors.get("embedding_0"))
        if emb is not None and "text_embedding" in bundle.tensors:
            regions.append(emb)
            texts.append(bundle.tensors["text_embedding"])
    payload: dict = {}
    cls_term = loc_term = text_term = 0.0
    if cls_logits:
        cls_term = focal_loss(np.stack(cls_logits), np.array(labels))
        payload["cls"] = cls_term
    if loc_terms:
        loc_term = float(np.mean(loc_terms))
        payload["loc"] = loc_term
    if len(regions) >= 2:
        text_term = text_aux_loss(np.stack(regions), np.stack(texts))
        payload["text"] = text_term
    else:
        payload["text"] = None  # needs at least two cases for in-batch negatives
    weights = Stage1Weights(args.lambda_cls, args.lambda_loc, args.lambda_text)
    payload["total"] = stage1_loss(cls_term, loc_term, text_term, weights)
    _write_json(args.out, payload)
    print(f"stage-1 loss {payload['total']:.6g} -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_root = Path(args.pred)
    pred_file = pred_root / "predictions.json"
    if not pred_file.is_file():
        print(f"{pred_file} not found (run the pipeline first)", file=sys.stderr)
        return EXIT_FATAL
    report = build_report(_read_json(pred_file))
    _write_json(args.out, report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _pipeline_config(args)
    if args.emit_config:
        cfg.to_json(args.emit_config)
    report, code = run_pipeline(cfg, args.inp, args.out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return code


def cmd_validate(args) -> int:
    try:
        bundle = load_bundle(args.inp)
    except BundleError as exc:
        print(f"INVALID: {exc}", file=sys.stderr)
        return EXIT_FATAL
    shapes = {name: list(t.shape) for name, t in sorted(bundle.tensors.items())}
    print(json.dumps({"case_id": bundle.case_id, "label": bundle.label,
                      "tensors": shapes}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lesionkit",
        description="lesion evidence pipeline: prompts, aggregation, radiomics, fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prompt", help="candidate boxes from a bundle heatmap")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--thresholds", default="0.3,0.4,0.5,0.6,0.7")
    p.add_argument("--topk", type=int, default=3)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--min-area", type=int, default=4)
    p.add_argument("--fallback", action="store_true",
                   help="emit the hottest-region box when no threshold fires")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("aggregate", help="fuse candidate predictions")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--boxes", default=None)
    p.add_argument("--tau-sal", type=float, default=0.5)
    p.add_argument("--tau-sem", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--cons-reduction", choices=("sum", "mean"), default="sum")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("features", help="recalibrate the feature map")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("pool", help="mask-guided multi-pooling for one case")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("radiomics", help="feature CSV over a bundle directory")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--spacing-mm", type=float, default=0.1)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--mask", default="pred_mask",
                   help="tensor used as the ROI (falls back to gt_mask)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_radiomics)

    p = sub.add_parser("select", help="fit the selection cascade")
    p.add_argument("--train", required=True)
    p.add_argument("--k", type=int, default=128)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("apply", help="apply a frozen selection model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("train-head", help="train the diagnosis head on pool vectors")
    p.add_argument("--train", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("loss", help="stage-1 loss terms over bundles")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--lambda-cls", type=float, default=1.0)
    p.add_argument("--lambda-loc", type=float, default=1.0)
    p.add_argument("--lambda-text", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("eval", help="metric report from pipeline predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--emit-config", default=None,
                   help="write the resolved config JSON here")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("validate", help="check a bundle against the schema")
    p.add_argument("--in", dest="inp", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BundleError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
