"""End-to-end orchestration: heatmap to fused diagnostic report.

Stages per case: candidate boxes, multi-candidate aggregation, feature
recalibration, mask-guided pooling, radiomics extraction. Dataset-level:
selection-cascade fit on the training split, head training, dual-branch
fusion, and the metric report. Every stage output is cached inside the
output case directory, so deleting a downstream artifact and re-running
reproduces it bit-exactly from the cached upstream ones. Per-case
failures are isolated; the batch never aborts.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregation import CandidatePrediction, McraConfig, aggregate, sigmoid
from .blocks import FeatureBlocks
from .bundle import CaseBundle, load_bundle, resize_bilinear, save_bundle
from .metrics import classify_report, cross_correlation, dice_iou, fuse_logits
from .pooling import MlpHead, assemble_pool, mlp_forward, train_head
from .prompts import (CandidateBox, PromptConfig, box_mask, fallback_box,
                      fused_box, generate_candidates)
from .radiomics import RadiomicsConfig, extract_all, feature_names
from .selection import (FeatureMatrix, SelectionConfig, SelectionModel,
                        fit_selection)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


@dataclass(frozen=True)
class HeadConfig:
    hidden: int = 128
    epochs: int = 200
    lr: float = 0.05
    gamma_f: float = 2.0


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 42
    workers: int = 1
    split_ratio: float = 0.8
    alpha_ext: float = 1.0
    blocks_seed: int = 7
    pool_eps: float = 1e-6
    mask_threshold: float = 0.5
    soft_masks: bool = False   # pool with sigmoid probabilities instead of binarized masks
    prompt: PromptConfig = PromptConfig()
    mcra: McraConfig = McraConfig()
    radiomics: RadiomicsConfig = RadiomicsConfig(spacing_mm=1.0)
    selection: SelectionConfig = SelectionConfig()
    head: HeadConfig = HeadConfig()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "workers": self.workers,
            "split_ratio": self.split_ratio,
            "alpha_ext": self.alpha_ext,
            "blocks_seed": self.blocks_seed,
            "pool_eps": self.pool_eps,
            "mask_threshold": self.mask_threshold,
            "soft_masks": self.soft_masks,
            "prompt": {
                "thresholds": list(self.prompt.thresholds),
                "top_k": self.prompt.top_k,
                "iou_dedup": self.prompt.iou_dedup,
                "min_area": self.prompt.min_area,
                "eight_connectivity": self.prompt.eight_connectivity,
                "component_score": self.prompt.component_score,
            },
            "mcra": {
                "tau_sal": self.mcra.tau_sal,
                "tau_sem": self.mcra.tau_sem,
                "alpha": self.mcra.alpha,
                "theta": self.mcra.theta,
                "gamma": self.mcra.gamma,
                "fuse_probabilities": self.mcra.fuse_probabilities,
                "cons_reduction": self.mcra.cons_reduction,
            },
            "radiomics": {
                "n_levels": self.radiomics.n_levels,
                "spacing_mm": self.radiomics.spacing_mm,
                "log_sigmas_mm": list(self.radiomics.log_sigmas_mm),
            },
            "selection": {
                "variance_tau": self.selection.variance_tau,
                "mrmr_k": self.selection.mrmr_k,
                "mi_bins": self.selection.mi_bins,
                "folds": self.selection.folds,
                "n_lambdas": self.selection.n_lambdas,
                "lambda_min_ratio": self.selection.lambda_min_ratio,
                "lambda_rule": self.selection.lambda_rule,
                "seed": self.selection.seed,
            },
            "head": {
                "hidden": self.head.hidden,
                "epochs": self.head.epochs,
                "lr": self.head.lr,
                "gamma_f": self.head.gamma_f,
            },
            "comments": {
                "prompt.thresholds": "binarization levels for box extraction; tune per modality",
                "prompt.top_k": "distinct candidate boxes kept after IoU dedup",
                "mcra.tau_sal/tau_sem": "softmax temperatures for saliency/semantic weights",
                "mcra.alpha": "semantic share of the final candidate weight",
                "mcra.theta": "high-confidence cutoff; null means 1/K",
                "mcra.gamma": "decay exponent penalizing uncertain candidates",
                "alpha_ext": "radiomics-branch share in the final logit fusion",
                "selection.mrmr_k": "ranked features kept before the sparse fit",
                "mask_threshold": "binarization level for the fused probability mask",
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        def sub(key):
            return d.get(key, {}) or {}
        p, m, r, s, h = sub("prompt"), sub("mcra"), sub("radiomics"), sub("selection"), sub("head")
        base = cls()
        return cls(
            seed=int(d.get("seed", base.seed)),
            workers=int(d.get("workers", base.workers)),
            split_ratio=float(d.get("split_ratio", base.split_ratio)),
            alpha_ext=float(d.get("alpha_ext", base.alpha_ext)),
            blocks_seed=int(d.get("blocks_seed", base.blocks_seed)),
            pool_eps=float(d.get("pool_eps", base.pool_eps)),
            mask_threshold=float(d.get("mask_threshold", base.mask_threshold)),
            soft_masks=bool(d.get("soft_masks", base.soft_masks)),
            prompt=PromptConfig(
                thresholds=tuple(p.get("thresholds", base.prompt.thresholds)),
                top_k=int(p.get("top_k", base.prompt.top_k)),
                iou_dedup=float(p.get("iou_dedup", base.prompt.iou_dedup)),
                min_area=int(p.get("min_area", base.prompt.min_area)),
                eight_connectivity=bool(p.get("eight_connectivity", True)),
                component_score=bool(p.get("component_score", False)),
            ),
            mcra=McraConfig(
                tau_sal=float(m.get("tau_sal", base.mcra.tau_sal)),
                tau_sem=float(m.get("tau_sem", base.mcra.tau_sem)),
                alpha=float(m.get("alpha", base.mcra.alpha)),
                theta=m.get("theta", base.mcra.theta),
                gamma=float(m.get("gamma", base.mcra.gamma)),
                fuse_probabilities=bool(m.get("fuse_probabilities", False)),
                cons_reduction=str(m.get("cons_reduction", "sum")),
            ),
            radiomics=RadiomicsConfig(
                n_levels=int(r.get("n_levels", base.radiomics.n_levels)),
                spacing_mm=float(r.get("spacing_mm", base.radiomics.spacing_mm)),
                log_sigmas_mm=tuple(r.get("log_sigmas_mm", base.radiomics.log_sigmas_mm)),
            ),
            selection=SelectionConfig(
                variance_tau=float(s.get("variance_tau", base.selection.variance_tau)),
                mrmr_k=int(s.get("mrmr_k", base.selection.mrmr_k)),
                mi_bins=int(s.get("mi_bins", base.selection.mi_bins)),
                folds=int(s.get("folds", base.selection.folds)),
                n_lambdas=int(s.get("n_lambdas", base.selection.n_lambdas)),
                lambda_min_ratio=float(s.get("lambda_min_ratio",
                                             base.selection.lambda_min_ratio)),
                lambda_rule=str(s.get("lambda_rule", base.selection.lambda_rule)),
                seed=int(s.get("seed", base.selection.seed)),
            ),
            head=HeadConfig(
                hidden=int(h.get("hidden", base.head.hidden)),
                epochs=int(h.get("epochs", base.head.epochs)),
                lr=float(h.get("lr", base.head.lr)),
                gamma_f=float(h.get("gamma_f", base.head.gamma_f)),
            ),
        )

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def boxes_to_payload(boxes) -> list[dict]:
    return [{"r0": b.r0, "c0": b.c0, "r1": b.r1, "c1": b.c1,
             "score": b.score, "threshold": b.source_threshold} for b in boxes]


def payload_to_boxes(payload) -> list[CandidateBox]:
    return [CandidateBox(d["r0"], d["c0"], d["r1"], d["c1"],
                         d["score"], d["threshold"]) for d in payload]


def candidates_from_bundle(bundle: CaseBundle, saliencies) -> list[CandidatePrediction]:
    """Pair ranked candidate tensors with their box saliency scores."""
    k_tensors = bundle.candidate_count()
    if k_tensors == 0:
        raise ValueError(f"case '{bundle.case_id}' has no candidate tensors")
    k = min(k_tensors, len(saliencies))
    if k < k_tensors:
        log.warning("case %s: %d candidate tensors but %d boxes; using first %d",
                    bundle.case_id, k_tensors, len(saliencies), k)
    cands = []
    for j in range(k):
        cands.append(CandidatePrediction(
            mask_logits=bundle.tensors[f"mask_logits_{j}"],
            cls_logits=bundle.tensors[f"cls_logits_{j}"],
            embedding=bundle.tensors[f"embedding_{j}"],
            saliency=float(saliencies[j]),
        ))
    return cands


def _binarize_resized(mask, out_h, out_w, threshold=0.5):
    if mask.shape == (out_h, out_w):
        return (mask >= threshold).astype(np.float64)
    soft = resize_bilinear(mask, out_h, out_w)
    return (soft >= threshold).astype(np.float64)


def _f32(x):
    # stage outputs live in 32-bit bundles; quantizing before downstream use
    # makes a fresh run and a cache-resumed run bit-identical
    return np.asarray(x, dtype=np.float32).astype(np.float64)


@dataclass
class CaseResult:
    case_id: str
    label: int | None
    dice: float | None
    iou: float | None
    pool_vector: np.ndarray
    radiomics: dict[str, float]


def process_case(case_dir: Path, out_case: Path, cfg: PipelineConfig,
                 blocks: FeatureBlocks) -> CaseResult:
    """Run (or resume from cache) all per-case stages."""
    out_case.mkdir(parents=True, exist_ok=True)
    bundle = load_bundle(case_dir)
    bundle.require("image", "heatmap", "text_embedding", "feature_map")
    heatmap = bundle.tensors["heatmap"]

    boxes_path = out_case / "boxes.json"
    if boxes_path.exists():
        boxes = payload_to_boxes(_read_json(boxes_path))
    else:
        boxes = generate_candidates(heatmap, cfg.prompt)
        if not boxes:
            boxes = [fallback_box(heatmap)]
        _write_json(boxes_path, boxes_to_payload(boxes))

    agg_path = out_case / "agg.json"
    cache = load_bundle(out_case) if (out_case / "manifest.json").exists() else \
        CaseBundle(bundle.case_id, {}, bundle.label, bundle.metadata)
    needed = {"fused_mask_logits", "fused_cls_logits", "fused_embedding", "pred_mask"}
    if agg_path.exists() and needed <= set(cache.tensors):
        agg_info = _read_json(agg_path)
        w_final = np.array(agg_info["w_final"])
        fused_mask_logits = cache.tensors["fused_mask_logits"]
        pred_mask = cache.tensors["pred_mask"]
    else:
        cands = candidates_from_bundle(bundle, [b.score for b in boxes])
        result = aggregate(cands, bundle.tensors["text_embedding"], cfg.mcra)
        w_final = result.w_final
        fused_mask_logits = _f32(result.fused_mask)
        pred_mask = (sigmoid(fused_mask_logits) >= cfg.mask_threshold).astype(np.float64)
        if pred_mask.sum() == 0:
            # degenerate fusion: fall back to the weighted candidate box
            pred_mask = box_mask(fused_box(boxes[:len(w_final)], w_final, pred_mask.shape),
                                 pred_mask.shape)
        cache = cache.with_tensors(
            fused_mask_logits=fused_mask_logits,
            fused_cls_logits=_f32(result.fused_logits),
            fused_embedding=_f32(result.fused_embedding),
            pred_mask=pred_mask,
        )
        save_bundle(cache, out_case)
        _write_json(agg_path, {
            "w_sal": result.w_sal.tolist(),
            "w_sem": result.w_sem.tolist(),
            "w_final": result.w_final.tolist(),
            "high_set": list(result.high_set),
            "low_set": list(result.low_set),
            "consistency_loss": result.consistency_loss,
        })

    if "feature_fused" in cache.tensors:
        feature_fused = cache.tensors["feature_fused"]
    else:
        feature_fused = _f32(blocks.forward(bundle.tensors["feature_map"]))
        cache = cache.with_tensors(feature_fused=feature_fused)
        save_bundle(cache, out_case)

    if "pool_vector" in cache.tensors:
        pool_vector = cache.tensors["pool_vector"]
    else:
        fh, fw = feature_fused.shape[1], feature_fused.shape[2]
        if cfg.soft_masks:
            soft = sigmoid(fused_mask_logits)
            lesion_small = np.clip(resize_bilinear(soft, fh, fw), 0.0, 1.0)
        else:
            lesion_small = _binarize_resized(pred_mask, fh, fw)
        rect = fused_box(boxes[:len(w_final)], w_final, pred_mask.shape)
        box_small = _binarize_resized(box_mask(rect, pred_mask.shape), fh, fw)
        pv = assemble_pool(feature_fused, lesion_small, box_small, cfg.pool_eps)
        pool_vector = _f32(pv.concatenated)
        cache = cache.with_tensors(pool_vector=pool_vector)
        save_bundle(cache, out_case)

    rad_path = out_case / "radiomics.json"
    if rad_path.exists():
        rad = {k: float(v) for k, v in _read_json(rad_path).items()}
    else:
        roi = pred_mask
        if roi.sum() == 0:
            raise ValueError("empty predicted mask; cannot extract radiomics")
        rad = extract_all(bundle.tensors["image"], roi, cfg.radiomics)
        _write_json(rad_path, rad)

    metrics_path = out_case / "metrics.json"
    if metrics_path.exists():
        m = _read_json(metrics_path)
        dice, iou = m["dice"], m["iou"]
    elif "gt_mask" in bundle.tensors:
        dice, iou = dice_iou(pred_mask.astype(int), bundle.tensors["gt_mask"].astype(int))
        _write_json(metrics_path, {"dice": dice, "iou": iou})
    else:
        dice = iou = None

    return CaseResult(bundle.case_id, bundle.label, dice, iou, pool_vector, rad)


def split_cases(results: list[CaseResult], ratio: float, seed: int):
    """Deterministic stratified train/validation split over labeled cases."""
    by_label: dict[int, list[str]] = {}
    for r in sorted(results, key=lambda r: r.case_id):
        if r.label is not None:
            by_label.setdefault(int(r.label), []).append(r.case_id)
    rng = np.random.default_rng(seed)
    train, val = set(), set()
    for label in sorted(by_label):
        ids = by_label[label]
        order = rng.permutation(len(ids))
        n_train = int(round(ratio * len(ids)))
        for pos, idx in enumerate(order):
            (train if pos < n_train else val).add(ids[idx])
    return train, val


def _report_numbers(rep) -> dict:
    return {
        "ACC": round(100.0 * rep.acc, 2),
        "AUC": round(100.0 * rep.auc, 2),
        "Sens": round(100.0 * rep.sensitivity, 2),
        "Spec": round(100.0 * rep.specificity, 2),
        "F1": round(100.0 * rep.f1, 2),
    }


def run_pipeline(cfg: PipelineConfig, in_dir, out_dir) -> tuple[dict, int]:
    """Run everything; returns (report, exit_code)."""
    in_root = Path(in_dir)
    out_root = Path(out_dir)
    if not in_root.is_dir():
        raise FileNotFoundError(f"input directory {in_root} does not exist")
    out_root.mkdir(parents=True, exist_ok=True)
    case_dirs = sorted(p for p in in_root.iterdir()
                       if p.is_dir() and (p / "manifest.json").is_file())

    report: dict = {"n_cases": len(case_dirs), "n_failed": 0,
                    "segmentation": None, "diagnosis": None}
    if not case_dirs:
        _write_json(out_root / "report.json", report)
        return report, EXIT_PARTIAL

    channels = None
    blocks_by_c: dict[int, FeatureBlocks] = {}

    def worker(case_dir: Path):
        bundle_channels = load_bundle(case_dir).tensors["feature_map"].shape[0]
        if bundle_channels not in blocks_by_c:
            blocks_by_c[bundle_channels] = FeatureBlocks.random(bundle_channels,
                                                                seed=cfg.blocks_seed)
        return process_case(case_dir, out_root / "cases" / case_dir.name, cfg,
                            blocks_by_c[bundle_channels])

    results: dict[str, CaseResult] = {}
    failures: dict[str, str] = {}
    # pre-build the shared weights once (avoids racing on first use)
    try:
        first = load_bundle(case_dirs[0])
        channels = first.tensors["feature_map"].shape[0]
        blocks_by_c[channels] = FeatureBlocks.random(channels, seed=cfg.blocks_seed)
    except Exception as exc:  # noqa: BLE001 - isolate and continue
        log.warning("priming failed on %s: %s", case_dirs[0].name, exc)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {case_dir.name: pool.submit(worker, case_dir)
                       for case_dir in case_dirs}
        for name in sorted(futures):
            try:
                res = futures[name].result()
                results[res.case_id] = res
            except Exception as exc:  # noqa: BLE001
                failures[name] = str(exc)
    else:
        for case_dir in case_dirs:
            try:
                res = worker(case_dir)
                results[res.case_id] = res
            except Exception as exc:  # noqa: BLE001
                failures[case_dir.name] = str(exc)

    report["n_failed"] = len(failures)
    if failures:
        _write_json(out_root / "failures.json", failures)
        for name, msg in failures.items():
            log.error("case %s failed: %s", name, msg)

    ordered = [results[cid] for cid in sorted(results)]
    if not ordered:
        _write_json(out_root / "report.json", report)
        return report, EXIT_PARTIAL

    names = feature_names(cfg.radiomics)
    rows = np.array([[r.radiomics[n] for n in names] for r in ordered])
    _write_features_csv(out_root / "features.csv", names, ordered, rows)

    train_ids, val_ids = split_cases(ordered, cfg.split_ratio, cfg.seed)
    _write_json(out_root / "split.json",
                {"train": sorted(train_ids), "val": sorted(val_ids)})

    labeled = [r for r in ordered if r.label is not None]
    train_rows = [r for r in labeled if r.case_id in train_ids]
    val_rows = [r for r in labeled if r.case_id in val_ids]
    if len({r.label for r in train_rows}) < 2:
        raise RuntimeError("training split lacks both classes")
    if len({r.label for r in val_rows}) < 2:
        log.warning("validation split lacks both classes; "
                    "diagnosis metrics will be omitted")

    idx = {r.case_id: i for i, r in enumerate(ordered)}
    train_matrix = FeatureMatrix(tuple(names),
                                 rows[[idx[r.case_id] for r in train_rows]],
                                 np.array([r.label for r in train_rows]))
    model_path = out_root / "model.json"
    if model_path.exists():
        model = SelectionModel.from_json(model_path)
    else:
        model = fit_selection(train_matrix, cfg.selection)
        model.to_json(model_path)

    all_matrix = FeatureMatrix(tuple(names), rows,
                               np.array([r.label if r.label is not None else 0
                                         for r in ordered]))
    rad_logits = model.decision_function(all_matrix)

    # deep-vs-radiomics correlation structure of the two branches
    if len(ordered) >= 3 and model.selected_names:
        deep = np.stack([r.pool_vector for r in ordered])
        reduced = model.transform(all_matrix)
        corr, defined = cross_correlation(deep, reduced.values)
        corr = np.where(defined, corr, 0.0)
        flat = np.argsort(np.abs(corr).ravel())[::-1][:5]
        top = [{"deep_dim": int(i // corr.shape[1]),
                "feature": reduced.names[int(i % corr.shape[1])],
                "rho": round(float(corr.ravel()[i]), 4)} for i in flat]
        _write_json(out_root / "cross_correlation.json", {
            "deep_dims": int(deep.shape[1]),
            "radiomics_dims": int(reduced.values.shape[1]),
            "peak_abs_rho": round(float(np.abs(corr).max()), 4),
            "top_pairs": top,
        })

    head_path = out_root / "head"
    if (head_path / "manifest.json").exists():
        hb = load_bundle(head_path)
        head = MlpHead(hb.tensors["w1"], hb.tensors["b1"], hb.tensors["w2"], hb.tensors["b2"])
    else:
        ds = [(r.pool_vector, r.label) for r in train_rows]
        head, _ = train_head(ds, gamma_f=cfg.head.gamma_f, epochs=cfg.head.epochs,
                             lr=cfg.head.lr, hidden=cfg.head.hidden, seed=cfg.seed)
        head = MlpHead(_f32(head.w1), _f32(head.b1), _f32(head.w2), _f32(head.b2))
        save_bundle(CaseBundle("head", {"w1": head.w1, "b1": head.b1,
                                        "w2": head.w2, "b2": head.b2}), head_path)

    predictions = []
    for r in ordered:
        visual = mlp_forward(r.pool_vector, head)
        z = float(rad_logits[idx[r.case_id]])
        fused = fuse_logits(visual, np.array([0.0, z]), cfg.alpha_ext)
        exp_v = np.exp(visual - visual.max())
        exp_f = np.exp(fused - fused.max())
        predictions.append({
            "case_id": r.case_id,
            "label": r.label,
            "split": "train" if r.case_id in train_ids else
                     ("val" if r.case_id in val_ids else "unlabeled"),
            "visual_logits": visual.tolist(),
            "radiomics_logit": z,
            "fused_logits": fused.tolist(),
            "score_visual": float(exp_v[1] / exp_v.sum()),
            "score_radiomics": float(sigmoid(np.array([z]))[0]),
            "score_fused": float(exp_f[1] / exp_f.sum()),
            "dice": r.dice,
            "iou": r.iou,
        })
    _write_json(out_root / "predictions.json", predictions)

    report.update(build_report(predictions))
    report["n_failed"] = len(failures)
    _write_json(out_root / "report.json", report)
    return report, (EXIT_PARTIAL if failures else EXIT_OK)


def build_report(predictions: list[dict]) -> dict:
    """Aggregate validation-split metrics from per-case predictions."""
    val = [p for p in predictions if p["split"] == "val"]
    out: dict = {"n_cases": len(predictions), "n_failed": 0}
    dices = [p["dice"] for p in val if p["dice"] is not None]
    ious = [p["iou"] for p in val if p["iou"] is not None]
    out["segmentation"] = {
        "mDSC": round(float(np.mean(dices)), 4) if dices else None,
        "mIoU": round(float(np.mean(ious)), 4) if ious else None,
    }
    labels = np.array([p["label"] for p in val])
    if val and np.unique(labels).size == 2:
        out["diagnosis"] = {}
        for branch in ("visual", "radiomics", "fused"):
            scores = np.array([p[f"score_{branch}"] for p in val])
            out["diagnosis"][branch] = _report_numbers(classify_report(scores, labels))
    else:
        out["diagnosis"] = None
    return out


def _write_features_csv(path, names, ordered, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("case_id,label," + ",".join(names) + "\n")
        for r, row in zip(ordered, rows):
            label = "" if r.label is None else str(int(r.label))
            fh.write(r.case_id + "," + label + ","
                     + ",".join(format(v, ".17g") for v in row) + "\n")


def read_features_csv(path) -> tuple[FeatureMatrix, list[str]]:
    """Parse a features CSV back into a labeled matrix plus case ids."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:2] != ["case_id", "label"]:
            raise ValueError("features CSV must start with case_id,label columns")
        names = tuple(header[2:])
        ids, labels, rows = [], [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            ids.append(parts[0])
            labels.append(int(parts[1]) if parts[1] != "" else -1)
            rows.append([float(v) for v in parts[2:]])
    values = np.array(rows, dtype=np.float64)
    label_arr = np.array(labels)
    has_all = np.all(label_arr >= 0)
    matrix = FeatureMatrix(names, values, label_arr if has_all else None)
    return matrix, ids
