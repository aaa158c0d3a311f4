"""Command-line entry point: ``welane <subcommand> ...``.

Module parameters come from built-in defaults, then an optional key=value
``--config`` file, then repeated ``--set key=value`` flags, then dedicated
flags such as ``--alpha``. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import plotting
from .assignloss import (CostWeights, Grid, LossWeights, assignment_cost, default_liou_radius,
                         dynamic_topk_assign, pairwise_line_iou, total_loss)
from .demo import run_demo
from .errors import ConfigError, WelaneError
from .inference import InferenceConfig, infer
from .lanegeom import N_POINTS, SampleConfig, native_rows, sample_rows
from .metrics import MF1_TAUS, EvalReport, F1Result, TuSimpleCounts, counts_from_iou, iou_matrix, tusimple_counts
from .preprocess import EnhanceConfig, analyze_histogram, enhance
from .tensorio import LaneFile, read_image, read_lanes, read_tensor, read_tensors, write_image, write_lanes, \
    write_tensor, write_tensors
from .wavelet import BlockWeights, FusionConfig, fuse, make_weights, wavelet_nonlocal, with_identity_refine

_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def _bool(s):
    try:
        return _BOOL[str(s).lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {s!r}") from None


def _radius(s):
    return None if str(s) == "auto" else float(s)


# key -> (default, parser, help)
DEFAULTS = {
    "clahe_tiles": (8, int, "CLAHE tile grid per axis"),
    "clahe_clip": (2.0, float, "CLAHE clip limit, multiples of the uniform bin height"),
    "guided_radius": (8, int, "guided filter window radius (px)"),
    "guided_epsilon": (1e-3, float, "guided filter variance regularizer"),
    "gamma_target": (0.5, float, "target mean luminance for adaptive gamma"),
    "under_thresh": (0.35, float, "mean luminance below which an image is underexposed"),
    "over_thresh": (0.65, float, "mean luminance above which an image is overexposed"),
    "alpha": (0.7, float, "weight of the wavelet branch in the fusion"),
    "c_embed": (0, int, "non-local embedding channels (0: half the input channels)"),
    "n_sample": (36, int, "number of sample rows"),
    "beta": (10.0, float, "base of the logarithmic row warp"),
    "sample_mode": ("attention", str, "row sampling: attention or uniform"),
    "n_points": (N_POINTS, int, "points per lane prior"),
    "cost_w_sim": (1.0, float, "assignment weight of the similarity cost"),
    "cost_w_cls": (1.0, float, "assignment weight of the focal cost"),
    "k_cap": (4, int, "upper bound on the dynamic k"),
    "w_cls": (2.0, float, "loss weight of the focal term"),
    "w_xytl": (0.2, float, "loss weight of the start/angle/length term"),
    "w_liou": (2.0, float, "loss weight of the Line-IoU term"),
    "focal_alpha": (0.25, float, "focal loss class balance"),
    "focal_gamma": (2.0, float, "focal loss focusing exponent"),
    "liou_radius": ("auto", _radius, "Line-IoU half width (px); auto = 15 * width / 800"),
    "score_threshold": (0.4, float, "minimum prior score kept at inference"),
    "nms_iou_threshold": (0.5, float, "Line-IoU above which NMS suppresses"),
    "max_lanes": (4, int, "maximum lanes kept by NMS"),
    "nms_free": (False, _bool, "skip NMS (one-to-one assignment upstream)"),
    "mask_width": (30.0, float, "CULane stroke width (px)"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def resolve_config(config_file=None, overrides=(), explicit=None) -> dict:
    """Merge defaults < config file < --set < dedicated flags, typed."""
    raw = {}
    if config_file:
        try:
            raw.update(parse_config_text(Path(config_file).read_text(), str(config_file)))
        except OSError as exc:
            raise UsageError(f"cannot read config {config_file}: {exc.strerror}") from None
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = {}
    for k, (default, conv, _) in DEFAULTS.items():
        value = raw.get(k, default)
        try:
            cfg[k] = conv(value) if isinstance(value, str) else value
        except ValueError as exc:
            raise UsageError(f"bad value for {k}: {exc}") from None
    for k, v in (explicit or {}).items():
        if v is not None:
            cfg[k] = v
    return cfg


def enhance_config(cfg) -> EnhanceConfig:
    return EnhanceConfig(cfg["clahe_tiles"], cfg["clahe_clip"], cfg["guided_radius"], cfg["guided_epsilon"],
                         cfg["gamma_target"], cfg["under_thresh"], cfg["over_thresh"])


def loss_weights(cfg, width) -> LossWeights:
    e = cfg["liou_radius"] if cfg["liou_radius"] is not None else default_liou_radius(width)
    return LossWeights(cfg["w_cls"], cfg["w_xytl"], cfg["w_liou"], cfg["focal_alpha"], cfg["focal_gamma"], e)


def inference_config(cfg) -> InferenceConfig:
    return InferenceConfig(cfg["score_threshold"], cfg["nms_iou_threshold"], cfg["max_lanes"], cfg["nms_free"])


def _epilog() -> str:
    lines = ["config keys (defaults; override with --config FILE or --set key=value):"]
    for k, (default, _, text) in DEFAULTS.items():
        lines.append(f"  {k:<18} {str(default):<10} {text}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file ('#' comments)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, default=0, help="seed for generated weights (default 0)")

    fmt = argparse.RawDescriptionHelpFormatter
    p = _Parser(prog="welane", description="Lane detection toolkit.", epilog=_epilog(), formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], epilog=_epilog(), formatter_class=fmt)

    s = add("enhance", "adaptive gamma + CLAHE + guided filter on a PGM/PPM image")
    s.add_argument("input")
    s.add_argument("output")

    s = add("wavelet", "wavelet non-local block on a tensor file")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--weights", help="weight file (concatenated tensor records)")
    s.add_argument("--save-weights", help="write the weights used to this file")

    s = add("fuse", "weighted fusion of FPN and wavelet branches + 3x3 refinement")
    s.add_argument("fpn")
    s.add_argument("we")
    s.add_argument("output")
    s.add_argument("--alpha", type=float, help="wavelet branch weight (default 0.7)")
    s.add_argument("--weights", help="weight file supplying the refinement kernel")
    s.add_argument("--identity-refine", action="store_true", help="use an identity 3x3 kernel, zero bias")

    s = add("sample", "print sample rows, one per line")
    s.add_argument("--height", type=int, required=True, help="image height H")
    s.add_argument("--n", type=int, dest="n_sample", help="number of samples (default 36)")
    s.add_argument("--beta", type=float, help="log warp base (default 10)")
    s.add_argument("--mode", choices=["attention", "uniform"], dest="sample_mode")

    for name, text in (("assign", "assignment cost breakdown and dynamic top-k matching"),
                       ("loss", "training loss of predictions against ground truth")):
        s = add(name, text)
        s.add_argument("predictions", help="lane file with prior records")
        s.add_argument("ground_truth", help="lane file with polylines and an 'H W' header")

    s = add("nms", "score threshold + Line-IoU NMS on a lane file of priors")
    s.add_argument("input")
    s.add_argument("output")

    s = add("eval", "CULane F1/mF1 or TuSimple Acc/FP/FN over lane-file directories")
    s.add_argument("predictions", help="directory of predicted lane files")
    s.add_argument("ground_truth", help="directory of ground-truth lane files")
    s.add_argument("--mode", choices=["culane", "tusimple"], default="culane")
    s.add_argument("--tau", type=float, action="append", help="IoU threshold(s); default 0.50..0.95")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--figures", help="directory for the F1 curve figure")

    s = add("demo", "run the full pipeline on the bundled scene")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--no-figures", action="store_true")
    return p


def _weights_for(args, channels, cfg) -> BlockWeights:
    if getattr(args, "weights", None):
        w = BlockWeights.from_records(read_tensors(args.weights))
        if w.channels != channels:
            raise ConfigError(f"weights expect {w.channels} channels, tensor has {channels}")
        return w
    c_embed = cfg["c_embed"] or max(1, channels // 2)
    return make_weights(channels, c_embed, args.seed)


def _prior_grid(preds: LaneFile, gts: LaneFile, cfg) -> Grid:
    if gts.image_height is None:
        raise ConfigError("ground-truth lane file needs an 'H W' header")
    n = preds.priors[0].n_points if preds.priors else cfg["n_points"]
    return Grid.make(native_rows(n, gts.image_height), gts.image_width, gts.image_height)


def cmd_enhance(args, cfg, out):
    img = read_image(args.input)
    ecfg = enhance_config(cfg)
    result = enhance(img, ecfg)
    write_image(result, args.output)
    rep = analyze_histogram(img, ecfg)
    out.write(f"flag={rep.flag.value}\nmean_luminance={rep.mean_luminance:.6f}\n"
              f"underexposed_fraction={rep.underexposed_fraction:.6f}\n"
              f"overexposed_fraction={rep.overexposed_fraction:.6f}\n")


def cmd_wavelet(args, cfg, out):
    x = read_tensor(args.input)
    w = _weights_for(args, x.shape[0], cfg)
    write_tensor(wavelet_nonlocal(x, w), args.output)
    if args.save_weights:
        write_tensors(w.to_records(), args.save_weights)


def cmd_fuse(args, cfg, out):
    fpn, we = read_tensor(args.fpn), read_tensor(args.we)
    w = _weights_for(args, fpn.shape[0], cfg)
    if args.identity_refine:
        w = with_identity_refine(w)
    write_tensor(fuse(fpn, we, FusionConfig(cfg["alpha"]), w), args.output)


def cmd_sample(args, cfg, out):
    scfg = SampleConfig(args.height, cfg["n_sample"], cfg["beta"], cfg["sample_mode"])
    out.write("".join(f"{r}\n" for r in sample_rows(scfg)))


def _assign_inputs(args, cfg):
    preds, gts = read_lanes(args.predictions), read_lanes(args.ground_truth)
    grid = _prior_grid(preds, gts, cfg)
    lw = loss_weights(cfg, grid.width)
    cm = assignment_cost(preds.priors, gts.gt_lanes, CostWeights(cfg["cost_w_sim"], cfg["cost_w_cls"]), lw, grid)
    liou = pairwise_line_iou(preds.priors, gts.gt_lanes, grid, lw.liou_radius_e)
    assignment = dynamic_topk_assign(cm, liou, cfg["k_cap"])
    return preds, gts, grid, lw, cm, liou, assignment


def cmd_assign(args, cfg, out):
    preds, gts, grid, lw, cm, liou, assignment = _assign_inputs(args, cfg)
    owner = {p: g for g, ps in assignment.items() for p in ps}
    out.write("pred\tgt\tcost\tc_sim\tc_dis\tc_xy\tc_theta\tc_cls\tliou\tassigned\n")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            vals = [cm.cost, cm.c_sim, cm.c_dis, cm.c_xy, cm.c_theta, cm.c_cls, liou]
            cols = "\t".join(f"{v[i, j]:.9g}" for v in vals)
            out.write(f"{i}\t{j}\t{cols}\t{int(owner.get(i) == j)}\n")


def cmd_loss(args, cfg, out):
    preds, gts, grid, lw, cm, liou, assignment = _assign_inputs(args, cfg)
    lb = total_loss(preds.priors, gts.gt_lanes, assignment, lw, grid)
    out.write("total\tl_cls\tl_xytl\tl_liou\n")
    out.write(f"{lb.total:.9g}\t{lb.l_cls:.9g}\t{lb.l_xytl:.9g}\t{lb.l_liou:.9g}\n")


def cmd_nms(args, cfg, out):
    lf = read_lanes(args.input)
    if lf.image_height is None:
        raise ConfigError("prior lane file needs an 'H W' header")
    e = cfg["liou_radius"] if cfg["liou_radius"] is not None else default_liou_radius(lf.image_width)
    kept = infer(lf.priors, inference_config(cfg), e, lf.image_height)
    write_lanes(LaneFile(lf.image_height, lf.image_width, kept), args.output)


def _lane_pairs(pred_dir, gt_dir):
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if not gt_dir.is_dir():
        raise ConfigError(f"{gt_dir} is not a directory")
    for gt_path in sorted(p for p in gt_dir.rglob("*") if p.is_file()):
        rel = gt_path.relative_to(gt_dir)
        pred_path = pred_dir / rel
        gts = read_lanes(gt_path)
        preds = read_lanes(pred_path) if pred_path.is_file() else LaneFile(gts.image_height, gts.image_width)
        yield preds, gts


def evaluate_dirs(pred_dir, gt_dir, mode="culane", taus=MF1_TAUS, threads=1, mask_width=30.0) -> EvalReport:
    pairs = list(_lane_pairs(pred_dir, gt_dir))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        if mode == "tusimple":
            total = TuSimpleCounts()
            for c in pool.map(lambda pg: tusimple_counts(*pg), pairs):
                total += c
            return total.report()
        results = [F1Result(t) for t in taus]
        for iou in pool.map(lambda pg: iou_matrix(pg[0], pg[1], mask_width), pairs):
            for r in results:
                r += counts_from_iou(iou, r.tau)
    return EvalReport("culane", results)


def cmd_eval(args, cfg, out):
    taus = tuple(args.tau) if args.tau else MF1_TAUS
    report = evaluate_dirs(args.predictions, args.ground_truth, args.mode, taus, args.threads, cfg["mask_width"])
    out.write(report.table() + "\n")
    out.write("".join(f"{k}={v}\n" for k, v in report.key_values()))
    if args.figures and args.mode == "culane":
        Path(args.figures).mkdir(parents=True, exist_ok=True)
        plotting.plot_f1_curve(report, Path(args.figures) / "f1.png")


def cmd_demo(args, cfg, out):
    res = run_demo(args.out, seed=args.seed, enhance_cfg=enhance_config(cfg),
                   fusion_cfg=FusionConfig(cfg["alpha"]), inference_cfg=inference_config(cfg),
                   n_sample=cfg["n_sample"], beta=cfg["beta"], figures=not args.no_figures,
                   c_embed=cfg["c_embed"] or 2)
    out.write("".join(f"{k}={v}\n" for k, v in res.summary.items()))
    out.write("".join(f"wrote {Path(args.out) / f}\n" for f in res.files))


COMMANDS = {"enhance": cmd_enhance, "wavelet": cmd_wavelet, "fuse": cmd_fuse, "sample": cmd_sample,
            "assign": cmd_assign, "loss": cmd_loss, "nms": cmd_nms, "eval": cmd_eval, "demo": cmd_demo}


def run(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    explicit = {k: getattr(args, k, None) for k in ("alpha", "n_sample", "beta", "sample_mode")}
    try:
        cfg = resolve_config(args.config, args.set, explicit)
        COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        err.write(f"welane: error: {exc}\n")
        return 1
    except (WelaneError, OSError) as exc:
        err.write(f"welane: {exc}\n")
        return 2
    return 0


def main():
    sys.exit(run())
