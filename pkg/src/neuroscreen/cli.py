"""Command-line entry points: generate | train | screen | report | gradcam."""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("neuroscreen")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad configuration or missing inputs; maps to exit status 2."""


def _protective(text: str) -> tuple[str, float]:
    name, sep, value = text.rpartition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME=P, got {text!r}")
    try:
        p = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"protective fraction {value!r} is not a number") from None
    return name, p


def _channels(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neuroscreen", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option values; flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("generate", help="render synthetic assay plates")
    common(g)
    g.add_argument("--plates", type=int, default=36)
    g.add_argument("--fields", type=int, default=30)
    g.add_argument("--channels", type=_channels, default=["Cy5", "DAPI", "dsRed", "FITC"])
    g.add_argument("--image-size", type=int, default=256)
    g.add_argument("--effect-size", type=float, default=1.0)
    g.add_argument("--protective", type=_protective, action="append", default=[],
                   metavar="NAME=P")
    g.add_argument("--dose-k", type=float, default=3.0)
    g.add_argument("--catalog", help="JSON list of compound names")
    g.add_argument("--layout", help="layout JSON used as the template for every plate")

    t = sub.add_parser("train", help="split plates and run two-stage training")
    common(t)
    t.add_argument("--data-root", required=False)
    t.add_argument("--n-test", type=int, default=2)
    t.add_argument("--epochs-stage1", type=int, default=10)
    t.add_argument("--epochs-stage2", type=int, default=10)
    t.add_argument("--lr-stage1", type=float, default=1e-3)
    t.add_argument("--lr-stage2", type=float, default=1e-4)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--input-size", type=int, default=256)
    t.add_argument("--pretrained", action="store_true")
    t.add_argument("--no-augment", action="store_true")

    s = sub.add_parser("screen", help="score plates and issue per-dose verdicts")
    common(s)
    s.add_argument("--checkpoint")
    s.add_argument("--data-root")
    s.add_argument("--plates", default="test",
                   help="'test' (held-out plates from the split), 'all', or comma-separated ids")
    s.add_argument("--scores", help="screen an existing scores CSV instead of running the model")
    s.add_argument("--layout", help="layout JSON for --scores (default: standard layout)")
    s.add_argument("--compound", default="", help="compound name for --scores")
    s.add_argument("--threshold", type=float, default=0.5)

    r = sub.add_parser("report", help="per-well score histograms")
    common(r)
    r.add_argument("--scores", required=False)
    r.add_argument("--layout")
    r.add_argument("--bins", type=int, default=20)

    c = sub.add_parser("gradcam", help="Grad-CAM overlays, one image per compound-dose regime")
    common(c)
    c.add_argument("--checkpoint")
    c.add_argument("--data-root")
    c.add_argument("--plate")
    c.add_argument("--target-class", type=int, choices=(0, 1),
                   help="class to explain (default: the image's true class)")
    c.add_argument("--alpha", type=float, default=0.45)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        values = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(values, dict):
        raise UsageError("config file must hold a JSON object")
    subparser = next(a for a in parser._subparsers._group_actions[0].choices.values()
                     if a.prog.endswith(" " + args.command))
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            raise UsageError(f"unknown option {key!r} in config file")
        action = actions[dest]
        if action.type is not None and isinstance(value, str):
            try:
                value = action.type(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config option {key!r}: {exc}") from None
        elif action.type in (int, float) and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise UsageError(f"config option {key!r} must be a number")
        elif action.type is int and not float(value).is_integer():
            raise UsageError(f"config option {key!r} must be an integer")
        defaults[dest] = action.type(value) if action.type in (int, float) else value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _snapshot(out: Path, args: argparse.Namespace) -> None:
    out.mkdir(parents=True, exist_ok=True)
    snap = {k: v for k, v in vars(args).items()}
    (out / "run_config.json").write_text(json.dumps(snap, indent=1, default=str))


def _require_dir(path, what: str) -> Path:
    if not path:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} {p} does not exist")
    return p


def _require_file(path, what: str) -> Path:
    if not path:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {p} does not exist")
    return p


# -- subcommands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    from .plate import default_layout, load_catalog, load_layout
    from .synth import SynthConfig, write_plate

    catalog = load_catalog(args.catalog)
    if not 1 <= args.plates <= len(catalog):
        raise UsageError(f"--plates must be between 1 and {len(catalog)}")
    known = set(catalog)
    for name, _ in args.protective:
        if name not in known:
            raise UsageError(f"--protective names unknown compound {name!r}")
    try:
        config = SynthConfig(effect_size=args.effect_size, protective_map=dict(args.protective),
                             dose_k_um=args.dose_k, image_size=args.image_size,
                             fields_per_well=args.fields, channels=tuple(args.channels),
                             base_seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    template = load_layout(args.layout) if args.layout else default_layout("")
    out = Path(args.out)
    _snapshot(out, args)
    width = len(str(args.plates))
    total = 0
    for i, compound in enumerate(catalog[:args.plates]):
        plate_id = f"P{i + 1:0{max(2, width)}d}"
        layout = template.with_compound(compound, plate_id)
        records = write_plate(layout, config, out / plate_id)
        total += len(records)
        log.info("plate %s (%s): %d images", plate_id, compound, len(records))
    print(f"wrote {total} images for {args.plates} plates to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .classifier import (ImageSet, ModelConfig, TrainConfig, build_model, fit,
                             save_checkpoint)
    from .ingest import (build_manifest, load_layouts, split_hash, split_plates,
                         training_pairs, write_split)

    root = _require_dir(args.data_root, "data-root")
    layouts = load_layouts(root)
    manifest = build_manifest(root, layouts)
    train_ids, test_ids = split_plates(manifest, args.n_test, args.seed)
    out = Path(args.out)
    _snapshot(out, args)
    write_split(out / "split.json", train_ids, test_ids, args.seed)

    train_set = ImageSet.from_examples(training_pairs(manifest, layouts, train_ids))
    valid_set = ImageSet.from_examples(training_pairs(manifest, layouts, test_ids))
    mcfg = ModelConfig(input_size=args.input_size, pretrained=args.pretrained)
    tcfg = TrainConfig(epochs_stage1=args.epochs_stage1, lr_stage1=args.lr_stage1,
                       epochs_stage2=args.epochs_stage2, lr_stage2=args.lr_stage2,
                       momentum=args.momentum, batch_size=args.batch_size, seed=args.seed,
                       augment=not args.no_augment)
    model = build_model(mcfg, seed=args.seed)
    report = fit(model, train_set, valid_set, tcfg)
    digest = split_hash(train_ids, test_ids)
    save_checkpoint(out / "checkpoint.pt", model, tcfg, digest,
                    {"train_plates": train_ids, "test_plates": test_ids})
    report.config["split_hash"] = digest
    report.save_json(out / "train_report.json")
    report.append_csv(out / "metrics.csv")

    print("train_loss, train_acc, valid_loss, valid_acc")
    f = report.final
    if f is None:
        print("nan, nan, nan, nan")
    else:
        fmt = lambda v: "nan" if v is None else f"{v:.4f}"  # noqa: E731
        print(", ".join(fmt(v) for v in (f.train_loss, f.train_acc, f.valid_loss, f.valid_acc)))
    return EXIT_OK


def _screen_and_write(out: Path, plate_id: str, compound: str, scores, layout, threshold):
    from .screening import screen_compound, summarize_plate, write_summary_csv, write_verdicts_json

    summaries = summarize_plate(scores, layout)
    result = screen_compound(summaries, threshold, compound, plate_id)
    write_summary_csv(out / f"{plate_id}_summary.csv", summaries)
    write_verdicts_json(out / f"{plate_id}_verdicts.json", result)
    return result


def cmd_screen(args) -> int:
    from .plate import default_layout, load_layout
    from .screening import read_scores_csv, write_scores_csv, write_verdicts_json

    if not 0.0 < args.threshold < 1.0:
        raise UsageError("--threshold must lie in (0, 1)")
    out = Path(args.out)
    results = []
    if args.scores:
        scores = read_scores_csv(_require_file(args.scores, "scores"))
        if not scores:
            raise UsageError(f"scores file {args.scores} is empty")
        _snapshot(out, args)
        template = load_layout(args.layout) if args.layout else default_layout(args.compound)
        for plate_id in sorted({s.plate_id for s in scores}):
            layout = template.with_compound(args.compound or template.compound_name, plate_id)
            plate_scores = [s for s in scores if s.plate_id == plate_id]
            results.append(_screen_and_write(out, plate_id, layout.compound_name,
                                             plate_scores, layout, args.threshold))
    else:
        from .classifier import load_checkpoint, score_records
        from .ingest import build_manifest, load_layouts, read_split

        ckpt_path = _require_file(args.checkpoint, "checkpoint")
        root = _require_dir(args.data_root, "data-root")
        model, ckpt = load_checkpoint(ckpt_path)
        layouts = load_layouts(root)
        manifest = build_manifest(root, layouts)
        if args.plates == "all":
            plates = manifest.plates
        elif args.plates == "test":
            split_file = ckpt_path.parent / "split.json"
            if split_file.is_file():
                plates = read_split(split_file)[1]
            else:
                plates = ckpt.get("extra", {}).get("test_plates") or []
            if not plates:
                raise UsageError("no held-out plates recorded next to the checkpoint; pass --plates")
        else:
            plates = [p.strip() for p in args.plates.split(",") if p.strip()]
        unknown = set(plates) - set(manifest.plates)
        if unknown:
            raise UsageError(f"unknown plates: {sorted(unknown)}")
        _snapshot(out, args)
        for plate_id in plates:
            layout = layouts[plate_id]
            scores = score_records(model, manifest.select([plate_id], channel="Cy5"))
            write_scores_csv(out / f"{plate_id}_scores.csv", scores)
            results.append(_screen_and_write(out, plate_id, layout.compound_name, scores,
                                             layout, args.threshold))
    write_verdicts_json(out / "verdicts.json", results)
    for res in results:
        flags = " INVALID CONTROLS" if res.invalid_controls else ""
        doses = ", ".join(f"{v.compound_dose_um}uM:{'protective' if v.protective else 'not protective'}"
                          f" ({v.mean_score:.2f})" for v in res.verdicts)
        print(f"{res.plate_id} {res.compound_name}: {doses}{flags}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .plate import default_layout, load_layout
    from .report import plot_well_grid, well_histograms, write_histogram_csv
    from .screening import read_scores_csv

    scores = read_scores_csv(_require_file(args.scores, "scores"))
    if not scores:
        raise UsageError(f"scores file {args.scores} is empty")
    if args.bins < 1:
        raise UsageError("--bins must be positive")
    template = load_layout(args.layout) if args.layout else default_layout("")
    out = Path(args.out)
    _snapshot(out, args)
    for plate_id in sorted({s.plate_id for s in scores}):
        layout = template.with_compound(template.compound_name, plate_id)
        rows = well_histograms([s for s in scores if s.plate_id == plate_id], layout, args.bins)
        write_histogram_csv(out / f"{plate_id}_histograms.csv", plate_id, rows, args.bins)
        fig = plot_well_grid(rows, title=plate_id, n_bins=args.bins)
        fig.savefig(out / f"{plate_id}_histograms.png", dpi=100)
        import matplotlib.pyplot as plt
        plt.close(fig)
    return EXIT_OK


def cmd_gradcam(args) -> int:
    from PIL import Image

    from .attention import grad_cam, overlay
    from .classifier import load_checkpoint, predict
    from .ingest import build_manifest, load_layouts, preprocess
    from .plate import TreatmentRegime
    from .screening import SCREEN_DOSES
    from .synth import load_png16

    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    root = _require_dir(args.data_root, "data-root")
    if not args.plate:
        raise UsageError("--plate is required")
    layouts = load_layouts(root)
    if args.plate not in layouts:
        raise UsageError(f"plate {args.plate} not found under {root}")
    if not 0.0 <= args.alpha <= 1.0:
        raise UsageError("--alpha must lie in [0, 1]")
    model, _ = load_checkpoint(ckpt_path)
    layout = layouts[args.plate]
    manifest = build_manifest(root, layouts)
    records = manifest.select([args.plate], channel="Cy5")
    out = Path(args.out)
    _snapshot(out, args)
    rng = random.Random(args.seed)
    n = model.config.input_size
    for dose in SCREEN_DOSES:
        for abeta in (0, 30):
            regime = TreatmentRegime(dose, abeta)
            wells = set(layout.wells_of(regime))
            pool = sorted((r for r in records if r.well in wells), key=lambda r: (r.well, r.field))
            if not pool:
                continue
            rec = rng.choice(pool)
            image = preprocess(load_png16(rec.path).astype(np.float32), n)
            score = predict(model, image)
            true_class = 1 if abeta == 30 else 0
            target = true_class if args.target_class is None else args.target_class
            heat = grad_cam(model, image, target, source=rec.path)
            rgb = overlay(np.clip(image / max(image.max(), 1e-6), 0, 1), heat, args.alpha)
            stem = f"{rec.plate_id}_{rec.well}_f{rec.field:02d}_cam_c{target}"
            Image.fromarray(np.round(rgb * 255).astype(np.uint8)).save(out / f"{stem}.png")
            correct = score if true_class == 1 else 1.0 - score
            caption = {"plate_id": rec.plate_id, "compound": layout.compound_name,
                       "well": str(rec.well), "field": rec.field, "source": rec.path,
                       "compound_dose_um": dose, "abeta_dose_um": abeta,
                       "abeta_score": score, "correct_class_score": correct,
                       "target_class": target, "triple": [dose, abeta, round(correct, 3)]}
            (out / f"{stem}.json").write_text(json.dumps(caption, indent=1))
            print(f"({dose}, {abeta}, {correct:.3f}) -> {stem}.png")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "screen": cmd_screen,
            "report": cmd_report, "gradcam": cmd_gradcam}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config_file(parser, argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"neuroscreen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .ingest import IngestError
    from .plate import LayoutError

    try:
        return COMMANDS[args.command](args)
    except (UsageError, IngestError, LayoutError) as exc:
        print(f"neuroscreen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"neuroscreen: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
