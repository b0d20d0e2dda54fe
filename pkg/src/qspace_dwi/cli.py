"""Command-line interface: simulate, train, synthesize, restore, evaluate, animate.

Exit codes: 0 on success, 2 on usage errors (unknown verb or flag, malformed
flag value), 1 on runtime errors (missing files, invalid inputs). Logs go to
standard error; outputs go to the files named by the flags.

Examples:
    qspace-dwi simulate --table default --seed 0 --out phantom/
    qspace-dwi train --config train.json --data phantom/ --out model.qckpt
    qspace-dwi evaluate --pred a.qvol --ref b.qvol --mask mask.qvol --json report.json
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from pydantic import ValidationError

from qspace_dwi.evaluation.dti import dti_fit, fa_map, md_map
from qspace_dwi.evaluation.metrics import compute_metrics
from qspace_dwi.evaluation.restore import (
    animate_frames,
    interpolation_path,
    restore_qspace,
    synthesize_volume,
)
from qspace_dwi.exceptions import QSpaceError
from qspace_dwi.models import PhantomSpec, TrainConfig
from qspace_dwi.phantom import generate_phantom_dataset, read_phantom_dataset, write_phantom_dataset
from qspace_dwi.qspace import BVector, GradientTable, default_table, read_gradient_table
from qspace_dwi.settings import settings
from qspace_dwi.training.checkpoint import load_checkpoint, load_generator, save_checkpoint
from qspace_dwi.training.samples import SamplePool
from qspace_dwi.training.trainer import TrainState, init_train_state, run_training, write_loss_csv
from qspace_dwi.volume import VolumeStack, read_volume, write_volume

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


# ---------------------------------------------------------------------------
# Flag value parsers
# ---------------------------------------------------------------------------


def _direction(text: str) -> BVector:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"direction must be x,y,z numbers: {text!r}") from e
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"direction must have three components: {text!r}")
    vec = np.array(values)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise argparse.ArgumentTypeError("direction must be nonzero")
    return BVector.from_array(vec / norm)


def _file_pair(text: str) -> tuple[Path, Path]:
    parts = text.split(",")
    if len(parts) != 2 or not all(parts):
        raise argparse.ArgumentTypeError(f"expected BVEC,BVAL file pair: {text!r}")
    return Path(parts[0]), Path(parts[1])


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected an integer: {text!r}") from e
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer: {text!r}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected an integer: {text!r}") from e
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer: {text!r}")
    return value


def _require_files(*paths: Path | None) -> None:
    for path in paths:
        if path is not None and not path.exists():
            raise FileNotFoundError(f"no such file: {path}")


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    """Simulate a phantom dataset."""
    _require_files(args.spec)
    spec = (
        PhantomSpec.model_validate_json(args.spec.read_text(encoding="utf-8"))
        if args.spec is not None
        else PhantomSpec()
    )
    if args.table == "default":
        table = default_table(seed=args.seed)
    else:
        bvec, bval = _file_pair(args.table)
        _require_files(bvec, bval)
        table = read_gradient_table(bvec, bval)
    subjects = generate_phantom_dataset(spec, table, args.seed)
    manifest = write_phantom_dataset(subjects, table, spec, args.seed, args.out)
    logger.info(f"Dataset manifest: {manifest}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Train on the training split of a simulated dataset."""
    _require_files(args.config, args.data / "manifest.json", args.resume)
    config = (
        TrainConfig.model_validate_json(args.config.read_text(encoding="utf-8"))
        if args.config is not None
        else TrainConfig()
    )
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    if args.steps is not None:
        config = config.model_copy(update={"steps": args.steps})

    subjects, table = read_phantom_dataset(args.data, split="train")
    pool = SamplePool([(s.structural, s.dwis) for s in subjects], table, config)
    if args.resume is not None:
        state = TrainState.from_checkpoint(load_checkpoint(args.resume, expected_config=config))
        logger.info(f"Resuming from step {state.step}")
    else:
        state = init_train_state(config)

    def checkpoint(current: TrainState) -> None:
        save_checkpoint(current.to_checkpoint(config, pool.max_bvalue), args.out)

    def on_step(current: TrainState, _record: object) -> None:
        if args.checkpoint_every and current.step % args.checkpoint_every == 0:
            checkpoint(current)

    state, records = run_training(config, pool, state=state, on_step=on_step)
    checkpoint(state)
    loss_csv = args.loss_csv if args.loss_csv is not None else args.out.with_suffix(".loss.csv")
    write_loss_csv(records, loss_csv, append=args.resume is not None)
    return EXIT_OK


def cmd_synthesize(args: argparse.Namespace) -> int:
    """Synthesize DWIs for a gradient table from structural inputs."""
    _require_files(args.ckpt, args.structural, args.bvec, args.bval)
    g_params, config, max_bvalue = load_generator(args.ckpt)
    structural = read_volume(args.structural)
    table = read_gradient_table(args.bvec, args.bval)
    write_volume(synthesize_volume(structural, table, g_params, config, max_bvalue), args.out)
    return EXIT_OK


def cmd_restore(args: argparse.Namespace) -> int:
    """Complete a downsampled acquisition over the full table."""
    kept_bvec, kept_bval = args.kept_table
    full_bvec, full_bval = args.full_table
    _require_files(
        args.ckpt, args.dwis, kept_bvec, kept_bval, full_bvec, full_bval, args.structural
    )
    g_params, config, max_bvalue = load_generator(args.ckpt)
    kept = read_volume(args.dwis)
    structural = read_volume(args.structural) if args.structural is not None else None
    restored, provenance = restore_qspace(
        kept,
        read_gradient_table(kept_bvec, kept_bval),
        read_gradient_table(full_bvec, full_bval),
        g_params,
        config,
        max_bvalue,
        structural,
    )
    write_volume(restored, args.out)
    provenance_path = args.out.with_suffix(".provenance.json")
    provenance_path.write_text(json.dumps(provenance), encoding="utf-8")
    return EXIT_OK


def _compared_channels(pred: VolumeStack, ref: VolumeStack) -> list[str]:
    dwi = pred.dwi_names()
    if dwi and dwi == ref.dwi_names():
        return dwi
    shared = [c for c in pred.channels if c in ref]
    if not shared:
        raise QSpaceError("pred and ref share no channel names")
    return shared


def _dti_maps(
    stack: VolumeStack, table: GradientTable, mask: NDArray[np.bool_]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    fit = dti_fit(stack.select(stack.dwi_names()), table, mask=mask, b0=1.0)
    return fa_map(fit), md_map(fit)


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Compare a prediction with a reference (optionally through DTI maps)."""
    if args.dti and (args.bvec is None or args.bval is None):
        raise argparse.ArgumentTypeError("--dti needs --bvec and --bval")
    _require_files(args.pred, args.ref, args.mask, args.bvec, args.bval)
    pred, ref = read_volume(args.pred), read_volume(args.ref)
    mask = read_volume(args.mask).data[0] > 0.5 if args.mask is not None else None
    names = _compared_channels(pred, ref)
    report = compute_metrics(pred.select(names).data, ref.select(names).data, mask)
    payload = report.model_dump(mode="json")

    if args.dti:
        table = read_gradient_table(args.bvec, args.bval)
        fit_mask = mask if mask is not None else np.ones(pred.data.shape[1:], dtype=bool)
        fa_pred, md_pred = _dti_maps(pred, table, fit_mask)
        fa_ref, md_ref = _dti_maps(ref, table, fit_mask)
        md_range = float(md_ref.max()) or 1.0
        payload["dti"] = {
            "fa_ssim": compute_metrics(fa_pred, fa_ref, fit_mask, 1.0).ssim,
            "md_ssim": compute_metrics(md_pred, md_ref, fit_mask, md_range).ssim,
        }
        stem = args.json.with_suffix("")
        maps = {"fa": fa_pred, "md": md_pred, "fa_ref": fa_ref, "md_ref": md_ref}
        for tag, raster in maps.items():
            channel = tag.split("_")[0].upper()
            volume = VolumeStack(
                channels=(channel,), data=raster[np.newaxis], voxel_size=pred.voxel_size
            )
            write_volume(volume, Path(f"{stem}_{tag}.qvol"))

    args.json.parent.mkdir(parents=True, exist_ok=True)
    args.json.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return EXIT_OK


def cmd_animate(args: argparse.Namespace) -> int:
    """Synthesize frames along the great circle between two directions."""
    _require_files(args.ckpt, args.structural)
    g_params, config, max_bvalue = load_generator(args.ckpt)
    structural = read_volume(args.structural)
    path = interpolation_path(args.from_dir, args.to_dir, args.bval, args.frames)
    frames = animate_frames(structural, path, g_params, config, max_bvalue)
    args.out.mkdir(parents=True, exist_ok=True)
    listing = []
    for i, (entry, frame) in enumerate(zip(path, frames, strict=True)):
        name = f"frame_{i:03d}.qvol"
        write_volume(frame, args.out / name)
        d = entry.direction
        listing.append({"file": name, "direction": [d.x, d.y, d.z], "bvalue": entry.bvalue})
    (args.out / "frames.json").write_text(json.dumps(listing, indent=2), encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qspace-dwi", description="Q-space conditioned DWI synthesis."
    )
    verbs = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = verbs.add_parser("simulate", help="simulate a tensor phantom dataset")
    p.add_argument("--spec", type=Path, help="PhantomSpec JSON (defaults when omitted)")
    p.add_argument("--table", default="default", help="'default' or BVEC,BVAL")
    p.add_argument("--seed", type=_non_negative_int, default=settings.default_seed)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_simulate)

    p = verbs.add_parser("train", help="train the generator and discriminator")
    p.add_argument("--config", type=Path, help="TrainConfig JSON (defaults when omitted)")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=_non_negative_int)
    p.add_argument("--steps", type=_non_negative_int)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--loss-csv", type=Path)
    p.add_argument("--checkpoint-every", type=_positive_int)
    p.set_defaults(handler=cmd_train)

    p = verbs.add_parser("synthesize", help="synthesize DWIs for a gradient table")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--structural", type=Path, required=True)
    p.add_argument("--bvec", type=Path, required=True)
    p.add_argument("--bval", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_synthesize)

    p = verbs.add_parser("restore", help="restore a downsampled acquisition")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--dwis", type=Path, required=True)
    p.add_argument("--kept-table", type=_file_pair, required=True, metavar="BVEC,BVAL")
    p.add_argument("--full-table", type=_file_pair, required=True, metavar="BVEC,BVAL")
    p.add_argument("--structural", type=Path, help="structural volume if --dwis lacks B0/T2/T1")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_restore)

    p = verbs.add_parser("evaluate", help="PSNR/SSIM/MAE of a prediction")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--mask", type=Path)
    p.add_argument("--json", type=Path, required=True)
    p.add_argument("--dti", action="store_true", help="also compare FA/MD maps")
    p.add_argument("--bvec", type=Path)
    p.add_argument("--bval", type=Path)
    p.set_defaults(handler=cmd_evaluate)

    p = verbs.add_parser("animate", help="frames along a gradient-direction geodesic")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--structural", type=Path, required=True)
    p.add_argument("--from-dir", type=_direction, required=True, metavar="X,Y,Z")
    p.add_argument("--to-dir", type=_direction, required=True, metavar="X,Y,Z")
    p.add_argument("--bval", type=float, required=True)
    p.add_argument("--frames", type=_positive_int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_animate)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    """Parse `argv` and run the verb; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except argparse.ArgumentTypeError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.verb}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (QSpaceError, OSError, ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    """Console entry point."""
    logging.basicConfig(
        stream=sys.stderr,
        level=settings.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
