"""Command-line entry points: model ingestion, marker generation, replay,
evaluation studies, and the live session service."""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from .errors import BrickxarError
from .evalmetrics import (
    fps_profile,
    iou,
    marker_size_sweep,
    occlusion_agreement,
    registration_trials,
)
from .geometry import CameraIntrinsics, DEFAULT_INTRINSICS
from .hand import CbCrFrame, add_seed, detect_hand, hex_coverage_mask
from .imageio import read_cbcr, read_pgm, write_ppm
from .marker import default_marker_spec, render_marker_image
from .model import load_model, parse_ldraw, serialize_model, validate_step_order
from .scenes import make_tower_model, write_hand_corpus

log = logging.getLogger("brickxar")


def _setup_logging():
    level = os.environ.get("BRICKXAR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def format_table(headers: list[str], rows: list[list]) -> str:
    """Aligned-column text table."""
    cells = [headers] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for r in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


@click.group()
def cli():
    """Headless AR assembly-instruction engine."""
    _setup_logging()


@cli.group()
def model():
    """Assembly-model ingestion and generation."""


@model.command("ingest")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True)
def model_ingest(input_path, out_dir):
    """Parse an LDraw file into the canonical model format."""
    out = _out_dir(out_dir)
    parsed = parse_ldraw(Path(input_path).read_text())
    report = validate_step_order(parsed)
    (out / "model.json").write_bytes(serialize_model(parsed))
    _write_json(
        out / "order-report.json",
        {
            "flagged_steps": list(report.flagged_steps),
            "bridge_exceptions": [list(b) for b in report.bridge_exceptions],
        },
    )
    click.echo(f"model.json written ({parsed.final_step} steps)")


@model.command("gen-demo")
@click.option("--bricks", default=20, type=int)
@click.option("--out-dir", required=True)
def model_gen_demo(bricks, out_dir):
    """Generate the synthetic demo tower model."""
    out = _out_dir(out_dir)
    demo = make_tower_model(bricks, metadata_step=max(1, bricks // 2))
    (out / "model.json").write_bytes(serialize_model(demo))
    click.echo(f"model.json written ({bricks} steps)")


@cli.group()
def truth():
    """Scene-truth file generation."""


@truth.command("gen-demo")
@click.option("--model", "model_path", type=click.Path(exists=True))
@click.option("--bricks", default=5, type=int, help="demo tower size when no model given")
@click.option("--frames", default=120, type=int)
@click.option("--camera", type=click.Choice(["orbit", "static"]), default="orbit")
@click.option("--hand", "with_hand", is_flag=True, help="include a synthetic hand blob")
@click.option("--noise-px", default=0.0, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_path", required=True)
def truth_gen_demo(model_path, bricks, frames, camera, with_hand, noise_px, seed, out_path):
    """Generate a demo scene-truth file for replay or the session service."""
    from .scenes import make_hand_truth, make_orbit_truth, make_static_truth
    from .sim import truth_to_json

    if model_path:
        target = load_model(Path(model_path).read_bytes())
    else:
        target = make_tower_model(bricks, metadata_step=max(1, bricks // 2))
    hand_spec = None
    if with_hand:
        hand_spec = make_hand_truth(seed, n_frames=frames).hand
    if camera == "orbit":
        scene = make_orbit_truth(
            target, frames, hand=hand_spec, seed=seed, pixel_noise_sigma=noise_px
        )
    else:
        scene = make_static_truth(target, frames, hand=hand_spec, seed=seed)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(truth_to_json(scene))
    click.echo(f"{out} written ({frames} frames, {target.final_step} steps)")


@cli.group()
def marker():
    """Fiducial marker artifacts."""


@marker.command("gen")
@click.option("--px-per-mm", default=4.0, type=float)
@click.option("--out-dir", required=True)
def marker_gen(px_per_mm, out_dir):
    """Emit the printable marker raster and its JSON spec."""
    out = _out_dir(out_dir)
    spec = default_marker_spec()
    (out / "marker.ppm").write_bytes(write_ppm(render_marker_image(spec, px_per_mm)))
    (out / "marker.json").write_text(spec.to_json())
    click.echo("marker.ppm and marker.json written")


@cli.command("replay")
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True))
@click.option("--script", "script_path", type=click.Path(exists=True))
@click.option("--out-dir", required=True)
@click.option("--frames/--no-frames", default=True)
@click.option("--depth", is_flag=True)
@click.option("--profile", is_flag=True)
@click.option("--hand", is_flag=True)
@click.option("--grid-cell-px", default=10, type=int)
@click.option("--tol-cbcr", default=12.0, type=float)
def replay(truth_path, script_path, out_dir, frames, depth, profile, hand, grid_cell_px, tol_cbcr):
    """Run a scripted session against a scene-truth file."""
    from .sim import run_replay, truth_from_json

    truth = truth_from_json(Path(truth_path).read_text())
    script = []
    if script_path:
        script = json.loads(Path(script_path).read_text())
    result = run_replay(
        truth,
        script,
        _out_dir(out_dir),
        write_frames=frames,
        write_depth_rasters=depth,
        profile=profile,
        hand_enabled=hand,
        grid_cell_px=grid_cell_px,
        seed_tolerance=tol_cbcr,
    )
    click.echo(json.dumps(result["summary"], sort_keys=True))


@cli.group("eval")
def eval_group():
    """Quantitative evaluation studies."""


@eval_group.command("registration")
@click.option("--trials", default=100, type=int)
@click.option("--noise-px", default=0.3, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--model", "model_path", type=click.Path(exists=True))
@click.option("--bricks", default=20, type=int, help="demo tower size when no model given")
@click.option("--out-dir", required=True)
def eval_registration(trials, noise_px, seed, model_path, bricks, out_dir):
    """Randomized registration-accuracy study."""
    out = _out_dir(out_dir)
    if model_path:
        target = load_model(Path(model_path).read_bytes())
    else:
        target = make_tower_model(bricks)
    report = registration_trials(target, trials=trials, noise_px=noise_px, seed=seed)
    _write_json(out / "registration.json", report)
    rows = [
        ["trials", report["trials"]],
        ["noise_px", report["noise_px"]],
        ["mean_of_means_mm", f"{report['mean_of_means_mm']:.6f}"],
        ["median_mean_mm", f"{report['median_mean_mm']:.6f}"],
        ["frac_mean_below_1mm", f"{report['frac_mean_below_1mm']:.3f}"],
    ]
    (out / "registration.txt").write_text(format_table(["metric", "value"], rows))
    click.echo(f"frac_mean_below_1mm={report['frac_mean_below_1mm']:.3f}")


@eval_group.command("marker-sweep")
@click.option("--sizes", default="100,150,200", help="comma-separated marker widths (mm)")
@click.option("--trials", default=100, type=int)
@click.option("--noise-px", default=0.3, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--out-dir", required=True)
def eval_marker_sweep(sizes, trials, noise_px, seed, out_dir):
    """Median pose error as a function of marker size."""
    out = _out_dir(out_dir)
    size_list = [float(s) for s in sizes.split(",")]
    table = marker_size_sweep(size_list, noise_px, trials, seed=seed)
    _write_json(
        out / "marker-sweep.json",
        {
            "trials": trials,
            "noise_px": noise_px,
            "seed": seed,
            "medians": [{"size_mm": s, "median_err_mm": e} for s, e in table],
        },
    )
    rows = [[f"{s:.0f}", f"{e:.6f}"] for s, e in table]
    (out / "marker-sweep.txt").write_text(
        format_table(["size_mm", "median_err_mm"], rows)
    )
    click.echo("; ".join(f"{s:.0f}mm={e:.4f}" for s, e in table))


@eval_group.command("hand")
@click.option("--corpus", required=True, help="corpus directory (generated if empty)")
@click.option("--seed", default=0, type=int)
@click.option("--frames", default=50, type=int)
@click.option("--grid-cell-px", default=10, type=int)
@click.option("--tol-cbcr", default=12.0, type=float)
@click.option("--out-dir", required=True)
def eval_hand(corpus, seed, frames, grid_cell_px, tol_cbcr, out_dir):
    """Hand-segmentation IoU on the synthetic corpus."""
    out = _out_dir(out_dir)
    corpus_dir = Path(corpus)
    index = corpus_dir / "index.json"
    if not index.exists():
        log.info("corpus missing; generating %d frames", frames)
        index = write_hand_corpus(corpus_dir, n_frames=frames, seed=seed)
    entries = json.loads(index.read_text())["entries"]
    per_frame = []
    for e in entries:
        frame = CbCrFrame(
            read_cbcr((corpus_dir / e["cbcr"]).read_bytes()),
            e["screen_width"],
            e["screen_height"],
        )
        seeds = []
        for u, v in e["touches"]:
            seeds = add_seed(seeds, (u, v), frame, tol_cb=tol_cbcr, tol_cr=tol_cbcr)
        k = CameraIntrinsics(
            DEFAULT_INTRINSICS.fx,
            DEFAULT_INTRINSICS.fy,
            e["screen_width"] / 2,
            e["screen_height"] / 2,
            e["screen_width"],
            e["screen_height"],
        )
        _, hexes = detect_hand(frame, seeds, k, cell_px=grid_cell_px)
        detected = hex_coverage_mask(hexes, e["screen_width"], e["screen_height"])
        truth_mask = read_pgm((corpus_dir / e["mask"]).read_bytes()) > 0
        per_frame.append(iou(detected, truth_mask).iou)
    report = {
        "frames": len(per_frame),
        "seed": seed,
        "tol_cbcr": tol_cbcr,
        "grid_cell_px": grid_cell_px,
        "per_frame_iou": [round(x, 6) for x in per_frame],
        "mean_iou": round(float(np.mean(per_frame)), 6),
        "min_iou": round(float(np.min(per_frame)), 6),
    }
    _write_json(out / "hand.json", report)
    (out / "hand.txt").write_text(
        format_table(
            ["metric", "value"],
            [["frames", report["frames"]], ["mean_iou", report["mean_iou"]], ["min_iou", report["min_iou"]]],
        )
    )
    click.echo(f"mean_iou={report['mean_iou']}")


@eval_group.command("occlusion")
@click.option("--scenes", default=50, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out-dir", required=True)
def eval_occlusion(scenes, seed, out_dir):
    """Rasterizer occlusion vs. ray-cast oracle agreement."""
    out = _out_dir(out_dir)
    report = occlusion_agreement(scenes=scenes, seed=seed)
    report["per_scene_agreement"] = [round(x, 8) for x in report["per_scene_agreement"]]
    _write_json(out / "occlusion.json", report)
    click.echo(
        f"mean_agreement={report['mean_agreement']:.6f} min={report['min_agreement']:.6f}"
    )


@eval_group.command("fps")
@click.option("--timings", "timings_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True)
def eval_fps(timings_path, out_dir):
    """Profile statistics from a replay --profile timings file."""
    out = _out_dir(out_dir)
    times = [json.loads(line)["ms"] for line in Path(timings_path).read_text().splitlines() if line]
    report = fps_profile(times)
    _write_json(out / "fps.json", report)
    click.echo(f"median_ms={report['median_ms']:.2f} p95_ms={report['p95_ms']:.2f}")


@cli.command("serve")
@click.option("--model", "model_path", type=click.Path(exists=True))
@click.option("--truth", "truth_path", type=click.Path(exists=True))
@click.option("--bricks", default=5, type=int, help="demo tower size when no model given")
@click.option("--port", default=8750, type=int)
@click.option("--grid-cell-px", default=10, type=int)
@click.option("--tol-cbcr", default=12.0, type=float)
@click.option("--test-mode", is_flag=True, help="expose ground-truth mask endpoint")
def serve(model_path, truth_path, bricks, port, grid_cell_px, tol_cbcr, test_mode):
    """Run the live WebSocket session service."""
    from .service import serve_session

    if model_path:
        target = load_model(Path(model_path).read_bytes())
    else:
        target = make_tower_model(bricks)
    truth = None
    if truth_path:
        from .sim import truth_from_json

        truth = truth_from_json(Path(truth_path).read_text())
    serve_session(
        target,
        truth=truth,
        port=port,
        grid_cell_px=grid_cell_px,
        tol_cbcr=tol_cbcr,
        test_mode=test_mode,
    )


def main() -> int:
    try:
        cli(standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except BrickxarError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # internal failure
        log.exception("internal error")
        click.echo(f"internal error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
