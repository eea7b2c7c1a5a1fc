"""Attend command - per-word Grad-CAM heatmaps over the image."""

import re
from pathlib import Path

import click

from xvl.cli import (
    apply_overrides,
    new_manifest,
    open_scorer,
    override_option,
    pass_context,
    prepare_out_dir,
    split_path,
)
from xvl.utils.errors import DataError
from xvl.utils.logging import stage_context

MASS_NAME = "quadrant_mass.jsonl"
_UNSAFE = re.compile(r"[^\w]+")


def heatmap_filename(position: int, word: str) -> str:
    """`<position>_<word>.png`; punctuation becomes 'punct'."""
    safe = _UNSAFE.sub("", word) or "punct"
    return f"{position:03d}_{safe}.png"


def save_heatmap(path: Path, heatmap, vmax: float | None = None, cmap: str = "jet") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.imsave(path, heatmap, cmap=cmap, vmin=0.0, vmax=vmax if vmax else None)


@click.command()
@click.option(
    "--checkpoint",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Trained checkpoint",
)
@click.option(
    "--data",
    "data_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
    help="Corpus directory written by gen-data",
)
@click.option("--split", default="test", show_default=True, help="Split to read studies from")
@click.option("--study-id", "study_ids", multiple=True, help="Studies to visualize (repeatable)")
@click.option("--limit", type=int, default=4, show_default=True, help="Studies when no id given")
@click.option("--report", "report_text", default=None, help="Report text replacing the study's")
@click.option("--layer", "gradcam_layer", type=int, default=None, help="Fusion layer (-1 is last)")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Output directory",
)
@click.option("--force", is_flag=True, default=False, help="Overwrite a non-empty directory")
@override_option
@pass_context
def attend(
    ctx,
    checkpoint,
    data_dir,
    split,
    study_ids,
    limit,
    report_text,
    gradcam_layer,
    out_dir,
    force,
    overrides,
):
    """Write one heatmap per report word plus quadrant-mass records."""
    apply_overrides(ctx.config, {"gradcam_layer": gradcam_layer}, overrides)

    if ctx.dry_run:
        click.echo("DRY RUN: Would render attention heatmaps")
        click.echo(f"  Checkpoint: {checkpoint}")
        click.echo(f"  Studies: {', '.join(study_ids) or f'first {limit} of {split}'}")
        click.echo(f"  Layer: {ctx.config.eval.gradcam_layer}")
        return

    result = _attend_impl(
        ctx, checkpoint, data_dir, split, list(study_ids), limit, report_text, out_dir, force
    )
    click.echo(f"Wrote {result['files']} heatmaps for {result['studies']} studies to {out_dir}")
    for study_id, word, quadrant, mass in result["location_words"]:
        click.echo(f"  {study_id} '{word}': peak {quadrant} ({mass:.2f})")


def _attend_impl(
    ctx,
    checkpoint: Path,
    data_dir: Path,
    split: str,
    study_ids: list[str],
    limit: int,
    report_text: str | None,
    out_dir: Path,
    force: bool = False,
) -> dict:
    """Implementation of heatmap rendering."""
    from xvl.models.study import LEVELS, SIDES
    from xvl.services.corpus_io import read_corpus, write_jsonl, write_manifest
    from xvl.services.zeroshot import quadrant_mass

    layer = ctx.config.eval.gradcam_layer
    data_path = split_path(data_dir, split)
    studies = read_corpus(data_path)
    if study_ids:
        by_id = {s.study_id: s for s in studies}
        missing = [i for i in study_ids if i not in by_id]
        if missing:
            raise DataError(f"Unknown study ids in {data_path}: {', '.join(missing)}")
        studies = [by_id[i] for i in study_ids]
    else:
        studies = studies[:limit]
    if not studies:
        raise DataError("No studies to visualize")

    out_dir = prepare_out_dir(out_dir, force)
    write_manifest(
        out_dir,
        new_manifest(
            ctx,
            "attend",
            0,
            {"checkpoint": checkpoint, "data": data_path, "report": report_text},
            {"masses": out_dir / MASS_NAME},
        ),
    )

    scorer = open_scorer(ctx, checkpoint)
    location_terms = set(SIDES) | set(LEVELS)
    records, location_words, files = [], [], 0
    with stage_context("attend", ctx.logger):
        for study in studies:
            report = report_text if report_text is not None else study.report
            heatmap = scorer.attention_gradcam(study.image, report, layer=layer)
            study_dir = out_dir / study.study_id
            study_dir.mkdir(exist_ok=True)
            save_heatmap(study_dir / "image.png", study.image, vmax=1.0, cmap="gray")
            vmax = float(heatmap.maps.max())
            for word, position, cam in zip(
                heatmap.words, heatmap.positions, heatmap.maps, strict=True
            ):
                save_heatmap(study_dir / heatmap_filename(position, word), cam, vmax)
                files += 1
                masses = quadrant_mass(cam)
                records.append(
                    {
                        "study_id": study.study_id,
                        "position": position,
                        "word": word,
                        "layer": layer,
                        "mass": masses,
                    }
                )
                if word in location_terms:
                    peak = max(masses, key=masses.get)
                    location_words.append((study.study_id, word, peak, masses[peak]))

    write_jsonl(out_dir / MASS_NAME, records)
    return {"files": files, "studies": len(studies), "location_words": location_words}
