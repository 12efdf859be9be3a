import logging
import sys

import click

from .encoders import DEFAULT_IMAGE_ENCODER, DEFAULT_TEXT_ENCODER
from .export import ExportConfig, export_image_vectors, export_text_vectors

log = logging.getLogger("embed_export")


def _config(corpus, image_root, out, text_encoder, image_encoder, batch_size, resize_edge):
    return ExportConfig(
        corpus=corpus,
        image_root=image_root,
        text_store=out,
        image_store=out,
        text_encoder_name=text_encoder,
        image_encoder_name=image_encoder,
        batch_size=batch_size,
        resize_edge=resize_edge,
    )


@click.group()
def main():
    """Precompute corpus embeddings as vector-store JSON files."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")


@main.command("export-text")
@click.option("--corpus", required=True, help="Corpus JSONL path.")
@click.option("--out", required=True, help="Output text store path.")
@click.option("--encoder", default=DEFAULT_TEXT_ENCODER, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
def export_text_cmd(corpus, out, encoder, batch_size):
    try:
        result = export_text_vectors(
            _config(corpus, "", out, encoder, DEFAULT_IMAGE_ENCODER, batch_size, 224)
        )
    except Exception as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    click.echo(f"wrote {result.exported} text vectors to {result.store_path}")


@main.command("export-images")
@click.option("--corpus", required=True, help="Corpus JSONL path.")
@click.option("--image-root", default="", help="Directory image paths resolve against.")
@click.option("--out", required=True, help="Output image store path.")
@click.option("--encoder", default=DEFAULT_IMAGE_ENCODER, show_default=True)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--resize-edge", default=224, show_default=True)
def export_images_cmd(corpus, image_root, out, encoder, batch_size, resize_edge):
    try:
        result = export_image_vectors(
            _config(corpus, image_root, out, DEFAULT_TEXT_ENCODER, encoder,
                    batch_size, resize_edge)
        )
    except Exception as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    click.echo(f"wrote {result.exported} image vectors to {result.store_path}")
    for key, reason in result.failures:
        click.echo(f"failed {key}: {reason}", err=True)
    if result.failures:
        sys.exit(2)
