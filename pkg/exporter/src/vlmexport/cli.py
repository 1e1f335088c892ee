"""vlmexport command line.

    vlmexport export --modality {image,text} --encoder NAME \
        --inputs PATH [--ids PATH] --out PATH [--deterministic] \
        [--batch-size N] [--on-error {abort,skip}]

Writes one embedding row per input, in manifest order, in the PVLMEMB1
format the downstream pipeline loads directly.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import EncoderError, load_encoder, load_images
from .formats import ExportFormatError, write_embeddings
from .manifest import ManifestError, load_manifest


def export_embeddings(manifest, deterministic: bool = False, batch_size: int = 16,
                      on_error: str = "abort") -> int:
    """Run the encoder over the manifest and write the embedding file.

    Returns the number of exported rows.
    """
    encoder = load_encoder(manifest.encoder, deterministic=deterministic)
    if manifest.modality == "image":
        images, kept_ids = load_images(manifest.inputs, manifest.ids, on_error=on_error)
        matrix = encoder.encode_images(images, batch_size=batch_size)
        ids = kept_ids
    else:
        matrix = encoder.encode_texts(manifest.inputs, batch_size=batch_size)
        ids = manifest.ids
    data = write_embeddings(manifest.modality, ids, matrix)
    manifest.out_path.parent.mkdir(parents=True, exist_ok=True)
    manifest.out_path.write_bytes(data)
    return len(ids)


def cmd_export(args) -> int:
    manifest = load_manifest(args.encoder, args.modality, args.inputs, args.ids,
                             args.out)
    rows = export_embeddings(manifest, deterministic=args.deterministic,
                             batch_size=args.batch_size, on_error=args.on_error)
    print(f"wrote {rows} x D embeddings to {manifest.out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlmexport",
        description="Export frozen CLIP-family embeddings to PVLMEMB1 files.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="encode an input listing into an embedding file")
    p.add_argument("--modality", choices=("image", "text"), required=True)
    p.add_argument("--encoder", required=True,
                   help="alias (ViT-B/32, ViT-B/16, ViT-L/14), hub id, or local path")
    p.add_argument("--inputs", required=True,
                   help="file listing one image path or caption per line")
    p.add_argument("--ids", help="file listing one ID per line (defaults derived)")
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded deterministic inference")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--on-error", choices=("abort", "skip"), default="abort",
                   help="what to do with unloadable inputs")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ManifestError, ExportFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except EncoderError as err:
        print(f"encoder error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
