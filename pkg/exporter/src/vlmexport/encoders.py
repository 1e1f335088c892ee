"""Frozen encoder loading and batched embedding extraction.

Wraps CLIP-family checkpoints through transformers. Known short names map to
hub checkpoints; anything else is treated as a hub id or a local directory
(the offline-friendly path). The encoder runs in eval mode with gradients
off and exports the pooled projection-layer embedding, so output width
equals the model's projection dimension.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

ENCODER_ALIASES = {
    "ViT-B/32": "openai/clip-vit-base-patch32",
    "ViT-B/16": "openai/clip-vit-base-patch16",
    "ViT-L/14": "openai/clip-vit-large-patch14",
}


class EncoderError(RuntimeError):
    pass


class InputSkipped(RuntimeError):
    """Raised internally for unloadable inputs when skipping is allowed."""


class ClipEncoder:
    def __init__(self, model, processor, deterministic: bool = False):
        import torch

        if deterministic:
            torch.set_num_threads(1)
            torch.use_deterministic_algorithms(True)
        self.model = model.eval()
        self.processor = processor
        for p in self.model.parameters():
            p.requires_grad_(False)

    @property
    def width(self) -> int:
        return int(self.model.config.projection_dim)

    @staticmethod
    def _pooled(features) -> "np.ndarray":
        # transformers >= 5 returns an output object whose pooler_output
        # holds the projected embedding; older versions return the tensor.
        tensor = getattr(features, "pooler_output", features)
        return tensor.cpu().numpy().astype(np.float32)

    def encode_texts(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        import torch

        chunks = []
        with torch.no_grad():
            for start in range(0, len(texts), batch_size):
                batch = texts[start : start + batch_size]
                inputs = self.processor(text=batch, return_tensors="pt",
                                        padding=True, truncation=True)
                chunks.append(self._pooled(self.model.get_text_features(**inputs)))
        return np.vstack(chunks)

    def encode_images(self, images, batch_size: int = 16) -> np.ndarray:
        import torch

        chunks = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                batch = images[start : start + batch_size]
                inputs = self.processor(images=batch, return_tensors="pt")
                chunks.append(self._pooled(self.model.get_image_features(**inputs)))
        return np.vstack(chunks)


def load_encoder(name: str, deterministic: bool = False) -> ClipEncoder:
    """Load a frozen CLIP encoder by alias, hub id, or local directory."""
    target = ENCODER_ALIASES.get(name, name)
    try:
        from transformers import CLIPModel, CLIPProcessor
    except ImportError as err:
        raise EncoderError(f"transformers unavailable: {err}") from None
    try:
        model = CLIPModel.from_pretrained(target)
        processor = CLIPProcessor.from_pretrained(target)
    except Exception as err:
        raise EncoderError(f"cannot load encoder {name!r} ({target}): {err}") from None
    return ClipEncoder(model, processor, deterministic=deterministic)


def load_images(paths: list[str], ids: list[str], on_error: str = "abort"):
    """PIL-load image paths; skip-with-log or abort on unloadable inputs."""
    from PIL import Image

    images, kept_ids = [], []
    for path, sample_id in zip(paths, ids):
        try:
            with Image.open(path) as img:
                images.append(img.convert("RGB"))
        except Exception as err:
            if on_error == "skip":
                print(f"skipping {path}: {err}", file=sys.stderr)
                continue
            raise EncoderError(f"cannot load image {path}: {err}") from None
        kept_ids.append(sample_id)
    if not images:
        raise EncoderError("no loadable images in the input listing")
    return images, kept_ids
