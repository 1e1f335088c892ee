"""Shared fixture: a tiny CLIP checkpoint saved to disk.

Built from a random initialization with a miniature BPE vocabulary so the
tests run fully offline while exercising the same CLIPModel/CLIPProcessor
code path as a hub checkpoint.
"""

import json

import numpy as np
import pytest
import torch
from PIL import Image

TINY_VOCAB = [
    "l", "o", "w", "e", "r", "s", "t", "i", "d", "n", "lo", "l</w>", "w</w>",
    "r</w>", "t</w>", "low</w>", "er</w>", "lowest</w>", "newer</w>", "wider",
    "<unk>", "<|startoftext|>", "<|endoftext|>",
]
TINY_MERGES = ["#version: 0.2", "l o", "lo w</w>", "e r</w>"]
PROJECTION_DIM = 32


@pytest.fixture(scope="session")
def tiny_clip_dir(tmp_path_factory):
    from transformers import (
        CLIPConfig,
        CLIPImageProcessor,
        CLIPModel,
        CLIPProcessor,
        CLIPTokenizer,
    )

    work = tmp_path_factory.mktemp("tiny_clip_build")
    (work / "vocab.json").write_text(
        json.dumps({t: i for i, t in enumerate(TINY_VOCAB)}))
    (work / "merges.txt").write_text("\n".join(TINY_MERGES) + "\n")
    tokenizer = CLIPTokenizer(str(work / "vocab.json"), str(work / "merges.txt"))
    image_processor = CLIPImageProcessor(
        do_resize=True, size={"shortest_edge": 30},
        crop_size={"height": 30, "width": 30})
    processor = CLIPProcessor(image_processor=image_processor, tokenizer=tokenizer)
    config = CLIPConfig(
        text_config={
            "hidden_size": 32, "intermediate_size": 37, "num_attention_heads": 4,
            "num_hidden_layers": 2, "vocab_size": len(TINY_VOCAB),
            "max_position_embeddings": 77,
            "bos_token_id": TINY_VOCAB.index("<|startoftext|>"),
            "eos_token_id": TINY_VOCAB.index("<|endoftext|>"),
        },
        vision_config={
            "hidden_size": 32, "intermediate_size": 37, "num_attention_heads": 4,
            "num_hidden_layers": 2, "image_size": 30, "patch_size": 15,
        },
        projection_dim=PROJECTION_DIM,
    )
    torch.manual_seed(0)
    model = CLIPModel(config)
    save_dir = tmp_path_factory.mktemp("tiny_clip") / "checkpoint"
    model.save_pretrained(save_dir)
    processor.save_pretrained(save_dir)
    return save_dir


@pytest.fixture(scope="session")
def image_folder(tmp_path_factory):
    folder = tmp_path_factory.mktemp("imgs")
    rng = np.random.default_rng(7)
    paths = []
    for i in range(5):
        img = Image.fromarray((rng.random((36, 44, 3)) * 255).astype("uint8"))
        path = folder / f"photo_{i}.png"
        img.save(path)
        paths.append(path)
    return paths
