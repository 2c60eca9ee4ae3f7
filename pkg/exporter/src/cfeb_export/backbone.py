"""Embedding backbones.

Two are built in: a CLIP vision-language model for real exports, and a
hash-projection backbone that needs no weights or downloads. The hash one
exists so the full export pipeline can run (and be tested) offline; its
embeddings are deterministic functions of the pixel/text content but carry
no semantics.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np
from PIL import Image

from .errors import BackboneUnavailableError

CLIP_MODEL_ID = "openai/clip-vit-base-patch16"


def _unit(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class HashBackbone:
    """Deterministic pseudo-embeddings seeded from content digests.

    Each image is resized to the input resolution and its RGB bytes hashed;
    the digest seeds a generator that draws the embedding. Same bytes, same
    vector, on any platform.
    """

    def __init__(self, embed_dim: int = 512, input_resolution: int = 224):
        self.embed_dim = embed_dim
        self.input_resolution = input_resolution

    @property
    def name(self) -> str:
        return f"hash-{self.embed_dim}"

    def _draw(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload).digest()
        words = [int.from_bytes(digest[i:i + 8], "little") for i in range(0, 32, 8)]
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
        return gen.standard_normal(self.embed_dim)

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        res = self.input_resolution
        rows = [
            self._draw(b"image\0" + img.convert("RGB").resize((res, res)).tobytes())
            for img in images
        ]
        return _unit(np.stack(rows))

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        rows = [self._draw(b"text\0" + t.encode("utf-8")) for t in texts]
        return _unit(np.stack(rows))


class ClipBackbone:
    """CLIP image/text encoder; imports torch lazily and loads real weights."""

    def __init__(self, model_id: str = CLIP_MODEL_ID):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise BackboneUnavailableError(
                f"CLIP backbone needs torch and transformers "
                f"(pip install 'cfeb-export[clip]'): {exc}"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise BackboneUnavailableError(
                f"cannot load {model_id}: {exc}"
            ) from exc
        self._torch = torch
        self._model.eval()
        self.embed_dim = int(self._model.config.projection_dim)
        self.input_resolution = int(self._model.config.vision_config.image_size)
        self.name = model_id

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        inputs = self._processor(images=images, return_tensors="pt")
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return _unit(feats.cpu().numpy().astype(np.float64))

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        inputs = self._processor(text=texts, return_tensors="pt",
                                 padding=True, truncation=True)
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return _unit(feats.cpu().numpy().astype(np.float64))


def get_backbone(name: str):
    """Resolve a backbone identifier from a job description."""
    m = re.fullmatch(r"hash(?:-(\d+))?", name)
    if m:
        return HashBackbone(int(m.group(1)) if m.group(1) else 512)
    if name in ("clip-vit-b16", CLIP_MODEL_ID):
        return ClipBackbone()
    if name.count("/") == 1:  # any hub-style CLIP id
        return ClipBackbone(name)
    raise BackboneUnavailableError(f"unknown backbone {name!r}")
