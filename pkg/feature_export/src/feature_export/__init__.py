"""Patch-feature exporter: ViT feature planes, masks, and function-name
embeddings as interchange tensors for the correspondence toolkit."""

from .backbone import N_BLOCKS, BackboneSpec, PatchBackbone
from .dftc import DftcError, write_tensor
from .export import ExportError, ExportSpec, export_view
from .text import TEXT_DIM, TextEmbeddingError, function_embeddings

__all__ = [
    "N_BLOCKS",
    "TEXT_DIM",
    "BackboneSpec",
    "DftcError",
    "ExportError",
    "ExportSpec",
    "PatchBackbone",
    "TextEmbeddingError",
    "export_view",
    "function_embeddings",
    "write_tensor",
]
