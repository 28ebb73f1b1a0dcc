from .dataset import (
    DatasetError,
    Sample,
    fingerprint,
    generate_dataset,
    read_dataset,
    read_manifest,
    validate_sample,
    write_dataset,
)
from .instructions import INSTRUCTION_TYPES, InstructionType, make_instruction
from .scenes import BBox, SceneSpec, Shape, render_scene, synth_scene
from .speech import synth_audio_features
from .text import normalize_text

__all__ = [
    "BBox", "DatasetError", "INSTRUCTION_TYPES", "InstructionType", "Sample", "SceneSpec", "Shape",
    "fingerprint", "generate_dataset", "make_instruction", "normalize_text", "read_dataset",
    "read_manifest", "render_scene", "synth_audio_features", "synth_scene", "validate_sample",
    "write_dataset",
]
