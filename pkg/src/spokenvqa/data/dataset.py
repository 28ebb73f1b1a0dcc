"""Sample records, dataset generation and the on-disk format.

Layout of a dataset directory::

    manifest.json     master seed, voice seed, d_audio, generator version, hashes
    samples.jsonl     one JSON record per line (no audio; regenerated on read)
    images/<id>.png   one sidecar image per sample
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .instructions import INSTRUCTION_TYPES, InstructionType, make_instruction
from .scenes import MAX_SHAPES, MIN_SHAPES, BBox, SceneSpec, render_scene, synth_scene
from .speech import FRAMES_PER_CHAR, synth_audio_features
from .text import normalize_text

GENERATOR_VERSION = "shapes-v1"
MANIFEST = "manifest.json"
RECORDS = "samples.jsonl"


class DatasetError(ValueError):
    pass


@dataclass(eq=False)
class Sample:
    id: str
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    instruction_text: str
    instruction_type: InstructionType
    response_text: str
    bbox: BBox | None
    voice_seed: int = 0
    d_audio: int = 768
    scene: SceneSpec | None = None
    _audio: dict = field(default_factory=dict, repr=False)

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image.shape[1], self.image.shape[0])

    def audio(self, d_audio: int | None = None) -> np.ndarray:
        d = self.d_audio if d_audio is None else d_audio
        if d not in self._audio:
            self._audio[d] = synth_audio_features(self.instruction_text, d, self.voice_seed)
        return self._audio[d]

    @property
    def audio_features(self) -> np.ndarray:
        return self.audio()

    def record(self, image_path: str) -> dict:
        return {
            "id": self.id,
            "image": image_path,
            "image_size": list(self.image_size),
            "instruction_text": self.instruction_text,
            "instruction_type": self.instruction_type.value,
            "response_text": self.response_text,
            "bbox": None if self.bbox is None else list(self.bbox.as_tuple()),
            "scene": None if self.scene is None else self.scene.to_dict(),
        }


def generate_dataset(n: int, seed: int, *, itypes: Sequence[InstructionType | str] = INSTRUCTION_TYPES,
                     shapes_min: int = MIN_SHAPES, shapes_max: int = MAX_SHAPES,
                     width: int = 320, height: int = 240, d_audio: int = 768,
                     voice_seed: int = 0) -> list[Sample]:
    """Sample ``i`` gets its own scene and instruction type ``itypes[i % len(itypes)]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not MIN_SHAPES <= shapes_min <= shapes_max <= MAX_SHAPES:
        raise ValueError(f"need {MIN_SHAPES} <= shapes_min <= shapes_max <= {MAX_SHAPES}")
    itypes = [InstructionType(t) for t in itypes]
    samples = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        scene_seed, text_seed = (int(x) for x in rng.integers(0, 2**31, size=2))
        n_shapes = int(rng.integers(shapes_min, shapes_max + 1))
        spec = synth_scene(scene_seed, n_shapes, width, height)
        itype = itypes[i % len(itypes)]
        question, answer = make_instruction(spec, itype, text_seed)
        samples.append(Sample(
            id=f"s{seed}-{i:05d}",
            image=render_scene(spec),
            instruction_text=str(normalize_text(question)),
            instruction_type=itype,
            response_text=answer,
            bbox=spec.target_shape.bbox,
            voice_seed=voice_seed,
            d_audio=d_audio,
            scene=spec,
        ))
    return samples


def validate_sample(s: Sample) -> list[str]:
    """Invariant violations for one sample (empty list when valid)."""
    from ..metrics import parse_bbox

    problems = []
    w, h = s.image_size
    if s.image.ndim != 3 or s.image.shape[2] != 3:
        problems.append("image is not H x W x 3")
    elif s.image.min() < 0 or s.image.max() > 1:
        problems.append("image values outside [0, 1]")
    if s.bbox is not None:
        if not s.bbox.within(w, h):
            problems.append(f"bbox {s.bbox.as_tuple()} outside {w}x{h} image")
        if s.bbox.to_text() not in s.response_text:
            problems.append("response does not embed the bbox string")
        parsed = parse_bbox(s.response_text)
        if parsed is None or parsed != s.bbox.as_tuple():
            problems.append("bbox in response does not parse back to the sample bbox")
    if normalize_text(s.instruction_text) != s.instruction_text:
        problems.append("instruction text is not normalised")
    frames = s.audio().shape[0]
    if frames != min(FRAMES_PER_CHAR * len(s.instruction_text), 1500):
        problems.append(f"audio has {frames} frames")
    if not np.array_equal(s.audio(), synth_audio_features(s.instruction_text, s.d_audio, s.voice_seed)):
        problems.append("audio does not regenerate identically")
    return [f"{s.id}: {p}" for p in problems]


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(image, 0, 1) * 255).astype(np.uint8)


def fingerprint(samples: Iterable[Sample]) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(json.dumps(s.record(""), sort_keys=True).encode())
        h.update(_to_uint8(s.image).tobytes())
    return h.hexdigest()


def write_dataset(samples: Sequence[Sample], path: str | Path, *, master_seed: int | None = None) -> Path:
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    voice = {(s.voice_seed, s.d_audio) for s in samples}
    if len(voice) > 1:
        raise DatasetError("all samples in one dataset must share voice_seed and d_audio")
    voice_seed, d_audio = voice.pop() if voice else (0, 768)
    lines = []
    for s in samples:
        rel = f"images/{s.id}.png"
        Image.fromarray(_to_uint8(s.image)).save(path / rel, format="PNG")
        lines.append(json.dumps(s.record(rel), sort_keys=True))
    body = "".join(line + "\n" for line in lines)
    (path / RECORDS).write_text(body, encoding="utf-8")
    manifest = {
        "generator_version": GENERATOR_VERSION,
        "master_seed": master_seed,
        "voice_seed": voice_seed,
        "d_audio": d_audio,
        "frames_per_char": FRAMES_PER_CHAR,
        "n_samples": len(samples),
        "samples_sha256": hashlib.sha256(body.encode("utf-8")).hexdigest(),
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> dict:
    mpath = Path(path) / MANIFEST
    try:
        return json.loads(mpath.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"no {MANIFEST} in {path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{mpath}: malformed manifest ({exc})") from None


def read_dataset(path: str | Path) -> list[Sample]:
    path = Path(path)
    manifest = read_manifest(path)
    samples = []
    with open(path / RECORDS, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                rec = json.loads(line)
                sample_id = rec["id"]
                itype = InstructionType(rec["instruction_type"])
                bbox = None if rec["bbox"] is None else BBox(*rec["bbox"])
                scene = None if rec.get("scene") is None else SceneSpec.from_dict(rec["scene"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path / RECORDS}: malformed record on line {lineno} ({exc})") from None
            image_file = path / rec["image"]
            if not image_file.is_file():
                raise DatasetError(f"sample {sample_id}: missing image sidecar {rec['image']}")
            with Image.open(image_file) as im:
                image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            samples.append(Sample(
                id=sample_id,
                image=image,
                instruction_text=rec["instruction_text"],
                instruction_type=itype,
                response_text=rec["response_text"],
                bbox=bbox,
                voice_seed=manifest["voice_seed"],
                d_audio=manifest["d_audio"],
                scene=scene,
            ))
    if len(samples) != manifest["n_samples"]:
        raise DatasetError(f"manifest lists {manifest['n_samples']} samples, file has {len(samples)}")
    return samples
