"""The seven augmentation recipes: each turns a demonstration (or an
expanded / retargeted candidate) into a generation request.

Reference-image and instruction rules per recipe:

- object_pose        control video from the expanded candidate; reference is
                     the gripper-object contact frame; base instruction
- lighting           reference replaced by an image-variant of the contact
                     frame under a sampled lighting phrase; instruction kept
- object_color       reference is the empty-table scene; instruction gains a
                     sampled color phrase
- background         reference omitted entirely; instruction gains a sampled
                     background phrase
- cross_embodiment   control video from the retargeted trajectory; reference
                     shows the target robot's scene; base instruction
- camera_view        control video and reference are 2x2 tiles of up to four
                     third-person style views
- wrist_third_person tiles third-person / left-wrist / right-wrist with the
                     fourth tile blank

For lighting / object_color / background the control video comes from the
unmodified source frames, so the three recipes share identical control
bytes for one source. Tiled control frames are produced by running edge
extraction per view and composing the edge tiles, which keeps blank
quadrants exactly zero (extracting on the composite would smear seam
gradients across quadrant borders).

Instruction suffixes are appended with the canonical separator "; ".
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .edgecontrol import CannyParams, ControlVideo, FilterParams, canny, filter_edges, make_control_video
from .genclient import GenClientError, ServiceUnavailable, canonical_json, encode_envelope
from .seeds import rng_for
from .trajectory import Demonstration
from .viewcomposer import DEFAULT_PAD_FRACTION, TileLayout, preprocess, tile, tile_edge_maps

INSTRUCTION_SEPARATOR = "; "
THIRD_PERSON = "third_person"
WRIST_TILE_ORDER = (THIRD_PERSON, "left_wrist", "right_wrist")


class RecipeKind(str, Enum):
    OBJECT_POSE = "object_pose"
    LIGHTING = "lighting"
    OBJECT_COLOR = "object_color"
    BACKGROUND = "background"
    CROSS_EMBODIMENT = "cross_embodiment"
    CAMERA_VIEW = "camera_view"
    WRIST_THIRD_PERSON = "wrist_third_person"

    def __str__(self) -> str:
        return self.value


TILED_RECIPES = (RecipeKind.CAMERA_VIEW, RecipeKind.WRIST_THIRD_PERSON)


class AugmentError(Exception):
    pass


class MissingAsset(AugmentError):
    pass


class InvariantViolation(AugmentError):
    pass


@dataclass(frozen=True)
class Recipe:
    kind: RecipeKind
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == RecipeKind.CAMERA_VIEW:
            views = self.options.get("views")
            if not views or not 1 <= len(views) <= 4:
                raise ValueError("camera_view recipe needs 1-4 view names in options['views']")


@dataclass
class GenerationRequest:
    """One job for the video generator: control video, optional reference,
    instruction, and bookkeeping. Only the background recipe omits the
    reference image."""

    control_frames: list[np.ndarray]
    fps: float
    reference_image: np.ndarray | None
    instruction: str
    seed: int
    recipe: RecipeKind
    provenance: dict = field(default_factory=dict)
    tile_order: tuple[str, ...] = ()
    tile_size: int = 0

    def __post_init__(self):
        if self.recipe == RecipeKind.BACKGROUND:
            if self.reference_image is not None:
                raise InvariantViolation("background requests must omit the reference image")
        elif self.reference_image is None:
            raise InvariantViolation(f"{self.recipe} requests need a reference image")
        if not self.control_frames:
            raise ValueError("request needs at least one control frame")

    def envelope(self, artifact_dir: str | Path | None = None) -> dict:
        return encode_envelope(self, artifact_dir)

    def canonical_bytes(self, artifact_dir: str | Path | None = None) -> bytes:
        return canonical_json(self.envelope(artifact_dir))


@dataclass(frozen=True)
class PromptLibrary:
    colors: tuple[str, ...]
    backgrounds: tuple[str, ...]
    lighting: tuple[str, ...]
    provenance: str = "static-fallback"  # or "service-generated"

    def __post_init__(self):
        for name in ("colors", "backgrounds", "lighting"):
            vals = getattr(self, name)
            if not vals:
                raise ValueError(f"prompt list '{name}' is empty")
            object.__setattr__(self, name, tuple(vals))


@dataclass
class TaskAssets:
    """Per-task inputs the recipes draw on."""

    base_instruction: str
    contact_t: int | None = None
    contact_reference: np.ndarray | None = None  # preprocessed contact frame
    empty_table: np.ndarray | None = None
    target_robot_reference: np.ndarray | None = None


@dataclass
class BuildSettings:
    canny: CannyParams = field(default_factory=CannyParams)
    filters: FilterParams = field(default_factory=FilterParams)
    out_size: int = 96
    tile_size: int = 64
    pad_fraction: float = DEFAULT_PAD_FRACTION
    fps: float = 5.0


def pick_contact_frame(demo: Demonstration, contact_t: int | None, out_size: int, pad_fraction: float = DEFAULT_PAD_FRACTION) -> np.ndarray:
    """Preprocessed third-person frame at the annotated contact timestep."""
    if contact_t is None:
        raise MissingAsset("contact timestep is not annotated")
    if THIRD_PERSON not in demo.camera_streams:
        raise MissingAsset(f"demo '{demo.id}' has no {THIRD_PERSON} stream")
    frames = demo.camera_streams[THIRD_PERSON]
    if not 1 <= contact_t <= len(frames):
        raise MissingAsset(f"contact_t={contact_t} outside [1, {len(frames)}]")
    return preprocess(frames[contact_t - 1], out_size, pad_fraction)


COLOR_LIST_PROMPT = "List 20 distinct object colors, one per line."
BACKGROUND_LIST_PROMPT = "List 20 varied tabletop background descriptions, one per line."
LIGHTING_LIST_PROMPT = "List 8 ambient lighting conditions, one per line."


def _dedupe(items: list[str]) -> tuple[str, ...]:
    seen = set()
    out = []
    for item in items:
        item = item.strip()
        if item and item not in seen:
            seen.add(item)
            out.append(item)
    return tuple(out)


def load_static_prompts() -> PromptLibrary:
    """Bundled placeholder prompt lists (the upstream lists are unpublished)."""

    def read(name: str) -> tuple[str, ...]:
        text = resources.files("demoforge").joinpath(f"prompts/{name}.txt").read_text(encoding="utf-8")
        return _dedupe(text.splitlines())

    return PromptLibrary(read("colors"), read("backgrounds"), read("lighting"), provenance="static-fallback")


def fill_prompt_library(llm, fallback: PromptLibrary | None = None) -> PromptLibrary:
    """Ask the LLM client for prompt lists, degrading to the static fallback."""
    fallback = fallback or load_static_prompts()
    try:
        colors = _dedupe(llm.llm_complete(COLOR_LIST_PROMPT))
        backgrounds = _dedupe(llm.llm_complete(BACKGROUND_LIST_PROMPT))
        lighting = _dedupe(llm.llm_complete(LIGHTING_LIST_PROMPT))
    except GenClientError:
        return replace(fallback, provenance="static-fallback")
    if not (colors and backgrounds and lighting):
        return replace(fallback, provenance="static-fallback")
    return PromptLibrary(colors, backgrounds, lighting, provenance="service-generated")


class CachingVariantProvider:
    """Wraps a client's image_variant with a per-(image, prompt) cache;
    variant generation is the expensive external call of the lighting recipe."""

    def __init__(self, service):
        self.service = service
        self._cache: dict[tuple[bytes, str], np.ndarray] = {}

    def __call__(self, base: np.ndarray, prompt: str) -> np.ndarray:
        key = (base.tobytes(), prompt)
        if key not in self._cache:
            self._cache[key] = self.service.image_variant(base, prompt)
        return self._cache[key]


def _sample(rng: np.random.Generator, items: tuple[str, ...]) -> str:
    return items[int(rng.integers(len(items)))]


def _source_control(demo: Demonstration, settings: BuildSettings) -> ControlVideo:
    if THIRD_PERSON not in demo.camera_streams:
        raise MissingAsset(f"demo '{demo.id}' has no {THIRD_PERSON} stream")
    frames = [preprocess(f, settings.out_size, settings.pad_fraction) for f in demo.camera_streams[THIRD_PERSON]]
    return make_control_video(frames, settings.canny, settings.filters, fps=settings.fps)


def _tiled_views(demo: Demonstration, view_names: tuple[str, ...], settings: BuildSettings):
    for name in view_names:
        if name not in demo.camera_streams:
            raise MissingAsset(f"demo '{demo.id}' has no '{name}' stream for tiling")
    t_len = demo.length
    per_view = {
        name: [preprocess(f, settings.tile_size, settings.pad_fraction) for f in demo.camera_streams[name]]
        for name in view_names
    }
    layout = TileLayout(tile_size=settings.tile_size, order=view_names)
    tiled_rgb = [
        tile([(name, per_view[name][t]) for name in view_names], layout) for t in range(t_len)
    ]
    edge_tiles = [
        tile_edge_maps(
            [filter_edges(canny(per_view[name][t], settings.canny), settings.filters) for name in view_names],
            settings.tile_size,
        )
        for t in range(t_len)
    ]
    return tiled_rgb, edge_tiles, layout


def build_request(
    recipe: Recipe,
    demo: Demonstration,
    assets: TaskAssets,
    prompts: PromptLibrary,
    seed: int,
    settings: BuildSettings | None = None,
    variant_provider=None,
) -> GenerationRequest:
    """Assemble the generation request for one recipe and one demonstration.

    `demo` must already carry the frames the recipe consumes: the expanded
    candidate's replay render for object_pose, the retargeted render for
    cross_embodiment, and the original source frames otherwise.
    """
    settings = settings or BuildSettings()
    rng = rng_for(seed)
    provenance = {"source_episode": demo.id}
    if "provenance" in demo.meta:
        provenance.update({k: v for k, v in demo.meta["provenance"].items() if k in ("source_id", "scene_seed", "attempt")})
    instruction = assets.base_instruction
    tile_order: tuple[str, ...] = ()
    tile_size = 0

    kind = recipe.kind
    if kind in (RecipeKind.OBJECT_POSE, RecipeKind.CROSS_EMBODIMENT, RecipeKind.LIGHTING, RecipeKind.OBJECT_COLOR, RecipeKind.BACKGROUND):
        control = _source_control(demo, settings)
        if kind == RecipeKind.OBJECT_POSE:
            if assets.contact_reference is None:
                raise MissingAsset("object_pose recipe needs the gripper-object contact reference")
            reference = assets.contact_reference
        elif kind == RecipeKind.CROSS_EMBODIMENT:
            if assets.target_robot_reference is None:
                raise MissingAsset("cross_embodiment recipe needs a target-robot reference image")
            reference = assets.target_robot_reference
        elif kind == RecipeKind.LIGHTING:
            if assets.contact_reference is None:
                raise MissingAsset("lighting recipe needs the contact reference to re-light")
            if variant_provider is None:
                raise MissingAsset("lighting recipe needs an image-variant provider")
            phrase = _sample(rng, prompts.lighting)
            try:
                reference = variant_provider(assets.contact_reference, phrase)
            except ServiceUnavailable as exc:
                raise MissingAsset(f"image-variant service unavailable: {exc}") from exc
        elif kind == RecipeKind.OBJECT_COLOR:
            if assets.empty_table is None:
                raise MissingAsset("object_color recipe needs the empty-table reference")
            reference = assets.empty_table
            color = _sample(rng, prompts.colors)
            instruction = f"{instruction}{INSTRUCTION_SEPARATOR}the objects are {color}"
        else:  # background
            reference = None
            background = _sample(rng, prompts.backgrounds)
            instruction = f"{instruction}{INSTRUCTION_SEPARATOR}the background is {background}"
        control_frames = control.frames
        fps = control.fps
    elif kind in TILED_RECIPES:
        if kind == RecipeKind.WRIST_THIRD_PERSON:
            view_names = WRIST_TILE_ORDER
        else:
            view_names = tuple(recipe.options["views"])
        contact_t = assets.contact_t
        if contact_t is None:
            raise MissingAsset("tiled recipes need the contact timestep for the reference tile")
        tiled_rgb, edge_tiles, layout = _tiled_views(demo, view_names, settings)
        if not 1 <= contact_t <= len(tiled_rgb):
            raise MissingAsset(f"contact_t={contact_t} outside [1, {len(tiled_rgb)}]")
        reference = tiled_rgb[contact_t - 1]
        control_frames = edge_tiles
        fps = settings.fps
        tile_order = view_names
        tile_size = settings.tile_size
    else:
        raise ValueError(f"unknown recipe kind: {kind}")

    return GenerationRequest(
        control_frames=control_frames,
        fps=fps,
        reference_image=reference,
        instruction=instruction,
        seed=seed,
        recipe=kind,
        provenance=provenance,
        tile_order=tile_order,
        tile_size=tile_size,
    )
