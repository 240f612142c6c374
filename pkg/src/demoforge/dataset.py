"""Generated-dataset assembly: pairing synthesized frames with the action
labels of the trajectories that produced them, integrity checking, and
merging with real-demonstration sets.

Layout (schema "craft-ds/1"):

    <root>/manifest.json
    <root>/episodes/<id>/      episode directories in the trajectory format

Action schema: 7 joint values + 1 gripper per arm per timestep; chains
with fewer than 7 joints are zero-padded on write (padding is dropped on
read using the robot's joint count). Integrity uses per-file 64-bit
FNV-1a checksums plus a per-episode digest over (relative path, checksum)
pairs. Episodes are immutable once written; manifests contain no
timestamps or absolute paths, so a rebuild with the same seed is
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .augment import GenerationRequest, RecipeKind, TILED_RECIPES
from .genclient import GeneratedVideo
from .kinematics import ArmAction
from .trajectory import Demonstration
from .viewcomposer import TileLayout, untile

SCHEMA_VERSION = "craft-ds/1"
ACTION_SCHEMA = "joints7+gripper-per-arm/1"
TOOL_VERSION = "demoforge/0.1.0"


class DatasetError(Exception):
    pass


class LengthMismatch(DatasetError):
    pass


class IdCollision(DatasetError):
    pass


class SchemaMismatch(DatasetError):
    pass


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def file_checksum(path: Path) -> str:
    return f"{fnv1a64(path.read_bytes()):016x}"


def episode_digest(file_checksums: dict[str, str]) -> str:
    lines = "".join(f"{name}:{file_checksums[name]}\n" for name in sorted(file_checksums))
    return f"{fnv1a64(lines.encode('utf-8')):016x}"


@dataclass
class EpisodeRecord:
    id: str
    recipe: str
    source_id: str
    seed: int
    t_len: int
    path: str  # relative to the dataset root
    checksum: str
    instruction: str
    model: str
    cameras: tuple[str, ...]


@dataclass
class Manifest:
    name: str
    seed: int
    episodes: dict[str, dict] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION
    action_schema: str = ACTION_SCHEMA
    tool_version: str = TOOL_VERSION
    config: dict = field(default_factory=dict)

    def add(self, record: EpisodeRecord) -> None:
        if record.id in self.episodes:
            raise IdCollision(f"episode id already present: {record.id}")
        self.episodes[record.id] = {
            "path": record.path,
            "recipe": record.recipe,
            "source_id": record.source_id,
            "seed": record.seed,
            "T": record.t_len,
            "checksum": record.checksum,
            "instruction": record.instruction,
            "model": record.model,
            "cameras": list(record.cameras),
        }
        self.counts[record.recipe] = self.counts.get(record.recipe, 0) + 1

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "schema_version": self.schema_version,
            "action_schema": self.action_schema,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "counts": dict(sorted(self.counts.items())),
            "episodes": {k: self.episodes[k] for k in sorted(self.episodes)},
            "config": self.config,
        }

    def digest(self) -> str:
        return f"{fnv1a64(json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':')).encode('utf-8')):016x}"

    @staticmethod
    def from_dict(data: dict) -> "Manifest":
        m = Manifest(
            name=data["name"],
            seed=data["seed"],
            schema_version=data["schema_version"],
            action_schema=data.get("action_schema", ACTION_SCHEMA),
            tool_version=data.get("tool_version", TOOL_VERSION),
            config=data.get("config", {}),
        )
        m.episodes = dict(data["episodes"])
        m.counts = dict(data["counts"])
        return m


def save_manifest(manifest: Manifest, root: str | Path) -> Path:
    path = Path(root) / "manifest.json"
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(root: str | Path) -> Manifest:
    path = Path(root) / "manifest.json"
    return Manifest.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _pad_joints(joints: tuple[float, ...]) -> list[float]:
    vals = list(joints)
    if len(vals) > 7:
        raise DatasetError(f"action schema holds at most 7 joints, got {len(vals)}")
    return vals + [0.0] * (7 - len(vals))


def write_episode(
    root: str | Path,
    episode_id: str,
    video: GeneratedVideo,
    candidate: Demonstration,
    request: GenerationRequest,
) -> EpisodeRecord:
    """Write one generated episode under <root>/episodes/<id>/.

    Tiled recipes are untiled into one stream per view first; everything
    else lands in a single third_person stream.
    """
    t_len = candidate.length
    if len(video.frames) != t_len:
        raise LengthMismatch(f"{len(video.frames)} generated frames vs T={t_len} actions")

    if request.recipe in TILED_RECIPES:
        layout = TileLayout(tile_size=request.tile_size, order=request.tile_order)
        streams: dict[str, list[np.ndarray]] = {name: [] for name in request.tile_order}
        for frame in video.frames:
            for name, view in untile(frame, layout, list(request.tile_order)):
                streams[name].append(view)
    else:
        streams = {"third_person": list(video.frames)}

    ep_dir = Path(root) / "episodes" / episode_id
    if ep_dir.exists():
        raise DatasetError(f"episode directory already exists: {ep_dir}")
    ep_dir.mkdir(parents=True)

    checksums: dict[str, str] = {}

    def write_file(rel: str, data: bytes) -> None:
        p = ep_dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
        checksums[rel] = f"{fnv1a64(data):016x}"

    actions_lines = []
    for t, (left, right) in enumerate(candidate.actions):
        rec = {
            "t": t + 1,
            "left_joints": _pad_joints(left.joints),
            "left_gripper": left.gripper,
            "right_joints": _pad_joints(right.joints),
            "right_gripper": right.gripper,
        }
        actions_lines.append(json.dumps(rec))
    write_file("actions.jsonl", ("\n".join(actions_lines) + "\n").encode("utf-8"))

    object_lines = []
    for t in range(t_len):
        rec = {"t": t + 1, "poses": {oid: candidate.object_track[oid][t].to_list() for oid in sorted(candidate.object_track)}}
        object_lines.append(json.dumps(rec))
    write_file("objects.jsonl", ("\n".join(object_lines) + "\n").encode("utf-8"))

    for cam, frames in streams.items():
        for t, frame in enumerate(frames):
            write_file(f"frames/{cam}/{t + 1:06d}.png", imgio.encode_png(frame))

    header = {
        "id": episode_id,
        "robot": candidate.robot.name,
        "T": t_len,
        "annotations": [],
        "recipe": str(request.recipe),
        "instruction": request.instruction,
        "seed": request.seed,
        "model": video.model,
        "reference": "absent" if request.reference_image is None else "present",
        "cameras": sorted(streams),
        "tiling": {"order": list(request.tile_order), "tile_size": request.tile_size} if request.tile_order else None,
        "provenance": dict(request.provenance),
    }
    write_file("episode.json", (json.dumps(header, indent=2, sort_keys=True) + "\n").encode("utf-8"))

    return EpisodeRecord(
        id=episode_id,
        recipe=str(request.recipe),
        source_id=str(request.provenance.get("source_episode", candidate.id)),
        seed=request.seed,
        t_len=t_len,
        path=f"episodes/{episode_id}",
        checksum=episode_digest(checksums),
        instruction=request.instruction,
        model=video.model,
        cameras=tuple(sorted(streams)),
    )


# --------------------------------------------------------------------------
# merge and verify


def merge(real: Manifest, gen: Manifest) -> Manifest:
    """Union of two manifests; episode ids must be disjoint and schemas equal."""
    if real.schema_version != gen.schema_version:
        raise SchemaMismatch(f"schema {real.schema_version} vs {gen.schema_version}")
    if real.action_schema != gen.action_schema:
        raise SchemaMismatch(f"action schema {real.action_schema} vs {gen.action_schema}")
    overlap = set(real.episodes) & set(gen.episodes)
    if overlap:
        raise IdCollision(f"colliding episode ids: {sorted(overlap)[:5]}")
    merged = Manifest(
        name=f"{real.name}+{gen.name}",
        seed=gen.seed,
        schema_version=real.schema_version,
        action_schema=real.action_schema,
        config={"merged_from": [real.name, gen.name]},
    )
    merged.episodes = {**real.episodes, **gen.episodes}
    counts: dict[str, int] = {}
    for src in (real.counts, gen.counts):
        for k, v in src.items():
            counts[k] = counts.get(k, 0) + v
    merged.counts = counts
    return merged


@dataclass
class EpisodeReport:
    episode_id: str
    passed: bool
    failures: list[str]


@dataclass
class VerifyReport:
    episodes: list[EpisodeReport]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.episodes)

    def summary(self) -> str:
        ok = sum(1 for e in self.episodes if e.passed)
        return f"{ok}/{len(self.episodes)} episodes pass"


def verify(manifest: Manifest, root: str | Path) -> VerifyReport:
    """Re-check checksums, stream/action length agreement, and recipe rules."""
    root = Path(root)
    reports = []
    for ep_id in sorted(manifest.episodes):
        entry = manifest.episodes[ep_id]
        failures: list[str] = []
        ep_dir = root / entry["path"]
        if not ep_dir.is_dir():
            reports.append(EpisodeReport(ep_id, False, [f"missing directory {entry['path']}"]))
            continue

        checksums: dict[str, str] = {}
        for p in sorted(ep_dir.rglob("*")):
            if p.is_file():
                checksums[str(p.relative_to(ep_dir)).replace("\\", "/")] = file_checksum(p)
        digest = episode_digest(checksums)
        if digest != entry["checksum"]:
            failures.append(f"checksum mismatch: {digest} != {entry['checksum']}")

        try:
            header = json.loads((ep_dir / "episode.json").read_text(encoding="utf-8"))
            n_actions = sum(1 for line in (ep_dir / "actions.jsonl").read_text(encoding="utf-8").splitlines() if line.strip())
            if n_actions != entry["T"]:
                failures.append(f"action count {n_actions} != T={entry['T']}")
            for cam in header.get("cameras", []):
                n_frames = len(list((ep_dir / "frames" / cam).glob("*.png")))
                if n_frames != entry["T"]:
                    failures.append(f"camera '{cam}' has {n_frames} frames, T={entry['T']}")
            if entry["recipe"] == str(RecipeKind.BACKGROUND) and header.get("reference") != "absent":
                failures.append("background episode must record an absent reference")
            if entry["recipe"] != str(RecipeKind.BACKGROUND) and header.get("reference") != "present":
                failures.append("non-background episode must record a present reference")
        except (OSError, ValueError, KeyError) as exc:
            failures.append(f"unreadable episode data: {exc}")

        reports.append(EpisodeReport(ep_id, not failures, failures))
    return VerifyReport(reports)


def index_real_episodes(root: str | Path, name: str, seed: int = 0) -> Manifest:
    """Build a manifest over existing (e.g. teleoperated) episode directories."""
    root = Path(root)
    manifest = Manifest(name=name, seed=seed)
    ep_root = root / "episodes"
    if not ep_root.is_dir():
        raise DatasetError(f"no episodes/ directory under {root}")
    for ep_dir in sorted(p for p in ep_root.iterdir() if p.is_dir()):
        header = json.loads((ep_dir / "episode.json").read_text(encoding="utf-8"))
        checksums = {
            str(p.relative_to(ep_dir)).replace("\\", "/"): file_checksum(p)
            for p in sorted(ep_dir.rglob("*"))
            if p.is_file()
        }
        cameras = header.get("cameras")
        if cameras is None:
            frames_dir = ep_dir / "frames"
            cameras = sorted(d.name for d in frames_dir.iterdir() if d.is_dir()) if frames_dir.is_dir() else []
        manifest.add(
            EpisodeRecord(
                id=header["id"],
                recipe=header.get("recipe", "real"),
                source_id=header.get("provenance", {}).get("source_id", header["id"]),
                seed=header.get("seed", 0),
                t_len=header["T"],
                path=f"episodes/{ep_dir.name}",
                checksum=episode_digest(checksums),
                instruction=header.get("instruction", ""),
                model=header.get("model", "real"),
                cameras=tuple(cameras),
            )
        )
    return manifest
