"""Pipeline orchestrator.

Commands: expand, retarget, edges, tile, generate, build, preview,
verify, fixtures. Every command takes a declarative YAML config
(--config) with CLI-flag overrides, honors --seed, and is
rerun-deterministic with the mock backend. Exit codes: 0 success,
1 partial (budget or service failures), 2 configuration error.

Seed discipline: one master seed is split per stage / recipe / episode
index (see seeds.py), so --jobs N changes wall time but never output
bytes.
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np
import yaml

from . import augment, dataset, fixtures, genclient, imgio, render, seeds, trajectory, viewcomposer
from .augment import BuildSettings, Recipe, RecipeKind, TaskAssets
from .edgecontrol import CannyParams, FilterParams, make_control_video
from .kinematics import BimanualRobot, IkParams, load_robot, retarget_trajectory, RetargetFailure
from .trajectory import (
    BudgetExhausted,
    Demonstration,
    ObjectRanges,
    PoseSampler,
    expand_batch,
    joint_limit_validator,
    ik_residual_validator,
    load_episode,
    save_episode,
)

EXIT_PARTIAL = 1
EXIT_CONFIG = 2

ALL_RECIPES = [str(k) for k in RecipeKind]


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    output_root: Path = Path("out")
    robots: dict[str, Path] = field(default_factory=dict)  # source/target -> file
    demos: Path | None = None  # directory containing episodes/
    recipes: dict[str, dict] = field(default_factory=dict)  # kind -> {count, views?}
    base_instruction: str = ""
    contact_t: int | None = None
    assets: dict[str, Path] = field(default_factory=dict)  # empty_table / target_robot_reference
    sampler: PoseSampler = field(default_factory=PoseSampler)
    ik: IkParams = field(default_factory=IkParams)
    canny: CannyParams = field(default_factory=CannyParams)
    filters: FilterParams = field(default_factory=FilterParams)
    out_size: int = 96
    tile_size: int = 64
    pad_fraction: float = viewcomposer.DEFAULT_PAD_FRACTION
    render_size: int = 96
    fps: float = 5.0
    blend_steps: int | None = None
    budget_factor: int = 20
    mock: bool = True
    endpoint: str | None = None
    token_env: str = "DEMOFORGE_TOKEN"
    jobs: int = 1
    dataset_name: str = "demoforge-dataset"

    def settings(self) -> BuildSettings:
        return BuildSettings(
            canny=self.canny,
            filters=self.filters,
            out_size=self.out_size,
            tile_size=self.tile_size,
            pad_fraction=self.pad_fraction,
            fps=self.fps,
        )

    def effective(self) -> dict:
        """Path-free echo of the parameters that shape the output bytes."""
        return {
            "seed": self.seed,
            "recipes": self.recipes,
            "base_instruction": self.base_instruction,
            "contact_t": self.contact_t,
            "sampler": {
                "default": vars(self.sampler.default),
                "per_object": {k: vars(v) for k, v in self.sampler.per_object.items()},
            },
            "ik": vars(self.ik),
            "canny": vars(self.canny),
            "filters": vars(self.filters),
            "view": {"out_size": self.out_size, "tile_size": self.tile_size, "pad_fraction": self.pad_fraction},
            "render_size": self.render_size,
            "fps": self.fps,
            "blend_steps": self.blend_steps,
            "budget_factor": self.budget_factor,
            "backend": "mock" if self.mock else "http",
        }


def _ranges_from(node: dict) -> ObjectRanges:
    return ObjectRanges(
        dx=float(node.get("dx", 0.05)),
        dy=float(node.get("dy", 0.05)),
        dz=float(node.get("dz", 0.0)),
        yaw=math.radians(float(node.get("yaw_deg", 15.0))),
    )


def load_config(path: str | Path | None, overrides: dict) -> PipelineConfig:
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"bad config: {exc}") from exc
    cfg = PipelineConfig()
    try:
        if "seed" in data:
            cfg.seed = int(data["seed"])
        if "output_root" in data:
            cfg.output_root = Path(data["output_root"])
        for name, value in data.get("robots", {}).items():
            cfg.robots[name] = Path(value)
        if "demos" in data:
            cfg.demos = Path(data["demos"])
        cfg.recipes = {str(k): dict(v or {}) for k, v in data.get("recipes", {}).items()}
        task = data.get("task", {})
        cfg.base_instruction = task.get("base_instruction", cfg.base_instruction)
        if "contact_t" in task:
            cfg.contact_t = int(task["contact_t"])
        for name, value in data.get("assets", {}).items():
            cfg.assets[name] = Path(value)
        exp = data.get("expansion", {})
        if "sampler" in exp:
            node = exp["sampler"]
            cfg.sampler = PoseSampler(
                default=_ranges_from(node),
                per_object={k: _ranges_from(v) for k, v in node.get("per_object", {}).items()},
            )
        if "ik" in exp:
            cfg.ik = IkParams(**exp["ik"])
        if "blend_steps" in exp and exp["blend_steps"] is not None:
            cfg.blend_steps = int(exp["blend_steps"])
        if "budget_factor" in exp:
            cfg.budget_factor = int(exp["budget_factor"])
        edges = data.get("edges", {})
        if edges:
            cfg.canny = CannyParams(
                gaussian_sigma=float(edges.get("sigma", 1.4)),
                kernel_size=int(edges.get("kernel", 5)),
                low_threshold=int(edges.get("low", 50)),
                high_threshold=int(edges.get("high", 150)),
            )
            cfg.filters = FilterParams(
                thicken_iters=int(edges.get("thicken", 1)),
                bridge_kernel=int(edges.get("bridge", 5)),
            )
        view = data.get("view", {})
        cfg.out_size = int(view.get("out_size", cfg.out_size))
        cfg.tile_size = int(view.get("tile_size", cfg.tile_size))
        cfg.pad_fraction = float(view.get("pad_fraction", cfg.pad_fraction))
        cfg.render_size = int(data.get("render", {}).get("size", cfg.render_size))
        cfg.fps = float(data.get("fps", cfg.fps))
        service = data.get("service", {})
        cfg.mock = bool(service.get("mock", True))
        cfg.endpoint = service.get("endpoint")
        if "name" in data:
            cfg.dataset_name = str(data["name"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc

    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if cfg.endpoint:
        cfg.mock = False

    for name, p in cfg.robots.items():
        if not Path(p).is_file():
            raise ConfigError(f"robot file missing ({name}): {p}")
    for name, p in cfg.assets.items():
        if not Path(p).is_file():
            raise ConfigError(f"asset file missing ({name}): {p}")
    for kind, node in cfg.recipes.items():
        if kind not in ALL_RECIPES:
            raise ConfigError(f"unknown recipe: {kind}")
        if int(node.get("count", 0)) < 0:
            raise ConfigError(f"recipe {kind}: count must be >= 0")
    return cfg


# --------------------------------------------------------------------------
# shared loading helpers


def _require(cfg: PipelineConfig, attr: str, what: str):
    value = getattr(cfg, attr)
    if not value:
        raise ConfigError(f"config is missing {what}")
    return value


def _load_robots(cfg: PipelineConfig) -> dict[str, BimanualRobot]:
    robots = {}
    for name, path in cfg.robots.items():
        robots[name] = load_robot(path)
    if not robots:
        raise ConfigError("config names no robots")
    return robots


def _load_demos(cfg: PipelineConfig, robots: dict[str, BimanualRobot]):
    demos_root = Path(_require(cfg, "demos", "a demos directory"))
    ep_root = demos_root / "episodes"
    if not ep_root.is_dir():
        raise ConfigError(f"no episodes/ directory under {demos_root}")
    by_name = {r.name: r for r in robots.values()}
    demos: list[Demonstration] = []
    annotations: dict[str, list] = {}
    for ep_dir in sorted(p for p in ep_root.iterdir() if p.is_dir()):
        demo, anns = load_episode(ep_dir, by_name)
        if not anns:
            raise ConfigError(f"episode {demo.id} carries no subtask annotations")
        demos.append(demo)
        annotations[demo.id] = anns
    if not demos:
        raise ConfigError(f"no episodes found under {ep_root}")
    return demos, annotations


def _service(cfg: PipelineConfig, artifact_dir: Path):
    if cfg.mock:
        return genclient.MockGenerationService(artifact_dir=artifact_dir)
    import os

    token = os.environ.get(cfg.token_env)
    return genclient.HttpGenerationService(cfg.endpoint, token=token, artifact_dir=artifact_dir)


def _render_streams(robot: BimanualRobot, demo: Demonstration, cameras: list[str], size: int) -> None:
    rcfg = render.RenderConfig(size=size)
    demo.camera_streams = {
        cam: render.render_stream(robot, demo.actions, demo.object_track, cam, rcfg) for cam in cameras
    }


def _source_assets(cfg: PipelineConfig, demo: Demonstration) -> TaskAssets:
    contact_ref = augment.pick_contact_frame(demo, cfg.contact_t, cfg.out_size, cfg.pad_fraction)
    if "empty_table" in cfg.assets:
        empty = viewcomposer.preprocess(imgio.load_png(cfg.assets["empty_table"]), cfg.out_size, cfg.pad_fraction)
    else:
        frame = render.render_frame(
            demo.robot, demo.actions[0], {}, "third_person", render.RenderConfig(size=cfg.render_size)
        )
        empty = viewcomposer.preprocess(frame, cfg.out_size, cfg.pad_fraction)
    target_ref = None
    if "target_robot_reference" in cfg.assets:
        target_ref = viewcomposer.preprocess(
            imgio.load_png(cfg.assets["target_robot_reference"]), cfg.out_size, cfg.pad_fraction
        )
    return TaskAssets(
        base_instruction=cfg.base_instruction or f"perform the {demo.meta.get('task', 'bimanual')} task",
        contact_t=cfg.contact_t,
        contact_reference=contact_ref,
        empty_table=empty,
        target_robot_reference=target_ref,
    )


def _run_jobs(jobs: int, work, items):
    """Index-ordered map; output is identical for any worker count."""
    if jobs <= 1:
        return [work(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(work, items))


# --------------------------------------------------------------------------
# cli root


@click.group()
def main():
    """Batch pipeline for synthesizing bimanual demonstration datasets."""


def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None, help="YAML pipeline config")(fn)
    fn = click.option("--seed", type=int, default=None, help="master seed override")(fn)
    fn = click.option("--out", "output_root", type=click.Path(), default=None, help="output root override")(fn)
    fn = click.option("--jobs", type=int, default=None, help="parallel workers (outputs invariant)")(fn)
    return fn


def _build_cfg(config_path, seed, output_root, jobs, **extra) -> PipelineConfig:
    overrides = {"seed": seed, "jobs": jobs, **extra}
    if output_root is not None:
        overrides["output_root"] = Path(output_root)
    try:
        return load_config(config_path, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


@main.command("fixtures")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--demos", "n_demos", type=int, default=3, show_default=True)
@click.option("--steps", type=int, default=12, show_default=True, help="timesteps per demo")
@click.option("--render-size", type=int, default=96, show_default=True)
def cmd_fixtures(out_dir, n_demos, steps, render_size):
    """Write bundled robots, synthetic demos, and a ready-to-run config."""
    out = Path(out_dir)
    info = fixtures.write_fixture_tree(out, n_demos=n_demos, t_len=steps, render_size=render_size)
    config = {
        "seed": 7,
        "name": "demoforge-fixture",
        "output_root": str(out / "out"),
        "robots": info["robots"],
        "demos": info["demos"],
        "task": {"base_instruction": "touch the cube then move to the bowl", "contact_t": info["contact_t"]},
        "recipes": {kind: {"count": 2} for kind in ALL_RECIPES},
        "expansion": {"sampler": {"dx": 0.03, "dy": 0.03, "dz": 0.0, "yaw_deg": 10.0}},
        "view": {"out_size": render_size, "tile_size": max(32, render_size // 2)},
        "render": {"size": render_size},
        "service": {"mock": True},
    }
    config["recipes"]["camera_view"]["views"] = ["third_person", "third_person_b"]
    cfg_path = out / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    click.echo(f"fixtures written under {out} (config: {cfg_path})")


@main.command("expand")
@_common_options
@click.option("--count", type=int, default=None, help="candidates to accept")
def cmd_expand(config_path, seed, output_root, jobs, count):
    """Expand source demos into validated candidate trajectories."""
    cfg = _build_cfg(config_path, seed, output_root, jobs)
    robots = _load_robots(cfg)
    demos, annotations = _load_demos(cfg, robots)
    n = count if count is not None else sum(int(r.get("count", 0)) for r in cfg.recipes.values()) or 5
    out = cfg.output_root / "candidates"
    validators = [joint_limit_validator(), ik_residual_validator(2.0 * cfg.ik.pos_tol)]
    partial = False
    try:
        result = expand_batch(
            demos, annotations, cfg.sampler, n, seeds.child_seed(cfg.seed, seeds.STAGE_EXPAND),
            ik=cfg.ik, validators=validators, blend_steps=cfg.blend_steps, budget_factor=cfg.budget_factor,
        )
    except BudgetExhausted as exc:
        result = trajectory.BatchResult(exc.accepted, exc.attempts, exc.attempts - len(exc.accepted))
        partial = True
    for record in result.candidates:
        save_episode(record.demo, out / "episodes" / record.demo.id, annotations[record.source_id])
    report = {
        "requested": n,
        "accepted": len(result.candidates),
        "attempts": result.attempts,
        "rejected": result.rejected,
        "per_source": result.per_source_counts(),
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"accepted {report['accepted']}/{n} candidates ({result.attempts} attempts) -> {out}")
    if partial:
        sys.exit(EXIT_PARTIAL)


@main.command("retarget")
@_common_options
@click.option("--source-robot", "source_name", default="source", show_default=True)
@click.option("--target-robot", "target_name", default="target", show_default=True)
def cmd_retarget(config_path, seed, output_root, jobs, source_name, target_name):
    """Retarget demos from the source embodiment to the target embodiment."""
    cfg = _build_cfg(config_path, seed, output_root, jobs)
    robots = _load_robots(cfg)
    for name in (source_name, target_name):
        if name not in robots:
            click.echo(f"config error: robot '{name}' not configured", err=True)
            sys.exit(EXIT_CONFIG)
    demos, annotations = _load_demos(cfg, robots)
    target = robots[target_name]
    out = cfg.output_root / "retargeted"
    failures = []
    from .kinematics import fk

    for demo in demos:
        try:
            actions = retarget_trajectory(demo.robot, target, demo.actions, cfg.ik)
        except RetargetFailure as exc:
            failures.append({"demo": demo.id, "t": exc.timestep, "arm": exc.arm, "residual": exc.residual})
            continue
        residuals = []
        for t, (src_act, tgt_act) in enumerate(zip(demo.actions, actions)):
            for i, arm in ((0, "left"), (1, "right")):
                sp = fk(demo.robot.chain(arm), src_act[i].joints).position
                tp = fk(target.chain(arm), tgt_act[i].joints).position
                residuals.append(float(np.linalg.norm(sp - tp)))
        new_demo = Demonstration(
            id=f"{demo.id}-to-{target.name}",
            robot=target,
            actions=actions,
            object_track=demo.object_track,
            scene=demo.scene,
            meta={**demo.meta, "provenance": {"source_id": demo.id, "retargeted_to": target.name}},
        )
        _render_streams(target, new_demo, sorted(demo.camera_streams) or ["third_person"], cfg.render_size)
        save_episode(new_demo, out / "episodes" / new_demo.id, annotations[demo.id])
        (out / "episodes" / new_demo.id / "residuals.json").write_text(
            json.dumps({"max": max(residuals), "mean": sum(residuals) / len(residuals)}, indent=2) + "\n",
            encoding="utf-8",
        )
        click.echo(f"{demo.id}: max tool deviation {max(residuals):.2e} m")
    if failures:
        (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n", encoding="utf-8")
        click.echo(f"{len(failures)} demos failed retargeting", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command("edges")
@_common_options
def cmd_edges(config_path, seed, output_root, jobs):
    """Extract filtered control videos from demo third-person streams."""
    cfg = _build_cfg(config_path, seed, output_root, jobs)
    robots = _load_robots(cfg)
    demos, _ = _load_demos(cfg, robots)
    out = cfg.output_root / "edges"

    def work(demo: Demonstration):
        frames = [
            viewcomposer.preprocess(f, cfg.out_size, cfg.pad_fraction)
            for f in demo.camera_streams["third_person"]
        ]
        video = make_control_video(frames, cfg.canny, cfg.filters, fps=cfg.fps)
        vdir = out / demo.id
        vdir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(video.frames):
            imgio.save_png(frame, vdir / f"{t + 1:06d}.png")
        meta = {
            "fps": video.fps,
            "frames": len(video.frames),
            "canny": vars(cfg.canny),
            "filters": vars(cfg.filters),
        }
        (vdir / "control.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return demo.id

    done = _run_jobs(cfg.jobs, work, demos)
    click.echo(f"wrote control videos for {len(done)} demos -> {out}")


@main.command("tile")
@_common_options
@click.option("--views", default="third_person,left_wrist,right_wrist", show_default=True)
def cmd_tile(config_path, seed, output_root, jobs, views):
    """Compose 2x2 tiled frames from the named camera streams."""
    cfg = _build_cfg(config_path, seed, output_root, jobs)
    robots = _load_robots(cfg)
    demos, _ = _load_demos(cfg, robots)
    view_names = [v.strip() for v in views.split(",") if v.strip()]
    if not 1 <= len(view_names) <= 4:
        click.echo("config error: need 1-4 views", err=True)
        sys.exit(EXIT_CONFIG)
    out = cfg.output_root / "tiles"
    layout = viewcomposer.TileLayout(tile_size=cfg.tile_size, order=tuple(view_names))
    for demo in demos:
        for name in view_names:
            if name not in demo.camera_streams:
                click.echo(f"config error: demo {demo.id} lacks camera '{name}'", err=True)
                sys.exit(EXIT_CONFIG)
        vdir = out / demo.id
        vdir.mkdir(parents=True, exist_ok=True)
        for t in range(demo.length):
            tiles = [
                (name, viewcomposer.preprocess(demo.camera_streams[name][t], cfg.tile_size, cfg.pad_fraction))
                for name in view_names
            ]
            imgio.save_png(viewcomposer.tile(tiles, layout), vdir / f"{t + 1:06d}.png")
        meta = {"order": view_names, "tile_size": cfg.tile_size, "pad_fraction": cfg.pad_fraction}
        (vdir / "tiling.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"wrote tiled frames for {len(demos)} demos -> {out}")


# --------------------------------------------------------------------------
# request production shared by generate/build


def _recipe_list(cfg: PipelineConfig, only: str | None) -> list[tuple[Recipe, int]]:
    wanted = [r.strip() for r in only.split(",")] if only else list(cfg.recipes)
    out = []
    for kind in wanted:
        if kind not in ALL_RECIPES:
            raise ConfigError(f"unknown recipe: {kind}")
        node = cfg.recipes.get(kind, {})
        count = int(node.get("count", 0))
        options = {k: v for k, v in node.items() if k != "count"}
        out.append((Recipe(RecipeKind(kind), options), count))
    return out


@dataclass
class _EpisodePlan:
    recipe: Recipe
    index: int
    episode_id: str
    source: Demonstration
    request_demo: Demonstration  # demo carrying the frames the recipe consumes
    assets: TaskAssets
    request_seed: int


def _plan_recipe(
    cfg: PipelineConfig,
    recipe: Recipe,
    count: int,
    recipe_idx: int,
    demos: list[Demonstration],
    annotations: dict[str, list],
    assets_by_id: dict[str, TaskAssets],
    robots: dict[str, BimanualRobot],
) -> tuple[list[_EpisodePlan], str | None]:
    """Produce per-episode work items for one recipe, or a skip reason."""
    kind = recipe.kind
    plans: list[_EpisodePlan] = []
    if count == 0:
        return plans, "count is zero"

    if kind == RecipeKind.OBJECT_POSE:
        try:
            batch = expand_batch(
                demos, annotations, cfg.sampler, count,
                seeds.child_seed(cfg.seed, seeds.STAGE_EXPAND, recipe_idx),
                ik=cfg.ik,
                validators=[joint_limit_validator(), ik_residual_validator(2.0 * cfg.ik.pos_tol)],
                blend_steps=cfg.blend_steps, budget_factor=cfg.budget_factor,
            )
        except BudgetExhausted as exc:
            raise
        for k, record in enumerate(batch.candidates):
            cand = record.demo
            _render_streams(cand.robot, cand, ["third_person"], cfg.render_size)
            plans.append(
                _EpisodePlan(
                    recipe, k, f"{kind}_{k:04d}", next(d for d in demos if d.id == record.source_id),
                    cand, assets_by_id[record.source_id],
                    seeds.child_seed(cfg.seed, seeds.STAGE_REQUEST, recipe_idx, k),
                )
            )
        return plans, None

    if kind == RecipeKind.CROSS_EMBODIMENT:
        if "target" not in robots:
            return [], "no target robot configured"
        target = robots["target"]
        retargeted: dict[str, Demonstration] = {}
        for demo in demos:
            try:
                actions = retarget_trajectory(demo.robot, target, demo.actions, cfg.ik)
            except RetargetFailure as exc:
                return [], f"retargeting failed for {demo.id} at t={exc.timestep} ({exc.arm})"
            new_demo = Demonstration(
                id=f"{demo.id}-xe",
                robot=target,
                actions=actions,
                object_track=demo.object_track,
                scene=demo.scene,
                meta={**demo.meta, "provenance": {"source_id": demo.id, "retargeted_to": target.name}},
            )
            _render_streams(target, new_demo, ["third_person"], cfg.render_size)
            retargeted[demo.id] = new_demo
        for k in range(count):
            src = demos[k % len(demos)]
            rdemo = retargeted[src.id]
            base = assets_by_id[src.id]
            contact_idx = (cfg.contact_t or 1) - 1
            target_ref = viewcomposer.preprocess(
                rdemo.camera_streams["third_person"][contact_idx], cfg.out_size, cfg.pad_fraction
            )
            assets = TaskAssets(
                base_instruction=base.base_instruction,
                contact_t=base.contact_t,
                contact_reference=base.contact_reference,
                empty_table=base.empty_table,
                target_robot_reference=base.target_robot_reference
                if base.target_robot_reference is not None
                else target_ref,
            )
            plans.append(
                _EpisodePlan(
                    recipe, k, f"{kind}_{k:04d}", src, rdemo, assets,
                    seeds.child_seed(cfg.seed, seeds.STAGE_REQUEST, recipe_idx, k),
                )
            )
        return plans, None

    if kind in augment.TILED_RECIPES:
        needed = (
            list(recipe.options.get("views", []))
            if kind == RecipeKind.CAMERA_VIEW
            else list(augment.WRIST_TILE_ORDER)
        )
        for name in needed:
            if any(name not in d.camera_streams for d in demos):
                return [], f"demos lack camera stream '{name}'"

    for k in range(count):
        src = demos[k % len(demos)]
        plans.append(
            _EpisodePlan(
                recipe, k, f"{kind}_{k:04d}", src, src, assets_by_id[src.id],
                seeds.child_seed(cfg.seed, seeds.STAGE_REQUEST, recipe_idx, k),
            )
        )
    return plans, None


def _execute_plan(
    plan: _EpisodePlan,
    cfg: PipelineConfig,
    service,
    prompts: augment.PromptLibrary,
    variant_provider,
    dataset_root: Path | None,
):
    request = augment.build_request(
        plan.recipe, plan.request_demo, plan.assets, prompts, plan.request_seed,
        settings=cfg.settings(), variant_provider=variant_provider,
    )
    job_id = service.submit(request)
    video = genclient.wait_for(service, job_id)
    if dataset_root is None:
        return plan, request, video, None
    record = dataset.write_episode(dataset_root, plan.episode_id, video, plan.request_demo, request)
    return plan, request, video, record


@main.command("generate")
@_common_options
@click.option("--recipes", "recipes_flag", default=None, help="comma-separated recipe subset")
@click.option("--count", type=int, default=None, help="override per-recipe count")
@click.option("--mock/--no-mock", "mock_flag", default=None)
@click.option("--endpoint", default=None, help="generation service URL")
def cmd_generate(config_path, seed, output_root, jobs, recipes_flag, count, mock_flag, endpoint):
    """Build requests and run them through the generation service."""
    over = {}
    if mock_flag is not None:
        over["mock"] = mock_flag
    if endpoint:
        over["endpoint"] = endpoint
    cfg = _build_cfg(config_path, seed, output_root, jobs, **over)
    robots = _load_robots(cfg)
    demos, annotations = _load_demos(cfg, robots)
    out = cfg.output_root / "videos"
    out.mkdir(parents=True, exist_ok=True)
    service = _service(cfg, cfg.output_root / "artifacts")
    prompts = augment.fill_prompt_library(service)
    variant_provider = augment.CachingVariantProvider(service)
    assets_by_id = {d.id: _source_assets(cfg, d) for d in demos}

    try:
        recipe_counts = _recipe_list(cfg, recipes_flag)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    per_recipe: dict[str, int] = {}
    failures: list[str] = []
    for idx, (recipe, n) in enumerate(recipe_counts):
        n = count if count is not None else n
        try:
            plans, skip = _plan_recipe(cfg, recipe, n, idx, demos, annotations, assets_by_id, robots)
        except BudgetExhausted as exc:
            plans, skip = [], f"expansion budget exhausted ({len(exc.accepted)} accepted)"
        if skip:
            click.echo(f"{recipe.kind}: skipped ({skip})")
            continue

        def work(plan: _EpisodePlan):
            try:
                plan, request, video, _ = _execute_plan(plan, cfg, service, prompts, variant_provider, None)
            except genclient.GenClientError as exc:
                return plan, None, None, str(exc)
            vdir = out / plan.episode_id
            vdir.mkdir(parents=True, exist_ok=True)
            for t, frame in enumerate(video.frames):
                imgio.save_png(frame, vdir / f"{t + 1:06d}.png")
            (vdir / "request.json").write_text(
                json.dumps(
                    {"instruction": request.instruction, "seed": request.seed, "recipe": str(request.recipe),
                     "reference": "absent" if request.reference_image is None else "present",
                     "model": video.model},
                    indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
            return plan, request, video, None

        results = _run_jobs(cfg.jobs, work, plans)
        ok = sum(1 for r in results if r[3] is None)
        failures.extend(r[3] for r in results if r[3] is not None)
        per_recipe[str(recipe.kind)] = ok
        click.echo(f"{recipe.kind}: {ok}/{len(plans)} videos")
    (out / "report.json").write_text(
        json.dumps({"per_recipe": per_recipe, "failures": failures}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    if failures:
        click.echo(f"{len(failures)} jobs failed", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command("build")
@_common_options
@click.option("--recipes", "recipes_flag", default=None, help="comma-separated recipe subset")
@click.option("--count", type=int, default=None, help="override per-recipe count")
@click.option("--mock/--no-mock", "mock_flag", default=None)
@click.option("--endpoint", default=None, help="generation service URL")
@click.option("--merge-real", "merge_real", type=click.Path(), default=None,
              help="existing dataset root to merge with the generated one")
def cmd_build(config_path, seed, output_root, jobs, recipes_flag, count, mock_flag, endpoint, merge_real):
    """Run the full pipeline and assemble the generated dataset."""
    over = {}
    if mock_flag is not None:
        over["mock"] = mock_flag
    if endpoint:
        over["endpoint"] = endpoint
    cfg = _build_cfg(config_path, seed, output_root, jobs, **over)
    robots = _load_robots(cfg)
    demos, annotations = _load_demos(cfg, robots)
    dataset_root = cfg.output_root / "dataset"
    if (dataset_root / "manifest.json").exists():
        click.echo(f"config error: dataset already exists at {dataset_root}", err=True)
        sys.exit(EXIT_CONFIG)
    service = _service(cfg, cfg.output_root / "artifacts")
    prompts = augment.fill_prompt_library(service)
    variant_provider = augment.CachingVariantProvider(service)
    assets_by_id = {d.id: _source_assets(cfg, d) for d in demos}

    try:
        recipe_counts = _recipe_list(cfg, recipes_flag)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    manifest = dataset.Manifest(name=cfg.dataset_name, seed=cfg.seed, config=cfg.effective())
    skips: dict[str, str] = {}
    partial = False
    for idx, (recipe, n) in enumerate(recipe_counts):
        n = count if count is not None else n
        try:
            plans, skip = _plan_recipe(cfg, recipe, n, idx, demos, annotations, assets_by_id, robots)
        except BudgetExhausted as exc:
            plans, skip = [], f"expansion budget exhausted ({len(exc.accepted)} accepted)"
            partial = True
        if skip:
            skips[str(recipe.kind)] = skip
            click.echo(f"{recipe.kind}: skipped ({skip})")
            continue

        def work(plan: _EpisodePlan):
            try:
                return _execute_plan(plan, cfg, service, prompts, variant_provider, dataset_root)
            except genclient.GenClientError as exc:
                return plan, None, None, exc

        results = _run_jobs(cfg.jobs, work, plans)
        ok = 0
        for plan, request, video, record in results:
            if isinstance(record, dataset.EpisodeRecord):
                manifest.add(record)
                ok += 1
            else:
                partial = True
        click.echo(f"{recipe.kind}: {ok}/{len(plans)} episodes")

    if skips:
        manifest.config["skipped"] = skips
    dataset_root.mkdir(parents=True, exist_ok=True)
    dataset.save_manifest(manifest, dataset_root)
    click.echo(f"dataset at {dataset_root}: {sum(manifest.counts.values())} episodes, digest {manifest.digest()}")

    if merge_real:
        real = dataset.load_manifest(merge_real)
        merged = dataset.merge(real, manifest)
        click.echo(f"merged with {merge_real}: {len(merged.episodes)} episodes total")

    if partial:
        sys.exit(EXIT_PARTIAL)


@main.command("preview")
@click.argument("episode_dir", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None, help="contact sheet path")
@click.option("--every", type=int, default=2, show_default=True, help="use every k-th frame")
def cmd_preview(episode_dir, out_path, every):
    """Render a contact-sheet PNG (one row per camera) plus stats."""
    ep_dir = Path(episode_dir)
    header_path = ep_dir / "episode.json"
    if not header_path.is_file():
        click.echo(f"error: {ep_dir} is not an episode directory", err=True)
        sys.exit(EXIT_CONFIG)
    header = json.loads(header_path.read_text(encoding="utf-8"))
    frames_root = ep_dir / "frames"
    cameras = sorted(d.name for d in frames_root.iterdir() if d.is_dir()) if frames_root.is_dir() else []
    if not cameras:
        click.echo("error: episode has no frames", err=True)
        sys.exit(EXIT_CONFIG)
    rows = []
    for cam in cameras:
        paths = sorted((frames_root / cam).glob("*.png"))[::every]
        rows.append(np.concatenate([imgio.load_png(p) for p in paths], axis=1))
    width = max(r.shape[1] for r in rows)
    rows = [np.pad(r, ((0, 0), (0, width - r.shape[1]), (0, 0))) for r in rows]
    sheet = np.concatenate(rows, axis=0)
    out_file = Path(out_path) if out_path else ep_dir / "preview.png"
    imgio.save_png(sheet, out_file)
    click.echo(f"episode {header['id']}: T={header['T']} cameras={cameras} recipe={header.get('recipe', 'real')}")
    click.echo(f"instruction: {header.get('instruction', '')!r}")
    click.echo(f"contact sheet -> {out_file}")


@main.command("verify")
@click.argument("dataset_root", type=click.Path(exists=True))
def cmd_verify(dataset_root):
    """Re-check manifest checksums, lengths, and recipe invariants."""
    try:
        manifest = dataset.load_manifest(dataset_root)
    except (OSError, ValueError, KeyError) as exc:
        click.echo(f"error: unreadable manifest: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    report = dataset.verify(manifest, dataset_root)
    for ep in report.episodes:
        status = "ok" if ep.passed else "FAIL " + "; ".join(ep.failures)
        click.echo(f"{ep.episode_id}: {status}")
    click.echo(report.summary())
    if not report.passed:
        sys.exit(EXIT_PARTIAL)


if __name__ == "__main__":
    main()
