"""Clients for the three generative services (video synthesis, text
completion, image variants) plus deterministic in-process mocks so the
whole pipeline runs offline.

Wire protocol (UTF-8 JSON everywhere):

- POST /v1/jobs            submit a generation job; body is the canonical
                           envelope below; response {"job_id": "<sha256>"}
- GET  /v1/jobs/{id}       {"state": "queued|running|done|failed", "detail": ""}
- GET  /v1/jobs/{id}/result  ZIP archive: frames 000001.png.. + meta.json
- POST /v1/complete        {"prompt": ...} -> {"text": "..."} (newline list)
- POST /v1/variant         {"image_b64": ..., "prompt": ...} -> {"image_b64": ...}

Envelope fields: recipe, instruction, seed, fps, provenance, and either
control_frames_b64 (PNG base64, jobs up to 64 frames) or control_artifact
(directory of numbered PNGs shared out of band) with control_frame_count.
reference_png_b64 is present for every recipe except background. The job
id is the sha256 of the canonical JSON bytes (sorted keys, compact
separators), which makes submission idempotent by construction.

Error mapping: 404 unknown job, 409 result not ready, 410 job failed,
422 malformed envelope. Transport retries: 3 attempts with exponential
backoff (1 s, 2 s, 4 s by default) before ServiceUnavailable.
"""

from __future__ import annotations

import base64
import hashlib
import json
import time
import zipfile
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from . import imgio

INLINE_FRAME_LIMIT = 64
MOCK_MODEL_TAG = "mock-compositor/1"

TERMINAL_STATES = ("done", "failed")


class GenClientError(Exception):
    pass


class ServiceUnavailable(GenClientError):
    pass


class ProtocolError(GenClientError):
    pass


class UnknownJob(GenClientError):
    pass


class NotReady(GenClientError):
    pass


class JobFailed(GenClientError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"generation job failed: {detail}")


@dataclass(frozen=True)
class JobStatus:
    state: str
    detail: str = ""


@dataclass
class GeneratedVideo:
    frames: list[np.ndarray]
    seed: int
    model: str

    def __post_init__(self):
        if not self.frames:
            raise ValueError("generated video needs at least one frame")
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.shape != shape:
                raise ValueError(f"frame {i} shape {f.shape} != {shape}")


# --------------------------------------------------------------------------
# canonical envelope


def canonical_json(data: dict) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def encode_envelope(request, artifact_dir: str | Path | None = None) -> dict:
    """Serialize an augment.GenerationRequest to the wire envelope.

    Jobs longer than INLINE_FRAME_LIMIT frames are written to
    `artifact_dir` (content-addressed subdirectory) and referenced by name
    instead of inlined.
    """
    env: dict = {
        "recipe": str(request.recipe),
        "instruction": request.instruction,
        "seed": int(request.seed),
        "fps": float(request.fps),
        "provenance": dict(request.provenance),
    }
    if request.reference_image is not None:
        env["reference_png_b64"] = base64.b64encode(imgio.encode_png(request.reference_image)).decode("ascii")
    frame_pngs = [imgio.encode_png(f) for f in request.control_frames]
    if len(frame_pngs) <= INLINE_FRAME_LIMIT:
        env["control_frames_b64"] = [base64.b64encode(p).decode("ascii") for p in frame_pngs]
    else:
        if artifact_dir is None:
            raise ProtocolError(f"jobs over {INLINE_FRAME_LIMIT} frames need an artifact directory")
        digest = hashlib.sha256(b"".join(frame_pngs)).hexdigest()[:24]
        target = Path(artifact_dir) / digest
        if not target.is_dir():
            tmp = target.with_suffix(".tmp")
            tmp.mkdir(parents=True, exist_ok=True)
            for i, png in enumerate(frame_pngs):
                (tmp / f"{i + 1:06d}.png").write_bytes(png)
            tmp.rename(target)
        env["control_artifact"] = digest
        env["control_frame_count"] = len(frame_pngs)
    return env


def envelope_job_id(env: dict) -> str:
    return hashlib.sha256(canonical_json(env)).hexdigest()


def decode_control_frames(env: dict, artifact_dir: str | Path | None = None) -> list[np.ndarray]:
    if "control_frames_b64" in env:
        return [imgio.decode_png(base64.b64decode(b)) for b in env["control_frames_b64"]]
    if "control_artifact" in env:
        if artifact_dir is None:
            raise ProtocolError("envelope references an artifact but no artifact directory is configured")
        target = Path(artifact_dir) / env["control_artifact"]
        paths = sorted(target.glob("*.png"))
        if len(paths) != env.get("control_frame_count", len(paths)):
            raise ProtocolError("artifact frame count mismatch")
        return [imgio.load_png(p) for p in paths]
    raise ProtocolError("envelope has no control frames")


# --------------------------------------------------------------------------
# deterministic mock synthesis


def instruction_hue(instruction: str) -> int:
    """Stable hue in [0, 360) derived from the instruction text."""
    digest = hashlib.sha256(instruction.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") % 360


def _hue_to_rgb(hue: int) -> tuple[int, int, int]:
    # saturated HSV (s=1, v=1) to RGB using exact 60-degree sectors
    h = hue % 360
    sector, rem = divmod(h, 60)
    ramp = round(255 * rem / 60)
    down = 255 - ramp
    table = {
        0: (255, ramp, 0),
        1: (down, 255, 0),
        2: (0, 255, ramp),
        3: (0, down, 255),
        4: (ramp, 0, 255),
        5: (255, 0, down),
    }
    return table[sector]


def mock_generate(request) -> GeneratedVideo:
    """Deterministic stand-in for the diffusion backend.

    The canvas is the reference image when present, otherwise mid-gray;
    each frame overlays its edge map tinted by a hue hashed from the
    instruction. Byte-identical output for identical inputs.
    """
    frames = []
    tint = np.array(_hue_to_rgb(instruction_hue(request.instruction)), dtype=np.uint8)
    for edge in request.control_frames:
        h, w = edge.shape[:2]
        if request.reference_image is not None:
            canvas = request.reference_image
            if canvas.shape[:2] != (h, w):
                raise ProtocolError(
                    f"reference {canvas.shape[:2]} does not match control frames {(h, w)}"
                )
            frame = canvas.copy()
        else:
            frame = np.full((h, w, 3), 128, dtype=np.uint8)
        mask = (edge if edge.ndim == 2 else edge[..., 0]) > 0
        frame[mask] = tint
        frames.append(frame)
    return GeneratedVideo(frames=frames, seed=int(request.seed), model=MOCK_MODEL_TAG)


# --------------------------------------------------------------------------
# fixed word lists served by the mock LLM

MOCK_COLORS = [
    "crimson", "teal", "mustard", "lavender", "olive", "coral", "navy",
    "mint", "maroon", "amber", "turquoise", "plum", "salmon", "charcoal",
    "ivory", "magenta", "sage", "cobalt", "rust", "periwinkle",
]
MOCK_BACKGROUNDS = [
    "a sunlit kitchen counter", "a cluttered workshop bench", "a marble lab table",
    "a wooden picnic table outdoors", "an industrial assembly line", "a classroom desk",
    "a hospital supply room", "a garage workbench", "a studio with gray curtains",
    "a greenhouse potting table", "a cafeteria tray line", "a ship galley counter",
    "a warehouse packing station", "a library reading desk", "a tiled bathroom counter",
    "a neon-lit arcade tabletop", "a farmhouse kitchen island", "an office standing desk",
    "a velvet-draped stage", "a concrete loading dock",
]
MOCK_LIGHTING = [
    "blue ambient lighting", "green ambient lighting", "red ambient lighting",
    "warm yellow lighting", "cold white overhead light", "dim evening light",
    "purple stage lighting", "soft morning sunlight",
]


class MockGenerationService:
    """In-process service with the same surface as the HTTP client.

    `latency_polls` delays completion by that many poll calls so job
    lifecycle handling can be exercised; the default completes instantly.
    """

    def __init__(self, latency_polls: int = 0, artifact_dir: str | Path | None = None):
        self.latency_polls = latency_polls
        self.artifact_dir = artifact_dir
        self._jobs: dict[str, dict] = {}

    def submit(self, request) -> str:
        env = encode_envelope(request, self.artifact_dir)
        job_id = envelope_job_id(env)
        if job_id not in self._jobs:
            self._jobs[job_id] = {"env": env, "polls": self.latency_polls, "request": request}
        return job_id

    def poll(self, job_id: str) -> JobStatus:
        job = self._jobs.get(job_id)
        if job is None:
            raise UnknownJob(job_id)
        if job["polls"] > 0:
            job["polls"] -= 1
            return JobStatus("running")
        return JobStatus("done")

    def fetch(self, job_id: str) -> GeneratedVideo:
        job = self._jobs.get(job_id)
        if job is None:
            raise UnknownJob(job_id)
        if job["polls"] > 0:
            raise NotReady(job_id)
        return mock_generate(job["request"])

    def llm_complete(self, prompt: str) -> list[str]:
        lower = prompt.lower()
        if "color" in lower:
            return list(MOCK_COLORS)
        if "background" in lower:
            return list(MOCK_BACKGROUNDS)
        if "light" in lower:
            return list(MOCK_LIGHTING)
        return ["item one", "item two", "item three"]

    def image_variant(self, base: np.ndarray, prompt: str) -> np.ndarray:
        """Deterministic per-prompt color grade preserving dimensions."""
        hue = instruction_hue(prompt)
        tint = np.array(_hue_to_rgb(hue), dtype=np.float64)
        gain = 0.6 + 0.4 * tint / 255.0
        graded = np.floor(base.astype(np.float64) * gain[None, None, :] + 0.5)
        return graded.clip(0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# HTTP client


def pack_result_archive(video: GeneratedVideo) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for i, frame in enumerate(video.frames):
            info = zipfile.ZipInfo(f"{i + 1:06d}.png", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, imgio.encode_png(frame))
        meta = zipfile.ZipInfo("meta.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(meta, json.dumps({"seed": video.seed, "model": video.model}, sort_keys=True))
    return buf.getvalue()


def unpack_result_archive(data: bytes) -> GeneratedVideo:
    try:
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            names = sorted(n for n in zf.namelist() if n.endswith(".png"))
            frames = [imgio.decode_png(zf.read(n)) for n in names]
            meta = json.loads(zf.read("meta.json"))
    except (zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise ProtocolError(f"malformed result archive: {exc}") from exc
    return GeneratedVideo(frames=frames, seed=int(meta["seed"]), model=str(meta["model"]))


class HttpGenerationService:
    """requests-backed client for a remote generation endpoint."""

    def __init__(
        self,
        base_url: str,
        token: str | None = None,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 1.0,
        artifact_dir: str | Path | None = None,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.artifact_dir = artifact_dir
        self.session = session or requests.Session()
        if token:
            self.session.headers["Authorization"] = f"Bearer {token}"

    def _request(self, method: str, path: str, **kwargs):
        url = f"{self.base_url}{path}"
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self.session.request(method, url, timeout=self.timeout, **kwargs)
            except requests.RequestException as exc:
                last_exc = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2**attempt))
                continue
            if resp.status_code >= 500:
                last_exc = ServiceUnavailable(f"{resp.status_code} from {path}")
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2**attempt))
                continue
            return resp
        raise ServiceUnavailable(f"{method} {path} failed after {self.retries} attempts: {last_exc}")

    @staticmethod
    def _json_of(resp) -> dict:
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response ({resp.status_code})") from exc

    def submit(self, request) -> str:
        env = encode_envelope(request, self.artifact_dir)
        resp = self._request("POST", "/v1/jobs", data=canonical_json(env), headers={"Content-Type": "application/json"})
        if resp.status_code == 422:
            raise ProtocolError(f"envelope rejected: {resp.text}")
        body = self._json_of(resp)
        if "job_id" not in body:
            raise ProtocolError(f"submit response missing job_id: {body}")
        return str(body["job_id"])

    def poll(self, job_id: str) -> JobStatus:
        resp = self._request("GET", f"/v1/jobs/{job_id}")
        if resp.status_code == 404:
            raise UnknownJob(job_id)
        body = self._json_of(resp)
        return JobStatus(state=str(body.get("state", "")), detail=str(body.get("detail", "")))

    def fetch(self, job_id: str) -> GeneratedVideo:
        resp = self._request("GET", f"/v1/jobs/{job_id}/result")
        if resp.status_code == 404:
            raise UnknownJob(job_id)
        if resp.status_code == 409:
            raise NotReady(job_id)
        if resp.status_code == 410:
            raise JobFailed(resp.text)
        return unpack_result_archive(resp.content)

    def llm_complete(self, prompt: str) -> list[str]:
        resp = self._request("POST", "/v1/complete", json={"prompt": prompt})
        body = self._json_of(resp)
        text = str(body.get("text", ""))
        return [line.strip() for line in text.splitlines() if line.strip()]

    def image_variant(self, base: np.ndarray, prompt: str) -> np.ndarray:
        payload = {"image_b64": base64.b64encode(imgio.encode_png(base)).decode("ascii"), "prompt": prompt}
        resp = self._request("POST", "/v1/variant", json=payload)
        body = self._json_of(resp)
        if "image_b64" not in body:
            raise ProtocolError("variant response missing image_b64")
        return imgio.decode_png(base64.b64decode(body["image_b64"]))


def wait_for(service, job_id: str, deadline_s: float = 300.0, interval_s: float = 0.0) -> GeneratedVideo:
    """Poll until the job is terminal, bounded by a wall-clock deadline."""
    start = time.monotonic()
    while True:
        status = service.poll(job_id)
        if status.state == "done":
            return service.fetch(job_id)
        if status.state == "failed":
            raise JobFailed(status.detail)
        if time.monotonic() - start > deadline_s:
            raise ServiceUnavailable(f"job {job_id} not terminal within {deadline_s}s")
        if interval_s:
            time.sleep(interval_s)
