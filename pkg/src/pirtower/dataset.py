"""Random scene sampling, event files and dataset generation.

A dataset directory holds ``manifest.json``, ``config.json`` (the tower
configuration the events were rendered with) and ``events/`` with one CSV and
one JSON sidecar per event.  Event ``i`` is rendered from a seed derived from
``(dataset seed, i)`` alone, so parallel generation gives the same bytes.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .config import SimulationConfig, parse_config
from .mesh import make_animal, make_human, make_shrub
from .optics import CHANNEL_NAMES
from .scene import (RANGE_LIMITS, Actor, Event, SceneError, SceneSpec, crossing_line,
                    field_of_view_half_angle, oscillation, simulate_event)

CLASSES = ("human", "animal", "clutter")
MANIFEST_VERSION = 1


class DataError(ValueError):
    """Missing, truncated or malformed dataset file."""


@dataclass(frozen=True)
class SceneDistribution:
    """Ranges the random scene generator draws from (uniform unless noted)."""

    speed_mps: Tuple[float, float] = (1.0, 3.0)
    inclination_deg: Tuple[float, float] = (-20.0, 20.0)
    range_m: Tuple[float, float] = RANGE_LIMITS
    window_fraction: Tuple[float, float] = (0.2, 0.8)  # crossing time within the event window
    human_height_m: Tuple[float, float] = (1.6, 1.9)
    human_build: Tuple[float, float] = (0.85, 1.15)
    human_temperature_k: Tuple[float, float] = (303.0, 309.0)
    animal_height_m: Tuple[float, float] = (0.5, 1.1)
    animal_length_ratio: Tuple[float, float] = (1.2, 1.8)
    animal_temperature_k: Tuple[float, float] = (302.0, 308.0)
    shrub_count: Tuple[int, int] = (2, 5)  # inclusive
    shrub_height_m: Tuple[float, float] = (0.4, 1.6)
    shrub_width_m: Tuple[float, float] = (0.4, 1.2)
    shrub_contrast_k: Tuple[float, float] = (1.0, 4.0)  # |T - T_b|, sign random
    sway_amplitude_m: Tuple[float, float] = (0.05, 0.4)
    sway_frequency_hz: Tuple[float, float] = (0.3, 2.0)
    gust_depth: Tuple[float, float] = (0.0, 0.9)
    gust_frequency_hz: Tuple[float, float] = (0.02, 0.1)
    gust_sharpness: Tuple[float, float] = (1.0, 1.0)
    wind_coherence: Tuple[float, float] = (0.8, 1.0)  # 1: every shrub shares the event's wind
    sway_frequency_spread: float = 0.03  # log-normal spread of per-shrub frequency at coherence 0
    spot_beam_fraction: float = 0.95  # chance a shrub stands in a spot-lens beam rather than anywhere in view
    spot_beam_jitter_deg: float = 2.0
    phase_wander_rad: Tuple[float, float] = (0.0, 1.5)  # rms sway phase wander per event
    phase_wander_frequency_hz: Tuple[float, float] = (0.02, 0.2)
    phase_wander_components: int = 3
    grid_resolution: float = 100.0


def event_seed(dataset_seed: int, event_id: int) -> int:
    return int(np.random.SeedSequence([int(dataset_seed), int(event_id)]).generate_state(1)[0])


def _u(rng: np.random.Generator, lo_hi) -> float:
    lo, hi = lo_hi
    return float(lo if hi == lo else rng.uniform(lo, hi))


def sample_intruder_path(rng: np.random.Generator, dist: SceneDistribution, duration: float, fov: float,
                         range_m: Optional[float] = None, inclination: Optional[float] = None,
                         max_tries: int = 1000):
    """Draw a straight crossing whose in-view range stays inside the range limits."""
    lo, hi = RANGE_LIMITS
    for _ in range(max_tries):
        r0 = _u(rng, dist.range_m) if range_m is None else range_m
        inc = np.deg2rad(_u(rng, dist.inclination_deg)) if inclination is None else inclination
        speed = _u(rng, dist.speed_mps)
        leftward = bool(rng.integers(2))
        theta = float(np.pi - inc if leftward else inc)
        t_mid = _u(rng, dist.window_fraction) * duration
        traj = crossing_line(r0, theta, speed, t_mid, fov + np.deg2rad(5.0))
        ext = traj.range_extent(fov)
        if ext is not None and ext[0] >= lo - 1e-9 and ext[1] <= hi + 1e-9:
            return traj
        if range_m is not None and inclination is not None:
            break
    raise SceneError("could not draw a path within the range limits")


def sample_scene(label: str, rng: np.random.Generator, config: SimulationConfig,
                 dist: SceneDistribution = SceneDistribution(), seed: int = 0, scene_id: str = "",
                 range_m: Optional[float] = None, inclination: Optional[float] = None,
                 height_m: Optional[float] = None) -> SceneSpec:
    """Random scene of the requested class; optional overrides pin the path or size."""
    tower = config.tower
    duration = tower.samples_per_event / tower.sample_rate
    fov = field_of_view_half_angle(tower)
    t_b = config.radiometry.t_b
    if label == "human":
        h = _u(rng, dist.human_height_m) if height_m is None else height_m
        mesh = make_human(h, _u(rng, dist.human_build))
        temp = _u(rng, dist.human_temperature_k)
        actors = (Actor(mesh, sample_intruder_path(rng, dist, duration, fov, range_m, inclination), temp),)
    elif label == "animal":
        h = _u(rng, dist.animal_height_m) if height_m is None else height_m
        mesh = make_animal(h, _u(rng, dist.animal_length_ratio))
        temp = _u(rng, dist.animal_temperature_k)
        actors = (Actor(mesh, sample_intruder_path(rng, dist, duration, fov, range_m, inclination), temp),)
    elif label == "clutter":
        n = int(rng.integers(dist.shrub_count[0], dist.shrub_count[1] + 1))
        # one wind per event; incoherent shrubs scatter around it
        coherence = _u(rng, dist.wind_coherence)
        spread = 1.0 - coherence
        wind_f = _u(rng, dist.sway_frequency_hz)
        wind_phase = float(rng.uniform(0, 2 * np.pi))
        depth = _u(rng, dist.gust_depth)
        gust_f = _u(rng, dist.gust_frequency_hz)
        gust_phase = float(rng.uniform(0, 2 * np.pi))
        sharpness = _u(rng, dist.gust_sharpness)
        k = dist.phase_wander_components
        wander_a = _u(rng, dist.phase_wander_rad) * np.sqrt(2.0 / k)
        wander = [(float(wander_a), _u(rng, dist.phase_wander_frequency_hz), float(rng.uniform(0, 2 * np.pi)))
                  for _ in range(k)] if wander_a > 0 else []
        f_lo, f_hi = dist.sway_frequency_hz
        shrubs = []
        for _ in range(n):
            mesh = make_shrub(_u(rng, dist.shrub_height_m), _u(rng, dist.shrub_width_m))
            y = _u(rng, dist.range_m) if range_m is None else range_m
            if rng.uniform() < dist.spot_beam_fraction:
                spot = tower.spot_L if rng.integers(2) else tower.spot_R
                az = spot.lenslet_azimuths[0] + np.deg2rad(rng.uniform(-1, 1) * dist.spot_beam_jitter_deg)
                x = float(spot.focal_point[0] + y * np.tan(az))
            else:
                x = float(rng.uniform(-0.9, 0.9) * y * np.tan(fov))
            contrast = _u(rng, dist.shrub_contrast_k) * (1 if rng.integers(2) else -1)
            freq = float(np.clip(wind_f * np.exp(spread * dist.sway_frequency_spread * rng.standard_normal()),
                                 f_lo, f_hi))
            phase = wind_phase + spread * float(rng.uniform(-np.pi, np.pi))
            gust = {}
            if depth > 0:
                gust = dict(gust_depth=depth, gust_frequency=gust_f, gust_sharpness=sharpness,
                            gust_phase=gust_phase + spread * float(rng.uniform(-np.pi, np.pi)))
            if wander:
                gust["phase_wander"] = tuple((a, nu, psi + spread * float(rng.uniform(-np.pi, np.pi)))
                                             for a, nu, psi in wander)
            traj = oscillation((x, y, 0.0), _u(rng, dist.sway_amplitude_m), freq, phase, **gust)
            shrubs.append(Actor(mesh, traj, t_b + contrast, role="clutter"))
        actors = tuple(shrubs)
    elif label == "idle":
        actors = ()
    else:
        raise ValueError(f"unknown class {label!r}")
    return SceneSpec(actors, config, grid_resolution=dist.grid_resolution, seed=seed, scene_id=scene_id)


# --------------------------------------------------------------------------- event files


def _event_stem(event_id: int) -> str:
    return f"event_{event_id:05d}"


def event_to_bytes(event: Event) -> bytes:
    lines = [",".join(event.channel_names)]
    for row in event.samples.T:
        lines.append(",".join("%.9g" % v for v in row))
    return ("\n".join(lines) + "\n").encode()


def save_event(event: Event, directory: Union[str, Path], event_id: int) -> Path:
    directory = Path(directory)
    stem = _event_stem(event_id)
    csv_path = directory / f"{stem}.csv"
    try:
        csv_path.write_bytes(event_to_bytes(event))
        sidecar = dict(event.metadata, label=event.label, event_id=int(event_id))
        (directory / f"{stem}.json").write_text(json.dumps(_jsonable(sidecar), sort_keys=True, indent=1) + "\n")
    except OSError as exc:
        raise DataError(f"{csv_path}: {exc.strerror}") from exc
    return csv_path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def load_event(path: Union[str, Path], samples_per_event: Optional[int] = None) -> Event:
    """Read an event CSV (and its JSON sidecar when present)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path}: empty event file")
    header = tuple(lines[0].strip().split(","))
    if header != CHANNEL_NAMES:
        raise DataError(f"{path}: bad header {lines[0]!r}")
    try:
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:] if ln.strip()], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(CHANNEL_NAMES) or len(data) == 0:
        raise DataError(f"{path}: expected {len(CHANNEL_NAMES)} columns per row")
    if samples_per_event is not None and len(data) != samples_per_event:
        raise DataError(f"{path}: {len(data)} rows, expected {samples_per_event}")
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite sample")
    meta: Dict = {}
    label = "clutter"
    side = path.with_suffix(".json")
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{side}: {exc}") from exc
        label = meta.pop("label", label)
    return Event(data.T.copy(), label, meta, CHANNEL_NAMES)


# --------------------------------------------------------------------------- datasets


@dataclass(frozen=True)
class DatasetRequest:
    counts: Dict[str, int]
    seed: int
    distribution: SceneDistribution = field(default_factory=SceneDistribution)

    def labels(self) -> List[str]:
        out: List[str] = []
        for cls in CLASSES:
            n = int(self.counts.get(cls, 0))
            if n < 0:
                raise ValueError(f"negative count for {cls}")
            out += [cls] * n
        unknown = set(self.counts) - set(CLASSES)
        if unknown:
            raise ValueError(f"unknown classes {sorted(unknown)}")
        return out


def render_event(config: SimulationConfig, label: str, dataset_seed: int, event_id: int,
                 dist: SceneDistribution = SceneDistribution()) -> Event:
    seed = event_seed(dataset_seed, event_id)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1000]))
    spec = sample_scene(label, rng, config, dist, seed=seed, scene_id=_event_stem(event_id))
    return simulate_event(spec)


_WORKER_CONFIG: Dict[str, SimulationConfig] = {}


def _render_job(args):
    raw_json, label, dataset_seed, event_id, dist = args
    cfg = _WORKER_CONFIG.get(raw_json)
    if cfg is None:
        cfg = _WORKER_CONFIG[raw_json] = parse_config(json.loads(raw_json))
    ev = render_event(cfg, label, dataset_seed, event_id, dist)
    return event_id, event_to_bytes(ev), ev


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def generate_dataset(out_dir: Union[str, Path], request: DatasetRequest, config: SimulationConfig,
                     jobs: int = 1, progress=None) -> Dict:
    """Render every requested event into ``out_dir`` and write the manifest.

    Events are numbered humans first, then animals, then clutter.
    """
    out_dir = Path(out_dir)
    labels = request.labels()
    ev_dir = out_dir / "events"
    try:
        ev_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{ev_dir}: {exc.strerror}") from exc
    raw_json = json.dumps(config.raw, sort_keys=True)
    jobs_args = [(raw_json, lab, request.seed, i, request.distribution) for i, lab in enumerate(labels)]
    entries = []
    flag_counts: Dict[str, int] = {}

    def consume(result):
        event_id, _, ev = result
        path = save_event(ev, ev_dir, event_id)
        for f in ev.flags:
            flag_counts[f] = flag_counts.get(f, 0) + 1
        entries.append({"id": event_id, "file": f"events/{path.name}", "label": ev.label,
                        "flags": ev.flags, "sha256": _sha256(path.read_bytes())})
        if progress is not None:
            progress(event_id, len(labels))

    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_render_job, jobs_args, chunksize=4):
                consume(res)
    else:
        for a in jobs_args:
            consume(_render_job(a))

    manifest = {
        "version": MANIFEST_VERSION,
        "seed": int(request.seed),
        "config_hash": config.hash,
        "class_counts": {c: int(request.counts.get(c, 0)) for c in CLASSES},
        "flag_counts": dict(sorted(flag_counts.items())),
        "distribution": _jsonable(asdict(request.distribution)),
        "events": entries,
    }
    try:
        (out_dir / "config.json").write_text(json.dumps(config.raw, sort_keys=True, indent=1) + "\n")
        (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    except OSError as exc:
        raise DataError(f"{out_dir}: {exc.strerror}") from exc
    return manifest


def load_manifest(dataset_dir: Union[str, Path]) -> Dict:
    path = Path(dataset_dir) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc
    for key in ("seed", "config_hash", "events"):
        if key not in manifest:
            raise DataError(f"{path}: missing key {key!r}")
    return manifest


def idle_energy_thresholds(config: SimulationConfig, n_events: int = 100, seed: int = 0,
                           factor: float = 5.0) -> np.ndarray:
    """Per-channel threshold: ``factor`` times the mean energy of actor-free events."""
    energies = []
    for i in range(n_events):
        s = event_seed(seed, i)
        spec = sample_scene("idle", np.random.default_rng(s), config, seed=s)
        v = simulate_event(spec).samples
        energies.append(((v - v.mean(axis=1, keepdims=True)) ** 2).sum(axis=1))
    return factor * np.mean(energies, axis=0)
