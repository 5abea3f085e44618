"""Event features: channel energies (E8), the left/right cross-correlation
peak (rho_max) and 60 chirplet parameters (C60), plus the row-pattern
inference over channels A..D.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import correlate

from .chirplet import analytic_signal, decompose
from .dataset import DataError, load_event, load_manifest
from .optics import CHANNEL_NAMES
from .scene import Event

C60_CHANNELS = ("A", "B", "C", "D")
CHIRPLET_PARAMS = ("a", "m", "omega", "c", "d")
N_CHIRPLETS = 3

E8_COLUMNS = tuple(f"E_{c}" for c in CHANNEL_NAMES)
C60_COLUMNS = tuple(f"{ch}_{i + 1}_{p}" for ch in C60_CHANNELS for i in range(N_CHIRPLETS) for p in CHIRPLET_PARAMS)
FEATURE_HEADER = ("event_id", "label") + E8_COLUMNS + ("rho_max",) + C60_COLUMNS

PATTERN_INFERENCE = {
    "0001": "short animal at 5 m",
    "0010": "animal at 10 m",
    "0011": "tall animal at 5 m",
    "0110": "human at 10 m",
    "0111": "short human at 5 m",
    "1111": "human at 5 m",
}
CLUTTER_VERDICT = "clutter/unlikely"


class FeatureError(ValueError):
    pass


@dataclass
class FeatureVector:
    e8: np.ndarray
    rho_max: float
    c60: np.ndarray
    label: Optional[str] = None
    event_id: Optional[int] = None
    flags: List[str] = field(default_factory=list)
    rho_lag: int = 0

    def row(self) -> np.ndarray:
        return np.concatenate([self.e8, [self.rho_max], self.c60])


def _centered(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    v = v - v[..., :1]  # shifted data keeps a constant channel exactly zero
    return v - v.mean(axis=-1, keepdims=True)


def energy_features(event: Event) -> np.ndarray:
    """Sum of squared deviations from the channel mean, per channel (V^2 * sample)."""
    return (_centered(event.samples) ** 2).sum(axis=1)


def rho_max_signals(left: Sequence[np.ndarray], right: Sequence[np.ndarray]) -> Tuple[float, int]:
    """Peak jointly normalized cross-correlation between channel pairs.

    ``rho(k) = sum_i sum_n l_i(n + k) r_i(n) / sqrt(E_L E_R)`` with samples
    outside the record taken as zero.  Returns ``(max_k rho(k), lag)`` where
    ``lag = -k_max``; a positive lag means the right pair sees the signal
    later than the left pair (motion from left to right).
    """
    left = [_centered(x) for x in left]
    right = [_centered(x) for x in right]
    e_l = sum(float(np.dot(x, x)) for x in left)
    e_r = sum(float(np.dot(x, x)) for x in right)
    if not (e_l > 0 and e_r > 0):
        raise FeatureError("silent channel pair")
    n = len(left[0])
    acc = np.zeros(2 * n - 1)
    for li, ri in zip(left, right):
        # correlate(l, r)[j] = sum_n l(n + k) r(n) with k = j - (n - 1)
        acc += correlate(li, ri, mode="full", method="fft" if n > 256 else "direct")
    rho = acc / np.sqrt(e_l * e_r)
    j = int(np.argmax(rho))
    return float(min(1.0, max(-1.0, rho[j]))), -(j - (n - 1))


def rho_max(event: Event) -> float:
    return rho_max_signals([event.channel("L1"), event.channel("L2")],
                           [event.channel("R1"), event.channel("R2")])[0]


def c60_features(event: Event, q: int = N_CHIRPLETS) -> Tuple[np.ndarray, List[str]]:
    """Chirplet parameters of channels A..D, channel-major, in greedy order.

    A channel without energy contributes zeros and an ``empty_signal:<ch>`` flag.
    """
    block = np.zeros((len(C60_CHANNELS), q, len(CHIRPLET_PARAMS)))
    flags = []
    for ci, name in enumerate(C60_CHANNELS):
        v = _centered(event.channel(name))
        try:
            dec = decompose(analytic_signal(v), q=q, channel=name)
        except ValueError as exc:
            if "empty signal" not in str(exc):
                raise
            flags.append(f"empty_signal:{name}")
            continue
        for i, ch in enumerate(dec.chirplets):
            block[ci, i] = ch.params
    return block.ravel(), flags


def extract_features(event: Event, event_id: Optional[int] = None) -> FeatureVector:
    flags: List[str] = list(event.flags)
    e8 = energy_features(event)
    try:
        rho, lag = rho_max_signals([event.channel("L1"), event.channel("L2")],
                                   [event.channel("R1"), event.channel("R2")])
    except FeatureError:
        rho, lag = 0.0, 0
        flags.append("silent_channel_pair")
    c60, c_flags = c60_features(event)
    if event_id is None:
        event_id = event.metadata.get("event_id")
    return FeatureVector(e8, rho, c60, event.label, event_id, flags + c_flags, lag)


def truth_table_pattern(e8, thresholds) -> str:
    e8 = np.asarray(e8, dtype=float)
    thresholds = np.broadcast_to(np.asarray(thresholds, dtype=float), e8.shape)
    if np.any(thresholds[:4] <= 0):
        raise ValueError("thresholds must be positive")
    return "".join("1" if e8[i] > thresholds[i] else "0" for i in range(4))


def truth_table_inference(e8, thresholds) -> str:
    """Map the triggered pattern of rows A, B, C, D to a coarse class/range guess."""
    return PATTERN_INFERENCE.get(truth_table_pattern(e8, thresholds), CLUTTER_VERDICT)


def _featurize_job(args) -> FeatureVector:
    path, n_samples, event_id, label = args
    event = load_event(path, n_samples)
    fv = extract_features(event, event_id)
    fv.label = label
    return fv


def featurize_dataset(dataset_dir: Union[str, Path], jobs: int = 1, progress=None) -> Tuple[List[FeatureVector], Dict]:
    """Features for every event listed in the manifest, in manifest id order."""
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    cfg_path = dataset_dir / "config.json"
    try:
        n_samples = int(json.loads(cfg_path.read_text())["samples_per_event"])
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{cfg_path}: cannot read samples_per_event ({exc})") from exc
    entries = sorted(manifest["events"], key=lambda e: e["id"])
    args = [(dataset_dir / e["file"], n_samples, int(e["id"]), e["label"]) for e in entries]
    out: List[FeatureVector] = []
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for fv in pool.map(_featurize_job, args, chunksize=4):
                out.append(fv)
                if progress is not None:
                    progress(len(out), len(args))
    else:
        for a in args:
            out.append(_featurize_job(a))
            if progress is not None:
                progress(len(out), len(args))
    return out, manifest


# --------------------------------------------------------------------------- feature files


@dataclass
class FeatureTable:
    event_ids: np.ndarray
    labels: List[str]
    e8: np.ndarray  # (n, 8)
    rho: np.ndarray  # (n,)
    c60: np.ndarray  # (n, 60)
    meta: Dict = field(default_factory=dict)

    def matrix(self, kind: str) -> np.ndarray:
        if kind == "e8":
            return self.e8
        if kind in ("e8+rho", "e8_rho"):
            return np.column_stack([self.e8, self.rho])
        if kind == "c60":
            return self.c60
        raise ValueError(f"unknown feature set {kind!r}")

    def __len__(self) -> int:
        return len(self.labels)


def write_feature_csv(path: Union[str, Path], vectors: Sequence[FeatureVector], config_hash: str, seed: int) -> None:
    lines = [f"# pirtower features config_hash={config_hash} seed={seed}", ",".join(FEATURE_HEADER)]
    for fv in vectors:
        vals = ",".join("%.17g" % v for v in fv.row())
        lines.append(f"{fv.event_id},{fv.label},{vals}")
    Path(path).write_text("\n".join(lines) + "\n")
    side = {str(fv.event_id): fv.flags for fv in vectors if fv.flags}
    Path(path).with_suffix(".flags.json").write_text(json.dumps(side, sort_keys=True, indent=1) + "\n")


def read_feature_csv(path: Union[str, Path]) -> FeatureTable:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FeatureError(f"{path}: {exc.strerror}") from exc
    meta: Dict = {}
    first = 2
    if lines and lines[0].startswith("#"):
        first = 3
        for tok in lines[0][1:].split():
            if "=" in tok:
                k, v = tok.split("=", 1)
                meta[k] = v
        lines = lines[1:]
    if not lines or tuple(lines[0].split(",")) != FEATURE_HEADER:
        raise FeatureError(f"{path}: feature header does not match the expected columns")
    ids, labels, rows = [], [], []
    for ln, line in enumerate(lines[1:], first):
        if not line.strip():
            continue
        tok = line.split(",")
        if len(tok) != len(FEATURE_HEADER):
            raise FeatureError(f"{path}:{ln}: expected {len(FEATURE_HEADER)} columns, got {len(tok)}")
        try:
            ids.append(int(tok[0]))
            rows.append([float(x) for x in tok[2:]])
        except ValueError as exc:
            raise FeatureError(f"{path}:{ln}: {exc}") from exc
        labels.append(tok[1])
    data = np.array(rows, dtype=float).reshape(-1, len(FEATURE_HEADER) - 2)
    return FeatureTable(np.array(ids, dtype=np.int64), labels, data[:, :8], data[:, 8], data[:, 9:], meta)
