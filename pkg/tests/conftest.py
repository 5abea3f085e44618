import copy
import os
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from pirtower.config import default_config, parse_config
from pirtower.dataset import DatasetRequest, generate_dataset
from pirtower.features import FeatureTable, featurize_dataset, read_feature_csv, write_feature_csv


@pytest.fixture(scope="session")
def cfg():
    return default_config()


def config_with(**channel_offsets_mm):
    """Default configuration with the given channels' vertical offsets replaced (mm)."""
    raw = copy.deepcopy(default_config().raw)
    for name, off in channel_offsets_mm.items():
        raw["channels"][name]["vertical_offset_m"] = off * 1e-3
    return parse_config(raw)


ACCEPTANCE_SEED = 7
CORPUS_COUNTS = {"human": 210, "animal": 186, "clutter": 272}


@dataclass
class Corpus:
    root: Path
    manifest: dict
    table: FeatureTable
    seconds: float  # simulation plus featurization wall time


@pytest.fixture(scope="session")
def corpus(tmp_path_factory, cfg):
    """Fresh 668-event corpus, simulated and featurized once per session."""
    root = tmp_path_factory.mktemp("corpus")
    jobs = os.cpu_count() or 1
    t0 = time.perf_counter()
    manifest = generate_dataset(root, DatasetRequest(CORPUS_COUNTS, ACCEPTANCE_SEED), cfg, jobs=jobs)
    vectors, _ = featurize_dataset(root, jobs=jobs)
    write_feature_csv(root / "features.csv", vectors, manifest["config_hash"], manifest["seed"])
    seconds = time.perf_counter() - t0
    return Corpus(root, manifest, read_feature_csv(root / "features.csv"), seconds)
