"""Experiment config, staged run directories, suites and projection export.

Every stage writes its artifact into ``<out>/<config_hash>-<seed>/`` together
with a stage hash over the config blocks it depends on; downstream stages
refuse artifacts whose recorded hash differs from what the current config
would produce.
"""

from __future__ import annotations

import contextlib
import copy
import csv
import dataclasses
import hashlib
import json
import logging
import time
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
import torch

from .detector import Detector, DetectorConfig, evaluate_auc, train_detector
from .embedder import Embedder, EmbedderConfig, PrototypeSet, GCNEncoder, train_embedder
from .env import EnvConfig, LatentEnv, compute_cluster_stats, stats_from_json, stats_to_json
from .graphs import (ID, OOD, GraphDataset, SyntheticSpec, dataset_from_json, dataset_to_json,
                     generate_synthetic_dataset, load_tudataset)
from .sac import CollectConfig, SACAgent, SACConfig, collect_outlier_latents, train_policy
from .synthesis import (SynthConfig, gaussian_midpoint_sampler, synthesize_graphs,
                        uniform_boundary_sampler)
from .utils import (FORMAT_VERSION, PgosError, StageMismatchError, ValidationError, json_to_state,
                    read_json, state_to_json, write_json)

log = logging.getLogger(__name__)

SAMPLERS = ("pgos", "gaussian", "uniform", "none")

DEFAULT_SYNTHETIC = {
    "id_families": [{"kind": "erdos_renyi", "p": 0.1}, {"kind": "erdos_renyi", "p": 0.3}],
    "ood_family": {"kind": "two_community", "p_in": 0.3, "p_out": 0.05},
    "n_min": 20,
    "n_max": 40,
    "graphs_per_family": 150,
    "ood_graphs": 100,
    "features": "degree_clustering",
}


@dataclass
class DataConfig:
    source: str = "synthetic"  # or "tu"
    synthetic: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_SYNTHETIC))
    tu_dir: str | None = None
    tu_ood_dir: str | None = None
    train_per_family: int = 100
    test_per_family: int = 50
    train_fraction: float = 0.8  # TU only

    def validate(self) -> None:
        if self.source == "synthetic":
            spec = SyntheticSpec.from_dict(self.synthetic)
            spec.validate()
            if self.train_per_family < 1 or self.test_per_family < 1:
                raise ValidationError("data.train_per_family and data.test_per_family must be >= 1")
            if self.train_per_family + self.test_per_family > spec.graphs_per_family:
                raise ValidationError("train_per_family + test_per_family exceeds graphs_per_family")
            if spec.ood_graphs < 1:
                raise ValidationError("evaluation needs at least one OOD graph")
        elif self.source == "tu":
            if not self.tu_dir or not self.tu_ood_dir:
                raise ValidationError("data.tu_dir and data.tu_ood_dir are required for source 'tu'")
            if not 0.0 < self.train_fraction < 1.0:
                raise ValidationError("data.train_fraction must lie in (0, 1)")
        else:
            raise ValidationError(f"unknown data.source {self.source!r}")


@dataclass
class ExperimentConfig:
    seed: int = 0
    sampler: str = "pgos"
    data: DataConfig = field(default_factory=DataConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    sac: SACConfig = field(default_factory=SACConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def validate(self) -> None:
        if self.seed < 0 or self.seed >= 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if self.sampler not in SAMPLERS:
            raise ValidationError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        for block in (self.data, self.embedder, self.env, self.sac, self.synth, self.detector):
            block.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, blob: dict) -> "ExperimentConfig":
        cfg = _build(cls, blob, "config")
        cfg.validate()
        return cfg


def _build(cls, blob: Any, path: str):
    """Instantiate a (nested) config dataclass, rejecting unknown keys and wrong types."""
    if not isinstance(blob, dict):
        raise ValidationError(f"{path} must be a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(blob) - names)
    if unknown:
        raise ValidationError(f"unknown key(s) in {path}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in blob.items():
        kwargs[name] = _coerce(hints[name], value, f"{path}.{name}")
    return cls(**kwargs)


def _coerce(hint, value, path: str):
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    args = typing.get_args(hint)
    if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ValidationError(f"{path} must be a boolean")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{path} must be an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{path} must be a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ValidationError(f"{path} must be a string")
        return value
    if hint is dict:
        if not isinstance(value, dict):
            raise ValidationError(f"{path} must be a mapping")
        return copy.deepcopy(value)
    raise ValidationError(f"{path}: unsupported config type {hint!r}")


def apply_overrides(blob: dict, overrides: Sequence[str]) -> dict:
    """Patch ``key.sub=value`` pairs into a config dict; values parse as JSON when possible."""
    blob = copy.deepcopy(blob)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.strip().split(".")
        node = blob
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {} if part not in node else node[part]
                if not isinstance(node[part], dict):
                    raise ValidationError(f"override {key!r}: {part!r} is not a mapping")
            node = node[part]
        node[parts[-1]] = value
    return blob


def load_config(path: str | Path | None = None, overrides: Sequence[str] = (),
                seed: int | None = None) -> ExperimentConfig:
    blob = ExperimentConfig().to_dict() if path is None else _merge(ExperimentConfig().to_dict(),
                                                                     read_json(path))
    blob = apply_overrides(blob, overrides)
    if seed is not None:
        blob["seed"] = seed
    return ExperimentConfig.from_dict(blob)


def _merge(base: dict, patch: dict) -> dict:
    """Recursive dict merge; ``data.synthetic`` is replaced wholesale, not merged."""
    if not isinstance(patch, dict):
        raise ValidationError("config file must hold a JSON object")
    out = copy.deepcopy(base)
    for key, value in patch.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict) and key != "synthetic":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _digest(obj: Any) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def config_hash(cfg: ExperimentConfig) -> str:
    blob = cfg.to_dict()
    blob.pop("seed")
    return _digest(blob)


def stage_hashes(cfg: ExperimentConfig) -> dict[str, str]:
    """Hash of the config blocks each stage's output depends on."""
    d = cfg.to_dict()
    data = {"data": d["data"]}
    embed = {**data, "embedder": d["embedder"]}
    policy = {**embed, "env": d["env"], "sac": d["sac"]}
    outliers = {**(policy if cfg.sampler == "pgos" else embed), "sampler": cfg.sampler,
                "synth": d["synth"]}
    detector = {**outliers, "detector": d["detector"]}
    return {name: _digest(blob) for name, blob in
            (("data", data), ("embed", embed), ("policy", policy), ("outliers", outliers),
             ("detector", detector))}


# ------------------------------------------------------------------ run dir


@dataclass
class Splits:
    train: GraphDataset
    test: GraphDataset
    ood: GraphDataset


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    """Prefix library errors with the failing stage name; time the stage."""
    start = time.perf_counter()
    try:
        yield
    except PgosError as exc:
        exc.args = (f"[{name}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise
    log.info("stage %s finished in %.1fs", name, time.perf_counter() - start)


PRODUCERS = {"data": "gen-data", "embed": "train-embed", "policy": "train-policy",
             "outliers": "synthesize", "detector": "train-detector"}


class Run:
    """One (config, seed) cell with its run directory and in-memory stage cache."""

    def __init__(self, cfg: ExperimentConfig, out: str | Path = "runs", cache: dict | None = None):
        cfg.validate()
        self.cfg = cfg
        self.seed = cfg.seed
        self.hash = config_hash(cfg)
        self.hashes = stage_hashes(cfg)
        self.dir = Path(out) / f"{self.hash}-{self.seed}"
        self.cache = cache if cache is not None else {}

    # -- bookkeeping
    def header(self, kind: str, stage_name: str) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": kind, "config_hash": self.hash,
                "seed": self.seed, "stage_hash": self.hashes[stage_name]}

    def _key(self, stage_name: str):
        return (stage_name, self.hashes[stage_name], self.seed)

    def read(self, filename: str, stage_name: str) -> dict:
        if not (self.dir / filename).exists():
            raise ValidationError(f"missing file: {self.dir / filename}; run "
                                  f"`pgos {PRODUCERS[stage_name]}` with this config and seed first")
        blob = read_json(self.dir / filename)
        if blob.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"{filename}: unsupported format_version {blob.get('format_version')!r}")
        if blob.get("stage_hash") != self.hashes[stage_name] or blob.get("seed") != self.seed:
            raise StageMismatchError(
                f"{filename} was produced by a different config or seed "
                f"(stage hash {blob.get('stage_hash')} != {self.hashes[stage_name]})"
            )
        return blob

    def write_config(self) -> None:
        write_json(self.dir / "config.json", {"format_version": FORMAT_VERSION,
                                              "config_hash": self.hash, "seed": self.seed,
                                              "config": self.cfg.to_dict()})

    def write_log(self, name: str, rows: list[dict]) -> None:
        path = self.dir / "logs" / f"{name}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            if not rows:
                return
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

    # -- data
    def make_data(self) -> Splits:
        key = self._key("data")
        if key not in self.cache:
            with stage("data"):
                self.cache[key] = build_splits(self.cfg.data, self.seed)
        splits = self.cache[key]
        write_json(self.dir / "data.json", {
            **self.header("data", "data"),
            **{name: dataset_to_json(getattr(splits, name)) for name in ("train", "test", "ood")},
        })
        return splits

    def load_data(self) -> Splits:
        key = self._key("data")
        if key not in self.cache:
            blob = self.read("data.json", "data")
            self.cache[key] = Splits(*(dataset_from_json(blob[n]) for n in ("train", "test", "ood")))
        return self.cache[key]

    # -- embedder + cluster stats
    def make_embedder(self) -> Embedder:
        key = self._key("embed")
        splits = self.load_data()
        if key not in self.cache:
            with stage("train-embed"):
                model, history = train_embedder(splits.train.graphs, self.cfg.embedder, self.seed)
                z = model.embed(splits.train.graphs).numpy()
                stats, boundary = compute_cluster_stats(z, model.prototypes.vectors.detach().numpy())
                self.cache[key] = (model, history, stats, boundary)
        model, history, stats, boundary = self.cache[key]
        write_json(self.dir / "embedder.ckpt", {**self.header("embedder", "embed"),
                                                "feat_dim": model.feat_dim,
                                                "embedder": dataclasses.asdict(model.cfg),
                                                "state": state_to_json(model)})
        write_json(self.dir / "stats.json", {**self.header("cluster-stats", "embed"),
                                             **stats_to_json(stats, boundary)})
        self.write_log("embedder", history)
        return model

    def load_embedder(self) -> tuple[Embedder, Any, Any]:
        key = self._key("embed")
        if key not in self.cache:
            blob = self.read("embedder.ckpt", "embed")
            model = Embedder(blob["feat_dim"], self.cfg.embedder, self.seed)
            model.load_state_dict(json_to_state(blob["state"]))
            stats, boundary = stats_from_json(self.read("stats.json", "embed"))
            self.cache[key] = (model, [], stats, boundary)
        model, _, stats, boundary = self.cache[key]
        return model, stats, boundary

    def env(self) -> LatentEnv:
        model, stats, boundary = self.load_embedder()
        return LatentEnv(stats, boundary, model.prototypes.vectors.detach().numpy(), self.cfg.env)

    # -- policy
    def make_policy(self) -> SACAgent:
        key = self._key("policy")
        env = self.env()
        if key not in self.cache:
            with stage("train-policy"):
                self.cache[key] = train_policy(env, self.cfg.sac, self.seed)
        agent, history = self.cache[key]
        write_json(self.dir / "policy.ckpt", {
            **self.header("policy", "policy"),
            "state_dim": env.dim, "action_scale": env.cfg.action_scale,
            "actor": state_to_json(agent.actor), "critics": state_to_json(agent.critics),
            "target": state_to_json(agent.target), "log_alpha": agent.temp.log_alpha,
        })
        self.write_log("policy", history)
        return agent

    def load_policy(self) -> SACAgent:
        key = self._key("policy")
        if key not in self.cache:
            blob = self.read("policy.ckpt", "policy")
            agent = SACAgent(blob["state_dim"], blob["state_dim"], blob["action_scale"], self.cfg.sac,
                             self.seed)
            agent.actor.load_state_dict(json_to_state(blob["actor"]))
            agent.critics.load_state_dict(json_to_state(blob["critics"]))
            agent.target.load_state_dict(json_to_state(blob["target"]))
            agent.temp.log_alpha = float(blob["log_alpha"])
            self.cache[key] = (agent, [])
        return self.cache[key][0]

    # -- latents + pseudo-outlier graphs
    def make_outliers(self) -> GraphDataset:
        key = self._key("outliers")
        if key not in self.cache:
            with stage("synthesize"):
                self.cache[key] = self._synthesize()
        latents, pseudo = self.cache[key]
        header = self.header("outliers", "outliers")
        write_json(self.dir / "latents.json", {**header, "kind": "latents", "sampler": self.cfg.sampler,
                                               "latents": latents.tolist()})
        write_json(self.dir / "outliers.json", {**header, **dataset_to_json(pseudo)})
        return pseudo

    def _synthesize(self) -> tuple[np.ndarray, GraphDataset]:
        cfg, seed = self.cfg, self.seed
        model, stats, boundary = self.load_embedder()
        train = self.load_data().train
        count = len(train)
        protos = model.prototypes.vectors.detach().numpy()
        if cfg.sampler == "pgos":
            env = self.env()
            agent = self.load_policy()
            latents = collect_outlier_latents(agent, env, count,
                                              CollectConfig(cfg.synth.burn_in, cfg.synth.eps_keep), seed)
        elif cfg.sampler == "gaussian":
            sigma = cfg.synth.sigma_gaussian
            sigma = 0.1 * boundary.r_max if sigma is None else sigma
            latents = gaussian_midpoint_sampler(protos, boundary, count, sigma, seed)
        elif cfg.sampler == "uniform":
            latents = uniform_boundary_sampler(boundary, count, seed)
        else:
            latents = np.zeros((0, protos.shape[1]))
        if len(latents) == 0:
            if cfg.sampler != "none":
                log.warning("sampler %s produced no latents; detector trains without outliers", cfg.sampler)
            return latents, GraphDataset(graphs=[], labels=[], name=f"pseudo-{cfg.sampler}",
                                         origin=cfg.sampler)
        pseudo = synthesize_graphs(latents, model.decoder, train.node_count_histogram(), cfg.synth, seed,
                                   origin=cfg.sampler)
        return latents, pseudo

    def load_outliers(self) -> GraphDataset:
        key = self._key("outliers")
        if key not in self.cache:
            latents = np.asarray(self.read("latents.json", "outliers")["latents"], dtype=np.float64)
            blob = self.read("outliers.json", "outliers")
            self.cache[key] = (latents, dataset_from_json(blob))
        return self.cache[key][1]

    def load_latents(self) -> np.ndarray:
        self.load_outliers()
        return self.cache[self._key("outliers")][0]

    # -- detector
    def make_detector(self) -> Detector:
        key = self._key("detector")
        if key not in self.cache:
            model, _, _ = self.load_embedder()
            train, pseudo = self.load_data().train, self.load_outliers()
            with stage("train-detector"):
                self.cache[key] = train_detector(train.graphs, pseudo.graphs, model, self.cfg.detector,
                                                 self.seed)
        det, history = self.cache[key]
        enc = det.encoder
        write_json(self.dir / "detector.ckpt", {
            **self.header("detector", "detector"),
            "feat_dim": enc.in_dim, "embedder": dataclasses.asdict(self.cfg.embedder),
            "beta": det.beta, "margin": det.margin, "scale": det.scale,
            "encoder": state_to_json(enc), "prototypes": state_to_json(det.prototypes),
        })
        self.write_log("detector", history)
        return det

    def load_detector(self) -> Detector:
        key = self._key("detector")
        if key not in self.cache:
            blob = self.read("detector.ckpt", "detector")
            ecfg = self.cfg.embedder
            encoder = GCNEncoder(blob["feat_dim"], ecfg.hidden, ecfg.dim, ecfg.layers)
            encoder.load_state_dict(json_to_state(blob["encoder"]))
            protos = PrototypeSet(torch.zeros(ecfg.n_prototypes, ecfg.dim) + 1.0, ecfg.tau)
            protos.load_state_dict(json_to_state(blob["prototypes"]))
            det = Detector(encoder, protos, blob["beta"], blob["margin"], blob["scale"])
            self.cache[key] = (det, [])
        return self.cache[key][0]

    # -- evaluation
    def evaluate(self) -> dict:
        det = self.load_detector()
        splits = self.load_data()
        with stage("evaluate"):
            s_id = det.scores(splits.test.graphs)
            s_ood = det.scores(splits.ood.graphs)
            auc = evaluate_auc(s_id, s_ood)
        path = self.dir / "scores.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["graph_id", "split", "label", "score"])
            for split, label, scores in (("test", ID, s_id), ("ood", OOD, s_ood)):
                for i, s in enumerate(scores):
                    writer.writerow([i, split, label, repr(float(s))])
        metrics = {"format_version": FORMAT_VERSION, "auc": auc, "n_id": len(s_id), "n_ood": len(s_ood),
                   "seed": self.seed, "config_hash": self.hash, "sampler": self.cfg.sampler,
                   "n_pseudo": len(self.load_outliers())}
        write_json(self.dir / "metrics.json", metrics)
        return metrics


def build_splits(data: DataConfig, seed: int) -> Splits:
    """Seeded train / ID-test / OOD-test split."""
    data.validate()
    if data.source == "synthetic":
        ds = generate_synthetic_dataset(data.synthetic, seed)
        train, test, ood = [], [], []
        seen: dict[str, int] = {}
        for i, (label, group) in enumerate(zip(ds.labels, ds.groups)):
            if label == OOD:
                ood.append(i)
                continue
            j = seen.get(group, 0)
            seen[group] = j + 1
            if j < data.train_per_family:
                train.append(i)
            elif j < data.train_per_family + data.test_per_family:
                test.append(i)
        return Splits(ds.subset(train, "train"), ds.subset(test, "test"), ds.subset(ood, "ood"))
    id_ds = load_tudataset(data.tu_dir)
    ood_ds = load_tudataset(data.tu_ood_dir)
    if id_ds.feature_dim != ood_ds.feature_dim:
        raise ValidationError(
            f"ID and OOD feature dims differ ({id_ds.feature_dim} vs {ood_ds.feature_dim})"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(id_ds))
    cut = int(round(data.train_fraction * len(id_ds)))
    if cut < 1 or cut >= len(id_ds):
        raise ValidationError("TU split leaves an empty train or test set")
    def tag(ds: GraphDataset, idx, label: str, name: str) -> GraphDataset:
        sub = ds.subset(idx, name)
        return GraphDataset(sub.graphs, [label] * len(sub), name, sub.groups, sub.origin)
    return Splits(tag(id_ds, sorted(order[:cut]), ID, "train"), tag(id_ds, sorted(order[cut:]), ID, "test"),
                  tag(ood_ds, range(len(ood_ds)), OOD, "ood"))


def run_pipeline(cfg: ExperimentConfig, out: str | Path = "runs", cache: dict | None = None) -> dict:
    """All stages in order; returns the metrics dict also written to ``metrics.json``."""
    run = Run(cfg, out, cache)
    run.write_config()
    run.make_data()
    run.make_embedder()
    if cfg.sampler == "pgos":
        run.make_policy()
    run.make_outliers()
    run.make_detector()
    return run.evaluate()


# -------------------------------------------------------------------- suite


SUITE_COLUMNS = ["row_type", "sampler", "n_prototypes", "seed", "auc", "mean", "std", "n"]


def run_suite(cfg: ExperimentConfig, seeds: Sequence[int], samplers: Sequence[str],
              out: str | Path = "runs", k_values: Sequence[int] | None = None) -> list[dict]:
    """Seeds x samplers (x K) cells plus one mean/std row per (sampler, K).

    Upstream stages are shared across cells of one seed through an in-memory
    cache keyed by stage hash. ``std`` is the sample standard deviation
    (0 for a single seed).
    """
    for s in samplers:
        if s not in SAMPLERS:
            raise ValidationError(f"unknown sampler {s!r}")
    ks = list(k_values) if k_values else [cfg.embedder.n_prototypes]
    cells: list[dict] = []
    for k in ks:
        for seed in seeds:
            cache: dict = {}
            for sampler in samplers:
                blob = cfg.to_dict()
                blob.update(seed=int(seed), sampler=sampler)
                blob["embedder"]["n_prototypes"] = int(k)
                metrics = run_pipeline(ExperimentConfig.from_dict(blob), out, cache)
                cells.append({"row_type": "cell", "sampler": sampler, "n_prototypes": int(k),
                              "seed": int(seed), "auc": metrics["auc"], "mean": "", "std": "", "n": ""})
    rows = list(cells)
    for k in ks:
        for sampler in samplers:
            aucs = np.array([c["auc"] for c in cells if c["sampler"] == sampler and c["n_prototypes"] == k])
            std = float(aucs.std(ddof=1)) if len(aucs) > 1 else 0.0
            rows.append({"row_type": "aggregate", "sampler": sampler, "n_prototypes": int(k), "seed": "",
                         "auc": "", "mean": float(aucs.mean()), "std": std, "n": len(aucs)})
    return rows


def write_suite_csv(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUITE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# --------------------------------------------------------------- projection


def pca_2d(points) -> np.ndarray:
    """Top-2 principal-component coordinates; each axis signed so its largest loading is positive."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValidationError("projection needs a non-empty (n, D) array")
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    signs = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(axis=1)])
    comps = comps * signs[:, None]
    coords = centered @ comps.T
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((len(coords), 2 - coords.shape[1]))])
    return coords


def export_projection(points, labels: Sequence[str], path: str | Path | None = None) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if len(labels) != len(points):
        raise ValidationError("labels must align with points")
    coords = pca_2d(points)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "label"])
            for (x, y), lab in zip(coords, labels):
                writer.writerow([repr(float(x)), repr(float(y)), lab])
    return coords


def project_run(run: Run, path: str | Path | None = None) -> np.ndarray:
    """ID train embeddings (labelled by nearest prototype) plus sampler and Gaussian latents."""
    model, _, boundary = run.load_embedder()
    train = run.load_data().train
    z = model.embed(train.graphs).numpy()
    protos = model.prototypes.vectors.detach().numpy()
    labels = [f"cluster{int(k)}" for k in np.argmax(z @ protos.T, axis=1)]
    blocks, names = [z], labels
    if run.cfg.sampler in ("pgos", "uniform"):
        latents = run.load_latents()
        blocks.append(latents)
        names = names + [run.cfg.sampler] * len(latents)
    sigma = run.cfg.synth.sigma_gaussian
    sigma = 0.1 * boundary.r_max if sigma is None else sigma
    gauss = gaussian_midpoint_sampler(protos, boundary, len(train), sigma, run.seed)
    blocks.append(gauss)
    names = names + ["gaussian"] * len(gauss)
    return export_projection(np.vstack(blocks), names, path or run.dir / "projection.csv")
