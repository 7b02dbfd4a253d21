"""Graph data model, TU-format ingestion, synthetic generators, augmentation, batching."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np
import torch

from .utils import DTYPE, FORMAT_VERSION, ValidationError, derive_seed, read_json, write_json

log = logging.getLogger(__name__)

ID, OOD = "ID", "OOD"


class Graph:
    """Undirected simple graph with node features.

    ``adjacency`` is stored as a uint8 matrix, ``features`` as float64.
    """

    __slots__ = ("adjacency", "features")

    def __init__(self, adjacency, features):
        adj = np.asarray(adjacency)
        feats = np.asarray(features, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise ValidationError(f"adjacency must be a non-empty square matrix, got {adj.shape}")
        if not np.isin(adj, (0, 1)).all():
            raise ValidationError("adjacency must be binary")
        if not np.array_equal(adj, adj.T):
            raise ValidationError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise ValidationError("adjacency must have a zero diagonal (no self-loops)")
        if feats.ndim != 2 or feats.shape[0] != adj.shape[0]:
            raise ValidationError(
                f"features must be n x d with n={adj.shape[0]}, got {feats.shape}"
            )
        self.adjacency = adj.astype(np.uint8)
        self.features = feats

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def permute(self, perm: Sequence[int]) -> "Graph":
        perm = np.asarray(perm)
        return Graph(self.adjacency[np.ix_(perm, perm)], self.features[perm])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency) and np.array_equal(
            self.features, other.features
        )

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, edges={self.num_edges}, d={self.d})"


@dataclass
class GraphDataset:
    graphs: list[Graph]
    labels: list[str] | None = None
    name: str = "dataset"
    groups: list[str] | None = None
    origin: str | None = None

    def __post_init__(self):
        for attr in ("labels", "groups"):
            values = getattr(self, attr)
            if values is not None and len(values) != len(self.graphs):
                raise ValidationError(f"{attr} must align 1:1 with graphs")
        if self.labels is not None and any(lab not in (ID, OOD) for lab in self.labels):
            raise ValidationError("labels must be 'ID' or 'OOD'")
        dims = {g.d for g in self.graphs}
        if len(dims) > 1:
            raise ValidationError(f"feature dimension differs across dataset: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].d

    def subset(self, idx: Sequence[int], name: str | None = None) -> "GraphDataset":
        idx = list(idx)
        return GraphDataset(
            graphs=[self.graphs[i] for i in idx],
            labels=None if self.labels is None else [self.labels[i] for i in idx],
            name=name or self.name,
            groups=None if self.groups is None else [self.groups[i] for i in idx],
            origin=self.origin,
        )

    def node_count_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(g.n for g in self.graphs).items()))


# ---------------------------------------------------------------- JSON dump


def dataset_to_json(ds: GraphDataset, **extra) -> dict:
    graphs = []
    for i, g in enumerate(ds.graphs):
        entry = {
            "n": g.n,
            "adjacency": [np.flatnonzero(row).tolist() for row in g.adjacency],
            "features": g.features.tolist(),
        }
        if ds.labels is not None:
            entry["label"] = ds.labels[i]
        if ds.groups is not None:
            entry["group"] = ds.groups[i]
        graphs.append(entry)
    out = {"format_version": FORMAT_VERSION, "name": ds.name, "graphs": graphs}
    if ds.origin is not None:
        out["origin"] = ds.origin
    out.update(extra)
    return out


def dataset_from_json(blob: dict) -> GraphDataset:
    if blob.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported dataset format_version {blob.get('format_version')!r}")
    graphs, labels, groups = [], [], []
    for entry in blob["graphs"]:
        n = entry["n"]
        adj = np.zeros((n, n), dtype=np.uint8)
        for u, nbrs in enumerate(entry["adjacency"]):
            adj[u, nbrs] = 1
        feats = np.asarray(entry["features"], dtype=np.float64).reshape(n, -1)
        graphs.append(Graph(adj, feats))
        labels.append(entry.get("label"))
        groups.append(entry.get("group"))
    return GraphDataset(
        graphs=graphs,
        labels=labels if all(lab is not None for lab in labels) and graphs else None,
        name=blob.get("name", "dataset"),
        groups=groups if all(g is not None for g in groups) and graphs else None,
        origin=blob.get("origin"),
    )


def save_dataset(ds: GraphDataset, path: str | Path, **extra) -> None:
    write_json(path, dataset_to_json(ds, **extra))


def load_dataset(path: str | Path) -> GraphDataset:
    return dataset_from_json(read_json(path))


# ------------------------------------------------------------- TU datasets


class TUFormatError(ValidationError):
    pass


class MissingFileError(TUFormatError):
    pass


class NonContiguousGraphIdsError(TUFormatError):
    pass


class UnknownNodeError(TUFormatError):
    pass


class SelfLoopError(TUFormatError):
    pass


class CrossGraphEdgeError(TUFormatError):
    pass


def _read_rows(path: Path) -> list[tuple[int, str]]:
    with path.open() as fh:
        return [(i, line.strip()) for i, line in enumerate(fh, start=1) if line.strip()]


def _parse_ints(path: Path, lineno: int, text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise TUFormatError(f"{path.name}:{lineno}: expected integers, got {text!r}") from None


def _infer_tu_name(directory: Path) -> str:
    hits = sorted(directory.glob("*_A.txt"))
    if not hits:
        raise MissingFileError(f"no '<name>_A.txt' edge file in {directory}")
    return hits[0].name[: -len("_A.txt")]


def load_tudataset(directory: str | Path, name: str | None = None) -> GraphDataset:
    """Read a dataset in the TU benchmark text convention.

    Node labels are one-hot encoded; continuous attributes are concatenated
    after them. With neither present, nodes get the structural features used
    by the synthetic generator (degree, clustering coefficient).
    """
    directory = Path(directory)
    name = name or _infer_tu_name(directory)
    files = {
        key: directory / f"{name}_{key}.txt"
        for key in ("A", "graph_indicator", "node_labels", "node_attributes")
    }
    for key in ("A", "graph_indicator"):
        if not files[key].exists():
            raise MissingFileError(f"missing required file {files[key].name} in {directory}")

    indicator = []
    prev = 0
    for lineno, text in _read_rows(files["graph_indicator"]):
        (gid,) = _parse_ints(files["graph_indicator"], lineno, text)
        if gid != prev and gid != prev + 1:
            raise NonContiguousGraphIdsError(
                f"{files['graph_indicator'].name}:{lineno}: graph id {gid} follows {prev}; "
                "ids must be contiguous, start at 1 and be non-decreasing"
            )
        indicator.append(gid)
        prev = gid
    if not indicator:
        raise TUFormatError(f"{files['graph_indicator'].name} is empty")
    indicator = np.asarray(indicator)
    num_nodes = len(indicator)
    num_graphs = int(indicator[-1])
    starts = np.searchsorted(indicator, np.arange(1, num_graphs + 1))
    sizes = np.bincount(indicator, minlength=num_graphs + 1)[1:]

    adjs = [np.zeros((s, s), dtype=np.uint8) for s in sizes]
    for lineno, text in _read_rows(files["A"]):
        pair = _parse_ints(files["A"], lineno, text)
        if len(pair) != 2:
            raise TUFormatError(f"{files['A'].name}:{lineno}: expected an edge pair, got {text!r}")
        u, v = pair
        for node in (u, v):
            if not 1 <= node <= num_nodes:
                raise UnknownNodeError(
                    f"{files['A'].name}:{lineno}: edge references unknown node {node}"
                )
        if u == v:
            raise SelfLoopError(f"{files['A'].name}:{lineno}: self-loop on node {u} rejected")
        gu, gv = indicator[u - 1], indicator[v - 1]
        if gu != gv:
            raise CrossGraphEdgeError(
                f"{files['A'].name}:{lineno}: edge ({u},{v}) joins graphs {gu} and {gv}"
            )
        off = starts[gu - 1]
        adjs[gu - 1][u - 1 - off, v - 1 - off] = 1
        adjs[gu - 1][v - 1 - off, u - 1 - off] = 1

    blocks = []
    if files["node_labels"].exists():
        rows = _read_rows(files["node_labels"])
        if len(rows) != num_nodes:
            raise TUFormatError(
                f"{files['node_labels'].name}: {len(rows)} rows for {num_nodes} nodes"
            )
        raw = np.asarray([_parse_ints(files["node_labels"], ln, t)[0] for ln, t in rows])
        values, codes = np.unique(raw, return_inverse=True)
        blocks.append(np.eye(len(values))[codes])
    if files["node_attributes"].exists():
        rows = _read_rows(files["node_attributes"])
        if len(rows) != num_nodes:
            raise TUFormatError(
                f"{files['node_attributes'].name}: {len(rows)} rows for {num_nodes} nodes"
            )
        attrs = []
        for lineno, text in rows:
            try:
                attrs.append([float(tok) for tok in text.replace(",", " ").split()])
            except ValueError:
                raise TUFormatError(
                    f"{files['node_attributes'].name}:{lineno}: bad attribute row {text!r}"
                ) from None
        blocks.append(np.asarray(attrs, dtype=np.float64))

    graphs = []
    for k in range(num_graphs):
        sl = slice(starts[k], starts[k] + sizes[k])
        if blocks:
            feats = np.concatenate([b[sl] for b in blocks], axis=1)
        else:
            feats = structural_features(adjs[k])
        graphs.append(Graph(adjs[k], feats))
    return GraphDataset(graphs=graphs, name=name)


def write_tudataset(ds: GraphDataset, directory: str | Path, name: str | None = None) -> Path:
    """Write graphs as TU text files; features go to ``<name>_node_attributes.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = name or ds.name
    edges, indicator, attrs = [], [], []
    offset = 0
    for gid, g in enumerate(ds.graphs, start=1):
        us, vs = np.nonzero(np.triu(g.adjacency))
        edges.extend(f"{u + offset + 1}, {v + offset + 1}" for u, v in zip(us, vs))
        indicator.extend([str(gid)] * g.n)
        attrs.extend(", ".join(repr(float(x)) for x in row) for row in g.features)
        offset += g.n
    for suffix, lines in (("A", edges), ("graph_indicator", indicator), ("node_attributes", attrs)):
        (directory / f"{name}_{suffix}.txt").write_text("".join(line + "\n" for line in lines))
    return directory


# -------------------------------------------------------- synthetic graphs

GENERATORS = ("erdos_renyi", "barabasi_albert", "two_community")


@dataclass(frozen=True)
class FamilySpec:
    kind: str
    p: float | None = None
    m: int | None = None
    p_in: float | None = None
    p_out: float | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "FamilySpec":
        unknown = set(d) - {"kind", "p", "m", "p_in", "p_out"}
        if unknown:
            raise ValidationError(f"unknown family keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @property
    def label(self) -> str:
        params = ",".join(f"{k}={v}" for k, v in self.to_dict().items() if k != "kind")
        return f"{self.kind}({params})"

    def validate(self, n_min: int) -> None:
        def prob(name, value):
            if value is None or not 0.0 < value < 1.0:
                raise ValidationError(f"{self.kind}: {name} must lie in (0, 1), got {value}")

        if self.kind == "erdos_renyi":
            prob("p", self.p)
        elif self.kind == "two_community":
            prob("p_in", self.p_in)
            prob("p_out", self.p_out)
        elif self.kind == "barabasi_albert":
            if self.m is None or not 1 <= self.m < n_min:
                raise ValidationError(f"barabasi_albert: m must satisfy 1 <= m < n_min, got {self.m}")
        else:
            raise ValidationError(f"unknown generator {self.kind!r}; expected one of {GENERATORS}")

    def sample(self, n: int, seed: int) -> nx.Graph:
        if self.kind == "erdos_renyi":
            return nx.gnp_random_graph(n, self.p, seed=seed)
        if self.kind == "barabasi_albert":
            return nx.barabasi_albert_graph(n, self.m, seed=seed)
        sizes = [n // 2, n - n // 2]
        probs = [[self.p_in, self.p_out], [self.p_out, self.p_in]]
        return nx.stochastic_block_model(sizes, probs, seed=seed)


@dataclass(frozen=True)
class SyntheticSpec:
    id_families: tuple[FamilySpec, ...]
    ood_family: FamilySpec
    n_min: int = 20
    n_max: int = 40
    graphs_per_family: int = 150
    ood_graphs: int = 100
    features: str = "degree_clustering"

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synthetic spec keys: {sorted(unknown)}")
        d["id_families"] = tuple(FamilySpec.from_dict(f) for f in d["id_families"])
        d["ood_family"] = FamilySpec.from_dict(d["ood_family"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "id_families": [f.to_dict() for f in self.id_families],
            "ood_family": self.ood_family.to_dict(),
            "n_min": self.n_min,
            "n_max": self.n_max,
            "graphs_per_family": self.graphs_per_family,
            "ood_graphs": self.ood_graphs,
            "features": self.features,
        }

    def validate(self) -> None:
        if not 2 <= self.n_min <= self.n_max:
            raise ValidationError(f"empty node range [{self.n_min}, {self.n_max}] (need 2 <= n_min <= n_max)")
        if not self.id_families:
            raise ValidationError("at least one ID family is required")
        if self.graphs_per_family < 1 or self.ood_graphs < 0:
            raise ValidationError("graph counts must be positive")
        if self.features not in ("degree_clustering", "constant"):
            raise ValidationError(f"unknown feature mode {self.features!r}")
        for fam in (*self.id_families, self.ood_family):
            fam.validate(self.n_min)
        if len(set(self.id_families)) != len(self.id_families):
            raise ValidationError("ID families must have distinct generator parameters")
        if self.ood_family in self.id_families:
            raise ValidationError("OOD family must differ from every ID family")


def structural_features(adj: np.ndarray) -> np.ndarray:
    """Per-node [degree, local clustering coefficient]."""
    g = nx.from_numpy_array(adj)
    clustering = nx.clustering(g)
    deg = adj.sum(axis=1).astype(np.float64)
    return np.column_stack([deg, [clustering[i] for i in range(adj.shape[0])]])


def _sample_graph(fam: FamilySpec, spec: SyntheticSpec, seed: int, key: str, index: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, "synthetic", key, index))
    n = int(rng.integers(spec.n_min, spec.n_max + 1))
    g = fam.sample(n, seed=int(rng.integers(2**31 - 1)))
    adj = nx.to_numpy_array(g, nodelist=range(n), dtype=np.uint8)
    perm = rng.permutation(n)
    return adj[np.ix_(perm, perm)]


def generate_synthetic_dataset(spec: SyntheticSpec | dict, seed: int) -> GraphDataset:
    """Sample ID families plus one OOD family; a pure function of ``(spec, seed)``.

    Every graph draws from its own derived seed, so generation order does not
    matter. Structural features are standardized over the whole dataset.
    """
    if isinstance(spec, dict):
        spec = SyntheticSpec.from_dict(spec)
    spec.validate()
    adjs, labels, groups = [], [], []
    for fi, fam in enumerate(spec.id_families):
        for i in range(spec.graphs_per_family):
            adjs.append(_sample_graph(fam, spec, seed, f"id{fi}", i))
            labels.append(ID)
            groups.append(fam.label)
    for i in range(spec.ood_graphs):
        adjs.append(_sample_graph(spec.ood_family, spec, seed, "ood", i))
        labels.append(OOD)
        groups.append(spec.ood_family.label)

    if spec.features == "constant":
        feats = [np.ones((a.shape[0], 1)) for a in adjs]
    else:
        feats = [structural_features(a) for a in adjs]
        stacked = np.concatenate(feats)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std[std == 0] = 1.0
        feats = [(f - mean) / std for f in feats]
    graphs = [Graph(a, f) for a, f in zip(adjs, feats)]
    return GraphDataset(graphs=graphs, labels=labels, name="synthetic", groups=groups)


# ------------------------------------------------------------ augmentation


@dataclass(frozen=True)
class AugmentationConfig:
    edge_drop_p: float = 0.2
    feat_mask_p: float = 0.2

    def __post_init__(self):
        for name in ("edge_drop_p", "feat_mask_p"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")


def augment(g: Graph, cfg: AugmentationConfig, rng: np.random.Generator) -> Graph:
    """Drop each edge and zero each feature entry independently."""
    adj = g.adjacency.copy()
    feats = g.features.copy()
    if cfg.edge_drop_p > 0:
        us, vs = np.nonzero(np.triu(adj))
        drop = rng.random(len(us)) < cfg.edge_drop_p
        adj[us[drop], vs[drop]] = 0
        adj[vs[drop], us[drop]] = 0
    if cfg.feat_mask_p > 0:
        feats[rng.random(feats.shape) < cfg.feat_mask_p] = 0.0
    return Graph(adj, feats)


# ----------------------------------------------------------------- batching


@dataclass
class GraphBatch:
    """Zero-padded dense batch. Padding nodes are isolated and masked out."""

    adjacency: torch.Tensor  # (B, N, N)
    features: torch.Tensor  # (B, N, d)
    mask: torch.Tensor  # (B, N) 1.0 for real nodes
    sizes: torch.Tensor = field(repr=False)  # (B,)

    def __len__(self) -> int:
        return self.adjacency.shape[0]


def collate(graphs: Sequence[Graph]) -> GraphBatch:
    if not graphs:
        raise ValidationError("cannot collate an empty batch")
    b = len(graphs)
    n_max = max(g.n for g in graphs)
    d = graphs[0].d
    adj = np.zeros((b, n_max, n_max))
    feats = np.zeros((b, n_max, d))
    mask = np.zeros((b, n_max))
    for i, g in enumerate(graphs):
        if g.d != d:
            raise ValidationError("feature dimension mismatch inside batch")
        adj[i, : g.n, : g.n] = g.adjacency
        feats[i, : g.n] = g.features
        mask[i, : g.n] = 1.0
    return GraphBatch(
        adjacency=torch.as_tensor(adj, dtype=DTYPE),
        features=torch.as_tensor(feats, dtype=DTYPE),
        mask=torch.as_tensor(mask, dtype=DTYPE),
        sizes=torch.as_tensor([g.n for g in graphs]),
    )
