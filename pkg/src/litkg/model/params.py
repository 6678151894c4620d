"""Learnable parameter collection and its checkpoint format."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from ..config import LayerConfig
from ..kg import RELATIONS
from ..numerics import Tensor


class CheckpointError(IOError):
    pass


class ModelParams:
    """Ordered name -> :class:`Tensor` mapping (the full parameter set)."""

    def __init__(self, tensors: Optional[dict] = None):
        self.tensors: dict[str, Tensor] = dict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __setitem__(self, name: str, value: Tensor) -> None:
        value.name = name
        self.tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def get(self, name: str, default=None):
        return self.tensors.get(name, default)

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k)
                            for k, v in self.tensors.items()})

    def assign(self, other: "ModelParams") -> None:
        for k, v in other.items():
            self.tensors[k].data[...] = v.data

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.tensors.values())

    def n_values(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def save(self, directory, manifest: Optional[dict] = None) -> Path:
        """Write ``manifest.json`` plus one little-endian float64 blob per tensor."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for name, t in self.tensors.items():
            fname = f"{name}.f64"
            t.data.astype("<f8").tofile(directory / fname)
            entries.append({"name": name, "shape": list(t.shape), "file": fname})
        doc = dict(manifest or {})
        doc["params"] = entries
        path = directory / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, directory) -> tuple["ModelParams", dict]:
        directory = Path(directory)
        path = directory / "manifest.json"
        if not path.is_file():
            raise CheckpointError(f"no checkpoint manifest at {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        params = cls()
        for entry in doc["params"]:
            blob = directory / entry["file"]
            if not blob.is_file():
                raise CheckpointError(f"missing parameter blob {blob}")
            data = np.fromfile(blob, dtype="<f8")
            shape = tuple(entry["shape"])
            if data.size != int(np.prod(shape)):
                raise CheckpointError(f"blob {blob} has {data.size} values, expected {shape}")
            params[entry["name"]] = Tensor(data.reshape(shape).astype(np.float64),
                                           requires_grad=True)
        return params, doc


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def layer_in_dim(config: LayerConfig, layer: int) -> int:
    return config.embed_dim if layer == 1 else config.hidden_dim


def init_params(config: LayerConfig, n_entities: int, numeric_width: int, text_width: int,
                seed: int = 0, n_relations: int = len(RELATIONS)) -> ModelParams:
    """Xavier-initialised parameters for every module of the model.

    Names: ``entity``, ``relation`` (both directions, 2*R rows), ``gate.*``,
    ``att.W``, ``layer{l}.*``, ``out.*``, ``proj.<relation>`` and ``clf.*``.
    """
    rng = np.random.default_rng(seed)
    d, h, N, T = config.embed_dim, config.hidden_dim, numeric_width, text_width
    out_dim = h
    p = ModelParams()

    def put(name, arr):
        p[name] = Tensor(arr, requires_grad=True)

    put("entity", xavier(rng, n_entities, d))
    put("relation", xavier(rng, 2 * n_relations, d))
    put("gate.W_E", xavier(rng, d, d))
    put("gate.W_N", xavier(rng, N, d))
    put("gate.W_T", xavier(rng, T, d))
    put("gate.b", np.zeros(d))
    put("gate.W", xavier(rng, d + N + T, d))
    put("att.W", xavier(rng, d, d))
    for l in range(1, config.n_layers + 1):
        din = layer_in_dim(config, l)
        pre = f"layer{l}."
        agg = config.aggregator
        if agg == "gcn":
            put(pre + "W", xavier(rng, din, h))
        elif agg == "sage":
            put(pre + "W", xavier(rng, 2 * din, h))
        elif agg == "bi":
            put(pre + "W1", xavier(rng, din, h))
            put(pre + "W2", xavier(rng, din, h))
        elif agg == "gin":
            put(pre + "fc1", xavier(rng, din, h))
            put(pre + "fc1_b", np.zeros(h))
            put(pre + "fc2", xavier(rng, h, h))
            put(pre + "fc2_b", np.zeros(h))
            if config.learnable_epsilon:
                put(pre + "eps", np.zeros(1))
        if config.residual_identity:
            put(pre + "W_res", xavier(rng, h, h))
    put("out.W", xavier(rng, config.n_layers * h, out_dim))
    put("out.b", np.zeros(out_dim))
    for r in RELATIONS[:n_relations]:
        put(f"proj.{r.value}", xavier(rng, out_dim, d))
    put("clf.W1", xavier(rng, 2 * d, h))
    put("clf.b1", np.zeros(h))
    put("clf.W2", xavier(rng, h, 1))
    put("clf.b2", np.zeros(1))
    return p
