"""AMA-GCN: multi-layer aggregation backbone plus the auxiliary dynamic-update channel.

Backbone (``mla``): ``L`` Chebyshev graph convolutions of equal width. The first
aggregation layer max-pools the outputs of layers ``1..m``, the second those of
``m..L`` (``m = ceil((L+1)/2)``, i.e. layer 3 of 5 feeds both), and their
concatenation is the joint representation ``h_final``. A dense head and softmax
give the class scores ``Z``.

Auxiliary channel (``adu``): two graph convolutions on ``h_final`` followed by
softmax give ``T``. Its similarity loss is fused with the cross-entropy of ``Z``,
so its gradient also reaches the backbone.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import nn
from .container import read_container, write_container
from .errors import ConfigError, DataError, NumericError
from .nn import AdamState, LayerParams, LossTerms, Tape
from .seeding import derive_rng
from .spectral import ChebBasis, PopulationGraph

ABLATIONS = ("full", "noP", "noW", "noA", "noS")


@dataclass
class AmaGcnConfig:
    mla_layers: int = 5
    adu_layers: int = 2
    hidden_dim: int = 16
    cheb_order: int = 3
    dropout: float = 0.3
    lr_mla: float = 0.005
    lr_adu: float = 0.05
    weight_decay: float = 0.0005
    epochs: int = 300
    lam: float = 1.0
    xi: float = 1e-6
    sigma: float = 1.0
    ablation: str = "full"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.ablation == "noA":
            self.mla_layers = 2
        if self.ablation == "noS":
            self.lam = 0.0
        if self.mla_layers < 2:
            raise ConfigError("the backbone needs at least two graph convolution layers")
        if self.adu_layers not in (0, 2):
            raise ConfigError("the auxiliary channel has two layers (or 0 to disconnect it)")
        if self.hidden_dim < 1 or self.cheb_order < 0 or self.epochs < 0:
            raise ConfigError("hidden_dim >= 1, cheb_order >= 0 and epochs >= 0 are required")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.lam < 0 or self.xi <= 0 or self.sigma <= 0:
            raise ConfigError("lambda >= 0, xi > 0 and sigma > 0 are required")

    @property
    def plain_backbone(self) -> bool:
        return self.ablation == "noA"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AmaGcnConfig":
        known = {f for f in cls.__dataclass_fields__}
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**{k: v for k, v in d.items() if k in known})


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ModelParams:
    gc_layers: list[LayerParams]
    output_head: LayerParams | None
    adu_gc_layers: list[LayerParams]
    adam_mla: AdamState
    adam_adu: AdamState

    def mla_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.gc_layers):
            out.update(_layer_arrays(f"gc{i}", layer))
        if self.output_head is not None:
            out.update(_layer_arrays("head", self.output_head))
        return out

    def adu_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.adu_gc_layers):
            out.update(_layer_arrays(f"adu{i}", layer))
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return {**self.mla_arrays(), **self.adu_arrays()}

    def assign(self, arrays: dict[str, np.ndarray]) -> None:
        layers = {f"gc{i}": l for i, l in enumerate(self.gc_layers)}
        layers.update({f"adu{i}": l for i, l in enumerate(self.adu_gc_layers)})
        if self.output_head is not None:
            layers["head"] = self.output_head
        for name, value in arrays.items():
            prefix, slot = name.split(".")
            layer = layers[prefix]
            if slot == "b":
                layer.bias = value
            else:
                layer.weights[int(slot[1:])] = value


def _layer_arrays(prefix: str, layer: LayerParams) -> dict[str, np.ndarray]:
    out = {f"{prefix}.w{k}": w for k, w in enumerate(layer.weights)}
    out[f"{prefix}.b"] = layer.bias
    return out


def init_params(in_dim: int, n_classes: int, config: AmaGcnConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = derive_rng(seed, "init")
    terms = config.cheb_order + 1
    h = config.hidden_dim
    if config.plain_backbone:
        gc = [
            LayerParams.glorot(in_dim, h, terms, rng),
            LayerParams.glorot(h, n_classes, terms, rng),
        ]
        head = None
        joint = h
    else:
        dims = [in_dim] + [h] * config.mla_layers
        gc = [LayerParams.glorot(a, b, terms, rng) for a, b in zip(dims[:-1], dims[1:])]
        head = LayerParams.glorot(2 * h, n_classes, 1, rng)
        joint = 2 * h
    adu = []
    if config.adu_layers:
        adu = [
            LayerParams.glorot(joint, h, terms, rng),
            LayerParams.glorot(h, n_classes, terms, rng),
        ]
    return ModelParams(
        gc_layers=gc,
        output_head=head,
        adu_gc_layers=adu,
        adam_mla=AdamState(lr=config.lr_mla),
        adam_adu=AdamState(lr=config.lr_adu),
    )


@dataclass
class ForwardPass:
    tape: Tape
    z: nn.Node
    h_final: nn.Node
    t: nn.Node | None


def _pool_split(n_layers: int) -> int:
    return math.ceil((n_layers + 1) / 2)


def _forward(
    features: np.ndarray,
    basis: ChebBasis,
    params: ModelParams,
    config: AmaGcnConfig,
    training: bool,
    rngs: dict | None = None,
) -> ForwardPass:
    if len(basis.terms) != config.cheb_order + 1:
        raise DataError(
            f"basis has {len(basis.terms)} terms but the model expects {config.cheb_order + 1}"
        )
    if features.shape[1] != params.gc_layers[0].in_dim:
        raise DataError(
            f"features have {features.shape[1]} columns, first layer expects "
            f"{params.gc_layers[0].in_dim}"
        )
    rngs = rngs or {}
    p = config.dropout if training else 0.0
    mla_rng, adu_rng = rngs.get("mla"), rngs.get("adu")
    tape = Tape()
    h = tape.constant(features)

    def conv(prefix, layer, x, rng, activation):
        ws, b = tape.layer(prefix, layer)
        x = tape.dropout(x, p, rng, training)
        return tape.cheb_conv(x, basis, ws, b, activation)

    if config.plain_backbone:
        hidden = conv("gc0", params.gc_layers[0], h, mla_rng, "relu")
        logits = conv("gc1", params.gc_layers[1], hidden, mla_rng, None)
        h_final = hidden
    else:
        outs = []
        for i, layer in enumerate(params.gc_layers):
            h = conv(f"gc{i}", layer, h, mla_rng, "relu")
            outs.append(h)
        m = _pool_split(len(outs))
        la1 = tape.maxpool(outs[:m])
        la2 = tape.maxpool(outs[m - 1 :])
        h_final = tape.concat([la1, la2])
        ws, b = tape.layer("head", params.output_head)
        logits = tape.dense(h_final, ws[0], b)
    z = tape.softmax(logits)

    t = None
    if params.adu_gc_layers:
        a = conv("adu0", params.adu_gc_layers[0], h_final, adu_rng, "relu")
        a = conv("adu1", params.adu_gc_layers[1], a, adu_rng, None)
        t = tape.softmax(a)
    return ForwardPass(tape, z, h_final, t)


def mla_forward(
    graph: PopulationGraph,
    basis: ChebBasis,
    params: ModelParams,
    config: AmaGcnConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Backbone class scores ``Z`` and joint representation ``h_final``."""
    fp = _forward(graph.features, basis, params, config, mode == "train", {"mla": rng})
    return fp.z.value, fp.h_final.value


def adu_forward(
    h_final: np.ndarray,
    basis: ChebBasis,
    params: ModelParams,
    config: AmaGcnConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Auxiliary scores ``T`` computed from the backbone's joint representation."""
    if not params.adu_gc_layers:
        raise ConfigError("the auxiliary channel is disconnected (adu_layers=0)")
    p = config.dropout if mode == "train" else 0.0
    h = nn.dropout(h_final, p, rng, mode == "train")
    a = nn.cheb_conv_forward(h, basis, params.adu_gc_layers[0], "relu")
    a = nn.dropout(a, p, rng, mode == "train")
    a = nn.cheb_conv_forward(a, basis, params.adu_gc_layers[1], None)
    return nn.softmax(a)


def loss_and_grads(
    graph: PopulationGraph,
    basis: ChebBasis,
    params: ModelParams,
    config: AmaGcnConfig,
    training: bool = True,
    rngs: dict | None = None,
) -> tuple[LossTerms, dict[str, np.ndarray], ForwardPass]:
    """Fused loss on the training rows and its gradient for every parameter."""
    fp = _forward(graph.features, basis, params, config, training, rngs)
    tape = fp.tape
    y = graph.one_hot()
    mask = graph.train_mask
    semi = tape.cross_entropy(fp.z, y, mask)
    sim_value = 0.0
    loss = semi
    if fp.t is not None:
        sim = tape.similarity(fp.t, y, mask, config.xi, config.sigma)
        sim_value = sim.value
        if config.lam > 0:
            loss = tape.fuse(semi, sim, config.lam)
    total = nn.total_loss(semi.value, sim_value, config.lam)
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss {total}")
    grads = tape.backward(loss)
    terms = LossTerms(semi.value, sim_value, total, config.lam, config.xi, config.sigma)
    return terms, grads, fp


def train_step(
    graph: PopulationGraph,
    basis: ChebBasis,
    params: ModelParams,
    config: AmaGcnConfig,
    rngs: dict | None = None,
) -> tuple[ModelParams, LossTerms, ForwardPass]:
    """One forward/backward pass and one Adam update per parameter group (in place)."""
    if not graph.train_mask.any():
        raise DataError("the training mask is empty")
    terms, grads, fp = loss_and_grads(graph, basis, params, config, True, rngs)
    mla = params.mla_arrays()
    new_mla, _ = nn.adam_step(
        mla, {k: grads[k] for k in mla}, params.adam_mla, config.weight_decay
    )
    params.assign(new_mla)
    adu = params.adu_arrays()
    if adu:
        new_adu, _ = nn.adam_step(
            adu, {k: grads[k] for k in adu}, params.adam_adu, config.weight_decay
        )
        params.assign(new_adu)
    return params, terms, fp


def predict(
    graph: PopulationGraph, basis: ChebBasis, params: ModelParams, config: AmaGcnConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Class index (argmax, ties to the lowest index) and score rows ``Z``."""
    z, _ = mla_forward(graph, basis, params, config, mode="eval")
    return np.argmax(z, axis=1), z


def _accuracy(z: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float | None:
    if not mask.any():
        return None
    return float(np.mean(np.argmax(z[mask], axis=1) == labels[mask]))


def train(
    graph: PopulationGraph,
    basis: ChebBasis,
    config: AmaGcnConfig,
    seed: int,
    log: Callable[[dict], None] | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Full-graph training for ``config.epochs`` epochs.

    Returns the trained parameters and one record per epoch with the losses and
    the train/validation accuracy of the (dropout-perturbed) training forward pass.
    """
    params = init_params(graph.features.shape[1], graph.n_classes, config, seed)
    rngs = {"mla": derive_rng(seed, "dropout", "mla"), "adu": derive_rng(seed, "dropout", "adu")}
    history = []
    for epoch in range(config.epochs):
        params, terms, fp = train_step(graph, basis, params, config, rngs)
        z = fp.z.value
        record = {
            "epoch": epoch,
            **terms.to_dict(),
            "train_acc": _accuracy(z, graph.labels, graph.train_mask),
            "val_acc": _accuracy(z, graph.labels, graph.val_mask),
        }
        history.append(record)
        if log is not None:
            log(record)
    return params, history


def save_checkpoint(path, params: ModelParams, config: AmaGcnConfig, seed: int) -> None:
    arrays = dict(params.arrays())
    meta = {
        "format": "amagcn-checkpoint",
        "config": config.to_dict(),
        "config_hash": config_hash(config.to_dict()),
        "seed": seed,
        "adam": {},
    }
    for group, state in (("mla", params.adam_mla), ("adu", params.adam_adu)):
        meta["adam"][group] = {
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "step_count": state.step_count,
        }
        for name in state.first_moment:
            arrays[f"adam.{group}.m.{name}"] = state.first_moment[name]
            arrays[f"adam.{group}.v.{name}"] = state.second_moment[name]
    write_container(path, arrays, meta)


def load_checkpoint(path) -> tuple[ModelParams, AmaGcnConfig, int]:
    arrays, meta = read_container(path)
    if meta.get("format") != "amagcn-checkpoint":
        raise DataError(f"{path}: not a model checkpoint")
    config = AmaGcnConfig.from_dict(meta["config"])
    gc = sorted({k.split(".")[0] for k in arrays if k.startswith("gc")}, key=lambda s: int(s[2:]))
    adu = sorted({k.split(".")[0] for k in arrays if k.startswith("adu")}, key=lambda s: int(s[3:]))
    terms = config.cheb_order + 1

    def layer(prefix, n_terms):
        return LayerParams([arrays[f"{prefix}.w{k}"] for k in range(n_terms)], arrays[f"{prefix}.b"])

    states = {}
    for group in ("mla", "adu"):
        info = meta["adam"][group]
        state = AdamState(info["lr"], info["beta1"], info["beta2"], info["eps"], info["step_count"])
        for key in arrays:
            pre = f"adam.{group}.m."
            if key.startswith(pre):
                name = key[len(pre) :]
                state.first_moment[name] = arrays[key]
                state.second_moment[name] = arrays[f"adam.{group}.v.{name}"]
        states[group] = state
    params = ModelParams(
        gc_layers=[layer(p, terms) for p in gc],
        output_head=layer("head", 1) if "head.b" in arrays else None,
        adu_gc_layers=[layer(p, terms) for p in adu],
        adam_mla=states["mla"],
        adam_adu=states["adu"],
    )
    return params, config, int(meta["seed"])
