"""Conditional graph network: three edge-convolution layers over dynamically
rebuilt kNN graphs, a per-point displacement head, and a global force head.

Layer 1 builds its graph on the input coordinates, layers 2 and 3 on their own
input features. Per-point features from all three layers are concatenated with
the (broadcast) 6-component condition before the heads. The final layer of
each head is zero-initialized, so a fresh model predicts the identity
deformation and zero force change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from softsurf import autodiff as ad
from softsurf.core import Condition, apply_displacement
from softsurf.errors import ConfigError
from softsurf.graph import knn_graph


@dataclass(frozen=True)
class ModelConfig:
    k: int = 5
    aggregation: str = "mean"
    edgeconv_widths: tuple = (64, 64, 64)
    displacement_hidden: tuple = (256, 128)
    force_widths: tuple = (128, 64, 32, 1)
    activation: str = "relu"
    # Edge feature layout [x_i, x_j - x_i]; set False for the literal [x_i, x_j].
    centered_edge_features: bool = True

    def validate(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.aggregation != "mean":
            raise ConfigError(f"unsupported aggregation {self.aggregation!r}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if len(self.edgeconv_widths) != 3 or any(w < 1 for w in self.edgeconv_widths):
            raise ConfigError(f"need three positive edge-conv widths, got {self.edgeconv_widths}")
        if any(w < 1 for w in self.displacement_hidden):
            raise ConfigError(f"displacement widths must be positive, got {self.displacement_hidden}")
        if len(self.force_widths) != 4 or any(w < 1 for w in self.force_widths):
            raise ConfigError(f"need four positive force-head widths, got {self.force_widths}")
        if self.force_widths[-1] != 1:
            raise ConfigError(f"force head must end in width 1, got {self.force_widths}")

    @property
    def point_feature_dim(self) -> int:
        return sum(self.edgeconv_widths) + 6

    def layer_dims(self) -> list[tuple[str, int, int]]:
        """(name, fan_in, fan_out) for every linear layer, in parameter order."""
        dims = []
        d_in = 3
        for i, w in enumerate(self.edgeconv_widths):
            dims.append((f"edge{i + 1}", 2 * d_in, w))
            d_in = w
        g = self.point_feature_dim
        d = g
        for i, w in enumerate(tuple(self.displacement_hidden) + (3,)):
            dims.append((f"disp{i}", d, w))
            d = w
        d = g
        for i, w in enumerate(self.force_widths):
            dims.append((f"force{i}", d, w))
            d = w
        return dims


def init_weights(config: ModelConfig, seed: int, dtype=np.float32) -> dict[str, ad.Tensor]:
    """Kaiming-uniform fan-in init; the last layer of each head starts at zero."""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    dims = config.layer_dims()
    zero_names = {f"disp{len(config.displacement_hidden)}", f"force{len(config.force_widths) - 1}"}
    params: dict[str, ad.Tensor] = {}
    for name, fan_in, fan_out in dims:
        if name in zero_names:
            w = np.zeros((fan_in, fan_out))
        else:
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{name}.w"] = ad.tensor(w, requires_grad=True, dtype=dtype)
        params[f"{name}.b"] = ad.tensor(np.zeros(fan_out), requires_grad=True, dtype=dtype)
    return params


def parameter_count(params: dict[str, ad.Tensor]) -> int:
    return sum(p.data.size for p in params.values())


def _linear(x: ad.Tensor, params: dict, name: str) -> ad.Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def edge_conv(
    features: ad.Tensor,
    k: int,
    params: dict,
    name: str,
    centered: bool = True,
    stats: dict | None = None,
) -> ad.Tensor:
    """One dynamic edge convolution: kNN self-loop graph in the input feature
    space, edge MLP, mean aggregation of incoming messages."""
    n = features.data.shape[0]
    edges = knn_graph(features.data, k)
    if stats is not None:
        stats.setdefault("edges_per_layer", []).append(len(edges))
    if centered:
        ef = ad.edge_features(features, edges.targets, edges.sources)
    else:
        ef = ad.concat(
            [ad.gather_rows(features, edges.targets), ad.gather_rows(features, edges.sources)],
            axis=1,
        )
    msg = ad.relu(_linear(ef, params, name))
    return ad.scatter_mean(msg, edges.targets, n)


def cgnn_forward(
    x: np.ndarray,
    condition: Condition,
    params: dict[str, ad.Tensor],
    config: ModelConfig,
    stats: dict | None = None,
) -> tuple[ad.Tensor, ad.Tensor]:
    """Displacement field (N, 3) and scalar force change for one cloud."""
    x = np.asarray(x)
    n = x.shape[0]
    if n <= config.k:
        raise ValueError(
            f"cloud has {n} points but the graph needs k+1={config.k + 1}; "
            f"lower k or provide more points"
        )
    dtype = params["edge1.w"].data.dtype
    xt = ad.tensor(x, dtype=dtype)
    cen = config.centered_edge_features

    f1 = edge_conv(xt, config.k, params, "edge1", cen, stats)
    f2 = edge_conv(f1, config.k, params, "edge2", cen, stats)
    f3 = edge_conv(f2, config.k, params, "edge3", cen, stats)

    cond = np.broadcast_to(condition.as_vector().astype(dtype), (n, 6))
    g = ad.concat([f1, f2, f3, ad.tensor(np.ascontiguousarray(cond), dtype=dtype)], axis=1)

    h = g
    n_disp = len(config.displacement_hidden)
    for i in range(n_disp):
        h = ad.relu(_linear(h, params, f"disp{i}"))
    delta_x = _linear(h, params, f"disp{n_disp}")

    pooled = ad.reshape(ad.reduce_max(g, axis=0), (1, config.point_feature_dim))
    fh = pooled
    for i in range(len(config.force_widths) - 1):
        fh = ad.relu(_linear(fh, params, f"force{i}"))
    delta_f = ad.reshape(_linear(fh, params, f"force{len(config.force_widths) - 1}"), ())

    return delta_x, delta_f


def forward_arrays(
    x: np.ndarray,
    condition: Condition,
    params: dict[str, ad.Tensor],
    config: ModelConfig,
) -> tuple[np.ndarray, float]:
    """Inference-only forward on raw arrays (no gradient graph); exactly the
    same arithmetic as ``cgnn_forward``."""
    n = x.shape[0]
    if n <= config.k:
        raise ValueError(
            f"cloud has {n} points but the graph needs k+1={config.k + 1}; "
            f"lower k or provide more points"
        )
    dtype = params["edge1.w"].data.dtype
    feats = np.ascontiguousarray(x, dtype=dtype)
    k = config.k
    cen = config.centered_edge_features

    layer_out = []
    for name in ("edge1", "edge2", "edge3"):
        w = params[f"{name}.w"].data
        b = params[f"{name}.b"].data
        nbr = knn_graph(feats, k).neighbours()  # (n, k+1) includes the self-loop
        d = feats.shape[1]
        ef = np.empty((n, k + 1, 2 * d), dtype=dtype)
        ef[:, :, :d] = feats[:, None, :]
        ef[:, :, d:] = feats[nbr]
        if cen:
            ef[:, :, d:] -= feats[:, None, :]
        msg = np.maximum(ef.reshape(n * (k + 1), 2 * d) @ w + b, 0)
        feats = msg.reshape(n, k + 1, -1).mean(axis=1)
        layer_out.append(feats)

    cond = np.broadcast_to(condition.as_vector().astype(dtype), (n, 6))
    g = np.concatenate(layer_out + [cond], axis=1)

    h = g
    n_disp = len(config.displacement_hidden)
    for i in range(n_disp):
        h = np.maximum(h @ params[f"disp{i}.w"].data + params[f"disp{i}.b"].data, 0)
    delta_x = h @ params[f"disp{n_disp}.w"].data + params[f"disp{n_disp}.b"].data

    fh = g.max(axis=0)[None, :]
    n_force = len(config.force_widths)
    for i in range(n_force - 1):
        fh = np.maximum(fh @ params[f"force{i}.w"].data + params[f"force{i}.b"].data, 0)
    delta_f = fh @ params[f"force{n_force - 1}.w"].data + params[f"force{n_force - 1}.b"].data

    return delta_x.astype(np.float64), float(delta_f[0, 0])


def predict(
    x: np.ndarray,
    condition: Condition,
    params: dict[str, ad.Tensor],
    config: ModelConfig,
) -> tuple[np.ndarray, float]:
    """Deformed cloud ``x + delta_x`` (mm) and force change (N)."""
    delta_x, delta_f = forward_arrays(x, condition, params, config)
    return apply_displacement(x, delta_x), delta_f
