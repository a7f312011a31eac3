"""Dual-decoder HOI detection model.

A small convolutional patch embedder produces a token grid, a pre-norm
transformer encoder turns it into a shared visual memory, and two
decoders with disjoint parameters read that memory in parallel: one for
instance-level outputs (human box, object box, object class) and one for
relation-level outputs (relation box, multi-label relation class).  The
i-th query of both decoders describes the same HOI candidate, so there is
no matching step between the two output streams anywhere.

With ``parallel_decoders=False`` a single decoder feeds both head
families, which serves as the shared-predictor baseline for ablations.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DataError, UsageError
from .fileio import atomic_write_bytes, atomic_write_json
from .nn import (Dropout, FeedForward, LayerNorm, Linear, Module,
                 MultiHeadAttention, Parameter, xavier_uniform)
from .rng import derive_rng


@dataclass
class ModelConfig:
    memory_dim: int = 256
    heads: int = 8
    encoder_layers: int = 6
    instance_decoder_layers: int = 3
    relation_decoder_layers: int = 3
    num_queries: int = 100
    num_object_classes: int = 4
    num_relation_classes: int = 5
    patch_size: int = 8
    backbone_channels: int = 64
    image_size: int = 64
    ffn_dim: int = 0  # 0 means 4 * memory_dim
    dropout: float = 0.1
    parallel_decoders: bool = True

    def validate(self) -> None:
        problems = []
        if self.memory_dim < 1 or self.memory_dim % self.heads != 0:
            problems.append(f"memory_dim {self.memory_dim} must be a positive "
                            f"multiple of heads {self.heads}")
        for name in ("encoder_layers", "instance_decoder_layers", "relation_decoder_layers"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.num_queries < 1:
            problems.append("num_queries must be >= 1")
        if self.num_object_classes < 1 or self.num_relation_classes < 1:
            problems.append("class counts must be >= 1")
        if self.patch_size < 1 or self.image_size % self.patch_size != 0:
            problems.append(f"image_size {self.image_size} not divisible by "
                            f"patch_size {self.patch_size}")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must be in [0, 1)")
        if problems:
            raise ConfigError("invalid model config:\n  " + "\n  ".join(problems))

    @property
    def grid(self) -> tuple[int, int]:
        side = self.image_size // self.patch_size
        return (side, side)

    @property
    def n_tokens(self) -> int:
        h, w = self.grid
        return h * w

    @property
    def hidden_dim(self) -> int:
        return self.ffn_dim if self.ffn_dim > 0 else 4 * self.memory_dim


@dataclass
class VisualMemory:
    tokens: Tensor          # [..., N, memory_dim]
    pos_embed: Tensor       # [N, memory_dim]
    grid: tuple[int, int]


@dataclass
class InstanceOutputs:
    human_boxes: Tensor     # [..., Q, 4] cxcywh in (0, 1)
    object_boxes: Tensor    # [..., Q, 4]
    object_logits: Tensor   # [..., Q, num_object_classes + 1]; last slot = no-object


@dataclass
class RelationOutputs:
    relation_boxes: Tensor  # [..., Q, 4]
    relation_logits: Tensor  # [..., Q, num_relation_classes], multi-label


@dataclass
class AttentionRecord:
    branch: str                      # "instance" | "relation" | "shared"
    layer_weights: list[np.ndarray]  # per decoder layer, [..., heads, Q, N]


@dataclass
class ModelOutputs:
    instance: InstanceOutputs
    relation: RelationOutputs
    aux: list[tuple[InstanceOutputs, RelationOutputs]]
    attention: list[AttentionRecord]
    grid: tuple[int, int]


def sinusoidal_grid(grid: tuple[int, int], dim: int) -> np.ndarray:
    """Sine/cosine features of normalized grid coordinates, [H'*W', dim].

    Used to initialize the learned token position embedding: boxes are
    regressed from attention over tokens, and a spatially structured
    starting point generalizes from far fewer scenes than a random one.
    """
    gh, gw = grid
    quarter = max(dim // 4, 1)
    freqs = 1.0 / (100.0 ** (np.arange(quarter) / quarter))
    ys, xs = np.mgrid[0:gh, 0:gw]
    ys = (ys.reshape(-1, 1) + 0.5) / gh
    xs = (xs.reshape(-1, 1) + 0.5) / gw
    parts = np.concatenate([
        np.sin(2 * np.pi * xs * freqs), np.cos(2 * np.pi * xs * freqs),
        np.sin(2 * np.pi * ys * freqs), np.cos(2 * np.pi * ys * freqs),
    ], axis=1)
    if parts.shape[1] < dim:
        parts = np.concatenate([parts, np.zeros((parts.shape[0], dim - parts.shape[1]))],
                               axis=1)
    return parts[:, :dim]


class PatchEmbedder(Module):
    """Two conv layers with stride = kernel = patch size, expressed as
    a patchify reshape followed by per-patch linear maps."""

    def __init__(self, patch_size: int, channels: int, rng: np.random.Generator):
        super().__init__()
        self.patch_size = patch_size
        self.proj1 = Linear(3 * patch_size * patch_size, channels, rng)
        self.proj2 = Linear(channels, channels, rng)

    def forward(self, images: Tensor) -> Tensor:
        b, c, h, w = images.shape
        p = self.patch_size
        if c != 3:
            raise ConfigError(f"expected 3-channel images, got {c}")
        if h % p != 0 or w % p != 0:
            raise ConfigError(f"image {h}x{w} not divisible by patch size {p}")
        hp, wp = h // p, w // p
        patches = images.reshape(b, 3, hp, p, wp, p) \
                        .transpose(0, 2, 4, 1, 3, 5) \
                        .reshape(b, hp * wp, 3 * p * p)
        return self.proj2(ag.relu(self.proj1(patches)))


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        d = cfg.memory_dim
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, cfg.heads, rng)
        self.drop1 = Dropout(cfg.dropout)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, cfg.hidden_dim, cfg.dropout, rng)
        self.drop2 = Dropout(cfg.dropout)

    def forward(self, x: Tensor, pos: Tensor, rng) -> Tensor:
        h = self.norm1(x)
        q = h + pos  # position goes into queries/keys, not values
        attn_out, _ = self.attn(q, q, h)
        x = x + self.drop1(attn_out, rng)
        h = self.norm2(x)
        return x + self.drop2(self.ffn(h, rng), rng)


class TransformerEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.encoder_layers)]
        self.final_norm = LayerNorm(cfg.memory_dim)

    def forward(self, tokens: Tensor, pos: Tensor, rng=None) -> Tensor:
        x = tokens
        for layer in self.layers:
            x = layer(x, pos, rng)
        return self.final_norm(x)


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        d = cfg.memory_dim
        self.norm1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, cfg.heads, rng)
        self.drop1 = Dropout(cfg.dropout)
        self.norm2 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, cfg.heads, rng)
        self.drop2 = Dropout(cfg.dropout)
        self.norm3 = LayerNorm(d)
        self.ffn = FeedForward(d, cfg.hidden_dim, cfg.dropout, rng)
        self.drop3 = Dropout(cfg.dropout)

    def forward(self, x: Tensor, query_pos: Tensor, memory: Tensor,
                memory_pos: Tensor, rng) -> tuple[Tensor, Tensor]:
        h = self.norm1(x)
        q = h + query_pos
        sa, _ = self.self_attn(q, q, h)
        x = x + self.drop1(sa, rng)
        h = self.norm2(x)
        ca, cross_weights = self.cross_attn(h + query_pos, memory + memory_pos, memory)
        x = x + self.drop2(ca, rng)
        h = self.norm3(x)
        x = x + self.drop3(self.ffn(h, rng), rng)
        return x, cross_weights


class TransformerDecoder(Module):
    """Decoder with its own learned query content and query positions."""

    def __init__(self, cfg: ModelConfig, num_layers: int, rng: np.random.Generator):
        super().__init__()
        d = cfg.memory_dim
        self.query_embed = Parameter(xavier_uniform(rng, (cfg.num_queries, d)))
        self.query_pos = Parameter(xavier_uniform(rng, (cfg.num_queries, d)))
        self.layers = [DecoderLayer(cfg, rng) for _ in range(num_layers)]
        self.final_norm = LayerNorm(d)

    def forward(self, memory: Tensor, memory_pos: Tensor, rng=None
                ) -> tuple[list[Tensor], list[np.ndarray]]:
        """Returns per-layer normalized states and per-layer cross-attention
        weights ([..., heads, Q, N] numpy arrays)."""
        q = self.query_embed.shape[0]
        d = self.query_embed.shape[1]
        if memory.ndim == 3:
            base = Tensor(np.zeros((memory.shape[0], q, d)))
        else:
            base = Tensor(np.zeros((q, d)))
        x = base + self.query_embed
        states, weights = [], []
        for layer in self.layers:
            x, w = layer(x, self.query_pos, memory, memory_pos, rng)
            states.append(self.final_norm(x))
            weights.append(w.data)
        return states, weights


class BoxHead(Module):
    """Three linear layers with ReLU, sigmoid output -> boxes in (0, 1)."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.lin1 = Linear(dim, dim, rng)
        self.lin2 = Linear(dim, dim, rng)
        self.lin3 = Linear(dim, 4, rng)

    def forward(self, x: Tensor) -> Tensor:
        return ag.sigmoid(self.lin3(ag.relu(self.lin2(ag.relu(self.lin1(x))))))


class HOIModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = derive_rng(seed, "model-init")
        d = cfg.memory_dim
        self.backbone = PatchEmbedder(cfg.patch_size, cfg.backbone_channels, rng)
        self.token_proj = Linear(cfg.backbone_channels, d, rng)
        self.token_pos = Parameter(sinusoidal_grid(cfg.grid, d))
        self.encoder = TransformerEncoder(cfg, rng)
        self.instance_decoder = TransformerDecoder(cfg, cfg.instance_decoder_layers, rng)
        if cfg.parallel_decoders:
            self.relation_decoder = TransformerDecoder(cfg, cfg.relation_decoder_layers, rng)
        else:
            self.relation_decoder = None
        self.human_box_head = BoxHead(d, rng)
        self.object_box_head = BoxHead(d, rng)
        self.object_class_head = Linear(d, cfg.num_object_classes + 1, rng)
        self.relation_box_head = BoxHead(d, rng)
        self.relation_class_head = Linear(d, cfg.num_relation_classes, rng)

    # ---- single-image contract methods --------------------------------------

    def extract_features(self, image: Tensor | np.ndarray) -> Tensor:
        """[3, H, W] image -> [backbone_channels, H', W'] feature map."""
        image = image if isinstance(image, Tensor) else Tensor(image)
        if image.ndim != 3:
            raise UsageError(f"extract_features expects [3,H,W], got {image.shape}")
        _, h, w = image.shape
        p = self.cfg.patch_size
        feats = self.backbone(image.reshape(1, *image.shape))  # [1, N, C]
        return feats.reshape(h // p, w // p, self.cfg.backbone_channels).transpose(2, 0, 1)

    def tokenize(self, features: Tensor) -> Tensor:
        """[C, H', W'] features -> [H'*W', memory_dim] tokens, row-major."""
        c, hp, wp = features.shape
        flat = features.transpose(1, 2, 0).reshape(hp * wp, c)
        return self.token_proj(flat)

    def encode(self, tokens: Tensor, rng=None) -> VisualMemory:
        encoded = self.encoder(tokens, self.token_pos, rng)
        return VisualMemory(tokens=encoded, pos_embed=self.token_pos, grid=self.cfg.grid)

    def decode_instance(self, memory: VisualMemory, rng=None
                        ) -> tuple[list[Tensor], AttentionRecord]:
        states, weights = self.instance_decoder(memory.tokens, memory.pos_embed, rng)
        branch = "instance" if self.cfg.parallel_decoders else "shared"
        return states, AttentionRecord(branch=branch, layer_weights=weights)

    def decode_relation(self, memory: VisualMemory, rng=None
                        ) -> tuple[list[Tensor], AttentionRecord]:
        if self.relation_decoder is None:
            raise UsageError("no relation decoder in shared-predictor mode")
        states, weights = self.relation_decoder(memory.tokens, memory.pos_embed, rng)
        return states, AttentionRecord(branch="relation", layer_weights=weights)

    def instance_heads(self, states: Tensor) -> InstanceOutputs:
        return InstanceOutputs(
            human_boxes=self.human_box_head(states),
            object_boxes=self.object_box_head(states),
            object_logits=self.object_class_head(states),
        )

    def relation_heads(self, states: Tensor) -> RelationOutputs:
        return RelationOutputs(
            relation_boxes=self.relation_box_head(states),
            relation_logits=self.relation_class_head(states),
        )

    # ---- full forward ---------------------------------------------------------

    def forward(self, images: Tensor | np.ndarray, rng=None) -> ModelOutputs:
        images = images if isinstance(images, Tensor) else Tensor(images)
        if images.ndim == 3:
            images = images.reshape(1, *images.shape)
        if images.ndim != 4:
            raise UsageError(f"forward expects [B,3,H,W] images, got {images.shape}")
        if self.training and self.cfg.dropout > 0 and rng is None:
            raise UsageError("training-mode forward needs an rng for dropout")
        feats = self.backbone(images)
        if feats.shape[1] != self.cfg.n_tokens:
            raise ConfigError(f"image produced {feats.shape[1]} tokens but model "
                              f"was configured for {self.cfg.n_tokens}")
        tokens = self.token_proj(feats)
        memory = self.encode(tokens, rng)
        inst_states, inst_record = self.decode_instance(memory, rng)
        if self.cfg.parallel_decoders:
            rel_states, rel_record = self.decode_relation(memory, rng)
            records = [inst_record, rel_record]
        else:
            rel_states = inst_states
            records = [inst_record]
        instance = self.instance_heads(inst_states[-1])
        relation = self.relation_heads(rel_states[-1])
        aux: list[tuple[InstanceOutputs, RelationOutputs]] = []
        if self.training:
            for s_i, s_r in zip(inst_states[:-1], rel_states[:-1]):
                aux.append((self.instance_heads(s_i), self.relation_heads(s_r)))
        return ModelOutputs(instance=instance, relation=relation, aux=aux,
                            attention=records, grid=memory.grid)


# ---- attention export ------------------------------------------------------------


def export_attention(records: list[AttentionRecord], grid: tuple[int, int],
                     path: str | Path, image_id=None, image_index: int = 0) -> None:
    """Dump per-layer/per-head/per-query cross-attention grids as JSON."""
    if not records:
        raise UsageError("no attention records to export")
    gh, gw = grid
    entries = []
    for record in records:
        for layer_idx, weights in enumerate(record.layer_weights):
            w = weights[image_index] if weights.ndim == 4 else weights
            heads, queries, n = w.shape
            if n != gh * gw:
                raise UsageError(f"attention width {n} does not match grid {grid}")
            for head in range(heads):
                for query in range(queries):
                    entries.append({
                        "branch": record.branch,
                        "layer": layer_idx,
                        "head": head,
                        "query": query,
                        "weights": w[head, query].reshape(gh, gw).tolist(),
                    })
    atomic_write_json(path, {
        "format_version": 1,
        "grid": [gh, gw],
        "image_id": image_id,
        "records": entries,
    })


def load_attention(path: str | Path) -> dict:
    import json as _json
    with open(path, "r", encoding="utf-8") as fh:
        return _json.load(fh)


# ---- checkpoints -------------------------------------------------------------------

CHECKPOINT_MAGIC = b"HOICKPT1"


@dataclass
class Checkpoint:
    model_config: dict
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def save_checkpoint(path: str | Path, model: HOIModel, meta: dict | None = None,
                    arrays: dict[str, np.ndarray] | None = None) -> None:
    """Versioned container: magic, JSON header, then raw little-endian f64."""
    named = model.named_parameters()
    arrays = arrays or {}
    header_params, payload, offset = [], [], 0
    for name, p in named:
        raw = p.data.astype("<f8").tobytes()
        header_params.append({"name": name, "shape": list(p.shape), "offset": offset})
        payload.append(raw)
        offset += len(raw)
    header_arrays = []
    for name, arr in arrays.items():
        raw = np.asarray(arr, dtype=np.float64).astype("<f8").tobytes()
        header_arrays.append({"name": name, "shape": list(np.asarray(arr).shape),
                              "offset": offset})
        payload.append(raw)
        offset += len(raw)
    header = {
        "format_version": 1,
        "model_config": dataclasses.asdict(model.cfg),
        "params": header_params,
        "arrays": header_arrays,
        "meta": meta or {},
    }
    header_bytes = json.dumps(header).encode("utf-8")
    blob = CHECKPOINT_MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes \
        + b"".join(payload)
    atomic_write_bytes(path, blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}")
    if blob[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    if header.get("format_version") != 1:
        raise DataError(f"unsupported checkpoint version {header.get('format_version')}")
    data = blob[16 + header_len:]

    def pull(entry) -> np.ndarray:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=start)
        return arr.reshape(shape).astype(np.float64)

    params = {e["name"]: pull(e) for e in header["params"]}
    arrays = {e["name"]: pull(e) for e in header["arrays"]}
    return Checkpoint(model_config=header["model_config"], params=params,
                      meta=header.get("meta", {}), arrays=arrays)


def model_from_checkpoint(ckpt: Checkpoint) -> HOIModel:
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = set(ckpt.model_config) - known
    if unknown:
        raise DataError(f"checkpoint model config has unknown fields: {sorted(unknown)}")
    cfg = ModelConfig(**ckpt.model_config)
    model = HOIModel(cfg, seed=0)
    model.load_state_dict(ckpt.params)
    return model
