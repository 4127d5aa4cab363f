"""Six-stage encoder/decoder assembly with deep-supervision heads.

Encoder: a 3x3 conv block at full resolution, then 2x max-pool + 1x1
channel-change conv + hybrid block per stage. Decoder mirrors it with a 1x1
channel-change conv at the coarse resolution, 2x bilinear upsampling,
additive skips from the matching encoder stage, and the mirrored block kind.
Every decoder stage carries a 1-channel 1x1 prediction head; a separate
output head sits on the final full-resolution feature.

Checkpoints: magic "MUCM", version u32, header-length u32, a UTF-8 text
header (config line, then one line per tensor: kind name dtype shape offset),
then raw little-endian payloads in header order. Round trips are bitwise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .blocks import (ConvBlockParams, HybridBlockParams, conv_block_forward,
                     init_conv_block, init_hybrid_block, make_conv,
                     hybrid_block_forward)
from .errors import ConfigMismatch, CorruptCheckpoint, InvalidConfig, ShapeMismatch
from .nn import bilinear_upsample, conv2d, maxpool2d
from .rng import Xoshiro256
from .tensor import DTYPES, ParamStore, Tensor, no_grad, reshape, transpose

CHECKPOINT_MAGIC = b"MUCM"
CHECKPOINT_VERSION = 1

VALID_PATCH_COUNTS = (0, 1, 2, 4, 8)


@dataclass
class NetConfig:
    """patch_count 0 selects the token-path-only baseline (no SSM path)."""

    patch_count: int = 2
    channels: tuple[int, ...] = (8, 16, 24, 32, 48, 64)
    input_size: int = 256
    d_state: int = 16
    expand: int = 2
    conv_width: int = 4

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.patch_count not in VALID_PATCH_COUNTS:
            raise InvalidConfig(f"patch_count must be one of {VALID_PATCH_COUNTS}")
        if len(self.channels) < 2:
            raise InvalidConfig("need at least two stages")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise InvalidConfig(f"channels must strictly increase, got {self.channels}")
        down = 2 ** (len(self.channels) - 1)
        if self.input_size % down:
            raise InvalidConfig(
                f"input_size {self.input_size} not divisible by {down}")
        if self.patch_count >= 1:
            for c in self.channels[1:]:
                if c % self.patch_count:
                    raise InvalidConfig(
                        f"stage width {c} not divisible by patch_count {self.patch_count}")

    @property
    def n_stages(self) -> int:
        return len(self.channels)

    def to_json(self) -> str:
        return json.dumps({
            "patch_count": self.patch_count, "channels": list(self.channels),
            "input_size": self.input_size, "d_state": self.d_state,
            "expand": self.expand, "conv_width": self.conv_width,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetConfig":
        d = json.loads(text)
        return cls(patch_count=d["patch_count"], channels=tuple(d["channels"]),
                   input_size=d["input_size"], d_state=d["d_state"],
                   expand=d["expand"], conv_width=d["conv_width"])


@dataclass
class NetOutput:
    output_logits: Tensor                 # [B, 1, H, W]
    stage_logits: list[Tensor]            # deepest decoder stage first


@dataclass
class _Arch:
    enc_stem: ConvBlockParams
    enc_changes: list[tuple[Tensor, Tensor]]
    enc_blocks: list[HybridBlockParams]
    dec_changes: list[tuple[Tensor, Tensor]]
    dec_blocks: list          # HybridBlockParams for stages >= 2, ConvBlockParams for 1
    stage_heads: list[tuple[Tensor, Tensor]]
    out_head: tuple[Tensor, Tensor]
    norm_states: list = field(default_factory=list)


def build(config: NetConfig, seed: int = 0, dtype: str = "f32") -> ParamStore:
    """Construct all parameters with seeded Kaiming-uniform initialization.

    The parameter set (names, shapes, order) is a pure function of the
    config; the seed only changes values.
    """
    if dtype not in DTYPES:
        raise InvalidConfig(f"dtype must be f32 or f64, got {dtype!r}")
    rng = Xoshiro256(seed, "init")
    store = ParamStore()
    ch = config.channels
    stages = config.n_stages
    # residual-branch outputs start small so the stream scale grows gently
    n_residual = 2 * (stages - 1)
    out_scale = 1.0 / (2.0 * n_residual) ** 0.5

    stem = init_conv_block(store, "enc1", 3, ch[0], rng, dtype)

    enc_changes, enc_blocks = [], []
    for i in range(2, stages + 1):
        enc_changes.append(make_conv(store, f"enc{i}.change", ch[i - 2], ch[i - 1],
                                     1, rng, dtype, gain=1.0))
        enc_blocks.append(init_hybrid_block(store, f"enc{i}.block", ch[i - 1],
                                         config.patch_count, rng, dtype,
                                         config.d_state, config.expand,
                                         config.conv_width, out_scale=out_scale))

    dec_changes, dec_blocks, stage_heads = [], [], []
    for i in range(stages - 1, 0, -1):
        dec_changes.append(make_conv(store, f"dec{i}.change", ch[i], ch[i - 1],
                                     1, rng, dtype, gain=1.0))
        if i >= 2:
            dec_blocks.append(init_hybrid_block(store, f"dec{i}.block", ch[i - 1],
                                             config.patch_count, rng, dtype,
                                             config.d_state, config.expand,
                                             config.conv_width, out_scale=out_scale))
        else:
            dec_blocks.append(init_conv_block(store, f"dec{i}.block", ch[0], ch[0],
                                              rng, dtype))
        stage_heads.append(make_conv(store, f"dec{i}.head", ch[i - 1], 1,
                                     1, rng, dtype, gain=1.0))
    out_head = make_conv(store, "out.head", ch[0], 1, 1, rng, dtype, gain=1.0)

    arch = _Arch(stem, enc_changes, enc_blocks, dec_changes, dec_blocks,
                 stage_heads, out_head)
    arch.norm_states = _collect_norm_states(arch)

    store.config = config
    store.dtype = dtype
    store.arch = arch
    return store


def _collect_norm_states(arch: _Arch) -> list:
    states = [arch.enc_stem.bn]
    for blk in arch.enc_blocks + arch.dec_blocks:
        if isinstance(blk, HybridBlockParams):
            u = blk.token_path
            states.extend([u.ln_in, u.ln_mid, u.bn_tok, u.ln_out])
            states.extend(blk.patch_norms)
        else:
            states.append(blk.bn)
    return states


def set_mode(store: ParamStore, mode: str) -> None:
    for st in store.arch.norm_states:
        st.mode = mode


def forward(store: ParamStore, image: Tensor, training: bool = False) -> NetOutput:
    """Run the network; returns raw logits (no sigmoid).

    ``training`` switches batch norms to batch statistics with running
    updates; inference uses frozen statistics and skips tape recording.
    """
    config: NetConfig = store.config
    bsz, c_in, height, width = image.shape
    if c_in != 3 or height != config.input_size or width != config.input_size:
        raise ShapeMismatch(
            f"expected [B,3,{config.input_size},{config.input_size}], got {image.shape}")
    set_mode(store, "train" if training else "eval")
    if training:
        return _forward_impl(store, image)
    with no_grad():
        return _forward_impl(store, image)


def _forward_impl(store: ParamStore, image: Tensor) -> NetOutput:
    arch: _Arch = store.arch
    stages = store.config.n_stages

    feats = []
    h = conv_block_forward(image, arch.enc_stem)
    feats.append(h)
    for idx in range(stages - 1):
        h = maxpool2d(h)
        w, b = arch.enc_changes[idx]
        h = conv2d(h, w, b)
        h = _block_to_image(hybrid_block_forward(h, arch.enc_blocks[idx]), h.shape)
        feats.append(h)

    stage_logits = []
    d = feats[-1]
    for pos, i in enumerate(range(stages - 1, 0, -1)):
        w, b = arch.dec_changes[pos]
        d = conv2d(d, w, b)
        d = bilinear_upsample(d, 2)
        d = d + feats[i - 1]
        blk = arch.dec_blocks[pos]
        if isinstance(blk, HybridBlockParams):
            d = _block_to_image(hybrid_block_forward(d, blk), d.shape)
        else:
            d = conv_block_forward(d, blk)
        hw, hb = arch.stage_heads[pos]
        stage_logits.append(conv2d(d, hw, hb))
    ow, ob = arch.out_head
    return NetOutput(conv2d(d, ow, ob), stage_logits)


def _block_to_image(tokens: Tensor, image_shape) -> Tensor:
    bsz, channels, height, width = image_shape
    return reshape(transpose(tokens, 1, 2), (bsz, channels, height, width))


# ---------------------------------------------------------------------------
# Checkpoint persistence
# ---------------------------------------------------------------------------

def save_checkpoint(store: ParamStore, path) -> None:
    lines = [f"config {store.config.to_json()} dtype={store.dtype}"]
    blobs = []
    offset = 0
    entries = [("param", name, t.data) for name, t in store.items()]
    entries += [("buffer", name, arr) for name, arr in store.buffers.items()]
    for kind, name, arr in entries:
        le = arr.astype("<f4" if arr.dtype == np.float32 else "<f8", copy=False)
        raw = le.tobytes(order="C")
        dt = "f32" if arr.dtype == np.float32 else "f64"
        shape = "x".join(str(s) for s in arr.shape) or "1"
        lines.append(f"{kind} {name} {dt} {shape} {offset}")
        blobs.append(raw)
        offset += len(raw)
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path, into: ParamStore | None = None) -> ParamStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}")
    if len(blob) < 12 + header_len:
        raise CorruptCheckpoint(f"{path}: truncated header")
    header = blob[12:12 + header_len].decode("utf-8").splitlines()
    payload = blob[12 + header_len:]

    first = header[0].split(" ", 1)
    if first[0] != "config":
        raise CorruptCheckpoint(f"{path}: missing config line")
    config_json, _, dtype_part = first[1].rpartition(" dtype=")
    config = NetConfig.from_json(config_json)
    dtype = dtype_part.strip()

    if into is not None:
        if into.config != config or into.dtype != dtype:
            raise ConfigMismatch(
                f"checkpoint config {config} / {dtype} does not match target")
        store = into
    else:
        store = build(config, seed=0, dtype=dtype)

    for line in header[1:]:
        if not line.strip():
            continue
        kind, name, dt, shape_s, offset_s = line.split()
        shape = tuple(int(s) for s in shape_s.split("x"))
        np_dtype = np.dtype("<f4" if dt == "f32" else "<f8")
        count = int(np.prod(shape))
        start = int(offset_s)
        end = start + count * np_dtype.itemsize
        if end > len(payload):
            raise CorruptCheckpoint(f"{path}: truncated payload at {name}")
        arr = np.frombuffer(payload[start:end], dtype=np_dtype).reshape(shape)
        if kind == "param":
            if name not in store.params:
                raise CorruptCheckpoint(f"{path}: unknown parameter {name}")
            target = store.params[name]
            if target.shape != shape:
                raise CorruptCheckpoint(f"{path}: shape mismatch for {name}")
            target.data[...] = arr.astype(target.data.dtype)
        elif kind == "buffer":
            if name not in store.buffers:
                raise CorruptCheckpoint(f"{path}: unknown buffer {name}")
            store.buffers[name][...] = arr.astype(store.buffers[name].dtype)
        else:
            raise CorruptCheckpoint(f"{path}: unknown entry kind {kind!r}")
    return store
