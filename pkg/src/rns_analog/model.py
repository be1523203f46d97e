"""Layer descriptions, TensorFile (de)serialisation and the bundled toy task."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import tensorfile
from .errors import ShapeError

ACTIVATIONS = ("relu", "softmax", "identity")


@dataclass(frozen=True, eq=False)
class Layer:
    """One GEMM layer.

    Dense weights are ``(out, in)``.  Conv weights are
    ``(out_ch, in_ch, kh, kw)`` and run on ``(batch, C, H, W)`` inputs
    lowered with im2col.
    """

    kind: str
    weight: np.ndarray
    bias: np.ndarray | None = None
    activation: str = "identity"
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind not in ("dense", "conv"):
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != (2 if self.kind == "dense" else 4):
            raise ShapeError(f"{self.kind} weight has rank {self.weight.ndim}")
        if not np.all(np.isfinite(self.weight)):
            raise ShapeError("weights must be finite")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("bias length must match output features")

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def gemm_weight(self) -> np.ndarray:
        return self.weight.reshape(self.weight.shape[0], -1)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ShapeError("model has no layers")
        prev = None
        for i, layer in enumerate(self.layers):
            if layer.kind == "dense" and prev is not None and prev.kind == "dense":
                if layer.weight.shape[1] != prev.out_features:
                    raise ShapeError(
                        f"layer {i} expects {layer.weight.shape[1]} inputs, "
                        f"layer {i - 1} produces {prev.out_features}"
                    )
            if layer.kind == "conv" and prev is not None and prev.kind == "conv":
                if layer.weight.shape[1] != prev.out_features:
                    raise ShapeError(f"layer {i} channel mismatch")
            if layer.kind == "conv" and prev is not None and prev.kind == "dense":
                raise ShapeError("conv after dense is not supported")
            prev = layer

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            tag = f"layers.{i}.{layer.kind}_s{layer.stride}_p{layer.padding}.{layer.activation}"
            out[f"{tag}.weight"] = layer.weight
            if layer.bias is not None:
                out[f"{tag}.bias"] = layer.bias
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "ModelSpec":
        pat = re.compile(r"layers\.(\d+)\.(dense|conv)_s(\d+)_p(\d+)\.(\w+)\.(weight|bias)$")
        found: dict[int, dict] = {}
        for name, arr in tensors.items():
            m = pat.match(name)
            if not m:
                continue
            idx, kind, stride, pad, act, part = m.groups()
            entry = found.setdefault(int(idx), {"kind": kind, "stride": int(stride),
                                                "padding": int(pad), "activation": act})
            entry[part] = np.asarray(arr, dtype=np.float64)
        if sorted(found) != list(range(len(found))):
            raise ShapeError("layer indices in tensor file are not contiguous")
        return cls(tuple(Layer(**found[i]) for i in range(len(found))))


def save_model(path, model: ModelSpec, extra: dict[str, np.ndarray] | None = None) -> None:
    tensors = model.to_tensors()
    tensors.update(extra or {})
    tensorfile.save(path, tensors)


def load_model(path) -> tuple[ModelSpec, dict[str, np.ndarray]]:
    """Model plus every non-layer tensor stored alongside it."""
    tensors = tensorfile.load(path)
    model = ModelSpec.from_tensors(tensors)
    rest = {k: v for k, v in tensors.items() if not k.startswith("layers.")}
    return model, rest


TOY_MODEL_FILE = "toy_mlp.rnst"


def load_toy() -> tuple[ModelSpec, np.ndarray, np.ndarray]:
    """Bundled 2-layer MLP with its held-out 8x8 digit images and labels."""
    ref = resources.files("rns_analog") / "data" / TOY_MODEL_FILE
    with resources.as_file(ref) as path:
        model, rest = load_model(path)
    return model, rest["test_x"].astype(np.float64), rest["test_y"].astype(np.int64)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, padding: int = 0) -> tuple[np.ndarray, int, int]:
    """Patches of ``(B, C, H, W)`` as rows ``(B * OH * OW, C * kh * kw)``."""
    if x.ndim != 4:
        raise ShapeError("conv input must be (batch, channels, height, width)")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    B, C, H, W = x.shape
    oh = (H - kh) // stride + 1
    ow = (W - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError("kernel larger than padded input")
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]  # (B, C, oh, ow, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * oh * ow, C * kh * kw)
    return cols, oh, ow
