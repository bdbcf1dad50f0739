"""Quantification network: a pointwise micro-network followed by a small U-Net.

The micro-network compresses each grid point's agglomerated neighbor features
with four 1x1 conv + batchnorm + ReLU blocks. The U-Net runs on the Cartesian
k-space grid and its head emits the real and imaginary parts of the tissue
map's centered k-space; a fixed inverse FFT turns that into the map itself
(``output_domain='image'`` skips the FFT and regresses the map directly).

Public functions take and return numpy arrays laid out ``(M, M, C)``; the
modules themselves use torch's ``(B, C, M, M)``.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import load_tensor, save_tensor

__all__ = [
    "T1_SCALE",
    "T2_SCALE",
    "TrainConfig",
    "QuantNet",
    "init_weights",
    "micro_forward",
    "unet_forward",
    "relative_l1",
    "backward",
    "AdamState",
    "adam_step",
    "lr_at",
    "train",
    "infer",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_curve",
    "set_deterministic",
    "TrainingDiverged",
]

T1_SCALE = 5000.0
T2_SCALE = 500.0
DEFAULT_D = {"t1": 64, "t2": 164}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch: int = 2
    lr0: float = 2e-4
    lr_decay_per_epoch: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    seed: int = 0
    loss_eps: float = 1e-3

    def __post_init__(self):
        if self.batch < 1 or self.lr0 <= 0 or self.epochs < 0 or self.loss_eps <= 0:
            raise ValueError("batch, lr0 and loss_eps must be positive, epochs >= 0")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ValueError("lr_decay_per_epoch must be in (0, 1]")


def set_deterministic(enabled: bool = True) -> None:
    """Single-threaded, deterministic torch kernels."""
    if enabled:
        torch.set_num_threads(1)
    torch.use_deterministic_algorithms(enabled)


def _cbr(cin, cout, k):
    # batchnorm momentum 0.1 in torch terms == running stats decay 0.9
    return [nn.Conv2d(cin, cout, k, padding=k // 2),
            nn.BatchNorm2d(cout, eps=1e-5, momentum=0.1),
            nn.ReLU()]


class MicroNet(nn.Module):
    def __init__(self, in_channels: int, D: int, depth: int = 4):
        super().__init__()
        layers = []
        for i in range(depth):
            layers += _cbr(in_channels if i == 0 else D, D, 1)
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class UNet(nn.Module):
    """Three pooling levels, two 3x3 conv blocks per level, skip concatenation."""

    def __init__(self, in_channels: int, channels=(64, 128, 256), out_channels: int = 2):
        super().__init__()
        a, b, c = channels
        self.enc1 = nn.Sequential(*_cbr(in_channels, a, 3), *_cbr(a, a, 3))
        self.enc2 = nn.Sequential(*_cbr(a, b, 3), *_cbr(b, b, 3))
        self.enc3 = nn.Sequential(*_cbr(b, c, 3), *_cbr(c, c, 3))
        self.bottleneck = nn.Sequential(*_cbr(c, c, 3), *_cbr(c, c, 3))
        self.pool = nn.MaxPool2d(2)
        self.up3 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), *_cbr(c, c, 3))
        self.dec3 = nn.Sequential(*_cbr(2 * c, c, 3), *_cbr(c, c, 3))
        self.up2 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), *_cbr(c, b, 3))
        self.dec2 = nn.Sequential(*_cbr(2 * b, b, 3), *_cbr(b, b, 3))
        self.up1 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), *_cbr(b, a, 3))
        self.dec1 = nn.Sequential(*_cbr(2 * a, a, 3), *_cbr(a, a, 3))
        self.head = nn.Conv2d(a, out_channels, 1)

    def forward(self, x):
        if x.shape[-1] % 8 or x.shape[-2] % 8:
            raise ValueError(f"grid size {tuple(x.shape[-2:])} must be divisible by 8")
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        z = self.bottleneck(self.pool(e3))
        z = self.dec3(torch.cat([self.up3(z), e3], 1))
        z = self.dec2(torch.cat([self.up2(z), e2], 1))
        z = self.dec1(torch.cat([self.up1(z), e1], 1))
        return self.head(z)


def kspace_to_map(z: torch.Tensor) -> torch.Tensor:
    """``(B, 2, M, M)`` centered k-space (re, im) -> ``(B, M, M)`` real map."""
    spec = torch.complex(z[:, 0], z[:, 1])
    spec = torch.fft.ifftshift(spec, dim=(-2, -1))
    return torch.fft.ifft2(spec, norm="ortho").real


class QuantNet(nn.Module):
    def __init__(self, in_channels: int, D: int | None = None, target: str = "t1",
                 channels=(64, 128, 256), output_domain: str = "kspace",
                 micro_depth: int = 4):
        super().__init__()
        if target not in DEFAULT_D:
            raise ValueError(f"unknown target {target!r}")
        if output_domain not in ("kspace", "image"):
            raise ValueError(f"unknown output domain {output_domain!r}")
        self.arch = dict(in_channels=in_channels, D=D or DEFAULT_D[target], target=target,
                         channels=list(channels), output_domain=output_domain,
                         micro_depth=micro_depth)
        self.in_channels = in_channels
        self.D = self.arch["D"]
        self.target = target
        self.output_domain = output_domain
        self.micro = MicroNet(in_channels, self.D, micro_depth)
        self.unet = UNet(self.D, channels, 2 if output_domain == "kspace" else 1)
        self._forward_done = False

    def forward_unet(self, f):
        z = self.unet(f)
        return kspace_to_map(z) if self.output_domain == "kspace" else z[:, 0]

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        out = self.forward_unet(self.micro(x))
        self._forward_done = True
        return out

    @property
    def scale(self) -> float:
        return T1_SCALE if self.target == "t1" else T2_SCALE


def init_weights(net: nn.Module, seed: int) -> nn.Module:
    """He-uniform (fan-in) conv weights, zero biases, unit/zero batchnorm affine."""
    g = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.weight[0].numel()
                bound = math.sqrt(6.0 / fan_in)
                m.weight.copy_(torch.rand(m.weight.shape, generator=g, dtype=m.weight.dtype)
                               * 2 * bound - bound)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.reset_running_stats()
                m.weight.fill_(1.0)
                m.bias.zero_()
    return net


def _to_torch(a: np.ndarray, net: nn.Module) -> torch.Tensor:
    dtype = next(net.parameters()).dtype
    t = torch.as_tensor(np.asarray(a), dtype=dtype)
    return t.permute(2, 0, 1)[None] if t.ndim == 3 else t.permute(0, 3, 1, 2)


def micro_forward(net: QuantNet, F_in: np.ndarray) -> np.ndarray:
    """``(M, M, C_in)`` -> ``(M, M, D)``; uses the net's current train/eval mode."""
    x = _to_torch(F_in, net)
    if x.shape[1] != net.in_channels:
        raise ValueError(f"expected {net.in_channels} input channels, got {x.shape[1]}")
    with torch.no_grad():
        return net.micro(x)[0].permute(1, 2, 0).numpy()


def unet_forward(net: QuantNet, F_prime: np.ndarray) -> np.ndarray:
    """``(M, M, D)`` -> ``(M, M, 1)`` normalized map."""
    x = _to_torch(F_prime, net)
    with torch.no_grad():
        return net.forward_unet(x)[0].numpy()[..., None]


def relative_l1(pred, gt, mask, eps: float = 1e-3):
    """Mean over the mask of ``|pred - gt| / (|gt| + eps)``; torch or numpy inputs."""
    if isinstance(pred, torch.Tensor):
        m = torch.as_tensor(mask, dtype=torch.bool)
        if not bool(m.any()):
            raise ValueError("empty mask")
        gt = torch.as_tensor(gt, dtype=pred.dtype)
        return (torch.abs(pred - gt) / (torch.abs(gt) + eps))[m].mean()
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    pred, gt = np.asarray(pred, float), np.asarray(gt, float)
    return float(np.mean(np.abs(pred - gt)[mask] / (np.abs(gt[mask]) + eps)))


def backward(net: QuantNet, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of ``loss`` for every named parameter."""
    if not getattr(net, "_forward_done", False) or loss.grad_fn is None:
        raise RuntimeError("backward called before a forward pass recorded a graph")
    net.zero_grad(set_to_none=True)
    loss.backward()
    net._forward_done = False
    return {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for n, p in net.named_parameters()}


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr0 * cfg.lr_decay_per_epoch ** epoch


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
              state: AdamState | None, cfg: TrainConfig, lr: float) -> AdamState:
    """Bias-corrected Adam update, in place on ``params``."""
    if state is None:
        state = AdamState(m={n: torch.zeros_like(p) for n, p in params.items()},
                          v={n: torch.zeros_like(p) for n, p in params.items()})
    state.t += 1
    c1 = 1 - cfg.beta1 ** state.t
    c2 = 1 - cfg.beta2 ** state.t
    with torch.no_grad():
        for n, p in params.items():
            g = grads[n]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter {tuple(p.shape)}")
            state.m[n].mul_(cfg.beta1).add_(g, alpha=1 - cfg.beta1)
            state.v[n].mul_(cfg.beta2).addcmul_(g, g, value=1 - cfg.beta2)
            p.sub_(lr * (state.m[n] / c1) / ((state.v[n] / c2).sqrt() + cfg.eps))
    return state


def _batch(dataset, idx, net):
    x = torch.stack([_to_torch(dataset[i][0], net)[0] for i in idx])
    dtype = x.dtype
    y = torch.stack([torch.as_tensor(dataset[i][1], dtype=dtype) for i in idx])
    m = torch.stack([torch.as_tensor(np.asarray(dataset[i][2], bool)) for i in idx])
    return x, y, m


def train(net: QuantNet, dataset, cfg: TrainConfig, log=None):
    """Fit ``net`` on ``(F_in, normalized_gt, mask)`` triples.

    Returns ``(net, curve)`` where ``curve`` is a list of
    ``(epoch, mean_batch_loss, lr)``. The shuffle order comes from ``cfg.seed``.
    """
    if not dataset:
        raise ValueError("empty training set")
    shapes = {np.shape(s[0]) for s in dataset}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent input shapes {shapes}")
    g = np.random.Generator(np.random.PCG64(cfg.seed))
    params = dict(net.named_parameters())
    state = None
    curve = []
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        net.train()
        order = g.permutation(len(dataset))
        losses = []
        for s in range(0, len(order), cfg.batch):
            x, y, m = _batch(dataset, order[s:s + cfg.batch], net)
            loss = relative_l1(net(x), y, m, cfg.loss_eps)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss.item()} at epoch {epoch}, batch {s}")
            grads = backward(net, loss)
            state = adam_step(params, grads, state, cfg, lr)
            losses.append(loss.item())
        curve.append((epoch, float(np.mean(losses)), lr))
        if log is not None:
            log(epoch, curve[-1][1], lr)
    net.eval()
    return net, curve


def predict(net: QuantNet, F_in: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """One target's map in ms, clamped to ``[0, scale]`` with background zeroed."""
    net.eval()
    with torch.no_grad():
        out = net(_to_torch(F_in, net))[0].numpy().astype(np.float64)
    return np.clip(out * net.scale, 0, net.scale) * np.asarray(mask, bool)


def infer(net_t1: QuantNet, net_t2: QuantNet, F_in: np.ndarray, mask: np.ndarray):
    """T1 and T2 maps in ms plus the wall time of both forward passes (seconds)."""
    t0 = time.perf_counter()
    t1 = predict(net_t1, F_in, mask)
    t2 = predict(net_t2, F_in, mask)
    return t1, t2, time.perf_counter() - t0


def save_checkpoint(directory, net: QuantNet, cfg: TrainConfig | None = None,
                    epoch: int | None = None, extra: dict | None = None) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for name, t in net.state_dict().items():
        a = t.detach().cpu().numpy()
        if a.dtype == np.int64:
            a = a.astype(np.int32)
        save_tensor(out / f"{name}.mrft", a)
        names.append(name)
    manifest = dict(arch=net.arch, tensors=names, epoch=epoch,
                    config=asdict(cfg) if cfg else None, dtype=str(next(net.parameters()).dtype))
    manifest.update(extra or {})
    (out / "checkpoint.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory) -> QuantNet:
    src = Path(directory)
    manifest = json.loads((src / "checkpoint.json").read_text())
    net = QuantNet(**manifest["arch"])
    if manifest.get("dtype") == "torch.float64":
        net = net.double()
    sd = net.state_dict()
    loaded = {}
    for name in manifest["tensors"]:
        a = load_tensor(src / f"{name}.mrft")
        loaded[name] = torch.as_tensor(a.astype(np.int64) if a.dtype == np.int32 else a,
                                       dtype=sd[name].dtype)
    net.load_state_dict(loaded)
    net.eval()
    return net


def write_loss_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "lr"])
        for epoch, loss, lr in curve:
            w.writerow([epoch, repr(loss), repr(lr)])
