"""LUS-Net: plain-conv encoder, SDMCM skip connections, CondConv BRM decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .nn import BatchNorm2d, CondConv2d, Conv2d, Module
from .tensor import Tensor

LAPLACIAN_KERNEL = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])

DERIVATIVES = ("laplacian", "identity", "none")


@dataclass
class NetConfig:
    """Architecture hyperparameters.

    ``derivative`` selects the second path of each SDMCM: ``"laplacian"``
    (the full module), ``"identity"`` (same conv stack, no fixed Laplacian)
    or ``"none"`` (path removed, the branch sum is the output).
    ``dense`` feeds every deeper BRM into each shallower one; when false only
    the adjacent deeper BRM is fed.
    """

    stage_widths: Tuple[int, ...] = (16, 32, 64, 128)
    compression_ratio: float = 0.25
    branch_dilations: Tuple[Tuple[int, ...], ...] = ((1,), (1, 2), (1, 2, 3), (1, 2, 3, 3))
    expert_count: int = 4
    input_channels: int = 3
    decoder_width: int = 8
    head_kernel: int = 1
    head_bias: float = -2.0
    dense: bool = True
    derivative: str = "laplacian"

    def __post_init__(self) -> None:
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        self.branch_dilations = tuple(tuple(int(d) for d in b) for b in self.branch_dilations)
        self.validate()

    def validate(self) -> None:
        if not self.stage_widths:
            raise ValueError("stage_widths: need at least one stage")
        if self.compression_ratio not in (0.5, 0.25, 0.125):
            raise ValueError(f"compression_ratio: must be one of 1/2, 1/4, 1/8, got {self.compression_ratio}")
        if len(self.branch_dilations) != 4:
            raise ValueError("branch_dilations: exactly four branches are required")
        for branch in self.branch_dilations:
            if not branch or any(d not in (1, 2, 3) for d in branch):
                raise ValueError(f"branch_dilations: rates must be drawn from {{1,2,3}}, got {branch}")
        if self.expert_count < 1:
            raise ValueError("expert_count: must be >= 1")
        if self.decoder_width < 1 or self.input_channels < 1:
            raise ValueError("decoder_width/input_channels: must be >= 1")
        if self.head_kernel % 2 != 1:
            raise ValueError("head_kernel: must be odd")
        if self.derivative not in DERIVATIVES:
            raise ValueError(f"derivative: must be one of {DERIVATIVES}, got {self.derivative!r}")
        for w in self.stage_widths:
            compressed_channels(w, self.compression_ratio)

    @property
    def num_stages(self) -> int:
        return len(self.stage_widths)

    def skip_channels(self) -> List[int]:
        return [compressed_channels(w, self.compression_ratio) for w in self.stage_widths]

    def brm_input_channels(self) -> List[int]:
        """Channel count entering each BRM, shallowest first."""
        skips = self.skip_channels()
        n = self.num_stages
        out = []
        for k in range(n):
            deeper = (n - 1 - k) if self.dense else min(1, n - 1 - k)
            out.append(skips[k] + deeper * self.decoder_width)
        return out


def compressed_channels(channels: int, ratio: float) -> int:
    c = channels * ratio
    if c < 1 or abs(c - round(c)) > 1e-9:
        raise ValueError(f"{channels} channels x ratio {ratio} is not a positive integer")
    return int(round(c))


def laplacian_layer(x: Tensor) -> Tensor:
    """Fixed 4-neighbour Laplacian applied to every channel, zero padding 1."""
    if x.shape[2] < 3 or x.shape[3] < 3:
        raise ValueError(f"laplacian_layer needs H,W >= 3, got {x.shape[2:]}")
    c = x.shape[1]
    kernel = Tensor(np.broadcast_to(LAPLACIAN_KERNEL, (c, 1, 3, 3)).copy())
    return F.conv2d(x, kernel, None, stride=1, padding=1, groups=c)


def receptive_field(dilations: Sequence[int], kernel: int = 3) -> int:
    return 1 + (kernel - 1) * sum(dilations)


class ConvBNReLU(Module):
    def __init__(self, rng, cin, cout, kernel=3, stride=1, relu=True) -> None:
        super().__init__()
        self.conv = Conv2d(rng, cin, cout, kernel, stride=stride, bias=False)
        self.bn = BatchNorm2d(cout)
        self.use_relu = relu

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        return F.relu(y) if self.use_relu else y


class MSCBranch(Module):
    """Stack of 3x3 dilated Conv-ReLU layers; spatial size preserved."""

    def __init__(self, rng, channels: int, dilations: Sequence[int]) -> None:
        super().__init__()
        self.dilations = tuple(dilations)
        self.convs = [Conv2d(rng, channels, channels, 3, dilation=d) for d in self.dilations]

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = F.relu(conv(x))
        return x


def msc_branch(x: Tensor, branch: MSCBranch) -> Tensor:
    return branch(x)


class SDMCM(Module):
    """Compression, four dilated branches plus shortcut, then the derivative path.

    With ``z = C(x) + sum_k B_k(C(x))`` the derivative path computes
    ``conv1x1(z + BN(conv3x3(ReLU(BN(laplacian(z))))))``: its shortcut skips
    the Laplacian/conv stack and rejoins before the final 1x1 conv.
    """

    def __init__(self, rng, channels: int, ratio: float, dilations, derivative: str = "laplacian") -> None:
        super().__init__()
        c = compressed_channels(channels, ratio)
        self.out_channels = c
        self.derivative = derivative
        self.compress = Conv2d(rng, channels, c, 1)
        self.branches = [MSCBranch(rng, c, d) for d in dilations]
        if derivative != "none":
            self.bn_lap = BatchNorm2d(c)
            self.conv = Conv2d(rng, c, c, 3, bias=False)
            self.bn_conv = BatchNorm2d(c)
            self.fuse = Conv2d(rng, c, c, 1)

    def context(self, x: Tensor) -> Tensor:
        cx = self.compress(x)
        z = cx
        for branch in self.branches:
            z = F.add(z, branch(cx))
        return z

    def derivative_path(self, z: Tensor) -> Tensor:
        if self.derivative == "none":
            return z
        d = laplacian_layer(z) if self.derivative == "laplacian" else z
        a = F.relu(self.bn_lap(d))
        b = self.bn_conv(self.conv(a))
        return self.fuse(F.add(z, b))

    def forward(self, x: Tensor) -> Tensor:
        return self.derivative_path(self.context(x))


class ResidualBlock(Module):
    def __init__(self, rng, channels: int) -> None:
        super().__init__()
        self.conv1 = Conv2d(rng, channels, channels, 3, bias=False)
        self.bn1 = BatchNorm2d(channels)
        self.conv2 = Conv2d(rng, channels, channels, 3, bias=False)
        self.bn2 = BatchNorm2d(channels)

    def forward(self, x: Tensor) -> Tensor:
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return F.relu(F.add(x, y))


class BRM(Module):
    """Residual block followed by two CondConv-BN-ReLU layers.

    When ``cin != width`` a 1x1 Conv-BN-ReLU projection first brings the
    (concatenated) input to ``width`` channels.
    """

    def __init__(self, rng, cin: int, width: int, experts: int) -> None:
        super().__init__()
        self.proj = ConvBNReLU(rng, cin, width, kernel=1) if cin != width else None
        self.residual = ResidualBlock(rng, width)
        self.cond1 = CondConv2d(rng, width, width, 3, experts)
        self.bn1 = BatchNorm2d(width)
        self.cond2 = CondConv2d(rng, width, width, 3, experts)
        self.bn2 = BatchNorm2d(width)

    def forward(self, x: Tensor) -> Tensor:
        if self.proj is not None:
            x = self.proj(x)
        y = self.residual(x)
        y = F.relu(self.bn1(self.cond1(y)))
        return F.relu(self.bn2(self.cond2(y)))


class Upsampler(Module):
    """3x3 depthwise + 1x1 pointwise conv, then bilinear upsampling."""

    def __init__(self, rng, channels: int, scale: int) -> None:
        super().__init__()
        self.scale = scale
        self.depthwise = Conv2d(rng, channels, channels, 3, groups=channels, bias=False)
        self.pointwise = Conv2d(rng, channels, channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        return F.upsample_bilinear(self.pointwise(self.depthwise(x)), self.scale)


class Encoder(Module):
    """Stride-1 stem, then one stage per width.

    The first stage is a single conv at full resolution (the stem already
    supplies the other); each later stage is a stride-2 Conv-BN-ReLU followed
    by a stride-1 one, halving H and W.
    """

    def __init__(self, rng, cin: int, widths: Sequence[int]) -> None:
        super().__init__()
        self.stem = ConvBNReLU(rng, cin, widths[0], 3, stride=1)
        self.stem_stride = 1
        stages = [[ConvBNReLU(rng, widths[0], widths[0], 3)]]
        for prev, w in zip(widths[:-1], widths[1:]):
            stages.append([ConvBNReLU(rng, prev, w, 3, stride=2), ConvBNReLU(rng, w, w, 3)])
        self.stages = [_Seq(s) for s in stages]

    def forward(self, img: Tensor) -> List[Tensor]:
        n_down = len(self.stages) - 1
        h, w = img.shape[2:]
        if h % (2 ** n_down) or w % (2 ** n_down):
            raise ValueError(f"input size {h}x{w} must be divisible by {2 ** n_down}")
        x = self.stem(img)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class _Seq(Module):
    def __init__(self, layers) -> None:
        super().__init__()
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class Decoder(Module):
    """Dense bottom-up decoder: each BRM sees its skip feature and all deeper BRM outputs."""

    def __init__(self, rng, cfg: NetConfig) -> None:
        super().__init__()
        self.cfg = cfg
        n = cfg.num_stages
        w = cfg.decoder_width
        ins = cfg.brm_input_channels()
        self.brms = [BRM(rng, ins[k], w, cfg.expert_count) for k in range(n)]
        # upsamplers[k] maps deeper level j (j > k) into level k
        self.pairs = [(j, k) for k in range(n) for j in range(k + 1, n) if cfg.dense or j == k + 1]
        self.upsamplers = [Upsampler(rng, w, 2 ** (j - k)) for j, k in self.pairs]
        self.head = Conv2d(rng, w, 1, cfg.head_kernel)
        self.head.bias.data[:] = cfg.head_bias

    def forward(self, skips: Sequence[Tensor]) -> Tensor:
        n = len(skips)
        if n != len(self.brms):
            raise ValueError(f"decoder expects {len(self.brms)} skip features, got {n}")
        outs: List[Optional[Tensor]] = [None] * n
        for k in reversed(range(n)):
            parts = [skips[k]]
            for (j, kk), up in zip(self.pairs, self.upsamplers):
                if kk != k:
                    continue
                u = up(outs[j])
                if u.shape[2:] != skips[k].shape[2:]:
                    raise ValueError(f"upsampled level {j} has size {u.shape[2:]}, level {k} has {skips[k].shape[2:]}")
                parts.append(u)
            x = parts[0] if len(parts) == 1 else F.concat_channels(parts)
            outs[k] = self.brms[k](x)
        return F.sigmoid(self.head(outs[0]))


class LUSNet(Module):
    def __init__(self, cfg: Optional[NetConfig] = None, seed: int = 0) -> None:
        super().__init__()
        cfg = cfg or NetConfig()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(rng, cfg.input_channels, cfg.stage_widths)
        self.sdmcms = [
            SDMCM(rng, w, cfg.compression_ratio, cfg.branch_dilations, cfg.derivative)
            for w in cfg.stage_widths
        ]
        self.decoder = Decoder(rng, cfg)

    def skip_features(self, img: Tensor) -> List[Tensor]:
        return [m(f) for m, f in zip(self.sdmcms, self.encoder(img))]

    def forward(self, img: Tensor) -> Tensor:
        if img.ndim != 4 or img.shape[1] != self.cfg.input_channels:
            raise ValueError(f"expected (N,{self.cfg.input_channels},H,W) input, got {img.shape}")
        return self.decoder(self.skip_features(img))

    def predict(self, img: np.ndarray) -> np.ndarray:
        """Eval-mode probability map(s) for an (N,C,H,W) or (C,H,W) array."""
        was = self.training
        self.eval()
        try:
            arr = np.asarray(img, dtype=np.float64)
            single = arr.ndim == 3
            out = self.forward(Tensor(arr[None] if single else arr)).data
        finally:
            self.train(was)
        return out[0, 0] if single else out[:, 0]
