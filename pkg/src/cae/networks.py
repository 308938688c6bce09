"""The four differentiable function families: class-style encoder, individual-
style encoder, decoder with adaptive instance normalization, and a two-headed
discriminator, plus the ModelBundle archive that ties them together.

Layer counts follow the fixed architecture (6 conv stages for the class
encoder; 3 convs + 6 residual blocks for the individual encoder; a mirrored
decoder; 4 convs + 2 residual blocks + 2 linear heads for the discriminator).
Widths, side, code length, and downsampling depth are configurable.
"""

from __future__ import annotations

import hashlib
import zipfile
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .core import ClassStyleCode, ImageTensor, IndividualStyleCode

__all__ = [
    "NetConfig",
    "ClassStyleEncoder",
    "IndividualStyleEncoder",
    "Decoder",
    "Discriminator",
    "ModelBundle",
    "adaptive_instance_norm",
    "encode_class",
    "encode_indiv",
    "decode",
    "discriminate",
    "save_bundle",
    "load_bundle",
]

STYLE_RES_BLOCKS = 6
DISC_RES_BLOCKS = 2
CLASS_STAGES = 6

BUNDLE_FORMAT = "cae-bundle v1"

# fixed entry metadata so identical contents give byte-identical archives
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def zip_writestr(zf: zipfile.ZipFile, name: str, data) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


@dataclass(frozen=True)
class NetConfig:
    side: int = 64
    channels: int = 1
    code_dim: int = 8
    class_count: int = 2
    base_width: int = 32
    disc_width: int = 0  # 0 = same as base_width
    class_downsamples: int = 5  # stride-2 stages in the class encoder (1..5)
    mlp_hidden: int = 128

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if not 1 <= self.class_downsamples <= CLASS_STAGES - 1:
            raise ValueError("class_downsamples must be in [1, 5]")
        if self.side % 4 != 0:
            raise ValueError("side must be divisible by 4 (style-map downsampling)")
        if self.side % (2**self.class_downsamples) != 0:
            raise ValueError("side must be divisible by the class-encoder downsampling")
        if self.side % 8 != 0:
            raise ValueError("side must be divisible by 8 (discriminator downsampling)")
        for name in ("side", "code_dim", "class_count", "base_width", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.disc_width < 0:
            raise ValueError("disc_width must be >= 0 (0 meaning base_width)")

    @property
    def style_channels(self) -> int:
        return 4 * self.base_width

    @property
    def effective_disc_width(self) -> int:
        return self.disc_width or self.base_width

    @property
    def style_side(self) -> int:
        return self.side // 4


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def adaptive_instance_norm(
    x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-6
) -> torch.Tensor:
    """Normalize each (sample, channel) map then rescale to (gamma, beta).

    ``x``: [B, C, H, W]; ``gamma``/``beta``: [B, C]. Post-normalization channel
    statistics equal the injected scale and shift (biased std).
    """
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, correction=0)
    normed = (x - mean) / torch.sqrt(var + eps)
    return gamma[:, :, None, None] * normed + beta[:, :, None, None]


class _InstanceNormResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(channels, affine=False, track_running_stats=False)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(channels, affine=False, track_running_stats=False)

    def forward(self, x):
        h = torch.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return x + h


class ClassStyleEncoder(nn.Module):
    """Six conv stages, global average pooling, linear projection to the code."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        widths = [w, 2 * w, 4 * w, 4 * w, 4 * w, 4 * w]
        layers: list[nn.Module] = []
        in_ch = cfg.channels
        for stage, out_ch in enumerate(widths):
            if stage == 0:
                layers.append(nn.Conv2d(in_ch, out_ch, 7, stride=1, padding=3))
            elif stage <= cfg.class_downsamples:
                layers.append(nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1))
            else:
                layers.append(nn.Conv2d(in_ch, out_ch, 3, stride=1, padding=1))
            # no norm on the last stage: channel means feed the pooled projection
            use_norm = 0 < stage < CLASS_STAGES - 1
            if use_norm:
                layers.append(nn.InstanceNorm2d(out_ch, affine=False, track_running_stats=False))
            layers.append(nn.ReLU())
            in_ch = out_ch
        self.stages = nn.Sequential(*layers)
        self.project = nn.Linear(widths[-1], cfg.code_dim)
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.cfg.side or x.shape[1] != self.cfg.channels:
            raise ValueError(
                f"expected input [B, {self.cfg.channels}, {self.cfg.side}, {self.cfg.side}], "
                f"got {tuple(x.shape)}"
            )
        h = self.stages(x)
        pooled = h.mean(dim=(2, 3))
        return self.project(pooled)


class IndividualStyleEncoder(nn.Module):
    """Three convs (x4 downsampling) then six residual blocks; output stays spatial."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        self.stem = nn.Sequential(
            nn.Conv2d(cfg.channels, w, 7, stride=1, padding=3),
            nn.InstanceNorm2d(w, affine=False, track_running_stats=False),
            nn.ReLU(),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * w, affine=False, track_running_stats=False),
            nn.ReLU(),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1),
            nn.InstanceNorm2d(4 * w, affine=False, track_running_stats=False),
            nn.ReLU(),
        )
        self.blocks = nn.Sequential(*[_InstanceNormResBlock(4 * w) for _ in range(STYLE_RES_BLOCKS)])
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.cfg.side or x.shape[1] != self.cfg.channels:
            raise ValueError(
                f"expected input [B, {self.cfg.channels}, {self.cfg.side}, {self.cfg.side}], "
                f"got {tuple(x.shape)}"
            )
        return self.blocks(self.stem(x))


class _AdaptiveResBlock(nn.Module):
    """Residual block whose normalizations take externally supplied (gamma, beta)."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    @property
    def param_count(self) -> int:
        return 4 * self.channels  # (gamma, beta) for each of the two convs

    def forward(self, x, params):
        c = self.channels
        g1, b1 = params[:, 0:c], params[:, c : 2 * c]
        g2, b2 = params[:, 2 * c : 3 * c], params[:, 3 * c : 4 * c]
        h = torch.relu(adaptive_instance_norm(self.conv1(x), g1, b1))
        h = adaptive_instance_norm(self.conv2(h), g2, b2)
        return x + h


class Decoder(nn.Module):
    """Adaptive residual blocks conditioned on the class code, then upsampling.

    An MLP maps the class-style code to every block's scale/shift parameters;
    scales are produced as offsets around 1. Output is tanh-bounded.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        self.blocks = nn.ModuleList([_AdaptiveResBlock(4 * w) for _ in range(STYLE_RES_BLOCKS)])
        self.adain_params = sum(b.param_count for b in self.blocks)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.code_dim, cfg.mlp_hidden),
            nn.ReLU(),
            nn.Linear(cfg.mlp_hidden, cfg.mlp_hidden),
            nn.ReLU(),
            nn.Linear(cfg.mlp_hidden, self.adain_params),
        )
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        self.up_conv1 = nn.Conv2d(4 * w, 2 * w, 5, padding=2)
        self.up_conv2 = nn.Conv2d(2 * w, w, 5, padding=2)
        self.to_image = nn.Conv2d(w, cfg.channels, 7, padding=3)
        _init_weights(self)
        # conditioning starts at identity (scale 1, shift 0): the decoder is a
        # plain residual net until the code path learns to modulate it
        nn.init.zeros_(self.mlp[-1].weight)
        nn.init.zeros_(self.mlp[-1].bias)

    def forward(self, code: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        if code.shape[-1] != self.cfg.code_dim:
            raise ValueError(
                f"class code length {code.shape[-1]} != configured {self.cfg.code_dim}"
            )
        if style.shape[1] != self.cfg.style_channels or style.shape[-1] != self.cfg.style_side:
            raise ValueError(
                f"style map shape {tuple(style.shape[1:])} does not match configured "
                f"[{self.cfg.style_channels}, {self.cfg.style_side}, {self.cfg.style_side}]"
            )
        raw = self.mlp(code)
        h = style
        offset = 0
        for block in self.blocks:
            p = raw[:, offset : offset + block.param_count].clone()
            c = block.channels
            p[:, 0:c] = p[:, 0:c] + 1.0  # scale offsets around 1
            p[:, 2 * c : 3 * c] = p[:, 2 * c : 3 * c] + 1.0
            h = block(h, p)
            offset += block.param_count
        h = torch.relu(self.up_conv1(self.upsample(h)))
        h = torch.relu(self.up_conv2(self.upsample(h)))
        return torch.tanh(self.to_image(h))


class _PlainResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        h = torch.nn.functional.leaky_relu(self.conv1(x), 0.2)
        return x + self.conv2(h)


class Discriminator(nn.Module):
    """Shared conv trunk with a realness head (2 logits) and a class head (K logits)."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.effective_disc_width
        self.trunk = nn.Sequential(
            nn.Conv2d(cfg.channels, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(4 * w, 4 * w, 3, stride=1, padding=1),
            nn.LeakyReLU(0.2),
            _PlainResBlock(4 * w),
            _PlainResBlock(4 * w),
        )
        self.realness_head = nn.Linear(4 * w, 2)
        self.class_head = nn.Linear(4 * w, cfg.class_count)
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.shape[-1] != self.cfg.side or x.shape[1] != self.cfg.channels:
            raise ValueError(
                f"expected input [B, {self.cfg.channels}, {self.cfg.side}, {self.cfg.side}], "
                f"got {tuple(x.shape)}"
            )
        pooled = self.trunk(x).mean(dim=(2, 3))
        return self.realness_head(pooled), self.class_head(pooled)


@dataclass
class ModelBundle:
    """The four parameter sets plus the metadata every downstream module needs."""

    config: NetConfig
    class_encoder: ClassStyleEncoder
    indiv_encoder: IndividualStyleEncoder
    decoder: Decoder
    discriminator: Discriminator
    iteration: int = 0
    seed: int = 0
    config_hash: str = ""

    @staticmethod
    def initialize(config: NetConfig, seed: int = 0) -> "ModelBundle":
        torch.manual_seed(seed)
        return ModelBundle(
            config=config,
            class_encoder=ClassStyleEncoder(config),
            indiv_encoder=IndividualStyleEncoder(config),
            decoder=Decoder(config),
            discriminator=Discriminator(config),
            seed=seed,
        )

    def named_modules_in_order(self) -> list[tuple[str, nn.Module]]:
        return [
            ("class_encoder", self.class_encoder),
            ("indiv_encoder", self.indiv_encoder),
            ("decoder", self.decoder),
            ("discriminator", self.discriminator),
        ]

    def generator_parameters(self):
        for _, m in self.named_modules_in_order()[:3]:
            yield from m.parameters()

    def discriminator_parameters(self):
        yield from self.discriminator.parameters()

    def train_mode(self) -> None:
        for _, m in self.named_modules_in_order():
            m.train()

    def eval_mode(self) -> None:
        for _, m in self.named_modules_in_order():
            m.eval()

    def model_hash(self) -> str:
        """Digest over config and all parameter bytes; identifies the trained weights."""
        h = hashlib.sha256()
        h.update(repr(self.config).encode())
        for prefix, module in self.named_modules_in_order():
            for name, p in module.named_parameters():
                h.update(f"{prefix}.{name}".encode())
                h.update(p.detach().cpu().numpy().astype("<f4").tobytes())
        return h.hexdigest()[:16]

    # --- single-sample inference helpers -------------------------------

    def _to_batch(self, image: ImageTensor) -> torch.Tensor:
        arr = np.transpose(image.data, (2, 0, 1))[None]
        return torch.from_numpy(np.array(arr, dtype=np.float32))

    def encode_class_batch(self, images: np.ndarray) -> np.ndarray:
        """[N, H, W, C] -> [N, code_dim] under no_grad/eval."""
        self.eval_mode()
        with torch.no_grad():
            x = torch.from_numpy(np.array(np.transpose(images, (0, 3, 1, 2)), dtype=np.float32))
            return self.class_encoder(x).numpy()

    def decode_batch(self, codes: np.ndarray, styles: torch.Tensor) -> np.ndarray:
        """[N, code_dim] x [N, F, h, w] -> [N, H, W, C] under no_grad/eval."""
        self.eval_mode()
        with torch.no_grad():
            out = self.decoder(torch.from_numpy(np.array(codes, dtype=np.float32)), styles)
            return np.transpose(out.numpy(), (0, 2, 3, 1))


def encode_class(bundle: ModelBundle, x: ImageTensor) -> ClassStyleCode:
    bundle.eval_mode()
    with torch.no_grad():
        out = bundle.class_encoder(bundle._to_batch(x).float())
    return ClassStyleCode(out[0].numpy())


def encode_indiv(bundle: ModelBundle, x: ImageTensor) -> IndividualStyleCode:
    bundle.eval_mode()
    with torch.no_grad():
        out = bundle.indiv_encoder(bundle._to_batch(x).float())
    return IndividualStyleCode(np.transpose(out[0].numpy(), (1, 2, 0)))


def decode(bundle: ModelBundle, c: ClassStyleCode, s: IndividualStyleCode) -> ImageTensor:
    bundle.eval_mode()
    with torch.no_grad():
        code = torch.from_numpy(np.array(c.values, dtype=np.float32))[None]
        style = torch.from_numpy(np.array(np.transpose(s.values, (2, 0, 1)), dtype=np.float32))[None]
        out = bundle.decoder(code, style)
    return ImageTensor(np.transpose(out[0].numpy(), (1, 2, 0)))


def discriminate(bundle: ModelBundle, x: ImageTensor) -> tuple[np.ndarray, np.ndarray]:
    bundle.eval_mode()
    with torch.no_grad():
        r, c = bundle.discriminator(bundle._to_batch(x).float())
    return r[0].numpy(), c[0].numpy()


# --- archive serialization ---------------------------------------------
# Layout: "manifest" (versioned key-value text incl. every tensor's name and
# shape, in iteration order) + one raw little-endian float32 blob per
# parameter under params/<name>.

def _manifest_text(bundle: ModelBundle, entries: list[tuple[str, tuple[int, ...]]]) -> str:
    cfg = bundle.config
    lines = [
        f"format={BUNDLE_FORMAT}",
        f"side={cfg.side}",
        f"channels={cfg.channels}",
        f"code_dim={cfg.code_dim}",
        f"class_count={cfg.class_count}",
        f"base_width={cfg.base_width}",
        f"disc_width={cfg.disc_width}",
        f"class_downsamples={cfg.class_downsamples}",
        f"mlp_hidden={cfg.mlp_hidden}",
        f"iteration={bundle.iteration}",
        f"seed={bundle.seed}",
        f"config_hash={bundle.config_hash}",
    ]
    for name, shape in entries:
        lines.append(f"tensor {name} {','.join(map(str, shape))}")
    return "\n".join(lines) + "\n"


def iter_bundle_tensors(bundle: ModelBundle):
    for prefix, module in bundle.named_modules_in_order():
        for name, p in module.named_parameters():
            yield f"{prefix}.{name}", p


def write_bundle_entries(zf: zipfile.ZipFile, bundle: ModelBundle) -> None:
    entries = []
    blobs = []
    for name, p in iter_bundle_tensors(bundle):
        arr = p.detach().cpu().numpy().astype("<f4")
        entries.append((name, tuple(arr.shape)))
        blobs.append((name, arr.tobytes()))
    zip_writestr(zf, "manifest", _manifest_text(bundle, entries))
    for name, blob in blobs:
        zip_writestr(zf, f"params/{name}", blob)


def read_bundle_entries(zf: zipfile.ZipFile) -> ModelBundle:
    manifest = zf.read("manifest").decode()
    kv: dict[str, str] = {}
    tensors: list[tuple[str, tuple[int, ...]]] = []
    for line in manifest.splitlines():
        if not line.strip():
            continue
        if line.startswith("tensor "):
            _, name, shape = line.split(" ", 2)
            dims = tuple(int(d) for d in shape.split(",")) if shape else ()
            tensors.append((name, dims))
        else:
            k, v = line.split("=", 1)
            kv[k] = v
    if kv.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"unsupported bundle format {kv.get('format')!r}")
    cfg = NetConfig(
        side=int(kv["side"]),
        channels=int(kv["channels"]),
        code_dim=int(kv["code_dim"]),
        class_count=int(kv["class_count"]),
        base_width=int(kv["base_width"]),
        disc_width=int(kv.get("disc_width", "0")),
        class_downsamples=int(kv["class_downsamples"]),
        mlp_hidden=int(kv["mlp_hidden"]),
    )
    bundle = ModelBundle.initialize(cfg, seed=int(kv["seed"]))
    bundle.iteration = int(kv["iteration"])
    bundle.config_hash = kv["config_hash"]
    params = dict(iter_bundle_tensors(bundle))
    expected = {name for name, _ in iter_bundle_tensors(bundle)}
    listed = {name for name, _ in tensors}
    if expected != listed:
        missing = sorted(expected - listed)[:3]
        extra = sorted(listed - expected)[:3]
        raise ValueError(f"bundle tensor mismatch: missing={missing} extra={extra}")
    with torch.no_grad():
        for name, shape in tensors:
            blob = zf.read(f"params/{name}")
            arr = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
            params[name].copy_(torch.from_numpy(arr))
    return bundle


def save_bundle(bundle: ModelBundle, path) -> None:
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        write_bundle_entries(zf, bundle)


def load_bundle(path) -> ModelBundle:
    with zipfile.ZipFile(path, "r") as zf:
        return read_bundle_entries(zf)
