"""Model assembly for the three ablation variants."""

from dataclasses import asdict, dataclass, field

from torch import nn

from .adff import ADFF
from .encoder import Encoder, EncoderConfig, check_divisible
from .errors import ConfigurationError
from .rpd import BaselineDecoder, ResidualPyramidDecoder, UpsamplingTrunk

ABLATIONS = ("baseline", "baseline_rpd", "full")


@dataclass
class ModelConfig:
    levels: int = 5
    stage_channels: list = field(default_factory=lambda: [16, 32, 64, 128, 256])
    se_reduction: int = 4
    input_height: int = 64
    input_width: int = 64
    fused_channels: int = 64
    refine_channels: int = 16
    init_depth: float = 3.0
    ablation: str = "full"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(
                f"unknown ablation {self.ablation!r}; valid names: {', '.join(ABLATIONS)}"
            )
        if self.fused_channels < 1 or self.refine_channels < 1:
            raise ConfigurationError("fused_channels and refine_channels must be positive")
        self.encoder_config()

    def encoder_config(self):
        return EncoderConfig(
            levels=self.levels,
            stage_channels=list(self.stage_channels),
            se_reduction=self.se_reduction,
            input_height=self.input_height,
            input_width=self.input_width,
        )

    def to_dict(self):
        return asdict(self)


class SARPN(nn.Module):
    """Encoder, optional dense fusion and a decoder, wired per ``config.ablation``."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        enc = config.encoder_config()
        self.encoder = Encoder(enc)
        channels = enc.stage_channels
        # ``fusion`` turns the encoder pyramid into the per-level features fed to the RPD
        self.fusion = None
        if config.ablation == "baseline":
            self.decoder = BaselineDecoder(channels, config.fused_channels, config.init_depth)
        else:
            if config.ablation == "full":
                self.fusion = ADFF(channels, config.fused_channels)
            else:
                self.fusion = UpsamplingTrunk(channels, config.fused_channels)
            self.decoder = ResidualPyramidDecoder(
                channels,
                [config.fused_channels] * config.levels,
                hidden=config.fused_channels,
                refine_channels=config.refine_channels,
                init_depth=config.init_depth,
            )

    def features(self, image):
        """Return the encoder pyramid and the pyramid fed to the decoder."""
        check_divisible(image.shape[-2], image.shape[-1], self.config.levels)
        encoded = self.encoder(image)
        fused = self.fusion(encoded) if self.fusion is not None else encoded
        return encoded, fused

    def forward(self, image):
        encoded, fused = self.features(image)
        return self.decoder(encoded, fused)


def select_ablation(config: ModelConfig):
    return SARPN(config)


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())
