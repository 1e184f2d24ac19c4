from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ContractError

ARCHITECTURES = ("cross_attention", "transformer_encoder", "mlp_mixer")


@dataclass(frozen=True)
class ScoreFieldConfig:
    """Hyperparameters of the score network.

    Defaults are a scaled-down version of the large PerceiverIO setting
    (512-1024 latents, 12 blocks) that is trainable on a CPU.
    """

    architecture: str = "cross_attention"
    n_latents: int = 64
    d_latent: int = 128
    n_blocks: int = 4
    self_attends_per_block: int = 2
    n_heads: int = 4
    d_head: int = 0  # 0 -> d_latent // n_heads
    decoder_blocks: int = 1
    coord_freqs: int = 10
    time_freqs: int = 64
    coord_ladder: str = "power2"
    time_ladder: str = "linear"
    mlp_ratio: int = 2
    mixer_tokens: int = 64
    signal_skip: bool = True
    d_m: int = 2
    d_y: int = 3
    timesteps: int = 1000

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ContractError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        counts = (
            "n_latents", "d_latent", "n_blocks", "self_attends_per_block", "n_heads",
            "decoder_blocks", "coord_freqs", "time_freqs", "mlp_ratio", "mixer_tokens",
            "d_m", "d_y", "timesteps",
        )
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_latent % self.n_heads:
            raise ContractError(f"d_latent={self.d_latent} not divisible by n_heads={self.n_heads}")
        if self.d_head < 0:
            raise ContractError("d_head must be >= 0")

    @property
    def head_dim(self):
        return self.d_head or self.d_latent // self.n_heads

    @property
    def d_features(self):
        """Width of the concatenated per-row features before the learned projection."""
        return 2 * self.coord_freqs * self.d_m + self.d_m + self.d_y + 2 * self.time_freqs + 1

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return ScoreFieldConfig(**d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ContractError(f"unknown score-field config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in d.items():
            if k in ("architecture", "coord_ladder", "time_ladder"):
                kwargs[k] = v
            elif k == "signal_skip":
                kwargs[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes", "on")
            else:
                kwargs[k] = int(v)
        return cls(**kwargs)
