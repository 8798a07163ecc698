"""Model and training configuration dataclasses.

Validation collects *all* problems before raising so a user fixes a config in
one round trip. ``ConfigError.problems`` carries the individual messages.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field


class ConfigError(Exception):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


ENCODER_VARIANTS = ("cross_modal", "modality_transformers", "shared_transformer")
SAIM_VARIANTS = ("full", "off", "no_global_attention", "no_motion")
DECODER_VARIANTS = ("task_based", "shared_only", "hybrid", "gated_hybrid")
MODALITIES = ("location", "velocity", "discrete_location", "ego_motion")


@dataclass
class EncoderConfig:
    d_embed: int = 64
    num_heads: int = 4
    num_layers: int = 2
    ffn_hidden: int = 128
    d_model: int = 128          # transformer width after fusing; 0 keeps raw width
    variant: str = "cross_modal"
    pool: str = "last"          # or "mean"
    scaled_attention: bool = False
    modalities: tuple[str, ...] = MODALITIES
    use_positional: bool = True

    def problems(self):
        out = []
        if self.d_embed % self.num_heads:
            out.append(f"encoder d_embed {self.d_embed} not divisible by {self.num_heads} heads")
        if self.num_layers < 1:
            out.append("encoder num_layers must be >= 1")
        if self.variant not in ENCODER_VARIANTS:
            out.append(f"unknown encoder variant '{self.variant}' (choose from {ENCODER_VARIANTS})")
        if self.pool not in ("last", "mean"):
            out.append(f"unknown encoder pool '{self.pool}'")
        if self.d_model and self.d_model % self.num_heads:
            out.append(f"encoder d_model {self.d_model} not divisible by {self.num_heads} heads")
        unknown = [m for m in self.modalities if m not in MODALITIES]
        if unknown:
            out.append(f"unknown modalities {unknown} (choose from {MODALITIES})")
        if len(self.modalities) < 2:
            out.append("encoder needs at least 2 modalities")
        return out


@dataclass
class SAIMConfig:
    variant: str = "full"
    patch_size: int = 12
    map_size: tuple[int, int] = (216, 384)   # (height, width)
    lambda_p: int = 64
    num_heads: int = 4
    attn_depth: int = 1
    d_dynamics: int = 128
    d_query: int = 64
    d_out: int = 128
    use_positional: bool = True
    scaled_attention: bool = False

    def problems(self):
        out = []
        if self.variant not in SAIM_VARIANTS:
            out.append(f"unknown saim variant '{self.variant}' (choose from {SAIM_VARIANTS})")
        h, w = self.map_size
        if h % self.patch_size or w % self.patch_size:
            out.append(
                f"map size {h}x{w} not divisible by patch size {self.patch_size}"
            )
        if self.lambda_p % self.num_heads:
            out.append(f"saim lambda_p {self.lambda_p} not divisible by {self.num_heads} heads")
        if self.attn_depth < 1:
            out.append("saim attn_depth must be >= 1")
        return out

    @property
    def n_patches(self):
        h, w = self.map_size
        return (h // self.patch_size) * (w // self.patch_size)


@dataclass
class DecoderConfig:
    variant: str = "gated_hybrid"
    d_hidden: int = 128
    delta_boxes: bool = False   # predict offsets from the last observed box

    def problems(self):
        out = []
        if self.variant not in DECODER_VARIANTS:
            out.append(f"unknown decoder variant '{self.variant}' (choose from {DECODER_VARIANTS})")
        if self.d_hidden < 1:
            out.append("decoder d_hidden must be >= 1")
        return out


@dataclass
class ModelConfig:
    obs_len: int = 15
    pred_len: int = 30
    grid_rows: int = 18
    grid_cols: int = 32
    cell_px: int = 60
    image_size: tuple[int, int] = (1920, 1080)
    l2_recurrent: float = 1e-4
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    saim: SAIMConfig = field(default_factory=SAIMConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    @property
    def n_cells(self):
        return self.grid_rows * self.grid_cols

    def problems(self):
        out = []
        if self.obs_len < 2:
            out.append("obs_len must be >= 2 (velocities need two frames)")
        if self.pred_len < 1:
            out.append("pred_len must be >= 1")
        if self.grid_rows * self.cell_px < self.image_size[1] or \
                self.grid_cols * self.cell_px < self.image_size[0]:
            out.append(
                f"grid {self.grid_rows}x{self.grid_cols} of {self.cell_px}px cells "
                f"does not cover image {self.image_size[0]}x{self.image_size[1]}"
            )
        out += self.encoder.problems()
        out += self.saim.problems()
        out += self.decoder.problems()
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 200
    lr_reduce_factor: float = 0.2
    lr_patience: int = 10
    lr_threshold: float = 1e-4
    lr_floor: float = 1e-7
    l2_recurrent: float = 1e-4
    grad_clip: float = 0.0      # 0 disables global-norm clipping
    seed: int = 0
    val_fraction: float = 0.15
    profile: str = "pie"        # pie: omega_l 0.6, lr 1e-4; jaad: 0.5, 5e-5

    def problems(self):
        out = []
        if not 0.0 < self.lr_reduce_factor < 1.0:
            out.append(f"lr_reduce_factor {self.lr_reduce_factor} must be in (0, 1)")
        if self.batch_size < 1:
            out.append("batch_size must be >= 1")
        if self.epochs < 0:
            out.append("epochs must be >= 0")
        if self.learning_rate <= 0:
            out.append("learning_rate must be positive")
        if self.profile not in ("pie", "jaad"):
            out.append(f"unknown profile '{self.profile}' (choose pie or jaad)")
        if not 0.0 <= self.val_fraction < 1.0:
            out.append("val_fraction must be in [0, 1)")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    @classmethod
    def for_profile(cls, profile, **overrides):
        base = {"pie": {"learning_rate": 1e-4}, "jaad": {"learning_rate": 5e-5}}
        if profile not in base:
            raise ConfigError(f"unknown profile '{profile}' (choose pie or jaad)")
        kw = {"profile": profile, **base[profile], **overrides}
        return cls(**kw)


# ---------------------------------------------------------------------------
# dict round-trips (config files, checkpoints)


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls)}


def dataclass_from_dict(cls, data, path=""):
    """Build ``cls`` from a plain dict, rejecting unknown keys with full paths."""
    known = _fields(cls)
    problems = []
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in known:
            problems.append(f"unknown config key '{where}'")
            continue
        ftype = known[key].type
        nested = _NESTED.get((cls, key))
        if nested is not None:
            if not isinstance(value, dict):
                problems.append(f"'{where}' must be an object")
                continue
            try:
                kwargs[key] = dataclass_from_dict(nested, value, where)
            except ConfigError as err:
                problems.extend(err.problems)
        elif "tuple" in str(ftype):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    if problems:
        raise ConfigError(problems)
    return cls(**kwargs)


_NESTED = {
    (ModelConfig, "encoder"): EncoderConfig,
    (ModelConfig, "saim"): SAIMConfig,
    (ModelConfig, "decoder"): DecoderConfig,
}


def dataclass_to_dict(obj):
    return dataclasses.asdict(obj)
