"""Gradient verification suites: primitives, modules, and the full model.

Every primitive op gets a finite-difference check at tight tolerance
(h = 1e-5, tol = 1e-5); composite modules and the end-to-end loss run at a
looser tol = 1e-3 with h = 1e-4 because FD truncation error accumulates
through deep graphs. The CLI surfaces these as the ``gradcheck`` subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .configs import ConfigError, ModelConfig
from .losses import LossWeights, total_loss
from .model import Model, tiny_config

PRIMITIVE_H = 1e-5
PRIMITIVE_TOL = 1e-5
MODEL_H = 1e-4
MODEL_TOL = 1e-3

# limits that keep a full-model finite-difference sweep tractable
MAX_WIDTH = 16
MAX_OBS = 4
MAX_PRED = 3
MAX_MAP = 24


@dataclass
class CheckResult:
    name: str
    ok: bool
    max_rel_err: float
    worst: str
    n_params: int

    def line(self):
        status = "PASS" if self.ok else "FAIL"
        return (f"{status}  {self.name:28s} max_rel_err={self.max_rel_err:.3e}"
                f"  ({self.n_params} tensors, worst: {self.worst})")


def _result(name, report):
    worst = report.worst()
    return CheckResult(name=name, ok=report.ok, max_rel_err=worst.max_rel_err,
                       worst=worst.name, n_params=len(report.entries))


def _weighted(x, rng):
    return ad.tsum(ad.mul(x, ad.Tensor(rng.normal(size=x.data.shape))))


def check_primitives(seed=0):
    """One finite-difference check per differentiable primitive."""
    rng = np.random.default_rng(seed)
    results = []

    def check(name, build, n_params=1, shape=(3, 4), init=None):
        store = ad.ParamStore()
        params = []
        for i in range(n_params):
            value = init(i) if init else rng.normal(0.2, 0.8, shape)
            params.append(store.add(f"{name}/p{i}", value))
        # fresh generator per call keeps the loss weights fixed across
        # the repeated evaluations grad_check makes
        report = ad.grad_check(
            lambda: build(params, np.random.default_rng(seed + 1)),
            params, h=PRIMITIVE_H, tol=PRIMITIVE_TOL)
        results.append(_result(name, report))

    t = lambda p: p.tensor

    check("add", lambda p, r: _weighted(ad.add(t(p[0]), t(p[1])), r), 2)
    check("sub", lambda p, r: _weighted(ad.sub(t(p[0]), t(p[1])), r), 2)
    check("mul", lambda p, r: _weighted(ad.mul(t(p[0]), t(p[1])), r), 2)
    check("neg", lambda p, r: _weighted(ad.neg(t(p[0])), r))
    check("scale", lambda p, r: _weighted(ad.scale(t(p[0]), -1.7), r))
    check("matmul", lambda p, r: _weighted(ad.matmul(t(p[0]), ad.transpose(t(p[1]))), r), 2)
    check("transpose", lambda p, r: _weighted(ad.transpose(t(p[0])), r))
    check("reshape", lambda p, r: _weighted(ad.reshape(t(p[0]), (4, 3)), r))
    check("concat", lambda p, r: _weighted(ad.concat([t(p[0]), t(p[1])], axis=1), r), 2)
    check("narrow", lambda p, r: _weighted(ad.narrow(t(p[0]), 1, 1, 2), r))
    check("split", lambda p, r: _weighted(ad.split(t(p[0]), [2, 2], axis=1)[1], r))
    check("tsum", lambda p, r: ad.tsum(t(p[0])))
    check("tsum_axis", lambda p, r: _weighted(ad.tsum(t(p[0]), axis=0, keepdims=True), r))
    check("tmean", lambda p, r: _weighted(ad.tmean(t(p[0]), axis=1, keepdims=True), r))
    check("tanh", lambda p, r: _weighted(ad.tanh(t(p[0])), r))
    check("sigmoid", lambda p, r: _weighted(ad.sigmoid(t(p[0])), r))
    check("softsign", lambda p, r: _weighted(ad.softsign(t(p[0])), r))
    check("exp", lambda p, r: _weighted(ad.exp(t(p[0])), r))
    check("logcosh", lambda p, r: _weighted(ad.logcosh(t(p[0])), r))
    check("softmax", lambda p, r: _weighted(ad.softmax(t(p[0]), axis=-1), r))
    check("linear", lambda p, r: _weighted(
        ad.linear(ad.Tensor(np.random.default_rng(3).normal(size=(2, 3))),
                  t(p[0]), t(p[1])), r),
        2, shape=(3, 4), init=lambda i: rng.normal(0.2, 0.8, (3, 4) if i == 0 else (1, 4)))
    # keep inputs clear of the kink / clip boundary
    check("relu", lambda p, r: _weighted(ad.relu(t(p[0])), r),
          init=lambda i: rng.choice([-1.0, 1.0], (3, 4)) * rng.uniform(0.5, 1.5, (3, 4)))
    check("log", lambda p, r: _weighted(ad.log(t(p[0])), r),
          init=lambda i: rng.uniform(0.5, 2.0, (3, 4)))
    check("clip", lambda p, r: _weighted(ad.clip(t(p[0]), -0.9, 0.9), r),
          init=lambda i: rng.uniform(-0.5, 0.5, (3, 4)))
    check("layer_norm", lambda p, r: _weighted(
        ad.layer_norm(t(p[0]), t(p[1]), t(p[2])), r),
        3, init=lambda i: rng.normal(0.3, 0.8, (3, 4) if i == 0 else (4,)))
    check("embedding", lambda p, r: _weighted(
        ad.embedding(t(p[0]), np.array([2, 0, 1, 2])), r), shape=(3, 4))
    check("stack_rows", lambda p, r: _weighted(
        ad.stack_rows([ad.narrow(t(p[0]), 0, i, 1) for i in (2, 0, 1)]), r))
    return results


def enforce_tiny(cfg: ModelConfig):
    """Reject configs too large for an exhaustive finite-difference sweep."""
    problems = []
    widths = {
        "encoder.d_embed": cfg.encoder.d_embed,
        "encoder.d_model": cfg.encoder.d_model,
        "encoder.ffn_hidden": cfg.encoder.ffn_hidden,
        "saim.lambda_p": cfg.saim.lambda_p,
        "saim.d_dynamics": cfg.saim.d_dynamics,
        "saim.d_out": cfg.saim.d_out,
        "decoder.d_hidden": cfg.decoder.d_hidden,
    }
    if cfg.saim.variant == "off":
        for key in list(widths):
            if key.startswith("saim."):
                del widths[key]
    for key, value in widths.items():
        if value > MAX_WIDTH:
            problems.append(f"{key}={value} exceeds gradcheck limit {MAX_WIDTH}")
    if cfg.obs_len > MAX_OBS:
        problems.append(f"obs_len={cfg.obs_len} exceeds gradcheck limit {MAX_OBS}")
    if cfg.pred_len > MAX_PRED:
        problems.append(f"pred_len={cfg.pred_len} exceeds gradcheck limit {MAX_PRED}")
    if cfg.saim.variant != "off":
        h, w = cfg.saim.map_size
        if h > MAX_MAP or w > MAX_MAP:
            problems.append(
                f"saim.map_size={cfg.saim.map_size} exceeds gradcheck limit "
                f"{MAX_MAP}x{MAX_MAP}")
    if problems:
        raise ConfigError(problems)


def _model_inputs(cfg: ModelConfig, seed):
    rng = np.random.default_rng(seed)
    o, tau = cfg.obs_len, cfg.pred_len
    obs_boxes = np.sort(rng.uniform(0.1, 0.9, (o, 2, 2)), axis=1).reshape(o, 4)
    obs_boxes = obs_boxes[:, [0, 2, 1, 3]]
    obs_vel = rng.normal(0, 0.3, (o, 4))
    obs_cells = rng.integers(0, cfg.n_cells, o)
    ego_obs = np.column_stack([rng.uniform(0, 5, o), rng.normal(0, 0.1, o),
                               rng.normal(0, 0.2, o)])
    ego_future = np.column_stack([rng.uniform(0, 5, tau), rng.normal(0, 0.1, tau),
                                  rng.normal(0, 0.2, tau)])
    if cfg.saim.variant != "off":
        h, w = cfg.saim.map_size
        owner = rng.integers(0, 4, (h, w))
        channels = np.stack([(owner == c).astype(np.float64) for c in range(4)])
    else:
        channels = None
    gt_boxes = np.sort(rng.uniform(0.1, 0.9, (tau, 2, 2)), axis=1).reshape(tau, 4)
    gt_boxes = gt_boxes[:, [0, 2, 1, 3]]
    targets = [(gt_boxes, int(rng.integers(0, 2)), int(rng.integers(0, cfg.n_cells)))]
    return (obs_boxes, obs_vel, obs_cells, ego_obs, ego_future, channels), targets


def check_model(cfg: ModelConfig | None = None, seed=0, h=MODEL_H, tol=MODEL_TOL):
    """End-to-end sweep: d(total loss)/d(theta) for every model parameter.

    Returns per-module CheckResults (encoder / interaction / decoder) so a
    failure points at the right subsystem.
    """
    cfg = cfg or tiny_config()
    cfg.validate()
    enforce_tiny(cfg)
    model = Model(cfg, seed=seed)
    inputs, targets = _model_inputs(cfg, seed + 1)
    weights = LossWeights(omega_l=0.6, w_cross=2.0)

    def f():
        bundle = model.forward(*inputs)
        loss, _ = total_loss([bundle], targets, weights)
        return loss

    groups = {"encoder": [], "interaction": [], "decoder": []}
    for param in model.store:
        key = ("interaction" if param.name.startswith("saim/")
               else "decoder" if param.name.startswith("dec/") else "encoder")
        groups[key].append(param)

    results = []
    for name, params in groups.items():
        if not params:
            continue
        report = ad.grad_check(f, params, h=h, tol=tol)
        results.append(_result(f"model/{name}", report))
    return results


def run_all(cfg: ModelConfig | None = None, seed=0):
    """Primitive suite + full-model sweep; returns (results, all_ok)."""
    results = check_primitives(seed)
    results += check_model(cfg, seed=seed)
    return results, all(r.ok for r in results)
