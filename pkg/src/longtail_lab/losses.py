"""Re-sampling/re-weighting loss catalog with analytic gradients w.r.t. logits.

Single-label kinds (softmax family):

  ce                -log softmax(z)_y
  focal             -alpha * (1 - p_y)^gamma * log p_y
  cb_ce, cb_focal   ce/focal scaled by w_y, w_c ~ (1-beta)/(1-beta^{n_c}), sum w = K
  ldam              ce over s * (z - delta (.) onehot(y)), delta_c = C / n_c^{1/4},
                    C = m_max * (min_c n_c)^{1/4}
  prior_ce          ce over z + log pi  (same adjustment as balanced_softmax)
  balanced_softmax  ce over z + log pi
  weighted_softmax  (-log pi_y + 1) * ce
  logit_adjust      ce over z + tau * log pi
  vs                ce over delta (.) z + iota, delta_c = (n_c/n_max)^{gamma_vs},
                    iota_c = tau_vs * log pi_c
  seql              ce with rare negative classes (pi_c < t) dropped from the
                    softmax denominator with probability q, mask redrawn per sample
  gcl               ce over z - a * A (.) |eps|, eps ~ N(0,1), A_c in [0,1] largest
                    for tail classes (training mode only)
  label_smooth_lt   ce against a smoothed target whose smoothing strength grows
                    with the true class's count (head classes smoothed most)

Multi-label kinds (per-class sigmoid, summed over classes):

  bce_ml            binary cross-entropy
  focal_bce_ml      -(1 - p_t)^gamma * log p_t per class

Stochastic kinds (seql, gcl) consume ctx.rng; pre-draw their noise with
draw_noise when one draw must serve several evaluations (value + grad, or a
sharpness-aware second pass).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .distribution import ClassDistribution

SINGLE_LABEL_KINDS = (
    "ce", "focal", "cb_ce", "cb_focal", "ldam", "prior_ce", "weighted_softmax",
    "balanced_softmax", "logit_adjust", "vs", "seql", "gcl", "label_smooth_lt",
)
MULTI_LABEL_KINDS = ("bce_ml", "focal_bce_ml")
LOSS_KINDS = SINGLE_LABEL_KINDS + MULTI_LABEL_KINDS
STOCHASTIC_KINDS = ("seql", "gcl")

# kinds that divide by class counts (or take their log): every n_c must be > 0
_NEEDS_COUNTS = frozenset({
    "cb_ce", "cb_focal", "ldam", "prior_ce", "weighted_softmax",
    "balanced_softmax", "logit_adjust", "vs", "gcl", "label_smooth_lt",
})

_KIND_HYPERS = {
    "ce": (),
    "focal": ("alpha", "gamma"),
    "cb_ce": ("beta",),
    "cb_focal": ("beta", "alpha", "gamma"),
    "ldam": ("m_max", "scale"),
    "prior_ce": (),
    "weighted_softmax": (),
    "balanced_softmax": (),
    "logit_adjust": ("tau",),
    "vs": ("gamma_vs", "tau_vs"),
    "seql": ("seql_threshold", "seql_q"),
    "gcl": ("gcl_amplitude",),
    "label_smooth_lt": ("eps_head", "eps_tail"),
    "bce_ml": (),
    "focal_bce_ml": ("gamma",),
}


@dataclass(frozen=True)
class LossSpec:
    """One loss kind plus its hyperparameters (irrelevant fields are ignored)."""

    kind: str
    alpha: float = 1.0
    gamma: float = 2.0
    beta: float = 0.9999
    m_max: float = 0.5
    scale: float = 30.0
    tau: float = 1.0
    gamma_vs: float = 0.3
    tau_vs: float = 1.0
    seql_threshold: float = 0.05
    seql_q: float = 0.9
    gcl_amplitude: float = 1.0
    eps_head: float = 0.1
    eps_tail: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.gamma < 0 or self.alpha <= 0:
            raise ValueError("focal needs alpha > 0 and gamma >= 0")
        if self.m_max <= 0 or self.scale <= 0:
            raise ValueError("ldam needs m_max > 0 and scale > 0")
        if not 0.0 <= self.seql_threshold <= 1.0 or not 0.0 <= self.seql_q <= 1.0:
            raise ValueError("seql threshold and q must lie in [0, 1]")
        if self.gcl_amplitude < 0:
            raise ValueError("gcl amplitude must be non-negative")
        if not 0.0 <= self.eps_head < 1.0 or not 0.0 <= self.eps_tail < 1.0:
            raise ValueError("label smoothing strengths must lie in [0, 1)")

    @property
    def multi_label(self) -> bool:
        return self.kind in MULTI_LABEL_KINDS

    def to_config(self) -> dict:
        cfg = {"kind": self.kind}
        for name in _KIND_HYPERS[self.kind]:
            cfg[name] = getattr(self, name)
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "LossSpec":
        if "kind" not in cfg:
            raise ValueError("loss config needs a 'kind'")
        kind = cfg["kind"]
        if kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {kind!r}")
        unknown = set(cfg) - {"kind"} - set(_KIND_HYPERS[kind])
        if unknown:
            raise ValueError(f"loss kind {kind!r} does not take: {sorted(unknown)}")
        return cls(**cfg)


@dataclass
class LossContext:
    """Distribution + randomness + mode for a loss evaluation.

    The rng feeds only seql and gcl; both fall back to plain CE when
    training_mode is off (perturbations disabled at evaluation).
    """

    distribution: ClassDistribution
    rng: np.random.Generator | None = None
    training_mode: bool = True


def cb_weights(dist: ClassDistribution, beta: float) -> np.ndarray:
    """Effective-number class weights w_c ~ (1-beta)/(1-beta^{n_c}), sum w = K."""
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    _require_positive_counts(dist, "cb weights")
    counts = dist.counts.astype(np.float64)
    raw = (1.0 - beta) / (1.0 - beta ** counts) if beta > 0 else np.ones_like(counts)
    return raw * (dist.num_classes / raw.sum())


def ldam_margins(dist: ClassDistribution, m_max: float) -> np.ndarray:
    """Per-class additive margins delta_c = C / n_c^{1/4}, C = m_max * n_min^{1/4}."""
    _require_positive_counts(dist, "ldam")
    counts = dist.counts.astype(np.float64)
    return m_max * counts.min() ** 0.25 / counts ** 0.25


def gcl_amplitudes(dist: ClassDistribution) -> np.ndarray:
    """Noise amplitudes A_c = (log n_max - log n_c)/(log n_max - log n_min) in [0, 1].

    All-zero for a balanced distribution (no imbalance, no perturbation).
    """
    _require_positive_counts(dist, "gcl")
    logn = np.log(dist.counts.astype(np.float64))
    span = logn.max() - logn.min()
    if span == 0:
        return np.zeros(dist.num_classes)
    return (logn.max() - logn) / span


def label_smoothing_eps(dist: ClassDistribution, eps_head: float, eps_tail: float) -> np.ndarray:
    """Per-class smoothing strength interpolated from eps_tail (n_min) to eps_head (n_max)."""
    _require_positive_counts(dist, "label_smooth_lt")
    logn = np.log(dist.counts.astype(np.float64))
    span = logn.max() - logn.min()
    factor = np.ones(dist.num_classes) if span == 0 else (logn - logn.min()) / span
    return eps_tail + (eps_head - eps_tail) * factor


def posthoc_adjust(logits, dist: ClassDistribution, tau: float) -> np.ndarray:
    """Inference-time logit shift z - tau * log pi (identity at tau = 0)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] != dist.num_classes:
        raise ValueError(f"logits have {z.shape[-1]} classes, distribution has {dist.num_classes}")
    if tau == 0:
        return z.copy()
    _require_positive_counts(dist, "posthoc adjustment")
    return z - tau * np.log(dist.frequencies)


def draw_noise(spec: LossSpec, rng: np.random.Generator, batch_size: int,
               num_classes: int) -> np.ndarray | None:
    """Pre-draw the per-sample stochastic component (None for deterministic kinds)."""
    if spec.kind == "seql":
        return rng.random((batch_size, num_classes))
    if spec.kind == "gcl":
        return np.abs(rng.standard_normal((batch_size, num_classes)))
    return None


def loss_value(spec: LossSpec, logits, target, ctx: LossContext) -> float:
    return _single(spec, logits, target, ctx)[0]


def loss_grad(spec: LossSpec, logits, target, ctx: LossContext) -> np.ndarray:
    return _single(spec, logits, target, ctx)[1]


def loss_value_and_grad(spec: LossSpec, logits, target, ctx: LossContext):
    """Value and d(loss)/d(logits) from a single stochastic draw."""
    return _single(spec, logits, target, ctx)


def _single(spec, logits, target, ctx):
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("expected a single logit vector")
    noise = None
    if spec.kind in STOCHASTIC_KINDS and ctx.training_mode:
        if ctx.rng is None:
            raise ValueError(f"loss kind {spec.kind!r} needs ctx.rng in training mode")
        noise = draw_noise(spec, ctx.rng, 1, z.shape[0])
    targets = np.asarray([target]) if not spec.multi_label else np.asarray(target)[None, :]
    values, grads = batch_loss_and_grad(
        spec, z[None, :], targets, ctx.distribution,
        noise=noise, training=ctx.training_mode,
    )
    return float(values[0]), grads[0]


def batch_loss_and_grad(spec: LossSpec, logits, targets, dist: ClassDistribution,
                        *, noise: np.ndarray | None = None, training: bool = True):
    """Per-sample loss values (n,) and gradients (n, K) for a batch.

    ``noise`` carries the pre-drawn stochastic component for seql/gcl so the
    same draw serves value, gradient, and any repeated pass over the batch.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("logits must be a (batch, classes) array")
    n, k = z.shape
    if k != dist.num_classes:
        raise ValueError(f"logits have {k} classes, distribution has {dist.num_classes}")
    if k < 2:
        raise ValueError("need at least two classes")
    if not np.isfinite(z).all():
        raise ValueError("logits must be finite")
    if spec.kind in _NEEDS_COUNTS:
        _require_positive_counts(dist, spec.kind)

    if spec.multi_label:
        t = np.asarray(targets, dtype=np.float64)
        if t.shape != (n, k) or not np.isin(t, (0.0, 1.0)).all():
            raise ValueError(f"multi-label targets must be a binary (n, {k}) matrix")
        if spec.kind == "bce_ml":
            return _bce(z, t)
        return _focal_bce(z, t, spec.gamma)

    y = np.asarray(targets, dtype=np.int64)
    if y.shape != (n,):
        raise ValueError("single-label targets must be one class index per row")
    if y.min() < 0 or y.max() >= k:
        raise ValueError(f"targets must lie in [0, {k})")

    if spec.kind == "ce":
        return _softmax_ce(z, y)
    if spec.kind in ("focal", "cb_focal"):
        values, grads = _focal(z, y, spec.alpha, spec.gamma)
        if spec.kind == "cb_focal":
            _scale_by(values, grads, cb_weights(dist, spec.beta)[y])
        return values, grads
    if spec.kind == "cb_ce":
        values, grads = _softmax_ce(z, y)
        _scale_by(values, grads, cb_weights(dist, spec.beta)[y])
        return values, grads
    if spec.kind == "ldam":
        delta = ldam_margins(dist, spec.m_max)
        shifted = z.copy()
        shifted[np.arange(n), y] -= delta[y]
        values, grads = _softmax_ce(spec.scale * shifted, y)
        return values, spec.scale * grads
    if spec.kind in ("prior_ce", "balanced_softmax"):
        return _softmax_ce(z + np.log(dist.frequencies), y)
    if spec.kind == "logit_adjust":
        return _softmax_ce(z + spec.tau * np.log(dist.frequencies), y)
    if spec.kind == "weighted_softmax":
        values, grads = _softmax_ce(z, y)
        weights = 1.0 - np.log(dist.frequencies)
        _scale_by(values, grads, weights[y])
        return values, grads
    if spec.kind == "vs":
        counts = dist.counts.astype(np.float64)
        mult = (counts / counts.max()) ** spec.gamma_vs
        add = spec.tau_vs * np.log(dist.frequencies)
        values, grads = _softmax_ce(z * mult + add, y)
        return values, grads * mult
    if spec.kind == "seql":
        if not training:
            return _softmax_ce(z, y)
        if noise is None:
            raise ValueError("seql needs pre-drawn noise in training mode")
        keep = (dist.frequencies >= spec.seql_threshold)[None, :] | (noise >= spec.seql_q)
        keep[np.arange(n), y] = True
        return _softmax_ce(np.where(keep, z, -np.inf), y)
    if spec.kind == "gcl":
        if not training:
            return _softmax_ce(z, y)
        if noise is None:
            raise ValueError("gcl needs pre-drawn noise in training mode")
        amp = gcl_amplitudes(dist)
        return _softmax_ce(z - spec.gcl_amplitude * amp * noise, y)
    if spec.kind == "label_smooth_lt":
        eps = label_smoothing_eps(dist, spec.eps_head, spec.eps_tail)[y]
        t = np.repeat((eps / (k - 1))[:, None], k, axis=1)
        t[np.arange(n), y] = 1.0 - eps
        logp = _log_softmax(z)
        values = -np.sum(np.where(t > 0, t * logp, 0.0), axis=1)
        return values, np.exp(logp) - t
    raise AssertionError(f"unhandled loss kind {spec.kind!r}")


def _require_positive_counts(dist, what):
    if dist.zero_classes:
        raise ValueError(
            f"class {dist.zero_classes[0]} has zero samples; {what} divides by class counts"
        )


def _scale_by(values, grads, sample_weights):
    values *= sample_weights
    grads *= sample_weights[:, None]


def _log_softmax(z):
    shifted = z - np.max(z, axis=1, keepdims=True)
    with np.errstate(divide="ignore"):  # exp(-inf) = 0 for seql-masked entries
        return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def _softmax_ce(z, y):
    logp = _log_softmax(z)
    rows = np.arange(z.shape[0])
    values = -logp[rows, y]
    grads = np.exp(logp)
    grads[rows, y] -= 1.0
    return values, grads


def _focal(z, y, alpha, gamma):
    logp = _log_softmax(z)
    p = np.exp(logp)
    rows = np.arange(z.shape[0])
    pt = p[rows, y]
    logpt = logp[rows, y]
    one_minus = 1.0 - pt
    mod = one_minus ** gamma
    values = -alpha * mod * logpt
    # d(values)/d(pt) * pt, written without dividing by pt
    coeff = -alpha * mod
    if gamma > 0:
        dmod = np.zeros_like(pt)
        pos = one_minus > 0
        dmod[pos] = one_minus[pos] ** (gamma - 1.0)
        coeff = coeff + alpha * gamma * dmod * logpt * pt
    grads = -coeff[:, None] * p
    grads[rows, y] += coeff
    return values, grads


def _sigmoid_logp(z):
    # log sigma(z) = -softplus(-z), computed stably
    return -(np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z))))


def _bce(z, t):
    values = np.sum(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z))), axis=1)
    grads = 1.0 / (1.0 + np.exp(-z)) - t
    return values, grads


def _focal_bce(z, t, gamma):
    logpt = np.where(t > 0, _sigmoid_logp(z), _sigmoid_logp(-z))
    pt = np.exp(logpt)
    one_minus = 1.0 - pt
    mod = one_minus ** gamma
    values = np.sum(-mod * logpt, axis=1)
    # d/dz of one class term, using dpt/dz = (2t-1) * pt * (1-pt)
    inner = -one_minus
    if gamma > 0:
        inner = inner + gamma * logpt * pt
    grads = (2.0 * t - 1.0) * mod * inner
    return values, grads
