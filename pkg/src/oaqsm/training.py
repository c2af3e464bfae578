"""Self-supervised sample synthesis, composite loss, Adam and the training driver.

Every training input is made on the fly from a susceptibility label: draw an
orientation, compute the local field, add an exterior background field and
evolve/wrap the phase.  All randomness is derived from ``TrainConfig.seed``
through :mod:`oaqsm.rng`, so a sample is a pure function of
``(label, seed, config)``.

Training configuration files are ``key = value`` lines::

    epochs = 30
    batch_size = 4
    lam = 0.1
    lr_stages = 12:1e-3, 12:1e-4, 6:1e-5     # epoch span : rate
    patch = 32
    n_phantoms = 16
    seed = 0
    kind = iqsm                              # or xqsm
    oalfe = on
    orientation_mode = full-sphere           # or fixed-axial
    levels = 2
    base = 8
    b0_choices = 3, 7
    te_range = 0.005, 0.030
    background = on
    lesion_fraction = 0.5
    init_std = he                            # or a Gaussian std for every parameter

When ``lr_stages`` is omitted the epochs are split 40/40/20 % over rates
1e-3, 1e-4 and 1e-5.
"""

import csv
import os
from dataclasses import dataclass, field, fields
from typing import Optional, Tuple

import numpy as np

from . import rng as rngmod
from .metrics import erode, hfen, nrmse, roi_stats, ssim
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.lot_layer import lot_inv_scale
from .nn.network import build_backbone, network_backward, network_forward
from .phantom import generate_phantom, random_spec, sphere_mask
from .physics import (AXIAL, apply_kspace, background_field, dipole_kernel, forward_field,
                      phase_evolve, sample_orientation, wrap_phase)
from .volume import AcquisitionMeta, Volume3, as_array, check_orientation

ORIENTATION_MODES = ("full-sphere", "fixed-axial")
DEFAULT_RATES = (1e-3, 1e-4, 1e-5)
LOG_FIELDS = ("epoch", "step", "mse", "model_loss", "total")


class NonFiniteLossError(ArithmeticError):
    pass


def default_stages(epochs, rates=DEFAULT_RATES):
    """Split ``epochs`` 40/40/20 % over ``rates`` (every stage gets >= 1 epoch when possible)."""
    a = max(1, round(0.4 * epochs)) if epochs >= 3 else 1
    b = max(1, round(0.4 * epochs)) if epochs >= 3 else (1 if epochs >= 2 else 0)
    c = epochs - a - b
    return tuple((n, r) for n, r in zip((a, b, c), rates) if n > 0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lam: float = 0.1
    lr_stages: Tuple[Tuple[int, float], ...] = ()
    patch: int = 32
    n_phantoms: int = 16
    seed: int = 0
    kind: str = "iqsm"
    oalfe: bool = True
    orientation_mode: str = "full-sphere"
    levels: int = 2
    base: int = 8
    b0_choices: Tuple[float, ...] = (3.0, 7.0)
    te_range: Tuple[float, float] = (0.005, 0.030)
    background: bool = True
    lesion_fraction: float = 0.5
    init_std: Optional[float] = None

    def __post_init__(self):
        if not self.lr_stages:
            object.__setattr__(self, "lr_stages", default_stages(self.epochs))
        stages = tuple((int(n), float(r)) for n, r in self.lr_stages)
        object.__setattr__(self, "lr_stages", stages)
        if self.epochs < 1 or self.batch_size < 1 or self.n_phantoms < 1:
            raise ValueError("epochs, batch_size and n_phantoms must be positive")
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if sum(n for n, _ in stages) != self.epochs:
            raise ValueError(f"learning-rate stages {stages} do not cover {self.epochs} epochs")
        if any(n < 1 or not r > 0 for n, r in stages):
            raise ValueError(f"invalid learning-rate stages {stages}")
        if self.orientation_mode not in ORIENTATION_MODES:
            raise ValueError(f"orientation_mode must be one of {ORIENTATION_MODES}")
        if self.patch % 2**self.levels:
            raise ValueError(f"patch {self.patch} not divisible by 2**levels")
        if not self.b0_choices or min(self.b0_choices) <= 0:
            raise ValueError("b0_choices must be positive")
        lo, hi = self.te_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid te_range {self.te_range}")
        if not 0 <= self.lesion_fraction <= 1:
            raise ValueError("lesion_fraction must lie in [0, 1]")

    def lr_at(self, epoch):
        start = 0
        for n, r in self.lr_stages:
            if epoch < start + n:
                return r
            start += n
        raise ValueError(f"epoch {epoch} beyond schedule")


def _onoff(s):
    s = s.strip().lower()
    if s in ("on", "true", "yes", "1"):
        return True
    if s in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {s!r}")


def _nums(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _init_std(s):
    s = s.strip().lower()
    return None if s == "he" else float(s)


def _stages(s):
    out = []
    for part in s.split(","):
        n, r = part.split(":")
        out.append((int(n), float(r)))
    return tuple(out)


_PARSERS = {
    "epochs": int, "batch_size": int, "lam": float, "lr_stages": _stages, "patch": int,
    "n_phantoms": int, "seed": int, "kind": str.strip, "oalfe": _onoff,
    "orientation_mode": str.strip, "levels": int, "base": int, "b0_choices": _nums,
    "te_range": _nums, "background": _onoff, "lesion_fraction": float, "init_std": _init_std,
}


def parse_train_config(text):
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            kw[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return TrainConfig(**kw)


def load_train_config(path):
    with open(path) as f:
        return parse_train_config(f.read())


def format_train_config(cfg):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "lr_stages":
            s = ", ".join(f"{n}:{r:g}" for n, r in v)
        elif v is None:
            s = "he"
        elif isinstance(v, bool):
            s = "on" if v else "off"
        elif isinstance(v, tuple):
            s = ", ".join(f"{x:g}" for x in v)
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"


# samples ---------------------------------------------------------------------

@dataclass
class TrainingSample:
    phase: Volume3
    orientation: np.ndarray
    meta: AcquisitionMeta
    label: Volume3
    local: Volume3
    mask: np.ndarray
    seed: int

    def __post_init__(self):
        ph = self.phase.data
        if np.any(ph < -np.pi) or np.any(ph >= np.pi):
            raise ValueError("wrapped phase must lie in [-pi, pi)")


def simulate(label, mask, p, meta, rng=None, background=True):
    """Forward-simulate one acquisition of ``label`` at orientation ``p``.

    The wrapped phase is observed inside ``mask`` only (zero outside).
    """
    chi = as_array(label)
    mask = as_array(mask).astype(bool)
    if not mask.any():
        raise ValueError("mask is empty")
    if np.any(chi[~mask] != 0):
        raise ValueError("label must vanish outside the mask")
    p = check_orientation(p)
    vs = meta.voxel_size
    local = forward_field(chi, p, vs)
    total = local
    if background:
        total = local + background_field(mask, rng, p=p, voxel_size=vs)
    phase = wrap_phase(phase_evolve(total, meta)) * mask
    # -0.0 from the product is still inside [-pi, pi)
    return phase, local


def sample_acquisition(cfg, rng):
    """Draw ``(p, meta)`` from the configured orientation mode and B0 / TE ranges."""
    if cfg.orientation_mode == "fixed-axial":
        p = AXIAL.copy()
    else:
        p = sample_orientation(rng)
    b0 = float(cfg.b0_choices[rng.integers(len(cfg.b0_choices))])
    te = float(rng.uniform(*cfg.te_range))
    return p, b0, te


def make_sample(label, mask, cfg, seed, voxel_size=(1.0, 1.0, 1.0)):
    """Synthesize one training sample; ``seed`` alone fixes every random draw."""
    gen = rngmod.stream(seed)
    p, b0, te = sample_acquisition(cfg, gen)
    meta = AcquisitionMeta(b0, te, p, voxel_size)
    phase, local = simulate(label, mask, p, meta, gen, cfg.background)
    return TrainingSample(Volume3(phase, voxel_size), meta.orientation, meta,
                          Volume3(as_array(label), voxel_size), Volume3(local, voxel_size),
                          as_array(mask).astype(bool), int(seed))


def network_input(kind, sample):
    """``(x, inv_scale)`` fed to the backbone for one sample."""
    if kind == "iqsm":
        return sample.phase.data, lot_inv_scale(sample.meta)
    return sample.local.data * sample.mask, None


def batch_input(kind, samples):
    xs, scales = zip(*(network_input(kind, s) for s in samples))
    x = np.stack(xs)
    p = np.stack([s.orientation for s in samples])
    inv = None if kind == "xqsm" else np.array(scales)
    return x, p, inv


# loss and optimizer -------------------------------------------------------------

def loss(pred, samples, lam=0.1):
    """Composite loss ``mean_b ||y - yhat||^2 + lam ||D_p*(y - yhat)||^2``.

    ``pred`` is ``(N, X, Y, Z)``.  Returns ``(total, grad, (mse, model))``
    where ``mse`` and ``model`` are the batch means of the two terms.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim == 3:
        pred = pred[None]
    if pred.shape[0] != len(samples):
        raise ValueError(f"{pred.shape[0]} predictions for {len(samples)} samples")
    n = len(samples)
    grad = np.empty_like(pred)
    mse = model = 0.0
    for b, s in enumerate(samples):
        if pred[b].shape != s.label.dims:
            raise ValueError(f"prediction {pred[b].shape} vs label {s.label.dims}")
        r = pred[b] - s.label.data
        d = dipole_kernel(r.shape, s.orientation, s.label.voxel_size)
        fr = apply_kspace(r, d)
        mse += float(np.sum(r * r))
        model += float(np.sum(fr * fr))
        # the dipole convolution is self-adjoint
        grad[b] = (2.0 / n) * (r + lam * apply_kspace(fr, d))
    mse /= n
    model /= n
    return mse + lam * model, grad, (mse, model)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, 0)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place.  Returns ``(params, state)``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not state.m:
        state.m = {k: np.zeros_like(v) for k, v in params.items()}
        state.v = {k: np.zeros_like(v) for k, v in params.items()}
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k, w in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# labels and the driver ------------------------------------------------------------

@dataclass
class Label:
    chi: np.ndarray
    mask: np.ndarray
    lesion: Optional[np.ndarray] = None


def make_label_set(cfg):
    """``n_phantoms`` random phantoms; the first ``lesion_fraction`` of them carry a lesion."""
    dims = (cfg.patch,) * 3
    n_les = int(round(cfg.lesion_fraction * cfg.n_phantoms))
    out = []
    for i in range(cfg.n_phantoms):
        gen = rngmod.stream(cfg.seed, rngmod.PHANTOM, i)
        spec = random_spec(dims, gen, lesion=i < n_les)
        chi, mask = generate_phantom(spec, gen)
        les = None
        if spec.lesion is not None:
            les = sphere_mask(dims, spec.lesion.center, spec.lesion.radius) & (mask > 0)
        out.append(Label(chi, mask, les))
    return out


def _adam_tensors(state, epoch):
    out = {"adam.t": np.array([state.t], float), "train.epoch": np.array([epoch], float)}
    for k in state.m:
        out[f"adam.m.{k}"] = state.m[k]
        out[f"adam.v.{k}"] = state.v[k]
    return out


def _adam_from(extra, params):
    if "adam.t" not in extra:
        return AdamState.zeros_like(params), 0
    st = AdamState({k: extra[f"adam.m.{k}"] for k in params},
                   {k: extra[f"adam.v.{k}"] for k in params}, int(extra["adam.t"][0]))
    return st, int(extra["train.epoch"][0])


def _read_log(path, before_epoch):
    if not os.path.exists(path):
        return []
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return [r for r in rows if int(r["epoch"]) < before_epoch]


def _write_log(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if k not in ("epoch", "step") else int(r[k]))
                        for k in LOG_FIELDS})


def train(labels, cfg, checkpoint=None, log=None, resume=False, progress=None):
    """Train a backbone on ``labels`` (list of :class:`Label`).

    Every epoch reshuffles the labels; every batch element gets a fresh
    sample seed, hence a fresh orientation and acquisition.  When
    ``checkpoint`` is given it is rewritten after each epoch together with
    the Adam state, so ``resume=True`` continues an interrupted run on the
    same trajectory.  Returns ``(net, rows)`` with one log row per step.
    """
    if not labels:
        raise ValueError("need at least one label volume")
    start = 0
    if resume:
        if checkpoint is None or not os.path.exists(checkpoint):
            raise FileNotFoundError(f"no checkpoint to resume from: {checkpoint}")
        net, extra = load_checkpoint(checkpoint)
        state, start = _adam_from(extra, net.params)
    else:
        net = build_backbone(cfg.kind, cfg.levels, cfg.base, cfg.oalfe, cfg.seed,
                             init_std=cfg.init_std)
        state = AdamState.zeros_like(net.params)
    rows = _read_log(log, start) if (resume and log) else []
    nb = -(-len(labels) // cfg.batch_size)
    for epoch in range(start, cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rngmod.stream(cfg.seed, rngmod.SHUFFLE, epoch).permutation(len(labels))
        for step in range(nb):
            idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            samples = [make_sample(labels[i].chi, labels[i].mask, cfg,
                                   rngmod.derive_seed(cfg.seed, rngmod.SAMPLE, epoch, step, j))
                       for j, i in enumerate(idx)]
            x, p, inv = batch_input(cfg.kind, samples)
            pred, cache = network_forward(net, x, p if cfg.oalfe else None, inv)
            total, dpred, (mse, model) = loss(pred, samples, cfg.lam)
            if not np.isfinite(total):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} step {step} "
                    f"(sample seeds {[s.seed for s in samples]})")
            grads = network_backward(net, cache, dpred)
            adam_step(net.params, grads, state, lr)
            rows.append({"epoch": epoch, "step": step, "mse": mse, "model_loss": model,
                         "total": total})
            if progress:
                progress(rows[-1])
        if checkpoint is not None:
            save_checkpoint(checkpoint, net, _adam_tensors(state, epoch + 1))
        if log is not None:
            _write_log(log, rows)
    return net, rows


def predict(net, x, p=None, inv_scale=None):
    """Single-volume inference; returns the ``(X, Y, Z)`` susceptibility map."""
    out, _ = network_forward(net, np.asarray(x)[None], None if p is None else np.asarray(p)[None],
                             None if inv_scale is None else np.array([inv_scale]))
    return out[0]


# orientation sweep ---------------------------------------------------------------

SWEEP_CONVENTIONS = ("literal", "tilt90")


def sweep_orientations(convention="literal", n_angles=10):
    """``p_n = [0, sin(n a), cos(n a)]`` with ``a = pi/9`` (literal) or ``pi/18`` (tilt90)."""
    if convention not in SWEEP_CONVENTIONS:
        raise ValueError(f"convention must be one of {SWEEP_CONVENTIONS}")
    step = np.pi / 9 if convention == "literal" else np.pi / 18
    return [(n, np.array([0.0, np.sin(n * step), np.cos(n * step)])) for n in range(n_angles)]


def orientation_sweep_eval(method, label, convention="literal", b0=3.0, te=0.02, seed=0,
                           background=True, erosion=2, voxel_size=(1.0, 1.0, 1.0)):
    """Per-angle metrics for ``method`` on one phantom.

    ``method(sample) -> chi_hat`` reconstructs a :class:`TrainingSample`;
    see :func:`net_method` and :func:`classical_method`.  The background
    sources are drawn once per phantom and reused at every angle.
    """
    chi, mask = label.chi, label.mask.astype(bool)
    em = erode(mask, erosion)
    rows = []
    for n, p in sweep_orientations(convention):
        meta = AcquisitionMeta(b0, te, p, voxel_size)
        gen = rngmod.stream(seed, rngmod.EVAL)
        phase, local = simulate(chi, mask, p, meta, gen, background)
        s = TrainingSample(Volume3(phase, voxel_size), meta.orientation, meta,
                           Volume3(chi, voxel_size), Volume3(local, voxel_size), mask, seed)
        est = method(s)
        row = {"n": n, "angle_deg": float(np.degrees(np.arccos(np.clip(p[2], -1, 1)))),
               "px": float(p[0]), "py": float(p[1]), "pz": float(p[2]),
               "nrmse": nrmse(est, chi, em), "ssim": ssim(est, chi, em), "hfen": hfen(est, chi, em)}
        if label.lesion is not None and label.lesion.any():
            row["lesion_mean"] = roi_stats(est, label.lesion)[0]
        rows.append(row)
    return rows


def net_method(net, orientation=None):
    """Reconstruction callable for a trained network (``orientation`` overrides the true p)."""
    kind = net.config.kind

    def run(sample):
        x, inv = network_input(kind, sample)
        p = sample.orientation if orientation is None else np.asarray(orientation, float)
        return predict(net, x, p if net.config.oalfe else None, inv)
    return run


def classical_method(solver, cfg=None):
    """Wrap a classical solver taking ``(field, p, cfg, voxel_size)``; input is the masked local field."""
    from .classical import InversionConfig

    cfg = cfg or InversionConfig()

    def run(sample):
        return solver(sample.local.data * sample.mask, sample.orientation, cfg,
                      sample.local.voxel_size) * sample.mask
    return run


def spread(rows, key="nrmse"):
    vals = [r[key] for r in rows]
    return max(vals) - min(vals)
