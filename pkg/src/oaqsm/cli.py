"""``oaqsm`` command line: simulate, train, recon, eval, sweep, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

Every volume written by the tool gets a ``<file>.meta`` sidecar of
``key = value`` lines.  The ``kind`` key (chi, field, phase, mask, rois)
tells ``recon`` what a file holds; reconstructions add their provenance
(method, parameters, orientation used) to the same sidecar.
"""

import argparse
import os
import sys

import numpy as np

from . import rng as rngmod
from .classical import (DivergenceError, InversionConfig, cg_normal_solve, tikhonov_inversion,
                        tkd_inversion)
from .metrics import DEFAULT_EROSION, evaluate, format_table, rows_to_csv
from .nn.checkpoint import CheckpointError, load_checkpoint
from .nn.lot_layer import lot_inv_scale
from .operators import laplacian_multiplier
from .phantom import default_spec, generate_phantom, load_phantom_config, sphere_mask
from .physics import (apply_kspace, background_field, forward_field, phase_evolve,
                      random_orientation, wrap_phase)
from .qvol import QvolError, read_qvol, write_qvol
from .training import (SWEEP_CONVENTIONS, Label, NonFiniteLossError, classical_method,
                       load_train_config, net_method, orientation_sweep_eval, predict, train,
                       make_label_set)
from .volume import AcquisitionMeta, Volume3, normalize_orientation

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
NORM_SLACK = 0.01
INPUT_KINDS = ("field", "lot", "phase")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


# argument helpers ------------------------------------------------------------------

def _floats(text, n, what):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what} must be {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what} must be {n} comma-separated numbers, got {text!r}")
    return np.array(vals)


def parse_orientation(text):
    """Unit vector from ``px,py,pz``; within 1 % of unit norm is renormalized with a warning."""
    p = _floats(text, 3, "orientation")
    norm = float(np.linalg.norm(p))
    if norm == 0 or not np.isfinite(norm):
        raise UsageError("orientation must be a nonzero finite vector")
    if abs(norm - 1.0) > NORM_SLACK:
        raise UsageError(f"orientation norm {norm:.6g} is not within 1% of unit length")
    if abs(norm - 1.0) > 1e-9:
        warn(f"orientation {text} has norm {norm:.6g}; renormalized")
    return normalize_orientation(p)


def parse_angles(text):
    """``theta,phi`` in degrees (polar angle from B0, azimuth)."""
    theta, phi = _floats(text, 2, "angles")
    try:
        return random_orientation(np.radians(theta), np.radians(phi))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _onoff(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


# sidecars ---------------------------------------------------------------------

def sidecar_path(path):
    return os.fspath(path) + ".meta"


def write_sidecar(path, items):
    with open(sidecar_path(path), "w") as f:
        for k, v in items.items():
            f.write(f"{k} = {v}\n")


def read_sidecar(path):
    sp = sidecar_path(path)
    if not os.path.exists(sp):
        return {}
    out = {}
    with open(sp) as f:
        for line in f:
            if "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
    return out


def _fmt_vec(p):
    return ",".join(f"{float(v):.9g}" for v in p)


def _read(path):
    try:
        return read_qvol(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except QvolError as exc:
        raise DataError(f"{path}: {exc}") from None


def _write(path, data, meta, kind, extra=None):
    write_qvol(path, Volume3(data, meta.voxel_size if meta else (1.0, 1.0, 1.0)), meta)
    items = {"kind": kind}
    items.update(extra or {})
    write_sidecar(path, items)


# commands -------------------------------------------------------------------------

def cmd_simulate(args):
    if args.orientation is not None and args.angles is not None:
        raise UsageError("give either --orientation or --angles, not both")
    if args.angles is not None:
        p = parse_angles(args.angles)
    else:
        p = parse_orientation(args.orientation or "0,0,1")
    if args.phantom:
        try:
            spec = load_phantom_config(args.phantom)
        except (OSError, ValueError) as exc:
            raise DataError(f"phantom config: {exc}") from None
    else:
        spec = default_spec((64, 64, 64), lesion=True, random_primitives=10)
    try:
        meta = AcquisitionMeta(args.b0, args.te, p, spec.voxel_size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        chi, mask = generate_phantom(spec, rngmod.stream(args.seed, rngmod.PHANTOM))
    except ValueError as exc:
        raise DataError(f"phantom: {exc}") from None
    vs = spec.voxel_size
    local = forward_field(chi, p, vs)
    total = local
    if args.background:
        total = local + background_field(mask, rngmod.stream(args.seed, rngmod.SAMPLE), p=p,
                                         voxel_size=vs)
    phase = wrap_phase(phase_evolve(total, meta)) * mask
    rois = np.zeros(chi.shape)
    for i, prim in enumerate(spec.primitives):
        rois[prim.voxels(chi.shape) & (mask > 0)] = i + 2
    if spec.lesion is not None:
        rois[sphere_mask(chi.shape, spec.lesion.center, spec.lesion.radius) & (mask > 0)] = 1
    os.makedirs(args.out, exist_ok=True)
    prov = {"seed": args.seed, "orientation": _fmt_vec(meta.orientation), "b0": args.b0,
            "te": args.te, "background": "on" if args.background else "off"}
    _write(os.path.join(args.out, "chi.qvol"), chi, meta, "chi", prov)
    _write(os.path.join(args.out, "localfield.qvol"), local * mask, meta, "field", prov)
    _write(os.path.join(args.out, "phase_wrapped.qvol"), phase, meta, "phase", prov)
    _write(os.path.join(args.out, "mask.qvol"), mask, meta, "mask", prov)
    _write(os.path.join(args.out, "rois.qvol"), rois, meta, "rois",
           {"labels": "1=lesion, k>=2=primitive k-2"})
    print(f"wrote {args.out}: dims {chi.shape}, p = [{_fmt_vec(meta.orientation)}]")
    return EXIT_OK


def cmd_train(args):
    try:
        cfg = load_train_config(args.config)
    except OSError as exc:
        raise DataError(f"config: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"config: {exc}") from None
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    log = args.log or os.path.splitext(args.out)[0] + ".csv"
    labels = make_label_set(cfg)

    def progress(row):
        if not args.quiet:
            print(f"epoch {row['epoch']} step {row['step']} loss {row['total']:.6g}",
                  file=sys.stderr)

    try:
        train(labels, cfg, checkpoint=args.out, log=log, resume=args.resume, progress=progress)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    except CheckpointError as exc:
        raise DataError(f"checkpoint: {exc}") from None
    print(f"wrote {args.out} and {log}")
    return EXIT_OK


def _input_kind(args, path):
    kind = args.kind or read_sidecar(path).get("kind")
    if kind is None:
        raise UsageError(f"cannot tell what {path} holds; pass --kind")
    if kind not in INPUT_KINDS:
        raise DataError(f"{path} holds '{kind}', not a reconstructable input {INPUT_KINDS}")
    return kind


def cmd_recon(args):
    vol, meta = _read(args.inp)
    kind = _input_kind(args, args.inp)
    data = vol.data
    if args.orientation is not None:
        p = parse_orientation(args.orientation)
        source = "override"
    elif meta is not None and meta.orientation is not None:
        p = meta.orientation
        source = "header"
    else:
        raise DataError("no orientation in the header; pass --orientation")
    vs = vol.voxel_size
    params = {}
    if args.method == "net":
        if not args.checkpoint:
            raise UsageError("--method net needs --checkpoint")
        try:
            net, _ = load_checkpoint(args.checkpoint)
        except (OSError, CheckpointError) as exc:
            raise DataError(f"checkpoint: {exc}") from None
        want = "phase" if net.config.kind == "iqsm" else "field"
        if kind != want:
            raise DataError(f"{net.config.kind} network takes a {want} input, got '{kind}'")
        inv = None
        if want == "phase":
            if meta is None or meta.b0 is None or meta.te is None:
                raise DataError("phase input needs B0 and TE in its header")
            inv = lot_inv_scale(AcquisitionMeta(meta.b0, meta.te, None, vs))
        f = 2**net.config.levels
        if any(s % f for s in data.shape):
            raise DataError(f"dims {data.shape} must be divisible by {f} for this network")
        chi = predict(net, data, p if net.config.oalfe else None, inv)
        params = {"checkpoint": os.path.abspath(args.checkpoint), "backbone": net.config.kind,
                  "oalfe": "on" if net.config.oalfe else "off"}
    else:
        if kind == "phase":
            raise DataError(f"{args.method} takes a local field or LoT input, not wrapped phase")
        cfg = InversionConfig(tkd_threshold=args.threshold, tikhonov_lambda=args.lam,
                              cg_max_iters=args.iters, cg_tolerance=args.tol)
        if args.method == "cg":
            chi, rep = cg_normal_solve(data, p, cfg, "dipole" if kind == "field" else "Ap", vs)
            params = {"lambda": args.lam, "iterations": rep.iterations,
                      "converged": rep.converged, "operator": "dipole" if kind == "field" else "Ap"}
        else:
            field = data
            if kind == "lot":
                # back to the field domain: inverse spectral Laplacian, DC set to zero
                lap = laplacian_multiplier(data.shape, vs)
                inv_lap = np.zeros_like(lap)
                nz = lap != 0
                inv_lap[nz] = 1.0 / lap[nz]
                field = apply_kspace(data, inv_lap)
            if args.method == "tkd":
                chi = tkd_inversion(field, p, cfg, vs)
                params = {"threshold": args.threshold}
            else:
                chi = tikhonov_inversion(field, p, cfg, vs)
                params = {"lambda": args.lam}
    if args.mask:
        m, _ = _read(args.mask)
        if m.dims != vol.dims:
            raise DataError(f"mask dims {m.dims} do not match input {vol.dims}")
        chi = chi * (m.data > 0)
    if not np.all(np.isfinite(chi)):
        raise ArithmeticError("reconstruction is not finite")
    out_meta = AcquisitionMeta(meta.b0 if meta else None, meta.te if meta else None, p, vs)
    prov = {"method": args.method, "input": os.path.abspath(args.inp), "input_kind": kind,
            "orientation": _fmt_vec(p), "orientation_source": source}
    prov.update(params)
    _write(args.out, chi, out_meta, "chi", prov)
    print(f"wrote {args.out} ({args.method}, p = [{_fmt_vec(p)}] from {source})")
    return EXIT_OK


def cmd_eval(args):
    pred, _ = _read(args.pred)
    truth, _ = _read(args.truth)
    mask, _ = _read(args.mask)
    if not (pred.dims == truth.dims == mask.dims):
        raise DataError(f"dims mismatch: pred {pred.dims}, truth {truth.dims}, mask {mask.dims}")
    rois = {}
    if args.rois:
        r, _ = _read(args.rois)
        if r.dims != pred.dims:
            raise DataError(f"ROI dims {r.dims} do not match {pred.dims}")
        for lab in np.unique(r.data):
            if lab > 0:
                name = "lesion" if lab == 1 else f"roi{int(lab)}"
                rois[name] = r.data == lab
    try:
        rep = evaluate(pred.data, truth.data, mask.data > 0, args.erosion, rois)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    rows = [rep.row()]
    _write_text(args.out, rows_to_csv(rows))
    print(format_table(rows))
    return EXIT_OK


def _write_text(path, text):
    with open(path, "w") as f:
        f.write(text)


def cmd_sweep(args):
    if args.phantom:
        try:
            spec = load_phantom_config(args.phantom)
        except (OSError, ValueError) as exc:
            raise DataError(f"phantom config: {exc}") from None
    else:
        spec = default_spec((32, 32, 32), margin=4, lesion=True, random_primitives=8)
    try:
        chi, mask = generate_phantom(spec, rngmod.stream(args.seed, rngmod.PHANTOM))
    except ValueError as exc:
        raise DataError(f"phantom: {exc}") from None
    lesion = None
    if spec.lesion is not None:
        lesion = sphere_mask(chi.shape, spec.lesion.center, spec.lesion.radius) & (mask > 0)
    label = Label(chi, mask, lesion)
    if args.method == "net":
        if not args.checkpoint:
            raise UsageError("--method net needs --checkpoint")
        try:
            net, _ = load_checkpoint(args.checkpoint)
        except (OSError, CheckpointError) as exc:
            raise DataError(f"checkpoint: {exc}") from None
        f = 2**net.config.levels
        if any(s % f for s in chi.shape):
            raise DataError(f"phantom dims {chi.shape} must be divisible by {f}")
        method = net_method(net)
    else:
        solver = {"tkd": tkd_inversion, "tikhonov": tikhonov_inversion}[args.method]
        method = classical_method(solver, InversionConfig(tkd_threshold=args.threshold,
                                                          tikhonov_lambda=args.lam))
    conventions = SWEEP_CONVENTIONS if args.convention == "both" else (args.convention,)
    rows = []
    for conv in conventions:
        for r in orientation_sweep_eval(method, label, conv, b0=args.b0, te=args.te,
                                        seed=args.seed, background=args.background,
                                        voxel_size=spec.voxel_size):
            rows.append({"convention": conv, **r})
    _write_text(args.out, rows_to_csv(rows))
    print(format_table(rows))
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_all

    results = run_all(args.seed, include_network=not args.skip_network)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.error:.3e}  tol {r.tol:.0e}  {'ok' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def build_parser():
    ap = _Parser(prog="oaqsm", description="Orientation-adaptive QSM toolkit.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="simulate chi, local field and wrapped phase")
    s.add_argument("--phantom", help="phantom config file (default: built-in 64^3 phantom)")
    s.add_argument("--orientation", help="px,py,pz (default 0,0,1)")
    s.add_argument("--angles", help="theta,phi in degrees")
    s.add_argument("--b0", type=float, default=3.0, help="field strength in T")
    s.add_argument("--te", type=float, default=0.02, help="echo time in s")
    s.add_argument("--background", type=_onoff, default=True, help="on|off")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a backbone from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="checkpoint path (.qckpt)")
    t.add_argument("--log", help="loss CSV (default: checkpoint path with .csv)")
    t.add_argument("--resume", action="store_true", help="continue from --out")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("recon", help="reconstruct susceptibility")
    r.add_argument("--method", required=True, choices=("tkd", "tikhonov", "cg", "net"))
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--checkpoint")
    r.add_argument("--orientation", help="override the header orientation")
    r.add_argument("--kind", choices=INPUT_KINDS, help="input kind when no sidecar says")
    r.add_argument("--mask", help="multiply the result by this mask")
    r.add_argument("--threshold", type=float, default=0.2, help="TKD threshold")
    r.add_argument("--lam", type=float, default=1e-2, help="Tikhonov / CG lambda")
    r.add_argument("--iters", type=int, default=100, help="CG iteration cap")
    r.add_argument("--tol", type=float, default=1e-6, help="CG relative tolerance")
    r.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    r.set_defaults(func=cmd_recon)

    e = sub.add_parser("eval", help="NRMSE / SSIM / HFEN report")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--mask", required=True)
    e.add_argument("--rois")
    e.add_argument("--out", required=True)
    e.add_argument("--erosion", type=int, default=DEFAULT_EROSION)
    e.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="10-angle orientation sweep")
    w.add_argument("--checkpoint")
    w.add_argument("--method", default="net", choices=("net", "tkd", "tikhonov"))
    w.add_argument("--phantom", help="phantom config (default: built-in 32^3 phantom)")
    w.add_argument("--convention", default="both", choices=SWEEP_CONVENTIONS + ("both",))
    w.add_argument("--b0", type=float, default=3.0)
    w.add_argument("--te", type=float, default=0.02)
    w.add_argument("--background", type=_onoff, default=True)
    w.add_argument("--threshold", type=float, default=0.2)
    w.add_argument("--lam", type=float, default=1e-2)
    w.add_argument("--out", required=True)
    w.add_argument("--seed", type=int, default=0)
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gradcheck", help="finite-difference checks of every backward pass")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--skip-network", action="store_true", help="layers only (fast)")
    g.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"oaqsm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"oaqsm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLossError, DivergenceError, ArithmeticError, FloatingPointError) as exc:
        print(f"oaqsm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
