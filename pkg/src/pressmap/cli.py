"""Command-line entry point.

Subcommands: ``gen`` (synthetic dataset), ``stats`` (loss normalization),
``train`` / ``train-ws`` (supervised and weakly-supervised loops), ``eval``
(grouped metric reports), ``project`` (2D <-> 3D pressure projection plus a
colored ASCII mesh export), and ``gradcheck`` (the finite-difference suite).

All human-readable inputs and outputs are JSON; tensors are PMT1 files.
Every command is deterministic given its config and seed; exit code is 0
iff the command succeeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import pmt1
from .body_model import (
    PosedMesh,
    build_neighbor_table,
    generate_toy_model,
    load_model,
)
from .errors import ConfigInvalid, PressmapError
from .fim import FimToggles
from .gradcheck import run_suite
from .losses import NormStats, compute_stats
from .metrics import mean_report
from .network import (
    BodyMapNet,
    NetConfig,
    TrainConfig,
    evaluate_supervised,
    evaluate_ws,
    load_checkpoint,
    save_checkpoint,
    train_supervised,
    train_ws,
)
from .projection import (
    ImageGeometry,
    PressureImage,
    VertexPressureMap,
    project_gt,
    reproject_2d,
)
from .synth import (
    DEFAULT_PRESSURE_GEOM,
    GenConfig,
    generate_samples,
    load_dataset,
    save_dataset,
)

_TOGGLE_NAMES = ("xyz", "image", "latent", "global")


def _parse_toggles(text) -> FimToggles:
    """``--fim-toggles xyz,image`` -> FimToggles; ``all`` enables everything."""
    if text is None or text == "all":
        return FimToggles()
    names = [t for t in text.split(",") if t]
    for n in names:
        if n not in _TOGGLE_NAMES:
            raise ConfigInvalid(
                f"unknown FIM toggle '{n}' (choose from {', '.join(_TOGGLE_NAMES)})")
    return FimToggles(use_xyz="xyz" in names, use_image="image" in names,
                      use_latent="latent" in names, use_global="global" in names)


def _load_json(path):
    return json.loads(Path(path).read_text())


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _filter_samples(samples, entries, cover_filter, pose_filter):
    keep_s, keep_e = [], []
    for s, e in zip(samples, entries):
        if cover_filter and s.cover not in cover_filter:
            continue
        if pose_filter and s.pose_category not in pose_filter:
            continue
        keep_s.append(s)
        keep_e.append(e)
    return keep_s, keep_e


def _split_filter(text):
    return tuple(t for t in text.split(",") if t) if text else None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args):
    cfg_json = _load_json(args.config) if args.config else {}
    model_seed = int(cfg_json.pop("model_seed", 0))
    config = GenConfig.from_json(cfg_json)
    if args.seed is not None:
        config = GenConfig.from_json({**config.to_json(), "seed": args.seed})
    cover = _split_filter(args.cover_filter)
    pose = _split_filter(args.pose_filter)
    if cover or pose:
        config = GenConfig.from_json({
            **config.to_json(),
            "covers": list(cover) if cover else list(config.covers),
            "categories": list(pose) if pose else list(config.categories),
        })
    model = generate_toy_model(seed=model_seed)
    samples = generate_samples(model, config)
    save_dataset(args.out, model, samples, config)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_stats(args):
    _, samples, _ = load_dataset(args.dataset)
    stats = compute_stats(samples)
    _write_json(args.out, stats.to_json())
    print(f"wrote stats for {len(samples)} samples to {args.out}")
    return 0


def _train_configs(args):
    cfg = _load_json(args.config) if args.config else {}
    net_json = cfg.get("net", {})
    if args.fim_toggles is not None:
        net_json = {**net_json, "fim": _parse_toggles(args.fim_toggles).to_json()}
    defaults = NetConfig().to_json()
    net_cfg = NetConfig.from_json({**defaults, **net_json})
    train_cfg = TrainConfig.from_json(cfg.get("train", {}))
    if args.seed is not None:
        train_cfg = TrainConfig.from_json({**train_cfg.to_json(), "seed": args.seed})
    return net_cfg, train_cfg


def cmd_train(args):
    model, samples, _ = load_dataset(args.dataset)
    net_cfg, train_cfg = _train_configs(args)
    stats = compute_stats(samples)
    net = BodyMapNet(net_cfg, model, samples[0].pressure.geom)
    history = train_supervised(net, samples, stats, train_cfg)
    out = Path(args.out)
    save_checkpoint(net, out)
    _write_json(out / "history.json", {"loss": history,
                                       "train": train_cfg.to_json(),
                                       "stats": stats.to_json()})
    last = history[-1] if history else float("nan")
    print(f"trained {train_cfg.epochs} epochs; final mean loss {last:.6f}; "
          f"checkpoint at {out}")
    return 0


def cmd_train_ws(args):
    model, samples, _ = load_dataset(args.dataset)
    frozen_net = load_checkpoint(args.mesh_checkpoint, model)
    net_cfg, train_cfg = _train_configs(args)
    ws_net = BodyMapNet(net_cfg, model, samples[0].pressure.geom, ws_head=True)
    if args.resume:
        prev = load_checkpoint(args.resume, model)
        ws_net.load_state_arrays(prev.state_arrays())
    history = train_ws(ws_net, frozen_net, samples, train_cfg)
    out = Path(args.out)
    save_checkpoint(ws_net, out)
    _write_json(out / "history.json", {"loss": history,
                                       "train": train_cfg.to_json()})
    last = history[-1] if history else float("nan")
    print(f"trained WS head {train_cfg.epochs} epochs; final mean loss "
          f"{last:.6f}; checkpoint at {out}")
    return 0


def _flat_report(report):
    d = report.to_json()
    flat = {"mpjpe_mm": d["mpjpe_mm"], "pve_mm": d["pve_mm"],
            "v2vp_kpa2": d["v2vp_kpa2"], "v2vp_1ea_kpa2": d["v2vp_1ea_kpa2"],
            "v2vp_2ea_kpa2": d["v2vp_2ea_kpa2"]}
    for k, v in d["shape_err_cm"].items():
        flat[f"shape_{k}_cm"] = v
    for k, v in d["per_part_v2vp_kpa2"].items():
        flat[f"part_{k}_kpa2"] = v
    return flat


def cmd_eval(args):
    model, samples, manifest = load_dataset(args.dataset)
    entries = manifest["samples"]
    cover = _split_filter(args.cover_filter)
    pose = _split_filter(args.pose_filter)
    samples, entries = _filter_samples(samples, entries, cover, pose)
    if not samples:
        raise ConfigInvalid("filters selected zero samples")
    net = load_checkpoint(args.checkpoint, model)
    table = build_neighbor_table(model)
    if net.ws_head:
        if not args.mesh_checkpoint:
            raise ConfigInvalid("evaluating a WS checkpoint requires --mesh-checkpoint")
        frozen = load_checkpoint(args.mesh_checkpoint, model)
        reports = evaluate_ws(net, frozen, samples, table)
    else:
        reports = evaluate_supervised(net, samples, table)

    groups = {"overall": list(range(len(samples)))}
    if args.group_by:
        key = {"cover": lambda s: s.cover,
               "pose_category": lambda s: s.pose_category}[args.group_by]
        for i, s in enumerate(samples):
            groups.setdefault(key(s), []).append(i)

    out_json = {"n_samples": len(samples), "group_by": args.group_by,
                "groups": {}}
    for name, idx in groups.items():
        mean = mean_report([reports[i] for i in idx])
        out_json["groups"][name] = {"n": len(idx), **_flat_report(mean)}
    _write_json(args.out, out_json)

    if args.csv:
        rows = sorted(out_json["groups"])
        fields = ["group", "n"] + [k for k in out_json["groups"][rows[0]]
                                   if k != "n"]
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        with open(args.csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=fields)
            w.writeheader()
            for name in rows:
                w.writerow({"group": name, **out_json["groups"][name]})
    overall = out_json["groups"]["overall"]
    print(f"evaluated {len(samples)} samples: MPJPE {overall['mpjpe_mm']:.2f} mm, "
          f"v2vP {overall['v2vp_kpa2']:.4f} kPa^2 -> {args.out}")
    return 0


_COLORMAP = (
    # value fraction -> RGB; linear blue -> cyan -> yellow -> red ramp
    (0.00, (0, 0, 255)),
    (0.33, (0, 255, 255)),
    (0.66, (255, 255, 0)),
    (1.00, (255, 0, 0)),
)


def _colormap(frac):
    frac = float(np.clip(frac, 0.0, 1.0))
    for (f0, c0), (f1, c1) in zip(_COLORMAP, _COLORMAP[1:]):
        if frac <= f1:
            t = 0.0 if f1 == f0 else (frac - f0) / (f1 - f0)
            return tuple(int(round(a + t * (b - a))) for a, b in zip(c0, c1))
    return _COLORMAP[-1][1]


def export_colored_mesh(path, vertices, faces, scalars):
    """ASCII PLY with per-vertex colors from the blue->red ramp over
    [0, max(scalars)]."""
    vertices = np.asarray(vertices, dtype=np.float64)
    scalars = np.asarray(scalars, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64) if faces is not None else np.zeros((0, 3), np.int64)
    top = scalars.max() if scalars.size and scalars.max() > 0 else 1.0
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {len(vertices)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element face {len(faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for v, s in zip(vertices, scalars):
        r, g, b = _colormap(s / top)
        lines.append(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f} {r} {g} {b}")
    for f in faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_project(args):
    geom = (ImageGeometry.from_json(_load_json(args.geom)) if args.geom
            else DEFAULT_PRESSURE_GEOM)
    vertices = pmt1.read_tensor(args.vertices)
    faces = pmt1.read_tensor(args.faces) if args.faces else None
    mesh = PosedMesh(vertices=vertices, joints=np.zeros((1, 3)),
                     source_faces=faces if faces is not None
                     else np.zeros((0, 3), dtype=np.int64))
    if args.direction == "to3d":
        img = PressureImage(values=pmt1.read_tensor(args.pressure), geom=geom)
        vpm = project_gt(img, mesh, z_eps=args.z_eps)
        pmt1.write_tensor(args.out, vpm.pressure)
        scalars = vpm.pressure
    else:
        vpm = VertexPressureMap(pressure=pmt1.read_tensor(args.pressure))
        img = reproject_2d(vpm, mesh, geom)
        pmt1.write_tensor(args.out, img.values)
        scalars = vpm.pressure
    if args.mesh_export:
        export_colored_mesh(args.mesh_export, vertices,
                            faces if faces is not None else None, scalars)
    print(f"projected {args.direction} -> {args.out}")
    return 0


def cmd_gradcheck(args):
    report = run_suite(seed=args.seed if args.seed is not None else 0,
                       corrupt_vjp=args.corrupt_vjp)
    print(report.format())
    if args.out:
        _write_json(args.out, report.to_json())
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="pressmap",
        description="Body mesh + per-vertex pressure prediction on synthetic "
                    "in-bed scenes")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--config", help="GenConfig JSON (may include model_seed)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--cover-filter", help="comma list of cover modes")
    g.add_argument("--pose-filter", help="comma list of pose categories")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("stats", help="write loss-normalization stats")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="supervised training")
    t.add_argument("--dataset", required=True)
    t.add_argument("--config", help="JSON with 'net' and 'train' sections")
    t.add_argument("--seed", type=int)
    t.add_argument("--fim-toggles", help="comma list from xyz,image,latent,global")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    w = sub.add_parser("train-ws", help="weakly-supervised pressure training")
    w.add_argument("--dataset", required=True)
    w.add_argument("--mesh-checkpoint", required=True,
                   help="frozen pre-trained mesh network")
    w.add_argument("--config")
    w.add_argument("--seed", type=int)
    w.add_argument("--fim-toggles")
    w.add_argument("--resume", help="WS checkpoint to continue from")
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_train_ws)

    e = sub.add_parser("eval", help="metric report over a dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mesh-checkpoint", help="required for WS checkpoints")
    e.add_argument("--group-by", choices=("cover", "pose_category"))
    e.add_argument("--cover-filter")
    e.add_argument("--pose-filter")
    e.add_argument("--out", required=True)
    e.add_argument("--csv")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("project", help="project pressure 2D<->3D")
    pr.add_argument("--direction", choices=("to3d", "to2d"), required=True)
    pr.add_argument("--pressure", required=True,
                    help="PMT1: (R,C) image for to3d, (N_v,) map for to2d")
    pr.add_argument("--vertices", required=True, help="PMT1 (N_v,3)")
    pr.add_argument("--faces", help="PMT1 (N_f,3), for the mesh export")
    pr.add_argument("--geom", help="ImageGeometry JSON (default mat geometry)")
    pr.add_argument("--z-eps", type=float, default=0.01)
    pr.add_argument("--out", required=True)
    pr.add_argument("--mesh-export", help="write a colored ASCII PLY here")
    pr.set_defaults(func=cmd_project)

    gc = sub.add_parser("gradcheck", help="run the gradient suite")
    gc.add_argument("--seed", type=int)
    gc.add_argument("--corrupt-vjp", action="store_true",
                    help="fault injection: break one VJP; the suite must fail")
    gc.add_argument("--out", help="write the JSON report here")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PressmapError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
