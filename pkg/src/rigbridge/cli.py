"""Batch CLI: thin client over the service operations layer.

Every subcommand resolves its configuration (defaults < --config file <
flags), runs either in-process or against a running service (--server URL),
and prints a JSON report with the resolved config, its hash, timings and
results. Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericError, RigBridgeError, ValidationError
from .io import load_motion, load_obj, save_motion, save_obj
from .rig import MotionSequence
from .service import handlers as H
from .service import schemas as S


def _parse_kv(text: str, cast=float) -> dict:
    """'hands:5,feet:2' -> {'hands': 5.0, 'feet': 2.0}"""
    out = {}
    if not text:
        return out
    for item in text.split(","):
        key, _, value = item.partition(":")
        if not _:
            raise ValidationError(f"expected key:value, got '{item}'")
        out[key.strip()] = cast(value)
    return out


def _parse_schedule(text: str) -> dict:
    sched = {"body": 2, "finger": 1, "global": 1}
    for key, value in _parse_kv(text, cast=int).items():
        if key not in sched:
            raise ValidationError(f"unknown schedule stage '{key}'")
        sched[key] = value
    return sched


class Client:
    """Dispatches operations in-process or over HTTP, identically shaped."""

    def __init__(self, server: str | None):
        self.server = server
        if server:
            import httpx

            self.http = httpx.Client(base_url=server, timeout=600.0)
        else:
            self.ws = H.RigWorkspace()

    def _post(self, path: str, payload, response_model):
        resp = self.http.post(path, json=payload.model_dump() if payload else None)
        if resp.status_code >= 400:
            body = resp.json()
            name = body.get("error", "RigBridgeError")
            cls = NumericError if resp.status_code >= 500 else ValidationError
            raise cls(f"{name}: {body.get('detail', resp.text)}")
        return response_model.model_validate(resp.json())

    def synth(self, req: S.SynthRigRequest) -> S.RigSummary:
        if self.server:
            return self._post("/rigs/synth", req, S.RigSummary)
        return H.synth_rig(self.ws, req)

    def load(self, req: S.LoadRigRequest) -> S.RigSummary:
        if self.server:
            return self._post("/rigs/load", req, S.RigSummary)
        return H.load(self.ws, req)

    def fit_skeleton(self, rig_id: str, req: S.FitSkeletonRequest) -> S.FitSkeletonResponse:
        if self.server:
            return self._post(f"/rigs/{rig_id}/fit-skeleton", req, S.FitSkeletonResponse)
        return H.fit_skeleton_op(self.ws, rig_id, req)

    def pose(self, rig_id: str, req: S.PoseRequest) -> S.PoseResponse:
        if self.server:
            return self._post(f"/rigs/{rig_id}/pose", req, S.PoseResponse)
        return H.pose_op(self.ws, rig_id, req)

    def transfer(self, rig_id: str, req: S.TransferRequest) -> S.TransferResponse:
        if self.server:
            return self._post(f"/rigs/{rig_id}/transfer", req, S.TransferResponse)
        return H.transfer_op(self.ws, rig_id, req)

    def precompute(self, rig_id: str, req: S.PrecomputeRequest) -> S.PrecomputeResponse:
        if self.server:
            return self._post(f"/rigs/{rig_id}/precompute", req, S.PrecomputeResponse)
        return H.precompute_op(self.ws, rig_id, req)

    def invert(self, rig_id: str, req: S.InvertRequest) -> S.InvertResponse:
        if self.server:
            return self._post(f"/rigs/{rig_id}/invert", req, S.InvertResponse)
        return H.invert_op(self.ws, rig_id, req)

    def vertex_error(self, req: S.VertexErrorRequest) -> S.VertexErrorResponse:
        if self.server:
            return self._post("/metrics/vertex-error", req, S.VertexErrorResponse)
        return H.vertex_error_op(req)

    def bench(self, rig_id: str, req: S.BenchRequest) -> S.BenchResponse:
        if self.server:
            return self._post(f"/rigs/{rig_id}/bench", req, S.BenchResponse)
        return H.bench_op(self.ws, rig_id, req)


def _load_rig_arg(client: Client, rig_path: str) -> str:
    client.load(S.LoadRigRequest(rig_id="cli", path=rig_path))
    return "cli"


def _read_posed_frames(path: str) -> np.ndarray:
    """A single OBJ or a directory of OBJ frames (sorted) -> (F, N, 3)."""
    p = Path(path)
    files = sorted(p.glob("*.obj")) if p.is_dir() else [p]
    if not files:
        raise ValidationError(f"no OBJ frames found at {path}")
    frames = [load_obj(f).vertices.astype(np.float64) for f in files]
    return np.stack(frames)


# -- subcommand implementations ------------------------------------------------


def cmd_synth(client: Client, args) -> dict:
    req = S.SynthRigRequest(
        rig_id="cli",
        spec=S.SynthSpec(
            seed=args.seed,
            radial_segments=args.radial,
            axial_density=args.density,
            arms=0 if args.no_limbs else 2,
            legs=0 if args.no_limbs else 2,
            fingers=args.fingers,
            dense_chain=args.joints == "dense",
        ),
        with_correctives=args.correctives,
        save_path=args.out,
    )
    summary = client.synth(req)
    result = summary.model_dump()
    if args.motion_frames:
        from .synth import SynthConfig, make_rig, sample_motion

        synth = make_rig(SynthConfig(**req.spec.model_dump()))
        seq = sample_motion(synth.rig, seed=args.seed, frames=args.motion_frames)
        motion_path = Path(args.out) / "motion.json"
        save_motion(seq, motion_path)
        result["motion"] = str(motion_path)
    return result


def cmd_precompute(client: Client, args) -> dict:
    rig_id = _load_rig_arg(client, args.rig)
    wrap = None
    if args.wrap:
        wrap = S.ArrayPayload.from_numpy(load_obj(args.wrap).vertices)
    req = S.PrecomputeRequest(
        source_topology=args.source_topology,
        source_path=args.source,
        wrap_vertices=wrap,
        save_path=args.out or args.rig,
    )
    return client.precompute(rig_id, req).model_dump()


def cmd_transfer(client: Client, args) -> dict:
    rig_id = _load_rig_arg(client, args.rig)
    source = load_obj(args.source)
    req = S.TransferRequest(
        source_topology=args.source_topology,
        source_vertices=S.ArrayPayload.from_numpy(source.vertices.astype(np.float64)),
    )
    out = client.transfer(rig_id, req).vertices.to_numpy()
    if args.out:
        # canonical faces come from the rig itself
        from .io import load_rig

        faces = load_rig(args.rig).mesh.faces
        save_obj(args.out, out, faces)
    return {"vertices": int(out.shape[-2]), "out": args.out}


def cmd_fit_skel(client: Client, args) -> dict:
    summary = client.load(S.LoadRigRequest(rig_id="cli", path=args.rig))
    rig_id, names = summary.rig_id, summary.joint_names
    req = S.FitSkeletonRequest()
    if args.rest:
        req = S.FitSkeletonRequest(
            rest_vertices=S.ArrayPayload.from_numpy(load_obj(args.rest).vertices)
        )
    resp = client.fit_skeleton(rig_id, req)
    state = {
        "names": names,
        "rotations": resp.rotations.to_numpy().tolist(),
        "positions": resp.positions.to_numpy().tolist(),
        "warnings": resp.warnings,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(state, indent=2))
    return {"joints": len(names), "warnings": resp.warnings, "out": args.out}


def cmd_pose(client: Client, args) -> dict:
    rig_id = _load_rig_arg(client, args.rig)
    seq = load_motion(args.motion)
    req = S.PoseRequest(
        rotations=S.ArrayPayload.from_numpy(seq.rotations),
        encoding=seq.encoding,
        root_translations=(
            S.ArrayPayload.from_numpy(seq.root_translations)
            if seq.root_translations is not None
            else None
        ),
        joint_orient=args.joint_orient == "on",
        correctives=not args.no_correctives,
    )
    verts = client.pose(rig_id, req).vertices.to_numpy()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if args.blob:
        blob = out_dir / "vertex_animation.f32"
        verts.astype("<f4").tofile(blob)
        written.append(str(blob))
    else:
        faces = None
        if client.server is None:
            faces = client.ws.get(rig_id).rig.mesh.faces
        if faces is None:
            raise ValidationError("OBJ export requires local mode; use --blob with --server")
        for i in range(verts.shape[0]):
            path = out_dir / f"frame_{i:04d}.obj"
            save_obj(path, verts[i], faces)
            written.append(str(path))
    return {"frames": int(verts.shape[0]), "outputs": written[:4] + (["..."] if len(written) > 4 else [])}


def cmd_invert(client: Client, args) -> dict:
    rig_id = _load_rig_arg(client, args.rig)
    frames = _read_posed_frames(args.input)
    sched = _parse_schedule(args.schedule)
    req = S.InvertRequest(
        posed_vertices=S.ArrayPayload.from_numpy(frames),
        source_topology=args.source_topology,
        settings=S.InversionSettings(
            mode=args.mode,
            body_passes=sched["body"],
            finger_passes=sched["finger"],
            global_passes=sched["global"],
            tau=args.tau,
            autograd_iterations=args.iters,
            region_weights=_parse_kv(args.region_weights),
            allow_cold_start=args.allow_cold_start,
        ),
    )
    resp = client.invert(rig_id, req)
    rotations = resp.rotations.to_numpy()
    translations = resp.root_translations.to_numpy()
    seq = MotionSequence(
        fps=args.fps,
        rotations=rotations,
        encoding="matrix",
        root_translations=translations,
    )
    save_motion(seq, args.out)
    diag = [d.model_dump() for d in resp.diagnostics]
    report_path = Path(args.out).with_suffix(".diagnostics.json")
    report_path.write_text(json.dumps(diag, indent=2))
    mean_err = float(np.mean([d.mean_vertex_error for d in resp.diagnostics]))
    return {
        "frames": int(rotations.shape[0]),
        "mean_vertex_error_mm": mean_err * 1000.0,
        "motion": args.out,
        "diagnostics": str(report_path),
    }


def cmd_metrics(client: Client, args) -> dict:
    a = load_obj(args.a).vertices.astype(np.float64)
    if args.closest_point:
        from .metrics import closest_point_error

        surface = load_obj(args.b)
        stats = closest_point_error(a, surface)
        return {"closest_point": stats.as_mm()}
    b = load_obj(args.b).vertices.astype(np.float64)
    regions = None
    if args.rig:
        rig_id = _load_rig_arg(client, args.rig)
        if client.server is None:
            mesh = client.ws.get(rig_id).rig.mesh
            if mesh.regions is not None:
                regions = S.ArrayPayload.from_numpy(mesh.regions)
    req = S.VertexErrorRequest(
        a=S.ArrayPayload.from_numpy(a), b=S.ArrayPayload.from_numpy(b), regions=regions
    )
    resp = client.vertex_error(req)
    out = {"overall": resp.overall.model_dump()}
    if resp.per_region:
        out["per_region"] = {k: v.model_dump() for k, v in resp.per_region.items()}
    return out


def cmd_bench(client: Client, args) -> dict:
    rig_id = _load_rig_arg(client, args.rig)
    req = S.BenchRequest(
        stage=args.stage,
        batch_sizes=[int(x) for x in args.batches.split(",")],
        repetitions=args.reps,
        seed=args.seed,
    )
    return client.bench(rig_id, req).model_dump()


def cmd_serve(client: Client, args) -> dict:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")
    return {}


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rigbridge", description=__doc__)
    parser.add_argument("--server", help="run against a service URL instead of in-process")
    parser.add_argument("--config", help="JSON file with default flag values")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--threads", type=int, default=None, help="cap worker threads")
    parser.add_argument("--format", choices=("json", "table"), default="json")
    parser.add_argument("--report", help="also write the JSON report to this path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic rig (and optional motion)")
    p.add_argument("--out", required=True)
    p.add_argument("--radial", type=int, default=14)
    p.add_argument("--density", type=float, default=28.0)
    p.add_argument("--fingers", type=int, default=0)
    p.add_argument("--no-limbs", action="store_true")
    p.add_argument("--joints", choices=("default", "dense"), default="default")
    p.add_argument("--correctives", action="store_true")
    p.add_argument("--motion-frames", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("precompute", help="precompute a topology correspondence")
    p.add_argument("--rig", required=True)
    p.add_argument("--source", required=True, help="source mesh OBJ")
    p.add_argument("--wrap", help="wrap mesh OBJ (default: rig bind mesh)")
    p.add_argument("--source-topology", required=True)
    p.add_argument("--out", help="write updated rig here (default: in place)")
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("transfer", help="apply a precomputed correspondence")
    p.add_argument("--rig", required=True)
    p.add_argument("--source", required=True, help="deformed source OBJ")
    p.add_argument("--source-topology", required=True)
    p.add_argument("--out", help="canonical-topology OBJ to write")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("fit-skel", help="fit the skeleton to a rest shape")
    p.add_argument("--rig", required=True)
    p.add_argument("--rest", help="rest shape OBJ (default: bind mesh)")
    p.add_argument("--out", help="skeleton state JSON path")
    p.set_defaults(func=cmd_fit_skel)

    p = sub.add_parser("pose", help="pose a rig along a motion file")
    p.add_argument("--rig", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-correctives", action="store_true")
    p.add_argument("--joint-orient", choices=("on", "off"), default="on")
    p.add_argument("--blob", action="store_true", help="write one binary blob instead of OBJs")
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("invert", help="recover pose from posed vertices")
    p.add_argument("--rig", required=True)
    p.add_argument("--input", required=True, help="posed OBJ file or directory of frames")
    p.add_argument("--out", required=True, help="motion file to write")
    p.add_argument("--mode", choices=("init", "analytical", "autograd"), default="analytical")
    p.add_argument("--schedule", default="body:2,finger:1,global:1")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--region-weights", default="", help="e.g. hands:5,feet:2")
    p.add_argument("--source-topology")
    p.add_argument("--allow-cold-start", action="store_true")
    p.add_argument("--fps", type=float, default=30.0)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("metrics", help="per-vertex or closest-point error between meshes")
    p.add_argument("--a", required=True, help="first OBJ (queries)")
    p.add_argument("--b", required=True, help="second OBJ (pair or surface)")
    p.add_argument("--rig", help="rig providing region labels")
    p.add_argument("--closest-point", action="store_true")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="throughput benchmark")
    p.add_argument("--rig", required=True)
    p.add_argument("--stage", choices=("pose", "invert-init", "invert-analytical"), default="pose")
    p.add_argument("--batches", default="1,8,32")
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(func=cmd_serve)

    return parser


def _render_table(data: dict, indent: int = 0) -> str:
    lines = []
    pad = "  " * indent
    for key, value in data.items():
        if isinstance(value, dict):
            lines.append(f"{pad}{key}:")
            lines.append(_render_table(value, indent + 1))
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            keys = list(value[0].keys())
            widths = [max(len(str(k)), max(len(_fmt(r.get(k))) for r in value)) for k in keys]
            lines.append(pad + "  ".join(k.ljust(w) for k, w in zip(keys, widths)))
            for row in value:
                lines.append(pad + "  ".join(_fmt(row.get(k)).ljust(w) for k, w in zip(keys, widths)))
        else:
            lines.append(f"{pad}{key}: {_fmt(value)}")
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 2
        for key, value in overrides.items():
            if hasattr(args, key) and parser.get_default(key) == getattr(args, key):
                setattr(args, key, value)

    if args.threads:
        try:
            import torch

            torch.set_num_threads(args.threads)
        except ImportError:
            pass

    resolved = {k: v for k, v in vars(args).items() if k not in ("func",)}
    config_hash = hashlib.sha256(
        json.dumps(resolved, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]

    start = time.perf_counter()
    try:
        client = Client(args.server)
        result = args.func(client, args)
    except RigBridgeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 -- CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    report = {
        "command": args.command,
        "version": __version__,
        "config": resolved,
        "config_hash": config_hash,
        "timings_ms": {"total": (time.perf_counter() - start) * 1000.0},
        "result": result,
    }
    text = (
        json.dumps(report, indent=2, default=str)
        if args.format == "json"
        else _render_table(report)
    )
    print(text)
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
