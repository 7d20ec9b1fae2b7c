"""Command-line tools: codec benchmark, session simulation, recording
utilities, and the live viewer gateway.

Scene specs are either a path to a VRS1 recording or a ``synthetic:`` spec
string, e.g.::

    synthetic:width=640,height=576,fps=15,plane=2000,radius=150,orbit=300,omega=0.8,noise=0,seed=1

Network profiles are ``base_latency_ms,jitter_ms,loss,bandwidth_bps``
(bandwidth 0 = unlimited), or the names ``default`` / ``null``.

Exit codes: 0 success, 1 runtime/I-O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from typing import Optional, Sequence

from .depth_codec import (
    CodecState,
    DepthCodecConfig,
    KEYFRAME,
    decode,
    encode,
    encoded_size,
)
from .errors import FormatError, VoluStreamError
from .frames import (
    CircularPath,
    SyntheticSceneConfig,
    record_sink,
    replay_source,
    synthetic_source,
)
from .session import run_simulated_session
from .wire.netsim import NetworkProfile

USAGE_ERROR = 2
RUNTIME_ERROR = 1

_SCENE_KEYS = {
    "width": int, "height": int, "fps": float, "plane": float, "radius": float,
    "orbit": float, "omega": float, "phase": float, "cx": float, "cy": float,
    "cz": float, "noise": int, "seed": int,
}


def parse_scene_spec(spec: str) -> SyntheticSceneConfig | str:
    """A ``synthetic:...`` spec string, or a recording path passed through."""
    if not spec.startswith("synthetic:") and spec != "synthetic":
        return spec
    values: dict = {}
    body = spec.partition(":")[2]
    for item in filter(None, body.split(",")):
        key, sep, raw = item.partition("=")
        if not sep or key not in _SCENE_KEYS:
            raise argparse.ArgumentTypeError(
                f"bad scene parameter {item!r} (known keys: {', '.join(sorted(_SCENE_KEYS))})"
            )
        try:
            values[key] = _SCENE_KEYS[key](raw)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad value for scene key {key!r}: {raw!r}")
    path = CircularPath(
        center_mm=(values.pop("cx", 0.0), values.pop("cy", 0.0), values.pop("cz", 1500.0)),
        orbit_radius_mm=values.pop("orbit", 0.0),
        angular_speed_rad_s=values.pop("omega", 0.0),
        phase_rad=values.pop("phase", 0.0),
    )
    return SyntheticSceneConfig(
        width=values.pop("width", 640),
        height=values.pop("height", 576),
        fps=values.pop("fps", 15.0),
        plane_depth_mm=values.pop("plane", 2000.0),
        sphere_radius_mm=values.pop("radius", 150.0),
        sphere_path=path,
        noise_amplitude_mm=values.pop("noise", 0),
        seed=values.pop("seed", 0),
    )


def parse_profile(spec: str) -> NetworkProfile:
    if spec == "default":
        return NetworkProfile()
    if spec == "null":
        return NetworkProfile.null()
    parts = spec.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            f"profile must be 'latency_ms,jitter_ms,loss,bandwidth_bps', got {spec!r}"
        )
    try:
        latency, jitter, loss, bandwidth = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"profile values must be numeric: {spec!r}")
    return NetworkProfile(
        base_latency_ms=latency, jitter_ms=jitter,
        loss_probability=loss, bandwidth_bps=bandwidth,
    )


def _open_stream(spec, frames: Optional[int] = None):
    if isinstance(spec, SyntheticSceneConfig):
        return synthetic_source(spec)
    return replay_source(spec, max_frames=frames)


def _bounded(stream, frames: Optional[int]):
    if frames is None:
        yield from stream
        return
    for i, pair in enumerate(stream):
        if i >= frames:
            return
        yield pair


# -- subcommands -------------------------------------------------------------


def cmd_bench_codec(args) -> int:
    codec = DepthCodecConfig(
        tile_size=args.tile,
        change_threshold_mm=args.threshold,
        keyframe_interval=args.keyframe_interval,
    )
    scene = args.input
    encoder, decoder = CodecState(), CodecState()
    raw_bytes = 0
    encoded_bytes = 0
    keyframes = 0
    tile_histogram: dict[int, int] = {}
    encode_s = 0.0
    decode_s = 0.0
    frames = 0
    for depth, _ in _bounded(_open_stream(scene, args.frames), args.frames):
        t0 = time.perf_counter()
        msg = encode(encoder, depth, codec)
        encode_s += time.perf_counter() - t0
        t0 = time.perf_counter()
        decode(decoder, msg)
        decode_s += time.perf_counter() - t0
        raw_bytes += 2 * depth.width * depth.height
        encoded_bytes += encoded_size(msg)
        if msg.kind == KEYFRAME:
            keyframes += 1
        else:
            count = len(msg.tiles)
            tile_histogram[count] = tile_histogram.get(count, 0) + 1
        frames += 1
    report = {
        "frames": frames,
        "raw_bytes": raw_bytes,
        "encoded_bytes": encoded_bytes,
        "compression_ratio": (raw_bytes / encoded_bytes) if encoded_bytes else None,
        "keyframes": keyframes,
        "deltas": frames - keyframes,
        "tiles_per_delta": {str(k): v for k, v in sorted(tile_histogram.items())},
        "encode_seconds": encode_s,
        "decode_seconds": decode_s,
    }
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        ratio = report["compression_ratio"]
        print(f"frames:            {frames}")
        print(f"raw bytes:         {raw_bytes}")
        print(f"encoded bytes:     {encoded_bytes}")
        print(f"compression ratio: {ratio:.2f}" if ratio else "compression ratio: n/a")
        print(f"keyframes/deltas:  {keyframes}/{frames - keyframes}")
        print(f"tiles per delta:   {report['tiles_per_delta']}")
        print(f"encode time:       {encode_s * 1e3:.1f} ms")
        print(f"decode time:       {decode_s * 1e3:.1f} ms")
    return 0


def cmd_simulate(args) -> int:
    scene = args.scene
    profile = args.profile
    if args.seed is not None:
        profile = replace(profile, seed=args.seed)
        if isinstance(scene, SyntheticSceneConfig):
            scene = replace(scene, seed=args.seed)
    codec = DepthCodecConfig(
        tile_size=args.tile,
        change_threshold_mm=args.threshold,
        keyframe_interval=args.keyframe_interval,
    )
    queue_capacity = None if args.queue_capacity == 0 else args.queue_capacity
    if isinstance(scene, SyntheticSceneConfig):
        source_kwargs = {"scene": scene}
    else:
        source_kwargs = {"source": replay_source(scene, loop=True)}
    outcome = run_simulated_session(
        **source_kwargs,
        profile=profile,
        duration_s=args.duration,
        codec=codec,
        queue_capacity=queue_capacity,
        assemble=args.assemble,
    )
    if args.stats_out:
        with open(args.stats_out, "w", encoding="utf-8") as fh:
            for line in outcome.stats_lines:
                fh.write(line + "\n")
    summary = outcome.summary()
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        def fmt(v):
            return "n/a" if v is None else f"{v:.1f} ms"

        print(f"simulated:        {args.duration:.1f} s @ seed {profile.seed}")
        print(f"frames encoded:   {summary['frames_encoded']}")
        print(f"depth tx/rx:      {summary['depth_tx']}/{summary['depth_rx']}")
        print(f"color tx/rx:      {summary['color_tx']}/{summary['color_rx']}")
        print(f"drops (queue/net): {summary['queue_drops']}/{summary['net_drops']}")
        print(f"bytes tx:         {summary['bytes_tx']}")
        print(f"keyframe reqs:    {summary['keyframe_requests']}")
        print(f"e2e p50:          {fmt(summary['e2e_p50_ms'])}")
        print(f"e2e p95:          {fmt(summary['e2e_p95_ms'])}")
        print(f"e2e max:          {fmt(summary['e2e_max_ms'])}")
    return 0


def cmd_record(args) -> int:
    scene = args.scene
    stream = _open_stream(scene)
    if isinstance(scene, SyntheticSceneConfig):
        fps = scene.fps
    else:
        from .frames import read_recording_header

        with open(scene, "rb") as fh:
            info = read_recording_header(fh)
        fps = info.fps_numerator / info.fps_denominator
    written = record_sink(stream, args.out, fps=fps, max_frames=args.frames)
    print(f"wrote {written} frames to {args.out}")
    return 0


def cmd_replay(args) -> int:
    count = 0
    for depth, color in replay_source(args.input, loop=args.loop, max_frames=args.frames):
        valid = int((depth.depth > 0).sum())
        print(
            f"frame {depth.frame_id}: ts={depth.capture_ts_us}us "
            f"{depth.width}x{depth.height} valid_px={valid}"
        )
        count += 1
        if args.frames is not None and count >= args.frames:
            break
    print(f"replayed {count} frames")
    return 0


def cmd_serve_viewer(args) -> int:
    from .gateway import GatewayConfig, ViewerGateway

    host, _, port = args.listen.rpartition(":")
    if not host or not port.isdigit():
        raise FormatError(f"--listen must be host:port, got {args.listen!r}")
    codec = DepthCodecConfig(
        tile_size=args.tile,
        change_threshold_mm=args.threshold,
        keyframe_interval=args.keyframe_interval,
    )
    config = GatewayConfig(
        host=host, port=int(port), codec=codec, profile=args.profile,
    )
    gateway = ViewerGateway(args.scene, config)
    try:
        gateway.serve_forever()
    except OSError as exc:
        raise VoluStreamError(f"cannot bind {args.listen}: {exc}") from exc
    return 0


# -- parser ------------------------------------------------------------------


def _add_codec_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tile", type=int, default=16, help="tile size in pixels")
    parser.add_argument(
        "--threshold", type=int, default=10, help="per-pixel change threshold (mm)"
    )
    parser.add_argument(
        "--keyframe-interval", type=int, default=30,
        help="frames between forced keyframes (1 disables delta compression)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volustream",
        description="Volumetric remote-assistance streaming tools",
    )
    parser.add_argument(
        "--config", default=None,
        help="key=value config file; command-line flags take precedence",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench-codec", help="measure depth codec compression")
    bench.add_argument("--input", type=parse_scene_spec, required=True,
                       help="VRS1 path or synthetic: spec")
    bench.add_argument("--frames", type=int, default=30)
    _add_codec_flags(bench)
    bench.add_argument("--json", action="store_true")
    bench.set_defaults(func=cmd_bench_codec)

    sim = sub.add_parser("simulate", help="run a full two-peer simulated session")
    sim.add_argument("--scene", type=parse_scene_spec, default="synthetic:")
    sim.add_argument("--profile", type=parse_profile, default="default",
                     help="latency_ms,jitter_ms,loss,bandwidth_bps | default | null")
    sim.add_argument("--duration", type=float, default=5.0, help="simulated seconds")
    sim.add_argument("--seed", type=int, default=None,
                     help="overrides scene and network seeds")
    sim.add_argument("--queue-capacity", type=int, default=2,
                     help="media send queue capacity in frames; 0 = unbounded")
    _add_codec_flags(sim)
    sim.add_argument("--stats-out", default=None, help="write JSON-lines stats here")
    sim.add_argument("--json", action="store_true", help="print summary as JSON")
    sim.add_argument("--no-assemble", dest="assemble", action="store_false",
                     help="skip expert-side point cloud assembly (stats only)")
    sim.set_defaults(func=cmd_simulate)

    rec = sub.add_parser("record", help="record a scene to a VRS1 file")
    rec.add_argument("--scene", type=parse_scene_spec, default="synthetic:")
    rec.add_argument("--out", required=True)
    rec.add_argument("--frames", type=int, default=30)
    rec.set_defaults(func=cmd_record)

    rep = sub.add_parser("replay", help="replay a VRS1 file and print frame info")
    rep.add_argument("--input", required=True)
    rep.add_argument("--frames", type=int, default=None)
    rep.add_argument("--loop", action="store_true")
    rep.set_defaults(func=cmd_replay)

    serve = sub.add_parser("serve-viewer", help="serve the browser expert console")
    serve.add_argument("--listen", default="127.0.0.1:8765")
    serve.add_argument("--scene", type=parse_scene_spec, default="synthetic:")
    serve.add_argument("--profile", type=parse_profile, default=None)
    _add_codec_flags(serve)
    serve.set_defaults(func=cmd_serve_viewer)

    return parser


def _load_config_flags(path: str) -> list[str]:
    """Turn key=value lines into CLI tokens (flags win by coming later)."""
    tokens: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            flag = "--" + key.strip().replace("_", "-")
            value = value.strip()
            if value.lower() == "true":
                tokens.append(flag)
            elif value.lower() == "false":
                continue
            else:
                tokens.extend([flag, value])
    return tokens


def _inject_config(argv: list[str]) -> list[str]:
    """Splice config-file tokens right after the subcommand name."""
    config_path = None
    cleaned: list[str] = []
    i = 0
    while i < len(argv):
        token = argv[i]
        if token == "--config":
            if i + 1 >= len(argv):
                raise FormatError("--config requires a path")
            config_path = argv[i + 1]
            i += 2
            continue
        if token.startswith("--config="):
            config_path = token.split("=", 1)[1]
            i += 1
            continue
        cleaned.append(token)
        i += 1
    if config_path is None:
        return cleaned
    flags = _load_config_flags(config_path)
    for pos, token in enumerate(cleaned):
        if not token.startswith("-"):
            return cleaned[: pos + 1] + flags + cleaned[pos + 1:]
    return cleaned + flags


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _inject_config(argv)
    except (FormatError, OSError) as exc:
        parser.error(str(exc))  # exits 2
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (VoluStreamError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
