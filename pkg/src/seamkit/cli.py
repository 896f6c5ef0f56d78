"""Command-line pipeline orchestration.

Subcommands: evaluate, tokenize, detokenize, project, unwrap, sample,
prefpairs, dpo, sample-points.  Exit codes: 0 ok, 2 input error, 3 pipeline
error.  All outputs are written atomically (temp file + rename); runs that
produce multiple artifacts also emit a manifest.json.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time

import numpy as np

from seamkit import dpo as dpo_mod
from seamkit import metrics as metrics_mod
from seamkit import model as model_mod
from seamkit import projection, sampling, tokenizer, unwrap
from seamkit.mesh import (
    IndexedMesh,
    MeshError,
    SeamEdgeSet,
    extract_uv_seams,
    load_obj,
    normalize,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PIPELINE = 3


class InputError(Exception):
    """Bad inputs: missing files, parse failures, invalid configuration."""


# ---------------------------------------------------------------------------
# Config files: plain-text key=value, no nesting, unknown keys are errors.

CONFIG_KEYS = {
    # model dimensions
    "l": int,
    "d": int,
    "layers": int,
    "heads": int,
    "max_segments": int,
    "model_seed": int,
    # conditioning clouds
    "n_topo": int,
    "n_geom": int,
    # candidate sampling
    "n_candidates": int,
    "temperature": float,
    "top_p": float,
    # dpo
    "beta": float,
    "lr": float,
    "steps": int,
    "mode": str,
    # misc
    "seed": int,
    "init_checkpoint": str,
}

CONFIG_DEFAULTS = {
    "l": 32,
    "d": 64,
    "layers": 8,
    "heads": 2,
    "max_segments": 64,
    "model_seed": 0,
    "n_topo": sampling.DEFAULT_N_TOPO,
    "n_geom": sampling.DEFAULT_N_GEOM,
    "n_candidates": 5,
    "temperature": 1.0,
    "top_p": 1.0,
    "beta": 0.1,
    "lr": 1e-6,
    "steps": 2500,
    "mode": "joint",
    "seed": 0,
    "init_checkpoint": "",
}


def parse_config(text: str) -> dict:
    values = dict(CONFIG_DEFAULTS)
    unknown = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {line_no}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_KEYS:
            unknown.append(key)
            continue
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise InputError(f"config line {line_no}: {exc}") from exc
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return values


def load_config(path: str | None, seed_override: int | None) -> dict:
    if path is None:
        cfg = dict(CONFIG_DEFAULTS)
    else:
        cfg = parse_config(_read_file(path))
    if seed_override is not None:
        cfg["seed"] = seed_override
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def model_config_from(cfg: dict) -> model_mod.ModelConfig:
    return model_mod.ModelConfig(
        tokens_per_branch=cfg["l"],
        d_model=cfg["d"],
        n_layers=cfg["layers"],
        n_heads=cfg["heads"],
        max_segments=cfg["max_segments"],
        seed=cfg["model_seed"],
    )


# ---------------------------------------------------------------------------
# I/O helpers


def _read_file(path: str, binary: bool = False):
    try:
        with open(path, "rb" if binary else "r") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _write_atomic(path: str, data) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".seamkit-tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_mesh(path: str) -> IndexedMesh:
    text = _read_file(path)
    try:
        return load_obj(text)
    except MeshError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _load_seams(path: str) -> tokenizer.SeamSet:
    try:
        return tokenizer.read_seam_text(_read_file(path))
    except tokenizer.TokenizerError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _seam_edges_for(mesh_norm: IndexedMesh, args) -> SeamEdgeSet:
    """Resolve seam edges from --from-uv / --edges / a seam segment file."""
    if getattr(args, "from_uv", False):
        try:
            return extract_uv_seams(mesh_norm)
        except MeshError as exc:
            raise InputError(f"--from-uv: {exc}") from exc
    if getattr(args, "edges", None):
        try:
            return SeamEdgeSet.from_text(_read_file(args.edges))
        except MeshError as exc:
            raise InputError(f"{args.edges}: {exc}") from exc
    if getattr(args, "seams", None):
        seams = _load_seams(args.seams)
        return projection.project_seams(mesh_norm, seams)
    raise InputError("no seam source: pass a seam file, --edges, or --from-uv")


def _manifest(command: str, inputs, outputs, seed: int, cfg: dict, timings: dict) -> str:
    doc = {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": int(seed),
        "config_hash": config_hash(cfg),
        "timings_s": {k: float(v) for k, v in timings.items()},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_evaluate(args) -> int:
    mesh = _load_mesh(args.mesh)
    if args.from_uv and not mesh.has_uvs:
        raise InputError(f"{args.mesh} has no vt records; --from-uv needs them")
    norm, _ = normalize(mesh)
    if args.from_uv:
        edges = extract_uv_seams(norm)
        metrics, atlas = metrics_mod.evaluate_edges(norm, edges)
    else:
        if not args.seams:
            raise InputError("evaluate needs a seam file or --from-uv")
        seams = _load_seams(args.seams)
        metrics, atlas = metrics_mod.evaluate_with_atlas(mesh, seams)
    payload = metrics.to_json()
    sys.stdout.write(payload)
    if args.json_out:
        _write_atomic(args.json_out, payload)
    if args.svg:
        _write_atomic(args.svg, unwrap.atlas_to_svg(atlas))
    return EXIT_OK


def cmd_tokenize(args) -> int:
    seams = _load_seams(args.input)
    tokens = tokenizer.encode(tokenizer.canonicalize(seams))
    _write_atomic(args.output, tokenizer.write_token_text(tokens))
    return EXIT_OK


def cmd_detokenize(args) -> int:
    try:
        tokens = tokenizer.read_token_text(_read_file(args.input))
        seams = tokenizer.decode(tokens)
    except tokenizer.TokenizerError as exc:
        raise InputError(f"{args.input}: {exc}") from exc
    _write_atomic(args.output, tokenizer.write_seam_text(seams))
    return EXIT_OK


def cmd_project(args) -> int:
    mesh = _load_mesh(args.mesh)
    norm, _ = normalize(mesh)
    seams = _load_seams(args.seams)
    edges = projection.project_seams(norm, seams)
    _write_atomic(args.output, edges.to_text())
    return EXIT_OK


def cmd_unwrap(args) -> int:
    mesh = _load_mesh(args.mesh)
    if args.from_uv and not mesh.has_uvs:
        raise InputError(f"{args.mesh} has no vt records; --from-uv needs them")
    norm, _ = normalize(mesh)
    edges = _seam_edges_for(norm, args)
    atlas = unwrap.unwrap_mesh(norm, edges)
    _write_atomic(args.obj_out, unwrap.atlas_to_obj(atlas))
    if args.svg:
        _write_atomic(args.svg, unwrap.atlas_to_svg(atlas))
    if args.json_out:
        metrics, _ = metrics_mod.evaluate_edges(norm, edges)
        _write_atomic(args.json_out, metrics.to_json())
    return EXIT_OK


def cmd_sample_points(args) -> int:
    cfg = load_config(args.config, args.seed)
    mesh = _load_mesh(args.mesh)
    norm, _ = normalize(mesh)
    clouds = sampling.build_conditioning_clouds(
        norm, n_topo=cfg["n_topo"], n_geom=cfg["n_geom"], seed=cfg["seed"]
    )
    topo_path = f"{args.out_prefix}.topo.xyz"
    geom_path = f"{args.out_prefix}.geom.xyz"
    _write_atomic(topo_path, sampling.write_xyz(clouds.topo_points))
    _write_atomic(geom_path, sampling.write_xyz(clouds.geom_points))
    return EXIT_OK


def _policy_store(cfg: dict) -> model_mod.ParameterStore:
    if cfg["init_checkpoint"]:
        try:
            return model_mod.load_checkpoint(_read_file(cfg["init_checkpoint"], binary=True))
        except model_mod.CheckpointError as exc:
            raise InputError(f"{cfg['init_checkpoint']}: {exc}") from exc
    return model_mod.init_parameters(model_config_from(cfg))


def cmd_sample(args) -> int:
    cfg = load_config(args.config, args.seed)
    mesh = _load_mesh(args.mesh)
    norm, _ = normalize(mesh)
    t0 = time.perf_counter()
    params = _policy_store(cfg)
    clouds = sampling.build_conditioning_clouds(
        norm, n_topo=cfg["n_topo"], n_geom=cfg["n_geom"], seed=cfg["seed"]
    )
    cond = model_mod.encode_condition(clouds, params)
    outputs = []
    timings = {"setup": time.perf_counter() - t0}
    t1 = time.perf_counter()
    for i in range(cfg["n_candidates"]):
        result = model_mod.sample(
            cond,
            params,
            temperature=cfg["temperature"],
            top_p=cfg["top_p"],
            seed=cfg["seed"] + i,
        )
        seams = tokenizer.decode(result.tokens)
        seam_path = os.path.join(args.out_dir, f"cand_{i}.seams")
        _write_atomic(seam_path, tokenizer.write_seam_text(seams))
        metrics = metrics_mod.evaluate(norm, seams, normalize_input=False)
        json_path = os.path.join(args.out_dir, f"cand_{i}.json")
        _write_atomic(json_path, metrics.to_json())
        outputs.extend([seam_path, json_path])
    timings["sample_and_evaluate"] = time.perf_counter() - t1
    run_info = {"mesh": os.path.abspath(args.mesh), "seed": cfg["seed"]}
    info_path = os.path.join(args.out_dir, "run.json")
    _write_atomic(info_path, json.dumps(run_info, sort_keys=True) + "\n")
    outputs.append(info_path)
    manifest_path = os.path.join(args.out_dir, "manifest.json")
    _write_atomic(
        manifest_path,
        _manifest("sample", [args.mesh], outputs, cfg["seed"], cfg, timings),
    )
    return EXIT_OK


def _read_candidates(cand_dir: str):
    run_info = json.loads(_read_file(os.path.join(cand_dir, "run.json")))
    cands = []
    i = 0
    while True:
        seam_path = os.path.join(cand_dir, f"cand_{i}.seams")
        json_path = os.path.join(cand_dir, f"cand_{i}.json")
        if not (os.path.exists(seam_path) and os.path.exists(json_path)):
            break
        seams = _load_seams(seam_path)
        metrics = metrics_mod.SeamMetrics.from_dict(json.loads(_read_file(json_path)))
        cands.append(dpo_mod.ScoredSeams(seams=seams, metrics=metrics))
        i += 1
    if not cands:
        raise InputError(f"no cand_*.seams candidates under {cand_dir}")
    return run_info, cands


def cmd_prefpairs(args) -> int:
    cfg = load_config(args.config, args.seed)
    t0 = time.perf_counter()
    run_info, cands = _read_candidates(args.candidates)
    pairs = dpo_mod.build_pairs(cands, mode=cfg["mode"])
    by_id = {id(c): i for i, c in enumerate(cands)}
    records = [
        dpo_mod.PairRecord(
            mesh_path=run_info["mesh"],
            seed=int(run_info["seed"]),
            positive_index=by_id[id(p.positive)],
            negative_index=by_id[id(p.negative)],
            positive_metrics=p.positive.metrics,
            negative_metrics=p.negative.metrics,
            mode=cfg["mode"],
        )
        for p in pairs
    ]
    _write_atomic(args.output, dpo_mod.write_pair_records(records))
    manifest_path = os.path.splitext(args.output)[0] + ".manifest.json"
    _write_atomic(
        manifest_path,
        _manifest(
            "prefpairs",
            [args.candidates],
            [args.output],
            cfg["seed"],
            cfg,
            {"build": time.perf_counter() - t0},
        ),
    )
    return EXIT_OK


def _pairs_from_records(records, cand_dirs: dict, cfg: dict):
    pairs = []
    for rec in records:
        cand_dir = cand_dirs[rec.mesh_path]
        mesh = _load_mesh(rec.mesh_path)
        norm, _ = normalize(mesh)
        clouds = sampling.build_conditioning_clouds(
            norm, n_topo=cfg["n_topo"], n_geom=cfg["n_geom"], seed=rec.seed
        )
        pos = _load_seams(os.path.join(cand_dir, f"cand_{rec.positive_index}.seams"))
        neg = _load_seams(os.path.join(cand_dir, f"cand_{rec.negative_index}.seams"))
        pairs.append(
            dpo_mod.PreferencePair(
                condition=clouds,
                positive=dpo_mod.ScoredSeams(seams=pos, metrics=rec.positive_metrics),
                negative=dpo_mod.ScoredSeams(seams=neg, metrics=rec.negative_metrics),
                mode=rec.mode,
            )
        )
    return pairs


def cmd_dpo(args) -> int:
    cfg = load_config(args.config, args.seed)
    records = dpo_mod.read_pair_records(_read_file(args.pairs))
    policy = _policy_store(cfg)
    if cfg["steps"] == 0 or not records:
        _write_atomic(args.output, model_mod.save_checkpoint(policy))
        return EXIT_OK
    cand_dir = args.candidates or os.path.dirname(os.path.abspath(args.pairs))
    cand_dirs = {rec.mesh_path: cand_dir for rec in records}
    pairs = _pairs_from_records(records, cand_dirs, cfg)
    reference = policy.copy(role="reference")
    dpo_config = dpo_mod.DPOConfig(
        beta=cfg["beta"],
        learning_rate=cfg["lr"],
        steps=cfg["steps"],
        pairing_mode=cfg["mode"],
    )
    t0 = time.perf_counter()
    trained, history = dpo_mod.dpo_train(policy, reference, pairs, dpo_config)
    train_time = time.perf_counter() - t0
    _write_atomic(args.output, model_mod.save_checkpoint(trained))
    log_path = os.path.splitext(args.output)[0] + ".log.jsonl"
    log_text = "".join(
        json.dumps({"step": h.step, "loss": h.loss, "accuracy": h.accuracy}) + "\n"
        for h in history
    )
    _write_atomic(log_path, log_text)
    manifest_path = os.path.splitext(args.output)[0] + ".manifest.json"
    _write_atomic(
        manifest_path,
        _manifest(
            "dpo",
            [args.pairs],
            [args.output, log_path],
            cfg["seed"],
            cfg,
            {"train": train_time},
        ),
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seamkit",
        description="Mesh seam tokenization, projection, unwrapping, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="metrics JSON (+ optional SVG) for a seam set")
    p.add_argument("mesh")
    p.add_argument("seams", nargs="?", default=None)
    p.add_argument("--from-uv", action="store_true", dest="from_uv")
    p.add_argument("--json-out")
    p.add_argument("--svg")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tokenize", help="seam text file -> token file")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", help="token file -> seam text file")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_detokenize)

    p = sub.add_parser("project", help="seam segments -> marked mesh edges")
    p.add_argument("mesh")
    p.add_argument("seams")
    p.add_argument("output")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("unwrap", help="cut + parameterize -> OBJ with UVs")
    p.add_argument("mesh")
    p.add_argument("--seams")
    p.add_argument("--edges")
    p.add_argument("--from-uv", action="store_true", dest="from_uv")
    p.add_argument("--obj-out", required=True)
    p.add_argument("--svg")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_unwrap)

    p = sub.add_parser("sample-points", help="write conditioning clouds as XYZ")
    p.add_argument("mesh")
    p.add_argument("out_prefix")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sample_points)

    p = sub.add_parser("sample", help="sample candidate seam sets + metrics")
    p.add_argument("mesh")
    p.add_argument("out_dir")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("prefpairs", help="strict-dominance preference pairs")
    p.add_argument("candidates", help="directory produced by `seamkit sample`")
    p.add_argument("output")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prefpairs)

    p = sub.add_parser("dpo", help="preference post-training")
    p.add_argument("pairs")
    p.add_argument("output")
    p.add_argument("--candidates", help="candidate dir (default: alongside pairs)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_dpo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except metrics_mod.StageError as exc:
        print(f"pipeline error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return EXIT_PIPELINE
    except (unwrap.UnwrapError, projection.ProjectionError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (InputError, tokenizer.TokenizerError, MeshError) as exc:
        # missing files, parse failures, malformed inputs
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # anything else is a pipeline failure
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
