"""Command-line entry point: ``di-forge <command> [flags]``.

Exit codes: 0 ok, 2 usage, 3 placement/feasibility failure, 4 regime
violation, 5 verification failure, 6 any other package error.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .channels import ChannelModel
from .codebook import (
    CodebookParams,
    InputBox,
    PrimitiveCodebook,
    build_primitive,
    expurgated_code,
    from_json,
    pairwise_projective_separation,
    to_json,
)
from .decoder import DecoderParams, identify_batch
from .errors import (
    DIError,
    DimensionUnderflow,
    Infeasible,
    PlacementExhausted,
    RadiusMismatch,
    RegimeViolation,
    UsageError,
)
from .experiments import (
    adversarial_pair,
    estimate_false_id,
    estimate_missed_id,
    reduction_experiment,
    rr_build,
    sweep_rr,
    to_csv,
    to_jsonl,
)
from .geometry import TOL_ORTH, TOL_RADIUS, verify_angle_dense

COMMANDS = ("build", "verify", "simulate", "sweep-rr", "reduce-demo", "report")
EXIT_OK, EXIT_USAGE, EXIT_PLACEMENT, EXIT_REGIME, EXIT_VERIFY, EXIT_OTHER = 0, 2, 3, 4, 5, 6


@dataclass(frozen=True)
class RunConfig:
    command: str
    n: int | None = None
    L: int = 2
    delta: float = 0.2
    branching: tuple[int, ...] | None = None
    mode: str = "desk"
    radii: tuple[float, ...] | None = None
    d: float | None = None
    channel: str = "bernoulli"
    a: float = 0.0
    b: float = 1.0
    A: float = 1.0
    E: tuple[float, ...] | None = None
    E_scale: str = "per-ln-n"
    trials: int = 100_000
    build_seed: int = 0
    rotation_seed: int | None = None
    trial_seed: int = 0
    codebook: str | None = None
    x_values: tuple[float, ...] = (0.1, 0.5, 0.9)
    output_path: str | None = None
    format: str = "json"
    inputs: tuple[str, ...] = field(default_factory=tuple)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="di-forge", description="Deterministic identification code toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON file with defaults for any flag")
        if out:
            sp.add_argument("--out", dest="output_path")
            sp.add_argument("--format", choices=["json", "csv"])

    def geometry(sp):
        sp.add_argument("--n", type=int)
        sp.add_argument("--L", type=int)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--branching", type=_ints, help="per-layer counts, e.g. 4,4")
        sp.add_argument("--mode", choices=["desk", "capacity", "rr", "custom"])
        sp.add_argument("--radii", type=_floats, help="custom mode: per-layer radii")
        sp.add_argument("--d", type=float, help="minimum projective distance")
        sp.add_argument("--seed", "--build-seed", dest="build_seed", type=int)

    def channel(sp):
        sp.add_argument("--channel", choices=["bernoulli", "restricted", "poisson"])
        sp.add_argument("--a", type=float)
        sp.add_argument("--b", type=float)
        sp.add_argument("--A", type=float)
        sp.add_argument("--rotation-seed", type=int)

    sp = sub.add_parser("build", help="build, optionally expurgate, and serialise a codebook")
    common(sp)
    geometry(sp)
    channel(sp)
    sp.add_argument("--E", type=_floats, help="rate-reliability exponent (see --E-scale)")
    sp.add_argument("--E-scale", dest="E_scale", choices=["abs", "per-ln-n"])

    sp = sub.add_parser("verify", help="check the invariants of a stored codebook")
    common(sp, out=False)
    sp.add_argument("codebook")

    sp = sub.add_parser("simulate", help="estimate missed and false identification rates")
    common(sp)
    geometry(sp)
    channel(sp)
    sp.add_argument("--codebook")
    sp.add_argument("--E", type=_floats, help="rate-reliability decoder radius sqrt(nE)")
    sp.add_argument("--E-scale", dest="E_scale", choices=["abs", "per-ln-n"])
    sp.add_argument("--trials", type=int)
    sp.add_argument("--trial-seed", type=int)

    sp = sub.add_parser("sweep-rr", help="rate-reliability sweep over error exponents")
    common(sp)
    geometry(sp)
    sp.add_argument("--E", type=_floats, help="exponents (see --E-scale)")
    sp.add_argument("--E-scale", dest="E_scale", choices=["abs", "per-ln-n"])
    sp.add_argument("--rotation-seed", type=int)

    sp = sub.add_parser("reduce-demo", help="Poisson to Bernoulli reduction check")
    common(sp)
    sp.add_argument("--A", type=float)
    sp.add_argument("--x-values", dest="x_values", type=_floats)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--trial-seed", type=int)

    sp = sub.add_parser("report", help="summarise JSON-lines reports")
    common(sp)
    sp.add_argument("inputs", nargs="+")
    return p


_TUPLE_FIELDS = {"branching": int, "radii": float, "E": float, "x_values": float, "inputs": str}


def _coerce(key, value):
    if key in _TUPLE_FIELDS and value is not None:
        if isinstance(value, (int, float, str)) and key != "inputs":
            value = [value]
        return tuple(_TUPLE_FIELDS[key](v) for v in value)
    return value


def parse_config(argv: Sequence[str] | None = None) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    values: dict = {}
    names = {f.name for f in dataclasses.fields(RunConfig)}
    if ns.get("config"):
        try:
            doc = json.loads(Path(ns["config"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: cannot read {ns['config']}: {exc}")
        unknown = set(doc) - names
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
        values.update({k: _coerce(k, v) for k, v in doc.items()})
    values.update({k: v for k, v in ns.items() if k in names and v is not None})
    values["command"] = ns["command"]
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(c: RunConfig) -> None:
    needs_geometry = c.command in ("build", "sweep-rr") or (c.command == "simulate" and not c.codebook)
    if needs_geometry:
        if c.n is None:
            raise UsageError("--n is required")
        if c.n < 2:
            raise UsageError("--n must be >= 2")
        if c.L < 1:
            raise UsageError("--L must be >= 1")
        if c.branching is None:
            raise UsageError("--branching is required (comma-separated, one entry per layer)")
        if len(c.branching) != c.L or min(c.branching) < 1:
            raise UsageError(f"--branching needs {c.L} positive entries, got {c.branching}")
        if c.mode == "custom" and (c.radii is None or c.d is None):
            raise UsageError("--mode custom needs --radii and --d")
    if not 0 < c.delta < 1:
        raise UsageError(f"--delta must lie in (0, 1), got {c.delta}")
    if c.command == "sweep-rr" and not c.E:
        raise UsageError("--E is required for sweep-rr")
    if c.mode == "rr" and c.command in ("build", "simulate") and not c.codebook and not c.E:
        raise UsageError("--mode rr needs --E")
    if c.channel == "restricted" and not 0 <= c.a < c.b <= 1:
        raise UsageError("--a/--b must satisfy 0 <= a < b <= 1")
    if c.channel == "poisson" and not c.A > 0:
        raise UsageError("--A must be positive")
    if c.trials < 0:
        raise UsageError("--trials must be nonnegative")


# ---------------------------------------------------------------- helpers

def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(cfg: RunConfig, text: str) -> None:
    if cfg.output_path:
        atomic_write(cfg.output_path, text)
        meta = {"created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                "version": __version__, "config": dataclasses.asdict(cfg)}
        atomic_write(f"{cfg.output_path}.meta.json", json.dumps(meta, indent=2, default=list) + "\n")
    else:
        sys.stdout.write(text)


def _channel(cfg: RunConfig) -> ChannelModel:
    if cfg.channel == "restricted":
        return ChannelModel.restricted(cfg.a, cfg.b)
    if cfg.channel == "poisson":
        return ChannelModel.poisson(cfg.A)
    return ChannelModel.bernoulli()


def _E(cfg: RunConfig, n: int | None = None) -> list[float]:
    n = cfg.n if n is None else n
    scale = 1.0 / math.log(n) if cfg.E_scale == "per-ln-n" else 1.0
    return [e * scale for e in cfg.E]


def _build(cfg: RunConfig) -> PrimitiveCodebook:
    if cfg.mode == "rr":
        return rr_build(cfg.n, cfg.L, cfg.delta, _E(cfg)[0], cfg.branching, cfg.build_seed)[0]
    if cfg.mode == "capacity":
        params = CodebookParams.capacity(cfg.n, cfg.L, cfg.delta, cfg.branching, cfg.build_seed)
    elif cfg.mode == "custom":
        params = CodebookParams(cfg.n, cfg.L, cfg.delta, cfg.radii, cfg.d, cfg.branching,
                                cfg.build_seed)
    else:
        params = CodebookParams.desk(cfg.n, cfg.L, cfg.delta, cfg.branching, cfg.build_seed, d=cfg.d)
    return build_primitive(params)


def load_codebook(path) -> tuple[PrimitiveCodebook, list | None]:
    doc = json.loads(Path(path).read_text())
    retained = doc.get("retained")
    return from_json(doc), None if retained is None else [tuple(r) for r in retained]


def _decoder(cfg: RunConfig, cb: PrimitiveCodebook) -> DecoderParams:
    if cfg.E:
        return DecoderParams.rate_reliability(cb.n, _E(cfg, cb.n)[0])
    if cfg.channel == "poisson":
        return DecoderParams.poisson(cb.n, cfg.A)
    return DecoderParams.capacity(cb.n)


# ---------------------------------------------------------------- commands

def cmd_build(cfg: RunConfig) -> int:
    cb = _build(cfg)
    doc = None
    if cfg.rotation_seed is not None:
        cb, retained, rep = expurgated_code(cb, _channel(cfg).input_box(cb.n), cfg.rotation_seed)
        doc = to_json(cb)
        doc["retained"] = [list(r) for r in retained]
        doc["rotation_seed"] = cfg.rotation_seed
    doc = doc or to_json(cb)
    _emit(cfg, json.dumps(doc) + "\n")
    return EXIT_OK


def verify_codebook(cb: PrimitiveCodebook, t: float | None = None) -> list[tuple[str, bool, str]]:
    """Run the invariant suite; returns ``(check, ok, detail)`` rows."""
    rows = []
    p = cb.params
    worst = 0.0
    for l in range(1, cb.L + 1):
        U = cb.unit_directions(l)
        for j in range(1, l):
            anc = cb.unit_directions(j)[np.arange(U.shape[0]) // int(np.prod(p.branching[j:l]))]
            worst = max(worst, float(np.max(np.abs(np.einsum("ij,ij->i", U, anc)))))
    rows.append(("path orthogonality", worst <= TOL_ORTH, f"max |<e_j, e_l>| = {worst:.3g}"))

    R2 = sum(r * r for r in p.radii)
    dev = float(np.max(np.abs(np.sum((cb.codewords - cb.center) ** 2, axis=1) - R2))) / R2
    rows.append(("radius identity", dev <= TOL_RADIUS, f"max relative deviation {dev:.3g}"))

    bad = 0
    for l in range(1, cb.L + 1):
        count = p.branching[l - 1]
        for k in range(0, cb.layer_centers(l).shape[0], count):
            parent = cb.layer_centers(l - 1)[k // count]
            try:
                if not verify_angle_dense(parent, cb.layer_centers(l)[k:k + count], p.d).ok:
                    bad += 1
            except RadiusMismatch:
                bad += 1
    rows.append(("angle-dense arrangements", bad == 0, f"{bad} violating nodes"))

    if len(cb) >= 2:
        rep = pairwise_projective_separation(cb)
        rows.append(("projective separation", rep.min_sep >= rep.bound,
                     f"min {rep.min_sep:.6g} vs bound {rep.bound:.6g} over {rep.pairs_checked} pairs"))
    t = math.log(cb.n) if t is None else t
    dp = DecoderParams(t)
    acc = all(identify_batch(cb.codewords[[i]], cb, cb.leaf_id(i), dp)[0][0] for i in range(len(cb)))
    rows.append(("noiseless self-identification", acc, f"t = {t:.6g}"))
    if len(cb) >= 2:
        ti, si = adversarial_pair(cb)
        rej = not identify_batch(cb.codewords[[cb.leaf_index(si)]], cb, ti, dp)[0][0]
        rows.append(("noiseless adversarial rejection", rej, f"tested {ti}, sent {si}"))
    return rows


def cmd_verify(cfg: RunConfig) -> int:
    cb, _ = load_codebook(cfg.codebook)
    rows = verify_codebook(cb)
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return EXIT_OK if all(r[1] for r in rows) else EXIT_VERIFY


def cmd_simulate(cfg: RunConfig) -> int:
    ch = _channel(cfg)
    if cfg.codebook:
        cb, retained = load_codebook(cfg.codebook)
    else:
        cb = _build(cfg)
        retained = None
        if cfg.rotation_seed is not None:
            cb, retained, _ = expurgated_code(cb, ch.input_box(cb.n), cfg.rotation_seed)
    dp = _decoder(cfg, cb)
    inputs = {"n": cb.n, "L": cb.L, "channel": ch.kind, "a": ch.a, "b": ch.b, "A": ch.A,
              "t": dp.t, "decoder_mode": dp.mode, "trials": cfg.trials, "seed": cfg.trial_seed}
    records = [estimate_missed_id(cb, ch, dp, retained, cfg.trials, cfg.trial_seed)
               .record("missed_id", inputs)]
    for how in ("random", "adversarial_min_sep"):
        est = estimate_false_id(cb, ch, dp, how, cfg.trials, cfg.trial_seed, ids=retained)
        records.append(est.record("false_id", {**inputs, "pairs": how}))
    if cfg.format == "csv":
        _emit(cfg, to_csv([_flatten(r) for r in records]))
    else:
        _emit(cfg, to_jsonl(records))
    return EXIT_OK if all(r["verdict"] == "pass" for r in records) else EXIT_VERIFY


def cmd_sweep_rr(cfg: RunConfig) -> int:
    box = InputBox(0.0, 1.0, cfg.n)
    rows = sweep_rr(cfg.n, cfg.L, cfg.delta, _E(cfg), cfg.branching, cfg.build_seed,
                    cfg.rotation_seed or 0, box)
    dicts = [dataclasses.asdict(r) for r in rows]
    if cfg.format == "csv":
        _emit(cfg, to_csv(dicts))
    else:
        _emit(cfg, to_jsonl({"experiment": "sweep_rr", **d} for d in dicts))
    return EXIT_OK


def cmd_reduce_demo(cfg: RunConfig) -> int:
    results = reduction_experiment(cfg.A, cfg.x_values, cfg.trials, cfg.trial_seed)
    records = [{"experiment": "reduction", "inputs": {"A": cfg.A, "x": r.x, "trials": r.trials,
                                                       "seed": cfg.trial_seed},
                "p_hat": r.ones_reduced / r.trials, "p_direct": r.ones_direct / r.trials,
                "bound": r.p, "pvalue": r.pvalue_reduced, "pvalue_two_sample": r.pvalue_two_sample,
                "verdict": "pass" if r.passes() else "fail"} for r in results]
    if cfg.format == "csv":
        _emit(cfg, to_csv([_flatten(r) for r in records]))
    else:
        _emit(cfg, to_jsonl(records))
    return EXIT_OK if all(r["verdict"] == "pass" for r in records) else EXIT_VERIFY


def _flatten(rec: dict) -> dict:
    out = {}
    for k, v in rec.items():
        if isinstance(v, dict):
            out.update({f"{k}.{kk}": vv for kk, vv in v.items()})
        elif isinstance(v, list):
            out[k] = " ".join(str(x) for x in v)
        else:
            out[k] = v
    return out


def cmd_report(cfg: RunConfig) -> int:
    records = []
    for path in cfg.inputs:
        for line in Path(path).read_text().splitlines():
            if line.strip():
                records.append(json.loads(line))
    rows = [_flatten(r) for r in records]
    if cfg.format == "csv":
        _emit(cfg, to_csv(rows))
    else:
        lines = [f"{r.get('experiment', '?'):<12} {r.get('verdict', '-'):<5} "
                 f"p_hat={r.get('p_hat', float('nan')):.3g} bound={r.get('bound', float('nan')):.3g}"
                 for r in records]
        _emit(cfg, "\n".join(lines) + ("\n" if lines else ""))
    return EXIT_OK if all(r.get("verdict", "pass") == "pass" for r in records) else EXIT_VERIFY


HANDLERS = {"build": cmd_build, "verify": cmd_verify, "simulate": cmd_simulate,
            "sweep-rr": cmd_sweep_rr, "reduce-demo": cmd_reduce_demo, "report": cmd_report}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (PlacementExhausted, Infeasible, DimensionUnderflow)):
        return EXIT_PLACEMENT
    if isinstance(exc, RegimeViolation):
        return EXIT_REGIME
    return EXIT_OTHER


def run(cfg: RunConfig) -> int:
    try:
        return HANDLERS[cfg.command](cfg)
    except (DIError, ValueError, OSError, KeyError) as exc:
        print(f"di-forge {cfg.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"di-forge: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
