"""Command-line front end: ``coordcap <command> [flags]``.

Every run prints (or writes with ``--out``) one JSON run record holding the
command, the fully resolved configuration, the toolkit version, a
timestamp, the wall-clock duration and the result payload.  ``sweep`` can
also emit a CSV table.

Exit codes: 0 success (an infeasible region is a success with
``feasible: false``), 2 usage error, 3 input or spec error, 4 precondition
violation, 5 resource guard tripped, 1 anything unexpected.  Failures print
a JSON object ``{"error": {"kind", "message"}}`` on stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Optional

import numpy as np

from . import __version__
from .capacity_solver import (
    AdaptiveProblem,
    MultipleProblem,
    brute_force_capacity,
    capacity_adaptive,
    capacity_multiple,
    feasibility_adaptive,
    feasibility_multiple,
    region_sweep,
)
from .coding_sim import CODEBOOK_MODES, DEFAULT_EPSILON, DEFAULT_EPSILON1, SimConfig, run_trials
from .errors import CoordcapError, InputError, PreconditionError, ResourceError
from .info_measures import LN2
from .types_core import Alphabet, ChannelState, CompoundChannel, JointDistribution, Kernel
from .typical_sets import (
    TypicalityParams,
    conditional_sequence_probability_bounds,
    conditional_set_probability_bounds,
    conditional_set_probability_exact,
    conditional_set_size_bounds,
    conditional_set_size_exact,
    cross_probability_bound,
    cross_set_probability_exact,
    jointly_typical_set_size_bounds,
    typical_set_size_exact,
)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_PRECONDITION = 4
EXIT_RESOURCE = 5

EXACT_SIZE_LIMIT = 16  # largest n for which `bounds --exact` enumerates joint types


# --------------------------------------------------------------- channel specs

def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _locate_row(text: str, state: int, key: str, row: int) -> Optional[int]:
    """Best-effort source line of ``states[state].key[row]`` in the raw JSON."""
    pos = text.find('"states"')
    if pos < 0:
        return None
    for _ in range(state + 1):
        pos = text.find(f'"{key}"', pos + 1)
        if pos < 0:
            return None
    pos = text.find("[", pos)
    depth, seen = 0, -1
    while 0 <= pos < len(text):
        ch = text[pos]
        if ch == "[":
            depth += 1
            if depth == 2:
                seen += 1
                if seen == row:
                    return _line_of(text, pos)
        elif ch == "]":
            depth -= 1
            if depth == 0:
                return None
        pos += 1
    return None


def _alphabet_from(entry: Any, name: str) -> Alphabet:
    if isinstance(entry, int) and not isinstance(entry, bool):
        return Alphabet(entry)
    if isinstance(entry, dict) and "size" in entry:
        return Alphabet(entry["size"], entry.get("labels"))
    if isinstance(entry, dict) and "labels" in entry:
        return Alphabet(len(entry["labels"]), entry["labels"])
    raise InputError(f"alphabets.{name}: expected a size or an object with size/labels")


def channel_from_dict(spec: dict, text: str = "", where: str = "<spec>") -> CompoundChannel:
    """Build a CompoundChannel from a parsed channel-spec document."""
    if not isinstance(spec, dict):
        raise InputError(f"{where}: top level must be an object")
    try:
        alph = spec["alphabets"]
        ax, ay, az = (_alphabet_from(alph[k], k) for k in ("x", "y", "z"))
        raw_states = spec["states"]
    except KeyError as exc:
        raise InputError(f"{where}: missing field {exc.args[0]!r}") from None
    except TypeError:
        raise InputError(f"{where}: alphabets must be an object with x, y and z") from None
    if not isinstance(raw_states, list) or not raw_states:
        raise InputError(f"{where}: states must be a nonempty list")
    states = []
    for s, st in enumerate(raw_states):
        kernels = []
        for key, out in (("kernel_y", ay), ("kernel_z", az)):
            if not isinstance(st, dict) or key not in st:
                raise InputError(f"{where}: states[{s}] is missing {key}")
            mat = st[key]
            if (not isinstance(mat, list) or len(mat) != ax.size
                    or any(not isinstance(r, list) or len(r) != out.size for r in mat)):
                raise InputError(f"{where}: states[{s}].{key} must be a {ax.size}x{out.size} "
                                 f"matrix (dimension mismatch with the alphabets)")
            try:
                arr = np.array(mat, dtype=float)
            except (TypeError, ValueError):
                raise InputError(f"{where}: states[{s}].{key} has non-numeric entries") from None
            for r, row in enumerate(arr):
                total = row.sum()
                if np.any(~np.isfinite(row)) or np.any(row < 0) or abs(total - 1.0) > 1e-9:
                    line = _locate_row(text, s, key, r) if text else None
                    at = f" (line {line})" if line else ""
                    raise InputError(f"{where}{at}: state {s} {key} row {r} is not a "
                                     f"probability vector (sum {float(total)!r})")
            kernels.append(Kernel(arr, input_alphabet=ax, output_alphabet=out))
        states.append(ChannelState(*kernels))
    return CompoundChannel(ax, ay, az, tuple(states), name=spec.get("name"),
                           description=spec.get("description"))


def parse_channel_spec(path: str) -> CompoundChannel:
    """Read and validate a JSON channel-spec file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"{path}: cannot read channel spec ({exc.strerror})") from None
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return channel_from_dict(spec, text, path)


def channel_to_dict(channel: CompoundChannel) -> dict:
    def alphabet(a: Alphabet):
        return {"size": a.size} if a.labels is None else {"size": a.size, "labels": list(a.labels)}

    out: dict = {}
    if channel.name is not None:
        out["name"] = channel.name
    if channel.description is not None:
        out["description"] = channel.description
    out["alphabets"] = {"x": alphabet(channel.x_alphabet), "y": alphabet(channel.y_alphabet),
                        "z": alphabet(channel.z_alphabet)}
    out["states"] = [{"kernel_y": st.kernel_y.rows.tolist(), "kernel_z": st.kernel_z.rows.tolist()}
                     for st in channel.states]
    return out


def serialize_channel_spec(channel: CompoundChannel) -> str:
    return json.dumps(channel_to_dict(channel), indent=2) + "\n"


# ------------------------------------------------------------------ arguments

def _load_json_arg(value: str, what: str) -> Any:
    """A flag value is either inline JSON / comma list or a path to a JSON file."""
    text = value.strip()
    if text and (text[0] in "[{" or text[0].isdigit() or text[0] in "-."):
        try:
            return json.loads(text if text[0] in "[{" else f"[{text}]")
        except json.JSONDecodeError:
            pass
    if os.path.exists(value):
        try:
            with open(value, encoding="utf-8") as fh:
                return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{value} line {exc.lineno}: {exc.msg}") from None
    raise InputError(f"{what}: {value!r} is neither inline JSON nor a readable file")


def _as_pmf(obj: Any, what: str) -> list[float]:
    if isinstance(obj, dict):
        for key in ("pmf", "probs", "target"):
            if key in obj:
                return _as_pmf(obj[key], what)
    if isinstance(obj, list) and obj and all(isinstance(v, (int, float)) for v in obj):
        return [float(v) for v in obj]
    raise InputError(f"{what}: expected a list of probabilities")


def _targets(value: str, num_states: int) -> list[list[float]]:
    obj = _load_json_arg(value, "--targets")
    if isinstance(obj, dict) and "targets" in obj:
        obj = obj["targets"]
    if isinstance(obj, list) and obj and all(isinstance(v, list) for v in obj):
        pmfs = [_as_pmf(v, "--targets") for v in obj]
        if len(pmfs) != num_states:
            raise InputError(f"--targets: {len(pmfs)} targets for {num_states} states")
        return pmfs
    return [_as_pmf(obj, "--targets")] * num_states


def _deltas(value: str, num_states: int) -> list[float]:
    obj = _load_json_arg(value, "--delta")
    vals = obj if isinstance(obj, list) else [obj]
    try:
        vals = [float(v) for v in vals]
    except (TypeError, ValueError):
        raise InputError(f"--delta: expected numbers, got {value!r}") from None
    if len(vals) == 1:
        vals = vals * num_states
    if len(vals) != num_states:
        raise InputError(f"--delta: {len(vals)} values for {num_states} states")
    return vals


def _delta_grid(value: str) -> list[float]:
    try:
        a, b, step = (float(v) for v in value.split(":"))
    except ValueError:
        raise InputError(f"--delta-grid expects start:stop:step, got {value!r}") from None
    if step <= 0 or b < a:
        raise InputError("--delta-grid needs step > 0 and stop >= start")
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return [round(a + i * step, 12) for i in range(count)]


def _threads(args) -> Optional[int]:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("COORDCAP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"COORDCAP_THREADS must be an integer, got {env!r}") from None
    return None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", f"{self.prog}: {message}")
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coordcap", description="Coordination-constrained capacity toolkit.")
    p.add_argument("--version", action="version", version=f"coordcap {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, channel=True):
        if channel:
            sp.add_argument("--channel", required=True, metavar="PATH", help="channel spec JSON")
        sp.add_argument("--out", metavar="PATH", help="write the record here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default="json")

    sp = sub.add_parser("capacity", help="capacity with exact per-state targets")
    common(sp)
    sp.add_argument("--targets", required=True, help="one PMF or a list of per-state PMFs")
    sp.add_argument("--tol", type=float, default=1e-6)

    sp = sub.add_parser("adaptive", help="capacity with per-state delta neighbourhoods")
    common(sp)
    sp.add_argument("--target", required=True)
    sp.add_argument("--delta", required=True, help="one value or a per-state list")
    sp.add_argument("--tol", type=float, default=1e-6)

    sp = sub.add_parser("feasible", help="is the constraint region nonempty?")
    common(sp)
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--targets")
    grp.add_argument("--target")
    sp.add_argument("--delta", help="with --target: per-state radii (default 0)")

    sp = sub.add_parser("sweep", help="adaptive capacity over a grid of deltas")
    common(sp)
    sp.add_argument("--target", required=True)
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--delta-grid", metavar="START:STOP:STEP")
    grp.add_argument("--delta", help="list of grid values (scalars apply to every state)")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--threads", type=int)

    sp = sub.add_parser("simulate", help="Monte Carlo random coding")
    common(sp)
    sp.add_argument("--input-pmf", required=True, help="codebook generator N")
    sp.add_argument("--rate", type=float, required=True, help="rate in nats per symbol")
    sp.add_argument("--blocklength", type=int, required=True)
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    sp.add_argument("--epsilon1", type=float, default=DEFAULT_EPSILON1)
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--target")
    grp.add_argument("--targets")
    sp.add_argument("--delta", help="per-state radii for the adaptive check (needs --target)")
    sp.add_argument("--codebook-mode", choices=CODEBOOK_MODES, default="auto")
    sp.add_argument("--threads", type=int)

    sp = sub.add_parser("bounds", help="typical-set brackets for a joint PMF")
    common(sp, channel=False)
    sp.add_argument("--joint", required=True, help="joint PMF as a row-major matrix")
    sp.add_argument("--blocklength", type=int, required=True)
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--x", help="conditioning sequence (symbol indices) for conditional brackets")
    sp.add_argument("--q-y", help="i.i.d. law of Y for the cross-probability bracket")
    sp.add_argument("--exact", action="store_true", help="add exact values next to the brackets")

    sp = sub.add_parser("oracle", help="brute-force lattice capacity (cross-check)")
    common(sp)
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--targets")
    grp.add_argument("--target")
    sp.add_argument("--delta")
    sp.add_argument("--lattice-n", type=int, default=200)
    return p


# ---------------------------------------------------------------- commands

def _cmd_capacity(args):
    ch = parse_channel_spec(args.channel)
    targets = _targets(args.targets, ch.num_states)
    res = capacity_multiple(MultipleProblem(ch, targets), tol=args.tol)
    return {"channel": args.channel, "targets": targets, "tol": args.tol}, res.to_dict()


def _cmd_adaptive(args):
    ch = parse_channel_spec(args.channel)
    q = _as_pmf(_load_json_arg(args.target, "--target"), "--target")
    deltas = _deltas(args.delta, ch.num_states)
    res = capacity_adaptive(AdaptiveProblem(ch, q, deltas), tol=args.tol)
    return {"channel": args.channel, "target": q, "deltas": deltas, "tol": args.tol}, res.to_dict()


def _problem(args, ch):
    if args.targets is not None:
        if args.delta is not None:
            raise InputError("--delta goes with --target, not --targets")
        targets = _targets(args.targets, ch.num_states)
        return MultipleProblem(ch, targets), {"targets": targets}
    q = _as_pmf(_load_json_arg(args.target, "--target"), "--target")
    deltas = _deltas(args.delta, ch.num_states) if args.delta is not None else [0.0] * ch.num_states
    return AdaptiveProblem(ch, q, deltas), {"target": q, "deltas": deltas}


def _cmd_feasible(args):
    ch = parse_channel_spec(args.channel)
    prob, cfg = _problem(args, ch)
    check = feasibility_multiple if isinstance(prob, MultipleProblem) else feasibility_adaptive
    ok, witness = check(prob)
    return ({"channel": args.channel, **cfg},
            {"feasible": ok, "witness": None if witness is None else witness.probs.tolist()})


def _cmd_sweep(args):
    ch = parse_channel_spec(args.channel)
    q = _as_pmf(_load_json_arg(args.target, "--target"), "--target")
    if args.delta_grid is not None:
        grid: list = _delta_grid(args.delta_grid)
    else:
        obj = _load_json_arg(args.delta, "--delta")
        grid = obj if isinstance(obj, list) else [obj]
    rows = region_sweep(ch, q, grid, tol=args.tol, threads=_threads(args))
    payload = {"rows": [{"deltas": list(r.deltas), **r.result.to_dict()} for r in rows]}
    cfg = {"channel": args.channel, "target": q, "grid": grid, "tol": args.tol}
    return cfg, payload


def _cmd_simulate(args):
    ch = parse_channel_spec(args.channel)
    pmf = _as_pmf(_load_json_arg(args.input_pmf, "--input-pmf"), "--input-pmf")
    target = targets = deltas = None
    if args.target is not None:
        target = _as_pmf(_load_json_arg(args.target, "--target"), "--target")
    else:
        targets = _targets(args.targets, ch.num_states)
    if args.delta is not None:
        if target is None:
            raise InputError("--delta needs --target")
        deltas = _deltas(args.delta, ch.num_states)
    cfg = SimConfig(ch, pmf, args.rate, args.blocklength, args.trials, seed=args.seed,
                    epsilon=args.epsilon, target=target, targets=targets, deltas=deltas,
                    epsilon1=args.epsilon1, codebook_mode=args.codebook_mode)
    report = run_trials(cfg, threads=_threads(args))
    return {"channel": args.channel, **cfg.to_dict()}, report.to_dict()


def _parse_x(value: str) -> list[int]:
    obj = _load_json_arg(value, "--x")
    if isinstance(obj, list) and all(isinstance(v, int) for v in obj):
        return obj
    raise InputError("--x: expected a list of symbol indices")


def _cmd_bounds(args):
    joint = _load_json_arg(args.joint, "--joint")
    if isinstance(joint, dict):
        joint = joint.get("joint")
    pj = JointDistribution(np.asarray(joint, dtype=float))
    params = TypicalityParams(args.epsilon, args.blocklength)
    out: dict = {"typical_set_size": jointly_typical_set_size_bounds(pj, params).to_dict()}
    cfg: dict = {"joint": pj.probs.tolist(), "blocklength": args.blocklength,
                 "epsilon": args.epsilon, "x": None, "q_y": None, "exact": args.exact}
    if args.exact:
        if args.blocklength > EXACT_SIZE_LIMIT:
            raise ResourceError(f"--exact enumeration is limited to n <= {EXACT_SIZE_LIMIT}")
        out["typical_set_size"]["exact"] = typical_set_size_exact(pj, args.blocklength,
                                                                   args.epsilon)
    if args.x is not None:
        x = _parse_x(args.x)
        cfg["x"] = x
        if len(x) != args.blocklength:
            raise InputError(f"--x has length {len(x)}, blocklength is {args.blocklength}")
        kernel = pj.conditional()
        out["conditional_sequence_probability"] = \
            conditional_sequence_probability_bounds(pj, x, params).to_dict()
        out["conditional_set_probability"] = conditional_set_probability_bounds(pj, x, params).to_dict()
        out["conditional_set_size"] = conditional_set_size_bounds(pj, x, params).to_dict()
        if args.exact:
            out["conditional_set_probability"]["exact"] = \
                conditional_set_probability_exact(pj, x, kernel, args.epsilon)
            out["conditional_set_size"]["exact"] = conditional_set_size_exact(pj, x, args.epsilon)
        if args.q_y is not None:
            qy = _as_pmf(_load_json_arg(args.q_y, "--q-y"), "--q-y")
            cfg["q_y"] = qy
            out["cross_probability"] = cross_probability_bound(pj, qy, x, params).to_dict()
            if args.exact:
                out["cross_probability"]["exact"] = cross_set_probability_exact(pj, qy, x,
                                                                                args.epsilon)
    elif args.q_y is not None:
        raise InputError("--q-y needs --x")
    return cfg, out


def _cmd_oracle(args):
    ch = parse_channel_spec(args.channel)
    prob, cfg = _problem(args, ch)
    rate = brute_force_capacity(prob, args.lattice_n)
    feasible = not math.isnan(rate)
    return ({"channel": args.channel, "lattice_n": args.lattice_n, **cfg},
            {"feasible": feasible, "rate_nats": rate if feasible else None,
             "rate_bits": rate / LN2 if feasible else None, "lattice_n": args.lattice_n})


COMMANDS = {
    "capacity": _cmd_capacity,
    "adaptive": _cmd_adaptive,
    "feasible": _cmd_feasible,
    "sweep": _cmd_sweep,
    "simulate": _cmd_simulate,
    "bounds": _cmd_bounds,
    "oracle": _cmd_oracle,
}


# ------------------------------------------------------------------ output

@dataclass
class RunRecord:
    command: str
    config: dict
    result: dict
    version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    duration_s: float = 0.0

    def to_dict(self) -> dict:
        return {"command": self.command, "version": self.version, "timestamp": self.timestamp,
                "duration_s": self.duration_s, "config": self.config, "result": self.result}


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON text with every float printed to 17 significant digits.

    Non-finite floats become ``null`` (JSON has no NaN or infinity).
    """
    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, bool) or o is None or isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, int):
            return str(o)
        if isinstance(o, float):
            return format(o, ".17g") if math.isfinite(o) else "null"
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(not isinstance(v, (dict, list)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialise {type(o).__name__}")

    return enc(_plain(obj), 0)


def sweep_csv(payload: dict) -> str:
    rows = payload["rows"]
    width = len(rows[0]["deltas"]) if rows else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"delta_{s}" for s in range(width)] + ["rate_nats", "rate_bits"])
    for r in rows:
        rate = [format(r[k], ".6g") if r[k] is not None else "" for k in ("rate_nats", "rate_bits")]
        w.writerow([format(d, ".6g") for d in r["deltas"]] + rate)
    return buf.getvalue()


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"kind": kind, "message": message}}) + "\n")


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.format == "csv" and args.command != "sweep":
        _emit_error("usage", "--format csv is only available for sweep")
        return EXIT_USAGE
    start = time.perf_counter()
    try:
        config, payload = COMMANDS[args.command](args)
    except PreconditionError as exc:
        _emit_error("precondition", str(exc))
        return EXIT_PRECONDITION
    except InputError as exc:
        _emit_error("input", str(exc))
        return EXIT_INPUT
    except ResourceError as exc:
        _emit_error("resource", str(exc))
        return EXIT_RESOURCE
    except CoordcapError as exc:
        _emit_error("error", str(exc))
        return EXIT_UNEXPECTED
    record = RunRecord(args.command, config, payload,
                       duration_s=time.perf_counter() - start)
    text = sweep_csv(payload) if args.format == "csv" else dumps(record.to_dict()) + "\n"
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            _emit_error("input", f"{args.out}: cannot write output ({exc.strerror})")
            return EXIT_INPUT
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
