"""Command line entry point.

Every subcommand writes its artifacts and a ``manifest.json`` into ``--out``;
``run --manifest`` replays a manifest and compares output hashes.  Exit
codes: 0 success, 2 invalid input, 3 numerical failure.  Errors are also
reported as one JSON object on standard error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import PoincareZetaError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
MANIFEST = "manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _report("UsageError", message, EXIT_INVALID)
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _report(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message), "exit_code": code}) + "\n")


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from exc


def _complexes(text):
    try:
        return [complex(v.replace(" ", "")) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated complex numbers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# Subcommands.  Each takes (params, outdir, tag) and returns the written file names
# together with scalar descriptions for the manifest.

def _vec(v):
    return ",".join(repr(float(x)) for x in np.ravel(v))


def _system(params):
    from .flow import free_system, three_bump_system
    if params["system"] == "three-bump":
        return three_bump_system(R=params["R"])
    return free_system(2, interaction_radius=params["R"])


def cmd_flow(p, out, tag):
    from .flow import integrate_flow, flow_with_tangent
    sys_ = _system(p)
    state = np.array(_floats(p["state"]))
    if state.size != 4:
        raise ValidationError("--state needs four numbers x1,x2,xi1,xi2")
    _, times, path = integrate_flow(sys_, state, p["t"], p["dt"], trajectory=True)
    path = path[0]
    stride = max(1, int(p["stride"]))
    idx = np.arange(0, len(times), stride)
    if idx[-1] != len(times) - 1:
        idx = np.append(idx, len(times) - 1)
    energy = sys_.energy(path[idx])
    rows = [[times[i], *path[i], e] for i, e in zip(idx, energy)]
    io.write_csv(out / "trajectory.csv", ["t", "x1", "x2", "xi1", "xi2", "energy"], rows, tag)
    names = ["trajectory.csv"]
    if p["tangent"]:
        _, J = flow_with_tangent(sys_, state[None], p["t"], p["dt"])
        io.write_oqmx(out / "tangent.oqmx", J[0])
        names.append("tangent.oqmx")
    return names, {"steps": len(times) - 1, "step": float(times[1] - times[0])}


def cmd_trapped(p, out, tag):
    from .flow import GridSpec, sample_trapped_set
    sys_ = _system(p)
    grid = GridSpec(_floats(p["lo"]), _floats(p["hi"]), _ints(p["counts"]), int(p["directions"]))
    sample = sample_trapped_set(sys_, p["E"], grid, p["threshold"], p["dt"])
    rows = [[*pt, esc] for pt, esc in zip(sample.points, sample.escape)]
    io.write_csv(out / "trapped.csv", ["x1", "x2", "xi1", "xi2", "escape_time"], rows, tag)
    info = {f"grid.{k}": _vec(v) if isinstance(v, list) else v for k, v in sample.grid.items()}
    info["points"] = len(sample)
    return ["trapped.csv"], info


def cmd_section(p, out, tag):
    from .poincare import atlas_rows, build_atlas, symplectic_check, three_bump_sections
    sys_ = _system(dict(p, system="three-bump"))
    charts = three_bump_sections(p["E"], p["half_width"], p["eta_max"])
    atlas = build_atlas(sys_, charts, int(p["seeds"]), dt=p["dt"], horizon=p["horizon"])
    header, rows = atlas_rows(atlas)
    io.write_csv(out / "atlas.csv", header, rows, tag)
    rep = symplectic_check(atlas)
    print(json.dumps({"records": rep.count, "pairs": len(atlas.pairs()),
                      "max_symplectic_defect": rep.max_form_defect}))
    info = {"records": rep.count}
    for c in atlas.sections:
        pre = f"chart{c.index}."
        info.update({pre + "label": c.label, pre + "center": _vec(c.center), pre + "normal": _vec(c.normal),
                     pre + "lo": _vec(c.lo), pre + "hi": _vec(c.hi), pre + "energy": float(c.energy)})
    return ["atlas.csv"], info


def _baker(p):
    from .qmaps import open_baker
    return open_baker(int(p["N"]), _ints(p["kept"]), int(p["branches"]))


def cmd_quantize(p, out, tag):
    if p["model"] != "baker":
        raise ValidationError(f"unknown model {p['model']!r}")
    M = _baker(p)
    A = M.dense()
    io.write_oqmx(out / "matrix.oqmx", A)
    lam = M.eigenvalues()
    order = np.lexsort((lam.imag, lam.real))
    io.write_csv(out / "eigenvalues.csv", ["re", "im", "abs"],
                 [[v.real, v.imag, abs(v)] for v in lam[order]], tag)
    names = ["matrix.oqmx", "eigenvalues.csv"]
    if p["matrix_csv"]:
        io.write_csv(out / "matrix.csv", ["i", "j", "re", "im"], io.matrix_rows(A), tag)
        names.append("matrix.csv")
    return names, {"h": M.h, "size": M.size}


def zeta_family(p):
    """The holomorphic family used by ``zeta`` (exposed for cross-checks)."""
    from .grushin import dressed_diagonal_family
    from .qmaps import DressedFamily, OpenMapMatrix, torus_h
    if p.get("matrix"):
        A = io.read_oqmx(p["matrix"])
        if A.shape[0] != A.shape[1]:
            raise ValidationError(f"{p['matrix']} is not square")
        return DressedFamily(OpenMapMatrix.single(A, torus_h(A.shape[0])), p["T"])
    if p["model"] == "baker":
        return DressedFamily(_baker(p), p["T"])
    if p["model"] == "diag":
        return dressed_diagonal_family(_complexes(p["diag"]), p["T"], p["h"])
    raise ValidationError(f"unknown model {p['model']!r}")


def cmd_zeta(p, out, tag):
    from .grushin import Window, find_resonances
    win = Window.parse(p["window"])
    res = find_resonances(zeta_family(p), win, grid=tuple(_ints(p["grid"])))
    header, rows = io.resonance_rows(res)
    io.write_csv(out / "resonances.csv", header, rows, tag)
    return ["resonances.csv"], {"window": _vec(win.describe()), "zeros": res.total_multiplicity,
                                "boundary_count": res.boundary_count}


def cmd_grushin(p, out, tag):
    from .grushin import selftest
    if not p["selftest"]:
        raise ValidationError("grushin currently supports --selftest only")
    counts = selftest(int(p["seed"]), int(p["trials_schur"]), int(p["trials_index"]), int(p["trials_trace"]))
    rows = [[k, a, b] for k, (a, b) in counts.items()]
    io.write_csv(out / "selftest.csv", ["suite", "passed", "trials"], rows, tag)
    for k, a, b in rows:
        print(f"{k}: {a}/{b} passed")
    if any(a != b for _, a, b in rows):
        raise PoincareZetaError("self-test failures: " + ", ".join(f"{k} {a}/{b}" for k, a, b in rows if a != b))
    return ["selftest.csv"], {}


def cmd_scale1d(p, out, tag):
    from .grushin import Window
    from .scaling import ScalingContour, resonances_direct, smoothed_barrier
    V = smoothed_barrier(p["V0"], p["a"], p["w"])
    thetas = _floats(p["thetas"])
    res = resonances_direct(V, p["h"], Window.parse(p["window"]), thetas, R=p["R"], L=p["L"],
                            npts=int(p["npts"]), tol=p["tol"])
    header, rows = io.resonance_rows(res, {"theta": min(thetas), "Npts": int(p["npts"]), "L": p["L"]})
    io.write_csv(out / "resonances.csv", header, rows, tag)
    info = {f"contour.{k}": v for k, v in ScalingContour(min(thetas), p["R"]).describe().items()}
    info.update({"window": _vec(Window.parse(p["window"]).describe()), "resonances": len(res.zeros)})
    return ["resonances.csv"], info


COMMANDS = {"flow": cmd_flow, "trapped": cmd_trapped, "section": cmd_section, "quantize": cmd_quantize,
            "zeta": cmd_zeta, "grushin": cmd_grushin, "scale1d": cmd_scale1d}


# ---------------------------------------------------------------------------
# Parser

def build_parser():
    ap = _Parser(prog="poincarezeta", description="Poincare sections, open quantum maps and resonances.")
    ap.add_argument("--config", help="INI file; keys of section [<command>] or [DEFAULT] act as flags")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", default=".", help="output directory")
        return sp

    def dynamics(sp):
        sp.add_argument("--system", choices=["three-bump", "free"], default="three-bump")
        sp.add_argument("--R", type=float, default=4.0, help="interaction radius")

    sp = add("flow", "integrate a Hamiltonian trajectory")
    dynamics(sp)
    sp.add_argument("--state", default="-0.4994894518107755,0,0,-0.8947645489274835",
                    help="x1,x2,xi1,xi2 (default: the symmetric bounce orbit at E = 0)")
    sp.add_argument("--t", type=float, default=10.0)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--stride", type=int, default=100, help="write every n-th step")
    sp.add_argument("--tangent", action="store_true", help="also write the flow Jacobian")

    sp = add("trapped", "sample the trapped set on an energy shell")
    dynamics(sp)
    sp.add_argument("--E", type=float, default=0.0)
    sp.add_argument("--lo", default="-1.5,-1.5")
    sp.add_argument("--hi", default="1.5,1.5")
    sp.add_argument("--counts", default="19,19")
    sp.add_argument("--directions", type=int, default=24)
    sp.add_argument("--threshold", type=float, default=2.0)
    sp.add_argument("--dt", type=float, default=5e-3)

    sp = add("section", "build the three-bump return-map atlas")
    sp.add_argument("--R", type=float, default=4.0)
    sp.add_argument("--E", type=float, default=0.0)
    sp.add_argument("--seeds", type=int, default=25, help="seeds per chart axis")
    sp.add_argument("--half-width", dest="half_width", type=float, default=0.45)
    sp.add_argument("--eta-max", dest="eta_max", type=float, default=1.0)
    sp.add_argument("--dt", type=float, default=2e-3)
    sp.add_argument("--horizon", type=float, default=6.0)

    def baker(sp):
        sp.add_argument("--model", default="baker")
        sp.add_argument("--N", type=int, default=81)
        sp.add_argument("--kept", default="0,2")
        sp.add_argument("--branches", type=int, default=3)

    sp = add("quantize", "assemble an open quantum map")
    baker(sp)
    sp.add_argument("--matrix-csv", dest="matrix_csv", action="store_true", help="also write the matrix as CSV")

    sp = add("zeta", "zeros of det(I - M(z)) in a window")
    baker(sp)
    sp.add_argument("--T", type=float, default=1.0, help="return time in the phase exp(i z T / h)")
    sp.add_argument("--diag", default="0.5", help="eigenvalues for --model diag")
    sp.add_argument("--matrix", default=None, help="OQMX file used instead of --model (h = 1/(2 pi N))")
    sp.add_argument("--h", type=float, default=0.01, help="h for --model diag")
    sp.add_argument("--window", default="-0.05,0.05,-0.02,0", help="re_min,re_max,im_min,im_max")
    sp.add_argument("--grid", default="4,4")

    sp = add("grushin", "Grushin problem checks")
    sp.add_argument("--selftest", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials-schur", dest="trials_schur", type=int, default=200)
    sp.add_argument("--trials-index", dest="trials_index", type=int, default=100)
    sp.add_argument("--trials-trace", dest="trials_trace", type=int, default=50)

    sp = add("scale1d", "1D complex-scaling resonances of a smoothed barrier")
    sp.add_argument("--V0", type=float, default=0.8)
    sp.add_argument("--a", type=float, default=1.0)
    sp.add_argument("--w", type=float, default=0.05)
    sp.add_argument("--h", type=float, default=0.05)
    sp.add_argument("--window", default="-0.45,0,-0.1,0.01")
    sp.add_argument("--thetas", default="0.3,0.4,0.5")
    sp.add_argument("--R", type=float, default=1.5)
    sp.add_argument("--L", type=float, default=7.0)
    sp.add_argument("--npts", type=int, default=6000)
    sp.add_argument("--tol", type=float, default=1e-6)

    sp = sub.add_parser("run", help="replay a manifest and compare output hashes")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", default=None, help="output directory (default: the manifest's directory)")
    return ap


def _config_argv(path, command):
    """Translate an INI file into flags placed before the command-line ones."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    items = dict(cp.defaults())
    if cp.has_section(command):
        items.update(dict(cp.items(command)))
    argv = []
    for key, val in items.items():
        flag = "--" + key.replace("_", "-") if key not in ("R", "E", "N", "T", "L", "V0") else "--" + key
        if val.strip().lower() in ("true", "yes", "on"):
            argv.append(flag)
        elif val.strip().lower() in ("false", "no", "off"):
            continue
        else:
            argv += [flag, val.strip()]
    return argv


def _flag_names(parser, command):
    sp = parser._subparsers._group_actions[0].choices[command]
    return {a.dest: a.option_strings for a in sp._actions if a.option_strings}


_NUMERIC = re.compile(r"^-[\d.]")


def _join_negative(argv):
    """``--window -0.05,0.05`` -> ``--window=-0.05,0.05`` so argparse keeps the value."""
    out = []
    for a in argv:
        if out and _NUMERIC.match(a) and out[-1].startswith("--") and "=" not in out[-1]:
            out[-1] = f"{out[-1]}={a}"
        else:
            out.append(a)
    return out


def parse(argv):
    argv = _join_negative(argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        # config keys use option spellings; keep case for single-letter physics flags
        cfg = _config_argv(args.config, args.command)
        names = _flag_names(ap, args.command)
        lower = {o.lower(): o for opts in names.values() for o in opts}
        cfg = [lower.get(a.lower(), a) if a.startswith("--") else a for a in cfg]
        i = argv.index(args.command)
        args = ap.parse_args(argv[:i + 1] + _join_negative(cfg) + argv[i + 1:])
    return args


def execute(command, params, outdir, inputs=None):
    """Run a subcommand with explicit parameters and write the manifest."""
    inputs = inputs or {}
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    tag = io.manifest_hash(command, params, inputs)
    names, info = COMMANDS[command](params, out, tag)
    outputs = io.hash_outputs(out, names)
    io.write_manifest(out / MANIFEST, command, params, inputs, outputs, info)
    return outputs


def replay(manifest_path, outdir=None):
    doc = io.read_manifest(manifest_path)
    outdir = Path(outdir) if outdir else Path(manifest_path).parent
    for name, digest in doc["inputs"].items():
        if io.sha256_file(name) != digest:
            raise ValidationError(f"input {name} changed since the manifest was written")
    outputs = execute(doc["command"], doc["params"], outdir, doc["inputs"])
    diff = sorted(k for k in set(outputs) | set(doc["outputs"]) if outputs.get(k) != doc["outputs"].get(k))
    return diff


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
        if args.command == "run":
            diff = replay(args.manifest, args.out)
            if diff:
                raise PoincareZetaError("replay produced different outputs: " + ", ".join(diff))
            print(json.dumps({"replay": "identical"}))
            return EXIT_OK
        params = {k: v for k, v in vars(args).items() if k not in ("command", "out", "config")}
        inputs = {}
        if params.get("matrix"):
            params["matrix"] = str(Path(params["matrix"]).resolve())
            inputs[params["matrix"]] = io.sha256_file(params["matrix"])
        execute(args.command, params, args.out, inputs)
        return EXIT_OK
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValidationError as exc:
        _report(type(exc).__name__, exc, EXIT_INVALID)
        return EXIT_INVALID
    except (PoincareZetaError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        _report(type(exc).__name__, exc, EXIT_NUMERIC)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
