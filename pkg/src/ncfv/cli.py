"""Batch driver: ``ncfv run <config.json>`` and ``ncfv export <dir>``.

A run executes every task over the sweep ``sizes x flux targets x
parameter values`` and writes one CSV per task plus ``manifest.json``.
Exit codes: 0 success, 2 validation error, 3 numerical failure. A failed
run keeps the CSVs written so far and leaves a ``FAILED`` marker file.

Environment overrides: ``NCFV_WORKERS`` and ``NCFV_OUT`` take precedence
over the config file; the ``--workers`` and ``--out`` flags take precedence
over both.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import io
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .ensemble import EnsembleSpec, Task, run_ensemble
from .errors import MissingManifest, NcfvError, NumericalError, ValidationError
from .lattice import TorusGeometry, quantize_flux
from .models import make_model
from .observables import ConductivityTensor, resistivity, streda_check
from .scaling import CurveFamily, collapse_fit, crossing_point

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3
MANIFEST = "manifest.json"
FAILED = "FAILED"


def load_schema():
    text = resources.files("ncfv").joinpath("schema/config.schema.json").read_text("utf-8")
    return json.loads(text)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def fmt(x):
    """Number formatting used in every CSV cell."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def validate_config(config):
    """Schema validation plus the cross-field checks; returns the resolved config."""
    try:
        jsonschema.validate(config, load_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ValidationError(f"config invalid at '{path}': {exc.message}") from None
    cfg = json.loads(json.dumps(config))  # deep copy
    cfg.setdefault("fermi_levels", [0.0])
    cfg.setdefault("ensemble", {})
    cfg["ensemble"].setdefault("configs", 1)
    cfg["ensemble"].setdefault("seed", 0)
    cfg["model"].setdefault("params", {})
    model = make_model(cfg["model"]["name"], cfg["model"]["params"])
    for sizes in cfg["sizes"]:
        if len(sizes) != model.d:
            raise ValidationError(f"sizes {sizes} do not match model dimension {model.d}")
    if "disorder" in cfg:
        make_model(cfg["model"]["name"],
                   {**cfg["model"]["params"], cfg["disorder"]["param"]: cfg["disorder"]["values"][0]})
    ids = []
    for k, task in enumerate(cfg["tasks"]):
        task.setdefault("id", task["kind"])
        ids.append(task["id"])
        if task["kind"] == "kubo":
            if "temperatures" not in cfg:
                raise ValidationError("kubo needs 'temperatures'")
            if "gamma" not in cfg and "p" not in cfg:
                raise ValidationError("kubo needs 'gamma' or 'p' (Gamma = T^p)")
        if task["kind"] in ("dos", "ccc", "loclength") and "grid" not in task:
            raise ValidationError(f"task {task['id']} needs a 'grid'")
        if task["kind"] == "loclength" and "width" not in task:
            raise ValidationError("loclength needs 'width'")
        if task["kind"] == "scaling":
            src = task.get("source")
            if src not in ids[:-1]:
                raise ValidationError("scaling 'source' must name an earlier task")
    if len(set(ids)) != len(ids):
        raise ValidationError("task ids must be unique")
    return cfg


def _grid(spec):
    return np.linspace(spec["start"], spec["stop"], spec["num"]).tolist()


def _gammas(cfg):
    temps = cfg.get("temperatures", [])
    if "gamma" in cfg:
        return [float(cfg["gamma"])] * len(temps)
    return [float(t) ** float(cfg["p"]) for t in temps]


def _sweep(cfg):
    """Points of the ``size x flux x parameter`` sweep with their resolved values."""
    plane = tuple(cfg.get("flux", {}).get("plane", (0, 1)))
    targets = cfg.get("flux", {}).get("targets", [None])
    dis = cfg.get("disorder")
    values = dis["values"] if dis else [None]
    for sizes in cfg["sizes"]:
        for target in targets:
            flux = {}
            flux_label = "0"
            if target is not None:
                m = math.gcd(sizes[plane[0]], sizes[plane[1]])
                n, _ = quantize_flux(target, m)
                flux = {plane: target}
                flux_label = f"{n}/{m}"
            for v in values:
                params = dict(cfg["model"]["params"])
                if dis:
                    params[dis["param"]] = v
                yield {"sizes": tuple(sizes), "flux": flux, "flux_label": flux_label,
                       "flux_target": target, "param": v, "params": params}


def _base_columns(cfg):
    cols = ["size", "flux"]
    if "disorder" in cfg:
        cols.append(cfg["disorder"]["param"])
    return cols


def _base_row(cfg, point):
    row = {"size": "x".join(str(m) for m in point["sizes"]), "flux": point["flux_label"]}
    if "disorder" in cfg:
        row[cfg["disorder"]["param"]] = float(point["param"])
    return row


def _ensemble_task(task, cfg):
    kind = task["kind"]
    opt = {}
    if kind in ("chern", "kubo"):
        opt["fermi_levels"] = cfg["fermi_levels"]
    if kind == "chern":
        opt["plane"] = task.get("plane", [0, 1])
    if kind == "kubo":
        opt["temperature"] = cfg["temperatures"]
        opt["gamma"] = _gammas(cfg)
        opt["components"] = [tuple(c) for c in task.get("components", [[0, 0]])]
    if kind in ("dos", "ccc", "loclength"):
        opt["grid"] = _grid(task["grid"])
    for key in ("delta", "r", "width", "directions"):
        if key in task:
            opt[key] = task[key]
    return Task(kind, opt, task["id"])


def _rows_for(task, cfg, stats, base):
    kind = task["kind"]
    n = stats.count
    mean, err = stats.mean, stats.stderr
    rows = []
    if kind == "kubo":
        comps = task.get("components", [[0, 0]])
        for c, (i, j) in enumerate(comps):
            for t, (temp, gam) in enumerate(zip(cfg["temperatures"], _gammas(cfg))):
                for e, ef in enumerate(cfg["fermi_levels"]):
                    rows.append({**base, "i": i, "j": j, "temperature": float(temp),
                                 "gamma": float(gam), "fermi_level": float(ef),
                                 "value": float(mean[c, t, e].real),
                                 "stderr": float(err[c, t, e]), "config_count": n})
    elif kind == "chern":
        for e, ef in enumerate(cfg["fermi_levels"]):
            rows.append({**base, "fermi_level": float(ef), "value": float(mean[e]),
                         "stderr": float(err[e]), "config_count": n})
    elif kind == "winding":
        rows.append({**base, "value": float(mean[0]), "stderr": float(err[0]),
                     "config_count": n})
    elif kind in ("dos", "loclength"):
        for e, en in enumerate(_grid(task["grid"])):
            rows.append({**base, "energy": float(en), "value": float(mean[e]),
                         "stderr": float(err[e]), "config_count": n})
    elif kind == "ccc":
        g = _grid(task["grid"])
        for a, ea in enumerate(g):
            for b, eb in enumerate(g):
                rows.append({**base, "energy": float(ea), "energy2": float(eb),
                             "value": float(mean[a, b]), "stderr": float(err[a, b]),
                             "config_count": n})
    return rows


def _streda_rows(task, cfg, point, base):
    if not cfg.get("flux"):
        raise ValidationError("streda needs a flux sweep")
    model = make_model(cfg["model"]["name"], point["params"])
    if not model.is_clean:
        raise ValidationError("streda runs on the clean model")
    geometry = TorusGeometry(point["sizes"], model.N)
    plane = tuple(task.get("plane", cfg["flux"].get("plane", (0, 1))))
    m = math.gcd(geometry.sizes[plane[0]], geometry.sizes[plane[1]])
    n, _ = quantize_flux(point["flux_target"], m)
    res = streda_check(model, geometry, task.get("fermi_level", 0.0), n, n + 1, plane=plane)
    out = []
    for q, v in (("slope", res.slope), ("chern", res.chern), ("filling", res.filling),
                 ("filling_next", res.filling_next)):
        out.append({**base, "fermi_level": float(task.get("fermi_level", 0.0)),
                    "quantity": q, "value": float(v), "stderr": 0.0, "config_count": 1})
    return out


def _scaling_rows(task, rows_by_task, cfg):
    src = rows_by_task[task["source"]]
    mode = task.get("mode", "temperature")
    quantity = task.get("quantity", "value")
    label_key = "temperature" if mode == "temperature" else "size"
    if quantity in ("rho_xx", "rho_xy"):
        pairs = {}
        for r in src:
            key = (r["size"], r["flux"], r.get("temperature"), r["fermi_level"])
            pairs.setdefault(key, {})[(r["i"], r["j"])] = r["value"]
        points = []
        for (size, _, temp, ef), comp in pairs.items():
            if (0, 0) not in comp or (0, 1) not in comp:
                raise ValidationError("rho needs kubo components [0,0] and [0,1]")
            rho = resistivity(ConductivityTensor.planar(comp[(0, 0)], comp[(0, 1)]))
            v = rho[0, 0] if quantity == "rho_xx" else rho[0, 1]
            points.append((size, temp, ef, v))
    else:
        points = [(r["size"], r.get("temperature"), r["fermi_level"], r["value"]) for r in src]
    curves = {}
    for size, temp, ef, v in points:
        label = temp if mode == "temperature" else float(size.split("x")[0])
        curves.setdefault(label, ([], []))
        curves[label][0].append(ef)
        curves[label][1].append(v)
    labels = {lab for lab in curves}
    if mode == "temperature" and len({p[0] for p in points}) > 1:
        raise ValidationError("temperature-mode scaling needs a single size")
    family = CurveFamily(curves)
    window = task.get("window")
    eps_c, spread = crossing_point(family, window)
    rows = [{"quantity": "crossing", "value": eps_c, "stderr": spread,
             "config_count": len(labels)}]
    if len(labels) >= 3:
        ref = task.get("ref", family.labels[0])
        er = tuple(task.get("exponent_range", (0.05, 0.5) if mode == "temperature" else (0.5, 5.0)))
        eps_range = tuple(window) if window else None
        fit = collapse_fit(family, mode, ref, er, eps_range)
        rows += [{"quantity": "exponent", "value": fit.exponent, "stderr": 0.0,
                  "config_count": len(labels)},
                 {"quantity": "eps_c", "value": fit.eps_c, "stderr": 0.0,
                  "config_count": len(labels)},
                 {"quantity": "objective", "value": fit.objective, "stderr": 0.0,
                  "config_count": len(labels)}]
    return rows


def write_csv(path, rows, header_lines):
    """CSV with ``#`` comment lines, UTF-8, LF endings, 17 significant digits."""
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO(newline="")
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in cols])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_csv(path):
    """Rows of a task CSV as dicts; numeric cells become ``int`` or ``float``."""
    lines = [ln for ln in Path(path).read_text("utf-8").splitlines() if not ln.startswith("#")]
    out = []
    for r in csv.DictReader(lines):
        row = {}
        for k, v in r.items():
            try:
                row[k] = int(v)
            except ValueError:
                try:
                    row[k] = float(v)
                except ValueError:
                    row[k] = v
        out.append(row)
    return out


def _resolved_fluxes(cfg):
    out = []
    for p in _sweep(cfg):
        if p["flux_target"] is not None:
            out.append({"size": list(p["sizes"]), "target": p["flux_target"],
                        "quantized": p["flux_label"]})
    uniq = []
    for x in out:
        if x not in uniq:
            uniq.append(x)
    return uniq


def run(config, out_dir, workers=1, progress=True):
    """Execute a validated config; returns the list of written files."""
    cfg = validate_config(config)
    out = Path(out_dir)
    h = config_hash(cfg)
    header = [f"ncfv {__version__}", f"config_sha256 {h}"]
    out.mkdir(parents=True, exist_ok=True)
    (out / FAILED).unlink(missing_ok=True)
    manifest = {"tool": "ncfv", "version": __version__, "config": cfg, "config_sha256": h,
                "quantized_fluxes": _resolved_fluxes(cfg), "files": {}, "status": "running",
                "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat()}
    rows_by_task = {t["id"]: [] for t in cfg["tasks"]}
    ens_tasks = [t for t in cfg["tasks"] if t["kind"] not in ("streda", "scaling")]
    written = []
    try:
        for point in _sweep(cfg):
            base = _base_row(cfg, point)
            if ens_tasks:
                spec = EnsembleSpec(cfg["model"]["name"], point["params"], point["sizes"],
                                    point["flux"], cfg["ensemble"]["seed"],
                                    cfg["ensemble"]["configs"],
                                    tuple(_ensemble_task(t, cfg) for t in ens_tasks))
                stats = run_ensemble(spec, workers=workers, keep_raw=False, progress=progress)
                for t in ens_tasks:
                    rows_by_task[t["id"]] += _rows_for(t, cfg, stats[t["id"]], base)
            for t in cfg["tasks"]:
                if t["kind"] == "streda":
                    rows_by_task[t["id"]] += _streda_rows(t, cfg, point, base)
        for t in cfg["tasks"]:
            if t["kind"] == "scaling":
                rows_by_task[t["id"]] = _scaling_rows(t, rows_by_task, cfg)
    except NcfvError:
        for tid, rows in rows_by_task.items():
            if rows:
                write_csv(out / f"{tid}.csv", rows, header)
                manifest["files"][tid] = f"{tid}.csv"
        manifest["status"] = "failed"
        (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        (out / FAILED).write_text("run failed; partial results kept\n")
        raise
    for tid, rows in rows_by_task.items():
        write_csv(out / f"{tid}.csv", rows, header)
        manifest["files"][tid] = f"{tid}.csv"
        written.append(out / f"{tid}.csv")
    manifest["status"] = "ok"
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return written


def export(result_dir):
    """Merge the task CSVs of a run directory with its manifest into one document."""
    d = Path(result_dir)
    if not d.is_dir():
        raise MissingManifest(f"{d} is not a directory")
    entries = [p for p in d.iterdir() if p.name != FAILED]
    if not entries:
        return {}
    if not (d / MANIFEST).exists():
        raise MissingManifest(f"no {MANIFEST} in {d}")
    manifest = json.loads((d / MANIFEST).read_text("utf-8"))
    tasks = {}
    for tid, name in sorted(manifest.get("files", {}).items()):
        tasks[tid] = read_csv(d / name)
    return {"manifest": manifest, "tasks": tasks}


def _parser():
    p = argparse.ArgumentParser(prog="ncfv", description="Finite-volume observables of "
                                "disordered lattice models.")
    p.add_argument("--version", action="version", version=f"ncfv {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a JSON run configuration")
    r.add_argument("config")
    r.add_argument("--workers", type=int)
    r.add_argument("--out")
    r.add_argument("--quiet", action="store_true", help="no per-config progress lines")
    e = sub.add_parser("export", help="merge a result directory into one JSON document")
    e.add_argument("dir")
    e.add_argument("-o", "--output", help="write to a file instead of stdout")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            try:
                config = json.loads(Path(args.config).read_text("utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ValidationError(f"cannot read config: {exc}") from None
            workers = args.workers or int(os.environ.get("NCFV_WORKERS", 0) or 0) \
                or config.get("workers", 1)
            out = args.out or os.environ.get("NCFV_OUT") or config.get("output") or "ncfv-out"
            if workers < 1:
                raise ValidationError("workers must be >= 1")
            run(config, out, workers, progress=not args.quiet)
            print(f"results in {out}", file=sys.stderr)
        else:
            doc = export(args.dir)
            text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
            if args.output:
                Path(args.output).write_text(text, encoding="utf-8")
            else:
                sys.stdout.write(text)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
