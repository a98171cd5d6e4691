"""Versioned on-disk formats: blob fields (CSV or npz), flow maps (npz),
tabular reports (CSV) and config snapshots (YAML). Layouts are described in
docs/formats.md."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ParameterError
from .field import MollifierSpec, VortexBlobField
from .flow import FieldHistory, FlowConfig, FlowMap
from .grid import UniformGrid

FORMAT_VERSION = 1
_MAGIC = "# vortexblob"


def format_value(v):
    """Shortest round-trip text for floats, so rewritten CSVs are byte-identical."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, kind, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"{_MAGIC} {kind} v{FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def _parse_header(first):
    parts = first.strip().split()
    if len(parts) != 4 or parts[0] != "#" or parts[1] != "vortexblob":
        raise ParameterError("missing '# vortexblob <kind> v<N>' header line")
    if parts[3] != f"v{FORMAT_VERSION}":
        raise ParameterError(f"unsupported format version {parts[3]}")
    return parts[2]


def read_table(path):
    """(kind, header, rows as strings); rejects unknown versions."""
    with open(path, newline="") as fh:
        kind = _parse_header(fh.readline())
        rows = list(csv.reader(fh))
    if not rows:
        raise ParameterError(f"{path}: no column header")
    return kind, rows[0], rows[1:]


# -- blob fields -------------------------------------------------------------

def save_field(field, path):
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, version=FORMAT_VERSION, positions=field.positions,
                 weights=field.weights, blob_scale=field.blob_scale,
                 mollifier=field.mollifier.profile)
        return path
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"{_MAGIC} field v{FORMAT_VERSION}\n")
        fh.write(f"# blob_scale={format_value(field.blob_scale)} "
                 f"mollifier={field.mollifier.profile}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "weight"])
        for (x, y), g in zip(field.positions, field.weights):
            w.writerow([format_value(x), format_value(y), format_value(g)])
    return path


def load_field(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as d:
            _check_version(int(d["version"]), path)
            return VortexBlobField(d["positions"], d["weights"], float(d["blob_scale"]),
                                   MollifierSpec(str(d["mollifier"])))
    with open(path, newline="") as fh:
        kind = _parse_header(fh.readline())
        if kind != "field":
            raise ParameterError(f"{path} holds a {kind!r} table, not a field")
        meta = dict(item.split("=", 1) for item in fh.readline().lstrip("# ").split())
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float).reshape(-1, 3)
    return VortexBlobField(data[:, :2], data[:, 2], float(meta["blob_scale"]),
                           MollifierSpec(meta["mollifier"]))


def _check_version(v, path):
    if v != FORMAT_VERSION:
        raise ParameterError(f"{path}: unsupported format version {v}")


# -- flow maps ---------------------------------------------------------------

def save_flow(flow, path):
    """Labels, checkpoint states and, for blob runs, the carrier history, so
    that a reloaded flow answers the same two-time queries."""
    arrays = dict(version=FORMAT_VERSION, labels=flow.labels, times=flow.times,
                  states=flow.states, dt=flow.dt, scheme=flow.scheme)
    g = flow.label_grid
    if g is not None:
        arrays.update(grid_origin=np.array(g.origin), grid_spacing=g.spacing,
                      grid_shape=np.array(g.shape))
    h = flow.history
    if h is not None:
        cfg = h.config
        arrays.update(h_times=h.times, h_positions=h.positions,
                      h_velocities=h.velocities if h.velocities is not None else np.zeros(0),
                      h_weights=h.weights, h_blob_scale=h.blob_scale,
                      h_mollifier=h.mollifier.profile, h_frozen=h.frozen,
                      h_method=cfg.method, h_theta=cfg.theta, h_order=cfg.order,
                      h_coupling=cfg.coupling, h_dt=cfg.dt, h_integrator=cfg.integrator,
                      h_blowup=cfg.blowup_factor)
    np.savez(Path(path), **arrays)
    return Path(path)


def load_flow(path):
    with np.load(Path(path), allow_pickle=False) as d:
        _check_version(int(d["version"]), path)
        grid = None
        if "grid_origin" in d:
            grid = UniformGrid(tuple(d["grid_origin"]), float(d["grid_spacing"]),
                               tuple(int(v) for v in d["grid_shape"]))
        history = None
        if "h_times" in d:
            cfg = FlowConfig(dt=float(d["h_dt"]), integrator=str(d["h_integrator"]),
                             coupling=str(d["h_coupling"]), method=str(d["h_method"]),
                             theta=float(d["h_theta"]), order=int(d["h_order"]),
                             blowup_factor=float(d["h_blowup"]))
            frozen = bool(d["h_frozen"])
            vel = None if frozen else d["h_velocities"]
            history = FieldHistory(d["h_times"], d["h_positions"], vel, d["h_weights"],
                                   float(d["h_blob_scale"]),
                                   MollifierSpec(str(d["h_mollifier"])), frozen=frozen,
                                   config=cfg)
        return FlowMap(d["labels"], d["times"], d["states"], history, float(d["dt"]),
                       str(d["scheme"]), grid, history=history)


# -- config snapshots --------------------------------------------------------

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_snapshot(path, mapping):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(_plain(mapping), fh, sort_keys=True, default_flow_style=False)
    return path
