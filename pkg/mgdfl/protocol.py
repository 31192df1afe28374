"""
mgdfl Protocol - File formats and serialization helpers.

  JSON documents   config, manifests, TSRO solutions, operation logs;
                   canonical form (sorted keys, compact) feeds config_hash
  CSV tables       per-step operation rows, training curves, summaries
  QP dump          human-readable text of a QpProblem for debugging
  Checkpoint       MGDFLCK1 binary model file:

      8 bytes   magic b"MGDFLCK1"
      4 bytes   uint32 little-endian header length
      n bytes   UTF-8 JSON header (arch, quantiles, parameter names and
                shapes, mode, epochs, loss history)
      ...       float64 little-endian row-major parameter blocks in header
                order, then xi as one float64
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import struct
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import torch

from mgdfl.errors import ConfigError
from mgdfl.forecast import DTYPE, QuantileNet

log = logging.getLogger(__name__)

VERSION = "1.0"
MAGIC = b"MGDFLCK1"

STEP_COLUMNS = ("t", "load_real", "load_med", "grid", "soc", "cost",
                "psi_g", "psi_c", "chi", "solve_ms")
# operation.csv drops the wall-clock column so reruns are bitwise identical
OPERATION_COLUMNS = STEP_COLUMNS[:-1]
TIMING_COLUMNS = ("t", "kind", "iterations", "ok", "solve_ms")
SERIES_COLUMNS = ("t", "load_real", "load_lower", "load_med", "load_upper", "grid_sch",
                  "grid", "p_ess", "soc", "chi", "emergency")
CURVE_COLUMNS = ("epoch", "forecast_loss", "regret_loss", "total_loss", "xi", "dropped")
SUMMARY_KEYS = ("method", "policy", "feeder")
SUMMARY_COLUMNS = ("days", "cost_mean", "cost_std", "cvar_step_mean", "cvar_step_std",
                   "solves_mean", "solves_std", "cvar_day")


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def _default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def serialize(doc: dict[str, Any]) -> str:
    """Compact JSON string."""
    return json.dumps(doc, separators=(",", ":"), default=_default)


def canonical(doc: dict[str, Any]) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), default=_default)


def deserialize(data: str) -> dict[str, Any]:
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc


def config_hash(doc: dict[str, Any]) -> str:
    """sha256 of the canonical JSON form."""
    return hashlib.sha256(canonical(doc).encode("utf-8")).hexdigest()


def write_json(path, doc: dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_default) + "\n",
                          encoding="utf-8")


def read_json(path) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return deserialize(text)


# ---------------------------------------------------------------------------
# CSV rows
# ---------------------------------------------------------------------------

def make_step_row(t: int, load_real: float, load_med: float, grid: float, soc: float,
                  cost: float, psi_g: float, psi_c: float, chi: int,
                  solve_ms: float) -> dict[str, Any]:
    """One per-step operation row."""
    return {"t": t, "load_real": load_real, "load_med": load_med, "grid": grid, "soc": soc,
            "cost": cost, "psi_g": psi_g, "psi_c": psi_c, "chi": chi, "solve_ms": solve_ms}


def make_timing_row(t: int, kind: str, iterations: int, ok: bool,
                    solve_ms: float) -> dict[str, Any]:
    """One optimizer call ("initial" or "resolve") and its wall time."""
    return {"t": t, "kind": kind, "iterations": iterations, "ok": int(ok), "solve_ms": solve_ms}


def make_curve_row(epoch: int, forecast_loss: float, regret_loss: float, total_loss: float,
                   xi: float, dropped: int) -> dict[str, Any]:
    return {"epoch": epoch, "forecast_loss": forecast_loss, "regret_loss": regret_loss,
            "total_loss": total_loss, "xi": xi, "dropped": dropped}


def write_rows(path, rows: list[dict[str, Any]], columns=None) -> None:
    frame = pd.DataFrame(rows, columns=list(columns) if columns else None)
    frame.to_csv(path, index=False)


def read_rows(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# QP dump
# ---------------------------------------------------------------------------

def _terms(row, names: list[str]) -> str:
    row = row.tocoo()
    parts = [f"{v:+.6g} {names[j]}" for j, v in sorted(zip(row.col, row.data))]
    return " ".join(parts) if parts else "0"


def dump_qp(p, out=None) -> str:
    """Text listing of a QpProblem; written to `out` (path or stream) when given."""
    buf = io.StringIO()
    buf.write(f"# qp n={p.n} m_eq={p.m_eq} m_in={p.m_in} params={p.theta.size}\n")
    buf.write("minimize\n")
    h = p.H.tocoo()
    for i, j, v in sorted(zip(h.row, h.col, h.data)):
        if i <= j:
            buf.write(f"  quad {p.var_names[i]} {p.var_names[j]} {v:.6g}\n")
    for j in np.flatnonzero(p.g):
        buf.write(f"  lin {p.var_names[j]} {p.g[j]:.6g}\n")
    if p.constant:
        buf.write(f"  const {p.constant:.6g}\n")
    buf.write("subject to\n")
    for i in range(p.m_eq):
        buf.write(f"  {p.eq_labels[i]}: {_terms(p.A_eq[i], p.var_names)} = {p.b_eq[i]:.6g}\n")
    for i in range(p.m_in):
        buf.write(f"  {p.in_labels[i]}: {_terms(p.A_in[i], p.var_names)} <= {p.b_in[i]:.6g}\n")
    text = buf.getvalue()
    if out is None:
        return text
    if hasattr(out, "write"):
        out.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")
    return text


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: QuantileNet, **meta: Any) -> None:
    """Write the model in the MGDFLCK1 layout; `meta` goes into the header."""
    params = model.theta()
    header = dict(meta)
    header.update({
        "version": VERSION,
        "arch": model.arch,
        "quantiles": list(model.quantiles),
        "load_scale": float(model.load_scale),
        "xi_ready": bool(model.xi_ready),
        "params": [{"name": n, "shape": list(p.shape)} for n, p in params],
    })
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), default=_default).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for _, p in params:
            fh.write(p.detach().numpy().astype("<f8").tobytes(order="C"))
        fh.write(struct.pack("<d", float(model.xi)))
    log.info("Wrote checkpoint %s (%d parameter blocks)", path, len(params))


def load_checkpoint(path) -> tuple[QuantileNet, dict[str, Any]]:
    """Rebuild the model from an MGDFLCK1 file; returns (model, header)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise ConfigError(f"{path}: not an MGDFLCK1 checkpoint")
    (n,) = struct.unpack_from("<I", data, 8)
    header = deserialize(data[12:12 + n].decode("utf-8"))
    arch = header["arch"]
    model = QuantileNet(n_lags=arch["n_lags"], horizon=arch["horizon"],
                        quantiles=arch["quantiles"], hidden=arch["hidden"],
                        day_steps=arch["day_steps"], load_scale=header["load_scale"])
    offset = 12 + n
    expected = dict(model.theta())
    if len(header["params"]) != len(expected):
        raise ConfigError(f"{path}: {len(header['params'])} parameter blocks, model has {len(expected)}")
    with torch.no_grad():
        for spec in header["params"]:
            name, shape = spec["name"], tuple(spec["shape"])
            if name not in expected or tuple(expected[name].shape) != shape:
                raise ConfigError(f"{path}: parameter {name} {shape} does not fit the architecture")
            count = int(np.prod(shape)) if shape else 1
            if offset + 8 * count > len(data):
                raise ConfigError(f"{path}: truncated checkpoint")
            block = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            expected[name].copy_(torch.as_tensor(block.reshape(shape).copy(), dtype=DTYPE))
            offset += 8 * count
        if offset + 8 != len(data):
            raise ConfigError(f"{path}: truncated or oversized checkpoint")
        (xi,) = struct.unpack_from("<d", data, offset)
        model.xi.fill_(xi)
        model.xi_ready.fill_(bool(header.get("xi_ready", False)))
    return model, header
