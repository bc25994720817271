"""On-disk formats.

Arrays are raw little-endian float64, row-major, next to a JSON sidecar
(``<name>.json``) describing the layout. Complex arrays interleave real
and imaginary parts. Tables are plain CSV; sampling patterns carry their
provenance in ``#`` header comments.
"""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from mrtherm.errors import ConfigError, DomainError
from mrtherm.fusion import ParameterStats
from mrtherm.sampling import SamplingPattern
from mrtherm.uq import Ensemble

LE_F64 = "<f8"


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def _write_json(path: Path, meta: dict) -> None:
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def write_array(path, array: np.ndarray, **meta) -> Path:
    """Dump a real or complex array as raw LE float64 plus a JSON sidecar.

    Extra keyword arguments land in the sidecar verbatim.
    """
    path = Path(path)
    arr = np.asarray(array)
    is_complex = np.iscomplexobj(arr)
    if is_complex:
        raw = np.stack([arr.real, arr.imag], axis=-1).astype(LE_F64)
    else:
        raw = arr.astype(LE_F64)
    path.write_bytes(np.ascontiguousarray(raw).tobytes())
    side = dict(meta)
    side.update({"dims": list(arr.shape), "dtype": "float64", "byte_order": "little", "order": "row-major",
                 "complex": "interleaved" if is_complex else False})
    _write_json(_sidecar(path), side)
    return path


def read_array(path) -> tuple[np.ndarray, dict]:
    """Inverse of :func:`write_array`; returns the array and its sidecar."""
    path = Path(path)
    try:
        meta = json.loads(_sidecar(path).read_text())
    except FileNotFoundError:
        raise ConfigError("path", f"missing sidecar for {path}") from None
    dims = tuple(meta["dims"])
    raw = np.frombuffer(path.read_bytes(), dtype=LE_F64)
    if meta.get("complex"):
        expected = int(np.prod(dims)) * 2
        if raw.size != expected:
            raise DomainError(f"{path}: expected {expected} values, found {raw.size}")
        pairs = raw.reshape(dims + (2,))
        return pairs[..., 0] + 1j * pairs[..., 1], meta
    if raw.size != int(np.prod(dims)):
        raise DomainError(f"{path}: expected {int(np.prod(dims))} values, found {raw.size}")
    return raw.reshape(dims).copy(), meta


def write_temperature_history(path, history, grid) -> Path:
    """All output times stacked on a leading axis."""
    return write_array(path, history.fields, kind="temperature", units="degC",
                       times=[float(t) for t in history.times], spacing=list(grid.spacing),
                       origin=list(grid.origin), axis_roles=["time"] + [f"{a}" for a in "xyz"[: grid.ndim]])


def write_kspace(path, signal: np.ndarray, spacing: Sequence[float], readout_axis: int,
                 snr: float | None = None, seed: int | None = None) -> Path:
    ndim = np.ndim(signal)
    roles = ["phase"] * ndim
    roles[readout_axis] = "readout"
    return write_array(path, np.asarray(signal, dtype=complex), kind="kspace", order_convention="fft",
                       spacing=list(spacing), axis_roles=roles, snr=None if snr is None or np.isinf(snr) else snr,
                       seed=seed)


def pattern_to_csv(pattern: SamplingPattern) -> str:
    buf = _io.StringIO()
    buf.write(f"# method: {pattern.method}\n")
    buf.write(f"# readout_axis: {pattern.readout_axis}\n")
    buf.write(f"# shape: {' '.join(str(n) for n in pattern.shape)}\n")
    buf.write(f"# min_separation: {pattern.min_separation}\n")
    for key in sorted(pattern.params):
        buf.write(f"# {key}: {pattern.params[key]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"k{i}" for i in range(len(pattern.shape))])
    writer.writerows(pattern.lines)
    return buf.getvalue()


def write_pattern(path, pattern: SamplingPattern) -> Path:
    path = Path(path)
    path.write_text(pattern_to_csv(pattern))
    return path


def read_pattern(path) -> SamplingPattern:
    header: dict[str, str] = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
        elif line.strip() and not line.startswith("k"):
            rows.append(tuple(int(v) for v in line.split(",")))
    try:
        shape = tuple(int(v) for v in header["shape"].split())
        return SamplingPattern(int(header["readout_axis"]), shape, tuple(rows), header["method"],
                               float(header.get("min_separation", 1.0)))
    except KeyError as exc:
        raise ConfigError("pattern", f"missing header field {exc.args[0]}") from None


def write_ensemble_summary(path, ensemble: Ensemble) -> Path:
    path = Path(path)
    d = ensemble.params.shape[1]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node"] + [f"mu{i}" for i in range(d)] + ["weight"])
        for q, (node, w) in enumerate(zip(ensemble.params, ensemble.weights)):
            writer.writerow([q] + [repr(float(v)) for v in node] + [repr(float(w))])
    return path


def write_posterior(path, prior: ParameterStats, posterior: ParameterStats, lines: int) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["param", "prior_mean", "prior_var", "post_mean", "post_var", "lines", "clamped"])
        for i in range(len(prior.mean)):
            writer.writerow([i, repr(float(prior.mean[i])), repr(float(prior.variance[i])),
                             repr(float(posterior.mean[i])), repr(float(posterior.variance[i])), lines,
                             int(posterior.clamped)])
    return path
