"""File formats: kernels, densities, extensions, systems, forcing, trajectories.

CSV files start with ``# key=value`` comment lines (at least ``# d=<dim>``)
followed by numeric rows; complex entries are stored as adjacent real and
imaginary columns, matrices row-major. Writes are atomic: data goes to a
temporary file in the target directory which is then renamed.
"""

from __future__ import annotations

import contextlib
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .dynamics import ForcingSignal, Trajectory
from .extension import BlockSystem, Extension, SpectralBlockSystem, assemble_block
from .spectra import DispersiveSystem, FrictionKernel, SpectralDensity

__all__ = [
    "atomic_write",
    "file_digest",
    "read_table",
    "write_table",
    "read_kernel",
    "write_kernel",
    "read_density",
    "write_density",
    "read_extension",
    "write_extension",
    "read_matrix",
    "write_matrix",
    "read_system",
    "write_system",
    "read_forcing",
    "write_forcing",
    "write_trajectory",
    "write_hidden",
    "matrix_to_json",
    "matrix_from_json",
    "dump_json",
]


# --------------------------------------------------------------------------
# low level
# --------------------------------------------------------------------------

@contextlib.contextmanager
def atomic_write(path, mode: str = "w"):
    """Open a temporary sibling of ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _split_complex(arr: np.ndarray) -> np.ndarray:
    """``(n, k)`` complex -> ``(n, 2k)`` real with interleaved re/im columns."""
    arr = np.asarray(arr, dtype=complex)
    out = np.empty((arr.shape[0], 2 * arr.shape[1]))
    out[:, 0::2] = arr.real
    out[:, 1::2] = arr.imag
    return out


def _join_complex(arr: np.ndarray) -> np.ndarray:
    if arr.shape[1] % 2:
        raise ValueError("complex columns must come in re/im pairs")
    return arr[:, 0::2] + 1j * arr[:, 1::2]


def write_table(path, header: dict, columns: Iterable[str], data: np.ndarray) -> None:
    columns = list(columns)
    buf = io.StringIO()
    for key, val in header.items():
        buf.write(f"# {key}={val}\n")
    buf.write(",".join(columns) + "\n")
    if np.size(data):
        np.savetxt(buf, np.atleast_2d(data), delimiter=",", fmt="%.17g")
    with atomic_write(path) as fh:
        fh.write(buf.getvalue())


def read_table(path):
    """Return ``(header dict, column names, data)``; header values stay strings."""
    header, names, rows = {}, None, []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    header[key.strip()] = val.strip()
                continue
            if names is None:
                # the first non-comment line always names the columns
                names = [c.strip() for c in line.split(",")]
                continue
            rows.append([float(x) for x in line.split(",")])
    data = np.array(rows, dtype=float) if rows else np.zeros((0, len(names or [])))
    if "d" not in header:
        raise ValueError(f"{path}: missing '# d=<dim>' header line")
    return header, names, data


def _dim(header) -> int:
    d = int(header["d"])
    if d < 1:
        raise ValueError("dimension must be positive")
    return d


def _cnames(prefix: str, d: int, matrix: bool = True):
    idx = [f"{i + 1}{j + 1}" for i in range(d) for j in range(d)] if matrix else [f"{i + 1}" for i in range(d)]
    out = []
    for k in idx:
        out += [f"re_{prefix}{k}", f"im_{prefix}{k}"]
    return out


# --------------------------------------------------------------------------
# matrices
# --------------------------------------------------------------------------

def matrix_to_json(a) -> list:
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    return [[[float(x.real), float(x.imag)] for x in row] for row in a]


def matrix_from_json(obj) -> np.ndarray:
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 2:
        return arr.astype(complex)
    if arr.ndim == 3 and arr.shape[2] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    raise ValueError("matrices are lists of rows of numbers or [re, im] pairs")


def write_matrix(path, a) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    d = a.shape[0]
    write_table(path, {"d": d}, _cnames("a", d, matrix=False), _split_complex(a))


def read_matrix(path) -> np.ndarray:
    header, _, data = read_table(path)
    d = _dim(header)
    a = _join_complex(data)
    if a.shape != (d, d):
        raise ValueError(f"{path}: expected a {d}x{d} matrix")
    return a


# --------------------------------------------------------------------------
# kernels and densities
# --------------------------------------------------------------------------

def write_kernel(path, times, samples, alpha_inf=None) -> None:
    samples = np.asarray(samples, dtype=complex)
    if samples.ndim == 1:
        samples = samples[:, None, None]
    n, d, _ = samples.shape
    header = {"d": d}
    if alpha_inf is not None:
        flat = np.atleast_2d(np.asarray(alpha_inf, dtype=complex)).ravel()
        header["alpha_inf"] = " ".join(f"{x.real:.17g} {x.imag:.17g}" for x in flat)
    data = np.column_stack([np.asarray(times, float), _split_complex(samples.reshape(n, -1))])
    write_table(path, header, ["t"] + _cnames("a", d), data)


def read_kernel(path) -> FrictionKernel:
    header, _, data = read_table(path)
    d = _dim(header)
    if data.shape[1] != 1 + 2 * d * d:
        raise ValueError(f"{path}: kernel rows need 1 + 2*d*d = {1 + 2 * d * d} columns")
    ainf = np.zeros((d, d), dtype=complex)
    if "alpha_inf" in header:
        vals = np.array(header["alpha_inf"].split(), dtype=float)
        if vals.size != 2 * d * d:
            raise ValueError(f"{path}: alpha_inf needs {2 * d * d} numbers")
        ainf = (vals[0::2] + 1j * vals[1::2]).reshape(d, d)
    samples = _join_complex(data[:, 1:]).reshape(-1, d, d)
    compact = header.get("compact", "false").lower() == "true"
    return FrictionKernel.from_samples(data[:, 0], samples, ainf, compact=compact)


def write_density(path, density: SpectralDensity) -> None:
    d = density.dim
    n = len(density)
    data = np.column_stack([density.nodes, density.weights,
                            _split_complex(density.values.reshape(n, -1))])
    write_table(path, {"d": d}, ["sigma", "dsigma"] + _cnames("n", d), data)


def read_density(path) -> SpectralDensity:
    header, _, data = read_table(path)
    d = _dim(header)
    if data.shape[1] != 2 + 2 * d * d:
        raise ValueError(f"{path}: density rows need 2 + 2*d*d = {2 + 2 * d * d} columns")
    vals = _join_complex(data[:, 2:]).reshape(-1, d, d)
    return SpectralDensity(data[:, 0], data[:, 1], vals)


# --------------------------------------------------------------------------
# extensions and systems
# --------------------------------------------------------------------------

def write_extension(path, ext: Extension) -> None:
    """Rows ``omega_j, re(Gamma_1j), im(Gamma_1j), ...`` (one per hidden mode)."""
    d = ext.d
    header = {"d": d, "M": ext.hidden_dim}
    if ext.flat_tail is not None:
        header["flat_tail_R"] = f"{ext.flat_tail.R:.17g}"
        header["flat_tail_nodes"] = ext.flat_tail.nodes
    data = np.column_stack([ext.omega1, _split_complex(ext.gamma.T)]) if ext.hidden_dim else np.zeros((0, 1 + 2 * d))
    write_table(path, header, ["omega"] + _cnames("g", d, matrix=False), data)


def read_extension(path) -> Extension:
    header, _, data = read_table(path)
    d = _dim(header)
    if data.shape[0] == 0:
        return Extension.empty(d)
    if data.shape[1] != 1 + 2 * d:
        raise ValueError(f"{path}: extension rows need 1 + 2*d = {1 + 2 * d} columns")
    return Extension(data[:, 0], _join_complex(data[:, 1:]).T)


def write_system(path, system, extension_file: Optional[str] = None, kernel_file: Optional[str] = None) -> None:
    """JSON description of a block system (with its extension CSV) or a dispersive system."""
    if isinstance(system, BlockSystem):
        obj = {"kind": "block", "d": system.d, "M": system.ext.hidden_dim,
               "m": matrix_to_json(system.m), "A": matrix_to_json(system.A),
               "m1": system.m1, "extension": extension_file}
    elif isinstance(system, SpectralBlockSystem):
        obj = {"kind": "spectral", "d": system.d, "N": system.size, "mu": system.mu,
               "frequencies": system.frequencies.tolist(),
               "T": matrix_to_json(system.T)}
    elif isinstance(system, DispersiveSystem):
        obj = {"kind": "dispersive", "d": system.dim, "m": matrix_to_json(system.m),
               "A": matrix_to_json(system.A), "kernel": kernel_file}
    else:
        raise TypeError(f"cannot serialise {type(system).__name__}")
    dump_json(path, obj)


def read_system(path):
    """Inverse of :func:`write_system`; file references are relative to ``path``."""
    path = Path(path)
    with open(path) as fh:
        obj = json.load(fh)
    kind = obj.get("kind")
    if kind == "block":
        ext_file = obj.get("extension")
        ext = read_extension(path.parent / ext_file) if ext_file else Extension.empty(int(obj["d"]))
        return assemble_block(matrix_from_json(obj["m"]), matrix_from_json(obj["A"]), ext,
                              float(obj.get("m1", 1.0)))
    if kind == "spectral":
        return SpectralBlockSystem(float(obj["mu"]), np.asarray(obj["frequencies"], float),
                                   matrix_from_json(obj["T"]))
    if kind == "dispersive":
        d = int(obj["d"])
        kfile = obj.get("kernel")
        kern = read_kernel(path.parent / kfile) if kfile else FrictionKernel.zero(d)
        return DispersiveSystem(matrix_from_json(obj["m"]), matrix_from_json(obj["A"]), kern)
    raise ValueError(f"{path}: unknown system kind {kind!r}")


# --------------------------------------------------------------------------
# forcing and trajectories
# --------------------------------------------------------------------------

def write_forcing(path, times, values, t_on=None, t_off=None) -> None:
    values = np.asarray(values, dtype=complex)
    if values.ndim == 1:
        values = values[:, None]
    header = {"d": values.shape[1]}
    if t_on is not None:
        header["t_on"] = f"{t_on:.17g}"
    if t_off is not None:
        header["t_off"] = f"{t_off:.17g}"
    write_table(path, header, ["t"] + _cnames("f", values.shape[1], matrix=False),
                np.column_stack([np.asarray(times, float), _split_complex(values)]))


def read_forcing(path) -> ForcingSignal:
    header, _, data = read_table(path)
    d = _dim(header)
    if data.shape[1] != 1 + 2 * d:
        raise ValueError(f"{path}: forcing rows need 1 + 2*d = {1 + 2 * d} columns")
    t_on = float(header["t_on"]) if "t_on" in header else None
    t_off = float(header["t_off"]) if "t_off" in header else None
    return ForcingSignal.from_samples(data[:, 0], _join_complex(data[:, 1:]), t_on, t_off)


def write_trajectory(path, traj: Trajectory) -> None:
    d = traj.dim
    data = np.column_stack([traj.t, _split_complex(traj.v), traj.energy, traj.work_ext, traj.work_fric])
    write_table(path, {"d": d, "method": traj.method},
                ["t"] + _cnames("v", d, matrix=False) + ["energy", "work_ext", "work_fric"], data)


def write_hidden(path, traj: Trajectory) -> None:
    if traj.w is None:
        raise ValueError("trajectory has no recorded hidden states")
    M = traj.w.shape[1]
    write_table(path, {"d": traj.dim, "M": M}, ["t"] + _cnames("w", M, matrix=False),
                np.column_stack([traj.t[traj.w_index], _split_complex(traj.w)]))


def dump_json(path, obj) -> None:
    """Deterministic JSON (sorted keys, fixed separators)."""
    text = json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"
    with atomic_write(path) as fh:
        fh.write(text)


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")
