"""Dense volume containers, masking, and the raw-float32 file container.

Volumes are immutable after construction (the backing arrays are marked
read-only), so they can be shared freely across threads. All mutation
happens by constructing new volumes.

On-disk format: a JSON sidecar header (``<base>.json``) next to a raw
little-endian float32 payload (``<base>.raw``). Stable header keys:
``dims``, ``voxel_size_mm``, ``echoes``, ``echo_times_ms``, ``dtype``
(``"f32le"``), ``order`` (``"row-major"``). Multi-echo payloads are stored
echo-major (echo index is the slowest axis).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DTYPE_TAG = "f32le"
ORDER_TAG = "row-major"


class VolumeFormatError(ValueError):
    """Raised when a volume file or its header is missing or malformed."""


@dataclass(frozen=True)
class VolumeGeometry:
    """Voxel grid shape and physical voxel size in millimetres."""

    dims: tuple[int, int, int]
    voxel_size_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        vox = tuple(float(v) for v in self.voxel_size_mm)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if len(vox) != 3 or any(not (v > 0 and np.isfinite(v)) for v in vox):
            raise ValueError(f"voxel_size_mm must be 3 positive reals, got {self.voxel_size_mm}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size_mm", vox)

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]


def _freeze(arr: np.ndarray, dtype, dims: tuple[int, int, int]) -> np.ndarray:
    out = np.array(arr, dtype=dtype, order="C").reshape(dims)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ScalarVolume:
    """A single dense volume of finite float32 values."""

    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.size != self.geometry.n_voxels:
            raise ValueError(
                f"data length {arr.size} does not match dims {self.geometry.dims}"
            )
        if not np.isfinite(arr).all():
            raise ValueError("scalar volume contains non-finite values")
        object.__setattr__(self, "data", _freeze(arr, np.float32, self.geometry.dims))

    def __eq__(self, other):
        if not isinstance(other, ScalarVolume):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class MultiEchoVolume:
    """A stack of nonnegative magnitude echo volumes with echo times in seconds.

    ``data`` has shape ``(n_echoes, *dims)``; echo times are strictly
    increasing and positive.
    """

    geometry: VolumeGeometry
    echo_times_s: tuple[float, ...]
    data: np.ndarray

    def __post_init__(self):
        times = tuple(float(t) for t in self.echo_times_s)
        if len(times) < 2:
            raise ValueError("multi-echo volume needs at least 2 echoes")
        if any(not (t > 0 and np.isfinite(t)) for t in times):
            raise ValueError("echo times must be positive finite seconds")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("echo times must be strictly increasing")
        arr = np.asarray(self.data)
        if arr.size != len(times) * self.geometry.n_voxels:
            raise ValueError(
                f"data length {arr.size} does not match {len(times)} echoes of dims "
                f"{self.geometry.dims}"
            )
        if not np.isfinite(arr).all():
            raise ValueError("multi-echo volume contains non-finite values")
        if arr.min() < 0:
            raise ValueError("magnitude data must be nonnegative")
        shape = (len(times),) + self.geometry.dims
        out = np.array(arr, dtype=np.float32, order="C").reshape(shape)
        out.setflags(write=False)
        object.__setattr__(self, "echo_times_s", times)
        object.__setattr__(self, "data", out)

    @property
    def n_echoes(self) -> int:
        return len(self.echo_times_s)

    def echo(self, i: int) -> ScalarVolume:
        return ScalarVolume(self.geometry, self.data[i])

    @property
    def first_echo(self) -> np.ndarray:
        """Read-only view of the first-echo magnitudes."""
        return self.data[0]

    def __eq__(self, other):
        if not isinstance(other, MultiEchoVolume):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.echo_times_s == other.echo_times_s
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class BinaryMask:
    """Dense boolean mask over a voxel grid."""

    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.size != self.geometry.n_voxels:
            raise ValueError(
                f"mask length {arr.size} does not match dims {self.geometry.dims}"
            )
        object.__setattr__(self, "data", _freeze(arr != 0, bool, self.geometry.dims))

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def to_scalar(self) -> ScalarVolume:
        """0/1 float32 representation for the file container."""
        return ScalarVolume(self.geometry, self.data.astype(np.float32))

    @classmethod
    def from_scalar(cls, vol: ScalarVolume, threshold: float = 0.5) -> "BinaryMask":
        return cls(vol.geometry, vol.data > threshold)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.data, other.data)


def _container_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def write_volume(vol: ScalarVolume | MultiEchoVolume, path) -> None:
    """Write a volume to ``<path>.json`` + ``<path>.raw``.

    Round-trips bit-exactly through :func:`read_volume`.
    """
    header_path, payload_path = _container_paths(path)
    header = {
        "dims": list(vol.geometry.dims),
        "voxel_size_mm": list(vol.geometry.voxel_size_mm),
        "dtype": DTYPE_TAG,
        "order": ORDER_TAG,
    }
    if isinstance(vol, MultiEchoVolume):
        header["echoes"] = vol.n_echoes
        header["echo_times_ms"] = [t * 1000.0 for t in vol.echo_times_s]
        # exact copy of the in-memory times; ms values alone may lose 1 ulp
        header["echo_times_s"] = list(vol.echo_times_s)
        payload = np.ascontiguousarray(vol.data, dtype="<f4")
    elif isinstance(vol, ScalarVolume):
        header["echoes"] = 1
        payload = np.ascontiguousarray(vol.data, dtype="<f4")
    else:
        raise TypeError(f"cannot write object of type {type(vol).__name__}")
    payload_path.write_bytes(payload.tobytes(order="C"))
    header_path.write_text(json.dumps(header, indent=1) + "\n")


def read_volume(path) -> ScalarVolume | MultiEchoVolume:
    """Read a volume written by :func:`write_volume` (or a compatible header).

    Rejects missing/corrupt headers, payload length mismatches and
    non-finite payload values with a :class:`VolumeFormatError`.
    """
    header_path, payload_path = _container_paths(path)
    if not header_path.exists():
        raise VolumeFormatError(f"missing header file: {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise VolumeFormatError(f"corrupt header {header_path}: {exc}") from exc
    if not isinstance(header, dict) or "dims" not in header:
        raise VolumeFormatError(f"corrupt header {header_path}: missing 'dims'")

    dims = header["dims"]
    if not (isinstance(dims, list) and len(dims) == 3):
        raise VolumeFormatError(f"corrupt header {header_path}: bad 'dims' {dims!r}")
    if header.get("dtype", DTYPE_TAG) != DTYPE_TAG:
        raise VolumeFormatError(f"unsupported dtype {header.get('dtype')!r}")
    if header.get("order", ORDER_TAG) != ORDER_TAG:
        raise VolumeFormatError(f"unsupported order {header.get('order')!r}")
    voxel = header.get("voxel_size_mm", [1.0, 1.0, 1.0])
    n_echoes = int(header.get("echoes", 1))
    if n_echoes < 1:
        raise VolumeFormatError(f"bad echo count {n_echoes}")

    try:
        geometry = VolumeGeometry(tuple(dims), tuple(voxel))
    except (TypeError, ValueError) as exc:
        raise VolumeFormatError(f"corrupt header {header_path}: {exc}") from exc

    if not payload_path.exists():
        raise VolumeFormatError(f"missing payload file: {payload_path}")
    payload = payload_path.read_bytes()
    expected = 4 * n_echoes * geometry.n_voxels
    if len(payload) != expected:
        raise VolumeFormatError(
            f"payload length mismatch: header implies {expected} bytes, "
            f"file has {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype="<f4")

    if n_echoes == 1:
        if "echo_times_ms" in header or "echo_times_s" in header:
            raise VolumeFormatError("echo times given for a single-echo volume")
        try:
            return ScalarVolume(geometry, arr)
        except ValueError as exc:
            raise VolumeFormatError(f"rejected payload of {payload_path}: {exc}") from exc

    if "echo_times_s" in header:
        times = [float(t) for t in header["echo_times_s"]]
        ms = header.get("echo_times_ms")
        if ms is not None and len(ms) == len(times):
            for a, b in zip(ms, times):
                if not np.isclose(a / 1000.0, b, rtol=1e-9, atol=0.0):
                    raise VolumeFormatError("echo_times_ms and echo_times_s disagree")
    elif "echo_times_ms" in header:
        times = [float(t) / 1000.0 for t in header["echo_times_ms"]]
    else:
        raise VolumeFormatError("multi-echo header lacks echo_times_ms")
    if len(times) != n_echoes:
        raise VolumeFormatError(
            f"echo count {n_echoes} does not match {len(times)} echo times"
        )
    try:
        return MultiEchoVolume(geometry, tuple(times), arr)
    except ValueError as exc:
        raise VolumeFormatError(f"rejected payload of {payload_path}: {exc}") from exc


def body_mask_from_signal(vol: MultiEchoVolume, quantile: float = 0.05) -> BinaryMask:
    """Threshold the first echo at the given quantile of its values.

    A voxel is in-mask iff its first-echo magnitude strictly exceeds the
    quantile value, so raising the quantile never adds voxels.
    """
    if not (0.0 <= quantile <= 1.0):
        raise ValueError(f"quantile must be in [0, 1], got {quantile}")
    first = vol.first_echo
    threshold = np.quantile(first, quantile)
    return BinaryMask(vol.geometry, first > threshold)
