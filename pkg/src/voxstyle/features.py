"""Template-based correspondence: dense feature maps, exhaustive cosine
matching against the reference template, guidance gathering, and patch
color targets.

The built-in descriptor is a fixed multi-scale filter bank (Gaussian-blurred
cell colors plus smoothed gradient magnitudes), so its Jacobian w.r.t.
pixels is available in closed form and the stylizer can backpropagate
feature losses without any neural network.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
from scipy.ndimage import convolve1d

from .errors import FormatError, InputError

RNFM_MAGIC = b"RNFM"
RNFM_VERSION = 1
GRAD_EPS = 1.0e-6  # smooths |g| = sqrt(g^2 + eps) so the Jacobian exists at 0


@dataclass(eq=False)
class FeatureMap:
    """Dense per-cell features: (grid_h, grid_w, channels) float32."""

    data: np.ndarray
    stride: int
    source_dims: tuple[int, int]  # (H, W) of the originating image

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise InputError("feature data must be (grid_h, grid_w, channels)")
        h, w = self.source_dims
        want = (ceil_div(h, self.stride), ceil_div(w, self.stride))
        if self.data.shape[:2] != want:
            raise InputError(
                f"feature grid {self.data.shape[:2]} does not match "
                f"ceil({h}/{self.stride}) x ceil({w}/{self.stride}) = {want}"
            )
        if not np.all(np.isfinite(self.data)):
            raise InputError("feature values must be finite")

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


# -- linear building blocks (each paired with its exact adjoint) -----------


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _raw_blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = convolve1d(img, kernel, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, kernel, axis=1, mode="constant", cval=0.0)


_blur_mass_cache: dict = {}


def _blur_mass(shape: tuple[int, int], kernel_key, kernel: np.ndarray) -> np.ndarray:
    key = (shape, kernel_key)
    if key not in _blur_mass_cache:
        _blur_mass_cache[key] = _raw_blur(np.ones(shape), kernel)
    return _blur_mass_cache[key]


def blur2d(img: np.ndarray, kernel: np.ndarray, kernel_key=None) -> np.ndarray:
    """Mass-normalized separable blur: zero-padded convolution divided by the
    local kernel mass, so constants pass through unchanged at borders."""
    mass = _blur_mass(img.shape[:2], kernel_key if kernel_key is not None else kernel.tobytes(), kernel)
    if img.ndim == 3:
        mass = mass[..., None]
    return _raw_blur(img, kernel) / mass


def blur2d_adjoint(grad: np.ndarray, kernel: np.ndarray, kernel_key=None) -> np.ndarray:
    """Adjoint of blur2d: divide by the mass first, then the (self-adjoint)
    zero-padded convolution."""
    mass = _blur_mass(grad.shape[:2], kernel_key if kernel_key is not None else kernel.tobytes(), kernel)
    if grad.ndim == 3:
        mass = mass[..., None]
    return _raw_blur(grad / mass, kernel)


def central_diff(img: np.ndarray, axis: int) -> np.ndarray:
    """(f[i+1] - f[i-1]) / 2 with replicated edges (constants map to zero)."""
    plus = np.roll(img, -1, axis=axis)
    minus = np.roll(img, 1, axis=axis)
    last = [slice(None)] * img.ndim
    first = [slice(None)] * img.ndim
    last[axis] = -1
    first[axis] = 0
    plus[tuple(last)] = np.take(img, -1, axis=axis)
    minus[tuple(first)] = np.take(img, 0, axis=axis)
    return 0.5 * (plus - minus)


def central_diff_adjoint(grad: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of central_diff under the same replicate padding."""
    n = grad.shape[axis]
    plus_t = np.roll(grad, 1, axis=axis)  # receives grad[i-1]
    minus_t = np.roll(grad, -1, axis=axis)  # receives grad[i+1]
    first = [slice(None)] * grad.ndim
    last = [slice(None)] * grad.ndim
    first[axis] = 0
    last[axis] = -1
    plus_t[tuple(first)] = 0.0
    minus_t[tuple(last)] = 0.0
    # Replicated boundary columns also collect their own gradient.
    out = 0.5 * (plus_t - minus_t)
    idx_last = [slice(None)] * grad.ndim
    idx_last[axis] = n - 1
    idx_first = [slice(None)] * grad.ndim
    idx_first[axis] = 0
    out[tuple(idx_last)] += 0.5 * np.take(grad, n - 1, axis=axis)
    out[tuple(idx_first)] -= 0.5 * np.take(grad, 0, axis=axis)
    return out


def _cell_starts(n: int, stride: int) -> np.ndarray:
    return np.arange(0, n, stride)


def cell_mean(img: np.ndarray, stride: int) -> np.ndarray:
    """Mean over stride x stride footprints; edge cells use their true size."""
    h, w = img.shape[:2]
    ys = _cell_starts(h, stride)
    xs = _cell_starts(w, stride)
    s = np.add.reduceat(np.add.reduceat(img, ys, axis=0), xs, axis=1)
    cy = np.diff(np.append(ys, h)).astype(np.float64)
    cx = np.diff(np.append(xs, w)).astype(np.float64)
    counts = np.multiply.outer(cy, cx)
    if img.ndim == 3:
        counts = counts[..., None]
    return s / counts


def cell_mean_adjoint(grad: np.ndarray, stride: int, h: int, w: int) -> np.ndarray:
    ys = _cell_starts(h, stride)
    xs = _cell_starts(w, stride)
    cy = np.diff(np.append(ys, h)).astype(np.float64)
    cx = np.diff(np.append(xs, w)).astype(np.float64)
    counts = np.multiply.outer(cy, cx)
    if grad.ndim == 3:
        counts = counts[..., None]
    spread = grad / counts
    out = np.repeat(np.repeat(spread, cy.astype(int), axis=0), cx.astype(int), axis=1)
    return out


def downsample2(image: np.ndarray) -> np.ndarray:
    """2x area downsampling (mean over 2x2 blocks, partial edges included)."""
    return cell_mean(image, 2)


def downsample2_adjoint(grad: np.ndarray, h: int, w: int) -> np.ndarray:
    return cell_mean_adjoint(grad, 2, h, w)


# -- descriptor --------------------------------------------------------------


class FeatureExtractor(Protocol):
    name: str
    stride: int
    channels: int
    differentiable: bool

    def extract(self, image: np.ndarray) -> FeatureMap: ...


class BuiltinDescriptor:
    """Multi-scale filter-bank descriptor.

    Per scale s: Gaussian(sigma=s) blur, then per-cell mean RGB (3 channels)
    and per-cell mean smoothed gradient magnitude of the blurred luminance
    along x and y (2 channels). Channels concatenate across scales.
    """

    differentiable = True

    def __init__(self, stride: int = 8, scales: tuple = (1, 2, 4), name: Optional[str] = None):
        self.stride = stride
        self.scales = tuple(scales)
        self.channels = 5 * len(self.scales)
        self.name = name or f"builtin-s{stride}-" + "/".join(str(s) for s in self.scales)
        self._kernels = {s: gaussian_kernel(float(s)) for s in self.scales}

    def _check(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise InputError("descriptor expects an (H, W, 3) image")
        if img.shape[0] < self.stride or img.shape[1] < self.stride:
            raise InputError(
                f"image {img.shape[0]}x{img.shape[1]} smaller than one "
                f"{self.stride}x{self.stride} cell"
            )
        return img

    def _forward(self, img: np.ndarray):
        """Returns (cells list, per-scale intermediates for the VJP)."""
        chans = []
        inter = []
        for s in self.scales:
            blurred = blur2d(img, self._kernels[s], kernel_key=float(s))
            lum = blurred.mean(axis=2)
            gx = central_diff(lum, axis=1)
            gy = central_diff(lum, axis=0)
            rx = np.sqrt(gx * gx + GRAD_EPS)
            ry = np.sqrt(gy * gy + GRAD_EPS)
            # Smoothed magnitudes, shifted so flat regions sit exactly at 0.
            floor = np.sqrt(GRAD_EPS)
            cells = [cell_mean(blurred[..., c], self.stride) for c in range(3)]
            cells.append(cell_mean(rx - floor, self.stride))
            cells.append(cell_mean(ry - floor, self.stride))
            chans.extend(cells)
            inter.append((gx, gy, rx, ry))
        return np.stack(chans, axis=-1), inter

    def extract(self, image: np.ndarray) -> FeatureMap:
        img = self._check(image)
        data, _ = self._forward(img)
        return FeatureMap(data=data, stride=self.stride, source_dims=img.shape[:2])

    def features_f64(self, image: np.ndarray) -> np.ndarray:
        """Full-precision feature stack for loss math and gradient checks."""
        img = self._check(image)
        data, _ = self._forward(img)
        return data

    def vjp(self, image: np.ndarray, d_data: np.ndarray) -> np.ndarray:
        """d(loss)/d(pixels) from d(loss)/d(feature cells)."""
        img = self._check(image)
        h, w = img.shape[:2]
        _, inter = self._forward(img)
        d_img = np.zeros_like(img)
        d_data = np.asarray(d_data, dtype=np.float64)
        for si, s in enumerate(self.scales):
            gx, gy, rx, ry = inter[si]
            base = 5 * si
            d_blur = np.zeros_like(img)
            for c in range(3):
                d_blur[..., c] += cell_mean_adjoint(d_data[..., base + c], self.stride, h, w)
            d_mx = cell_mean_adjoint(d_data[..., base + 3], self.stride, h, w)
            d_my = cell_mean_adjoint(d_data[..., base + 4], self.stride, h, w)
            d_gx = d_mx * (gx / rx)
            d_gy = d_my * (gy / ry)
            d_lum = central_diff_adjoint(d_gx, axis=1) + central_diff_adjoint(d_gy, axis=0)
            d_blur += d_lum[..., None] / 3.0
            d_img += blur2d_adjoint(d_blur, self._kernels[s], kernel_key=float(s))
        return d_img


def mid_descriptor() -> BuiltinDescriptor:
    """Stride-8 map used for the feature loss."""
    return BuiltinDescriptor(stride=8, scales=(1, 2, 4))


def deep_descriptor() -> BuiltinDescriptor:
    """Stride-16 coarse map used for color matching."""
    return BuiltinDescriptor(stride=16, scales=(2, 4, 8))


class ExternalFeatureProvider:
    """Serves pre-exported RNFM maps from a directory, keyed by image name.

    Not differentiable: it can drive matching (guidance indices, color-target
    matching) but not the feature loss on rendered views.
    """

    differentiable = False

    def __init__(self, directory, mode: str = "mid"):
        self.directory = Path(directory)
        self.mode = mode
        self.name = f"external:{self.directory}:{mode}"
        probe = sorted(self.directory.glob(f"*.{mode}.rnfm"))
        if not probe:
            raise InputError(f"no *.{mode}.rnfm files under {self.directory}")
        first = load_feature_map(probe[0])
        self.stride = first.stride
        self.channels = first.channels

    def extract_named(self, key: str) -> FeatureMap:
        path = self.directory / f"{key}.{self.mode}.rnfm"
        if not path.exists():
            raise InputError(f"missing exported feature map {path}")
        return load_feature_map(path)


# -- matching ----------------------------------------------------------------


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos(a, b) in [0, 2]; zero-norm vectors sit at distance 1."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0
    return float(np.clip(1.0 - np.dot(a, b) / (na * nb), 0.0, 2.0))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(n > 0.0, x / np.where(n == 0.0, 1.0, n), 0.0)


@dataclass
class MatchMap:
    """Per-content-cell best reference cell under cosine distance."""

    index_i: np.ndarray  # (gh, gw) matched reference row
    index_j: np.ndarray  # (gh, gw) matched reference col
    distance: np.ndarray  # (gh, gw) in [0, 2]
    valid: np.ndarray  # (gh, gw) bool
    content_stride: int
    content_dims: tuple[int, int]


def match_features(f_content: FeatureMap, f_ref: FeatureMap, gate: Optional[float] = None) -> MatchMap:
    """Exhaustive arg-min over reference cells per content cell.

    Ties break toward the lowest (column, row) reference cell. With a gate,
    a cell is valid iff its minimum distance is strictly below the gate.
    """
    if f_content.channels != f_ref.channels:
        raise InputError(
            f"channel mismatch: content {f_content.channels} vs reference {f_ref.channels}"
        )
    gh, gw, c = f_content.data.shape
    rh, rw, _ = f_ref.data.shape
    a = _unit_rows(f_content.data.reshape(-1, c).astype(np.float64))
    # Column-major flattening so ties resolve to the lowest (j', i').
    bcells = np.transpose(f_ref.data.astype(np.float64), (1, 0, 2)).reshape(-1, c)
    b = _unit_rows(bcells)
    a_zero = ~np.any(a != 0.0, axis=1)
    b_zero = ~np.any(b != 0.0, axis=1)
    d = 1.0 - a @ b.T
    # Undefined cosines sit at distance 1 regardless of the other side.
    d[a_zero, :] = 1.0
    d[:, b_zero] = 1.0
    np.clip(d, 0.0, 2.0, out=d)
    flat = np.argmin(d, axis=1)
    dist = d[np.arange(d.shape[0]), flat]
    jj, ii = np.divmod(flat, rh)  # flat = j' * rh + i'
    valid = np.ones(gh * gw, dtype=bool) if gate is None else dist < gate
    return MatchMap(
        index_i=ii.reshape(gh, gw),
        index_j=jj.reshape(gh, gw),
        distance=dist.reshape(gh, gw),
        valid=valid.reshape(gh, gw),
        content_stride=f_content.stride,
        content_dims=f_content.source_dims,
    )


def build_guidance(match: MatchMap, f_style: FeatureMap) -> FeatureMap:
    """Gather style features at the matched indices (constant downstream)."""
    ii, jj = match.index_i, match.index_j
    if ii.max(initial=0) >= f_style.grid_h or jj.max(initial=0) >= f_style.grid_w:
        raise RuntimeError(
            f"internal: match indices exceed style grid {f_style.grid_h}x{f_style.grid_w}"
        )
    data = f_style.data[ii, jj]
    return FeatureMap(data=data, stride=match.content_stride, source_dims=match.content_dims)


@dataclass
class ColorTargets:
    """Per-cell mean style color targets with validity flags."""

    targets: np.ndarray  # (gh, gw, 3)
    valid: np.ndarray  # (gh, gw) bool
    stride: int
    source_dims: tuple[int, int]


def color_targets(
    content: np.ndarray,
    ref_content: np.ndarray,
    ref_style: np.ndarray,
    extractor,
    gate: float = 0.4,
) -> ColorTargets:
    """Deep-stage matching of the content view against the reference content;
    valid cells get the mean style color over the matched cell's footprint.
    """
    f_i = extractor.extract(content)
    f_ref = extractor.extract(ref_content)
    match = match_features(f_i, f_ref, gate=gate)
    style_means = cell_mean(np.asarray(ref_style, dtype=np.float64), extractor.stride)
    targets = style_means[match.index_i, match.index_j]
    return ColorTargets(
        targets=targets,
        valid=match.valid.copy(),
        stride=extractor.stride,
        source_dims=content.shape[:2],
    )


def cosine_distance_maps(a: FeatureMap, b: FeatureMap) -> float:
    """Mean per-cell cosine distance between two same-shape maps."""
    if a.data.shape != b.data.shape:
        raise InputError("feature maps must share grid and channel dims")
    av = _unit_rows(a.data.reshape(-1, a.channels).astype(np.float64))
    bv = _unit_rows(b.data.reshape(-1, b.channels).astype(np.float64))
    sims = np.sum(av * bv, axis=1)
    zero = (~np.any(av != 0.0, axis=1)) | (~np.any(bv != 0.0, axis=1))
    dists = np.where(zero, 1.0, np.clip(1.0 - sims, 0.0, 2.0))
    return float(dists.mean())


# -- RNFM io -----------------------------------------------------------------


def save_feature_map(fmap: FeatureMap, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(RNFM_MAGIC)
        fh.write(
            struct.pack(
                "<7I",
                RNFM_VERSION,
                fmap.grid_h,
                fmap.grid_w,
                fmap.channels,
                fmap.stride,
                fmap.source_dims[0],
                fmap.source_dims[1],
            )
        )
        fh.write(np.ascontiguousarray(fmap.data, dtype="<f4").tobytes())


def load_feature_map(path) -> FeatureMap:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 32:
        raise FormatError(f"{path}: truncated RNFM header (need 32 bytes, found {len(data)})")
    if data[:4] != RNFM_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {RNFM_MAGIC!r}")
    version, gh, gw, ch, stride, src_h, src_w = struct.unpack_from("<7I", data, 4)
    if version != RNFM_VERSION:
        raise FormatError(f"{path}: unsupported RNFM version {version}")
    expected = 32 + 4 * gh * gw * ch
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", count=gh * gw * ch, offset=32)
    fmap = FeatureMap(
        data=values.reshape(gh, gw, ch).copy(),
        stride=stride,
        source_dims=(src_h, src_w),
    )
    return fmap
