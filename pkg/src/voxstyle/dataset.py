"""Posed-image datasets: PNG images, optional masks, and the
``transforms.json`` camera convention (camera_angle_x + per-frame 4x4
world-from-camera matrices, row-major).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .camera import Camera
from .errors import FormatError, InputError


def load_image(path) -> np.ndarray:
    """8-bit PNG (or any PIL-readable) -> (H, W, 3) float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_image(image: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


@dataclass
class Dataset:
    """Training views: cameras, images, optional foreground masks."""

    cameras: list[Camera]
    images: list[np.ndarray]
    masks: Optional[list[np.ndarray]] = None

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise InputError("cameras and images must have equal length")
        if self.masks is not None and len(self.masks) != len(self.images):
            raise InputError("masks must match images in count")
        for cam, img in zip(self.cameras, self.images):
            if img.shape[:2] != (cam.height, cam.width):
                raise InputError(
                    f"image {img.shape[:2]} does not match camera {cam.height}x{cam.width}"
                )

    def __len__(self) -> int:
        return len(self.cameras)


def camera_from_transform(matrix, width: int, height: int, camera_angle_x: float, view_id=None) -> Camera:
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (4, 4):
        raise FormatError("transform_matrix must be 4x4")
    fx = 0.5 * width / math.tan(0.5 * camera_angle_x)
    return Camera(
        width=width,
        height=height,
        fx=fx,
        fy=fx,
        cx=width / 2.0,
        cy=height / 2.0,
        pose_r=m[:3, :3],
        pose_t=m[:3, 3],
        view_id=view_id,
    )


def load_dataset(dataset_dir, transforms_name: str = "transforms.json") -> Dataset:
    root = Path(dataset_dir)
    tpath = root / transforms_name
    if not tpath.exists():
        raise InputError(f"no {transforms_name} in {root}")
    try:
        meta = json.loads(tpath.read_text())
        angle = float(meta["camera_angle_x"])
        frames = meta["frames"]
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{tpath}: {exc}") from exc

    cameras, images, masks = [], [], []
    have_masks = True
    for k, frame in enumerate(frames):
        img_path = root / frame["file_path"]
        if not img_path.suffix:
            img_path = img_path.with_suffix(".png")
        img = load_image(img_path)
        h, w = img.shape[:2]
        cameras.append(
            camera_from_transform(
                frame["transform_matrix"], w, h, angle, view_id=frame.get("view_id", img_path.stem)
            )
        )
        images.append(img)
        mpath = img_path.with_name(img_path.stem + "_mask.png")
        if mpath.exists():
            masks.append(load_mask(mpath))
        else:
            have_masks = False
    return Dataset(cameras=cameras, images=images, masks=masks if have_masks and masks else None)


def save_dataset(
    dataset_dir,
    cameras: list[Camera],
    images: list[np.ndarray],
    camera_angle_x: float,
    masks: Optional[list[np.ndarray]] = None,
    transforms_name: str = "transforms.json",
) -> None:
    root = Path(dataset_dir)
    root.mkdir(parents=True, exist_ok=True)
    frames = []
    for k, (cam, img) in enumerate(zip(cameras, images)):
        name = cam.view_id or f"r_{k:03d}"
        save_image(img, root / f"{name}.png")
        if masks is not None:
            save_mask(masks[k], root / f"{name}_mask.png")
        frames.append(
            {
                "file_path": f"{name}.png",
                "view_id": name,
                "transform_matrix": cam.world_from_camera().tolist(),
            }
        )
    payload = {
        "camera_angle_x": camera_angle_x,
        "width": cameras[0].width if cameras else 0,
        "height": cameras[0].height if cameras else 0,
        "frames": frames,
    }
    (root / transforms_name).write_text(json.dumps(payload, indent=1))


def load_cameras(transforms_path) -> list[Camera]:
    """Cameras only, no images. Dimensions come from top-level width/height
    keys or, failing that, from each frame's image file."""
    tpath = Path(transforms_path)
    if not tpath.exists():
        raise InputError(f"{tpath} does not exist")
    try:
        meta = json.loads(tpath.read_text())
        angle = float(meta["camera_angle_x"])
        frames = meta["frames"]
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{tpath}: {exc}") from exc
    width = meta.get("width")
    height = meta.get("height")
    cams = []
    for k, frame in enumerate(frames):
        w, h = width, height
        if not w or not h:
            img_path = tpath.parent / frame["file_path"]
            with Image.open(img_path) as im:
                w, h = im.size
        cams.append(
            camera_from_transform(
                frame["transform_matrix"],
                int(w),
                int(h),
                angle,
                view_id=frame.get("view_id", f"frame{k:03d}"),
            )
        )
    return cams
