"""Array file I/O: NPY and single-array (optionally multi-page) TIFF."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import TiffImagePlugin

from .core import Image

__all__ = ["read_array", "write_array", "read_image", "write_image", "write_json_sidecar"]

_TIFF_SUFFIXES = {".tif", ".tiff"}


def read_array(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    if path.suffix.lower() in _TIFF_SUFFIXES:
        with PILImage.open(path) as im:
            if len(im.getbands()) != 1:
                raise ValueError(f"{path}: multichannel images are not supported")
            frames = []
            n = getattr(im, "n_frames", 1)
            for i in range(n):
                im.seek(i)
                frames.append(np.asarray(im, dtype=np.float32))
        return frames[0] if len(frames) == 1 else np.stack(frames)
    raise ValueError(f"unsupported array file type: {path.suffix!r} (use .npy or .tif/.tiff)")


def write_array(path, arr: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(arr)
    if path.suffix == ".npy":
        np.save(path, arr)
        return
    if path.suffix.lower() in _TIFF_SUFFIXES:
        data = arr.astype(np.float32)
        if data.ndim == 2:
            PILImage.fromarray(data, mode="F").save(path, format="TIFF")
        elif data.ndim == 3:
            pages = [PILImage.fromarray(plane, mode="F") for plane in data]
            with TiffImagePlugin.AppendingTiffWriter(str(path), True) as tf:
                for page in pages:
                    page.save(tf)
                    tf.newFrame()
        else:
            raise ValueError(f"cannot write {data.ndim}D array as TIFF")
        return
    raise ValueError(f"unsupported array file type: {path.suffix!r} (use .npy or .tif/.tiff)")


def read_image(path, value_range=(0.0, 1.0), normalize: bool = False) -> Image:
    """Load a 2D/3D single-channel image file.

    With ``normalize=True`` the intensities are min-max scaled into [0, 1],
    which is how experiment inputs are prepared.
    """
    arr = read_array(path).astype(np.float32)
    if normalize:
        lo, hi = float(arr.min()), float(arr.max())
        if hi > lo:
            arr = (arr - lo) / (hi - lo)
        else:
            arr = np.zeros_like(arr)
        value_range = (0.0, 1.0)
    return Image(arr, value_range=value_range)


def write_image(path, img: Image) -> None:
    write_array(path, img.data)


def write_json_sidecar(path, payload: dict) -> Path:
    """Write ``payload`` next to ``path`` as ``<path>.json``."""
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return sidecar
