"""File formats: camera manifests, HDR images, checkpoints, PLY, flat config text.

Manifests follow the common ``transforms.json`` layout whose camera-to-world
matrices use the graphics convention (x right, y up, camera looks down -z).
Internally cameras are world-to-camera in the vision convention (x right,
y down, looks down +z), so a manifest pose ``C`` becomes
``R = (C[:3, :3] @ FLIP).T`` and ``t = -R @ C[:3, 3]`` with
``FLIP = diag(1, -1, -1)``.
"""

from __future__ import annotations

import json
import os
import queue
import re
import struct
import threading
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import (ContractViolation, InconsistentResolutionError, IngestionError, MalformedMatrixError,
                     MissingFileError, TruncatedFileError, UnknownFormatError)
from .scene import PARAM_GROUPS, Camera, Scene

GAMMA = 2.2
FLIP = np.diag([1.0, -1.0, -1.0])
MANIFEST_NAME = "transforms.json"
PREFETCH_DEPTH = 4
ORTHO_TOLERANCE = 1e-6


# ------------------------------------------------------------------ display encoding

def encode_display(linear):
    return np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0) ** (1.0 / GAMMA)


def decode_display(encoded):
    return np.clip(np.asarray(encoded, dtype=np.float64), 0.0, 1.0) ** GAMMA


def write_png(path, linear):
    img = np.round(encode_display(linear) * 255.0).astype(np.uint8)
    Image.fromarray(img).save(path, format="PNG")


def read_png(path, background=0.0):
    """Decode an 8/16-bit image to linear RGB; alpha is composited over ``background``."""
    _require(path)
    with Image.open(path) as im:
        mode = im.mode
        arr = np.asarray(im)
    arr = arr.astype(np.float64) / (65535.0 if arr.dtype == np.uint16 else 255.0)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    if mode in ("RGBA", "LA") or arr.shape[-1] == 4:
        a = arr[..., -1:]
        rgb = decode_display(arr[..., :3])
        return rgb * a + background * (1 - a)
    return decode_display(arr[..., :3])


def _require(path):
    if not os.path.isfile(path):
        raise MissingFileError(f"no such file: {path}")


# ------------------------------------------------------------------ PFM

def write_pfm(path, img):
    """Little-endian colour PFM, rows stored bottom to top as the format requires."""
    img = np.asarray(img, dtype="<f4")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractViolation("PFM writer expects an (H, W, 3) image")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path):
    _require(path)
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(\S+)").match(data, pos)
        if m is None:
            raise TruncatedFileError(f"{path}: incomplete PFM header")
        tokens.append(m.group(1))
        pos = m.end()
    pos += 1  # single whitespace byte ends the header
    kind = tokens[0]
    if kind not in (b"PF", b"Pf"):
        raise UnknownFormatError(f"{path}: not a PFM file")
    try:
        w, h, scale = int(tokens[1]), int(tokens[2]), float(tokens[3])
    except ValueError as exc:
        raise IngestionError(f"{path}: bad PFM header") from exc
    ch = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * ch * 4
    if len(data) - pos < need:
        raise TruncatedFileError(f"{path}: PFM payload truncated")
    arr = np.frombuffer(data, dtype=dtype, count=w * h * ch, offset=pos).reshape(h, w, ch)[::-1]
    if ch == 1:
        arr = np.repeat(arr, 3, axis=-1)
    return arr.astype(np.float32)


# ------------------------------------------------------------------ Radiance RGBE

def rgbe_to_float(rgbe):
    """Shared-exponent decode: ``c * 2^(e - 136)``, zero exponent -> 0."""
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    e = rgbe[..., 3].astype(np.int32)
    f = np.ldexp(1.0, e - 136)
    out = rgbe[..., :3].astype(np.float64) * f[..., None]
    out[e == 0] = 0.0
    return out


def float_to_rgbe(rgb):
    rgb = np.maximum(np.asarray(rgb, dtype=np.float64), 0.0)
    m = rgb.max(axis=-1)
    mant, ex = np.frexp(m)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    ok = m > 1e-32
    scale = np.where(ok, mant * 256.0 / np.where(ok, m, 1.0), 0.0)
    out[..., :3] = np.clip(np.floor(rgb * scale[..., None]), 0, 255).astype(np.uint8)
    out[..., 3] = np.where(ok, ex + 128, 0).astype(np.uint8)
    return out


def _rle_encode(channel):
    out = bytearray()
    n = len(channel)
    i = 0
    while i < n:
        run = 1
        while i + run < n and run < 127 and channel[i + run] == channel[i]:
            run += 1
        if run > 2:
            out += bytes([128 + run, channel[i]])
            i += run
            continue
        j = i
        while j < n and j - i < 128:
            if j + 2 < n and channel[j] == channel[j + 1] == channel[j + 2]:
                break
            j += 1
        out += bytes([j - i]) + bytes(channel[i:j])
        i = j
    return bytes(out)


def write_hdr(path, img, rle=True):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    rgbe = float_to_rgbe(img)
    with open(path, "wb") as fh:
        fh.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        fh.write(f"-Y {h} +X {w}\n".encode("ascii"))
        use_rle = rle and 8 <= w < 32768
        for row in rgbe:
            if not use_rle:
                fh.write(row.tobytes())
                continue
            fh.write(bytes([2, 2, w >> 8, w & 255]))
            for c in range(4):
                fh.write(_rle_encode(row[:, c].tobytes()))


def _read_rle_scanline(data, pos, w, path):
    row = np.empty((4, w), dtype=np.uint8)
    for c in range(4):
        x = 0
        while x < w:
            if pos >= len(data):
                raise TruncatedFileError(f"{path}: scanline truncated")
            count = data[pos]
            pos += 1
            if count > 128:
                count -= 128
                if pos >= len(data) or x + count > w:
                    raise TruncatedFileError(f"{path}: bad run")
                row[c, x:x + count] = data[pos]
                pos += 1
            else:
                if count == 0 or x + count > w or pos + count > len(data):
                    raise TruncatedFileError(f"{path}: bad literal run")
                row[c, x:x + count] = np.frombuffer(data, np.uint8, count, pos)
                pos += count
            x += count
    return row.T, pos


def read_hdr(path):
    _require(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if not (data.startswith(b"#?RADIANCE") or data.startswith(b"#?RGBE")):
        raise UnknownFormatError(f"{path}: missing Radiance signature")
    pos = 0
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise TruncatedFileError(f"{path}: header not terminated")
        line = data[pos:end].strip()
        pos = end + 1
        if line.startswith(b"FORMAT=") and line != b"FORMAT=32-bit_rle_rgbe":
            raise UnknownFormatError(f"{path}: unsupported {line.decode(errors='replace')}")
        if not line and pos > 1:
            break
    end = data.find(b"\n", pos)
    if end < 0:
        raise TruncatedFileError(f"{path}: missing resolution line")
    m = re.fullmatch(rb"-Y (\d+) \+X (\d+)", data[pos:end].strip())
    if m is None:
        raise UnknownFormatError(f"{path}: unsupported orientation {data[pos:end]!r}")
    h, w = int(m.group(1)), int(m.group(2))
    pos = end + 1
    out = np.empty((h, w, 4), dtype=np.uint8)
    for y in range(h):
        if pos + 4 <= len(data) and data[pos] == 2 and data[pos + 1] == 2 and (data[pos + 2] & 0x80) == 0 \
                and 8 <= w < 32768:
            if (data[pos + 2] << 8) | data[pos + 3] != w:
                raise IngestionError(f"{path}: scanline width mismatch")
            out[y], pos = _read_rle_scanline(data, pos + 4, w, path)
        else:
            if pos + 4 * w > len(data):
                raise TruncatedFileError(f"{path}: scanline {y} truncated")
            out[y] = np.frombuffer(data, np.uint8, 4 * w, pos).reshape(w, 4)
            pos += 4 * w
    return rgbe_to_float(out)


def load_environment(path):
    """Equirectangular radiance map from Radiance-HDR or PFM, as float64 (H, W, 3)."""
    _require(path)
    with open(path, "rb") as fh:
        head = fh.read(10)
    if head.startswith(b"#?"):
        img = read_hdr(path)
    elif head[:2] in (b"PF", b"Pf"):
        img = read_pfm(path)
    else:
        raise UnknownFormatError(f"{path}: unknown environment format")
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise IngestionError(f"{path}: non-finite radiance")
    return img


def save_environment(path, img):
    if str(path).lower().endswith(".pfm"):
        write_pfm(path, img)
    else:
        write_hdr(path, img)


def read_image(path):
    """Linear RGB from PNG/JPEG (display-decoded), PFM or HDR (already linear)."""
    low = str(path).lower()
    if low.endswith(".pfm"):
        return read_pfm(path).astype(np.float64)
    if low.endswith(".hdr"):
        return read_hdr(path)
    return read_png(path)


# ------------------------------------------------------------------ datasets

@dataclass
class Frame:
    image_path: str
    camera: Camera
    split: str = "train"


@dataclass
class DatasetManifest:
    frames: list
    intrinsics: dict = field(default_factory=dict)

    def split(self, name):
        return [f for f in self.frames if f.split == name]

    def __len__(self):
        return len(self.frames)


def camera_from_c2w(c2w, fx, fy, cx, cy, width, height):
    c2w = np.asarray(c2w, dtype=np.float64)
    if c2w.shape != (4, 4) or not np.all(np.isfinite(c2w)):
        raise MalformedMatrixError("camera-to-world must be a finite 4x4 matrix")
    if np.max(np.abs(c2w[3] - [0, 0, 0, 1])) > ORTHO_TOLERANCE:
        raise MalformedMatrixError("camera-to-world last row must be (0, 0, 0, 1)")
    Rg = c2w[:3, :3]
    if np.max(np.abs(Rg.T @ Rg - np.eye(3))) > ORTHO_TOLERANCE or np.linalg.det(Rg) < 0:
        raise MalformedMatrixError("camera-to-world rotation is not a proper rotation")
    R = (Rg @ FLIP).T
    return Camera(fx, fy, cx, cy, width, height, R, -R @ c2w[:3, 3])


def camera_to_c2w(camera: Camera):
    out = np.eye(4)
    out[:3, :3] = camera.rotation.T @ FLIP
    out[:3, 3] = camera.center
    return out


def prefetch(items, load, depth=PREFETCH_DEPTH):
    """Yield ``load(item)`` in order while a background thread decodes ahead through a bounded queue."""
    q = queue.Queue(maxsize=max(1, depth))
    done = object()

    def worker():
        try:
            for it in items:
                q.put((True, load(it)))
        except BaseException as exc:  # re-raised in the consumer
            q.put((False, exc))
        q.put((True, done))

    threading.Thread(target=worker, daemon=True).start()
    while True:
        ok, val = q.get()
        if not ok:
            raise val
        if val is done:
            return
        yield val


def _frame_path(root, rel):
    p = os.path.join(root, rel)
    if os.path.isfile(p):
        return p
    for ext in (".png", ".pfm", ".hdr", ".jpg"):
        if os.path.isfile(p + ext):
            return p + ext
    raise MissingFileError(f"frame image not found: {p}")


def load_dataset(path, with_images=True):
    """Read ``transforms.json`` in ``path`` and decode every referenced image to linear RGB.

    Returns ``(manifest, images)``; frames keep manifest order.
    """
    mpath = os.path.join(path, MANIFEST_NAME) if os.path.isdir(path) else path
    root = os.path.dirname(mpath)
    _require(mpath)
    try:
        with open(mpath, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{mpath}: invalid JSON ({exc})") from exc
    frames_meta = meta.get("frames")
    if not isinstance(frames_meta, list):
        raise IngestionError(f"{mpath}: missing frames list")
    paths = [_frame_path(root, fm.get("file_path", "")) for fm in frames_meta]

    def size_of(p):
        if p.lower().endswith((".pfm", ".hdr")):
            return read_image(p).shape[1::-1]
        with Image.open(p) as im:
            return im.size

    images = list(prefetch(paths, read_image)) if with_images else None
    frames = []
    res_by_split = {}
    for i, (fm, p) in enumerate(zip(frames_meta, paths)):
        w0, h0 = images[i].shape[1::-1] if with_images else size_of(p)
        w = int(fm.get("w", meta.get("w", w0)))
        h = int(fm.get("h", meta.get("h", h0)))
        if (w, h) != (w0, h0):
            raise InconsistentResolutionError(f"{p}: image is {w0}x{h0}, manifest says {w}x{h}")
        split = fm.get("split", "train")
        if res_by_split.setdefault(split, (w, h)) != (w, h):
            raise InconsistentResolutionError(f"split {split!r} mixes resolutions")
        fx = fm.get("fl_x", meta.get("fl_x"))
        if fx is None:
            angle = fm.get("camera_angle_x", meta.get("camera_angle_x"))
            if angle is None:
                raise IngestionError(f"{mpath}: frame {i} has no focal length or camera_angle_x")
            fx = 0.5 * w / np.tan(0.5 * float(angle))
        fy = fm.get("fl_y", meta.get("fl_y", fx))
        cx = fm.get("cx", meta.get("cx", w / 2.0))
        cy = fm.get("cy", meta.get("cy", h / 2.0))
        try:
            c2w = np.asarray(fm["transform_matrix"], dtype=np.float64)
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedMatrixError(f"{mpath}: frame {i} transform_matrix unreadable") from exc
        frames.append(Frame(p, camera_from_c2w(c2w, float(fx), float(fy), float(cx), float(cy), w, h), split))
    intr = {k: meta[k] for k in ("camera_angle_x", "fl_x", "fl_y", "cx", "cy", "w", "h") if k in meta}
    return DatasetManifest(frames, intr), images


def write_dataset(path, cameras, images, names=None, splits=None, fmt="png"):
    """Write a manifest plus images (``png`` display-encoded or ``pfm`` linear)."""
    os.makedirs(path, exist_ok=True)
    frames = []
    for i, (cam, img) in enumerate(zip(cameras, images)):
        name = names[i] if names else f"frame_{i:04d}"
        fname = f"{name}.{fmt}"
        if fmt == "png":
            write_png(os.path.join(path, fname), img)
        elif fmt == "pfm":
            write_pfm(os.path.join(path, fname), img)
        else:
            raise ContractViolation(f"unsupported image format {fmt!r}")
        frames.append({
            "file_path": fname,
            "split": splits[i] if splits else "train",
            "fl_x": cam.fx, "fl_y": cam.fy, "cx": cam.cx, "cy": cam.cy, "w": cam.width, "h": cam.height,
            "transform_matrix": camera_to_c2w(cam).tolist(),
        })
    meta = {"frames": frames}
    if cameras:
        meta["camera_angle_x"] = float(2 * np.arctan(0.5 * cameras[0].width / cameras[0].fx))
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
    return os.path.join(path, MANIFEST_NAME)


# ------------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"USCK"
CHECKPOINT_VERSION = 1
_CK_HEADER = struct.Struct("<4sIQ6dIII")  # magic, version, count, bounds, env h, env w, flags
_FLAG_MOMENTS = 1
PARTICLE_WIDTH = sum(w for _, w in PARAM_GROUPS)


@dataclass
class Checkpoint:
    scene: Scene
    environment: np.ndarray
    moments: dict = None
    meta: dict = field(default_factory=dict)


def pack_particles(scene: Scene):
    cols = [getattr(scene, n).reshape(len(scene), -1) for n, _ in PARAM_GROUPS]
    return np.concatenate(cols, axis=1) if len(scene) else np.zeros((0, PARTICLE_WIDTH))


def unpack_particles(arr, bounds):
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, PARTICLE_WIDTH)
    parts, o = [], 0
    for _, w in PARAM_GROUPS:
        parts.append(arr[:, o:o + w] if w > 1 else arr[:, o].copy())
        o += w
    return Scene(*parts, bounds=bounds)


def save_checkpoint(path, scene: Scene, environment=None, moments=None, meta=None):
    """Little-endian binary: header, particles (K x 18 f8), env (H x W x 3 f8), optional Adam moments, JSON meta.

    Moment blocks follow :data:`PARAM_GROUPS` order as ``m``, ``v`` arrays and
    a u64 step count per group.
    """
    env = np.zeros((0, 0, 3)) if environment is None else np.asarray(environment, dtype=np.float64)
    flags = _FLAG_MOMENTS if moments else 0
    with open(path, "wb") as fh:
        fh.write(_CK_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(scene), *scene.bounds.reshape(-1),
                                 env.shape[0], env.shape[1], flags))
        fh.write(pack_particles(scene).astype("<f8").tobytes())
        fh.write(env.astype("<f8").tobytes())
        if moments:
            for name, _ in PARAM_GROUPS:
                fh.write(np.asarray(moments["m"][name], dtype="<f8").tobytes())
                fh.write(np.asarray(moments["v"][name], dtype="<f8").tobytes())
                fh.write(struct.pack("<Q", int(moments["t"][name])))
        blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    _require(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _CK_HEADER.size:
        raise TruncatedFileError(f"{path}: checkpoint header truncated")
    magic, version, K, *rest = _CK_HEADER.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise UnknownFormatError(f"{path}: not a checkpoint")
    if version != CHECKPOINT_VERSION:
        raise UnknownFormatError(f"{path}: unsupported checkpoint version {version}")
    bounds = np.array(rest[:6]).reshape(2, 3)
    eh, ew, flags = rest[6:]
    pos = _CK_HEADER.size

    def take(count):
        nonlocal pos
        nbytes = 8 * count
        if pos + nbytes > len(data):
            raise TruncatedFileError(f"{path}: checkpoint payload truncated")
        arr = np.frombuffer(data, "<f8", count, pos).astype(np.float64)
        pos += nbytes
        return arr

    scene = unpack_particles(take(K * PARTICLE_WIDTH), bounds)
    env = take(eh * ew * 3).reshape(eh, ew, 3)
    moments = None
    if flags & _FLAG_MOMENTS:
        moments = {"m": {}, "v": {}, "t": {}}
        for name, w in PARAM_GROUPS:
            shape = (K, w) if w > 1 else (K,)
            moments["m"][name] = take(K * w).reshape(shape)
            moments["v"][name] = take(K * w).reshape(shape)
            if pos + 8 > len(data):
                raise TruncatedFileError(f"{path}: checkpoint payload truncated")
            moments["t"][name] = struct.unpack_from("<Q", data, pos)[0]
            pos += 8
    if pos + 4 > len(data):
        raise TruncatedFileError(f"{path}: checkpoint meta truncated")
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + n > len(data):
        raise TruncatedFileError(f"{path}: checkpoint meta truncated")
    meta = json.loads(data[pos:pos + n].decode("utf-8"))
    return Checkpoint(scene, env if env.size else None, moments, meta)


# ------------------------------------------------------------------ PLY

PLY_PROPERTIES = (["x", "y", "z"] + [f"rot_{i}" for i in range(4)] + [f"scale_{i}" for i in range(3)]
                  + ["opacity"] + [f"albedo_{i}" for i in range(3)] + [f"specular_{i}" for i in range(3)]
                  + ["roughness"])


def export_ply(path, scene: Scene):
    """Binary little-endian PLY, one vertex per particle.

    Properties in :data:`PLY_PROPERTIES` order hold raw parameters: quaternion
    ``(w, x, y, z)``, log scales, opacity and roughness logits.
    """
    arr = pack_particles(scene).astype("<f8")
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(scene)}"]
    header += [f"property double {p}" for p in PLY_PROPERTIES]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(arr.tobytes())


def import_ply(path, bounds=None):
    _require(path)
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise UnknownFormatError(f"{path}: not a PLY file")
    lines = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise UnknownFormatError(f"{path}: only binary little-endian PLY is supported")
    count = next(int(ln.split()[2]) for ln in lines if ln.startswith("element vertex"))
    props = [ln.split()[2] for ln in lines if ln.startswith("property")]
    if props != PLY_PROPERTIES:
        raise IngestionError(f"{path}: unexpected PLY properties")
    pos = end + len(b"end_header\n")
    need = count * PARTICLE_WIDTH * 8
    if len(data) - pos < need:
        raise TruncatedFileError(f"{path}: PLY body truncated")
    arr = np.frombuffer(data, "<f8", count * PARTICLE_WIDTH, pos).reshape(count, PARTICLE_WIDTH)
    return unpack_particles(arr, bounds)


# ------------------------------------------------------------------ flat config and logs

def read_config(path):
    """``key = value`` lines; ``#`` starts a comment.  Values stay strings."""
    _require(path)
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for num, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise IngestionError(f"{path}:{num}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def format_value(v):
    if isinstance(v, (tuple, list, np.ndarray)):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_config(path, values, header=None):
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for k, v in values.items():
            fh.write(f"{k} = {format_value(v)}\n")


def write_table(path, rows, columns, sep="\t"):
    """Delimited text table; floats use ``repr`` so values round-trip exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(sep.join(columns) + "\n")
        for r in rows:
            fh.write(sep.join(format_value(r[c]) for c in columns) + "\n")


def write_loss_log(path, history):
    cols = ["stage", "iteration", "view", "total", "forward", "deferred", "normal", "alpha", "particles"]
    write_table(path, history, cols)


__all__ = [
    "encode_display", "decode_display", "write_png", "read_png", "write_pfm", "read_pfm", "rgbe_to_float",
    "float_to_rgbe", "write_hdr", "read_hdr", "load_environment", "save_environment", "read_image", "Frame",
    "DatasetManifest", "camera_from_c2w", "camera_to_c2w", "prefetch", "load_dataset", "write_dataset",
    "Checkpoint", "save_checkpoint", "load_checkpoint", "export_ply", "import_ply", "read_config",
    "write_config", "write_table", "write_loss_log",
]
