"""Checkpoint file format "UBPC".

Layout (all little-endian):
  magic "UBPC", version u32
  input_dim u32, proj_dim u32
  parameter tensors as f32 in declared field order:
      W1, b1, W2, b2, ln_gain, ln_bias, tau_raw (one f32)
  optimizer: step u64, then per parameter field first-moment f32 tensor and
      second-moment f32 tensor (scalars for tau_raw)
  tracker: mu f64, var f64, momentum f64, z f64, warmup u32, seen u32
  radius table: r0 f64, c f64, n u32, ids u32[n], radii f64[n]
  best_epoch u32, best_val_top1 f64
  config echo: u32 length + canonical JSON (sorted keys)
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .encoder import PARAM_FIELDS, EncoderParams
from .errors import FormatError
from .training import AdamWState, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .uncertainty import RadiusTable, SimilarityTracker


def _tensor_shapes(input_dim: int, proj_dim: int) -> dict:
    return {
        "W1": (input_dim, proj_dim),
        "b1": (proj_dim,),
        "W2": (proj_dim, proj_dim),
        "b2": (proj_dim,),
        "ln_gain": (proj_dim,),
        "ln_bias": (proj_dim,),
        "tau_raw": (),
    }


def checkpoint_bytes(cp: Checkpoint) -> bytes:
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<III", CHECKPOINT_VERSION, cp.input_dim, cp.proj_dim)
    for name in PARAM_FIELDS:
        val = getattr(cp.params, name)
        out += np.asarray(val, dtype="<f4").tobytes()
    out += struct.pack("<Q", cp.opt.step)
    for name in PARAM_FIELDS:
        out += np.asarray(cp.opt.m[name], dtype="<f4").tobytes()
        out += np.asarray(cp.opt.v[name], dtype="<f4").tobytes()
    t = cp.tracker
    out += struct.pack("<ddddII", t.mu_hat, t.var_hat, t.momentum, t.z,
                       t.warmup_batches, t.batches_seen)
    r = cp.radii
    out += struct.pack("<ddI", r.r0, r.c, len(r.ids))
    out += r.ids.astype("<u4").tobytes()
    out += r.radii.astype("<f8").tobytes()
    out += struct.pack("<Id", cp.best_epoch, cp.best_val_top1)
    blob = json.dumps(cp.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out += struct.pack("<I", len(blob))
    out += blob
    return bytes(out)


def save_checkpoint(path, cp: Checkpoint):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(cp))


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw = raw
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.source}: truncated checkpoint")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, shape):
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(self.take(np.dtype(dtype).itemsize * count), dtype=dtype)
        return a.reshape(shape) if shape else a[0]


def load_checkpoint(path) -> Checkpoint:
    raw = open(path, "rb").read()
    rd = _Reader(raw, str(path))
    if rd.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, input_dim, proj_dim = rd.unpack("<III")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    shapes = _tensor_shapes(input_dim, proj_dim)

    vals = {}
    for name in PARAM_FIELDS:
        a = rd.array("<f4", shapes[name])
        vals[name] = float(a) if name == "tau_raw" else a.astype(np.float32)
    params = EncoderParams(**vals)

    (step,) = rd.unpack("<Q")
    m, v = {}, {}
    for name in PARAM_FIELDS:
        am = rd.array("<f4", shapes[name])
        av = rd.array("<f4", shapes[name])
        if name == "tau_raw":
            m[name], v[name] = float(am), float(av)
        else:
            m[name], v[name] = am.astype(np.float32), av.astype(np.float32)
    opt = AdamWState(step=step, m=m, v=v)

    mu, var, momentum, z, warmup, seen = rd.unpack("<ddddII")
    tracker = SimilarityTracker(mu_hat=mu, var_hat=var, momentum=momentum, z=z,
                                warmup_batches=warmup, batches_seen=seen)

    r0, c, n = rd.unpack("<ddI")
    ids = np.frombuffer(rd.take(4 * n), dtype="<u4").copy()
    radii_vals = np.frombuffer(rd.take(8 * n), dtype="<f8").copy()
    radii = RadiusTable(r0=r0, c=c, ids=ids, radii=radii_vals)

    best_epoch, best_val = rd.unpack("<Id")
    (blob_len,) = rd.unpack("<I")
    config = json.loads(rd.take(blob_len).decode("utf-8"))
    return Checkpoint(params=params, opt=opt, tracker=tracker, radii=radii,
                      config=config, best_epoch=best_epoch, best_val_top1=best_val)
