"""Binary checkpoints for a trained EnsembleModel (extension ``.bsdenet``).

Layout::

    b"BSDENET\\0"  magic (8 bytes)
    version        1 byte
    manifest_len   uint32 little-endian
    manifest       UTF-8 text, one ``key=value`` per line
    blocks         little-endian float64; for member c = 0..C-1 and
                   n = 0..N-1: parameter vector then buffer vector

Market and payoff parameters go in the manifest as JSON so a checkpoint is
self-contained. Floats in the manifest use ``repr`` and round-trip exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .market import MarketParams, PayoffSpec
from .netcore import EnsembleModel, TimestepNet, _size, buffer_layout, param_layout

MAGIC = b"BSDENET\0"
VERSION = 1
EXTENSION = ".bsdenet"
_HEAD = struct.Struct("<BI")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointDimError(CheckpointError):
    pass


def _manifest(model: EnsembleModel) -> str:
    n_p = _size(param_layout(model.mp.d, model.width, model.L))
    n_b = _size(buffer_layout(model.mp.d, model.width, model.L))
    items = [
        ("format_version", str(VERSION)),
        ("d", str(model.mp.d)),
        ("width", str(model.width)),
        ("L", str(model.L)),
        ("N", str(model.N)),
        ("J", str(model.J)),
        ("C", str(model.C)),
        ("kappa", repr(model.kappa)),
        ("seed", str(model.seed)),
        ("n_params", str(n_p)),
        ("n_buffers", str(n_b)),
        ("market", json.dumps(model.mp.to_dict(), separators=(",", ":"))),
        ("payoff", json.dumps({"kind": model.payoff.kind.value, "K": model.payoff.K})),
    ]
    return "".join(f"{k}={v}\n" for k, v in items)


def checkpoint_save(model: EnsembleModel) -> bytes:
    if not model.is_complete():
        raise CheckpointError("model is missing trained nets")
    text = _manifest(model).encode("utf-8")
    blocks = []
    for c in range(model.C):
        for n in range(model.N):
            net = model.net(c, n)
            blocks.append(net.theta)
            blocks.append(net.buffers)
    payload = np.concatenate(blocks).astype("<f8").tobytes()
    return MAGIC + _HEAD.pack(VERSION, len(text)) + text + payload


def _parse_manifest(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed manifest line {line!r}")
        out[key] = val
    return out


def checkpoint_load(data: bytes) -> EnsembleModel:
    if len(data) < len(MAGIC) + _HEAD.size:
        raise CheckpointTruncatedError("payload shorter than header")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, mlen = _HEAD.unpack_from(data, len(MAGIC))
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    start = len(MAGIC) + _HEAD.size
    if len(data) < start + mlen:
        raise CheckpointTruncatedError("manifest truncated")
    try:
        man = _parse_manifest(data[start:start + mlen].decode("utf-8"))
        d, width, L = int(man["d"]), int(man["width"]), int(man["L"])
        N, J, C = int(man["N"]), int(man["J"]), int(man["C"])
        kappa, seed = float(man["kappa"]), int(man["seed"])
        n_p, n_b = int(man["n_params"]), int(man["n_buffers"])
        mp = MarketParams(**json.loads(man["market"]))
        pay = json.loads(man["payoff"])
        spec = PayoffSpec(pay["kind"], pay["K"])
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"bad manifest: {exc}") from exc
    if mp.d != d:
        raise CheckpointDimError(f"manifest d={d} but market has d={mp.d}")
    if n_p != _size(param_layout(d, width, L)) or n_b != _size(buffer_layout(d, width, L)):
        raise CheckpointDimError("declared block sizes do not match network dimensions")
    body = data[start + mlen:]
    expected = C * N * (n_p + n_b) * 8
    if len(body) < expected:
        raise CheckpointTruncatedError(f"payload has {len(body)} bytes, expected {expected}")
    if len(body) > expected:
        raise CheckpointDimError(f"payload has {len(body) - expected} trailing bytes")
    flat = np.frombuffer(body, dtype="<f8").astype(float)
    model = EnsembleModel(mp, spec, N, J, kappa, C=C, L=L, width=width, seed=seed)
    off = 0
    for c in range(C):
        for n in range(N):
            theta = flat[off:off + n_p]
            buffers = flat[off + n_p:off + n_p + n_b]
            off += n_p + n_b
            model.members[c][n] = TimestepNet(d, width, L, n=n, eta=model.eta(n),
                                              theta=theta, buffers=buffers)
    return model


def save_file(model: EnsembleModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_save(model))


def load_file(path) -> EnsembleModel:
    with open(path, "rb") as fh:
        return checkpoint_load(fh.read())
