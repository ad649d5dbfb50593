"""Head tensors, synthetic generators and the binary dump format.

A :class:`HeadDump` holds the raw tensors of one attention head: ``n`` cached
keys and values and ``m`` decode queries, all of dimension ``d``.  Storage is
float32 (the on-disk precision); every numerical routine in the package
promotes to float64 before computing.

Dump layout (little-endian)::

    offset  size  field
    0       4     magic b"TAC1"
    4       4     version (u32, = 1)
    8       4     n (u32)
    12      4     d (u32)
    16      4     m (u32)
    20      4     reserved (u32, = 0)
    24      8     zero padding
    32      ...   keys n*d f32, values n*d f32, queries m*d f32 (row-major)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DumpFormatError, ValidationError

MAGIC = b"TAC1"
VERSION = 1
HEADER_SIZE = 32
_HEADER = struct.Struct("<4sIIIII")

MODES = ("gaussian", "clustered", "longtail")


def _frozen_f32(name, arr, shape):
    a = np.array(arr, dtype=np.float32, order="C", copy=True)
    if a.shape != shape:
        raise ValidationError(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite values")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HeadDump:
    """Raw tensors of one attention head.

    Parameters
    ----------
    keys, values : array_like, shape (n, d)
    queries : array_like, shape (m, d)

    Arrays are copied to read-only float32 storage on construction.
    """

    keys: np.ndarray
    values: np.ndarray
    queries: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.keys)
        q = np.atleast_2d(np.asarray(self.queries))
        if k.ndim != 2 or q.ndim != 2:
            raise ValidationError("keys and queries must be 2-D matrices")
        n, d = k.shape
        m = q.shape[0]
        if n < 1 or d < 1 or m < 1:
            raise ValidationError(f"empty head: n={n}, d={d}, m={m}")
        object.__setattr__(self, "keys", _frozen_f32("keys", k, (n, d)))
        object.__setattr__(self, "values", _frozen_f32("values", self.values, (n, d)))
        object.__setattr__(self, "queries", _frozen_f32("queries", q, (m, d)))

    @property
    def n(self) -> int:
        return self.keys.shape[0]

    @property
    def d(self) -> int:
        return self.keys.shape[1]

    @property
    def m(self) -> int:
        return self.queries.shape[0]

    def query(self, j: int) -> np.ndarray:
        """Query ``j`` as a float64 vector."""
        return self.queries[j].astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, HeadDump):
            return NotImplemented
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in (
                (self.keys, other.keys),
                (self.values, other.values),
                (self.queries, other.queries),
            )
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GQAGroup:
    """One KV head shared by ``G`` query heads."""

    kv_head: HeadDump
    group_queries: tuple = field(default=())

    def __post_init__(self):
        qs = self.group_queries
        if len(qs) == 0:
            qs = tuple(self.kv_head.query(j) for j in range(self.kv_head.m))
        qs = tuple(np.asarray(q, dtype=np.float64).reshape(-1) for q in qs)
        for q in qs:
            if q.shape != (self.kv_head.d,):
                raise ValidationError(
                    f"group query has dimension {q.shape[0]}, expected {self.kv_head.d}"
                )
        object.__setattr__(self, "group_queries", qs)

    @property
    def size(self) -> int:
        return len(self.group_queries)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of :func:`generate_synthetic`.

    ``cluster_count`` applies to ``clustered`` mode.  ``tail_sharpness`` and
    ``jitter`` apply to ``longtail`` mode: the sorted weights decay like
    ``1/rank + b`` with ``b`` around ``exp(-tail_sharpness)``, and each weight
    gets lognormal noise of scale ``jitter``.
    """

    n: int
    d: int
    m: int = 1
    seed: int = 0
    mode: str = "gaussian"
    cluster_count: int = 8
    tail_sharpness: float = 9.0
    jitter: float = 0.05

    def validate(self):
        for name in ("n", "d", "m"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "clustered" and not 1 <= self.cluster_count <= self.n:
            raise ConfigError("cluster_count must be in [1, n]")
        if not self.tail_sharpness > 0:
            raise ConfigError("tail_sharpness must be positive")
        if not self.jitter >= 0:
            raise ConfigError("jitter must be non-negative")


def longtail_weights(n, a, b, jitter=0.0, rng=None):
    """Sorted-position weights ``(a / x + b) * exp(jitter * N(0, 1))``, x = 1..n."""
    x = np.arange(1, n + 1, dtype=np.float64)
    w = a / x + b
    if jitter > 0:
        if rng is None:
            raise ValueError("rng is required when jitter > 0")
        w = w * np.exp(jitter * rng.standard_normal(n))
    return w


def _unit_rows(rng, shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _values_near_constant_norm(rng, n, d):
    return _unit_rows(rng, (n, d)) * (1.0 + 0.05 * rng.standard_normal((n, 1)))


def _gen_gaussian(rng, cfg):
    keys = rng.standard_normal((cfg.n, cfg.d))
    values = rng.standard_normal((cfg.n, cfg.d))
    queries = rng.standard_normal((cfg.m, cfg.d))
    return keys, values, queries, None


def _gen_clustered(rng, cfg):
    n, d, c = cfg.n, cfg.d, cfg.cluster_count
    centers = 6.0 * rng.standard_normal((c, d))
    labels = rng.permutation(np.arange(n) % c)
    keys = centers[labels] + rng.standard_normal((n, d))
    values = rng.standard_normal((n, d))
    queries = rng.standard_normal((cfg.m, d))
    return keys, values, queries, labels


# Perpendicular key noise and query spread for longtail heads.  Chosen so
# that cluster ranking is informative but imperfect.
_LONGTAIL_PERP_SCALE = 0.85
_LONGTAIL_QUERY_SPREAD = 0.15


def _gen_longtail(rng, cfg):
    n, d = cfg.n, cfg.d
    u = _unit_rows(rng, (d,))
    b = np.exp(-cfg.tail_sharpness + rng.standard_normal())
    w = longtail_weights(n, 1.0, b, cfg.jitter, rng)
    logits = np.log(w) - np.log(w.max())
    slot = rng.permutation(n)
    token_logit = np.empty(n)
    token_logit[slot] = logits

    perp = _LONGTAIL_PERP_SCALE * rng.standard_normal((n, d))
    perp -= np.outer(perp @ u, u)
    keys = token_logit[:, None] * u[None, :] + perp

    # (q . k) / sqrt(d) == k . u when q = sqrt(d) * u.
    dirs = np.tile(u, (cfg.m, 1))
    if cfg.m > 1:
        dirs[1:] += _LONGTAIL_QUERY_SPREAD * _unit_rows(rng, (cfg.m - 1, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    queries = np.sqrt(d) * dirs
    values = _values_near_constant_norm(rng, n, d)
    return keys, values, queries, None


def generate_synthetic(cfg: SynthConfig) -> HeadDump:
    """Deterministic synthetic head.

    ``gaussian`` draws everything i.i.d. standard normal.  ``clustered`` draws
    keys around ``cluster_count`` well-separated latent centers.  ``longtail``
    builds logits directly so that the sorted exp-weights of query 0 follow
    ``1/x + b`` with jitter; values then have near-constant norm.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    gen = {"gaussian": _gen_gaussian, "clustered": _gen_clustered, "longtail": _gen_longtail}
    keys, values, queries, _ = gen[cfg.mode](rng, cfg)
    return HeadDump(keys, values, queries)


def latent_labels(cfg: SynthConfig) -> np.ndarray:
    """Ground-truth cluster labels of a ``clustered`` head."""
    cfg.validate()
    if cfg.mode != "clustered":
        raise ConfigError("latent labels exist only for clustered mode")
    return _gen_clustered(np.random.default_rng(cfg.seed), cfg)[3]


# --------------------------------------------------------------------------
# binary dumps


def dump_bytes(h: HeadDump) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, h.n, h.d, h.m, 0)
    header += b"\x00" * (HEADER_SIZE - len(header))
    le = np.dtype("<f4")
    return b"".join(
        [header, h.keys.astype(le).tobytes(), h.values.astype(le).tobytes(), h.queries.astype(le).tobytes()]
    )


def write_dump(h: HeadDump, path) -> None:
    path = Path(path)
    try:
        path.write_bytes(dump_bytes(h))
    except OSError as exc:
        raise OSError(f"cannot write dump {path}: {exc.strerror or exc}") from exc


def parse_dump(data: bytes, path=None) -> HeadDump:
    if len(data) < 4 or data[:4] != MAGIC:
        raise DumpFormatError("bad magic", 0, path)
    if len(data) < HEADER_SIZE:
        raise DumpFormatError(
            f"truncated header: expected {HEADER_SIZE} bytes, got {len(data)}", len(data), path
        )
    _, version, n, d, m, reserved = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise DumpFormatError(f"unsupported version {version}", 4, path)
    if n < 1 or d < 1 or m < 1:
        raise DumpFormatError(f"shape mismatch: n={n}, d={d}, m={m} must be positive", 8, path)
    if reserved != 0:
        raise DumpFormatError("reserved field must be zero", 20, path)

    expected = HEADER_SIZE + 4 * (2 * n * d + m * d)
    if len(data) < expected:
        raise DumpFormatError(
            f"truncated payload: expected {expected} bytes, got {len(data)}", len(data), path
        )
    if len(data) > expected:
        raise DumpFormatError(
            f"shape mismatch: header implies {expected} bytes, file has {len(data)}", expected, path
        )

    flat = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise DumpFormatError("non-finite value", HEADER_SIZE + 4 * int(bad[0]), path)
    nd = n * d
    return HeadDump(
        flat[:nd].reshape(n, d), flat[nd : 2 * nd].reshape(n, d), flat[2 * nd :].reshape(m, d)
    )


def read_dump(path) -> HeadDump:
    path = Path(path)
    return parse_dump(path.read_bytes(), path)


# --------------------------------------------------------------------------
# manifests


def write_manifest(entries, path) -> None:
    """Write ``[{path, layer, head}, ...]`` as JSON."""
    rows = [{"path": str(e["path"]), "layer": int(e["layer"]), "head": int(e["head"])} for e in entries]
    Path(path).write_text(json.dumps(rows, indent=2) + "\n")


def read_manifest(path):
    """Read a manifest; relative dump paths resolve against its directory."""
    path = Path(path)
    rows = json.loads(path.read_text())
    if not isinstance(rows, list):
        raise ValidationError(f"{path}: manifest must be a JSON array")
    out = []
    for i, r in enumerate(rows):
        try:
            p = Path(r["path"])
            out.append({"path": p if p.is_absolute() else path.parent / p,
                        "layer": int(r["layer"]), "head": int(r["head"])})
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: bad manifest entry {i}: {exc}") from exc
    return out


def derive_seed(seed, *tags) -> int:
    """Independent per-(layer, head) seed from a global seed."""
    return int(np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(1)[0])


__all__ = [
    "HeadDump", "GQAGroup", "SynthConfig", "generate_synthetic", "latent_labels",
    "longtail_weights", "read_dump", "write_dump", "parse_dump", "dump_bytes",
    "read_manifest", "write_manifest", "derive_seed", "HEADER_SIZE", "MAGIC",
]
