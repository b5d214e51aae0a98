"""Uncertain-label policies and reference-averaged soft labels."""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import RawLabel
from .diffcore import ChecksumError, ContractError, atomic_write


class PolicyError(ValueError):
    pass


POLICY_KINDS = ("u-ignore", "u-ones", "u-zeros", "lsr-ones", "lsr-zeros")


@dataclass(frozen=True)
class LabelPolicy:
    """How Uncertain slots become training targets.

    ``low``/``high`` are only read by the two label-smoothing kinds, which
    draw each uncertain target from ``U(low, high)``.
    """

    kind: str = "u-ones"
    low: float = 0.0
    high: float = 0.0
    unmentioned_value: float = 0.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise PolicyError(f"unknown label policy {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.kind.startswith("lsr"):
            if not 0.0 <= self.low < self.high <= 1.0:
                raise PolicyError(f"need 0 <= a < b <= 1, got a={self.low}, b={self.high}")
            if self.kind == "lsr-ones" and self.low < 0.5:
                raise PolicyError("lsr-ones bounds must lie near one (a >= 0.5)")
            if self.kind == "lsr-zeros" and self.high > 0.5:
                raise PolicyError("lsr-zeros bounds must lie near zero (b <= 0.5)")
        if not 0.0 <= self.unmentioned_value <= 1.0:
            raise PolicyError("unmentioned_value must lie in [0, 1]")

    @classmethod
    def ignore(cls):
        return cls("u-ignore")

    @classmethod
    def ones(cls):
        return cls("u-ones")

    @classmethod
    def zeros(cls):
        return cls("u-zeros")

    @classmethod
    def lsr_ones(cls, a: float = 0.55, b: float = 0.85):
        return cls("lsr-ones", a, b)

    @classmethod
    def lsr_zeros(cls, a: float = 0.0, b: float = 0.3):
        return cls("lsr-zeros", a, b)

    @classmethod
    def parse(cls, text: str) -> "LabelPolicy":
        """``u-ones``, ``lsr-ones`` or ``lsr-ones(0.55,0.85)`` style strings."""
        text = text.strip().lower()
        if "(" in text:
            kind, rest = text.split("(", 1)
            a, b = (float(v) for v in rest.rstrip(")").split(","))
            return cls(kind.strip(), a, b)
        if text == "lsr-ones":
            return cls.lsr_ones()
        if text == "lsr-zeros":
            return cls.lsr_zeros()
        return cls(text)

    def __str__(self) -> str:
        if self.kind.startswith("lsr"):
            return f"{self.kind}({self.low},{self.high})"
        return self.kind


@dataclass(frozen=True)
class ResolvedTargets:
    values: np.ndarray
    mask: np.ndarray

    def as_nan_matrix(self) -> np.ndarray:
        """Targets with masked-out slots set to NaN (estimator ``y`` format)."""
        return np.where(self.mask, self.values, np.nan)


def resolve(raw: np.ndarray, policy: LabelPolicy, seed: int = 0) -> ResolvedTargets:
    raw = np.asarray(raw)
    values = np.zeros(raw.shape, dtype=np.float64)
    mask = np.ones(raw.shape, dtype=bool)
    values[raw == RawLabel.POSITIVE] = 1.0
    values[raw == RawLabel.UNMENTIONED] = policy.unmentioned_value
    unc = raw == RawLabel.UNCERTAIN
    # drawn for every slot so the stream does not depend on where uncertain labels fall
    draws = np.random.default_rng(seed).uniform(policy.low, policy.high, size=raw.shape)
    if policy.kind == "u-ignore":
        mask[unc] = False
    elif policy.kind == "u-ones":
        values[unc] = 1.0
    elif policy.kind == "u-zeros":
        values[unc] = 0.0
    else:
        values[unc] = draws[unc]
    return ResolvedTargets(values, mask)


@dataclass(frozen=True)
class SoftLabelDistribution:
    values: np.ndarray
    sources: tuple[str, ...] = ()

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]


def aggregate_soft_labels(predictions: Sequence[np.ndarray],
                          sources: Sequence[str] = ()) -> SoftLabelDistribution:
    """Elementwise mean over the reference axis.

    The mean is clipped into the per-slot [min, max] of the references so
    rounding can never leave the envelope and unanimous slots stay exact.
    """
    if len(predictions) == 0:
        raise ContractError("need at least one reference prediction grid")
    names = list(sources) or [f"model_{i}" for i in range(len(predictions))]
    first = np.asarray(predictions[0], dtype=np.float64)
    stack = []
    for name, p in zip(names, predictions):
        p = np.asarray(p, dtype=np.float64)
        if p.shape != first.shape:
            raise ContractError(f"predictions of {name!r} have shape {p.shape}, expected {first.shape}")
        if p.size and not ((p > 0) & (p < 1)).all():
            raise ContractError(f"predictions of {name!r} must lie strictly inside (0, 1)")
        stack.append(p)
    stack = np.stack(stack)
    mean = np.clip(np.mean(stack, axis=0), stack.min(axis=0), stack.max(axis=0))
    return SoftLabelDistribution(mean, tuple(names))


# ---------------------------------------------------------------------------
# binary framing shared with the neighbor pool
# ---------------------------------------------------------------------------

def frame(magic: bytes, header: bytes, payload: bytes) -> bytes:
    body = magic + struct.pack("<I", len(header)) + header + payload
    return body + hashlib.sha256(body).digest()


def unframe(raw: bytes, magic: bytes, path) -> tuple[bytes, bytes]:
    if len(raw) < len(magic) + 4 + 32:
        raise ChecksumError(f"{path}: file truncated")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (corrupted or truncated)")
    if not body.startswith(magic):
        raise ChecksumError(f"{path}: not a {magic!r} file")
    pos = len(magic)
    (hlen,) = struct.unpack_from("<I", body, pos)
    pos += 4
    return body[pos:pos + hlen], body[pos + hlen:]


_SOFT_MAGIC = b"MKSOFT01"


def write_soft_labels(dist: SoftLabelDistribution, path) -> None:
    n, C = dist.values.shape
    hdr = io.BytesIO()
    hdr.write(struct.pack("<QQI", n, C, len(dist.sources)))
    for s in dist.sources:
        enc = s.encode()
        hdr.write(struct.pack("<H", len(enc)) + enc)
    payload = np.ascontiguousarray(dist.values, dtype="<f8").tobytes()
    atomic_write(path, frame(_SOFT_MAGIC, hdr.getvalue(), payload))


def read_soft_labels(path) -> SoftLabelDistribution:
    header, payload = unframe(Path(path).read_bytes(), _SOFT_MAGIC, path)
    n, C, k = struct.unpack_from("<QQI", header, 0)
    pos = struct.calcsize("<QQI")
    sources = []
    for _ in range(k):
        (ln,) = struct.unpack_from("<H", header, pos)
        pos += 2
        sources.append(header[pos:pos + ln].decode())
        pos += ln
    if len(payload) != 8 * n * C:
        raise ChecksumError(f"{path}: payload size does not match header")
    values = np.frombuffer(payload, dtype="<f8").reshape(n, C).astype(np.float64)
    return SoftLabelDistribution(values, tuple(sources))
