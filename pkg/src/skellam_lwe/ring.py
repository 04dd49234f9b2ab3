"""Arithmetic over Z_q for an odd prime q below 2**63.

Residues are stored as int64 numpy arrays with values in ``[0, q)``.  Norms and
signed views always go through the central representation
``[-(q-1)/2, (q-1)/2]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAX_MODULUS_BITS = 63
_INT64_LIMIT = 1 << 63

# Deterministic for every n < 3.3e24, which covers all 64-bit integers.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)

VECTOR_MAGIC = b"ZQV1"
MATRIX_MAGIC = b"ZQM1"


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for 64-bit inputs."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime(lower_bound: int) -> int:
    """Smallest prime ``>= lower_bound``.

    Returns a plain integer: ``next_prime(2) == 2`` even though 2 is not a
    valid :class:`Modulus`.
    """
    lower_bound = int(lower_bound)
    if not 2 <= lower_bound < (1 << 62):
        raise ValueError(f"lower_bound must lie in [2, 2**62), got {lower_bound}")
    if lower_bound == 2:
        return 2
    n = lower_bound | 1
    while n < _INT64_LIMIT:
        if is_prime(n):
            return n
        n += 2
    raise OverflowError("no prime found below 2**63")


@dataclass(frozen=True)
class Modulus:
    q: int

    def __post_init__(self) -> None:
        q = int(self.q)
        object.__setattr__(self, "q", q)
        if q < 3 or q % 2 == 0:
            raise ValueError(f"modulus must be an odd prime >= 3, got {q}")
        if q >= _INT64_LIMIT:
            raise ValueError(f"modulus must fit in {MAX_MODULUS_BITS} bits, got {q}")
        if not is_prime(q):
            raise ValueError(f"modulus {q} is not prime")

    @property
    def half(self) -> int:
        """Largest value of the central range, ``(q - 1) // 2``."""
        return (self.q - 1) // 2

    def reduce(self, x):
        """Map integers (scalar or array) into ``[0, q)``."""
        if isinstance(x, np.ndarray):
            if x.dtype == object:
                return np.array([int(v) % self.q for v in x.ravel()], dtype=np.int64).reshape(x.shape)
            return np.mod(x.astype(np.int64, copy=False), self.q)
        return int(x) % self.q

    def lift(self, r):
        """Central lift of residues (scalar or array)."""
        if isinstance(r, np.ndarray):
            r = r.astype(np.int64, copy=False)
            return np.where(r > self.half, r - self.q, r)
        r = int(r)
        return r - self.q if r > self.half else r


@dataclass(frozen=True)
class Residue:
    value: int
    modulus: Modulus

    def __post_init__(self) -> None:
        v = int(self.value)
        object.__setattr__(self, "value", v)
        if not 0 <= v < self.modulus.q:
            raise ValueError(f"residue {v} outside [0, {self.modulus.q})")

    def __int__(self) -> int:
        return self.value


def lift_central(r: Residue) -> int:
    """The unique x in ``[-(q-1)/2, (q-1)/2]`` congruent to ``r``."""
    return r.modulus.lift(r.value)


def reduce(x: int, modulus: Modulus) -> Residue:
    return Residue(int(x) % modulus.q, modulus)


def _as_residue_array(values, modulus: Modulus) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == object:
        arr = np.array([int(v) for v in arr.ravel()], dtype=object).reshape(arr.shape)
        if arr.size and (min(arr.ravel()) < 0 or max(arr.ravel()) >= modulus.q):
            raise ValueError(f"entries must lie in [0, {modulus.q})")
        arr = arr.astype(np.int64)
    elif arr.dtype.kind in "iu":
        arr = arr.astype(np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= modulus.q):
            raise ValueError(f"entries must lie in [0, {modulus.q})")
    else:
        raise TypeError(f"residues must be integers, got dtype {arr.dtype}")
    arr.setflags(write=False)
    return arr


def add_mod(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    """Overflow-safe ``(a + b) mod q`` for residues in ``[0, q)``."""
    gap = q - b
    return np.where(a >= gap, a - gap, a + b)


def matmul_mod(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    """Exact ``a @ b mod q`` for int64 residue arrays (1-D or 2-D).

    Splits the inner dimension so every int64 partial sum stays below 2**63;
    falls back to Python integers when a single product cannot fit.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    inner = a.shape[-1]
    sq = (q - 1) * (q - 1)
    if sq >= _INT64_LIMIT:
        out = (a.astype(object) @ b.astype(object)) % q
        return np.asarray(out, dtype=object).astype(np.int64)
    block = max(1, (_INT64_LIMIT - 1) // max(sq, 1))
    if block >= inner:
        return np.mod(a @ b, q)
    acc = None
    for start in range(0, inner, block):
        part = np.mod(a[..., start:start + block] @ b[start:start + block], q)
        acc = part if acc is None else add_mod(acc, part, q)
    return acc


@dataclass(frozen=True, eq=False)
class ZqVector:
    entries: np.ndarray
    modulus: Modulus

    def __post_init__(self) -> None:
        arr = _as_residue_array(self.entries, self.modulus)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("a ZqVector needs a non-empty 1-D entry sequence")
        object.__setattr__(self, "entries", arr)

    @classmethod
    def from_signed(cls, values, modulus: Modulus) -> "ZqVector":
        return cls(modulus.reduce(np.asarray(values, dtype=np.int64)), modulus)

    @classmethod
    def zeros(cls, length: int, modulus: Modulus) -> "ZqVector":
        return cls(np.zeros(length, dtype=np.int64), modulus)

    def __len__(self) -> int:
        return self.entries.size

    def __getitem__(self, i: int) -> Residue:
        return Residue(int(self.entries[i]), self.modulus)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ZqVector):
            return NotImplemented
        return self.modulus == other.modulus and np.array_equal(self.entries, other.entries)

    def __hash__(self) -> int:
        return hash((self.modulus.q, self.entries.tobytes()))

    def _check(self, other: "ZqVector") -> None:
        if other.modulus != self.modulus:
            raise ValueError("moduli differ")
        if len(other) != len(self):
            raise ValueError(f"length mismatch: {len(self)} vs {len(other)}")

    def __add__(self, other: "ZqVector") -> "ZqVector":
        self._check(other)
        return ZqVector(add_mod(self.entries, other.entries, self.modulus.q), self.modulus)

    def __sub__(self, other: "ZqVector") -> "ZqVector":
        self._check(other)
        return ZqVector(np.mod(self.entries - other.entries, self.modulus.q), self.modulus)

    def __neg__(self) -> "ZqVector":
        return ZqVector(np.mod(-self.entries, self.modulus.q), self.modulus)

    def scale(self, c: int) -> "ZqVector":
        q = self.modulus.q
        factor = np.array([int(c) % q], dtype=np.int64)
        return ZqVector(matmul_mod(self.entries[:, None], factor, q), self.modulus)

    def lifted(self) -> np.ndarray:
        """Signed entries in the central representation."""
        return self.modulus.lift(self.entries)

    def norm_inf(self) -> int:
        return int(np.abs(self.lifted()).max())


@dataclass(frozen=True, eq=False)
class ZqMatrix:
    entries: np.ndarray
    modulus: Modulus

    def __post_init__(self) -> None:
        arr = _as_residue_array(self.entries, self.modulus)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("a ZqMatrix needs a non-empty 2-D entry grid")
        object.__setattr__(self, "entries", arr)

    @classmethod
    def from_signed(cls, values, modulus: Modulus) -> "ZqMatrix":
        return cls(modulus.reduce(np.asarray(values, dtype=np.int64)), modulus)

    @classmethod
    def identity(cls, n: int, modulus: Modulus) -> "ZqMatrix":
        return cls(np.eye(n, dtype=np.int64), modulus)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ZqMatrix):
            return NotImplemented
        return self.modulus == other.modulus and np.array_equal(self.entries, other.entries)

    def __hash__(self) -> int:
        return hash((self.modulus.q, self.entries.shape, self.entries.tobytes()))

    def __matmul__(self, other):
        if isinstance(other, ZqVector):
            return mat_vec_mul(self, other)
        if isinstance(other, ZqMatrix):
            if other.modulus != self.modulus:
                raise ValueError("moduli differ")
            if self.cols != other.rows:
                raise ValueError(f"shape mismatch: {self.entries.shape} @ {other.entries.shape}")
            return ZqMatrix(matmul_mod(self.entries, other.entries, self.modulus.q), self.modulus)
        return NotImplemented

    def __add__(self, other: "ZqMatrix") -> "ZqMatrix":
        if other.modulus != self.modulus or other.entries.shape != self.entries.shape:
            raise ValueError("matrix shape or modulus mismatch")
        return ZqMatrix(add_mod(self.entries, other.entries, self.modulus.q), self.modulus)

    def hstack(self, other: "ZqMatrix") -> "ZqMatrix":
        if other.modulus != self.modulus or other.rows != self.rows:
            raise ValueError("cannot concatenate: row count or modulus differs")
        return ZqMatrix(np.hstack([self.entries, other.entries]), self.modulus)

    def lifted(self) -> np.ndarray:
        return self.modulus.lift(self.entries)


def mat_vec_mul(a: ZqMatrix, x: ZqVector) -> ZqVector:
    if a.modulus != x.modulus:
        raise ValueError("moduli differ")
    if a.cols != len(x):
        raise ValueError(f"dimension mismatch: {a.cols} columns vs vector of length {len(x)}")
    return ZqVector(matmul_mod(a.entries, x.entries, a.modulus.q), a.modulus)


def inner_product(a: ZqVector, b: ZqVector) -> Residue:
    a._check(b)
    return Residue(int(matmul_mod(a.entries, b.entries, a.modulus.q)), a.modulus)


def sample_uniform_residues(shape, modulus: Modulus, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform residues by masked rejection on raw 64-bit words."""
    q = modulus.q
    size = int(np.prod(shape)) if shape != () else 1
    mask = np.uint64((1 << q.bit_length()) - 1)
    out = np.empty(size, dtype=np.int64)
    filled = 0
    while filled < size:
        need = size - filled
        # acceptance probability is > 1/2, so this usually finishes in one pass
        raw = rng.bit_generator.random_raw(need + need // 2 + 8) & mask
        good = raw[raw < np.uint64(q)][:need]
        out[filled:filled + good.size] = good.astype(np.int64)
        filled += good.size
    return out.reshape(shape)


def sample_uniform_vector(length: int, modulus: Modulus, rng: np.random.Generator) -> ZqVector:
    if length < 1:
        raise ValueError("length must be positive")
    return ZqVector(sample_uniform_residues((length,), modulus, rng), modulus)


def sample_uniform_matrix(rows: int, cols: int, modulus: Modulus, rng: np.random.Generator) -> ZqMatrix:
    if rows < 1 or cols < 1:
        raise ValueError("matrix dimensions must be positive")
    return ZqMatrix(sample_uniform_residues((rows, cols), modulus, rng), modulus)


# -- serialization -----------------------------------------------------------

def serialize_vector(v: ZqVector) -> bytes:
    """Residues only, 8-byte little-endian each (no header)."""
    return v.entries.astype("<u8").tobytes()


def _decode_residues(data: bytes, count: int, modulus: Modulus) -> np.ndarray:
    if len(data) < 8 * count:
        raise ValueError(f"truncated input: need {8 * count} bytes, got {len(data)}")
    if len(data) > 8 * count:
        raise ValueError(f"trailing bytes: expected {8 * count}, got {len(data)}")
    vals = np.frombuffer(data, dtype="<u8", count=count)
    if count and vals.max() >= np.uint64(modulus.q):
        raise ValueError(f"encoded residue out of range for q={modulus.q}")
    return vals.astype(np.int64)


def deserialize_vector(data: bytes, length: int, modulus: Modulus) -> ZqVector:
    return ZqVector(_decode_residues(bytes(data), length, modulus), modulus)


def dump_vector(v: ZqVector) -> bytes:
    """Self-describing vector: ``ZQV1 | q | length | residues``."""
    return VECTOR_MAGIC + struct.pack("<QQ", v.modulus.q, len(v)) + serialize_vector(v)


def load_vector(data: bytes) -> ZqVector:
    if data[:4] != VECTOR_MAGIC or len(data) < 20:
        raise ValueError("not a ZQV1 vector")
    q, length = struct.unpack_from("<QQ", data, 4)
    return deserialize_vector(data[20:], length, Modulus(q))


def dump_matrix(m: ZqMatrix) -> bytes:
    """Self-describing matrix: ``ZQM1 | q | rows | cols | row-major residues``."""
    header = MATRIX_MAGIC + struct.pack("<QQQ", m.modulus.q, m.rows, m.cols)
    return header + m.entries.astype("<u8").tobytes()


def load_matrix(data: bytes) -> ZqMatrix:
    if data[:4] != MATRIX_MAGIC or len(data) < 28:
        raise ValueError("not a ZQM1 matrix")
    q, rows, cols = struct.unpack_from("<QQQ", data, 4)
    modulus = Modulus(q)
    flat = _decode_residues(data[28:], rows * cols, modulus)
    return ZqMatrix(flat.reshape(rows, cols), modulus)

