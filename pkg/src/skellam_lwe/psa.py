"""Private stream aggregation over the randomized weak PRF ``<t, s> + e``.

Users hold keys ``s_1..s_n`` in Z_q^kappa and the aggregator holds
``s_0 = -(s_1 + ... + s_n)``.  At time point t user i sends
``c_i = <t, s_i> + e_i + x_i mod q`` with fresh ``e_i ~ Sk_{mu_user}``; the
aggregator recovers ``sum x_i + sum e_i`` as ``<t, s_0> + sum c_i`` lifted
to the central range.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .ring import (
    Modulus,
    Residue,
    ZqMatrix,
    ZqVector,
    add_mod,
    inner_product,
    matmul_mod,
    sample_uniform_residues,
)
from .samplers import SkellamParams, sample_skellam
from .streams import derive_rng, worker_count

CIPHERTEXT_MAGIC = b"PSA1"
KEYS_FORMAT = "psa-keys-v1"


@dataclass(frozen=True)
class PsaPublicParams:
    kappa: int
    modulus: Modulus
    n: int
    lam: int
    mu_user: float
    m: int
    time_points: tuple

    def __post_init__(self) -> None:
        if len(self.time_points) != self.lam:
            raise ValueError(f"expected {self.lam} time points, got {len(self.time_points)}")
        if any(len(t) != self.kappa for t in self.time_points):
            raise ValueError("every time point must have length kappa")
        if len(set(self.time_points)) != self.lam:
            raise ValueError("time points must be pairwise distinct")

    @property
    def time_matrix(self) -> np.ndarray:
        """All time points stacked as a lam x kappa residue array."""
        return np.stack([t.entries for t in self.time_points])

    def noise(self) -> SkellamParams:
        return SkellamParams(self.mu_user)


@dataclass(frozen=True)
class PsaKeys:
    """``keys[0]`` is the aggregator key, ``keys[i]`` the key of user i."""

    keys: tuple

    def __post_init__(self) -> None:
        if len(self.keys) < 2:
            raise ValueError("need an aggregator key and at least one user key")
        total = self.keys[0]
        for k in self.keys[1:]:
            total = total + k
        if np.any(total.entries):
            raise ValueError("keys do not sum to zero mod q")

    @property
    def aggregator(self) -> ZqVector:
        return self.keys[0]

    @property
    def n(self) -> int:
        return len(self.keys) - 1

    def user(self, i: int) -> ZqVector:
        if not 1 <= i <= self.n:
            raise IndexError(f"user index {i} outside [1, {self.n}]")
        return self.keys[i]

    def user_matrix(self) -> np.ndarray:
        return np.stack([k.entries for k in self.keys[1:]])


@dataclass(frozen=True)
class Ciphertext:
    c: int
    user_index: int
    time_index: int

    def to_bytes(self) -> bytes:
        return CIPHERTEXT_MAGIC + struct.pack("<IIQ", self.user_index, self.time_index, self.c)

    @classmethod
    def from_bytes(cls, data: bytes, modulus: Optional[Modulus] = None) -> "Ciphertext":
        if len(data) != 20 or data[:4] != CIPHERTEXT_MAGIC:
            raise ValueError("not a PSA1 ciphertext")
        user, time, c = struct.unpack_from("<IIQ", data, 4)
        if modulus is not None and c >= modulus.q:
            raise ValueError(f"ciphertext residue {c} out of range for q={modulus.q}")
        return cls(c, user, time)


def setup(kappa: int, n: int, modulus: Modulus, lam: int, mu_user: float,
          rng: np.random.Generator, *, m: int) -> tuple[PsaPublicParams, PsaKeys]:
    """Draw user keys, the zero-sum aggregator key and ``lam`` distinct time points."""
    if kappa < 1 or n < 1 or lam < 1 or m < 0:
        raise ValueError("kappa, n and lam must be positive and m non-negative")
    q = modulus.q
    user_keys = sample_uniform_residues((n, kappa), modulus, rng)
    s0 = np.mod(-matmul_mod(np.ones(n, dtype=np.int64), user_keys, q), q)
    keys = PsaKeys(tuple(ZqVector(k, modulus) for k in np.vstack([s0, user_keys])))

    points: list[ZqVector] = []
    seen: set[bytes] = set()
    while len(points) < lam:
        t = sample_uniform_residues((kappa,), modulus, rng)
        if t.tobytes() in seen:
            continue
        seen.add(t.tobytes())
        points.append(ZqVector(t, modulus))
    pp = PsaPublicParams(kappa, modulus, n, lam, float(mu_user), int(m), tuple(points))
    return pp, keys


def weak_prf(s: ZqVector, t: ZqVector, mu_user: float, rng: np.random.Generator,
             *, zero_noise: bool = False) -> Residue:
    if len(s) != len(t):
        raise ValueError(f"dimension mismatch: key {len(s)} vs time point {len(t)}")
    e = 0 if zero_noise else sample_skellam(SkellamParams(mu_user), rng)
    base = inner_product(t, s)
    return Residue((base.value + e) % s.modulus.q, s.modulus)


def encrypt_recorded(pp: PsaPublicParams, key: ZqVector, user_index: int, time_index: int,
                     x: int, rng: np.random.Generator, *, zero_noise: bool = False) -> tuple[Ciphertext, int]:
    """Encrypt and also return the noise that went into the ciphertext."""
    if not 0 <= time_index < pp.lam:
        raise IndexError(f"time index {time_index} outside [0, {pp.lam})")
    if not 1 <= user_index <= pp.n:
        raise IndexError(f"user index {user_index} outside [1, {pp.n}]")
    if abs(int(x)) > pp.m:
        raise ValueError(f"|x| = {abs(int(x))} exceeds the per-user bound m = {pp.m}")
    e = 0 if zero_noise else sample_skellam(pp.noise(), rng)
    base = inner_product(pp.time_points[time_index], key).value
    c = (base + e + int(x)) % pp.modulus.q
    return Ciphertext(c, user_index, time_index), e


def encrypt(pp: PsaPublicParams, key: ZqVector, user_index: int, time_index: int,
            x: int, rng: np.random.Generator, *, zero_noise: bool = False) -> Ciphertext:
    return encrypt_recorded(pp, key, user_index, time_index, x, rng, zero_noise=zero_noise)[0]


def aggregate_decrypt(pp: PsaPublicParams, s0: ZqVector, time_index: int,
                      ciphers: Sequence[Ciphertext]) -> int:
    """Noisy sum for one time point, lifted to the central range."""
    if not 0 <= time_index < pp.lam:
        raise IndexError(f"time index {time_index} outside [0, {pp.lam})")
    users = sorted(c.user_index for c in ciphers)
    if users != list(range(1, pp.n + 1)):
        raise ValueError("need exactly one ciphertext from each user 1..n")
    if any(c.time_index != time_index for c in ciphers):
        raise ValueError(f"ciphertext from a different time point than {time_index}")
    q = pp.modulus.q
    if any(not 0 <= c.c < q for c in ciphers):
        raise ValueError("ciphertext residue out of range")
    total = inner_product(pp.time_points[time_index], s0).value
    for c in ciphers:
        total = (total + c.c) % q
    return pp.modulus.lift(total)


@dataclass
class PsaClient:
    """One user's encryptor; refuses to encrypt twice under the same time point."""

    pp: PsaPublicParams
    key: ZqVector
    user_index: int
    used: set = field(default_factory=set)

    def encrypt(self, time_index: int, x: int, rng: np.random.Generator,
                *, zero_noise: bool = False) -> Ciphertext:
        if time_index in self.used:
            raise ValueError(f"user {self.user_index} already encrypted at time index {time_index}")
        ct = encrypt(self.pp, self.key, self.user_index, time_index, x, rng, zero_noise=zero_noise)
        self.used.add(time_index)
        return ct


# -- batched rounds ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RoundsResult:
    data: np.ndarray         # lam x n plaintexts
    noise: np.ndarray        # lam x n Skellam noises
    ciphertexts: np.ndarray  # lam x n residues
    noisy_sums: np.ndarray   # decrypted, centrally lifted

    @property
    def true_sums(self) -> np.ndarray:
        return self.data.sum(axis=1)

    @property
    def errors(self) -> np.ndarray:
        return self.noisy_sums - self.true_sums


def _draw_round(pp: PsaPublicParams, seed: int, j: int, data_row, zero_noise: bool):
    rng = derive_rng(seed, "time", j)
    if data_row is None:
        x = rng.integers(-pp.m, pp.m + 1, size=pp.n, dtype=np.int64)
    else:
        x = np.asarray(data_row, dtype=np.int64)
    if zero_noise:
        e = np.zeros(pp.n, dtype=np.int64)
    else:
        e = sample_skellam(pp.noise(), rng, pp.n)
    return x, e


def _run_chunk(pp, keys_t, s0, seed, indices, data, zero_noise):
    q = pp.modulus.q
    xs, es = [], []
    for j in indices:
        x, e = _draw_round(pp, seed, j, None if data is None else data[j], zero_noise)
        xs.append(x)
        es.append(e)
    x = np.array(xs)
    e = np.array(es)
    t = pp.time_matrix[indices]
    masks = matmul_mod(t, keys_t, q)                       # <t_j, s_i>
    cipher = add_mod(masks, pp.modulus.reduce(x + e), q)
    agg = matmul_mod(t, s0, q)                             # <t_j, s_0>
    total = add_mod(agg, matmul_mod(cipher, np.ones(pp.n, dtype=np.int64), q), q)
    return x, e, cipher, pp.modulus.lift(total)


def run_rounds(pp: PsaPublicParams, keys: PsaKeys, seed: int, *,
               data: Optional[np.ndarray] = None, zero_noise: bool = False,
               chunk: int = 2048) -> RoundsResult:
    """Encrypt and aggregate every time point in one vectorized pass.

    Time step j draws its user data (unless ``data`` is given) and then the n
    user noises, in user order, from ``derive_rng(seed, "time", j)``.  Steps
    are independent, so chunks run on up to ``PSA_THREADS`` threads with
    identical results.
    """
    if data is not None:
        data = np.asarray(data, dtype=np.int64)
        if data.shape != (pp.lam, pp.n):
            raise ValueError(f"data must have shape {(pp.lam, pp.n)}, got {data.shape}")
        if np.abs(data).max(initial=0) > pp.m:
            raise ValueError(f"data exceeds the per-user bound m = {pp.m}")
    if len(keys.keys) != pp.n + 1 or len(keys.aggregator) != pp.kappa:
        raise ValueError("keys do not match the public parameters")
    keys_t = keys.user_matrix().T
    s0 = keys.aggregator.entries
    blocks = [np.arange(a, min(a + chunk, pp.lam)) for a in range(0, pp.lam, chunk)]
    workers = min(worker_count(), len(blocks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda idx: _run_chunk(pp, keys_t, s0, seed, idx, data, zero_noise), blocks))
    else:
        parts = [_run_chunk(pp, keys_t, s0, seed, idx, data, zero_noise) for idx in blocks]
    x, e, c, sums = (np.concatenate(col) for col in zip(*parts))
    return RoundsResult(x, e, c, sums)


# -- key files ---------------------------------------------------------------

def keys_to_json(pp: PsaPublicParams, keys: PsaKeys) -> str:
    doc = {
        "format": KEYS_FORMAT,
        "q": pp.modulus.q,
        "kappa": pp.kappa,
        "n": pp.n,
        "lambda": pp.lam,
        "m": pp.m,
        "mu_user": pp.mu_user,
        "keys": [[int(v) for v in k.entries] for k in keys.keys],
        "time_points": [[int(v) for v in t.entries] for t in pp.time_points],
    }
    return json.dumps(doc, indent=1) + "\n"


def keys_from_json(text: str) -> tuple[PsaPublicParams, PsaKeys]:
    doc = json.loads(text)
    if doc.get("format") != KEYS_FORMAT:
        raise ValueError("not a psa-keys-v1 document")
    modulus = Modulus(doc["q"])
    kappa, n = int(doc["kappa"]), int(doc["n"])
    vectors = [ZqVector(np.array(k, dtype=object), modulus) for k in doc["keys"]]
    if len(vectors) != n + 1 or any(len(v) != kappa for v in vectors):
        raise ValueError("key array does not match n and kappa")
    points = tuple(ZqVector(np.array(t, dtype=object), modulus) for t in doc["time_points"])
    pp = PsaPublicParams(kappa, modulus, n, int(doc["lambda"]), float(doc["mu_user"]),
                         int(doc["m"]), points)
    return pp, PsaKeys(tuple(vectors))


def ciphertexts_to_bytes(ciphers: Iterable[Ciphertext]) -> bytes:
    return b"".join(c.to_bytes() for c in ciphers)
