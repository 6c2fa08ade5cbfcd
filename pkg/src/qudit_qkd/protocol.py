"""BB84 session engine: random mask choices, pulse simulation and sifting."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .config import SessionConfig
from .hilbert import BASIS_LABELS, family_for_dim
from .photonics import ProjectionModel, simulate_pulses

CSV_COLUMNS = ("clock", "alice_basis", "alice_k", "bob_basis", "bob_k", "click")
CHUNK = 1 << 16


@dataclass(frozen=True)
class ChoiceRecord:
    clock: int
    basis: str
    state_index: int


@dataclass(eq=False)
class SessionLog:
    """Per-cycle choices of both parties and Bob's click record.

    Stored column-wise as integer arrays; basis 0 is ``alpha`` and 1 is
    ``alpha_prime``.
    """

    dim: int
    alice_basis: np.ndarray
    alice_k: np.ndarray
    bob_basis: np.ndarray
    bob_k: np.ndarray
    clicks: np.ndarray
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.clicks)
        cols = (self.alice_basis, self.alice_k, self.bob_basis, self.bob_k)
        if any(len(c) != n for c in cols):
            raise ValueError("session log columns differ in length")
        for name, k in (("alice_k", self.alice_k), ("bob_k", self.bob_k)):
            if n and (k.min() < 0 or k.max() >= self.dim):
                raise ValueError(f"{name} out of range for D = {self.dim}")

    @property
    def duration_cycles(self) -> int:
        return len(self.clicks)

    def _records(self, basis, k):
        return [
            ChoiceRecord(i, BASIS_LABELS[b], int(s)) for i, (b, s) in enumerate(zip(basis, k))
        ]

    @property
    def alice_choices(self) -> list[ChoiceRecord]:
        return self._records(self.alice_basis, self.alice_k)

    @property
    def bob_choices(self) -> list[ChoiceRecord]:
        return self._records(self.bob_basis, self.bob_k)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in zip(
            range(self.duration_cycles),
            self.alice_basis,
            self.alice_k,
            self.bob_basis,
            self.bob_k,
            self.clicks,
        ):
            clock, ab, ak, bb, bk, c = row
            writer.writerow((clock, BASIS_LABELS[ab], ak, BASIS_LABELS[bb], bk, int(c)))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, dim: int) -> "SessionLog":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        index = {label: i for i, label in enumerate(BASIS_LABELS)}
        rows = list(reader)
        cols = list(zip(*rows)) if rows else [()] * len(CSV_COLUMNS)
        clocks = [int(c) for c in cols[0]]
        if clocks != list(range(len(clocks))):
            raise ValueError("clock column must run 0..N-1 in order")
        return cls(
            dim,
            np.array([index[b] for b in cols[1]], dtype=np.int64),
            np.array(cols[2], dtype=np.int64),
            np.array([index[b] for b in cols[3]], dtype=np.int64),
            np.array(cols[4], dtype=np.int64),
            np.array([c == "1" for c in cols[5]], dtype=bool),
        )


def run_session(
    config: SessionConfig,
    alice_state: tuple[int, int] | None = None,
) -> SessionLog:
    """Simulate ``config.duration_cycles`` clock cycles.

    Alice, Bob and the channel (noise and click draws) use three separate
    generators seeded from ``config.seeds``. ``alice_state = (basis, k)``
    pins Alice to one state, for debugging the symbol statistics.
    """
    family = family_for_dim(config.dim)
    projection = ProjectionModel(family, config.model, config.optics)
    rng_alice = np.random.default_rng(config.seeds.alice)
    rng_bob = np.random.default_rng(config.seeds.bob)
    rng_channel = np.random.default_rng(config.seeds.channel)

    n, d = config.duration_cycles, config.dim
    cols = {name: np.empty(n, dtype=np.int64) for name in ("ab", "ak", "bb", "bk")}
    clicks = np.empty(n, dtype=bool)
    for start in range(0, n, CHUNK):
        stop = min(start + CHUNK, n)
        m = stop - start
        ab = rng_alice.integers(0, 2, m)
        ak = rng_alice.integers(0, d, m)
        if alice_state is not None:
            ab[:], ak[:] = alice_state
        bb = rng_bob.integers(0, 2, m)
        bk = rng_bob.integers(0, d, m)
        clicks[start:stop] = simulate_pulses(
            config.pulse, config.noise, projection, (ab, ak), (bb, bk), rng_channel
        )
        for name, arr in zip(("ab", "ak", "bb", "bk"), (ab, ak, bb, bk)):
            cols[name][start:stop] = arr
    return SessionLog(d, cols["ab"], cols["ak"], cols["bb"], cols["bk"], clicks, config.snapshot())


@dataclass
class SiftResult:
    dim: int
    raw_detections: int
    sifted_detections: int
    n_correct: int
    n_incorrect: int
    sifted_symbols: np.ndarray  # (n, 3): clock, k_alice, k_bob

    @property
    def qber(self) -> float | None:
        """N_i / (N_c + N_i), or ``None`` when nothing was sifted."""
        total = self.n_correct + self.n_incorrect
        return self.n_incorrect / total if total else None

    @property
    def incompatible_detections(self) -> int:
        return self.raw_detections - self.sifted_detections

    def counts(self) -> tuple:
        return (self.raw_detections, self.sifted_detections, self.n_correct, self.n_incorrect, self.qber)

    def summary(self) -> dict:
        return {
            "dim": self.dim,
            "raw_detections": self.raw_detections,
            "sifted_detections": self.sifted_detections,
            "incompatible_detections": self.incompatible_detections,
            "n_correct": self.n_correct,
            "n_incorrect": self.n_incorrect,
            "qber": self.qber,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def sift_result_from_symbols(dim: int, raw: int, symbols) -> SiftResult:
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1, 3)
    n_correct = int(np.count_nonzero(symbols[:, 1] == symbols[:, 2]))
    return SiftResult(dim, raw, len(symbols), n_correct, len(symbols) - n_correct, symbols)


def sift(log: SessionLog, watermark: int | None = None) -> SiftResult:
    """Basis reconciliation over the cycles with clock index below ``watermark``.

    Clicks with different bases count towards the raw detections only.
    """
    n = log.duration_cycles if watermark is None else min(watermark, log.duration_cycles)
    clicked = log.clicks[:n]
    keep = clicked & (log.alice_basis[:n] == log.bob_basis[:n])
    clocks = np.flatnonzero(keep)
    symbols = np.column_stack([clocks, log.alice_k[clocks], log.bob_k[clocks]])
    return sift_result_from_symbols(log.dim, int(clicked.sum()), symbols)


def symbol_counts(result: SiftResult, include_incorrect: bool = False) -> np.ndarray:
    """Histogram of detected symbols ``k`` over correct sifted detections.

    With ``include_incorrect`` every sifted detection counts, binned by the
    state Bob projected on.
    """
    sym = result.sifted_symbols
    if not include_incorrect:
        sym = sym[sym[:, 1] == sym[:, 2]]
    return np.bincount(sym[:, 2], minlength=result.dim)


def key_bits(result: SiftResult) -> np.ndarray:
    """Key bits from correct sifted detections, ``log2(D)`` big-endian bits per symbol."""
    n_bits = int(result.dim).bit_length() - 1
    if 1 << n_bits != result.dim:
        raise ValueError("key bit mapping needs D to be a power of two")
    sym = result.sifted_symbols
    k = sym[sym[:, 1] == sym[:, 2], 1]
    shifts = np.arange(n_bits - 1, -1, -1)
    return ((k[:, None] >> shifts) & 1).astype(np.uint8).ravel()
