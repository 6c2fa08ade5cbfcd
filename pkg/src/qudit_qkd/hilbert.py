"""Qudit states in the slit basis and the built-in 16-dimensional MUB pair.

States are stored as immutable complex numpy vectors indexed by slit
``l = 0 .. D-1``. Basis states of a :class:`MubFamily` are the rows of its
integer matrices, each row scaled to unit length (``1/sqrt(D)`` for the
+1/-1 matrices of the built-in family).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

BASIS_LABELS = ("alpha", "alpha_prime")

NORM_TOL = 1e-12


class DegenerateStateError(ValueError):
    """Raised when a phase mask has no open slit."""


class DimensionMismatchError(ValueError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    """Unit vector of ``dim`` complex amplitudes."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(np.asarray(self.amplitudes, dtype=complex).ravel())
        if amps.size == 0:
            raise ValueError("state needs at least one amplitude")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (|psi|^2 = {norm!r})")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def __len__(self):
        return self.dim


@dataclass(frozen=True, eq=False)
class PhaseMask:
    """Per-slit phases (radians) and open/closed flags, as programmed on an SLM."""

    phases: np.ndarray
    open_slits: np.ndarray | None = None

    def __post_init__(self):
        phases = _frozen(np.asarray(self.phases, dtype=float).ravel())
        if self.open_slits is None:
            flags = np.ones(phases.size, dtype=bool)
        else:
            flags = np.asarray(self.open_slits, dtype=bool).ravel()
        if flags.size != phases.size:
            raise DimensionMismatchError(
                f"{phases.size} phases but {flags.size} slit flags"
            )
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "open_slits", _frozen(flags))

    @property
    def dim(self) -> int:
        return self.phases.size

    @classmethod
    def from_signs(cls, signs: Sequence[int]) -> "PhaseMask":
        """Map a row of +1/-1 entries to phases 0/pi."""
        signs = np.asarray(signs)
        if not np.all(np.isin(signs, (-1, 1))):
            raise ValueError("sign rows may only contain +1 and -1")
        return cls(np.where(signs < 0, np.pi, 0.0))

    def shifted(self, offset: float) -> "PhaseMask":
        return PhaseMask(self.phases + offset, self.open_slits)

    def combine(self, other: "PhaseMask") -> "PhaseMask":
        """Phases of two masks in series (additive); slits open only if open in both."""
        _check_dims(self.dim, other.dim)
        return PhaseMask(self.phases + other.phases, self.open_slits & other.open_slits)


def _check_dims(a: int, b: int) -> None:
    if a != b:
        raise DimensionMismatchError(f"dimension mismatch: {a} != {b}")


def make_slit_state(mask: PhaseMask) -> StateVector:
    """Equal-weight superposition over the open slits with the mask's phases."""
    n_open = int(mask.open_slits.sum())
    if n_open == 0:
        raise DegenerateStateError("all slits are closed")
    amps = np.where(mask.open_slits, np.exp(1j * mask.phases), 0.0) / math.sqrt(n_open)
    return StateVector(amps)


def inner_product(a: StateVector, b: StateVector) -> complex:
    """<a|b> with the bra conjugated."""
    _check_dims(a.dim, b.dim)
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def detection_probability_ideal(alice: StateVector, bob: StateVector) -> float:
    """Probability |<bob|alice>|^2 that Bob's projection on his state succeeds."""
    p = abs(inner_product(bob, alice)) ** 2
    return min(max(p, 0.0), 1.0)


# -- integer grids ---------------------------------------------------------


def parse_integer_grid(text: str) -> np.ndarray:
    """Parse whitespace-separated rows of integers; blank lines and ``#`` comments skipped."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([int(tok) for tok in line.split()])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if not rows:
        raise ValueError("empty grid")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"row {i} has {len(row)} entries, expected {width}")
    return np.array(rows, dtype=np.int64)


def format_integer_grid(matrix) -> str:
    matrix = np.asarray(matrix, dtype=np.int64)
    width = max(len(str(v)) for v in matrix.ravel())
    return "".join(" ".join(f"{v:>{width}d}" for v in row) + "\n" for row in matrix)


# -- MUB families ----------------------------------------------------------


def _row_norms(m: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", m, m)


@dataclass(frozen=True, eq=False)
class MubFamily:
    """Two bases given as square integer matrices whose rows are the basis states.

    Each row is normalized by its own length, so the built-in family (entries
    +1/-1) carries the usual ``1/sqrt(D)`` factor while a computational basis
    can be written as an identity matrix. Zero entries are closed slits.
    """

    integer_form: tuple[np.ndarray, np.ndarray]
    labels: tuple[str, str] = BASIS_LABELS
    bases: tuple[tuple[StateVector, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        mats = tuple(_frozen(np.asarray(m, dtype=np.int64)) for m in self.integer_form)
        if len(mats) != 2:
            raise ValueError("a family holds exactly two bases")
        dim = mats[0].shape[0]
        for m in mats:
            if m.shape != (dim, dim):
                raise ValueError(f"basis matrix has shape {m.shape}, expected ({dim}, {dim})")
            if np.any(_row_norms(m) == 0):
                raise ValueError("basis matrix has an all-zero row")
        object.__setattr__(self, "integer_form", mats)
        bases = tuple(
            tuple(StateVector(row / math.sqrt(int(row @ row))) for row in m) for m in mats
        )
        object.__setattr__(self, "bases", bases)

    @property
    def dim(self) -> int:
        return self.integer_form[0].shape[0]

    def state(self, basis: int, k: int) -> StateVector:
        return self.bases[basis][k]

    def mask(self, basis: int, k: int) -> PhaseMask:
        """Phase mask for a basis state: +1 -> 0, -1 -> pi, 0 -> closed slit."""
        row = self.integer_form[basis][k]
        if not np.all(np.isin(row, (-1, 0, 1))):
            raise ValueError("only rows with entries in {-1, 0, +1} map to phase masks")
        return PhaseMask(np.where(row < 0, np.pi, 0.0), row != 0)

    def amplitude_table(self) -> np.ndarray:
        """(2, D, D) complex array of normalized basis-state amplitudes."""
        return np.stack([np.stack([s.amplitudes for s in basis]) for basis in self.bases])


def builtin_mubs_16() -> MubFamily:
    """The two 16-dimensional bases that need only 0/pi phase modulation."""
    data = resources.files("qudit_qkd") / "data"
    mats = tuple(
        parse_integer_grid((data / name).read_text())
        for name in ("mub16_alpha.txt", "mub16_alpha_prime.txt")
    )
    return MubFamily(mats)


def qubit_mubs() -> MubFamily:
    """Computational and diagonal qubit bases (test family, D = 2)."""
    return MubFamily((np.eye(2, dtype=np.int64), np.array([[1, 1], [1, -1]])))


def family_for_dim(dim: int) -> MubFamily:
    if dim == 16:
        return builtin_mubs_16()
    if dim == 2:
        return qubit_mubs()
    raise ValueError(f"no built-in MUB family for D = {dim} (supported: 2, 16)")


@dataclass
class PairCheck:
    basis_a: str
    k_a: int
    basis_b: str
    k_b: int
    dot: int
    passed: bool


@dataclass
class MubReport:
    dim: int
    orthonormal: tuple[bool, bool]
    unbiased: bool
    n_cross_pairs: int
    failures: list[PairCheck]
    worst_deviation: float

    @property
    def passed(self) -> bool:
        return all(self.orthonormal) and self.unbiased

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = f"{status} 2 bases, {self.n_cross_pairs} cross pairs (D = {self.dim})"
        if not self.passed:
            first = self.failures[0]
            line += (
                f"; {len(self.failures)} failing pairs, worst |overlap|^2 deviation "
                f"{self.worst_deviation:.6g}, first: {first.basis_a}[{first.k_a}] vs "
                f"{first.basis_b}[{first.k_b}]"
            )
        return line


def verify_mub(family: MubFamily) -> MubReport:
    """Exact integer check of orthonormality within and unbiasedness across bases.

    For rows ``r, s`` with squared lengths ``n_r, n_s`` the normalized overlap is
    ``(r.s)**2 / (n_r n_s)``, so the conditions are checked as integer
    identities: ``r.s == 0`` for distinct rows of one basis, and
    ``D * (r.s)**2 == n_r * n_s`` across the two bases.
    """
    d = family.dim
    # python ints: no overflow, no rounding
    mats = [[[int(v) for v in row] for row in m] for m in family.integer_form]
    norms = [[sum(v * v for v in row) for row in m] for m in mats]

    def dot(r, s):
        return sum(x * y for x, y in zip(r, s))

    failures: list[PairCheck] = []
    worst = 0.0
    ortho = []
    for label, m, n in zip(family.labels, mats, norms):
        ok = True
        for i, j in itertools.combinations(range(d), 2):
            v = dot(m[i], m[j])
            if v != 0:
                ok = False
                worst = max(worst, v * v / (n[i] * n[j]))
                failures.append(PairCheck(label, i, label, j, v, False))
        ortho.append(ok)
    unbiased = True
    a, b = mats
    for i, j in itertools.product(range(d), repeat=2):
        v = dot(a[i], b[j])
        if d * v * v != norms[0][i] * norms[1][j]:
            unbiased = False
            worst = max(worst, abs(v * v / (norms[0][i] * norms[1][j]) - 1 / d))
            failures.append(PairCheck(family.labels[0], i, family.labels[1], j, v, False))
    return MubReport(d, (ortho[0], ortho[1]), unbiased, d * d, failures, worst)
