"""Ground-truth networks, stimulation designs, and noisy outcome simulation.

A ground-truth network is a binary adjacency matrix: entry ``(i, j)`` is 1
when input neuron ``j`` drives output neuron ``i``. A stimulation design is
an ordered list of index sets (the neurons driven on each test). Outcomes
follow the two-rate noise model: an output fires with probability
``1 - beta`` when at least one of its true inputs was stimulated and with
probability ``alpha`` otherwise.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ._rng import stream
from ._validation import check_stim_matrix

__all__ = [
    "NoiseSpec",
    "GroundTruthNetwork",
    "StimulationDesign",
    "TestRecord",
    "generate_network",
    "generate_bernoulli_design",
    "simulate_outcomes",
    "simulate_records",
    "save_network_csv",
    "load_network_csv",
    "save_design_csv",
    "load_design_csv",
    "save_bundle_json",
    "load_bundle_json",
]


@dataclass(frozen=True)
class NoiseSpec:
    """False-positive rate ``alpha`` and false-negative rate ``beta``.

    Both rates live in [0, 0.5), which guarantees the true-positive rate
    exceeds the false-positive rate and keeps every likelihood log finite
    after clipping. Zero rates are allowed for noiseless simulation.
    """

    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and 0.0 <= v < 0.5):
                raise ValueError(f"{name} must lie in [0, 0.5), got {v!r}")
        if not (1.0 - self.beta > self.alpha and 1.0 - self.alpha > self.beta):
            raise ValueError("noise rates must satisfy 1-beta > alpha and 1-alpha > beta")


@dataclass(frozen=True, eq=False)
class GroundTruthNetwork:
    """Binary adjacency with row-per-output orientation."""

    n: int
    adjacency: np.ndarray
    theta: float | None = None
    k: float | None = None
    allow_self: bool = False
    seed: int = 0

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.uint8)
        if adj.shape != (self.n, self.n):
            raise ValueError(f"adjacency must be {self.n}x{self.n}, got {adj.shape}")
        if adj.size and not np.isin(adj, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        object.__setattr__(self, "adjacency", adj)

    @property
    def expected_in_degree(self) -> float:
        """Mean incoming connections implied by the generator parameters."""
        if self.k is not None:
            return float(self.k)
        return float(self.n ** self.theta) if self.theta is not None else float("nan")

    def density(self) -> float:
        """Realized edge density over the cells the generator could fill."""
        cells = self.n * self.n if self.allow_self else self.n * (self.n - 1)
        return float(self.adjacency.sum()) / cells if cells else 0.0

    def edges(self) -> np.ndarray:
        """Edge list as an array of (out, in) pairs in row-major order."""
        out, inp = np.nonzero(self.adjacency)
        return np.column_stack([out, inp])


@dataclass(frozen=True, eq=False)
class StimulationDesign:
    """Ordered stimulation index sets plus cached sparse structure.

    The cached CSR-style arrays (`indptr`, `indices`) are shared by the
    solvers; `col_sum` / `row_sum` use a fixed reduction order so results
    are bitwise reproducible regardless of batching.
    """

    n: int
    tests: tuple = ()
    kind: str = "bernoulli"

    def __post_init__(self):
        norm = []
        for t, s in enumerate(self.tests):
            idx = np.asarray(s, dtype=np.int64).ravel()
            if idx.size == 0:
                raise ValueError(f"test {t} is empty")
            if np.unique(idx).size != idx.size:
                raise ValueError(f"test {t} has duplicate indices")
            if idx.min() < 0 or idx.max() >= self.n:
                raise ValueError(f"test {t} has out-of-range indices")
            norm.append(np.sort(idx))
        object.__setattr__(self, "tests", tuple(norm))

    @property
    def n_tests(self) -> int:
        return len(self.tests)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([len(t) for t in self.tests], dtype=np.int64)

    @cached_property
    def indptr(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @cached_property
    def indices(self) -> np.ndarray:
        if not self.tests:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(self.tests)

    @cached_property
    def _col_order(self) -> np.ndarray:
        return np.argsort(self.indices, kind="stable")

    @cached_property
    def _col_starts(self) -> np.ndarray:
        srt = self.indices[self._col_order]
        if srt.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([[0], np.flatnonzero(np.diff(srt)) + 1])

    @cached_property
    def _col_ids(self) -> np.ndarray:
        srt = self.indices[self._col_order]
        return srt[self._col_starts] if srt.size else np.zeros(0, dtype=np.int64)

    def row_sum(self, flat: np.ndarray) -> np.ndarray:
        """Sum flat per-(test, member) values within each test: (..., nnz) -> (..., T)."""
        if self.n_tests == 0:
            return np.zeros(flat.shape[:-1] + (0,))
        return np.add.reduceat(flat, self.indptr[:-1], axis=-1)

    def col_sum(self, flat: np.ndarray) -> np.ndarray:
        """Sum flat per-(test, member) values by neuron: (..., nnz) -> (..., n)."""
        out = np.zeros(flat.shape[:-1] + (self.n,))
        if self.indices.size:
            sums = np.add.reduceat(flat[..., self._col_order], self._col_starts, axis=-1)
            out[..., self._col_ids] = sums
        return out

    def expand(self, per_test: np.ndarray) -> np.ndarray:
        """Repeat per-test values over their members: (..., T) -> (..., nnz)."""
        return np.repeat(per_test, self.sizes, axis=-1)

    def head(self, n_tests: int) -> "StimulationDesign":
        """Design restricted to the first ``n_tests`` tests."""
        return StimulationDesign(self.n, self.tests[:n_tests], self.kind)

    def matrix(self) -> np.ndarray:
        """Dense (tests x neurons) 0/1 matrix."""
        mat = np.zeros((self.n_tests, self.n), dtype=np.int8)
        for t, s in enumerate(self.tests):
            mat[t, s] = 1
        return mat

    @classmethod
    def from_matrix(cls, X, kind: str = "custom") -> "StimulationDesign":
        arr = check_stim_matrix(X)
        tests = [np.flatnonzero(row) for row in arr]
        return cls(arr.shape[1], tuple(tests), kind)


@dataclass(frozen=True, eq=False)
class TestRecord:
    """One stimulation event and the per-output binary outcomes."""

    stim: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        out = np.asarray(self.outcomes, dtype=np.int8)
        if out.ndim != 1 or (out.size and not np.isin(out, (0, 1)).all()):
            raise ValueError("outcomes must be a 1-D 0/1 vector")
        object.__setattr__(self, "stim", np.sort(np.asarray(self.stim, dtype=np.int64)))
        object.__setattr__(self, "outcomes", out)


def generate_network(
    n: int,
    theta: float = 0.3,
    *,
    allow_self: bool = False,
    seed: int = 0,
    k_override: float | None = None,
) -> GroundTruthNetwork:
    """Draw an adjacency with i.i.d. Bernoulli(K/N) entries, K = N**theta.

    ``k_override`` replaces ``N**theta`` with an explicit expected in-degree
    (``k_override=0`` gives the empty network). Self-connections are zeroed
    unless ``allow_self``.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if k_override is not None:
        if not (0.0 <= k_override <= n):
            raise ValueError(f"k_override must lie in [0, n], got {k_override!r}")
        k = float(k_override)
    else:
        if not (0.0 < theta < 1.0):
            raise ValueError(f"theta must lie in (0, 1), got {theta!r}")
        k = float(n**theta)
    p = k / n
    rng = stream(seed, "network")
    adj = (rng.random((n, n)) < p).astype(np.uint8)
    if not allow_self:
        np.fill_diagonal(adj, 0)
    return GroundTruthNetwork(
        n=n,
        adjacency=adj,
        theta=None if k_override is not None else float(theta),
        k=k if k_override is not None else None,
        allow_self=allow_self,
        seed=seed,
    )


def generate_bernoulli_design(
    n: int, s_mean: float, t: int, *, seed: int = 0
) -> StimulationDesign:
    """Draw ``t`` tests; each neuron joins each test independently w.p. s_mean/n.

    Draws that select no neuron are redrawn (counter component 2 tracks the
    attempt), so every emitted test is nonempty.
    """
    if not (1.0 <= s_mean <= n):
        raise ValueError(f"s_mean must lie in [1, n], got {s_mean!r}")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    p = s_mean / n
    tests = []
    for ti in range(t):
        attempt = 0
        while True:
            rng = stream(seed, "design", ti, 0, attempt)
            mask = rng.random(n) < p
            if mask.any():
                break
            attempt += 1
        tests.append(np.flatnonzero(mask))
    return StimulationDesign(n, tuple(tests), "bernoulli")


def simulate_outcomes(
    net: GroundTruthNetwork,
    stim,
    noise: NoiseSpec,
    *,
    seed: int = 0,
    test_index: int = 0,
) -> np.ndarray:
    """Binary outcome for every output neuron after one stimulation.

    Output ``i`` is predicted active when any stimulated neuron drives it;
    the emitted bit is then flipped according to the noise rates. Each
    (seed, test_index) pair opens its own counter stream, so records can be
    simulated in any order.
    """
    stim = np.asarray(stim, dtype=np.int64).ravel()
    if stim.size == 0:
        raise ValueError("stimulation set is empty")
    if np.unique(stim).size != stim.size or stim.min() < 0 or stim.max() >= net.n:
        raise ValueError("stimulation set has invalid or duplicate indices")
    active = net.adjacency[:, stim].max(axis=1)
    u = stream(seed, "outcomes", test_index).random(net.n)
    fire_prob = np.where(active == 1, 1.0 - noise.beta, noise.alpha)
    return (u < fire_prob).astype(np.int8)


def simulate_records(
    net: GroundTruthNetwork, design: StimulationDesign, noise: NoiseSpec, *, seed: int = 0
) -> list[TestRecord]:
    """Simulate outcomes for a whole design, one counter stream per test."""
    return [
        TestRecord(stim, simulate_outcomes(net, stim, noise, seed=seed, test_index=t))
        for t, stim in enumerate(design.tests)
    ]


def outcome_matrix(records: list[TestRecord]) -> np.ndarray:
    """Stack record outcomes into a (tests x outputs) matrix."""
    return np.array([r.outcomes for r in records], dtype=np.int8)


# ---------------------------------------------------------------------------
# Serialization: plain CSV pair lists plus a JSON bundle with metadata.
# ---------------------------------------------------------------------------


def _write_csv(path, header: list[str], rows, meta: dict | None) -> None:
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def _read_csv(path) -> tuple[list[list[str]], dict]:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        header_seen = False
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
                continue
            if not line.strip():
                continue
            if not header_seen:
                header_seen = True
                continue
            rows.append(next(csv.reader([line])))
    return rows, meta


def save_network_csv(net: GroundTruthNetwork, path, *, meta: dict | None = None) -> None:
    """Write the adjacency as sparse ``out,in`` pairs, one edge per line."""
    _write_csv(path, ["out", "in"], net.edges().tolist(), meta)


def load_network_csv(path, n: int) -> np.ndarray:
    rows, _ = _read_csv(path)
    adj = np.zeros((n, n), dtype=np.uint8)
    for out, inp in rows:
        adj[int(out), int(inp)] = 1
    return adj


def save_design_csv(design: StimulationDesign, path, *, meta: dict | None = None) -> None:
    """Write the design as ``test_index,neuron_index`` pairs."""
    rows = [(t, int(j)) for t, s in enumerate(design.tests) for j in s]
    _write_csv(path, ["test_index", "neuron_index"], rows, meta)


def load_design_csv(path, n: int, kind: str = "bernoulli") -> StimulationDesign:
    rows, _ = _read_csv(path)
    by_test: dict[int, list[int]] = {}
    for t, j in rows:
        by_test.setdefault(int(t), []).append(int(j))
    tests = [np.array(by_test[t]) for t in sorted(by_test)]
    return StimulationDesign(n, tuple(tests), kind)


def save_bundle_json(
    path,
    *,
    net: GroundTruthNetwork | None = None,
    design: StimulationDesign | None = None,
    meta: dict | None = None,
) -> None:
    """JSON bundle holding metadata plus optional network/design payloads."""
    payload: dict = {"meta": dict(meta or {})}
    if net is not None:
        payload["network"] = {
            "n": net.n,
            "theta": net.theta,
            "k": net.k,
            "allow_self": net.allow_self,
            "seed": net.seed,
            "edges": net.edges().tolist(),
        }
    if design is not None:
        payload["design"] = {
            "n": design.n,
            "kind": design.kind,
            "tests": [t.tolist() for t in design.tests],
        }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_bundle_json(path) -> dict:
    payload = json.loads(Path(path).read_text())
    out: dict = {"meta": payload.get("meta", {})}
    if "network" in payload:
        spec = payload["network"]
        adj = np.zeros((spec["n"], spec["n"]), dtype=np.uint8)
        for out_i, in_j in spec["edges"]:
            adj[out_i, in_j] = 1
        out["network"] = GroundTruthNetwork(
            n=spec["n"],
            adjacency=adj,
            theta=spec.get("theta"),
            k=spec.get("k"),
            allow_self=spec.get("allow_self", False),
            seed=spec.get("seed", 0),
        )
    if "design" in payload:
        spec = payload["design"]
        out["design"] = StimulationDesign(
            spec["n"], tuple(np.array(t) for t in spec["tests"]), spec.get("kind", "bernoulli")
        )
    return out
