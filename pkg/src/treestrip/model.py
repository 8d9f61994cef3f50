"""Problem instances: substitution matrices, vertical operators, disorder laws.

A tree of finite cone type is generated by an ``s x s`` substitution matrix
``S``; a vertex of label ``p`` has ``S[p, q]`` children of label ``q``.  The
tree-strip carries ``m`` orbitals per vertex, coupled by the free vertical
operator ``A`` and a random symmetric matrix ``V(x)`` drawn from a law ``nu``.

Labels are 0-based in code (``0 .. s-1``) and 1-based in user-facing text.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

__all__ = [
    "ModelError",
    "SubstitutionModel",
    "VerticalOperator",
    "DisorderModel",
    "TruncatedStrip",
    "AssumptionReport",
    "ProblemConfig",
    "check_assumptions",
    "build_truncated_strip",
    "sample_potential",
    "sample_potentials",
    "characteristic_function",
    "load_config",
    "DEFAULT_DOF_BUDGET",
]

DEFAULT_DOF_BUDGET = 2_000_000


class ModelError(ValueError):
    """Invalid problem instance or resource budget violation."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SubstitutionModel:
    """Substitution matrix ``S`` defining the forest of trees ``T^(1..s)``."""

    S: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.S)
        if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] == 0:
            raise ModelError(f"substitution matrix must be square and non-empty, got shape {S.shape}")
        if not np.all(np.isfinite(S)) or not np.all(S == np.round(S)):
            raise ModelError("substitution matrix entries must be integers")
        S = np.round(S).astype(np.int64)
        if np.any(S < 0):
            raise ModelError("substitution matrix entries must be non-negative")
        if np.any(S.sum(axis=1) == 0):
            # a label without children gives a finite tree, not a cone-type tree
            raise ModelError("every label needs at least one child (row sums must be positive)")
        object.__setattr__(self, "S", _readonly(S))

    @property
    def s(self) -> int:
        return self.S.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return self.S.sum(axis=1)

    def scaled(self, b: int) -> "SubstitutionModel":
        """The model ``b * S``."""
        if int(b) != b or b < 1:
            raise ModelError("scale factor must be a positive integer")
        return SubstitutionModel(self.S * int(b))

    def to_list(self) -> list[list[int]]:
        return self.S.tolist()


@dataclass(frozen=True)
class VerticalOperator:
    """Real symmetric ``m x m`` free vertical operator with its eigen-decomposition."""

    A: np.ndarray
    eigenvalues: np.ndarray = field(init=False)
    diagonalizer: np.ndarray = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ModelError(f"vertical operator must be square, got shape {A.shape}")
        scale = max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
        if np.max(np.abs(A - A.T)) > 1e-12 * scale:
            raise ModelError("vertical operator must be symmetric")
        A = 0.5 * (A + A.T)
        if np.count_nonzero(A - np.diag(np.diag(A))) == 0:
            # keep exact eigenvalues for diagonal input
            order = np.argsort(np.diag(A), kind="stable")
            evals = np.diag(A)[order].copy()
            O = np.eye(A.shape[0])[:, order]
        else:
            evals, O = np.linalg.eigh(A)
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "eigenvalues", _readonly(np.asarray(evals, dtype=float)))
        object.__setattr__(self, "diagonalizer", _readonly(np.asarray(O, dtype=float)))

    @classmethod
    def zero(cls, m: int = 1) -> "VerticalOperator":
        return cls(np.zeros((m, m)))

    @classmethod
    def diagonal(cls, values: Sequence[float]) -> "VerticalOperator":
        return cls(np.diag(np.asarray(values, dtype=float)))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.eigenvalues))) if self.m else 0.0


_DISORDER_KINDS = ("none", "diagonal-iid", "goe", "fixed-matrix-list")
_SITE_LAWS = ("uniform", "gaussian")


@dataclass(frozen=True)
class DisorderModel:
    """Law ``nu`` of the random symmetric matrices ``V(x)``.

    Parameters
    ----------
    kind : {"none", "diagonal-iid", "goe", "fixed-matrix-list"}
    m : int
        Matrix size.
    distribution : {"uniform", "gaussian"}
        Single-site law for ``diagonal-iid``.
    width : float
        Half-width of the uniform law, standard deviation of the Gaussian law,
        or the GOE off-diagonal standard deviation ``sigma``.
    matrices : sequence of ``m x m`` arrays
        Support of ``fixed-matrix-list`` (drawn uniformly).
    """

    kind: str = "none"
    m: int = 1
    distribution: str = "uniform"
    width: float = 1.0
    matrices: tuple = ()

    def __post_init__(self):
        if self.kind not in _DISORDER_KINDS:
            raise ModelError(f"unknown disorder kind {self.kind!r}; expected one of {_DISORDER_KINDS}")
        if self.m < 1:
            raise ModelError("disorder matrix size must be positive")
        if self.kind == "diagonal-iid" and self.distribution not in _SITE_LAWS:
            raise ModelError(f"unknown single-site law {self.distribution!r}")
        if self.kind in ("diagonal-iid", "goe") and not (self.width >= 0 and math.isfinite(self.width)):
            raise ModelError("disorder width must be a finite non-negative number")
        if self.kind == "fixed-matrix-list":
            mats = tuple(_readonly(np.array(M, dtype=float).reshape(self.m, self.m)) for M in self.matrices)
            if not mats:
                raise ModelError("fixed-matrix-list needs at least one matrix")
            for M in mats:
                if np.max(np.abs(M - M.T)) > 1e-12 * max(1.0, float(np.max(np.abs(M)))):
                    raise ModelError("fixed-matrix-list entries must be symmetric")
            object.__setattr__(self, "matrices", mats)

    @property
    def characteristic_function_available(self) -> bool:
        return True

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == "diagonal-iid":
            d.update(distribution=self.distribution, width=self.width)
        elif self.kind == "goe":
            d.update(sigma=self.width)
        elif self.kind == "fixed-matrix-list":
            d.update(matrices=[M.tolist() for M in self.matrices])
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None, m: int) -> "DisorderModel":
        if not d:
            return cls("none", m)
        kind = d.get("kind", "none")
        if kind == "diagonal-iid":
            dist = d.get("distribution", "uniform")
            width = d.get("width", d.get("half_width", d.get("std", 1.0)))
            return cls(kind, m, distribution=dist, width=float(width))
        if kind == "goe":
            return cls(kind, m, width=float(d.get("sigma", d.get("width", 1.0))))
        if kind == "fixed-matrix-list":
            return cls(kind, m, matrices=tuple(d.get("matrices", ())))
        return cls(kind, m)


@dataclass(frozen=True)
class TruncatedStrip:
    """Finite rooted subtree of ``T^(q)`` cut at ``depth`` (Dirichlet truncation).

    ``labels[i]``, ``parents[i]`` and ``depths[i]`` describe vertex ``i``;
    vertices are in breadth-first order with children grouped by ascending
    label, so the root is vertex 0 and ``parents[0] == -1``.
    """

    root_label: int
    depth: int
    m: int
    labels: np.ndarray
    parents: np.ndarray
    depths: np.ndarray

    @property
    def vertex_count(self) -> int:
        return len(self.labels)

    @property
    def dof_count(self) -> int:
        return self.m * self.vertex_count

    @property
    def vertices(self) -> list[tuple[int, int, int | None, int]]:
        return [
            (i, int(lab), None if par < 0 else int(par), int(d))
            for i, (lab, par, d) in enumerate(zip(self.labels, self.parents, self.depths))
        ]

    def depth_profile(self) -> list[int]:
        return np.bincount(self.depths, minlength=self.depth + 1).tolist()

    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.vertex_count)]
        for i, par in enumerate(self.parents):
            if par >= 0:
                out[par].append(i)
        return out


@dataclass(frozen=True)
class AssumptionReport:
    s1: bool
    s2: bool
    s3: bool
    s3prime: bool
    K: int
    operator_norm_S: float

    def violations(self, required: Sequence[str] = ("S1", "S2", "S3")) -> list[str]:
        flags = {"S1": self.s1, "S2": self.s2, "S3": self.s3, "S3PRIME": self.s3prime, "S3'": self.s3prime}
        out = []
        for name in required:
            key = name.strip().upper()
            if key not in flags:
                raise ModelError(f"unknown assumption {name!r}")
            if not flags[key]:
                out.append(name.strip())
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "s1": self.s1,
            "s2": self.s2,
            "s3": self.s3,
            "s3prime": self.s3prime,
            "K": self.K,
            "operator_norm_S": self.operator_norm_S,
        }


def _operator_norm(S: np.ndarray) -> float:
    S = np.asarray(S, dtype=float)
    return float(math.sqrt(max(np.linalg.eigvalsh(S.T @ S).max(), 0.0)))


def _irreducible(S: np.ndarray) -> bool:
    s = S.shape[0]
    step = (S > 0).astype(np.int64)
    power = step.copy()
    reach = step.copy()
    for _ in range(1, s):
        power = ((power @ step) > 0).astype(np.int64)
        reach |= power
    return bool(np.all(reach > 0))


def check_assumptions(model: SubstitutionModel | np.ndarray | Sequence) -> AssumptionReport:
    """Evaluate the structural assumptions on ``S``.

    ``s1``: every row sum is at least 2.  ``s2``: ``S`` is irreducible.
    ``s3``: ``||S||_2 < K**2`` with ``K = min_q S[q, q]``.  ``s3prime``: ``K >= 1``.
    """
    if not isinstance(model, SubstitutionModel):
        model = SubstitutionModel(np.asarray(model))
    S = model.S
    K = int(np.min(np.diag(S)))
    norm = _operator_norm(S)
    return AssumptionReport(
        s1=bool(np.all(model.row_sums >= 2)),
        s2=_irreducible(S),
        s3=bool(norm < K * K),
        s3prime=bool(K >= 1),
        K=K,
        operator_norm_S=norm,
    )


def build_truncated_strip(
    model: SubstitutionModel,
    vertical: VerticalOperator | int,
    root_label: int,
    depth: int,
    dof_budget: int = DEFAULT_DOF_BUDGET,
) -> TruncatedStrip:
    """Breadth-first truncation of ``T^(root_label)`` at ``depth``.

    Raises
    ------
    ModelError
        If ``depth < 0``, the label is out of range or the truncation would
        exceed ``dof_budget`` degrees of freedom.
    """
    m = vertical if isinstance(vertical, int) else vertical.m
    if depth < 0:
        raise ModelError("depth must be non-negative")
    if not 0 <= root_label < model.s:
        raise ModelError(f"root label {root_label} out of range for s={model.s}")
    # count first so a huge request fails before allocating
    counts = np.zeros(model.s, dtype=object)
    counts[root_label] = 1
    total = 1
    for _ in range(depth):
        counts = np.array([sum(int(counts[p]) * int(model.S[p, q]) for p in range(model.s)) for q in range(model.s)],
                          dtype=object)
        total += int(sum(counts))
        if total * m > dof_budget:
            raise ModelError(f"truncation needs more than {dof_budget} degrees of freedom (depth={depth})")

    labels = [root_label]
    parents = [-1]
    depths = [0]
    queue = deque([0])
    while queue:
        v = queue.popleft()
        if depths[v] == depth:
            continue
        for q in range(model.s):
            for _ in range(int(model.S[labels[v], q])):
                labels.append(q)
                parents.append(v)
                depths.append(depths[v] + 1)
                queue.append(len(labels) - 1)
    return TruncatedStrip(
        root_label=root_label,
        depth=depth,
        m=m,
        labels=_readonly(np.array(labels, dtype=np.int64)),
        parents=_readonly(np.array(parents, dtype=np.int64)),
        depths=_readonly(np.array(depths, dtype=np.int64)),
    )


def sample_potentials(disorder: DisorderModel, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` independent matrices from the disorder law, shape ``(size, m, m)``."""
    m = disorder.m
    out = np.zeros((size, m, m))
    if disorder.kind == "none" or size == 0:
        return out
    if disorder.kind == "diagonal-iid":
        w = disorder.width
        if disorder.distribution == "uniform":
            diag = rng.uniform(-w, w, size=(size, m))
        else:
            diag = rng.normal(0.0, w, size=(size, m))
        idx = np.arange(m)
        out[:, idx, idx] = diag
        return out
    if disorder.kind == "goe":
        sigma = disorder.width
        X = rng.normal(0.0, sigma, size=(size, m, m))
        # off-diagonal variance sigma^2, diagonal variance 2 sigma^2
        return (X + np.swapaxes(X, 1, 2)) / math.sqrt(2.0)
    choice = rng.integers(0, len(disorder.matrices), size=size)
    stack = np.stack(disorder.matrices)
    return stack[choice].copy()


def sample_potential(disorder: DisorderModel, rng: np.random.Generator) -> np.ndarray:
    """Draw one ``m x m`` real symmetric matrix from the disorder law."""
    return sample_potentials(disorder, rng, 1)[0]


def _site_characteristic(disorder: DisorderModel, t: np.ndarray) -> np.ndarray:
    # E exp(-i t v) for the symmetric single-site law
    w = disorder.width
    if disorder.distribution == "uniform":
        return np.sinc(np.asarray(t) * w / math.pi)
    return np.exp(-0.5 * (w * np.asarray(t)) ** 2)


def characteristic_function(disorder: DisorderModel, M: np.ndarray) -> complex:
    """``h(M) = E exp(-i Tr(M V))`` for a real symmetric ``M``."""
    M = np.asarray(M, dtype=float)
    if M.shape != (disorder.m, disorder.m):
        raise ModelError(f"argument must be {disorder.m}x{disorder.m}")
    if disorder.kind == "none":
        return 1.0 + 0.0j
    if disorder.kind == "diagonal-iid":
        return complex(np.prod(_site_characteristic(disorder, np.diag(M))))
    if disorder.kind == "goe":
        return complex(math.exp(-disorder.width ** 2 * float(np.sum(M * M))))
    vals = [np.exp(-1j * np.trace(M @ V)) for V in disorder.matrices]
    return complex(np.mean(vals))


@dataclass(frozen=True)
class ProblemConfig:
    """Everything a model config document describes."""

    model: SubstitutionModel
    vertical: VerticalOperator
    disorder: DisorderModel
    lam: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "S": self.model.to_list(),
            "A": self.vertical.A.tolist(),
            "disorder": self.disorder.to_dict(),
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ProblemConfig":
        if not isinstance(doc, dict) or "S" not in doc:
            raise ModelError("model config must be a JSON object with an 'S' entry")
        S = doc["S"]
        if any(not isinstance(x, int) or isinstance(x, bool) for row in S for x in row):
            raise ModelError("entries of S must be JSON integers")
        model = SubstitutionModel(np.array(S))
        A = doc.get("A", [[0.0]])
        vertical = VerticalOperator(np.array(A, dtype=float))
        disorder = DisorderModel.from_dict(doc.get("disorder"), vertical.m)
        return cls(model, vertical, disorder, float(doc.get("lambda", 0.0)))


def load_config(path: str | Path) -> ProblemConfig:
    """Read a model config JSON document."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return ProblemConfig.from_dict(doc)
    except (TypeError, KeyError) as exc:
        raise ModelError(f"malformed model config: {exc}") from exc
