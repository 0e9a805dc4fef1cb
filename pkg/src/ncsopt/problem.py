"""Problem definition and config ingestion.

A config is a JSON or YAML document with the sections ``plant``, ``cost``,
``r_chain``, ``d_chain``, ``init`` and optionally ``run``; matrices are
row-major lists of rows. In ``init`` only ``pre_history`` may be omitted
(zero packets).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .delay_model import DelayChain
from .dynamics import ExtendedModel, PlantModel
from .errors import BoundsError, CostMatrixError, FormatError, ShapeError
from .layout import PacketLayout

SYM_TOL = 1e-12
PSD_FLOOR = -1e-10
PD_FLOOR = 1e-10


def _check_weight(name, W, size, floor, strict):
    W = np.atleast_2d(np.array(W, dtype=float))
    if W.shape != (size, size):
        raise ShapeError(f"{name} has shape {W.shape}, expected {(size, size)}")
    if not np.all(np.isfinite(W)):
        raise CostMatrixError(name, "non-finite entries")
    asym = float(np.max(np.abs(W - W.T))) if W.size else 0.0
    if asym > SYM_TOL:
        raise CostMatrixError(name, f"not symmetric (max asymmetry {asym:.3e})")
    if W.size:
        lam = float(np.linalg.eigvalsh(W).min())
        if lam < floor:
            kind = "positive definite" if strict else "positive semidefinite"
            raise CostMatrixError(name, f"must be {kind}; smallest eigenvalue {lam:.6g}",
                                  eigenvalue=lam)
    return W


@dataclass(frozen=True, eq=False)
class CostSpec:
    Q: np.ndarray
    Q_bar: np.ndarray
    R: np.ndarray
    k0: int
    N: int

    def validate(self, n: int, m: int) -> "CostSpec":
        if self.k0 > self.N:
            raise BoundsError(f"need k0 <= N, got k0={self.k0}, N={self.N}")
        return CostSpec(_check_weight("Q", self.Q, n, PSD_FLOOR, False),
                        _check_weight("Q_bar", self.Q_bar, n, PSD_FLOOR, False),
                        _check_weight("R", self.R, m, PD_FLOOR, True),
                        int(self.k0), int(self.N))


@dataclass(frozen=True, eq=False)
class InitSpec:
    """Initial information of the controller.

    ``x0`` is the newest plant state the controller holds at ``k0``, sampled at
    time ``k0 - r0``. ``d_init`` is the actuator age realized at
    ``k0 - 1 - r0``. ``pre_history`` lists the packets sent at
    ``k0 - H .. k0 - 1`` (oldest first), ``H = d_hi + r_hi``.
    """

    x0: np.ndarray
    r0: int
    d_init: int
    pre_history: np.ndarray


@dataclass(frozen=True)
class RunSpec:
    episodes: int = 1000
    seed: int = 0


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    plant: PlantModel
    cost: CostSpec
    r_chain: DelayChain
    d_chain: DelayChain
    init: InitSpec = None
    run: RunSpec = field(default_factory=RunSpec)

    def __post_init__(self):
        object.__setattr__(self, "cost", self.cost.validate(self.plant.n, self.plant.m))
        if self.init is None:
            object.__setattr__(self, "init", self.default_init())
        else:
            object.__setattr__(self, "init", self._check_init(self.init))

    @cached_property
    def layout(self) -> PacketLayout:
        return PacketLayout(self.plant.m, self.d_chain.lo, self.d_chain.hi,
                            self.r_chain.lo, self.r_chain.hi)

    @cached_property
    def model(self) -> ExtendedModel:
        return ExtendedModel(self.plant, self.layout)

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def m(self) -> int:
        return self.plant.m

    def default_init(self) -> InitSpec:
        lay = self.layout
        return InitSpec(np.ones(self.n), self.r_chain.lo, self.d_chain.lo,
                        np.zeros((lay.horizon, lay.m_tilde)))

    def _check_init(self, init: InitSpec) -> InitSpec:
        lay = self.layout
        x0 = np.array(init.x0, dtype=float).reshape(-1)
        if x0.shape != (self.n,):
            raise ShapeError(f"init.x0 has {x0.size} entries, expected {self.n}")
        if not self.r_chain.lo <= init.r0 <= self.r_chain.hi:
            raise BoundsError(f"init.r0={init.r0} outside [{self.r_chain.lo}, {self.r_chain.hi}]")
        if not self.d_chain.lo <= init.d_init <= self.d_chain.hi:
            raise BoundsError(f"init.d_init={init.d_init} outside "
                              f"[{self.d_chain.lo}, {self.d_chain.hi}]")
        if init.pre_history is None:
            pre = np.zeros((lay.horizon, lay.m_tilde))
        else:
            pre = np.array(init.pre_history, dtype=float).reshape(-1, lay.m_tilde) \
                if np.size(init.pre_history) else np.zeros((0, lay.m_tilde))
            if pre.shape != (lay.horizon, lay.m_tilde):
                raise ShapeError(f"init.pre_history must hold {lay.horizon} packets of width "
                                 f"{lay.m_tilde}, got shape {pre.shape}")
        return InitSpec(x0, int(init.r0), int(init.d_init), pre)

    def with_init(self, **changes) -> "ProblemSpec":
        fields = dict(x0=self.init.x0, r0=self.init.r0, d_init=self.init.d_init,
                      pre_history=self.init.pre_history)
        fields.update(changes)
        return ProblemSpec(self.plant, self.cost, self.r_chain, self.d_chain,
                           InitSpec(**fields), self.run)

    def initial_x_hat(self) -> np.ndarray:
        """Extended state at ``k0`` assembled from ``x0`` and the pre-history."""
        lay = self.layout
        pre = self.init.pre_history
        parts = [self.init.x0]
        for p in range(1, lay.horizon + 1):
            parts.append(pre[lay.horizon - p][:lay.m_bar[p - 1]])
        return np.concatenate(parts)

    def to_dict(self) -> dict:
        return {
            "plant": {"A": self.plant.A.tolist(), "B": self.plant.B.tolist(),
                      "n": self.n, "m": self.m},
            "cost": {"Q": self.cost.Q.tolist(), "Q_bar": self.cost.Q_bar.tolist(),
                     "R": self.cost.R.tolist(), "k0": self.cost.k0, "N": self.cost.N},
            "r_chain": self.r_chain.to_dict(),
            "d_chain": self.d_chain.to_dict(),
            "init": {"x0": self.init.x0.tolist(), "r0": self.init.r0,
                     "d_init": self.init.d_init,
                     "pre_history": self.init.pre_history.tolist()},
            "run": {"episodes": self.run.episodes, "seed": self.run.seed},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        try:
            plant_d, cost_d = data["plant"], data["cost"]
            plant = PlantModel(plant_d["A"], plant_d["B"])
            for key, actual in (("n", plant.n), ("m", plant.m)):
                if key in plant_d and int(plant_d[key]) != actual:
                    raise ShapeError(f"plant.{key}={plant_d[key]} disagrees with the matrices "
                                     f"({actual})")
            cost = CostSpec(cost_d["Q"], cost_d["Q_bar"], cost_d["R"],
                            int(cost_d["k0"]), int(cost_d["N"]))
            r_chain = DelayChain.from_dict(data["r_chain"])
            d_chain = DelayChain.from_dict(data["d_chain"])
            # the initial ages cannot be inferred, so the config must state them
            init_d = data["init"]
            init = InitSpec(init_d["x0"], int(init_d["r0"]), int(init_d["d_init"]),
                            init_d.get("pre_history"))
        except KeyError as exc:
            raise ShapeError(f"config is missing field {exc.args[0]!r}") from None
        run_d = data.get("run") or {}
        run = RunSpec(int(run_d.get("episodes", 1000)), int(run_d.get("seed", 0)))
        return cls(plant, cost, r_chain, d_chain, init, run)

    def spec_hash(self) -> str:
        """Digest of everything the gains depend on (not ``init`` or ``run``)."""
        payload = self.to_dict()
        payload.pop("init")
        payload.pop("run")
        payload["layout"] = [self.layout.m, self.layout.d_lo, self.layout.d_hi,
                             self.layout.r_lo, self.layout.r_hi]
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except Exception as exc:
        raise FormatError(f"{path}: cannot parse config: {exc}") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: config root must be a mapping")
    return data


def load_problem(path) -> ProblemSpec:
    return ProblemSpec.from_dict(load_config(path))
