"""Multi-stage weighted L2 objective and its analytic gradient.

All terms are plain (unnormalized) sums of squares. The heatmap term has no
weight map; depth and displacement terms use Wd and Wt, the global pose term
uses Wp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncodedMaps

STAGE_FAMILIES = ("H", "D", "X", "Y")


@dataclass(eq=False)
class StagePredictions:
    stages: list[dict[str, np.ndarray]]
    P: np.ndarray

    def __post_init__(self):
        if len(self.stages) < 1:
            raise ValueError("need at least one stage")

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def last(self) -> dict[str, np.ndarray]:
        return self.stages[-1]

    def copy(self) -> "StagePredictions":
        return StagePredictions([{k: v.copy() for k, v in s.items()} for s in self.stages], self.P.copy())


@dataclass(frozen=True)
class LossBreakdown:
    l_h: float
    l_d: float
    l_t: float
    l_p: float

    @property
    def total(self) -> float:
        return self.l_h + self.l_d + self.l_t + self.l_p

    def to_dict(self) -> dict:
        return {"l_h": self.l_h, "l_d": self.l_d, "l_t": self.l_t, "l_p": self.l_p, "total": self.total}


def _check(pred: StagePredictions, gt: EncodedMaps) -> None:
    targets = gt.tensors()
    for s, stage in enumerate(pred.stages):
        for name in STAGE_FAMILIES:
            if name not in stage:
                raise ValueError(f"stage {s} is missing map {name}")
            if stage[name].shape != targets[name].shape:
                raise ValueError(
                    f"shape mismatch in stage {s} map {name}: {stage[name].shape} vs {targets[name].shape}"
                )
    if pred.P.shape != gt.glob.P.shape:
        raise ValueError(f"shape mismatch in map P: {pred.P.shape} vs {gt.glob.P.shape}")


def total_loss(pred: StagePredictions, gt: EncodedMaps) -> LossBreakdown:
    _check(pred, gt)
    g = gt.parts
    l_h = l_d = l_t = 0.0
    for stage in pred.stages:
        l_h += float(np.sum((stage["H"] - g.H) ** 2))
        l_d += float(np.sum(g.Wd * (stage["D"] - g.D) ** 2))
        l_t += float(np.sum(g.Wt * (stage["X"] - g.X) ** 2) + np.sum(g.Wt * (stage["Y"] - g.Y) ** 2))
    l_p = float(np.sum(gt.glob.Wp * (pred.P - gt.glob.P) ** 2))
    return LossBreakdown(l_h, l_d, l_t, l_p)


def loss_gradients(pred: StagePredictions, gt: EncodedMaps) -> StagePredictions:
    """d(total)/d(pred), shaped like ``pred``."""
    _check(pred, gt)
    g = gt.parts
    stages = [
        {
            "H": 2.0 * (s["H"] - g.H),
            "D": 2.0 * g.Wd * (s["D"] - g.D),
            "X": 2.0 * g.Wt * (s["X"] - g.X),
            "Y": 2.0 * g.Wt * (s["Y"] - g.Y),
        }
        for s in pred.stages
    ]
    return StagePredictions(stages, 2.0 * gt.glob.Wp * (pred.P - gt.glob.P))


def _entries(pred: StagePredictions):
    for s, stage in enumerate(pred.stages):
        for name in STAGE_FAMILIES:
            yield (s, name), stage[name]
    yield (None, "P"), pred.P


def finite_difference_check(
    pred: StagePredictions, gt: EncodedMaps, h: float = 1e-4, floor: float = 1e-6
) -> float:
    """Max relative error of the analytic gradient against central differences.

    Relative error is |a - n| / max(|a|, |n|, floor), checked on every entry.
    """
    analytic = loss_gradients(pred, gt)
    ana = dict(_entries(analytic))
    work = pred.copy()
    worst = 0.0
    for key, arr in _entries(work):
        a = ana[key]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = total_loss(work, gt).total
            flat[i] = old - h
            down = total_loss(work, gt).total
            flat[i] = old
            num = (up - down) / (2.0 * h)
            ref = a.reshape(-1)[i]
            err = abs(ref - num) / max(abs(ref), abs(num), floor)
            worst = max(worst, err)
    return worst


def random_problem(seed: int, max_k: int = 4, max_side: int = 8, n_stages: int = 2):
    """A small random (prediction, ground truth) pair with realistic weight maps."""
    from .encoder import BOX_ATTRS, OBJ, PART_ATTRS, GlobalPoseMap, PartMaps

    rng = np.random.Generator(np.random.Philox(seed))
    k = int(rng.integers(1, max_k + 1))
    gh, gw = (int(v) for v in rng.integers(1, max_side + 1, size=2))
    a = int(rng.integers(1, 3))
    c = BOX_ATTRS + PART_ATTRS * k
    shape = (k, gh, gw)
    Wp = rng.integers(0, 2, size=(a, c, gh // 2 + 1, gw // 2 + 1)).astype(np.float64)
    Wp[:, OBJ] = np.where(rng.random(Wp[:, OBJ].shape) < 0.5, 0.9, 0.1)
    gt = EncodedMaps(
        PartMaps(
            H=rng.random((k + 1, gh, gw)),
            D=rng.uniform(0.5, 5.0, shape),
            X=rng.uniform(-2.0, 2.0, shape),
            Y=rng.uniform(-2.0, 2.0, shape),
            Wd=np.where(rng.random(shape) < 0.3, 0.9, 0.1),
            Wt=(rng.random(shape) < 0.4).astype(np.float64),
        ),
        GlobalPoseMap(rng.normal(size=Wp.shape), Wp),
    )
    t = gt.tensors()
    stages = [{n: t[n] + rng.normal(scale=0.5, size=t[n].shape) for n in STAGE_FAMILIES} for _ in range(n_stages)]
    return StagePredictions(stages, t["P"] + rng.normal(scale=0.5, size=t["P"].shape)), gt
