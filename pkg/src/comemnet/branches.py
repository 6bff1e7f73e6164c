"""Online/Target parameter pair: AdamW on the online branch, EMA on the target."""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from .backbone import BackboneConfig, BackboneParams, ForecastBatch, forward
from .errors import DivergenceError
from .numeric import Tape, Var, adamw_step

PriorFn = Callable[[Tape, BackboneParams], Optional[Var]]


class DualBranchModel:
    def __init__(self, cfg: BackboneConfig, seed: int = 0, beta: float = 0.99, lr: float = 0.01,
                 weight_decay: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999)):
        self.online = BackboneParams(cfg, seed)
        self.target = self.online.copy()
        self.beta = beta
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas

    @property
    def cfg(self) -> BackboneConfig:
        return self.online.cfg

    def ensure_nodes(self, ids: Iterable[str]) -> list[str]:
        """Grow both branches; the target receives a copy of each new online row."""
        new = self.online.ensure_nodes(ids)
        if new:
            rows = self.online["node_embed"].value[[self.online.node_index[s] for s in new]]
            self.target.add_rows(new, rows)
        return new

    def online_step(self, batch: ForecastBatch, targets: np.ndarray,
                    prior: PriorFn | None = None) -> float:
        """One AdamW step on the subset MAE of ``batch``; returns the loss.

        ``targets`` is (B, N, t_f) in the same normalized units as the inputs.
        ``prior`` builds the temporal prior on the same tape so its gate
        matrices receive gradients.
        """
        tape = Tape()
        h_prior = prior(tape, self.online) if prior is not None else None
        pred = forward(tape, self.online, batch, h_prior)
        loss = tape.mae(pred, np.asarray(targets).reshape(pred.shape))
        value = float(loss.value[0, 0])
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss {value}")
        tape.backward(loss)
        for p in self.online.params().values():
            adamw_step(p, self.lr, self.betas, self.weight_decay)
        return value

    def ema_update(self) -> None:
        """target <- beta * target + (1 - beta) * online, for every table."""
        beta = self.beta
        keep = 1.0 - beta
        for name, po in self.online.params().items():
            pt = self.target[name]
            if pt.value.shape != po.value.shape:
                raise RuntimeError(f"branch shape mismatch on {name}: {pt.shape} vs {po.shape}")
            pt.value = beta * pt.value + keep * po.value
