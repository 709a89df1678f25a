"""Per-client traffic of one round broken down the way the analytic
communication formulas count it, next to the formula values.

Byte conventions: 8 bytes per element, frame headers excluded, labels and
control traffic (predictions, loss broadcasts) reported separately because the
formulas do not model them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..costs import CommParams, comm_cost_main, comm_cost_proxy, comm_cost_total
from ..protocol import Network

ACTIVATION_CATEGORIES = ("smashed", "cut_gradient")


@dataclass
class ClientTraffic:
    client: int
    n_samples: int
    lower_model: int = 0
    upper_model: int = 0
    as_main: int = 0
    as_proxy: dict[int, int] = field(default_factory=dict)
    labels: int = 0
    control: int = 0

    @property
    def main_role(self) -> int:
        """Bytes the client moves because it is the main client at some point."""
        return self.lower_model + self.upper_model + self.as_main

    @property
    def total(self) -> int:
        return self.main_role + sum(self.as_proxy.values())


def round_traffic(net: Network, rnd: int, clients: dict[int, int]) -> dict[int, ClientTraffic]:
    """``clients`` maps client id to shard size."""
    out = {c: ClientTraffic(c, n) for c, n in clients.items()}
    for rec in net.records:
        if rec.round != rnd or rec.local:
            continue
        for c in (rec.sender, rec.receiver):
            if c not in out:
                continue
            t = out[c]
            t.labels += rec.categories.get("labels", 0)
            t.control += rec.categories.get("control", 0)
            model = rec.categories.get("model", 0)
            if rec.kind == "LOWER_ENSEMBLE" or (rec.kind == "CLUSTER_UPLOAD" and rec.phase == "upload/lower"):
                t.lower_model += model
            elif rec.kind in ("UPPER_PORTION", "CLUSTER_UPLOAD"):
                t.upper_model += model
            act = sum(rec.categories.get(k, 0) for k in ACTIVATION_CATEGORIES)
            if act and rec.phase.startswith("main:"):
                main = int(rec.phase.split(":", 1)[1])
                if main == c:
                    t.as_main += act
                else:
                    t.as_proxy[main] = t.as_proxy.get(main, 0) + act
    return out


def analytic_params(S: int, K: int, n_samples: int, epochs: int, smashed_per_sample: int, lower_params: int,
                    total_params: int) -> CommParams:
    """Formula inputs in bytes with ``p / K`` replaced by ``epochs * n_samples``.

    ``smashed_per_sample`` is the per-sub-model activation element count at
    the cut, so ``Q / S`` equals it times 8.
    """
    return CommParams(S=S, K=K, p=float(epochs * n_samples * K), Q=8.0 * smashed_per_sample * S,
                      beta=lower_params / total_params, w_size=8.0 * total_params)


def comm_report(trainer, rnd: int) -> list[dict]:
    """One row per client: measured role bytes against the main/proxy/total formulas."""
    cfg = trainer.cfg
    S = cfg.split_factor
    sizes = {c: len(d) for c, d in trainer.clients.items()}
    traffic = round_traffic(trainer.net, rnd, sizes)
    ens = trainer.ensemble
    total_params = ens.n_params()
    lower_params = sum(ens.lower(k).n_params() for k in range(S))
    per_sample = trainer.arch.activation_elements(ens.cut_layer)
    rows = []
    for c, t in sorted(traffic.items()):
        row = asdict(t)
        row["as_proxy"] = {str(k): v for k, v in t.as_proxy.items()}
        row["measured_main"] = t.main_role
        row["measured_total"] = t.total
        if S >= 2:
            own = analytic_params(S, cfg.n_clients, t.n_samples, cfg.local_epochs, per_sample, lower_params,
                                  total_params)
            row["eq_main"] = comm_cost_main(own)
            row["eq_total"] = comm_cost_total(own)
            proxy_pred, proxy_meas = {}, {}
            for m, v in t.as_proxy.items():
                other = analytic_params(S, cfg.n_clients, sizes[m], cfg.local_epochs, per_sample, lower_params,
                                        total_params)
                proxy_pred[str(m)] = comm_cost_proxy(other)
                proxy_meas[str(m)] = v
            row["eq_proxy"] = proxy_pred
            row["measured_proxy"] = proxy_meas
        rows.append(row)
    return rows

