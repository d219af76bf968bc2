"""Bandwidth saved by the event trigger.

An agent only broadcasts when its state has drifted more than delta since
its last transmission, so neighbors reuse cached packets during quiet
stretches. Sweeping delta shows the accuracy/bandwidth trade: message
counts drop sharply while the error stays within the theoretical
steady-state bound, and per-agent broadcasts respect the 1 + ceil(V/delta)
budget, where V is the agent's accumulated state variation.

Run with:  python3 demos/03_event_trigger_bandwidth.py
"""

import numpy as np

from dsinkhorn.config import build_instance, build_topology_from_spec, run_config_from_dict
from dsinkhorn.experiments import centralized_oracle, run_decentralized
from dsinkhorn.protocol import CommsConfig


def main():
    cfg = run_config_from_dict({})  # 4x4 grid, d=64 mixture problem
    instance = build_instance(cfg)
    topology = build_topology_from_spec(cfg.network)
    oracle = centralized_oracle(instance)

    print(f"problem: d={instance.support_size}, N={instance.num_agents}, "
          f"epsilon={instance.epsilon}, 4x4 grid")
    print()
    print(f"{'delta':>8} {'messages':>9} {'saved':>6} {'L1 error':>10} "
          f"{'bias bound':>11} {'budget ok':>9}")

    baseline = None
    for delta in (0.0, 1e-4, 1e-3, 1e-2):
        comms = CommsConfig(delta=delta, bits=None, tau_inner=1e-4,
                            tau_outer=1e-6, inner_step_cap=200, outer_iter_cap=60)
        metrics, _ = run_decentralized(
            instance, topology, comms, seed=0, oracle=oracle,
            collect_residuals=False,
        )
        if baseline is None:
            baseline = metrics.messages_total
        saved = 1.0 - metrics.messages_total / baseline
        if delta > 0:
            budget = 1 + np.ceil(metrics.variation_per_agent / delta)
            budget_ok = bool(np.all(metrics.broadcasts_per_agent <= budget))
        else:
            budget_ok = "-"  # budget is defined only for a positive trigger
        print(f"{delta:>8} {metrics.messages_total:>9} {saved:>6.0%} "
              f"{metrics.l1_error_max:>10.2e} {metrics.bias_bound:>11.2e} "
              f"{budget_ok!s:>9}")

    print()
    print("delta=0 broadcasts every round; larger dead zones trade accuracy")
    print("for silence, and the error tracks the bound's (tau + delta + Dq)")
    print("scaling rather than collapsing to zero.")


if __name__ == "__main__":
    main()
