"""Quantized payloads: wire size vs accuracy.

Broadcast payloads are clipped to [s_min, s_max] and rounded to one of
2^bits uniform levels, so a packet carrying d entries costs d*ceil(bits/8)
bytes instead of 8d. The worst-case per-entry rounding error is
Dq = (s_max - s_min) / (2(2^bits - 1)), which enters the steady-state
error bound alongside the trigger threshold.

Run with:  python3 demos/04_quantization.py
"""

import numpy as np

from dsinkhorn.config import mixture_histograms
from dsinkhorn.experiments import centralized_oracle, run_decentralized
from dsinkhorn.netsim import build_topology
from dsinkhorn.otcore import ProblemInstance, grid_cost
from dsinkhorn.protocol import CommsConfig, packet_wire_size, quantize

D = 32
N_AGENTS = 9


def main():
    # the quantizer itself: coarse grids round harder
    rng = np.random.default_rng(0)
    x = rng.uniform(-5.0, 5.0, size=20_000)
    print("quantizer round-trip error on 20k samples in [-5, 5]:")
    print(f"{'bits':>5} {'levels':>7} {'Dq':>10} {'max |q - x|':>12}")
    for bits in (4, 8, 12, 16):
        comms = CommsConfig(bits=bits, s_min=-5.0, s_max=5.0)
        err = np.abs(quantize(x, comms) - x).max()
        print(f"{bits:>5} {2 ** bits:>7} {comms.delta_q:>10.2e} {err:>12.2e}")
    print()

    # end to end: accuracy and wire bytes as the payload width shrinks
    hists = mixture_histograms(D, N_AGENTS, density_seed=7)
    instance = ProblemInstance(
        cost=grid_cost(D), epsilon=0.1, ridge=1e-16, histograms=tuple(hists)
    )
    topology = build_topology("grid2d", rows=3, cols=3)
    oracle = centralized_oracle(instance)

    print(f"decentralized runs on a 3x3 grid, d={D}:")
    print(f"{'bits':>6} {'bytes/packet':>13} {'total KiB':>10} {'L1 error':>10}")
    for bits in (4, 8, 12, 16, None):
        comms = CommsConfig(delta=1e-3, bits=bits, tau_inner=1e-4,
                            tau_outer=1e-6, inner_step_cap=200, outer_iter_cap=60)
        metrics, _ = run_decentralized(
            instance, topology, comms, seed=0, oracle=oracle,
            collect_residuals=False,
        )
        label = bits if bits is not None else "float64"
        print(f"{label!s:>6} {packet_wire_size(D, bits):>13} "
              f"{metrics.bytes_total / 1024:>10.1f} {metrics.l1_error_max:>10.2e}")

    print()
    print("very coarse payloads dominate the error; by 12-16 bits the trigger")
    print("threshold takes over and extra precision buys nothing.")


if __name__ == "__main__":
    main()
