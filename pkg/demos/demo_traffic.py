"""Data-driven traffic on a four-lane road.

A velocity bank is drawn from a two-mode speed mixture, agents are seeded on
the lanes, and the simulation is compared with the bank through speed and
minimum-distance histograms.

    python3 demos/demo_traffic.py
"""

import numpy as np

from aads import TrafficConfig, eval_distributions, init_agents, simulate
from aads.pipeline import mixture_bank
from aads.traffic import frame_samples, histogram, l1_distance, straight_road


def main():
    rng = np.random.default_rng(11)
    bank = mixture_bank({"car": [[0.6, 8.0, 1.0], [0.4, 14.0, 1.5]]}, 3000, rng)
    lanes = straight_road(length=600.0, n_lanes=4)
    cfg = TrafficConfig(seed=11)
    agents = init_agents(lanes, {"car": 60}, cfg, bank)
    frames = simulate(agents, bank, lanes, 200, cfg)

    speed, dist = eval_distributions(frames)
    ref_speed = histogram(np.linalg.norm(bank.velocities["car"], axis=1), len(speed.probs), speed.edges[-1])
    print(f"agents          : {len(frames[0])}")
    print(f"frames          : {len(frames)}")
    print(f"mean speed      : {np.average(0.5 * (speed.edges[1:] + speed.edges[:-1]), weights=speed.probs):.2f} m/s")
    print(f"speed L1 to bank: {l1_distance(speed, ref_speed):.3f}")
    _, gaps = frame_samples(frames)
    p5, p50 = np.percentile(gaps, [5, 50])
    print(f"min distance    : 5th pct {p5:.2f} m, median {p50:.2f} m over {dist.n_samples} samples")


if __name__ == "__main__":
    main()
