"""Race the update rules on a parameter-starved helium target.

The setup deliberately gives the ansatz far more parameters (544) than
each step draws samples (96), so plain per-batch curvature estimates are
noisy and history averaging has something to earn. With --quick the run
shrinks to a smoke test; the full default takes a few minutes per
optimizer on a laptop core.

Usage:
    python scripts/compare_optimizers.py --out /tmp/vmc_compare
    python scripts/compare_optimizers.py --quick --optimizers wssr,sgd
"""

import argparse
import sys
import time

import numpy as np

from vmcsr.config import parse_config_text
from vmcsr.runner import run
from vmcsr.trace import smooth_trace

TEMPLATE = """\
[system]
preset = he

[wavefunction]
correlation_order = 2
radial_powers = 0, 1, 2, 3
ell_max = 0

[sampler]
walkers = 512
burn_in = 400
thinning = 2
samples_per_step = 96

[optimizer]
name = {name}

[wssr]
delta = {delta}
rank_init = 64

[run]
steps = {steps}
seed = {seed}
smooth_window = {window}
out_dir = {out}
"""


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="vmc_compare", help="output directory root")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--delta", type=float, default=0.95,
                        help="history weight for the averaged methods")
    parser.add_argument("--optimizers", default="wssr,rssr,spring,minsr,sgd",
                        help="comma-separated subset to race")
    parser.add_argument("--quick", action="store_true",
                        help="100 steps instead of the full schedule")
    args = parser.parse_args(argv)

    steps = 100 if args.quick else args.steps
    window = max(1, min(100, steps // 4))
    names = [n.strip() for n in args.optimizers.split(",") if n.strip()]

    print(f"helium, {steps} steps, seed {args.seed}, 544 params / 96 samples per step")
    print(f"{'optimizer':>10} {'smoothed E':>12} {'tail var':>10} "
          f"{'accept':>7} {'seconds':>8}")
    for name in names:
        text = TEMPLATE.format(name=name, delta=args.delta, steps=steps,
                               seed=args.seed, window=window,
                               out=f"{args.out}/{name}")
        t0 = time.perf_counter()
        result = run(parse_config_text(text))
        elapsed = time.perf_counter() - t0
        if result.aborted:
            print(f"{name:>10} {'aborted at step ' + str(result.steps_completed):>31}")
            continue
        energies = np.array([rec.raw_energy for rec in result.records])
        tail = energies[-max(10, steps // 10):]
        smoothed = smooth_trace(energies, window)[-1]
        accept = result.records[-1].acceptance_rate
        print(f"{name:>10} {smoothed:>12.5f} {float(np.var(tail)):>10.2e} "
              f"{accept:>7.3f} {elapsed:>8.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
