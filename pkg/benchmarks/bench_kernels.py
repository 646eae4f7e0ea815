"""Compiled vs pure-numpy network kernel.

Times the row-wise forward pass on batch shapes the re-ranker produces
(t_eval x condition columns) and one full candidate scoring call per backend.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from diffrerank import kernels
from diffrerank.classifier import CandidateSet
from diffrerank.denoiser import NetworkDenoiser
from diffrerank.net import build_inputs, init_params
from diffrerank.rerank import ClassifierConfig, score_candidates
from diffrerank.schedule import Condition, make_linear_schedule

SHAPES = [
    # (d, h, rows): rows = t_eval * condition columns
    (16, 64, 30 * 4),
    (64, 256, 30 * 10),
    (64, 256, 1),
]


def random_net(d, h, num_classes=5, seed=0):
    p = init_params(d, h, 32, 16, num_classes, seed=seed)
    r = np.random.default_rng(seed)
    return p.replace(w_out=r.uniform(-0.1, 0.1, p.w_out.shape).astype(np.float32))


def best_of(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if kernels._compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    print(f"{'case':<28}{'compiled':>12}{'python':>12}{'speedup':>10}{'max |diff|':>12}")
    for d, h, rows in SHAPES:
        p = random_net(d, h)
        r = np.random.default_rng(1)
        x = r.standard_normal((rows, d)).astype(np.float32)
        ts = r.integers(1, 1001, size=rows)
        conds = [Condition.positive(int(c)) for c in r.integers(p.num_classes, size=rows)]
        z = build_inputs(p, x, ts, conds)
        fast = best_of(lambda: kernels.mlp_forward_rows(p, z, backend="compiled"), args.repeat)
        slow = best_of(lambda: kernels.mlp_forward_rows(p, z, backend="python"), args.repeat)
        diff = np.abs(kernels.mlp_forward_rows(p, z, backend="compiled")
                      - kernels.mlp_forward_rows(p, z, backend="python")).max()
        label = f"forward d={d} h={h} rows={rows}"
        print(f"{label:<28}{fast * 1e3:>10.3f}ms{slow * 1e3:>10.3f}ms{slow / fast:>9.1f}x{diff:>12.1e}")

    schedule = make_linear_schedule()
    p = random_net(16, 64, num_classes=5)
    model = NetworkDenoiser(p, schedule)
    cands = CandidateSet((0, 1, 2, 3, 4), (0.3, 0.2, 0.2, 0.2, 0.1), 0.3)
    x = np.zeros(16, np.float32)
    cfg = ClassifierConfig(t_eval=30, k=5)
    timings = {}
    for backend in ("compiled", "python"):
        kernels.BACKEND = backend
        timings[backend] = best_of(
            lambda: score_candidates(x, cands, model, schedule, cfg, np.random.default_rng(0)), args.repeat
        )
    label = "score_candidates K=5 T=30"
    c, py = timings["compiled"], timings["python"]
    print(f"{label:<28}{c * 1e3:>10.3f}ms{py * 1e3:>10.3f}ms{py / c:>9.1f}x{'':>12}")


if __name__ == "__main__":
    main()
