"""Geodesic vs straight path between two trained modes and between a mode and its permutation."""
from dataclasses import replace

from geonet.experiments import MODES_CFG, run_modes
from geonet.io import write_trace_csv

from _common import parser, setup


def main():
    p = parser(__doc__)
    p.add_argument("--seeds", type=int, nargs=2, default=[1, 2])
    p.add_argument("--beta", type=float, default=MODES_CFG.beta)
    p.add_argument("--metric-batch", type=int, default=MODES_CFG.metric_batch)
    p.add_argument("--max-steps", type=int, default=MODES_CFG.max_steps)
    args = p.parse_args()
    ms = setup(args)
    ds = ms.load()
    cfg = replace(MODES_CFG, beta=args.beta, metric_batch=args.metric_batch, max_steps=args.max_steps)
    for name, permuted in (("seeds", False), ("permuted", True)):
        r = run_modes(ds, seeds=tuple(args.seeds), cfg=cfg, permuted=permuted)
        write_trace_csv(r["trace"], args.out / f"geodesic_{name}.csv")
        write_trace_csv(r["linear"], args.out / f"linear_{name}.csv")
        print(f"{name}: geodesic min {r['geo_min_with_stitch']:.4f}  linear min {r['linear_min']:.4f}  "
              f"endpoints {r['endpoint_accuracies'][0]:.4f}/{r['endpoint_accuracies'][1]:.4f}  "
              f"{r['stop_reason']} after {r['steps']} steps, gap {r['final_gap']:.3g}")


if __name__ == "__main__":
    main()
