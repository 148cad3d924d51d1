"""Sequential permuted-MNIST tasks on a 784-100-10 net, merged by geodesic walks."""
from dataclasses import replace

from geonet.experiments import CONTINUAL_CFG, CONTINUAL_TASK_DROP, run_continual
from geonet.io import save_checkpoint, write_table_csv, write_trace_csv
from geonet.nn import ArchSpec

from _common import parser, setup


def main():
    p = parser(__doc__)
    p.add_argument("--tasks", type=int, default=2)
    p.add_argument("--beta", type=float, default=CONTINUAL_CFG.beta)
    p.add_argument("--metric-batch", type=int, default=CONTINUAL_CFG.metric_batch)
    p.add_argument("--max-steps", type=int, default=CONTINUAL_CFG.max_steps)
    p.add_argument("--max-task-drop", type=float, default=CONTINUAL_TASK_DROP,
                   help="new-task training-accuracy drop that ends each walk (negative = off)")
    args = p.parse_args()
    ms = setup(args)
    cfg = replace(CONTINUAL_CFG, beta=args.beta, metric_batch=args.metric_batch,
                  max_steps=args.max_steps)
    drop = args.max_task_drop if args.max_task_drop >= 0 else None
    r = run_continual(ms.load(), args.tasks, cfg=cfg, max_task_drop=drop)
    k = args.tasks
    for i, tr in enumerate(r["result"].traces, start=2):
        write_trace_csv(tr, args.out / f"trace_stage{i}.csv")
    header = ["stage"] + [f"acc_task_{j}" for j in range(1, k + 1)]
    write_table_csv(args.out / "stage_accuracies.csv", header,
                    [[i + 1, *a] for i, a in enumerate(r["stage_accuracies"])])
    save_checkpoint(args.out / "final.geow", ArchSpec.parse("784-100-10"), r["result"].w_final)
    print("single-task:", " ".join(f"{a:.4f}" for a in r["single_task"]))
    print("endpoint:   ", " ".join(f"{a:.4f}" for a in r["final_accuracies"]))
    print(f"endpoint mean {r['final_mean']:.4f}  ceiling {r['ceiling']:.4f}  "
          f"ratio {r['final_mean'] / r['ceiling']:.3f}")
    if "linear_best_mean" in r:
        print(f"best linear-path mean {r['linear_best_mean']:.4f}")
    print("stops:", r["stop_reasons"], "steps:", r["steps"])


if __name__ == "__main__":
    main()
