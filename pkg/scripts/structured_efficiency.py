"""Hidden-unit removal: geodesic recovery vs iterative prune-finetune, with epoch accounting."""
from dataclasses import replace

from geonet.experiments import LENET, STRUCTURED_CFG, dense_reference, run_structured
from geonet.io import write_table_csv, write_trace_csv

from _common import parser, setup


def main():
    p = parser(__doc__)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--remove", type=int, default=150)
    p.add_argument("--beta", type=float, default=STRUCTURED_CFG.beta)
    p.add_argument("--ns", type=int, default=25)
    p.add_argument("--retrain-epochs", type=int, default=1)
    p.add_argument("--stages", type=int, default=None, help="prune stages (default one unit each)")
    args = p.parse_args()
    ms = setup(args)
    ds = ms.load()
    arch, w, dense = dense_reference(ds, ms.train, LENET)
    cfg = replace(STRUCTURED_CFG, beta=args.beta)
    r = run_structured(ds, arch, w, args.layer, args.remove, cfg, args.ns,
                       args.retrain_epochs, args.stages)
    write_trace_csv(r["trace"], args.out / "geodesic.csv")
    write_trace_csv(r["baseline"], args.out / "baseline.csv")
    keys = ("geo_accuracy", "baseline_accuracy", "one_shot_accuracy", "geo_data_epochs",
            "geo_compute_epochs", "baseline_epochs", "steps")
    write_table_csv(args.out / "summary.csv", ["key", "value"], [(k, r[k]) for k in keys])
    print(f"dense {dense:.4f}")
    for k in keys:
        print(f"{k:>20}: {r[k]}")


if __name__ == "__main__":
    main()
