"""Unstructured sparsification of LeNet-300-100 by geodesic walk to a p-sparse target."""
from geonet.experiments import LENET, SPARSIFY_CFG, dense_reference, run_sparsify
from geonet.io import save_checkpoint, write_trace_csv

from _common import parser, setup


def main():
    p = parser(__doc__)
    p.add_argument("--p", type=float, nargs="+", default=[90.0])
    p.add_argument("--ns", type=int, default=25)
    args = p.parse_args()
    ms = setup(args)
    ds = ms.load()
    arch, w, dense = dense_reference(ds, ms.train, LENET)
    print(f"dense reference: {dense:.4f}")
    for pct in args.p:
        r = run_sparsify(ds, arch, w, pct, SPARSIFY_CFG, args.ns)
        write_trace_csv(r["trace"], args.out / f"trace_p{pct:g}.csv")
        save_checkpoint(args.out / f"sparse_p{pct:g}.geow", arch, r["trace"].final)
        print(f"p={pct:g}: final {r['final_accuracy']:.4f}  path min {r['min_accuracy']:.4f}  "
              f"one-shot {r['one_shot_accuracy']:.4f}  steps {r['steps']}  ({r['seconds']:.0f}s)")


if __name__ == "__main__":
    main()
