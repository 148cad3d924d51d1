"""Shared argument handling for the experiment scripts."""
import argparse
import logging
from pathlib import Path

from geonet.experiments import MnistSetup


def parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--data", default=None, help="MNIST IDX directory (default $GEONET_DATA)")
    p.add_argument("--n-train", type=int, default=10_000)
    p.add_argument("--n-test", type=int, default=2_000)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def setup(args) -> MnistSetup:
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    args.out.mkdir(parents=True, exist_ok=True)
    return MnistSetup(path=args.data, n_train=args.n_train, n_test=args.n_test)
