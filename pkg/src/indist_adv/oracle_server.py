"""Run the synthetic scene oracle as a JSON-lines subprocess.

    python -m indist_adv.oracle_server --seed 0 --temperature 1.0
"""

import argparse

from .scene_space import SyntheticOracle, serve


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    args = p.parse_args(argv)
    serve(SyntheticOracle(args.seed, args.temperature))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
