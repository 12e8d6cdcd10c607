"""Rebuild an operator's access trace from its public outputs alone.

Two inputs that differ in one record, run under coupled noise, leave the same
trace digest; a naive filter does not.

    python3 demos/trace_replay.py
"""
from oblivdp.bench.verify import OPERATORS, verify_do_structure
from oblivdp.dp import PrivacyParams


def main(trials=10):
    for op in OPERATORS:
        print(verify_do_structure(op, trials=trials, params=PrivacyParams(1.0, 1e-3)))


if __name__ == "__main__":
    main()
