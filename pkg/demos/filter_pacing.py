"""Watch the paced filter: output grows with noisy match counts, never with real ones.

    python3 demos/filter_pacing.py
"""
import numpy as np

from oblivdp.bench.datagen import gen_bdb
from oblivdp.dp import PrivacyParams
from oblivdp.memory import CryptoMode, EnclaveEnv
from oblivdp.operators.common import col
from oblivdp.operators.filter import do_filter


def main():
    env = EnclaveEnv(crypto_mode=CryptoMode.AEAD, rng_seed=1)
    rankings = gen_bdb(env, "rankings", 20_000, seed=1)
    env.reset_observations()
    res = do_filter(env, rankings, col("pageRank") > 1000, PrivacyParams(1.0, 2.0 ** -30),
                    columns=["pageURL", "pageRank"], bound_mode="simulated")
    print(f"input rows {res.input_rows}, true matches {res.matches}, buffer bound s = {res.s}")
    print(f"released output size {res.output_rows} (fillers included), failures {res.log.failures}")
    print(f"block transfers {env.counters.transfers}, peak private bytes {env.peak_private}")
    print("\n   prefix   noisy count   output size")
    for c, y, size in list(zip(res.log.positions, res.y_tilde, res.log.sizes))[::10]:
        print(f"{c:>9} {y:>13.1f} {size:>13}")
    real = res.table.to_rows()
    print(f"\nfirst rows: {[(r['pageURL'].decode(), int(r['pageRank'])) for r in real[:3]]}")


if __name__ == "__main__":
    main()
