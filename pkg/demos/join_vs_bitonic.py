"""Foreign-key join: DP-padded output against a worst-case padded bitonic join.

    python3 demos/join_vs_bitonic.py
"""
from oblivdp.baselines import bitonic_join
from oblivdp.bench.datagen import gen_bdb
from oblivdp.dp import PrivacyParams
from oblivdp.memory import CryptoMode, EnclaveEnv
from oblivdp.operators.join import do_join


def main(n=8192):
    env = EnclaveEnv(crypto_mode=CryptoMode.PLAINTEXT, rng_seed=5)
    pk = gen_bdb(env, "rankings", n // 4, seed=5)
    fk = gen_bdb(env, "uservisits", n - n // 4, seed=5, n_pages=n // 4)
    env.reset_observations()
    res = do_join(env, pk, fk, "pageURL", "destURL", PrivacyParams(), bound_mode="simulated")
    ours = env.counters.transfers
    env.reset_observations()
    base = bitonic_join(env, pk, fk, "pageURL", "destURL")
    print(f"{n} input rows, {res.filter.matches} joined, {res.dangling} dangling foreign keys")
    print(f"padded output: {res.table.row_count} rows here, {base.table.row_count} for the baseline")
    print(f"block transfers: {ours} (sort {res.sort_transfers}) vs {base.transfers}")


if __name__ == "__main__":
    main()
