"""Grouping more groups than fit in private memory.

The single-pass table aborts; the multi-pass operator sizes its passes from a
private distinct count and finishes.

    python3 demos/group_multipass.py
"""
from oblivdp.baselines import SinglePassAbort, single_pass_group
from oblivdp.bench.datagen import gen_bdb
from oblivdp.dp import PrivacyParams
from oblivdp.memory import CryptoMode, EnclaveEnv
from oblivdp.operators.group import GroupSpec, do_group_hash


def main():
    env = EnclaveEnv(crypto_mode=CryptoMode.PLAINTEXT, rng_seed=3)
    visits = gen_bdb(env, "uservisits", 30_000, seed=3, groups=9000)
    spec = GroupSpec([("sourceIP", 8)], [("SUM", "adRevenue")])
    try:
        single_pass_group(env, visits, spec, group_capacity=4000)
    except SinglePassAbort as exc:
        print(f"single pass: aborted ({exc})")
    env.reset_observations()
    res = do_group_hash(env, visits, spec, PrivacyParams(), group_capacity=4000)
    print(f"multi-pass: estimate {res.g_tilde:.1f} groups, k = {res.k} passes of {res.m_groups} slots")
    print(f"groups per pass {res.pass_groups}, output rows {res.table.row_count}")
    print(f"block transfers {env.counters.transfers}")


if __name__ == "__main__":
    main()
