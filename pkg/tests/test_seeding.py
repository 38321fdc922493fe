from dvge.seeding import derive_seed, splitmix64


def test_splitmix_reference_values():
    # reference outputs of the splitmix64 generator seeded with 0 (first two draws)
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4


def test_derive_seed_stable_and_distinct():
    stages = ["data", "split", "vae", "sensitive", "task"]
    seeds = [derive_seed(0, s) for s in stages]
    assert len(set(seeds)) == len(seeds)
    assert all(0 <= s < 2**63 for s in seeds)
    assert derive_seed(7, "vae") == derive_seed(7, "vae") != derive_seed(8, "vae")
