//! Stable seed derivation. Independent of std's hasher so outputs stay
//! reproducible across toolchains.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Seed for item `index` of `label` under a master seed.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let h = splitmix64(master ^ fnv1a(label.as_bytes()));
    splitmix64(h ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_separating() {
        assert_eq!(derive_seed(7, "s1", 0), derive_seed(7, "s1", 0));
        assert_ne!(derive_seed(7, "s1", 0), derive_seed(7, "s1", 1));
        assert_ne!(derive_seed(7, "s1", 0), derive_seed(7, "s2", 0));
        assert_ne!(derive_seed(7, "s1", 0), derive_seed(8, "s1", 0));
        // Frozen so a toolchain or refactor cannot silently reshuffle outputs.
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
