//! Hierarchical seed derivation.
//!
//! Every random stream in a run hangs off the master seed through a chain of
//! labels (experiment, condition, session, call). Each step mixes the parent
//! seed with one label word through SplitMix64, so a child stream depends only
//! on its own path and adding a sibling never shifts another stream.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` along `path`.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(parent.wrapping_add(GOLDEN)), |acc, &label| {
        mix64(acc ^ mix64(label.wrapping_add(GOLDEN)))
    })
}

/// FNV-1a over bytes; turns names into path labels.
pub fn label(name: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
