//! Seed derivation.
//!
//! Every source of randomness in the crate flows from a single `u64` seed
//! through [`mix`], so runs are replayable on any platform. Streams are
//! separated by mixing in small integer tags or content hashes; the
//! generator everywhere is ChaCha8 seeded via `seed_from_u64`.

/// SplitMix64 finalizer. Bijective, well-distributed, stable across platforms.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream tag.
pub fn mix(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Derive a child seed from a parent seed and several stream tags.
pub fn mix_many(seed: u64, streams: &[u64]) -> u64 {
    let mut s = seed;
    for &t in streams {
        s = mix(s, t);
    }
    s
}

/// FNV-1a hash of a byte slice. Used to tag streams by string identifiers.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Content hash of a float vector (bit-exact), so identical inputs derive
/// identical per-instance seeds.
pub fn hash_f64s(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
