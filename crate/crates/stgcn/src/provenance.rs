//! Config hashing for output provenance.
//!
//! Every emitted artifact carries a hash of the exact configuration that
//! produced it, so two files with equal hashes are guaranteed to come from
//! identical configs. FNV-1a over the canonical `key=value` rendering keeps
//! the hash stable across runs and platforms with zero dependencies.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a hash of a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash a canonical config rendering (sorted `key=value` lines).
pub fn config_hash(lines: &[(String, String)]) -> u64 {
    let mut sorted: Vec<&(String, String)> = lines.iter().collect();
    sorted.sort();
    let mut text = String::new();
    for (k, v) in sorted {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    fnv1a64(text.as_bytes())
}
