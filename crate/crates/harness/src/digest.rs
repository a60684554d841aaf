//! 64-bit FNV-1a content digests for run manifests. Not cryptographic;
//! detects accidental artifact drift.

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

pub fn fnv1a_file(path: &std::path::Path) -> std::io::Result<u64> {
    Ok(fnv1a(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vectors() {
        // Standard FNV-1a test vectors.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn sensitive_to_content() {
        assert_ne!(fnv1a(b"run-a"), fnv1a(b"run-b"));
    }
}
