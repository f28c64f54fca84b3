//! Salted PBKDF2-HMAC-SHA256 password hashes.
//!
//! Stored form: `pbkdf2-sha256$<iterations>$<salt hex>$<hash hex>`.

use rand::RngCore;
use sha2::Sha256;

const SCHEME: &str = "pbkdf2-sha256";
const SALT_LEN: usize = 16;
const HASH_LEN: usize = 32;

#[derive(Debug, Clone, Copy)]
pub struct PasswordHasher {
    pub iterations: u32,
}

impl Default for PasswordHasher {
    fn default() -> Self {
        PasswordHasher { iterations: 20_000 }
    }
}

impl PasswordHasher {
    pub fn new(iterations: u32) -> Self {
        PasswordHasher {
            iterations: iterations.max(1),
        }
    }

    pub fn hash(&self, password: &str) -> String {
        let mut salt = [0u8; SALT_LEN];
        rand::rngs::OsRng.fill_bytes(&mut salt);
        let digest = derive(password, &salt, self.iterations);
        format!(
            "{SCHEME}${}${}${}",
            self.iterations,
            hex::encode(salt),
            hex::encode(digest)
        )
    }
}

fn derive(password: &str, salt: &[u8], iterations: u32) -> [u8; HASH_LEN] {
    let mut out = [0u8; HASH_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations, &mut out);
    out
}

/// Checks `password` against a stored hash. Malformed hashes never verify.
pub fn verify(stored: &str, password: &str) -> bool {
    let mut parts = stored.split('$');
    let (Some(SCHEME), Some(iter), Some(salt), Some(hash), None) =
        (parts.next(), parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return false;
    };
    let (Ok(iterations), Ok(salt), Ok(expected)) = (iter.parse::<u32>(), hex::decode(salt), hex::decode(hash)) else {
        return false;
    };
    if iterations == 0 || expected.len() != HASH_LEN {
        return false;
    }
    constant_time_eq(&derive(password, &salt, iterations), &expected)
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// A valid hash of an unguessable password, verified against when the
/// username is unknown so both failure paths cost the same.
pub fn decoy_hash(hasher: &PasswordHasher) -> String {
    let mut pw = [0u8; 24];
    rand::rngs::OsRng.fill_bytes(&mut pw);
    hasher.hash(&hex::encode(pw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn never_stores_plaintext() {
        let h = PasswordHasher::new(10).hash("hunter2");
        assert!(!h.contains("hunter2"));
        assert!(h.starts_with("pbkdf2-sha256$10$"));
        assert!(verify(&h, "hunter2"));
    }

    #[test]
    fn salts_differ() {
        let hasher = PasswordHasher::new(10);
        assert_ne!(hasher.hash("same"), hasher.hash("same"));
    }

    #[test]
    fn garbage_hash_rejects() {
        for stored in [
            "",
            "plain",
            "pbkdf2-sha256$0$00$00",
            "pbkdf2-sha256$10$zz$00",
            "md5$1$00$00",
        ] {
            assert!(!verify(stored, "x"), "{stored}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn single_char_perturbation_fails(
            pw in "[ -~]{1,24}",
            pos in any::<prop::sample::Index>(),
            replacement in any::<char>(),
        ) {
            let stored = PasswordHasher::new(50).hash(&pw);
            prop_assert!(verify(&stored, &pw));
            let mut chars: Vec<char> = pw.chars().collect();
            let i = pos.index(chars.len());
            prop_assume!(chars[i] != replacement);
            chars[i] = replacement;
            let perturbed: String = chars.into_iter().collect();
            prop_assert!(!verify(&stored, &perturbed));
        }
    }
}
