use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

const SALT_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CredentialError {
    #[error("username must be nonempty and free of ':' and whitespace")]
    BadUsername,
    #[error("credential file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    salt: [u8; SALT_LEN],
    hash: [u8; 32],
}

/// Salted SHA-256 password store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CredentialStore {
    users: BTreeMap<String, Entry>,
}

fn digest(salt: &[u8], password: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(password.as_bytes());
    h.finalize().into()
}

fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl CredentialStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn contains(&self, username: &str) -> bool {
        self.users.contains_key(username)
    }

    /// Registers or replaces `username` with a fresh salt from `rng`.
    pub fn register<R: Rng + ?Sized>(
        &mut self,
        username: &str,
        password: &str,
        rng: &mut R,
    ) -> Result<(), CredentialError> {
        if username.is_empty() || username.contains(':') || username.contains(char::is_whitespace) {
            return Err(CredentialError::BadUsername);
        }
        let mut salt = [0u8; SALT_LEN];
        rng.fill(&mut salt);
        let hash = digest(&salt, password);
        self.users
            .insert(username.to_string(), Entry { salt, hash });
        Ok(())
    }

    /// Unknown users go through the same hash-and-compare path as a wrong
    /// password, so both fail the same way.
    pub fn authenticate(&self, username: &str, password: &str) -> bool {
        const DUMMY: Entry = Entry {
            salt: [0u8; SALT_LEN],
            hash: [0u8; 32],
        };
        let (entry, known) = match self.users.get(username) {
            Some(e) => (e, true),
            None => (&DUMMY, false),
        };
        let matches = ct_eq(&digest(&entry.salt, password), &entry.hash);
        matches & known
    }

    /// Reads `username:salt:hash` lines, salt and hash hex-encoded.
    pub fn read_seed_file<R: BufRead>(input: R) -> Result<Self, CredentialError> {
        let mut store = Self::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| CredentialError::Parse {
                line: i + 1,
                message,
            };
            let mut parts = line.split(':');
            let (Some(user), Some(salt), Some(hash), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(parse_err("expected username:salt:hash".into()));
            };
            if user.is_empty() {
                return Err(parse_err("empty username".into()));
            }
            let salt: [u8; SALT_LEN] = hex::decode(salt)
                .map_err(|e| parse_err(format!("salt: {e}")))?
                .try_into()
                .map_err(|_| parse_err(format!("salt must be {SALT_LEN} bytes")))?;
            let hash: [u8; 32] = hex::decode(hash)
                .map_err(|e| parse_err(format!("hash: {e}")))?
                .try_into()
                .map_err(|_| parse_err("hash must be 32 bytes".into()))?;
            store.users.insert(user.to_string(), Entry { salt, hash });
        }
        Ok(store)
    }

    pub fn write_seed_file<W: Write>(&self, mut out: W) -> Result<(), CredentialError> {
        for (user, e) in &self.users {
            writeln!(
                out,
                "{user}:{}:{}",
                hex::encode(e.salt),
                hex::encode(e.hash)
            )?;
        }
        Ok(())
    }
}
