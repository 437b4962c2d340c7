use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const CODE_LEN: usize = 6;
pub const DEFAULT_TTL: f64 = 120.0;
const ALPHABET: &[u8; 36] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptchaChallenge {
    pub challenge_id: String,
    pub code: String,
    pub issued_at: f64,
    pub ttl: f64,
}

/// Issues single-use codes and checks answers against them.
#[derive(Debug, Clone)]
pub struct CaptchaIssuer {
    rng: ChaCha8Rng,
    ttl: f64,
    next_id: u64,
    outstanding: HashMap<String, CaptchaChallenge>,
}

impl CaptchaIssuer {
    pub fn new(seed: u64, ttl: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            ttl,
            next_id: 0,
            outstanding: HashMap::new(),
        }
    }

    pub fn ttl(&self) -> f64 {
        self.ttl
    }

    pub fn issue(&mut self, now: f64) -> CaptchaChallenge {
        let code: String = (0..CODE_LEN)
            .map(|_| ALPHABET[self.rng.random_range(0..ALPHABET.len())] as char)
            .collect();
        let challenge = CaptchaChallenge {
            challenge_id: format!("cap-{:08}", self.next_id),
            code,
            issued_at: now,
            ttl: self.ttl,
        };
        self.next_id += 1;
        self.outstanding
            .insert(challenge.challenge_id.clone(), challenge.clone());
        challenge
    }

    /// Consumes the challenge whatever the outcome. Unknown, used and expired
    /// challenges all answer `false`.
    pub fn verify(&mut self, challenge_id: &str, answer: &str, now: f64) -> bool {
        let Some(challenge) = self.outstanding.remove(challenge_id) else {
            return false;
        };
        now - challenge.issued_at <= challenge.ttl && answer == challenge.code
    }

    /// Drops challenges whose ttl has run out without an answer.
    pub fn purge_expired(&mut self, now: f64) {
        self.outstanding.retain(|_, c| now - c.issued_at <= c.ttl);
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn issue_contract() {
        let mut issuer = CaptchaIssuer::new(1, DEFAULT_TTL);
        let a = issuer.issue(0.0);
        let b = issuer.issue(0.0);
        assert_eq!(a.code.len(), CODE_LEN);
        assert!(a.code.bytes().all(|c| ALPHABET.contains(&c)));
        assert_eq!(a.ttl, 120.0);
        assert_ne!(a.challenge_id, b.challenge_id);
    }

    #[test]
    fn same_seed_same_codes() {
        let codes = |seed| {
            let mut issuer = CaptchaIssuer::new(seed, DEFAULT_TTL);
            (0..10).map(|_| issuer.issue(0.0).code).collect::<Vec<_>>()
        };
        assert_eq!(codes(9), codes(9));
        assert_ne!(codes(9), codes(10));
    }

    #[test]
    fn verify_rules() {
        let mut issuer = CaptchaIssuer::new(3, DEFAULT_TTL);
        let c = issuer.issue(5.0);
        assert!(issuer.verify(&c.challenge_id, &c.code, 15.0));
        assert!(!issuer.verify(&c.challenge_id, &c.code, 16.0));

        let late = issuer.issue(0.0);
        assert!(!issuer.verify(&late.challenge_id, &late.code, 121.0));
        let edge = issuer.issue(0.0);
        assert!(issuer.verify(&edge.challenge_id, &edge.code, 120.0));

        let lettered = std::iter::repeat_with(|| issuer.issue(0.0))
            .find(|c| c.code.chars().any(|ch| ch.is_ascii_uppercase()))
            .unwrap();
        assert!(!issuer.verify(&lettered.challenge_id, &lettered.code.to_lowercase(), 1.0));
        // consumed by the failed attempt
        assert!(!issuer.verify(&lettered.challenge_id, &lettered.code, 1.0));
        assert!(!issuer.verify("cap-missing", "AAAAAA", 0.0));
    }

    #[test]
    fn purge_drops_stale() {
        let mut issuer = CaptchaIssuer::new(3, 10.0);
        issuer.issue(0.0);
        issuer.issue(5.0);
        issuer.purge_expired(12.0);
        assert_eq!(issuer.outstanding(), 1);
    }
}
