//! Seeded generator of labeled legitimate and botnet flows.
//!
//! Each flow is drawn by first sampling its one-dimensional feature from the
//! class distribution and then choosing `(bytes_total, duration)` so that
//! [`extract_feature`] gives that value back. Timestamps follow exponential
//! inter-arrivals at `arrival_rate`.

use std::fmt;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream::StreamObject;

/// Duration floor used by [`extract_feature`].
pub const DURATION_EPSILON: f64 = 1e-6;

/// Command-and-control mixture as published for 2011: IRC, HTTP, P2P, other.
/// The raw shares add up to 100.1%, so they are renormalized.
pub const PUBLISHED_MIXTURE: [f64; 4] = [0.382, 0.291, 0.023, 0.305];

const SERVER_COUNT: usize = 8;
const HYBRID_UPLINK_SHARE: f64 = 0.25;

#[derive(Debug, Error)]
pub enum BotsimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("flow at position {index} goes back in time ({timestamp} < {previous})")]
    Ordering {
        index: usize,
        timestamp: f64,
        previous: f64,
    },
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolTag {
    #[serde(rename = "IRC")]
    Irc,
    #[serde(rename = "HTTP")]
    Http,
    #[serde(rename = "P2P")]
    P2p,
    #[serde(rename = "OTHER")]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroundTruth {
    Legit,
    IrcBot,
    HttpBot,
    P2pBot,
    RandomBot,
}

impl GroundTruth {
    pub const BOTS: [GroundTruth; 4] = [
        GroundTruth::IrcBot,
        GroundTruth::HttpBot,
        GroundTruth::P2pBot,
        GroundTruth::RandomBot,
    ];

    pub fn is_bot(self) -> bool {
        self != GroundTruth::Legit
    }

    fn protocol(self) -> ProtocolTag {
        match self {
            GroundTruth::Legit => ProtocolTag::Http,
            GroundTruth::IrcBot => ProtocolTag::Irc,
            GroundTruth::HttpBot => ProtocolTag::Http,
            GroundTruth::P2pBot => ProtocolTag::P2p,
            GroundTruth::RandomBot => ProtocolTag::Other,
        }
    }
}

impl fmt::Display for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GroundTruth::Legit => "Legit",
            GroundTruth::IrcBot => "IrcBot",
            GroundTruth::HttpBot => "HttpBot",
            GroundTruth::P2pBot => "P2pBot",
            GroundTruth::RandomBot => "RandomBot",
        };
        f.write_str(s)
    }
}

/// One simulated flow. Field names match the JSON Lines trace format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRecord {
    pub flow_id: u64,
    pub timestamp: f64,
    pub source_ref: String,
    pub dest_ref: String,
    pub protocol_tag: ProtocolTag,
    pub bytes_total: u64,
    pub duration: f64,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Every bot talks to a single command node.
    Centralized,
    /// Bots talk to peers drawn uniformly from a peer pool.
    Decentralized,
    /// Bots talk to relays; relays talk to the command node.
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDist {
    pub mean: f64,
    pub stddev: f64,
}

impl FeatureDist {
    pub const fn new(mean: f64, stddev: f64) -> Self {
        Self { mean, stddev }
    }
}

/// Weights over the four bot classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BotMixture {
    pub irc: f64,
    pub http: f64,
    pub p2p: f64,
    pub random: f64,
}

impl BotMixture {
    pub fn weights(&self) -> [f64; 4] {
        [self.irc, self.http, self.p2p, self.random]
    }

    pub fn weight(&self, class: GroundTruth) -> f64 {
        match class {
            GroundTruth::IrcBot => self.irc,
            GroundTruth::HttpBot => self.http,
            GroundTruth::P2pBot => self.p2p,
            GroundTruth::RandomBot => self.random,
            GroundTruth::Legit => 0.0,
        }
    }

    /// Rescales raw nonnegative shares so they sum to one.
    pub fn normalized(raw: [f64; 4]) -> Self {
        let sum: f64 = raw.iter().sum();
        Self {
            irc: raw[0] / sum,
            http: raw[1] / sum,
            p2p: raw[2] / sum,
            random: raw[3] / sum,
        }
    }
}

impl Default for BotMixture {
    fn default() -> Self {
        Self::normalized(PUBLISHED_MIXTURE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BotFeatures {
    pub irc: FeatureDist,
    pub http: FeatureDist,
    pub p2p: FeatureDist,
    pub random: FeatureDist,
}

impl BotFeatures {
    pub const fn uniform(dist: FeatureDist) -> Self {
        Self {
            irc: dist,
            http: dist,
            p2p: dist,
            random: dist,
        }
    }

    pub fn get(&self, class: GroundTruth) -> FeatureDist {
        match class {
            GroundTruth::IrcBot => self.irc,
            GroundTruth::HttpBot => self.http,
            GroundTruth::P2pBot => self.p2p,
            GroundTruth::RandomBot | GroundTruth::Legit => self.random,
        }
    }
}

impl Default for BotFeatures {
    fn default() -> Self {
        Self::uniform(FeatureDist::new(6.0, 0.2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_flows: usize,
    pub bot_fraction: f64,
    pub bot_mixture: BotMixture,
    pub topology: Topology,
    pub legit_feature: FeatureDist,
    pub bot_features: BotFeatures,
    /// Flows per time unit.
    pub arrival_rate: f64,
    pub legit_hosts: usize,
    pub bot_hosts: usize,
    /// Peer pool for decentralized traffic, relay count for hybrid.
    pub peer_count: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_flows: 10_000,
            bot_fraction: 0.1,
            bot_mixture: BotMixture::default(),
            topology: Topology::Centralized,
            legit_feature: FeatureDist::new(2.0, 0.2),
            bot_features: BotFeatures::default(),
            arrival_rate: 1.0,
            legit_hosts: 2_000,
            bot_hosts: 4,
            peer_count: 16,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), BotsimError> {
        let bad = |m: String| Err(BotsimError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.bot_fraction) {
            return bad(format!("bot_fraction {} outside [0, 1]", self.bot_fraction));
        }
        let weights = self.bot_mixture.weights();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("bot_mixture weights must be nonnegative".into());
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("bot_mixture weights sum to {sum}, expected 1"));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return bad(format!(
                "arrival_rate must be positive, got {}",
                self.arrival_rate
            ));
        }
        let dists = [
            self.legit_feature,
            self.bot_features.irc,
            self.bot_features.http,
            self.bot_features.p2p,
            self.bot_features.random,
        ];
        if dists
            .iter()
            .any(|d| !d.mean.is_finite() || !d.stddev.is_finite() || d.stddev < 0.0)
        {
            return bad("feature distributions need finite mean and stddev >= 0".into());
        }
        if self.legit_hosts == 0 || self.bot_hosts == 0 || self.peer_count == 0 {
            return bad("legit_hosts, bot_hosts and peer_count must be positive".into());
        }
        Ok(())
    }
}

/// Log-throughput of a flow: `log10(1 + bytes / max(duration, eps))`.
pub fn extract_feature(flow: &FlowRecord) -> f64 {
    (1.0 + flow.bytes_total as f64 / flow.duration.max(DURATION_EPSILON)).log10()
}

/// Generates `config.n_flows` flows. Pure function of `config`.
pub fn generate(config: &ScenarioConfig) -> Result<Vec<FlowRecord>, BotsimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gaps = Exp::new(config.arrival_rate).expect("validated rate");
    let classes = WeightedIndex::new(config.bot_mixture.weights())
        .map_err(|e| BotsimError::InvalidConfig(e.to_string()))?;

    let mut flows = Vec::with_capacity(config.n_flows);
    let mut now = 0.0f64;
    for flow_id in 0..config.n_flows as u64 {
        now += gaps.sample(&mut rng);
        let is_bot = rng.random::<f64>() < config.bot_fraction;
        let truth = if is_bot {
            GroundTruth::BOTS[classes.sample(&mut rng)]
        } else {
            GroundTruth::Legit
        };
        let dist = if is_bot {
            config.bot_features.get(truth)
        } else {
            config.legit_feature
        };
        let feature = sample_feature(&mut rng, dist);
        let (bytes_total, duration) = invert_feature(&mut rng, feature);
        let (source_ref, dest_ref) = endpoints(&mut rng, config, truth);
        let protocol_tag = if is_bot {
            truth.protocol()
        } else {
            legit_protocol(&mut rng)
        };
        flows.push(FlowRecord {
            flow_id,
            timestamp: now,
            source_ref,
            dest_ref,
            protocol_tag,
            bytes_total,
            duration,
            ground_truth: truth,
        });
    }
    Ok(flows)
}

fn sample_feature(rng: &mut ChaCha8Rng, dist: FeatureDist) -> f64 {
    let raw = if dist.stddev == 0.0 {
        dist.mean
    } else {
        Normal::new(dist.mean, dist.stddev)
            .expect("validated stddev")
            .sample(rng)
    };
    // log10 throughput above ~15 no longer fits byte counts exactly.
    raw.clamp(0.0, 15.0)
}

/// Picks a duration, then the byte count whose throughput lands on `feature`,
/// then re-derives the duration from the rounded byte count.
fn invert_feature(rng: &mut ChaCha8Rng, feature: f64) -> (u64, f64) {
    let throughput = 10f64.powf(feature) - 1.0;
    let target_duration = rng.random_range(0.5..5.0);
    let bytes = (throughput * target_duration).round();
    if bytes <= 0.0 || throughput <= 0.0 {
        return (0, target_duration);
    }
    (bytes as u64, bytes / throughput)
}

fn endpoints(
    rng: &mut ChaCha8Rng,
    config: &ScenarioConfig,
    truth: GroundTruth,
) -> (String, String) {
    if !truth.is_bot() {
        let host = rng.random_range(0..config.legit_hosts);
        let server = rng.random_range(0..SERVER_COUNT);
        return (format!("host-{host}"), format!("srv-{server}"));
    }
    let bot = rng.random_range(0..config.bot_hosts);
    match config.topology {
        Topology::Centralized => (format!("bot-{bot}"), "c2-0".to_string()),
        Topology::Decentralized => {
            let peer = rng.random_range(0..config.peer_count);
            (format!("bot-{bot}"), format!("peer-{peer}"))
        }
        Topology::Hybrid => {
            let relay = bot % config.peer_count;
            if rng.random::<f64>() < HYBRID_UPLINK_SHARE {
                (format!("relay-{relay}"), "c2-0".to_string())
            } else {
                (format!("bot-{bot}"), format!("relay-{relay}"))
            }
        }
    }
}

fn legit_protocol(rng: &mut ChaCha8Rng) -> ProtocolTag {
    match rng.random_range(0..20) {
        0..=11 => ProtocolTag::Http,
        12..=17 => ProtocolTag::Other,
        18 => ProtocolTag::P2p,
        _ => ProtocolTag::Irc,
    }
}

/// One stream object per flow, ids assigned by position.
pub fn to_stream(flows: &[FlowRecord]) -> Result<Vec<StreamObject>, BotsimError> {
    check_order(flows)?;
    Ok(flows
        .iter()
        .enumerate()
        .map(|(i, f)| StreamObject {
            object_id: i as u64,
            arrival_time: f.timestamp,
            feature_value: extract_feature(f),
            source_ref: f.source_ref.clone(),
        })
        .collect())
}

pub fn check_order(flows: &[FlowRecord]) -> Result<(), BotsimError> {
    for (i, pair) in flows.windows(2).enumerate() {
        if pair[1].timestamp < pair[0].timestamp {
            return Err(BotsimError::Ordering {
                index: i + 1,
                timestamp: pair[1].timestamp,
                previous: pair[0].timestamp,
            });
        }
    }
    Ok(())
}

pub fn write_trace<W: Write>(mut out: W, flows: &[FlowRecord]) -> Result<(), BotsimError> {
    for flow in flows {
        serde_json::to_writer(&mut out, flow).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON Lines trace. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<FlowRecord>, BotsimError> {
    let mut flows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let flow: FlowRecord = serde_json::from_str(&line).map_err(|e| BotsimError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        flows.push(flow);
    }
    Ok(flows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn flow(bytes: u64, duration: f64) -> FlowRecord {
        FlowRecord {
            flow_id: 0,
            timestamp: 0.0,
            source_ref: "a".into(),
            dest_ref: "b".into(),
            protocol_tag: ProtocolTag::Http,
            bytes_total: bytes,
            duration,
            ground_truth: GroundTruth::Legit,
        }
    }

    #[test]
    fn feature_formula() {
        assert!((extract_feature(&flow(1000, 2.0)) - 501f64.log10()).abs() < 1e-12);
        assert!((extract_feature(&flow(1000, 2.0)) - 2.6998).abs() < 1e-4);
        assert_eq!(extract_feature(&flow(0, 3.0)), 0.0);
        assert!((extract_feature(&flow(1, 0.0)) - 6.0).abs() < 1e-6);
    }

    #[test]
    fn feature_monotone_in_bytes() {
        let mut prev = f64::NEG_INFINITY;
        for bytes in (0..10_000).step_by(97) {
            let f = extract_feature(&flow(bytes, 1.5));
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig {
            n_flows: 500,
            ..ScenarioConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = ScenarioConfig {
            seed: 7,
            ..cfg.clone()
        };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn no_bots_when_fraction_zero() {
        let cfg = ScenarioConfig {
            n_flows: 2_000,
            bot_fraction: 0.0,
            ..ScenarioConfig::default()
        };
        let flows = generate(&cfg).unwrap();
        assert_eq!(flows.len(), 2_000);
        assert!(flows.iter().all(|f| f.ground_truth == GroundTruth::Legit));
    }

    #[test]
    fn inverted_attributes_reproduce_feature() {
        let cfg = ScenarioConfig {
            n_flows: 1_000,
            legit_feature: FeatureDist::new(2.0, 0.0),
            bot_features: BotFeatures::uniform(FeatureDist::new(6.0, 0.0)),
            ..ScenarioConfig::default()
        };
        for f in generate(&cfg).unwrap() {
            let want = if f.ground_truth.is_bot() { 6.0 } else { 2.0 };
            assert!((extract_feature(&f) - want).abs() < 1e-9, "{f:?}");
        }
    }

    #[test]
    fn timestamps_nondecreasing() {
        let flows = generate(&ScenarioConfig::default()).unwrap();
        assert!(check_order(&flows).is_ok());
        assert!(flows.iter().all(|f| f.duration >= 0.0));
    }

    #[test]
    fn topology_destinations() {
        let base = ScenarioConfig {
            n_flows: 400,
            bot_fraction: 1.0,
            ..ScenarioConfig::default()
        };
        let dests = |topology| {
            let cfg = ScenarioConfig {
                topology,
                ..base.clone()
            };
            generate(&cfg)
                .unwrap()
                .into_iter()
                .map(|f| f.dest_ref)
                .collect::<BTreeSet<_>>()
        };
        assert_eq!(
            dests(Topology::Centralized),
            BTreeSet::from(["c2-0".to_string()])
        );
        assert!(dests(Topology::Decentralized).len() > 1);
        let hybrid = dests(Topology::Hybrid);
        assert!(hybrid.contains("c2-0"));
        assert!(hybrid.iter().any(|d| d.starts_with("relay-")));
    }

    #[test]
    fn invalid_configs() {
        let cfg = ScenarioConfig {
            bot_mixture: BotMixture {
                irc: 0.5,
                http: 0.5,
                p2p: 0.25,
                random: 0.25,
            },
            ..ScenarioConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(BotsimError::InvalidConfig(_))));
        let cfg = ScenarioConfig {
            arrival_rate: 0.0,
            ..ScenarioConfig::default()
        };
        assert!(generate(&cfg).is_err());
        let cfg = ScenarioConfig {
            bot_fraction: 1.5,
            ..ScenarioConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn to_stream_ids_and_order() {
        assert!(to_stream(&[]).unwrap().is_empty());
        let mut flows: Vec<_> = (0..3)
            .map(|i| FlowRecord {
                flow_id: 10 + i,
                timestamp: i as f64,
                ..flow(100, 1.0)
            })
            .collect();
        let objs = to_stream(&flows).unwrap();
        assert_eq!(
            objs.iter().map(|o| o.object_id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        flows[2].timestamp = 0.5;
        assert!(matches!(
            to_stream(&flows),
            Err(BotsimError::Ordering { index: 2, .. })
        ));
    }

    #[test]
    fn trace_round_trip_and_parse_errors() {
        let flows = generate(&ScenarioConfig {
            n_flows: 20,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &flows).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), flows);

        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("{\"flow_id\":0,\"timestamp\":"));
        let broken = format!("{first}\n{{not json}}\n");
        match read_trace(broken.as_bytes()) {
            Err(BotsimError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
