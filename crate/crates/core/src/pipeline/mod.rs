//! Encapsulated detection pipeline.
//!
//! Sessions pass an admission gate (blocklist, then captcha, then
//! credentials). Flows from admitted sources are scanned by the stream
//! detector; every outlier becomes a candidate that is classified a second
//! time after `verify_delay`. A candidate that is still an outlier is
//! blocked, and the block is answered with an inert counter-probe record on
//! the link the flow arrived on.

mod blocklist;
mod captcha;
mod credentials;

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::botsim::{self, FlowRecord};
use crate::stream::{Detector, DetectorParams, Label, StreamError, StreamObject};

pub use blocklist::{BlockEntry, BlockList};
pub use captcha::{CaptchaChallenge, CaptchaIssuer, CODE_LEN, DEFAULT_TTL};
pub use credentials::{CredentialError, CredentialStore};

/// Payload marker carried by every counter-probe. Metadata only.
pub const FIGHT_BACK_MARKER: &str = "edm-inert-counter-probe";

pub const DEFAULT_VERIFY_DELAY: f64 = 2.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Credentials(#[from] CredentialError),
    #[error(transparent)]
    Trace(#[from] botsim::BotsimError),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("verdict log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub verify_delay: f64,
    pub captcha_ttl: f64,
    pub fight_back: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            verify_delay: DEFAULT_VERIFY_DELAY,
            captcha_ttl: DEFAULT_TTL,
            fight_back: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.verify_delay.is_finite() && self.verify_delay >= 0.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "verify_delay must be >= 0, got {}",
                self.verify_delay
            )));
        }
        if !(self.captcha_ttl.is_finite() && self.captcha_ttl > 0.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "captcha_ttl must be positive, got {}",
                self.captcha_ttl
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Admission

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptchaResponse {
    pub challenge_id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub session_id: String,
    pub source_ref: String,
    pub captcha: CaptchaResponse,
    pub credentials: Credentials,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmitDecision {
    Admitted,
    RejectedCaptcha,
    RejectedCredentials,
    RejectedBlocked,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GateStats {
    pub admitted: u64,
    pub rejected_blocked: u64,
    pub rejected_captcha: u64,
    pub rejected_credentials: u64,
    pub captcha_checks: u64,
    pub credential_checks: u64,
}

/// Entry layer: blocklist, captcha and credential checks, cheapest first.
#[derive(Debug)]
pub struct AdmissionGate {
    captcha: CaptchaIssuer,
    credentials: CredentialStore,
    blocklist: Arc<BlockList>,
    stats: GateStats,
}

impl AdmissionGate {
    pub fn new(
        captcha: CaptchaIssuer,
        credentials: CredentialStore,
        blocklist: Arc<BlockList>,
    ) -> Self {
        Self {
            captcha,
            credentials,
            blocklist,
            stats: GateStats::default(),
        }
    }

    pub fn issue_captcha(&mut self, now: f64) -> CaptchaChallenge {
        self.captcha.issue(now)
    }

    pub fn verify_captcha(&mut self, challenge_id: &str, answer: &str, now: f64) -> bool {
        self.captcha.verify(challenge_id, answer, now)
    }

    pub fn authenticate(&self, username: &str, password: &str) -> bool {
        self.credentials.authenticate(username, password)
    }

    pub fn credentials(&self) -> &CredentialStore {
        &self.credentials
    }

    pub fn credentials_mut(&mut self) -> &mut CredentialStore {
        &mut self.credentials
    }

    pub fn blocklist(&self) -> &Arc<BlockList> {
        &self.blocklist
    }

    pub fn stats(&self) -> GateStats {
        self.stats
    }

    pub fn admit(&mut self, session: &SessionRequest, now: f64) -> AdmitDecision {
        let decision = if self.blocklist.is_blocked(&session.source_ref) {
            self.stats.rejected_blocked += 1;
            AdmitDecision::RejectedBlocked
        } else {
            self.stats.captcha_checks += 1;
            if !self
                .captcha
                .verify(&session.captcha.challenge_id, &session.captcha.answer, now)
            {
                self.stats.rejected_captcha += 1;
                AdmitDecision::RejectedCaptcha
            } else {
                self.stats.credential_checks += 1;
                if self
                    .credentials
                    .authenticate(&session.credentials.username, &session.credentials.password)
                {
                    self.stats.admitted += 1;
                    AdmitDecision::Admitted
                } else {
                    self.stats.rejected_credentials += 1;
                    AdmitDecision::RejectedCredentials
                }
            }
        };
        // Keep the outstanding challenge table from growing without bound.
        if self.stats.captcha_checks.is_multiple_of(1024) {
            self.captcha.purge_expired(now);
        }
        decision
    }
}

// ---------------------------------------------------------------------------
// Verdicts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Allow,
    Block,
    FightBack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub object_id: u64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub subject: String,
    pub evidence: Vec<Evidence>,
    pub decided_at: f64,
    pub flow_id: u64,
    pub session_id: String,
    pub link_id: String,
}

/// A flow whose feature was an outlier when scanned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub object_id: u64,
    pub label: Label,
    pub scanned_at: f64,
    pub flow_id: u64,
    pub source_ref: String,
    pub session_id: String,
    pub link_id: String,
}

/// Inert record of a counter-probe sent back on the offending link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FightBackEvent {
    pub target: String,
    pub link_id: String,
    pub payload_tag: String,
    pub emitted_at: f64,
}

/// One line of the verdict log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub decided_at: f64,
    pub flow_id: u64,
    pub session_id: String,
    pub source_ref: String,
    pub verdict: VerdictKind,
    pub evidence_ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MitigationAction {
    Blocked { source_ref: String },
    FightBack(FightBackEvent),
}

pub fn write_verdicts<W: Write>(
    mut out: W,
    records: &[VerdictRecord],
) -> Result<(), PipelineError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_verdicts<R: BufRead>(input: R) -> Result<Vec<VerdictRecord>, PipelineError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| PipelineError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Analyzer

/// Bot scanner: inserts the feature and reports it when it lands as an outlier.
pub fn scan(
    detector: &mut Detector,
    flow_feature: StreamObject,
) -> Result<Option<(u64, Label)>, StreamError> {
    let id = flow_feature.object_id;
    let label = detector.insert(flow_feature)?;
    Ok(label.is_outlier().then_some((id, label)))
}

/// Second pass over a candidate once `verify_delay` has elapsed since its
/// scan. Blocks only if the candidate was an outlier at scan time and still
/// is one now.
pub fn analyze_and_verify(
    detector: &mut Detector,
    candidate: &Candidate,
    verify_delay: f64,
    now: f64,
) -> Verdict {
    let at = now
        .max(candidate.scanned_at + verify_delay)
        .max(detector.current_time());
    detector
        .advance_time(at)
        .expect("verification time never precedes the detector clock");

    let second = detector.classify(candidate.object_id).ok();
    let still_outlier = candidate.label.is_outlier() && second.is_some_and(Label::is_outlier);
    let (kind, evidence) = if still_outlier {
        (
            VerdictKind::Block,
            vec![Evidence {
                object_id: candidate.object_id,
                label: Label::Outlier,
            }],
        )
    } else {
        (VerdictKind::Allow, Vec::new())
    };
    Verdict {
        kind,
        subject: candidate.source_ref.clone(),
        evidence,
        decided_at: at,
        flow_id: candidate.flow_id,
        session_id: candidate.session_id.clone(),
        link_id: candidate.link_id.clone(),
    }
}

fn record_of(v: &Verdict, kind: VerdictKind, link: bool) -> VerdictRecord {
    VerdictRecord {
        decided_at: v.decided_at,
        flow_id: v.flow_id,
        session_id: v.session_id.clone(),
        source_ref: v.subject.clone(),
        verdict: kind,
        evidence_ids: v.evidence.iter().map(|e| e.object_id).collect(),
        link_id: link.then(|| v.link_id.clone()),
    }
}

/// Applies a verdict. Allow is a no-op; Block adds the source to the
/// blocklist, logs the block and, when `fight_back` is set, emits exactly one
/// counter-probe on the triggering link.
pub fn mitigate(
    verdict: &Verdict,
    blocklist: &BlockList,
    log: &mut Vec<VerdictRecord>,
    fight_back: bool,
) -> Vec<MitigationAction> {
    if verdict.kind != VerdictKind::Block {
        return Vec::new();
    }
    assert!(
        !verdict.evidence.is_empty(),
        "block verdict without evidence"
    );
    let mut actions = Vec::with_capacity(2);
    blocklist.block(
        &verdict.subject,
        verdict.decided_at,
        verdict.evidence.iter().map(|e| e.object_id).collect(),
    );
    log.push(record_of(verdict, VerdictKind::Block, true));
    actions.push(MitigationAction::Blocked {
        source_ref: verdict.subject.clone(),
    });
    if fight_back {
        log.push(record_of(verdict, VerdictKind::FightBack, true));
        actions.push(MitigationAction::FightBack(FightBackEvent {
            target: verdict.subject.clone(),
            link_id: verdict.link_id.clone(),
            payload_tag: FIGHT_BACK_MARKER.to_string(),
            emitted_at: verdict.decided_at,
        }));
    }
    actions
}

// ---------------------------------------------------------------------------
// Assembled mechanism

/// A flow feature as it reaches the analyzer.
#[derive(Debug, Clone, PartialEq)]
pub struct InboundFlow {
    pub flow_id: u64,
    pub object: StreamObject,
    pub link_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowOutcome {
    Scanned,
    Candidate,
    DroppedBlocked,
    DroppedUnadmitted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AnalyzerStats {
    pub scanned: u64,
    pub candidates: u64,
    pub blocked_verdicts: u64,
    pub reversed: u64,
    pub dropped_blocked: u64,
    pub dropped_unadmitted: u64,
}

/// Gate plus analyzer. Single writer; flows must arrive in time order.
#[derive(Debug)]
pub struct Edm {
    config: PipelineConfig,
    gate: AdmissionGate,
    detector: Detector,
    sessions: HashMap<String, String>,
    pending: VecDeque<Candidate>,
    log: Vec<VerdictRecord>,
    fight_backs: Vec<FightBackEvent>,
    stats: AnalyzerStats,
    rng: ChaCha8Rng,
    session_counter: u64,
}

impl Edm {
    pub fn new(
        params: DetectorParams,
        config: PipelineConfig,
        seed: u64,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let detector = Detector::new(params)?;
        let blocklist = Arc::new(BlockList::new());
        let captcha = CaptchaIssuer::new(seed ^ 0xC0FF_EE00, config.captcha_ttl);
        Ok(Self {
            config,
            gate: AdmissionGate::new(captcha, CredentialStore::new(), blocklist),
            detector,
            sessions: HashMap::new(),
            pending: VecDeque::new(),
            log: Vec::new(),
            fight_backs: Vec::new(),
            stats: AnalyzerStats::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            session_counter: 0,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn gate(&self) -> &AdmissionGate {
        &self.gate
    }

    pub fn gate_mut(&mut self) -> &mut AdmissionGate {
        &mut self.gate
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn blocklist(&self) -> &Arc<BlockList> {
        self.gate.blocklist()
    }

    pub fn stats(&self) -> AnalyzerStats {
        self.stats
    }

    pub fn log(&self) -> &[VerdictRecord] {
        &self.log
    }

    pub fn fight_backs(&self) -> &[FightBackEvent] {
        &self.fight_backs
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn session_for(&self, source: &str) -> Option<&str> {
        self.sessions.get(source).map(String::as_str)
    }

    pub fn register_user(&mut self, username: &str, password: &str) -> Result<(), PipelineError> {
        self.gate
            .credentials_mut()
            .register(username, password, &mut self.rng)?;
        Ok(())
    }

    pub fn issue_captcha(&mut self, now: f64) -> CaptchaChallenge {
        self.gate.issue_captcha(now)
    }

    /// Runs the gate; an admitted session authorizes its source for scanning.
    pub fn admit(&mut self, session: &SessionRequest, now: f64) -> AdmitDecision {
        let decision = self.gate.admit(session, now);
        if decision == AdmitDecision::Admitted {
            self.sessions
                .insert(session.source_ref.clone(), session.session_id.clone());
        }
        decision
    }

    /// Registers a synthetic user for `source`, solves a fresh captcha and
    /// submits the session. Used when replaying traces.
    pub fn auto_admit(&mut self, source: &str, now: f64) -> Result<AdmitDecision, PipelineError> {
        let username = format!("user-{source}");
        let password = format!("pw-{source}");
        if !self.gate.credentials().contains(&username) {
            self.register_user(&username, &password)?;
        }
        let challenge = self.issue_captcha(now);
        let session = SessionRequest {
            session_id: format!("sess-{:06}", self.session_counter),
            source_ref: source.to_string(),
            captcha: CaptchaResponse {
                challenge_id: challenge.challenge_id,
                answer: challenge.code,
            },
            credentials: Credentials { username, password },
            timestamp: now,
        };
        self.session_counter += 1;
        Ok(self.admit(&session, now))
    }

    /// Feeds one flow. Verifications that fall due before the flow's arrival
    /// are resolved first.
    pub fn submit(&mut self, flow: InboundFlow) -> Result<FlowOutcome, PipelineError> {
        let now = flow.object.arrival_time;
        self.resolve_due(|due| due < now);

        let source = flow.object.source_ref.clone();
        if let Some(entry) = self.blocklist().entry(&source) {
            self.stats.dropped_blocked += 1;
            self.log.push(VerdictRecord {
                decided_at: now,
                flow_id: flow.flow_id,
                session_id: self.sessions.get(&source).cloned().unwrap_or_default(),
                source_ref: source,
                verdict: VerdictKind::Block,
                evidence_ids: entry.evidence,
                link_id: None,
            });
            return Ok(FlowOutcome::DroppedBlocked);
        }
        let Some(session_id) = self.sessions.get(&source).cloned() else {
            self.stats.dropped_unadmitted += 1;
            return Ok(FlowOutcome::DroppedUnadmitted);
        };

        self.stats.scanned += 1;
        match scan(&mut self.detector, flow.object)? {
            Some((object_id, label)) => {
                self.stats.candidates += 1;
                self.pending.push_back(Candidate {
                    object_id,
                    label,
                    scanned_at: now,
                    flow_id: flow.flow_id,
                    source_ref: source,
                    session_id,
                    link_id: flow.link_id,
                });
                Ok(FlowOutcome::Candidate)
            }
            None => {
                self.log.push(VerdictRecord {
                    decided_at: now,
                    flow_id: flow.flow_id,
                    session_id,
                    source_ref: source,
                    verdict: VerdictKind::Allow,
                    evidence_ids: Vec::new(),
                    link_id: None,
                });
                Ok(FlowOutcome::Scanned)
            }
        }
    }

    /// Resolves verifications that fall due strictly before `now`.
    pub fn resolve_before(&mut self, now: f64) {
        self.resolve_due(|due| due < now);
    }

    /// Resolves every outstanding verification.
    pub fn finish(&mut self) {
        self.resolve_due(|_| true);
    }

    fn resolve_due(&mut self, ready: impl Fn(f64) -> bool) {
        let delay = self.config.verify_delay;
        while let Some(front) = self.pending.front() {
            let due = front.scanned_at + delay;
            if !ready(due) {
                break;
            }
            let candidate = self.pending.pop_front().expect("front exists");
            let verdict = analyze_and_verify(&mut self.detector, &candidate, delay, due);
            match verdict.kind {
                VerdictKind::Block => {
                    self.stats.blocked_verdicts += 1;
                    for action in mitigate(
                        &verdict,
                        self.gate.blocklist(),
                        &mut self.log,
                        self.config.fight_back,
                    ) {
                        if let MitigationAction::FightBack(ev) = action {
                            self.fight_backs.push(ev);
                        }
                    }
                }
                _ => {
                    self.stats.reversed += 1;
                    self.log
                        .push(record_of(&verdict, VerdictKind::Allow, false));
                }
            }
        }
    }
}

/// Link identifier for a flow: the connection it travelled on.
pub fn link_id(flow: &FlowRecord) -> String {
    format!("{}->{}#{}", flow.source_ref, flow.dest_ref, flow.flow_id)
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub verdicts: Vec<VerdictRecord>,
    pub fight_backs: Vec<FightBackEvent>,
    pub gate: GateStats,
    pub analyzer: AnalyzerStats,
}

/// Replays a trace through the full mechanism, admitting one synthetic
/// session per source the first time it shows up.
pub fn replay(
    flows: &[FlowRecord],
    params: DetectorParams,
    config: PipelineConfig,
    seed: u64,
) -> Result<ReplayOutcome, PipelineError> {
    let objects = botsim::to_stream(flows)?;
    let mut edm = Edm::new(params, config, seed)?;
    for (flow, object) in flows.iter().zip(objects) {
        let now = object.arrival_time;
        edm.resolve_before(now);
        if edm.session_for(&flow.source_ref).is_none()
            && !edm.blocklist().is_blocked(&flow.source_ref)
        {
            edm.auto_admit(&flow.source_ref, now)?;
        }
        edm.submit(InboundFlow {
            flow_id: flow.flow_id,
            object,
            link_id: link_id(flow),
        })?;
    }
    edm.finish();
    Ok(ReplayOutcome {
        gate: edm.gate.stats(),
        analyzer: edm.stats,
        verdicts: edm.log,
        fight_backs: edm.fight_backs,
    })
}
