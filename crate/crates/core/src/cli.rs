//! Subcommand implementations behind the `edm` binary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::botsim::{self, BotsimError, FlowRecord, GroundTruth};
use crate::config::{ConfigError, RunConfig};
use crate::metrics::{self, EvaluationReport, MetricsError};
use crate::pipeline::{
    self, AdmitDecision, CaptchaResponse, Credentials, Edm, PipelineError, SessionRequest,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("incomplete run: {0}")]
    Incomplete(#[from] MetricsError),
    #[error("missing required path: --{0}")]
    MissingPath(&'static str),
    #[error(transparent)]
    Pipeline(PipelineError),
}

impl CliError {
    /// 0 success, 1 config, 2 I/O or parse, 3 incomplete run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingPath(_) => 1,
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Pipeline(_) => 2,
            CliError::Incomplete(_) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

pub fn read_trace_file(path: &Path) -> Result<Vec<FlowRecord>, CliError> {
    botsim::read_trace(open(path)?).map_err(|e| match e {
        BotsimError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Parse {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

pub fn read_verdict_file(path: &Path) -> Result<Vec<pipeline::VerdictRecord>, CliError> {
    pipeline::read_verdicts(open(path)?).map_err(|e| match e {
        PipelineError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Parse {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub n_flows: usize,
    pub class_counts: BTreeMap<GroundTruth, usize>,
}

impl std::fmt::Display for SimulateSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n_flows={}", self.n_flows)?;
        for (class, n) in &self.class_counts {
            write!(f, " {class}={n}")?;
        }
        Ok(())
    }
}

pub fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<SimulateSummary, CliError> {
    let flows = botsim::generate(&config.scenario)
        .map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?;
    let mut w = create(out)?;
    botsim::write_trace(&mut w, &flows).map_err(|e| match e {
        BotsimError::Io(source) => CliError::Io {
            path: out.to_path_buf(),
            source,
        },
        other => CliError::Parse {
            path: out.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let mut class_counts = BTreeMap::new();
    for f in &flows {
        *class_counts.entry(f.ground_truth).or_insert(0) += 1;
    }
    Ok(SimulateSummary {
        n_flows: flows.len(),
        class_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectSummary {
    pub flows: usize,
    pub records: usize,
    pub blocks: usize,
    pub fight_backs: usize,
    pub blocked_sources: usize,
}

impl std::fmt::Display for DetectSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "flows={} records={} blocks={} fight_backs={} blocked_sources={}",
            self.flows, self.records, self.blocks, self.fight_backs, self.blocked_sources
        )
    }
}

pub fn cmd_detect(config: &RunConfig, trace: &Path, out: &Path) -> Result<DetectSummary, CliError> {
    let flows = read_trace_file(trace)?;
    let outcome = pipeline::replay(
        &flows,
        config.detector.params(),
        config.pipeline,
        config.seed(),
    )
    .map_err(|e| match e {
        PipelineError::Trace(BotsimError::Ordering { .. }) | PipelineError::Stream(_) => {
            CliError::Parse {
                path: trace.to_path_buf(),
                message: e.to_string(),
            }
        }
        other => CliError::Pipeline(other),
    })?;
    let mut w = create(out)?;
    pipeline::write_verdicts(&mut w, &outcome.verdicts).map_err(|e| match e {
        PipelineError::Io(source) => CliError::Io {
            path: out.to_path_buf(),
            source,
        },
        other => CliError::Pipeline(other),
    })?;
    let blocks = outcome
        .verdicts
        .iter()
        .filter(|v| v.verdict == pipeline::VerdictKind::Block)
        .count();
    let blocked_sources = outcome
        .verdicts
        .iter()
        .filter(|v| v.verdict == pipeline::VerdictKind::Block)
        .map(|v| v.source_ref.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    Ok(DetectSummary {
        flows: flows.len(),
        records: outcome.verdicts.len(),
        blocks,
        fight_backs: outcome.fight_backs.len(),
        blocked_sources,
    })
}

pub fn cmd_evaluate(
    config: &RunConfig,
    trace: &Path,
    verdicts: &Path,
    out: &Path,
) -> Result<EvaluationReport, CliError> {
    let flows = read_trace_file(trace)?;
    let records = read_verdict_file(verdicts)?;
    let report = metrics::evaluate(&flows, &records, config.seed(), config.report_params())?;
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &report)
        .map_err(std::io::Error::from)
        .map_err(io_err(out))?;
    w.write_all(b"\n").map_err(io_err(out))?;
    w.flush().map_err(io_err(out))?;
    Ok(report)
}

/// Scripted walk through the admission gate. Returns one line per decision.
pub fn cmd_demo_gate(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let mut edm = Edm::new(config.detector.params(), config.pipeline, config.seed())
        .map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?;
    edm.register_user("teller01", "s3cure-pass")
        .map_err(CliError::Pipeline)?;
    let mut lines = Vec::new();
    let mut t = 0.0;

    let step = |edm: &mut Edm,
                lines: &mut Vec<String>,
                label: &str,
                source: &str,
                answer: Option<&str>,
                password: &str,
                now: f64| {
        let challenge = edm.issue_captcha(now);
        lines.push(format!(
            "t={now:>5.1} issue captcha {} code={}",
            challenge.challenge_id, challenge.code
        ));
        let session = SessionRequest {
            session_id: format!("demo-{}", lines.len()),
            source_ref: source.to_string(),
            captcha: CaptchaResponse {
                challenge_id: challenge.challenge_id.clone(),
                answer: answer.map(str::to_string).unwrap_or(challenge.code.clone()),
            },
            credentials: Credentials {
                username: "teller01".into(),
                password: password.into(),
            },
            timestamp: now,
        };
        let before = edm.gate().stats().credential_checks;
        let decision = edm.admit(&session, now);
        let consulted = edm.gate().stats().credential_checks > before;
        lines.push(format!(
            "t={now:>5.1} {label}: source={source} decision={} credentials_consulted={consulted}",
            decision_name(decision)
        ));
        decision
    };

    step(
        &mut edm,
        &mut lines,
        "wrong captcha",
        "10.0.0.7",
        Some("XXXXXX"),
        "s3cure-pass",
        t,
    );
    t += 1.0;
    step(
        &mut edm,
        &mut lines,
        "wrong password",
        "10.0.0.7",
        None,
        "guess",
        t,
    );
    t += 1.0;
    step(
        &mut edm,
        &mut lines,
        "valid session",
        "10.0.0.7",
        None,
        "s3cure-pass",
        t,
    );
    t += 1.0;

    // Captcha reuse and expiry.
    let c = edm.issue_captcha(t);
    let first = edm.gate_mut().verify_captcha(&c.challenge_id, &c.code, t);
    let again = edm.gate_mut().verify_captcha(&c.challenge_id, &c.code, t);
    lines.push(format!(
        "t={t:>5.1} reuse captcha {}: first={first} second={again}",
        c.challenge_id
    ));
    let late = edm.issue_captcha(t);
    let expired_at = t + config.pipeline.captcha_ttl + 1.0;
    let ok = edm
        .gate_mut()
        .verify_captcha(&late.challenge_id, &late.code, expired_at);
    lines.push(format!(
        "t={expired_at:>5.1} expired captcha {}: accepted={ok}",
        late.challenge_id
    ));

    edm.blocklist().block("10.0.0.66", t, vec![0]);
    lines.push(format!("t={t:>5.1} blocklist add source=10.0.0.66"));
    t += 1.0;
    step(
        &mut edm,
        &mut lines,
        "blocked retry",
        "10.0.0.66",
        None,
        "s3cure-pass",
        t,
    );
    Ok(lines)
}

fn decision_name(d: AdmitDecision) -> &'static str {
    match d {
        AdmitDecision::Admitted => "Admitted",
        AdmitDecision::RejectedCaptcha => "RejectedCaptcha",
        AdmitDecision::RejectedCredentials => "RejectedCredentials",
        AdmitDecision::RejectedBlocked => "RejectedBlocked",
    }
}
