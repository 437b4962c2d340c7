//! Confusion counts and detection rate for pipeline runs scored against
//! simulator ground truth. Positive class is "bot", positive verdict is Block.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::botsim::{FlowRecord, GroundTruth};
use crate::pipeline::{VerdictKind, VerdictRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("flow {0} has no final verdict")]
    MissingVerdict(u64),
    #[error("flow {0} has more than one final verdict")]
    ConflictingVerdicts(u64),
    #[error("verdict refers to flow {0}, which is not in the trace")]
    UnknownFlow(u64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn record(&mut self, is_bot: bool, blocked: bool) {
        match (is_bot, blocked) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// `tp / (tp + fn)`, or `None` when the run had no malicious flows.
pub fn detection_rate(counts: &ConfusionCounts) -> Option<f64> {
    ratio(counts.tp, counts.tp + counts.fn_)
}

/// `fp / (fp + tn)`, or `None` when the run had no legitimate flows.
pub fn false_positive_rate(counts: &ConfusionCounts) -> Option<f64> {
    ratio(counts.fp, counts.fp + counts.tn)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBreakdown {
    pub flows: u64,
    pub blocked: u64,
    pub allowed: u64,
}

/// Final Allow/Block decision per flow id. FightBack records are companions
/// of a Block and are skipped.
fn final_decisions(verdicts: &[VerdictRecord]) -> Result<HashMap<u64, bool>, MetricsError> {
    let mut decisions = HashMap::with_capacity(verdicts.len());
    for v in verdicts {
        let blocked = match v.verdict {
            VerdictKind::Allow => false,
            VerdictKind::Block => true,
            VerdictKind::FightBack => continue,
        };
        if decisions.insert(v.flow_id, blocked).is_some() {
            return Err(MetricsError::ConflictingVerdicts(v.flow_id));
        }
    }
    Ok(decisions)
}

/// Joins flows to their final verdicts.
pub fn tally(
    flows: &[FlowRecord],
    verdicts: &[VerdictRecord],
) -> Result<ConfusionCounts, MetricsError> {
    Ok(tally_by_class(flows, verdicts)?.0)
}

/// Like [`tally`], also keyed by ground-truth class.
pub fn tally_by_class(
    flows: &[FlowRecord],
    verdicts: &[VerdictRecord],
) -> Result<(ConfusionCounts, BTreeMap<GroundTruth, ClassBreakdown>), MetricsError> {
    let decisions = final_decisions(verdicts)?;
    let mut counts = ConfusionCounts::default();
    let mut per_class: BTreeMap<GroundTruth, ClassBreakdown> = BTreeMap::new();
    for flow in flows {
        let blocked = *decisions
            .get(&flow.flow_id)
            .ok_or(MetricsError::MissingVerdict(flow.flow_id))?;
        counts.record(flow.ground_truth.is_bot(), blocked);
        let entry = per_class.entry(flow.ground_truth).or_default();
        entry.flows += 1;
        if blocked {
            entry.blocked += 1;
        } else {
            entry.allowed += 1;
        }
    }
    if decisions.len() != flows.len() {
        let known: std::collections::HashSet<u64> = flows.iter().map(|f| f.flow_id).collect();
        let mut stray: Vec<u64> = decisions
            .keys()
            .filter(|id| !known.contains(id))
            .copied()
            .collect();
        stray.sort_unstable();
        if let Some(first) = stray.first() {
            return Err(MetricsError::UnknownFlow(*first));
        }
    }
    Ok((counts, per_class))
}

/// Scored run, serialized as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub detection_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub per_class: BTreeMap<String, ClassBreakdown>,
    pub seed: u64,
    pub params: serde_json::Value,
}

impl EvaluationReport {
    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }
}

pub fn evaluate(
    flows: &[FlowRecord],
    verdicts: &[VerdictRecord],
    seed: u64,
    params: serde_json::Value,
) -> Result<EvaluationReport, MetricsError> {
    let (counts, per_class) = tally_by_class(flows, verdicts)?;
    Ok(EvaluationReport {
        tp: counts.tp,
        fp: counts.fp,
        tn: counts.tn,
        fn_: counts.fn_,
        detection_rate: detection_rate(&counts),
        false_positive_rate: false_positive_rate(&counts),
        per_class: per_class
            .into_iter()
            .map(|(class, b)| (class.to_string(), b))
            .collect(),
        seed,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::botsim::ProtocolTag;
    use proptest::prelude::*;

    fn flow(id: u64, truth: GroundTruth) -> FlowRecord {
        FlowRecord {
            flow_id: id,
            timestamp: id as f64,
            source_ref: format!("s{id}"),
            dest_ref: "d".into(),
            protocol_tag: ProtocolTag::Http,
            bytes_total: 10,
            duration: 1.0,
            ground_truth: truth,
        }
    }

    fn verdict(id: u64, kind: VerdictKind) -> VerdictRecord {
        VerdictRecord {
            decided_at: id as f64,
            flow_id: id,
            session_id: format!("sess-{id}"),
            source_ref: format!("s{id}"),
            verdict: kind,
            evidence_ids: if kind == VerdictKind::Allow {
                vec![]
            } else {
                vec![id]
            },
            link_id: None,
        }
    }

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn perfect_run() {
        let flows: Vec<_> = (0..100)
            .map(|i| {
                flow(
                    i,
                    if i < 10 {
                        GroundTruth::IrcBot
                    } else {
                        GroundTruth::Legit
                    },
                )
            })
            .collect();
        let verdicts: Vec<_> = (0..100)
            .map(|i| {
                verdict(
                    i,
                    if i < 10 {
                        VerdictKind::Block
                    } else {
                        VerdictKind::Allow
                    },
                )
            })
            .collect();
        assert_eq!(tally(&flows, &verdicts).unwrap(), counts(10, 0, 90, 0));
    }

    #[test]
    fn all_allowed() {
        let flows: Vec<_> = (0..20)
            .map(|i| {
                flow(
                    i,
                    if i < 5 {
                        GroundTruth::HttpBot
                    } else {
                        GroundTruth::Legit
                    },
                )
            })
            .collect();
        let verdicts: Vec<_> = (0..20).map(|i| verdict(i, VerdictKind::Allow)).collect();
        let c = tally(&flows, &verdicts).unwrap();
        assert_eq!((c.tp, c.fn_), (0, 5));
        assert_eq!(detection_rate(&c), Some(0.0));
    }

    #[test]
    fn missing_and_stray_verdicts() {
        let flows = vec![flow(0, GroundTruth::Legit), flow(1, GroundTruth::Legit)];
        let one = vec![verdict(0, VerdictKind::Allow)];
        assert_eq!(tally(&flows, &one), Err(MetricsError::MissingVerdict(1)));
        let dup = vec![
            verdict(0, VerdictKind::Allow),
            verdict(0, VerdictKind::Block),
            verdict(1, VerdictKind::Allow),
        ];
        assert_eq!(
            tally(&flows, &dup),
            Err(MetricsError::ConflictingVerdicts(0))
        );
        let stray = vec![
            verdict(0, VerdictKind::Allow),
            verdict(1, VerdictKind::Allow),
            verdict(9, VerdictKind::Allow),
        ];
        assert_eq!(tally(&flows, &stray), Err(MetricsError::UnknownFlow(9)));
    }

    #[test]
    fn fight_back_companions_do_not_count() {
        let flows = vec![flow(0, GroundTruth::P2pBot)];
        let verdicts = vec![
            verdict(0, VerdictKind::Block),
            verdict(0, VerdictKind::FightBack),
        ];
        assert_eq!(tally(&flows, &verdicts).unwrap(), counts(1, 0, 0, 0));
    }

    #[test]
    fn rates() {
        assert_eq!(detection_rate(&counts(9, 0, 0, 1)), Some(0.9));
        assert_eq!(detection_rate(&counts(0, 0, 0, 5)), Some(0.0));
        assert_eq!(detection_rate(&counts(0, 3, 3, 0)), None);
        assert_eq!(false_positive_rate(&counts(0, 0, 100, 0)), Some(0.0));
        assert_eq!(false_positive_rate(&counts(0, 1, 99, 0)), Some(0.01));
        assert_eq!(false_positive_rate(&counts(4, 0, 0, 1)), None);
    }

    #[test]
    fn report_field_names() {
        let flows = vec![flow(0, GroundTruth::Legit)];
        let verdicts = vec![verdict(0, VerdictKind::Allow)];
        let report = evaluate(&flows, &verdicts, 42, serde_json::json!({"radius": 1.0})).unwrap();
        let value = serde_json::to_value(&report).unwrap();
        for key in [
            "tp",
            "fp",
            "tn",
            "fn",
            "detection_rate",
            "false_positive_rate",
            "per_class",
            "seed",
            "params",
        ] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert!(value["detection_rate"].is_null());
    }

    proptest! {
        #[test]
        fn detection_rate_bounds(tp in 0u64..1000, fn_ in 0u64..1000) {
            let c = counts(tp, 0, 0, fn_);
            match detection_rate(&c) {
                None => prop_assert_eq!(tp + fn_, 0),
                Some(dr) => {
                    prop_assert!((0.0..=1.0).contains(&dr));
                    prop_assert_eq!(dr == 1.0, fn_ == 0 && tp > 0);
                }
            }
        }

        #[test]
        fn tally_is_permutation_invariant(
            truths in proptest::collection::vec(any::<bool>(), 1..60),
            blocks in proptest::collection::vec(any::<bool>(), 60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let flows: Vec<_> = truths.iter().enumerate()
                .map(|(i, bot)| flow(i as u64, if *bot { GroundTruth::RandomBot } else { GroundTruth::Legit }))
                .collect();
            let mut verdicts: Vec<_> = (0..flows.len())
                .map(|i| verdict(i as u64, if blocks[i] { VerdictKind::Block } else { VerdictKind::Allow }))
                .collect();
            let base = tally(&flows, &verdicts).unwrap();
            prop_assert_eq!(base.total(), flows.len() as u64);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            verdicts.shuffle(&mut rng);
            let mut shuffled_flows = flows.clone();
            shuffled_flows.shuffle(&mut rng);
            prop_assert_eq!(tally(&shuffled_flows, &verdicts).unwrap(), base);
        }
    }
}
