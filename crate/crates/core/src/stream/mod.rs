//! Distance-based outlier detection over a time-based sliding window of
//! scalar stream objects.
//!
//! Every live object keeps two pieces of neighbor evidence: the neighbors that
//! arrived before it and a count of the neighbors that arrived after it. An
//! object is an outlier when it has fewer than `k` live neighbors within
//! `radius`. Once `k` later arrivals sit within `radius` the object is a safe
//! inlier: those neighbors outlive it, so it can never turn into an outlier.
//!
//! Two modes are provided. [`Mode::Exact`] keeps every preceding neighbor and
//! matches the brute-force definition exactly. [`Mode::Approximate`] keeps a
//! bounded reservoir sample of preceding neighbors per object, scales the
//! live fraction of the sample back up to an estimate, and discards preceding
//! evidence entirely once an object becomes a safe inlier.

mod oracle;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use ordered_float::OrderedFloat;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
pub use oracle::brute_force_outliers_parallel;
pub use oracle::{brute_force_neighbors, brute_force_outliers, brute_force_outliers_sequential};

/// Errors raised by the stream detector.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StreamError {
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
    #[error("object id {id} does not exceed the last inserted id {last}")]
    IdOrder { id: u64, last: u64 },
    #[error("time {time} is before the detector clock {current}")]
    TimeRegression { time: f64, current: f64 },
    #[error("non-finite value in stream object {0}")]
    NonFinite(u64),
    #[error("object {0} is not live in the window")]
    NotFound(u64),
}

pub type Result<T> = std::result::Result<T, StreamError>;

/// Detection mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Exact,
    Approximate {
        reservoir_size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Neighbor radius on the feature axis (closed ball).
    pub radius: f64,
    /// Minimum neighbor count for an inlier.
    pub neighbor_threshold: usize,
    /// Window span in time units.
    pub window_span: f64,
    pub mode: Mode,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            radius: 1.0,
            neighbor_threshold: 3,
            window_span: 16.0,
            mode: Mode::Exact,
        }
    }
}

impl DetectorParams {
    pub fn new(radius: f64, neighbor_threshold: usize, window_span: f64, mode: Mode) -> Self {
        Self {
            radius,
            neighbor_threshold,
            window_span,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(StreamError::InvalidParams(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if self.neighbor_threshold < 1 {
            return Err(StreamError::InvalidParams(
                "neighbor_threshold must be at least 1".into(),
            ));
        }
        if !(self.window_span.is_finite() && self.window_span > 0.0) {
            return Err(StreamError::InvalidParams(format!(
                "window_span must be positive, got {}",
                self.window_span
            )));
        }
        if let Mode::Approximate { reservoir_size } = self.mode {
            if reservoir_size < 1 {
                return Err(StreamError::InvalidParams(
                    "reservoir_size must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// The window is half-open: an object is gone once `now - arrival >= span`.
    #[inline]
    pub fn is_expired(&self, arrival_time: f64, now: f64) -> bool {
        now - arrival_time >= self.window_span
    }

    #[inline]
    pub fn within_radius(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.radius
    }
}

/// One timestamped scalar point in the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamObject {
    pub object_id: u64,
    pub arrival_time: f64,
    pub feature_value: f64,
    pub source_ref: String,
}

impl StreamObject {
    pub fn new(
        object_id: u64,
        arrival_time: f64,
        feature_value: f64,
        source_ref: impl Into<String>,
    ) -> Self {
        Self {
            object_id,
            arrival_time,
            feature_value,
            source_ref: source_ref.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Outlier,
    Inlier,
    SafeInlier,
}

impl Label {
    pub fn is_outlier(self) -> bool {
        self == Label::Outlier
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Outlier => "outlier",
            Label::Inlier => "inlier",
            Label::SafeInlier => "safe_inlier",
        })
    }
}

/// A preceding neighbor reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborRef {
    pub object_id: u64,
    pub arrival_time: f64,
}

/// Preceding-neighbor evidence as exposed to callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrecedingEvidence {
    /// Every live preceding neighbor (exact mode).
    Neighbors { neighbors: Vec<NeighborRef> },
    /// Approximate mode: `total` preceding neighbors seen at insertion,
    /// `sampled` of them retained, `live_sampled` of those still live.
    Fraction {
        total: usize,
        sampled: usize,
        live_sampled: usize,
        estimate: f64,
    },
    /// Approximate mode safe inlier: preceding evidence discarded.
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSummary {
    pub object_id: u64,
    pub preceding: PrecedingEvidence,
    pub succeeding_count: usize,
}

/// One row of a window snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub object_id: u64,
    pub arrival_time: f64,
    pub feature_value: f64,
    pub source_ref: String,
    pub label: Label,
    pub preceding_estimate: f64,
    pub succeeding_count: usize,
}

#[derive(Debug, Clone)]
enum Preceding {
    Exact(VecDeque<NeighborRef>),
    /// Samples kept sorted by object id, which is also arrival order.
    Sampled {
        total: usize,
        samples: Vec<NeighborRef>,
    },
    Dropped,
}

#[derive(Debug, Clone)]
struct Slot {
    object: StreamObject,
    preceding: Preceding,
    succeeding: usize,
}

/// Sliding-window outlier detector.
#[derive(Debug, Clone)]
pub struct Detector {
    params: DetectorParams,
    live: VecDeque<Slot>,
    index: BTreeSet<(OrderedFloat<f64>, u64)>,
    current_time: f64,
    last_id: Option<u64>,
}

impl Detector {
    pub fn new(params: DetectorParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            live: VecDeque::new(),
            index: BTreeSet::new(),
            current_time: 0.0,
            last_id: None,
        })
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    pub fn current_time(&self) -> f64 {
        self.current_time
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn contains(&self, object_id: u64) -> bool {
        self.position(object_id).is_some()
    }

    /// Live objects in arrival order.
    pub fn live_objects(&self) -> impl Iterator<Item = &StreamObject> + '_ {
        self.live.iter().map(|s| &s.object)
    }

    pub fn live(&self, object_id: u64) -> Option<&StreamObject> {
        self.position(object_id).map(|i| &self.live[i].object)
    }

    /// Inserts `obj`, expiring anything that falls out of the window at its
    /// arrival time first, and returns the label `obj` gets on arrival.
    pub fn insert(&mut self, obj: StreamObject) -> Result<Label> {
        if !(obj.arrival_time.is_finite() && obj.feature_value.is_finite())
            || obj.arrival_time < 0.0
        {
            return Err(StreamError::NonFinite(obj.object_id));
        }
        if let Some(last) = self.last_id {
            if obj.object_id <= last {
                return Err(StreamError::IdOrder {
                    id: obj.object_id,
                    last,
                });
            }
        }
        if obj.arrival_time < self.current_time {
            return Err(StreamError::TimeRegression {
                time: obj.arrival_time,
                current: self.current_time,
            });
        }
        self.advance_time(obj.arrival_time)?;

        let mut neighbors = self.neighbors_of(obj.feature_value, |_| true);
        neighbors.sort_unstable_by_key(|n| n.object_id);

        let k = self.params.neighbor_threshold;
        let approximate = matches!(self.params.mode, Mode::Approximate { .. });
        for n in &neighbors {
            let pos = self
                .position(n.object_id)
                .expect("indexed object must be live");
            let slot = &mut self.live[pos];
            slot.succeeding += 1;
            if approximate && slot.succeeding >= k {
                slot.preceding = Preceding::Dropped;
            }
        }

        let preceding = match self.params.mode {
            Mode::Exact => Preceding::Exact(neighbors.into()),
            Mode::Approximate { reservoir_size } => {
                sample_preceding(obj.object_id, neighbors, reservoir_size)
            }
        };

        self.last_id = Some(obj.object_id);
        self.index
            .insert((OrderedFloat(obj.feature_value), obj.object_id));
        self.live.push_back(Slot {
            object: obj,
            preceding,
            succeeding: 0,
        });
        let slot = self.live.back().expect("just pushed");
        Ok(self.label_of(slot))
    }

    /// Moves the clock to `now` and returns the ids of every object that left
    /// the window, oldest first.
    pub fn advance_time(&mut self, now: f64) -> Result<Vec<u64>> {
        if !now.is_finite() || now < self.current_time {
            return Err(StreamError::TimeRegression {
                time: now,
                current: self.current_time,
            });
        }
        self.current_time = now;
        let mut expired = Vec::new();
        while let Some(front) = self.live.front() {
            if !self.params.is_expired(front.object.arrival_time, now) {
                break;
            }
            let slot = self.live.pop_front().expect("front exists");
            let id = slot.object.object_id;
            let value = slot.object.feature_value;
            self.index.remove(&(OrderedFloat(value), id));

            if matches!(self.params.mode, Mode::Exact) {
                // Later neighbors list `id` as their oldest preceding entry.
                let later = self.neighbors_of(value, |other| other > id);
                for n in later {
                    let pos = self
                        .position(n.object_id)
                        .expect("indexed object must be live");
                    if let Preceding::Exact(list) = &mut self.live[pos].preceding {
                        let popped = list.pop_front();
                        debug_assert_eq!(popped.map(|p| p.object_id), Some(id));
                    }
                }
            }
            expired.push(id);
        }
        Ok(expired)
    }

    pub fn classify(&self, object_id: u64) -> Result<Label> {
        let pos = self
            .position(object_id)
            .ok_or(StreamError::NotFound(object_id))?;
        Ok(self.label_of(&self.live[pos]))
    }

    pub fn summary(&self, object_id: u64) -> Result<NeighborSummary> {
        let pos = self
            .position(object_id)
            .ok_or(StreamError::NotFound(object_id))?;
        let slot = &self.live[pos];
        let preceding = match &slot.preceding {
            Preceding::Exact(list) => PrecedingEvidence::Neighbors {
                neighbors: list.iter().copied().collect(),
            },
            Preceding::Sampled { total, samples } => PrecedingEvidence::Fraction {
                total: *total,
                sampled: samples.len(),
                live_sampled: self.live_samples(samples),
                estimate: self.preceding_estimate(&slot.preceding),
            },
            Preceding::Dropped => PrecedingEvidence::Dropped,
        };
        Ok(NeighborSummary {
            object_id,
            preceding,
            succeeding_count: slot.succeeding,
        })
    }

    /// Live objects currently labeled [`Label::Outlier`].
    pub fn query_outliers(&self) -> BTreeSet<u64> {
        self.live
            .iter()
            .filter(|s| self.label_of(s).is_outlier())
            .map(|s| s.object.object_id)
            .collect()
    }

    /// Number of preceding-neighbor entries held for `object_id`.
    pub fn preceding_footprint(&self, object_id: u64) -> Result<usize> {
        let pos = self
            .position(object_id)
            .ok_or(StreamError::NotFound(object_id))?;
        Ok(match &self.live[pos].preceding {
            Preceding::Exact(list) => list.len(),
            Preceding::Sampled { samples, .. } => samples.len(),
            Preceding::Dropped => 0,
        })
    }

    /// Largest per-object preceding footprint across the live window.
    pub fn max_preceding_footprint(&self) -> usize {
        self.live
            .iter()
            .map(|s| match &s.preceding {
                Preceding::Exact(list) => list.len(),
                Preceding::Sampled { samples, .. } => samples.len(),
                Preceding::Dropped => 0,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn snapshot(&self) -> Vec<SnapshotEntry> {
        self.live
            .iter()
            .map(|s| SnapshotEntry {
                object_id: s.object.object_id,
                arrival_time: s.object.arrival_time,
                feature_value: s.object.feature_value,
                source_ref: s.object.source_ref.clone(),
                label: self.label_of(s),
                preceding_estimate: self.preceding_estimate(&s.preceding),
                succeeding_count: s.succeeding,
            })
            .collect()
    }

    fn position(&self, object_id: u64) -> Option<usize> {
        self.live
            .binary_search_by_key(&object_id, |s| s.object.object_id)
            .ok()
    }

    /// Live objects within radius of `value` whose id passes `keep`.
    fn neighbors_of(&self, value: f64, keep: impl Fn(u64) -> bool) -> Vec<NeighborRef> {
        // Widen the ordered scan slightly, then apply the exact distance test
        // so rounding in `value ± radius` can never drop a boundary neighbor.
        let r = self.params.radius;
        let slack = (value.abs() + r) * 1e-12;
        let lo = (OrderedFloat(value - r - slack), u64::MIN);
        let hi = (OrderedFloat(value + r + slack), u64::MAX);
        self.index
            .range(lo..=hi)
            .filter(|(v, id)| keep(*id) && self.params.within_radius(v.0, value))
            .map(|&(_, id)| {
                let pos = self.position(id).expect("indexed object must be live");
                NeighborRef {
                    object_id: id,
                    arrival_time: self.live[pos].object.arrival_time,
                }
            })
            .collect()
    }

    fn live_samples(&self, samples: &[NeighborRef]) -> usize {
        let dead =
            samples.partition_point(|s| self.params.is_expired(s.arrival_time, self.current_time));
        samples.len() - dead
    }

    fn preceding_estimate(&self, preceding: &Preceding) -> f64 {
        match preceding {
            Preceding::Exact(list) => list.len() as f64,
            Preceding::Sampled { total, samples } => {
                if samples.is_empty() {
                    0.0
                } else if samples.len() == *total {
                    self.live_samples(samples) as f64
                } else {
                    *total as f64 * self.live_samples(samples) as f64 / samples.len() as f64
                }
            }
            Preceding::Dropped => 0.0,
        }
    }

    fn label_of(&self, slot: &Slot) -> Label {
        let k = self.params.neighbor_threshold;
        if slot.succeeding >= k {
            return Label::SafeInlier;
        }
        let total = self.preceding_estimate(&slot.preceding) + slot.succeeding as f64;
        if total < k as f64 {
            Label::Outlier
        } else {
            Label::Inlier
        }
    }
}

/// Uniform reservoir sample of preceding neighbors, seeded by the object id so
/// a replay of the same stream keeps the same samples.
fn sample_preceding(object_id: u64, neighbors: Vec<NeighborRef>, capacity: usize) -> Preceding {
    let total = neighbors.len();
    if total <= capacity {
        return Preceding::Sampled {
            total,
            samples: neighbors,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(object_id);
    let mut picked = index::sample(&mut rng, total, capacity).into_vec();
    picked.sort_unstable();
    let samples = picked.into_iter().map(|i| neighbors[i]).collect();
    Preceding::Sampled { total, samples }
}
