//! Quadratic reference implementation of the outlier definition.
//!
//! Shares nothing with the streaming engine beyond the parameter checks: each
//! object is compared against every other object in the slice.

use std::collections::BTreeSet;

use super::{DetectorParams, StreamObject};

fn neighbor_count(objects: &[StreamObject], i: usize, params: &DetectorParams) -> usize {
    let mine = objects[i].feature_value;
    objects
        .iter()
        .enumerate()
        .filter(|&(j, other)| j != i && (other.feature_value - mine).abs() <= params.radius)
        .count()
}

/// Ids of all objects in `objects` within `radius` of object `object_id`,
/// excluding itself.
pub fn brute_force_neighbors(
    objects: &[StreamObject],
    object_id: u64,
    params: &DetectorParams,
) -> BTreeSet<u64> {
    let Some(me) = objects.iter().find(|o| o.object_id == object_id) else {
        return BTreeSet::new();
    };
    objects
        .iter()
        .filter(|o| {
            o.object_id != object_id && (o.feature_value - me.feature_value).abs() <= params.radius
        })
        .map(|o| o.object_id)
        .collect()
}

/// Objects with fewer than `k` neighbors, single-threaded.
pub fn brute_force_outliers_sequential(
    objects: &[StreamObject],
    params: &DetectorParams,
) -> BTreeSet<u64> {
    (0..objects.len())
        .filter(|&i| neighbor_count(objects, i, params) < params.neighbor_threshold)
        .map(|i| objects[i].object_id)
        .collect()
}

/// Objects with fewer than `k` neighbors, scanned on the rayon pool.
#[cfg(feature = "parallel")]
pub fn brute_force_outliers_parallel(
    objects: &[StreamObject],
    params: &DetectorParams,
) -> BTreeSet<u64> {
    use rayon::prelude::*;
    (0..objects.len())
        .into_par_iter()
        .filter(|&i| neighbor_count(objects, i, params) < params.neighbor_threshold)
        .map(|i| objects[i].object_id)
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Ground-truth outlier set for a window whose live content is `objects`.
pub fn brute_force_outliers(objects: &[StreamObject], params: &DetectorParams) -> BTreeSet<u64> {
    #[cfg(feature = "parallel")]
    {
        brute_force_outliers_parallel(objects, params)
    }
    #[cfg(not(feature = "parallel"))]
    {
        brute_force_outliers_sequential(objects, params)
    }
}
