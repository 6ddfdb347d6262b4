//! Output filtering: evidence-based retention and density clustering.
//!
//! A completed surface can hallucinate geometry far from anything the
//! sensor saw. Two filters run in sequence: `knn_retain` keeps only
//! generated points that are among the k nearest to some observed input
//! point, and DBSCAN then strips low-density stragglers, keeping the
//! largest cluster. If clustering wipes everything out, the retained set
//! is returned unfiltered and the result is flagged.

use crate::geometry::{PointCloud, Vec3};
use crate::knn::{brute_k_nearest, brute_within, GridIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Above this many points the grid index replaces brute force. Both are
/// exact; this is purely a speed crossover.
const BRUTE_LIMIT: usize = 2000;

#[derive(Debug, Error)]
pub enum PostprocError {
    #[error("inputs must be non-empty")]
    EmptyInput,
    #[error("k = {k} exceeds the {available} generated points")]
    KTooLarge { k: usize, available: usize },
    #[error("postproc config: {0}")]
    BadConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocConfig {
    /// Nearest generated points kept per observed point.
    pub k_retain: usize,
    /// DBSCAN neighborhood radius in meters.
    pub db_eps: f64,
    pub db_min_pts: usize,
    /// Keep every non-noise cluster instead of only the largest.
    #[serde(default)]
    pub keep_all_clusters: bool,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig { k_retain: 5, db_eps: 0.5, db_min_pts: 5, keep_all_clusters: false }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<(), PostprocError> {
        if self.k_retain < 1 {
            return Err(PostprocError::BadConfig("k_retain must be at least 1".into()));
        }
        if !(self.db_eps > 0.0) {
            return Err(PostprocError::BadConfig("db_eps must be positive".into()));
        }
        if self.db_min_pts < 1 {
            return Err(PostprocError::BadConfig("db_min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Ascending indices of the generated points that are among the k
/// nearest to at least one observed point.
pub fn knn_retain_indices(
    generated: &PointCloud,
    observed: &PointCloud,
    k: usize,
) -> Result<Vec<usize>, PostprocError> {
    if generated.points.is_empty() || observed.points.is_empty() {
        return Err(PostprocError::EmptyInput);
    }
    if k < 1 {
        return Err(PostprocError::BadConfig("k must be at least 1".into()));
    }
    if k > generated.points.len() {
        return Err(PostprocError::KTooLarge { k, available: generated.points.len() });
    }
    let mut keep = vec![false; generated.points.len()];
    if generated.points.len() <= BRUTE_LIMIT {
        for &q in &observed.points {
            for idx in brute_k_nearest(&generated.points, q, k) {
                keep[idx] = true;
            }
        }
    } else {
        let grid = GridIndex::build(&generated.points);
        for &q in &observed.points {
            for idx in grid.k_nearest(q, k) {
                keep[idx] = true;
            }
        }
    }
    Ok(keep
        .iter()
        .enumerate()
        .filter(|(_, &kept)| kept)
        .map(|(i, _)| i)
        .collect())
}

/// Union over observed points of the k nearest generated points, in
/// original generated-point order (deduplicated by index).
pub fn knn_retain(
    generated: &PointCloud,
    observed: &PointCloud,
    k: usize,
) -> Result<PointCloud, PostprocError> {
    let indices = knn_retain_indices(generated, observed, k)?;
    let points: Vec<Vec3> = indices.iter().map(|&i| generated.points[i]).collect();
    Ok(PointCloud::new(points, generated.frame))
}

/// Cluster label per point; −1 is noise. Core points have at least
/// `min_pts` neighbors within `eps` (inclusive, counting themselves);
/// clusters are numbered in order of discovery scanning by input index.
pub fn dbscan(cloud: &PointCloud, eps: f64, min_pts: usize) -> Vec<i32> {
    let points = &cloud.points;
    let n = points.len();
    const UNVISITED: i32 = -2;
    const NOISE: i32 = -1;
    let mut labels = vec![UNVISITED; n];
    if n == 0 {
        return labels;
    }
    let grid = (n > BRUTE_LIMIT).then(|| GridIndex::build(points));
    let neighbors = |q: Vec3| -> Vec<usize> {
        match &grid {
            Some(g) => g.within(q, eps),
            None => brute_within(points, q, eps),
        }
    };
    let mut next_cluster = 0i32;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let seed = neighbors(points[i]);
        if seed.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = cluster;
        // Breadth-first expansion; noise points get adopted as borders,
        // points already in another cluster stay put.
        let mut queue: std::collections::VecDeque<usize> = seed.into();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = cluster;
                continue;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let reach = neighbors(points[j]);
            if reach.len() >= min_pts {
                queue.extend(reach);
            }
        }
    }
    labels
}

#[derive(Clone, Debug)]
pub struct PostprocOutcome {
    pub cloud: PointCloud,
    /// True when clustering removed everything and the pre-clustering
    /// retained set was returned instead.
    pub fell_back: bool,
}

/// Retention then clustering. Keeps the largest cluster (ties break to
/// the lowest label) unless the config asks for all non-noise clusters.
pub fn postprocess(
    generated: &PointCloud,
    observed: &PointCloud,
    cfg: &PostprocConfig,
) -> Result<PostprocOutcome, PostprocError> {
    cfg.validate()?;
    let retained = knn_retain(generated, observed, cfg.k_retain)?;
    let labels = dbscan(&retained, cfg.db_eps, cfg.db_min_pts);
    let chosen: Vec<Vec3> = if cfg.keep_all_clusters {
        retained
            .points
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l >= 0)
            .map(|(&p, _)| p)
            .collect()
    } else {
        let n_clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0)) as usize;
        let mut counts = vec![0usize; n_clusters];
        for &l in &labels {
            if l >= 0 {
                counts[l as usize] += 1;
            }
        }
        match counts.iter().enumerate().max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i))) {
            None => Vec::new(),
            Some((best, _)) => retained
                .points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == best as i32)
                .map(|(&p, _)| p)
                .collect(),
        }
    };
    if chosen.is_empty() {
        return Ok(PostprocOutcome { cloud: retained, fell_back: true });
    }
    Ok(PostprocOutcome { cloud: PointCloud::new(chosen, retained.frame), fell_back: false })
}
