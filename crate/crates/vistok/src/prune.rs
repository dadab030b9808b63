//! Dataset pruning: per-sample loss-delta scoring with per-subset top-K
//! selection, plus k-means cluster pruning and random pruning baselines.
//!
//! A sample's score is the difference between a large and a small reference
//! model's average answer-token log-probability. Strongly positive scores
//! mark examples the small model misses but the large model solves; near
//! zero means uninformative; negative means distracting.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training example with per-answer-token log-probabilities under two
/// reference models, and an optional feature vector for cluster pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub subset: String,
    pub logp_small: Vec<f64>,
    pub logp_large: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl SampleRecord {
    pub fn validate(&self) -> Result<()> {
        if self.logp_small.is_empty() {
            return Err(Error::invalid(format!(
                "record {}: token log-prob lists must be nonempty",
                self.id
            )));
        }
        if self.logp_small.len() != self.logp_large.len() {
            return Err(Error::invalid(format!(
                "record {}: log-prob lists have lengths {} and {}",
                self.id,
                self.logp_small.len(),
                self.logp_large.len()
            )));
        }
        for &v in self.logp_small.iter().chain(self.logp_large.iter()) {
            if !v.is_finite() || v > 0.0 {
                return Err(Error::invalid(format!(
                    "record {}: log-probabilities must be finite and <= 0, found {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// How to collapse per-token log-probabilities into one number per model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Per-token mean; scores comparable across answers of different lengths.
    #[default]
    Mean,
    /// Raw sum over answer tokens.
    Sum,
}

/// Score under the default per-token mean aggregation.
pub fn delta_score(r: &SampleRecord) -> Result<f64> {
    delta_score_with(r, Aggregation::Mean)
}

/// log(p_large / p_small) on the answer tokens, aggregated per `agg`.
pub fn delta_score_with(r: &SampleRecord, agg: Aggregation) -> Result<f64> {
    r.validate()?;
    let small: f64 = r.logp_small.iter().sum();
    let large: f64 = r.logp_large.iter().sum();
    let raw = large - small;
    Ok(match agg {
        Aggregation::Sum => raw,
        Aggregation::Mean => raw / r.logp_small.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMethod {
    DeltaLoss,
    Cluster,
    Random,
}

/// Keep ratios: one default plus optional per-subset overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct KeepRatios {
    default: f64,
    per_subset: BTreeMap<String, f64>,
}

impl KeepRatios {
    pub fn uniform(ratio: f64) -> Result<Self> {
        check_ratio(ratio)?;
        Ok(Self { default: ratio, per_subset: BTreeMap::new() })
    }

    pub fn with_overrides(ratio: f64, per_subset: BTreeMap<String, f64>) -> Result<Self> {
        check_ratio(ratio)?;
        for (name, &r) in &per_subset {
            check_ratio(r).map_err(|_| {
                Error::invalid(format!("subset {name}: ratio {r} outside (0, 1]"))
            })?;
        }
        Ok(Self { default: ratio, per_subset })
    }

    pub fn for_subset(&self, subset: &str) -> f64 {
        *self.per_subset.get(subset).unwrap_or(&self.default)
    }

    /// Overrides must name subsets that actually occur.
    fn check_known(&self, subsets: &BTreeSet<&str>) -> Result<()> {
        for name in self.per_subset.keys() {
            if !subsets.contains(name.as_str()) {
                return Err(Error::invalid(format!(
                    "ratio map names unknown subset {name}"
                )));
            }
        }
        Ok(())
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("keep ratio {ratio} outside (0, 1]")));
    }
    Ok(())
}

/// Half-up rounding of `ratio * n`.
fn kept_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 0.5).floor() as usize
}

/// The selection a pruning run produced, grouped by subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneManifest {
    pub method: PruneMethod,
    /// Kept ids per subset, in selection order.
    pub kept: BTreeMap<String, Vec<String>>,
    pub keep_ratio: BTreeMap<String, f64>,
    pub k_per_subset: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<Aggregation>,
}

impl PruneManifest {
    pub fn kept_total(&self) -> usize {
        self.kept.values().map(|v| v.len()).sum()
    }
}

fn group_by_subset(records: &[SampleRecord]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.subset.as_str()).or_default().push(i);
    }
    groups
}

/// Per subset, keep the `round(ratio * |subset|)` records with the highest
/// delta scores; exact score ties break by lexicographic id.
pub fn prune_deltaloss(
    records: &[SampleRecord],
    ratios: &KeepRatios,
    agg: Aggregation,
) -> Result<PruneManifest> {
    let groups = group_by_subset(records);
    if groups.is_empty() {
        return Err(Error::invalid("no records to prune"));
    }
    ratios.check_known(&groups.keys().copied().collect())?;
    let scores: Vec<f64> = records
        .iter()
        .map(|r| delta_score_with(r, agg))
        .collect::<Result<_>>()?;

    let mut kept = BTreeMap::new();
    let mut keep_ratio = BTreeMap::new();
    let mut k_per_subset = BTreeMap::new();
    for (subset, mut members) in groups {
        let ratio = ratios.for_subset(subset);
        let k = kept_count(ratio, members.len());
        members.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("scores are finite")
                .then_with(|| records[a].id.cmp(&records[b].id))
        });
        let ids: Vec<String> = members[..k].iter().map(|&i| records[i].id.clone()).collect();
        kept.insert(subset.to_string(), ids);
        keep_ratio.insert(subset.to_string(), ratio);
        k_per_subset.insert(subset.to_string(), k);
    }
    Ok(PruneManifest {
        method: PruneMethod::DeltaLoss,
        kept,
        keep_ratio,
        k_per_subset,
        seed: None,
        aggregation: Some(agg),
    })
}

/// Uniform per-subset sampling without replacement, seeded.
pub fn prune_random(records: &[SampleRecord], ratio: f64, seed: u64) -> Result<PruneManifest> {
    check_ratio(ratio)?;
    let groups = group_by_subset(records);
    if groups.is_empty() {
        return Err(Error::invalid("no records to prune"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = BTreeMap::new();
    let mut keep_ratio = BTreeMap::new();
    let mut k_per_subset = BTreeMap::new();
    for (subset, mut members) in groups {
        // Sample over id-sorted members so the draw depends only on the
        // subset's contents, not on input file order.
        members.sort_by(|&a, &b| records[a].id.cmp(&records[b].id));
        let k = kept_count(ratio, members.len());
        let mut picks: Vec<usize> = index_sample(&mut rng, members.len(), k).into_vec();
        picks.sort_unstable();
        let ids: Vec<String> = picks
            .into_iter()
            .map(|p| records[members[p]].id.clone())
            .collect();
        kept.insert(subset.to_string(), ids);
        keep_ratio.insert(subset.to_string(), ratio);
        k_per_subset.insert(subset.to_string(), k);
    }
    Ok(PruneManifest {
        method: PruneMethod::Random,
        kept,
        keep_ratio,
        k_per_subset,
        seed: Some(seed),
        aggregation: None,
    })
}

/// Lloyd's k-means over the full record set, then per cluster keep the
/// `round(ratio * cluster size)` records closest to the centroid.
pub fn prune_cluster(
    records: &[SampleRecord],
    k_clusters: usize,
    ratio: f64,
    seed: u64,
) -> Result<PruneManifest> {
    check_ratio(ratio)?;
    if records.is_empty() {
        return Err(Error::invalid("no records to prune"));
    }
    if k_clusters == 0 || k_clusters > records.len() {
        return Err(Error::invalid(format!(
            "k_clusters {k_clusters} outside [1, {}]",
            records.len()
        )));
    }
    let dim = match records[0].features.as_ref() {
        Some(f) if !f.is_empty() => f.len(),
        _ => return Err(Error::invalid(format!("record {} has no features", records[0].id))),
    };
    let mut points = Vec::with_capacity(records.len());
    for r in records {
        match r.features.as_ref() {
            Some(f) if f.len() == dim => points.push(f.as_slice()),
            Some(f) => {
                return Err(Error::invalid(format!(
                    "record {}: feature dimension {} differs from {dim}",
                    r.id,
                    f.len()
                )))
            }
            None => return Err(Error::invalid(format!("record {} has no features", r.id))),
        }
    }

    let assignment = kmeans(&points, k_clusters, seed);

    // Within each cluster keep the records nearest their centroid.
    let centroids = centroids_of(&points, &assignment, k_clusters, dim);
    let mut kept_ids: Vec<&str> = Vec::new();
    for c in 0..k_clusters {
        let mut members: Vec<usize> = (0..records.len()).filter(|&i| assignment[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let k = kept_count(ratio, members.len());
        members.sort_by(|&a, &b| {
            let da = sq_dist(points[a], &centroids[c]);
            let db = sq_dist(points[b], &centroids[c]);
            da.partial_cmp(&db)
                .expect("distances are finite")
                .then_with(|| records[a].id.cmp(&records[b].id))
        });
        kept_ids.extend(members[..k].iter().map(|&i| records[i].id.as_str()));
    }
    let kept_set: BTreeSet<&str> = kept_ids.iter().copied().collect();

    let groups = group_by_subset(records);
    let mut kept = BTreeMap::new();
    let mut keep_ratio = BTreeMap::new();
    let mut k_per_subset = BTreeMap::new();
    for (subset, members) in groups {
        let ids: Vec<String> = members
            .iter()
            .filter(|&&i| kept_set.contains(records[i].id.as_str()))
            .map(|&i| records[i].id.clone())
            .collect();
        k_per_subset.insert(subset.to_string(), ids.len());
        kept.insert(subset.to_string(), ids);
        keep_ratio.insert(subset.to_string(), ratio);
    }
    Ok(PruneManifest {
        method: PruneMethod::Cluster,
        kept,
        keep_ratio,
        k_per_subset,
        seed: Some(seed),
        aggregation: None,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn centroids_of(points: &[&[f64]], assignment: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment.iter()) {
        counts[c] += 1;
        for (s, &v) in sums[c].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    for (sum, &n) in sums.iter_mut().zip(counts.iter()) {
        if n > 0 {
            for s in sum.iter_mut() {
                *s /= n as f64;
            }
        }
    }
    sums
}

/// Lloyd iteration with seeded random-partition initialization, at most 100
/// iterations, and a 1e-6 centroid-shift stopping tolerance. An emptied
/// cluster is re-seeded with the point farthest from its current centroid.
fn kmeans(points: &[&[f64]], k: usize, seed: u64) -> Vec<usize> {
    const MAX_ITERS: usize = 100;
    const TOL: f64 = 1e-6;
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<usize> = points.iter().map(|_| rng.gen_range(0..k)).collect();
    let mut centroids = centroids_of(points, &assignment, k, dim);
    // Random partition can leave clusters empty from the start.
    fix_empty_clusters(points, &mut assignment, &mut centroids, k);

    for _ in 0..MAX_ITERS {
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
        }
        let mut next = centroids_of(points, &assignment, k, dim);
        fix_empty_clusters(points, &mut assignment, &mut next, k);
        let shift = centroids
            .iter()
            .zip(next.iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centroids = next;
        if shift <= TOL {
            break;
        }
    }
    assignment
}

fn fix_empty_clusters(
    points: &[&[f64]],
    assignment: &mut [usize],
    centroids: &mut [Vec<f64>],
    k: usize,
) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        // Move the point farthest from its own centroid (lowest index on
        // ties) into the empty cluster.
        let mut far_i = 0usize;
        let mut far_d = -1.0f64;
        for (i, p) in points.iter().enumerate() {
            if counts[assignment[i]] <= 1 {
                continue;
            }
            let d = sq_dist(p, &centroids[assignment[i]]);
            if d > far_d {
                far_d = d;
                far_i = i;
            }
        }
        assignment[far_i] = empty;
        let dim = centroids[0].len();
        let next = centroids_of(points, assignment, k, dim);
        centroids.clone_from_slice(&next);
    }
}
