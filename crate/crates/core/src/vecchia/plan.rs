//! Variable orderings, blocks and conditioning sets.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{mahalanobis_distance, nearest_neighbors, CovarianceSpec, Location};
use crate::error::{Error, Result};

/// How each block's conditioning set is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeighborStrategy {
    /// The `m` nearest earlier sites of every block member, unioned.
    #[serde(rename = "nearest", alias = "NearestPerElement")]
    NearestPerElement,
    /// `m` earlier sites drawn uniformly once per block.
    #[serde(rename = "random-shared", alias = "RandomShared")]
    RandomShared,
    /// `m` earlier sites drawn uniformly for every block member, unioned.
    #[serde(rename = "random-per-element", alias = "RandomPerElement")]
    RandomPerElement,
}

impl std::str::FromStr for NeighborStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" | "nearest-per-element" | "NearestPerElement" => Ok(Self::NearestPerElement),
            "random" | "random-shared" | "RandomShared" => Ok(Self::RandomShared),
            "random-per-element" | "RandomPerElement" => Ok(Self::RandomPerElement),
            other => Err(Error::invalid(format!(
                "unknown neighbour strategy `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for NeighborStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NearestPerElement => "nearest",
            Self::RandomShared => "random-shared",
            Self::RandomPerElement => "random-per-element",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum VariableOrdering {
    /// Lexicographic by `(y, x)`, ties by index.
    #[default]
    Coordinate,
    /// Uniform random permutation drawn from the plan seed.
    Random,
    /// Start near the centroid, then repeatedly take the site farthest from
    /// everything already ordered.
    MaxMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanOptions {
    pub ordering: VariableOrdering,
    /// When false, neighbours may come from any other block, including later
    /// ones. The resulting product is no longer a truncated telescoping
    /// factorisation; this exists for experiments only.
    pub predecessors_only: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            ordering: VariableOrdering::Coordinate,
            predecessors_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondSetPlan {
    pub ordering: Vec<usize>,
    pub blocks: Vec<Vec<usize>>,
    pub cond_sets: Vec<Vec<usize>>,
    pub strategy: NeighborStrategy,
    pub m: usize,
    pub p: usize,
    pub seed: u64,
    #[serde(default)]
    pub options: PlanOptions,
}

pub fn build_plan(
    locs: &[Location],
    spec: &CovarianceSpec,
    m: usize,
    p: usize,
    strategy: NeighborStrategy,
    seed: u64,
) -> Result<CondSetPlan> {
    build_plan_with(locs, spec, m, p, strategy, seed, PlanOptions::default())
}

pub fn build_plan_with(
    locs: &[Location],
    spec: &CovarianceSpec,
    m: usize,
    p: usize,
    strategy: NeighborStrategy,
    seed: u64,
    options: PlanOptions,
) -> Result<CondSetPlan> {
    if locs.is_empty() {
        return Err(Error::invalid("cannot build a plan for zero locations"));
    }
    if m == 0 || p == 0 {
        return Err(Error::invalid(format!(
            "m and p must be positive (m = {m}, p = {p})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ordering = order_sites(locs, spec, options.ordering, &mut rng);
    let blocks: Vec<Vec<usize>> = ordering.chunks(p).map(|c| c.to_vec()).collect();

    let mut cond_sets = Vec::with_capacity(blocks.len());
    let mut seen = 0usize;
    for block in &blocks {
        let candidates: Vec<usize> = if options.predecessors_only {
            ordering[..seen].to_vec()
        } else {
            ordering
                .iter()
                .copied()
                .filter(|i| !block.contains(i))
                .collect()
        };
        let set = match strategy {
            NeighborStrategy::NearestPerElement => union_in_order(
                block
                    .iter()
                    .map(|&i| nearest_neighbors(locs, i, &candidates, m, spec)),
            ),
            NeighborStrategy::RandomShared => sample(&mut rng, &candidates, m),
            NeighborStrategy::RandomPerElement => {
                let draws: Vec<Vec<usize>> = block
                    .iter()
                    .map(|_| sample(&mut rng, &candidates, m))
                    .collect();
                union_in_order(draws.into_iter())
            }
        };
        cond_sets.push(set);
        seen += block.len();
    }
    Ok(CondSetPlan {
        ordering,
        blocks,
        cond_sets,
        strategy,
        m,
        p,
        seed,
        options,
    })
}

fn sample(rng: &mut ChaCha8Rng, candidates: &[usize], m: usize) -> Vec<usize> {
    let k = m.min(candidates.len());
    index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

fn union_in_order(sets: impl Iterator<Item = Vec<usize>>) -> Vec<usize> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for set in sets {
        for i in set {
            if seen.insert(i) {
                out.push(i);
            }
        }
    }
    out
}

fn order_sites(
    locs: &[Location],
    spec: &CovarianceSpec,
    kind: VariableOrdering,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = locs.len();
    let mut order: Vec<usize> = (0..n).collect();
    match kind {
        VariableOrdering::Coordinate => {
            order.sort_by(|&a, &b| {
                locs[a]
                    .y
                    .total_cmp(&locs[b].y)
                    .then(locs[a].x.total_cmp(&locs[b].x))
                    .then(a.cmp(&b))
            });
        }
        VariableOrdering::Random => order.shuffle(rng),
        VariableOrdering::MaxMin => {
            let cx = locs.iter().map(|l| l.x).sum::<f64>() / n as f64;
            let cy = locs.iter().map(|l| l.y).sum::<f64>() / n as f64;
            let centre = Location::new(cx, cy);
            let first = (0..n)
                .min_by(|&a, &b| {
                    mahalanobis_distance(&locs[a], &centre, spec)
                        .total_cmp(&mahalanobis_distance(&locs[b], &centre, spec))
                        .then(a.cmp(&b))
                })
                .unwrap_or(0);
            let mut taken = vec![false; n];
            let mut min_dist = vec![f64::INFINITY; n];
            order.clear();
            let mut next = first;
            for _ in 0..n {
                taken[next] = true;
                order.push(next);
                let mut best: Option<usize> = None;
                for i in 0..n {
                    if taken[i] {
                        continue;
                    }
                    let d = mahalanobis_distance(&locs[i], &locs[next], spec);
                    if d < min_dist[i] {
                        min_dist[i] = d;
                    }
                    if best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                        best = Some(i);
                    }
                }
                match best {
                    Some(b) => next = b,
                    None => break,
                }
            }
        }
    }
    order
}

impl CondSetPlan {
    pub fn dim(&self) -> usize {
        self.ordering.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Checks the structural invariants for a problem of dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.ordering.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "plan covers {} variables, problem has {d}",
                self.ordering.len()
            )));
        }
        let mut position = vec![usize::MAX; d];
        for (k, &i) in self.ordering.iter().enumerate() {
            if i >= d || position[i] != usize::MAX {
                return Err(Error::invalid("ordering is not a permutation"));
            }
            position[i] = k;
        }
        if self.cond_sets.len() != self.blocks.len() {
            return Err(Error::invalid("one conditioning set per block is required"));
        }
        let mut offset = 0;
        for (b, (block, cond)) in self.blocks.iter().zip(&self.cond_sets).enumerate() {
            if block.is_empty() || block.len() > self.p {
                return Err(Error::invalid(format!(
                    "block {b} has size {}",
                    block.len()
                )));
            }
            if self.ordering.get(offset..offset + block.len()) != Some(block.as_slice()) {
                return Err(Error::invalid(format!(
                    "block {b} is not a consecutive run of the ordering"
                )));
            }
            let limit = match self.strategy {
                NeighborStrategy::RandomShared => self.m,
                _ => self.m * block.len(),
            };
            if cond.len() > limit {
                return Err(Error::invalid(format!(
                    "conditioning set {b} exceeds {limit} members"
                )));
            }
            let unique: HashSet<_> = cond.iter().collect();
            if unique.len() != cond.len() {
                return Err(Error::invalid(format!(
                    "conditioning set {b} repeats an index"
                )));
            }
            for &c in cond {
                if c >= d || block.contains(&c) {
                    return Err(Error::invalid(format!(
                        "conditioning set {b} has invalid member {c}"
                    )));
                }
                if self.options.predecessors_only && position[c] >= offset {
                    return Err(Error::invalid(format!(
                        "conditioning set {b} contains {c}, which does not precede the block"
                    )));
                }
            }
            offset += block.len();
        }
        if offset != d {
            return Err(Error::invalid("blocks do not cover every variable"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a plan for a problem of dimension `d`.
    pub fn from_json(text: &str, d: usize) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate(d)?;
        Ok(plan)
    }
}
