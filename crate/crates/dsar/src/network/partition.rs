//! Uniform random node partitioning.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Disjoint cover of the node set by K workers.
#[derive(Debug, Clone)]
pub struct Partition {
    assignments: Vec<u32>,
    sets: Vec<Vec<u32>>,
}

impl Partition {
    /// Build from explicit worker assignments (one per node).
    pub fn from_assignments(assignments: Vec<u32>, k_workers: usize) -> Result<Self> {
        let mut sets = vec![Vec::new(); k_workers];
        for (node, &k) in assignments.iter().enumerate() {
            if k as usize >= k_workers {
                return Err(Error::InvalidConfig(format!(
                    "node {node} assigned to worker {k} >= K = {k_workers}"
                )));
            }
            sets[k as usize].push(node as u32);
        }
        for set in &mut sets {
            set.sort_unstable();
        }
        Ok(Partition { assignments, sets })
    }

    pub fn k_workers(&self) -> usize {
        self.sets.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    /// Node set S_k, ascending global ids.
    pub fn set(&self, k: usize) -> &[u32] {
        &self.sets[k]
    }

    pub fn size(&self, k: usize) -> usize {
        self.sets[k].len()
    }

    /// alpha_k = N_k / N.
    pub fn alpha(&self, k: usize) -> f64 {
        self.sets[k].len() as f64 / self.assignments.len() as f64
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..self.k_workers()).map(|k| self.alpha(k)).collect()
    }
}

/// Random permutation split into K nearly equal sets (sizes differ by at most
/// one); deterministic under a fixed seed.
pub fn partition_uniform(n_nodes: usize, k_workers: usize, seed: u64) -> Result<Partition> {
    if k_workers == 0 {
        return Err(Error::InvalidConfig("k_workers must be >= 1".into()));
    }
    if k_workers > n_nodes {
        return Err(Error::InvalidConfig(format!(
            "k_workers = {k_workers} exceeds n_nodes = {n_nodes}"
        )));
    }
    let mut rng = rng::derive_rng(seed, &[rng::purpose::PARTITION]);
    let mut order: Vec<u32> = (0..n_nodes as u32).collect();
    order.shuffle(&mut rng);

    let base = n_nodes / k_workers;
    let extra = n_nodes % k_workers;
    let mut assignments = vec![0u32; n_nodes];
    let mut cursor = 0usize;
    for k in 0..k_workers {
        let take = base + usize::from(k < extra);
        for &node in &order[cursor..cursor + take] {
            assignments[node as usize] = k as u32;
        }
        cursor += take;
    }
    Partition::from_assignments(assignments, k_workers)
}
