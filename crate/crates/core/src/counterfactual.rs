//! Top-K counterfactual retrieval from real nodes.
//!
//! For node `v` and pseudo-attribute column `i`, a counterfactual is a node `j`
//! from the candidate pool with the same pseudo-label as `v` and the opposite
//! bit in column `i`. The `K` nearest such nodes under squared euclidean
//! distance are kept, ties broken by ascending node id.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::matrix::{squared_distance, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfEntry {
    pub node: usize,
    pub distance: f64,
}

/// Inputs shared by the indexed search and the brute-force oracle.
#[derive(Debug, Clone, Copy)]
pub struct CfQuery<'a> {
    pub embeddings: &'a DenseMatrix,
    /// Row-major `num_nodes × num_columns` bits.
    pub bits: &'a [u8],
    pub num_columns: usize,
    /// Inactive (degenerate) columns get empty slots.
    pub active: &'a [bool],
    pub labels: &'a [u8],
    pub k: usize,
    pub pool: &'a [usize],
}

impl CfQuery<'_> {
    fn bit(&self, node: usize, column: usize) -> u8 {
        self.bits[node * self.num_columns + column]
    }

    fn sorted_pool(&self) -> Vec<usize> {
        let mut pool = self.pool.to_vec();
        pool.sort_unstable();
        pool.dedup();
        pool
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfIndex {
    pub k: usize,
    pub num_nodes: usize,
    pub num_columns: usize,
    /// Fingerprint of the embedding matrix the index was built from.
    pub snapshot_id: u64,
    slots: Vec<Vec<CfEntry>>,
}

impl CfIndex {
    pub fn slot(&self, node: usize, column: usize) -> &[CfEntry] {
        &self.slots[node * self.num_columns + column]
    }

    /// Fewer than `k` counterfactuals were available (includes empty slots).
    pub fn is_shortfall(&self, node: usize, column: usize) -> bool {
        self.slot(node, column).len() < self.k
    }

    pub fn shortfall_count(&self) -> usize {
        self.slots.iter().filter(|s| s.len() < self.k).count()
    }

    pub fn empty_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_empty()).count()
    }

    /// `node,column,rank,cf_node,distance`, one row per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,column,rank,cf_node,distance\n");
        for v in 0..self.num_nodes {
            for c in 0..self.num_columns {
                for (rank, e) in self.slot(v, c).iter().enumerate() {
                    out.push_str(&format!("{v},{c},{rank},{},{}\n", e.node, e.distance));
                }
            }
        }
        out
    }
}

/// Stable 64-bit fingerprint of a matrix's shape and exact bit pattern.
pub fn snapshot_fingerprint(m: &DenseMatrix) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update((m.rows() as u64).to_le_bytes());
    hasher.update((m.cols() as u64).to_le_bytes());
    for v in m.data() {
        hasher.update(v.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn by_distance_then_id(a: &CfEntry, b: &CfEntry) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| a.node.cmp(&b.node))
}

/// Indexed search: per query node, distances to same-label pool members are
/// computed and sorted once, then every column takes the first `k` members
/// with the opposite bit. Parallel over query nodes; output is deterministic.
pub fn find_counterfactuals(query: &CfQuery<'_>) -> CfIndex {
    let n = query.embeddings.rows();
    let cols = query.num_columns;
    let pool = query.sorted_pool();
    let slots: Vec<Vec<Vec<CfEntry>>> = (0..n)
        .into_par_iter()
        .map(|v| {
            let hv = query.embeddings.row(v);
            let mut ranked: Vec<CfEntry> = pool
                .iter()
                .filter(|&&j| j != v && query.labels[j] == query.labels[v])
                .map(|&j| CfEntry {
                    node: j,
                    distance: squared_distance(hv, query.embeddings.row(j)),
                })
                .collect();
            ranked.sort_by(by_distance_then_id);
            (0..cols)
                .map(|c| {
                    if !query.active[c] {
                        return Vec::new();
                    }
                    let own = query.bit(v, c);
                    ranked
                        .iter()
                        .filter(|e| query.bit(e.node, c) != own)
                        .take(query.k)
                        .copied()
                        .collect()
                })
                .collect()
        })
        .collect();
    CfIndex {
        k: query.k,
        num_nodes: n,
        num_columns: cols,
        snapshot_id: snapshot_fingerprint(query.embeddings),
        slots: slots.into_iter().flatten().collect(),
    }
}

/// Exhaustive oracle: every `(node, column)` slot is filled by an independent
/// scan of the whole pool.
pub fn brute_force_counterfactuals(query: &CfQuery<'_>) -> CfIndex {
    let n = query.embeddings.rows();
    let cols = query.num_columns;
    let pool = query.sorted_pool();
    let mut slots = Vec::with_capacity(n * cols);
    for v in 0..n {
        for c in 0..cols {
            if !query.active[c] {
                slots.push(Vec::new());
                continue;
            }
            let mut candidates = Vec::new();
            for &j in &pool {
                if j == v
                    || query.labels[j] != query.labels[v]
                    || query.bit(j, c) == query.bit(v, c)
                {
                    continue;
                }
                candidates.push(CfEntry {
                    node: j,
                    distance: squared_distance(query.embeddings.row(v), query.embeddings.row(j)),
                });
            }
            candidates.sort_by(by_distance_then_id);
            candidates.truncate(query.k);
            slots.push(candidates);
        }
    }
    CfIndex {
        k: query.k,
        num_nodes: n,
        num_columns: cols,
        snapshot_id: snapshot_fingerprint(query.embeddings),
        slots,
    }
}
