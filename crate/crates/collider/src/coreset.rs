//! Per-class coreset selection as facility-location submodular maximization.
//!
//! One class's samples become elements with pairwise gradient-proxy distances
//! `d_ij` and per-element penalties `p_j` (the scaled LID term). With
//! `d0 > max_ij (d_ij + p_j)` the set function
//! `F(S) = sum_i max_{j in S} (d0 - d_ij - p_j)` is monotone submodular, and
//! a lazy greedy (Minoux) maximizer under the cardinality budget recovers the
//! usual `1 - 1/e` guarantee.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{ColliderError, Result};

/// One class's selection instance.
#[derive(Debug, Clone)]
pub struct CoresetProblem {
    /// Stable sample ids, one per element.
    pub ids: Vec<usize>,
    /// Dense `n x n` symmetric distance matrix, row-major, zero diagonal.
    pub dist: Vec<f64>,
    /// Non-negative per-element penalties added to every column `j`.
    pub penalties: Vec<f64>,
    /// Number of elements to select.
    pub k_count: usize,
}

impl CoresetProblem {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.ids.len() + j]
    }
}

/// Greedy selection result.
#[derive(Debug, Clone)]
pub struct CoresetSolution {
    /// Selected sample ids in selection order.
    pub selected: Vec<usize>,
    /// `F(S)` at the end of the run.
    pub objective: f64,
    /// For each element index, the id of the selected element covering it.
    pub assignment: Vec<usize>,
}

/// Builds the instance from per-sample gradient proxies:
/// `d_ij = ||g_i - g_j||_2`, budget `max(1, round(ratio * n))`.
pub fn build_problem(
    ids: &[usize],
    proxies: &[Vec<f64>],
    penalties: &[f64],
    coreset_ratio: f64,
) -> Result<CoresetProblem> {
    let n = ids.len();
    if n == 0 {
        return Err(ColliderError::Parameter("empty class".into()));
    }
    if proxies.len() != n || penalties.len() != n {
        return Err(ColliderError::Parameter(
            "ids, proxies, and penalties must have equal length".into(),
        ));
    }
    if !(0.0 < coreset_ratio && coreset_ratio <= 1.0) {
        return Err(ColliderError::Parameter(format!(
            "coreset_ratio must be in (0, 1], got {coreset_ratio}"
        )));
    }
    if penalties.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(ColliderError::Parameter("penalties must be finite and non-negative".into()));
    }

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for (a, b) in proxies[i].iter().zip(&proxies[j]) {
                let d = a - b;
                acc += d * d;
            }
            let d = acc.sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let k_count = ((coreset_ratio * n as f64).round() as usize).clamp(1, n);
    Ok(CoresetProblem {
        ids: ids.to_vec(),
        dist,
        penalties: penalties.to_vec(),
        k_count,
    })
}

/// The per-problem constant upper bound: `max_ij (d_ij + p_j) + 1`, so every
/// score `d0 - d_ij - p_j` is strictly positive.
pub fn default_d0(p: &CoresetProblem) -> f64 {
    let n = p.len();
    let mut max = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            max = max.max(p.d(i, j) + p.penalties[j]);
        }
    }
    max + 1.0
}

/// Recomputes `F(S)` from scratch for a given selection.
pub fn objective_value(p: &CoresetProblem, d0: f64, selected_ids: &[usize]) -> f64 {
    let n = p.len();
    let sel_idx: Vec<usize> = selected_ids
        .iter()
        .map(|id| p.ids.iter().position(|x| x == id).expect("id in problem"))
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        let mut best = 0.0f64;
        for &j in &sel_idx {
            best = best.max(d0 - p.d(i, j) - p.penalties[j]);
        }
        total += best;
    }
    total
}

struct HeapEntry {
    gain: f64,
    index: usize,
    stamp: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.gain == other.gain && self.index == other.index
    }
}
impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on gain; ties resolve toward the smaller element index
        self.gain
            .partial_cmp(&other.gain)
            .unwrap()
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Lazy greedy with the default `d0`.
pub fn facility_location_greedy(p: &CoresetProblem) -> Result<CoresetSolution> {
    facility_location_greedy_with_d0(p, default_d0(p))
}

/// Lazy greedy (Minoux): stale marginal-gain upper bounds live in a max-heap
/// and are recomputed only when popped. Submodularity makes a bound that is
/// fresh at the top of the heap exact, so the selection matches plain greedy.
pub fn facility_location_greedy_with_d0(p: &CoresetProblem, d0: f64) -> Result<CoresetSolution> {
    let n = p.len();
    if n == 0 {
        return Err(ColliderError::Parameter("empty problem".into()));
    }
    if !(1..=n).contains(&p.k_count) {
        return Err(ColliderError::Parameter(format!(
            "budget {} out of range for {n} elements",
            p.k_count
        )));
    }

    let score = |i: usize, j: usize| d0 - p.d(i, j) - p.penalties[j];
    // coverage[i]: best score any selected element gives i (0 before any)
    let mut coverage = vec![0.0f64; n];
    let mut assignment_idx = vec![usize::MAX; n];
    let gain = |j: usize, coverage: &[f64]| -> f64 {
        let mut g = 0.0;
        for i in 0..n {
            let s = score(i, j);
            if s > coverage[i] {
                g += s - coverage[i];
            }
        }
        g
    };

    let mut heap: BinaryHeap<HeapEntry> = (0..n)
        .map(|j| HeapEntry {
            gain: gain(j, &coverage),
            index: j,
            stamp: 0,
        })
        .collect();

    let mut selected_idx = Vec::with_capacity(p.k_count);
    let mut objective = 0.0;
    while selected_idx.len() < p.k_count {
        let top = heap.pop().expect("heap holds all unselected elements");
        if selected_idx.contains(&top.index) {
            continue;
        }
        if top.stamp == selected_idx.len() {
            objective += top.gain;
            for i in 0..n {
                let s = score(i, top.index);
                if s > coverage[i] {
                    coverage[i] = s;
                    assignment_idx[i] = top.index;
                }
            }
            selected_idx.push(top.index);
        } else {
            heap.push(HeapEntry {
                gain: gain(top.index, &coverage),
                index: top.index,
                stamp: selected_idx.len(),
            });
        }
    }

    Ok(CoresetSolution {
        selected: selected_idx.iter().map(|&j| p.ids[j]).collect(),
        objective,
        assignment: assignment_idx
            .iter()
            .map(|&j| p.ids[if j == usize::MAX { 0 } else { j }])
            .collect(),
    })
}

/// Solves each class independently and returns the union of selections,
/// sorted by id.
pub fn select_per_class(problems: &[CoresetProblem]) -> Result<Vec<usize>> {
    let mut union = Vec::new();
    for p in problems {
        union.extend(facility_location_greedy(p)?.selected);
    }
    union.sort_unstable();
    Ok(union)
}

/// Reference implementations used to validate the lazy greedy solver: a
/// non-lazy greedy, an exhaustive optimum, and a random problem generator.
pub mod test_support {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    /// Non-lazy reference greedy: recomputes every marginal gain each round.
    pub fn plain_greedy(p: &CoresetProblem, d0: f64) -> Vec<usize> {
        let n = p.len();
        let score = |i: usize, j: usize| d0 - p.d(i, j) - p.penalties[j];
        let mut coverage = vec![0.0f64; n];
        let mut selected = Vec::new();
        while selected.len() < p.k_count {
            let mut best: Option<(f64, usize)> = None;
            for j in 0..n {
                if selected.contains(&j) {
                    continue;
                }
                let mut g = 0.0;
                for i in 0..n {
                    let s = score(i, j);
                    if s > coverage[i] {
                        g += s - coverage[i];
                    }
                }
                let better = match best {
                    None => true,
                    Some((bg, _)) => g > bg,
                };
                if better {
                    best = Some((g, j));
                }
            }
            let (_, j) = best.unwrap();
            for i in 0..n {
                let s = score(i, j);
                if s > coverage[i] {
                    coverage[i] = s;
                }
            }
            selected.push(j);
        }
        selected.into_iter().map(|j| p.ids[j]).collect()
    }

    /// Exhaustive optimum over all subsets of size <= k.
    pub fn brute_force_opt(p: &CoresetProblem, d0: f64) -> f64 {
        let n = p.len();
        let mut best = 0.0f64;
        for mask in 1u32..(1 << n) {
            if (mask.count_ones() as usize) > p.k_count {
                continue;
            }
            let ids: Vec<usize> = (0..n)
                .filter(|&j| mask & (1 << j) != 0)
                .map(|j| p.ids[j])
                .collect();
            best = best.max(objective_value(p, d0, &ids));
        }
        best
    }

    pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, k: usize) -> CoresetProblem {
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = rng.gen_range(0.0..4.0);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let penalties = (0..n).map(|_| rng.gen_range(0.0..1.5)).collect();
        CoresetProblem {
            ids: (0..n).collect(),
            dist,
            penalties,
            k_count: k,
        }
    }
}
