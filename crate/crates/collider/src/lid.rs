//! Local intrinsic dimensionality: MLE estimation over same-class feature
//! batches, moving-average smoothing, and top-LID selection for permanent
//! elimination.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use crate::error::{ColliderError, Result};

/// MLE estimator over nearest-neighbor distances.
///
/// For a sample with sorted neighbor distances `r_1 <= ... <= r_N` the
/// estimate is `-(1/N * sum ln(r_i / r_N))^{-1}`. Zero distances are lifted
/// to `eps` before the log; a vanishing log-sum (all neighbors equidistant)
/// clamps to `lid_max`.
#[derive(Debug, Clone, Copy)]
pub struct LidEstimator {
    pub num_neighbors: usize,
    pub eps: f64,
    pub lid_max: f64,
}

impl LidEstimator {
    pub fn new(num_neighbors: usize) -> Self {
        LidEstimator {
            num_neighbors,
            eps: 1e-12,
            lid_max: 1e6,
        }
    }

    /// Estimate from one sample's sorted neighbor distances.
    pub fn from_neighbor_distances(&self, sorted: &[f64]) -> f64 {
        let n = sorted.len();
        let r_max = sorted[n - 1].max(self.eps);
        let mut sum = 0.0;
        for &r in sorted {
            sum += (r.max(self.eps) / r_max).ln();
        }
        sum /= n as f64;
        if sum == 0.0 {
            return self.lid_max;
        }
        (-1.0 / sum).min(self.lid_max)
    }

    /// Per-sample LID over one class batch. Each sample's neighbors are the
    /// `num_neighbors` nearest of the *other* samples in the batch, under
    /// Euclidean distance in feature space.
    pub fn estimate(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = features.len();
        if self.num_neighbors < 2 {
            return Err(ColliderError::Parameter("need at least 2 neighbors".into()));
        }
        if n <= self.num_neighbors {
            return Err(ColliderError::Parameter(format!(
                "batch of {n} too small for {} neighbors",
                self.num_neighbors
            )));
        }
        for f in features {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(ColliderError::Parameter("non-finite feature".into()));
            }
        }

        let mut out = Vec::with_capacity(n);
        let mut dists = vec![0.0f64; n];
        for i in 0..n {
            for (j, f) in features.iter().enumerate() {
                let mut acc = 0.0;
                for (a, b) in features[i].iter().zip(f) {
                    let d = a - b;
                    acc += d * d;
                }
                dists[j] = acc.sqrt();
            }
            dists.swap(i, n - 1); // drop self-distance
            let k = self.num_neighbors;
            let m = n - 1;
            dists[..m].select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
            let mut nearest: Vec<f64> = dists[..k].to_vec();
            nearest.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.push(self.from_neighbor_distances(&nearest));
        }
        Ok(out)
    }
}

/// Moving-average smoothing of per-sample LID values over the last `window`
/// epochs. Samples absent from an update keep their prior buffers.
#[derive(Debug, Clone)]
pub struct LidTracker {
    window: usize,
    buffers: BTreeMap<usize, VecDeque<f64>>,
    last_epoch: BTreeMap<usize, usize>,
}

impl LidTracker {
    pub fn new(ids: impl IntoIterator<Item = usize>, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(ColliderError::Parameter("window must be >= 1".into()));
        }
        Ok(LidTracker {
            window,
            buffers: ids.into_iter().map(|id| (id, VecDeque::new())).collect(),
            last_epoch: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    /// Appends this epoch's estimates to the per-sample ring buffers.
    pub fn update(&mut self, estimates: &[(usize, f64)], epoch: usize) -> Result<()> {
        for &(id, value) in estimates {
            let buf = self.buffers.get_mut(&id).ok_or_else(|| {
                ColliderError::Consistency(format!("unknown sample id {id} in LID update"))
            })?;
            if buf.len() == self.window {
                buf.pop_front();
            }
            buf.push_back(value);
            self.last_epoch.insert(id, epoch);
        }
        Ok(())
    }

    /// Arithmetic mean of each sample's buffer. Samples with no estimates yet
    /// are omitted.
    pub fn smoothed(&self) -> BTreeMap<usize, f64> {
        self.buffers
            .iter()
            .filter(|(_, buf)| !buf.is_empty())
            .map(|(&id, buf)| (id, buf.iter().sum::<f64>() / buf.len() as f64))
            .collect()
    }

    pub fn smoothed_for(&self, id: usize) -> Option<f64> {
        self.buffers.get(&id).and_then(|buf| {
            if buf.is_empty() {
                None
            } else {
                Some(buf.iter().sum::<f64>() / buf.len() as f64)
            }
        })
    }

    /// Drops samples permanently (elimination bookkeeping).
    pub fn remove(&mut self, ids: &[usize]) {
        for id in ids {
            self.buffers.remove(id);
            self.last_epoch.remove(id);
        }
    }

    /// Ids of the `m` largest smoothed values, ties broken by smaller id.
    pub fn top_lid_ids(&self, m: usize) -> Result<Vec<usize>> {
        let smoothed = self.smoothed();
        if m > smoothed.len() {
            return Err(ColliderError::Parameter(format!(
                "requested top {m} of {} smoothed samples",
                smoothed.len()
            )));
        }
        let mut ranked: Vec<(usize, f64)> = smoothed.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| a.0.cmp(&b.0))
        });
        Ok(ranked.into_iter().take(m).map(|(id, _)| id).collect())
    }
}
