//! Release acceptance suite. Each test checks one acceptance criterion and
//! prints a single `ACCEPTANCE <n> PASS|FAIL` line (visible with
//! `cargo test --test acceptance -- --nocapture`, and always on failure).
//!
//! The end-to-end criteria (5-7) share one cached set of training runs so the
//! whole suite stays within the experiment's 15-minute budget.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use collider::config::{DataSource, ExperimentConfig};
use collider::coreset::test_support::{brute_force_opt, plain_greedy, random_problem};
use collider::coreset::{default_d0, facility_location_greedy};
use collider::data::Sample;
use collider::experiment::run_seed;
use collider::lid::LidEstimator;
use collider::model::{ModelState, TrainBatch};
use collider::poison::{PoisonSpec, TriggerKind};
use collider::trainer::{elimination_schedule, Mode};

fn report(criterion: usize, name: &str, pass: bool) {
    println!(
        "ACCEPTANCE {criterion} {}: {name}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion {criterion} failed: {name}");
}

// ---------------------------------------------------------------------------
// 1. Greedy optimality ratio and lazy/plain equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_greedy_optimality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ratio_bound = 1.0 - 1.0 / std::f64::consts::E;

    let mut ratio_ok = true;
    for _ in 0..120 {
        let n = rng.gen_range(3..=10);
        let k = rng.gen_range(1..=4.min(n));
        let p = random_problem(&mut rng, n, k);
        let d0 = default_d0(&p);
        let sol = facility_location_greedy(&p).unwrap();
        let opt = brute_force_opt(&p, d0);
        if sol.objective < ratio_bound * opt - 1e-9 {
            ratio_ok = false;
        }
    }

    let mut lazy_matches_plain = true;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=14);
        let k = rng.gen_range(1..=n);
        let p = random_problem(&mut rng, n, k);
        let d0 = default_d0(&p);
        let lazy: BTreeSet<usize> = facility_location_greedy(&p)
            .unwrap()
            .selected
            .into_iter()
            .collect();
        let plain: BTreeSet<usize> = plain_greedy(&p, d0).into_iter().collect();
        if lazy != plain {
            lazy_matches_plain = false;
        }
    }

    let in_time = start.elapsed().as_secs_f64() < 30.0;
    report(
        1,
        "lazy greedy reaches (1-1/e) of optimum and equals plain greedy",
        ratio_ok && lazy_matches_plain && in_time,
    );
}

// ---------------------------------------------------------------------------
// 2. LID estimator on uniform cubes, plus isometry and scale invariance
// ---------------------------------------------------------------------------

fn rotate_pairs(points: &[Vec<f64>], angle: f64) -> Vec<Vec<f64>> {
    // Orthogonal map: rotate consecutive coordinate pairs, negate a leftover
    // odd coordinate, then translate. Distance-preserving in any dimension.
    let (s, c) = angle.sin_cos();
    points
        .iter()
        .map(|p| {
            let mut q = p.clone();
            let mut i = 0;
            while i + 1 < q.len() {
                let (a, b) = (q[i], q[i + 1]);
                q[i] = c * a - s * b;
                q[i + 1] = s * a + c * b;
                i += 2;
            }
            if q.len() % 2 == 1 {
                let last = q.len() - 1;
                q[last] = -q[last];
            }
            for (j, x) in q.iter_mut().enumerate() {
                *x += 0.37 * (j as f64 + 1.0);
            }
            q
        })
        .collect()
}

#[test]
fn criterion_2_lid_cube_recovery() {
    let start = Instant::now();
    let est = LidEstimator::new(60);
    let mut pass = true;

    for &d in &[1usize, 2, 4] {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + d as u64);
        let points: Vec<Vec<f64>> = (0..2000)
            .map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let lids = est.estimate(&points).unwrap();
        let mut sorted = lids.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        if (median - d as f64).abs() > 0.4 * d as f64 {
            pass = false;
        }

        let rotated = est.estimate(&rotate_pairs(&points, 0.83)).unwrap();
        let scaled_pts: Vec<Vec<f64>> = points
            .iter()
            .map(|p| p.iter().map(|x| 3.7 * x).collect())
            .collect();
        let scaled = est.estimate(&scaled_pts).unwrap();
        for i in 0..lids.len() {
            if (lids[i] - rotated[i]).abs() > 1e-9 || (lids[i] - scaled[i]).abs() > 1e-9 {
                pass = false;
            }
        }
    }

    let in_time = start.elapsed().as_secs_f64() < 60.0;
    report(
        2,
        "cube LID median within 40% of dimension; isometry/scale invariant",
        pass && in_time,
    );
}

// ---------------------------------------------------------------------------
// 3. LID separation: off-manifold cluster has higher LID than clean manifold
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_lid_separation() {
    let est = LidEstimator::new(40);
    let ambient = 8usize;
    let manifold = 3usize;
    let mut successes = 0;

    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        // clean: dense cluster on a low-dimensional linear subspace
        let mut pts: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let mut p = vec![0.0; ambient];
                for x in p.iter_mut().take(manifold) {
                    *x = rng.gen_range(0.0..1.0);
                }
                p
            })
            .collect();
        // poisoned: sparse cluster spread across the full ambient space
        pts.extend((0..60).map(|_| {
            (0..ambient)
                .map(|_| rng.gen_range(0.0..1.0))
                .collect::<Vec<f64>>()
        }));

        let lids = est.estimate(&pts).unwrap();
        let median = |xs: &mut Vec<f64>| {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xs[xs.len() / 2]
        };
        let clean = median(&mut lids[..400].to_vec());
        let poisoned = median(&mut lids[400..].to_vec());
        if poisoned > clean {
            successes += 1;
        }
    }

    report(
        3,
        "poisoned median LID exceeds clean median LID in >=95% of trials",
        successes >= 48,
    );
}

// ---------------------------------------------------------------------------
// 4. Gradient correctness: finite differences and the proxy identity
// ---------------------------------------------------------------------------

fn toy_samples(n: usize, dim: usize, classes: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Sample {
            pixels: (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect(),
            label: rng.gen_range(0..classes),
            id: i,
            is_poisoned: false,
        })
        .collect()
}

#[test]
fn criterion_4_gradient_correctness() {
    let mut fd_ok = true;
    for seed in 0..3u64 {
        let m = ModelState::init(6, &[5, 4], 3, 40 + seed);
        let samples = toy_samples(5, 6, 3, seed);
        let refs: Vec<&Sample> = samples.iter().collect();
        let batch = TrainBatch::from_samples(&refs, 3);
        let (_, grads) = m.loss_and_grad(&batch).unwrap();
        let eps = 1e-5;
        for li in 0..m.layers.len() {
            let nw = m.layers[li].w.len();
            let nb = m.layers[li].b.len();
            for pi in 0..nw + nb {
                let mut plus = m.clone();
                let mut minus = m.clone();
                if pi < nw {
                    plus.layers[li].w[pi] += eps;
                    minus.layers[li].w[pi] -= eps;
                } else {
                    plus.layers[li].b[pi - nw] += eps;
                    minus.layers[li].b[pi - nw] -= eps;
                }
                let fd = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * eps);
                let g = if pi < nw {
                    grads[li].w[pi]
                } else {
                    grads[li].b[pi - nw]
                };
                let denom = fd.abs().max(g.abs()).max(1e-8);
                if (fd - g).abs() / denom > 1e-4 {
                    fd_ok = false;
                }
            }
        }
    }

    // proxy identity: pairwise final-layer weight-gradient distances equal
    // the distances induced by (proxy x penultimate feature) outer products
    let mut proxy_ok = true;
    let m = ModelState::init(5, &[6], 4, 77);
    let samples = toy_samples(6, 5, 4, 9);
    let refs: Vec<&Sample> = samples.iter().collect();
    let proxies = m.gradient_proxy(&refs).unwrap();
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.pixels.clone()).collect();
    let feats = m.forward(&inputs).unwrap().penultimate;
    let final_grad = |i: usize| -> Vec<f64> {
        let batch = TrainBatch::from_samples(&[refs[i]], 4);
        let (_, grads) = m.loss_and_grad(&batch).unwrap();
        grads.last().unwrap().w.clone()
    };
    for i in 0..refs.len() {
        for j in (i + 1)..refs.len() {
            let gi = final_grad(i);
            let gj = final_grad(j);
            let full: f64 = gi
                .iter()
                .zip(&gj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let mut acc = 0.0;
            for a in 0..4 {
                for b in 0..feats[i].len() {
                    let d = proxies[i][a] * feats[i][b] - proxies[j][a] * feats[j][b];
                    acc += d * d;
                }
            }
            if (acc.sqrt() - full).abs() > 1e-6 {
                proxy_ok = false;
            }
        }
    }

    report(
        4,
        "backprop matches finite differences; proxy distance identity holds",
        fd_ok && proxy_ok,
    );
}

// ---------------------------------------------------------------------------
// 5-7. End-to-end desk-scale experiment (shared runs)
// ---------------------------------------------------------------------------

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const WORKERS: usize = 2;

/// Per-seed end results of one training configuration.
struct ModeResults {
    acc: Vec<f64>,
    asr: Vec<f64>,
    filtered_last10: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn e2e_config(coreset_ratio: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.source = DataSource::Synthetic {
        classes: 10,
        per_class: 500,
        image_side: 16,
    };
    cfg.data.val_fraction = 0.04;
    let mut spec = PoisonSpec::new(TriggerKind::PatchChecker, 5, 0.10);
    // weaker patch: vanilla training still memorizes it fully, while the
    // brief pre-filtering exposure is not enough to install the backdoor
    spec.patch_intensity = 0.5;
    cfg.poison.spec = spec;
    cfg.train.total_epochs = 60;
    cfg.train.coreset_ratio = coreset_ratio;
    cfg.train.lid_start_epoch = 3;
    cfg.train.lid_neighbors = 60;
    cfg.train.lambda = 0.01;
    cfg.train.lr = 0.01;
    cfg.output.seeds = SEEDS.to_vec();
    cfg
}

fn run_mode(cfg: &ExperimentConfig, mode: Mode) -> ModeResults {
    let mut out = ModeResults {
        acc: Vec::new(),
        asr: Vec::new(),
        filtered_last10: Vec::new(),
    };
    for &seed in &SEEDS {
        let run = run_seed(cfg, mode, seed, WORKERS).unwrap();
        out.acc.push(run.acc);
        out.asr.push(run.asr);
        out.filtered_last10.push(run.filtered_last10);
    }
    out
}

struct BaseRuns {
    vanilla: ModeResults,
    collider: ModeResults,
    coreset_only: ModeResults,
    elapsed_secs: f64,
}

fn base_runs() -> &'static BaseRuns {
    static CELL: OnceLock<BaseRuns> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let cfg = e2e_config(0.3);
        let vanilla = run_mode(&cfg, Mode::Vanilla);
        let collider = run_mode(&cfg, Mode::Collider);
        let coreset_only = run_mode(&cfg, Mode::CoresetOnly);
        BaseRuns {
            vanilla,
            collider,
            coreset_only,
            elapsed_secs: start.elapsed().as_secs_f64(),
        }
    })
}

/// (collider, coreset-only) results per sweep ratio, k=0.3 shared with base.
fn sweep_runs() -> &'static Vec<(f64, ModeResults, ModeResults)> {
    static CELL: OnceLock<Vec<(f64, ModeResults, ModeResults)>> = OnceLock::new();
    CELL.get_or_init(|| {
        [0.2, 0.4, 0.5]
            .iter()
            .map(|&k| {
                let cfg = e2e_config(k);
                (k, run_mode(&cfg, Mode::Collider), run_mode(&cfg, Mode::CoresetOnly))
            })
            .collect()
    })
}

#[test]
fn criterion_5_end_to_end_defense() {
    let base = base_runs();
    let vanilla_asr = mean(&base.vanilla.asr);
    let collider_asr = mean(&base.collider.asr);
    let acc_gap = (mean(&base.vanilla.acc) - mean(&base.collider.acc)).abs();
    let filtered = mean(&base.collider.filtered_last10);

    let pass = vanilla_asr >= 0.80
        && collider_asr <= 0.20
        && acc_gap <= 0.15
        && filtered >= 0.8
        && base.elapsed_secs < 900.0;
    println!(
        "  vanilla_asr={vanilla_asr:.4} collider_asr={collider_asr:.4} \
         acc_gap={acc_gap:.4} filtered_last10={filtered:.4} elapsed={:.0}s",
        base.elapsed_secs
    );
    report(
        5,
        "vanilla learns the backdoor, collider does not, accuracy preserved",
        pass,
    );
}

#[test]
fn criterion_6_ablation_ordering() {
    let base = base_runs();
    let mut wins = 0;
    for s in 0..SEEDS.len() {
        let filt_ok =
            base.collider.filtered_last10[s] >= base.coreset_only.filtered_last10[s] - 1e-12;
        let asr_ok = base.collider.asr[s] <= base.coreset_only.asr[s] + 1e-12;
        if filt_ok && asr_ok {
            wins += 1;
        }
    }
    report(
        6,
        "collider beats coreset-only on filtering and ASR in >=4/5 seeds",
        wins >= 4,
    );
}

#[test]
fn criterion_7_coreset_size_tradeoff() {
    let base = base_runs();
    let sweep = sweep_runs();

    // assemble (k, collider asr, coreset-only asr) in ascending k
    let mut points: Vec<(f64, f64, f64)> = vec![(
        0.3,
        mean(&base.collider.asr),
        mean(&base.coreset_only.asr),
    )];
    for (k, collider, coreset_only) in sweep.iter() {
        points.push((*k, mean(&collider.asr), mean(&coreset_only.asr)));
    }
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let inversions = points
        .windows(2)
        .filter(|w| w[1].1 < w[0].1 - 1e-12)
        .count();
    let dominated = points.iter().all(|&(_, col, cor)| col <= cor + 1e-12);
    for &(k, col, cor) in &points {
        println!("  k={k:.1} collider_asr={col:.4} coreset_asr={cor:.4}");
    }
    report(
        7,
        "collider ASR non-decreasing in k (<=1 inversion) and below coreset-only",
        inversions <= 1 && dominated,
    );
}

// ---------------------------------------------------------------------------
// 8. Determinism: byte-identical CSVs across reruns and worker counts
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_deterministic_output() {
    let mut cfg = ExperimentConfig::default();
    cfg.data.source = DataSource::Synthetic {
        classes: 4,
        per_class: 60,
        image_side: 8,
    };
    cfg.poison.spec = PoisonSpec::new(TriggerKind::PatchChecker, 1, 0.10);
    cfg.train.total_epochs = 8;
    cfg.train.lid_start_epoch = 2;
    cfg.train.lid_neighbors = 10;
    cfg.train.batch_size = 32;
    cfg.train.mode = Mode::Collider;
    cfg.output.seeds = vec![0, 1];

    let mut outputs = Vec::new();
    for &workers in &[1usize, 3, 1] {
        let mut all = String::new();
        for &seed in &cfg.output.seeds.clone() {
            let run = run_seed(&cfg, Mode::Collider, seed, workers).unwrap();
            all.push_str(&run.csv);
        }
        outputs.push(all);
    }
    let pass = outputs[0] == outputs[1] && outputs[0] == outputs[2];
    report(8, "rerun CSVs byte-identical regardless of worker count", pass);
}

// ---------------------------------------------------------------------------
// 9. Elimination schedule bookkeeping
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_elimination_bookkeeping() {
    let (n, k, total, lid_start) = (5000usize, 0.3f64, 120usize, 30usize);
    let plan = elimination_schedule(n, k, total, lid_start);
    let budget = (k * n as f64).round() as usize;
    let target = ((1.0 - k) * n as f64).floor();

    let first_ok = plan.first() == Some(&38);
    let total_removed: usize = plan.iter().sum();
    let total_ok = (total_removed as f64 - target).abs() <= 0.01 * target;

    let mut live = n;
    let mut live_ok = true;
    for &m in &plan {
        live -= m;
        if live < budget {
            live_ok = false;
        }
    }
    println!(
        "  first={:?} total_removed={total_removed} target={target} final_live={live}",
        plan.first()
    );
    report(
        9,
        "per-epoch elimination is 38, cumulative within 1%, live >= budget",
        first_ok && total_ok && live_ok,
    );
}
