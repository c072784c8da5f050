//! Acceptance gate. Runs every primary criterion, prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails.

use std::io::Write;
use std::time::{Duration, Instant};

use ldwr_core::eval::{paired_comparison, report_to_string, EpisodeOutcome};
use ldwr_core::filter::{iterative_filter_support_traced, SampleWeights, ThresholdStats};
use ldwr_core::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const INSTANCES: usize = 1000;

/// Frozen from the benchmark sweep (see README, "Synthetic benchmark").
const ABLATION_EPISODES: usize = 1000;
const ABLATION_QUERIES_PER_CLASS: usize = 5;
const ABLATION_SEED: u64 = 20_241;
const MIN_FILTER_Z: f64 = 3.0;
const MIN_FILTER_GAIN: f64 = 0.10;
const MIN_BACKGROUND_RECALL: f64 = 0.95;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
}

// ---------------------------------------------------------------- oracles

fn o_dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

fn o_cos(a: &[f32], b: &[f32]) -> f64 {
    let na = o_dot(a, a).sqrt();
    let nb = o_dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (o_dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Full sort by descending similarity then ascending index.
fn o_knn(query: &[f32], pool: &[Vec<f32>], k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = pool
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, x)| (o_cos(query, x), j))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, j)| j).collect()
}

fn o_neighborhoods(pool: &[Vec<f32>], k: usize, include_self: bool) -> Vec<Vec<f64>> {
    let dim = pool[0].len();
    (0..pool.len())
        .map(|i| {
            let skip = if include_self { None } else { Some(i) };
            let mut mean = vec![0.0f64; dim];
            for j in o_knn(&pool[i], pool, k, skip) {
                for c in 0..dim {
                    mean[c] += pool[j][c] as f64 / k as f64;
                }
            }
            mean
        })
        .collect()
}

/// Mean and population std of `k_i / 2^20` from exact integer sums.
fn o_stats_fixed(ks: &[i64]) -> (f64, f64) {
    let n = ks.len() as i128;
    let s: i128 = ks.iter().map(|&k| k as i128).sum();
    let q: i128 = ks.iter().map(|&k| (k as i128) * (k as i128)).sum();
    let scale = (1u64 << 20) as f64;
    let mean = s as f64 / n as f64 / scale;
    let var_num = n * q - s * s;
    let std = ((var_num as f64) / ((n * n) as f64)).sqrt() / scale;
    (mean, std)
}

fn o_floor(fraction: f64, total: usize) -> usize {
    let target = fraction * total as f64 - 1e-9;
    (0..=total)
        .find(|&m| m as f64 >= target)
        .unwrap_or(total)
        .max(1)
        .min(total)
}

fn o_filter(scores: &[f64], current: &[usize], threshold: f64, floor: usize) -> Vec<usize> {
    let passed: Vec<usize> = current
        .iter()
        .copied()
        .filter(|&i| scores[i] >= threshold)
        .collect();
    let floor = floor.min(current.len());
    if passed.len() >= floor {
        return passed;
    }
    let mut ranked: Vec<usize> = current.to_vec();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut top: Vec<usize> = ranked[..floor].to_vec();
    top.sort();
    top
}

fn o_image_to_class(query: &[Vec<f32>], pool: &[Vec<f32>], k: usize) -> f64 {
    let k = k.min(pool.len());
    let mut total = 0.0;
    for q in query {
        let mut sims: Vec<f64> = pool.iter().map(|m| o_cos(q, m)).collect();
        sims.sort_by(|a, b| b.total_cmp(a));
        let mut best = 0.0;
        for s in &sims[..k] {
            best += s;
        }
        total += best;
    }
    total
}

// ---------------------------------------------------------------- random data

fn grid_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|_| rng.random_range(-3i32..=3) as f32)
        .collect()
}

fn gauss_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        })
        .collect()
}

/// Random pool: grid or Gaussian entries, with some exact duplicates and
/// occasional zero vectors.
fn random_pool(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    let grid = rng.random_bool(0.5);
    let mut pool: Vec<Vec<f32>> = Vec::with_capacity(n);
    for _ in 0..n {
        let v = if !pool.is_empty() && rng.random_bool(0.15) {
            pool[rng.random_range(0..pool.len())].clone()
        } else if rng.random_bool(0.03) {
            vec![0.0; dim]
        } else if grid {
            grid_vec(rng, dim)
        } else {
            gauss_vec(rng, dim)
        };
        pool.push(v);
    }
    pool
}

fn flat(pool: &[Vec<f32>]) -> Vec<f32> {
    pool.iter().flatten().copied().collect()
}

// ---------------------------------------------------------------- criteria

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures: Vec<String> = Vec::new();
    let mut fail = |what: &str, i: usize| {
        if failures.len() < 5 {
            failures.push(format!("{what}#{i}"));
        }
    };

    for i in 0..INSTANCES {
        let n = rng.random_range(2..=64);
        let dim = rng.random_range(1..=16);
        let pool = random_pool(&mut rng, n, dim);
        let data = flat(&pool);
        let include_self = rng.random_bool(0.3);
        let self_index = rng.random_bool(0.7).then(|| rng.random_range(0..n));
        let query = match self_index {
            Some(j) => pool[j].clone(),
            None => grid_vec(&mut rng, dim),
        };
        let avail = if self_index.is_some() && !include_self {
            n - 1
        } else {
            n
        };
        let k = rng.random_range(1..=avail);
        let cfg = NeighborhoodConfig {
            k_neighbors: k,
            include_self,
        };
        let got = knn_indices(&query, DescriptorPool::new(&data, dim), &cfg, self_index).unwrap();
        let skip = if include_self { None } else { self_index };
        if got != o_knn(&query, &pool, k, skip) {
            fail("knn_indices", i);
        }
    }

    for i in 0..INSTANCES {
        let n = rng.random_range(2..=64);
        let dim = rng.random_range(1..=16);
        let pool = random_pool(&mut rng, n, dim);
        let include_self = rng.random_bool(0.3);
        let k = rng.random_range(1..=if include_self { n } else { n - 1 });
        let cfg = NeighborhoodConfig {
            k_neighbors: k,
            include_self,
        };
        let got =
            neighborhood_representation(DescriptorPool::new(&flat(&pool), dim), &cfg).unwrap();
        let want = o_neighborhoods(&pool, k, include_self);
        let ok = want
            .iter()
            .flatten()
            .zip(&got)
            .all(|(&w, &g)| rel_close(g as f64, w, 1e-6));
        if !ok || got.len() != n * dim {
            fail("neighborhood_representation", i);
        }
    }

    for i in 0..INSTANCES {
        let n = rng.random_range(1..=64);
        let dim = rng.random_range(1..=16);
        let n_way = rng.random_range(1..=5);
        let nr = random_pool(&mut rng, n, dim);
        let protos: Vec<ClassPrototype> = (0..n_way)
            .map(|c| ClassPrototype {
                class_index: c,
                vector: gauss_vec(&mut rng, dim),
                source_count: 1,
            })
            .collect();
        let w = descriptor_weights(DescriptorPool::new(&flat(&nr), dim), &protos);
        let ok = (0..n_way).all(|c| {
            (0..n).all(|d| rel_close(w.get(c, d), o_cos(&nr[d], &protos[c].vector), 1e-6))
        });
        if !ok || w.n_way() != n_way || w.len() != n {
            fail("descriptor_weights", i);
        }
    }

    for i in 0..INSTANCES {
        let n = rng.random_range(2..=500);
        let one = 1i64 << 20;
        let ks: Vec<i64> = if rng.random_bool(0.05) {
            vec![rng.random_range(-one..=one); n]
        } else {
            (0..n).map(|_| rng.random_range(-one..=one)).collect()
        };
        let weights: Vec<f64> = ks.iter().map(|&k| k as f64 / one as f64).collect();
        let got = threshold_stats(&weights).unwrap();
        let (mu, sigma) = o_stats_fixed(&ks);
        if !(rel_close(got.mu_bar, mu, 1e-9) && rel_close(got.sigma_bar, sigma, 1e-9)) {
            fail("threshold_stats", i);
        }
    }

    for i in 0..INSTANCES {
        let images = rng.random_range(1..=6);
        let dim = rng.random_range(1..=16);
        let n_way = rng.random_range(1..=5);
        let per_class = rng.random_bool(0.25);
        let fraction = rng.random_range(1..=20) as f64 / 20.0;
        let cfg = FilterConfig {
            min_keep_fraction: fraction,
            mode: if per_class {
                FilterMode::PerClass
            } else {
                FilterMode::Averaged
            },
            ..FilterConfig::default()
        };
        let one = 1i64 << 20;
        let protos: Vec<ClassPrototype> = (0..n_way)
            .map(|c| ClassPrototype {
                class_index: c,
                vector: gauss_vec(&mut rng, dim),
                source_count: 1,
            })
            .collect();
        let mut weights = Vec::new();
        let mut scores: Vec<Vec<f64>> = Vec::new();
        let mut averaged: Vec<Vec<f64>> = Vec::new();
        let mut kept = Vec::new();
        for _ in 0..images {
            let t = rng.random_range(1..=64);
            if per_class {
                let nr = random_pool(&mut rng, t, dim);
                let sample = PreparedSample {
                    class_index: 0,
                    features: DescriptorSet::new(dim, 1, t, flat(&nr)).unwrap(),
                    neighborhoods: flat(&nr),
                };
                let sims: Vec<Vec<f64>> = nr
                    .iter()
                    .map(|x| protos.iter().map(|p| o_cos(x, &p.vector)).collect())
                    .collect();
                scores.push(
                    sims.iter()
                        .map(|s| s.iter().copied().fold(f64::MIN, f64::max))
                        .collect(),
                );
                averaged.push(
                    sims.iter()
                        .map(|s| s.iter().sum::<f64>() / n_way as f64)
                        .collect(),
                );
                weights.push(SampleWeights::compute(&sample, &protos));
            } else {
                let w: Vec<f64> = (0..t)
                    .map(|_| rng.random_range(-one..=one) as f64 / one as f64)
                    .collect();
                scores.push(w.clone());
                averaged.push(w.clone());
                weights.push(SampleWeights::from_averaged(w));
            }
            let mut current: Vec<usize> = (0..t).filter(|_| rng.random_bool(0.7)).collect();
            if current.is_empty() {
                current.push(rng.random_range(0..t));
            }
            kept.push(current);
        }
        let pooled: Vec<f64> = averaged
            .iter()
            .zip(&kept)
            .flat_map(|(a, k)| k.iter().map(|&j| a[j]))
            .collect();
        if pooled.len() < 2 {
            continue;
        }
        let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        let std =
            (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pooled.len() as f64).sqrt();
        let stats = ThresholdStats {
            mu_bar: mean,
            sigma_bar: std,
        };
        let got = filter_once(&weights, &kept, stats, &cfg);
        let want: Vec<Vec<usize>> = scores
            .iter()
            .zip(&kept)
            .map(|(s, k)| o_filter(s, k, stats.threshold(), o_floor(fraction, s.len())))
            .collect();
        if got != want {
            fail("filter_once", i);
        }
    }

    for i in 0..INSTANCES {
        let dim = rng.random_range(1..=16);
        let (nq, np) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let query = random_pool(&mut rng, nq, dim);
        let pool = random_pool(&mut rng, np, dim);
        let k_bar = rng.random_range(1..=5);
        let cp = ClassPool::new(dim, flat(&pool));
        let got = image_to_class_score(
            DescriptorPool::new(&flat(&query), dim),
            &cp,
            0,
            &ClassifierConfig { k_bar },
        )
        .unwrap();
        if !rel_close(got, o_image_to_class(&query, &pool, k_bar), 1e-6) {
            fail("image_to_class_score", i);
        }
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("6 functions x {INSTANCES} instances agree")
        } else {
            format!("mismatches: {}", failures.join(", "))
        },
    )
}

fn invariant_dataset(seed: u64) -> SyntheticDataset {
    generate_synthetic(&SyntheticSpec {
        n_classes: 6,
        samples_per_class: 6,
        channels: 16,
        height: 4,
        width: 4,
        background_modes: 4,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn scaled(e: &Episode, c: f32) -> Episode {
    let map = |s: &LabeledSample| {
        LabeledSample::new(s.descriptors.map(|v| v * c).unwrap(), s.label, s.sample_id)
    };
    Episode {
        support: e.support.iter().map(map).collect(),
        query: e.query.iter().map(map).collect(),
        ..e.clone()
    }
}

fn predictions(o: &EpisodeOutcome) -> Vec<usize> {
    o.scores.iter().map(|s| s.predicted).collect()
}

fn random_support(rng: &mut ChaCha8Rng) -> (Vec<PreparedSample>, usize) {
    let n_way = rng.random_range(2..=5);
    let k_shot = rng.random_range(1..=3);
    let dim = rng.random_range(2..=8);
    let (h, w) = (rng.random_range(1..=4), rng.random_range(2..=4));
    let t = h * w;
    let k = rng.random_range(1..=3.min(t - 1));
    let class_dirs: Vec<Vec<f32>> = (0..n_way).map(|_| gauss_vec(rng, dim)).collect();
    let strength = rng.random_range(0.0..3.0f32);
    let mut support = Vec::new();
    for (class, dir) in class_dirs.iter().enumerate() {
        for _ in 0..k_shot {
            let mut data = Vec::with_capacity(t * dim);
            for _ in 0..t {
                let fg = rng.random_bool(0.5);
                let noise = gauss_vec(rng, dim);
                data.extend(
                    noise
                        .iter()
                        .zip(dir)
                        .map(|(n, d)| if fg { n + strength * d } else { *n }),
                );
            }
            let features = DescriptorSet::new(dim, h, w, data).unwrap();
            let neighborhoods = neighborhood_representation(
                features.as_pool(),
                &NeighborhoodConfig {
                    k_neighbors: k,
                    include_self: false,
                },
            )
            .unwrap();
            support.push(PreparedSample {
                class_index: class,
                features,
                neighborhoods,
            });
        }
    }
    (support, n_way)
}

fn pipeline_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut problems: Vec<String> = Vec::new();

    // scale invariance
    let mut scale_cases = 0;
    let mut probs_checked = 0usize;
    let mut softmax_bad = 0usize;
    for ds_seed in 0..4 {
        let ds = invariant_dataset(ds_seed);
        for ep in 0..50u64 {
            let e = sample_episode(&ds.dataset, 5, 1, 2, ep).unwrap();
            let c = 2f32.powi(*[-4, -2, -1, 1, 3, 5].choose(&mut rng).unwrap());
            let normalize = if ep % 2 == 0 {
                NormalizeMode::None
            } else {
                NormalizeMode::L2
            };
            let cfg = PipelineConfig {
                normalize,
                ..PipelineConfig::default()
            };
            let a = evaluate_episode(&e, &cfg, None).unwrap();
            let b = evaluate_episode(&scaled(&e, c), &cfg, None).unwrap();
            scale_cases += 1;
            if a.support_filter.kept != b.support_filter.kept
                || a.query_filter.kept != b.query_filter.kept
                || predictions(&a) != predictions(&b)
            {
                problems.push(format!("scale dataset {ds_seed} episode {ep} c={c}"));
            }
            for s in a.scores.iter().chain(&b.scores) {
                probs_checked += 1;
                let total: f64 = s.probabilities.iter().sum();
                if (total - 1.0).abs() > 1e-6
                    || s.probabilities.iter().any(|p| !(0.0..=1.0).contains(p))
                {
                    softmax_bad += 1;
                }
            }
        }
    }
    for _ in 0..2000 {
        let n = rng.random_range(1..=20);
        let spread = 10f64.powi(rng.random_range(-3..=4));
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-1.0..1.0) * spread)
            .collect();
        let p = classifier::softmax(&scores);
        probs_checked += 1;
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 || p.iter().any(|v| !(0.0..=1.0).contains(v))
        {
            softmax_bad += 1;
        }
    }
    if softmax_bad > 0 {
        problems.push(format!(
            "{softmax_bad} softmax vectors off by more than 1e-6"
        ));
    }

    // termination and monotone shrinkage on random episodes
    let episodes = 10_000;
    let mut max_seen = 0;
    for i in 0..episodes {
        let (support, n_way) = random_support(&mut rng);
        let cfg = FilterConfig {
            c_stop: rng.random_range(1.05..4.0),
            max_iterations: rng.random_range(1..=10),
            min_keep_fraction: rng.random_range(0.05..=1.0),
            mode: if rng.random_bool(0.5) {
                FilterMode::Averaged
            } else {
                FilterMode::PerClass
            },
            ..FilterConfig::default()
        };
        let (result, _, trace) = match iterative_filter_support_traced(&support, n_way, &cfg) {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("episode {i}: {e}"));
                continue;
            }
        };
        max_seen = max_seen.max(result.iterations);
        if result.iterations > cfg.max_iterations {
            problems.push(format!(
                "episode {i}: {} passes > {}",
                result.iterations, cfg.max_iterations
            ));
        }
        let shrinks = trace.windows(2).all(|w| {
            w[0].iter()
                .zip(&w[1])
                .all(|(before, after)| after.iter().all(|j| before.contains(j)))
        });
        if !shrinks || trace.last() != Some(&result.kept) {
            problems.push(format!("episode {i}: kept sets not nested"));
        }
    }

    // sigma_bar trend on generator episodes (statistical, not absolute)
    let mut runs = 0usize;
    let mut monotone = 0usize;
    for ds_seed in 10..14 {
        let ds = generate_synthetic(&SyntheticSpec {
            seed: ds_seed,
            ..SyntheticSpec::default()
        })
        .unwrap();
        for ep in 0..250u64 {
            let e = sample_episode(&ds.dataset, 5, 1, 1, ep).unwrap();
            let cfg = PipelineConfig::default();
            let o = evaluate_episode(&e, &cfg, None).unwrap();
            runs += 1;
            let h = &o.support_filter.sigma_history;
            if h.windows(2).all(|w| w[1] <= w[0]) {
                monotone += 1;
            }
        }
    }
    let monotone_share = monotone as f64 / runs as f64;
    if monotone_share < 0.95 {
        problems.push(format!(
            "sigma_bar non-increasing in only {:.1}% of runs",
            100.0 * monotone_share
        ));
    }

    outcome(
        problems.is_empty(),
        format!(
            "{scale_cases} scaled episodes, {probs_checked} softmax vectors, {episodes} filter runs \
             (max {max_seen} passes), sigma_bar non-increasing in {:.1}% of {runs} runs{}",
            100.0 * monotone_share,
            if problems.is_empty() { String::new() } else { format!("; problems: {}", problems[..problems.len().min(5)].join(", ")) }
        ),
    )
}

fn ablation_config(pipeline: PipelineConfig) -> RunConfig {
    RunConfig {
        pipeline,
        episodes: EpisodeSpec {
            n_way: 5,
            k_shot: 1,
            n_query_per_class: ABLATION_QUERIES_PER_CLASS,
            episode_count: ABLATION_EPISODES,
            seed: ABLATION_SEED,
        },
        data: DataSource::Synthetic(SyntheticSpec::default()),
        parallel: true,
        record_timing: false,
    }
}

fn ablation() -> Outcome {
    let full = run(&ablation_config(PipelineConfig::default())).unwrap();
    let no_filter = run(&ablation_config(PipelineConfig {
        filter: None,
        ..PipelineConfig::default()
    }))
    .unwrap();
    let no_nr = run(&ablation_config(PipelineConfig {
        neighborhood: None,
        ..PipelineConfig::default()
    }))
    .unwrap();
    let f = paired_comparison(&full, &no_filter).unwrap();
    let n = paired_comparison(&full, &no_nr).unwrap();
    let recall = full.background_recall.unwrap_or(0.0);
    let a = f.z() > MIN_FILTER_Z && f.mean_difference >= MIN_FILTER_GAIN;
    let b = n.mean_difference >= 0.0;
    let c = recall >= MIN_BACKGROUND_RECALL;
    outcome(
        a && b && c,
        format!(
            "(a) {} full {:.4} vs no-filter {:.4}, diff {:+.4}, z {:.1} (need > {MIN_FILTER_Z}, diff >= {MIN_FILTER_GAIN}); \
             (b) {} vs no-NR {:.4}, diff {:+.4}, z {:.1}; (c) {} recall {:.4} (need >= {MIN_BACKGROUND_RECALL})",
            if a { "ok" } else { "FAIL" },
            full.mean_accuracy,
            no_filter.mean_accuracy,
            f.mean_difference,
            f.z(),
            if b { "ok" } else { "FAIL" },
            no_nr.mean_accuracy,
            n.mean_difference,
            n.z(),
            if c { "ok" } else { "FAIL" },
            recall,
        ),
    )
}

fn chance_level() -> Outcome {
    let mut cfg = ablation_config(PipelineConfig::default());
    cfg.data = DataSource::Synthetic(SyntheticSpec {
        signal_to_noise: 0.0,
        ..SyntheticSpec::default()
    });
    let r = run(&cfg).unwrap();
    let se = r.accuracy_std / (r.episode_count as f64).sqrt();
    let dev = (r.mean_accuracy - 0.2).abs();
    outcome(
        dev <= 3.0 * se,
        format!(
            "accuracy {:.4}, |diff from 0.2| {:.4} vs 3 SE {:.4}",
            r.mean_accuracy,
            dev,
            3.0 * se
        ),
    )
}

/// DN4 by hand: unit-normalize each descriptor (stored as f32), then sum the
/// top-3 cosines of each query descriptor against each class.
fn dn4_oracle(e: &Episode) -> Vec<Vec<f64>> {
    let unit = |s: &LabeledSample| -> Vec<Vec<f32>> {
        s.descriptors
            .flatten()
            .into_iter()
            .map(|d| {
                let n = o_dot(&d, &d).sqrt();
                if n == 0.0 {
                    d
                } else {
                    d.iter().map(|&v| (v as f64 / n) as f32).collect()
                }
            })
            .collect()
    };
    let pools: Vec<Vec<Vec<f32>>> = (0..e.n_way)
        .map(|c| e.support_of(c).iter().flat_map(unit).collect())
        .collect();
    e.query
        .iter()
        .map(|q| {
            let qd = unit(q);
            pools.iter().map(|p| o_image_to_class(&qd, p, 3)).collect()
        })
        .collect()
}

fn fixture_episode(rng: &mut ChaCha8Rng, index: usize) -> Episode {
    let n_way = rng.random_range(2..=5);
    let k_shot = rng.random_range(1..=3);
    let dim = rng.random_range(1..=6);
    let (h, w) = [(1, 1), (1, 3), (2, 2), (2, 3), (2, 4), (1, 8)][index % 6];
    let mut id = 0u64;
    let mut sample = |rng: &mut ChaCha8Rng, class: u32| {
        let pool = random_pool(rng, h * w, dim);
        id += 1;
        LabeledSample::new(
            DescriptorSet::new(dim, h, w, flat(&pool)).unwrap(),
            ClassId(class),
            id,
        )
    };
    let classes: Vec<ClassId> = (0..n_way as u32).map(ClassId).collect();
    let support = (0..n_way as u32)
        .flat_map(|c| (0..k_shot).map(move |_| c))
        .map(|c| sample(rng, c))
        .collect();
    let query = (0..n_way as u32).map(|c| sample(rng, c)).collect();
    Episode {
        n_way,
        k_shot,
        classes,
        support,
        query,
    }
}

fn baseline_reachability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = PipelineConfig::baseline();
    let mut mismatches = 0;
    let fixtures = 500;
    for i in 0..fixtures {
        let e = fixture_episode(&mut rng, i);
        validate_episode(&e).unwrap();
        let got = evaluate_episode(&e, &cfg, None).unwrap();
        let want = dn4_oracle(&e);
        for (g, w) in got.scores.iter().zip(&want) {
            let best = (0..w.len()).fold(0, |b, c| if w[c] > w[b] { c } else { b });
            if g.scores != *w || g.predicted != best {
                mismatches += 1;
            }
        }
    }
    let flags_ok =
        cfg.normalize == NormalizeMode::L2 && cfg.neighborhood.is_none() && cfg.filter.is_none();
    outcome(
        mismatches == 0 && flags_ok,
        format!("{fixtures} fixture episodes (<= 8 descriptors per image), {mismatches} queries differ from the oracle"),
    )
}

fn determinism() -> Outcome {
    let mut cfg = ablation_config(PipelineConfig::default());
    cfg.episodes.episode_count = 200;
    let parallel = report_to_string(&run(&cfg).unwrap());
    let again = report_to_string(&run(&cfg).unwrap());
    cfg.parallel = false;
    let serial_report = run(&cfg).unwrap();
    let serial = report_to_string(&serial_report);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    report_write(&serial_report, &path).unwrap();
    let on_disk = std::fs::read(&path).unwrap();
    let same = parallel == again && parallel == serial && on_disk == serial.as_bytes();
    outcome(
        same,
        format!(
            "3 runs x 200 episodes, {} bytes each, identical: {same}",
            parallel.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 6] = [
        (
            "oracle equivalence",
            Some(Duration::from_secs(60)),
            oracle_equivalence,
        ),
        (
            "pipeline invariants",
            Some(Duration::from_secs(120)),
            pipeline_invariants,
        ),
        (
            "ablation direction",
            Some(Duration::from_secs(300)),
            ablation,
        ),
        ("chance level", None, chance_level),
        ("baseline reachability", None, baseline_reachability),
        ("determinism", None, determinism),
    ];
    let mut failed = 0;
    let mut out = std::io::stdout();
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let mut o = check();
        let elapsed = start.elapsed();
        if let Some(b) = budget {
            if elapsed > b {
                o.pass = false;
                o.detail
                    .push_str(&format!("; over the {}s budget", b.as_secs()));
            }
        }
        if !o.pass {
            failed += 1;
        }
        writeln!(
            out,
            "{} {name} [{:.1}s]: {}",
            if o.pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            o.detail
        )
        .unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        writeln!(out, "{failed} acceptance criteria failed").unwrap();
        std::process::exit(1);
    }
}
