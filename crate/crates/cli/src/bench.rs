//! Kernel timing with correctness gating.
//!
//! A benchmark that measures a wrong kernel is worse than no benchmark, so
//! each run first replays the kernel against a brute-force oracle on small
//! random instances and refuses to time anything that disagrees. The
//! oracles here are written independently of the library loops: quadratic
//! scans with explicit sorts.

use anyhow::{bail, Result};
use pointdet_core::pointops::{ball_query, farthest_point_sample, knn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchKernel {
    Fps,
    Ballquery,
    Knn,
}

fn rand_coords(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n * 3).map(|_| rng.gen_range(0.0..4.0)).collect()
}

fn dist2(a: &[f64], i: usize, b: &[f64], j: usize) -> f64 {
    (0..3).map(|c| (a[i * 3 + c] - b[j * 3 + c]).powi(2)).sum()
}

/// Quadratic farthest-point reference: recompute every point's distance to
/// the whole chosen set at each round.
fn fps_oracle(coords: &[f64], m: usize, start: usize) -> Vec<usize> {
    let n = coords.len() / 3;
    let mut chosen = vec![start];
    while chosen.len() < m {
        let (mut best, mut best_d) = (usize::MAX, f64::NEG_INFINITY);
        for p in 0..n {
            let d = chosen
                .iter()
                .map(|&c| dist2(coords, p, coords, c))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = p;
            }
        }
        chosen.push(best);
    }
    chosen
}

/// First `k` points within the radius in ascending index order; rows with
/// no hit fall back to the single nearest point, ties to the lower index.
fn ball_oracle(coords: &[f64], centers: &[f64], radius: f64, k: usize) -> (Vec<usize>, Vec<usize>) {
    let n = coords.len() / 3;
    let m = centers.len() / 3;
    let (mut indices, mut valid) = (Vec::new(), Vec::new());
    for q in 0..m {
        let mut row: Vec<usize> = (0..n)
            .filter(|&p| dist2(coords, p, centers, q) <= radius * radius)
            .take(k)
            .collect();
        if row.is_empty() {
            let nearest = (0..n)
                .min_by(|&a, &b| {
                    dist2(coords, a, centers, q)
                        .partial_cmp(&dist2(coords, b, centers, q))
                        .unwrap()
                        .then(a.cmp(&b))
                })
                .unwrap();
            row.push(nearest);
        }
        valid.push(row.len());
        while row.len() < k {
            row.push(row[0]);
        }
        indices.extend(row);
    }
    (indices, valid)
}

/// Full sort by (distance, index) and take the first `k`.
fn knn_oracle(coords: &[f64], queries: &[f64], k: usize) -> Vec<usize> {
    let n = coords.len() / 3;
    let m = queries.len() / 3;
    let mut indices = Vec::with_capacity(m * k);
    for q in 0..m {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            dist2(coords, a, queries, q)
                .partial_cmp(&dist2(coords, b, queries, q))
                .unwrap()
                .then(a.cmp(&b))
        });
        indices.extend(&order[..k]);
    }
    indices
}

/// Replay the kernel against its oracle on `instances` random draws with
/// `n <= 512`. Returns an error description on the first mismatch.
pub fn verify(kernel: BenchKernel, instances: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in 0..instances {
        let n = rng.gen_range(4..=512);
        let coords = rand_coords(&mut rng, n);
        match kernel {
            BenchKernel::Fps => {
                let m = rng.gen_range(1..=n);
                let start = rng.gen_range(0..n);
                let got = farthest_point_sample(&coords, m, start)?;
                let want = fps_oracle(&coords, m, start);
                if got != want {
                    bail!("fps mismatch on instance {i} (n {n}, m {m})");
                }
            }
            BenchKernel::Ballquery => {
                let m = rng.gen_range(1..=64);
                let centers = rand_coords(&mut rng, m);
                let k = rng.gen_range(1..=8);
                let radius = rng.gen_range(0.3..2.0);
                let got = ball_query(&coords, &centers, radius, k)?;
                let (want_idx, want_valid) = ball_oracle(&coords, &centers, radius, k);
                if got.indices != want_idx || got.valid_count != want_valid {
                    bail!("ball query mismatch on instance {i} (n {n}, m {m}, k {k})");
                }
            }
            BenchKernel::Knn => {
                let m = rng.gen_range(1..=64);
                let queries = rand_coords(&mut rng, m);
                let k = rng.gen_range(1..=n.min(8));
                let got = knn(&coords, &queries, k)?;
                let want = knn_oracle(&coords, &queries, k);
                if got.indices != want {
                    bail!("knn mismatch on instance {i} (n {n}, m {m}, k {k})");
                }
            }
        }
    }
    Ok(())
}

/// Verify, then time `trials` runs at problem size `n` and print the
/// median and tail. Returns false when verification fails.
pub fn run_and_print(kernel: BenchKernel, n: usize, trials: usize) -> Result<bool> {
    if n < 4 || trials == 0 {
        bail!("need n >= 4 and at least one trial");
    }
    if let Err(e) = verify(kernel, 50, 417) {
        println!("bench: oracle verification FAILED: {e}");
        return Ok(false);
    }
    println!("bench: oracle verification passed (50 instances)");

    let mut rng = ChaCha20Rng::seed_from_u64(418);
    let coords = rand_coords(&mut rng, n);
    let m = (n / 4).max(1);
    let centers = rand_coords(&mut rng, m);
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t = Instant::now();
        match kernel {
            BenchKernel::Fps => {
                farthest_point_sample(&coords, m, 0)?;
            }
            BenchKernel::Ballquery => {
                ball_query(&coords, &centers, 0.5, 16)?;
            }
            BenchKernel::Knn => {
                knn(&coords, &centers, 16)?;
            }
        }
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    let p95 = times[((times.len() * 95) / 100).min(times.len() - 1)];
    println!(
        "bench {:?}: n {n}, m {m}, {trials} trials: median {median:.3} ms, p95 {p95:.3} ms",
        kernel
    );
    Ok(true)
}
