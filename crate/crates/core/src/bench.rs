//! Latency harness: per-query timing of a prototype space, scaling across
//! spaces built from corpora of different sizes, and a simulated
//! autoregressive generator whose cost grows linearly with token count.
//!
//! All timings run on the calling thread against a monotonic clock. Each
//! repetition is one pass over the query set; a repetition's latency is the
//! pass time divided by the number of queries.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PsaError, Result};
use crate::model::EmbeddingVector;
use crate::query::{respond, respond_batch};
use crate::scalar::Scalar;
use crate::space::PrototypeSpace;

pub const MIN_REPETITIONS: usize = 30;
pub const BOOTSTRAP_RESAMPLES: usize = 2000;

/// Published reference timings, reported next to measurements and never
/// compared against them.
pub const PUBLISHED_CONTEXT: &[(&str, &str)] = &[
    ("prototype_query", "4 ms, 1M parameters"),
    ("gpt2_generation", "136 ms, 1.5B parameters"),
    ("llama3_generation", "1.2 s, 7B parameters"),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub repetitions: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
}

impl LatencyStats {
    pub fn from_samples_us(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(PsaError::EmptyInput("latency samples"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            repetitions: samples.len(),
            mean_us: samples.iter().sum::<f64>() / samples.len() as f64,
            p50_us: percentile(&sorted, 0.50),
            p99_us: percentile(&sorted, 0.99),
        })
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ordinary least squares `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(PsaError::InvalidArgument(format!(
            "line fit needs at least 2 paired points, got {} x and {} y",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(PsaError::InvalidArgument("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Percentile bootstrap interval for the OLS slope, resampling `(x, y)`
/// pairs. Resamples whose x values are all equal are redrawn.
pub fn bootstrap_slope_ci(x: &[f64], y: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    fit_line(x, y)?;
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(PsaError::InvalidArgument(format!(
            "bootstrap needs resamples > 0 and level in (0, 1), got {resamples} and {level}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
    let mut slopes = Vec::with_capacity(resamples);
    while slopes.len() < resamples {
        for i in 0..n {
            let j = rng.random_range(0..n);
            bx[i] = x[j];
            by[i] = y[j];
        }
        if let Ok(f) = fit_line(&bx, &by) {
            slopes.push(f.slope);
        }
    }
    slopes.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((percentile(&slopes, tail), percentile(&slopes, 1.0 - tail)))
}

fn check_queries<T>(queries: &[EmbeddingVector<T>], repetitions: usize) -> Result<()> {
    if queries.is_empty() {
        return Err(PsaError::EmptyInput("benchmark queries"));
    }
    if repetitions < MIN_REPETITIONS {
        return Err(PsaError::InvalidArgument(format!(
            "repetitions = {repetitions}, need at least {MIN_REPETITIONS}"
        )));
    }
    Ok(())
}

/// One timed pass; returns microseconds per query.
fn timed_pass<T: Scalar>(space: &PrototypeSpace<T>, queries: &[EmbeddingVector<T>], k: usize) -> Result<f64> {
    let start = Instant::now();
    for q in queries {
        black_box(respond(space, black_box(q), k)?);
    }
    Ok(start.elapsed().as_secs_f64() * 1e6 / queries.len() as f64)
}

/// Per-query latency of `respond` over `repetitions` passes, after one
/// discarded warm-up pass.
pub fn bench_query<T: Scalar>(
    space: &PrototypeSpace<T>,
    queries: &[EmbeddingVector<T>],
    k: usize,
    repetitions: usize,
) -> Result<LatencyStats> {
    check_queries(queries, repetitions)?;
    timed_pass(space, queries, k)?;
    let samples = (0..repetitions)
        .map(|_| timed_pass(space, queries, k))
        .collect::<Result<Vec<_>>>()?;
    LatencyStats::from_samples_us(&samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPoint {
    pub corpus_size: usize,
    pub space_size: usize,
    pub stats: LatencyStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Microseconds per query per additional corpus sample.
    pub slope: f64,
    pub slope_ci95: (f64, f64),
    /// Largest mean latency divided by the smallest.
    pub mean_ratio: f64,
}

impl ScalingReport {
    pub fn slope_ci_contains_zero(&self) -> bool {
        self.slope_ci95.0 <= 0.0 && 0.0 <= self.slope_ci95.1
    }
}

/// Times each `(corpus_size, space)` with the same queries. Passes are
/// interleaved across spaces, rotating the starting space each round, so
/// slow drift in machine state spreads evenly over all of them.
pub fn bench_scaling<T: Scalar>(
    spaces: &[(usize, &PrototypeSpace<T>)],
    queries: &[EmbeddingVector<T>],
    k: usize,
    repetitions: usize,
    seed: u64,
) -> Result<ScalingReport> {
    check_queries(queries, repetitions)?;
    if spaces.len() < 2 {
        return Err(PsaError::InvalidArgument("scaling needs at least two spaces".into()));
    }
    for (_, s) in spaces {
        timed_pass(s, queries, k)?;
    }
    let mut samples = vec![Vec::with_capacity(repetitions); spaces.len()];
    for rep in 0..repetitions {
        for offset in 0..spaces.len() {
            let i = (rep + offset) % spaces.len();
            samples[i].push(timed_pass(spaces[i].1, queries, k)?);
        }
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut points = Vec::with_capacity(spaces.len());
    for ((size, space), runs) in spaces.iter().zip(&samples) {
        xs.extend(std::iter::repeat_n(*size as f64, runs.len()));
        ys.extend(runs);
        points.push(ScalingPoint {
            corpus_size: *size,
            space_size: space.len(),
            stats: LatencyStats::from_samples_us(runs)?,
        });
    }
    let fit = fit_line(&xs, &ys)?;
    let ci = bootstrap_slope_ci(&xs, &ys, BOOTSTRAP_RESAMPLES, 0.95, seed)?;
    let means = points.iter().map(|p| p.stats.mean_us);
    let (lo, hi) = means.fold((f64::INFINITY, 0.0f64), |(lo, hi), m| (lo.min(m), hi.max(m)));
    Ok(ScalingReport {
        points,
        slope: fit.slope,
        slope_ci95: ci,
        mean_ratio: hi / lo,
    })
}

fn spin(d: Duration) {
    let start = Instant::now();
    while start.elapsed() < d {
        std::hint::spin_loop();
    }
}

/// Busy-waits `overhead`, then `per_token_cost` once per token.
pub fn simulate_generation(tokens: usize, per_token_cost: Duration, overhead: Duration) {
    spin(overhead);
    for _ in 0..tokens {
        spin(per_token_cost);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmCurve {
    pub token_counts: Vec<usize>,
    /// Median microseconds per generation at each token count.
    pub median_us: Vec<f64>,
    pub mean_us: Vec<f64>,
    pub fit: LinearFit,
}

/// Times [`simulate_generation`] at each token count and fits a line
/// through the per-count medians.
pub fn bench_simulated_llm(
    token_counts: &[usize],
    per_token_cost: Duration,
    overhead: Duration,
    repetitions: usize,
) -> Result<LlmCurve> {
    if per_token_cost.is_zero() {
        return Err(PsaError::InvalidArgument("per_token_cost must be positive".into()));
    }
    if repetitions == 0 {
        return Err(PsaError::InvalidArgument("repetitions must be positive".into()));
    }
    let mut distinct = token_counts.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(PsaError::InvalidArgument("need at least two distinct token counts".into()));
    }
    let mut runs = vec![Vec::with_capacity(repetitions); token_counts.len()];
    for _ in 0..repetitions {
        for (n, out) in token_counts.iter().zip(&mut runs) {
            let start = Instant::now();
            simulate_generation(*n, per_token_cost, overhead);
            out.push(start.elapsed().as_secs_f64() * 1e6);
        }
    }
    let median_us: Vec<f64> = runs.iter().map(|r| median(r)).collect();
    let mean_us = runs.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let xs: Vec<f64> = token_counts.iter().map(|&n| n as f64).collect();
    let fit = fit_line(&xs, &median_us)?;
    Ok(LlmCurve {
        token_counts: token_counts.to_vec(),
        median_us,
        mean_us,
        fit,
    })
}

/// Queries per second answered by the parallel batch path over `passes`
/// passes. Separate from the single-threaded latency numbers.
pub fn bench_throughput<T: Scalar>(
    space: &PrototypeSpace<T>,
    queries: &[EmbeddingVector<T>],
    k: usize,
    passes: usize,
) -> Result<f64> {
    if queries.is_empty() || passes == 0 {
        return Err(PsaError::EmptyInput("throughput queries"));
    }
    let start = Instant::now();
    for _ in 0..passes {
        for r in black_box(respond_batch(space, queries, k)) {
            r?;
        }
    }
    Ok((queries.len() * passes) as f64 / start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub top_k: usize,
    pub space_size: usize,
    pub query: Option<LatencyStats>,
    pub scaling: Option<ScalingReport>,
    pub llm: Option<LlmCurve>,
    pub per_token_cost_us: Option<f64>,
    pub throughput_qps: Option<f64>,
    pub threads: Option<usize>,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "space size (N*M)   {}", self.space_size);
        let _ = writeln!(out, "top-k              {}", self.top_k);
        if let Some(q) = &self.query {
            let _ = writeln!(out, "\nquery latency ({} runs, single thread)", q.repetitions);
            let _ = writeln!(out, "  mean {:>10.2} us", q.mean_us);
            let _ = writeln!(out, "  p50  {:>10.2} us", q.p50_us);
            let _ = writeln!(out, "  p99  {:>10.2} us", q.p99_us);
        }
        if let Some(s) = &self.scaling {
            let _ = writeln!(out, "\n{:>12} {:>8} {:>10} {:>10} {:>10}", "corpus", "space", "mean_us", "p50_us", "p99_us");
            for p in &s.points {
                let _ = writeln!(
                    out,
                    "{:>12} {:>8} {:>10.2} {:>10.2} {:>10.2}",
                    p.corpus_size, p.space_size, p.stats.mean_us, p.stats.p50_us, p.stats.p99_us
                );
            }
            let _ = writeln!(out, "max/min mean       {:.3}", s.mean_ratio);
            let _ = writeln!(
                out,
                "slope              {:.3e} us/sample  95% CI [{:.3e}, {:.3e}]",
                s.slope, s.slope_ci95.0, s.slope_ci95.1
            );
        }
        if let Some(l) = &self.llm {
            let _ = writeln!(out, "\n{:>8} {:>12} {:>12}", "tokens", "median_us", "mean_us");
            for ((n, med), mean) in l.token_counts.iter().zip(&l.median_us).zip(&l.mean_us) {
                let _ = writeln!(out, "{n:>8} {med:>12.1} {mean:>12.1}");
            }
            let _ = writeln!(
                out,
                "fit                {:.2} us/token + {:.2} us  R^2 {:.5}",
                l.fit.slope, l.fit.intercept, l.fit.r_squared
            );
        }
        if let Some(t) = self.throughput_qps {
            let _ = writeln!(out, "\nthroughput         {t:.0} queries/s ({} threads)", self.threads.unwrap_or(1));
        }
        let _ = writeln!(out, "\npublished figures (context only, different hardware):");
        for (k, v) in PUBLISHED_CONTEXT {
            let _ = writeln!(out, "  {k:<18} {v}");
        }
        out
    }

    /// One `key=value` per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "space_size={}", self.space_size);
        let _ = writeln!(out, "top_k={}", self.top_k);
        if let Some(q) = &self.query {
            let _ = writeln!(out, "query.repetitions={}", q.repetitions);
            let _ = writeln!(out, "query.mean_us={}", q.mean_us);
            let _ = writeln!(out, "query.p50_us={}", q.p50_us);
            let _ = writeln!(out, "query.p99_us={}", q.p99_us);
        }
        if let Some(s) = &self.scaling {
            let sizes: Vec<String> = s.points.iter().map(|p| p.corpus_size.to_string()).collect();
            let _ = writeln!(out, "scaling.corpus_sizes={}", sizes.join(","));
            for p in &s.points {
                let key = format!("scaling.{}", p.corpus_size);
                let _ = writeln!(out, "{key}.space_size={}", p.space_size);
                let _ = writeln!(out, "{key}.mean_us={}", p.stats.mean_us);
                let _ = writeln!(out, "{key}.p50_us={}", p.stats.p50_us);
                let _ = writeln!(out, "{key}.p99_us={}", p.stats.p99_us);
            }
            let _ = writeln!(out, "scaling.mean_ratio={}", s.mean_ratio);
            let _ = writeln!(out, "scaling.slope={}", s.slope);
            let _ = writeln!(out, "scaling.slope_ci95_low={}", s.slope_ci95.0);
            let _ = writeln!(out, "scaling.slope_ci95_high={}", s.slope_ci95.1);
        }
        if let Some(l) = &self.llm {
            if let Some(c) = self.per_token_cost_us {
                let _ = writeln!(out, "llm.per_token_cost_us={c}");
            }
            for (n, med) in l.token_counts.iter().zip(&l.median_us) {
                let _ = writeln!(out, "llm.{n}.median_us={med}");
            }
            let _ = writeln!(out, "llm.slope_us_per_token={}", l.fit.slope);
            let _ = writeln!(out, "llm.intercept_us={}", l.fit.intercept);
            let _ = writeln!(out, "llm.r_squared={}", l.fit.r_squared);
        }
        if let Some(t) = self.throughput_qps {
            let _ = writeln!(out, "throughput.qps={t}");
            let _ = writeln!(out, "throughput.threads={}", self.threads.unwrap_or(1));
        }
        for (k, v) in PUBLISHED_CONTEXT {
            let _ = writeln!(out, "context.{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PsaConfig;
    use crate::space::Prototype;

    fn small_space() -> PrototypeSpace<f64> {
        let protos = (0..8)
            .map(|i| Prototype {
                label_index: i / 4,
                sub_index: i % 4,
                query: EmbeddingVector::new(vec![1.0 + i as f64, 0.5, -0.25 * i as f64]).unwrap(),
                response: EmbeddingVector::new(vec![i as f64, 1.0, 2.0]).unwrap(),
                source_sample_id: format!("s{i}"),
            })
            .collect();
        PrototypeSpace::new(3, protos, 4, PsaConfig::default(), 0).unwrap()
    }

    #[test]
    fn line_fit_exact() {
        let f = fit_line(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!((f.slope, f.intercept, f.r_squared), (2.0, 1.0, 1.0));
        assert!(fit_line(&[1.0, 1.0], &[0.0, 2.0]).is_err());
    }

    #[test]
    fn bootstrap_brackets_known_slope() {
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 3.0 * v + if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (lo, hi) = bootstrap_slope_ci(&x, &y, 500, 0.95, 1).unwrap();
        assert!(lo <= 3.0 && 3.0 <= hi && hi - lo < 0.2, "[{lo}, {hi}]");
    }

    #[test]
    fn percentiles() {
        let s = LatencyStats::from_samples_us(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((s.mean_us, s.p50_us, s.p99_us), (3.0, 3.0, 5.0));
        assert!(LatencyStats::from_samples_us(&[]).is_err());
    }

    #[test]
    fn query_bench_preconditions() {
        let space = small_space();
        let q = vec![EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap()];
        assert!(bench_query(&space, &q, 2, 0).is_err());
        assert!(bench_query(&space, &q, 2, 29).is_err());
        assert!(bench_query(&space, &[], 2, 30).is_err());
        let s = bench_query(&space, &q, 2, 30).unwrap();
        assert!(s.mean_us > 0.0 && s.p50_us <= s.p99_us);
    }

    #[test]
    fn simulated_llm_recovers_slope() {
        let curve = bench_simulated_llm(&[1, 2, 4, 8], Duration::from_millis(1), Duration::ZERO, 3).unwrap();
        let slope_ms = curve.fit.slope / 1e3;
        assert!((slope_ms - 1.0).abs() <= 0.1, "slope {slope_ms} ms");
        assert!(curve.fit.r_squared >= 0.99);
        assert!(bench_simulated_llm(&[1, 2], Duration::ZERO, Duration::ZERO, 3).is_err());
    }

    #[test]
    fn zero_tokens_is_overhead_only() {
        let start = Instant::now();
        simulate_generation(0, Duration::from_millis(50), Duration::from_millis(2));
        let t = start.elapsed();
        assert!(t >= Duration::from_millis(2) && t < Duration::from_millis(40));
    }

    #[test]
    fn report_renders_both_forms() {
        let space = small_space();
        let q = vec![EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap()];
        let report = BenchReport {
            top_k: 2,
            space_size: space.len(),
            query: Some(bench_query(&space, &q, 2, 30).unwrap()),
            ..BenchReport::default()
        };
        assert!(report.to_table().contains("p99"));
        assert!(report.to_key_values().contains("query.mean_us="));
        assert!(report.to_key_values().contains("context.prototype_query=4 ms"));
    }
}
