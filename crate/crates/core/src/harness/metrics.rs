use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One evaluation block of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub seed: u64,
    pub mean_return: f64,
    /// Standard deviation of episode returns within the block.
    pub std_return: f64,
    pub episodes: usize,
}

/// Across-seed statistics of one evaluation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub step: u64,
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
    pub moving_avg: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn population_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Trailing mean over at most `window` points, truncated at the start.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..series.len())
        .map(|i| mean(&series[(i + 1).saturating_sub(w)..=i]))
        .collect()
}

/// Per step: seed mean, seed standard deviation, and the moving average of
/// the mean series. Steps are sorted ascending.
pub fn aggregate(rows: &[EvalRow], window: usize) -> Vec<AggregateRow> {
    let mut steps: Vec<u64> = rows.iter().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    let stats: Vec<(u64, f64, f64)> = steps
        .iter()
        .map(|&step| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.step == step).map(|r| r.mean_return).collect();
            (step, mean(&xs), population_std(&xs))
        })
        .collect();
    let means: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let ma = moving_average(&means, window);
    stats
        .into_iter()
        .zip(ma)
        .map(|((step, mean, std), moving_avg)| AggregateRow {
            step,
            mean,
            std,
            moving_avg,
        })
        .collect()
}

/// All evaluation rows of an experiment plus their aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub window: usize,
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl RunMetrics {
    pub fn new(rows: Vec<EvalRow>, window: usize) -> Self {
        let aggregates = aggregate(&rows, window);
        RunMetrics {
            window,
            rows,
            aggregates,
        }
    }

    /// Last moving-average point of the seed mean.
    pub fn final_return(&self) -> Option<f64> {
        self.aggregates.last().map(|a| a.moving_avg)
    }

    /// Last moving-average point of each seed's own series.
    pub fn final_return_per_seed(&self) -> Vec<(u64, f64)> {
        let mut seeds: Vec<u64> = Vec::new();
        for r in &self.rows {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
        }
        seeds
            .into_iter()
            .map(|seed| {
                let series = self.seed_series(seed);
                let ma = moving_average(&series, self.window);
                (seed, ma.last().copied().unwrap_or(0.0))
            })
            .collect()
    }

    fn seed_series(&self, seed: u64) -> Vec<f64> {
        let mut rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.seed == seed).collect();
        rows.sort_by_key(|r| r.step);
        rows.iter().map(|r| r.mean_return).collect()
    }

    /// CSV with header `step,seed,mean_return,std_return,moving_avg`:
    /// per-seed rows first (in run order), then rows with seed `mean`
    /// holding the across-seed statistics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,seed,mean_return,std_return,moving_avg\n");
        let mut seeds: Vec<u64> = Vec::new();
        for r in &self.rows {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
        }
        for seed in seeds {
            let mut rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.seed == seed).collect();
            rows.sort_by_key(|r| r.step);
            let series: Vec<f64> = rows.iter().map(|r| r.mean_return).collect();
            for (r, ma) in rows.iter().zip(moving_average(&series, self.window)) {
                let _ = writeln!(out, "{},{},{},{},{}", r.step, r.seed, r.mean_return, r.std_return, ma);
            }
        }
        for a in &self.aggregates {
            let _ = writeln!(out, "{},mean,{},{},{}", a.step, a.mean, a.std, a.moving_avg);
        }
        out
    }
}
