//! Grid of experiments over noise rates, methods and seeds, aggregated into a
//! method × noise-rate table of mean ± standard deviation accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::pipeline::run_algorithm1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rho: f64,
    pub method: Method,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub estimation_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: Method,
    pub rho: f64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub runs: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SweepSummary>,
}

impl SweepResult {
    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(|c| c.error.is_some())
    }

    pub fn summary_for(&self, method: Method, rho: f64) -> Option<&SweepSummary> {
        self.summary.iter().find(|s| s.method == method && s.rho == rho)
    }

    /// One row per run: `method,rho,seed,accuracy,estimation_error,status`.
    pub fn cells_csv(&self) -> String {
        let mut s = String::from("method,rho,seed,accuracy,estimation_error,status\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.method.name(),
                c.rho,
                c.seed,
                c.accuracy.map_or(String::new(), |a| a.to_string()),
                c.estimation_error.map_or(String::new(), |a| a.to_string()),
                if c.error.is_some() { "FAILED" } else { "ok" }
            );
        }
        s
    }

    /// Methods as rows, noise rates as columns, cells `mean±std` in percent.
    pub fn table_csv(&self) -> String {
        let mut rhos: Vec<f64> = self.summary.iter().map(|s| s.rho).collect();
        rhos.sort_by(f64::total_cmp);
        rhos.dedup();
        let mut methods: Vec<Method> = self.summary.iter().map(|s| s.method).collect();
        methods.sort();
        methods.dedup();
        let mut s = String::from("method");
        for r in &rhos {
            let _ = write!(s, ",{r}");
        }
        s.push('\n');
        for m in methods {
            s.push_str(m.name());
            for &r in &rhos {
                let cell = match self.summary_for(m, r) {
                    Some(x) if x.failed > 0 => "FAILED".to_string(),
                    Some(SweepSummary {
                        mean: Some(mean),
                        std: Some(sd),
                        ..
                    }) => format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * sd),
                    _ => String::new(),
                };
                let _ = write!(s, ",{cell}");
            }
            s.push('\n');
        }
        s
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Run every (ρ, method, seed) combination with up to `jobs` worker threads.
/// Failed runs are recorded, not propagated.
pub fn run_sweep(base: &ExperimentConfig, rhos: &[f64], methods: &[Method], seeds: &[u64], jobs: usize) -> Result<SweepResult> {
    if rhos.is_empty() || methods.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one noise rate, method and seed"));
    }
    let mut rhos = rhos.to_vec();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();

    let mut grid = Vec::new();
    for &rho in &rhos {
        for &method in &methods {
            for &seed in &seeds {
                grid.push((rho, method, seed));
            }
        }
    }
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<SweepCell>>> = Mutex::new(vec![None; grid.len()]);
    let run_cell = |(rho, method, seed): (f64, Method, u64)| {
        let mut cfg = base.clone();
        cfg.noise.rho = rho;
        cfg.noise.transition = None;
        cfg.method = method;
        cfg.seed = seed;
        match run_algorithm1(&cfg) {
            Ok(r) => SweepCell {
                rho,
                method,
                seed,
                accuracy: Some(r.test.accuracy),
                estimation_error: r.estimation.and_then(|e| e.error),
                error: None,
            },
            Err(e) => SweepCell {
                rho,
                method,
                seed,
                accuracy: None,
                estimation_error: None,
                error: Some(e.to_string()),
            },
        }
    };
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(grid.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("queue lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&job) = grid.get(i) else { break };
                let cell = run_cell(job);
                results.lock().expect("results lock")[i] = Some(cell);
            });
        }
    });
    let cells: Vec<SweepCell> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();

    let mut groups: BTreeMap<(Method, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for c in &cells {
        let ri = rhos.iter().position(|&r| r == c.rho).expect("known rho");
        let entry = groups.entry((c.method, ri)).or_default();
        match c.accuracy {
            Some(a) => entry.0.push(a),
            None => entry.1 += 1,
        }
    }
    let summary = groups
        .into_iter()
        .map(|((method, ri), (accs, failed))| {
            let ms = mean_std(&accs);
            SweepSummary {
                method,
                rho: rhos[ri],
                mean: ms.map(|x| x.0),
                std: ms.map(|x| x.1),
                runs: accs.len() + failed,
                failed,
            }
        })
        .collect();
    Ok(SweepResult { cells, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[0.5]), Some((0.5, 0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert!((m - 2.0).abs() < 1e-15 && (s - 1.0).abs() < 1e-15);
    }
}
