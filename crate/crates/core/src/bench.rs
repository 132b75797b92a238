//! Runtime comparison of the neural solvers against full-body FABRIK.
//!
//! Cases are same-clip `(start, target)` pose pairs from held-out clips, so
//! every target is reachable. Each call is timed on its own and the rows are
//! interleaved per case. Timings cover the whole interactive path
//! (normalize, encode, solve, decode, denormalize) on the calling thread and
//! exclude model loading.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{PoseDataset, Split};
use crate::fabrik::{fabrik_solve_fullbody, FabrikConfig};
use crate::geom::Vec3;
use crate::skeleton::Pose;
use crate::solver::{SolveScratch, SolverError, SolverSet, TargetSpec, ANKLES, HANDS, HEAD};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub iterations: usize,
    /// Full passes over every row; a row reports its fastest pass.
    pub repeats: usize,
    pub seed: u64,
    pub fabrik: FabrikConfig,
    /// Distinct cases in the input-independence measurement.
    pub independence_cases: usize,
    pub independence_reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            repeats: 5,
            seed: 0,
            fabrik: FabrikConfig::default(),
            independence_cases: 50,
            independence_reps: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fabrik,
    Neural,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub effectors: usize,
    pub post_process: bool,
    /// Fastest per-pass mean.
    pub mean_ms: f64,
    /// Per-pass mean of every call except the slowest 1%, in pass order.
    pub pass_means_ms: Vec<f64>,
    pub footprint_kb: Option<f64>,
}

impl BenchRow {
    pub fn label(&self) -> String {
        let name = match self.method {
            Method::Fabrik => "FABRIK",
            Method::Neural => "Ours",
        };
        let post = if self.post_process { "+post" } else { "" };
        format!("{name}({}){post}", self.effectors)
    }
}

/// Spread of per-case mean runtimes of the 2-target neural solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Independence {
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl Independence {
    pub fn relative_std(&self) -> f64 {
        self.std_ms / self.mean_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub iterations: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
    pub independence: Independence,
}

impl BenchReport {
    pub fn row(&self, method: Method, effectors: usize, post_process: bool) -> Option<&BenchRow> {
        self.rows.iter().find(|r| {
            r.method == method && r.effectors == effectors && r.post_process == post_process
        })
    }

    /// Tab-separated rows with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("method\teffectors\tpost_process\tmean_ms\tfootprint_kb\titerations\n");
        for r in &self.rows {
            let kb = r
                .footprint_kb
                .map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{}\t{}",
                r.label(),
                r.effectors,
                r.post_process,
                r.mean_ms,
                kb,
                self.iterations
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>12} {:>14}\n",
            "method", "runtime (ms)", "footprint (kB)"
        );
        for r in &self.rows {
            let kb = r
                .footprint_kb
                .map_or_else(|| "-".to_string(), |v| format!("{v:.0}"));
            let _ = writeln!(out, "{:<16} {:>12.4} {:>14}", r.label(), r.mean_ms, kb);
        }
        let _ = writeln!(
            out,
            "best of {} passes x {} iterations; neural runtime spread across targets {:.1}% of mean",
            self.repeats,
            self.iterations,
            100.0 * self.independence.relative_std()
        );
        out
    }
}

/// Mean after dropping the slowest 1% of calls (preemption spikes).
fn median(times: &mut [f64]) -> f64 {
    times.sort_by(f64::total_cmp);
    let m = times.len() / 2;
    if times.len() % 2 == 0 {
        (times[m - 1] + times[m]) / 2.0
    } else {
        times[m]
    }
}

fn trimmed_mean(times: &mut [f64]) -> f64 {
    times.sort_by(f64::total_cmp);
    let keep = (times.len() - times.len() / 100).max(1);
    times[..keep].iter().sum::<f64>() / keep as f64
}

struct Case {
    start: Pose,
    target: Pose,
}

fn spec_for(joints: &[usize], target: &Pose) -> TargetSpec {
    TargetSpec::at_pose(joints, target).expect("standard joint sets are valid")
}

fn fabrik_targets(joint_sets: &[&[usize]], target: &Pose) -> Vec<(usize, Vec3)> {
    joint_sets
        .iter()
        .flat_map(|s| s.iter().map(|&j| (j, target.joint(j))))
        .collect()
}

/// Times every row. `footprints_kb` gives the weight size of the 2-target and
/// 5-effector neural systems.
pub fn run_bench(
    set: &SolverSet,
    dataset: &PoseDataset,
    footprints_kb: (f64, f64),
    config: &BenchConfig,
) -> Result<BenchReport, SolverError> {
    let split = if dataset.pair_sampler(Split::Validation).is_empty() {
        Split::Train
    } else {
        Split::Validation
    };
    let sampler = dataset.pair_sampler(split);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cases: Vec<Case> = (0..config.iterations.max(1))
        .map(|_| {
            let p = sampler.sample(&mut rng).ok_or(SolverError::EmptyDataset)?;
            Ok(Case {
                start: *p.x,
                target: *p.x_prime,
            })
        })
        .collect::<Result<_, SolverError>>()?;

    let two: Vec<&[usize]> = vec![&HANDS];
    let five: Vec<&[usize]> = vec![&HANDS, &ANKLES, &HEAD];
    let specs = |sets: &[&[usize]]| -> Vec<Vec<TargetSpec>> {
        cases
            .iter()
            .map(|c| sets.iter().map(|s| spec_for(s, &c.target)).collect())
            .collect()
    };
    let specs2 = specs(&two);
    let specs5 = specs(&five);
    let targets2: Vec<Vec<(usize, Vec3)>> = cases
        .iter()
        .map(|c| fabrik_targets(&two, &c.target))
        .collect();
    let targets5: Vec<Vec<(usize, Vec3)>> = cases
        .iter()
        .map(|c| fabrik_targets(&five, &c.target))
        .collect();
    // Fail early on missing solvers rather than inside the timed loop.
    set.pass_widths(&specs5[0])?;

    let layout = [
        (Method::Fabrik, 2, false),
        (Method::Neural, 2, false),
        (Method::Neural, 2, true),
        (Method::Fabrik, 5, false),
        (Method::Neural, 5, false),
        (Method::Neural, 5, true),
    ];
    let mut scratch = SolveScratch::default();
    let mut run = |row: usize, i: usize| -> Result<(), SolverError> {
        let (method, n, post) = layout[row];
        let start = black_box(&cases[i].start);
        match (method, n) {
            (Method::Fabrik, 2) => {
                black_box(
                    fabrik_solve_fullbody(start, &targets2[i], &config.fabrik)
                        .expect("effector targets"),
                );
            }
            (Method::Fabrik, _) => {
                black_box(
                    fabrik_solve_fullbody(start, &targets5[i], &config.fabrik)
                        .expect("effector targets"),
                );
            }
            (Method::Neural, 2) => {
                black_box(set.solve_into(start, &specs2[i], post, &mut scratch)?);
            }
            (Method::Neural, _) => {
                black_box(set.solve_into(start, &specs5[i], post, &mut scratch)?);
            }
        }
        Ok(())
    };

    // Warm-up pass.
    for i in 0..cases.len() {
        for row in 0..layout.len() {
            run(row, i)?;
        }
    }

    // Rows are interleaved case by case in a shuffled order, so clock drift,
    // load and cache state hit every row alike.
    let mut passes: Vec<Vec<f64>> = vec![Vec::new(); layout.len()];
    let mut calls: Vec<Vec<f64>> = vec![Vec::with_capacity(cases.len()); layout.len()];
    let mut order: Vec<usize> = (0..layout.len()).collect();
    for _ in 0..config.repeats.max(1) {
        calls.iter_mut().for_each(Vec::clear);
        for i in 0..cases.len() {
            order.shuffle(&mut rng);
            for &row in &order {
                let start = Instant::now();
                run(row, i)?;
                calls[row].push(start.elapsed().as_secs_f64() * 1e3);
            }
        }
        for (slot, times) in passes.iter_mut().zip(&mut calls) {
            slot.push(trimmed_mean(times));
        }
    }
    let rows = layout
        .iter()
        .zip(passes)
        .map(
            |(&(method, effectors, post_process), pass_means_ms)| BenchRow {
                method,
                effectors,
                post_process,
                mean_ms: pass_means_ms.iter().copied().fold(f64::INFINITY, f64::min),
                pass_means_ms,
                footprint_kb: (method == Method::Neural).then_some(if effectors == 2 {
                    footprints_kb.0
                } else {
                    footprints_kb.1
                }),
            },
        )
        .collect();

    drop(run);
    let mut scratch = SolveScratch::default();
    let n = config.independence_cases.clamp(1, cases.len());
    let reps = config.independence_reps.max(1);
    // Cases are visited round-robin and each keeps the median of its calls,
    // so a preempted call or a slow stretch does not land on one input.
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); n];
    for _ in 0..reps {
        for (i, s) in specs2.iter().take(n).enumerate() {
            let start = Instant::now();
            black_box(set.solve_into(black_box(&cases[i].start), s, false, &mut scratch)?);
            samples[i].push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    let per_case: Vec<f64> = samples.iter_mut().map(|t| median(t)).collect();
    let mean = per_case.iter().sum::<f64>() / n as f64;
    let var = per_case.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;

    Ok(BenchReport {
        iterations: cases.len(),
        repeats: config.repeats.max(1),
        rows,
        independence: Independence {
            mean_ms: mean,
            std_ms: var.sqrt(),
        },
    })
}
