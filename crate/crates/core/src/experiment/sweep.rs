//! Seeded sweeps over labeled size, `r` or `d`, both pipelines per point.

use rayon::prelude::*;

use super::config::{ExperimentConfig, SweepAxis};
use crate::error::{Error, Result};
use crate::models::Architecture;
use crate::numkit::RngStream;
use crate::synthgen::{DataSpec, Dataset, WorldKind};
use crate::trainer::{finetune_labeled, pretrain_unlabeled, train_end_to_end, Pipeline, Pretrained, TrainConfig};

const STREAM_WORLD: u64 = 10;
const STREAM_UNLABELED: u64 = 11;
const STREAM_LABELED: u64 = 12;
const STREAM_TEST: u64 = 13;

pub const METHODS: [Pipeline; 2] = [Pipeline::EndToEnd, Pipeline::FuncReg];

pub fn architecture_for(kind: WorldKind) -> Architecture {
    match kind {
        WorldKind::AutoEncoder => Architecture::LinearAe,
        WorldKind::Masked => Architecture::MaskedQuad,
    }
}

/// World and samples of one run at one `(d, r)`.
#[derive(Debug, Clone)]
pub struct RunData {
    pub spec: DataSpec,
    pub unlabeled: Dataset,
    /// Largest labeled set; smaller sizes use its leading rows.
    pub labeled: Dataset,
    pub test: Dataset,
}

impl RunData {
    pub fn generate(
        world: WorldKind,
        d: usize,
        r: usize,
        zero_mean: bool,
        noise_variance: f64,
        sizes: (usize, usize, usize),
        rng: &RngStream,
    ) -> Result<Self> {
        let spec = DataSpec::generate(world, &mut rng.substream(STREAM_WORLD), d, r)?
            .with_zero_mean(zero_mean)
            .with_noise_variance(noise_variance);
        Self::sample(spec, sizes, rng)
    }

    /// Draw `(unlabeled, labeled, test)` samples of an existing world.
    pub fn sample(spec: DataSpec, (n_u, n_l, n_t): (usize, usize, usize), rng: &RngStream) -> Result<Self> {
        let unlabeled = spec.sample(n_u, &mut rng.substream(STREAM_UNLABELED), false)?;
        let labeled = spec.sample(n_l, &mut rng.substream(STREAM_LABELED), true)?;
        let test = spec.sample(n_t, &mut rng.substream(STREAM_TEST), true)?;
        Ok(Self {
            spec,
            unlabeled,
            labeled,
            test,
        })
    }

    pub fn test_sq_norm(&self) -> f64 {
        self.test.mean_sq_norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    /// Every grid point diverged.
    Diverged,
    /// Pretrained loss above `tau`.
    Infeasible,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
            RunStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub axis_value: usize,
    pub method: Pipeline,
    pub run: usize,
    pub status: RunStatus,
    /// Test MSE, divided by the mean squared test-input norm when normalizing.
    pub test_mse: f64,
    pub train_mse: f64,
    pub lr: f64,
    pub test_sq_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub axis_value: usize,
    pub method: Pipeline,
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
    /// Runs that entered the mean.
    pub runs: usize,
    /// Runs excluded because training failed.
    pub failed: usize,
}

impl SweepRow {
    pub fn std_error(&self) -> f64 {
        if self.runs == 0 {
            f64::NAN
        } else {
            self.std / (self.runs as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionRow {
    pub axis: SweepAxis,
    pub axis_value: usize,
    /// EndToEnd mean minus FuncReg mean.
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub rows: Vec<SweepRow>,
    pub reductions: Vec<ReductionRow>,
}

impl SweepOutcome {
    pub fn row(&self, axis_value: usize, method: Pipeline) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.axis_value == axis_value && r.method == method)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

struct Group {
    run: usize,
    d: usize,
    r: usize,
    data: RunData,
    pretrained: std::result::Result<Pretrained, RunStatus>,
}

fn status_of(e: Error) -> std::result::Result<RunStatus, Error> {
    match e {
        Error::Diverged => Ok(RunStatus::Diverged),
        Error::Infeasible { .. } => Ok(RunStatus::Infeasible),
        other => Err(other),
    }
}

fn run_config(cfg: &ExperimentConfig, run: usize) -> TrainConfig {
    TrainConfig {
        seed: cfg.seed.wrapping_add(run as u64),
        ..cfg.train.clone()
    }
}

/// Train both pipelines for every run at every axis point.
///
/// Work fans out over the current rayon pool; results are assembled in
/// axis/method/run order so they do not depend on the thread count.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let points = cfg.axis_points();
    let max_labeled = points.iter().map(|p| p.2).max().unwrap_or(0);
    let arch = architecture_for(cfg.world);

    // one world and one pretraining per (run, d, r)
    let mut keys: Vec<(usize, usize, usize)> = Vec::new();
    for run in 0..cfg.runs {
        for &(d, r, _) in &points {
            if !keys.contains(&(run, d, r)) {
                keys.push((run, d, r));
            }
        }
    }
    let groups: Vec<Group> = keys
        .par_iter()
        .map(|&(run, d, r)| -> Result<Group> {
            let rng = RngStream::for_run(cfg.seed, run as u64);
            let data = RunData::generate(
                cfg.world,
                d,
                r,
                cfg.zero_mean,
                cfg.noise_variance,
                (cfg.unlabeled, max_labeled, cfg.test),
                &rng,
            )?;
            let pretrained = match pretrain_unlabeled(arch, &data.unlabeled, &run_config(cfg, run), r) {
                Ok(p) => Ok(p),
                Err(e) => Err(status_of(e)?),
            };
            Ok(Group {
                run,
                d,
                r,
                data,
                pretrained,
            })
        })
        .collect::<Result<_>>()?;

    let mut tasks = Vec::new();
    for (pi, &(d, r, n)) in points.iter().enumerate() {
        for method in METHODS {
            for run in 0..cfg.runs {
                let gi = groups
                    .iter()
                    .position(|g| g.run == run && g.d == d && g.r == r)
                    .expect("every point has a group");
                tasks.push((pi, n, method, gi));
            }
        }
    }
    let records: Vec<RunRecord> = tasks
        .par_iter()
        .map(|&(pi, n, method, gi)| -> Result<RunRecord> {
            let g = &groups[gi];
            let labeled = g.data.labeled.head(n);
            let tc = run_config(cfg, g.run);
            let result = match method {
                Pipeline::EndToEnd => train_end_to_end(arch, g.r, &labeled, Some(&g.data.test), &tc),
                Pipeline::FuncReg => match &g.pretrained {
                    Ok(pre) => finetune_labeled(pre, &labeled, Some(&g.data.unlabeled), Some(&g.data.test), &tc),
                    Err(RunStatus::Infeasible) => Err(Error::Infeasible {
                        loss: f64::NAN,
                        tau: tc.tau.unwrap_or(f64::NAN),
                    }),
                    Err(_) => Err(Error::Diverged),
                },
            };
            let sq = g.data.test_sq_norm();
            let scale = if cfg.normalize { sq } else { 1.0 };
            let axis_value = cfg.axis_value(points[pi]);
            Ok(match result {
                Ok(res) => RunRecord {
                    axis_value,
                    method,
                    run: g.run,
                    status: RunStatus::Ok,
                    test_mse: res.test_loss.unwrap_or(f64::NAN) / scale,
                    train_mse: res.train_loss / scale,
                    lr: res.chosen_lr,
                    test_sq_norm: sq,
                },
                Err(e) => RunRecord {
                    axis_value,
                    method,
                    run: g.run,
                    status: status_of(e)?,
                    test_mse: f64::NAN,
                    train_mse: f64::NAN,
                    lr: f64::NAN,
                    test_sq_norm: sq,
                },
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut reductions = Vec::new();
    for &p in &points {
        let axis_value = cfg.axis_value(p);
        let mut means = [f64::NAN; 2];
        for (mi, method) in METHODS.into_iter().enumerate() {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.axis_value == axis_value && r.method == method)
                .collect();
            let ok: Vec<f64> = group
                .iter()
                .filter(|r| r.status == RunStatus::Ok)
                .map(|r| r.test_mse)
                .collect();
            let (mean, std) = mean_std(&ok);
            means[mi] = mean;
            rows.push(SweepRow {
                axis: cfg.axis,
                axis_value,
                method,
                mean,
                std,
                runs: ok.len(),
                failed: group.len() - ok.len(),
            });
        }
        reductions.push(ReductionRow {
            axis: cfg.axis,
            axis_value,
            reduction: means[0] - means[1],
        });
    }
    Ok(SweepOutcome {
        records,
        rows,
        reductions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_small_cases() {
        assert!(mean_std(&[]).0.is_nan());
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
