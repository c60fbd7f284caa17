//! Mini-batch SGD with momentum, the two training pipelines and grid search.

use crate::error::{ensure, Error, Result};
use crate::models::{
    gradients, prediction_loss, Architecture, Batch, GradSet, Model, Objective, OrthoWeights,
    RegKind,
};
use crate::numkit::RngStream;
use crate::synthgen::Dataset;

/// Grid points whose loss exceeds this (or is non-finite) are discarded.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Substream ids derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_LABELED_ORDER: u64 = 2;
const STREAM_UNLABELED_ORDER: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pipeline {
    EndToEnd,
    FuncReg,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::EndToEnd => "EndToEnd",
            Pipeline::FuncReg => "FuncReg",
        }
    }
}

impl std::str::FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "EndToEnd" | "end_to_end" | "e2e" => Ok(Pipeline::EndToEnd),
            "FuncReg" | "funcreg" | "func_reg" => Ok(Pipeline::FuncReg),
            other => Err(Error::invalid(format!("unknown pipeline '{other}'"))),
        }
    }
}

/// `[lo, lo*10, ..., hi]`.
pub fn decade_grid(lo_exp: i32, hi_exp: i32) -> Vec<f64> {
    (lo_exp..=hi_exp).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub pipeline: Pipeline,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub batch_size: usize,
    /// Learning rates tried in every SGD stage.
    pub lr_grid: Vec<f64>,
    /// Values tried for each orthonormal-penalty weight (auto-encoder only).
    pub lambda_grid: Vec<f64>,
    pub momentum: f64,
    pub seed: u64,
    /// Constrained mode: reject a pretrained `h` whose `L_r` exceeds `tau`.
    pub tau: Option<f64>,
    /// Weight of `L_r` kept in the objective while finetuning; 0 disables.
    pub finetune_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pipeline: Pipeline::FuncReg,
            epochs_pretrain: 200,
            epochs_finetune: 200,
            batch_size: 64,
            lr_grid: decade_grid(-5, -1),
            lambda_grid: decade_grid(-3, 3),
            momentum: 0.9,
            seed: 0,
            tau: None,
            finetune_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs_pretrain > 0 && self.epochs_finetune > 0, "epoch counts must be positive");
        ensure!(self.batch_size > 0, "batch size must be positive");
        ensure!(!self.lr_grid.is_empty(), "learning-rate grid is empty");
        ensure!(!self.lambda_grid.is_empty(), "lambda grid is empty");
        ensure!(
            self.lr_grid.iter().all(|&v| v > 0.0 && v.is_finite()),
            "learning rates must be positive"
        );
        ensure!(
            self.lambda_grid.iter().all(|&v| v >= 0.0 && v.is_finite()),
            "lambdas must be >= 0"
        );
        ensure!((0.0..1.0).contains(&self.momentum), "momentum must lie in [0, 1)");
        ensure!(
            self.finetune_penalty >= 0.0 && self.finetune_penalty.is_finite(),
            "finetune penalty must be >= 0"
        );
        if let Some(t) = self.tau {
            ensure!(t >= 0.0, "tau must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub model: Model,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub pretrain_reg_loss: Option<f64>,
    pub chosen_lr: f64,
    pub chosen_pretrain_lr: Option<f64>,
    /// `(lambda_1, lambda_2)` of the orthonormal penalties.
    pub chosen_lambdas: Option<(f64, f64)>,
    /// Training objective at the end of every finetuning epoch.
    pub loss_trace: Vec<f64>,
    /// Pretraining objective at the end of every pretraining epoch.
    pub pretrain_trace: Vec<f64>,
}

/// Output of unlabeled pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    /// `h` (and `g` for the auto-encoder); the predictor is still zero.
    pub model: Model,
    pub reg_loss: f64,
    pub lr: f64,
    pub lambdas: Option<(f64, f64)>,
    pub trace: Vec<f64>,
}

/// `velocity <- momentum * velocity + grads; params <- params - lr * velocity`.
pub fn sgd_update(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    ensure!(lr > 0.0, "learning rate must be positive, got {lr}");
    ensure!(
        params.len() == grads.len() && grads.len() == velocity.len(),
        "parameter, gradient and velocity lengths differ"
    );
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Which parameter blocks an SGD stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub w: bool,
    pub a: bool,
    pub v: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable { w: true, a: true, v: true };
}

/// One momentum step on the trainable blocks of `model`, then projection.
pub fn sgd_step(
    model: &mut Model,
    grads: &GradSet,
    velocity: &mut GradSet,
    lr: f64,
    momentum: f64,
    trainable: Trainable,
) -> Result<()> {
    ensure!(lr > 0.0, "learning rate must be positive, got {lr}");
    ensure!(
        grads.w.shape() == model.repr.w.shape() && grads.a.len() == model.r(),
        "gradient shape mismatch"
    );
    if trainable.w {
        sgd_update(model.repr.w.as_mut_slice(), grads.w.as_slice(), velocity.w.as_mut_slice(), lr, momentum)?;
    }
    if trainable.a {
        sgd_update(&mut model.predictor.a, &grads.a, &mut velocity.a, lr, momentum)?;
    }
    if trainable.v {
        if let (Some(g), Some(gv), Some(vv)) = (model.decoder.as_mut(), grads.v.as_ref(), velocity.v.as_mut()) {
            sgd_update(g.v.as_mut_slice(), gv.as_slice(), vv.as_mut_slice(), lr, momentum)?;
        }
    }
    model.project();
    Ok(())
}

/// Exhaustive search; ties keep the earliest entry, so grids listed in
/// ascending order break ties toward the smaller value. `None` scores are
/// discarded.
pub fn grid_search<T: Clone>(
    grid: &[T],
    mut evaluate: impl FnMut(&T) -> Option<f64>,
    lower_is_better: bool,
) -> Option<(T, f64)> {
    let mut best: Option<(T, f64)> = None;
    for entry in grid {
        let Some(score) = evaluate(entry) else { continue };
        if !score.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, b)) => {
                if lower_is_better {
                    score < *b
                } else {
                    score > *b
                }
            }
        };
        if better {
            best = Some((entry.clone(), score));
        }
    }
    best
}

/// Runs `epochs` passes over the driving dataset; returns the full-data
/// objective after each epoch, or `None` if training diverged.
#[allow(clippy::too_many_arguments)]
fn run_sgd(
    model: &mut Model,
    objective: &Objective,
    labeled: Option<&Dataset>,
    unlabeled: Option<&Dataset>,
    trainable: Trainable,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    momentum: f64,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    let mut velocity = GradSet::zeros_like(model);
    let mut lab_rng = RngStream::with_stream(seed, STREAM_LABELED_ORDER);
    let mut unl_rng = RngStream::with_stream(seed, STREAM_UNLABELED_ORDER);
    let uses_labels = objective.prediction != 0.0;
    let uses_unlabeled = objective.regularization.is_some();
    let driver_len = if uses_labels {
        labeled.map_or(0, Dataset::len)
    } else {
        unlabeled.map_or(0, Dataset::len)
    };
    ensure!(driver_len > 0, "training set is empty");

    let mut lab_order: Vec<usize> = (0..labeled.map_or(0, Dataset::len)).collect();
    let mut unl_order: Vec<usize> = (0..unlabeled.map_or(0, Dataset::len)).collect();
    let full_lab = labeled.filter(|_| uses_labels).map(Batch::full);
    let full_unl = unlabeled.filter(|_| uses_unlabeled).map(Batch::full);
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        if uses_labels {
            lab_rng.shuffle(&mut lab_order);
        }
        if uses_unlabeled {
            unl_rng.shuffle(&mut unl_order);
        }
        let n_batches = driver_len.div_ceil(batch_size);
        for b in 0..n_batches {
            let lab_batch = if uses_labels {
                let lo = b * batch_size;
                let hi = (lo + batch_size).min(lab_order.len());
                Some(Batch::rows(labeled.unwrap(), &lab_order[lo..hi]))
            } else {
                None
            };
            let unl_batch = if uses_unlabeled {
                let n = unl_order.len();
                let lo = (b * batch_size) % n;
                let hi = (lo + batch_size).min(n);
                Some(Batch::rows(unlabeled.unwrap(), &unl_order[lo..hi]))
            } else {
                None
            };
            let grads = gradients(model, objective, lab_batch, unl_batch)?;
            if !grads.is_finite() {
                return Ok(None);
            }
            sgd_step(model, &grads, &mut velocity, lr, momentum, trainable)?;
        }
        let loss = objective.value(model, full_lab, full_unl)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Ok(None);
        }
        trace.push(loss);
    }
    Ok(Some(trace))
}

fn reg_kind_for(kind: Architecture) -> RegKind {
    match kind {
        Architecture::LinearAe => RegKind::AeReconstruction,
        Architecture::MaskedQuad => RegKind::MaskedFirstCoord,
    }
}

/// Initial model for a run: identical for every grid point of that run.
pub fn initial_model(kind: Architecture, d: usize, r: usize, masked: bool, seed: u64) -> Model {
    let mut rng = RngStream::with_stream(seed, STREAM_INIT);
    Model::random(kind, d, r, masked, &mut rng)
}

/// Pretrain `h` (and `g` for the auto-encoder) on unlabeled data.
///
/// For the auto-encoder the orthonormal penalty weights `(lambda_1, lambda_2)`
/// range over `lambda_grid x lambda_grid`; every candidate (with every
/// learning rate) is scored by plain reconstruction MSE on `U`.
pub fn pretrain_unlabeled(kind: Architecture, unlabeled: &Dataset, config: &TrainConfig, r: usize) -> Result<Pretrained> {
    let lambdas: Vec<(f64, f64)> = match kind {
        Architecture::LinearAe => config
            .lambda_grid
            .iter()
            .flat_map(|&l1| config.lambda_grid.iter().map(move |&l2| (l1, l2)))
            .collect(),
        Architecture::MaskedQuad => vec![(0.0, 0.0)],
    };
    pretrain_over(kind, unlabeled, config, r, &lambdas)
}

/// `pretrain_unlabeled` over an explicit list of `(lambda_1, lambda_2)` pairs
/// (ignored for the masked architecture, which has no decoder).
pub fn pretrain_over(
    kind: Architecture,
    unlabeled: &Dataset,
    config: &TrainConfig,
    r: usize,
    lambdas: &[(f64, f64)],
) -> Result<Pretrained> {
    config.validate()?;
    ensure!(!unlabeled.is_empty(), "unlabeled set is empty");
    ensure!(r >= 1 && r <= unlabeled.dim(), "invalid representation size r = {r}");
    ensure!(!lambdas.is_empty(), "no orthonormal-penalty weights to try");
    let d = unlabeled.dim();
    let masked = kind == Architecture::MaskedQuad;
    let init = initial_model(kind, d, r, masked, config.seed);
    let reg = reg_kind_for(kind);
    let trainable = Trainable { w: true, a: false, v: true };
    let lambdas: &[(f64, f64)] = if masked { &[(0.0, 0.0)] } else { lambdas };

    let mut grid = Vec::new();
    for &lam in lambdas {
        for &lr in &config.lr_grid {
            grid.push((lam, lr));
        }
    }

    let plain = Objective::pretraining(reg, OrthoWeights::default());
    let mut best: Option<(Pretrained, f64)> = None;
    for &((l1, l2), lr) in &grid {
        let objective = Objective::pretraining(reg, OrthoWeights { decoder: l1, encoder: l2 });
        let mut model = init.clone();
        let Some(trace) = run_sgd(
            &mut model,
            &objective,
            None,
            Some(unlabeled),
            trainable,
            config.epochs_pretrain,
            config.batch_size,
            lr,
            config.momentum,
            config.seed,
        )?
        else {
            continue;
        };
        let score = plain.value(&model, None, Some(Batch::full(unlabeled)))?;
        if !score.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, b)| score < *b) {
            let lambdas = (kind == Architecture::LinearAe).then_some((l1, l2));
            best = Some((
                Pretrained {
                    model,
                    reg_loss: score,
                    lr,
                    lambdas,
                    trace,
                },
                score,
            ));
        }
    }
    let (pre, loss) = best.ok_or(Error::Diverged)?;
    if let Some(tau) = config.tau {
        if loss > tau {
            return Err(Error::Infeasible { loss, tau });
        }
    }
    Ok(pre)
}

/// Jointly train `(h, f)` on labeled data from `init`; the decoder (if any)
/// is carried along frozen. The learning rate minimizes final training MSE.
pub fn train_from(init: &Model, labeled: &Dataset, test: Option<&Dataset>, config: &TrainConfig) -> Result<TrainResult> {
    let trainable = Trainable { w: true, a: true, v: false };
    train_with(init, &Objective::supervised(), trainable, labeled, None, test, config)
}

fn train_with(
    init: &Model,
    objective: &Objective,
    trainable: Trainable,
    labeled: &Dataset,
    unlabeled: Option<&Dataset>,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    ensure!(!labeled.is_empty(), "labeled set is empty");
    labeled.labels_or_err()?;
    ensure!(labeled.dim() == init.d(), "labeled data dimension {} != model input dimension {}", labeled.dim(), init.d());
    let mut best: Option<(Model, f64, Vec<f64>, f64)> = None;
    for &lr in &config.lr_grid {
        let mut model = init.clone();
        let Some(trace) = run_sgd(
            &mut model,
            objective,
            Some(labeled),
            unlabeled,
            trainable,
            config.epochs_finetune,
            config.batch_size,
            lr,
            config.momentum,
            config.seed,
        )?
        else {
            continue;
        };
        let mse = prediction_loss(&model.repr, &model.predictor, labeled)?;
        if best.as_ref().is_none_or(|b| mse < b.3) {
            best = Some((model, lr, trace, mse));
        }
    }
    let (model, lr, trace, train_loss) = best.ok_or(Error::Diverged)?;
    let test_loss = match test {
        Some(t) => Some(prediction_loss(&model.repr, &model.predictor, t)?),
        None => None,
    };
    Ok(TrainResult {
        model,
        train_loss,
        test_loss,
        pretrain_reg_loss: None,
        chosen_lr: lr,
        chosen_pretrain_lr: None,
        chosen_lambdas: None,
        loss_trace: trace,
        pretrain_trace: Vec::new(),
    })
}

/// Finetune a pretrained representation together with a fresh predictor.
///
/// With `config.finetune_penalty > 0` the objective is
/// `L_c(f, h; S) + lambda * L_r(h, g; U)` (plus the pretraining orthonormal
/// penalties) and `g` keeps training; otherwise `g` is frozen and only the
/// prediction loss is minimized.
pub fn finetune_labeled(
    pre: &Pretrained,
    labeled: &Dataset,
    unlabeled: Option<&Dataset>,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainResult> {
    let lambda = config.finetune_penalty;
    let mut res = if lambda > 0.0 {
        let u = unlabeled.ok_or_else(|| Error::invalid("penalized finetuning needs unlabeled data"))?;
        let (l1, l2) = pre.lambdas.unwrap_or((0.0, 0.0));
        let objective = Objective {
            prediction: 1.0,
            regularization: Some((reg_kind_for(pre.model.kind()), lambda)),
            ortho: OrthoWeights {
                decoder: lambda * l1,
                encoder: lambda * l2,
            },
        };
        train_with(&pre.model, &objective, Trainable::ALL, labeled, Some(u), test, config)?
    } else {
        train_from(&pre.model, labeled, test, config)?
    };
    res.pretrain_reg_loss = Some(pre.reg_loss);
    res.chosen_pretrain_lr = Some(pre.lr);
    res.chosen_lambdas = pre.lambdas;
    res.pretrain_trace = pre.trace.clone();
    Ok(res)
}

/// Train `(h, f)` from a random initialization using labeled data only.
pub fn train_end_to_end(kind: Architecture, r: usize, labeled: &Dataset, test: Option<&Dataset>, config: &TrainConfig) -> Result<TrainResult> {
    ensure!(!labeled.is_empty(), "labeled set is empty");
    ensure!(r >= 1 && r <= labeled.dim(), "invalid representation size r = {r}");
    // end-to-end learning has no masked constraint and no decoder
    let mut init = initial_model(kind, labeled.dim(), r, false, config.seed);
    init.decoder = None;
    train_from(&init, labeled, test, config)
}

/// Either pipeline, as selected by `config.pipeline`.
pub fn train_pipeline(
    kind: Architecture,
    r: usize,
    labeled: &Dataset,
    unlabeled: Option<&Dataset>,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainResult> {
    match config.pipeline {
        Pipeline::EndToEnd => train_end_to_end(kind, r, labeled, test, config),
        Pipeline::FuncReg => {
            let u = unlabeled.ok_or_else(|| Error::invalid("FuncReg pipeline needs unlabeled data"))?;
            let pre = pretrain_unlabeled(kind, u, config, r)?;
            finetune_labeled(&pre, labeled, Some(u), test, config)
        }
    }
}
