//! Hypothesis classes, losses and their analytic gradients.
//!
//! Both architectures predict `y = sum_i a_i (w_i . x)^2`. They differ in
//! where the square sits (inside the predictor for the linear auto-encoder,
//! inside the representation for the masked quadratic map) which matters
//! for the representation `phi = h(x)` and therefore for the regularizers.

use std::io::Write;

use crate::error::{ensure, Error, Result};
use crate::numkit::{dot, project_to_ball, Matrix, RngStream, Vector};
use crate::synthgen::{format_float, Dataset};

/// Slack allowed on the unit-ball constraints after projection.
pub const NORM_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// `phi = W x`, `y = sum a_i phi_i^2`.
    LinearAe,
    /// `phi_i = (w_i . x)^2`, `y = a . phi`.
    MaskedQuad,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::LinearAe => "linear_ae",
            Architecture::MaskedQuad => "masked_quad",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "linear_ae" => Ok(Architecture::LinearAe),
            "masked_quad" => Ok(Architecture::MaskedQuad),
            other => Err(Error::invalid(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Representation map `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprMap {
    pub kind: Architecture,
    /// `r x d`, one row per feature.
    pub w: Matrix,
    /// Column 0 of `w` is pinned to zero (masked self-supervision).
    pub masked: bool,
}

impl ReprMap {
    pub fn new(kind: Architecture, w: Matrix, masked: bool) -> Self {
        let mut h = Self { kind, w, masked };
        if masked {
            h.zero_first_column();
        }
        h
    }

    pub fn r(&self) -> usize {
        self.w.rows()
    }

    pub fn d(&self) -> usize {
        self.w.cols()
    }

    /// Linear pre-activations `W x`.
    pub fn linear(&self, x: &[f64]) -> Vector {
        self.w.matvec_unchecked(x)
    }

    /// `phi = h(x)`.
    pub fn features(&self, x: &[f64]) -> Result<Vector> {
        ensure!(x.len() == self.d(), "input length {} != d = {}", x.len(), self.d());
        let z = self.linear(x);
        Ok(match self.kind {
            Architecture::LinearAe => z,
            Architecture::MaskedQuad => z.into_iter().map(|v| v * v).collect(),
        })
    }

    fn zero_first_column(&mut self) {
        for i in 0..self.w.rows() {
            self.w[(i, 0)] = 0.0;
        }
    }

    /// Rows onto the unit ball; column 0 cleared when masked.
    pub fn project(&mut self) {
        if self.masked {
            self.zero_first_column();
        }
        for i in 0..self.w.rows() {
            project_to_ball(self.w.row_mut(i), 1.0);
        }
    }
}

/// Predictor `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub a: Vector,
}

impl Predictor {
    pub fn zeros(r: usize) -> Self {
        Self { a: vec![0.0; r] }
    }

    pub fn project(&mut self) {
        project_to_ball(&mut self.a, 1.0);
    }

    /// `f(phi)` for the given architecture.
    pub fn apply(&self, kind: Architecture, phi: &[f64]) -> f64 {
        match kind {
            Architecture::LinearAe => self.a.iter().zip(phi).map(|(a, p)| a * p * p).sum(),
            Architecture::MaskedQuad => dot(&self.a, phi),
        }
    }
}

/// Decoder `g(phi) = V phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    /// `d x r`.
    pub v: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub repr: ReprMap,
    pub predictor: Predictor,
    pub decoder: Option<Decoder>,
}

impl Model {
    pub fn new(repr: ReprMap, predictor: Predictor, decoder: Option<Decoder>) -> Result<Self> {
        let (r, d) = repr.w.shape();
        ensure!(predictor.a.len() == r, "predictor length {} != r = {r}", predictor.a.len());
        if let Some(g) = &decoder {
            ensure!(g.v.shape() == (d, r), "decoder must be {d}x{r}");
        }
        Ok(Self {
            repr,
            predictor,
            decoder,
        })
    }

    /// Random initialization: `W_ij ~ N(0, 1/d)`, `a = 0`, and for the linear
    /// auto-encoder `V_ij ~ N(0, 1/d)`; then projected.
    pub fn random(kind: Architecture, d: usize, r: usize, masked: bool, rng: &mut RngStream) -> Self {
        let sd = 1.0 / (d as f64).sqrt();
        let w = Matrix::from_fn(r, d, |_, _| sd * rng.standard_normal());
        let decoder = (kind == Architecture::LinearAe).then(|| Decoder {
            v: Matrix::from_fn(d, r, |_, _| sd * rng.standard_normal()),
        });
        let mut m = Self {
            repr: ReprMap::new(kind, w, masked),
            predictor: Predictor::zeros(r),
            decoder,
        };
        m.project();
        m
    }

    pub fn kind(&self) -> Architecture {
        self.repr.kind
    }

    pub fn d(&self) -> usize {
        self.repr.d()
    }

    pub fn r(&self) -> usize {
        self.repr.r()
    }

    pub fn project(&mut self) {
        self.repr.project();
        self.predictor.project();
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        predict(&self.repr, &self.predictor, x)
    }

    pub fn is_finite(&self) -> bool {
        self.repr.w.is_finite()
            && self.predictor.a.iter().all(|v| v.is_finite())
            && self.decoder.as_ref().is_none_or(|g| g.v.is_finite())
    }

    /// Parameter blocks in the fixed order `W`, `a`, `V`.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks: Vec<&mut [f64]> =
            vec![self.repr.w.as_mut_slice(), self.predictor.a.as_mut_slice()];
        if let Some(g) = &mut self.decoder {
            blocks.push(g.v.as_mut_slice());
        }
        blocks
    }

    /// Flat parameter checkpoint: a `key=value` header line, then one
    /// `group,row,col,value` line per parameter.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::invalid(format!("checkpoint write: {e}"));
        out.write_all(crate::experiment::schema_line("checkpoint").as_bytes())
            .map_err(io)?;
        writeln!(
            out,
            "kind={},d={},r={},masked={},decoder={}",
            self.kind().name(),
            self.d(),
            self.r(),
            u8::from(self.repr.masked),
            u8::from(self.decoder.is_some())
        )
        .map_err(io)?;
        let w = &self.repr.w;
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                writeln!(out, "W,{i},{j},{}", format_float(w[(i, j)])).map_err(io)?;
            }
        }
        for (i, a) in self.predictor.a.iter().enumerate() {
            writeln!(out, "a,{i},0,{}", format_float(*a)).map_err(io)?;
        }
        if let Some(g) = &self.decoder {
            for i in 0..g.v.rows() {
                for j in 0..g.v.cols() {
                    writeln!(out, "V,{i},{j},{}", format_float(g.v[(i, j)])).map_err(io)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(text: &str) -> Result<Model> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::invalid("empty checkpoint"))?;
        let mut kind = None;
        let (mut d, mut r, mut masked, mut has_dec) = (0usize, 0usize, false, false);
        for kv in header.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad header field '{kv}'")))?;
            let num = || -> Result<usize> {
                v.parse().map_err(|_| Error::invalid(format!("bad value '{v}' for {k}")))
            };
            match k {
                "kind" => kind = Some(Architecture::parse(v)?),
                "d" => d = num()?,
                "r" => r = num()?,
                "masked" => masked = num()? == 1,
                "decoder" => has_dec = num()? == 1,
                other => return Err(Error::invalid(format!("unknown header key '{other}'"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::invalid("checkpoint header lacks kind"))?;
        let mut w = Matrix::zeros(r, d);
        let mut a = vec![0.0; r];
        let mut v = Matrix::zeros(d, r);
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            ensure!(f.len() == 4, "bad checkpoint line '{line}'");
            let i: usize = f[1].parse().map_err(|_| Error::invalid("bad row index"))?;
            let j: usize = f[2].parse().map_err(|_| Error::invalid("bad column index"))?;
            let x: f64 = f[3].parse().map_err(|_| Error::invalid("bad value"))?;
            match f[0] {
                "W" if i < r && j < d => w[(i, j)] = x,
                "a" if i < r => a[i] = x,
                "V" if i < d && j < r => v[(i, j)] = x,
                _ => return Err(Error::invalid(format!("bad checkpoint entry '{line}'"))),
            }
        }
        Model::new(
            ReprMap { kind, w, masked },
            Predictor { a },
            has_dec.then_some(Decoder { v }),
        )
    }
}

pub fn predict(h: &ReprMap, f: &Predictor, x: &[f64]) -> Result<f64> {
    ensure!(f.a.len() == h.r(), "predictor length {} != r = {}", f.a.len(), h.r());
    let phi = h.features(x)?;
    Ok(f.apply(h.kind, &phi))
}

/// Row indices of a dataset to evaluate on; `None` means every row.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a Dataset,
    pub idx: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn full(data: &'a Dataset) -> Self {
        Self { data, idx: None }
    }

    pub fn rows(data: &'a Dataset, idx: &'a [usize]) -> Self {
        Self {
            data,
            idx: Some(idx),
        }
    }

    pub fn len(&self) -> usize {
        self.idx.map_or(self.data.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.data.len();
        let explicit = self.idx.map(|s| s.iter().copied());
        let all = self.idx.is_none().then(|| 0..n);
        explicit.into_iter().flatten().chain(all.into_iter().flatten())
    }
}

fn check_dim(h: &ReprMap, data: &Dataset) -> Result<()> {
    ensure!(
        data.dim() == h.d(),
        "dataset dimension {} != model input dimension {}",
        data.dim(),
        h.d()
    );
    Ok(())
}

/// `L_c`: mean squared prediction error over a labeled set.
pub fn prediction_loss(h: &ReprMap, f: &Predictor, data: &Dataset) -> Result<f64> {
    prediction_loss_batch(h, f, Batch::full(data))
}

pub fn prediction_loss_batch(h: &ReprMap, f: &Predictor, batch: Batch<'_>) -> Result<f64> {
    let y = batch.data.labels_or_err()?;
    ensure!(!batch.is_empty(), "empty labeled set");
    check_dim(h, batch.data)?;
    let sum: f64 = batch
        .iter()
        .map(|i| {
            let e = f.apply(h.kind, &h.features(batch.data.input(i)).unwrap()) - y[i];
            e * e
        })
        .sum();
    Ok(sum / batch.len() as f64)
}

/// Auto-encoder reconstruction loss: mean `||x - V W x||^2`.
pub fn reg_loss_ae(h: &ReprMap, g: &Decoder, data: &Dataset) -> Result<f64> {
    reg_loss_ae_batch(h, g, Batch::full(data))
}

pub fn reg_loss_ae_batch(h: &ReprMap, g: &Decoder, batch: Batch<'_>) -> Result<f64> {
    ensure!(!batch.is_empty(), "empty dataset");
    check_dim(h, batch.data)?;
    ensure!(g.v.shape() == (h.d(), h.r()), "decoder shape mismatch");
    let sum: f64 = batch
        .iter()
        .map(|i| {
            let x = batch.data.input(i);
            let z = h.linear(x);
            let xh = g.v.matvec_unchecked(&z);
            x.iter().zip(&xh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum();
    Ok(sum / batch.len() as f64)
}

/// Masked self-supervision loss: mean `(x_1 - sum_i (w_i . x')^2)^2` with
/// `x'` the input whose first coordinate is zeroed.
pub fn reg_loss_masked(h: &ReprMap, data: &Dataset) -> Result<f64> {
    reg_loss_masked_batch(h, Batch::full(data))
}

pub fn reg_loss_masked_batch(h: &ReprMap, batch: Batch<'_>) -> Result<f64> {
    ensure!(!batch.is_empty(), "empty dataset");
    ensure!(h.d() >= 2, "masked loss needs d >= 2");
    check_dim(h, batch.data)?;
    let sum: f64 = batch
        .iter()
        .map(|i| {
            let x = batch.data.input(i);
            let e = masked_sum(h, x) - x[0];
            e * e
        })
        .sum();
    Ok(sum / batch.len() as f64)
}

/// `sum_i (w_i . x')^2` without allocating the masked copy.
fn masked_sum(h: &ReprMap, x: &[f64]) -> f64 {
    (0..h.r())
        .map(|i| {
            let z = dot(&h.w.row(i)[1..], &x[1..]);
            z * z
        })
        .sum()
}

/// Explicit penalty `mean ||h(x)||_p^p`.
pub fn lp_penalty(h: &ReprMap, data: &Dataset, p: f64) -> Result<f64> {
    lp_penalty_batch(h, Batch::full(data), p)
}

pub fn lp_penalty_batch(h: &ReprMap, batch: Batch<'_>, p: f64) -> Result<f64> {
    ensure!(p >= 1.0, "p must be >= 1");
    ensure!(!batch.is_empty(), "empty dataset");
    check_dim(h, batch.data)?;
    let sum: f64 = batch
        .iter()
        .map(|i| {
            h.features(batch.data.input(i))
                .unwrap()
                .iter()
                .map(|v| v.abs().powf(p))
                .sum::<f64>()
        })
        .sum();
    Ok(sum / batch.len() as f64)
}

/// `sum_ij |(M Mᵀ)_ij - I_ij|`, zero iff the rows of `M` are orthonormal.
pub fn orthonormal_penalty(m: &Matrix) -> f64 {
    let g = m.gram_rows();
    let n = g.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            total += (g[(i, j)] - target).abs();
        }
    }
    total
}

/// `d/dM sum |M Mᵀ - I| = 2 S M` with `S = sign(M Mᵀ - I)`; sign(0) = 0.
fn orthonormal_penalty_grad(m: &Matrix) -> Matrix {
    let g = m.gram_rows();
    let n = g.rows();
    let s = Matrix::from_fn(n, n, |i, j| {
        let target = if i == j { 1.0 } else { 0.0 };
        let diff = g[(i, j)] - target;
        if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    s.matmul(m).expect("square sign matrix").scale(2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegKind {
    AeReconstruction,
    MaskedFirstCoord,
    /// `||h(x)||_p^p`.
    LpPenalty(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegWeighting {
    /// Constrained mode: accept `h` only if `L_r(h; U) <= tau`.
    Threshold(f64),
    /// Penalized mode: minimize `L_c + lambda * L_r`.
    Penalty(f64),
}

/// Weights of the orthonormality penalties on the decoder (`lambda_1`, on the
/// rows of `Vᵀ`) and the encoder (`lambda_2`, on the rows of `W`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OrthoWeights {
    pub decoder: f64,
    pub encoder: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub reg_kind: RegKind,
    pub weighting: RegWeighting,
    pub ortho: OrthoWeights,
}

impl LossSpec {
    pub fn validate_for(&self, model: &Model) -> Result<()> {
        match self.weighting {
            RegWeighting::Threshold(t) => ensure!(t >= 0.0, "tau must be >= 0, got {t}"),
            RegWeighting::Penalty(l) => ensure!(l >= 0.0, "lambda must be >= 0, got {l}"),
        }
        ensure!(
            self.ortho.decoder >= 0.0 && self.ortho.encoder >= 0.0,
            "orthonormal weights must be >= 0"
        );
        match self.reg_kind {
            RegKind::AeReconstruction => ensure!(
                model.kind() == Architecture::LinearAe && model.decoder.is_some(),
                "auto-encoder reconstruction needs a linear auto-encoder with a decoder"
            ),
            RegKind::MaskedFirstCoord => ensure!(
                model.kind() == Architecture::MaskedQuad,
                "masked reconstruction needs the masked quadratic architecture"
            ),
            RegKind::LpPenalty(p) => ensure!(p >= 1.0, "p must be >= 1"),
        }
        Ok(())
    }

    /// Objective minimized when training on labeled data under this spec.
    pub fn objective(&self) -> Objective {
        let regularization = match self.weighting {
            RegWeighting::Penalty(l) if l > 0.0 => Some((self.reg_kind, l)),
            _ => None,
        };
        Objective {
            prediction: 1.0,
            regularization,
            ortho: self.ortho,
        }
    }
}

/// Weighted sum of the trainable loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// Weight of `L_c` on the labeled batch.
    pub prediction: f64,
    /// `(kind, weight)` of `L_r` on the unlabeled batch.
    pub regularization: Option<(RegKind, f64)>,
    pub ortho: OrthoWeights,
}

impl Objective {
    pub fn supervised() -> Self {
        Self {
            prediction: 1.0,
            regularization: None,
            ortho: OrthoWeights::default(),
        }
    }

    pub fn pretraining(kind: RegKind, ortho: OrthoWeights) -> Self {
        Self {
            prediction: 0.0,
            regularization: Some((kind, 1.0)),
            ortho,
        }
    }

    fn check(&self, model: &Model, labeled: Option<Batch<'_>>, unlabeled: Option<Batch<'_>>) -> Result<()> {
        if self.prediction != 0.0 {
            let b = labeled.ok_or_else(|| Error::invalid("prediction term needs a labeled batch"))?;
            b.data.labels_or_err()?;
            ensure!(!b.is_empty(), "empty labeled batch");
            check_dim(&model.repr, b.data)?;
        }
        if let Some((kind, _)) = self.regularization {
            let b = unlabeled.ok_or_else(|| Error::invalid("regularization term needs an unlabeled batch"))?;
            ensure!(!b.is_empty(), "empty unlabeled batch");
            check_dim(&model.repr, b.data)?;
            match kind {
                RegKind::AeReconstruction => ensure!(
                    model.decoder.is_some() && model.kind() == Architecture::LinearAe,
                    "reconstruction loss needs a linear auto-encoder with a decoder"
                ),
                RegKind::MaskedFirstCoord => ensure!(
                    model.kind() == Architecture::MaskedQuad,
                    "masked loss needs the masked quadratic architecture"
                ),
                RegKind::LpPenalty(p) => ensure!(p >= 1.0, "p must be >= 1"),
            }
        }
        if self.ortho.decoder != 0.0 {
            ensure!(model.decoder.is_some(), "decoder penalty needs a decoder");
        }
        Ok(())
    }

    pub fn value(&self, model: &Model, labeled: Option<Batch<'_>>, unlabeled: Option<Batch<'_>>) -> Result<f64> {
        self.check(model, labeled, unlabeled)?;
        let mut total = 0.0;
        if self.prediction != 0.0 {
            total += self.prediction * prediction_loss_batch(&model.repr, &model.predictor, labeled.unwrap())?;
        }
        if let Some((kind, weight)) = self.regularization {
            let u = unlabeled.unwrap();
            let reg = match kind {
                RegKind::AeReconstruction => reg_loss_ae_batch(&model.repr, model.decoder.as_ref().unwrap(), u)?,
                RegKind::MaskedFirstCoord => reg_loss_masked_batch(&model.repr, u)?,
                RegKind::LpPenalty(p) => lp_penalty_batch(&model.repr, u, p)?,
            };
            total += weight * reg;
        }
        total += self.ortho_value(model);
        Ok(total)
    }

    fn ortho_value(&self, model: &Model) -> f64 {
        let mut total = 0.0;
        if self.ortho.decoder != 0.0 {
            let v = &model.decoder.as_ref().unwrap().v;
            total += self.ortho.decoder * orthonormal_penalty(&v.transpose());
        }
        if self.ortho.encoder != 0.0 {
            total += self.ortho.encoder * orthonormal_penalty(&model.repr.w);
        }
        total
    }
}

/// Partial derivatives with the same layout as [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub w: Matrix,
    pub a: Vector,
    pub v: Option<Matrix>,
}

impl GradSet {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            w: Matrix::zeros(model.r(), model.d()),
            a: vec![0.0; model.r()],
            v: model.decoder.as_ref().map(|g| Matrix::zeros(g.v.rows(), g.v.cols())),
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut b = vec![self.w.as_slice(), self.a.as_slice()];
        if let Some(v) = &self.v {
            b.push(v.as_slice());
        }
        b
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = vec![self.w.as_mut_slice(), self.a.as_mut_slice()];
        if let Some(v) = &mut self.v {
            b.push(v.as_mut_slice());
        }
        b
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .into_iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().into_iter().flatten().all(|v| v.is_finite())
    }
}

/// Analytic gradient of `objective` at `model`.
///
/// At the kinks of the orthonormal penalty the zero subgradient is used.
pub fn gradients(
    model: &Model,
    objective: &Objective,
    labeled: Option<Batch<'_>>,
    unlabeled: Option<Batch<'_>>,
) -> Result<GradSet> {
    objective.check(model, labeled, unlabeled)?;
    let mut grad = GradSet::zeros_like(model);
    let h = &model.repr;
    let (r, d) = h.w.shape();

    if objective.prediction != 0.0 {
        let batch = labeled.unwrap();
        let y = batch.data.labels_or_err()?;
        let scale = objective.prediction / batch.len() as f64;
        let a = &model.predictor.a;
        for n in batch.iter() {
            let x = batch.data.input(n);
            let z = h.linear(x);
            let pred: f64 = a.iter().zip(&z).map(|(ai, zi)| ai * zi * zi).sum();
            let e2 = 2.0 * (pred - y[n]) * scale;
            for i in 0..r {
                grad.a[i] += e2 * z[i] * z[i];
                let coef = e2 * a[i] * 2.0 * z[i];
                if coef != 0.0 {
                    for (g, xj) in grad.w.row_mut(i).iter_mut().zip(x) {
                        *g += coef * xj;
                    }
                }
            }
        }
    }

    if let Some((kind, weight)) = objective.regularization {
        let batch = unlabeled.unwrap();
        let scale = weight / batch.len() as f64;
        match kind {
            RegKind::AeReconstruction => {
                let v = &model.decoder.as_ref().unwrap().v;
                let gv = grad.v.as_mut().unwrap();
                let mut vt_res = vec![0.0; r];
                for n in batch.iter() {
                    let x = batch.data.input(n);
                    let z = h.linear(x);
                    // residual x - V z, scaled by -2 * scale
                    vt_res.iter_mut().for_each(|t| *t = 0.0);
                    for j in 0..d {
                        let res = x[j] - dot(v.row(j), &z);
                        let c = -2.0 * scale * res;
                        for i in 0..r {
                            gv[(j, i)] += c * z[i];
                            vt_res[i] += c * v[(j, i)];
                        }
                    }
                    for i in 0..r {
                        let c = vt_res[i];
                        for (g, xj) in grad.w.row_mut(i).iter_mut().zip(x) {
                            *g += c * xj;
                        }
                    }
                }
            }
            RegKind::MaskedFirstCoord => {
                for n in batch.iter() {
                    let x = batch.data.input(n);
                    let z: Vec<f64> = (0..r).map(|i| dot(&h.w.row(i)[1..], &x[1..])).collect();
                    let s: f64 = z.iter().map(|v| v * v).sum();
                    let e2 = 2.0 * (s - x[0]) * scale;
                    for i in 0..r {
                        let c = e2 * 2.0 * z[i];
                        for (g, xj) in grad.w.row_mut(i)[1..].iter_mut().zip(&x[1..]) {
                            *g += c * xj;
                        }
                    }
                }
            }
            RegKind::LpPenalty(p) => {
                for n in batch.iter() {
                    let x = batch.data.input(n);
                    let z = h.linear(x);
                    for i in 0..r {
                        // d/dz |phi(z)|^p
                        let dz = match h.kind {
                            Architecture::LinearAe => p * z[i].abs().powf(p - 1.0) * z[i].signum(),
                            Architecture::MaskedQuad => {
                                2.0 * p * z[i].abs().powf(2.0 * p - 1.0) * z[i].signum()
                            }
                        };
                        let c = scale * dz;
                        if c != 0.0 {
                            for (g, xj) in grad.w.row_mut(i).iter_mut().zip(x) {
                                *g += c * xj;
                            }
                        }
                    }
                }
            }
        }
    }

    if objective.ortho.decoder != 0.0 {
        let v = &model.decoder.as_ref().unwrap().v;
        // penalty on rows of Vᵀ; gradient w.r.t. V is the transpose
        let gvt = orthonormal_penalty_grad(&v.transpose()).transpose();
        let gv = grad.v.as_mut().unwrap();
        for (g, p) in gv.as_mut_slice().iter_mut().zip(gvt.as_slice()) {
            *g += objective.ortho.decoder * p;
        }
    }
    if objective.ortho.encoder != 0.0 {
        let gw = orthonormal_penalty_grad(&h.w);
        for (g, p) in grad.w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *g += objective.ortho.encoder * p;
        }
    }

    if h.masked {
        for i in 0..r {
            grad.w[(i, 0)] = 0.0;
        }
    }
    Ok(grad)
}

/// Central finite differences of `f` around `model`.
pub fn finite_diff_grad(f: impl Fn(&Model) -> f64, model: &Model, step: f64) -> GradSet {
    let mut grad = GradSet::zeros_like(model);
    let mut probe = model.clone();
    let n_blocks = probe.param_blocks_mut().len();
    for b in 0..n_blocks {
        let len = probe.param_blocks_mut()[b].len();
        for k in 0..len {
            let orig = probe.param_blocks_mut()[b][k];
            probe.param_blocks_mut()[b][k] = orig + step;
            let up = f(&probe);
            probe.param_blocks_mut()[b][k] = orig - step;
            let down = f(&probe);
            probe.param_blocks_mut()[b][k] = orig;
            grad.blocks_mut()[b][k] = (up - down) / (2.0 * step);
        }
    }
    grad
}
