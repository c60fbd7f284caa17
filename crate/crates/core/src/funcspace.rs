//! Trained models as points in function space: prediction vectors on a
//! shared test set, their spread, and 2-D embeddings (exact t-SNE or PCA).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::models::Model;
use crate::numkit::{symmetric_eigen, Matrix, RngStream, Vector};
use crate::synthgen::Dataset;
use crate::trainer::Pipeline;

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalVector {
    pub values: Vector,
    pub tag: Pipeline,
    pub run_index: usize,
}

/// Predictions of `model` on every test input, in order.
pub fn functional_vector(model: &Model, test: &Dataset, tag: Pipeline, run_index: usize) -> Result<FunctionalVector> {
    let values = (0..test.len())
        .map(|i| model.predict(test.input(i)))
        .collect::<Result<Vector>>()?;
    ensure!(values.iter().all(|v| v.is_finite()), "model produced non-finite predictions");
    Ok(FunctionalVector { values, tag, run_index })
}

fn check_batch(vectors: &[&[f64]]) -> Result<usize> {
    let len = vectors.first().map_or(0, |v| v.len());
    ensure!(vectors.iter().all(|v| v.len() == len), "functional vectors differ in length");
    ensure!(
        vectors.iter().all(|v| v.iter().all(|x| x.is_finite())),
        "functional vectors must be finite"
    );
    Ok(len)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean Euclidean distance over all unordered pairs.
pub fn dispersion(vectors: &[&[f64]]) -> Result<f64> {
    let n = vectors.len();
    ensure!(n >= 2, "need ≥2 runs to measure dispersion, got {n}");
    check_batch(vectors)?;
    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| sq_dist(vectors[i], vectors[j]).sqrt()).sum())
        .collect();
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(row_sums.iter().sum::<f64>() / pairs)
}

pub fn dispersion_of(vectors: &[FunctionalVector]) -> Result<f64> {
    let refs: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    dispersion(&refs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMethod {
    Tsne,
    Pca,
}

impl EmbedMethod {
    pub fn name(self) -> &'static str {
        match self {
            EmbedMethod::Tsne => "tsne",
            EmbedMethod::Pca => "pca",
        }
    }
}

impl fmt::Display for EmbedMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbedMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsne" | "t-sne" => Ok(EmbedMethod::Tsne),
            "pca" => Ok(EmbedMethod::Pca),
            _ => Err(Error::invalid(format!("unknown embedding method '{s}' (expected tsne or pca)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedConfig {
    pub method: EmbedMethod,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            method: EmbedMethod::Tsne,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        ensure!(self.iterations >= 1, "iterations must be >= 1");
        ensure!(self.learning_rate > 0.0, "learning rate must be positive");
        if self.method == EmbedMethod::Tsne {
            ensure!(n >= 4, "t-SNE needs at least 4 points, got {n}");
            ensure!(
                self.perplexity > 0.0 && self.perplexity < (n as f64 - 1.0) / 3.0,
                "perplexity {} must lie in (0, (N-1)/3) = (0, {:.3}) for N={n}",
                self.perplexity,
                (n as f64 - 1.0) / 3.0
            );
        }
        Ok(())
    }
}

pub fn embed(vectors: &[&[f64]], config: &EmbedConfig) -> Result<Matrix> {
    match config.method {
        EmbedMethod::Tsne => tsne_embed(vectors, config),
        EmbedMethod::Pca => pca_embed(vectors),
    }
}

fn pairwise_sq(vectors: &[&[f64]]) -> Matrix {
    let n = vectors.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| sq_dist(vectors[i], vectors[j])).collect())
        .collect();
    Matrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Conditional Gaussian affinities `p_{j|i}`, each row calibrated by bisection
/// on the precision so that its entropy equals `ln(perplexity)`.
pub fn input_affinities(vectors: &[&[f64]], perplexity: f64) -> Result<Matrix> {
    let n = vectors.len();
    ensure!(n >= 2, "need at least 2 points");
    ensure!(perplexity > 0.0 && perplexity < n as f64 - 1.0, "perplexity out of range");
    check_batch(vectors)?;
    let d2 = pairwise_sq(vectors);
    let target = perplexity.ln();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| calibrate_row(d2.row(i), i, target))
        .collect();
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn calibrate_row(d2: &[f64], i: usize, target: f64) -> Vec<f64> {
    let n = d2.len();
    let mut p = vec![0.0; n];
    // entropy of the row for precision beta, with distances shifted by the
    // nearest neighbour so the exponentials cannot all underflow
    let dmin = (0..n).filter(|&j| j != i).map(|j| d2[j]).fold(f64::INFINITY, f64::min);
    let fill = |beta: f64, p: &mut [f64]| -> f64 {
        let mut sum = 0.0;
        for j in 0..n {
            p[j] = if j == i { 0.0 } else { (-(d2[j] - dmin) * beta).exp() };
            sum += p[j];
        }
        let mut h = 0.0;
        for j in 0..n {
            p[j] /= sum;
            if p[j] > 0.0 {
                h -= p[j] * p[j].ln();
            }
        }
        h
    };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    for _ in 0..200 {
        let h = fill(beta, &mut p);
        if (h - target).abs() < 1e-10 {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    fill(beta, &mut p);
    p
}

/// Exact t-SNE: symmetrized Gaussian input affinities, Student-t output
/// kernel, gradient descent with momentum, per-coordinate gains and early
/// exaggeration. The result is centered.
pub fn tsne_embed(vectors: &[&[f64]], config: &EmbedConfig) -> Result<Matrix> {
    let n = vectors.len();
    config.validate(n)?;
    let cond = input_affinities(vectors, config.perplexity)?;
    let p = Matrix::from_fn(n, n, |i, j| ((cond[(i, j)] + cond[(j, i)]) / (2.0 * n as f64)).max(1e-12));

    let mut rng = RngStream::new(config.seed);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [1e-2 * rng.standard_normal(), 1e-2 * rng.standard_normal()])
        .collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];

    for it in 0..config.iterations {
        let early = it < config.exaggeration_iters;
        let exag = if early { config.early_exaggeration } else { 1.0 };
        let momentum = if early { config.initial_momentum } else { config.final_momentum };

        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                total += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = num[i * n + j];
                let m = (exag * p[(i, j)] - v / total) * v;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (velocity[i][k] > 0.0);
                gains[i][k] = if same_sign { (gains[i][k] * 0.8).max(0.01) } else { gains[i][k] + 0.2 };
                velocity[i][k] = momentum * velocity[i][k] - config.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += velocity[i][k];
            }
        }
        center(&mut y);
    }
    let out = Matrix::from_fn(n, 2, |i, k| y[i][k]);
    ensure!(out.is_finite(), "t-SNE produced non-finite coordinates");
    Ok(out)
}

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mean = y.iter().fold([0.0; 2], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n]);
    for p in y.iter_mut() {
        p[0] -= mean[0];
        p[1] -= mean[1];
    }
}

/// Coordinates on the top two principal components of the centered set.
/// Uses the smaller of the `N x N` Gram matrix and the `D x D` scatter matrix.
pub fn pca_embed(vectors: &[&[f64]]) -> Result<Matrix> {
    let n = vectors.len();
    ensure!(n >= 2, "PCA embedding needs at least 2 vectors");
    let dim = check_batch(vectors)?;
    let mean: Vec<f64> = (0..dim)
        .map(|k| vectors.iter().map(|v| v[k]).sum::<f64>() / n as f64)
        .collect();
    let centered = Matrix::from_fn(n, dim, |i, k| vectors[i][k] - mean[k]);
    let mut out = Matrix::zeros(n, 2);
    if n <= dim {
        let eig = symmetric_eigen(&centered.gram_rows())?;
        // eigenvalues at round-off level belong to the null space
        let floor = 1e-12 * eig.values[0].max(0.0);
        for c in 0..2.min(n) {
            let s = if eig.values[c] > floor { eig.values[c].sqrt() } else { 0.0 };
            for i in 0..n {
                out[(i, c)] = s * eig.vectors[(i, c)];
            }
        }
    } else {
        let scatter = centered.transpose().gram_rows();
        let eig = symmetric_eigen(&scatter)?;
        for c in 0..2.min(dim) {
            let axis = eig.vectors.column(c);
            for i in 0..n {
                out[(i, c)] = crate::numkit::dot(centered.row(i), &axis);
            }
        }
    }
    Ok(out)
}

/// Mean silhouette coefficient of a labeled point set (Euclidean).
pub fn silhouette(points: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    ensure!(labels.len() == n, "need one label per point");
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    ensure!(k >= 2, "silhouette needs at least 2 clusters");
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += sq_dist(points.row(i), points.row(j)).sqrt();
                counts[labels[j]] += 1;
            }
        }
        if counts[labels[i]] == 0 {
            continue;
        }
        let a = sums[labels[i]] / counts[labels[i]] as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}

/// `runIndex,tag,dim1,dim2`.
pub fn write_embedding_csv<W: Write>(out: W, vectors: &[FunctionalVector], coords: &Matrix) -> Result<()> {
    ensure!(coords.shape() == (vectors.len(), 2), "coordinates must be N x 2");
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(["runIndex", "tag", "dim1", "dim2"]).map_err(err)?;
    for (i, v) in vectors.iter().enumerate() {
        w.write_record([
            v.run_index.to_string(),
            v.tag.name().to_string(),
            crate::synthgen::format_float(coords[(i, 0)]),
            crate::synthgen::format_float(coords[(i, 1)]),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv write: {e}")))
}

/// `tag,dispersion`.
pub fn write_dispersion_csv<W: Write>(out: W, rows: &[(Pipeline, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(["tag", "dispersion"]).map_err(err)?;
    for (tag, d) in rows {
        w.write_record([tag.name().to_string(), crate::synthgen::format_float(*d)])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv write: {e}")))
}

/// Dispersion per tag, in order of first appearance.
pub fn dispersion_by_tag(vectors: &[FunctionalVector]) -> Result<Vec<(Pipeline, f64)>> {
    ensure!(vectors.len() >= 2, "need ≥2 runs to measure dispersion, got {}", vectors.len());
    let mut tags: Vec<Pipeline> = Vec::new();
    for v in vectors {
        if !tags.contains(&v.tag) {
            tags.push(v.tag);
        }
    }
    tags.into_iter()
        .map(|t| {
            let group: Vec<&[f64]> = vectors.iter().filter(|v| v.tag == t).map(|v| v.values.as_slice()).collect();
            dispersion(&group).map(|d| (t, d))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispersion_basics() {
        let a = [0.0, 0.0];
        let b = [3.0, 4.0];
        assert_eq!(dispersion(&[&a, &b]).unwrap(), 5.0);
        assert_eq!(dispersion(&[&b, &b, &b]).unwrap(), 0.0);
        assert!(dispersion(&[&a]).is_err());
        assert!(dispersion(&[&a, &[1.0][..]]).is_err());
    }

    #[test]
    fn affinity_rows_sum_to_one() {
        let mut rng = RngStream::new(3);
        let pts: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| rng.standard_normal()).collect()).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|v| v.as_slice()).collect();
        let p = input_affinities(&refs, 10.0).unwrap();
        for i in 0..40 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-8);
            assert_eq!(p[(i, i)], 0.0);
            let h: f64 = p.row(i).iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum();
            assert!((h - 10f64.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn perplexity_bound_enforced() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|v| v.as_slice()).collect();
        let cfg = EmbedConfig {
            perplexity: 3.0,
            ..EmbedConfig::default()
        };
        assert!(tsne_embed(&refs, &cfg).is_err());
        let ok = EmbedConfig {
            perplexity: 2.5,
            iterations: 50,
            ..EmbedConfig::default()
        };
        assert!(tsne_embed(&refs, &ok).is_ok());
        assert!(tsne_embed(&refs[..3], &ok).is_err());
    }

    #[test]
    fn method_parse() {
        assert_eq!("TSNE".parse::<EmbedMethod>().unwrap(), EmbedMethod::Tsne);
        assert_eq!("pca".parse::<EmbedMethod>().unwrap(), EmbedMethod::Pca);
        assert!("isomap".parse::<EmbedMethod>().is_err());
    }

    #[test]
    fn silhouette_of_separated_pairs() {
        let pts = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]]).unwrap();
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.9);
    }
}
