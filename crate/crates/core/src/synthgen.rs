//! Synthetic worlds with a known low-dimensional signal.
//!
//! Both worlds draw coefficients `alpha_i ~ N(mu_i, sigma_i)` along an
//! orthonormal basis, where `sigma_i` is a variance. The top `r` variances lie
//! in `[1, 10]` and the tail in `[0, 0.1]`, giving a spectral gap at `r`.
//!
//! * Auto-encoder world: `x = sum_i alpha_i u_i` over a `d x d` basis and
//!   `y = sum_{i<r} a*_i alpha_i^2 + nu`.
//! * Masked world: `x_{2:d} = sum_i alpha_i u_i` over a `(d-1) x (d-1)` basis,
//!   `x_1 = sum_{i<r} alpha_i^2`, and the same label formula.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::numkit::{norm, random_orthonormal_basis, Matrix, RngStream, Vector};

pub const SIGNAL_VARIANCE_RANGE: (f64, f64) = (1.0, 10.0);
pub const TAIL_VARIANCE_RANGE: (f64, f64) = (0.0, 0.1);
pub const MEAN_RANGE: (i64, i64) = (0, 20);
pub const DEFAULT_NOISE_VARIANCE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorldKind {
    AutoEncoder,
    Masked,
}

impl WorldKind {
    pub fn name(self) -> &'static str {
        match self {
            WorldKind::AutoEncoder => "ae",
            WorldKind::Masked => "masked",
        }
    }

    /// Dimension the basis lives in for ambient dimension `d`.
    pub fn basis_dim(self, d: usize) -> usize {
        match self {
            WorldKind::AutoEncoder => d,
            WorldKind::Masked => d.saturating_sub(1),
        }
    }

    /// `r < d/2` for the auto-encoder world, `r < (d-1)/2` for the masked one.
    pub fn check_dims(self, d: usize, r: usize) -> Result<()> {
        ensure!(r >= 1, "r must be >= 1");
        let k = self.basis_dim(d);
        match self {
            WorldKind::AutoEncoder => ensure!(2 * r < k, "r < d/2 violated (d={d}, r={r})"),
            WorldKind::Masked => ensure!(2 * r < k, "r < (d-1)/2 violated (d={d}, r={r})"),
        }
        Ok(())
    }
}

impl std::str::FromStr for WorldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ae" | "autoencoder" | "auto-encoder" => Ok(WorldKind::AutoEncoder),
            "masked" => Ok(WorldKind::Masked),
            other => Err(Error::invalid(format!("unknown world kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSpec {
    pub means: Vector,
    /// Per-direction variances, strictly decreasing.
    pub variances: Vector,
    pub gap_index: usize,
}

impl SpectrumSpec {
    fn draw(rng: &mut RngStream, k: usize, r: usize) -> Self {
        let means = (0..k)
            .map(|_| rng.integer(MEAN_RANGE.0, MEAN_RANGE.1) as f64)
            .collect();
        let variances = loop {
            let mut head: Vec<f64> = (0..r)
                .map(|_| rng.uniform_range(SIGNAL_VARIANCE_RANGE.0, SIGNAL_VARIANCE_RANGE.1))
                .collect();
            let mut tail: Vec<f64> = (r..k)
                .map(|_| rng.uniform_range(TAIL_VARIANCE_RANGE.0, TAIL_VARIANCE_RANGE.1))
                .collect();
            head.sort_by(|a, b| b.total_cmp(a));
            tail.sort_by(|a, b| b.total_cmp(a));
            head.extend(tail);
            if head.windows(2).all(|w| w[0] > w[1]) {
                break head;
            }
        };
        Self {
            means,
            variances,
            gap_index: r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.gap_index;
        ensure!(
            self.means.len() == self.variances.len(),
            "means/variances length mismatch"
        );
        ensure!(
            self.variances.windows(2).all(|w| w[0] > w[1]),
            "variances must be strictly decreasing"
        );
        ensure!(
            self.variances[..r]
                .iter()
                .all(|v| (SIGNAL_VARIANCE_RANGE.0..=SIGNAL_VARIANCE_RANGE.1).contains(v)),
            "signal variances outside [1, 10]"
        );
        ensure!(
            self.variances[r..]
                .iter()
                .all(|v| (TAIL_VARIANCE_RANGE.0..=TAIL_VARIANCE_RANGE.1).contains(v)),
            "tail variances outside [0, 0.1]"
        );
        ensure!(
            self.means
                .iter()
                .all(|m| m.fract() == 0.0 && (0.0..=20.0).contains(m)),
            "means must be integers in [0, 20]"
        );
        Ok(())
    }
}

/// A generative world with known ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub kind: WorldKind,
    pub d: usize,
    pub r: usize,
    /// Columns are the generating directions `u_i`.
    pub basis: Matrix,
    pub spectrum: SpectrumSpec,
    pub a_star: Vector,
    pub noise_variance: f64,
    /// Force coefficient means to zero while sampling.
    pub zero_mean: bool,
}

/// Labeled or unlabeled samples; inputs are stored one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Option<Vector>,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Option<Vector>) -> Result<Self> {
        if let Some(y) = &labels {
            ensure!(
                y.len() == inputs.rows(),
                "{} labels for {} inputs",
                y.len(),
                inputs.rows()
            );
            ensure!(y.iter().all(|v| v.is_finite()), "labels must be finite");
        }
        ensure!(inputs.is_finite(), "inputs must be finite");
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn label(&self, i: usize) -> Option<f64> {
        self.labels.as_ref().map(|y| y[i])
    }

    pub fn labels_or_err(&self) -> Result<&[f64]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::invalid("dataset is unlabeled"))
    }

    /// Drop labels.
    pub fn unlabeled(&self) -> Dataset {
        Dataset {
            inputs: self.inputs.clone(),
            labels: None,
        }
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|y| idx.iter().map(|&i| y[i]).collect()),
        }
    }

    /// Mean squared Euclidean norm of the inputs.
    pub fn mean_sq_norm(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len())
            .map(|i| self.input(i).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / self.len() as f64
    }

    /// CSV with a schema comment line, header `x_0,...,x_{d-1}[,y]` and
    /// 17-significant-digit floats.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io_err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x_{j}")).collect();
        if self.is_labeled() {
            header.push("y".into());
        }
        w.write_record(&header).map_err(io_err)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.input(i).iter().map(|v| format_float(*v)).collect();
            if let Some(y) = self.label(i) {
                row.push(format_float(y));
            }
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::invalid(format!("csv write: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = crate::experiment::schema_line("dataset").into_bytes();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let parse_err = |e: csv::Error| Error::invalid(format!("csv read: {e}"));
        let header = rdr.headers().map_err(parse_err)?.clone();
        let labeled = header.iter().last() == Some("y");
        let d = header.len() - usize::from(labeled);
        for (j, h) in header.iter().take(d).enumerate() {
            ensure!(h == format!("x_{j}"), "unexpected column '{h}' at {j}");
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(parse_err)?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad number '{field}'")))?;
                if j < d {
                    data.push(v);
                } else {
                    labels.push(v);
                }
            }
        }
        let n = data.len() / d.max(1);
        Dataset::new(Matrix::from_vec(n, d, data)?, labeled.then_some(labels))
    }

    pub fn read_csv_path(path: &Path) -> Result<Dataset> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Dataset::read_csv(f)
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl DataSpec {
    /// Fresh auto-encoder world (`r < d/2`) with nonzero means.
    pub fn generate_autoencoder(rng: &mut RngStream, d: usize, r: usize) -> Result<Self> {
        Self::generate(WorldKind::AutoEncoder, rng, d, r)
    }

    /// Fresh masked world (`r < (d-1)/2`).
    pub fn generate_masked(rng: &mut RngStream, d: usize, r: usize) -> Result<Self> {
        Self::generate(WorldKind::Masked, rng, d, r)
    }

    pub fn generate(kind: WorldKind, rng: &mut RngStream, d: usize, r: usize) -> Result<Self> {
        kind.check_dims(d, r)?;
        let k = kind.basis_dim(d);
        let basis = random_orthonormal_basis(rng, k)?;
        let spectrum = SpectrumSpec::draw(rng, k, r);
        let a_star = loop {
            let a: Vec<f64> = (0..r).map(|_| rng.standard_normal()).collect();
            let n = norm(&a);
            if n > 1e-12 {
                break a.into_iter().map(|v| v / n).collect();
            }
        };
        Ok(Self {
            kind,
            d,
            r,
            basis,
            spectrum,
            a_star,
            noise_variance: DEFAULT_NOISE_VARIANCE,
            zero_mean: false,
        })
    }

    pub fn with_zero_mean(mut self, zero_mean: bool) -> Self {
        self.zero_mean = zero_mean;
        self
    }

    pub fn with_noise_variance(mut self, noise_variance: f64) -> Self {
        self.noise_variance = noise_variance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.check_dims(self.d, self.r)?;
        let k = self.kind.basis_dim(self.d);
        ensure!(self.basis.shape() == (k, k), "basis must be {k}x{k}");
        ensure!(
            crate::numkit::orthonormality_error(&self.basis) < 1e-8,
            "basis is not orthonormal"
        );
        ensure!(self.spectrum.gap_index == self.r, "gap index must equal r");
        ensure!(self.spectrum.variances.len() == k, "spectrum length must be {k}");
        self.spectrum.validate()?;
        ensure!(self.a_star.len() == self.r, "a* must have length r");
        ensure!(norm(&self.a_star) <= 1.0 + 1e-12, "||a*|| must be <= 1");
        ensure!(self.noise_variance >= 0.0, "noise variance must be >= 0");
        Ok(())
    }

    fn basis_dim(&self) -> usize {
        self.kind.basis_dim(self.d)
    }

    /// Effective coefficient mean for direction `i`.
    pub fn coefficient_mean(&self, i: usize) -> f64 {
        if self.zero_mean {
            0.0
        } else {
            self.spectrum.means[i]
        }
    }

    /// Build one `(x, y - nu)` pair from explicit coefficients, then add
    /// `noise` to the label.
    pub fn point_from_coefficients(&self, alpha: &[f64], noise: f64) -> Result<(Vector, f64)> {
        let k = self.basis_dim();
        ensure!(alpha.len() == k, "expected {k} coefficients, got {}", alpha.len());
        let signal_sq: Vec<f64> = alpha[..self.r].iter().map(|a| a * a).collect();
        let y = self
            .a_star
            .iter()
            .zip(&signal_sq)
            .map(|(a, s)| a * s)
            .sum::<f64>()
            + noise;
        let body = self.basis.matvec_unchecked(alpha);
        let x = match self.kind {
            WorldKind::AutoEncoder => body,
            WorldKind::Masked => {
                let mut x = Vec::with_capacity(self.d);
                x.push(signal_sq.iter().sum());
                x.extend(body);
                x
            }
        };
        Ok((x, y))
    }

    /// Draw `n` samples. Noise is always drawn so that labeled and unlabeled
    /// draws from the same stream state share identical inputs.
    pub fn sample(&self, n: usize, rng: &mut RngStream, labeled: bool) -> Result<Dataset> {
        ensure!(n >= 1, "sample size must be >= 1");
        let k = self.basis_dim();
        let mut data = Vec::with_capacity(n * self.d);
        let mut labels = Vec::with_capacity(if labeled { n } else { 0 });
        let mut alpha = vec![0.0; k];
        for _ in 0..n {
            for (i, a) in alpha.iter_mut().enumerate() {
                *a = rng.gaussian(self.coefficient_mean(i), self.spectrum.variances[i])?;
            }
            let noise = rng.gaussian(0.0, self.noise_variance)?;
            let (x, y) = self.point_from_coefficients(&alpha, noise)?;
            data.extend(x);
            if labeled {
                labels.push(y);
            }
        }
        Dataset::new(Matrix::from_vec(n, self.d, data)?, labeled.then_some(labels))
    }

    pub fn sample_autoencoder(&self, n: usize, rng: &mut RngStream, labeled: bool) -> Result<Dataset> {
        ensure!(self.kind == WorldKind::AutoEncoder, "spec is not an auto-encoder world");
        self.sample(n, rng, labeled)
    }

    pub fn sample_masked(&self, n: usize, rng: &mut RngStream, labeled: bool) -> Result<Dataset> {
        ensure!(self.kind == WorldKind::Masked, "spec is not a masked world");
        self.sample(n, rng, labeled)
    }

    /// Exact `E||x - P_k x||^2` for the best rank-`k` projector in the
    /// zero-mean world: the sum of trailing variances.
    pub fn analytic_trailing_variance(&self, k: usize) -> Result<f64> {
        if !self.zero_mean {
            return Err(Error::Unsupported(
                "trailing variance is only exact for zero-mean worlds".into(),
            ));
        }
        let vars = &self.spectrum.variances;
        ensure!(k <= vars.len(), "k = {k} exceeds basis dimension {}", vars.len());
        Ok(vars[k..].iter().sum())
    }

    /// Ground-truth encoder rows: `u_i` (auto-encoder) or `[0, u_i]` (masked).
    pub fn ground_truth_weights(&self) -> Matrix {
        let offset = usize::from(self.kind == WorldKind::Masked);
        let mut w = Matrix::zeros(self.r, self.d);
        for i in 0..self.r {
            for j in 0..self.basis_dim() {
                w[(i, j + offset)] = self.basis[(j, i)];
            }
        }
        w
    }

    /// Ground-truth decoder `B_{1:r}` (auto-encoder world).
    pub fn ground_truth_decoder(&self) -> Matrix {
        let idx: Vec<usize> = (0..self.r).collect();
        self.basis.select_columns(&idx)
    }

    /// Encoder rows taken from basis directions `dirs` (masked world rows get
    /// a leading zero).
    pub fn weights_from_directions(&self, dirs: &[usize]) -> Result<Matrix> {
        let k = self.basis_dim();
        ensure!(dirs.iter().all(|&j| j < k), "direction index out of range");
        let offset = usize::from(self.kind == WorldKind::Masked);
        let mut w = Matrix::zeros(dirs.len(), self.d);
        for (i, &dir) in dirs.iter().enumerate() {
            for j in 0..k {
                w[(i, j + offset)] = self.basis[(j, dir)];
            }
        }
        Ok(w)
    }
}

/// Copy of `x` with the first coordinate set to zero.
pub fn mask_first_coordinate(x: &[f64]) -> Result<Vector> {
    ensure!(x.len() >= 2, "masking needs at least 2 coordinates");
    let mut out = x.to_vec();
    out[0] = 0.0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{orthonormality_error, symmetric_eigen};

    #[test]
    fn full_scale_autoencoder_spec() {
        let mut rng = RngStream::new(1);
        let spec = DataSpec::generate_autoencoder(&mut rng, 100, 30).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.basis.shape(), (100, 100));
        assert!(spec.spectrum.variances[29] >= 1.0);
        assert!(spec.spectrum.variances[30] <= 0.1);
        assert!(orthonormality_error(&spec.basis) <= 1e-10);
    }

    #[test]
    fn smallest_legal_instance() {
        let mut rng = RngStream::new(2);
        DataSpec::generate_autoencoder(&mut rng, 4, 1).unwrap().validate().unwrap();
        // r = 2, d = 4 violates r < d/2
        assert!(DataSpec::generate_autoencoder(&mut rng, 4, 2).is_err());
        DataSpec::generate_autoencoder(&mut rng, 5, 2).unwrap().validate().unwrap();
        assert!(DataSpec::generate_masked(&mut rng, 5, 2).is_err());
        DataSpec::generate_masked(&mut rng, 6, 2).unwrap().validate().unwrap();
    }

    #[test]
    fn spec_generation_is_deterministic() {
        let a = DataSpec::generate_masked(&mut RngStream::new(9), 20, 5).unwrap();
        let b = DataSpec::generate_masked(&mut RngStream::new(9), 20, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_coordinate_label() {
        let mut rng = RngStream::new(3);
        let mut spec = DataSpec::generate_autoencoder(&mut rng, 6, 2)
            .unwrap()
            .with_zero_mean(true)
            .with_noise_variance(0.0);
        spec.a_star = vec![1.0, 0.0];
        let mut alpha = vec![0.0; 6];
        alpha[0] = 2.0;
        let (x, y) = spec.point_from_coefficients(&alpha, 0.0).unwrap();
        assert_eq!(y, 4.0);
        assert_eq!(x.len(), 6);
    }

    #[test]
    fn zero_sample_size_rejected() {
        let mut rng = RngStream::new(4);
        let spec = DataSpec::generate_autoencoder(&mut rng, 10, 3).unwrap();
        assert!(spec.sample(0, &mut rng, true).is_err());
        assert!(spec.sample_masked(5, &mut rng, true).is_err());
    }

    #[test]
    fn empirical_second_moment_matches_spectrum() {
        let mut rng = RngStream::new(5);
        let spec = DataSpec::generate_autoencoder(&mut rng, 10, 3)
            .unwrap()
            .with_zero_mean(true);
        let n = 100_000;
        let data = spec.sample(n, &mut rng, false).unwrap();
        let d = spec.d;
        let mut cov = Matrix::zeros(d, d);
        for i in 0..n {
            let x = data.input(i);
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += x[a] * x[b] / n as f64;
                }
            }
        }
        let eig = symmetric_eigen(&cov).unwrap();
        for i in 0..spec.r {
            let want = spec.spectrum.variances[i];
            assert!((eig.values[i] - want).abs() / want < 0.05, "{} vs {want}", eig.values[i]);
        }
    }

    #[test]
    fn masked_first_coordinate_is_sum_of_squares() {
        let mut rng = RngStream::new(6);
        let spec = DataSpec::generate_masked(&mut rng, 9, 3).unwrap();
        let mut alpha = vec![0.0; 8];
        alpha[..3].fill(1.0);
        let (x, _) = spec.point_from_coefficients(&alpha, 0.0).unwrap();
        assert_eq!(x[0], 3.0);

        let big = DataSpec::generate_masked(&mut rng, 100, 30).unwrap();
        let data = big.sample(10_000, &mut rng, false).unwrap();
        assert!((0..data.len()).all(|i| data.input(i)[0] >= 0.0));
    }

    #[test]
    fn masked_ground_truth_reconstructs_first_coordinate() {
        let mut rng = RngStream::new(7);
        let spec = DataSpec::generate_masked(&mut rng, 12, 4).unwrap();
        let w = spec.ground_truth_weights();
        let data = spec.sample(200, &mut rng, false).unwrap();
        for i in 0..data.len() {
            let x = data.input(i);
            let xm = mask_first_coordinate(x).unwrap();
            let g: f64 = w.matvec(&xm).unwrap().iter().map(|z| z * z).sum();
            let err = (x[0] - g).powi(2);
            assert!(err <= 1e-18 * x[0].max(1.0).powi(2), "{err}");
        }
    }

    #[test]
    fn masking() {
        assert_eq!(mask_first_coordinate(&[5.0, 1.0, 2.0]).unwrap(), vec![0.0, 1.0, 2.0]);
        assert_eq!(mask_first_coordinate(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        let once = mask_first_coordinate(&[3.0, 4.0]).unwrap();
        assert_eq!(mask_first_coordinate(&once).unwrap(), once);
        assert!(mask_first_coordinate(&[1.0]).is_err());
    }

    #[test]
    fn trailing_variance() {
        let mut rng = RngStream::new(8);
        let mut spec = DataSpec::generate_autoencoder(&mut rng, 5, 2).unwrap();
        assert!(matches!(spec.analytic_trailing_variance(2), Err(Error::Unsupported(_))));
        spec = spec.with_zero_mean(true);
        spec.spectrum.variances = vec![4.0, 3.0, 2.0, 1.0, 0.0];
        assert_eq!(spec.analytic_trailing_variance(2).unwrap(), 3.0);
        assert_eq!(spec.analytic_trailing_variance(5).unwrap(), 0.0);
        assert_eq!(spec.analytic_trailing_variance(0).unwrap(), 10.0);
        assert!(spec.analytic_trailing_variance(6).is_err());
    }

    #[test]
    fn labeled_and_unlabeled_share_inputs() {
        let mut rng = RngStream::new(10);
        let spec = DataSpec::generate_autoencoder(&mut rng, 8, 2).unwrap();
        let a = spec.sample(50, &mut RngStream::new(77), true).unwrap();
        let b = spec.sample(50, &mut RngStream::new(77), false).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert!(b.labels.is_none());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = RngStream::new(12);
        let spec = DataSpec::generate_masked(&mut rng, 7, 2).unwrap();
        let data = spec.sample(20, &mut rng, true).unwrap();
        let text = data.to_csv_string();
        assert!(text.starts_with("# funcreg-lab v"));
        assert!(text.lines().nth(1).unwrap().starts_with("x_0,x_1"));
        let back = Dataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, data);
    }
}
