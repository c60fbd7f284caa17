//! Closed-form sample-complexity calculators and the example reductions.
//!
//! Covering numbers and VC dimensions are inputs: nothing here estimates the
//! capacity of a class. The absolute constant `C` and the Lipschitz constant
//! `L` are explicit and echoed back in every result.

use std::fmt;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};
use crate::synthgen::WorldKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Same domain, realizable, finite classes.
    Thm1,
    /// Same domain, unrealizable, covering numbers.
    Thm2,
    /// Same bound as `Thm2`, stated for an approximation error `eps_c`.
    Thm3,
    /// Unlabeled data from a different domain.
    Thm4,
    /// Realizable prediction with regularization loss `eps_r`.
    Thm5,
    /// VC-dimension version of `Thm2`.
    Thm6,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Thm1,
        Variant::Thm2,
        Variant::Thm3,
        Variant::Thm4,
        Variant::Thm5,
        Variant::Thm6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Thm1 => "thm1",
            Variant::Thm2 => "thm2",
            Variant::Thm3 => "thm3",
            Variant::Thm4 => "thm4",
            Variant::Thm5 => "thm5",
            Variant::Thm6 => "thm6",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown bound variant '{s}' (expected thm1..thm6)")))
    }
}

/// Natural logs of finite class sizes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassSizes {
    pub ln_h: f64,
    pub ln_f: f64,
    pub ln_g: f64,
    /// `ln |H_{D_X, L_r}(eps_0)|`.
    pub ln_htau: f64,
}

/// Log covering numbers at the radii the theorems prescribe.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Entropies {
    /// `ln N_G(eps_0 / 4L)`.
    pub ln_n_g: f64,
    /// `ln N_H(eps_0 / 4L)`.
    pub ln_n_h: f64,
    /// `ln N_F(eps_1 / 4L)`.
    pub ln_n_f: f64,
    /// `ln N` of the pruned subset at radius `eps_1 / 4L`.
    pub ln_n_hpruned: f64,
    /// `ln N_H(eps_1 / 4L)` for the unregularized comparison; `ln_n_h` when absent.
    pub ln_n_h_labeled: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VcDims {
    /// `d(G o H)`.
    pub g_h: f64,
    /// `d(F o H_pruned)`.
    pub f_hpruned: f64,
    /// `d(F o H)` for the unregularized comparison; `f_hpruned` when absent.
    pub f_h: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Sizes(ClassSizes),
    Entropies(Entropies),
    Vc(VcDims),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundQuery {
    pub variant: Variant,
    pub eps0: f64,
    pub eps1: f64,
    pub delta: f64,
    pub eps_r: f64,
    pub eps_c: f64,
    pub capacity: Capacity,
    pub c: f64,
    pub l: f64,
}

impl BoundQuery {
    pub fn new(variant: Variant, eps0: f64, eps1: f64, delta: f64, capacity: Capacity) -> Self {
        Self {
            variant,
            eps0,
            eps1,
            delta,
            eps_r: 0.0,
            eps_c: 0.0,
            capacity,
            c: 1.0,
            l: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_half = |e: f64| e > 0.0 && e < 0.5;
        ensure!(open_half(self.eps0), "eps0 must lie in (0, 1/2), got {}", self.eps0);
        ensure!(open_half(self.eps1), "eps1 must lie in (0, 1/2), got {}", self.eps1);
        ensure!(self.delta > 0.0 && self.delta < 1.0, "delta must lie in (0, 1), got {}", self.delta);
        ensure!(self.eps_r >= 0.0 && self.eps_c >= 0.0, "eps_r and eps_c must be >= 0");
        ensure!(self.c > 0.0 && self.c.is_finite(), "C must be positive");
        ensure!(self.l > 0.0 && self.l.is_finite(), "L must be positive");
        let nonneg = |vals: &[f64]| vals.iter().all(|v| *v >= 0.0 && v.is_finite());
        match (self.variant, &self.capacity) {
            (Variant::Thm1, Capacity::Sizes(s)) => {
                ensure!(nonneg(&[s.ln_h, s.ln_f, s.ln_g, s.ln_htau]), "log class sizes must be >= 0");
                ensure!(s.ln_htau <= s.ln_h, "the pruned class cannot be larger than H");
            }
            (Variant::Thm2 | Variant::Thm3 | Variant::Thm4 | Variant::Thm5, Capacity::Entropies(e)) => {
                ensure!(
                    nonneg(&[e.ln_n_g, e.ln_n_h, e.ln_n_f, e.ln_n_hpruned, e.ln_n_h_labeled.unwrap_or(0.0)]),
                    "metric entropies must be >= 0"
                );
            }
            (Variant::Thm6, Capacity::Vc(v)) => {
                ensure!(nonneg(&[v.g_h, v.f_hpruned, v.f_h.unwrap_or(0.0)]), "VC dimensions must be >= 0");
            }
            (variant, _) => {
                let want = match variant {
                    Variant::Thm1 => "class sizes",
                    Variant::Thm6 => "VC dimensions",
                    _ => "metric entropies",
                };
                return Err(Error::invalid(format!("{variant} needs {want}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundResult {
    pub variant: Variant,
    pub m_u: f64,
    pub m_l: f64,
    pub m_u_ceil: u64,
    pub m_l_ceil: u64,
    /// Labeled bound with the whole class `H` in place of the pruned subset.
    pub m_l_unregularized: f64,
    /// `m_l_unregularized - m_l`.
    pub reduction: f64,
    /// Covering radius for the unlabeled bound (`eps_0 / 4L`); `None` for Thm1/Thm6.
    pub radius_u: Option<f64>,
    /// Covering radius for the labeled bound (`eps_1 / 4L`).
    pub radius_l: Option<f64>,
    /// Regularization threshold that defines the pruned subset.
    pub prune_threshold: f64,
    /// Guaranteed prediction error.
    pub error_target: f64,
    pub c: f64,
    pub l: f64,
}

fn ceil_count(x: f64) -> u64 {
    x.max(0.0).ceil() as u64
}

pub fn compute_bounds(q: &BoundQuery) -> Result<BoundResult> {
    q.validate()?;
    let ln_inv_delta = (1.0 / q.delta).ln();
    let (e0, e1, c) = (q.eps0, q.eps1, q.c);
    let (m_u, m_l, m_l_unreg, radii, prune_threshold, error_target) = match (q.variant, q.capacity) {
        (Variant::Thm1, Capacity::Sizes(s)) => {
            let ln2d = (2.0 / q.delta).ln();
            (
                (s.ln_g + s.ln_h + ln2d) / e0,
                (s.ln_f + s.ln_htau + ln2d) / e1,
                (s.ln_f + s.ln_h + ln2d) / e1,
                false,
                e0,
                e1,
            )
        }
        (Variant::Thm2 | Variant::Thm3 | Variant::Thm4 | Variant::Thm5, Capacity::Entropies(e)) => {
            let ln_h_lab = e.ln_n_h_labeled.unwrap_or(e.ln_n_h);
            let m_u = c / (e0 * e0) * ln_inv_delta * (e.ln_n_g + e.ln_n_h);
            if q.variant == Variant::Thm5 {
                let k = c / e1 * ln_inv_delta;
                (
                    m_u,
                    k * (e.ln_n_f + e.ln_n_hpruned),
                    k * (e.ln_n_f + ln_h_lab),
                    true,
                    q.eps_r + e0,
                    e1,
                )
            } else {
                let k = c / (e1 * e1) * ln_inv_delta;
                (
                    m_u,
                    k * (e.ln_n_f + e.ln_n_hpruned),
                    k * (e.ln_n_f + ln_h_lab),
                    true,
                    q.eps_r + 2.0 * e0,
                    q.eps_c + e1,
                )
            }
        }
        (Variant::Thm6, Capacity::Vc(v)) => {
            let f_h = v.f_h.unwrap_or(v.f_hpruned);
            let k = c / (e1 * e1);
            (
                c / (e0 * e0) * (v.g_h * (1.0 / e0).ln() + ln_inv_delta),
                k * (v.f_hpruned * (1.0 / e1).ln() + ln_inv_delta),
                k * (f_h * (1.0 / e1).ln() + ln_inv_delta),
                false,
                q.eps_r + 2.0 * e0,
                q.eps_c + e1,
            )
        }
        _ => unreachable!("validated above"),
    };
    Ok(BoundResult {
        variant: q.variant,
        m_u,
        m_l,
        m_u_ceil: ceil_count(m_u),
        m_l_ceil: ceil_count(m_l),
        m_l_unregularized: m_l_unreg,
        reduction: m_l_unreg - m_l,
        radius_u: radii.then(|| e0 / (4.0 * q.l)),
        radius_l: radii.then(|| e1 / (4.0 * q.l)),
        prune_threshold,
        error_target,
        c: q.c,
        l: q.l,
    })
}

/// `ln C(n, k)` via log-gamma; exactly 0 for `k` in `{0, n}`.
pub fn log_binomial(n: u64, k: u64) -> Result<f64> {
    ensure!(k <= n, "log_binomial needs k <= n (n={n}, k={k})");
    if k == 0 || k == n {
        return Ok(0.0);
    }
    let k = k.min(n - k);
    // exact for small arguments
    if n <= 60 {
        let mut c: u128 = 1;
        for i in 0..k {
            c = c * u128::from(n - i) / u128::from(i + 1);
        }
        return Ok((c as f64).ln());
    }
    let (n, k) = (n as f64, k as f64);
    Ok(libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0))
}

/// `(C / eps^2) ln C(m - r, r)` with `m = d` (auto-encoder) or `d - 1` (masked).
pub fn example_reduction(kind: WorldKind, d: usize, r: usize, eps: f64, c: f64) -> Result<f64> {
    ensure!(eps > 0.0 && eps.is_finite(), "eps must be positive");
    ensure!(c > 0.0 && c.is_finite(), "C must be positive");
    if r == 0 {
        return Ok(0.0);
    }
    kind.check_dims(d, r)?;
    let m = kind.basis_dim(d);
    Ok(c / (eps * eps) * log_binomial((m - r) as u64, r as u64)?)
}

/// `(r, reduction)` for `r = 1..=r_max`.
pub fn reduction_vs_r(kind: WorldKind, d: usize, eps: f64, c: f64, r_max: usize) -> Result<Vec<(usize, f64)>> {
    (1..=r_max)
        .map(|r| example_reduction(kind, d, r, eps, c).map(|v| (r, v)))
        .collect()
}

/// Largest legal `r` for a world of dimension `d`.
pub fn max_rank(kind: WorldKind, d: usize) -> usize {
    let m = kind.basis_dim(d);
    // strict r < m / 2
    m.saturating_sub(1) / 2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thm1(ln_h: f64, ln_f: f64, ln_g: f64, ln_htau: f64) -> BoundQuery {
        BoundQuery::new(
            Variant::Thm1,
            0.1,
            0.1,
            0.05,
            Capacity::Sizes(ClassSizes { ln_h, ln_f, ln_g, ln_htau }),
        )
    }

    #[test]
    fn thm1_golden() {
        let l = 1024f64.ln();
        let r = compute_bounds(&thm1(l, l, l, l)).unwrap();
        let want = 10.0 * (2.0 * l + 40f64.ln());
        assert!((r.m_u - want).abs() < 1e-12);
        assert!((r.m_u - 175.52).abs() < 0.01);
        assert_eq!(r.m_u_ceil, 176);
        assert_eq!(r.reduction, 0.0);
    }

    #[test]
    fn thm1_full_pruning() {
        let l = 1024f64.ln();
        let r = compute_bounds(&thm1(l, l, l, 0.0)).unwrap();
        assert!((r.reduction - l / 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_ranges() {
        let l = 2f64.ln();
        let mut q = thm1(l, l, l, l);
        q.eps0 = 0.5;
        assert!(compute_bounds(&q).is_err());
        q.eps0 = 0.1;
        q.delta = 1.0;
        assert!(compute_bounds(&q).is_err());
        let wrong = BoundQuery::new(Variant::Thm2, 0.1, 0.1, 0.1, Capacity::Sizes(ClassSizes::default()));
        assert!(compute_bounds(&wrong).is_err());
    }

    #[test]
    fn covering_variants() {
        let e = Entropies {
            ln_n_g: 3.0,
            ln_n_h: 5.0,
            ln_n_f: 2.0,
            ln_n_hpruned: 1.0,
            ln_n_h_labeled: None,
        };
        let mut q = BoundQuery::new(Variant::Thm2, 0.1, 0.2, 0.1, Capacity::Entropies(e));
        q.eps_c = 0.05;
        let r2 = compute_bounds(&q).unwrap();
        let ld = 10f64.ln();
        assert!((r2.m_u - 100.0 * ld * 8.0).abs() < 1e-9);
        assert!((r2.m_l - 25.0 * ld * 3.0).abs() < 1e-9);
        assert!((r2.reduction - 25.0 * ld * 4.0).abs() < 1e-9);
        assert_eq!(r2.radius_l, Some(0.05));
        assert!((r2.error_target - 0.25).abs() < 1e-15);
        q.variant = Variant::Thm4;
        let r4 = compute_bounds(&q).unwrap();
        assert_eq!((r4.m_u, r4.m_l, r4.reduction), (r2.m_u, r2.m_l, r2.reduction));
        q.variant = Variant::Thm5;
        let r5 = compute_bounds(&q).unwrap();
        assert!((r5.m_l - 5.0 * ld * 3.0).abs() < 1e-9);
        assert!((r5.prune_threshold - 0.1).abs() < 1e-15);
    }

    #[test]
    fn vc_variant() {
        let v = VcDims {
            g_h: 10.0,
            f_hpruned: 4.0,
            f_h: Some(9.0),
        };
        let q = BoundQuery::new(Variant::Thm6, 0.1, 0.1, 0.1, Capacity::Vc(v));
        let r = compute_bounds(&q).unwrap();
        let l10 = 10f64.ln();
        assert!((r.m_u - 100.0 * (10.0 * l10 + l10)).abs() < 1e-9);
        assert!((r.reduction - 100.0 * 5.0 * l10).abs() < 1e-9);
    }

    #[test]
    fn log_binomial_values() {
        assert_eq!(log_binomial(10, 0).unwrap(), 0.0);
        assert_eq!(log_binomial(10, 10).unwrap(), 0.0);
        assert_eq!(log_binomial(4, 2).unwrap(), 6f64.ln());
        assert!(log_binomial(3, 4).is_err());
    }

    #[test]
    fn example_reductions() {
        assert_eq!(example_reduction(WorldKind::AutoEncoder, 10, 0, 0.1, 1.0).unwrap(), 0.0);
        assert!(example_reduction(WorldKind::AutoEncoder, 10, 5, 0.1, 1.0).is_err());
        assert!(example_reduction(WorldKind::Masked, 11, 5, 0.1, 1.0).is_err());
        for d in [9usize, 20, 51] {
            for r in 1..max_rank(WorldKind::Masked, d) {
                let m = example_reduction(WorldKind::Masked, d, r, 0.2, 1.5).unwrap();
                let a = example_reduction(WorldKind::AutoEncoder, d - 1, r, 0.2, 1.5).unwrap();
                assert_eq!(m, a);
            }
        }
    }

    #[test]
    fn reduction_shape_in_r() {
        let t = reduction_vs_r(WorldKind::AutoEncoder, 100, 0.1, 1.0, max_rank(WorldKind::AutoEncoder, 100)).unwrap();
        assert_eq!(t.len(), 49);
        // ln C(100 - r, r) rises until r = 28, then falls
        for w in t[..28].windows(2) {
            assert!(w[1].1 > w[0].1, "r={}", w[1].0);
        }
        for w in t[28..].windows(2) {
            assert!(w[1].1 < w[0].1, "r={}", w[1].0);
        }
        let second: Vec<f64> = t.windows(3).map(|w| w[2].1 - 2.0 * w[1].1 + w[0].1).collect();
        assert!(second.iter().all(|s| *s < 0.0));
    }
}
