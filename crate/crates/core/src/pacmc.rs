//! Monte-Carlo check of the finite-class realizable bound on enumerable worlds.
//!
//! A world is a handful of lookup tables over a domain of at most 64 points,
//! so every loss is an exact weighted sum and the set of hypothesis pairs
//! consistent with a sample can be enumerated outright. Samples are stored as
//! bitmasks of the points they hit: with 0/1 prediction loss and a zero-loss
//! requirement, multiplicities never matter.

use std::fmt;

use rayon::prelude::*;

use crate::bounds::{compute_bounds, BoundQuery, Capacity, ClassSizes, Variant};
use crate::error::{ensure, Error, Result};
use crate::numkit::RngStream;

pub const MAX_DOMAIN: usize = 64;

/// `h: X -> Phi` as a table indexed by `x`.
pub type Table = Vec<usize>;

#[derive(Debug, Clone)]
pub struct FiniteWorld {
    distribution: Vec<f64>,
    labels: Vec<usize>,
    h: Vec<Table>,
    f: Vec<Table>,
    g: Vec<Table>,
    // [h][g][x], flattened
    reg_loss: Vec<f64>,
    star: (usize, usize, usize),
    zero_reg: Vec<u64>,
    correct: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialOutcome {
    pub violated: bool,
    /// `(f, h)` index pairs with zero empirical losses and true error above `eps1`.
    pub witnesses: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialCounts {
    pub m_u: u64,
    pub m_l: u64,
    pub violations: u64,
    pub trials: u64,
}

impl TrialCounts {
    pub fn frequency(&self) -> f64 {
        self.violations as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyReport {
    pub eps0: f64,
    pub eps1: f64,
    pub delta: f64,
    pub size_h: usize,
    pub size_f: usize,
    pub size_g: usize,
    pub size_pruned: usize,
    pub counts: TrialCounts,
    /// `delta + 3 sqrt(delta (1 - delta) / trials)`.
    pub threshold: f64,
    pub pass: bool,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eps0={}", self.eps0)?;
        writeln!(f, "eps1={}", self.eps1)?;
        writeln!(f, "delta={}", self.delta)?;
        writeln!(f, "H={}", self.size_h)?;
        writeln!(f, "F={}", self.size_f)?;
        writeln!(f, "G={}", self.size_g)?;
        writeln!(f, "Htau={}", self.size_pruned)?;
        writeln!(f, "mU={}", self.counts.m_u)?;
        writeln!(f, "mL={}", self.counts.m_l)?;
        writeln!(f, "violations={}", self.counts.violations)?;
        writeln!(f, "trials={}", self.counts.trials)?;
        writeln!(f, "frequency={}", self.counts.frequency())?;
        writeln!(f, "threshold={}", self.threshold)?;
        write!(f, "result={}", if self.pass { "PASS" } else { "FAIL" })
    }
}

impl VerifyReport {
    pub fn csv_header() -> &'static str {
        "eps0,eps1,delta,H,F,G,Htau,mU,mL,violations,trials,frequency,threshold,pass"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.eps0,
            self.eps1,
            self.delta,
            self.size_h,
            self.size_f,
            self.size_g,
            self.size_pruned,
            self.counts.m_u,
            self.counts.m_l,
            self.counts.violations,
            self.counts.trials,
            self.counts.frequency(),
            self.threshold,
            self.pass
        )
    }
}

impl FiniteWorld {
    /// `h` maps `X -> Phi`, `f` maps `Phi -> Y`, `g` maps `Phi -> X'`;
    /// `reg_loss[h][g][x]` is `L_r(h, g; x)` in `[0, 1]`.
    pub fn new(
        distribution: Vec<f64>,
        labels: Vec<usize>,
        h: Vec<Table>,
        f: Vec<Table>,
        g: Vec<Table>,
        reg_loss: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let n = distribution.len();
        ensure!(n >= 1 && n <= MAX_DOMAIN, "domain size must be in 1..={MAX_DOMAIN}, got {n}");
        ensure!(
            distribution.iter().all(|p| p.is_finite() && *p >= 0.0),
            "distribution entries must be finite and >= 0"
        );
        let total: f64 = distribution.iter().sum();
        ensure!((total - 1.0).abs() <= 1e-12, "distribution sums to {total}, not 1");
        ensure!(labels.len() == n, "need one label per domain point");
        ensure!(!h.is_empty() && !f.is_empty() && !g.is_empty(), "H, F and G must be nonempty");
        let phi = f[0].len();
        ensure!(phi >= 1, "representation codomain must be nonempty");
        ensure!(f.iter().all(|t| t.len() == phi), "every f table needs {phi} entries");
        ensure!(g.iter().all(|t| t.len() == phi), "every g table needs {phi} entries");
        ensure!(
            h.iter().all(|t| t.len() == n && t.iter().all(|&v| v < phi)),
            "every h table needs {n} entries below {phi}"
        );
        ensure!(reg_loss.len() == h.len(), "reg_loss needs one block per h");
        let mut flat = Vec::with_capacity(h.len() * g.len() * n);
        for block in &reg_loss {
            ensure!(block.len() == g.len(), "reg_loss needs one row per g");
            for row in block {
                ensure!(row.len() == n, "reg_loss rows need {n} entries");
                ensure!(
                    row.iter().all(|v| (0.0..=1.0).contains(v)),
                    "reg_loss entries must lie in [0, 1]"
                );
                flat.extend_from_slice(row);
            }
        }

        let mut world = Self {
            distribution,
            labels,
            h,
            f,
            g,
            reg_loss: flat,
            star: (0, 0, 0),
            zero_reg: Vec::new(),
            correct: Vec::new(),
        };
        world.zero_reg = (0..world.h.len())
            .flat_map(|hi| (0..world.g.len()).map(move |gi| (hi, gi)))
            .map(|(hi, gi)| world.mask_where(|x| world.reg(hi, gi, x) == 0.0))
            .collect();
        world.correct = (0..world.f.len())
            .flat_map(|fi| (0..world.h.len()).map(move |hi| (fi, hi)))
            .map(|(fi, hi)| world.mask_where(|x| world.predicts(fi, hi, x) == world.labels[x]))
            .collect();
        world.star = world.find_realizer().ok_or_else(|| {
            Error::invalid("world is not realizable: no (h, f, g) with zero prediction and regularization loss")
        })?;
        Ok(world)
    }

    /// `L_r(h, g; x) = 1[g(h(x)) != target(x)]` for every `h, g`.
    pub fn reconstruction_loss(h: &[Table], g: &[Table], targets: &[usize]) -> Vec<Vec<Vec<f64>>> {
        h.iter()
            .map(|ht| {
                g.iter()
                    .map(|gt| {
                        targets
                            .iter()
                            .enumerate()
                            .map(|(x, &t)| f64::from(u8::from(gt[ht[x]] != t)))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn mask_where(&self, pred: impl Fn(usize) -> bool) -> u64 {
        (0..self.domain_size())
            .filter(|&x| pred(x))
            .fold(0u64, |m, x| m | (1u64 << x))
    }

    fn reg(&self, h: usize, g: usize, x: usize) -> f64 {
        self.reg_loss[(h * self.g.len() + g) * self.domain_size() + x]
    }

    fn predicts(&self, f: usize, h: usize, x: usize) -> usize {
        self.f[f][self.h[h][x]]
    }

    fn find_realizer(&self) -> Option<(usize, usize, usize)> {
        for hi in 0..self.h.len() {
            let Some(gi) = (0..self.g.len()).find(|&gi| self.exact_reg_loss(hi, gi) == 0.0) else {
                continue;
            };
            if let Some(fi) = (0..self.f.len()).find(|&fi| self.exact_pred_loss(fi, hi) == 0.0) {
                return Some((hi, fi, gi));
            }
        }
        None
    }

    pub fn domain_size(&self) -> usize {
        self.distribution.len()
    }

    pub fn distribution(&self) -> &[f64] {
        &self.distribution
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.h.len(), self.f.len(), self.g.len())
    }

    /// Indices `(h*, f*, g*)` of the first zero-loss triple.
    pub fn ground_truth(&self) -> (usize, usize, usize) {
        self.star
    }

    fn weighted(&self, loss: impl Fn(usize) -> f64) -> f64 {
        self.distribution.iter().enumerate().map(|(x, p)| p * loss(x)).sum()
    }

    /// Exact `L_c(f, h; D)` under 0/1 loss.
    pub fn exact_pred_loss(&self, f: usize, h: usize) -> f64 {
        self.weighted(|x| f64::from(u8::from(self.predicts(f, h, x) != self.labels[x])))
    }

    /// Exact `L_r(h, g; D_X)`.
    pub fn exact_reg_loss(&self, h: usize, g: usize) -> f64 {
        self.weighted(|x| self.reg(h, g, x))
    }

    /// `L_r(h; D_X) = min_g L_r(h, g; D_X)`.
    pub fn reg_loss_min(&self, h: usize) -> f64 {
        (0..self.g.len())
            .map(|g| self.exact_reg_loss(h, g))
            .fold(f64::INFINITY, f64::min)
    }

    /// `{h : L_r(h; D_X) <= tau}` in index order.
    pub fn pruned_subset(&self, tau: f64) -> Vec<usize> {
        (0..self.h.len()).filter(|&h| self.reg_loss_min(h) <= tau).collect()
    }

    /// Mask of a sample that hits every domain point.
    pub fn exhaustive_mask(&self) -> u64 {
        let n = self.domain_size();
        if n == 64 {
            u64::MAX
        } else {
            (1u64 << n) - 1
        }
    }

    /// Bitmask of the points hit by `m` i.i.d. draws.
    pub fn sample_mask(&self, m: u64, rng: &mut RngStream) -> u64 {
        (0..m).fold(0u64, |mask, _| mask | (1u64 << rng.categorical(&self.distribution)))
    }

    /// Pairs `(f, h)` with zero empirical prediction loss on the points in `s_mask`
    /// and zero empirical regularization loss (best `g` on the sample) on `u_mask`.
    pub fn consistent_pairs(&self, u_mask: u64, s_mask: u64) -> Vec<(usize, usize)> {
        let ng = self.g.len();
        let nh = self.h.len();
        let surviving: Vec<usize> = (0..nh)
            .filter(|&h| self.zero_reg[h * ng..(h + 1) * ng].iter().any(|z| u_mask & !z == 0))
            .collect();
        let mut out = Vec::new();
        for f in 0..self.f.len() {
            for &h in &surviving {
                if s_mask & !self.correct[f * nh + h] == 0 {
                    out.push((f, h));
                }
            }
        }
        out
    }

    /// Sample `U` then `S` from `rng` and report any consistent pair whose true
    /// error exceeds `eps1`.
    pub fn run_trial(&self, m_u: u64, m_l: u64, eps1: f64, rng: &mut RngStream) -> Result<TrialOutcome> {
        ensure!(m_u > 0 && m_l > 0, "mU and mL must be positive");
        let u = self.sample_mask(m_u, rng);
        let s = self.sample_mask(m_l, rng);
        let witnesses: Vec<(usize, usize)> = self
            .consistent_pairs(u, s)
            .into_iter()
            .filter(|&(f, h)| self.exact_pred_loss(f, h) > eps1)
            .collect();
        Ok(TrialOutcome {
            violated: !witnesses.is_empty(),
            witnesses,
        })
    }

    /// Independent trials; trial `t` draws from `rng.substream(t)`.
    pub fn run_trials(&self, m_u: u64, m_l: u64, eps1: f64, trials: u64, rng: &RngStream) -> Result<TrialCounts> {
        ensure!(trials > 0, "trials must be positive");
        ensure!(m_u > 0 && m_l > 0, "mU and mL must be positive");
        let violations = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut r = rng.substream(t);
                self.run_trial(m_u, m_l, eps1, &mut r).map(|o| u64::from(o.violated))
            })
            .collect::<Result<Vec<u64>>>()?
            .into_iter()
            .sum();
        Ok(TrialCounts {
            m_u,
            m_l,
            violations,
            trials,
        })
    }

    /// Sample sizes from the finite-class bound with `|H_tau| = |pruned_subset(eps0)|`.
    pub fn bound_sizes(&self, eps0: f64, eps1: f64, delta: f64) -> Result<(u64, u64, usize)> {
        let pruned = self.pruned_subset(eps0).len();
        let (nh, nf, ng) = self.sizes();
        let q = BoundQuery::new(
            Variant::Thm1,
            eps0,
            eps1,
            delta,
            Capacity::Sizes(ClassSizes {
                ln_h: (nh as f64).ln(),
                ln_f: (nf as f64).ln(),
                ln_g: (ng as f64).ln(),
                ln_htau: (pruned as f64).ln(),
            }),
        );
        let b = compute_bounds(&q)?;
        Ok((b.m_u_ceil.max(1), b.m_l_ceil.max(1), pruned))
    }

    pub fn verify_theorem1(
        &self,
        eps0: f64,
        eps1: f64,
        delta: f64,
        trials: u64,
        rng: &RngStream,
    ) -> Result<VerifyReport> {
        ensure!(trials > 0, "trials must be positive");
        let (m_u, m_l, size_pruned) = self.bound_sizes(eps0, eps1, delta)?;
        let counts = self.run_trials(m_u, m_l, eps1, trials, rng)?;
        let threshold = pass_threshold(delta, trials);
        let (size_h, size_f, size_g) = self.sizes();
        Ok(VerifyReport {
            eps0,
            eps1,
            delta,
            size_h,
            size_f,
            size_g,
            size_pruned,
            counts,
            threshold,
            pass: counts.frequency() <= threshold,
        })
    }
}

pub fn pass_threshold(delta: f64, trials: u64) -> f64 {
    delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt()
}

/// Shape of a random lookup-table world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomWorldSpec {
    pub domain_size: usize,
    pub phi_size: usize,
    pub label_count: usize,
    pub target_count: usize,
    pub h_count: usize,
}

impl Default for RandomWorldSpec {
    fn default() -> Self {
        Self {
            domain_size: 12,
            phi_size: 3,
            label_count: 2,
            target_count: 3,
            h_count: 24,
        }
    }
}

/// Every table `{0..dom} -> {0..cod}` in lexicographic order.
fn all_tables(dom: usize, cod: usize) -> Vec<Table> {
    let count = cod.pow(dom as u32);
    (0..count)
        .map(|mut k| {
            (0..dom)
                .map(|_| {
                    let v = k % cod;
                    k /= cod;
                    v
                })
                .collect()
        })
        .collect()
}

/// Random realizable world: `H` holds random tables with a planted `h*`,
/// `F` and `G` are every table over the representation, labels and
/// reconstruction targets are generated through a random `(f*, g*)`.
pub fn random_world(spec: RandomWorldSpec, rng: &mut RngStream) -> Result<FiniteWorld> {
    let RandomWorldSpec {
        domain_size: n,
        phi_size: phi,
        label_count: ny,
        target_count: nt,
        h_count,
    } = spec;
    ensure!((1..=16).contains(&n), "random worlds use 1..=16 domain points");
    ensure!((1..=4).contains(&phi), "random worlds use 1..=4 representation values");
    ensure!(ny >= 1 && nt >= 1 && h_count >= 1, "label, target and H counts must be positive");
    ensure!(
        ny.checked_pow(phi as u32).is_some_and(|c| c <= 4096) && nt.checked_pow(phi as u32).is_some_and(|c| c <= 4096),
        "F or G would exceed 4096 tables"
    );

    let weights: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.05, 1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut distribution: Vec<f64> = weights.iter().map(|w| w / total).collect();
    // push the rounding residue onto the largest entry
    let residue = 1.0 - distribution.iter().sum::<f64>();
    let imax = (0..n).max_by(|&a, &b| distribution[a].total_cmp(&distribution[b])).unwrap_or(0);
    distribution[imax] += residue;

    let h: Vec<Table> = (0..h_count).map(|_| (0..n).map(|_| rng.index(phi)).collect()).collect();
    let f = all_tables(phi, ny);
    let g = all_tables(phi, nt);
    let h_star = rng.index(h_count);
    let f_star = rng.index(f.len());
    let g_star = rng.index(g.len());
    let labels: Vec<usize> = (0..n).map(|x| f[f_star][h[h_star][x]]).collect();
    let targets: Vec<usize> = (0..n).map(|x| g[g_star][h[h_star][x]]).collect();
    let reg = FiniteWorld::reconstruction_loss(&h, &g, &targets);
    FiniteWorld::new(distribution, labels, h, f, g, reg)
}

/// `H = {h*}`, `F = {f*}`, `G = {g*}` on three equally likely points.
pub fn trivial_world() -> Result<FiniteWorld> {
    let h = vec![vec![0, 1, 2]];
    let g = vec![vec![0, 1, 2]];
    let reg = FiniteWorld::reconstruction_loss(&h, &g, &[0, 1, 2]);
    FiniteWorld::new(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], vec![0, 1, 0], h, vec![vec![0, 1, 0]], g, reg)
}

/// Two equally likely points; `F` adds a constant predictor that is wrong on
/// the second point. A trial is violated exactly when `S` never hits that
/// point, probability `2^{-mL}`, as long as `eps1 < 1/2`.
pub fn coin_flip_world() -> Result<FiniteWorld> {
    let h = vec![vec![0, 1]];
    let g = vec![vec![0, 1]];
    let reg = FiniteWorld::reconstruction_loss(&h, &g, &[0, 1]);
    FiniteWorld::new(vec![0.5, 0.5], vec![0, 1], h, vec![vec![0, 1], vec![0, 0]], g, reg)
}

/// Three points with masses `1 - p - q`, `p`, `q`. `H = {h*, h'}` where `h'`
/// predicts wrongly on the `p` point and has regularization loss 1 on the `q`
/// point. For `p > eps1` a trial is violated with probability
/// `(1 - q)^mU (1 - p)^mL`.
pub fn near_miss_world(p: f64, q: f64) -> Result<FiniteWorld> {
    ensure!(p > 0.0 && q >= 0.0 && p + q < 1.0, "need p > 0, q >= 0, p + q < 1");
    let h = vec![vec![0, 1, 2], vec![0, 0, 2]];
    let f = vec![vec![0, 1, 0]];
    let g = vec![vec![0, 1, 2]];
    let reg = vec![vec![vec![0.0, 0.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]];
    let mut distribution = vec![0.0, p, q];
    distribution[0] = 1.0 - p - q;
    FiniteWorld::new(distribution, vec![0, 1, 0], h, f, g, reg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_losses_by_hand() {
        // four points, masses .1 .2 .3 .4; f*h wrong on points 1 and 3
        let h = vec![vec![0, 1, 0, 1]];
        let f = vec![vec![0, 1], vec![0, 0]];
        let g = vec![vec![0, 1]];
        let reg = vec![vec![vec![0.0, 0.0, 0.0, 0.0]]];
        let w = FiniteWorld::new(vec![0.1, 0.2, 0.3, 0.4], vec![0, 1, 0, 1], h, f, g, reg).unwrap();
        assert_eq!(w.exact_pred_loss(0, 0), 0.0);
        assert!((w.exact_pred_loss(1, 0) - (0.2 + 0.4)).abs() < 1e-15);
        assert_eq!(w.ground_truth(), (0, 0, 0));
    }

    #[test]
    fn loss_table_of_ones() {
        let h = vec![vec![0, 0], vec![0, 1]];
        let g = vec![vec![0, 1]];
        let reg = vec![vec![vec![1.0, 1.0]], vec![vec![0.0, 0.0]]];
        let w = FiniteWorld::new(vec![0.5, 0.5], vec![0, 1], h, vec![vec![0, 1]], g, reg).unwrap();
        assert_eq!(w.exact_reg_loss(0, 0), 1.0);
        assert_eq!(w.pruned_subset(0.0), vec![1]);
        assert_eq!(w.pruned_subset(1.0), vec![0, 1]);
    }

    #[test]
    fn rejects_unrealizable_and_malformed() {
        let h = vec![vec![0, 0]];
        let g = vec![vec![0]];
        let reg = vec![vec![vec![0.0, 0.0]]];
        let err = FiniteWorld::new(vec![0.5, 0.5], vec![0, 1], h.clone(), vec![vec![0]], g.clone(), reg.clone());
        assert!(err.is_err());
        assert!(FiniteWorld::new(vec![0.5, 0.4], vec![0, 0], h, vec![vec![0]], g, reg).is_err());
    }

    #[test]
    fn trial_argument_checks() {
        let w = trivial_world().unwrap();
        let mut rng = RngStream::new(1);
        assert!(w.run_trial(0, 5, 0.1, &mut rng).is_err());
        assert!(w.run_trial(5, 0, 0.1, &mut rng).is_err());
        assert!(w.verify_theorem1(0.1, 0.1, 0.1, 0, &rng).is_err());
    }

    #[test]
    fn trivial_world_never_violates() {
        let w = trivial_world().unwrap();
        let c = w.run_trials(3, 3, 0.01, 500, &RngStream::new(4)).unwrap();
        assert_eq!(c.violations, 0);
    }

    #[test]
    fn trials_are_deterministic() {
        let w = coin_flip_world().unwrap();
        let a = w.run_trials(2, 3, 0.1, 300, &RngStream::new(9)).unwrap();
        let b = w.run_trials(2, 3, 0.1, 300, &RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        let mut r1 = RngStream::new(5);
        let mut r2 = RngStream::new(5);
        assert_eq!(w.run_trial(2, 2, 0.1, &mut r1).unwrap(), w.run_trial(2, 2, 0.1, &mut r2).unwrap());
    }

    #[test]
    fn witnesses_match_flag() {
        let w = coin_flip_world().unwrap();
        let mut rng = RngStream::new(2);
        for _ in 0..50 {
            let o = w.run_trial(1, 1, 0.1, &mut rng).unwrap();
            assert_eq!(o.violated, !o.witnesses.is_empty());
            assert!(o.witnesses.iter().all(|&(f, h)| (f, h) == (1, 0)));
        }
    }

    #[test]
    fn all_tables_enumerates() {
        let t = all_tables(2, 3);
        assert_eq!(t.len(), 9);
        assert_eq!(t[0], vec![0, 0]);
        assert_eq!(t[5], vec![2, 1]);
    }

    #[test]
    fn random_world_is_realizable() {
        let mut rng = RngStream::new(11);
        for _ in 0..20 {
            let w = random_world(RandomWorldSpec::default(), &mut rng).unwrap();
            let (h, f, g) = w.ground_truth();
            assert_eq!(w.exact_pred_loss(f, h), 0.0);
            assert_eq!(w.exact_reg_loss(h, g), 0.0);
            assert!((w.distribution().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn report_lines() {
        let w = trivial_world().unwrap();
        let r = w.verify_theorem1(0.1, 0.1, 0.1, 10, &RngStream::new(1)).unwrap();
        let text = r.to_string();
        assert!(text.lines().any(|l| l == "violations=0"));
        assert!(text.ends_with("result=PASS"));
        assert_eq!(r.csv_row().split(',').count(), VerifyReport::csv_header().split(',').count());
    }
}
