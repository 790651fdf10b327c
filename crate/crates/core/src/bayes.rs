//! Answer model and update model.
//!
//! The engine never stores the joint posterior over (target, channel).
//! Instead it keeps the two conditionals
//!
//! * `rho(k, j) = P(Y = k | B_t, W = j)`, one distribution over items per channel,
//! * `omega(j, k) = P(W = j | B_t, Y = k)`, one distribution over channels per item,
//!
//! each refreshed by multiplying in the one-click likelihood and
//! renormalizing. The marginals `p = rho * w` and `w = omega * p` are then
//! the eigenvalue-1 fixed point of the column-stochastic product.
//!
//! [`JointLikelihood`] is the exhaustive N x M reference used to cross-check
//! the factored route.

use serde::{Deserialize, Serialize};

use crate::catalog::SimilarityProvider;
use crate::error::{Error, Result};

/// Relative positivity floor applied to every auxiliary column before
/// renormalization: `entry = max(entry, FLOOR * column_max)`.
pub const FLOOR: f64 = 1e-300;

/// One round of feedback. Entries are positions in the provider's subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub display: Vec<usize>,
    pub click: usize,
}

impl Feedback {
    pub fn new(display: Vec<usize>, click: usize) -> Self {
        Feedback { display, click }
    }

    /// The click must be displayed, the display must be duplicate free and
    /// every entry must be below `items`.
    pub fn validate(&self, items: usize) -> Result<()> {
        if self.display.is_empty() {
            return Err(Error::InvalidFeedback("empty display".into()));
        }
        if !self.display.contains(&self.click) {
            return Err(Error::InvalidFeedback(format!("click {} is not displayed", self.click)));
        }
        let mut seen = self.display.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidFeedback("display contains duplicates".into()));
        }
        if let Some(&bad) = seen.last().filter(|&&v| v >= items) {
            return Err(Error::OutOfRange { what: "item", index: bad, len: items });
        }
        Ok(())
    }
}

/// `P(X_D = i | Y = k, W = j) = s_j(i, k) / sum_{l in D} s_j(l, k)`.
pub fn answer_likelihood(provider: &SimilarityProvider, display: &[usize], i: usize, k: usize, j: usize) -> Result<f64> {
    if !display.contains(&i) {
        return Err(Error::NotDisplayed(i));
    }
    let denominator: f64 = display.iter().map(|&l| provider.sim(j, l, k)).sum();
    Ok(provider.sim(j, i, k) / denominator)
}

/// Likelihood of the recorded click for every (target, channel) pair, laid
/// out channel-major: `out[j * n + k]`.
pub fn likelihood_matrix(provider: &SimilarityProvider, feedback: &Feedback) -> Result<Vec<f64>> {
    let n = provider.len();
    let m = provider.channels();
    feedback.validate(n)?;
    let mut out = vec![0.0; n * m];
    let mut denominator = vec![0.0; n];
    for j in 0..m {
        denominator.iter_mut().for_each(|d| *d = 0.0);
        for &l in &feedback.display {
            let row = provider.row(j, l);
            for (d, s) in denominator.iter_mut().zip(row.iter()) {
                *d += s;
            }
        }
        let clicked = provider.row(j, feedback.click);
        for ((o, s), d) in out[j * n..(j + 1) * n].iter_mut().zip(clicked.iter()).zip(&denominator) {
            *o = s / d;
        }
    }
    Ok(out)
}

fn floor_and_normalize(column: &mut [f64]) {
    let max = column.iter().copied().fold(0.0, f64::max);
    let floor = FLOOR * max;
    for v in column.iter_mut() {
        if *v < floor || !v.is_finite() {
            *v = floor;
        }
    }
    let sum: f64 = column.iter().sum();
    for v in column.iter_mut() {
        *v /= sum;
    }
}

/// The auxiliary conditionals `rho` (N x M) and `omega` (M x N).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryState {
    n: usize,
    m: usize,
    /// `rho[j * n + k]`: column j is a distribution over items.
    rho: Vec<f64>,
    /// `omega[k * m + j]`: column k is a distribution over channels.
    omega: Vec<f64>,
    t: usize,
}

impl AuxiliaryState {
    pub fn uniform(items: usize, channels: usize) -> Self {
        AuxiliaryState {
            n: items,
            m: channels,
            rho: vec![1.0 / items as f64; items * channels],
            omega: vec![1.0 / channels as f64; items * channels],
            t: 0,
        }
    }

    pub fn items(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.m
    }

    /// Number of feedback rounds absorbed so far.
    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn rho(&self, k: usize, j: usize) -> f64 {
        self.rho[j * self.n + k]
    }

    pub fn omega(&self, j: usize, k: usize) -> f64 {
        self.omega[k * self.m + j]
    }

    /// `rho(., j)`.
    pub fn rho_column(&self, j: usize) -> &[f64] {
        &self.rho[j * self.n..(j + 1) * self.n]
    }

    /// `omega(., k)`.
    pub fn omega_column(&self, k: usize) -> &[f64] {
        &self.omega[k * self.m..(k + 1) * self.m]
    }

    fn check_shape(&self, provider: &SimilarityProvider) -> Result<()> {
        if provider.len() != self.n || provider.channels() != self.m {
            return Err(Error::InvalidParameter(format!(
                "state is {}x{}, provider is {}x{}",
                self.n,
                self.m,
                provider.len(),
                provider.channels()
            )));
        }
        Ok(())
    }

    /// Multiplies the click likelihood into every `rho` column and every
    /// `omega` column, then floors and renormalizes each column.
    pub fn update(&self, provider: &SimilarityProvider, feedback: &Feedback) -> Result<Self> {
        self.check_shape(provider)?;
        let lik = likelihood_matrix(provider, feedback)?;
        let mut next = self.clone();
        next.absorb_rho(&lik);
        let (n, m) = (self.n, self.m);
        for k in 0..n {
            let column = &mut next.omega[k * m..(k + 1) * m];
            for (j, v) in column.iter_mut().enumerate() {
                *v *= lik[j * n + k];
            }
            floor_and_normalize(column);
        }
        next.t += 1;
        Ok(next)
    }

    /// Updates `rho` only, leaving `omega` untouched. This is M independent
    /// single-channel trackers, the late-fusion baseline.
    pub fn update_independent(&self, provider: &SimilarityProvider, feedback: &Feedback) -> Result<Self> {
        self.check_shape(provider)?;
        let lik = likelihood_matrix(provider, feedback)?;
        let mut next = self.clone();
        next.absorb_rho(&lik);
        next.t += 1;
        Ok(next)
    }

    fn absorb_rho(&mut self, lik: &[f64]) {
        for (column, lik) in self.rho.chunks_mut(self.n).zip(lik.chunks(self.n)) {
            for (v, l) in column.iter_mut().zip(lik) {
                *v *= l;
            }
            floor_and_normalize(column);
        }
    }

    /// The M x M matrix `omega * rho` (row-major `a[j * m + j2]`), whose
    /// eigenvalue-1 eigenvector is the channel posterior.
    pub fn channel_operator(&self) -> Vec<f64> {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for j2 in 0..m {
            let rho = self.rho_column(j2);
            for (k, &r) in rho.iter().enumerate() {
                let omega = &self.omega[k * m..(k + 1) * m];
                for j in 0..m {
                    a[j * m + j2] += omega[j] * r;
                }
            }
        }
        a
    }

    /// Largest deviation of any `rho` or `omega` column sum from 1, and the
    /// smallest entry.
    pub fn stochasticity(&self) -> (f64, f64) {
        let mut worst = 0.0f64;
        for column in self.rho.chunks(self.n).chain(self.omega.chunks(self.m)) {
            worst = worst.max((column.iter().sum::<f64>() - 1.0).abs());
        }
        let min = self.rho.iter().chain(&self.omega).copied().fold(f64::INFINITY, f64::min);
        (worst, min)
    }
}

/// Marginal posteriors over items (`p`) and channels (`w`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posteriors {
    pub p: Vec<f64>,
    pub w: Vec<f64>,
}

impl Posteriors {
    pub fn uniform(items: usize, channels: usize) -> Self {
        Posteriors { p: vec![1.0 / items as f64; items], w: vec![1.0 / channels as f64; channels] }
    }

    /// Most probable item, ties to the lowest index.
    pub fn argmax_item(&self) -> usize {
        argmax(&self.p)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// L1 distance between successive iterates that counts as converged.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-12, max_sweeps: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub posteriors: Posteriors,
    pub sweeps: usize,
    /// False when the power iteration hit the sweep cap and the direct
    /// null-space solve was used instead.
    pub converged: bool,
}

/// Recovers `p` and `w` from the auxiliary state.
///
/// Alternates `w <- omega * p`, `p <- rho * w` (run on the M x M operator
/// `omega * rho`, which has the same fixed point) from a warm start, then
/// reads `p = rho * w` and `w = omega * p`.
pub fn solve_posteriors(state: &AuxiliaryState, warm_start: Option<&Posteriors>, options: SolverOptions) -> Solution {
    let (n, m) = (state.n, state.m);
    let a = state.channel_operator();

    let mut w = match warm_start {
        Some(prev) if prev.p.len() == n => omega_times(state, &prev.p),
        _ => vec![1.0 / m as f64; m],
    };
    normalize(&mut w);

    let mut sweeps = 0;
    let mut converged = false;
    let mut next = vec![0.0; m];
    while sweeps < options.max_sweeps {
        sweeps += 1;
        for (j, slot) in next.iter_mut().enumerate() {
            *slot = a[j * m..(j + 1) * m].iter().zip(&w).map(|(x, y)| x * y).sum();
        }
        normalize(&mut next);
        let delta: f64 = next.iter().zip(&w).map(|(x, y)| (x - y).abs()).sum();
        std::mem::swap(&mut w, &mut next);
        if delta < options.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("posterior power iteration did not converge after {sweeps} sweeps; using direct null-space solve");
        w = null_space_vector(&a, m);
    }

    let p = rho_times(state, &w);
    let mut w = omega_times(state, &p);
    normalize(&mut w);
    Solution { posteriors: Posteriors { p, w }, sweeps, converged }
}

fn normalize(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
}

fn rho_times(state: &AuxiliaryState, w: &[f64]) -> Vec<f64> {
    let n = state.n;
    let mut p = vec![0.0; n];
    for (column, &wj) in state.rho.chunks(n).zip(w) {
        for (pk, r) in p.iter_mut().zip(column) {
            *pk += r * wj;
        }
    }
    p
}

fn omega_times(state: &AuxiliaryState, p: &[f64]) -> Vec<f64> {
    let m = state.m;
    let mut w = vec![0.0; m];
    for (column, &pk) in state.omega.chunks(m).zip(p) {
        for (wj, o) in w.iter_mut().zip(column) {
            *wj += o * pk;
        }
    }
    w
}

/// Solves `(A - I) w = 0, sum(w) = 1` by Gaussian elimination with partial
/// pivoting, replacing the first equation with the normalization.
pub fn null_space_vector(a: &[f64], m: usize) -> Vec<f64> {
    let mut g: Vec<f64> = a.to_vec();
    for j in 0..m {
        g[j * m + j] -= 1.0;
    }
    let mut rhs = vec![0.0; m];
    for j in 0..m {
        g[j] = 1.0;
    }
    rhs[0] = 1.0;
    for col in 0..m {
        let pivot = (col..m).max_by(|&x, &y| g[x * m + col].abs().total_cmp(&g[y * m + col].abs())).unwrap();
        if pivot != col {
            for c in 0..m {
                g.swap(col * m + c, pivot * m + c);
            }
            rhs.swap(col, pivot);
        }
        let d = g[col * m + col];
        if d == 0.0 {
            continue;
        }
        for r in (col + 1)..m {
            let f = g[r * m + col] / d;
            if f != 0.0 {
                for c in col..m {
                    g[r * m + c] -= f * g[col * m + c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut w = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = ((r + 1)..m).map(|c| g[r * m + c] * w[c]).sum();
        let d = g[r * m + r];
        w[r] = if d == 0.0 { 0.0 } else { (rhs[r] - s) / d };
    }
    for v in w.iter_mut() {
        *v = v.max(0.0);
    }
    if w.iter().sum::<f64>() <= 0.0 {
        w.iter_mut().for_each(|v| *v = 1.0);
    }
    normalize(&mut w);
    w
}

/// Exhaustive joint table `L(k, j)` proportional to the product of every
/// click likelihood under a uniform prior.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLikelihood {
    n: usize,
    m: usize,
    /// `table[j * n + k]`
    table: Vec<f64>,
}

impl JointLikelihood {
    pub fn uniform(items: usize, channels: usize) -> Self {
        JointLikelihood { n: items, m: channels, table: vec![1.0 / (items * channels) as f64; items * channels] }
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.table[j * self.n + k]
    }

    pub fn update(&self, provider: &SimilarityProvider, feedback: &Feedback) -> Result<Self> {
        let lik = likelihood_matrix(provider, feedback)?;
        let mut next = self.clone();
        for (v, l) in next.table.iter_mut().zip(&lik) {
            *v *= l;
        }
        normalize(&mut next.table);
        Ok(next)
    }

    pub fn marginals(&self) -> Posteriors {
        let (n, m) = (self.n, self.m);
        let mut p = vec![0.0; n];
        let mut w = vec![0.0; m];
        for j in 0..m {
            for k in 0..n {
                let v = self.table[j * n + k];
                p[k] += v;
                w[j] += v;
            }
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        w.iter_mut().for_each(|v| *v /= total);
        Posteriors { p, w }
    }

    /// `P(Y = . | W = j)`.
    pub fn item_conditional(&self, j: usize) -> Vec<f64> {
        let mut c = self.table[j * self.n..(j + 1) * self.n].to_vec();
        normalize(&mut c);
        c
    }

    /// `P(W = . | Y = k)`.
    pub fn channel_conditional(&self, k: usize) -> Vec<f64> {
        let mut c: Vec<f64> = (0..self.m).map(|j| self.get(k, j)).collect();
        normalize(&mut c);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_provider(n: usize, m: usize, seed: u64) -> SimilarityProvider {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let matrices = (0..m)
            .map(|_| {
                let mut t = vec![1.0; n * n];
                for a in 0..n {
                    for b in (a + 1)..n {
                        let v = rng.gen_range(0.05..0.95);
                        t[a * n + b] = v;
                        t[b * n + a] = v;
                    }
                }
                t
            })
            .collect();
        SimilarityProvider::from_matrices((0..n).collect(), matrices).unwrap()
    }

    #[test]
    fn answer_likelihood_cases() {
        let p = table_provider(6, 2, 1);
        assert_eq!(answer_likelihood(&p, &[3], 3, 1, 0).unwrap(), 1.0);
        assert!(matches!(answer_likelihood(&p, &[3, 4], 5, 1, 0), Err(Error::NotDisplayed(5))));

        let sym = SimilarityProvider::from_matrices(
            vec![0, 1, 2],
            vec![vec![1.0, 0.5, 0.3, 0.5, 1.0, 0.3, 0.3, 0.3, 1.0]],
        )
        .unwrap();
        // s(0, 2) == s(1, 2)
        assert_eq!(answer_likelihood(&sym, &[0, 1], 0, 2, 0).unwrap(), 0.5);
    }

    #[test]
    fn answer_likelihood_sums_to_one() {
        let p = table_provider(20, 3, 2);
        let display = [1, 4, 6, 9, 11, 13, 17, 19];
        for k in 0..20 {
            for j in 0..3 {
                let total: f64 = display.iter().map(|&i| answer_likelihood(&p, &display, i, k, j).unwrap()).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feedback_validation() {
        assert!(Feedback::new(vec![1, 2], 3).validate(5).is_err());
        assert!(Feedback::new(vec![1, 1], 1).validate(5).is_err());
        assert!(Feedback::new(vec![1, 7], 1).validate(5).is_err());
        assert!(Feedback::new(vec![], 1).validate(5).is_err());
        assert!(Feedback::new(vec![1, 2], 2).validate(5).is_ok());
    }

    #[test]
    fn uniform_state_solves_to_uniform() {
        let state = AuxiliaryState::uniform(7, 3);
        let s = solve_posteriors(&state, None, SolverOptions::default());
        assert!(s.converged);
        for &v in &s.posteriors.p {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
        for &v in &s.posteriors.w {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uninformative_feedback_keeps_state() {
        // constant similarities: every likelihood is 1/|D|
        let n = 5;
        let flat = SimilarityProvider::from_matrices((0..n).collect(), vec![vec![1.0; n * n], vec![1.0; n * n]]).unwrap();
        let state = AuxiliaryState::uniform(n, 2);
        let next = state.update(&flat, &Feedback::new(vec![0, 2, 3], 2)).unwrap();
        for j in 0..2 {
            for k in 0..n {
                assert!((next.rho(k, j) - state.rho(k, j)).abs() < 1e-15);
                assert!((next.omega(j, k) - state.omega(j, k)).abs() < 1e-15);
            }
        }
        assert_eq!(next.iteration(), 1);
    }

    #[test]
    fn single_click_matches_joint_conditionals() {
        let p = table_provider(4, 2, 5);
        let fb = Feedback::new(vec![0, 2, 3], 3);
        let state = AuxiliaryState::uniform(4, 2).update(&p, &fb).unwrap();
        let joint = JointLikelihood::uniform(4, 2).update(&p, &fb).unwrap();
        for j in 0..2 {
            for (k, v) in joint.item_conditional(j).iter().enumerate() {
                assert!((state.rho(k, j) - v).abs() < 1e-14);
            }
        }
        for k in 0..4 {
            for (j, v) in joint.channel_conditional(k).iter().enumerate() {
                assert!((state.omega(j, k) - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn joint_single_step_by_hand() {
        let p = SimilarityProvider::from_matrices(vec![0, 1], vec![vec![1.0, 0.25, 0.25, 1.0]]).unwrap();
        let joint = JointLikelihood::uniform(2, 1).update(&p, &Feedback::new(vec![0, 1], 0)).unwrap();
        // target 0: 1 / 1.25, target 1: 0.25 / 1.25
        assert!((joint.get(0, 0) - 0.8).abs() < 1e-15);
        assert!((joint.get(1, 0) - 0.2).abs() < 1e-15);
        let flat = SimilarityProvider::from_matrices(vec![0, 1], vec![vec![1.0; 4]]).unwrap();
        let same = JointLikelihood::uniform(2, 1).update(&flat, &Feedback::new(vec![0, 1], 1)).unwrap();
        assert_eq!(same, JointLikelihood::uniform(2, 1));
    }

    #[test]
    fn single_channel_is_plain_filtering() {
        let p = table_provider(9, 1, 11);
        let mut state = AuxiliaryState::uniform(9, 1);
        let mut reference = vec![1.0 / 9.0; 9];
        for (t, fb) in [(vec![0, 3, 5], 3), (vec![1, 2, 8], 8), (vec![4, 6, 7], 4)].into_iter().enumerate() {
            let fb = Feedback::new(fb.0, fb.1);
            state = state.update(&p, &fb).unwrap();
            for (k, r) in reference.iter_mut().enumerate() {
                *r *= answer_likelihood(&p, &fb.display, fb.click, k, 0).unwrap();
            }
            let sum: f64 = reference.iter().sum();
            reference.iter_mut().for_each(|r| *r /= sum);
            let s = solve_posteriors(&state, None, SolverOptions::default());
            assert_eq!(s.posteriors.w, vec![1.0], "round {t}");
            assert_eq!(s.posteriors.p, reference, "round {t}");
            assert!(state.omega_column(4) == [1.0]);
        }
    }

    #[test]
    fn null_space_agrees_with_power_iteration() {
        let p = table_provider(12, 3, 8);
        let mut state = AuxiliaryState::uniform(12, 3);
        for (d, c) in [(vec![0, 1, 2, 3], 2), (vec![4, 5, 6, 7], 7), (vec![8, 9, 10, 11], 8)] {
            state = state.update(&p, &Feedback::new(d, c)).unwrap();
        }
        let power = solve_posteriors(&state, None, SolverOptions::default());
        let direct = null_space_vector(&state.channel_operator(), 3);
        assert!((direct.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let forced = solve_posteriors(&state, None, SolverOptions { tolerance: 0.0, max_sweeps: 1 });
        assert!(!forced.converged);
        for j in 0..3 {
            assert!((forced.posteriors.w[j] - power.posteriors.w[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn floor_keeps_columns_positive() {
        let mut column = vec![1.0, 0.0, 1e-320];
        floor_and_normalize(&mut column);
        assert!(column.iter().all(|&v| v > 0.0));
        assert!((column.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
