//! Display model: choose the next `n` candidates so that the user's answer is
//! as informative as possible.
//!
//! Each displayed item acts as a Voronoi seed. Every catalog item joins the
//! cell of its most similar seed under the expected similarity
//!
//! ```text
//! s(x, y) = sum_j omega(j, x) omega(j, y) s_j(x, y) / sum_j omega(j, x) omega(j, y)
//! ```
//!
//! and the answer entropy is the entropy of the posterior mass captured by
//! each cell. Seeds are picked greedily to balance that mass, starting from
//! the most probable item.

use serde::{Deserialize, Serialize};

use crate::bayes::{argmax, AuxiliaryState};
use crate::catalog::SimilarityProvider;
use crate::error::{Error, Result};

/// Seeds of the next display and the posterior mass of each seed's cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplaySet {
    pub seeds: Vec<usize>,
    pub partition_mass: Vec<f64>,
}

impl DisplaySet {
    /// Entropy (nats) of the partition masses.
    pub fn entropy(&self) -> f64 {
        entropy(&self.partition_mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayOptions {
    /// How many of the most probable unchosen items are tried at each greedy
    /// step.
    pub pool: usize,
    /// Run the seed-swap refinement pass.
    pub refine: bool,
}

impl Default for DisplayOptions {
    fn default() -> Self {
        DisplayOptions { pool: 64, refine: true }
    }
}

/// Expected similarity between two local items.
pub fn expected_similarity(provider: &SimilarityProvider, aux: &AuxiliaryState, x: usize, y: usize) -> f64 {
    let (wx, wy) = (aux.omega_column(x), aux.omega_column(y));
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..provider.channels() {
        let weight = wx[j] * wy[j];
        num += weight * provider.sim(j, x, y);
        den += weight;
    }
    num / den
}

/// `expected_similarity(x, y)` for every `y`.
pub fn expected_similarity_row(provider: &SimilarityProvider, aux: &AuxiliaryState, x: usize) -> Vec<f64> {
    if provider.channels() == 1 {
        // weights cancel exactly
        return provider.row(0, x).to_vec();
    }
    let n = provider.len();
    let wx = aux.omega_column(x).to_vec();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for (j, &wxj) in wx.iter().enumerate() {
        let row = provider.row(j, x);
        for y in 0..n {
            let weight = wxj * aux.omega(j, y);
            num[y] += weight * row[y];
            den[y] += weight;
        }
    }
    num.iter_mut().zip(&den).for_each(|(a, b)| *a /= b);
    num
}

/// Entropy in nats; zero masses contribute nothing.
pub fn entropy(masses: &[f64]) -> f64 {
    masses.iter().filter(|&&m| m > 0.0).map(|&m| -m * m.ln()).sum()
}

/// Assigns every item to its most similar seed (ties to the lowest seed
/// index) and returns the normalized mass per seed.
fn partition(rows: &[&[f64]], p: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut cells = vec![0usize; p.len()];
    let mut masses = vec![0.0; rows.len()];
    for (k, &pk) in p.iter().enumerate() {
        let mut best = 0;
        for s in 1..rows.len() {
            if rows[s][k] > rows[best][k] {
                best = s;
            }
        }
        cells[k] = best;
        masses[best] += pk;
    }
    let total: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|m| *m /= total);
    (cells, masses)
}

/// Partition masses of an arbitrary seed list.
pub fn partition_masses(provider: &SimilarityProvider, aux: &AuxiliaryState, p: &[f64], seeds: &[usize]) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = seeds.iter().map(|&s| expected_similarity_row(provider, aux, s)).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    partition(&refs, p).1
}

fn check_inputs(p: &[f64], aux: &AuxiliaryState, provider: &SimilarityProvider, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("display size must be positive".into()));
    }
    if provider.len() < n {
        return Err(Error::SubsetTooSmall { available: provider.len(), required: n });
    }
    if p.len() != provider.len() || aux.items() != provider.len() || aux.channels() != provider.channels() {
        return Err(Error::InvalidParameter("posterior, auxiliary state and provider disagree in shape".into()));
    }
    Ok(())
}

/// Picks `n` seeds maximizing the answer entropy.
///
/// Seed 0 is always the most probable item. The remaining seeds are added
/// one at a time from the `options.pool` most probable eligible items,
/// keeping the candidate whose addition yields the highest partition
/// entropy. A refinement pass then swaps each non-argmax seed for the best
/// pool member of its own cell when that raises the entropy. Items in
/// `exclude` are not eligible unless too few items would remain. All ties
/// go to the lowest index.
pub fn select_display(
    p: &[f64],
    aux: &AuxiliaryState,
    provider: &SimilarityProvider,
    n: usize,
    exclude: &[usize],
    options: DisplayOptions,
) -> Result<DisplaySet> {
    check_inputs(p, aux, provider, n)?;
    let total = provider.len();
    let top = argmax(p);

    let mut blocked = vec![false; total];
    for &e in exclude {
        if e < total {
            blocked[e] = true;
        }
    }
    let mut eligible: Vec<usize> = (0..total).filter(|&k| k != top && !blocked[k]).collect();
    if eligible.len() < n - 1 {
        eligible = (0..total).filter(|&k| k != top).collect();
    }
    eligible.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    eligible.truncate(options.pool.max(n - 1));
    let mut pool = eligible;
    pool.sort_unstable();

    let top_row = expected_similarity_row(provider, aux, top);
    let pool_rows: Vec<Vec<f64>> = pool.iter().map(|&c| expected_similarity_row(provider, aux, c)).collect();

    let mut seeds = vec![top];
    let mut seed_rows: Vec<usize> = Vec::new(); // positions in `pool` of seeds 1..
    let mut best_sim = top_row.clone();
    let mut cells = vec![0usize; total];
    let mut masses = vec![p.iter().sum::<f64>()];
    let mut chosen = vec![false; pool.len()];
    let mut moved = Vec::with_capacity(n);

    while seeds.len() < n {
        let mut best: Option<(usize, f64)> = None;
        for (ci, row) in pool_rows.iter().enumerate() {
            if chosen[ci] {
                continue;
            }
            moved.clear();
            moved.resize(seeds.len(), 0.0);
            let mut captured = 0.0;
            for k in 0..total {
                if row[k] > best_sim[k] {
                    moved[cells[k]] += p[k];
                    captured += p[k];
                }
            }
            let h = masses.iter().zip(&moved).map(|(m, d)| m - d).chain(std::iter::once(captured)).filter(|&m| m > 0.0).map(|m| -m * m.ln()).sum::<f64>();
            // pool is sorted ascending, so strict comparison keeps the lowest id on ties
            if best.is_none_or(|(_, bh)| h > bh) {
                best = Some((ci, h));
            }
        }
        let (ci, _) = best.expect("pool holds at least n - 1 candidates");
        chosen[ci] = true;
        let s = seeds.len();
        masses.push(0.0);
        let row = &pool_rows[ci];
        for k in 0..total {
            if row[k] > best_sim[k] {
                masses[cells[k]] -= p[k];
                masses[s] += p[k];
                best_sim[k] = row[k];
                cells[k] = s;
            }
        }
        seeds.push(pool[ci]);
        seed_rows.push(ci);
    }

    let rows_of = |seed_rows: &[usize]| -> Vec<&[f64]> {
        std::iter::once(top_row.as_slice()).chain(seed_rows.iter().map(|&ci| pool_rows[ci].as_slice())).collect()
    };

    let (mut cells, mut masses) = partition(&rows_of(&seed_rows), p);
    if options.refine && n > 1 {
        let mut current = entropy(&masses);
        for slot in 1..n {
            let mut best: Option<(usize, f64, Vec<usize>, Vec<f64>)> = None;
            for (ci, _) in pool.iter().enumerate() {
                if chosen[ci] || cells[pool[ci]] != slot {
                    continue;
                }
                let mut trial = seed_rows.clone();
                trial[slot - 1] = ci;
                let (trial_cells, trial_masses) = partition(&rows_of(&trial), p);
                let h = entropy(&trial_masses);
                if h > current && best.as_ref().is_none_or(|b| h > b.1) {
                    best = Some((ci, h, trial_cells, trial_masses));
                }
            }
            if let Some((ci, h, c, m)) = best {
                chosen[seed_rows[slot - 1]] = false;
                chosen[ci] = true;
                seed_rows[slot - 1] = ci;
                seeds[slot] = pool[ci];
                cells = c;
                masses = m;
                current = h;
            }
        }
    }

    Ok(DisplaySet { seeds, partition_mass: masses })
}

/// Baseline: the `n` most probable items (ties to the lowest index), with
/// their partition masses under the same metric.
pub fn top_n_display(p: &[f64], aux: &AuxiliaryState, provider: &SimilarityProvider, n: usize) -> Result<DisplaySet> {
    check_inputs(p, aux, provider, n)?;
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order.truncate(n);
    let partition_mass = partition_masses(provider, aux, p, &order);
    Ok(DisplaySet { seeds: order, partition_mass })
}
