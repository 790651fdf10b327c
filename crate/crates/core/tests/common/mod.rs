//! Brute-force reference computations shared by the integration tests. None
//! of these call into the library's inference or display code.

#![allow(dead_code)]

use std::sync::Arc;

use mindseek::bayes::Feedback;
use mindseek::catalog::{generate_catalog, ChannelSpec, GeneratorConfig, SimilarityProvider, SubsetView};
use mindseek::AuxiliaryState;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn provider_for(config: &GeneratorConfig) -> Arc<SimilarityProvider> {
    let catalog = generate_catalog(config).unwrap();
    Arc::new(SimilarityProvider::new(&catalog, &SubsetView::all(&catalog)).unwrap())
}

/// Catalog whose channel 0 is far more clustered than the others.
pub fn dominant_channel_config(n: usize, others: usize, seed: u64) -> GeneratorConfig {
    let mut channels = vec![ChannelSpec::new(4, 8, 3.0)];
    channels.extend((0..others).map(|_| ChannelSpec::new(4, 32, 1.0)));
    GeneratorConfig { n, channels, seed }
}

/// A random inference instance: a small catalog plus feedback rounds.
pub struct Instance {
    pub provider: Arc<SimilarityProvider>,
    pub feedback: Vec<Feedback>,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..=50);
    let m = rng.gen_range(1..=4);
    let dims: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=4)).collect();
    let channels = dims
        .iter()
        .map(|&d| {
            let mut spec = ChannelSpec::new(d, rng.gen_range(1..=6), rng.gen_range(0.5..4.0));
            spec.bandwidth = Some(rng.gen_range(0.5..3.0));
            spec
        })
        .collect();
    let provider = provider_for(&GeneratorConfig { n, channels, seed: rng.gen() });
    let rounds = rng.gen_range(1..=6);
    let feedback = (0..rounds)
        .map(|_| {
            let size = rng.gen_range(2..=n.min(8));
            let display = sample(&mut rng, n, size).into_vec();
            let click = display[rng.gen_range(0..size)];
            Feedback::new(display, click)
        })
        .collect();
    Instance { provider, feedback }
}

/// `L(k, j)` as the product of per-round answer probabilities, from a uniform
/// prior. Indexed `[k][j]`.
pub fn joint_table(provider: &SimilarityProvider, feedback: &[Feedback]) -> Vec<Vec<f64>> {
    let n = provider.len();
    let m = provider.channels();
    let mut table = vec![vec![1.0 / (n * m) as f64; m]; n];
    for fb in feedback {
        for (k, row) in table.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let denominator: f64 = fb.display.iter().map(|&l| provider.sim(j, l, k)).sum();
                *cell *= provider.sim(j, fb.click, k) / denominator;
            }
        }
        let total: f64 = table.iter().flatten().sum();
        table.iter_mut().flatten().for_each(|c| *c /= total);
    }
    table
}

/// Marginals `(p, w)` of the joint table.
pub fn joint_marginals(provider: &SimilarityProvider, feedback: &[Feedback]) -> (Vec<f64>, Vec<f64>) {
    let table = joint_table(provider, feedback);
    let total: f64 = table.iter().flatten().sum();
    let p = table.iter().map(|row| row.iter().sum::<f64>() / total).collect();
    let m = provider.channels();
    let w = (0..m).map(|j| table.iter().map(|row| row[j]).sum::<f64>() / total).collect();
    (p, w)
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Expected similarity straight from its definition.
pub fn expected_similarity(provider: &SimilarityProvider, aux: &AuxiliaryState, x: usize, y: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..provider.channels() {
        let weight = aux.omega(j, x) * aux.omega(j, y);
        num += weight * provider.sim(j, x, y);
        den += weight;
    }
    num / den
}

/// Voronoi cell masses: each item goes to its most similar seed, ties to the
/// earliest seed.
pub fn cell_masses(provider: &SimilarityProvider, aux: &AuxiliaryState, p: &[f64], seeds: &[usize]) -> Vec<f64> {
    let mut masses = vec![0.0; seeds.len()];
    for (k, &pk) in p.iter().enumerate() {
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (s, &seed) in seeds.iter().enumerate() {
            let sim = expected_similarity(provider, aux, seed, k);
            if sim > best_sim {
                best = s;
                best_sim = sim;
            }
        }
        masses[best] += pk;
    }
    let total: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|m| *m /= total);
    masses
}

pub fn entropy(masses: &[f64]) -> f64 {
    masses.iter().filter(|&&m| m > 0.0).map(|&m| -m * m.ln()).sum()
}

/// Best answer entropy over every `n`-subset of seeds.
pub fn exhaustive_best_entropy(provider: &SimilarityProvider, aux: &AuxiliaryState, p: &[f64], n: usize) -> f64 {
    fn recurse(start: usize, total: usize, n: usize, chosen: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if chosen.len() == n {
            visit(chosen);
            return;
        }
        for k in start..total {
            chosen.push(k);
            recurse(k + 1, total, n, chosen, visit);
            chosen.pop();
        }
    }
    let mut best = f64::NEG_INFINITY;
    recurse(0, p.len(), n, &mut Vec::new(), &mut |seeds| {
        best = best.max(entropy(&cell_masses(provider, aux, p, seeds)));
    });
    best
}

/// Posterior with mass spread over a few random modes.
pub fn random_posterior(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let sharpness = rng.gen_range(0.5..4.0);
    let mut p: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            (sharpness * z).exp()
        })
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// An auxiliary state shaped by a few random clicks.
pub fn random_aux(rng: &mut impl Rng, provider: &SimilarityProvider, rounds: usize, n_display: usize) -> AuxiliaryState {
    let n = provider.len();
    let mut aux = AuxiliaryState::uniform(n, provider.channels());
    for _ in 0..rounds {
        let display = sample(rng, n, n_display.min(n)).into_vec();
        let click = display[rng.gen_range(0..display.len())];
        aux = aux.update(provider, &Feedback::new(display, click)).unwrap();
    }
    aux
}

/// The answer mixture `sum_j u_j s_j(i, q) / sum_{l in D} s_j(l, q)` for
/// every displayed item.
pub fn click_mixture(provider: &SimilarityProvider, weights: &[f64], display: &[usize], q: usize) -> Vec<f64> {
    display
        .iter()
        .map(|&i| {
            weights
                .iter()
                .enumerate()
                .map(|(j, u)| {
                    let den: f64 = display.iter().map(|&l| provider.sim(j, l, q)).sum();
                    u * provider.sim(j, i, q) / den
                })
                .sum()
        })
        .collect()
}
