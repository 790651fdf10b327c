//! Command-line driver and HTTP service for the `mindseek` engine.

pub mod config;
pub mod experiment;
pub mod service;
pub mod store;

use std::path::Path;

use anyhow::{Context, Result};
use mindseek::catalog::{generate_catalog, GeneratorConfig};
use mindseek::Catalog;

/// Channel layout for `generate`: `dims` and `clusters` are broadcast or
/// cycled across the `m` channels, and default to the library's layout.
pub fn generator_config(n: usize, m: usize, dims: &[usize], clusters: &[usize], separation: Option<f64>, seed: u64) -> GeneratorConfig {
    let mut config = GeneratorConfig::new(n, m, dims, seed);
    for (j, spec) in config.channels.iter_mut().enumerate() {
        if !clusters.is_empty() {
            spec.clusters = clusters[j % clusters.len()];
        }
        if let Some(s) = separation {
            spec.separation = s;
        }
    }
    config
}

/// Generates a catalog and writes its manifest to `out`.
pub fn generate_to(config: &GeneratorConfig, out: &Path) -> Result<Catalog> {
    let catalog = generate_catalog(config)?;
    catalog.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(catalog)
}

/// One-paragraph description of a catalog.
pub fn describe(catalog: &Catalog) -> String {
    let channels: Vec<String> = catalog
        .channels()
        .iter()
        .map(|c| match c.bandwidth {
            Some(b) => format!("{} (dim {}, bandwidth {b})", c.name, c.dim),
            None => format!("{} (dim {}, median bandwidth)", c.name, c.dim),
        })
        .collect();
    let attributes: Vec<&str> = catalog.attributes().into_iter().collect();
    format!("{} items; channels: {}; attributes: {}", catalog.len(), channels.join(", "), attributes.join(", "))
}
