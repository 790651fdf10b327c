//! Item catalog, attribute pre-filtering, synthetic generation and the
//! per-channel similarity metric.
//!
//! A catalog is stored as a line-delimited JSON manifest, one item per line:
//!
//! ```text
//! {"id":0,"tags":{"category":"skirt","color":"red"},"features":[[0.1,0.2],[1.5]]}
//! ```
//!
//! One record (conventionally the first) may also carry channel metadata:
//! names, fixed kernel bandwidths and L2 normalization.
//!
//! ```text
//! {"id":0,"tags":{},"features":[[0.1,0.2],[1.5]],"channels":[{"name":"style","bandwidth":0.8},{"name":"color"}],"normalize":true}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Deref;
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subsets up to this size get dense per-channel similarity matrices.
pub const DENSE_LIMIT: usize = 2_000;

/// Cap on the number of pairs sampled for the median-distance bandwidth.
pub const BANDWIDTH_SAMPLE_PAIRS: usize = 10_000;

const BANDWIDTH_SEED: u64 = 0x6d65_6469_616e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: usize,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureChannel {
    pub name: String,
    pub dim: usize,
    /// Explicit kernel bandwidth. `None` means "median pairwise distance of
    /// the active subset".
    pub bandwidth: Option<f64>,
}

fn default_channel_name(j: usize) -> String {
    format!("f{j}")
}

/// Immutable item database.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    items: Vec<Item>,
    channels: Vec<FeatureChannel>,
    normalize: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelHeader {
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemRecord {
    id: usize,
    #[serde(default)]
    tags: BTreeMap<String, String>,
    features: Vec<Vec<f64>>,
    channels: Option<Vec<ChannelHeader>>,
    normalize: Option<bool>,
}

#[derive(Serialize)]
struct ItemRecordOut<'a> {
    id: usize,
    tags: &'a BTreeMap<String, String>,
    features: &'a [Vec<f64>],
    #[serde(skip_serializing_if = "Option::is_none")]
    channels: Option<Vec<ChannelHeader>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    normalize: Option<bool>,
}

impl Catalog {
    /// Builds a catalog from items in any order. Channel metadata defaults to
    /// `f0..f{M-1}` with median-heuristic bandwidths when `channels` is empty.
    pub fn new(mut items: Vec<Item>, channels: Vec<FeatureChannel>, normalize: bool) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        items.sort_by_key(|item| item.id);
        for (expected, pair) in items.windows(2).enumerate() {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateId(pair[0].id));
            }
            if pair[0].id != expected {
                return Err(Error::NonContiguousIds(expected));
            }
        }
        let last = items.len() - 1;
        if items[last].id != last {
            return Err(Error::NonContiguousIds(last));
        }

        let reference = &items[0];
        let m = reference.features.len();
        if m == 0 {
            return Err(Error::Malformed { line: 0, message: "items must carry at least one feature channel".into() });
        }
        let dims: Vec<usize> = reference.features.iter().map(Vec::len).collect();
        for item in &items {
            if item.features.len() != m {
                return Err(Error::ChannelCount { id: item.id, expected: m, found: item.features.len() });
            }
            for (j, (vector, &dim)) in item.features.iter().zip(&dims).enumerate() {
                if vector.len() != dim {
                    return Err(Error::InconsistentDimensions { id: item.id, channel: j, expected: dim, found: vector.len() });
                }
                if vector.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Malformed { line: item.id, message: format!("non-finite value in channel {j}") });
                }
            }
        }

        let channels: Vec<FeatureChannel> = if channels.is_empty() {
            dims.iter()
                .enumerate()
                .map(|(j, &dim)| FeatureChannel { name: default_channel_name(j), dim, bandwidth: None })
                .collect()
        } else {
            if channels.len() != m {
                return Err(Error::ChannelCount { id: items[0].id, expected: channels.len(), found: m });
            }
            channels
                .into_iter()
                .zip(&dims)
                .map(|(mut c, &dim)| {
                    c.dim = dim;
                    c
                })
                .collect()
        };
        for c in &channels {
            if let Some(b) = c.bandwidth {
                if !(b > 0.0 && b.is_finite()) {
                    return Err(Error::InvalidParameter(format!("channel {:?}: bandwidth must be positive", c.name)));
                }
            }
        }

        Ok(Catalog { items, channels, normalize })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, id: usize) -> Option<&Item> {
        self.items.get(id)
    }

    pub fn channels(&self) -> &[FeatureChannel] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn normalize(&self) -> bool {
        self.normalize
    }

    /// Attribute names present on at least one item.
    pub fn attributes(&self) -> BTreeSet<&str> {
        self.items.iter().flat_map(|i| i.tags.keys().map(String::as_str)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut metadata: Option<(usize, Option<Vec<ChannelHeader>>, Option<bool>)> = None;
        let mut items = Vec::new();
        for (index, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let record: ItemRecord =
                serde_json::from_str(trimmed).map_err(|e| Error::Malformed { line: index + 1, message: e.to_string() })?;
            if record.channels.is_some() || record.normalize.is_some() {
                if let Some((first, _, _)) = metadata {
                    return Err(Error::Malformed { line: index + 1, message: format!("channel metadata already given on line {first}") });
                }
                metadata = Some((index + 1, record.channels, record.normalize));
            }
            items.push(Item { id: record.id, tags: record.tags, features: record.features });
        }
        let (channels, normalize) = match metadata {
            Some((_, channels, normalize)) => {
                let channels = channels
                    .unwrap_or_default()
                    .into_iter()
                    .enumerate()
                    .map(|(j, c)| FeatureChannel { name: c.name.unwrap_or_else(|| default_channel_name(j)), dim: 0, bandwidth: c.bandwidth })
                    .collect();
                (channels, normalize.unwrap_or(false))
            }
            None => (Vec::new(), false),
        };
        Self::new(items, channels, normalize)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Writes the manifest, one item per line. Channel metadata rides on the
    /// first record and is omitted when it matches the defaults.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let custom_channels = self.channels.iter().enumerate().any(|(j, c)| c.bandwidth.is_some() || c.name != default_channel_name(j));
        for (index, item) in self.items.iter().enumerate() {
            let first = index == 0;
            let record = ItemRecordOut {
                id: item.id,
                tags: &item.tags,
                features: &item.features,
                channels: (first && custom_channels).then(|| {
                    self.channels.iter().map(|c| ChannelHeader { name: Some(c.name.clone()), bandwidth: c.bandwidth }).collect()
                }),
                normalize: (first && self.normalize).then_some(true),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Ids of all items matching every `attribute = label` pair, ascending.
    pub fn filter(&self, query: &BTreeMap<String, String>) -> Result<SubsetView> {
        let attributes = self.attributes();
        if let Some(unknown) = query.keys().find(|k| !attributes.contains(k.as_str())) {
            return Err(Error::UnknownAttribute(unknown.clone()));
        }
        let ids = self
            .items
            .iter()
            .filter(|item| query.iter().all(|(k, v)| item.tags.get(k) == Some(v)))
            .map(|item| item.id)
            .collect();
        Ok(SubsetView { ids })
    }

    /// Applies [`Catalog::filter`] to an existing view.
    pub fn filter_view(&self, view: &SubsetView, query: &BTreeMap<String, String>) -> Result<SubsetView> {
        let matched = self.filter(query)?;
        let keep: BTreeSet<usize> = matched.ids.into_iter().collect();
        Ok(SubsetView { ids: view.ids.iter().copied().filter(|id| keep.contains(id)).collect() })
    }
}

/// Ordered (ascending) ids of the items that survived pre-filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetView {
    ids: Vec<usize>,
}

impl SubsetView {
    pub fn all(catalog: &Catalog) -> Self {
        SubsetView { ids: (0..catalog.len()).collect() }
    }

    /// Sorts and de-duplicates `ids`.
    pub fn from_ids(mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        SubsetView { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Synthetic catalogs
// ---------------------------------------------------------------------------

/// Shape of one generated feature channel. Cluster centers are spread by
/// farthest-point sampling inside `[-separation, separation]^dim`; members
/// scatter around their center with isotropic Gaussian `noise`.
///
/// The generated channel records `bandwidth` as its kernel bandwidth, falling
/// back to `noise` and, when that is zero, to the median heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub dim: usize,
    pub clusters: usize,
    pub separation: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

fn default_noise() -> f64 {
    1.0
}

impl ChannelSpec {
    pub fn new(dim: usize, clusters: usize, separation: f64) -> Self {
        ChannelSpec { dim, clusters, separation, noise: 1.0, bandwidth: None }
    }

    fn kernel_bandwidth(&self) -> Option<f64> {
        self.bandwidth.or(Some(self.noise)).filter(|&b| b > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub channels: Vec<ChannelSpec>,
    pub seed: u64,
}

pub const CATEGORIES: [&str; 4] = ["shirt", "outerwear", "pants", "skirt"];
pub const COLORS: [&str; 9] = ["light", "dark", "red", "yellow", "green", "blue", "purple", "brown", "other"];

impl GeneratorConfig {
    /// `m` channels with dimensions from `dims` (a single entry is broadcast)
    /// and cluster counts 4, 8, 16, ... so channels differ in structure.
    pub fn new(n: usize, m: usize, dims: &[usize], seed: u64) -> Self {
        let channels = (0..m)
            .map(|j| {
                let dim = match dims {
                    [] => 4,
                    [d] => *d,
                    ds => ds[j % ds.len()],
                };
                ChannelSpec::new(dim, 4usize << j.min(5), 3.0)
            })
            .collect();
        GeneratorConfig { n, channels, seed }
    }
}

fn farthest_point_centers(rng: &mut ChaCha8Rng, spec: &ChannelSpec) -> Vec<Vec<f64>> {
    let k = spec.clusters.max(1);
    let pool = (16 * k).max(64);
    let candidates: Vec<Vec<f64>> = (0..pool)
        .map(|_| (0..spec.dim).map(|_| rng.gen_range(-1.0..=1.0) * spec.separation).collect())
        .collect();
    let mut chosen = vec![0usize];
    let mut nearest: Vec<f64> = candidates.iter().map(|c| squared_distance(c, &candidates[0])).collect();
    while chosen.len() < k {
        let (next, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        chosen.push(next);
        for (slot, c) in nearest.iter_mut().zip(&candidates) {
            *slot = slot.min(squared_distance(c, &candidates[next]));
        }
    }
    chosen.into_iter().map(|i| candidates[i].clone()).collect()
}

/// Deterministic synthetic catalog. Tags draw from [`CATEGORIES`] and
/// [`COLORS`].
pub fn generate_catalog(config: &GeneratorConfig) -> Result<Catalog> {
    generate_catalog_with_labels(config).map(|(catalog, _)| catalog)
}

/// Like [`generate_catalog`], additionally returning the cluster label of
/// every item in every channel (`labels[j][id]`).
pub fn generate_catalog_with_labels(config: &GeneratorConfig) -> Result<(Catalog, Vec<Vec<usize>>)> {
    if config.n == 0 {
        return Err(Error::EmptyCatalog);
    }
    if config.channels.is_empty() {
        return Err(Error::InvalidParameter("at least one channel is required".into()));
    }
    for (j, spec) in config.channels.iter().enumerate() {
        if spec.dim == 0 || spec.clusters == 0 || !(spec.separation >= 0.0) || !(spec.noise >= 0.0) {
            return Err(Error::InvalidParameter(format!("channel {j}: dim and clusters must be positive")));
        }
        if spec.bandwidth.is_some_and(|b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidParameter(format!("channel {j}: bandwidth must be positive")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut features: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(config.channels.len()); config.n];
    let mut labels = Vec::with_capacity(config.channels.len());
    for spec in &config.channels {
        let centers = farthest_point_centers(&mut rng, spec);
        let mut channel_labels = Vec::with_capacity(config.n);
        for item in features.iter_mut() {
            let c = rng.gen_range(0..centers.len());
            channel_labels.push(c);
            let vector = centers[c]
                .iter()
                .map(|&x| {
                    let z: f64 = rng.sample(StandardNormal);
                    x + spec.noise * z
                })
                .collect();
            item.push(vector);
        }
        labels.push(channel_labels);
    }

    let items = features
        .into_iter()
        .enumerate()
        .map(|(id, features)| {
            let mut tags = BTreeMap::new();
            tags.insert("category".to_string(), CATEGORIES.choose(&mut rng).unwrap().to_string());
            tags.insert("color".to_string(), COLORS.choose(&mut rng).unwrap().to_string());
            Item { id, tags, features }
        })
        .collect();
    let channels = config
        .channels
        .iter()
        .enumerate()
        .map(|(j, spec)| FeatureChannel { name: default_channel_name(j), dim: spec.dim, bandwidth: spec.kernel_bandwidth() })
        .collect();
    Ok((Catalog::new(items, channels, false)?, labels))
}

// ---------------------------------------------------------------------------
// Similarity
// ---------------------------------------------------------------------------

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn gaussian(d2: f64, bandwidth: f64) -> f64 {
    (-d2 / (2.0 * bandwidth * bandwidth)).exp().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone)]
enum Kernel {
    Gaussian { data: Vec<f64>, dim: usize, bandwidth: f64 },
    Mean(Vec<Kernel>),
}

impl Kernel {
    fn eval(&self, a: usize, b: usize) -> f64 {
        match self {
            Kernel::Gaussian { data, dim, bandwidth } => {
                if a == b {
                    return 1.0;
                }
                let x = &data[a * dim..(a + 1) * dim];
                let y = &data[b * dim..(b + 1) * dim];
                gaussian(squared_distance(x, y), *bandwidth)
            }
            Kernel::Mean(parts) => parts.iter().map(|k| k.eval(a, b)).sum::<f64>() / parts.len() as f64,
        }
    }
}

enum Storage {
    Dense(Vec<Vec<f64>>),
    Lazy(RwLock<HashMap<(usize, usize), Arc<[f64]>>>),
}

/// One row `s_j(a, ·)` of a channel's similarity matrix.
pub enum Row<'a> {
    Borrowed(&'a [f64]),
    Shared(Arc<[f64]>),
}

impl Deref for Row<'_> {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        match self {
            Row::Borrowed(s) => s,
            Row::Shared(s) => s,
        }
    }
}

/// Per-channel similarity `s_j(x, y)` over a filtered subset.
///
/// Items are addressed by their position in the subset ("local index",
/// `0..len()`); [`SimilarityProvider::ids`] maps positions back to catalog
/// ids. Values are strictly positive, symmetric, and exactly 1 on the
/// diagonal.
pub struct SimilarityProvider {
    ids: Vec<usize>,
    names: Vec<String>,
    bandwidths: Vec<f64>,
    kernels: Vec<Kernel>,
    storage: Storage,
}

impl std::fmt::Debug for SimilarityProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimilarityProvider")
            .field("items", &self.ids.len())
            .field("channels", &self.names)
            .field("bandwidths", &self.bandwidths)
            .field("dense", &matches!(self.storage, Storage::Dense(_)))
            .finish()
    }
}

/// Median pairwise Euclidean distance over all pairs, or over a fixed-seed
/// sample of [`BANDWIDTH_SAMPLE_PAIRS`] pairs for large subsets.
pub fn median_pairwise_distance(data: &[f64], dim: usize) -> f64 {
    let n = data.len() / dim.max(1);
    if n < 2 {
        return 1.0;
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let total_pairs = n * (n - 1) / 2;
    let mut distances: Vec<f64> = if total_pairs <= BANDWIDTH_SAMPLE_PAIRS {
        (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).map(|(a, b)| squared_distance(row(a), row(b)).sqrt()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(BANDWIDTH_SEED);
        (0..BANDWIDTH_SAMPLE_PAIRS)
            .map(|_| {
                let a = rng.gen_range(0..n);
                let mut b = rng.gen_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                squared_distance(row(a), row(b)).sqrt()
            })
            .collect()
    };
    distances.sort_by(f64::total_cmp);
    let mid = distances.len() / 2;
    let median = if distances.len().is_multiple_of(2) { 0.5 * (distances[mid - 1] + distances[mid]) } else { distances[mid] };
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}

impl SimilarityProvider {
    pub fn new(catalog: &Catalog, subset: &SubsetView) -> Result<Self> {
        Self::with_dense_limit(catalog, subset, DENSE_LIMIT)
    }

    /// Dense matrices are precomputed when `subset.len() <= dense_limit`;
    /// larger subsets evaluate rows lazily and memoize them.
    pub fn with_dense_limit(catalog: &Catalog, subset: &SubsetView, dense_limit: usize) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::SubsetTooSmall { available: 0, required: 1 });
        }
        for &id in subset.ids() {
            if id >= catalog.len() {
                return Err(Error::OutOfRange { what: "item", index: id, len: catalog.len() });
            }
        }
        let mut kernels = Vec::with_capacity(catalog.channel_count());
        let mut bandwidths = Vec::with_capacity(catalog.channel_count());
        for (j, channel) in catalog.channels().iter().enumerate() {
            let dim = channel.dim;
            let mut data = Vec::with_capacity(subset.len() * dim);
            for &id in subset.ids() {
                let v = &catalog.items()[id].features[j];
                if catalog.normalize() {
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
                    data.extend(v.iter().map(|x| x * scale));
                } else {
                    data.extend_from_slice(v);
                }
            }
            let bandwidth = channel.bandwidth.unwrap_or_else(|| median_pairwise_distance(&data, dim));
            bandwidths.push(bandwidth);
            kernels.push(Kernel::Gaussian { data, dim, bandwidth });
        }
        let names = catalog.channels().iter().map(|c| c.name.clone()).collect();
        Ok(Self::from_kernels(subset.ids().to_vec(), names, bandwidths, kernels, dense_limit))
    }

    fn from_kernels(ids: Vec<usize>, names: Vec<String>, bandwidths: Vec<f64>, kernels: Vec<Kernel>, dense_limit: usize) -> Self {
        let n = ids.len();
        let storage = if n <= dense_limit {
            Storage::Dense(kernels.iter().map(|k| dense_matrix(k, n)).collect())
        } else {
            Storage::Lazy(RwLock::new(HashMap::new()))
        };
        SimilarityProvider { ids, names, bandwidths, kernels, storage }
    }

    /// Provider over explicit similarity tables (`matrices[j][a * n + b]`).
    /// Tables must be symmetric with entries in `(0, 1]` and a unit diagonal.
    pub fn from_matrices(ids: Vec<usize>, matrices: Vec<Vec<f64>>) -> Result<Self> {
        let n = ids.len();
        if n == 0 || matrices.is_empty() {
            return Err(Error::InvalidParameter("need at least one item and one channel".into()));
        }
        for (j, m) in matrices.iter().enumerate() {
            if m.len() != n * n {
                return Err(Error::InvalidParameter(format!("channel {j}: expected {n}x{n} table")));
            }
            for a in 0..n {
                if m[a * n + a] != 1.0 {
                    return Err(Error::InvalidParameter(format!("channel {j}: diagonal must be 1")));
                }
                for b in 0..n {
                    let v = m[a * n + b];
                    if !(v > 0.0 && v <= 1.0) || v != m[b * n + a] {
                        return Err(Error::InvalidParameter(format!("channel {j}: entry ({a},{b}) invalid")));
                    }
                }
            }
        }
        let names = (0..matrices.len()).map(default_channel_name).collect();
        let bandwidths = vec![f64::NAN; matrices.len()];
        Ok(SimilarityProvider { ids, names, bandwidths, kernels: Vec::new(), storage: Storage::Dense(matrices) })
    }

    /// Single-channel provider whose metric is the unweighted mean of all
    /// channels.
    pub fn aggregate(&self) -> Self {
        let names = vec!["aggregate".to_string()];
        let bandwidths = vec![f64::NAN];
        match &self.storage {
            Storage::Dense(matrices) => {
                let scale = 1.0 / matrices.len() as f64;
                let mut mean = vec![0.0; matrices[0].len()];
                for m in matrices {
                    for (acc, v) in mean.iter_mut().zip(m) {
                        *acc += v;
                    }
                }
                let n = self.ids.len();
                for (i, v) in mean.iter_mut().enumerate() {
                    *v = if i / n == i % n { 1.0 } else { *v * scale };
                }
                let kernels = if self.kernels.is_empty() { Vec::new() } else { vec![Kernel::Mean(self.kernels.clone())] };
                SimilarityProvider { ids: self.ids.clone(), names, bandwidths, kernels, storage: Storage::Dense(vec![mean]) }
            }
            Storage::Lazy(_) => SimilarityProvider {
                ids: self.ids.clone(),
                names,
                bandwidths,
                kernels: vec![Kernel::Mean(self.kernels.clone())],
                storage: Storage::Lazy(RwLock::new(HashMap::new())),
            },
        }
    }

    /// Provider restricted to the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidParameter("select at least one channel".into()));
        }
        for &j in channels {
            if j >= self.channels() {
                return Err(Error::OutOfRange { what: "channel", index: j, len: self.channels() });
            }
        }
        let names = channels.iter().map(|&j| self.names[j].clone()).collect();
        let bandwidths = channels.iter().map(|&j| self.bandwidths[j]).collect();
        let kernels = if self.kernels.is_empty() { Vec::new() } else { channels.iter().map(|&j| self.kernels[j].clone()).collect() };
        let storage = match &self.storage {
            Storage::Dense(matrices) => Storage::Dense(channels.iter().map(|&j| matrices[j].clone()).collect()),
            Storage::Lazy(_) => Storage::Lazy(RwLock::new(HashMap::new())),
        };
        Ok(SimilarityProvider { ids: self.ids.clone(), names, bandwidths, kernels, storage })
    }

    /// Number of items in the subset.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of feature channels `M`.
    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.names
    }

    /// Kernel bandwidths in use (NaN for table-backed or aggregated channels).
    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// Catalog ids, indexed by local position.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Local position of a catalog id.
    pub fn local_index(&self, id: usize) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// `s_j(a, b)` for local indices. Panics on out-of-range input.
    #[inline]
    pub fn sim(&self, j: usize, a: usize, b: usize) -> f64 {
        match &self.storage {
            Storage::Dense(m) => m[j][a * self.ids.len() + b],
            Storage::Lazy(_) => self.row(j, a)[b],
        }
    }

    /// Row `s_j(a, ·)` for a local index.
    pub fn row(&self, j: usize, a: usize) -> Row<'_> {
        let n = self.ids.len();
        match &self.storage {
            Storage::Dense(m) => Row::Borrowed(&m[j][a * n..(a + 1) * n]),
            Storage::Lazy(cache) => {
                if let Some(row) = cache.read().unwrap_or_else(|e| e.into_inner()).get(&(j, a)) {
                    return Row::Shared(row.clone());
                }
                let kernel = &self.kernels[j];
                let row: Arc<[f64]> = (0..n).map(|b| kernel.eval(a, b)).collect();
                cache.write().unwrap_or_else(|e| e.into_inner()).insert((j, a), row.clone());
                Row::Shared(row)
            }
        }
    }

    /// `s_j(x, y)` addressed by catalog ids.
    pub fn similarity(&self, j: usize, x: usize, y: usize) -> Result<f64> {
        if j >= self.channels() {
            return Err(Error::OutOfRange { what: "channel", index: j, len: self.channels() });
        }
        let a = self.local_index(x).ok_or(Error::OutOfRange { what: "item", index: x, len: self.len() })?;
        let b = self.local_index(y).ok_or(Error::OutOfRange { what: "item", index: y, len: self.len() })?;
        Ok(self.sim(j, a, b))
    }
}

fn dense_matrix(kernel: &Kernel, n: usize) -> Vec<f64> {
    let mut m = vec![1.0; n * n];
    for a in 0..n {
        for b in (a + 1)..n {
            let v = kernel.eval(a, b);
            m[a * n + b] = v;
            m[b * n + a] = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Catalog {
        let items = vec![
            Item { id: 0, tags: tags(&[("category", "shirt"), ("color", "red")]), features: vec![vec![0.0, 0.0]] },
            Item { id: 1, tags: tags(&[("category", "skirt"), ("color", "red")]), features: vec![vec![1.0, 1.0]] },
            Item { id: 2, tags: tags(&[("category", "shirt"), ("color", "blue")]), features: vec![vec![2.0, 0.0]] },
            Item { id: 3, tags: tags(&[("category", "skirt"), ("color", "blue")]), features: vec![vec![0.0, 3.0]] },
        ];
        Catalog::new(items, Vec::new(), false).unwrap()
    }

    fn tags(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let err = Catalog::from_reader("".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::EmptyCatalog));
        assert_eq!(err.to_string(), "empty catalog");
    }

    #[test]
    fn minimal_manifest() {
        let text = "{\"id\":0,\"tags\":{},\"features\":[[0.0,1.0]]}\n{\"id\":1,\"features\":[[1.0,0.5]]}\n";
        let c = Catalog::from_reader(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.channel_count(), 1);
        assert_eq!(c.channels()[0].dim, 2);
    }

    #[test]
    fn manifest_errors() {
        let dup = "{\"id\":0,\"features\":[[0.0]]}\n{\"id\":0,\"features\":[[1.0]]}\n";
        assert!(matches!(Catalog::from_reader(dup.as_bytes()), Err(Error::DuplicateId(0))));
        let dims = "{\"id\":0,\"features\":[[0.0]]}\n{\"id\":1,\"features\":[[1.0,2.0]]}\n";
        assert!(matches!(Catalog::from_reader(dims.as_bytes()), Err(Error::InconsistentDimensions { id: 1, .. })));
        let gap = "{\"id\":0,\"features\":[[0.0]]}\n{\"id\":2,\"features\":[[1.0]]}\n";
        assert!(matches!(Catalog::from_reader(gap.as_bytes()), Err(Error::NonContiguousIds(1))));
        let garbage = "{\"id\":0,\"features\":[[0.0]]}\nnot json\n";
        assert!(matches!(Catalog::from_reader(garbage.as_bytes()), Err(Error::Malformed { line: 2, .. })));
        let twice = "{\"id\":0,\"features\":[[0.0]],\"normalize\":true}\n{\"id\":1,\"features\":[[0.0]],\"normalize\":true}\n";
        assert!(matches!(Catalog::from_reader(twice.as_bytes()), Err(Error::Malformed { line: 2, .. })));
    }

    #[test]
    fn metadata_carries_bandwidth_and_normalization() {
        let text = "{\"id\":0,\"features\":[[3.0,4.0]],\"channels\":[{\"name\":\"style\",\"bandwidth\":0.5}],\"normalize\":true}\n\
                    {\"id\":1,\"features\":[[0.0,2.0]]}\n";
        let c = Catalog::from_reader(text.as_bytes()).unwrap();
        assert_eq!(c.channels()[0].name, "style");
        assert_eq!(c.channels()[0].bandwidth, Some(0.5));
        assert!(c.normalize());
        let p = SimilarityProvider::new(&c, &SubsetView::all(&c)).unwrap();
        // normalized vectors (0.6, 0.8) and (0, 1): squared distance 0.4
        let expected = (-0.4f64 / (2.0 * 0.25)).exp();
        assert!((p.sim(0, 0, 1) - expected).abs() < 1e-12);

        let mut out = Vec::new();
        c.write_to(&mut out).unwrap();
        assert_eq!(out.iter().filter(|&&b| b == b'\n').count(), 2);
        assert_eq!(Catalog::from_reader(out.as_slice()).unwrap(), c);
    }

    #[test]
    fn filter_by_tags() {
        let c = tiny();
        let skirts = c.filter(&tags(&[("category", "skirt")])).unwrap();
        assert_eq!(skirts.ids(), &[1, 3]);
        assert_eq!(c.filter(&BTreeMap::new()).unwrap().ids(), &[0, 1, 2, 3]);
        let both = c.filter(&tags(&[("category", "shirt"), ("color", "red")])).unwrap();
        assert_eq!(both.ids(), &[0]);
        assert!(matches!(c.filter(&tags(&[("size", "xl")])), Err(Error::UnknownAttribute(_))));
    }

    #[test]
    fn kernel_values() {
        let items = vec![
            Item { id: 0, tags: BTreeMap::new(), features: vec![vec![0.0, 0.0]] },
            Item { id: 1, tags: BTreeMap::new(), features: vec![vec![1.0, 1.0]] },
        ];
        let channels = vec![FeatureChannel { name: "f0".into(), dim: 2, bandwidth: Some(1.0) }];
        let c = Catalog::new(items, channels, false).unwrap();
        let p = SimilarityProvider::new(&c, &SubsetView::all(&c)).unwrap();
        assert_eq!(p.similarity(0, 0, 0).unwrap(), 1.0);
        assert!((p.similarity(0, 0, 1).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!(p.similarity(1, 0, 1).is_err());
        assert!(p.similarity(0, 0, 7).is_err());
    }

    #[test]
    fn median_bandwidth_small_subset() {
        let c = tiny();
        let p = SimilarityProvider::new(&c, &SubsetView::all(&c)).unwrap();
        // pairwise distances: sqrt2, 2, 3, sqrt2, sqrt5, sqrt13 -> median (sqrt5 + 2) / 2
        let expected = (5f64.sqrt() + 2.0) / 2.0;
        assert!((p.bandwidths()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn lazy_matches_dense() {
        let cfg = GeneratorConfig::new(40, 3, &[3], 9);
        let c = generate_catalog(&cfg).unwrap();
        let all = SubsetView::all(&c);
        let dense = SimilarityProvider::new(&c, &all).unwrap();
        let lazy = SimilarityProvider::with_dense_limit(&c, &all, 10).unwrap();
        assert!(dense.is_dense() && !lazy.is_dense());
        for j in 0..3 {
            for a in 0..40 {
                for b in 0..40 {
                    assert_eq!(dense.sim(j, a, b), lazy.sim(j, a, b));
                }
            }
        }
        let (ad, al) = (dense.aggregate(), lazy.aggregate());
        for a in 0..40 {
            for b in 0..40 {
                assert!((ad.sim(0, a, b) - al.sim(0, a, b)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn aggregate_and_select() {
        let c = generate_catalog(&GeneratorConfig::new(12, 2, &[2], 3)).unwrap();
        let p = SimilarityProvider::new(&c, &SubsetView::all(&c)).unwrap();
        let agg = p.aggregate();
        assert_eq!(agg.channels(), 1);
        let mean = 0.5 * (p.sim(0, 2, 5) + p.sim(1, 2, 5));
        assert!((agg.sim(0, 2, 5) - mean).abs() < 1e-15);
        assert_eq!(agg.sim(0, 4, 4), 1.0);
        let solo = p.select_channels(&[1]).unwrap();
        assert_eq!(solo.sim(0, 2, 5), p.sim(1, 2, 5));
        assert!(p.select_channels(&[2]).is_err());
    }

    #[test]
    fn generator_shape_and_determinism() {
        let cfg = GeneratorConfig::new(8, 1, &[2], 42);
        assert_eq!(generate_catalog(&cfg).unwrap(), generate_catalog(&cfg).unwrap());
        let big = generate_catalog(&GeneratorConfig::new(500, 5, &[4], 1)).unwrap();
        assert_eq!(big.len(), 500);
        assert_eq!(big.channel_count(), 5);
        assert!(big.items().iter().all(|i| i.features.len() == 5 && i.features.iter().all(|v| v.len() == 4)));
        assert!(generate_catalog(&GeneratorConfig::new(0, 1, &[2], 1)).is_err());
    }
}
