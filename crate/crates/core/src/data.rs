//! Synthetic multi-domain classification data with explicit style factors.
//!
//! Every class has a prototype on the unit circle, shared by all domains.
//! A sample is its class prototype plus isotropic class spread, passed
//! through its domain's style transform: a rotation and offset of the
//! semantic plane, additive noise, and a block of appended distractor
//! coordinates. The distractors hold a domain-constant offset, optional
//! per-sample noise, and an optional domain-specific class cue
//! (`class_cue_scale`, off by default). Within one domain the cue predicts
//! the class, but every domain encodes classes differently, so it does not
//! transfer.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Deterministic generator for one purpose (`stream`) under one seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Style transform of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub id: usize,
    /// Rotation of the semantic plane, radians.
    pub rotation: f64,
    /// Shift of the semantic plane.
    pub offset: [f64; 2],
    pub noise: f64,
    /// Domain-constant value of each distractor coordinate.
    pub distractor_offset: Vec<f64>,
    /// Per-class shift of the distractor block, one row per class; empty
    /// when the domain has no class cue.
    pub class_cue: Vec<Vec<f64>>,
    /// Extra per-sample noise on the distractor block.
    pub distractor_noise: f64,
}

impl DomainSpec {
    /// The identity transform with no distractors.
    pub fn identity(id: usize) -> Self {
        DomainSpec {
            id,
            rotation: 0.0,
            offset: [0.0, 0.0],
            noise: 0.0,
            distractor_offset: Vec::new(),
            class_cue: Vec::new(),
            distractor_noise: 0.0,
        }
    }

    pub fn distractor_dims(&self) -> usize {
        self.distractor_offset.len()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.rotation.is_finite()
            && self.offset.iter().all(|v| v.is_finite())
            && self.distractor_offset.iter().all(|v| v.is_finite())
            && self.class_cue.iter().flatten().all(|v| v.is_finite());
        let cue_shape = self.class_cue.iter().all(|r| r.len() == self.distractor_dims());
        let finite = finite && self.distractor_noise >= 0.0 && self.distractor_noise.is_finite();
        if !finite || !cue_shape || !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Config(format!("domain {} has an invalid style transform", self.id)));
        }
        Ok(())
    }

    /// Applies the transform to a point of the semantic plane drawn for
    /// class `y`.
    pub fn apply<R: Rng>(&self, p: [f64; 2], y: usize, rng: &mut R) -> Vec<f64> {
        let (sin, cos) = self.rotation.sin_cos();
        let mut x = Vec::with_capacity(2 + self.distractor_dims());
        x.push(cos * p[0] - sin * p[1] + self.offset[0]);
        x.push(sin * p[0] + cos * p[1] + self.offset[1]);
        x.extend(self.distractor_offset.iter().copied());
        if let Some(cue) = self.class_cue.get(y) {
            for (v, c) in x[2..].iter_mut().zip(cue) {
                *v += c;
            }
        }
        if self.noise > 0.0 {
            for v in &mut x {
                let e: f64 = StandardNormal.sample(rng);
                *v += self.noise * e;
            }
        }
        if self.distractor_noise > 0.0 {
            for v in &mut x[2..] {
                let e: f64 = StandardNormal.sample(rng);
                *v += self.distractor_noise * e;
            }
        }
        x
    }
}

/// Shape and style ranges for a generated benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub n_classes: usize,
    pub n_domains: usize,
    pub per_domain: usize,
    pub class_spread: f64,
    pub distractor_dims: usize,
    /// Rotations are spread evenly over `[-max_rotation, max_rotation]`.
    pub max_rotation: f64,
    pub offset_scale: f64,
    pub distractor_scale: f64,
    /// Standard deviation of each domain's per-class distractor cue.
    pub class_cue_scale: f64,
    /// Per-sample standard deviation of the distractor block.
    pub distractor_noise: f64,
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_classes: 7,
            n_domains: 4,
            per_domain: 500,
            class_spread: 0.1,
            distractor_dims: 8,
            max_rotation: 0.3,
            offset_scale: 0.3,
            distractor_scale: 2.0,
            class_cue_scale: 0.0,
            distractor_noise: 0.0,
            noise: 0.05,
        }
    }
}

impl DataConfig {
    pub fn input_dim(&self) -> usize {
        2 + self.distractor_dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.n_domains == 0 || self.per_domain == 0 {
            return Err(Error::Config("need at least 2 classes, 1 domain and 1 sample per domain".into()));
        }
        for (k, v) in [
            ("class_spread", self.class_spread),
            ("max_rotation", self.max_rotation),
            ("offset_scale", self.offset_scale),
            ("distractor_scale", self.distractor_scale),
            ("class_cue_scale", self.class_cue_scale),
            ("distractor_noise", self.distractor_noise),
            ("noise", self.noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Per-domain style transforms drawn from the configured ranges.
    pub fn domain_specs(&self, seed: u64) -> Vec<DomainSpec> {
        let mut rng = rng_for(seed, 1);
        (0..self.n_domains)
            .map(|d| {
                let rotation = if self.n_domains == 1 {
                    0.0
                } else {
                    -self.max_rotation + 2.0 * self.max_rotation * d as f64 / (self.n_domains - 1) as f64
                };
                let angle = rng.random::<f64>() * 2.0 * PI;
                let offset = [self.offset_scale * angle.cos(), self.offset_scale * angle.sin()];
                let distractor_offset = (0..self.distractor_dims)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        self.distractor_scale * e
                    })
                    .collect();
                let class_cue = if self.class_cue_scale > 0.0 {
                    (0..self.n_classes)
                        .map(|_| {
                            (0..self.distractor_dims)
                                .map(|_| {
                                    let e: f64 = StandardNormal.sample(&mut rng);
                                    self.class_cue_scale * e
                                })
                                .collect()
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                DomainSpec {
                    id: d,
                    rotation,
                    offset,
                    noise: self.noise,
                    distractor_offset,
                    class_cue,
                    distractor_noise: self.distractor_noise,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    /// `None` for unlabelled (adaptation-target) samples.
    pub y: Option<usize>,
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
    pub n_domains: usize,
    pub dim: usize,
}

/// Class prototype `k` of `n`: the point at angle `2 pi k / n`.
pub fn prototype(k: usize, n: usize) -> [f64; 2] {
    let a = 2.0 * PI * k as f64 / n as f64;
    [a.cos(), a.sin()]
}

/// Generates `cfg.per_domain` samples per domain, classes balanced per domain
/// (round-robin labels), in domain-major order.
pub fn generate_dataset(cfg: &DataConfig, specs: &[DomainSpec], seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if specs.len() != cfg.n_domains {
        return Err(Error::Config(format!("{} domain specs for {} domains", specs.len(), cfg.n_domains)));
    }
    let dim = 2 + specs[0].distractor_dims();
    for s in specs {
        s.validate()?;
        if 2 + s.distractor_dims() != dim {
            return Err(Error::Config("domain specs disagree on distractor count".into()));
        }
    }
    let spread = Normal::new(0.0, cfg.class_spread).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(cfg.n_domains * cfg.per_domain);
    for (d, spec) in specs.iter().enumerate() {
        let mut rng = rng_for(seed, 100 + d as u64);
        for i in 0..cfg.per_domain {
            let y = i % cfg.n_classes;
            let p = prototype(y, cfg.n_classes);
            let p = [p[0] + spread.sample(&mut rng), p[1] + spread.sample(&mut rng)];
            samples.push(Sample {
                x: spec.apply(p, y, &mut rng),
                y: Some(y),
                d,
            });
        }
    }
    Ok(Dataset {
        samples,
        n_classes: cfg.n_classes,
        n_domains: cfg.n_domains,
        dim,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            n_classes: self.n_classes,
            n_domains: self.n_domains,
            dim: self.dim,
        }
    }

    pub fn indices_of_domain(&self, d: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.samples[i].d == d).collect()
    }

    /// Inputs of the listed samples as a matrix.
    pub fn inputs(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(&self.samples[i].x);
        }
        Tensor::from_rows(idx.len(), self.dim, data)
    }

    pub fn all_inputs(&self) -> Tensor {
        self.inputs(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Writes the delimited-text export: a `# steam-dataset v1` line, a
    /// header `x0,..,x{k},y,d`, then one row per sample (`y` empty when
    /// unlabelled).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{DATASET_MAGIC}")?;
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        header.push("d".into());
        wr.write_record(&header)?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            rec.push(s.y.map(|y| y.to_string()).unwrap_or_default());
            rec.push(s.d.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Parses the format written by [`Dataset::write_csv`]. Class and domain
    /// counts are inferred as one past the largest id seen.
    pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
        let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(r);
        let mut records = rd.records();
        let mut line = 0usize;
        let mut next = |records: &mut csv::StringRecordsIter<R>| -> Result<Option<(usize, csv::StringRecord)>> {
            line += 1;
            records.next().transpose().map(|r| r.map(|rec| (line, rec))).map_err(Error::from)
        };
        match next(&mut records)? {
            Some((_, rec)) if rec.len() == 1 && &rec[0] == DATASET_MAGIC => {}
            _ => return Err(Error::parse(1, format!("expected `{DATASET_MAGIC}`"))),
        }
        let header = next(&mut records)?.ok_or_else(|| Error::parse(2, "missing header"))?.1;
        let dim = header.len().checked_sub(2).filter(|&d| d > 0).ok_or_else(|| Error::parse(2, "too few columns"))?;
        for (i, col) in header.iter().enumerate() {
            let want = match i {
                i if i < dim => format!("x{i}"),
                i if i == dim => "y".into(),
                _ => "d".into(),
            };
            if col != want {
                return Err(Error::parse(2, format!("column {i} is `{col}`, expected `{want}`")));
            }
        }
        let mut samples = Vec::new();
        while let Some((ln, rec)) = next(&mut records)? {
            if rec.len() != dim + 2 {
                return Err(Error::parse(ln, format!("expected {} fields", dim + 2)));
            }
            let x = (0..dim)
                .map(|i| rec[i].trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::parse(ln, "bad coordinate"))?;
            let y = match rec[dim].trim() {
                "" => None,
                s => Some(s.parse::<usize>().map_err(|_| Error::parse(ln, "bad label"))?),
            };
            let d = rec[dim + 1].trim().parse::<usize>().map_err(|_| Error::parse(ln, "bad domain"))?;
            samples.push(Sample { x, y, d });
        }
        if samples.is_empty() {
            return Err(Error::Empty("dataset file has no rows".into()));
        }
        let n_classes = samples.iter().filter_map(|s| s.y).max().map_or(0, |m| m + 1);
        let n_domains = samples.iter().map(|s| s.d).max().unwrap() + 1;
        if n_classes > 1 << 20 || n_domains > 1 << 20 {
            return Err(Error::parse(0, "implausible class or domain count"));
        }
        Ok(Dataset {
            samples,
            n_classes,
            n_domains,
            dim,
        })
    }
}

pub const DATASET_MAGIC: &str = "# steam-dataset v1";

/// Stochastic, label-preserving perturbation of an input vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub jitter: f64,
    pub dropout: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            jitter: 0.1,
            dropout: 0.1,
        }
    }
}

/// Gaussian jitter on every coordinate, then independent zeroing.
pub fn augment<R: Rng>(x: &[f64], params: &AugmentParams, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let e: f64 = StandardNormal.sample(rng);
            let jittered = v + params.jitter * e;
            if params.dropout > 0.0 && rng.random::<f64>() < params.dropout {
                0.0
            } else {
                jittered
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariantPolicy {
    pub p_same_class: f64,
    pub augment: AugmentParams,
}

impl Default for VariantPolicy {
    fn default() -> Self {
        VariantPolicy {
            p_same_class: 0.5,
            augment: AugmentParams::default(),
        }
    }
}

impl VariantPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_same_class) {
            return Err(Error::Config(format!("p_same_class must lie in [0, 1], got {}", self.p_same_class)));
        }
        if !(0.0..=1.0).contains(&self.augment.dropout) || !(self.augment.jitter >= 0.0) {
            return Err(Error::Config("augmentation parameters out of range".into()));
        }
        Ok(())
    }
}

/// How a variant was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantSource {
    SameClass(usize),
    Augmented,
}

/// Draws semantically identical partners for samples of one pool.
#[derive(Clone, Debug)]
pub struct VariantSampler {
    by_class: Vec<Vec<usize>>,
}

impl VariantSampler {
    /// Indexes the labelled samples of `pool` by class.
    pub fn new(dataset: &Dataset, pool: &[usize]) -> Self {
        let mut by_class = vec![Vec::new(); dataset.n_classes];
        for &i in pool {
            if let Some(y) = dataset.samples[i].y {
                by_class[y].push(i);
            }
        }
        VariantSampler { by_class }
    }

    /// With probability `p_same_class`, a uniform draw among same-class
    /// samples of any domain (the anchor itself included); otherwise, and
    /// always for unlabelled anchors, an augmentation of the anchor.
    pub fn sample<R: Rng>(
        &self,
        dataset: &Dataset,
        anchor: usize,
        policy: &VariantPolicy,
        rng: &mut R,
    ) -> (Sample, VariantSource) {
        let a = &dataset.samples[anchor];
        if let Some(y) = a.y {
            let candidates = self.by_class.get(y).map(|v| v.as_slice()).unwrap_or(&[]);
            let roll: f64 = rng.random();
            if roll < policy.p_same_class && !candidates.is_empty() {
                let pick = candidates[rng.random_range(0..candidates.len())];
                return (dataset.samples[pick].clone(), VariantSource::SameClass(pick));
            }
        }
        let x = augment(&a.x, &policy.augment, rng);
        (Sample { x, y: a.y, d: a.d }, VariantSource::Augmented)
    }
}

/// One epoch of domain-balanced batches over `pools` (sample indices per
/// domain). Each pool is shuffled and consumed in `batch_size / pools.len()`
/// chunks; a pool that runs out before the longest one is reshuffled and
/// reused. Equal pools divisible by the per-domain count are covered
/// exactly once.
pub fn epoch_batches<R: Rng>(pools: &[Vec<usize>], batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if pools.is_empty() || pools.iter().any(|p| p.is_empty()) {
        return Err(Error::Empty("batching needs non-empty domain pools".into()));
    }
    if batch_size == 0 || !batch_size.is_multiple_of(pools.len()) {
        return Err(Error::Config(format!(
            "batch size {batch_size} is not a positive multiple of the {} domains",
            pools.len()
        )));
    }
    let per = batch_size / pools.len();
    let longest = pools.iter().map(|p| p.len()).max().unwrap();
    let n_batches = longest.div_ceil(per);
    let mut streams: Vec<Vec<usize>> = Vec::with_capacity(pools.len());
    for pool in pools {
        let mut stream = Vec::with_capacity(n_batches * per);
        while stream.len() < n_batches * per {
            let mut p = pool.clone();
            p.shuffle(rng);
            stream.extend(p);
        }
        stream.truncate(n_batches * per);
        streams.push(stream);
    }
    Ok((0..n_batches)
        .map(|b| {
            streams
                .iter()
                .flat_map(|s| s[b * per..(b + 1) * per].iter().copied())
                .collect()
        })
        .collect())
}

/// A training batch with paired variants.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub x: Tensor,
    pub labels: Vec<Option<usize>>,
    pub domains: Vec<usize>,
    pub x_plus: Tensor,
}

pub fn make_batch<R: Rng>(
    dataset: &Dataset,
    indices: &[usize],
    sampler: &VariantSampler,
    policy: &VariantPolicy,
    rng: &mut R,
) -> Batch {
    let mut plus = Vec::with_capacity(indices.len() * dataset.dim);
    for &i in indices {
        let (v, _) = sampler.sample(dataset, i, policy, rng);
        plus.extend(v.x);
    }
    Batch {
        indices: indices.to_vec(),
        x: dataset.inputs(indices),
        labels: indices.iter().map(|&i| dataset.samples[i].y).collect(),
        domains: indices.iter().map(|&i| dataset.samples[i].d).collect(),
        x_plus: Tensor::from_rows(indices.len(), dataset.dim, plus),
    }
}

/// All batches of one epoch over every sample of `dataset`, balanced by
/// domain, with variants drawn from the whole dataset.
pub fn batch_iter(dataset: &Dataset, batch_size: usize, seed: u64, policy: &VariantPolicy) -> Result<Vec<Batch>> {
    policy.validate()?;
    let mut domains: Vec<usize> = dataset.samples.iter().map(|s| s.d).collect();
    domains.sort_unstable();
    domains.dedup();
    let pools: Vec<Vec<usize>> = domains.iter().map(|&d| dataset.indices_of_domain(d)).collect();
    let mut rng = rng_for(seed, 2);
    let all: Vec<usize> = (0..dataset.len()).collect();
    let sampler = VariantSampler::new(dataset, &all);
    Ok(epoch_batches(&pools, batch_size, &mut rng)?
        .into_iter()
        .map(|idx| make_batch(dataset, &idx, &sampler, policy, &mut rng))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_domain_reproduces_prototypes() {
        let cfg = DataConfig {
            n_domains: 2,
            per_domain: 14,
            class_spread: 0.0,
            distractor_dims: 0,
            ..DataConfig::default()
        };
        let specs = vec![DomainSpec::identity(0), DomainSpec::identity(1)];
        let ds = generate_dataset(&cfg, &specs, 3).unwrap();
        for s in &ds.samples {
            let p = prototype(s.y.unwrap(), 7);
            assert_eq!(s.x, p.to_vec());
        }
    }

    #[test]
    fn spec_count_must_match() {
        let cfg = DataConfig::default();
        assert!(generate_dataset(&cfg, &[DomainSpec::identity(0)], 0).is_err());
    }

    #[test]
    fn augment_extremes() {
        let mut rng = rng_for(0, 0);
        let x = vec![1.0, -2.0, 3.0];
        let none = AugmentParams { jitter: 0.0, dropout: 0.0 };
        assert_eq!(augment(&x, &none, &mut rng), x);
        let all = AugmentParams { jitter: 0.5, dropout: 1.0 };
        assert_eq!(augment(&x, &all, &mut rng), vec![0.0; 3]);
    }

    #[test]
    fn indivisible_batch_rejected() {
        let mut rng = rng_for(0, 0);
        let pools = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        assert!(matches!(epoch_batches(&pools, 32, &mut rng), Err(Error::Config(_))));
        assert_eq!(epoch_batches(&pools, 30, &mut rng).unwrap()[0].len(), 30);
    }

    #[test]
    fn unlabelled_anchor_always_augmented() {
        let ds = Dataset {
            samples: vec![
                Sample { x: vec![1.0], y: None, d: 0 },
                Sample { x: vec![2.0], y: Some(0), d: 1 },
            ],
            n_classes: 1,
            n_domains: 2,
            dim: 1,
        };
        let sampler = VariantSampler::new(&ds, &[0, 1]);
        let policy = VariantPolicy { p_same_class: 1.0, ..VariantPolicy::default() };
        let mut rng = rng_for(1, 1);
        for _ in 0..50 {
            let (v, src) = sampler.sample(&ds, 0, &policy, &mut rng);
            assert_eq!(src, VariantSource::Augmented);
            assert_eq!(v.y, None);
        }
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(Dataset::read_csv("x0,y,d\n1,0,0\n".as_bytes()).is_err());
        let bad = format!("{DATASET_MAGIC}\nx0,y,d\nabc,0,0\n");
        assert!(matches!(Dataset::read_csv(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let ok = format!("{DATASET_MAGIC}\nx0,y,d\n1.5,,2\n");
        let ds = Dataset::read_csv(ok.as_bytes()).unwrap();
        assert_eq!(ds.samples[0], Sample { x: vec![1.5], y: None, d: 2 });
    }
}
