//! Training loop, protocol runners and studies.
//!
//! One run trains a fresh encoder on a set of training domains and reports
//! per-epoch loss means and accuracies. [`run_dg`] holds out each domain in
//! turn; [`run_msda`] additionally feeds the held-out domain's unlabelled
//! adaptation half into every loss except classification.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, Var};
use crate::banks::{SemanticBank, StyleBankSet};
use crate::data::{
    epoch_batches, generate_dataset, make_batch, rng_for, Batch, DataConfig, Dataset, VariantPolicy, VariantSampler,
};
use crate::error::{Error, Result};
use crate::losses::{
    classification_loss, domain_classifier_loss, jury_loss, l2_matching_loss, orthogonality_penalty, plain_infonce_loss,
    style_contrastive, total_loss, LossBreakdown, LossFlags, LossTerms,
};
use crate::model::{momentum_update, Dense, EncoderParams, MemoryParams, ModelDims};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Vanilla,
    VanillaStyle,
    VanillaSemantic,
    Steam,
    DomainClassifier,
    L2Matching,
    Contrastive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StyleTerm {
    Contrast,
    DomainHead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemanticTerm {
    Jury,
    L2,
    InfoNce,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Vanilla,
        Variant::VanillaStyle,
        Variant::VanillaSemantic,
        Variant::Steam,
        Variant::DomainClassifier,
        Variant::L2Matching,
        Variant::Contrastive,
    ];
    pub const ABLATION: [Variant; 4] = [
        Variant::Vanilla,
        Variant::VanillaStyle,
        Variant::VanillaSemantic,
        Variant::Steam,
    ];
    pub const DESIGN: [Variant; 4] = [
        Variant::Steam,
        Variant::DomainClassifier,
        Variant::L2Matching,
        Variant::Contrastive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::VanillaStyle => "vanilla-style",
            Variant::VanillaSemantic => "vanilla-semantic",
            Variant::Steam => "steam",
            Variant::DomainClassifier => "domain-classifier",
            Variant::L2Matching => "l2-matching",
            Variant::Contrastive => "contrastive",
        }
    }

    pub fn flags(self) -> LossFlags {
        match self {
            Variant::Vanilla => LossFlags::VANILLA,
            Variant::VanillaStyle => LossFlags::VANILLA_STYLE,
            Variant::VanillaSemantic => LossFlags::VANILLA_SEMANTIC,
            _ => LossFlags::ALL,
        }
    }

    pub fn style_term(self) -> Option<StyleTerm> {
        match self {
            Variant::Vanilla | Variant::VanillaSemantic => None,
            Variant::DomainClassifier => Some(StyleTerm::DomainHead),
            _ => Some(StyleTerm::Contrast),
        }
    }

    pub fn semantic_term(self) -> Option<SemanticTerm> {
        match self {
            Variant::Vanilla | Variant::VanillaStyle => None,
            Variant::L2Matching => Some(SemanticTerm::L2),
            Variant::Contrastive => Some(SemanticTerm::InfoNce),
            _ => Some(SemanticTerm::Jury),
        }
    }

    fn needs_style_bank(self) -> bool {
        self.style_term() == Some(StyleTerm::Contrast)
    }

    fn needs_semantic_bank(self) -> bool {
        matches!(self.semantic_term(), Some(SemanticTerm::Jury | SemanticTerm::InfoNce))
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
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Dg,
    Msda,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Dg => "dg",
            Mode::Msda => "msda",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dg" => Ok(Mode::Dg),
            "msda" => Ok(Mode::Msda),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

/// Every hyperparameter of a run or study.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub tau: f64,
    pub alpha: f64,
    pub bank_size: usize,
    pub lr: f64,
    pub cosine: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Number of consecutive seeds, starting at `seed`, used by studies.
    pub seeds: usize,
    pub variant: Variant,
    pub mode: Mode,
    pub data: DataConfig,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub policy: VariantPolicy,
    /// Fraction of each source domain held out for source accuracy.
    pub source_holdout: f64,
    /// Fraction of the target domain used, unlabelled, for adaptation.
    pub msda_adapt_fraction: f64,
    /// Held-out domains to run; empty means every domain.
    pub targets: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_mode(Mode::Dg)
    }
}

impl TrainConfig {
    /// Defaults; the batch size is 30 for domain generalization (three
    /// sources of the default four domains) and 32 for adaptation (four).
    pub fn for_mode(mode: Mode) -> Self {
        TrainConfig {
            tau: 0.07,
            alpha: 0.999,
            bank_size: 256,
            lr: 0.01,
            cosine: true,
            epochs: 40,
            batch_size: match mode {
                Mode::Dg => 30,
                Mode::Msda => 32,
            },
            seed: 0,
            seeds: 5,
            variant: Variant::Steam,
            mode,
            data: DataConfig::default(),
            hidden: vec![64, 64],
            feature_dim: 32,
            embed_dim: 16,
            sgd_momentum: 0.9,
            weight_decay: 0.0,
            policy: VariantPolicy::default(),
            source_holdout: 0.1,
            msda_adapt_fraction: 0.5,
            targets: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(Error::Config(format!("{k}: {why}")));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau", "must be positive");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha", "must lie in [0, 1)");
        }
        if self.bank_size == 0 {
            return bad("bank_size", "must be positive");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.seeds == 0 {
            return bad("seeds", "must be positive");
        }
        if self.feature_dim == 0 || self.embed_dim == 0 || self.hidden.contains(&0) {
            return bad("dims", "layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return bad("sgd_momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.source_holdout) {
            return bad("source_holdout", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.msda_adapt_fraction) {
            return bad("msda_adapt_fraction", "must lie in [0, 1)");
        }
        self.policy.validate()?;
        self.data.validate()?;
        if self.data.n_domains < 3 {
            return bad("n_domains", "leave-one-domain-out needs at least 3 domains");
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= self.data.n_domains) {
            return Err(Error::UnknownDomain {
                id: t,
                domains: self.data.n_domains,
            });
        }
        Ok(())
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            input: self.data.input_dim(),
            hidden: self.hidden.clone(),
            feature: self.feature_dim,
            embed: self.embed_dim,
            classes: self.data.n_classes,
        }
    }

    pub fn target_list(&self) -> Vec<usize> {
        if self.targets.is_empty() {
            (0..self.data.n_domains).collect()
        } else {
            self.targets.clone()
        }
    }
}

/// Cosine-annealed learning rate `lr0 (1 + cos(pi t / T)) / 2`.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = step.min(total) as f64 / total as f64;
    lr0 * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}

/// SGD with heavy-ball momentum: `v <- mu v + g + wd theta; theta <- theta - lr v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient counts");
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| g.zeros_like()).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *pi;
                *pi -= lr * *vi;
            }
        }
    }
}

/// Memory-side features of one batch: normalised style features of `x` and
/// normalised semantic features of the variants `x+`.
#[derive(Clone, Debug, Default)]
pub struct MemoryFeatures {
    pub style: Option<Tensor>,
    pub semantic: Option<Tensor>,
}

/// A built loss graph, ready for backward.
pub struct LossGraph {
    pub graph: Graph,
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub encoder_vars: Vec<Var>,
    pub head_vars: Vec<Var>,
    pub logits: Var,
}

/// All mutable state of one training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub encoder: EncoderParams,
    pub memory: MemoryParams,
    /// Linear domain head for the domain-classification variant.
    pub domain_head: Option<Dense>,
    pub style_bank: StyleBankSet,
    pub semantic_bank: SemanticBank,
    /// Global domain ids in bank order.
    pub train_domains: Vec<usize>,
    pub optimizer: Sgd,
    pub step: usize,
    pub total_steps: usize,
}

/// Per-step side information.
#[derive(Clone, Copy, Debug)]
pub struct StepReport {
    pub breakdown: LossBreakdown,
    pub lr: f64,
    /// Constant graph nodes (inputs, bank rows, memory features) that ended
    /// up holding adjoint storage. Always zero.
    pub constant_adjoints: usize,
}

impl TrainState {
    /// Fresh state. The encoder is drawn from `init_seed`; the memory encoder
    /// starts as an exact copy.
    pub fn new(config: &TrainConfig, train_domains: Vec<usize>, init_seed: u64) -> Result<Self> {
        let dims = config.model_dims();
        let mut rng = rng_for(init_seed, 10);
        let encoder = EncoderParams::init(&dims, &mut rng);
        let domain_head = (config.variant.style_term() == Some(StyleTerm::DomainHead))
            .then(|| Dense::zeros(dims.embed, train_domains.len()));
        Ok(TrainState {
            memory: encoder.memory_copy(),
            encoder,
            domain_head,
            style_bank: StyleBankSet::new(train_domains.len(), config.bank_size, dims.embed)?,
            semantic_bank: SemanticBank::new(config.bank_size, dims.embed)?,
            train_domains,
            optimizer: Sgd::new(config.sgd_momentum, config.weight_decay),
            step: 0,
            total_steps: 0,
            config: config.clone(),
        })
    }

    /// Bank slot of a global domain id.
    pub fn local_domain(&self, d: usize) -> Result<usize> {
        self.train_domains.iter().position(|&t| t == d).ok_or(Error::UnknownDomain {
            id: d,
            domains: self.train_domains.len(),
        })
    }

    pub fn local_domains(&self, batch: &Batch) -> Result<Vec<usize>> {
        batch.domains.iter().map(|&d| self.local_domain(d)).collect()
    }

    pub fn memory_features(&self, batch: &Batch) -> Result<MemoryFeatures> {
        let v = self.config.variant;
        Ok(MemoryFeatures {
            style: if v.needs_style_bank() {
                Some(self.memory.memory_style(&batch.x)?)
            } else {
                None
            },
            semantic: if v.semantic_term().is_some() {
                Some(self.memory.memory_semantic(&batch.x_plus)?)
            } else {
                None
            },
        })
    }

    /// Builds the enabled losses for `encoder` (and `head`) on `batch`
    /// against the current bank contents.
    pub fn forward_loss(
        &self,
        encoder: &EncoderParams,
        head: Option<&Dense>,
        batch: &Batch,
        mem: &MemoryFeatures,
    ) -> Result<LossGraph> {
        let cfg = &self.config;
        let variant = cfg.variant;
        let local = self.local_domains(batch)?;
        let mut g = Graph::new();
        let bound = encoder.bind(&mut g);
        let head_bound = head.map(|h| {
            let w = g.param(h.weight.clone());
            let b = g.param(h.bias.clone());
            crate::model::BoundDense { weight: w, bias: b }
        });
        let x = g.constant(batch.x.clone());
        let enc = bound.encode(&mut g, x)?;
        let logits = bound.classify(&mut g, enc.c)?;

        let cls = classification_loss(&mut g, logits, &batch.labels)?;
        let style = match variant.style_term() {
            Some(StyleTerm::Contrast) => Some(style_contrastive(&mut g, enc.s, &local, &self.style_bank, cfg.tau)?),
            Some(StyleTerm::DomainHead) => {
                let h = head_bound.ok_or_else(|| Error::Contract("domain head missing".into()))?;
                Some(domain_classifier_loss(&mut g, enc.s, &h, &local)?)
            }
            None => None,
        };
        let semantic = match variant.semantic_term() {
            Some(kind) => {
                let c_plus = mem
                    .semantic
                    .as_ref()
                    .ok_or_else(|| Error::Contract("memory semantic features missing".into()))?;
                let snap = self.semantic_bank.snapshot();
                Some(match kind {
                    SemanticTerm::Jury => jury_loss(&mut g, enc.c, c_plus, &snap, cfg.tau)?,
                    SemanticTerm::L2 => l2_matching_loss(&mut g, enc.c, c_plus)?,
                    SemanticTerm::InfoNce => plain_infonce_loss(&mut g, enc.c, c_plus, &snap, cfg.tau)?,
                })
            }
            None => None,
        };
        let orth = if variant.flags().orth {
            Some(orthogonality_penalty(&mut g, enc.c, enc.s)?)
        } else {
            None
        };
        let terms = LossTerms {
            cls: Some(cls),
            style,
            semantic,
            orth,
        };
        let (total, breakdown) = total_loss(&mut g, &terms, variant.flags())?;
        Ok(LossGraph {
            graph: g,
            total,
            breakdown,
            encoder_vars: bound.vars(),
            head_vars: head_bound.map(|h| vec![h.weight, h.bias]).unwrap_or_default(),
            logits,
        })
    }

    pub fn lr(&self) -> f64 {
        if self.config.cosine {
            cosine_lr(self.config.lr, self.step, self.total_steps)
        } else {
            self.config.lr
        }
    }

    /// One optimisation step: encode, memory-encode, losses, backward, SGD,
    /// momentum update of the memory encoder, then enqueue memory features.
    /// A zero feature row during the step is reported as [`Error::Collapsed`].
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport> {
        let step = self.step;
        self.train_step_inner(batch).map_err(|e| match e {
            Error::Degenerate { op, .. } => Error::Collapsed { step, op },
            other => other,
        })
    }

    fn train_step_inner(&mut self, batch: &Batch) -> Result<StepReport> {
        let mem = self.memory_features(batch)?;
        let mut lg = self.forward_loss(&self.encoder, self.domain_head.as_ref(), batch, &mem)?;
        lg.graph.backward(lg.total)?;
        let g = &lg.graph;
        let grad_of = |v: &Var| g.grad(*v).cloned().unwrap_or_else(|| g.value(*v).zeros_like());
        let grads: Vec<Tensor> = lg.encoder_vars.iter().chain(&lg.head_vars).map(grad_of).collect();
        let constant_adjoints = g.constant_adjoints();
        let lr = self.lr();
        let mut params = self.encoder.tensors_mut();
        if let Some(h) = self.domain_head.as_mut() {
            params.push(&mut h.weight);
            params.push(&mut h.bias);
        }
        self.optimizer.step(params, &grads, lr);
        momentum_update(&mut self.memory, &self.encoder, self.config.alpha)?;
        self.enqueue(batch, &mem)?;
        self.step += 1;
        Ok(StepReport {
            breakdown: lg.breakdown,
            lr,
            constant_adjoints,
        })
    }

    fn enqueue(&mut self, batch: &Batch, mem: &MemoryFeatures) -> Result<()> {
        if let Some(s) = &mem.style {
            for (r, &d) in batch.domains.iter().enumerate() {
                let local = self.local_domain(d)?;
                self.style_bank.push(local, s.row(r))?;
            }
        }
        if self.config.variant.needs_semantic_bank() {
            if let Some(c) = &mem.semantic {
                for r in 0..c.rows() {
                    self.semantic_bank.push(c.row(r))?;
                }
            }
        }
        Ok(())
    }

    /// Fills the banks before training: `ceil(B / batch)` random batches per
    /// training domain through the memory encoder.
    pub fn warm_up<R: Rng>(
        &mut self,
        dataset: &Dataset,
        pools: &[Vec<usize>],
        sampler: &VariantSampler,
        rng: &mut R,
    ) -> Result<()> {
        let v = self.config.variant;
        if !v.needs_style_bank() && !v.needs_semantic_bank() {
            return Ok(());
        }
        let bs = self.config.batch_size;
        let rounds = self.config.bank_size.div_ceil(bs);
        for pool in pools {
            for _ in 0..rounds {
                let mut idx = pool.clone();
                idx.shuffle(rng);
                idx.truncate(bs);
                let batch = make_batch(dataset, &idx, sampler, &self.config.policy, rng);
                let mem = self.memory_features(&batch).map_err(|e| match e {
                    Error::Degenerate { op, .. } => Error::Collapsed { step: 0, op },
                    other => other,
                })?;
                self.enqueue(&batch, &mem)?;
            }
        }
        Ok(())
    }
}

/// Accuracy plus confusion counts `confusion[true][predicted]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub confusion: Vec<Vec<usize>>,
}

/// Argmax of logits (ties to the lowest class index) against labels.
pub fn evaluate_logits(logits: &Tensor, labels: &[usize], n_classes: usize) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let pred = logits.argmax_rows();
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    let mut correct = 0;
    for (&y, &p) in labels.iter().zip(&pred) {
        if y >= n_classes {
            return Err(Error::Label { label: y, classes: n_classes });
        }
        confusion[y][p] += 1;
        correct += usize::from(y == p);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        correct,
        total: labels.len(),
        confusion,
    })
}

/// Test-time accuracy, using only the feature extractor, semantic head and
/// classifier.
pub fn evaluate(encoder: &EncoderParams, split: &Dataset) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let labels = split
        .samples
        .iter()
        .map(|s| s.y.ok_or_else(|| Error::Contract("evaluation sample without a label".into())))
        .collect::<Result<Vec<usize>>>()?;
    let logits = encoder.predict_logits(&split.all_inputs())?;
    evaluate_logits(&logits, &labels, encoder.classifier.outputs())
}

/// Resubstitution accuracy of a nearest-centroid classifier; ties go to the
/// lowest group index.
pub fn nearest_centroid_accuracy(features: &[Vec<f64>], groups: &[usize], n_groups: usize) -> f64 {
    let dim = features.first().map_or(0, |f| f.len());
    let mut centroids = vec![vec![0.0; dim]; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (f, &k) in features.iter().zip(groups) {
        counts[k] += 1;
        for (c, v) in centroids[k].iter_mut().zip(f) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let mut correct = 0;
    for (f, &k) in features.iter().zip(groups) {
        let mut best = (f64::INFINITY, 0);
        for (j, c) in centroids.iter().enumerate() {
            if counts[j] == 0 {
                continue;
            }
            let d: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        correct += usize::from(best.1 == k);
    }
    correct as f64 / features.len().max(1) as f64
}

/// How strongly style features group by domain versus by class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StyleDiagnostic {
    pub domain_accuracy: f64,
    pub class_accuracy: f64,
}

/// Nearest-centroid accuracy of L2-normalised style features at predicting
/// domain and class. Rows with vanishing style norm stay unnormalised.
pub fn style_cluster_diagnostic(encoder: &EncoderParams, dataset: &Dataset) -> Result<StyleDiagnostic> {
    if dataset.is_empty() {
        return Err(Error::Empty("diagnostic dataset".into()));
    }
    let (_, _, s) = encoder.encode_plain(&dataset.all_inputs())?;
    let feats: Vec<Vec<f64>> = (0..s.rows())
        .map(|r| {
            let row = s.row(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > crate::autodiff::NORM_EPS {
                row.iter().map(|v| v / n).collect()
            } else {
                row.to_vec()
            }
        })
        .collect();
    let domains: Vec<usize> = dataset.samples.iter().map(|x| x.d).collect();
    let labelled: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.samples[i].y.is_some()).collect();
    let class_feats: Vec<Vec<f64>> = labelled.iter().map(|&i| feats[i].clone()).collect();
    let classes: Vec<usize> = labelled.iter().map(|&i| dataset.samples[i].y.unwrap()).collect();
    Ok(StyleDiagnostic {
        domain_accuracy: nearest_centroid_accuracy(&feats, &domains, dataset.n_domains),
        class_accuracy: nearest_centroid_accuracy(&class_feats, &classes, dataset.n_classes),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub source_acc: f64,
    pub target_acc: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub variant: Variant,
    pub mode: Mode,
    pub target_domain: usize,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    /// Source accuracy on the held-out source split (training accuracy when
    /// nothing is held out).
    pub source_acc: f64,
    pub target_acc: f64,
    pub style: StyleDiagnostic,
    pub wall_clock: Duration,
    /// Constant nodes that held adjoints, summed over every step.
    pub constant_adjoints: usize,
    pub encoder: EncoderParams,
    pub memory: MemoryParams,
}

/// Train/evaluation split of one run.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub target: usize,
    /// Everything the optimiser sees, including any unlabelled target rows.
    pub train: Dataset,
    /// Global ids of the domains present in `train`, in bank order.
    pub train_domains: Vec<usize>,
    pub source_val: Dataset,
    pub target_test: Dataset,
}

fn split_indices(idx: &[usize], fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx = idx.to_vec();
    idx.shuffle(rng);
    let k = (idx.len() as f64 * fraction).round() as usize;
    let held = idx[..k].to_vec();
    let kept = idx[k..].to_vec();
    (kept, held)
}

impl RunPlan {
    /// Leave-one-domain-out: every other domain is a labelled source.
    pub fn dg(dataset: &Dataset, target: usize, holdout: f64, seed: u64) -> Result<Self> {
        Self::build(dataset, target, holdout, None, seed)
    }

    /// Adaptation: the target's adaptation share joins training unlabelled;
    /// the rest of the target is the test split.
    pub fn msda(dataset: &Dataset, target: usize, holdout: f64, adapt: f64, seed: u64) -> Result<Self> {
        Self::build(dataset, target, holdout, Some(adapt), seed)
    }

    fn build(dataset: &Dataset, target: usize, holdout: f64, adapt: Option<f64>, seed: u64) -> Result<Self> {
        if target >= dataset.n_domains {
            return Err(Error::UnknownDomain {
                id: target,
                domains: dataset.n_domains,
            });
        }
        let mut rng = rng_for(seed, 3);
        let mut train_idx = Vec::new();
        let mut val_idx = Vec::new();
        let mut train_domains = Vec::new();
        for d in (0..dataset.n_domains).filter(|&d| d != target) {
            let (kept, held) = split_indices(&dataset.indices_of_domain(d), holdout, &mut rng);
            if kept.is_empty() {
                continue;
            }
            train_domains.push(d);
            train_idx.extend(kept);
            val_idx.extend(held);
        }
        let target_idx = dataset.indices_of_domain(target);
        let mut train = dataset.subset(&train_idx);
        let target_test = match adapt {
            Some(f) => {
                let (test, adapt_idx) = split_indices(&target_idx, f, &mut rng);
                if !adapt_idx.is_empty() {
                    train_domains.push(target);
                    train.samples.extend(adapt_idx.iter().map(|&i| {
                        let mut s = dataset.samples[i].clone();
                        s.y = None;
                        s
                    }));
                }
                dataset.subset(&test)
            }
            None => dataset.subset(&target_idx),
        };
        let source_val = if val_idx.is_empty() {
            train.subset(&(0..train.len()).filter(|&i| train.samples[i].y.is_some()).collect::<Vec<_>>())
        } else {
            dataset.subset(&val_idx)
        };
        Ok(RunPlan {
            target,
            train,
            train_domains,
            source_val,
            target_test,
        })
    }

    /// Structural checks: labelled rows only from sources; in adaptation
    /// mode, no label on any target row.
    pub fn check(&self, mode: Mode) -> Result<()> {
        for s in &self.train.samples {
            if !self.train_domains.contains(&s.d) {
                return Err(Error::Contract(format!("training sample from unlisted domain {}", s.d)));
            }
            if s.d == self.target {
                match mode {
                    Mode::Dg => {
                        return Err(Error::Contract("target data present in generalization training".into()))
                    }
                    Mode::Msda if s.y.is_some() => {
                        return Err(Error::Contract("target adaptation sample carries a label".into()))
                    }
                    Mode::Msda => {}
                }
            } else if s.y.is_none() {
                return Err(Error::Contract(format!("unlabelled source sample in domain {}", s.d)));
            }
        }
        if self.train_domains.iter().filter(|&&d| d != self.target).count() < 2 {
            return Err(Error::Config("need at least two source domains".into()));
        }
        Ok(())
    }
}

/// Trains one model on `plan` and evaluates it after every epoch.
pub fn execute(config: &TrainConfig, plan: &RunPlan) -> Result<RunResult> {
    config.validate()?;
    plan.check(config.mode)?;
    let start = Instant::now();
    let seed = config.seed;
    let mut state = TrainState::new(config, plan.train_domains.clone(), seed.wrapping_mul(1_000_003) + plan.target as u64)?;
    let pools: Vec<Vec<usize>> = plan
        .train_domains
        .iter()
        .map(|&d| plan.train.indices_of_domain(d))
        .collect();
    let all: Vec<usize> = (0..plan.train.len()).collect();
    let sampler = VariantSampler::new(&plan.train, &all);
    let mut rng = rng_for(seed, 20 + plan.target as u64);
    state.warm_up(&plan.train, &pools, &sampler, &mut rng)?;

    let per_epoch = epoch_batches(&pools, config.batch_size, &mut rng.clone())?.len();
    state.total_steps = per_epoch * config.epochs;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut constant_adjoints = 0;
    for epoch in 0..config.epochs {
        let batches = epoch_batches(&pools, config.batch_size, &mut rng)?;
        let mut acc = LossBreakdown::default();
        for idx in &batches {
            let batch = make_batch(&plan.train, idx, &sampler, &config.policy, &mut rng);
            let report = state.train_step(&batch)?;
            constant_adjoints += report.constant_adjoints;
            acc.add(&report.breakdown);
        }
        epochs.push(EpochMetrics {
            epoch: epoch + 1,
            losses: acc.scaled(1.0 / batches.len() as f64),
            source_acc: evaluate(&state.encoder, &plan.source_val)?.accuracy,
            target_acc: evaluate(&state.encoder, &plan.target_test)?.accuracy,
        });
    }
    let source_acc = evaluate(&state.encoder, &plan.source_val)?.accuracy;
    let target_acc = evaluate(&state.encoder, &plan.target_test)?.accuracy;
    let diag_set = plan.train.clone();
    let style = style_cluster_diagnostic(&state.encoder, &diag_set)?;
    Ok(RunResult {
        variant: config.variant,
        mode: config.mode,
        target_domain: plan.target,
        seed,
        epochs,
        source_acc,
        target_acc,
        style,
        wall_clock: start.elapsed(),
        constant_adjoints,
        encoder: state.encoder,
        memory: state.memory,
    })
}

pub fn benchmark_dataset(config: &TrainConfig) -> Result<Dataset> {
    let specs = config.data.domain_specs(config.seed);
    generate_dataset(&config.data, &specs, config.seed)
}

/// Leave-one-domain-out over every configured target.
pub fn run_dg(config: &TrainConfig) -> Result<Vec<RunResult>> {
    let cfg = TrainConfig {
        mode: Mode::Dg,
        ..config.clone()
    };
    cfg.validate()?;
    let dataset = benchmark_dataset(&cfg)?;
    cfg.target_list()
        .into_par_iter()
        .map(|t| execute(&cfg, &RunPlan::dg(&dataset, t, cfg.source_holdout, cfg.seed)?))
        .collect()
}

/// Multi-source adaptation over every configured target.
pub fn run_msda(config: &TrainConfig) -> Result<Vec<RunResult>> {
    let cfg = TrainConfig {
        mode: Mode::Msda,
        ..config.clone()
    };
    cfg.validate()?;
    let dataset = benchmark_dataset(&cfg)?;
    cfg.target_list()
        .into_par_iter()
        .map(|t| {
            let plan = RunPlan::msda(&dataset, t, cfg.source_holdout, cfg.msda_adapt_fraction, cfg.seed)?;
            execute(&cfg, &plan)
        })
        .collect()
}

/// All runs of a study: every variant, seed and target.
#[derive(Clone, Debug)]
pub struct StudyResult {
    pub variants: Vec<Variant>,
    pub targets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunResult>,
}

/// Runs `variants` over `config.seeds` consecutive seeds and every target.
/// Independent runs fan out over the rayon pool; results are ordered by
/// variant, seed, target.
pub fn run_study(config: &TrainConfig, variants: &[Variant]) -> Result<StudyResult> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.seeds as u64).map(|k| config.seed + k).collect();
    let targets = config.target_list();
    let datasets: Vec<Dataset> = seeds
        .iter()
        .map(|&s| {
            benchmark_dataset(&TrainConfig {
                seed: s,
                ..config.clone()
            })
        })
        .collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for &v in variants {
        for (si, &s) in seeds.iter().enumerate() {
            for &t in &targets {
                jobs.push((v, si, s, t));
            }
        }
    }
    let runs = jobs
        .into_par_iter()
        .map(|(v, si, s, t)| {
            let cfg = TrainConfig {
                variant: v,
                seed: s,
                ..config.clone()
            };
            let plan = match cfg.mode {
                Mode::Dg => RunPlan::dg(&datasets[si], t, cfg.source_holdout, s)?,
                Mode::Msda => RunPlan::msda(&datasets[si], t, cfg.source_holdout, cfg.msda_adapt_fraction, s)?,
            };
            execute(&cfg, &plan)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult {
        variants: variants.to_vec(),
        targets,
        seeds,
        runs,
    })
}

pub fn run_ablation(config: &TrainConfig) -> Result<StudyResult> {
    run_study(config, &Variant::ABLATION)
}

pub fn run_design_study(config: &TrainConfig) -> Result<StudyResult> {
    run_study(config, &Variant::DESIGN)
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

impl StudyResult {
    pub fn runs_of(&self, v: Variant) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.variant == v)
    }

    /// Target accuracy of `v` on `target` under `seed`.
    pub fn target_acc(&self, v: Variant, seed: u64, target: usize) -> Option<f64> {
        self.runs_of(v)
            .find(|r| r.seed == seed && r.target_domain == target)
            .map(|r| r.target_acc)
    }

    /// Mean target accuracy over targets, per seed.
    pub fn avg_per_seed(&self, v: Variant) -> Vec<f64> {
        self.seeds
            .iter()
            .map(|&s| {
                let accs: Vec<f64> = self.targets.iter().filter_map(|&t| self.target_acc(v, s, t)).collect();
                mean_sd(&accs).0
            })
            .collect()
    }

    /// Per-target `(mean, sd)` over seeds, then the per-seed average column.
    pub fn summary_row(&self, v: Variant) -> Vec<(f64, f64)> {
        let mut row: Vec<(f64, f64)> = self
            .targets
            .iter()
            .map(|&t| {
                let accs: Vec<f64> = self.seeds.iter().filter_map(|&s| self.target_acc(v, s, t)).collect();
                mean_sd(&accs)
            })
            .collect();
        row.push(mean_sd(&self.avg_per_seed(v)));
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.05, 0, 100), 0.05);
        assert!(cosine_lr(0.05, 100, 100) <= 0.05e-3);
        assert!((cosine_lr(0.05, 50, 100) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_update() {
        let mut p = Tensor::vector(vec![1.0]);
        let mut opt = Sgd::new(0.9, 0.0);
        opt.step(vec![&mut p], &[Tensor::vector(vec![1.0])], 0.1);
        assert!((p.data()[0] - 0.9).abs() < 1e-15);
        opt.step(vec![&mut p], &[Tensor::vector(vec![1.0])], 0.1);
        assert!((p.data()[0] - (0.9 - 0.19)).abs() < 1e-15);
    }

    #[test]
    fn evaluate_tie_rule() {
        let logits = Tensor::zeros(4, 3);
        let e = evaluate_logits(&logits, &[0, 1, 2, 0], 3).unwrap();
        assert_eq!(e.accuracy, 0.5);
        assert_eq!(e.confusion[1][0], 1);
        assert!(evaluate_logits(&logits, &[], 3).is_err());
    }

    #[test]
    fn mean_sd_basic() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.alpha = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.data.n_domains = 2;
        assert!(c.validate().is_err());
    }
}
