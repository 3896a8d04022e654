//! The four training objectives, their composition, and the alternative
//! objectives used in the design-choice study.
//!
//! All similarities are cosine similarities. Bank entries and memory-side
//! features enter every graph as constants.

use crate::autodiff::{Graph, Var};
use crate::banks::{Snapshot, StyleBankSet, UNIT_TOL};
use crate::error::{Error, Result};
use crate::model::BoundDense;
use crate::tensor::{check_temperature, Tensor};

/// Default similarity temperature.
pub const DEFAULT_TAU: f64 = 0.07;

fn snapshot_const(g: &mut Graph, snap: &Snapshot, what: &str) -> Result<Var> {
    let t = snap
        .to_tensor()
        .ok_or_else(|| Error::BankCold(format!("{what} is empty")))?;
    Ok(g.constant(t))
}

fn check_unit_rows(t: &Tensor) -> Result<()> {
    for r in 0..t.rows() {
        let n = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((n - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::NotUnit(n));
        }
    }
    Ok(())
}

/// Intra-domain style contrast.
///
/// For each row `i` of `styles` (domain `domains[i]`, a bank index) and each
/// entry `j` of that domain's queue, one term
/// `softplus(lse_neg_i - cos(s_i, v_dj) / tau)` where `lse_neg_i` is the
/// log-sum-exp of `cos(s_i, v) / tau` over every entry `v` of every other
/// domain's queue. Returns the mean over all `(i, j)` terms.
pub fn style_contrastive(
    g: &mut Graph,
    styles: Var,
    domains: &[usize],
    bank: &StyleBankSet,
    tau: f64,
) -> Result<Var> {
    check_temperature(tau)?;
    if bank.domains() < 2 {
        return Err(Error::Config("style contrast needs at least two domains".into()));
    }
    if g.value(styles).rows() != domains.len() {
        return Err(Error::dim("style_contrastive", g.value(styles).shape(), &[domains.len()]));
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, &d) in domains.iter().enumerate() {
        match groups.iter_mut().find(|(gd, _)| *gd == d) {
            Some((_, rows)) => rows.push(i),
            None => groups.push((d, vec![i])),
        }
    }
    groups.sort_by_key(|(d, _)| *d);

    let normed = g.normalize_rows(styles)?;
    let mut sums = Vec::with_capacity(groups.len());
    let mut pairs = 0usize;
    for (d, rows) in &groups {
        let negatives = bank.negatives_for(*d)?;
        let positives = bank.queue(*d)?.snapshot();
        let pos_c = snapshot_const(g, &positives, "style queue")?;
        let neg_c = snapshot_const(g, &negatives, "negative set")?;
        let s_d = g.select_rows(normed, rows)?;
        let pos = g.matmul_t(s_d, pos_c)?;
        let neg = g.matmul_t(s_d, neg_c)?;
        let lse = g.logsumexp_rows(neg, tau)?;
        let lse_b = g.broadcast_cols(lse, positives.rows())?;
        let pos_scaled = g.scale(pos, 1.0 / tau);
        let diff = g.sub(lse_b, pos_scaled)?;
        let terms = g.softplus(diff);
        sums.push(g.sum(terms));
        pairs += rows.len() * positives.rows();
    }
    let mut total = sums[0];
    for &s in &sums[1..] {
        total = g.add(total, s)?;
    }
    Ok(g.scale(total, 1.0 / pairs as f64))
}

/// Softmax over cosine similarities of each row of `c` with every bank entry.
pub fn jury_distribution(g: &mut Graph, c: Var, bank: &Snapshot, tau: f64) -> Result<Var> {
    check_temperature(tau)?;
    let v = snapshot_const(g, bank, "semantic bank")?;
    let cn = g.normalize_rows(c)?;
    let sims = g.matmul_t(cn, v)?;
    g.softmax_rows(sims, tau)
}

/// Memory-side jury distribution: plain values, `c_mem` rows already unit.
pub fn jury_distribution_const(c_mem: &Tensor, bank: &Snapshot, tau: f64) -> Result<Tensor> {
    check_temperature(tau)?;
    let v = bank
        .to_tensor()
        .ok_or_else(|| Error::BankCold("semantic bank is empty".into()))?;
    c_mem.matmul_t(&v)?.softmax_rows(tau)
}

/// Jury cross-entropy: `-(1/n) sum_i sum_j pm_ij log pe_ij`, where `pe` comes
/// from encoder features (differentiable) and `pm` from unit-norm memory
/// features of the variants (constant).
pub fn jury_loss(g: &mut Graph, c_enc: Var, c_mem: &Tensor, bank: &Snapshot, tau: f64) -> Result<Var> {
    check_temperature(tau)?;
    let n = g.value(c_enc).rows();
    if c_mem.rows() != n || c_mem.cols() != g.value(c_enc).cols() {
        return Err(Error::dim("jury_loss", g.value(c_enc).shape(), c_mem.shape()));
    }
    check_unit_rows(c_mem)?;
    let pm = jury_distribution_const(c_mem, bank, tau)?;
    let v = snapshot_const(g, bank, "semantic bank")?;
    let cn = g.normalize_rows(c_enc)?;
    let sims = g.matmul_t(cn, v)?;
    let log_pe = g.log_softmax_rows(sims, tau)?;
    let pm = g.constant(pm);
    let weighted = g.mul(pm, log_pe)?;
    let s = g.sum(weighted);
    Ok(g.scale(s, -1.0 / n as f64))
}

/// Mean softmax cross-entropy over the labelled rows; `None` rows contribute
/// nothing, not even through the normaliser.
pub fn classification_loss(g: &mut Graph, logits: Var, labels: &[Option<usize>]) -> Result<Var> {
    let (rows, classes) = (g.value(logits).rows(), g.value(logits).cols());
    if labels.len() != rows {
        return Err(Error::dim("classification_loss", g.value(logits).shape(), &[labels.len()]));
    }
    let mut mask = Tensor::zeros(rows, classes);
    let mut n = 0usize;
    for (i, l) in labels.iter().enumerate() {
        if let Some(y) = *l {
            if y >= classes {
                return Err(Error::Label { label: y, classes });
            }
            mask.set(i, y, 1.0);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no labelled rows in batch".into()));
    }
    let lsm = g.log_softmax_rows(logits, 1.0)?;
    let mask = g.constant(mask);
    let picked = g.mul(mask, lsm)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / n as f64))
}

/// `|| H_c^T H_s ||_F^2` on raw, unnormalised rows.
pub fn orthogonality_loss(g: &mut Graph, h_c: Var, h_s: Var) -> Result<Var> {
    g.cross_gram_sq_norm(h_c, h_s)
}

/// The orthogonality term used in training: [`orthogonality_loss`] on
/// row-normalised features, divided by the number of row pairs `n^2`.
/// The value lies in `[0, 1]` and does not grow with feature scale or
/// batch size.
pub fn orthogonality_penalty(g: &mut Graph, h_c: Var, h_s: Var) -> Result<Var> {
    let n = g.value(h_c).rows();
    let cn = g.normalize_rows(h_c)?;
    let sn = g.normalize_rows(h_s)?;
    let raw = orthogonality_loss(g, cn, sn)?;
    Ok(g.scale(raw, 1.0 / (n * n) as f64))
}

/// Domain prediction from style features through a linear head; replaces
/// the style contrast in the domain-classification design variant.
pub fn domain_classifier_loss(g: &mut Graph, styles: Var, head: &BoundDense, domains: &[usize]) -> Result<Var> {
    let logits = head.forward(g, styles)?;
    let labels: Vec<Option<usize>> = domains.iter().map(|&d| Some(d)).collect();
    classification_loss(g, logits, &labels)
}

/// Mean squared distance between normalised encoder features and their
/// unit-norm memory partners.
pub fn l2_matching_loss(g: &mut Graph, c_enc: Var, c_mem: &Tensor) -> Result<Var> {
    if c_mem.shape() != g.value(c_enc).shape() {
        return Err(Error::dim("l2_matching_loss", g.value(c_enc).shape(), c_mem.shape()));
    }
    let n = c_mem.rows();
    let cn = g.normalize_rows(c_enc)?;
    let target = g.constant(c_mem.clone());
    let diff = g.sub(cn, target)?;
    let sq = g.mul(diff, diff)?;
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / n as f64))
}

/// Instance-level InfoNCE with the memory partner as the only positive and
/// every bank entry as a negative.
pub fn plain_infonce_loss(g: &mut Graph, c_enc: Var, c_mem: &Tensor, bank: &Snapshot, tau: f64) -> Result<Var> {
    check_temperature(tau)?;
    if c_mem.shape() != g.value(c_enc).shape() {
        return Err(Error::dim("plain_infonce_loss", g.value(c_enc).shape(), c_mem.shape()));
    }
    check_unit_rows(c_mem)?;
    let n = c_mem.rows();
    let v = snapshot_const(g, bank, "semantic bank")?;
    let cn = g.normalize_rows(c_enc)?;
    let target = g.constant(c_mem.clone());
    let prod = g.mul(cn, target)?;
    let pos = g.sum_cols(prod);
    let neg = g.matmul_t(cn, v)?;
    let logits = g.concat_cols(&[pos, neg])?;
    let lse = g.logsumexp_rows(logits, tau)?;
    let pos_scaled = g.scale(pos, 1.0 / tau);
    let terms = g.sub(lse, pos_scaled)?;
    let s = g.sum(terms);
    Ok(g.scale(s, 1.0 / n as f64))
}

/// Which components enter the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossFlags {
    pub cls: bool,
    pub style: bool,
    pub semantic: bool,
    pub orth: bool,
}

impl LossFlags {
    pub const VANILLA: LossFlags = LossFlags { cls: true, style: false, semantic: false, orth: false };
    pub const VANILLA_STYLE: LossFlags = LossFlags { cls: true, style: true, semantic: false, orth: true };
    pub const VANILLA_SEMANTIC: LossFlags = LossFlags { cls: true, style: false, semantic: true, orth: false };
    pub const ALL: LossFlags = LossFlags { cls: true, style: true, semantic: true, orth: true };
}

/// Graph handles of the computed components. The `style` slot holds either
/// the style contrast or its design-variant replacement, likewise `semantic`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub cls: Option<Var>,
    pub style: Option<Var>,
    pub semantic: Option<Var>,
    pub orth: Option<Var>,
}

/// Scalar values of each component; disabled components read exactly 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_s: f64,
    pub l_c: f64,
    pub l_o: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.l_cls += other.l_cls;
        self.l_s += other.l_s;
        self.l_c += other.l_c;
        self.l_o += other.l_o;
        self.total += other.total;
    }

    pub fn scaled(&self, k: f64) -> LossBreakdown {
        LossBreakdown {
            l_cls: self.l_cls * k,
            l_s: self.l_s * k,
            l_c: self.l_c * k,
            l_o: self.l_o * k,
            total: self.total * k,
        }
    }
}

/// Unweighted sum of the enabled components. The classification term must be
/// present and enabled.
pub fn total_loss(g: &mut Graph, terms: &LossTerms, flags: LossFlags) -> Result<(Var, LossBreakdown)> {
    if !flags.cls {
        return Err(Error::Config("the classification loss must be enabled".into()));
    }
    let pick = |slot: Option<Var>, on: bool, name: &str| -> Result<Option<Var>> {
        match (slot, on) {
            (Some(v), true) => Ok(Some(v)),
            (None, true) => Err(Error::Contract(format!("{name} enabled but not computed"))),
            (_, false) => Ok(None),
        }
    };
    let parts = [
        pick(terms.cls, flags.cls, "classification loss")?,
        pick(terms.style, flags.style, "style loss")?,
        pick(terms.semantic, flags.semantic, "semantic loss")?,
        pick(terms.orth, flags.orth, "orthogonality loss")?,
    ];
    let vals: Vec<f64> = parts
        .iter()
        .map(|p| p.map_or(0.0, |v| g.value(v).item()))
        .collect();
    let mut total = parts[0].expect("cls checked above");
    for p in parts[1..].iter().flatten() {
        total = g.add(total, *p)?;
    }
    let breakdown = LossBreakdown {
        l_cls: vals[0],
        l_s: vals[1],
        l_c: vals[2],
        l_o: vals[3],
        total: g.value(total).item(),
    };
    Ok((total, breakdown))
}
