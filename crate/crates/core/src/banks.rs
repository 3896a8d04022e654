//! Fixed-capacity FIFO queues of unit-norm memory features.
//!
//! One style queue per domain and one shared semantic ("jury") queue.
//! Entries are plain values with no graph linkage, so nothing computed from
//! a bank can ever send an adjoint back into it.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Allowed deviation of a banked vector's norm from 1.
pub const UNIT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<Vec<f64>>,
}

impl FeatureQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Config(format!("queue capacity {capacity} and dim {dim} must be positive")));
        }
        Ok(FeatureQueue {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Appends at the tail, evicting and returning the head when full.
    pub fn push(&mut self, v: &[f64]) -> Result<Option<Vec<f64>>> {
        if v.len() != self.dim {
            return Err(Error::dim("queue push", &[self.dim], &[v.len()]));
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !((n - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::NotUnit(n));
        }
        let evicted = if self.is_full() { self.entries.pop_front() } else { None };
        self.entries.push_back(v.to_vec());
        Ok(evicted)
    }

    /// Pushes every row of `rows` in order.
    pub fn push_rows(&mut self, rows: &Tensor) -> Result<()> {
        for r in 0..rows.rows() {
            self.push(rows.row(r))?;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(|v| v.as_slice())
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for e in &self.entries {
            data.extend_from_slice(e);
        }
        Snapshot {
            rows: self.len(),
            dim: self.dim,
            data,
        }
    }
}

/// Immutable copy of queue contents, oldest row first.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Snapshot {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    /// `None` when empty, since tensors have positive extents.
    pub fn to_tensor(&self) -> Option<Tensor> {
        (self.rows > 0).then(|| Tensor::from_rows(self.rows, self.dim, self.data.clone()))
    }

    pub fn concat(parts: &[Snapshot], dim: usize) -> Snapshot {
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Snapshot { rows, dim, data }
    }
}

/// One style queue per domain.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleBankSet {
    queues: Vec<FeatureQueue>,
}

impl StyleBankSet {
    pub fn new(domains: usize, capacity: usize, dim: usize) -> Result<Self> {
        if domains == 0 {
            return Err(Error::Config("style banks need at least one domain".into()));
        }
        Ok(StyleBankSet {
            queues: (0..domains)
                .map(|_| FeatureQueue::new(capacity, dim))
                .collect::<Result<_>>()?,
        })
    }

    pub fn domains(&self) -> usize {
        self.queues.len()
    }

    pub fn queue(&self, d: usize) -> Result<&FeatureQueue> {
        self.queues.get(d).ok_or(Error::UnknownDomain {
            id: d,
            domains: self.queues.len(),
        })
    }

    pub fn push(&mut self, d: usize, v: &[f64]) -> Result<Option<Vec<f64>>> {
        let domains = self.queues.len();
        self.queues
            .get_mut(d)
            .ok_or(Error::UnknownDomain { id: d, domains })?
            .push(v)
    }

    /// Whether every queue listed in `active` is non-empty.
    pub fn is_warm(&self, active: &[usize]) -> bool {
        active.iter().all(|&d| self.queues.get(d).is_some_and(|q| !q.is_empty()))
    }

    pub fn total_len(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }

    pub fn snapshot(&self) -> Vec<Snapshot> {
        self.queues.iter().map(|q| q.snapshot()).collect()
    }

    /// Every entry from every other domain, ascending domain then queue order.
    pub fn negatives_for(&self, d: usize) -> Result<Snapshot> {
        self.queue(d)?;
        if let Some(cold) = self.queues.iter().position(|q| q.is_empty()) {
            return Err(Error::BankCold(format!("style queue {cold} is empty")));
        }
        let parts: Vec<Snapshot> = self
            .queues
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != d)
            .map(|(_, q)| q.snapshot())
            .collect();
        Ok(Snapshot::concat(&parts, self.queues[0].dim()))
    }
}

/// The single queue shared by all domains.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticBank {
    queue: FeatureQueue,
}

impl SemanticBank {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        Ok(SemanticBank {
            queue: FeatureQueue::new(capacity, dim)?,
        })
    }

    pub fn push(&mut self, v: &[f64]) -> Result<Option<Vec<f64>>> {
        self.queue.push(v)
    }

    pub fn queue(&self) -> &FeatureQueue {
        &self.queue
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.queue.snapshot()
    }
}

pub const BANK_DUMP_MAGIC: &str = "# steam-bank-dump v1";

/// Debug dump: one `bank <name> <rows> <dim>` section per queue, then one
/// line of `dim` values per entry, oldest first.
pub fn dump_banks(style: &StyleBankSet, semantic: &SemanticBank) -> String {
    let mut out = String::new();
    out.push_str(BANK_DUMP_MAGIC);
    out.push('\n');
    let sections = style
        .queues
        .iter()
        .enumerate()
        .map(|(d, q)| (format!("style.{d}"), q))
        .chain(std::iter::once(("semantic".to_string(), &semantic.queue)));
    for (name, q) in sections {
        let _ = writeln!(out, "bank {name} {} {}", q.len(), q.dim());
        for e in q.iter() {
            let line: Vec<String> = e.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Parses a bank dump back into named snapshots.
pub fn parse_bank_dump(text: &str) -> Result<Vec<(String, Snapshot)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, l)) if l == BANK_DUMP_MAGIC => {}
        Some((n, _)) => return Err(Error::parse(n, "missing bank-dump header")),
        None => return Err(Error::parse(0, "empty bank dump")),
    }
    let mut out = Vec::new();
    while let Some((n, header)) = lines.next() {
        let f: Vec<&str> = header.split_whitespace().collect();
        let ["bank", name, rows, dim] = f[..] else {
            return Err(Error::parse(n, "expected `bank <name> <rows> <dim>`"));
        };
        let rows: usize = rows.parse().map_err(|_| Error::parse(n, "bad row count"))?;
        let dim: usize = dim.parse().map_err(|_| Error::parse(n, "bad dim"))?;
        if dim == 0 {
            return Err(Error::parse(n, "zero dim"));
        }
        let mut data = Vec::new();
        for _ in 0..rows {
            let (ln, line) = lines.next().ok_or_else(|| Error::parse(n, "truncated bank"))?;
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::parse(ln, "bad value"))?;
            if vals.len() != dim {
                return Err(Error::parse(ln, format!("expected {dim} values")));
            }
            data.extend(vals);
        }
        out.push((name.to_string(), Snapshot { rows, dim, data }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn fifo_evicts_oldest() {
        let mut q = FeatureQueue::new(3, 4).unwrap();
        for i in 0..4 {
            q.push(&e(i, 4)).unwrap();
        }
        let got: Vec<Vec<f64>> = q.iter().map(|r| r.to_vec()).collect();
        assert_eq!(got, vec![e(1, 4), e(2, 4), e(3, 4)]);
    }

    #[test]
    fn push_into_empty() {
        let mut q = FeatureQueue::new(3, 2).unwrap();
        assert_eq!(q.push(&e(0, 2)).unwrap(), None);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn rejects_non_unit_and_wrong_dim() {
        let mut q = FeatureQueue::new(3, 2).unwrap();
        assert!(matches!(q.push(&[0.5, 0.5]), Err(Error::NotUnit(_))));
        assert!(matches!(q.push(&[1.0]), Err(Error::Dimension { .. })));
        let mut b = StyleBankSet::new(2, 3, 2).unwrap();
        assert!(matches!(b.push(2, &e(0, 2)), Err(Error::UnknownDomain { .. })));
    }

    #[test]
    fn negatives_two_domains() {
        let mut b = StyleBankSet::new(2, 3, 2).unwrap();
        assert!(matches!(b.negatives_for(0), Err(Error::BankCold(_))));
        b.push(0, &e(0, 2)).unwrap();
        b.push(1, &e(1, 2)).unwrap();
        b.push(1, &[-1.0, 0.0]).unwrap();
        let neg = b.negatives_for(0).unwrap();
        assert_eq!(neg, b.queue(1).unwrap().snapshot());
    }

    #[test]
    fn snapshot_is_detached() {
        let mut q = FeatureQueue::new(2, 2).unwrap();
        assert_eq!(q.snapshot().rows(), 0);
        assert!(q.snapshot().to_tensor().is_none());
        q.push(&e(0, 2)).unwrap();
        let snap = q.snapshot();
        q.push(&e(1, 2)).unwrap();
        q.push(&e(1, 2)).unwrap();
        assert_eq!(snap.rows(), 1);
        assert_eq!(snap.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn dump_round_trip() {
        let mut s = StyleBankSet::new(2, 2, 2).unwrap();
        let mut c = SemanticBank::new(2, 2).unwrap();
        s.push(0, &[0.6, 0.8]).unwrap();
        c.push(&[0.0, -1.0]).unwrap();
        let parsed = parse_bank_dump(&dump_banks(&s, &c)).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0].1, s.queue(0).unwrap().snapshot());
        assert_eq!(parsed[1].1.rows(), 0);
        assert_eq!(parsed[2].1, c.snapshot());
        assert!(parse_bank_dump("bank x 1 1").is_err());
    }
}
