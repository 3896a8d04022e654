//! Encoder stack, classifier, and the momentum-averaged memory encoder.
//!
//! The trainable side holds a feature MLP, a semantic head, a style head and
//! a linear classifier on semantic features. The memory side mirrors the
//! three encoder parts (never the classifier) and only ever moves by
//! [`momentum_update`].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Layer widths for the whole stack.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub feature: usize,
    pub embed: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn desk(input: usize, classes: usize) -> Self {
        ModelDims {
            input,
            hidden: vec![64, 64],
            feature: 32,
            embed: 16,
            classes,
        }
    }
}

/// A dense layer `y = x W + b`, with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Dense {
            weight: Tensor::zeros(inp, out),
            bias: Tensor::zeros(1, out),
        }
    }

    /// Gaussian weights with variance `gain / fan_in`, zero bias.
    pub fn random<R: Rng>(inp: usize, out: usize, gain: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (gain / inp as f64).sqrt()).expect("positive std");
        let data = (0..inp * out).map(|_| normal.sample(rng)).collect();
        Dense {
            weight: Tensor::from_rows(inp, out, data),
            bias: Tensor::zeros(1, out),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul(&self.weight)?;
        let cols = y.cols();
        for row in y.data_mut().chunks_mut(cols) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    fn bind(&self, g: &mut Graph) -> BoundDense {
        BoundDense {
            weight: g.param(self.weight.clone()),
            bias: g.param(self.bias.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
}

impl BoundDense {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.matmul(x, self.weight)?;
        g.add_bias(h, self.bias)
    }
}

fn mlp_plain(layers: &[Dense], x: &Tensor) -> Result<Tensor> {
    let mut h = x.as_matrix();
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(&h)?;
        if i + 1 < layers.len() {
            h = h.map(|v| if v > 0.0 { v } else { 0.0 });
        }
    }
    Ok(h)
}

fn check_input(layers: &[Dense], x: &Tensor) -> Result<()> {
    let want = layers.first().map(|l| l.inputs()).unwrap_or(0);
    if x.cols() != want {
        return Err(Error::dim("encode", x.shape(), &[x.rows(), want]));
    }
    Ok(())
}

/// Trainable parameters: feature MLP, semantic head, style head, classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub feature: Vec<Dense>,
    pub semantic: Dense,
    pub style: Dense,
    pub classifier: Dense,
}

/// Memory-side mirror of the encoder, without a classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryParams {
    pub feature: Vec<Dense>,
    pub semantic: Dense,
    pub style: Dense,
}

/// Graph handles for a bound [`EncoderParams`].
#[derive(Clone, Debug)]
pub struct BoundEncoder {
    pub feature: Vec<BoundDense>,
    pub semantic: BoundDense,
    pub style: BoundDense,
    pub classifier: BoundDense,
}

/// Encoder outputs on a graph.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub z: Var,
    pub c: Var,
    pub s: Var,
}

impl EncoderParams {
    /// He-scaled hidden layers, unit-gain heads, zero classifier.
    pub fn init<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        let mut widths = vec![dims.input];
        widths.extend_from_slice(&dims.hidden);
        widths.push(dims.feature);
        let n = widths.len() - 1;
        let feature = (0..n)
            .map(|i| {
                let gain = if i + 1 < n { 2.0 } else { 1.0 };
                Dense::random(widths[i], widths[i + 1], gain, rng)
            })
            .collect();
        EncoderParams {
            feature,
            semantic: Dense::random(dims.feature, dims.embed, 1.0, rng),
            style: Dense::random(dims.feature, dims.embed, 1.0, rng),
            classifier: Dense::zeros(dims.embed, dims.classes),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.feature[0].inputs(),
            hidden: self.feature[..self.feature.len() - 1]
                .iter()
                .map(|l| l.outputs())
                .collect(),
            feature: self.semantic.inputs(),
            embed: self.semantic.outputs(),
            classes: self.classifier.outputs(),
        }
    }

    /// Layer chaining and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.feature.is_empty() {
            return Err(Error::Contract("feature extractor has no layers".into()));
        }
        for w in self.feature.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::dim("feature chain", w[0].weight.shape(), w[1].weight.shape()));
            }
        }
        let feat = self.feature.last().unwrap().outputs();
        for head in [&self.semantic, &self.style] {
            if head.inputs() != feat {
                return Err(Error::dim("head", head.weight.shape(), &[feat]));
            }
        }
        if self.semantic.outputs() != self.style.outputs() {
            return Err(Error::dim("heads", self.semantic.weight.shape(), self.style.weight.shape()));
        }
        if self.classifier.inputs() != self.semantic.outputs() {
            return Err(Error::dim("classifier", self.classifier.weight.shape(), self.semantic.weight.shape()));
        }
        if !self.named().iter().all(|(_, t)| t.is_finite()) {
            return Err(Error::Contract("non-finite encoder weight".into()));
        }
        Ok(())
    }

    /// Named tensors in canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.feature.iter().enumerate() {
            out.push((format!("feature.{i}.weight"), &l.weight));
            out.push((format!("feature.{i}.bias"), &l.bias));
        }
        for (name, l) in [("semantic", &self.semantic), ("style", &self.style), ("classifier", &self.classifier)] {
            out.push((format!("{name}.weight"), &l.weight));
            out.push((format!("{name}.bias"), &l.bias));
        }
        out
    }

    /// Mutable tensors in the same order as [`EncoderParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.feature {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for l in [&mut self.semantic, &mut self.style, &mut self.classifier] {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn from_named(arrays: &[(String, Tensor)]) -> Result<Self> {
        let find = |name: &str| -> Result<Tensor> {
            arrays
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Contract(format!("missing array {name}")))
        };
        let dense = |prefix: &str| -> Result<Dense> {
            Ok(Dense {
                weight: find(&format!("{prefix}.weight"))?,
                bias: find(&format!("{prefix}.bias"))?,
            })
        };
        let mut feature = Vec::new();
        while arrays.iter().any(|(n, _)| n == &format!("feature.{}.weight", feature.len())) {
            feature.push(dense(&format!("feature.{}", feature.len()))?);
        }
        let p = EncoderParams {
            feature,
            semantic: dense("semantic")?,
            style: dense("style")?,
            classifier: dense("classifier")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn bind(&self, g: &mut Graph) -> BoundEncoder {
        BoundEncoder {
            feature: self.feature.iter().map(|l| l.bind(g)).collect(),
            semantic: self.semantic.bind(g),
            style: self.style.bind(g),
            classifier: self.classifier.bind(g),
        }
    }

    /// Plain forward pass returning `(z, c, s)`.
    pub fn encode_plain(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        check_input(&self.feature, x)?;
        let z = mlp_plain(&self.feature, x)?;
        let c = self.semantic.forward(&z)?;
        let s = self.style.forward(&z)?;
        Ok((z, c, s))
    }

    /// Logits from inputs, touching only the feature extractor, the semantic
    /// head and the classifier.
    pub fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        check_input(&self.feature, x)?;
        let z = mlp_plain(&self.feature, x)?;
        let c = self.semantic.forward(&z)?;
        self.classifier.forward(&c)
    }

    pub fn memory_copy(&self) -> MemoryParams {
        MemoryParams {
            feature: self.feature.clone(),
            semantic: self.semantic.clone(),
            style: self.style.clone(),
        }
    }
}

impl BoundEncoder {
    /// All handles in [`EncoderParams::named`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.feature {
            out.push(l.weight);
            out.push(l.bias);
        }
        for l in [&self.semantic, &self.style, &self.classifier] {
            out.push(l.weight);
            out.push(l.bias);
        }
        out
    }

    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<Encoded> {
        let want = g.value(self.feature[0].weight).rows();
        if g.value(x).cols() != want {
            let xs = g.value(x).shape().to_vec();
            return Err(Error::dim("encode", &xs, &[xs[0], want]));
        }
        let mut h = x;
        let n = self.feature.len();
        for (i, l) in self.feature.iter().enumerate() {
            h = l.forward(g, h)?;
            if i + 1 < n {
                h = g.relu(h);
            }
        }
        let c = self.semantic.forward(g, h)?;
        let s = self.style.forward(g, h)?;
        Ok(Encoded { z: h, c, s })
    }

    pub fn classify(&self, g: &mut Graph, c: Var) -> Result<Var> {
        self.classifier.forward(g, c)
    }
}

impl MemoryParams {
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.feature.iter().enumerate() {
            out.push((format!("memory.feature.{i}.weight"), &l.weight));
            out.push((format!("memory.feature.{i}.bias"), &l.bias));
        }
        for (name, l) in [("memory.semantic", &self.semantic), ("memory.style", &self.style)] {
            out.push((format!("{name}.weight"), &l.weight));
            out.push((format!("{name}.bias"), &l.bias));
        }
        out
    }

    /// Memory features `(c, s)`, each row L2-normalised. Pure values: nothing
    /// here is ever recorded on a graph.
    pub fn memory_encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        check_input(&self.feature, x)?;
        let z = mlp_plain(&self.feature, x)?;
        let c = self.semantic.forward(&z)?.normalize_rows(NORM_EPS)?;
        let s = self.style.forward(&z)?.normalize_rows(NORM_EPS)?;
        Ok((c, s))
    }

    /// Normalised semantic features only.
    pub fn memory_semantic(&self, x: &Tensor) -> Result<Tensor> {
        check_input(&self.feature, x)?;
        let z = mlp_plain(&self.feature, x)?;
        self.semantic.forward(&z)?.normalize_rows(NORM_EPS)
    }

    /// Normalised style features only.
    pub fn memory_style(&self, x: &Tensor) -> Result<Tensor> {
        check_input(&self.feature, x)?;
        let z = mlp_plain(&self.feature, x)?;
        self.style.forward(&z)?.normalize_rows(NORM_EPS)
    }

    fn layers(&self) -> Vec<&Dense> {
        self.feature.iter().chain([&self.semantic, &self.style]).collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.feature.iter_mut().chain([&mut self.semantic, &mut self.style]).collect()
    }
}

fn encoder_mirrored(e: &EncoderParams) -> Vec<&Dense> {
    e.feature.iter().chain([&e.semantic, &e.style]).collect()
}

/// `memory <- alpha * memory + (1 - alpha) * encoder`, scalar by scalar.
pub fn momentum_update(memory: &mut MemoryParams, encoder: &EncoderParams, alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("momentum alpha must lie in [0, 1), got {alpha}")));
    }
    let src = encoder_mirrored(encoder);
    if src.len() != memory.layers().len() {
        return Err(Error::dim("momentum_update", &[memory.layers().len()], &[src.len()]));
    }
    for (m, e) in memory.layers().iter().zip(&src) {
        if m.weight.shape() != e.weight.shape() || m.bias.shape() != e.bias.shape() {
            return Err(Error::dim("momentum_update", m.weight.shape(), e.weight.shape()));
        }
    }
    let beta = 1.0 - alpha;
    for (m, e) in memory.layers_mut().into_iter().zip(src) {
        for (mt, et) in [(&mut m.weight, &e.weight), (&mut m.bias, &e.bias)] {
            for (a, b) in mt.data_mut().iter_mut().zip(et.data()) {
                *a = alpha * *a + beta * b;
            }
        }
    }
    Ok(())
}

/// Euclidean distance between the memory parameters and the mirrored encoder
/// parameters, flattened.
pub fn mirror_distance(memory: &MemoryParams, encoder: &EncoderParams) -> f64 {
    memory
        .layers()
        .iter()
        .zip(encoder_mirrored(encoder))
        .flat_map(|(m, e)| {
            m.weight
                .data()
                .iter()
                .zip(e.weight.data())
                .chain(m.bias.data().iter().zip(e.bias.data()))
        })
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderParams::init(&ModelDims::desk(10, 7), &mut rng)
    }

    #[test]
    fn init_chains_dims() {
        let p = params(1);
        p.validate().unwrap();
        assert_eq!(p.dims(), ModelDims::desk(10, 7));
    }

    #[test]
    fn alpha_zero_copies() {
        let e = params(1);
        let mut m = params(2).memory_copy();
        momentum_update(&mut m, &e, 0.0).unwrap();
        assert_eq!(m, e.memory_copy());
    }

    #[test]
    fn alpha_out_of_range() {
        let e = params(1);
        let mut m = e.memory_copy();
        assert!(momentum_update(&mut m, &e, 1.0).is_err());
        assert!(momentum_update(&mut m, &e, -0.1).is_err());
    }

    #[test]
    fn wrong_input_width() {
        let p = params(3);
        let x = Tensor::zeros(2, 9);
        assert!(matches!(p.encode_plain(&x), Err(Error::Dimension { .. })));
        assert!(p.memory_copy().memory_encode(&x).is_err());
    }

    #[test]
    fn zero_weights_give_zero_heads() {
        let mut p = params(4);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::filled(3, 10, 0.7);
        let (_, c, s) = p.encode_plain(&x).unwrap();
        assert!(c.data().iter().chain(s.data()).all(|&v| v == 0.0));
    }
}
