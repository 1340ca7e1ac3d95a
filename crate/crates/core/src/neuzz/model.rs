//! Two-layer perceptron over scaled input bytes with per-edge sigmoid
//! outputs, trained by full-batch gradient descent on binary cross-entropy.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

use super::collect::{select_output_edges, validate_corpus, TrainingCorpus, DEFAULT_ALIGNMENT_THRESHOLD};

pub const MODEL_MAGIC: &[u8; 6] = b"FFMLP1";

#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub hidden: usize,
    /// Upper bound on output edges.
    pub max_edges: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    pub alignment_threshold: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            hidden: 64,
            max_edges: 512,
            epochs: 50,
            learning_rate: 0.1,
            rng_seed: 0,
            alignment_threshold: DEFAULT_ALIGNMENT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    /// N x H
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// H x E
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Uniform edge id of each output.
    pub edges: Vec<u32>,
    pub final_loss: f64,
    /// Loss before each epoch's update.
    pub loss_history: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradVariant {
    Signed,
    Raw,
}

/// Per-byte derivative of one output with respect to the scaled input.
#[derive(Clone, Debug, PartialEq)]
pub struct ByteGradient {
    pub values: Vec<f64>,
    pub variant: GradVariant,
}

impl ByteGradient {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Componentwise sign with `sign(0) = 0`.
pub fn sign(g: f64) -> f64 {
    if g == 0.0 || g.is_nan() {
        0.0
    } else {
        g.signum()
    }
}

fn scale(input: &[u8]) -> Array1<f64> {
    input.iter().map(|&b| b as f64 / 255.0).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against label `y`, computed from
/// the logit so it never takes `log(0)`.
fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl Model {
    /// Glorot-uniform weights drawn from a seeded generator, zero biases.
    pub fn init(n: usize, hidden: usize, edges: Vec<u32>, rng_seed: u64) -> Model {
        let e = edges.len();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(rng_seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
        };
        let w1 = glorot(n, hidden);
        let w2 = glorot(hidden, e);
        Model {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(e),
            edges,
            final_loss: f64::NAN,
            loss_history: Vec::new(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.w2.ncols()
    }

    fn check_input(&self, input: &[u8]) -> Result<()> {
        if input.len() != self.input_width() {
            return Err(Error::Shape(format!("input has {} bytes, model expects {}", input.len(), self.input_width())));
        }
        Ok(())
    }

    /// Hidden pre-activations and output logits for a scaled input.
    fn forward_scaled(&self, x: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        let z1 = x.dot(&self.w1) + &self.b1;
        let a1 = z1.mapv(|v| v.max(0.0));
        let z2 = a1.dot(&self.w2) + &self.b2;
        (z1, z2)
    }

    /// Output probabilities, one per selected edge.
    pub fn predict(&self, input: &[u8]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let (_, z2) = self.forward_scaled(&scale(input));
        Ok(z2.iter().map(|&z| sigmoid(z)).collect())
    }

    /// Output probability at an arbitrary real-valued scaled input; used by
    /// gradient checks.
    pub fn predict_scaled(&self, x: &[f64], edge_index: usize) -> f64 {
        let (_, z2) = self.forward_scaled(&Array1::from(x.to_vec()));
        sigmoid(z2[edge_index])
    }

    /// Hidden pre-activations at a scaled input.
    pub fn hidden_preactivations(&self, x: &[f64]) -> Vec<f64> {
        self.forward_scaled(&Array1::from(x.to_vec())).0.to_vec()
    }

    /// Derivative of output `edge_index` with respect to each scaled input
    /// byte, by backpropagation.
    pub fn gradient(&self, input: &[u8], edge_index: usize, variant: GradVariant) -> Result<ByteGradient> {
        self.check_input(input)?;
        self.gradient_scaled(&scale(input).to_vec(), edge_index, variant)
    }

    pub fn gradient_scaled(&self, x: &[f64], edge_index: usize, variant: GradVariant) -> Result<ByteGradient> {
        if edge_index >= self.output_width() {
            return Err(Error::Bounds { index: edge_index, limit: self.output_width() });
        }
        if x.len() != self.input_width() {
            return Err(Error::Shape(format!("input has {} values, model expects {}", x.len(), self.input_width())));
        }
        let (z1, z2) = self.forward_scaled(&Array1::from(x.to_vec()));
        let p = sigmoid(z2[edge_index]);
        let dz2 = p * (1.0 - p);
        let mask = z1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let dz1 = &self.w2.column(edge_index) * &mask * dz2;
        let raw = self.w1.dot(&dz1);
        let values = match variant {
            GradVariant::Raw => raw.to_vec(),
            GradVariant::Signed => raw.iter().map(|&g| sign(g)).collect(),
        };
        Ok(ByteGradient { values, variant })
    }

    /// Mean over samples of the summed per-edge cross-entropy.
    pub fn loss(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let z1 = x.dot(&self.w1) + &self.b1;
        let a1 = z1.mapv(|v| v.max(0.0));
        let z2 = a1.dot(&self.w2) + &self.b2;
        let total: f64 = z2.iter().zip(y.iter()).map(|(&z, &t)| bce_logit(z, t)).sum();
        total / x.nrows() as f64
    }

    /// One full-batch gradient-descent step; returns the loss before it.
    fn step(&mut self, x: &Array2<f64>, y: &Array2<f64>, lr: f64) -> f64 {
        let s = x.nrows() as f64;
        let z1 = x.dot(&self.w1) + &self.b1;
        let a1 = z1.mapv(|v| v.max(0.0));
        let z2 = a1.dot(&self.w2) + &self.b2;
        let loss: f64 = z2.iter().zip(y.iter()).map(|(&z, &t)| bce_logit(z, t)).sum::<f64>() / s;
        let dz2 = (z2.mapv(sigmoid) - y) / s;
        let dw2 = a1.t().dot(&dz2);
        let db2 = dz2.sum_axis(Axis(0));
        let mut dz1 = dz2.dot(&self.w2.t());
        dz1.zip_mut_with(&z1, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let dw1 = x.t().dot(&dz1);
        let db1 = dz1.sum_axis(Axis(0));
        self.w1.scaled_add(-lr, &dw1);
        self.b1.scaled_add(-lr, &db1);
        self.w2.scaled_add(-lr, &dw2);
        self.b2.scaled_add(-lr, &db2);
        loss
    }

    pub fn all_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }
}

/// Design matrix and label matrix of a corpus over the given edges.
pub fn design(corpus: &TrainingCorpus, edges: &[u32]) -> (Array2<f64>, Array2<f64>) {
    let n = corpus.seed.len();
    let s = corpus.samples.len();
    let x = Array2::from_shape_fn((s, n), |(i, j)| corpus.samples[i].input[j] as f64 / 255.0);
    let y = Array2::from_shape_fn((s, edges.len()), |(i, e)| if corpus.samples[i].covers(edges[e]) { 1.0 } else { 0.0 });
    (x, y)
}

/// Validates the corpus, selects output edges and trains. A corpus that
/// fails validation is refused.
pub fn train(corpus: &TrainingCorpus, hyper: &Hyper) -> Result<Model> {
    let report = validate_corpus(corpus, hyper.alignment_threshold);
    if !report.passed() {
        return Err(Error::CorpusRejected(report));
    }
    let (edges, _) = select_output_edges(corpus, hyper.max_edges);
    if edges.is_empty() {
        return Err(Error::NoSignal);
    }
    train_on_edges(corpus, edges, hyper)
}

/// Trains on a given edge list without validation; callers own the checks.
pub fn train_on_edges(corpus: &TrainingCorpus, edges: Vec<u32>, hyper: &Hyper) -> Result<Model> {
    if hyper.hidden == 0 {
        return Err(Error::Config("hidden width must be positive".into()));
    }
    let (x, y) = design(corpus, &edges);
    let mut model = Model::init(corpus.seed.len(), hyper.hidden, edges, hyper.rng_seed);
    for _ in 0..hyper.epochs {
        let loss = model.step(&x, &y, hyper.learning_rate);
        model.loss_history.push(loss);
    }
    model.final_loss = model.loss(&x, &y);
    if !model.all_finite() {
        return Err(Error::Format("training diverged to non-finite weights".into()));
    }
    Ok(model)
}

impl Model {
    /// `FFMLP1`, then u32 N, H, E, the E edge ids as u32, then W1, b1, W2,
    /// b2 and the final loss as row-major little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MODEL_MAGIC.to_vec();
        for d in [self.input_width(), self.hidden_width(), self.output_width()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for e in &self.edges {
            out.extend_from_slice(&e.to_le_bytes());
        }
        for v in self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.final_loss.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let bad = |m: &str| Error::Format(format!("model file: {}", m));
        let rest = bytes.strip_prefix(MODEL_MAGIC.as_slice()).ok_or_else(|| bad("bad magic"))?;
        if rest.len() < 12 {
            return Err(bad("truncated header"));
        }
        let u32_at = |b: &[u8], i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap()) as usize;
        let (n, h, e) = (u32_at(rest, 0), u32_at(rest, 4), u32_at(rest, 8));
        let floats = n * h + h + h * e + e + 1;
        if rest.len() != 12 + 4 * e + 8 * floats {
            return Err(bad("length does not match dimensions"));
        }
        let edges: Vec<u32> = (0..e).map(|i| u32_at(rest, 12 + 4 * i) as u32).collect();
        let mut vals =
            rest[12 + 4 * e..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |k: usize| -> Vec<f64> { vals.by_ref().take(k).collect() };
        let w1 = Array2::from_shape_vec((n, h), take(n * h)).map_err(|e| bad(&e.to_string()))?;
        let b1 = Array1::from(take(h));
        let w2 = Array2::from_shape_vec((h, e), take(h * e)).map_err(|e| bad(&e.to_string()))?;
        let b2 = Array1::from(take(e));
        let final_loss = take(1)[0];
        Ok(Model { w1, b1, w2, b2, edges, final_loss, loss_history: Vec::new() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_bytes(&fs::read(path)?)
    }
}
