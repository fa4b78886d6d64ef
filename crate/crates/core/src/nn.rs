//! Fully connected networks with a shared trunk and several affine output
//! heads, trained with Adam.
//!
//! Networks are generic over the float type: gradient checks run
//! in `f64` and experiments train in `f32`. Parameters live in one flat
//! vector: for each layer, its weight matrix (row-major, `d_in × d_out`)
//! followed by its bias.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use std::io::{Read, Write};

pub const HIDDEN: usize = 256;

pub trait Scalar: num_traits::Float + Default + Debug + Send + Sync + 'static {
    /// `C = A·B + beta·C` with explicit strides (row stride, column stride).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
    );
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
    ) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: bounds checked above; strides describe dense layouts within the slices.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, 1,
            )
        }
    }

    fn of(v: f64) -> Self {
        v as f32
    }

    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
    ) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: bounds checked above; strides describe dense layouts within the slices.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, 1,
            )
        }
    }

    fn of(v: f64) -> Self {
        v
    }

    fn f64(self) -> f64 {
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

/// Feed-forward network `dims[0] → … → dims[last]` with rectifier hidden
/// units. The last layer's columns are partitioned into `heads`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F: Scalar> {
    pub dims: Vec<usize>,
    pub heads: Vec<usize>,
    pub params: Vec<F>,
}

/// Batches up to this size skip the packed matrix multiply.
const SMALL_BATCH: usize = 4;

/// Activations kept from a forward pass for backpropagation.
#[derive(Default)]
pub struct Workspace<F: Scalar> {
    acts: Vec<Vec<F>>,
    deltas: Vec<Vec<F>>,
    batch: usize,
}

impl<F: Scalar> Workspace<F> {
    pub fn output(&self) -> &[F] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

impl<F: Scalar> Mlp<F> {
    /// Two hidden layers of [`HIDDEN`] units and one output block per head.
    pub fn two_head(d_in: usize, heads: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let d_out = heads.iter().sum();
        Self::new(&[d_in, HIDDEN, HIDDEN, d_out], heads, rng)
    }

    /// Uniform fan-in initialization: weights and biases of a layer with
    /// fan-in `k` drawn from `U(-1/√k, 1/√k)`.
    pub fn new(dims: &[usize], heads: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2);
        assert_eq!(heads.iter().sum::<usize>(), *dims.last().unwrap());
        let mut params = Vec::with_capacity(Self::param_count(dims));
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(F::of(rng.random_range(-bound..bound)));
            }
        }
        Mlp {
            dims: dims.to_vec(),
            heads: heads.to_vec(),
            params,
        }
    }

    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    pub fn d_out(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Offsets of layer `l`'s weight and bias blocks.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.dims[l] * self.dims[l + 1])
    }

    /// Column range of head `h` in the output.
    pub fn head_range(&self, h: usize) -> std::ops::Range<usize> {
        let start: usize = self.heads[..h].iter().sum();
        start..start + self.heads[h]
    }

    /// Forward pass over `batch` row-major input rows, keeping activations.
    pub fn forward_batch<'w>(&self, input: &[F], batch: usize, ws: &'w mut Workspace<F>) -> &'w [F] {
        assert_eq!(input.len(), batch * self.d_in(), "input size");
        let layers = self.dims.len() - 1;
        ws.acts.resize_with(layers + 1, Vec::new);
        ws.batch = batch;
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(input);
        for l in 0..layers {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            let (prev, rest) = ws.acts.split_at_mut(l + 1);
            let out = &mut rest[0];
            out.clear();
            out.reserve(batch * dout);
            for _ in 0..batch {
                out.extend_from_slice(&self.params[bo..bo + dout]);
            }
            let w = &self.params[wo..bo];
            if batch <= SMALL_BATCH {
                // Row-times-matrix avoids packing the weights for tiny batches.
                for r in 0..batch {
                    let o = &mut out[r * dout..(r + 1) * dout];
                    for (i, &a) in prev[l][r * din..(r + 1) * din].iter().enumerate() {
                        if a != F::zero() {
                            for (oj, &wj) in o.iter_mut().zip(&w[i * dout..(i + 1) * dout]) {
                                *oj = *oj + a * wj;
                            }
                        }
                    }
                }
            } else {
                F::gemm(batch, din, dout, &prev[l], din as isize, 1, w, dout as isize, 1, F::one(), out, dout as isize);
            }
            if l + 1 < layers {
                for v in out.iter_mut() {
                    if *v < F::zero() {
                        *v = F::zero();
                    }
                }
            }
        }
        ws.acts[layers].as_slice()
    }

    /// Outputs for a single input row.
    pub fn forward(&self, input: &[F]) -> Result<Vec<F>, NnError> {
        if input.len() != self.d_in() {
            return Err(NnError::Dimension {
                expected: self.d_in(),
                got: input.len(),
            });
        }
        let mut ws = Workspace::default();
        Ok(self.forward_batch(input, 1, &mut ws).to_vec())
    }

    /// Accumulates into `grad` the parameter gradient of `Σ d_out ⊙ output`
    /// for the batch last passed through `forward_batch`.
    pub fn backward(&self, ws: &mut Workspace<F>, d_out: &[F], grad: &mut [F]) {
        let layers = self.dims.len() - 1;
        let batch = ws.batch;
        assert_eq!(d_out.len(), batch * self.d_out());
        assert_eq!(grad.len(), self.params.len());
        ws.deltas.resize_with(layers + 1, Vec::new);
        ws.deltas[layers].clear();
        ws.deltas[layers].extend_from_slice(d_out);
        for l in (0..layers).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            let delta = std::mem::take(&mut ws.deltas[l + 1]);
            // dW += Aᵀ·δ
            let (gw, gb) = grad[wo..bo + dout].split_at_mut(bo - wo);
            F::gemm(
                din,
                batch,
                dout,
                &ws.acts[l],
                1,
                din as isize,
                &delta,
                dout as isize,
                1,
                F::one(),
                gw,
                dout as isize,
            );
            for row in delta.chunks_exact(dout) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g = *g + *d;
                }
            }
            if l > 0 {
                // δ_prev = (δ·Wᵀ) ⊙ relu'(a_prev)
                let prev = &mut ws.deltas[l];
                prev.clear();
                prev.resize(batch * din, F::zero());
                F::gemm(
                    batch,
                    dout,
                    din,
                    &delta,
                    dout as isize,
                    1,
                    &self.params[wo..bo],
                    1,
                    dout as isize,
                    F::zero(),
                    prev,
                    din as isize,
                );
                for (d, a) in prev.iter_mut().zip(&ws.acts[l]) {
                    if *a <= F::zero() {
                        *d = F::zero();
                    }
                }
            }
            ws.deltas[l + 1] = delta;
        }
    }

    pub fn convert<G: Scalar>(&self) -> Mlp<G> {
        Mlp {
            dims: self.dims.clone(),
            heads: self.heads.clone(),
            params: self.params.iter().map(|p| G::of(p.f64())).collect(),
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F]) {
        self.t += 1;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let (one_b1, one_b2) = (F::of(1.0 - self.beta1), F::of(1.0 - self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = F::of(self.lr * c2.sqrt() / c1);
        let eps = F::of(self.eps * c2.sqrt());
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + one_b1 * *g;
            *v = b2 * *v + one_b2 * *g * *g;
            *p = *p - step * *m / (v.sqrt() + eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 512,
            learning_rate: 1e-3,
        }
    }
}

/// A loss over a dataset of indexed examples.
pub trait Objective<F: Scalar> {
    /// Builds the network input rows for the examples `idx`, returning the
    /// number of rows written.
    fn inputs(&mut self, idx: &[usize], rng: &mut ChaCha8Rng, out: &mut Vec<F>) -> usize;

    /// Mean loss of the batch whose outputs are `output`; writes the
    /// gradient of that loss with respect to `output` into `grad`.
    fn loss_grad(&mut self, output: &[F], grad: &mut [F]) -> f64;
}

/// Which examples form each mini-batch.
#[derive(Clone, Debug)]
pub enum BatchSchedule {
    /// Shuffled passes over `0..n`; a dataset smaller than the batch size
    /// forms a single batch.
    Standard { n: usize },
    /// Each batch takes half its examples from a shuffled pass over `new`
    /// and half uniformly at random from `old`. An epoch is one pass over
    /// `new`.
    Balanced { new: Vec<usize>, old: Vec<usize> },
}

impl BatchSchedule {
    fn epoch_batches(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        match self {
            BatchSchedule::Standard { n } => {
                let mut order: Vec<usize> = (0..*n).collect();
                order.shuffle(rng);
                order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
            }
            BatchSchedule::Balanced { new, old } => {
                if old.is_empty() {
                    let mut order = new.clone();
                    order.shuffle(rng);
                    return order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect();
                }
                let half = (batch_size / 2).max(1);
                let mut order = new.clone();
                order.shuffle(rng);
                order
                    .chunks(half)
                    .map(|c| {
                        let mut b = c.to_vec();
                        for _ in 0..c.len() {
                            b.push(old[rng.random_range(0..old.len())]);
                        }
                        b
                    })
                    .collect()
            }
        }
    }
}

/// Runs `cfg.epochs` epochs of mini-batch Adam; returns the mean loss of
/// each epoch.
pub fn train<F: Scalar>(
    net: &mut Mlp<F>,
    opt: &mut Adam<F>,
    objective: &mut dyn Objective<F>,
    schedule: &BatchSchedule,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut ws = Workspace::default();
    let mut input = Vec::new();
    let mut grad_out = Vec::new();
    let mut grad = vec![F::zero(); net.params.len()];
    let mut losses = Vec::with_capacity(cfg.epochs);
    opt.lr = cfg.learning_rate;
    for _ in 0..cfg.epochs {
        let batches = schedule.epoch_batches(cfg.batch_size, rng);
        let mut total = 0.0;
        for idx in &batches {
            input.clear();
            let rows = objective.inputs(idx, rng, &mut input);
            let out = net.forward_batch(&input, rows, &mut ws);
            grad_out.clear();
            grad_out.resize(out.len(), F::zero());
            total += objective.loss_grad(out, &mut grad_out);
            grad.iter_mut().for_each(|g| *g = F::zero());
            net.backward(&mut ws, &grad_out, &mut grad);
            opt.step(&mut net.params, &grad);
        }
        losses.push(if batches.is_empty() { 0.0 } else { total / batches.len() as f64 });
    }
    losses
}

/// Per-dimension affine map of data into `[0, 1]`. Dimensions whose range
/// is below 1 are only shifted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut any = false;
        for r in rows {
            any = true;
            for (j, v) in r.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        if !any {
            return Self::identity(dim);
        }
        let scale = lo.iter().zip(&hi).map(|(l, h)| if h - l < 1.0 { 1.0 } else { h - l }).collect();
        Normalizer { shift: lo, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.shift).zip(&self.scale).map(|((x, s), c)| (x - s) / c).collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.shift).zip(&self.scale).map(|((x, s), c)| x * c + s).collect()
    }
}

/// Sinusoidal embedding of step `t`: `dim/2` frequencies spaced
/// geometrically from 1 down to 1/10000, interleaved as sin, cos.
pub fn sinusoidal_embed(t: usize, dim: usize) -> Vec<f64> {
    assert!(dim % 2 == 0, "embedding dimension must be even");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = if half > 1 {
            10000f64.powf(-(i as f64) / (half - 1) as f64)
        } else {
            1.0
        };
        let a = t as f64 * freq;
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

// ---------------------------------------------------------------------------
// Checkpoints

const MAGIC: &[u8; 8] = b"TAMPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized network: a JSON header (layer dims, heads and caller
/// metadata such as normalizer statistics) followed by blocks of
/// little-endian `f64`, the first being the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
    pub extra: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dims: Vec<usize>,
    pub heads: Vec<usize>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_net<F: Scalar>(net: &Mlp<F>, meta: serde_json::Value, extra: Vec<Vec<f64>>) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                dims: net.dims.clone(),
                heads: net.heads.clone(),
                meta,
            },
            params: net.params.iter().map(|p| p.f64()).collect(),
            extra,
        }
    }

    pub fn net<F: Scalar>(&self) -> Mlp<F> {
        Mlp {
            dims: self.header.dims.clone(),
            heads: self.header.heads.clone(),
            params: self.params.iter().map(|&p| F::of(p)).collect(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), NnError> {
        let header = serde_json::to_vec(&self.header).map_err(|e| NnError::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(1 + self.extra.len() as u64).to_le_bytes())?;
        for block in std::iter::once(&self.params).chain(&self.extra) {
            w.write_all(&(block.len() as u64).to_le_bytes())?;
            for v in block {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("not a network checkpoint".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Format(format!("unsupported checkpoint version {version}")));
        }
        let read_u64 = |r: &mut dyn Read| -> Result<u64, NnError> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let hlen = read_u64(r)? as usize;
        let mut header = vec![0u8; hlen];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header).map_err(|e| NnError::Format(e.to_string()))?;
        let blocks = read_u64(r)? as usize;
        let mut data = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            let n = read_u64(r)? as usize;
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            data.push(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect::<Vec<f64>>(),
            );
        }
        if data.is_empty() {
            return Err(NnError::Format("missing parameter block".into()));
        }
        let params = data.remove(0);
        if params.len() != Mlp::<f64>::param_count(&header.dims) {
            return Err(NnError::Format("parameter count does not match layer dims".into()));
        }
        Ok(Checkpoint {
            header,
            params,
            extra: data,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NnError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NnError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Scalar probe loss `Σ c ⊙ output` over a batch.
    fn probe_loss(net: &Mlp<f64>, x: &[f64], batch: usize, c: &[f64]) -> f64 {
        let mut ws = Workspace::default();
        net.forward_batch(x, batch, &mut ws).iter().zip(c).map(|(o, c)| o * c).sum()
    }

    fn check_gradients(net: &Mlp<f64>, r: &mut ChaCha8Rng, batch: usize, per_layer: usize) {
        let x: Vec<f64> = (0..batch * net.d_in()).map(|_| r.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..batch * net.d_out()).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut ws = Workspace::default();
        net.forward_batch(&x, batch, &mut ws);
        let mut grad = vec![0.0; net.params.len()];
        net.backward(&mut ws, &c, &mut grad);
        let h = 1e-5;
        let layers = net.dims.len() - 1;
        for l in 0..layers {
            let (wo, bo) = net.layer_offsets(l);
            let end = bo + net.dims[l + 1];
            let mut picks: Vec<usize> = (0..per_layer).map(|_| r.random_range(wo..end)).collect();
            if l == layers - 1 {
                // Weights and biases feeding every head.
                for head in 0..net.heads.len() {
                    let col = net.head_range(head).start;
                    picks.push(wo + col);
                    picks.push(bo + col);
                }
            }
            for p in picks {
                let mut plus = net.clone();
                plus.params[p] += h;
                let mut minus = net.clone();
                minus.params[p] -= h;
                let fd = (probe_loss(&plus, &x, batch, &c) - probe_loss(&minus, &x, batch, &c)) / (2.0 * h);
                let err = (fd - grad[p]).abs() / fd.abs().max(grad[p].abs()).max(1e-6);
                assert!(err < 1e-4, "layer {l} param {p}: analytic {} numeric {fd}", grad[p]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(0);
        for _ in 0..20 {
            let net = Mlp::<f64>::new(&[8, 256, 256, 6], &[2, 4], &mut r);
            check_gradients(&net, &mut r, 3, 25);
        }
        let small = Mlp::<f64>::new(&[5, 7, 6, 4], &[1, 3], &mut r);
        check_gradients(&small, &mut r, 4, Mlp::<f64>::param_count(&small.dims));
    }

    #[test]
    fn zero_weights_output_biases() {
        let mut net = Mlp::<f64>::new(&[3, 4, 2], &[1, 1], &mut rng(1));
        let (_, bo) = net.layer_offsets(1);
        net.params.iter_mut().for_each(|p| *p = 0.0);
        net.params[bo] = 0.7;
        net.params[bo + 1] = -0.2;
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.7, -0.2]);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let net = Mlp::<f64>::new(&[3, 4, 2], &[2], &mut rng(1));
        assert!(matches!(net.forward(&[1.0]), Err(NnError::Dimension { expected: 3, got: 1 })));
        let out = net.forward(&[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(out.len(), 2);
    }

    struct Regression {
        x: Vec<f64>,
        batch: Vec<f64>,
    }

    impl Objective<f64> for Regression {
        fn inputs(&mut self, idx: &[usize], _rng: &mut ChaCha8Rng, out: &mut Vec<f64>) -> usize {
            self.batch = idx.iter().map(|&i| self.x[i]).collect();
            out.extend(&self.batch);
            idx.len()
        }

        fn loss_grad(&mut self, output: &[f64], grad: &mut [f64]) -> f64 {
            let n = output.len() as f64;
            let mut loss = 0.0;
            for ((o, x), g) in output.iter().zip(&self.batch).zip(grad.iter_mut()) {
                let e = o - 2.0 * x;
                loss += e * e / n;
                *g = 2.0 * e / n;
            }
            loss
        }
    }

    #[test]
    fn fits_linear_map() {
        let mut r = rng(2);
        let x: Vec<f64> = (0..1000).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut net = Mlp::<f64>::new(&[1, 32, 32, 1], &[1], &mut r);
        let mut opt = Adam::new(net.params.len(), 1e-3);
        let cfg = TrainConfig {
            epochs: 1000,
            batch_size: 512,
            learning_rate: 1e-3,
        };
        let mut obj = Regression { x: x.clone(), batch: vec![] };
        let losses = train(&mut net, &mut opt, &mut obj, &BatchSchedule::Standard { n: 1000 }, &cfg, &mut r);
        assert!(losses.iter().all(|l| l.is_finite()));
        // Closed-form target y = 2x.
        let mse: f64 = x
            .iter()
            .map(|&v| (net.forward(&[v]).unwrap()[0] - 2.0 * v).powi(2))
            .sum::<f64>()
            / x.len() as f64;
        assert!(mse < 1e-4, "mse {mse}");
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let mut r = rng(3);
        let mut net = Mlp::<f64>::new(&[1, 8, 1], &[1], &mut r);
        let before = net.clone();
        let mut opt = Adam::new(net.params.len(), 0.0);
        let cfg = TrainConfig { epochs: 5, batch_size: 4, learning_rate: 0.0 };
        let mut obj = Regression { x: vec![0.1, 0.2, 0.3], batch: vec![] };
        train(&mut net, &mut opt, &mut obj, &BatchSchedule::Standard { n: 3 }, &cfg, &mut r);
        assert_eq!(net, before);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut r = rng(4);
            let mut net = Mlp::<f32>::new(&[1, 16, 1], &[1], &mut r);
            let mut opt = Adam::new(net.params.len(), 1e-3);
            struct Obj(Vec<f32>);
            impl Objective<f32> for Obj {
                fn inputs(&mut self, idx: &[usize], _: &mut ChaCha8Rng, out: &mut Vec<f32>) -> usize {
                    out.extend(idx.iter().map(|&i| i as f32 / 10.0));
                    self.0 = idx.iter().map(|&i| i as f32 / 5.0).collect();
                    idx.len()
                }
                fn loss_grad(&mut self, o: &[f32], g: &mut [f32]) -> f64 {
                    for ((o, t), g) in o.iter().zip(&self.0).zip(g.iter_mut()) {
                        *g = o - t;
                    }
                    0.0
                }
            }
            let cfg = TrainConfig { epochs: 20, batch_size: 3, learning_rate: 1e-2 };
            train(&mut net, &mut opt, &mut Obj(vec![]), &BatchSchedule::Standard { n: 10 }, &cfg, &mut r);
            net.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn balanced_batches_are_half_new() {
        let schedule = BatchSchedule::Balanced {
            new: (0..300).collect(),
            old: (300..2000).collect(),
        };
        let mut r = rng(5);
        let (mut new, mut total) = (0usize, 0usize);
        for _ in 0..10 {
            for b in schedule.epoch_batches(64, &mut r) {
                new += b.iter().filter(|&&i| i < 300).count();
                total += b.len();
            }
        }
        let frac = new as f64 / total as f64;
        assert!((frac - 0.5).abs() <= 0.05, "{frac}");
    }

    #[test]
    fn small_dataset_is_one_batch() {
        let b = BatchSchedule::Standard { n: 100 }.epoch_batches(512, &mut rng(6));
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 100);
    }

    #[test]
    fn normalizer_round_trip_and_range() {
        let mut r = rng(7);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![r.random_range(-5.0..7.0), r.random_range(0.2..0.5), 3.0])
            .collect();
        let n = Normalizer::fit(3, rows.iter().map(|v| v.as_slice()));
        assert_eq!(n.scale[1], 1.0);
        assert_eq!(n.scale[2], 1.0);
        for v in &rows {
            let z = n.normalize(v);
            assert!(z[0] >= 0.0 && z[0] <= 1.0);
            for (a, b) in n.denormalize(&z).iter().zip(v) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn embedding_properties() {
        let e0 = sinusoidal_embed(0, 12);
        for i in 0..6 {
            assert_eq!(e0[2 * i], 0.0);
            assert_eq!(e0[2 * i + 1], 1.0);
        }
        assert_eq!(sinusoidal_embed(37, 12), sinusoidal_embed(37, 12));
        let all: Vec<Vec<f64>> = (1..=100).map(|t| sinusoidal_embed(t, 12)).collect();
        for e in &all {
            assert!(e.iter().all(|v| v.abs() <= 1.0));
        }
        let mut min_gap = f64::INFINITY;
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let gap = all[i].iter().zip(&all[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                min_gap = min_gap.min(gap);
            }
        }
        assert!(min_gap > 1e-6);
        // Frequency spacing endpoints: the last pair turns at 1/10000 rad per step.
        let e = sinusoidal_embed(1, 12);
        assert!((e[0] - 1f64.sin()).abs() < 1e-15);
        assert!((e[10] - 1e-4f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = Mlp::<f64>::new(&[4, 6, 3], &[1, 2], &mut rng(8));
        let meta = serde_json::json!({"controller": "Pick", "shift": [0.1, 1e-300]});
        let ck = Checkpoint::from_net(&net, meta, vec![vec![1.5, -0.25]]);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.net::<f64>(), net);
        buf[0] = b'X';
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}
