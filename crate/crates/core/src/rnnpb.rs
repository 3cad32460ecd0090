//! Recurrent network with parametric bias (PB) units.
//!
//! One hidden layer of sigmoid units is fed by the current input frame, the
//! PB vector and the context units produced at the previous step. The output
//! layer predicts the next input frame and the next context. A single set of
//! shared weights stores every learned pattern; the pattern is selected by its
//! PB vector.
//!
//! Training mixes observed frames with the network's own predictions
//! according to `teacher_forcing`; the default is fully closed-loop, so the
//! training error is the error of free generation. Gradients flow through the
//! context units and through the fed-back predictions (back-propagation
//! through time). Recognition reuses the same gradient but only moves the PB
//! potentials. Generation is closed-loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, sigmoid, Scalar};

/// Initial value of every context unit.
pub const CONTEXT_INIT: f64 = 0.5;

/// Half-width of the uniform weight initialization interval.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub io_dim: usize,
    pub pb_dim: usize,
    pub context_dim: usize,
    pub hidden_dim: usize,
    pub learn_rate_w: f64,
    pub learn_rate_pb: f64,
    pub max_epochs: usize,
    pub target_mse: f64,
    pub recog_iters: usize,
    /// Step size used by recognition; defaults to `learn_rate_pb` when absent.
    pub recog_rate: Option<f64>,
    /// Share of the observed frame in each network input after t = 0; the
    /// rest is the network's own previous prediction. 1.0 is pure teacher
    /// forcing, 0.0 is fully closed-loop.
    pub teacher_forcing: f64,
    /// Largest L2 norm of one weight step; longer steps are scaled down.
    pub max_step: Option<f64>,
    pub rng_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            io_dim: 6,
            pb_dim: 4,
            context_dim: 25,
            hidden_dim: 60,
            learn_rate_w: 0.1,
            learn_rate_pb: 1.0,
            max_epochs: 5000,
            target_mse: 1e-3,
            recog_iters: 300,
            recog_rate: None,
            teacher_forcing: 0.0,
            max_step: None,
            rng_seed: 1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.io_dim, self.pb_dim, self.context_dim, self.hidden_dim];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("network dimensions must be positive: {dims:?}")));
        }
        let rates = [self.learn_rate_w, self.learn_rate_pb, self.recog_rate()];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!("learning rates must be finite and >= 0: {rates:?}")));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return Err(Error::Config(format!("teacher_forcing must lie in [0, 1], got {}", self.teacher_forcing)));
        }
        if let Some(m) = self.max_step.filter(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Config(format!("max_step must be positive, got {m}")));
        }
        if !(self.target_mse.is_finite() && self.target_mse > 0.0) {
            return Err(Error::Config(format!("target_mse must be positive, got {}", self.target_mse)));
        }
        Ok(())
    }

    pub fn recog_rate(&self) -> f64 {
        self.recog_rate.unwrap_or(self.learn_rate_pb)
    }

    pub fn input_dim(&self) -> usize {
        self.io_dim + self.pb_dim + self.context_dim
    }
}

/// A `steps x dim` row-major matrix of channel values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channels<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Channels<T> {
    pub fn new(dim: usize, data: Vec<T>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "channel data is not a whole number of rows");
        Channels { dim, data }
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.as_ref().len(), dim, "ragged channel rows");
            data.extend_from_slice(r.as_ref());
        }
        Channels { dim, data }
    }

    pub fn steps(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[T]) {
        assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    /// Mean squared difference over all rows and channels.
    pub fn mse(&self, other: &Channels<T>) -> T {
        assert_eq!(self.data.len(), other.data.len(), "mse over differently shaped channels");
        if self.data.is_empty() {
            return T::zero();
        }
        let sse: T = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum();
        sse / T::of(self.data.len() as f64)
    }
}

/// Parametric-bias vector, always the sigmoid of its internal potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbVector<T>(pub Vec<T>);

impl<T: Scalar> PbVector<T> {
    pub fn from_potentials(u: &[T]) -> Self {
        PbVector(u.iter().map(|&x| sigmoid(x)).collect())
    }

    pub fn neutral(dim: usize) -> Self {
        PbVector(vec![T::half(); dim])
    }

    pub fn distance(&self, other: &PbVector<T>) -> T {
        crate::scalar::euclidean(&self.0, &other.0)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetWeights<T> {
    pub io_dim: usize,
    pub pb_dim: usize,
    pub context_dim: usize,
    pub hidden_dim: usize,
    /// `hidden x (io + pb + context)`, row-major.
    pub w_in: Vec<T>,
    pub b_hidden: Vec<T>,
    /// `io x hidden`
    pub w_out: Vec<T>,
    pub b_out: Vec<T>,
    /// `context x hidden`
    pub w_ctx: Vec<T>,
    pub b_ctx: Vec<T>,
}

/// Output of a single network step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    pub prediction: Vec<T>,
    pub context: Vec<T>,
    pub hidden: Vec<T>,
}

impl<T: Scalar> NetWeights<T> {
    pub fn zeros(cfg: &NetConfig) -> Self {
        let h = cfg.hidden_dim;
        NetWeights {
            io_dim: cfg.io_dim,
            pb_dim: cfg.pb_dim,
            context_dim: cfg.context_dim,
            hidden_dim: h,
            w_in: vec![T::zero(); h * cfg.input_dim()],
            b_hidden: vec![T::zero(); h],
            w_out: vec![T::zero(); cfg.io_dim * h],
            b_out: vec![T::zero(); cfg.io_dim],
            w_ctx: vec![T::zero(); cfg.context_dim * h],
            b_ctx: vec![T::zero(); cfg.context_dim],
        }
    }

    /// Uniform draws from `[-0.1, 0.1]` using a ChaCha stream seeded by `cfg.rng_seed`.
    pub fn init(cfg: &NetConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut w = Self::zeros(cfg);
        for p in w.params_mut() {
            *p = T::of(rng.gen_range(-INIT_RANGE..=INIT_RANGE));
        }
        w
    }

    pub fn input_dim(&self) -> usize {
        self.io_dim + self.pb_dim + self.context_dim
    }

    pub fn matches(&self, cfg: &NetConfig) -> bool {
        self.io_dim == cfg.io_dim
            && self.pb_dim == cfg.pb_dim
            && self.context_dim == cfg.context_dim
            && self.hidden_dim == cfg.hidden_dim
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn num_params(&self) -> usize {
        self.w_in.len() + self.b_hidden.len() + self.w_out.len() + self.b_out.len() + self.w_ctx.len() + self.b_ctx.len()
    }

    /// All parameters in a fixed order (input, hidden bias, output, output bias, context, context bias).
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.w_in
            .iter()
            .chain(&self.b_hidden)
            .chain(&self.w_out)
            .chain(&self.b_out)
            .chain(&self.w_ctx)
            .chain(&self.b_ctx)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.w_in
            .iter_mut()
            .chain(self.b_hidden.iter_mut())
            .chain(self.w_out.iter_mut())
            .chain(self.b_out.iter_mut())
            .chain(self.w_ctx.iter_mut())
            .chain(self.b_ctx.iter_mut())
    }

    /// One network step: hidden = sigmoid(W_in [x; pb; c] + b), outputs = sigmoid(affine(hidden)).
    pub fn forward_step(&self, x: &[T], pb: &PbVector<T>, context: &[T]) -> StepOutput<T> {
        assert_eq!(x.len(), self.io_dim);
        assert_eq!(pb.0.len(), self.pb_dim);
        assert_eq!(context.len(), self.context_dim);
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(x);
        input.extend_from_slice(&pb.0);
        input.extend_from_slice(context);
        let mut hidden = vec![T::zero(); self.hidden_dim];
        let mut prediction = vec![T::zero(); self.io_dim];
        let mut next_ctx = vec![T::zero(); self.context_dim];
        self.step_into(&input, &mut hidden, &mut prediction, &mut next_ctx);
        StepOutput {
            prediction,
            context: next_ctx,
            hidden,
        }
    }

    #[inline]
    fn step_into(&self, input: &[T], hidden: &mut [T], out: &mut [T], ctx: &mut [T]) {
        let n_in = self.input_dim();
        for (k, h) in hidden.iter_mut().enumerate() {
            *h = sigmoid(self.b_hidden[k] + dot(&self.w_in[k * n_in..(k + 1) * n_in], input));
        }
        let nh = self.hidden_dim;
        for (i, o) in out.iter_mut().enumerate() {
            *o = sigmoid(self.b_out[i] + dot(&self.w_out[i * nh..(i + 1) * nh], hidden));
        }
        for (j, c) in ctx.iter_mut().enumerate() {
            *c = sigmoid(self.b_ctx[j] + dot(&self.w_ctx[j * nh..(j + 1) * nh], hidden));
        }
    }

    /// Closed-loop rollout: `x0` is fed at t = 0, afterwards each prediction is the next input.
    /// Returns `steps` predicted frames.
    pub fn generate(&self, pb: &PbVector<T>, x0: &[T], steps: usize) -> Channels<T> {
        assert_eq!(x0.len(), self.io_dim);
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(x0);
        input.extend_from_slice(&pb.0);
        input.extend(std::iter::repeat(T::of(CONTEXT_INIT)).take(self.context_dim));
        let mut hidden = vec![T::zero(); self.hidden_dim];
        let mut out = vec![T::zero(); self.io_dim];
        let mut ctx = vec![T::zero(); self.context_dim];
        let mut result = Channels::new(self.io_dim, Vec::with_capacity(steps * self.io_dim));
        let ctx_at = self.io_dim + self.pb_dim;
        for _ in 0..steps {
            self.step_into(&input, &mut hidden, &mut out, &mut ctx);
            result.push_row(&out);
            input[..self.io_dim].copy_from_slice(&out);
            input[ctx_at..].copy_from_slice(&ctx);
        }
        result
    }

    /// Regenerates a whole pattern of `num_steps` frames: `x0` followed by
    /// `num_steps - 1` closed-loop predictions.
    pub fn regenerate(&self, pb: &PbVector<T>, x0: &[T], num_steps: usize) -> Channels<T> {
        let mut pattern = Channels::new(self.io_dim, x0.to_vec());
        if num_steps > 1 {
            let tail = self.generate(pb, x0, num_steps - 1);
            pattern.data.extend_from_slice(tail.as_slice());
        }
        pattern
    }
}

/// Gradient buffers with the same layout as [`NetWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: NetWeights<T>,
    /// One entry per sequence: dE/du for its PB potentials.
    pub pb: Vec<Vec<T>>,
}

/// Forward activations of one pass over a sequence.
#[derive(Debug, Default)]
struct Trace<T> {
    steps: usize,
    forcing: T,
    inputs: Vec<T>,
    hidden: Vec<T>,
    outputs: Vec<T>,
    contexts: Vec<T>,
}

/// Scratch space reused across sequences and epochs.
#[derive(Debug, Default)]
struct Workspace<T> {
    trace: Trace<T>,
    grad_hidden: Vec<T>,
    delta_hidden: Vec<T>,
    delta_out: Vec<T>,
    delta_ctx: Vec<T>,
    grad_input: Vec<T>,
    grad_ctx_next: Vec<T>,
    grad_x_next: Vec<T>,
}

impl<T: Scalar> NetWeights<T> {
    /// Runs the net along `seq` predicting frames 1.. from frame 0; returns
    /// the summed squared prediction error. After t = 0 the input frame is
    /// `forcing * observed + (1 - forcing) * previous prediction`.
    fn forward_trace(&self, seq: &Channels<T>, pb: &[T], forcing: T, tr: &mut Trace<T>) -> T {
        let steps = seq.steps().saturating_sub(1);
        let (n_in, nh, io, nc) = (self.input_dim(), self.hidden_dim, self.io_dim, self.context_dim);
        let feedback = T::one() - forcing;
        tr.steps = steps;
        tr.forcing = forcing;
        tr.inputs.resize(steps * n_in, T::zero());
        tr.hidden.resize(steps * nh, T::zero());
        tr.outputs.resize(steps * io, T::zero());
        tr.contexts.resize((steps + 1) * nc, T::zero());
        tr.contexts[..nc].fill(T::of(CONTEXT_INIT));
        let mut sse = T::zero();
        for t in 0..steps {
            let (ctx_prev, ctx_next) = tr.contexts[t * nc..(t + 2) * nc].split_at_mut(nc);
            let (done, rest) = tr.outputs.split_at_mut(t * io);
            let input = &mut tr.inputs[t * n_in..(t + 1) * n_in];
            if t == 0 {
                input[..io].copy_from_slice(seq.row(0));
            } else {
                let prev = &done[(t - 1) * io..];
                for ((x, obs), own) in input[..io].iter_mut().zip(seq.row(t)).zip(prev) {
                    *x = forcing * *obs + feedback * *own;
                }
            }
            input[io..io + self.pb_dim].copy_from_slice(pb);
            input[io + self.pb_dim..].copy_from_slice(ctx_prev);
            let hidden = &mut tr.hidden[t * nh..(t + 1) * nh];
            let out = &mut rest[..io];
            self.step_into(input, hidden, out, ctx_next);
            for (o, target) in out.iter().zip(seq.row(t + 1)) {
                let e = *o - *target;
                sse += e * e;
            }
        }
        sse
    }

    /// Back-propagation through time for the trace in `ws`, including the
    /// prediction feedback path. Accumulates dE/d(pb values) into `grad_pb`,
    /// and weight gradients into `grads` when given. E is half the summed
    /// squared error.
    fn backward(&self, seq: &Channels<T>, ws: &mut Workspace<T>, mut grads: Option<&mut NetWeights<T>>, grad_pb: &mut [T]) {
        let (n_in, nh, io, nc, np) = (self.input_dim(), self.hidden_dim, self.io_dim, self.context_dim, self.pb_dim);
        let one = T::one();
        ws.grad_hidden.resize(nh, T::zero());
        ws.delta_hidden.resize(nh, T::zero());
        ws.delta_out.resize(io, T::zero());
        ws.delta_ctx.resize(nc, T::zero());
        ws.grad_input.resize(n_in, T::zero());
        ws.grad_ctx_next.clear();
        ws.grad_ctx_next.resize(nc, T::zero());
        ws.grad_x_next.clear();
        ws.grad_x_next.resize(io, T::zero());
        let tr = &ws.trace;
        let feedback = one - tr.forcing;
        let closed = feedback != T::zero();
        for t in (0..tr.steps).rev() {
            let out = &tr.outputs[t * io..(t + 1) * io];
            let target = seq.row(t + 1);
            for i in 0..io {
                let g = out[i] - target[i] + feedback * ws.grad_x_next[i];
                ws.delta_out[i] = g * out[i] * (one - out[i]);
            }
            let ctx = &tr.contexts[(t + 1) * nc..(t + 2) * nc];
            for j in 0..nc {
                ws.delta_ctx[j] = ws.grad_ctx_next[j] * ctx[j] * (one - ctx[j]);
            }
            ws.grad_hidden.fill(T::zero());
            for i in 0..io {
                axpy(ws.delta_out[i], &self.w_out[i * nh..(i + 1) * nh], &mut ws.grad_hidden);
            }
            for j in 0..nc {
                axpy(ws.delta_ctx[j], &self.w_ctx[j * nh..(j + 1) * nh], &mut ws.grad_hidden);
            }
            let hidden = &tr.hidden[t * nh..(t + 1) * nh];
            for k in 0..nh {
                ws.delta_hidden[k] = ws.grad_hidden[k] * hidden[k] * (one - hidden[k]);
            }
            let input = &tr.inputs[t * n_in..(t + 1) * n_in];
            if let Some(g) = grads.as_deref_mut() {
                for i in 0..io {
                    axpy(ws.delta_out[i], hidden, &mut g.w_out[i * nh..(i + 1) * nh]);
                    g.b_out[i] += ws.delta_out[i];
                }
                for j in 0..nc {
                    axpy(ws.delta_ctx[j], hidden, &mut g.w_ctx[j * nh..(j + 1) * nh]);
                    g.b_ctx[j] += ws.delta_ctx[j];
                }
                for k in 0..nh {
                    axpy(ws.delta_hidden[k], input, &mut g.w_in[k * n_in..(k + 1) * n_in]);
                    g.b_hidden[k] += ws.delta_hidden[k];
                }
            }
            // The frame slice is only needed when predictions are fed back.
            let from = if closed { 0 } else { io };
            ws.grad_input[from..].fill(T::zero());
            for k in 0..nh {
                axpy(ws.delta_hidden[k], &self.w_in[k * n_in + from..(k + 1) * n_in], &mut ws.grad_input[from..]);
            }
            for (acc, g) in grad_pb.iter_mut().zip(&ws.grad_input[io..io + np]) {
                *acc += *g;
            }
            ws.grad_ctx_next.copy_from_slice(&ws.grad_input[io + np..]);
            if closed {
                ws.grad_x_next.copy_from_slice(&ws.grad_input[..io]);
            }
        }
    }

    /// Loss (half summed squared error over all sequences) and its gradient
    /// with respect to every weight and every sequence's PB potentials.
    pub fn loss_and_gradients(&self, batch: &[Channels<T>], potentials: &[Vec<T>], forcing: T) -> (T, Gradients<T>) {
        assert_eq!(batch.len(), potentials.len());
        let mut ws = Workspace::default();
        let mut gw = NetWeights {
            w_in: vec![T::zero(); self.w_in.len()],
            b_hidden: vec![T::zero(); self.b_hidden.len()],
            w_out: vec![T::zero(); self.w_out.len()],
            b_out: vec![T::zero(); self.b_out.len()],
            w_ctx: vec![T::zero(); self.w_ctx.len()],
            b_ctx: vec![T::zero(); self.b_ctx.len()],
            ..self.clone()
        };
        let mut loss = T::zero();
        let mut gpb = Vec::with_capacity(batch.len());
        for (seq, u) in batch.iter().zip(potentials) {
            let pb = PbVector::from_potentials(u);
            loss += self.forward_trace(seq, &pb.0, forcing, &mut ws.trace) * T::half();
            let mut g = vec![T::zero(); self.pb_dim];
            self.backward(seq, &mut ws, Some(&mut gw), &mut g);
            for (gi, p) in g.iter_mut().zip(&pb.0) {
                *gi *= *p * (T::one() - *p);
            }
            gpb.push(g);
        }
        (loss, Gradients { weights: gw, pb: gpb })
    }

    /// Loss only, for finite-difference checks.
    pub fn loss(&self, batch: &[Channels<T>], potentials: &[Vec<T>], forcing: T) -> T {
        let mut tr = Trace::default();
        batch
            .iter()
            .zip(potentials)
            .map(|(seq, u)| self.forward_trace(seq, &PbVector::from_potentials(u).0, forcing, &mut tr) * T::half())
            .sum()
    }

    /// Mean squared prediction error of a sequence under the given PB.
    pub fn prediction_mse(&self, seq: &Channels<T>, pb: &PbVector<T>, forcing: T) -> T {
        let mut tr = Trace::default();
        let sse = self.forward_trace(seq, &pb.0, forcing, &mut tr);
        let n = tr.steps * self.io_dim;
        if n == 0 {
            T::zero()
        } else {
            sse / T::of(n as f64)
        }
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub weights: NetWeights<T>,
    pub potentials: Vec<Vec<T>>,
    pub pbs: Vec<PbVector<T>>,
    pub final_mse: T,
    pub initial_mse: T,
    pub epochs: usize,
}

fn batch_steps<T: Scalar>(batch: &[Channels<T>]) -> usize {
    batch.iter().map(|s| s.steps().saturating_sub(1)).sum()
}

/// Batch gradient descent over all sequences with shared weights and
/// per-sequence PB potentials.
///
/// Each epoch sums weight gradients over time and averages them over
/// sequences; each sequence's PB potentials move by their own time-summed
/// gradient. Stops once the mean per-step MSE reaches `cfg.target_mse` or
/// after `cfg.max_epochs` updates. The returned MSE belongs to the returned
/// weights and PBs.
pub fn train<T: Scalar>(
    weights: &NetWeights<T>,
    batch: &[Channels<T>],
    potentials: &[Vec<T>],
    cfg: &NetConfig,
) -> Result<TrainOutcome<T>> {
    if batch.is_empty() {
        return Err(Error::Contract("train called with an empty batch".into()));
    }
    assert_eq!(batch.len(), potentials.len(), "one PB potential vector per sequence");
    let mut w = weights.clone();
    let mut u: Vec<Vec<T>> = potentials.to_vec();
    let n_values = T::of((batch_steps(batch) * w.io_dim).max(1) as f64);
    let lr_w = T::of(cfg.learn_rate_w) / T::of(batch.len() as f64);
    let lr_pb = T::of(cfg.learn_rate_pb);
    let target = T::of(cfg.target_mse);
    let forcing = T::of(cfg.teacher_forcing);
    let diverged = |epoch| Error::Divergence {
        epoch,
        learn_rate_w: cfg.learn_rate_w,
        learn_rate_pb: cfg.learn_rate_pb,
    };

    let mut ws = Workspace::default();
    let mut grad = NetWeights::zeros(cfg);
    let mut gpb = vec![vec![T::zero(); w.pb_dim]; batch.len()];
    let mut initial_mse = None;
    let mut epoch = 0;
    loop {
        for g in grad.params_mut() {
            *g = T::zero();
        }
        let mut sse = T::zero();
        for ((seq, us), g) in batch.iter().zip(&u).zip(gpb.iter_mut()) {
            let pb = PbVector::from_potentials(us);
            sse += w.forward_trace(seq, &pb.0, forcing, &mut ws.trace);
            g.fill(T::zero());
            w.backward(seq, &mut ws, Some(&mut grad), g);
            for (gi, p) in g.iter_mut().zip(&pb.0) {
                *gi *= *p * (T::one() - *p);
            }
        }
        let mse = sse / n_values;
        if !mse.is_finite() {
            return Err(diverged(epoch));
        }
        let initial = *initial_mse.get_or_insert(mse);
        if mse <= target || epoch >= cfg.max_epochs {
            let pbs = u.iter().map(|x| PbVector::from_potentials(x)).collect();
            return Ok(TrainOutcome {
                weights: w,
                potentials: u,
                pbs,
                final_mse: mse,
                initial_mse: initial,
                epochs: epoch,
            });
        }
        let mut step = lr_w;
        if let Some(max) = cfg.max_step {
            let norm = grad.params().map(|g| *g * *g).sum::<T>().sqrt() * lr_w;
            if norm > T::of(max) {
                step = step * T::of(max) / norm;
            }
        }
        for (p, g) in w.params_mut().zip(grad.params()) {
            *p -= step * *g;
        }
        for (us, g) in u.iter_mut().zip(&gpb) {
            axpy(-lr_pb, g, us);
        }
        if !w.is_finite() {
            return Err(diverged(epoch));
        }
        epoch += 1;
    }
}

/// Result of [`recognize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Recognition<T> {
    pub pb: PbVector<T>,
    pub potentials: Vec<T>,
    pub residual_mse: T,
}

/// Infers the PB vector of `seq` by gradient descent on its prediction
/// error with frozen weights, starting from neutral PB (0.5).
pub fn recognize<T: Scalar>(weights: &NetWeights<T>, seq: &Channels<T>, cfg: &NetConfig) -> Result<Recognition<T>> {
    let mut u = vec![T::zero(); weights.pb_dim];
    let rate = T::of(cfg.recog_rate());
    let forcing = T::of(cfg.teacher_forcing);
    let n_values = T::of((seq.steps().saturating_sub(1) * weights.io_dim).max(1) as f64);
    let mut ws = Workspace::default();
    let mut g = vec![T::zero(); weights.pb_dim];
    let diverged = |epoch| Error::Divergence {
        epoch,
        learn_rate_w: 0.0,
        learn_rate_pb: cfg.recog_rate(),
    };
    for iter in 0..cfg.recog_iters {
        let pb = PbVector::from_potentials(&u);
        let sse = weights.forward_trace(seq, &pb.0, forcing, &mut ws.trace);
        if !sse.is_finite() {
            return Err(diverged(iter));
        }
        g.fill(T::zero());
        weights.backward(seq, &mut ws, None, &mut g);
        for ((ui, gi), p) in u.iter_mut().zip(&g).zip(&pb.0) {
            *ui -= rate * *gi * *p * (T::one() - *p);
        }
    }
    let pb = PbVector::from_potentials(&u);
    let residual_mse = weights.forward_trace(seq, &pb.0, forcing, &mut ws.trace) / n_values;
    if !residual_mse.is_finite() {
        return Err(diverged(cfg.recog_iters));
    }
    Ok(Recognition {
        pb,
        potentials: u,
        residual_mse,
    })
}

/// Largest elementwise relative difference `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T], floor: T) -> T {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (*a - *n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(T::zero(), T::max)
}

/// Step used by the central finite differences in [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative gradient errors; keeps near-zero
/// gradients from turning round-off into large relative errors.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Analytic and finite-difference gradients of [`NetWeights::loss`] for
/// one sequence, flattened as all weights followed by the PB potentials.
pub fn numeric_and_analytic_gradients<T: Scalar>(
    weights: &NetWeights<T>,
    seq: &Channels<T>,
    potentials: &[T],
    forcing: T,
) -> (Vec<T>, Vec<T>) {
    let batch = std::slice::from_ref(seq);
    let u = vec![potentials.to_vec()];
    let (_, grads) = weights.loss_and_gradients(batch, &u, forcing);
    let mut analytic: Vec<T> = grads.weights.params().copied().collect();
    analytic.extend_from_slice(&grads.pb[0]);

    let h = T::of(FD_STEP);
    let two_h = h + h;
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = weights.clone();
    for i in 0..weights.num_params() {
        let orig = *weights.params().nth(i).unwrap();
        *probe.params_mut().nth(i).unwrap() = orig + h;
        let plus = probe.loss(batch, &u, forcing);
        *probe.params_mut().nth(i).unwrap() = orig - h;
        let minus = probe.loss(batch, &u, forcing);
        *probe.params_mut().nth(i).unwrap() = orig;
        numeric.push((plus - minus) / two_h);
    }
    for i in 0..potentials.len() {
        let mut up = u.clone();
        up[0][i] = potentials[i] + h;
        let plus = weights.loss(batch, &up, forcing);
        up[0][i] = potentials[i] - h;
        let minus = weights.loss(batch, &up, forcing);
        numeric.push((plus - minus) / two_h);
    }
    (numeric, analytic)
}

/// Compares back-propagated gradients (weights and PB potentials) against
/// central finite differences; returns the maximum relative error.
pub fn gradient_check<T: Scalar>(weights: &NetWeights<T>, seq: &Channels<T>, potentials: &[T], forcing: T) -> T {
    let (numeric, analytic) = numeric_and_analytic_gradients(weights, seq, potentials, forcing);
    max_relative_error(&analytic, &numeric, T::of(GRAD_CHECK_FLOOR))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::sine_set;
    use rand::Rng;

    fn small_cfg() -> NetConfig {
        NetConfig {
            io_dim: 2,
            pb_dim: 2,
            context_dim: 3,
            hidden_dim: 5,
            ..Default::default()
        }
    }

    fn random_weights(cfg: &NetConfig, seed: u64, scale: f64) -> NetWeights<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = NetWeights::zeros(cfg);
        for p in w.params_mut() {
            *p = rng.gen_range(-scale..scale);
        }
        w
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = NetConfig::default();
        let a = NetWeights::<f64>::init(&cfg);
        assert_eq!(a, NetWeights::init(&cfg));
        assert_ne!(a, NetWeights::init(&NetConfig { rng_seed: 2, ..cfg.clone() }));
        assert!(a.params().all(|w| w.abs() <= INIT_RANGE));
        assert_eq!(a.num_params(), 60 * 35 + 60 + 6 * 60 + 6 + 25 * 60 + 25);
    }

    #[test]
    fn zero_weights_sit_at_the_sigmoid_midpoint() {
        let cfg = small_cfg();
        let w = NetWeights::<f64>::zeros(&cfg);
        let out = w.forward_step(&[0.3, 0.9], &PbVector::neutral(2), &[0.5; 3]);
        assert!(out.prediction.iter().chain(&out.context).chain(&out.hidden).all(|v| *v == 0.5));
    }

    #[test]
    fn forward_step_matches_direct_formula() {
        let cfg = small_cfg();
        let w = random_weights(&cfg, 3, 1.0);
        let (x, pb, c) = ([0.2, 0.7], PbVector(vec![0.4, 0.6]), [0.1, 0.5, 0.9]);
        let input: Vec<f64> = x.iter().chain(&pb.0).chain(&c).copied().collect();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let hidden: Vec<f64> = (0..5)
            .map(|k| s(w.b_hidden[k] + (0..7).map(|i| w.w_in[k * 7 + i] * input[i]).sum::<f64>()))
            .collect();
        let layer = |m: &[f64], b: &[f64], n: usize| -> Vec<f64> {
            (0..n).map(|i| s(b[i] + (0..5).map(|k| m[i * 5 + k] * hidden[k]).sum::<f64>())).collect()
        };
        let out = w.forward_step(&x, &pb, &c);
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-14);
        assert!(close(&out.hidden, &hidden));
        assert!(close(&out.prediction, &layer(&w.w_out, &w.b_out, 2)));
        assert!(close(&out.context, &layer(&w.w_ctx, &w.b_ctx, 3)));
    }

    #[test]
    fn generate_feeds_predictions_back() {
        let cfg = small_cfg();
        let w = random_weights(&cfg, 4, 1.0);
        let pb = PbVector(vec![0.3, 0.8]);
        let x0 = [0.5, 0.2];
        let g = w.generate(&pb, &x0, 3);
        assert_eq!(g.steps(), 3);
        let s0 = w.forward_step(&x0, &pb, &[CONTEXT_INIT; 3]);
        let s1 = w.forward_step(&s0.prediction, &pb, &s0.context);
        assert_eq!(g.row(0), s0.prediction.as_slice());
        assert_eq!(g.row(1), s1.prediction.as_slice());
        let r = w.regenerate(&pb, &x0, 4);
        assert_eq!(r.steps(), 4);
        assert_eq!(r.row(0), &x0);
        assert_eq!(r.row(3), g.row(2));
        assert_eq!(w.regenerate(&pb, &x0, 1).steps(), 1);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = small_cfg();
        for seed in 0..4 {
            let w = random_weights(&cfg, seed, 1.0);
            let seq = sine_set::<f64>(2, 8, 2).pop().unwrap();
            for forcing in [0.0, 0.5, 1.0] {
                let err = gradient_check(&w, &seq, &[0.3, -0.7], forcing);
                assert!(err < 1e-4, "seed {seed} forcing {forcing}: {err}");
            }
        }
    }

    #[test]
    fn gradient_check_notices_a_wrong_gradient() {
        let cfg = small_cfg();
        let w = random_weights(&cfg, 9, 1.0);
        let seq = sine_set::<f64>(1, 6, 2).pop().unwrap();
        let (numeric, mut analytic) = numeric_and_analytic_gradients(&w, &seq, &[0.1, 0.2], 0.0);
        assert!(max_relative_error(&analytic, &numeric, GRAD_CHECK_FLOOR) < 1e-4);
        analytic[3] *= 1.1;
        assert!(max_relative_error(&analytic, &numeric, GRAD_CHECK_FLOOR) > 1e-2);
    }

    #[test]
    fn zero_weight_rate_leaves_weights_alone() {
        let cfg = NetConfig {
            learn_rate_w: 0.0,
            max_epochs: 20,
            target_mse: 1e-12,
            ..small_cfg()
        };
        let w = NetWeights::<f64>::init(&cfg);
        let batch = sine_set::<f64>(2, 6, 2);
        let out = train(&w, &batch, &vec![vec![0.0; 2]; 2], &cfg).unwrap();
        assert_eq!(out.weights, w);
        assert_eq!(out.epochs, 20);
        assert_ne!(out.potentials, vec![vec![0.0; 2]; 2], "PBs still learn");
    }

    #[test]
    fn max_step_bounds_each_update() {
        let batch = sine_set::<f64>(2, 6, 2);
        let w = random_weights(&small_cfg(), 5, 2.0);
        let one_epoch = |max_step| {
            let cfg = NetConfig {
                learn_rate_w: 5.0,
                max_epochs: 1,
                target_mse: 1e-12,
                max_step,
                ..small_cfg()
            };
            let out = train(&w, &batch, &vec![vec![0.0; 2]; 2], &cfg).unwrap().weights;
            out.params().zip(w.params()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        let free = one_epoch(None);
        assert!(free > 0.01, "{free}");
        assert!((one_epoch(Some(0.01)) - 0.01).abs() < 1e-12);
        assert_eq!(one_epoch(Some(2.0 * free)), free);
    }

    #[test]
    fn training_lowers_the_error() {
        let cfg = NetConfig {
            max_epochs: 300,
            ..Default::default()
        };
        let batch = sine_set::<f64>(3, 12, 6);
        let out = train(&NetWeights::init(&cfg), &batch, &vec![vec![0.0; 4]; 3], &cfg).unwrap();
        assert!(out.final_mse <= out.initial_mse, "{} > {}", out.final_mse, out.initial_mse);
        assert!(out.pbs.iter().flat_map(|p| &p.0).all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn target_reached_stops_early() {
        let cfg = NetConfig {
            target_mse: 1.0,
            ..Default::default()
        };
        let batch = sine_set::<f64>(1, 5, 6);
        let out = train(&NetWeights::init(&cfg), &batch, &[vec![0.0; 4]], &cfg).unwrap();
        assert_eq!(out.epochs, 0);
    }

    #[test]
    fn infinite_rate_diverges() {
        let cfg = NetConfig {
            learn_rate_w: f64::INFINITY,
            ..Default::default()
        };
        let batch = sine_set::<f64>(1, 5, 6);
        let err = train(&NetWeights::init(&cfg), &batch, &[vec![0.0; 4]], &cfg).unwrap_err();
        assert!(err.is_divergence(), "{err}");
    }

    #[test]
    fn recognition_without_iterations_is_neutral() {
        let cfg = NetConfig {
            recog_iters: 0,
            ..Default::default()
        };
        let seq = sine_set::<f64>(1, 5, 6).pop().unwrap();
        let r = recognize(&NetWeights::init(&cfg), &seq, &cfg).unwrap();
        assert_eq!(r.pb, PbVector::neutral(4));
        let w = NetWeights::init(&cfg);
        assert_eq!(r.residual_mse, w.prediction_mse(&seq, &r.pb, cfg.teacher_forcing));
    }

    #[test]
    fn single_precision_tracks_double() {
        let cfg = small_cfg();
        let w64 = random_weights(&cfg, 5, 1.0);
        let w32 = NetWeights::<f32> {
            w_in: w64.w_in.iter().map(|v| *v as f32).collect(),
            b_hidden: w64.b_hidden.iter().map(|v| *v as f32).collect(),
            w_out: w64.w_out.iter().map(|v| *v as f32).collect(),
            b_out: w64.b_out.iter().map(|v| *v as f32).collect(),
            w_ctx: w64.w_ctx.iter().map(|v| *v as f32).collect(),
            b_ctx: w64.b_ctx.iter().map(|v| *v as f32).collect(),
            io_dim: 2,
            pb_dim: 2,
            context_dim: 3,
            hidden_dim: 5,
        };
        let a = w64.generate(&PbVector(vec![0.2, 0.9]), &[0.4, 0.6], 10);
        let b = w32.generate(&PbVector(vec![0.2, 0.9]), &[0.4, 0.6], 10);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - f64::from(*y)).abs() < 1e-5);
        }
    }
}
