//! Gated autoencoder over n-gram windows of contrast-normalized CQT frames.
//!
//! For a context `c` (n frames, linearized oldest first) and a target `x`:
//!
//! ```text
//! m  = tanh(W1 · tanh(W0 · (U c ⊙ V x)))          mapping code
//! x~ = σ(Vᵀ (W0ᵀ W1ᵀ m ⊙ U c))                    reconstruction
//! ```
//!
//! The transposed objective infers `m` from the untouched pair and then
//! reconstructs `shift(x, δ)` from `shift(c, δ)`. Dropout corrupts the context
//! only; the corrupted context is used for both inference and reconstruction.
//!
//! Matrices are stored row-major: `U` is `F × nM`, `V` is `F × M`, `W0` is
//! `H1 × F` and `W1` is `H2 × H1`. A "column" of `U` or `V` is the length-`F`
//! weight vector attached to one input unit.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::{axpy, dot, Real};
use crate::signal::{shift_frames, shift_into, NGramWindow, NUM_BINS};
use crate::{Error, Result};

/// Layer sizes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    /// Context length in frames.
    pub n: usize,
    /// Bins per frame.
    pub num_bins: usize,
    pub factors: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl ModelShape {
    /// 256 factors for n = 8, 512 for n = 16 (32 per context frame), then 128
    /// and 64 mapping units.
    pub fn for_context(n: usize) -> Self {
        Self {
            n,
            num_bins: NUM_BINS,
            factors: 32 * n,
            hidden1: 128,
            hidden2: 64,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n * self.num_bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0
            || self.num_bins == 0
            || self.factors == 0
            || self.hidden1 == 0
            || self.hidden2 == 0
        {
            return Err(Error::InvalidConfig("model dimensions must be positive"));
        }
        Ok(())
    }
}

/// Nonlinearity applied to the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputActivation {
    #[default]
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    /// Weight of `‖U‖² + ‖V‖²`.
    pub l2: f64,
    /// Weight of `Σ|m_i|`.
    pub sparsity: f64,
    /// Weight of `Σ_cols (‖col‖ − mean‖col‖)²`, summed over `U` and `V`.
    pub norm_deviation: f64,
    /// Upper bound on column norms of `U` and `V` after every step.
    pub max_norm: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            sparsity: 1e-4,
            norm_deviation: 1e-4,
            max_norm: 2.0,
        }
    }
}

impl Regularization {
    pub fn none() -> Self {
        Self {
            l2: 0.0,
            sparsity: 0.0,
            norm_deviation: 0.0,
            max_norm: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossConfig {
    pub reg: Regularization,
    pub output: OutputActivation,
}

/// Loss terms of a single window. Penalties are stored unweighted; `total`
/// applies the weights of the [`LossConfig`] used to compute them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub mse: f64,
    pub l2_penalty: f64,
    pub sparsity_penalty: f64,
    pub norm_deviation_penalty: f64,
    pub total: f64,
}

/// Multipliers applied to the linearized context: `0` for dropped units and
/// `1 / (1 − rate)` for kept ones (inverted dropout).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T> {
    scale: Vec<T>,
}

impl<T: Real> DropoutMask<T> {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, len: usize, rate: f64) -> Self {
        let keep = T::of(1.0 / (1.0 - rate));
        let scale = (0..len)
            .map(|_| {
                if rate > 0.0 && rng.gen_bool(rate) {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        Self { scale }
    }

    pub fn from_scale(scale: Vec<T>) -> Self {
        Self { scale }
    }

    pub fn keep_all(len: usize) -> Self {
        Self {
            scale: vec![T::one(); len],
        }
    }

    pub fn scale(&self) -> &[T] {
        &self.scale
    }
}

/// Learnable state plus the seed it was initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct GaeParams<T> {
    shape: ModelShape,
    seed: u64,
    u: Vec<T>,
    v: Vec<T>,
    w0: Vec<T>,
    w1: Vec<T>,
}

/// Gradient buffers with the same layout as [`GaeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub w0: Vec<T>,
    pub w1: Vec<T>,
}

impl<T: Real> Gradient<T> {
    pub fn zeros(shape: &ModelShape) -> Self {
        Self {
            u: vec![T::zero(); shape.factors * shape.input_dim()],
            v: vec![T::zero(); shape.factors * shape.num_bins],
            w0: vec![T::zero(); shape.hidden1 * shape.factors],
            w1: vec![T::zero(); shape.hidden2 * shape.hidden1],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in [
            (&mut self.u, &other.u),
            (&mut self.v, &other.v),
            (&mut self.w0, &other.w0),
            (&mut self.w1, &other.w1),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for m in [&mut self.u, &mut self.v, &mut self.w0, &mut self.w1] {
            m.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.u.iter().chain(&self.v).chain(&self.w0).chain(&self.w1)
    }
}

fn uniform_init<R: Rng, T: Real>(rng: &mut R, len: usize, fan_in: usize, fan_out: usize) -> Vec<T> {
    let s = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    (0..len).map(|_| T::of(rng.gen_range(-s..s))).collect()
}

/// `y = A x` for a row-major `rows × cols` matrix.
fn matvec<T: Real>(a: &[T], cols: usize, x: &[T]) -> Vec<T> {
    a.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

/// `y = Aᵀ x` for a row-major `rows × cols` matrix.
fn matvec_t<T: Real>(a: &[T], cols: usize, x: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); cols];
    for (row, &xi) in a.chunks_exact(cols).zip(x) {
        if xi != T::zero() {
            axpy(xi, row, &mut y);
        }
    }
    y
}

/// `A += a bᵀ`
fn rank1<T: Real>(m: &mut [T], cols: usize, a: &[T], b: &[T]) {
    for (row, &ai) in m.chunks_exact_mut(cols).zip(a) {
        if ai != T::zero() {
            axpy(ai, b, row);
        }
    }
}

fn mul<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| *x * *y).collect()
}

/// `(1/M) ‖target − reconstruction‖²`
pub fn mean_squared_error<T: Real>(target: &[T], reconstruction: &[T]) -> T {
    let sum = target
        .iter()
        .zip(reconstruction)
        .fold(T::zero(), |acc, (y, o)| acc + (*y - *o) * (*y - *o));
    sum / T::of(target.len() as f64)
}

/// Squared-sum of all entries.
pub fn squared_norm<T: Real>(m: &[T]) -> T {
    dot(m, m)
}

/// Euclidean norm of every column of a row-major `rows × cols` matrix.
pub fn column_norms<T: Real>(m: &[T], cols: usize) -> Vec<T> {
    let mut sq = vec![T::zero(); cols];
    for row in m.chunks_exact(cols) {
        for (s, &x) in sq.iter_mut().zip(row) {
            *s += x * x;
        }
    }
    sq.into_iter().map(|s| s.sqrt()).collect()
}

/// `Σ_c (‖col_c‖ − mean)²` for one matrix.
pub fn norm_deviation_penalty<T: Real>(m: &[T], cols: usize) -> T {
    let norms = column_norms(m, cols);
    let mean = norms.iter().fold(T::zero(), |a, &b| a + b) / T::of(cols as f64);
    norms
        .iter()
        .fold(T::zero(), |a, &n| a + (n - mean) * (n - mean))
}

fn norm_deviation_gradient<T: Real>(m: &[T], cols: usize, weight: T, grad: &mut [T]) {
    let norms = column_norms(m, cols);
    let mean = norms.iter().fold(T::zero(), |a, &b| a + b) / T::of(cols as f64);
    // d/dn_c Σ (n_j − µ)² = 2 (n_c − µ), because Σ (n_j − µ) = 0.
    let coef: Vec<T> = norms
        .iter()
        .map(|&n| {
            if n > T::zero() {
                weight * T::of(2.0) * (n - mean) / n
            } else {
                T::zero()
            }
        })
        .collect();
    for (grow, row) in grad.chunks_exact_mut(cols).zip(m.chunks_exact(cols)) {
        for ((g, &x), &c) in grow.iter_mut().zip(row).zip(&coef) {
            *g += c * x;
        }
    }
}

/// Rescales columns whose norm exceeds `max_norm` to exactly `max_norm`.
pub fn project_columns<T: Real>(m: &mut [T], cols: usize, max_norm: f64) {
    if !max_norm.is_finite() {
        return;
    }
    let bound = T::of(max_norm);
    let norms = column_norms(m, cols);
    let scale: Vec<T> = norms
        .iter()
        .map(|&n| if n > bound { bound / n } else { T::one() })
        .collect();
    if scale.iter().all(|&s| s == T::one()) {
        return;
    }
    for row in m.chunks_exact_mut(cols) {
        for (x, &s) in row.iter_mut().zip(&scale) {
            *x *= s;
        }
    }
}

/// Intermediate values of one forward pass, kept for backprop.
struct Trace<T> {
    a: Vec<T>,
    b: Vec<T>,
    h: Vec<T>,
    m: Vec<T>,
    back: Vec<T>,
    g: Vec<T>,
    a_shift: Vec<T>,
    q: Vec<T>,
    o: Vec<T>,
    y: Vec<T>,
}

impl<T: Real> GaeParams<T> {
    /// Uniform `(−s, s)` initialization with `s = sqrt(6 / (fan_in + fan_out))`
    /// per matrix, drawn from a ChaCha8 stream seeded with `seed`.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = shape.input_dim();
        let (f, m, h1, h2) = (shape.factors, shape.num_bins, shape.hidden1, shape.hidden2);
        let u = uniform_init(&mut rng, f * d, d, f);
        let v = uniform_init(&mut rng, f * m, m, f);
        let w0 = uniform_init(&mut rng, h1 * f, f, h1);
        let w1 = uniform_init(&mut rng, h2 * h1, h1, h2);
        Ok(Self {
            shape,
            seed,
            u,
            v,
            w0,
            w1,
        })
    }

    pub fn from_parts(
        shape: ModelShape,
        seed: u64,
        u: Vec<T>,
        v: Vec<T>,
        w0: Vec<T>,
        w1: Vec<T>,
    ) -> Result<Self> {
        shape.validate()?;
        if u.len() != shape.factors * shape.input_dim()
            || v.len() != shape.factors * shape.num_bins
            || w0.len() != shape.hidden1 * shape.factors
            || w1.len() != shape.hidden2 * shape.hidden1
        {
            return Err(Error::ShapeMismatch("parameter lengths do not match shape"));
        }
        Ok(Self {
            shape,
            seed,
            u,
            v,
            w0,
            w1,
        })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }
    pub fn v(&self) -> &[T] {
        &self.v
    }
    pub fn w0(&self) -> &[T] {
        &self.w0
    }
    pub fn w1(&self) -> &[T] {
        &self.w1
    }

    /// Mutable access to all four matrices in `(U, V, W0, W1)` order.
    pub fn matrices_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.u, &mut self.v, &mut self.w0, &mut self.w1]
    }

    pub fn num_params(&self) -> usize {
        self.u.len() + self.v.len() + self.w0.len() + self.w1.len()
    }

    pub fn is_finite(&self) -> bool {
        self.u
            .iter()
            .chain(&self.v)
            .chain(&self.w0)
            .chain(&self.w1)
            .all(|x| x.is_finite())
    }

    pub fn cast<S: Real>(&self) -> GaeParams<S> {
        let c = |m: &[T]| m.iter().map(|x| S::of(x.as_f64())).collect();
        GaeParams {
            shape: self.shape,
            seed: self.seed,
            u: c(&self.u),
            v: c(&self.v),
            w0: c(&self.w0),
            w1: c(&self.w1),
        }
    }

    fn check_window(&self, w: &NGramWindow<'_, T>) -> Result<()> {
        if w.n() != self.shape.n || w.num_bins() != self.shape.num_bins {
            return Err(Error::ShapeMismatch("window does not match model"));
        }
        Ok(())
    }

    fn mapping_from(&self, ctx: &[T], target: &[T]) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
        let a = matvec(&self.u, self.shape.input_dim(), ctx);
        let b = matvec(&self.v, self.shape.num_bins, target);
        let (h, m) = self.code_from(&a, &b);
        (a, b, h, m)
    }

    /// Mapping layers on top of the factor responses.
    fn code_from(&self, a: &[T], b: &[T]) -> (Vec<T>, Vec<T>) {
        let p = mul(a, b);
        let h: Vec<T> = matvec(&self.w0, self.shape.factors, &p)
            .into_iter()
            .map(|z| z.tanh())
            .collect();
        let m = matvec(&self.w1, self.shape.hidden1, &h)
            .into_iter()
            .map(|z| z.tanh())
            .collect();
        (h, m)
    }

    /// Mapping code of a window (no dropout).
    pub fn infer_mapping(&self, window: &NGramWindow<'_, T>) -> Result<Vec<T>> {
        self.check_window(window)?;
        Ok(self.mapping_from(window.context(), window.target()).3)
    }

    /// `W0ᵀ W1ᵀ m`
    fn back_project(&self, mapping: &[T]) -> (Vec<T>, Vec<T>) {
        let back = matvec_t(&self.w1, self.shape.hidden1, mapping);
        let g = matvec_t(&self.w0, self.shape.factors, &back);
        (back, g)
    }

    /// Linear reconstruction of the target from a context and a mapping code.
    pub fn reconstruct(&self, context: &[T], mapping: &[T]) -> Result<Vec<T>> {
        if context.len() != self.shape.input_dim() || mapping.len() != self.shape.hidden2 {
            return Err(Error::ShapeMismatch("context or mapping length"));
        }
        let (_, g) = self.back_project(mapping);
        let a = matvec(&self.u, self.shape.input_dim(), context);
        Ok(matvec_t(&self.v, self.shape.num_bins, &mul(&g, &a)))
    }

    /// Dropout-corrupted context and its copy shifted by `delta` bins.
    fn contexts(
        &self,
        window: &NGramWindow<'_, T>,
        delta: i64,
        mask: Option<&DropoutMask<T>>,
    ) -> Result<(Vec<T>, Vec<T>)> {
        self.check_window(window)?;
        let ctx: Vec<T> = match mask {
            Some(mask) => {
                if mask.scale.len() != self.shape.input_dim() {
                    return Err(Error::ShapeMismatch("dropout mask length"));
                }
                mul(window.context(), &mask.scale)
            }
            None => window.context().to_vec(),
        };
        let shifted = shift_frames(&ctx, self.shape.num_bins, delta);
        Ok((ctx, shifted))
    }

    fn trace(
        &self,
        window: &NGramWindow<'_, T>,
        delta: i64,
        mask: Option<&DropoutMask<T>>,
        output: OutputActivation,
    ) -> Result<(Trace<T>, Vec<T>, Vec<T>)> {
        let (ctx, shifted) = self.contexts(window, delta, mask)?;
        let d = self.shape.input_dim();
        let a = matvec(&self.u, d, &ctx);
        let a_shift = matvec(&self.u, d, &shifted);
        Ok((
            self.trace_from(window, delta, output, a, a_shift),
            ctx,
            shifted,
        ))
    }

    /// Forward pass given the `U` responses of the context and of its shifted
    /// copy.
    fn trace_from(
        &self,
        window: &NGramWindow<'_, T>,
        delta: i64,
        output: OutputActivation,
        a: Vec<T>,
        a_shift: Vec<T>,
    ) -> Trace<T> {
        let mb = self.shape.num_bins;
        let b = matvec(&self.v, mb, window.target());
        let (h, m) = self.code_from(&a, &b);
        let (back, g) = self.back_project(&m);
        let q = mul(&g, &a_shift);
        let r = matvec_t(&self.v, mb, &q);
        let o = match output {
            OutputActivation::Identity => r,
            OutputActivation::Tanh => r.into_iter().map(|x| x.tanh()).collect(),
        };
        let mut y = vec![T::zero(); mb];
        shift_into(window.target(), delta, &mut y);
        Trace {
            a,
            b,
            h,
            m,
            back,
            g,
            a_shift,
            q,
            o,
            y,
        }
    }

    fn mse_of(&self, t: &Trace<T>) -> T {
        mean_squared_error(&t.y, &t.o)
    }

    fn l1(m: &[T]) -> T {
        m.iter().fold(T::zero(), |a, x| a + x.abs())
    }

    /// Unweighted `‖U‖² + ‖V‖²`.
    pub fn l2_penalty(&self) -> T {
        squared_norm(&self.u) + squared_norm(&self.v)
    }

    /// Unweighted norm-deviation penalty of `U` plus that of `V`.
    pub fn norm_deviation_penalty(&self) -> T {
        norm_deviation_penalty(&self.u, self.shape.input_dim())
            + norm_deviation_penalty(&self.v, self.shape.num_bins)
    }

    fn breakdown(&self, mse: T, sparsity: T, cfg: &LossConfig) -> LossBreakdown {
        let l2 = self.l2_penalty();
        let nd = self.norm_deviation_penalty();
        let total = mse
            + T::of(cfg.reg.l2) * l2
            + T::of(cfg.reg.sparsity) * sparsity
            + T::of(cfg.reg.norm_deviation) * nd;
        LossBreakdown {
            mse: mse.as_f64(),
            l2_penalty: l2.as_f64(),
            sparsity_penalty: sparsity.as_f64(),
            norm_deviation_penalty: nd.as_f64(),
            total: total.as_f64(),
        }
    }

    /// Untransposed reconstruction loss.
    pub fn loss_plain(
        &self,
        window: &NGramWindow<'_, T>,
        cfg: &LossConfig,
    ) -> Result<LossBreakdown> {
        self.loss(window, 0, None, cfg)
    }

    /// Mapping from the original pair, reconstruction of the pair shifted by
    /// `delta` bins.
    pub fn loss_transposed(
        &self,
        window: &NGramWindow<'_, T>,
        delta: i64,
        cfg: &LossConfig,
    ) -> Result<LossBreakdown> {
        self.loss(window, delta, None, cfg)
    }

    /// Full objective of one window, optionally with a dropout mask.
    pub fn loss(
        &self,
        window: &NGramWindow<'_, T>,
        delta: i64,
        mask: Option<&DropoutMask<T>>,
        cfg: &LossConfig,
    ) -> Result<LossBreakdown> {
        let (t, _, _) = self.trace(window, delta, mask, cfg.output)?;
        Ok(self.breakdown(self.mse_of(&t), Self::l1(&t.m), cfg))
    }

    /// Adds the gradient of `mse + λ_sp Σ|m|` for one window to `grad` and
    /// returns `(mse, Σ|m|)`. Regularizers on the weights are handled by
    /// [`Self::accumulate_regularizer_gradient`].
    pub fn accumulate_data_gradient(
        &self,
        window: &NGramWindow<'_, T>,
        delta: i64,
        mask: Option<&DropoutMask<T>>,
        cfg: &LossConfig,
        grad: &mut Gradient<T>,
    ) -> Result<(T, T)> {
        let (t, ctx, shifted) = self.trace(window, delta, mask, cfg.output)?;
        let (da, da_shift) = self.backward(&t, window.target(), cfg, grad);
        let d = self.shape.input_dim();
        rank1(&mut grad.u, d, &da_shift, &shifted);
        rank1(&mut grad.u, d, &da, &ctx);
        Ok((self.mse_of(&t), Self::l1(&t.m)))
    }

    /// Same as calling [`Self::accumulate_data_gradient`] on each window in
    /// turn (bit for bit), but reads `U` and writes its gradient once per call
    /// instead of once per window. Returns the sums of the per-window `mse`
    /// and `Σ|m|`.
    pub fn accumulate_chunk_gradient(
        &self,
        windows: &[NGramWindow<'_, T>],
        delta: i64,
        masks: Option<&[DropoutMask<T>]>,
        cfg: &LossConfig,
        grad: &mut Gradient<T>,
    ) -> Result<(f64, f64)> {
        let (d, f) = (self.shape.input_dim(), self.shape.factors);
        if masks.is_some_and(|m| m.len() != windows.len()) {
            return Err(Error::ShapeMismatch("one dropout mask per window"));
        }
        let mut ctxs = Vec::with_capacity(windows.len());
        for (i, w) in windows.iter().enumerate() {
            ctxs.push(self.contexts(w, delta, masks.map(|m| &m[i]))?);
        }
        let mut a = vec![vec![T::zero(); f]; windows.len()];
        let mut a_shift = a.clone();
        for (k, row) in self.u.chunks_exact(d).enumerate() {
            for (i, (ctx, shifted)) in ctxs.iter().enumerate() {
                a[i][k] = dot(row, ctx);
                a_shift[i][k] = dot(row, shifted);
            }
        }
        let (mut mse, mut l1) = (0.0, 0.0);
        let mut factor_grads = Vec::with_capacity(windows.len());
        for ((w, a), a_shift) in windows.iter().zip(a).zip(a_shift) {
            let t = self.trace_from(w, delta, cfg.output, a, a_shift);
            factor_grads.push(self.backward(&t, w.target(), cfg, grad));
            mse += self.mse_of(&t).as_f64();
            l1 += Self::l1(&t.m).as_f64();
        }
        for (k, row) in grad.u.chunks_exact_mut(d).enumerate() {
            for ((da, da_shift), (ctx, shifted)) in factor_grads.iter().zip(&ctxs) {
                if da_shift[k] != T::zero() {
                    axpy(da_shift[k], shifted, row);
                }
                if da[k] != T::zero() {
                    axpy(da[k], ctx, row);
                }
            }
        }
        Ok((mse, l1))
    }

    /// Backpropagates one forward pass. Gradients of `V`, `W0` and `W1` go
    /// into `grad`; the factor-space gradients for `U` are returned as
    /// `(da, da_shift)`, to be multiplied with the context and its shifted copy.
    fn backward(
        &self,
        t: &Trace<T>,
        target: &[T],
        cfg: &LossConfig,
        grad: &mut Gradient<T>,
    ) -> (Vec<T>, Vec<T>) {
        let s = &self.shape;
        let (mb, f, h1) = (s.num_bins, s.factors, s.hidden1);
        let two_over_m = T::of(2.0 / mb as f64);

        // reconstruction path
        let dr: Vec<T> =
            t.o.iter()
                .zip(&t.y)
                .map(|(&o, &y)| {
                    let d_o = two_over_m * (o - y);
                    match cfg.output {
                        OutputActivation::Identity => d_o,
                        OutputActivation::Tanh => d_o * (T::one() - o * o),
                    }
                })
                .collect();
        rank1(&mut grad.v, mb, &t.q, &dr);
        let dq = matvec(&self.v, mb, &dr);
        let dg = mul(&dq, &t.a_shift);
        let da_shift = mul(&dq, &t.g);
        rank1(&mut grad.w0, f, &t.back, &dg);
        let dback = matvec(&self.w0, f, &dg);
        rank1(&mut grad.w1, h1, &t.m, &dback);
        let mut dm = matvec(&self.w1, h1, &dback);

        // sparsity on the mapping code
        let sp = T::of(cfg.reg.sparsity);
        if sp != T::zero() {
            for (g, &m) in dm.iter_mut().zip(&t.m) {
                if m > T::zero() {
                    *g += sp;
                } else if m < T::zero() {
                    *g -= sp;
                }
            }
        }

        // mapping path
        let dz1: Vec<T> = dm
            .iter()
            .zip(&t.m)
            .map(|(&g, &m)| g * (T::one() - m * m))
            .collect();
        rank1(&mut grad.w1, h1, &dz1, &t.h);
        let dh = matvec_t(&self.w1, h1, &dz1);
        let dz0: Vec<T> = dh
            .iter()
            .zip(&t.h)
            .map(|(&g, &h)| g * (T::one() - h * h))
            .collect();
        let p = mul(&t.a, &t.b);
        rank1(&mut grad.w0, f, &dz0, &p);
        let dp = matvec_t(&self.w0, f, &dz0);
        let da = mul(&dp, &t.b);
        let db = mul(&dp, &t.a);
        rank1(&mut grad.v, mb, &db, target);
        (da, da_shift)
    }

    /// Adds `count` times the gradient of the weighted L2 and norm-deviation
    /// penalties to `grad`.
    pub fn accumulate_regularizer_gradient(
        &self,
        count: T,
        cfg: &LossConfig,
        grad: &mut Gradient<T>,
    ) {
        let (d, mb) = (self.shape.input_dim(), self.shape.num_bins);
        let l2 = T::of(2.0 * cfg.reg.l2) * count;
        if l2 != T::zero() {
            axpy(l2, &self.u, &mut grad.u);
            axpy(l2, &self.v, &mut grad.v);
        }
        let nd = T::of(cfg.reg.norm_deviation) * count;
        if nd != T::zero() {
            norm_deviation_gradient(&self.u, d, nd, &mut grad.u);
            norm_deviation_gradient(&self.v, mb, nd, &mut grad.v);
        }
    }

    /// Gradient of the full single-window objective, regularizers included.
    pub fn gradients(
        &self,
        window: &NGramWindow<'_, T>,
        delta: i64,
        mask: Option<&DropoutMask<T>>,
        cfg: &LossConfig,
    ) -> Result<(Gradient<T>, LossBreakdown)> {
        let mut grad = Gradient::zeros(&self.shape);
        let (mse, sparsity) = self.accumulate_data_gradient(window, delta, mask, cfg, &mut grad)?;
        self.accumulate_regularizer_gradient(T::one(), cfg, &mut grad);
        Ok((grad, self.breakdown(mse, sparsity, cfg)))
    }

    /// Sum of per-window gradients over a batch that shares one `delta`.
    pub fn batch_gradient(
        &self,
        windows: &[NGramWindow<'_, T>],
        delta: i64,
        masks: Option<&[DropoutMask<T>]>,
        cfg: &LossConfig,
    ) -> Result<Gradient<T>> {
        let mut grad = Gradient::zeros(&self.shape);
        for (i, w) in windows.iter().enumerate() {
            let mask = masks.map(|m| &m[i]);
            self.accumulate_data_gradient(w, delta, mask, cfg, &mut grad)?;
        }
        self.accumulate_regularizer_gradient(T::of(windows.len() as f64), cfg, &mut grad);
        Ok(grad)
    }

    /// `θ ← θ − lr · g`
    pub fn apply_step(&mut self, grad: &Gradient<T>, lr: T) {
        axpy(-lr, &grad.u, &mut self.u);
        axpy(-lr, &grad.v, &mut self.v);
        axpy(-lr, &grad.w0, &mut self.w0);
        axpy(-lr, &grad.w1, &mut self.w1);
    }

    /// Max-norm projection of the columns of `U` and `V`.
    pub fn project_norms(&mut self, max_norm: f64) {
        let (d, mb) = (self.shape.input_dim(), self.shape.num_bins);
        project_columns(&mut self.u, d, max_norm);
        project_columns(&mut self.v, mb, max_norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelShape {
        ModelShape {
            n: 2,
            num_bins: 6,
            factors: 4,
            hidden1: 3,
            hidden2: 2,
        }
    }

    fn window_data(seed: u64, shape: &ModelShape) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..(shape.n + 1) * shape.num_bins)
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect()
    }

    #[test]
    fn zero_window_gives_zero_mapping() {
        let shape = ModelShape::for_context(8);
        let p = GaeParams::<f32>::init(shape, 3).unwrap();
        let data = vec![0.0f32; 9 * 120];
        let w = NGramWindow::new(&data, 8, 120);
        let m = p.infer_mapping(&w).unwrap();
        assert_eq!(m.len(), 64);
        assert!(m.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = GaeParams::<f64>::init(tiny(), 1).unwrap();
        let data = vec![0.0; 4 * 6];
        let w = NGramWindow::new(&data, 3, 6);
        assert!(matches!(p.infer_mapping(&w), Err(Error::ShapeMismatch(_))));
        assert!(p.reconstruct(&[0.0; 5], &[0.0; 2]).is_err());
    }

    #[test]
    fn reconstruction_zero_cases() {
        let p = GaeParams::<f64>::init(tiny(), 2).unwrap();
        let data = window_data(5, &tiny());
        let ctx = &data[..12];
        assert!(p
            .reconstruct(ctx, &[0.0, 0.0])
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
        assert!(p
            .reconstruct(&[0.0; 12], &[0.3, -0.2])
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn reconstruction_is_linear_in_mapping() {
        let p = GaeParams::<f64>::init(tiny(), 2).unwrap();
        let data = window_data(6, &tiny());
        let ctx = &data[..12];
        let r1 = p.reconstruct(ctx, &[0.3, -0.2]).unwrap();
        let r2 = p.reconstruct(ctx, &[0.75, -0.5]).unwrap();
        for (a, b) in r1.iter().zip(&r2) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mean_squared_error(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(
            mean_squared_error(&[0.5, -2.0, 3.0], &[0.5, -2.0, 3.0]),
            0.0
        );
    }

    #[test]
    fn equal_column_norms_have_no_deviation() {
        // 2 x 3, every column has norm 5
        let eq = vec![3.0f64, 0.0, 4.0, 4.0, 5.0, 3.0];
        assert_eq!(norm_deviation_penalty(&eq, 3), 0.0);
        let uneven = vec![1.0f64, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert!(norm_deviation_penalty(&uneven, 3) > 0.0);
    }

    #[test]
    fn projection_clamps_to_max_norm() {
        // single column of norm 4 with max_norm 2
        let mut m = vec![0.0f64, 4.0, 0.0, 0.0];
        project_columns(&mut m, 2, 2.0);
        let norms = column_norms(&m, 2);
        assert_eq!(norms[1], 2.0);
        assert_eq!(m, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn transposed_loss_identities() {
        let shape = tiny();
        let p = GaeParams::<f64>::init(shape, 9).unwrap();
        let data = window_data(10, &shape);
        let w = NGramWindow::new(&data, 2, 6);
        let cfg = LossConfig::default();
        let plain = p.loss_plain(&w, &cfg).unwrap();
        assert_eq!(p.loss_transposed(&w, 0, &cfg).unwrap(), plain);
        assert_eq!(p.loss_transposed(&w, 6, &cfg).unwrap(), plain);
        assert_eq!(
            p.loss_transposed(&w, 2, &cfg).unwrap(),
            p.loss_transposed(&w, 8, &cfg).unwrap()
        );
    }

    #[test]
    fn zero_data_has_zero_data_gradient() {
        let shape = tiny();
        let p = GaeParams::<f64>::init(shape, 4).unwrap();
        let data = vec![0.0; 18];
        let w = NGramWindow::new(&data, 2, 6);
        let cfg = LossConfig {
            reg: Regularization::none(),
            ..Default::default()
        };
        let mut g = Gradient::zeros(&shape);
        p.accumulate_data_gradient(&w, 3, None, &cfg, &mut g)
            .unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn duplicated_window_doubles_gradient() {
        let shape = tiny();
        let p = GaeParams::<f64>::init(shape, 4).unwrap();
        let data = window_data(11, &shape);
        let w = NGramWindow::new(&data, 2, 6);
        let cfg = LossConfig::default();
        let single = p.batch_gradient(&[w], 5, None, &cfg).unwrap();
        let double = p.batch_gradient(&[w, w], 5, None, &cfg).unwrap();
        for (a, b) in single.iter().zip(double.iter()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DropoutMask::<f64>::sample(&mut rng, 1000, 0.5);
        assert!(m.scale().iter().all(|&s| s == 0.0 || s == 2.0));
        let kept = m.scale().iter().filter(|&&s| s == 2.0).count();
        assert!((400..600).contains(&kept));
        let none = DropoutMask::<f64>::sample(&mut rng, 10, 0.0);
        assert!(none.scale().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn chunked_gradient_matches_window_by_window() {
        let shape = ModelShape::for_context(2);
        let p = GaeParams::<f32>::init(shape, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f32> = (0..7 * 3 * 120).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let windows: Vec<_> = data
            .chunks_exact(3 * 120)
            .map(|c| NGramWindow::new(c, 2, 120))
            .collect();
        let masks: Vec<_> = (0..7)
            .map(|_| DropoutMask::sample(&mut rng, 240, 0.5))
            .collect();
        let cfg = LossConfig::default();
        let mut one = Gradient::zeros(&shape);
        let (mut mse, mut l1) = (0.0, 0.0);
        for (w, m) in windows.iter().zip(&masks) {
            let (e, s) = p
                .accumulate_data_gradient(w, 17, Some(m), &cfg, &mut one)
                .unwrap();
            mse += e as f64;
            l1 += s as f64;
        }
        let mut chunk = Gradient::zeros(&shape);
        let sums = p
            .accumulate_chunk_gradient(&windows, 17, Some(&masks), &cfg, &mut chunk)
            .unwrap();
        assert_eq!(sums, (mse, l1));
        assert!(one
            .iter()
            .zip(chunk.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
