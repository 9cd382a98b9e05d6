//! Minibatch SGD for the gated autoencoder.
//!
//! Each epoch shuffles all windows, then walks them in batches. A batch draws
//! one transposition `delta` and one dropout mask per window, takes a step of
//! size `lr_e = lr0 * (1 - e / epochs)` along the mean gradient and projects
//! the filter columns back into the max-norm ball.
//!
//! Gradients are computed in fixed chunks of [`CHUNK`] windows which are then
//! summed in chunk order, so the result does not depend on how the chunks are
//! scheduled.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gae::{
    DropoutMask, GaeParams, Gradient, LossConfig, ModelShape, OutputActivation, Regularization,
};
use crate::parallel::{ParallelMap, Sequential};
use crate::signal::{NGramWindow, Spectrogram, NUM_BINS};
use crate::{Error, Result};

/// Windows per gradient work item.
pub const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub n: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
    /// Inclusive range of bin shifts.
    pub delta_range: (i64, i64),
    pub seed: u64,
    pub reg: Regularization,
    pub dropout_rate: f64,
    pub output: OutputActivation,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            n: 8,
            epochs: 300,
            lr0: 1e-3,
            batch_size: 128,
            delta_range: (-60, 60),
            seed: 0,
            reg: Regularization::default(),
            dropout_rate: 0.5,
            output: OutputActivation::Identity,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let m = NUM_BINS as i64;
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1"));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidConfig("lr0 must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1"));
        }
        let (lo, hi) = self.delta_range;
        if lo > hi || lo < -m || hi > m {
            return Err(Error::InvalidConfig(
                "delta_range must be an interval inside [-M, M]",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must be in [0, 1)"));
        }
        let r = &self.reg;
        let non_negative = |w: f64| w >= 0.0;
        if ![r.l2, r.sparsity, r.norm_deviation]
            .into_iter()
            .all(non_negative)
            || r.max_norm.is_nan()
            || r.max_norm <= 0.0
        {
            return Err(Error::InvalidConfig(
                "regularizer weights must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            reg: self.reg,
            output: self.output,
        }
    }

    /// Learning rate used throughout epoch `e` (0-based).
    pub fn learning_rate(&self, e: usize) -> f64 {
        self.lr0 * (1.0 - e as f64 / self.epochs as f64)
    }
}

/// All `(n + 1)`-frame windows of a set of spectrograms, stored as
/// `(spectrogram, start frame)` references.
#[derive(Debug, Clone)]
pub struct Dataset<'a> {
    specs: &'a [Spectrogram],
    n: usize,
    windows: Vec<(u32, u32)>,
    skipped: Vec<usize>,
}

impl<'a> Dataset<'a> {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Indices of spectrograms too short to yield a window.
    pub fn skipped(&self) -> &[usize] {
        &self.skipped
    }

    pub fn window(&self, i: usize) -> NGramWindow<'a, f32> {
        let (s, t) = self.windows[i];
        self.specs[s as usize].window(t as usize, self.n)
    }
}

/// One window per maximal run of `n + 1` consecutive frames. Spectrograms with
/// `n` frames or fewer are skipped and listed in [`Dataset::skipped`].
pub fn build_dataset(specs: &[Spectrogram], n: usize) -> Result<Dataset<'_>> {
    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    let bins = specs.first().map(|s| s.num_bins());
    for (i, s) in specs.iter().enumerate() {
        if Some(s.num_bins()) != bins {
            return Err(Error::ShapeMismatch("spectrograms differ in bin count"));
        }
        let t = s.num_frames();
        if t <= n {
            skipped.push(i);
            continue;
        }
        windows.extend((0..t - n).map(|start| (i as u32, start as u32)));
    }
    Ok(Dataset {
        specs,
        n,
        windows,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_mse: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

/// Wall-clock source for the training log.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Always reads zero.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Called after each epoch with the finished record and current parameters.
pub trait EpochObserver {
    fn epoch_done(&mut self, record: &EpochRecord, params: &GaeParams<f32>);
}

impl EpochObserver for () {
    fn epoch_done(&mut self, _: &EpochRecord, _: &GaeParams<f32>) {}
}

pub fn train(
    config: &TrainingConfig,
    dataset: &Dataset<'_>,
) -> Result<(GaeParams<f32>, TrainingLog)> {
    train_with(config, dataset, &Sequential, &NoClock, &mut ())
}

pub fn train_with<P: ParallelMap, C: Clock, O: EpochObserver>(
    config: &TrainingConfig,
    dataset: &Dataset<'_>,
    exec: &P,
    clock: &C,
    observer: &mut O,
) -> Result<(GaeParams<f32>, TrainingLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.n() != config.n {
        return Err(Error::InvalidConfig(
            "dataset context length differs from config",
        ));
    }
    let shape = ModelShape {
        num_bins: dataset.window(0).num_bins(),
        ..ModelShape::for_context(config.n)
    };
    let mut params = GaeParams::<f32>::init(shape, config.seed)?;
    let cfg = config.loss_config();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainingLog::default();
    let input_dim = shape.input_dim();

    for epoch in 0..config.epochs {
        let start = clock.seconds();
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_mse) = (0.0f64, 0.0f64);

        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let delta = rng.gen_range(config.delta_range.0..=config.delta_range.1);
            let masks: Option<Vec<DropoutMask<f32>>> = (config.dropout_rate > 0.0).then(|| {
                idx.iter()
                    .map(|_| DropoutMask::sample(&mut rng, input_dim, config.dropout_rate))
                    .collect()
            });
            let p = &params;
            let parts = exec.map(idx.len().div_ceil(CHUNK), |c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(idx.len());
                let windows: Vec<_> = idx[lo..hi].iter().map(|&k| dataset.window(k)).collect();
                let mut g = Gradient::zeros(p.shape());
                let (mse, sp) = p.accumulate_chunk_gradient(
                    &windows,
                    delta,
                    masks.as_ref().map(|m| &m[lo..hi]),
                    &cfg,
                    &mut g,
                )?;
                Ok::<_, Error>((g, mse, sp))
            });
            let mut parts = parts.into_iter();
            let (mut grad, mut mse, mut sp) = parts.next().expect("batches are non-empty")?;
            for part in parts {
                let (g, e, s) = part?;
                grad.add_assign(&g);
                mse += e;
                sp += s;
            }
            let count = idx.len() as f64;
            let total = mse
                + cfg.reg.sparsity * sp
                + count
                    * (cfg.reg.l2 * params.l2_penalty() as f64
                        + cfg.reg.norm_deviation * params.norm_deviation_penalty() as f64);
            if !total.is_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
            sum_total += total;
            sum_mse += mse;
            params.accumulate_regularizer_gradient(count as f32, &cfg, &mut grad);
            grad.scale(1.0 / count as f32);
            params.apply_step(&grad, lr as f32);
            params.project_norms(cfg.reg.max_norm);
            if !params.is_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
        }

        let count = dataset.len() as f64;
        let record = EpochRecord {
            epoch,
            loss_total: sum_total / count,
            loss_mse: sum_mse / count,
            lr,
            seconds: clock.seconds() - start,
        };
        observer.epoch_done(&record, &params);
        log.epochs.push(record);
    }
    Ok((params, log))
}

/// Mean plain (untransposed, no dropout) reconstruction error over a dataset.
pub fn mean_plain_mse<P: ParallelMap>(
    params: &GaeParams<f32>,
    dataset: &Dataset<'_>,
    exec: &P,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = LossConfig {
        reg: Regularization::none(),
        output: OutputActivation::Identity,
    };
    let parts = exec.map(dataset.len(), |i| {
        params.loss_plain(&dataset.window(i), &cfg).map(|b| b.mse)
    });
    let mut sum = 0.0;
    for p in parts {
        sum += p?;
    }
    Ok(sum / dataset.len() as f64)
}
