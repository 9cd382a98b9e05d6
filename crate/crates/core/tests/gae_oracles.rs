//! Independent checks of the gated autoencoder: a straight-line re-derivation
//! of the forward pass with explicit index loops, and central finite
//! differences for every parameter.

#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tia_core::gae::{
    DropoutMask, GaeParams, LossConfig, ModelShape, OutputActivation, Regularization,
};
use tia_core::signal::NGramWindow;

fn tiny() -> ModelShape {
    ModelShape {
        n: 2,
        num_bins: 6,
        factors: 4,
        hidden1: 3,
        hidden2: 2,
    }
}

fn random_window(rng: &mut ChaCha8Rng, shape: &ModelShape) -> Vec<f64> {
    (0..(shape.n + 1) * shape.num_bins)
        .map(|_| rng.gen_range(-1.5..1.5))
        .collect()
}

/// Straight-line forward pass with explicit loops.
struct Reference<'a> {
    p: &'a GaeParams<f64>,
}

impl Reference<'_> {
    fn at(m: &[f64], cols: usize, r: usize, c: usize) -> f64 {
        m[r * cols + c]
    }

    fn mapping(&self, ctx: &[f64], tgt: &[f64]) -> Vec<f64> {
        let s = self.p.shape();
        let d = s.n * s.num_bins;
        let mut prod = vec![0.0; s.factors];
        for f in 0..s.factors {
            let mut a = 0.0;
            for i in 0..d {
                a += Self::at(self.p.u(), d, f, i) * ctx[i];
            }
            let mut b = 0.0;
            for j in 0..s.num_bins {
                b += Self::at(self.p.v(), s.num_bins, f, j) * tgt[j];
            }
            prod[f] = a * b;
        }
        let mut h = vec![0.0; s.hidden1];
        for k in 0..s.hidden1 {
            let mut z = 0.0;
            for f in 0..s.factors {
                z += Self::at(self.p.w0(), s.factors, k, f) * prod[f];
            }
            h[k] = z.tanh();
        }
        let mut m = vec![0.0; s.hidden2];
        for k in 0..s.hidden2 {
            let mut z = 0.0;
            for j in 0..s.hidden1 {
                z += Self::at(self.p.w1(), s.hidden1, k, j) * h[j];
            }
            m[k] = z.tanh();
        }
        m
    }

    fn reconstruct(&self, ctx: &[f64], m: &[f64]) -> Vec<f64> {
        let s = self.p.shape();
        let d = s.n * s.num_bins;
        let mut u1 = vec![0.0; s.hidden1];
        for j in 0..s.hidden1 {
            for k in 0..s.hidden2 {
                u1[j] += Self::at(self.p.w1(), s.hidden1, k, j) * m[k];
            }
        }
        let mut q = vec![0.0; s.factors];
        for f in 0..s.factors {
            let mut g = 0.0;
            for j in 0..s.hidden1 {
                g += Self::at(self.p.w0(), s.factors, j, f) * u1[j];
            }
            let mut a = 0.0;
            for i in 0..d {
                a += Self::at(self.p.u(), d, f, i) * ctx[i];
            }
            q[f] = g * a;
        }
        let mut out = vec![0.0; s.num_bins];
        for j in 0..s.num_bins {
            for f in 0..s.factors {
                out[j] += Self::at(self.p.v(), s.num_bins, f, j) * q[f];
            }
        }
        out
    }

    fn shift(x: &[f64], delta: i64) -> Vec<f64> {
        let m = x.len() as i64;
        (0..m)
            .map(|i| x[((i + delta).rem_euclid(m)) as usize])
            .collect()
    }

    fn transposed_mse(&self, data: &[f64], delta: i64) -> f64 {
        let s = self.p.shape();
        let d = s.n * s.num_bins;
        let (ctx, tgt) = data.split_at(d);
        let m = self.mapping(ctx, tgt);
        let shifted: Vec<f64> = ctx
            .chunks(s.num_bins)
            .flat_map(|f| Self::shift(f, delta))
            .collect();
        let recon = self.reconstruct(&shifted, &m);
        let target = Self::shift(tgt, delta);
        target
            .iter()
            .zip(&recon)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / s.num_bins as f64
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn mapping_matches_straight_line_reference() {
    let shape = ModelShape::for_context(8);
    let p = GaeParams::<f64>::init(shape, 2024).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = random_window(&mut rng, &shape);
    let w = NGramWindow::new(&data, 8, 120);
    let fast = p.infer_mapping(&w).unwrap();
    let slow = Reference { p: &p }.mapping(w.context(), w.target());
    assert_eq!(fast.len(), 64);
    for (a, b) in fast.iter().zip(&slow) {
        assert!(close(*a, *b, 1e-12), "{a} vs {b}");
        assert!(a.abs() < 1.0);
    }
}

#[test]
fn reconstruction_matches_straight_line_reference() {
    let shape = tiny();
    for seed in 0..5 {
        let p = GaeParams::<f64>::init(shape, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let data = random_window(&mut rng, &shape);
        let w = NGramWindow::new(&data, 2, 6);
        let m = p.infer_mapping(&w).unwrap();
        let fast = p.reconstruct(w.context(), &m).unwrap();
        let slow = Reference { p: &p }.reconstruct(w.context(), &m);
        for (a, b) in fast.iter().zip(&slow) {
            assert!(close(*a, *b, 1e-12));
        }
    }
}

#[test]
fn transposed_loss_matches_reference() {
    let shape = tiny();
    let cfg = LossConfig {
        reg: Regularization::none(),
        output: OutputActivation::Identity,
    };
    for seed in 0..5 {
        let p = GaeParams::<f64>::init(shape, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let data = random_window(&mut rng, &shape);
        let w = NGramWindow::new(&data, 2, 6);
        for delta in [-7, 0, 1, 3, 7] {
            let fast = p.loss_transposed(&w, delta, &cfg).unwrap().mse;
            let slow = Reference { p: &p }.transposed_mse(&data, delta);
            assert!(close(fast, slow, 1e-12), "delta {delta}: {fast} vs {slow}");
        }
    }
}

#[test]
fn regularizers_match_hand_rolled_sums() {
    let shape = tiny();
    let p = GaeParams::<f64>::init(shape, 77).unwrap();
    let d = shape.n * shape.num_bins;
    let l2: f64 = p.u().iter().chain(p.v()).map(|x| x * x).sum();
    assert!(close(p.l2_penalty(), l2, 1e-12));

    let dev = |m: &[f64], rows: usize, cols: usize| {
        let norms: Vec<f64> = (0..cols)
            .map(|c| {
                (0..rows)
                    .map(|r| m[r * cols + c].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let mean = norms.iter().sum::<f64>() / cols as f64;
        norms.iter().map(|n| (n - mean).powi(2)).sum::<f64>()
    };
    let expected = dev(p.u(), shape.factors, d) + dev(p.v(), shape.factors, shape.num_bins);
    assert!(close(p.norm_deviation_penalty(), expected, 1e-12));
}

fn gradient_check(seed: u64, output: OutputActivation, dropout: bool, delta: i64) {
    let shape = tiny();
    let cfg = LossConfig {
        reg: Regularization {
            l2: 1e-2,
            sparsity: 1e-2,
            norm_deviation: 1e-2,
            max_norm: 2.0,
        },
        output,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = GaeParams::<f64>::init(shape, seed).unwrap();
    let data = random_window(&mut rng, &shape);
    let w = NGramWindow::new(&data, 2, 6);
    let mask = dropout.then(|| DropoutMask::sample(&mut rng, shape.n * shape.num_bins, 0.5));
    let (grad, _) = base.gradients(&w, delta, mask.as_ref(), &cfg).unwrap();
    let analytic: Vec<f64> = grad.iter().copied().collect();

    let h = 1e-5;
    let mut k = 0;
    for mi in 0..4 {
        let len = base.clone().matrices_mut()[mi].len();
        for i in 0..len {
            let mut plus = base.clone();
            plus.matrices_mut()[mi][i] += h;
            let mut minus = base.clone();
            minus.matrices_mut()[mi][i] -= h;
            let lp = plus.loss(&w, delta, mask.as_ref(), &cfg).unwrap().total;
            let lm = minus.loss(&w, delta, mask.as_ref(), &cfg).unwrap().total;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[k];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            assert!(
                rel < 1e-4,
                "seed {seed} matrix {mi} entry {i}: analytic {a}, numeric {numeric}"
            );
            k += 1;
        }
    }
    assert_eq!(k, analytic.len());
}

#[test]
fn gradients_match_finite_differences_transposed_with_dropout() {
    for seed in 0..20 {
        gradient_check(
            seed,
            OutputActivation::Identity,
            true,
            1 + (seed as i64 % 5),
        );
    }
}

#[test]
fn gradients_match_finite_differences_plain_without_dropout() {
    for seed in 20..40 {
        gradient_check(seed, OutputActivation::Identity, false, 0);
    }
}

#[test]
fn gradients_match_finite_differences_tanh_output() {
    for seed in 40..45 {
        gradient_check(seed, OutputActivation::Tanh, true, -3);
    }
}
