//! Two-class head: L1 → BN → ReLU → Dropout → L2 → BN → ReLU → Dropout → L3 → log-softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{stream_rng, Rng};
use crate::numerics::{
    linear, linear_backward, log_softmax_backward, log_softmax_rows, xavier_uniform, DropoutMask,
    Mode, Parameter, Scalar, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub d_in: usize,
    pub h1: usize,
    pub h2: usize,
    pub n_classes: usize,
    pub dropout_rate: f64,
    /// Weight given to the new batch statistics in the running averages.
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl HeadConfig {
    /// Widths 200 and 150 with two output classes.
    pub fn new(d_in: usize) -> Self {
        HeadConfig {
            d_in,
            h1: 200,
            h2: 150,
            n_classes: 2,
            dropout_rate: 0.1,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.h1 == 0 || self.h2 == 0 || self.n_classes == 0 {
            return Err(Error::arg("head widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::arg(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::arg("batch-norm momentum must be in [0, 1] and eps positive"));
        }
        Ok(())
    }

    /// Layer widths in forward order.
    pub fn widths(&self) -> [usize; 4] {
        [self.d_in, self.h1, self.h2, self.n_classes]
    }

    pub fn param_count(&self) -> usize {
        let [a, b, c, d] = self.widths();
        (a * b + b) + 2 * b + (b * c + c) + 2 * c + (c * d + d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gain: Parameter<T>,
    pub bias: Parameter<T>,
    pub running_mean: Tensor<T>,
    /// Population variance; entrywise ≥ 0.
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(name: &str, width: usize, momentum: f64, eps: f64) -> Self {
        BatchNormState {
            gain: Parameter::new(format!("{name}.gain"), Tensor::filled(&[width], T::one())),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[width])),
            running_mean: Tensor::zeros(&[width]),
            running_var: Tensor::filled(&[width], T::one()),
            momentum,
            eps,
        }
    }

    pub fn width(&self) -> usize {
        self.gain.len()
    }

    fn cast<U: Scalar>(&self) -> BatchNormState<U> {
        BatchNormState {
            gain: self.gain.cast(),
            bias: self.bias.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

/// Normalized activations and per-feature inverse deviations.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<f64>,
    batch_stats: bool,
}

fn bn_forward_raw<T: Scalar>(
    x: &[T],
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Vec<T>, BnCache<T>)> {
    let w = state.width();
    if !x.len().is_multiple_of(w) {
        return Err(Error::Shape {
            op: "bn_forward",
            left: vec![x.len()],
            right: vec![w],
        });
    }
    let n = x.len() / w;
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Contract(format!(
                    "batch normalization in train mode needs at least 2 samples, got {n}"
                )));
            }
            let mut mean = vec![0.0f64; w];
            let mut var = vec![0.0f64; w];
            for row in x.chunks(w) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v.f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            for row in x.chunks(w) {
                for i in 0..w {
                    let c = row[i].f64() - mean[i];
                    var[i] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let mo = state.momentum;
            for i in 0..w {
                let rm = &mut state.running_mean.data_mut()[i];
                *rm = T::of((1.0 - mo) * rm.f64() + mo * mean[i]);
                let rv = &mut state.running_var.data_mut()[i];
                *rv = T::of((1.0 - mo) * rv.f64() + mo * var[i]);
            }
            (mean, var)
        }
        Mode::Eval => (
            state.running_mean.data().iter().map(|v| v.f64()).collect(),
            state.running_var.data().iter().map(|v| v.f64()).collect(),
        ),
    };
    let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let (g, b) = (state.gain.value.data(), state.bias.value.data());
    for (r, row) in x.chunks(w).enumerate() {
        for i in 0..w {
            let h = T::of((row[i].f64() - mean[i]) * rstd[i]);
            xhat[r * w + i] = h;
            out[r * w + i] = g[i] * h + b[i];
        }
    }
    Ok((
        out,
        BnCache {
            xhat,
            rstd,
            batch_stats: mode == Mode::Train,
        },
    ))
}

fn bn_backward<T: Scalar>(dy: &[T], cache: &BnCache<T>, state: &mut BatchNormState<T>) -> Vec<T> {
    let w = state.width();
    let n = dy.len() / w;
    let gain = state.gain.value.data().to_vec();
    {
        let dg = state.gain.grad.data_mut();
        for (row, h) in dy.chunks(w).zip(cache.xhat.chunks(w)) {
            for i in 0..w {
                dg[i] = dg[i] + row[i] * h[i];
            }
        }
    }
    {
        let db = state.bias.grad.data_mut();
        for row in dy.chunks(w) {
            for i in 0..w {
                db[i] = db[i] + row[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    if !cache.batch_stats {
        for (r, row) in dy.chunks(w).enumerate() {
            for i in 0..w {
                dx[r * w + i] = T::of(row[i].f64() * gain[i].f64() * cache.rstd[i]);
            }
        }
        return dx;
    }
    let mut mean_dh = vec![0.0f64; w];
    let mut mean_dh_h = vec![0.0f64; w];
    for (row, h) in dy.chunks(w).zip(cache.xhat.chunks(w)) {
        for i in 0..w {
            let dh = row[i].f64() * gain[i].f64();
            mean_dh[i] += dh;
            mean_dh_h[i] += dh * h[i].f64();
        }
    }
    for i in 0..w {
        mean_dh[i] /= n as f64;
        mean_dh_h[i] /= n as f64;
    }
    for (r, (row, h)) in dy.chunks(w).zip(cache.xhat.chunks(w)).enumerate() {
        for i in 0..w {
            let dh = row[i].f64() * gain[i].f64();
            dx[r * w + i] = T::of(cache.rstd[i] * (dh - mean_dh[i] - h[i].f64() * mean_dh_h[i]));
        }
    }
    dx
}

/// Batch normalization of `[batch, width]`; train mode also updates running statistics.
pub fn bn_forward<T: Scalar>(x: &Tensor<T>, state: &mut BatchNormState<T>, mode: Mode) -> Result<Tensor<T>> {
    let (out, _) = bn_forward_raw(x.data(), state, mode)?;
    Tensor::from_vec(x.shape(), out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T = f32> {
    pub l1_w: Parameter<T>,
    pub l1_b: Parameter<T>,
    pub bn1: BatchNormState<T>,
    pub l2_w: Parameter<T>,
    pub l2_b: Parameter<T>,
    pub bn2: BatchNormState<T>,
    pub l3_w: Parameter<T>,
    pub l3_b: Parameter<T>,
}

impl<T: Scalar> HeadParams<T> {
    /// Fresh head drawn from `(seed, stream)`.
    pub fn init(cfg: &HeadConfig, seed: u64, stream: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, stream);
        let [a, b, c, d] = cfg.widths();
        Ok(HeadParams {
            l1_w: Parameter::new("head.l1.weight", xavier_uniform(b, a, &mut rng)),
            l1_b: Parameter::new("head.l1.bias", Tensor::zeros(&[b])),
            bn1: BatchNormState::new("head.bn1", b, cfg.bn_momentum, cfg.bn_eps),
            l2_w: Parameter::new("head.l2.weight", xavier_uniform(c, b, &mut rng)),
            l2_b: Parameter::new("head.l2.bias", Tensor::zeros(&[c])),
            bn2: BatchNormState::new("head.bn2", c, cfg.bn_momentum, cfg.bn_eps),
            l3_w: Parameter::new("head.l3.weight", xavier_uniform(d, c, &mut rng)),
            l3_b: Parameter::new("head.l3.bias", Tensor::zeros(&[d])),
        })
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![
            &self.l1_w, &self.l1_b, &self.bn1.gain, &self.bn1.bias, &self.l2_w, &self.l2_b,
            &self.bn2.gain, &self.bn2.bias, &self.l3_w, &self.l3_b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![
            &mut self.l1_w, &mut self.l1_b, &mut self.bn1.gain, &mut self.bn1.bias,
            &mut self.l2_w, &mut self.l2_b, &mut self.bn2.gain, &mut self.bn2.bias,
            &mut self.l3_w, &mut self.l3_b,
        ]
    }

    /// Running statistics, named like parameters, for checkpointing.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("head.bn1.running_mean".into(), &self.bn1.running_mean),
            ("head.bn1.running_var".into(), &self.bn1.running_var),
            ("head.bn2.running_mean".into(), &self.bn2.running_mean),
            ("head.bn2.running_var".into(), &self.bn2.running_var),
        ]
    }

    /// Parameters followed by running statistics, by name.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let HeadParams { l1_w, l1_b, bn1, l2_w, l2_b, bn2, l3_w, l3_b } = self;
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for p in [l1_w, l1_b, &mut bn1.gain, &mut bn1.bias, l2_w, l2_b, &mut bn2.gain, &mut bn2.bias, l3_w, l3_b] {
            out.push((p.name.clone(), &mut p.value));
        }
        out.push(("head.bn1.running_mean".into(), &mut bn1.running_mean));
        out.push(("head.bn1.running_var".into(), &mut bn1.running_var));
        out.push(("head.bn2.running_mean".into(), &mut bn2.running_mean));
        out.push(("head.bn2.running_var".into(), &mut bn2.running_var));
        out
    }

    pub fn cast<U: Scalar>(&self) -> HeadParams<U> {
        HeadParams {
            l1_w: self.l1_w.cast(),
            l1_b: self.l1_b.cast(),
            bn1: self.bn1.cast(),
            l2_w: self.l2_w.cast(),
            l2_b: self.l2_b.cast(),
            bn2: self.bn2.cast(),
            l3_w: self.l3_w.cast(),
            l3_b: self.l3_b.cast(),
        }
    }

    fn check_input(&self, pooled: &Tensor<T>) -> Result<usize> {
        let d_in = self.l1_w.value.shape()[1];
        match pooled.shape() {
            [n, d] if *d == d_in && *n >= 1 => Ok(*n),
            other => Err(Error::Shape {
                op: "head_forward",
                left: other.to_vec(),
                right: vec![d_in],
            }),
        }
    }
}

/// Activations kept for [`head_backward`].
#[derive(Clone, Debug)]
pub struct HeadCache<T> {
    x: Vec<T>,
    bn1: BnCache<T>,
    r1: Vec<T>,
    drop1: Option<DropoutMask<T>>,
    a1: Vec<T>,
    bn2: BnCache<T>,
    r2: Vec<T>,
    drop2: Option<DropoutMask<T>>,
    a2: Vec<T>,
    log_probs: Vec<T>,
    n_classes: usize,
}

impl<T: Scalar> HeadCache<T> {
    /// On/off state of every ReLU unit; identifies the active linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.r1.iter().chain(&self.r2).map(|v| *v > T::zero()).collect()
    }
}

fn relu<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Log-probabilities `[batch, n_classes]` plus the cache for the backward pass.
pub fn head_forward<T: Scalar>(
    pooled: &Tensor<T>,
    params: &mut HeadParams<T>,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, HeadCache<T>)> {
    let n = params.check_input(pooled)?;
    let x = pooled.data().to_vec();
    let z1 = linear(&x, &params.l1_w, &params.l1_b);
    let (mut r1, bn1) = bn_forward_raw(&z1, &mut params.bn1, mode)?;
    relu(&mut r1);
    let mut a1 = r1.clone();
    let drop1 = DropoutMask::sample(a1.len(), dropout_rate, mode, rng)?;
    if let Some(m) = &drop1 {
        m.apply(&mut a1);
    }
    let z2 = linear(&a1, &params.l2_w, &params.l2_b);
    let (mut r2, bn2) = bn_forward_raw(&z2, &mut params.bn2, mode)?;
    relu(&mut r2);
    let mut a2 = r2.clone();
    let drop2 = DropoutMask::sample(a2.len(), dropout_rate, mode, rng)?;
    if let Some(m) = &drop2 {
        m.apply(&mut a2);
    }
    let mut logits = linear(&a2, &params.l3_w, &params.l3_b);
    let k = params.l3_b.len();
    log_softmax_rows(&mut logits, k);
    let out = Tensor::from_vec(&[n, k], logits.clone())?;
    Ok((
        out,
        HeadCache {
            x,
            bn1,
            r1,
            drop1,
            a1,
            bn2,
            r2,
            drop2,
            a2,
            log_probs: logits,
            n_classes: k,
        },
    ))
}

/// Accumulates head gradients given `d loss / d log_probs`; returns `d loss / d pooled`.
pub fn head_backward<T: Scalar>(d_log_probs: &Tensor<T>, cache: &HeadCache<T>, params: &mut HeadParams<T>) -> Tensor<T> {
    let n = cache.log_probs.len() / cache.n_classes;
    let dz3 = log_softmax_backward(&cache.log_probs, d_log_probs.data(), cache.n_classes);
    let mut da2 = linear_backward(&cache.a2, &dz3, &mut params.l3_w, &mut params.l3_b);
    if let Some(m) = &cache.drop2 {
        m.apply(&mut da2);
    }
    for (g, &r) in da2.iter_mut().zip(&cache.r2) {
        if r <= T::zero() {
            *g = T::zero();
        }
    }
    let dz2 = bn_backward(&da2, &cache.bn2, &mut params.bn2);
    let mut da1 = linear_backward(&cache.a1, &dz2, &mut params.l2_w, &mut params.l2_b);
    if let Some(m) = &cache.drop1 {
        m.apply(&mut da1);
    }
    for (g, &r) in da1.iter_mut().zip(&cache.r1) {
        if r <= T::zero() {
            *g = T::zero();
        }
    }
    let dz1 = bn_backward(&da1, &cache.bn1, &mut params.bn1);
    let dx = linear_backward(&cache.x, &dz1, &mut params.l1_w, &mut params.l1_b);
    let d_in = dx.len() / n;
    Tensor::from_vec(&[n, d_in], dx).expect("shape follows input")
}

/// Row-wise argmax; ties go to the lowest index.
pub fn predict<T: Scalar>(log_probs: &Tensor<T>) -> Vec<usize> {
    let k = log_probs.last_dim().max(1);
    log_probs
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::{stream, unit_f64};

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = stream_rng(seed, 0);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| unit_f64(&mut r) * 4.0 - 2.0).collect()).unwrap()
    }

    #[test]
    fn head_widths_and_output_shape() {
        let cfg = HeadConfig::new(768);
        assert_eq!(cfg.widths(), [768, 200, 150, 2]);
        let mut p = HeadParams::<f64>::init(&HeadConfig::new(8), 1, stream::HEAD).unwrap();
        assert_eq!(p.l1_w.value.shape(), &[200, 8]);
        assert_eq!(p.l2_w.value.shape(), &[150, 200]);
        assert_eq!(p.l3_w.value.shape(), &[2, 150]);
        let mut rng = stream_rng(0, stream::DROPOUT);
        let (lp, _) = head_forward(&random(&[5, 8], 1), &mut p, 0.1, Mode::Train, &mut rng).unwrap();
        assert_eq!(lp.shape(), &[5, 2]);
        for row in lp.data().chunks(2) {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let count: usize = p.params().iter().map(|p| p.len()).sum();
        assert_eq!(count, HeadConfig::new(8).param_count());
    }

    #[test]
    fn train_batch_of_one_is_contract_error() {
        let mut p = HeadParams::<f32>::init(&HeadConfig::new(4), 1, stream::HEAD).unwrap();
        let mut rng = stream_rng(0, stream::DROPOUT);
        let x = Tensor::from_vec(&[1, 4], vec![0.1; 4]).unwrap();
        assert!(matches!(
            head_forward(&x, &mut p, 0.1, Mode::Train, &mut rng),
            Err(Error::Contract(_))
        ));
        assert!(head_forward(&x, &mut p, 0.1, Mode::Eval, &mut rng).is_ok());
    }

    #[test]
    fn bn_train_normalizes_and_eval_identity() {
        let mut s = BatchNormState::<f64>::new("bn", 3, 0.1, 1e-5);
        let x = random(&[16, 3], 2);
        let (_, cache) = bn_forward_raw(x.data(), &mut s, Mode::Train).unwrap();
        for i in 0..3 {
            let col: Vec<f64> = cache.xhat.chunks(3).map(|r| r[i]).collect();
            let m = col.iter().sum::<f64>() / 16.0;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-4);
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
        assert!(s.running_var.data().iter().all(|v| *v >= 0.0));

        let mut fresh = BatchNormState::<f64>::new("bn", 3, 0.1, 0.0);
        let y = bn_forward(&x, &mut fresh, Mode::Eval).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);

        let constant = Tensor::from_vec(&[4, 1], vec![3.0; 4]).unwrap();
        let mut s = BatchNormState::<f64>::new("bn", 1, 0.1, 1e-5);
        let y = bn_forward(&constant, &mut s, Mode::Train).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut s = BatchNormState::<f64>::new("bn", 1, 0.1, 1e-5);
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        bn_forward(&x, &mut s, Mode::Train).unwrap();
        assert!((s.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((s.running_var.data()[0] - (0.9 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn eval_is_deterministic_and_batch_independent() {
        let mut p = HeadParams::<f64>::init(&HeadConfig::new(6), 3, stream::HEAD).unwrap();
        let mut rng = stream_rng(0, stream::DROPOUT);
        head_forward(&random(&[8, 6], 4), &mut p, 0.1, Mode::Train, &mut rng).unwrap();
        let x = random(&[5, 6], 5);
        let (all, _) = head_forward(&x, &mut p, 0.1, Mode::Eval, &mut rng).unwrap();
        let (again, _) = head_forward(&x, &mut p, 0.1, Mode::Eval, &mut rng).unwrap();
        assert_eq!(all, again);
        for r in 0..5 {
            let one = Tensor::from_vec(&[1, 6], x.data()[r * 6..(r + 1) * 6].to_vec()).unwrap();
            let (lp, _) = head_forward(&one, &mut p, 0.1, Mode::Eval, &mut rng).unwrap();
            for c in 0..2 {
                assert!((lp.data()[c] - all.data()[r * 2 + c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn predict_argmax_and_ties() {
        let t = Tensor::from_vec(&[3, 2], vec![-0.1, -2.3, -0.7, -0.7, -3.0, -0.05]).unwrap();
        assert_eq!(predict(&t), vec![0, 0, 1]);
        let shifted = t.map(|v| v + 7.5);
        assert_eq!(predict(&shifted), predict(&t));
    }

    #[test]
    fn train_mode_backward_matches_finite_differences() {
        // Batch statistics couple the rows, so this checks the full BN backward.
        let mut p = HeadParams::<f64>::init(&HeadConfig { h1: 5, h2: 4, ..HeadConfig::new(3) }, 2, stream::HEAD).unwrap();
        let x = random(&[4, 3], 9);
        let targets = [0usize, 1, 1, 0];
        let loss = |p: &mut HeadParams<f64>, x: &Tensor<f64>| {
            let mut q = p.clone();
            let mut rng = stream_rng(0, stream::DROPOUT);
            let (lp, _) = head_forward(x, &mut q, 0.0, Mode::Train, &mut rng).unwrap();
            crate::numerics::nll_loss(&lp, &targets).unwrap().0
        };
        let mut q = p.clone();
        let mut rng = stream_rng(0, stream::DROPOUT);
        let (lp, cache) = head_forward(&x, &mut q, 0.0, Mode::Train, &mut rng).unwrap();
        let (_, g) = crate::numerics::nll_loss(&lp, &targets).unwrap();
        let dx = head_backward(&g, &cache, &mut q);
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let num = (loss(&mut p, &xp) - loss(&mut p, &xm)) / (2.0 * eps);
            assert!((num - dx.data()[i]).abs() < 1e-6, "{i}: {num} vs {}", dx.data()[i]);
        }
        for k in 0..p.bn1.gain.len() {
            let mut pp = p.clone();
            pp.bn1.gain.value.data_mut()[k] += eps;
            let mut pm = p.clone();
            pm.bn1.gain.value.data_mut()[k] -= eps;
            let num = (loss(&mut pp, &x) - loss(&mut pm, &x)) / (2.0 * eps);
            assert!((num - q.bn1.gain.grad.data()[k]).abs() < 1e-6);
        }
    }
}
