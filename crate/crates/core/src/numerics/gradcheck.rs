//! Central finite-difference verification of analytic gradients.

use super::rng::{self, stream, stream_rng};
use super::{Parameter, Scalar};

/// Anything exposing its trainable parameters in a fixed order.
pub trait HasParams<T: Scalar> {
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Perturbation size for `(f(θ+ε) − f(θ−ε)) / 2ε`.
    pub eps: f64,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Upper bound on checked coordinates; larger models are sampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-3,
            floor: 1e-3,
            max_coords: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Coordinates skipped because the perturbation crossed a kink.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares analytic gradients from `backward` against central differences of `loss`.
///
/// `backward` must zero and refill every parameter gradient; `loss` must be a
/// deterministic function of the current parameter values.
pub fn grad_check<T, M, L, B>(model: &mut M, mut loss: L, backward: B, cfg: GradCheckConfig) -> GradCheckReport
where
    T: Scalar,
    M: HasParams<T>,
    L: FnMut(&mut M) -> T,
    B: FnMut(&mut M),
{
    grad_check_piecewise(model, |m| (loss(m), ()), backward, cfg)
}

/// [`grad_check`] for piecewise-smooth losses.
///
/// `loss` also returns a signature of the active linear pieces (for example
/// the ReLU on/off pattern). Coordinates whose signature differs at `θ−ε`,
/// `θ` and `θ+ε` straddle a kink, where central differences are meaningless;
/// they are skipped and replaced by further sampled coordinates.
pub fn grad_check_piecewise<T, M, L, B, K>(
    model: &mut M,
    mut loss: L,
    mut backward: B,
    cfg: GradCheckConfig,
) -> GradCheckReport
where
    T: Scalar,
    M: HasParams<T>,
    L: FnMut(&mut M) -> (T, K),
    B: FnMut(&mut M),
    K: PartialEq,
{
    backward(model);
    let (coords, analytic): (Vec<(usize, usize)>, Vec<f64>) = {
        let params = model.params_mut();
        let mut all: Vec<(usize, usize)> = params
            .iter()
            .enumerate()
            .flat_map(|(pi, p)| (0..p.len()).map(move |i| (pi, i)))
            .collect();
        if all.len() > cfg.max_coords {
            let mut r = stream_rng(cfg.seed, stream::GRADCHECK);
            rng::shuffle(&mut all, &mut r);
        }
        let grads = all.iter().map(|&(pi, i)| params[pi].grad.data()[i].f64()).collect();
        (all, grads)
    };

    let (_, base) = loss(model);
    let eps = T::of(cfg.eps);
    let mut report = GradCheckReport::default();
    for (&(pi, i), &a) in coords.iter().zip(&analytic) {
        if report.checked == cfg.max_coords {
            break;
        }
        let original = model.params_mut()[pi].value.data()[i];
        model.params_mut()[pi].value.data_mut()[i] = original + eps;
        let (plus, sig_plus) = loss(model);
        model.params_mut()[pi].value.data_mut()[i] = original - eps;
        let (minus, sig_minus) = loss(model);
        model.params_mut()[pi].value.data_mut()[i] = original;
        if sig_plus != base || sig_minus != base {
            report.skipped_kinks += 1;
            continue;
        }

        // use the step actually representable in T
        let step = (original + eps).f64() - (original - eps).f64();
        let numeric = (plus.f64() - minus.f64()) / step;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((model.params_mut()[pi].name.clone(), i));
        }
    }
    report
}
