//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use rand::Rng;

use crate::batchnorm::BnMode;
use crate::config::{Branch, RunConfig};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::{Result, Tensor, TensorError};
use crate::train::loss_and_grads;

/// A loss together with its analytic gradient, one vector per parameter.
pub type LossAndGrad = (f64, Vec<Vec<f64>>);

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries sitting on a kink, where one-sided slopes disagree.
    pub non_comparable: usize,
    /// `(analytic, numeric)` at the entry with the largest relative error.
    pub worst: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn non_comparable(&self) -> usize {
        self.params.iter().map(|p| p.non_comparable).sum()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<28} {:>8} {:>8} {:>12} {:>12} {:>12}",
            "param", "checked", "kinks", "max_rel_err", "analytic", "numeric"
        )?;
        for p in &self.params {
            writeln!(
                f,
                "{:<28} {:>8} {:>8} {:>12.3e} {:>12.3e} {:>12.3e}",
                p.name, p.checked, p.non_comparable, p.max_rel_error, p.worst.0, p.worst.1
            )?;
        }
        write!(f, "overall max relative error: {:.3e}", self.max_rel_error())
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries checked per parameter tensor; `None` checks all.
    pub samples_per_param: Option<usize>,
    pub seed: u64,
    /// One-sided slopes further apart than `kink_tol · max(1, |slope|)` mark a kink.
    pub kink_tol: f64,
    /// Lower bound on the relative-error denominator. Central differences
    /// carry round-off near `1e-16 · |loss| / step`, so entries far below this
    /// floor are compared in absolute terms.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples_per_param: None,
            seed: 0,
            kink_tol: 1e-3,
            abs_floor: 1e-6,
        }
    }
}

/// Compares `loss_fn`'s analytic gradient against central differences.
///
/// The relative error of an entry is
/// `|analytic − numeric| / max(|analytic|, |numeric|, abs_floor)`.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<LossAndGrad>,
{
    if !(opts.step > 0.0) {
        return Err(TensorError::Invalid(format!("finite-difference step must be > 0, got {}", opts.step)));
    }
    let (f0, analytic) = loss_fn(params)?;
    let (f0_again, _) = loss_fn(params)?;
    if f0.to_bits() != f0_again.to_bits() {
        return Err(TensorError::Invalid(format!(
            "loss function is not deterministic: {f0} vs {f0_again}"
        )));
    }
    if analytic.len() != params.len() {
        return Err(TensorError::Invalid("gradient count differs from parameter count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let mut work = params.clone();
    let mut report = GradCheckReport { step: h, params: Vec::new() };
    for id in params.ids() {
        let n = params.get(id).numel();
        let entries: Vec<usize> = match opts.samples_per_param {
            Some(k) if k < n => {
                let mut e = sample(&mut rng, n, k).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            max_rel_error: 0.0,
            checked: 0,
            non_comparable: 0,
            worst: (0.0, 0.0),
        };
        for k in entries {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let (fp, _) = loss_fn(&work)?;
            work.get_mut(id).data_mut()[k] = orig - h;
            let (fm, _) = loss_fn(&work)?;
            work.get_mut(id).data_mut()[k] = orig;

            let forward = (fp - f0) / h;
            let backward = (f0 - fm) / h;
            let spread = (forward - backward).abs();
            if spread > opts.kink_tol * forward.abs().max(backward.abs()).max(1.0) {
                check.non_comparable += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[id.index()][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.abs_floor);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst = (a, numeric);
            }
            check.checked += 1;
        }
        report.params.push(check);
    }
    Ok(report)
}

/// Hyperparameters of the end-to-end check: d=8, m=4, K=3, N=3.
pub fn toy_check_config() -> RunConfig {
    RunConfig {
        d_raw: 6,
        regions: 3,
        embed_dim: 5,
        hidden_dim: 8,
        graph_dim: 4,
        attn_hidden: 4,
        steps: 3,
        ..RunConfig::toy()
    }
}

/// Checks the full joint ranking loss of a fresh toy model on a random
/// two-pair batch with captions of length 4.
pub fn check_joint_loss(config: &RunConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    const VOCAB: usize = 7;
    const LEN: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<Tensor> = (0..2)
        .map(|_| {
            let n = config.regions * config.d_raw;
            Tensor::matrix(config.regions, config.d_raw, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        })
        .collect();
    let captions: Vec<Vec<usize>> = (0..2).map(|_| (0..LEN).map(|_| rng.gen_range(1..VOCAB)).collect()).collect();
    let model = Model::new(config, VOCAB, Branch::Joint, seed);
    let imgs: Vec<&Tensor> = images.iter().collect();
    let txts: Vec<&[usize]> = captions.iter().map(Vec::as_slice).collect();
    let loss_fn = |p: &ParamStore| {
        let mut m = model.clone();
        m.params = p.clone();
        let mut bn = model.bn.clone().with_mode(BnMode::Training);
        loss_and_grads(&m, &imgs, &txts, &[0, 1], &mut bn)
    };
    finite_diff_check(loss_fn, &model.params, opts)
}
