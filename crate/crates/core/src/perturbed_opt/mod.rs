//! Training with curvature-scaled weight noise.
//!
//! Each step perturbs the small-gradient coordinates of `w` by
//! `u_i ~ U(−σ_i, σ_i)`, where
//!
//! ```text
//! κ_i = (γ / ln(1+epoch)) |w_i| + ε
//! σ_i = min(1 / (ln(1+epoch) √(η (h_i + ρ_i κ_i))), κ_i) · 1{|g_i| < β₂}
//! ```
//!
//! `h` is the smoothed squared gradient and `ρ_i` tracks how fast `h_i`
//! moves per unit step. The gradient at `w + u` is handed to the base
//! optimizer, which steps from the unperturbed `w`. Setting
//! [`GradientSource::Unperturbed`] feeds it the gradient at `w` instead.

mod checkpoint;
mod train;

pub use checkpoint::{read_checkpoint, read_checkpoint_file, write_checkpoint, write_checkpoint_file, CHECKPOINT_MAGIC};
pub use train::{run_training, run_training_from, TrainConfig, TrainOutcome};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::hessian::{HessianState, DEFAULT_BETA1};
use crate::nn::{LossMode, MlpModel, ParamVector};
use crate::rng::{stream_rng, Stream};

/// The optimizer the perturbation wraps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BaseOptimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "adam_b1")]
        b1: f64,
        #[serde(default = "adam_b2")]
        b2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn adam_b1() -> f64 {
    0.9
}
fn adam_b2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl BaseOptimizer {
    pub fn adam(lr: f64) -> Self {
        BaseOptimizer::Adam {
            lr,
            b1: adam_b1(),
            b2: adam_b2(),
            eps: adam_eps(),
        }
    }

    fn initial_state(&self, m: usize) -> BaseState {
        match self {
            BaseOptimizer::Sgd { .. } => BaseState::Sgd,
            BaseOptimizer::Adam { .. } => BaseState::Adam {
                m: vec![0.0; m],
                v: vec![0.0; m],
                t: 0,
            },
        }
    }
}

/// Moment estimates carried by the base optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

/// Whether the perturbation is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    Enabled,
    /// Plain base optimizer on the same schedule.
    Disabled,
    /// Full perturbation machinery with every σ multiplied by zero.
    ForcedZero,
}

/// Which gradient the base optimizer consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    /// `∇L(w + u)`, the only gradient the loop computes.
    Perturbed,
    /// `∇L(w)`, at the price of a second backward pass.
    Unperturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbedOptConfig {
    pub eta: f64,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub base_optimizer: BaseOptimizer,
    pub mode: PerturbationMode,
    pub gradient_source: GradientSource,
}

impl Default for PerturbedOptConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            gamma: 0.1,
            beta1: DEFAULT_BETA1,
            beta2: 0.1,
            epsilon: 1e-5,
            base_optimizer: BaseOptimizer::Sgd { lr: 0.1 },
            mode: PerturbationMode::Enabled,
            gradient_source: GradientSource::Perturbed,
        }
    }
}

impl PerturbedOptConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = match self.base_optimizer {
            BaseOptimizer::Sgd { lr } | BaseOptimizer::Adam { lr, .. } => lr,
        };
        if !(self.eta > 0.0)
            || !(self.gamma >= 0.0)
            || !(self.epsilon > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(lr > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "invalid optimizer settings: eta {}, gamma {}, epsilon {}, beta1 {}, lr {lr}",
                self.eta, self.gamma, self.epsilon, self.beta1
            )));
        }
        Ok(())
    }
}

/// Neighborhood radii for the current epoch.
pub fn scheduled_kappa(w: &[f64], gamma: f64, epsilon: f64, epoch: u64) -> Vec<f64> {
    let decay = (1.0 + epoch as f64).ln();
    w.iter().map(|x| gamma / decay * x.abs() + epsilon).collect()
}

/// Perturbation scales for one step, before gating.
pub fn scheduled_sigma(h: &[f64], rho: &[f64], kappa: &[f64], eta: f64, epoch: u64) -> Vec<f64> {
    let decay = (1.0 + epoch as f64).ln();
    h.iter()
        .zip(rho)
        .zip(kappa)
        .map(|((h, r), k)| (1.0 / (decay * (eta * (h + r * k)).sqrt())).min(*k))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub w: ParamVector,
    pub hessian: HessianState,
    /// The epoch the next step belongs to, starting at 1.
    pub epoch: u64,
    /// Steps taken so far.
    pub t: u64,
    pub base: BaseState,
    pub rng_seed: u64,
    /// `g_t`, the gradient from the previous step.
    pub prev_grad: Option<Vec<f64>>,
}

/// What one step did, for diagnostics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub sigma: Vec<f64>,
    pub kappa: Vec<f64>,
    pub u: Vec<f64>,
    pub grad: Vec<f64>,
    /// Raw loss at the evaluated point.
    pub loss: f64,
}

impl OptState {
    pub fn new(w: ParamVector, config: &PerturbedOptConfig, seed: u64) -> Self {
        let m = w.len();
        Self {
            hessian: HessianState::new(m, config.beta1),
            base: config.base_optimizer.initial_state(m),
            w,
            epoch: 1,
            t: 0,
            rng_seed: seed,
            prev_grad: None,
        }
    }

    /// One iteration of the perturbed loop on `batch`.
    pub fn step(
        &mut self,
        model: &MlpModel,
        batch: &SampleBatch,
        config: &PerturbedOptConfig,
    ) -> Result<StepTrace> {
        let m = self.w.len();
        if self.epoch == 0 {
            return Err(Error::InvalidArgument("epochs are numbered from 1".into()));
        }
        let kappa = scheduled_kappa(&self.w, config.gamma, config.epsilon, self.epoch);
        let mut sigma = vec![0.0; m];
        let mut u = vec![0.0; m];
        if self.t > 0 && config.mode != PerturbationMode::Disabled {
            sigma = scheduled_sigma(
                &self.hessian.h,
                &self.hessian.rho_per_param,
                &kappa,
                config.eta,
                self.epoch,
            );
            let prev = self.prev_grad.as_deref().unwrap_or(&[]);
            for (i, s) in sigma.iter_mut().enumerate() {
                if !(prev.get(i).map_or(false, |g| g.abs() < config.beta2)) {
                    *s = 0.0;
                }
                if config.mode == PerturbationMode::ForcedZero {
                    *s *= 0.0;
                }
            }
            let mut rng = stream_rng(self.rng_seed, 0, Stream::Perturb, self.t);
            for (ui, s) in u.iter_mut().zip(&sigma) {
                *ui = s * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        debug_assert!(u.iter().zip(&kappa).all(|(a, k)| !(a.abs() > *k)));

        let point: Vec<f64> = if config.mode == PerturbationMode::Disabled {
            self.w.to_vec()
        } else {
            self.w.iter().zip(&u).map(|(a, b)| a + b).collect()
        };
        let (loss, grad) = model.evaluate(&point, batch, Some(LossMode::Raw))?;
        let grad = grad.unwrap_or_default();
        let bad: Vec<usize> = (0..m).filter(|&i| !grad[i].is_finite()).collect();
        if !bad.is_empty() {
            return Err(Error::NonFiniteGradient {
                step: self.t,
                indices: bad,
                sigma,
                u,
            });
        }

        let h_prev = self.hessian.h.clone();
        self.hessian.update_smoothed(&grad);
        let update_grad = match config.gradient_source {
            GradientSource::Perturbed => grad.clone(),
            GradientSource::Unperturbed => {
                let (_, g) = model.evaluate(&self.w, batch, Some(LossMode::Raw))?;
                g.unwrap_or_default()
            }
        };
        let w_prev = self.w.to_vec();
        self.apply_base(&config.base_optimizer, &update_grad);
        self.hessian
            .update_rho_per_param(&h_prev, &self.hessian.h.clone(), &w_prev, &self.w);
        self.prev_grad = Some(grad.clone());
        self.t += 1;
        Ok(StepTrace {
            sigma,
            kappa,
            u,
            grad,
            loss: loss.raw,
        })
    }

    fn apply_base(&mut self, opt: &BaseOptimizer, g: &[f64]) {
        match (opt, &mut self.base) {
            (BaseOptimizer::Sgd { lr }, _) => {
                for (w, gi) in self.w.iter_mut().zip(g) {
                    *w -= lr * gi;
                }
            }
            (BaseOptimizer::Adam { lr, b1, b2, eps }, BaseState::Adam { m, v, t }) => {
                *t += 1;
                let c1 = 1.0 - b1.powi(*t as i32);
                let c2 = 1.0 - b2.powi(*t as i32);
                for i in 0..g.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    self.w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            (BaseOptimizer::Adam { .. }, BaseState::Sgd) => {
                unreachable!("optimizer state does not match the configured optimizer")
            }
        }
    }
}
