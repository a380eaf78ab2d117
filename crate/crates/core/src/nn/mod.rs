//! Dense networks with hand-written reverse-mode gradients, the loss
//! objectives every estimator consumes, and analytic test heads.

pub mod heads;
mod io;
mod model;

pub use io::{read_params, read_params_file, write_params, write_params_file, PARAMS_MAGIC};
pub use model::{
    Activation, LayerParams, LossMode, LossValue, MlpModel, ModelSpec, StructuredParams,
};

use std::ops::{Deref, DerefMut};

use crate::data::SampleBatch;
use crate::error::Result;

/// Flat parameter vector `w` of a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A scalar loss surface over a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> Result<f64>;
    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>>;

    fn value_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(w)?, self.gradient(w)?))
    }
}

/// Empirical loss of `model` on `batch` as an [`Objective`].
#[derive(Debug, Clone, Copy)]
pub struct MlpObjective<'a> {
    pub model: &'a MlpModel,
    pub batch: &'a SampleBatch,
    pub mode: LossMode,
}

impl<'a> MlpObjective<'a> {
    pub fn new(model: &'a MlpModel, batch: &'a SampleBatch, mode: LossMode) -> Self {
        Self { model, batch, mode }
    }

    pub fn raw(model: &'a MlpModel, batch: &'a SampleBatch) -> Self {
        Self::new(model, batch, LossMode::Raw)
    }

    pub fn bounded(model: &'a MlpModel, batch: &'a SampleBatch) -> Self {
        Self::new(model, batch, LossMode::Bounded)
    }
}

impl Objective for MlpObjective<'_> {
    fn dim(&self) -> usize {
        self.model.param_count()
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        let (loss, _) = self.model.evaluate(w, self.batch, None)?;
        Ok(match self.mode {
            LossMode::Raw => loss.raw,
            LossMode::Bounded => loss.bounded,
        })
    }

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(w)?.1)
    }

    fn value_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (loss, grad) = self.model.evaluate(w, self.batch, Some(self.mode))?;
        let value = match self.mode {
            LossMode::Raw => loss.raw,
            LossMode::Bounded => loss.bounded,
        };
        Ok((value, grad.unwrap_or_default()))
    }
}

/// Mean loss of `model` at `w` on `batch`.
pub fn forward(model: &MlpModel, w: &[f64], batch: &SampleBatch) -> Result<LossValue> {
    Ok(model.evaluate(w, batch, None)?.0)
}

/// Reverse-mode gradient of the bounded loss.
pub fn gradient(model: &MlpModel, w: &[f64], batch: &SampleBatch) -> Result<ParamVector> {
    Ok(ParamVector::from(
        model.evaluate(w, batch, Some(LossMode::Bounded))?.1.unwrap_or_default(),
    ))
}

/// Reverse-mode gradient of the raw cross-entropy (the training loss).
pub fn gradient_raw(model: &MlpModel, w: &[f64], batch: &SampleBatch) -> Result<ParamVector> {
    Ok(ParamVector::from(
        model.evaluate(w, batch, Some(LossMode::Raw))?.1.unwrap_or_default(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MixtureSpec, SyntheticTask};
    use crate::error::Error;
    use proptest::prelude::*;

    fn toy_batch(n: usize) -> SampleBatch {
        SyntheticTask::new(MixtureSpec::default(), 2001)
            .unwrap()
            .sample(n, 0)
            .unwrap()
    }

    fn central_diff(obj: &impl Objective, w: &[f64], h: f64) -> Vec<f64> {
        (0..w.len())
            .map(|i| {
                let mut p = w.to_vec();
                p[i] += h;
                let fp = obj.value(&p).unwrap();
                p[i] -= 2.0 * h;
                let fm = obj.value(&p).unwrap();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_uniform_prediction() {
        let model = MlpModel::toy();
        let batch = toy_batch(37);
        let loss = forward(&model, &[0.0, 0.0], &batch).unwrap();
        assert!((loss.raw - std::f64::consts::LN_2).abs() < 1e-15);
        let p = model.predict_proba(&[0.0, 0.0], batch.row(0)).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        // single linear layer: logits = W x + b with a huge margin for class 1
        let model = MlpModel::dense(&[1, 2], Activation::Sigmoid).unwrap();
        let batch = SampleBatch::new(vec![1.0], vec![1], 1, 2).unwrap();
        let w = [-400.0, 400.0, 0.0, 0.0];
        let loss = forward(&model, &w, &batch).unwrap();
        assert_eq!(loss.raw, 0.0);
        let p = model.predict_proba(&w, &[1.0]).unwrap();
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn bounded_loss_survives_huge_logits() {
        let model = MlpModel::dense(&[1, 2], Activation::Sigmoid).unwrap();
        let batch = SampleBatch::new(vec![1.0, -1.0], vec![0, 0], 1, 2).unwrap();
        let w = [1e300, -1e300, 0.0, 0.0];
        let loss = forward(&model, &w, &batch).unwrap();
        assert!(loss.bounded >= 0.0 && loss.bounded <= 1.0);
        assert_eq!(loss.bounded, 0.5);
        let g = gradient(&model, &w, &batch).unwrap();
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let model = MlpModel::dense(&[2, 5, 3], Activation::Relu).unwrap();
        let w = model.init_params(3);
        let p = model.predict_proba(&w, &[0.3, -2.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mismatches_are_structured_errors() {
        let model = MlpModel::dense(&[3, 4, 2], Activation::Relu).unwrap();
        let batch = toy_batch(4);
        let w = model.init_params(0);
        assert!(matches!(
            forward(&model, &w, &batch),
            Err(Error::LayerWidth { layer: 0, expected: 3, got: 2 })
        ));
        assert!(matches!(
            forward(&model, &w[..5], &batch),
            Err(Error::ParamCount { .. })
        ));
    }

    #[test]
    fn flatten_unflatten_roundtrip_is_bit_exact() {
        let model = MlpModel::dense(&[2, 7, 3, 2], Activation::Sigmoid).unwrap();
        let w = model.init_params(11);
        let back = model.flatten(&model.unflatten(&w).unwrap()).unwrap();
        assert_eq!(
            w.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        let toy = MlpModel::toy();
        let p = ParamVector::from(vec![0.25, -3.5]);
        assert_eq!(toy.flatten(&toy.unflatten(&p).unwrap()).unwrap(), p);
        assert!(toy.flatten(&model.unflatten(&w).unwrap()).is_err());
    }

    #[test]
    fn toy_mode_exposes_two_shared_parameters() {
        let model = MlpModel::toy();
        assert_eq!(model.param_count(), 2);
        let batch = toy_batch(50);
        let obj = MlpObjective::raw(&model, &batch);
        // each free parameter drives every layer, so both have nonzero sensitivity
        let fd = central_diff(&obj, &[0.7, -0.4], 1e-5);
        assert!(fd.iter().all(|d| d.abs() > 1e-6), "{fd:?}");
        let g = obj.gradient(&[0.7, -0.4]).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn reparameterize_identity_and_rejection() {
        let model = MlpModel::dense(&[2, 6, 2], Activation::Relu).unwrap();
        let w = model.init_params(4);
        assert_eq!(model.reparameterize(&w, 1.0).unwrap(), w);
        let sig = MlpModel::dense(&[2, 6, 2], Activation::Sigmoid).unwrap();
        assert!(sig.reparameterize(&w, 2.0).is_err());
        let deep = MlpModel::dense(&[2, 3, 3, 2], Activation::Relu).unwrap();
        assert!(deep.reparameterize(&deep.init_params(0), 2.0).is_err());
        assert!(MlpModel::toy().reparameterize(&ParamVector::zeros(2), 2.0).is_err());
    }

    #[test]
    fn reparameterize_preserves_loss() {
        let model = MlpModel::dense(&[2, 6, 2], Activation::Relu).unwrap();
        let batch = toy_batch(64);
        for seed in 0..5 {
            let mut w = model.init_params(seed);
            for (i, x) in w.iter_mut().enumerate() {
                *x += 0.1 * ((i as f64) * 0.37).sin();
            }
            let base = forward(&model, &w, &batch).unwrap().raw;
            for alpha in [0.5, 2.0, 10.0] {
                let v = model.reparameterize(&w, alpha).unwrap();
                let l = forward(&model, &v, &batch).unwrap().raw;
                assert!((l - base).abs() < 1e-9, "alpha {alpha}: {l} vs {base}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn gradient_matches_central_differences(
            seed in 0u64..1000,
            hidden in 1usize..6,
            depth in 1usize..3,
            n in 1usize..20,
        ) {
            // Oracle: central differences of the forward pass, step 1e-4.
            let mut widths = vec![2];
            widths.extend(std::iter::repeat(hidden).take(depth));
            widths.push(2);
            let model = MlpModel::dense(&widths, Activation::Sigmoid).unwrap();
            let batch = SampleBatch::new(
                (0..2 * n).map(|i| ((i as f64 + seed as f64) * 0.731).sin() * 2.0).collect(),
                (0..n).map(|i| (i + seed as usize) % 2).collect(),
                2,
                2,
            ).unwrap();
            let w = model.init_params(seed);
            for mode in [LossMode::Raw, LossMode::Bounded] {
                let obj = MlpObjective::new(&model, &batch, mode);
                let g = obj.gradient(&w).unwrap();
                let fd = central_diff(&obj, &w, 1e-4);
                let scale = fd.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-3);
                let max_rel = g.iter().zip(&fd)
                    .map(|(a, b)| (a - b).abs() / scale)
                    .fold(0.0, f64::max);
                prop_assert!(max_rel < 1e-5, "max relative error {}", max_rel);
            }
        }
    }
}
