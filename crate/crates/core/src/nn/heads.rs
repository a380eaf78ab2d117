//! Closed-form loss surfaces used to check the numerical estimators.

use super::Objective;
use crate::error::{Error, Result};

fn check(expected: usize, w: &[f64]) -> Result<()> {
    if w.len() != expected {
        return Err(Error::ParamCount {
            expected,
            got: w.len(),
        });
    }
    Ok(())
}

/// `½ Σ d_i w_i²`.
#[derive(Debug, Clone)]
pub struct DiagonalQuadratic {
    pub diag: Vec<f64>,
}

impl DiagonalQuadratic {
    pub fn new(diag: Vec<f64>) -> Self {
        Self { diag }
    }

    /// `½‖w‖²`.
    pub fn isotropic(m: usize) -> Self {
        Self::new(vec![1.0; m])
    }
}

impl Objective for DiagonalQuadratic {
    fn dim(&self) -> usize {
        self.diag.len()
    }
    fn value(&self, w: &[f64]) -> Result<f64> {
        check(self.dim(), w)?;
        Ok(0.5 * self.diag.iter().zip(w).map(|(d, x)| d * x * x).sum::<f64>())
    }
    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        check(self.dim(), w)?;
        Ok(self.diag.iter().zip(w).map(|(d, x)| d * x).collect())
    }
}

/// `½ wᵀAw + bᵀw + c` with symmetric `A` (row-major).
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticForm {
    fn m(&self) -> usize {
        self.b.len()
    }
}

impl Objective for QuadraticForm {
    fn dim(&self) -> usize {
        self.m()
    }
    fn value(&self, w: &[f64]) -> Result<f64> {
        check(self.m(), w)?;
        let aw = self.gradient(w)?;
        let quad: f64 = (0..self.m())
            .map(|i| w[i] * (aw[i] - self.b[i]))
            .sum();
        Ok(0.5 * quad + self.b.iter().zip(w).map(|(b, x)| b * x).sum::<f64>() + self.c)
    }
    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        check(self.m(), w)?;
        let m = self.m();
        Ok((0..m)
            .map(|i| (0..m).map(|j| self.a[i * m + j] * w[j]).sum::<f64>() + self.b[i])
            .collect())
    }
}

/// `Σ w_i³ / 6`: Hessian `diag(w)`, Hessian-Lipschitz constant 1.
#[derive(Debug, Clone)]
pub struct Cubic {
    pub m: usize,
}

impl Objective for Cubic {
    fn dim(&self) -> usize {
        self.m
    }
    fn value(&self, w: &[f64]) -> Result<f64> {
        check(self.m, w)?;
        Ok(w.iter().map(|x| x * x * x / 6.0).sum())
    }
    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        check(self.m, w)?;
        Ok(w.iter().map(|x| 0.5 * x * x).collect())
    }
}

/// Separable quartic `Σ (a_i w_i⁴ + b_i w_i³ + c_i w_i²)`.
#[derive(Debug, Clone)]
pub struct SeparableQuartic {
    pub coeffs: Vec<[f64; 3]>,
}

impl SeparableQuartic {
    pub fn hessian_diag(&self, w: &[f64]) -> Vec<f64> {
        self.coeffs
            .iter()
            .zip(w)
            .map(|([a, b, c], x)| 12.0 * a * x * x + 6.0 * b * x + 2.0 * c)
            .collect()
    }
}

impl Objective for SeparableQuartic {
    fn dim(&self) -> usize {
        self.coeffs.len()
    }
    fn value(&self, w: &[f64]) -> Result<f64> {
        check(self.dim(), w)?;
        Ok(self
            .coeffs
            .iter()
            .zip(w)
            .map(|([a, b, c], x)| a * x.powi(4) + b * x.powi(3) + c * x * x)
            .sum())
    }
    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        check(self.dim(), w)?;
        Ok(self
            .coeffs
            .iter()
            .zip(w)
            .map(|([a, b, c], x)| 4.0 * a * x.powi(3) + 3.0 * b * x * x + 2.0 * c * x)
            .collect())
    }
}

/// A flat surface.
#[derive(Debug, Clone)]
pub struct Constant {
    pub m: usize,
    pub value: f64,
}

impl Objective for Constant {
    fn dim(&self) -> usize {
        self.m
    }
    fn value(&self, w: &[f64]) -> Result<f64> {
        check(self.m, w)?;
        Ok(self.value)
    }
    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        check(self.m, w)?;
        Ok(vec![0.0; self.m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_quadratic_gradient() {
        let q = DiagonalQuadratic::isotropic(2);
        assert_eq!(q.gradient(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(q.value(&[1.0, 2.0]).unwrap(), 2.5);
    }

    #[test]
    fn quadratic_form_value() {
        let q = QuadraticForm {
            a: vec![2.0, 1.0, 1.0, 3.0],
            b: vec![1.0, -1.0],
            c: 0.5,
        };
        // ½(2 + 2 + 3) + (1 - 1) + 0.5 at w = (1, 1)
        assert!((q.value(&[1.0, 1.0]).unwrap() - 4.0).abs() < 1e-15);
    }
}
