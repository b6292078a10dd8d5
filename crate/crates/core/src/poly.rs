//! Multivariate polynomials with closed-form derivatives.
//!
//! Every drift and diffusion field is stored as a table of monomials so that
//! divergence, curl and Jacobians are exact.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Self::zero();
        p.push(c, vec![0; dim]);
        p
    }

    /// `c * x_i`
    pub fn linear(dim: usize, i: usize, c: f64) -> Self {
        let mut p = Self::zero();
        let mut powers = vec![0; dim];
        powers[i] = 1;
        p.push(c, powers);
        p
    }

    pub fn push(&mut self, coef: f64, powers: Vec<u32>) {
        if coef == 0.0 {
            return;
        }
        if let Some(t) = self.terms.iter_mut().find(|t| t.powers == powers) {
            t.coef += coef;
        } else {
            self.terms.push(Monomial { coef, powers });
        }
        self.terms.retain(|t| t.coef != 0.0);
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for t in &other.terms {
            out.push(t.coef, t.powers.clone());
        }
        out
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        let mut out = Polynomial::zero();
        for t in &self.terms {
            out.push(c * t.coef, t.powers.clone());
        }
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for a in &self.terms {
            for b in &other.terms {
                let powers = a.powers.iter().zip(&b.powers).map(|(p, q)| p + q).collect();
                out.push(a.coef * b.coef, powers);
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.powers
                    .iter()
                    .zip(x)
                    .fold(t.coef, |acc, (&p, &xi)| acc * xi.powi(p as i32))
            })
            .sum()
    }

    pub fn partial(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero();
        for t in &self.terms {
            let p = t.powers[i];
            if p == 0 {
                continue;
            }
            let mut powers = t.powers.clone();
            powers[i] = p - 1;
            out.push(t.coef * p as f64, powers);
        }
        out
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.powers.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    pub(crate) fn check_dim(&self, dim: usize) -> bool {
        self.terms.iter().all(|t| t.powers.len() == dim)
    }
}

/// `|x|^2` as a polynomial.
pub fn norm_sq(dim: usize) -> Polynomial {
    let mut p = Polynomial::zero();
    for i in 0..dim {
        let mut powers = vec![0; dim];
        powers[i] = 2;
        p.push(1.0, powers);
    }
    p
}

pub fn gradient(p: &Polynomial, dim: usize) -> Vec<Polynomial> {
    (0..dim).map(|i| p.partial(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn derivative_of_cubic() {
        // x^3 - x in 1D
        let mut p = Polynomial::zero();
        p.push(1.0, vec![3]);
        p.push(-1.0, vec![1]);
        let d = p.partial(0);
        assert_eq!(d.eval(&[2.0]), 11.0);
        assert_eq!(d.partial(0).eval(&[2.0]), 12.0);
    }

    #[test]
    fn cancelling_terms_are_dropped() {
        let a = Polynomial::linear(2, 0, 1.0);
        let b = a.scale(-1.0);
        assert!(a.add(&b).terms.is_empty());
    }

    proptest! {
        #[test]
        fn partial_matches_central_difference(
            c in prop::collection::vec(-2.0f64..2.0, 4),
            x in -1.5f64..1.5, y in -1.5f64..1.5,
        ) {
            let mut p = Polynomial::zero();
            p.push(c[0], vec![2, 1]);
            p.push(c[1], vec![0, 3]);
            p.push(c[2], vec![1, 0]);
            p.push(c[3], vec![0, 0]);
            let h = 1e-5;
            let fd = (p.eval(&[x + h, y]) - p.eval(&[x - h, y])) / (2.0 * h);
            prop_assert!((p.partial(0).eval(&[x, y]) - fd).abs() < 1e-7);
        }
    }
}
