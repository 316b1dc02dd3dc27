//! Polynomial weak designs: `m` subsets of `[0, t²)`, each of size `t`,
//! with pairwise overlap at most the polynomial degree.

use super::field::{NotPrimePower, PrimePowerField};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DesignError {
    #[error(transparent)]
    Order(#[from] NotPrimePower),
    /// Needs polynomials of degree `≥ t`, which no longer give distinct sets.
    #[error("{m} sets do not fit a design over GF({t})")]
    TooManySets { m: usize, t: u32 },
}

#[derive(Debug, Clone)]
pub struct WeakDesign {
    field: PrimePowerField,
    m: usize,
    degree: u32,
}

impl WeakDesign {
    /// Set `i` is `{ a·t + p_i(a) : a ∈ GF(t) }` where the coefficients of
    /// `p_i` are the base-`t` digits of `i`.
    pub fn new(m: usize, t: u32) -> Result<Self, DesignError> {
        let field = PrimePowerField::new(t)?;
        let mut degree = 0u32;
        let mut count = u128::from(t);
        while count < m as u128 {
            count = count.saturating_mul(u128::from(t));
            degree += 1;
            if degree >= t {
                return Err(DesignError::TooManySets { m, t });
            }
        }
        Ok(Self { field, m, degree })
    }

    pub fn t(&self) -> u32 {
        self.field.order()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Also the largest possible overlap of two distinct sets.
    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn seed_len(&self) -> usize {
        (self.t() as usize).pow(2)
    }

    pub fn coefficients(&self, i: usize) -> Vec<u32> {
        let t = self.t() as usize;
        let mut rest = i;
        (0..=self.degree)
            .map(|_| {
                let c = (rest % t) as u32;
                rest /= t;
                c
            })
            .collect()
    }

    /// The `a`-th element of a set given its polynomial.
    pub fn element(&self, coeffs: &[u32], a: u32) -> u32 {
        a * self.t() + self.field.eval(coeffs, a)
    }

    pub fn set(&self, i: usize) -> Vec<u32> {
        let c = self.coefficients(i);
        (0..self.t()).map(|a| self.element(&c, a)).collect()
    }
}

/// All `m` sets of the design over `GF(t)`.
pub fn weak_design(m: usize, t: u32) -> Result<Vec<Vec<u32>>, DesignError> {
    let d = WeakDesign::new(m, t)?;
    Ok((0..m).map(|i| d.set(i)).collect())
}
