use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lattice::LatticeBox;
use crate::params::PhaseDistribution;
use crate::seeding::site_stream;

/// One phase `theta_k` per site of a box, stored in the box enumeration order.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseField {
    lattice: LatticeBox,
    theta: Vec<f64>,
    seed: u64,
}

impl PhaseField {
    /// I.i.d. draws from `dist`. Each site reads from its own ChaCha stream
    /// keyed by its coordinates, so the value at a site does not depend on
    /// the box it is sampled in or the order of iteration.
    pub fn sample(dist: &PhaseDistribution, lattice: &LatticeBox, seed: u64) -> Self {
        let theta = lattice
            .sites()
            .map(|s| dist.quantile(site_uniform(seed, &s)))
            .collect();
        Self {
            lattice: lattice.clone(),
            theta,
            seed,
        }
    }

    pub fn constant(lattice: &LatticeBox, value: f64) -> Self {
        Self {
            lattice: lattice.clone(),
            theta: vec![value; lattice.volume()],
            seed: 0,
        }
    }

    pub fn zeros(lattice: &LatticeBox) -> Self {
        Self::constant(lattice, 0.0)
    }

    pub fn from_values(lattice: &LatticeBox, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != lattice.volume() {
            return Err(Error::BoxMismatch(format!(
                "{} phases for a box of {} sites",
                theta.len(),
                lattice.volume()
            )));
        }
        Ok(Self {
            lattice: lattice.clone(),
            theta,
            seed: 0,
        })
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, site: &[i64]) -> Option<f64> {
        self.lattice.index_of(site).map(|i| self.theta[i])
    }

    /// Phases on a sub-box.
    pub fn restrict(&self, inner: &LatticeBox) -> Result<Self> {
        if !self.lattice.contains_box(inner) {
            return Err(Error::BoxMismatch(
                "restriction box not contained in the phase field box".into(),
            ));
        }
        let theta = inner
            .sites()
            .map(|s| self.theta[self.lattice.index_of(&s).expect("contained")])
            .collect();
        Ok(Self {
            lattice: inner.clone(),
            theta,
            seed: self.seed,
        })
    }

    /// Same values carried to the box translated by `shift`.
    pub fn translated(&self, shift: &[i64]) -> Result<Self> {
        Ok(Self {
            lattice: self.lattice.translated(shift)?,
            theta: self.theta.clone(),
            seed: self.seed,
        })
    }
}

/// Uniform variate on `[0, 1)` for a site, from the stream of that site.
pub fn site_uniform(seed: u64, site: &[i64]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(site_stream(site));
    rng.random::<f64>()
}
