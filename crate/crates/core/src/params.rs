use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Coupling `t`, its partner `r = sqrt(1 - t^2)`, the dimension and the
/// band-edge angle `lambda0 = arccos(r^2 - t^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelParams {
    t: f64,
    r: f64,
    d: usize,
    lambda0: f64,
}

impl ModelParams {
    pub fn new(t: f64, d: usize) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) {
            return invalid(format!("ModelParams: t ∉ (0,1) (t = {t})"));
        }
        if d == 0 {
            return invalid("ModelParams: dimension must be positive");
        }
        let r = (1.0 - t * t).sqrt();
        let lambda0 = (r * r - t * t).clamp(-1.0, 1.0).acos();
        Ok(Self { t, r, d, lambda0 })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    /// Argument `d * lambda0` of the upper edge of the spectrum of `S`.
    pub fn edge_angle(&self) -> f64 {
        self.d as f64 * self.lambda0
    }

    pub fn with_dimension(&self, d: usize) -> Result<Self> {
        Self::new(self.t, d)
    }
}

/// Shape of a phase distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionShape {
    Uniform,
    /// Piecewise-constant density: `density[i]` on `[edges[i], edges[i+1])`.
    Piecewise { edges: Vec<f64>, density: Vec<f64> },
}

/// Single-site phase law `d mu(theta) = tau(theta) d theta` with support
/// `[lo, hi]` inside `[0, 2 pi]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseDistribution {
    lo: f64,
    hi: f64,
    shape: DistributionShape,
    density_sup: f64,
    // cumulative mass at each piecewise edge
    cumulative: Vec<f64>,
}

impl PhaseDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        check_support(lo, hi)?;
        Ok(Self {
            lo,
            hi,
            shape: DistributionShape::Uniform,
            density_sup: 1.0 / (hi - lo),
            cumulative: vec![0.0, 1.0],
        })
    }

    /// Uniform on the whole circle.
    pub fn full_circle() -> Self {
        Self::uniform(0.0, TAU).expect("valid support")
    }

    pub fn piecewise(edges: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || density.len() + 1 != edges.len() {
            return invalid("PhaseDistribution: need n+1 edges for n density values");
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("PhaseDistribution: edges must be strictly increasing");
        }
        if density.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("PhaseDistribution: density must be finite and nonnegative");
        }
        let (lo, hi) = (edges[0], edges[edges.len() - 1]);
        check_support(lo, hi)?;
        let mut cumulative = Vec::with_capacity(edges.len());
        cumulative.push(0.0);
        let mut acc = 0.0;
        for (i, rho) in density.iter().enumerate() {
            acc += rho * (edges[i + 1] - edges[i]);
            cumulative.push(acc);
        }
        if (acc - 1.0).abs() > 1e-10 {
            return invalid(format!(
                "PhaseDistribution: density integrates to {acc}, not 1"
            ));
        }
        let density_sup = density.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            lo,
            hi,
            shape: DistributionShape::Piecewise { edges, density },
            density_sup,
            cumulative,
        })
    }

    pub fn from_shape(lo: f64, hi: f64, shape: DistributionShape) -> Result<Self> {
        match shape {
            DistributionShape::Uniform => Self::uniform(lo, hi),
            DistributionShape::Piecewise { edges, density } => Self::piecewise(edges, density),
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn shape(&self) -> &DistributionShape {
        &self.shape
    }

    pub fn density_sup(&self) -> f64 {
        self.density_sup
    }

    /// Upper end of the support; the band-edge experiments assume `lo = 0`.
    pub fn theta_max(&self) -> f64 {
        self.hi
    }

    pub fn density(&self, theta: f64) -> f64 {
        if theta < self.lo || theta > self.hi {
            return 0.0;
        }
        match &self.shape {
            DistributionShape::Uniform => 1.0 / (self.hi - self.lo),
            DistributionShape::Piecewise { edges, density } => {
                let i = bin_of(edges, theta);
                density[i]
            }
        }
    }

    pub fn cdf(&self, theta: f64) -> f64 {
        if theta <= self.lo {
            return 0.0;
        }
        if theta >= self.hi {
            return 1.0;
        }
        match &self.shape {
            DistributionShape::Uniform => (theta - self.lo) / (self.hi - self.lo),
            DistributionShape::Piecewise { edges, density } => {
                let i = bin_of(edges, theta);
                self.cumulative[i] + density[i] * (theta - edges[i])
            }
        }
    }

    /// Inverse CDF; `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match &self.shape {
            DistributionShape::Uniform => self.lo + u * (self.hi - self.lo),
            DistributionShape::Piecewise { edges, density } => {
                // last bin with cumulative <= u and positive mass
                let mut i = match self
                    .cumulative
                    .binary_search_by(|c| c.partial_cmp(&u).expect("finite"))
                {
                    Ok(i) => i,
                    Err(i) => i.saturating_sub(1),
                };
                i = i.min(density.len() - 1);
                while density[i] == 0.0 && i + 1 < density.len() {
                    i += 1;
                }
                let x = edges[i] + (u - self.cumulative[i]).max(0.0) / density[i];
                x.min(edges[i + 1])
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.shape {
            DistributionShape::Uniform => 0.5 * (self.lo + self.hi),
            DistributionShape::Piecewise { edges, density } => density
                .iter()
                .enumerate()
                .map(|(i, rho)| 0.5 * rho * (edges[i + 1].powi(2) - edges[i].powi(2)))
                .sum(),
        }
    }

    /// True when the support sits in `[0, theta_m]` with
    /// `2 d lambda0 + theta_m < 2 pi`, so the spectrum of `U` leaves a gap
    /// around the antipode of the band edge.
    pub fn leaves_spectral_gap(&self, params: &ModelParams) -> bool {
        self.lo >= 0.0 && 2.0 * params.edge_angle() + self.hi < TAU
    }
}

fn check_support(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi > TAU + 1e-12 || !(hi > lo) {
        return invalid(format!(
            "PhaseDistribution: support [{lo}, {hi}] not inside [0, 2π)"
        ));
    }
    Ok(())
}

fn bin_of(edges: &[f64], theta: f64) -> usize {
    let n = edges.len() - 1;
    match edges.binary_search_by(|e| e.partial_cmp(&theta).expect("finite")) {
        Ok(i) => i.min(n - 1),
        Err(i) => (i - 1).min(n - 1),
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_invariants() {
        let p = ModelParams::new(0.6, 1).unwrap();
        assert!((p.r() * p.r() + p.t() * p.t() - 1.0).abs() < 1e-15);
        assert!((p.lambda0() - (0.8f64 * 0.8 - 0.36).acos()).abs() < 1e-15);
        assert!(ModelParams::new(1.2, 1).is_err());
        assert!(ModelParams::new(0.0, 1).is_err());
        assert!(ModelParams::new(1.0, 1).is_err());
    }

    #[test]
    fn half_coupling_edge_is_pi_over_three() {
        let p = ModelParams::new(0.5, 1).unwrap();
        assert!((p.lambda0() - PI / 3.0).abs() < 1e-14);
    }

    #[test]
    fn piecewise_quantile_inverts_cdf() {
        let d = PhaseDistribution::piecewise(vec![0.0, 1.0, 1.5, 3.0], vec![0.5, 0.0, 1.0 / 3.0])
            .unwrap();
        for k in 0..100 {
            let u = k as f64 / 100.0;
            let x = d.quantile(u);
            assert!((d.cdf(x) - u).abs() < 1e-12, "u={u} x={x}");
            assert!(!(1.0..1.5).contains(&x) || x == 1.0 || x == 1.5);
        }
        assert!((d.mean() - (0.25 + (9.0 - 2.25) / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn density_must_integrate_to_one() {
        assert!(PhaseDistribution::piecewise(vec![0.0, 1.0], vec![0.9]).is_err());
        assert!(PhaseDistribution::uniform(0.0, 7.0).is_err());
        assert!(PhaseDistribution::uniform(-0.1, 1.0).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.25) - 0.25).abs() < 1e-15);
    }
}
