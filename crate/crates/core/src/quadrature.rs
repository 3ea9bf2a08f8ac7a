//! Gauss-Hermite rules and the discrete covariate measures used by the
//! population calculations.

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Nodes and weights for `∫ f(x) e^{−x²} dx ≈ Σ wᵢ f(xᵢ)`, ascending nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence, seeded with
    /// the usual asymptotic root approximations.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::QuadratureFailure("node count must be positive".into()));
        }
        const EPS: f64 = 3e-14;
        const MAX_ITER: usize = 20;
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0_f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut converged = false;
            let mut derivative = 0.0;
            for _ in 0..MAX_ITER {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                derivative = (2.0 * nf).sqrt() * p2;
                let previous = z;
                z = previous - p1 / derivative;
                if (z - previous).abs() <= EPS * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged || !z.is_finite() {
                return Err(Error::QuadratureFailure(format!(
                    "Hermite root {i} of {n} did not converge"
                )));
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (derivative * derivative);
            w[n - 1 - i] = w[i];
        }
        x.reverse();
        w.reverse();
        let total: f64 = w.iter().copied().collect::<CompensatedSum>().value();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        if ((total - sqrt_pi) / sqrt_pi).abs() > 1e-12 {
            return Err(Error::QuadratureFailure(format!(
                "weights sum to {total}, expected sqrt(pi)"
            )));
        }
        Ok(Self { nodes: x, weights: w })
    }
}

/// A finitely supported probability measure on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub points: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn bernoulli(p: f64) -> Self {
        Self {
            points: vec![0.0, 1.0],
            probabilities: vec![1.0 - p, p],
        }
    }

    /// `N(mean, 1)` through `L = mean + √2 x` and weights `wᵢ / √π`.
    pub fn standard_normal_shifted(mean: f64, nodes: usize) -> Result<Self> {
        let rule = GaussHermite::new(nodes)?;
        let scale = std::f64::consts::PI.sqrt().recip();
        Ok(Self {
            points: rule.nodes.iter().map(|x| mean + std::f64::consts::SQRT_2 * x).collect(),
            probabilities: rule.weights.iter().map(|w| w * scale).collect(),
        })
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.probabilities)
            .map(|(&l, &p)| p * f(l))
            .collect::<CompensatedSum>()
            .value()
    }
}
