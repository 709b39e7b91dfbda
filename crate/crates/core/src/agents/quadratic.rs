use super::{Agent, AgentKind};
use crate::error::{config, Result};
use crate::volume::Volume;

/// Proximal map of `(λ/2)‖z − μ‖²` at scale `σ`:
/// `H(w) = (λσ²μ + w) / (1 + λσ²)` elementwise.
#[derive(Clone, Debug)]
pub struct QuadraticProximalAgent {
    name: String,
    mu_prior: Volume,
    lambda: f64,
    sigma: f64,
}

impl QuadraticProximalAgent {
    pub fn new(mu_prior: Volume, lambda: f64, sigma: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return config(format!("quadratic agent: lambda must be positive, got {lambda}"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return config(format!("quadratic agent: sigma must be positive, got {sigma}"));
        }
        Ok(Self {
            name: "quadratic".into(),
            mu_prior,
            lambda,
            sigma,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn mu_prior(&self) -> &Volume {
        &self.mu_prior
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// The Lipschitz constant `1 / (1 + λσ²)`.
    pub fn contraction(&self) -> f64 {
        1.0 / (1.0 + self.lambda * self.sigma * self.sigma)
    }
}

impl Agent for QuadraticProximalAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Proximal
    }

    fn apply(&mut self, x: &Volume) -> Result<Volume> {
        x.check_same_shape(&self.mu_prior, "quadratic agent")?;
        let ls2 = self.lambda * self.sigma * self.sigma;
        let inv = 1.0 / (1.0 + ls2);
        Ok(x.zip_map(&self.mu_prior, |w, m| (ls2 * m + w) * inv))
    }
}

pub fn quadratic_proximal_agent(mu_prior: Volume, lambda: f64, sigma: f64) -> Result<QuadraticProximalAgent> {
    QuadraticProximalAgent::new(mu_prior, lambda, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    #[test]
    fn halves_when_lambda_sigma_squared_is_one() {
        let g = Grid::new(3, 2, 2);
        let w = Volume::from_fn(g, |i, j, k| (i + 3 * j + 7 * k) as f64 - 4.5);
        let mut a = quadratic_proximal_agent(Volume::zeros(g), 4.0, 0.5).unwrap();
        let out = a.apply(&w).unwrap();
        for (o, v) in out.data().iter().zip(w.data()) {
            assert_eq!(*o, v / 2.0);
        }
    }

    #[test]
    fn prior_mean_is_fixed() {
        let g = Grid::new(4, 4, 1);
        let mu = Volume::from_fn(g, |i, j, _| (i * j) as f64 * 0.25);
        let mut a = quadratic_proximal_agent(mu.clone(), 3.0, 0.7).unwrap();
        assert!(a.apply(&mu).unwrap().distance(&mu) < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        assert!(quadratic_proximal_agent(Volume::zeros(Grid::new(1, 1, 1)), 0.0, 1.0).is_err());
    }
}
