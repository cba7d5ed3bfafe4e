//! Exponential-dispersion families and link functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean clamp applied to binomial and Poisson fitted values so that the
/// variance function stays strictly positive during iteration.
pub(crate) const MU_EPS: f64 = 1e-12;

/// Outcome distribution. The variance function is `b''(theta(mu))` under the
/// unit-dispersion convention; the Gaussian dispersion is profiled at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
}

impl Family {
    /// Variance function `mu -> b''(theta(mu))`, unit dispersion.
    pub fn variance(&self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => mu * (1.0 - mu),
            Family::Poisson => mu,
        }
    }

    pub fn canonical_link(&self) -> Link {
        match self {
            Family::Gaussian => Link::Identity,
            Family::Binomial => Link::Logit,
            Family::Poisson => Link::Log,
        }
    }

    /// Whether `link` is this family's canonical link.
    pub fn is_canonical(&self, link: Link) -> bool {
        self.canonical_link() == link
    }

    /// Clamp a fitted mean into the family's open mean domain.
    pub(crate) fn clamp_mean(&self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Binomial => mu.clamp(MU_EPS, 1.0 - MU_EPS),
            Family::Poisson => mu.max(MU_EPS),
        }
    }

    /// Check that every response value lies in the family's support.
    pub fn check_support(&self, y: &[f64]) -> Result<()> {
        for (i, &yi) in y.iter().enumerate() {
            if !yi.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "response[{i}] = {yi} is not finite"
                )));
            }
            let ok = match self {
                Family::Gaussian => true,
                Family::Binomial => yi == 0.0 || yi == 1.0,
                Family::Poisson => yi >= 0.0 && (yi - yi.round()).abs() < 1e-8,
            };
            if !ok {
                return Err(Error::InvalidModel(format!(
                    "response[{i}] = {yi} outside the {self:?} support"
                )));
            }
        }
        Ok(())
    }

    /// Log-likelihood at fitted means under the unit-dispersion convention
    /// (`a(phi) = 1`); used for step-halving and nested-model comparison.
    /// Data-only constants are included except for the Gaussian, where the
    /// dispersion is profiled out: `-n/2 (log(2 pi rss/n) + 1)`.
    pub fn log_likelihood(&self, y: &[f64], mu: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), mu.len());
        let n = y.len() as f64;
        match self {
            Family::Gaussian => {
                let rss: f64 = y.iter().zip(mu).map(|(yi, mi)| (yi - mi) * (yi - mi)).sum();
                let s2 = (rss / n).max(f64::MIN_POSITIVE);
                -0.5 * n * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0)
            }
            Family::Binomial => y
                .iter()
                .zip(mu)
                .map(|(yi, mi)| {
                    let m = self.clamp_mean(*mi);
                    yi * m.ln() + (1.0 - yi) * (1.0 - m).ln()
                })
                .sum(),
            Family::Poisson => y
                .iter()
                .zip(mu)
                .map(|(yi, mi)| {
                    let m = self.clamp_mean(*mi);
                    yi * m.ln() - m - statrs::function::gamma::ln_gamma(yi + 1.0)
                })
                .sum(),
        }
    }

    /// Deviance-style objective used inside IRLS step-halving. Monotone in the
    /// profiled log-likelihood for the Gaussian, exact for the others.
    pub(crate) fn halving_objective(&self, y: &[f64], mu: &[f64]) -> f64 {
        match self {
            Family::Gaussian => -y
                .iter()
                .zip(mu)
                .map(|(yi, mi)| (yi - mi) * (yi - mi))
                .sum::<f64>(),
            _ => self.log_likelihood(y, mu),
        }
    }
}

/// Strictly monotone link function with its inverse and derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
    Log,
}

impl Link {
    /// `g(mu)`.
    pub fn link(&self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Log => mu.ln(),
        }
    }

    /// `g^{-1}(eta)`.
    pub fn inverse(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Link::Log => eta.exp(),
        }
    }

    /// `d mu / d eta` as a function of `eta`; strictly positive for the
    /// supported links.
    pub fn mu_eta(&self, eta: f64) -> f64 {
        self.mu_eta_from_mean(self.inverse(eta))
    }

    /// `d mu / d eta` written in terms of the mean; evaluating it at a
    /// clamped mean keeps the derivative strictly positive even where the
    /// inverse link underflows.
    pub(crate) fn mu_eta_from_mean(&self, mu: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Logit => mu * (1.0 - mu),
            Link::Log => mu,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "binomial" | "bernoulli" => Ok(Family::Binomial),
            "poisson" => Ok(Family::Poisson),
            other => Err(Error::Parse(format!("unknown family '{other}'"))),
        }
    }
}

impl std::str::FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Link::Identity),
            "logit" => Ok(Link::Logit),
            "log" => Ok(Link::Log),
            other => Err(Error::Parse(format!("unknown link '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_round_trip() {
        let grids: [(Link, Vec<f64>); 3] = [
            (Link::Identity, vec![-5.0, -0.3, 0.0, 2.0, 100.0]),
            (Link::Logit, vec![1e-6, 0.01, 0.3, 0.5, 0.97, 1.0 - 1e-6]),
            (Link::Log, vec![1e-6, 0.5, 1.0, 10.0, 1e4]),
        ];
        for (link, mus) in grids {
            for mu in mus {
                let back = link.inverse(link.link(mu));
                assert!(
                    (back - mu).abs() <= 1e-10 * mu.abs().max(1.0),
                    "{link:?} round trip failed at mu={mu}: got {back}"
                );
            }
        }
    }

    #[test]
    fn mu_eta_positive() {
        for link in [Link::Identity, Link::Logit, Link::Log] {
            for eta in [-30.0, -2.0, 0.0, 1.5, 25.0] {
                assert!(link.mu_eta(eta) > 0.0, "{link:?} mu_eta({eta}) <= 0");
            }
        }
    }

    #[test]
    fn variance_positive_on_domain() {
        for mu in [0.01, 0.25, 0.5, 0.99] {
            assert!(Family::Binomial.variance(mu) > 0.0);
        }
        for mu in [1e-6, 1.0, 50.0] {
            assert!(Family::Poisson.variance(mu) > 0.0);
        }
        assert!(Family::Gaussian.variance(-3.0) > 0.0);
    }

    #[test]
    fn binomial_support() {
        assert!(Family::Binomial.check_support(&[0.0, 1.0, 1.0]).is_ok());
        assert!(Family::Binomial.check_support(&[0.0, 2.0]).is_err());
        assert!(Family::Poisson.check_support(&[0.0, 3.0, 7.0]).is_ok());
        assert!(Family::Poisson.check_support(&[-1.0]).is_err());
        assert!(Family::Poisson.check_support(&[1.5]).is_err());
        assert!(Family::Gaussian.check_support(&[f64::NAN]).is_err());
    }
}
