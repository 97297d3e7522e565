//! Per-family log-likelihoods and Fisher-scoring ingredients.
//!
//! For each distribution parameter the engine needs the score u = dl/deta
//! and the expected information w = E[-d2l/deta2], both on the linear
//! predictor scale. The Generalised Beta Prime entries use the fact that
//! W = (y/mu)^sigma / (1 + (y/mu)^sigma) is Beta(nu, tau) distributed, which
//! gives every diagonal information entry in closed form via digamma and
//! trigamma.

use crate::dist::{gaussian_loglik, gbp_loglik, Link};
use crate::num::trigamma;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

const MIN_WEIGHT: f64 = 1e-10;

/// Families the fitting engine can estimate. The Bernoulli-logit entry backs
/// the discrete peak-timing hazard model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikFamily {
    Gaussian,
    GeneralisedBetaPrime,
    BernoulliLogit,
}

impl LikFamily {
    pub fn n_params(self) -> usize {
        match self {
            LikFamily::Gaussian => 2,
            LikFamily::GeneralisedBetaPrime => 4,
            LikFamily::BernoulliLogit => 1,
        }
    }

    pub fn links(self) -> &'static [Link] {
        match self {
            LikFamily::Gaussian => &[Link::Identity, Link::Log],
            LikFamily::GeneralisedBetaPrime => &[Link::Log, Link::Log, Link::Log, Link::Log],
            LikFamily::BernoulliLogit => &[Link::Logit],
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            LikFamily::Gaussian => &["mu", "sigma"],
            LikFamily::GeneralisedBetaPrime => &["mu", "sigma", "nu", "tau"],
            LikFamily::BernoulliLogit => &["p"],
        }
    }

    pub fn theta_valid(self, theta: &[f64]) -> bool {
        match self {
            LikFamily::Gaussian => {
                theta[0].is_finite() && theta[1].is_finite() && theta[1] > 0.0
            }
            LikFamily::GeneralisedBetaPrime => {
                theta.iter().take(4).all(|v| v.is_finite() && *v > 0.0)
            }
            LikFamily::BernoulliLogit => theta[0] > 0.0 && theta[0] < 1.0,
        }
    }

    pub fn loglik(self, y: f64, theta: &[f64]) -> f64 {
        match self {
            LikFamily::Gaussian => gaussian_loglik(theta[0], theta[1], y),
            LikFamily::GeneralisedBetaPrime => {
                gbp_loglik(theta[0], theta[1], theta[2], theta[3], y)
            }
            LikFamily::BernoulliLogit => {
                let p = theta[0].clamp(1e-12, 1.0 - 1e-12);
                if y > 0.5 {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            }
        }
    }

    /// Score and expected information on the linear-predictor scale for
    /// distribution parameter `pi`.
    pub fn score_weight(self, pi: usize, y: f64, theta: &[f64]) -> (f64, f64) {
        match self {
            LikFamily::Gaussian => {
                let (mu, sigma) = (theta[0], theta[1]);
                match pi {
                    0 => {
                        let w = 1.0 / (sigma * sigma);
                        ((y - mu) * w, w)
                    }
                    _ => {
                        let z = (y - mu) / sigma;
                        (z * z - 1.0, 2.0)
                    }
                }
            }
            LikFamily::GeneralisedBetaPrime => {
                let (mu, sigma, nu, tau) = (theta[0], theta[1], theta[2], theta[3]);
                let t = sigma * (y / mu).ln();
                let wb = 1.0 / (1.0 + (-t.clamp(-700.0, 700.0)).exp());
                let st = nu + tau;
                match pi {
                    0 => {
                        let u = sigma * (st * wb - nu);
                        let w = sigma * sigma * nu * tau / (st + 1.0);
                        (u, w.max(MIN_WEIGHT))
                    }
                    1 => {
                        let u = 1.0 + t * (nu - st * wb);
                        (u, gbp_sigma_info(nu, tau).max(MIN_WEIGHT))
                    }
                    2 => {
                        let lnw = if wb > 1e-300 { wb.ln() } else { t - (1.0 + t.exp()).ln() };
                        let u = nu * (lnw - digamma(nu) + digamma(st));
                        let w = nu * nu * (trigamma(nu) - trigamma(st));
                        (u, w.max(MIN_WEIGHT))
                    }
                    _ => {
                        // ln(1 - wb) computed stably from the logistic argument
                        let ln1mw = if t > -700.0 { -ln1p_exp(t) } else { 0.0 };
                        let u = tau * (ln1mw - digamma(tau) + digamma(st));
                        let w = tau * tau * (trigamma(tau) - trigamma(st));
                        (u, w.max(MIN_WEIGHT))
                    }
                }
            }
            LikFamily::BernoulliLogit => {
                let p = theta[0].clamp(1e-10, 1.0 - 1e-10);
                (y - p, (p * (1.0 - p)).max(MIN_WEIGHT))
            }
        }
    }

    /// Moment-based starting values on the natural scale.
    pub fn init_theta(self, ys: &[f64]) -> Vec<f64> {
        let n = ys.len().max(1) as f64;
        let mean = ys.iter().sum::<f64>() / n;
        match self {
            LikFamily::Gaussian => {
                let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
                vec![mean, var.sqrt().max(1e-8)]
            }
            LikFamily::GeneralisedBetaPrime => vec![mean.max(1e-8), 2.0, 1.0, 1.0],
            LikFamily::BernoulliLogit => vec![mean.clamp(0.01, 0.99)],
        }
    }

    /// Scale factor used to standardize the response before fitting.
    pub fn response_scale(self, ys: &[f64]) -> f64 {
        match self {
            LikFamily::BernoulliLogit => 1.0,
            _ => {
                let n = ys.len().max(1) as f64;
                let mean = ys.iter().sum::<f64>() / n;
                let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
                let s = var.sqrt();
                if s.is_finite() && s > 1e-12 {
                    s
                } else {
                    1.0
                }
            }
        }
    }

    /// Whether natural-scale parameter `pi` carries response units, i.e.
    /// multiplies by s when predictions from the standardized fit are mapped
    /// back to the original scale.
    pub fn theta_scales_with_response(self, pi: usize) -> bool {
        match self {
            LikFamily::Gaussian => pi <= 1,
            // mu is the GBP scale parameter; the shapes are scale-free
            LikFamily::GeneralisedBetaPrime => pi == 0,
            LikFamily::BernoulliLogit => false,
        }
    }
}

fn ln1p_exp(t: f64) -> f64 {
    if t > 35.0 {
        t
    } else {
        t.exp().ln_1p()
    }
}

/// Expected information for the GBP sigma parameter under the log link:
/// E[(1 + nu*U - (nu+tau)*U*W)^2] with U = ln(W/(1-W)), W ~ Beta(nu, tau).
fn gbp_sigma_info(nu: f64, tau: f64) -> f64 {
    let st = nu + tau;
    let dn = digamma(nu);
    let dt = digamma(tau);
    let e_u = dn - dt;
    let e_u2 = trigamma(nu) + trigamma(tau) + e_u * e_u;
    let r1 = nu / st;
    let d1 = digamma(nu + 1.0) - dt;
    let e_uw = r1 * d1;
    let e_u2w = r1 * (trigamma(nu + 1.0) + trigamma(tau) + d1 * d1);
    let r2 = nu * (nu + 1.0) / (st * (st + 1.0));
    let d2 = digamma(nu + 2.0) - dt;
    let e_u2w2 = r2 * (trigamma(nu + 2.0) + trigamma(tau) + d2 * d2);
    1.0 + nu * nu * e_u2 + st * st * e_u2w2 + 2.0 * nu * e_u
        - 2.0 * st * e_uw
        - 2.0 * nu * st * e_u2w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Beta, Distribution};

    /// Monte-Carlo check that the analytic scores have mean zero and the
    /// analytic weights match E[u^2] at the true parameters.
    #[test]
    fn gbp_score_and_information_match_monte_carlo() {
        let mut rng = StdRng::seed_from_u64(42);
        for &(mu, sigma, nu, tau) in
            &[(1.0, 1.5, 2.0, 1.2), (0.4, 2.5, 0.8, 3.0), (3.0, 1.0, 1.0, 1.0)]
        {
            let theta = [mu, sigma, nu, tau];
            let beta = Beta::new(nu, tau).unwrap();
            let n = 200_000;
            let mut mean_u = [0.0; 4];
            let mut mean_u2 = [0.0; 4];
            for _ in 0..n {
                let w: f64 = beta.sample(&mut rng);
                let y = mu * (w / (1.0 - w)).powf(1.0 / sigma);
                for pi in 0..4 {
                    let (u, _) = LikFamily::GeneralisedBetaPrime.score_weight(pi, y, &theta);
                    mean_u[pi] += u / n as f64;
                    mean_u2[pi] += u * u / n as f64;
                }
            }
            for pi in 0..4 {
                let (_, w) = LikFamily::GeneralisedBetaPrime.score_weight(pi, 1.0, &theta);
                assert!(
                    mean_u[pi].abs() < 0.02 * (1.0 + w.sqrt()),
                    "score mean {} for pi={pi}",
                    mean_u[pi]
                );
                assert!(
                    (mean_u2[pi] - w).abs() / w < 0.05,
                    "info mismatch pi={pi}: mc={} analytic={w}",
                    mean_u2[pi]
                );
            }
        }
    }

    #[test]
    fn gaussian_score_weight_values() {
        let theta = [2.0, 0.5];
        let (u, w) = LikFamily::Gaussian.score_weight(0, 3.0, &theta);
        assert!((u - 4.0).abs() < 1e-12); // (y-mu)/sigma^2
        assert!((w - 4.0).abs() < 1e-12);
        let (u2, w2) = LikFamily::Gaussian.score_weight(1, 3.0, &theta);
        assert!((u2 - 3.0).abs() < 1e-12); // z^2 - 1 with z=2
        assert!((w2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scores_are_loglik_gradients() {
        // finite-difference check of dl/deta for all families
        let mut rng = StdRng::seed_from_u64(7);
        let cases: Vec<(LikFamily, Vec<f64>, f64)> = vec![
            (LikFamily::Gaussian, vec![1.0, 0.7], 1.8),
            (LikFamily::GeneralisedBetaPrime, vec![1.2, 1.4, 1.9, 2.3], 0.9),
            (LikFamily::BernoulliLogit, vec![0.3], 1.0),
        ];
        for (fam, theta, y) in cases {
            for pi in 0..fam.n_params() {
                let links = fam.links();
                let eta0 = links[pi].apply(theta[pi]).unwrap();
                let h = 1e-6;
                let mut th_hi = theta.clone();
                th_hi[pi] = links[pi].invert(eta0 + h);
                let mut th_lo = theta.clone();
                th_lo[pi] = links[pi].invert(eta0 - h);
                let fd = (fam.loglik(y, &th_hi) - fam.loglik(y, &th_lo)) / (2.0 * h);
                let (u, w) = fam.score_weight(pi, y, &theta);
                assert!(
                    (fd - u).abs() < 1e-5 * (1.0 + u.abs()),
                    "{fam:?} pi={pi}: fd={fd} u={u}"
                );
                assert!(w > 0.0);
                let _ = rng.random::<f64>();
            }
        }
    }
}
