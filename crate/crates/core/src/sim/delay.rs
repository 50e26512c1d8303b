//! Hop-delay distributions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DelayModelError {
    #[error("unknown delay model `{0}`")]
    UnknownKind(String),
    #[error("delay model `{kind}` is missing parameter `{param}`")]
    MissingParam { kind: &'static str, param: &'static str },
    #[error("bad parameter `{0}`")]
    BadParam(String),
    #[error("empty delay model")]
    Empty,
}

/// A transit-time distribution. All parameters are in nanoseconds except
/// the log-normal `mu`/`sigma` (log-nanoseconds) and the t `dof`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    Normal { loc: f64, scale: f64 },
    Laplace { loc: f64, scale: f64 },
    StudentT { loc: f64, scale: f64, dof: f64 },
    /// `shift + exp(mu + sigma * N(0,1))`
    ShiftedLognormal { shift: f64, mu: f64, sigma: f64 },
    Constant { value: f64 },
}

impl DelayModel {
    pub fn normal(loc: f64, scale: f64) -> Self {
        DelayModel::Normal { loc, scale }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DelayModel::Normal { loc, scale } => {
                let z: f64 = StandardNormal.sample(rng);
                loc + scale * z
            }
            DelayModel::Laplace { loc, scale } => {
                // inverse CDF on u in (-1/2, 1/2)
                let u: f64 = rng.random::<f64>() - 0.5;
                loc - scale * u.signum() * (-2.0 * u.abs()).ln_1p()
            }
            DelayModel::StudentT { loc, scale, dof } => {
                let t = StudentT::new(dof).expect("validated dof").sample(rng);
                loc + scale * t
            }
            DelayModel::ShiftedLognormal { shift, mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                shift + (mu + sigma * z).exp()
            }
            DelayModel::Constant { value } => value,
        }
    }

    /// A delay rounded to whole nanoseconds, at least 1.
    pub fn sample_ns<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let d = self.sample(rng).round();
        if d.is_nan() || d < 1.0 {
            1
        } else {
            d as u64
        }
    }

    pub fn median(&self) -> f64 {
        match *self {
            DelayModel::Normal { loc, .. }
            | DelayModel::Laplace { loc, .. }
            | DelayModel::StudentT { loc, .. } => loc,
            DelayModel::ShiftedLognormal { shift, mu, .. } => shift + mu.exp(),
            DelayModel::Constant { value } => value,
        }
    }

    /// The same distribution with its spread multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            DelayModel::Normal { loc, scale } => DelayModel::Normal { loc, scale: scale * factor },
            DelayModel::Laplace { loc, scale } => DelayModel::Laplace { loc, scale: scale * factor },
            DelayModel::StudentT { loc, scale, dof } => DelayModel::StudentT {
                loc,
                scale: scale * factor,
                dof,
            },
            DelayModel::ShiftedLognormal { shift, mu, sigma } => DelayModel::ShiftedLognormal {
                shift,
                mu: mu + factor.ln(),
                sigma,
            },
            c @ DelayModel::Constant { .. } => c,
        }
    }

    fn validate(self) -> Result<Self, DelayModelError> {
        let ok = match self {
            DelayModel::Normal { loc, scale } | DelayModel::Laplace { loc, scale } => {
                loc.is_finite() && scale.is_finite() && scale >= 0.0
            }
            DelayModel::StudentT { loc, scale, dof } => {
                loc.is_finite() && scale.is_finite() && scale >= 0.0 && dof.is_finite() && dof > 0.0
            }
            DelayModel::ShiftedLognormal { shift, mu, sigma } => {
                shift.is_finite() && mu.is_finite() && sigma.is_finite() && sigma >= 0.0
            }
            DelayModel::Constant { value } => value.is_finite(),
        };
        if ok {
            Ok(self)
        } else {
            Err(DelayModelError::BadParam(self.to_string()))
        }
    }
}

impl fmt::Display for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayModel::Normal { loc, scale } => write!(f, "normal loc={loc} scale={scale}"),
            DelayModel::Laplace { loc, scale } => write!(f, "laplace loc={loc} scale={scale}"),
            DelayModel::StudentT { loc, scale, dof } => {
                write!(f, "student_t loc={loc} scale={scale} dof={dof}")
            }
            DelayModel::ShiftedLognormal { shift, mu, sigma } => {
                write!(f, "shifted_lognormal shift={shift} mu={mu} sigma={sigma}")
            }
            DelayModel::Constant { value } => write!(f, "constant value={value}"),
        }
    }
}

/// Parses `kind name=value ...`, e.g. `normal loc=5e6 scale=2e5`.
impl FromStr for DelayModel {
    type Err = DelayModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut words = s.split_whitespace();
        let kind = words.next().ok_or(DelayModelError::Empty)?;
        let mut params = Vec::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| DelayModelError::BadParam(w.into()))?;
            let v: f64 = v.parse().map_err(|_| DelayModelError::BadParam(w.into()))?;
            params.push((k, v));
        }
        let get = |kind: &'static str, name: &'static str| {
            params
                .iter()
                .find(|(k, _)| *k == name)
                .map(|&(_, v)| v)
                .ok_or(DelayModelError::MissingParam { kind, param: name })
        };
        let model = match kind {
            "normal" => DelayModel::Normal {
                loc: get("normal", "loc")?,
                scale: get("normal", "scale")?,
            },
            "laplace" => DelayModel::Laplace {
                loc: get("laplace", "loc")?,
                scale: get("laplace", "scale")?,
            },
            "student_t" => DelayModel::StudentT {
                loc: get("student_t", "loc")?,
                scale: get("student_t", "scale")?,
                dof: get("student_t", "dof")?,
            },
            "shifted_lognormal" => DelayModel::ShiftedLognormal {
                shift: get("shifted_lognormal", "shift")?,
                mu: get("shifted_lognormal", "mu")?,
                sigma: get("shifted_lognormal", "sigma")?,
            },
            "constant" => DelayModel::Constant {
                value: get("constant", "value")?,
            },
            other => return Err(DelayModelError::UnknownKind(other.into())),
        };
        model.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empirical_median(m: &DelayModel, n: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v: Vec<f64> = (0..n).map(|_| m.sample(&mut rng)).collect();
        v.sort_by(f64::total_cmp);
        v[n / 2]
    }

    #[test]
    fn medians_match_documented_values() {
        for m in [
            DelayModel::normal(10.0, 2.0),
            DelayModel::Laplace { loc: -3.0, scale: 1.5 },
            DelayModel::StudentT { loc: 4.0, scale: 1.0, dof: 3.0 },
            DelayModel::ShiftedLognormal { shift: 100.0, mu: 1.0, sigma: 1.0 },
        ] {
            let med = empirical_median(&m, 200_001);
            assert!((med - m.median()).abs() < 0.05, "{m}: {med}");
        }
    }

    #[test]
    fn laplace_spread() {
        // mean absolute deviation of a Laplace variable equals its scale
        let m = DelayModel::Laplace { loc: 0.0, scale: 3.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mad: f64 = (0..200_000).map(|_| m.sample(&mut rng).abs()).sum::<f64>() / 200_000.0;
        assert!((mad - 3.0).abs() < 0.05, "{mad}");
    }

    #[test]
    fn sample_ns_is_positive() {
        let m = DelayModel::normal(0.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..10_000).all(|_| m.sample_ns(&mut rng) >= 1));
        assert_eq!(DelayModel::Constant { value: 42.4 }.sample_ns(&mut rng), 42);
    }

    #[test]
    fn parse_round_trip() {
        for m in [
            DelayModel::normal(5e6, 2e5),
            DelayModel::Laplace { loc: 1.0, scale: 2.0 },
            DelayModel::StudentT { loc: 1.0, scale: 2.0, dof: 3.0 },
            DelayModel::ShiftedLognormal { shift: 1e6, mu: 10.0, sigma: 0.5 },
            DelayModel::Constant { value: 7.0 },
        ] {
            assert_eq!(m.to_string().parse::<DelayModel>().unwrap(), m);
        }
        assert_eq!("  normal   scale=1 loc=2 ".parse::<DelayModel>().unwrap(), DelayModel::normal(2.0, 1.0));
    }

    #[test]
    fn parse_errors() {
        assert_eq!("".parse::<DelayModel>(), Err(DelayModelError::Empty));
        assert!(matches!("gamma k=1".parse::<DelayModel>(), Err(DelayModelError::UnknownKind(_))));
        assert!(matches!(
            "normal loc=1".parse::<DelayModel>(),
            Err(DelayModelError::MissingParam { param: "scale", .. })
        ));
        assert!(matches!("normal loc=1 scale=x".parse::<DelayModel>(), Err(DelayModelError::BadParam(_))));
        assert!(matches!("normal loc=1 scale=-2".parse::<DelayModel>(), Err(DelayModelError::BadParam(_))));
        assert!(matches!("student_t loc=0 scale=1 dof=0".parse::<DelayModel>(), Err(DelayModelError::BadParam(_))));
    }
}
