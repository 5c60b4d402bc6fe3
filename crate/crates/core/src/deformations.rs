//! The seven ε-parameterized transforms used to build alternative hypotheses.
//!
//! `Mu` and `SigmaDiag` draw their random direction vectors once, from the
//! deformation stream, and scale them with ε. Every deformation built from the
//! same stream therefore belongs to one nested family, which keeps the mean
//! test statistic monotone in ε during a scan. The random kinds
//! (`SigmaOffDiag`, `NoiseNormal`, `NoiseUniform`) draw per-sample randomness
//! from `(stream, iteration)`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::models::ModelSpec;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeformKind {
    Mu,
    SigmaDiag,
    SigmaOffDiag,
    PowPlus,
    PowMinus,
    NoiseNormal,
    NoiseUniform,
}

impl DeformKind {
    pub const ALL: [DeformKind; 7] = [
        DeformKind::Mu,
        DeformKind::SigmaDiag,
        DeformKind::SigmaOffDiag,
        DeformKind::PowPlus,
        DeformKind::PowMinus,
        DeformKind::NoiseNormal,
        DeformKind::NoiseUniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeformKind::Mu => "Mu",
            DeformKind::SigmaDiag => "SigmaDiag",
            DeformKind::SigmaOffDiag => "SigmaOffDiag",
            DeformKind::PowPlus => "PowPlus",
            DeformKind::PowMinus => "PowMinus",
            DeformKind::NoiseNormal => "NoiseNormal",
            DeformKind::NoiseUniform => "NoiseUniform",
        }
    }

    /// Label used in Markdown tables.
    pub fn table_label(self) -> &'static str {
        match self {
            DeformKind::Mu => "μ",
            DeformKind::SigmaDiag => "Σ_ii",
            DeformKind::SigmaOffDiag => "Σ_i≠j",
            DeformKind::PowPlus => "pow+",
            DeformKind::PowMinus => "pow-",
            DeformKind::NoiseNormal => "N",
            DeformKind::NoiseUniform => "U",
        }
    }

    /// Whether the transform has a closed-form inverse and Jacobian.
    pub fn is_bijective(self) -> bool {
        matches!(
            self,
            DeformKind::Mu | DeformKind::SigmaDiag | DeformKind::PowPlus | DeformKind::PowMinus
        )
    }

    /// Largest ε for which the transform stays a bijection of the real line.
    pub fn epsilon_limit(self) -> Option<f64> {
        match self {
            DeformKind::PowMinus => Some(1.0),
            _ => None,
        }
    }
}

impl fmt::Display for DeformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DeformKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown deformation '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deformation {
    pub kind: DeformKind,
    pub epsilon: f64,
    pub d: usize,
    /// `u ~ U[-1,1]^d`, so that `δμ = ε u` (Mu only).
    pub frozen_mu_dirs: Option<Vec<f64>>,
    /// `v ~ U[0,1]^d`, so that `δσ = 1 + ε v` (SigmaDiag, and SigmaOffDiag beyond ε = 1).
    pub frozen_sigma_dirs: Option<Vec<f64>>,
    /// Centre kept fixed by the variance scaling.
    pub model_mean: Vec<f64>,
    pub deform_stream: RngStream,
}

/// Builds the member of the deformation family addressed by `stream` at `epsilon`.
pub fn make_deformation(
    kind: DeformKind,
    epsilon: f64,
    model_mean: &[f64],
    stream: &RngStream,
) -> Result<Deformation> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    let d = model_mean.len();
    if d == 0 {
        return Err(Error::InvalidArgument("deformation needs d >= 1".into()));
    }
    let frozen_mu_dirs = (kind == DeformKind::Mu).then(|| {
        let mut rng = stream.child("mu-dirs", 0).rng();
        (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()
    });
    let frozen_sigma_dirs = matches!(kind, DeformKind::SigmaDiag | DeformKind::SigmaOffDiag).then(|| {
        let mut rng = stream.child("sigma-dirs", 0).rng();
        (0..d).map(|_| rng.random::<f64>()).collect()
    });
    Ok(Deformation {
        kind,
        epsilon,
        d,
        frozen_mu_dirs,
        frozen_sigma_dirs,
        model_mean: model_mean.to_vec(),
        deform_stream: stream.clone(),
    })
}

fn signed_pow(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(p)
    }
}

impl Deformation {
    /// Same family (frozen directions and stream), different ε.
    pub fn at(&self, epsilon: f64) -> Result<Deformation> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(Deformation {
            epsilon,
            ..self.clone()
        })
    }

    /// `δμ(ε)`; zero for kinds other than Mu.
    pub fn delta_mu(&self) -> Vec<f64> {
        match &self.frozen_mu_dirs {
            Some(u) => u.iter().map(|v| self.epsilon * v).collect(),
            None => vec![0.0; self.d],
        }
    }

    /// `δσ(ε)` for the variance scaling with parameter `eps`.
    fn delta_sigma_at(&self, eps: f64) -> Vec<f64> {
        match &self.frozen_sigma_dirs {
            Some(v) => v.iter().map(|vi| 1.0 + eps * vi).collect(),
            None => vec![1.0; self.d],
        }
    }

    pub fn delta_sigma(&self) -> Vec<f64> {
        self.delta_sigma_at(self.epsilon)
    }

    fn scale_about_mean(&self, x: &DataMatrix, eps: f64) -> DataMatrix {
        let ds = self.delta_sigma_at(eps);
        let mu = &self.model_mean;
        x.map_entries(|j, v| mu[j] + ds[j] * (v - mu[j]))
    }

    /// Deforms every row of `x`. Random kinds use the sub-stream of
    /// `(deform_stream, iteration)`.
    pub fn apply(&self, x: &DataMatrix, iteration: u64) -> Result<DataMatrix> {
        if x.cols() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: x.cols(),
            });
        }
        let eps = self.epsilon;
        if eps == 0.0 {
            return Ok(x.clone());
        }
        let out = match self.kind {
            DeformKind::Mu => {
                let dm = self.delta_mu();
                x.map_entries(|j, v| v + dm[j])
            }
            DeformKind::SigmaDiag => self.scale_about_mean(x, eps),
            DeformKind::SigmaOffDiag => {
                let shuffled = self.partial_shuffle(x, eps.min(1.0), iteration);
                if eps > 1.0 {
                    self.scale_about_mean(&shuffled, eps - 1.0)
                } else {
                    shuffled
                }
            }
            DeformKind::PowPlus => x.map_entries(|_, v| signed_pow(v, 1.0 + eps)),
            DeformKind::PowMinus => x.map_entries(|_, v| signed_pow(v, 1.0 - eps)),
            DeformKind::NoiseNormal => {
                let mut rng = self.deform_stream.child("noise-normal", iteration).rng();
                x.map_entries(|_, v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + eps * z
                })
            }
            DeformKind::NoiseUniform => {
                let mut rng = self.deform_stream.child("noise-uniform", iteration).rng();
                x.map_entries(|_, v| v + eps * rng.random_range(-1.0..=1.0))
            }
        };
        if let Some(pos) = out.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / self.d,
                col: pos % self.d,
            });
        }
        Ok(out)
    }

    /// Per feature: picks `⌊fraction·n⌋` rows uniformly without replacement and
    /// permutes their values among themselves.
    fn partial_shuffle(&self, x: &DataMatrix, fraction: f64, iteration: u64) -> DataMatrix {
        let n = x.rows();
        let d = x.cols();
        let k = ((fraction * n as f64).floor() as usize).min(n);
        let mut values = x.as_slice().to_vec();
        if k < 2 {
            return DataMatrix::from_parts(n, d, values);
        }
        let base = self.deform_stream.child("offdiag", iteration);
        let mut order: Vec<usize> = (0..n).collect();
        for j in 0..d {
            let mut rng = base.child("feature", j as u64).rng();
            // The selected set is the first k entries of a row permutation, so
            // larger fractions select supersets of smaller ones.
            for (i, o) in order.iter_mut().enumerate() {
                *o = i;
            }
            order.shuffle(&mut rng);
            let selected = &order[..k];
            let mut picked: Vec<f64> = selected.iter().map(|&i| x.get(i, j)).collect();
            picked.shuffle(&mut rng);
            for (&i, v) in selected.iter().zip(picked) {
                values[i * d + j] = v;
            }
        }
        DataMatrix::from_parts(n, d, values)
    }

    fn require_bijective(&self) -> Result<()> {
        if !self.kind.is_bijective() {
            return Err(Error::NotInvertible(self.kind.name()));
        }
        if self.kind == DeformKind::PowMinus && self.epsilon >= 1.0 {
            return Err(Error::NotInvertible("PowMinus with epsilon >= 1"));
        }
        Ok(())
    }

    /// `g⁻¹(y)` for the bijective kinds.
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.require_bijective()?;
        if y.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: y.len(),
            });
        }
        let eps = self.epsilon;
        if eps == 0.0 {
            return Ok(y.to_vec());
        }
        Ok(match self.kind {
            DeformKind::Mu => {
                let dm = self.delta_mu();
                y.iter().zip(dm).map(|(v, m)| v - m).collect()
            }
            DeformKind::SigmaDiag => {
                let ds = self.delta_sigma();
                y.iter()
                    .enumerate()
                    .map(|(j, v)| self.model_mean[j] + (v - self.model_mean[j]) / ds[j])
                    .collect()
            }
            DeformKind::PowPlus => y.iter().map(|&v| signed_pow(v, 1.0 / (1.0 + eps))).collect(),
            DeformKind::PowMinus => y.iter().map(|&v| signed_pow(v, 1.0 / (1.0 - eps))).collect(),
            _ => unreachable!("checked by require_bijective"),
        })
    }

    /// `ln |det ∂g/∂x|` at `x`.
    pub fn log_abs_det_jacobian(&self, x: &[f64]) -> Result<f64> {
        self.require_bijective()?;
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: x.len(),
            });
        }
        let eps = self.epsilon;
        if eps == 0.0 {
            return Ok(0.0);
        }
        match self.kind {
            DeformKind::Mu => Ok(0.0),
            DeformKind::SigmaDiag => Ok(self.delta_sigma().iter().map(|s| s.ln()).sum()),
            DeformKind::PowPlus | DeformKind::PowMinus => {
                let (power, sign) = if self.kind == DeformKind::PowPlus {
                    (1.0 + eps, 1.0)
                } else {
                    (1.0 - eps, -1.0)
                };
                let mut total = 0.0;
                for (index, &v) in x.iter().enumerate() {
                    if v == 0.0 {
                        return Err(Error::SingularPoint { index });
                    }
                    total += power.ln() + sign * eps * v.abs().ln();
                }
                Ok(total)
            }
            _ => unreachable!("checked by require_bijective"),
        }
    }

    /// `ln q_ε(y) = ln p(g⁻¹(y)) − ln|det J_g|(g⁻¹(y))`.
    pub fn deformed_log_density(&self, model: &ModelSpec, y: &[f64]) -> Result<f64> {
        if self.epsilon == 0.0 {
            return crate::models::log_density(model, y);
        }
        let x = self.inverse(y)?;
        let jac = match self.kind {
            // ln|x| = ln|y| / power, which stays finite where |x| underflows.
            DeformKind::PowPlus | DeformKind::PowMinus => {
                let eps = self.epsilon;
                let (power, sign) = if self.kind == DeformKind::PowPlus { (1.0 + eps, 1.0) } else { (1.0 - eps, -1.0) };
                let mut total = 0.0;
                for (index, &v) in y.iter().enumerate() {
                    if v == 0.0 {
                        return Err(Error::SingularPoint { index });
                    }
                    total += power.ln() + sign * eps * v.abs().ln() / power;
                }
                total
            }
            _ => self.log_abs_det_jacobian(&x)?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            // The preimage overflowed, so q_ε(y) is below the f64 range.
            return Ok(f64::NEG_INFINITY);
        }
        Ok(model.log_density(&x) - jac)
    }
}

pub fn apply(def: &Deformation, x: &DataMatrix, iteration: u64) -> Result<DataMatrix> {
    def.apply(x, iteration)
}

pub fn inverse(def: &Deformation, y: &[f64]) -> Result<Vec<f64>> {
    def.inverse(y)
}

pub fn log_abs_det_jacobian(def: &Deformation, x: &[f64]) -> Result<f64> {
    def.log_abs_det_jacobian(x)
}

pub fn deformed_log_density(model: &ModelSpec, def: &Deformation, y: &[f64]) -> Result<f64> {
    def.deformed_log_density(model, y)
}
