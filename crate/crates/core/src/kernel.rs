//! Smoothing kernels and their closed-form CDFs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl KernelFamily {
    /// Unscaled density K(u).
    pub fn density(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
            KernelFamily::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// Unscaled CDF of K.
    pub fn cdf(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => 0.5 * libm::erfc(-u / std::f64::consts::SQRT_2),
            KernelFamily::Epanechnikov => {
                if u <= -1.0 {
                    0.0
                } else if u >= 1.0 {
                    1.0
                } else {
                    0.5 + 0.75 * u - 0.25 * u * u * u
                }
            }
        }
    }

    /// ∫K(u)² du.
    pub fn mu0(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 0.5 / std::f64::consts::PI.sqrt(),
            KernelFamily::Epanechnikov => 0.6,
        }
    }

    /// Half-width of the (effective) support on the unscaled axis.
    pub fn support(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 10.0,
            KernelFamily::Epanechnikov => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    H1,
    H2,
}

/// Kernel family together with the bandwidth pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub h1: f64,
    pub h2: f64,
    pub mu0: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, h1: f64, h2: f64) -> Result<Self> {
        if !(h1 > 0.0 && h1.is_finite()) || !(h2 > 0.0 && h2.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "bandwidths must be positive and finite, got h1 = {h1}, h2 = {h2}"
            )));
        }
        Ok(Self {
            family,
            h1,
            h2,
            mu0: family.mu0(),
        })
    }

    pub fn gaussian(h1: f64, h2: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, h1, h2)
    }

    pub fn h(&self, which: Bandwidth) -> f64 {
        match which {
            Bandwidth::H1 => self.h1,
            Bandwidth::H2 => self.h2,
        }
    }

    /// Scaled weight K(u/h)/h.
    pub fn weight(&self, which: Bandwidth, u: f64) -> f64 {
        let h = self.h(which);
        self.family.density(u / h) / h
    }

    /// ∫_a^b K_h(s − t) ds.
    pub fn cdf_increment(&self, which: Bandwidth, t: f64, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let h = self.h(which);
        let lo = (a - t) / h;
        let hi = (b - t) / h;
        match self.family {
            // Use the upper tail when both ends sit right of the centre to avoid cancellation.
            KernelFamily::Gaussian if lo > 0.0 => {
                let s = std::f64::consts::SQRT_2;
                0.5 * (libm::erfc(lo / s) - libm::erfc(hi / s))
            }
            family => family.cdf(hi) - family.cdf(lo),
        }
    }

    /// Radius beyond which weights are treated as zero.
    pub fn radius(&self, which: Bandwidth) -> f64 {
        self.family.support() * self.h(which)
    }
}

pub fn kernel_weight(k: &KernelSpec, which: Bandwidth, u: f64) -> f64 {
    k.weight(which, u)
}

pub fn kernel_cdf_increment(k: &KernelSpec, which: Bandwidth, t: f64, a: f64, b: f64) -> f64 {
    k.cdf_increment(which, t, a, b)
}
