//! Closed-form percentile moments of a normal zBMI distribution and their
//! numerical inverse.
//!
//! If `Z ~ N(m, s^2)` then `P = Phi(Z)` has
//!
//! ```text
//! E[P]   = Phi(u)
//! Var[P] = Phi(u) - 2 T(u, v) - Phi(u)^2,   u = m / sqrt(1 + s^2),  v = 1 / sqrt(1 + 2 s^2)
//! ```
//!
//! where `T` is Owen's T function. The inverse solves these two equations for
//! `(m, s)` given an observed percentile mean and SD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{self, Probability};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Means closer than this to 0 or 1 are rejected rather than solved.
const BOUNDARY_MARGIN: f64 = 1e-6;
const FD_STEP: f64 = 1e-6;

/// Normal distribution of zBMI within a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZDistribution {
    pub m_z: f64,
    pub s_z: f64,
}

impl ZDistribution {
    pub fn new(m_z: f64, s_z: f64) -> Result<Self> {
        if !m_z.is_finite() || !s_z.is_finite() || s_z <= 0.0 {
            return Err(Error::Domain(format!("invalid z distribution ({m_z}, {s_z})")));
        }
        Ok(ZDistribution { m_z, s_z })
    }
}

/// Aggregate percentile data on the `[0, 1]` scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileMoments {
    pub mean: Probability,
    pub sd: f64,
}

impl PercentileMoments {
    /// Checks `0 < mean < 1`, `sd >= 0` and the attainable-variance bound
    /// `sd^2 < mean (1 - mean)`.
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(mean > 0.0 && mean < 1.0) {
            return Err(Error::Domain(format!("percentile mean {mean} outside (0, 1)")));
        }
        if !(sd >= 0.0) || !sd.is_finite() {
            return Err(Error::Domain(format!("percentile sd must be non-negative, got {sd}")));
        }
        if sd * sd >= mean * (1.0 - mean) {
            return Err(Error::Infeasible(format!(
                "percentile sd {sd} too large for mean {mean}: sd^2 must be below {}",
                mean * (1.0 - mean)
            )));
        }
        Ok(PercentileMoments {
            mean: Probability::new(mean)?,
            sd,
        })
    }

    /// Exact percentile moments induced by `d`.
    pub fn from_z(d: ZDistribution) -> Self {
        PercentileMoments {
            mean: expected_percentile(d),
            sd: variance_percentile(d).max(0.0).sqrt(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean.value()
    }
}

fn u_v(d: ZDistribution) -> (f64, f64) {
    let s2 = d.s_z * d.s_z;
    (d.m_z / (1.0 + s2).sqrt(), 1.0 / (1.0 + 2.0 * s2).sqrt())
}

/// `E[Phi(Z)]` for `Z ~ N(m_z, s_z^2)`.
pub fn expected_percentile(d: ZDistribution) -> Probability {
    let (u, _) = u_v(d);
    Probability::new(specfun::cdf(u)).expect("cdf lies in [0, 1]")
}

/// `Var[Phi(Z)]` for `Z ~ N(m_z, s_z^2)`.
pub fn variance_percentile(d: ZDistribution) -> f64 {
    let (u, v) = u_v(d);
    let p = specfun::cdf(u);
    // p - p^2 = p * (1 - p); keep the tail factor exact for large |u|
    p * specfun::sf(u) - 2.0 * specfun::owen_t(u, v)
}

/// Solver report for the analytical inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticalDiagnostics {
    pub iterations: usize,
    pub residual_mean: f64,
    pub residual_sd: f64,
}

fn residual(x: [f64; 2], obs: &PercentileMoments) -> [f64; 2] {
    let d = ZDistribution {
        m_z: x[0],
        s_z: x[1].exp(),
    };
    let fwd = PercentileMoments::from_z(d);
    [fwd.mean() - obs.mean(), fwd.sd - obs.sd]
}

fn max_abs(r: [f64; 2]) -> f64 {
    r[0].abs().max(r[1].abs())
}

/// Solves for the normal zBMI distribution whose percentile mean and SD
/// match `obs`.
///
/// Damped Newton iteration on `(m_z, log s_z)` with a central-difference
/// Jacobian, started from `m_z = Phi^{-1}(mean) * sqrt(2)`, `s_z = 1`.
pub fn map_percentile_to_z_analytical(
    obs: &PercentileMoments,
    tol: f64,
    max_iter: usize,
) -> Result<(ZDistribution, AnalyticalDiagnostics)> {
    let obs = PercentileMoments::new(obs.mean(), obs.sd)?;
    if obs.mean() < BOUNDARY_MARGIN || obs.mean() > 1.0 - BOUNDARY_MARGIN {
        return Err(Error::Domain(format!(
            "percentile mean {} is too close to 0 or 1 to map",
            obs.mean()
        )));
    }
    if obs.sd <= 0.0 {
        return Err(Error::Infeasible(
            "percentile sd of 0 corresponds to no normal zBMI distribution".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("tolerance must be positive, got {tol}")));
    }

    let mut x = [specfun::quantile(obs.mean()) * std::f64::consts::SQRT_2, 0.0];
    let mut r = residual(x, &obs);
    let mut best = (x, r);
    let mut iterations = 0;

    loop {
        let norm = max_abs(r);
        if norm < max_abs(best.1) {
            best = (x, r);
        }
        if norm <= tol {
            let d = ZDistribution {
                m_z: x[0],
                s_z: x[1].exp(),
            };
            let diag = AnalyticalDiagnostics {
                iterations,
                residual_mean: r[0],
                residual_sd: r[1],
            };
            return Ok((d, diag));
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let (mut hi, mut lo) = (x, x);
            hi[k] += FD_STEP;
            lo[k] -= FD_STEP;
            let (rh, rl) = (residual(hi, &obs), residual(lo, &obs));
            for i in 0..2 {
                jac[i][k] = (rh[i] - rl[i]) / (2.0 * FD_STEP);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let mut dx = [
            -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
            -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det,
        ];
        let len = max_abs(dx);
        if len > 2.0 {
            dx = [dx[0] * 2.0 / len, dx[1] * 2.0 / len];
        }

        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = [x[0] + damping * dx[0], x[1] + damping * dx[1]];
            let rc = residual(cand, &obs);
            if max_abs(rc) < norm {
                x = cand;
                r = rc;
                accepted = true;
                break;
            }
            damping *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let (bx, br) = best;
    Err(Error::NonConvergence {
        best: ZDistribution {
            m_z: bx[0],
            s_z: bx[1].exp(),
        },
        iterations,
        residual: max_abs(br),
    })
}
