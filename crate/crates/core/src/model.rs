//! Dimensionless pellet model: parameters, kinetics and coordinate transforms.
//!
//! The reactant balance is a symmetric reaction-diffusion equation on
//! `x in [0, 1]` with `y(1) = 1`; the pellet temperature `z` is lumped.
//! Everything here is a pure function of scalars, independent of any
//! discretization.

use serde::{Deserialize, Serialize};

use crate::error::{PelletError, Result};

/// Stoichiometric coefficient of the single reactant.
pub const NU_A: f64 = -1.0;

/// Pellet shape. The discriminant is the exponent `a` of the radial metric `x^a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Geometry {
    Slab,
    Cylinder,
    Sphere,
}

impl Geometry {
    pub fn from_index(a: u8) -> Result<Self> {
        match a {
            0 => Ok(Geometry::Slab),
            1 => Ok(Geometry::Cylinder),
            2 => Ok(Geometry::Sphere),
            _ => Err(PelletError::InvalidParameter {
                field: "a",
                reason: format!("geometry factor must be 0, 1 or 2, got {a}"),
            }),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Geometry::Slab => 0,
            Geometry::Cylinder => 1,
            Geometry::Sphere => 2,
        }
    }

    pub fn factor(self) -> f64 {
        f64::from(self.index())
    }
}

impl TryFrom<u8> for Geometry {
    type Error = PelletError;
    fn try_from(a: u8) -> Result<Self> {
        Geometry::from_index(a)
    }
}

impl From<Geometry> for u8 {
    fn from(g: Geometry) -> u8 {
        g.index()
    }
}

/// The dimensionless constants of the reduced pellet model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a: Geometry,
    /// Reaction order.
    pub n: f64,
    /// Modified Prater-type parameter.
    pub beta_star: f64,
    /// Dimensionless activation energy.
    pub gamma: f64,
    /// Modified Lewis number.
    pub lewis: f64,
    /// Modified Thiele modulus.
    pub theta0: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            a: Geometry::Slab,
            n: 1.0,
            beta_star: 0.25,
            gamma: 7.95,
            lewis: 10.0,
            theta0: 0.5,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &'static str, reason: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(PelletError::InvalidParameter {
                    field,
                    reason: reason.to_string(),
                })
            }
        }
        check(self.n.is_finite() && self.n >= 0.0, "n", "must be finite and >= 0")?;
        check(
            self.beta_star.is_finite() && self.beta_star > 0.0,
            "beta_star",
            "must be finite and > 0",
        )?;
        check(
            self.gamma.is_finite() && self.gamma >= 0.0,
            "gamma",
            "must be finite and >= 0",
        )?;
        check(
            self.lewis.is_finite() && self.lewis > 0.0,
            "lewis",
            "must be finite and > 0",
        )?;
        check(
            self.theta0.is_finite() && self.theta0 > 0.0,
            "theta0",
            "must be finite and > 0",
        )?;
        Ok(())
    }

    pub fn with_theta0(mut self, theta0: f64) -> Self {
        self.theta0 = theta0;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_lewis(mut self, lewis: f64) -> Self {
        self.lewis = lewis;
        self
    }

    /// Coefficient of the reaction term in the reactant balance.
    pub fn q(&self) -> f64 {
        q_factor(self.a, self.n)
    }
}

/// A continuous concentration profile and temperature, used to build
/// discrete states from analytic solutions.
#[derive(Debug, Clone, Copy)]
pub struct PelletStateContinuous<F: Fn(f64) -> f64> {
    pub y: F,
    pub z: f64,
}

impl<F: Fn(f64) -> f64> PelletStateContinuous<F> {
    pub fn check(&self) -> Result<()> {
        if ((self.y)(1.0) - 1.0).abs() > 1e-12 {
            return Err(PelletError::Invariant("profile must satisfy y(1) = 1".into()));
        }
        if !(self.z > 0.0) {
            return Err(PelletError::Invariant(format!(
                "temperature must be positive, got {}",
                self.z
            )));
        }
        Ok(())
    }
}

fn check_temperature(z: f64) -> Result<()> {
    if z > 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(PelletError::Domain(format!("temperature z must be positive, got {z}")))
    }
}

fn concentration_power(y: f64, n: f64) -> Result<f64> {
    if y >= 0.0 {
        Ok(y.powf(n))
    } else if n.fract() == 0.0 {
        Ok(y.powi(n as i32))
    } else {
        Err(PelletError::Domain(format!(
            "negative concentration {y} with non-integer order {n}"
        )))
    }
}

/// Arrhenius factor `exp(gamma (1 - 1/z))`.
pub fn arrhenius(z: f64, gamma: f64) -> Result<f64> {
    check_temperature(z)?;
    Ok((gamma * (1.0 - 1.0 / z)).exp())
}

/// Dimensionless power-law rate `exp(gamma (1 - 1/z)) y^n`.
pub fn reaction_rate(y: f64, z: f64, gamma: f64, n: f64) -> Result<f64> {
    let e = arrhenius(z, gamma)?;
    Ok(e * concentration_power(y, n)?)
}

/// Rate together with its partial derivatives `(R, dR/dy, dR/dz)`.
pub fn reaction_rate_derivs(y: f64, z: f64, gamma: f64, n: f64) -> Result<(f64, f64, f64)> {
    let e = arrhenius(z, gamma)?;
    let yn = concentration_power(y, n)?;
    let dyn_dy = if n == 0.0 {
        0.0
    } else if n == 1.0 {
        1.0
    } else {
        n * concentration_power(y, n - 1.0)?
    };
    let r = e * yn;
    Ok((r, e * dyn_dy, r * gamma / (z * z)))
}

/// Transformed temperature `theta = theta0 exp((gamma/2)(1 - 1/z))`.
pub fn theta_from_z(z: f64, theta0: f64, gamma: f64) -> Result<f64> {
    check_temperature(z)?;
    Ok(theta0 * (0.5 * gamma * (1.0 - 1.0 / z)).exp())
}

/// Inverse of [`theta_from_z`]; requires `gamma > 0`.
pub fn z_from_theta(theta: f64, theta0: f64, gamma: f64) -> Result<f64> {
    if !(theta > 0.0) || gamma <= 0.0 {
        return Err(PelletError::Domain(format!(
            "cannot invert theta = {theta} at gamma = {gamma}"
        )));
    }
    let s = 1.0 - 2.0 * (theta / theta0).ln() / gamma;
    if s <= 0.0 {
        return Err(PelletError::Domain(format!(
            "theta = {theta} has no finite temperature"
        )));
    }
    Ok(1.0 / s)
}

/// Thiele modulus modified for power-law kinetics and pellet shape.
pub fn modified_thiele(phi0: f64, a: Geometry, n: f64) -> f64 {
    phi0 / (a.factor() + 1.0) * ((n + 1.0) / 2.0).sqrt()
}

/// `q(a, n) = 2 (a+1)^2 / (n+1) * nu_A`.
pub fn q_factor(a: Geometry, n: f64) -> f64 {
    let a1 = a.factor() + 1.0;
    2.0 * a1 * a1 / (n + 1.0) * NU_A
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rate_at_reference_conditions() {
        assert_eq!(reaction_rate(1.0, 1.0, 7.95, 1.0).unwrap(), 1.0);
        assert_eq!(reaction_rate(0.0, 1.3, 7.95, 1.0).unwrap(), 0.0);
        let expected = (7.95_f64 * (1.0 - 1.0 / 1.1)).exp() * 0.5;
        assert_relative_eq!(
            reaction_rate(0.5, 1.1, 7.95, 1.0).unwrap(),
            expected,
            max_relative = 1e-15
        );
        assert!((expected - 1.0300).abs() < 5e-5);
    }

    #[test]
    fn rate_domain_errors() {
        assert!(matches!(reaction_rate(0.5, 0.0, 1.0, 1.0), Err(PelletError::Domain(_))));
        assert!(matches!(
            reaction_rate(0.5, -1.0, 1.0, 1.0),
            Err(PelletError::Domain(_))
        ));
        assert!(matches!(
            reaction_rate(-0.1, 1.0, 1.0, 0.5),
            Err(PelletError::Domain(_))
        ));
        // integer order tolerates small negative excursions
        assert_relative_eq!(reaction_rate(-0.1, 1.0, 1.0, 2.0).unwrap(), 0.01, max_relative = 1e-14);
    }

    #[test]
    fn theta_transform() {
        assert_eq!(theta_from_z(1.0, 0.5486, 7.95).unwrap(), 0.5486);
        assert_eq!(theta_from_z(1.2, 0.5, 0.0).unwrap(), 0.5);
        let t = theta_from_z(1.1, 0.5486, 7.95).unwrap();
        assert_relative_eq!(t, 0.5486 * (3.975_f64 * (1.0 - 1.0 / 1.1)).exp(), max_relative = 1e-15);
        assert!((t - 0.7875).abs() < 2e-4);
        assert!(theta_from_z(0.0, 0.5, 1.0).is_err());
        let z = z_from_theta(t, 0.5486, 7.95).unwrap();
        assert_relative_eq!(z, 1.1, max_relative = 1e-14);
    }

    #[test]
    fn thiele_and_q() {
        assert_relative_eq!(modified_thiele(1.0, Geometry::Slab, 1.0), 1.0);
        assert_relative_eq!(modified_thiele(3.0, Geometry::Sphere, 1.0), 1.0);
        assert_relative_eq!(
            modified_thiele(1.0, Geometry::Slab, 0.0),
            0.5_f64.sqrt(),
            max_relative = 1e-15
        );
        assert_eq!(q_factor(Geometry::Slab, 1.0), -1.0);
        assert_eq!(q_factor(Geometry::Sphere, 1.0), -9.0);
        assert_eq!(q_factor(Geometry::Slab, 0.0), -2.0);
    }

    #[test]
    fn reaction_coefficient_matches_raw_thiele() {
        for a in [Geometry::Slab, Geometry::Cylinder, Geometry::Sphere] {
            for n in [0.0, 1.0, 2.0] {
                let phi0 = 0.83;
                let t0 = modified_thiele(phi0, a, n);
                assert_relative_eq!(q_factor(a, n) * t0 * t0, NU_A * phi0 * phi0, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn params_validation() {
        let p = ModelParams::default();
        assert!(p.validate().is_ok());
        let bad = ModelParams { lewis: 0.0, ..p };
        assert!(matches!(
            bad.validate(),
            Err(PelletError::InvalidParameter { field: "lewis", .. })
        ));
        let bad = ModelParams { n: -1.0, ..p };
        assert!(bad.validate().is_err());
        assert!(Geometry::from_index(3).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rate_unity_at_reference(gamma in 0.0..40.0f64, n in 0.0..3.0f64) {
                prop_assert_eq!(reaction_rate(1.0, 1.0, gamma, n).unwrap(), 1.0);
            }

            #[test]
            fn theta_is_root_of_square(z in 0.5..4.0f64, t0 in 0.01..3.0f64, gamma in 0.0..30.0f64) {
                let th = theta_from_z(z, t0, gamma).unwrap();
                let sq = t0 * t0 * (gamma * (1.0 - 1.0 / z)).exp();
                prop_assert!((th * th - sq).abs() <= 4.0 * f64::EPSILON * sq);
                prop_assert!(th > 0.0);
            }

            #[test]
            fn theta_increasing(z in 0.5..4.0f64, dz in 1e-3..1.0f64, gamma in 0.1..30.0f64) {
                prop_assert!(theta_from_z(z + dz, 0.5, gamma).unwrap() > theta_from_z(z, 0.5, gamma).unwrap());
            }

            #[test]
            fn isothermal_rate_ignores_temperature(y in 0.0..1.0f64, z in 0.5..3.0f64, n in 0.0..3.0f64) {
                let h = 1e-6;
                let d = (reaction_rate(y, z + h, 0.0, n).unwrap() - reaction_rate(y, z - h, 0.0, n).unwrap()) / (2.0 * h);
                prop_assert!(d.abs() < 1e-8);
            }
        }
    }
}
