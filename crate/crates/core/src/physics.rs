//! Pointwise constitutive relations of the dimensionless electrolyte model.
//!
//! All quantities are dimensionless: potentials in thermal-voltage units,
//! pressure in units of the reference pressure, densities in units of the
//! reference number density. Species are ordered with the neutral solvent
//! last; the solvent fraction is never stored and is always derived as
//! `1 - sum(y)`.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

/// Smallest admissible mole fraction. Evaluations below this value are
/// rejected instead of clamped.
pub const MOLE_FRACTION_FLOOR: f64 = 1e-14;

/// Reference molarity of the solvent in mol/L, used to convert a salt
/// molarity into a bulk mole fraction.
pub const REFERENCE_MOLARITY: f64 = 55.0;

/// Avogadro constant (1/mol) with the precision used for the reference density.
pub const AVOGADRO: f64 = 6.022e23;

/// Inline storage for per-species quantities; mixtures rarely exceed eight species.
pub type SpeciesVec = SmallVec<[f64; 8]>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("mole fraction {value:e} of species {species} outside ({floor:e}, 1 - {floor:e})")]
    MoleFraction { species: usize, value: f64, floor: f64 },
    #[error("pressure {pressure} outside the logarithm domain of bulk modulus {bulk_modulus}")]
    PressureDomain { pressure: f64, bulk_modulus: f64 },
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("physical constant `{name}` must be strictly positive, got {value}")]
    NonPositiveConstant { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Species {
    /// Charge number in elementary charges.
    pub z: i32,
    /// Solvation number (solvent molecules bound per ion).
    pub kappa: f64,
    /// Reference Gibbs constant.
    #[serde(default)]
    pub g_ref: f64,
}

impl Species {
    pub fn ion(z: i32, kappa: f64) -> Self {
        Self { z, kappa, g_ref: 0.0 }
    }

    pub fn solvent() -> Self {
        Self {
            z: 0,
            kappa: 0.0,
            g_ref: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Compressibility {
    Incompressible,
    BulkModulus(f64),
}

/// An electrolyte: charged species followed by the neutral solvent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    species: Vec<Species>,
    compressibility: Compressibility,
    lambda2: f64,
    a2: f64,
}

impl Mixture {
    /// Builds a mixture from its full species list (solvent last).
    pub fn new(
        species: Vec<Species>,
        compressibility: Compressibility,
        lambda2: f64,
        a2: f64,
    ) -> Result<Self, PhysicsError> {
        let invalid = |msg: String| Err(PhysicsError::InvalidMixture(msg));
        if species.len() < 2 {
            return invalid(format!("need at least 2 species, got {}", species.len()));
        }
        if !(lambda2 > 0.0 && lambda2.is_finite()) {
            return invalid(format!("lambda2 must be positive, got {lambda2}"));
        }
        if !(a2 > 0.0 && a2.is_finite()) {
            return invalid(format!("a2 must be positive, got {a2}"));
        }
        if let Compressibility::BulkModulus(k) = compressibility {
            if !(k > 0.0 && k.is_finite()) {
                return invalid(format!("bulk modulus must be positive, got {k}"));
            }
        }
        let (solvent, ions) = species.split_last().expect("len >= 2");
        if solvent.z != 0 || solvent.kappa != 0.0 {
            return invalid("the last species must be a neutral, unsolvated solvent".into());
        }
        if let Some(i) = ions.iter().position(|s| s.z == 0) {
            return invalid(format!("species {i} is neutral; only the solvent may have z = 0"));
        }
        if let Some(i) = ions.iter().position(|s| !(s.kappa >= 0.0)) {
            return invalid(format!("species {i} has a negative solvation number"));
        }
        Ok(Self {
            species,
            compressibility,
            lambda2,
            a2,
        })
    }

    /// Charged species with a uniform solvation number, the solvent appended.
    pub fn with_charges(
        charges: &[i32],
        kappa: f64,
        compressibility: Compressibility,
        lambda2: f64,
        a2: f64,
    ) -> Result<Self, PhysicsError> {
        let mut species: Vec<Species> = charges.iter().map(|&z| Species::ion(z, kappa)).collect();
        species.push(Species::solvent());
        Self::new(species, compressibility, lambda2, a2)
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    /// Total number of species N, including the solvent.
    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    /// Number of charged species, N - 1.
    pub fn n_ions(&self) -> usize {
        self.species.len() - 1
    }

    pub fn charges(&self) -> impl Iterator<Item = f64> + '_ {
        self.species[..self.n_ions()].iter().map(|s| f64::from(s.z))
    }

    pub fn compressibility(&self) -> Compressibility {
        self.compressibility
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub fn set_compressibility(&mut self, c: Compressibility) -> Result<(), PhysicsError> {
        *self = Self::new(self.species.clone(), c, self.lambda2, self.a2)?;
        Ok(())
    }

    /// Replaces the solvation number of every charged species.
    pub fn set_kappa(&mut self, kappa: f64) -> Result<(), PhysicsError> {
        let n = self.n_ions();
        let mut species = self.species.clone();
        for s in &mut species[..n] {
            s.kappa = kappa;
        }
        *self = Self::new(species, self.compressibility, self.lambda2, self.a2)?;
        Ok(())
    }

    fn check_pressure(&self, p: f64) -> Result<(), PhysicsError> {
        if let Compressibility::BulkModulus(k) = self.compressibility {
            if !(1.0 + (p - 1.0) / k > 0.0) {
                return Err(PhysicsError::PressureDomain {
                    pressure: p,
                    bulk_modulus: k,
                });
            }
        }
        Ok(())
    }

    /// Specific Gibbs energy of species `alpha` at pressure `p`.
    pub fn gibbs_energy(&self, p: f64, alpha: usize) -> Result<f64, PhysicsError> {
        self.check_pressure(p)?;
        let s = &self.species[alpha];
        let scale = (s.kappa + 1.0) * self.a2;
        Ok(match self.compressibility {
            Compressibility::Incompressible => s.g_ref + scale * (p - 1.0),
            Compressibility::BulkModulus(k) => s.g_ref + scale * k * ((p - 1.0) / k).ln_1p(),
        })
    }

    /// Chemical potential `g(p) + ln(y)`; `y` must lie strictly inside the floor band.
    pub fn chemical_potential(&self, y: f64, p: f64, alpha: usize) -> Result<f64, PhysicsError> {
        check_fraction(alpha, y)?;
        Ok(self.gibbs_energy(p, alpha)? + y.ln())
    }

    /// Total number density.
    pub fn number_density(&self, p: f64) -> Result<f64, PhysicsError> {
        self.check_pressure(p)?;
        Ok(self.number_density_unchecked(p))
    }

    pub(crate) fn number_density_unchecked(&self, p: f64) -> f64 {
        match self.compressibility {
            Compressibility::Incompressible => 1.0,
            Compressibility::BulkModulus(k) => 1.0 + (p - 1.0) / k,
        }
    }

    /// d n / d p.
    pub(crate) fn number_density_slope(&self) -> f64 {
        match self.compressibility {
            Compressibility::Incompressible => 0.0,
            Compressibility::BulkModulus(k) => 1.0 / k,
        }
    }

    /// Charge per molecule `sum_a z_a y_a` over the charged species.
    pub fn mean_charge(&self, y: &[f64]) -> f64 {
        self.charges().zip(y).map(|(z, y)| z * y).sum()
    }

    /// Free charge density `n * sum_a z_a y_a`.
    pub fn free_charge(&self, sample: &StateSample<'_>) -> Result<f64, PhysicsError> {
        sample.check(self)?;
        Ok(self.number_density(sample.p)? * self.mean_charge(sample.y))
    }

    /// Derivative of `g_a - g_N` with respect to pressure.
    pub(crate) fn gibbs_difference_slope(&self, p: f64, alpha: usize) -> f64 {
        self.species[alpha].kappa * self.a2 / self.number_density_unchecked(p)
    }

    /// Flux potential `w = mu_a - mu_N + z_a phi` of charged species `alpha`
    /// and its partial derivatives.
    pub fn flux_potential(&self, sample: &StateSample<'_>, alpha: usize) -> Result<FluxPotential, PhysicsError> {
        assert!(
            alpha < self.n_ions(),
            "flux potential is defined for charged species only"
        );
        sample.check(self)?;
        let solvent = self.n_ions();
        let y_alpha = sample.y[alpha];
        let y_solvent = sample.solvent_fraction();
        let w = self.gibbs_energy(sample.p, alpha)? - self.gibbs_energy(sample.p, solvent)? + y_alpha.ln()
            - y_solvent.ln()
            + f64::from(self.species[alpha].z) * sample.phi;
        let dw_dy = (0..self.n_ions())
            .map(|beta| if beta == alpha { 1.0 / y_alpha } else { 0.0 } + 1.0 / y_solvent)
            .collect();
        Ok(FluxPotential {
            w,
            dw_dp: self.gibbs_difference_slope(sample.p, alpha),
            dw_dy,
            dw_dphi: f64::from(self.species[alpha].z),
        })
    }
}

fn check_fraction(species: usize, value: f64) -> Result<(), PhysicsError> {
    if value > MOLE_FRACTION_FLOOR && value < 1.0 - MOLE_FRACTION_FLOOR {
        Ok(())
    } else {
        Err(PhysicsError::MoleFraction {
            species,
            value,
            floor: MOLE_FRACTION_FLOOR,
        })
    }
}

/// Point values of the unknowns: potential, pressure and the charged-species fractions.
#[derive(Debug, Clone, Copy)]
pub struct StateSample<'a> {
    pub phi: f64,
    pub p: f64,
    pub y: &'a [f64],
}

impl StateSample<'_> {
    pub fn solvent_fraction(&self) -> f64 {
        1.0 - self.y.iter().sum::<f64>()
    }

    /// Checks fraction bounds (including the derived solvent) and the pressure domain.
    pub fn check(&self, mixture: &Mixture) -> Result<(), PhysicsError> {
        if self.y.len() != mixture.n_ions() {
            return Err(PhysicsError::InvalidMixture(format!(
                "sample has {} fractions, mixture has {} charged species",
                self.y.len(),
                mixture.n_ions()
            )));
        }
        for (alpha, &y) in self.y.iter().enumerate() {
            check_fraction(alpha, y)?;
        }
        check_fraction(mixture.n_ions(), self.solvent_fraction())?;
        mixture.check_pressure(self.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxPotential {
    pub w: f64,
    pub dw_dp: f64,
    /// Derivatives with respect to the charged-species fractions.
    pub dw_dy: SpeciesVec,
    pub dw_dphi: f64,
}

/// SI inputs of the two dimensionless groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Temperature (K).
    pub temperature: f64,
    /// Reference number density (1/m^3).
    pub n_ref: f64,
    /// Reference pressure (Pa).
    pub p_ref: f64,
    /// Reference length (m).
    pub l_ref: f64,
    /// Dielectric susceptibility.
    pub chi: f64,
    pub elementary_charge: f64,
    pub boltzmann: f64,
    pub vacuum_permittivity: f64,
}

impl Default for PhysicalConstants {
    /// Aqueous electrolyte at room temperature on a 20 nm reference length.
    fn default() -> Self {
        Self {
            temperature: 293.75,
            n_ref: REFERENCE_MOLARITY * 1e3 * AVOGADRO,
            p_ref: 1.01325e5,
            l_ref: 20e-9,
            chi: 80.0,
            elementary_charge: 1.602e-19,
            boltzmann: 1.381e-23,
            vacuum_permittivity: 8.85e-12,
        }
    }
}

impl PhysicalConstants {
    /// Thermal voltage kT/e in volts.
    pub fn thermal_voltage(&self) -> f64 {
        self.boltzmann * self.temperature / self.elementary_charge
    }

    /// Returns `(lambda2, a2)`: the scaled Debye length squared and the
    /// pressure scaling factor.
    pub fn dimensionless_groups(&self) -> Result<(f64, f64), PhysicsError> {
        let positive = [
            ("temperature", self.temperature),
            ("n_ref", self.n_ref),
            ("p_ref", self.p_ref),
            ("l_ref", self.l_ref),
            ("elementary_charge", self.elementary_charge),
            ("boltzmann", self.boltzmann),
            ("vacuum_permittivity", self.vacuum_permittivity),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(PhysicsError::NonPositiveConstant { name, value });
            }
        }
        if !(self.chi >= 0.0) {
            return Err(PhysicsError::NonPositiveConstant {
                name: "chi",
                value: self.chi,
            });
        }
        let kt = self.boltzmann * self.temperature;
        let lambda2 = kt * self.vacuum_permittivity * (1.0 + self.chi)
            / (self.elementary_charge.powi(2) * self.n_ref * self.l_ref.powi(2));
        let a2 = self.p_ref / (self.n_ref * kt);
        Ok((lambda2, a2))
    }
}

/// Bulk mole fraction of a salt of the given molarity (mol/L).
pub fn molarity_to_fraction(molarity: f64) -> f64 {
    molarity / REFERENCE_MOLARITY
}
