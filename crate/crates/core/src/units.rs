//! Canonical internal unit system.
//!
//! | quantity | internal unit |
//! |----------|---------------|
//! | energy   | kJ/mol        |
//! | length   | nm            |
//! | time     | ps            |
//! | mass     | g/mol         |
//! | angle    | rad           |
//!
//! These four units are mutually consistent: 1 kJ/mol = 1 (g/mol)·nm²/ps², so
//! `p²/m` with `p` in (g/mol)·nm/ps comes out in kJ/mol without conversion
//! factors. Dimensionless toy models (the 2D double well) set every unit to 1.

/// Avogadro constant, 1/mol.
pub const AVOGADRO: f64 = 6.022_140_76e23;

/// Molar gas constant in kJ/(mol·K), i.e. Boltzmann's constant per mole.
pub const GAS_CONSTANT_KJ_PER_MOL_K: f64 = 8.314_462_618e-3;

/// Seconds per internal time unit (ps).
pub const SECONDS_PER_PS: f64 = 1e-12;

/// Converts a per-particle mass in grams to the internal molar mass unit g/mol.
pub fn grams_to_molar_mass(grams: f64) -> f64 {
    grams * AVOGADRO
}

/// Converts degrees to radians.
pub fn degrees(deg: f64) -> f64 {
    deg.to_radians()
}

/// Inverse temperature β = 1/(R·T) in mol/kJ for a temperature in kelvin.
pub fn beta_from_kelvin(kelvin: f64) -> f64 {
    1.0 / (GAS_CONSTANT_KJ_PER_MOL_K * kelvin)
}

/// Converts a duration in seconds into a model's time unit.
pub fn seconds_to_model_time(seconds: f64, seconds_per_unit: f64) -> f64 {
    seconds / seconds_per_unit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversion_table() {
        // proton mass 1.672e-24 g is ~1.00690 g/mol
        let mp = grams_to_molar_mass(1.672e-24);
        assert!((mp - 1.006_901_7).abs() < 1e-6, "{mp}");
        // kT at 300 K is ~2.494 kJ/mol
        let kt = 1.0 / beta_from_kelvin(300.0);
        assert!((kt - 2.494_339).abs() < 1e-5, "{kt}");
        // 0.5e-13 s is 0.05 ps
        assert!((seconds_to_model_time(0.5e-13, SECONDS_PER_PS) - 0.05).abs() < 1e-15);
        assert!((degrees(180.0) - std::f64::consts::PI).abs() < 1e-15);
        // energy consistency: 1 g/mol * (1 nm/ps)^2 = 1e-3 kg/mol * 1e6 m^2/s^2 = 1 kJ/mol
        let kg_per_mol = 1e-3;
        let m_per_s = 1e-9 / SECONDS_PER_PS;
        let joule_per_mol = kg_per_mol * m_per_s * m_per_s;
        assert!((joule_per_mol / 1e3 - 1.0).abs() < 1e-12);
    }
}
