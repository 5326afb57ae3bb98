//! Nondimensionalization: DU (distance), TU (time) and VU = DU/TU.

pub const AU_KM: f64 = 149_597_870.7;
pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Units {
    pub du_km: f64,
    pub tu_days: f64,
}

impl Units {
    /// DU = 1 AU, TU = 58 days.
    pub const HELIOCENTRIC: Units = Units { du_km: AU_KM, tu_days: 58.0 };

    pub fn tu_seconds(&self) -> f64 {
        self.tu_days * SECONDS_PER_DAY
    }

    /// km/s per VU.
    pub fn vu_kms(&self) -> f64 {
        self.du_km / self.tu_seconds()
    }

    pub fn kms_to_vu(&self, kms: f64) -> f64 {
        kms / self.vu_kms()
    }

    pub fn vu_to_kms(&self, vu: f64) -> f64 {
        vu * self.vu_kms()
    }

    pub fn days_to_tu(&self, days: f64) -> f64 {
        days / self.tu_days
    }
}

impl Default for Units {
    fn default() -> Self {
        Self::HELIOCENTRIC
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velocity_unit() {
        let u = Units::HELIOCENTRIC;
        assert_eq!(u.tu_seconds(), 5_011_200.0);
        assert!((u.vu_kms() - 29.853).abs() < 1e-3);
        assert!((u.kms_to_vu(0.76) - 0.025458).abs() < 1e-6);
    }
}
