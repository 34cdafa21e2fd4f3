//! Physical sensor models: MQ-135 gas sensor through a 10-bit ADC, DHT11
//! humidity quantization and MLX90614 temperature resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::Centi;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SensorFault {
    #[error("ADC reading {0} is at a rail")]
    AdcRail(u32),
    #[error("concentration must be positive")]
    NonPositive,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid MQ-135 model: {0}")]
pub struct ModelError(pub &'static str);

/// Load-resistor divider in front of the ADC, with a power-law curve
/// `ppm = a * (Rs / R0)^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mq135Model {
    pub load_resistance_ohms: f64,
    pub r0_ohms: f64,
    pub curve_a: f64,
    pub curve_b: f64,
    pub supply_volts: f64,
    pub adc_bits: u32,
}

impl Default for Mq135Model {
    /// Common CO2 curve exponent, with `a` scaled so that clean air at
    /// Rs/R0 = 3.6 reads 400 ppm.
    fn default() -> Self {
        Mq135Model {
            load_resistance_ohms: 10_000.0,
            r0_ohms: 10_000.0,
            curve_a: 13_882.925_943_675_9,
            curve_b: -2.769_034_857,
            supply_volts: 5.0,
            adc_bits: 10,
        }
    }
}

impl Mq135Model {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.curve_a > 0.0) {
            return Err(ModelError("curve constant a must be positive"));
        }
        if !(self.curve_b < 0.0) {
            return Err(ModelError("curve exponent b must be negative"));
        }
        if !(self.r0_ohms > 0.0) || !(self.load_resistance_ohms > 0.0) {
            return Err(ModelError("resistances must be positive"));
        }
        if !(self.supply_volts > 0.0) {
            return Err(ModelError("supply voltage must be positive"));
        }
        if !(1..=16).contains(&self.adc_bits) {
            return Err(ModelError("adc_bits must be in 1..=16"));
        }
        Ok(())
    }

    fn levels(&self) -> f64 {
        (1u32 << self.adc_bits) as f64
    }

    /// Highest count the converter can output; readings there are saturated.
    pub fn full_scale(&self) -> u32 {
        (1u32 << self.adc_bits) - 1
    }

    /// Continuous inverse of the divider and curve: counts (possibly
    /// fractional) to ppm.
    pub fn ppm_at_counts(&self, counts: f64) -> f64 {
        let v_out = counts * self.supply_volts / self.levels();
        let rs = self.load_resistance_ohms * (self.supply_volts / v_out - 1.0);
        self.curve_a * (rs / self.r0_ohms).powf(self.curve_b)
    }

    /// Exact (unquantized) count for a concentration.
    pub fn counts_at_ppm(&self, ppm: f64) -> f64 {
        let rs = self.r0_ohms * (ppm / self.curve_a).powf(1.0 / self.curve_b);
        self.levels() * self.load_resistance_ohms / (self.load_resistance_ohms + rs)
    }

    pub fn ppm_to_adc(&self, ppm: f64) -> Result<u32, SensorFault> {
        if !(ppm > 0.0) {
            return Err(SensorFault::NonPositive);
        }
        let counts = self.counts_at_ppm(ppm).round();
        let counts = counts.clamp(0.0, self.full_scale() as f64) as u32;
        if counts == 0 || counts >= self.full_scale() {
            return Err(SensorFault::AdcRail(counts));
        }
        Ok(counts)
    }

    pub fn adc_to_ppm(&self, counts: u32) -> Result<f64, SensorFault> {
        if counts == 0 || counts >= self.full_scale() {
            return Err(SensorFault::AdcRail(counts));
        }
        Ok(self.ppm_at_counts(counts as f64))
    }

    /// Largest error a round trip through the ADC can introduce at `ppm`:
    /// the curve's excursion over half a count either side.
    pub fn quantization_bound(&self, ppm: f64) -> f64 {
        let exact = self.counts_at_ppm(ppm);
        let up = self.ppm_at_counts(exact + 0.5) - ppm;
        let down = ppm - self.ppm_at_counts((exact - 0.5).max(f64::MIN_POSITIVE));
        up.abs().max(down.abs())
    }
}

/// DHT11 reports whole percent only.
pub fn dht11_humidity(true_pct: f64, quantize: bool) -> Option<Centi> {
    let clamped = true_pct.clamp(0.0, 100.0);
    if quantize {
        Centi::from_f64(clamped.round())
    } else {
        Centi::from_f64(clamped)
    }
}

/// MLX90614 object/ambient readings in steps of 0.02 °C.
pub fn mlx90614_temperature(true_c: f64, quantize: bool) -> Option<Centi> {
    let clamped = true_c.clamp(-40.0, 125.0);
    if quantize {
        Centi::from_f64((clamped / 0.02).round() * 0.02)
    } else {
        Centi::from_f64(clamped)
    }
}
