//! Closed-form delay expressions for the preamp ramp, the shutdown chain and
//! the latch.
//!
//! The inverter-style delays use the usual `1.6 C / (beta Vdd)` propagation
//! estimate; the preamp ramp assumes a constant charging current
//! `(beta/2)(Vdd - Vg - Vthp)^2` into the output node until it reaches the
//! NMOS threshold.

use serde::{Deserialize, Serialize};

use super::{EngineError, NodeCaps};

/// Propagation-delay prefactor for a single-device dynamic inverter.
pub const INVERTER_DELAY_FACTOR: f64 = 1.6;

/// Nominal quantities entering the delay expressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub vdd: f64,
    /// Threshold of the latch input devices and DDVB NMOS, V.
    pub vthn: f64,
    /// Threshold magnitude of the PMOS input pair, V.
    pub vthp: f64,
    /// Input device gain factor (Mp4/Mp5), A/V^2.
    pub beta_input: f64,
    /// First DDVB inverter device (Mni2/Mni3), A/V^2.
    pub beta_inv_n: f64,
    /// Second DDVB inverter device (Mpi1/Mpi4), A/V^2.
    pub beta_inv_p: f64,
    /// Latch input device (Mn3/Mn4), A/V^2.
    pub beta_latch: f64,
    pub caps: NodeCaps,
    /// Tail-switch turn-off multiplier (>= 1).
    pub alpha: f64,
}

impl DelayModel {
    /// Time for the leading preamp output to reach `vthn`, given the gate
    /// voltage of the leading input device.
    pub fn t1(&self, v_gate: f64) -> Result<f64, EngineError> {
        let overdrive = self.vdd - v_gate - self.vthp;
        let denom = self.beta_input * overdrive * overdrive;
        if !(overdrive > 0.0) || !(denom > 0.0) {
            return Err(EngineError::DegenerateOverdrive { overdrive });
        }
        Ok(2.0 * self.vthn * self.caps.c_out / denom)
    }

    /// High-to-low delay of the first DDVB inverter.
    pub fn t_inv_n(&self) -> f64 {
        INVERTER_DELAY_FACTOR * self.caps.c_pi / (self.beta_inv_n * self.vdd)
    }

    /// Unscaled low-to-high delay of the second DDVB inverter.
    pub fn t_plh(&self) -> f64 {
        INVERTER_DELAY_FACTOR * self.caps.c_p3 / (self.beta_inv_p * self.vdd)
    }

    /// Time for the tail switch to turn fully off after the second inverter
    /// starts switching.
    pub fn t_inv_p(&self) -> f64 {
        self.alpha * self.t_plh()
    }

    /// Delay from the start of comparison to tail cutoff.
    pub fn t_esd(&self, v_gate: f64) -> Result<f64, EngineError> {
        Ok(self.t1(v_gate)? + self.t_inv_n() + self.t_inv_p())
    }

    pub fn t_latch(&self) -> f64 {
        INVERTER_DELAY_FACTOR * self.caps.c_latch / (self.beta_latch * self.vdd)
    }

    /// Decision-making time, taking the latch-turn-on time equal to `t1`.
    pub fn t_dm(&self, v_gate: f64) -> Result<f64, EngineError> {
        Ok(self.t1(v_gate)? + self.t_latch())
    }

    /// Gate voltage of the leading input device for a given operating point:
    /// the lower of the two inputs, since the pair is PMOS.
    pub fn leading_gate(vcm: f64, vid: f64) -> f64 {
        vcm - vid.abs() / 2.0
    }
}
