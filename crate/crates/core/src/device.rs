//! Square-law MOSFET parameters with body effect, process corners,
//! first-order temperature scaling and Pelgrom mismatch sampling.
//!
//! Thresholds use the magnitude convention for both polarities, so a PMOS
//! device with `vth0 = 0.45` conducts once its source-gate voltage exceeds
//! 0.45 V. Body bias `vsb` is the reverse bias of the source-bulk junction
//! (bulk above source for PMOS, below source for NMOS); negative values are
//! forward bias.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum drawn width, m.
pub const W_MIN: f64 = 0.22e-6;
/// Minimum drawn length, m.
pub const L_MIN: f64 = 0.18e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("invalid device parameter {name} = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("invalid geometry for {name}: {reason}")]
    InvalidGeometry { name: String, reason: String },
    #[error("body bias outside model validity: phi2f + vsb = {0} V must be positive")]
    BodyBias(f64),
    #[error("unknown process corner '{0}'")]
    UnknownCorner(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Nmos,
    Pmos,
}

/// Square-law parameters for one device polarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub polarity: Polarity,
    /// Transconductance factor mu*Cox, A/V^2.
    pub mu_cox: f64,
    /// Zero-bias threshold magnitude, V.
    pub vth0: f64,
    /// Body-effect coefficient, V^0.5.
    pub gamma: f64,
    /// Surface potential 2*phi_F, V.
    pub phi2f: f64,
    /// Gate capacitance per unit area, F/m^2.
    pub cox_area: f64,
}

impl DeviceParams {
    pub fn new(
        polarity: Polarity,
        mu_cox: f64,
        vth0: f64,
        gamma: f64,
        phi2f: f64,
        cox_area: f64,
    ) -> Result<Self, DeviceError> {
        let p = Self {
            polarity,
            mu_cox,
            vth0,
            gamma,
            phi2f,
            cox_area,
        };
        p.validate()?;
        Ok(p)
    }

    /// Generic 0.18 um NMOS.
    pub fn nmos_default() -> Self {
        Self {
            polarity: Polarity::Nmos,
            mu_cox: 300e-6,
            vth0: 0.45,
            gamma: 0.4,
            phi2f: 0.7,
            cox_area: 8.5e-3,
        }
    }

    /// Generic 0.18 um PMOS; mobility is half the NMOS value.
    pub fn pmos_default() -> Self {
        Self {
            polarity: Polarity::Pmos,
            mu_cox: 150e-6,
            ..Self::nmos_default()
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let check = |name, value: f64, ok: bool, reason| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(DeviceError::InvalidParam {
                    name,
                    value,
                    reason,
                })
            }
        };
        check("mu_cox", self.mu_cox, self.mu_cox > 0.0, "must be > 0")?;
        check("vth0", self.vth0, self.vth0 > 0.0, "must be > 0")?;
        check("gamma", self.gamma, self.gamma >= 0.0, "must be >= 0")?;
        check("phi2f", self.phi2f, self.phi2f > 0.0, "must be > 0")?;
        check("cox_area", self.cox_area, self.cox_area > 0.0, "must be > 0")
    }
}

/// NMOS and PMOS parameter pair for one process/temperature condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Technology {
    pub nmos: DeviceParams,
    pub pmos: DeviceParams,
}

impl Default for Technology {
    fn default() -> Self {
        Self {
            nmos: DeviceParams::nmos_default(),
            pmos: DeviceParams::pmos_default(),
        }
    }
}

impl Technology {
    pub fn params(&self, polarity: Polarity) -> &DeviceParams {
        match polarity {
            Polarity::Nmos => &self.nmos,
            Polarity::Pmos => &self.pmos,
        }
    }

    pub fn apply_corner(&self, corner: &CornerSpec) -> Self {
        Self {
            nmos: apply_corner(&self.nmos, corner),
            pmos: apply_corner(&self.pmos, corner),
        }
    }

    pub fn apply_temperature(
        &self,
        model: &TemperatureModel,
        t_kelvin: f64,
    ) -> Result<Self, DeviceError> {
        Ok(Self {
            nmos: model.apply(&self.nmos, t_kelvin)?,
            pmos: model.apply(&self.pmos, t_kelvin)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransistorGeom {
    /// Schematic label, e.g. `Mp4` or `Mni2`.
    pub name: String,
    /// Width, m.
    pub w: f64,
    /// Length, m.
    pub l: f64,
    pub polarity: Polarity,
}

impl TransistorGeom {
    pub fn new(name: &str, w: f64, l: f64, polarity: Polarity) -> Result<Self, DeviceError> {
        let g = Self {
            name: name.to_string(),
            w,
            l,
            polarity,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        // Relative slack so that widths computed as multiples of W_MIN pass.
        let below = |v: f64, min: f64| !(v.is_finite() && v >= min * (1.0 - 1e-12));
        if below(self.w, W_MIN) {
            return Err(DeviceError::InvalidGeometry {
                name: self.name.clone(),
                reason: format!("width {} m below minimum {} m", self.w, W_MIN),
            });
        }
        if below(self.l, L_MIN) {
            return Err(DeviceError::InvalidGeometry {
                name: self.name.clone(),
                reason: format!("length {} m below minimum {} m", self.l, L_MIN),
            });
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.l
    }
}

/// Square-law gain factor mu*Cox*W/L, A/V^2.
pub fn beta(geom: &TransistorGeom, params: &DeviceParams) -> f64 {
    params.mu_cox * geom.w / geom.l
}

/// Threshold magnitude including body effect and an additive mismatch term.
pub fn threshold(params: &DeviceParams, vsb: f64, delta_vth: f64) -> Result<f64, DeviceError> {
    let surface = params.phi2f + vsb;
    if !(surface > 0.0) {
        return Err(DeviceError::BodyBias(surface));
    }
    Ok(params.vth0 + params.gamma * (surface.sqrt() - params.phi2f.sqrt()) + delta_vth)
}

/// d(threshold)/d(vsb) at the given body bias.
pub fn threshold_slope(params: &DeviceParams, vsb: f64) -> Result<f64, DeviceError> {
    let surface = params.phi2f + vsb;
    if !(surface > 0.0) {
        return Err(DeviceError::BodyBias(surface));
    }
    Ok(params.gamma / (2.0 * surface.sqrt()))
}

/// Intrinsic gate capacitance Cox*W*L, F.
pub fn gate_cap(geom: &TransistorGeom, params: &DeviceParams) -> f64 {
    params.cox_area * geom.w * geom.l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Corner {
    TT,
    FF,
    SS,
    FS,
    SF,
}

impl Corner {
    pub const ALL: [Corner; 5] = [Corner::TT, Corner::FF, Corner::SS, Corner::FS, Corner::SF];

    /// Default corner table: +/-10 % mobility and -/+30 mV threshold per
    /// polarity. The first letter is NMOS, the second PMOS.
    pub fn spec(self) -> CornerSpec {
        const FAST: (f64, f64) = (1.1, -0.030);
        const SLOW: (f64, f64) = (0.9, 0.030);
        const TYP: (f64, f64) = (1.0, 0.0);
        let (n, p) = match self {
            Corner::TT => (TYP, TYP),
            Corner::FF => (FAST, FAST),
            Corner::SS => (SLOW, SLOW),
            Corner::FS => (FAST, SLOW),
            Corner::SF => (SLOW, FAST),
        };
        CornerSpec {
            name: self,
            mu_factor_n: n.0,
            vth_shift_n: n.1,
            mu_factor_p: p.0,
            vth_shift_p: p.1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Corner::TT => "TT",
            Corner::FF => "FF",
            Corner::SS => "SS",
            Corner::FS => "FS",
            Corner::SF => "SF",
        }
    }
}

impl fmt::Display for Corner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Corner {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TT" => Ok(Corner::TT),
            "FF" => Ok(Corner::FF),
            "SS" => Ok(Corner::SS),
            "FS" => Ok(Corner::FS),
            "SF" => Ok(Corner::SF),
            _ => Err(DeviceError::UnknownCorner(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerSpec {
    pub name: Corner,
    pub mu_factor_n: f64,
    pub mu_factor_p: f64,
    /// Threshold shift, V (negative is faster).
    pub vth_shift_n: f64,
    pub vth_shift_p: f64,
}

pub fn apply_corner(params: &DeviceParams, corner: &CornerSpec) -> DeviceParams {
    let (mu, shift) = match params.polarity {
        Polarity::Nmos => (corner.mu_factor_n, corner.vth_shift_n),
        Polarity::Pmos => (corner.mu_factor_p, corner.vth_shift_p),
    };
    DeviceParams {
        mu_cox: params.mu_cox * mu,
        vth0: params.vth0 + shift,
        ..*params
    }
}

/// First-order temperature dependence: mu ~ (T/T_ref)^exponent and a linear
/// threshold drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    /// Reference temperature, K.
    pub t_ref: f64,
    /// Mobility exponent.
    pub mu_exponent: f64,
    /// Threshold decrease per kelvin, V/K.
    pub k_vt: f64,
}

impl Default for TemperatureModel {
    fn default() -> Self {
        Self {
            t_ref: 300.0,
            mu_exponent: -1.5,
            k_vt: 2e-3,
        }
    }
}

impl TemperatureModel {
    pub fn apply(&self, params: &DeviceParams, t_kelvin: f64) -> Result<DeviceParams, DeviceError> {
        if !(t_kelvin > 0.0) {
            return Err(DeviceError::InvalidParam {
                name: "temperature",
                value: t_kelvin,
                reason: "must be > 0 K",
            });
        }
        let out = DeviceParams {
            mu_cox: params.mu_cox * (t_kelvin / self.t_ref).powf(self.mu_exponent),
            vth0: params.vth0 - self.k_vt * (t_kelvin - self.t_ref),
            ..*params
        };
        out.validate()?;
        Ok(out)
    }
}

/// Per-device deviations for one Monte Carlo trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceMismatch {
    /// Additive threshold deviation, V.
    pub delta_vth: f64,
    /// Relative gain-factor deviation.
    pub delta_beta_rel: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MismatchSample {
    pub devices: BTreeMap<String, DeviceMismatch>,
}

impl MismatchSample {
    /// The nominal sample: every deviation is zero.
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> DeviceMismatch {
        self.devices.get(name).copied().unwrap_or_default()
    }

    pub fn with_vth(mut self, name: &str, delta_vth: f64) -> Self {
        self.devices.entry(name.to_string()).or_default().delta_vth = delta_vth;
        self
    }

    pub fn with_beta(mut self, name: &str, delta_beta_rel: f64) -> Self {
        self.devices.entry(name.to_string()).or_default().delta_beta_rel = delta_beta_rel;
        self
    }

    /// Swaps the deviations of two devices (used to mirror a sample).
    pub fn swapped(&self, a: &str, b: &str) -> Self {
        let mut out = self.clone();
        let da = self.get(a);
        let db = self.get(b);
        out.devices.insert(a.to_string(), db);
        out.devices.insert(b.to_string(), da);
        out
    }
}

/// Pelgrom area-scaling coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PelgromModel {
    /// Threshold coefficient A_VT, V*m.
    pub avt: f64,
    /// Relative gain coefficient A_beta, m.
    pub abeta: f64,
}

impl Default for PelgromModel {
    fn default() -> Self {
        Self {
            avt: 5e-3 * 1e-6,
            abeta: 0.01 * 1e-6,
        }
    }
}

impl PelgromModel {
    pub fn sigma_vth(&self, geom: &TransistorGeom) -> f64 {
        self.avt / geom.area().sqrt()
    }

    pub fn sigma_beta_rel(&self, geom: &TransistorGeom) -> f64 {
        self.abeta / geom.area().sqrt()
    }
}

/// Draws one mismatch sample. The stream is keyed on `(seed, trial)` and
/// devices are drawn in the order given, so the result is a pure function of
/// its arguments.
pub fn sample_mismatch(
    seed: u64,
    trial: u64,
    geoms: &[TransistorGeom],
    model: &PelgromModel,
) -> MismatchSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let mut devices = BTreeMap::new();
    for g in geoms {
        let zv: f64 = StandardNormal.sample(&mut rng);
        let zb: f64 = StandardNormal.sample(&mut rng);
        let scale = |sigma: f64, z: f64| if sigma == 0.0 { 0.0 } else { sigma * z };
        devices.insert(
            g.name.clone(),
            DeviceMismatch {
                delta_vth: scale(model.sigma_vth(g), zv),
                delta_beta_rel: scale(model.sigma_beta_rel(g), zb),
            },
        );
    }
    MismatchSample { devices }
}
