//! The named transistor set of the comparator.
//!
//! Signal path per side of the first stage:
//!
//! | side  | input (gate) | preamp out | latch input | DDVB n / p   | tail switch |
//! |-------|--------------|------------|-------------|--------------|-------------|
//! | minus | Mp4 (Vi-)    | Out-       | Mn3         | Mni2 / Mpi1  | Mp2         |
//! | plus  | Mp5 (Vi+)    | Out+       | Mn4         | Mni3 / Mpi4  | Mp3         |
//!
//! Mp1 is the clocked preamp tail, Mn1/Mn2 reset Out-/Out+, Mp6/Mp9 precharge
//! the latch outputs, Mp7/Mp8 and Mn5/Mn6 complete the latch, and
//! Mni1/Mni4/Mpi2/Mpi3 are the DDVB precharge devices.

use serde::{Deserialize, Serialize};

use crate::device::{DeviceError, Polarity, TransistorGeom};

/// Every label in the schematic, in sampling order.
pub const DEVICE_NAMES: [&str; 23] = [
    "Mp1", "Mp2", "Mp3", "Mp4", "Mp5", "Mp6", "Mp7", "Mp8", "Mp9", "Mpi1", "Mpi2", "Mpi3", "Mpi4",
    "Mn1", "Mn2", "Mn3", "Mn4", "Mn5", "Mn6", "Mni1", "Mni2", "Mni3", "Mni4",
];

/// Devices whose gates are driven by the clock each cycle.
pub const CLOCKED_DEVICES: [&str; 9] = [
    "Mp1", "Mn1", "Mn2", "Mp6", "Mp9", "Mni1", "Mni4", "Mpi2", "Mpi3",
];

fn polarity_of(name: &str) -> Polarity {
    if name.starts_with("Mp") {
        Polarity::Pmos
    } else {
        Polarity::Nmos
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    devices: Vec<TransistorGeom>,
}

impl Default for Geometry {
    fn default() -> Self {
        Self::reference()
    }
}

impl Geometry {
    /// The optimized dimensions (W/L in um) of the reference design.
    pub fn reference() -> Self {
        const L: f64 = 0.18e-6;
        let width = |name: &str| -> f64 {
            match name {
                "Mp1" => 2.0e-6,
                "Mp2" | "Mp3" => 0.35e-6,
                "Mp4" | "Mp5" => 1.2e-6,
                "Mp7" | "Mp8" => 2.0e-6,
                "Mp6" | "Mp9" => 0.5e-6,
                "Mn1" | "Mn2" => 0.5e-6,
                "Mn3" | "Mn4" => 1.0e-6,
                "Mn5" | "Mn6" => 2.0e-6,
                _ => 0.22e-6, // Mpi1-4, Mni1-4
            }
        };
        let devices = DEVICE_NAMES
            .iter()
            .map(|&n| TransistorGeom {
                name: n.to_string(),
                w: width(n),
                l: L,
                polarity: polarity_of(n),
            })
            .collect();
        Self { devices }
    }

    /// Builds a geometry set, requiring the labels to match [`DEVICE_NAMES`]
    /// exactly.
    pub fn from_devices(devices: Vec<TransistorGeom>) -> Result<Self, DeviceError> {
        let mut ordered = Vec::with_capacity(DEVICE_NAMES.len());
        for name in DEVICE_NAMES {
            let d = devices
                .iter()
                .find(|d| d.name == name)
                .ok_or_else(|| DeviceError::InvalidGeometry {
                    name: name.to_string(),
                    reason: "missing transistor".to_string(),
                })?;
            if d.polarity != polarity_of(name) {
                return Err(DeviceError::InvalidGeometry {
                    name: name.to_string(),
                    reason: "wrong polarity".to_string(),
                });
            }
            d.validate()?;
            ordered.push(d.clone());
        }
        if let Some(extra) = devices
            .iter()
            .find(|d| !DEVICE_NAMES.contains(&d.name.as_str()))
        {
            return Err(DeviceError::InvalidGeometry {
                name: extra.name.clone(),
                reason: "unknown transistor label".to_string(),
            });
        }
        Ok(Self { devices: ordered })
    }

    pub fn devices(&self) -> &[TransistorGeom] {
        &self.devices
    }

    pub fn get(&self, name: &str) -> Result<&TransistorGeom, DeviceError> {
        self.devices
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| DeviceError::InvalidGeometry {
                name: name.to_string(),
                reason: "missing transistor".to_string(),
            })
    }

    pub fn set_width(&mut self, name: &str, w: f64) -> Result<(), DeviceError> {
        self.set_size(name, Some(w), None)
    }

    pub fn set_size(&mut self, name: &str, w: Option<f64>, l: Option<f64>) -> Result<(), DeviceError> {
        let d = self
            .devices
            .iter_mut()
            .find(|d| d.name == name)
            .ok_or_else(|| DeviceError::InvalidGeometry {
                name: name.to_string(),
                reason: "unknown transistor label".to_string(),
            })?;
        let mut next = d.clone();
        if let Some(w) = w {
            next.w = w;
        }
        if let Some(l) = l {
            next.l = l;
        }
        next.validate()?;
        *d = next;
        Ok(())
    }

    /// Latch sizing assumption behind the normalized balance condition:
    /// W(Mn6) = W(Mp8) = 2 W(Mn3).
    pub fn latch_ratio_holds(&self) -> bool {
        let w = |n| self.get(n).map(|d| d.w).unwrap_or(f64::NAN);
        let target = 2.0 * w("Mn3");
        ((w("Mn6") - target).abs() <= 1e-9 * target) && ((w("Mp8") - target).abs() <= 1e-9 * target)
    }
}
