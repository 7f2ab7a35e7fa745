//! Flat `section.key = value` run configuration.
//!
//! The text format is line based:
//!
//! ```text
//! # comment
//! [engine]
//! vdd = 1.8
//! [op]
//! vcm = vdd/2
//! ```
//!
//! Keys under a `[section]` header are prefixed with the section name. A bare
//! key before any header may be fully qualified (`engine.vdd`) or a unique
//! final segment (`vdd`). Values are kept as written so that the resolved
//! configuration echoed into output metadata replays byte-for-byte.

use std::collections::BTreeMap;

use crate::calibration::{CalibrationConfig, DacDecode, MonteCarloConfig, OffsetSearch};
use crate::device::{Corner, PelgromModel, TemperatureModel};
use crate::engine::{ComparatorConfig, Decision, ExtraLoad, OperatingPoint};
use crate::geometry::{Geometry, DEVICE_NAMES};
use crate::sizing::SweepTarget;

use super::HarnessError;

/// Zero of the Celsius scale, K.
pub const KELVIN_OFFSET: f64 = 273.15;

fn tidy(x: f64) -> String {
    let r: f64 = format!("{x:.12e}").parse().expect("formatted float");
    format!("{r:e}")
}

/// Every recognised key with its default value, in echo order.
fn registry() -> Vec<(String, String)> {
    let mut keys: Vec<(String, String)> = [
        ("engine.vdd", "1.8"),
        ("engine.freq", "333e6"),
        ("engine.alpha", "1.5"),
        ("engine.early_shutdown", "true"),
        ("engine.tail_derating", "0.05"),
        ("engine.tie_break", "+1"),
        ("engine.extra_load_out", "0"),
        ("engine.extra_load_pi", "0"),
        ("engine.extra_load_p3", "0"),
        ("engine.extra_load_latch", "0"),
        ("op.vid", "0.05"),
        ("op.vcm", "vdd/2"),
        ("op.corner", "TT"),
        ("op.temp_c", "27"),
        ("device.nmos.mu_cox", "300e-6"),
        ("device.nmos.vth0", "0.45"),
        ("device.nmos.gamma", "0.4"),
        ("device.nmos.phi2f", "0.7"),
        ("device.pmos.mu_cox", "150e-6"),
        ("device.pmos.vth0", "0.45"),
        ("device.pmos.gamma", "0.4"),
        ("device.pmos.phi2f", "0.7"),
        ("device.cox_area", "8.5e-3"),
        ("device.temp_mu_exponent", "-1.5"),
        ("device.temp_k_vt", "2e-3"),
        ("device.pelgrom_avt", "5e-9"),
        ("device.pelgrom_abeta", "1e-8"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();

    for d in Geometry::reference().devices() {
        keys.push((format!("geometry.{}.w", d.name), tidy(d.w)));
        keys.push((format!("geometry.{}.l", d.name), tidy(d.l)));
    }

    keys.extend(
        [
            ("calibration.n_cycles", "6"),
            ("calibration.phases", "1"),
            ("calibration.cb", "1e-12"),
            ("calibration.c0", "100e-15"),
            ("calibration.dac_caps", "30e-15,60e-15,120e-15"),
            ("calibration.dac_decode", "binary"),
            ("calibration.cp_beta", "100e-6"),
            ("calibration.cp_vthn", "0.45"),
            ("calibration.t_period", "3e-9"),
            ("calibration.v_ref_input", "vdd/2"),
            ("calibration.inject_mp4_vth", "0.01"),
            ("calibration.trial", "none"),
            ("mc.trials", "500"),
            ("mc.seed", "1"),
            ("mc.bins", "20"),
            ("mc.calibrate", "false"),
            ("mc.tol", "10e-6"),
            ("mc.span", "0.1"),
            ("sweep.variable", "vid"),
            ("sweep.start", "auto"),
            ("sweep.stop", "auto"),
            ("sweep.points", "auto"),
            ("sweep.scale", "auto"),
            ("sweep.width_target", "preamp"),
            ("sweep.both_modes", "true"),
            ("size.x_max", "4"),
            ("size.y_max", "4"),
            ("size.grid_step", "0.01"),
            ("report.freq", "500e6"),
            ("report.vid", "1e-3"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string())),
    );
    keys
}

/// Resolved key/value configuration plus any parse warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    order: Vec<String>,
    pub warnings: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let reg = registry();
        Self {
            order: reg.iter().map(|(k, _)| k.clone()).collect(),
            values: reg.into_iter().collect(),
            warnings: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Resolved `(key, value)` pairs in canonical order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.order
            .iter()
            .map(|k| (k.as_str(), self.values[k].as_str()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn canonical_key(&self, raw: &str) -> Option<String> {
        if self.values.contains_key(raw) {
            return Some(raw.to_string());
        }
        if raw.contains('.') {
            return None;
        }
        let suffix = format!(".{raw}");
        let mut hits = self.order.iter().filter(|k| k.ends_with(&suffix));
        match (hits.next(), hits.next()) {
            (Some(k), None) => Some(k.clone()),
            _ => None,
        }
    }

    /// Sets one value, rejecting unknown keys. Does not validate the value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let k = self
            .canonical_key(key.trim())
            .ok_or_else(|| HarnessError::UnknownKey {
                key: key.trim().to_string(),
                line: None,
            })?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), HarnessError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| HarnessError::Parse {
            line: None,
            msg: format!("override '{pair}' is not key=value"),
        })?;
        self.set(k, v)?;
        self.resolve()?;
        Ok(())
    }

    /// Typed view of every section, validating each value.
    pub fn resolve(&self) -> Result<Resolved, HarnessError> {
        Resolved::from_config(self)
    }
}

/// Parses configuration text on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::default();
    let mut section: Option<String> = None;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| HarnessError::Parse {
                line: Some(lineno),
                msg: format!("unterminated section header '{line}'"),
            })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(HarnessError::Parse {
                    line: Some(lineno),
                    msg: "empty section name".to_string(),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::Parse {
            line: Some(lineno),
            msg: format!("expected key = value, got '{line}'"),
        })?;
        let key = match &section {
            Some(s) => format!("{s}.{}", k.trim()),
            None => k.trim().to_string(),
        };
        let canonical = cfg.canonical_key(&key).ok_or(HarnessError::UnknownKey {
            key: key.clone(),
            line: Some(lineno),
        })?;
        if let Some(prev) = seen.insert(canonical.clone(), lineno) {
            cfg.warnings.push(format!(
                "duplicate key {canonical} at line {lineno} overrides line {prev}"
            ));
        }
        cfg.values.insert(canonical, v.trim().to_string());
    }
    cfg.resolve()?;
    Ok(cfg)
}

/// How the sweep grid is spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    Vid,
    Vcm,
    Vdd,
    Temp,
    Corner,
    Width(SweepTarget),
}

impl SweepVariable {
    pub fn column(self) -> &'static str {
        match self {
            SweepVariable::Vid => "vid_V",
            SweepVariable::Vcm => "vcm_V",
            SweepVariable::Vdd => "vdd_V",
            SweepVariable::Temp => "temp_C",
            SweepVariable::Corner => "corner",
            SweepVariable::Width(_) => "width_m",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Vid => "vid",
            SweepVariable::Vcm => "vcm",
            SweepVariable::Vdd => "vdd",
            SweepVariable::Temp => "temp",
            SweepVariable::Corner => "corner",
            SweepVariable::Width(_) => "width",
        }
    }

    /// Default grid as (start, stop, points, scale).
    fn default_grid(self) -> (f64, f64, usize, Scale) {
        match self {
            SweepVariable::Vid => (1e-3, 50e-3, 20, Scale::Log),
            SweepVariable::Vcm => (0.1, 1.1, 21, Scale::Linear),
            SweepVariable::Vdd => (1.4, 2.0, 13, Scale::Linear),
            SweepVariable::Temp => (-20.0, 100.0, 13, Scale::Linear),
            SweepVariable::Corner => (0.0, 0.0, Corner::ALL.len(), Scale::Linear),
            SweepVariable::Width(SweepTarget::Preamp) => (0.6e-6, 3.6e-6, 11, Scale::Linear),
            SweepVariable::Width(_) => (0.22e-6, 1.1e-6, 9, Scale::Linear),
        }
    }
}

/// One point of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridValue {
    Number(f64),
    Corner(Corner),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub scale: Scale,
    pub both_modes: bool,
}

impl SweepSpec {
    pub fn default_for(variable: SweepVariable) -> Self {
        let (start, stop, points, scale) = variable.default_grid();
        Self {
            variable,
            start,
            stop,
            points,
            scale,
            both_modes: true,
        }
    }

    pub fn grid(&self) -> Vec<GridValue> {
        if self.variable == SweepVariable::Corner {
            return Corner::ALL.iter().map(|c| GridValue::Corner(*c)).collect();
        }
        let n = self.points;
        (0..n)
            .map(|i| {
                let f = i as f64 / (n - 1) as f64;
                let v = if i == 0 {
                    self.start
                } else if i == n - 1 {
                    self.stop
                } else {
                    match self.scale {
                        Scale::Linear => self.start + f * (self.stop - self.start),
                        Scale::Log => self.start * (self.stop / self.start).powf(f),
                    }
                };
                GridValue::Number(v)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeSpec {
    pub x_max: f64,
    pub y_max: f64,
    pub grid_step: f64,
}

/// Typed configuration for every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub comparator: ComparatorConfig,
    pub op: OperatingPoint,
    /// `op.vcm` follows the supply as `vdd/2`.
    pub vcm_tracks_vdd: bool,
    pub calibration: CalibrationConfig,
    pub inject_mp4_vth: f64,
    pub calibration_trial: Option<u64>,
    pub mc: MonteCarloConfig,
    pub mc_calibrate: bool,
    pub sweep: SweepSpec,
    pub size: SizeSpec,
    pub report_freq: f64,
    pub report_vid: f64,
}

struct Reader<'a>(&'a RunConfig);

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        self.0.get(key).expect("registered key")
    }

    fn range(key: &str, msg: impl Into<String>) -> HarnessError {
        HarnessError::Range {
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    fn f64(&self, key: &str) -> Result<f64, HarnessError> {
        let s = self.raw(key);
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Self::range(key, format!("'{s}' is not a finite number")))
    }

    fn f64_where(
        &self,
        key: &str,
        ok: impl Fn(f64) -> bool,
        what: &str,
    ) -> Result<f64, HarnessError> {
        let v = self.f64(key)?;
        if ok(v) {
            Ok(v)
        } else {
            Err(Self::range(key, format!("{v} violates {what}")))
        }
    }

    fn positive(&self, key: &str) -> Result<f64, HarnessError> {
        self.f64_where(key, |v| v > 0.0, "> 0")
    }

    fn nonneg(&self, key: &str) -> Result<f64, HarnessError> {
        self.f64_where(key, |v| v >= 0.0, ">= 0")
    }

    fn usize(&self, key: &str) -> Result<usize, HarnessError> {
        let s = self.raw(key);
        s.parse()
            .map_err(|_| Self::range(key, format!("'{s}' is not a non-negative integer")))
    }

    fn u64(&self, key: &str) -> Result<u64, HarnessError> {
        let s = self.raw(key);
        s.parse()
            .map_err(|_| Self::range(key, format!("'{s}' is not a non-negative integer")))
    }

    fn bool(&self, key: &str) -> Result<bool, HarnessError> {
        match self.raw(key) {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            s => Err(Self::range(key, format!("'{s}' is not a boolean"))),
        }
    }

    /// A voltage that may be written as `vdd/2`. Returns (value, tracks vdd).
    fn half_vdd_or(&self, key: &str, vdd: f64) -> Result<(f64, bool), HarnessError> {
        if self.raw(key) == "vdd/2" {
            Ok((vdd / 2.0, true))
        } else {
            Ok((self.f64(key)?, false))
        }
    }

    fn auto<T>(
        &self,
        key: &str,
        default: T,
        parse: impl Fn(&Self, &str) -> Result<T, HarnessError>,
    ) -> Result<T, HarnessError> {
        if self.raw(key) == "auto" {
            Ok(default)
        } else {
            parse(self, key)
        }
    }
}

impl Resolved {
    fn from_config(cfg: &RunConfig) -> Result<Self, HarnessError> {
        let r = Reader(cfg);
        let range = Reader::range;

        // devices
        let mut technology = crate::device::Technology::default();
        for (pol, p) in [("nmos", &mut technology.nmos), ("pmos", &mut technology.pmos)] {
            p.mu_cox = r.positive(&format!("device.{pol}.mu_cox"))?;
            p.vth0 = r.f64(&format!("device.{pol}.vth0"))?;
            p.gamma = r.nonneg(&format!("device.{pol}.gamma"))?;
            p.phi2f = r.positive(&format!("device.{pol}.phi2f"))?;
            p.cox_area = r.positive("device.cox_area")?;
        }
        let temperature_model = TemperatureModel {
            mu_exponent: r.f64("device.temp_mu_exponent")?,
            k_vt: r.f64("device.temp_k_vt")?,
            ..Default::default()
        };
        let pelgrom = PelgromModel {
            avt: r.nonneg("device.pelgrom_avt")?,
            abeta: r.nonneg("device.pelgrom_abeta")?,
        };

        let mut geometry = Geometry::reference();
        for name in DEVICE_NAMES {
            let wk = format!("geometry.{name}.w");
            let lk = format!("geometry.{name}.l");
            let w = r.positive(&wk)?;
            let l = r.positive(&lk)?;
            geometry
                .set_size(name, Some(w), Some(l))
                .map_err(|e| range(&wk, e.to_string()))?;
        }

        // engine
        let vdd = r.positive("engine.vdd")?;
        let freq = r.positive("engine.freq")?;
        let alpha = r.f64_where("engine.alpha", |a| a >= 1.0, ">= 1")?;
        let tail_derating =
            r.f64_where("engine.tail_derating", |d| (0.0..1.0).contains(&d), "0 <= d < 1")?;
        let tie_break = match r.raw("engine.tie_break") {
            "+1" | "1" | "high" => Decision::High,
            "-1" | "low" => Decision::Low,
            s => return Err(range("engine.tie_break", format!("'{s}' is not +1 or -1"))),
        };
        let comparator = ComparatorConfig {
            geometry,
            technology,
            temperature_model,
            vdd,
            freq,
            alpha,
            extra_load: ExtraLoad {
                out: r.nonneg("engine.extra_load_out")?,
                pi: r.nonneg("engine.extra_load_pi")?,
                p3: r.nonneg("engine.extra_load_p3")?,
                latch: r.nonneg("engine.extra_load_latch")?,
            },
            early_shutdown: r.bool("engine.early_shutdown")?,
            tail_derating,
            tie_break,
        };
        comparator
            .validate()
            .map_err(|e| range("engine", e.to_string()))?;

        // operating point
        let vid = r.f64_where("op.vid", |v| v.abs() < vdd, "|vid| < vdd")?;
        let (vcm, vcm_tracks_vdd) = r.half_vdd_or("op.vcm", vdd)?;
        if !(0.0..=vdd).contains(&vcm) {
            return Err(range("op.vcm", format!("{vcm} violates 0 <= vcm <= vdd")));
        }
        let corner: Corner = r
            .raw("op.corner")
            .parse()
            .map_err(|e: crate::device::DeviceError| range("op.corner", e.to_string()))?;
        let temp_c = r.f64_where("op.temp_c", |t| t > -KELVIN_OFFSET, "T > 0 K")?;
        let op = OperatingPoint {
            vid,
            vcm,
            corner,
            t_kelvin: temp_c + KELVIN_OFFSET,
            vdd_override: None,
        };

        // calibration
        let dac_caps = r
            .raw("calibration.dac_caps")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|c| *c > 0.0 && c.is_finite())
                    .ok_or_else(|| range("calibration.dac_caps", format!("'{s}' is not a positive capacitance")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let dac_decode: DacDecode = r
            .raw("calibration.dac_decode")
            .parse()
            .map_err(|e: crate::calibration::CalibrationError| range("calibration.dac_decode", e.to_string()))?;
        let (v_ref, v_ref_tracks) = r.half_vdd_or("calibration.v_ref_input", vdd)?;
        if !(0.0..=vdd).contains(&v_ref) {
            return Err(range("calibration.v_ref_input", format!("{v_ref} outside [0, vdd]")));
        }
        let calibration = CalibrationConfig {
            n_cycles: r.usize("calibration.n_cycles")?,
            phases: r.usize("calibration.phases")?,
            cb: r.positive("calibration.cb")?,
            c0: r.positive("calibration.c0")?,
            dac_caps,
            dac_decode,
            cp_beta: r.nonneg("calibration.cp_beta")?,
            cp_vthn: r.f64("calibration.cp_vthn")?,
            t_period: r.positive("calibration.t_period")?,
            v_ref_input: if v_ref_tracks { None } else { Some(v_ref) },
        };
        calibration
            .validate()
            .map_err(|e| range("calibration", e.to_string()))?;
        let inject_mp4_vth = r.f64("calibration.inject_mp4_vth")?;
        let calibration_trial = match r.raw("calibration.trial") {
            "none" => None,
            _ => Some(r.u64("calibration.trial")?),
        };

        // monte carlo
        let trials = r.usize("mc.trials")?;
        if trials == 0 {
            return Err(range("mc.trials", "0 violates trials >= 1".to_string()));
        }
        let bins = r.usize("mc.bins")?;
        if bins == 0 {
            return Err(range("mc.bins", "0 violates bins >= 1".to_string()));
        }
        let mc = MonteCarloConfig {
            trials,
            seed: r.u64("mc.seed")?,
            pelgrom,
            search: OffsetSearch {
                tol: r.positive("mc.tol")?,
                span: r.positive("mc.span")?,
            },
            bins,
        };

        // sweep
        let variable = match r.raw("sweep.variable") {
            "vid" => SweepVariable::Vid,
            "vcm" => SweepVariable::Vcm,
            "vdd" => SweepVariable::Vdd,
            "temp" => SweepVariable::Temp,
            "corner" => SweepVariable::Corner,
            "width" => SweepVariable::Width(
                r.raw("sweep.width_target")
                    .parse()
                    .map_err(|e: crate::engine::EngineError| range("sweep.width_target", e.to_string()))?,
            ),
            s => {
                return Err(range(
                    "sweep.variable",
                    format!("'{s}' is not one of vid, vcm, vdd, temp, corner, width"),
                ))
            }
        };
        let d = SweepSpec::default_for(variable);
        let sweep = SweepSpec {
            variable,
            start: r.auto("sweep.start", d.start, |r, k| r.f64(k))?,
            stop: r.auto("sweep.stop", d.stop, |r, k| r.f64(k))?,
            points: r.auto("sweep.points", d.points, |r, k| r.usize(k))?,
            scale: r.auto("sweep.scale", d.scale, |r, k| match r.raw(k) {
                "linear" => Ok(Scale::Linear),
                "log" => Ok(Scale::Log),
                s => Err(Reader::range(k, format!("'{s}' is not linear or log"))),
            })?,
            both_modes: r.bool("sweep.both_modes")?,
        };
        validate_sweep(&sweep, vdd)?;

        let size = SizeSpec {
            x_max: r.f64_where("size.x_max", |v| v >= 1.0, ">= 1")?,
            y_max: r.f64_where("size.y_max", |v| v >= 1.0, ">= 1")?,
            grid_step: r.positive("size.grid_step")?,
        };

        Ok(Self {
            comparator,
            op,
            vcm_tracks_vdd,
            calibration,
            inject_mp4_vth,
            calibration_trial,
            mc,
            mc_calibrate: r.bool("mc.calibrate")?,
            sweep,
            size,
            report_freq: r.positive("report.freq")?,
            report_vid: r.f64_where("report.vid", |v| v.abs() < vdd, "|vid| < vdd")?,
        })
    }
}

fn validate_sweep(s: &SweepSpec, vdd: f64) -> Result<(), HarnessError> {
    let err = |key: &str, msg: String| {
        Err(HarnessError::Range {
            key: key.to_string(),
            msg,
        })
    };
    if s.variable == SweepVariable::Corner {
        return Ok(());
    }
    if s.points < 2 {
        return err("sweep.points", format!("{} violates points >= 2", s.points));
    }
    if s.scale == Scale::Log && !(s.start > 0.0 && s.stop > 0.0) {
        return err("sweep.scale", "log spacing needs start, stop > 0".to_string());
    }
    let (lo, hi) = (s.start.min(s.stop), s.start.max(s.stop));
    let (key, ok, what) = match s.variable {
        SweepVariable::Vid => ("sweep.start", hi.abs() < vdd && lo.abs() < vdd, "|vid| < vdd"),
        SweepVariable::Vcm => ("sweep.start", lo >= 0.0 && hi <= vdd, "0 <= vcm <= vdd"),
        SweepVariable::Vdd => ("sweep.start", lo > 0.0, "vdd > 0"),
        SweepVariable::Temp => ("sweep.start", lo > -KELVIN_OFFSET, "T > 0 K"),
        SweepVariable::Width(_) => ("sweep.start", lo >= crate::device::W_MIN * (1.0 - 1e-9), "w >= W_min"),
        SweepVariable::Corner => unreachable!(),
    };
    if !ok {
        return err(key, format!("sweep range [{lo}, {hi}] violates {what}"));
    }
    Ok(())
}
