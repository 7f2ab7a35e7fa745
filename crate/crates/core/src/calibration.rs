//! Body-tuned offset cancellation.
//!
//! During a calibration phase both inputs sit at the same reference level.
//! Each clock cycle the comparator decides once; the output state detector
//! turns that into the sign bit `S`, and a charge pump driven by the DAC
//! output discharges one of the two body capacitors by `I T / C_b`. The DAC
//! output falls cycle by cycle, so the correction steps shrink and the loop
//! behaves like a successive approximation of the body voltage that cancels
//! the offset.
//!
//! Sign convention: the offset is the input `vid` at which the decision flips,
//! so `decision = sign(vid - offset)`. A positive offset means the `Vi-`
//! device (Mp4) is the weaker one; at `vid = 0` the comparator then reports
//! `Vo+` low and `S = 1`, which discharges `vb_plus`, the body of Mp4.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{sample_mismatch, threshold_slope, MismatchSample, PelgromModel};
use crate::engine::{BodyBias, Comparator, Decision, EngineError, OperatingPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid calibration configuration: {0}")]
    Config(String),
    #[error("offset outside the search span of +/-{span} V")]
    OutOfSpan { span: f64 },
}

/// How the cycle counter selects DAC capacitors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DacDecode {
    /// The counter code is the cycle number; bit k selects `dac_caps[k]`.
    Binary,
    /// Cycle k selects only `dac_caps[k - 1]`.
    OneHot,
}

impl std::str::FromStr for DacDecode {
    type Err = CalibrationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(DacDecode::Binary),
            "one_hot" | "onehot" => Ok(DacDecode::OneHot),
            other => Err(CalibrationError::Config(format!(
                "unknown dac decode '{other}' (expected binary or one_hot)"
            ))),
        }
    }
}

impl DacDecode {
    pub fn as_str(self) -> &'static str {
        match self {
            DacDecode::Binary => "binary",
            DacDecode::OneHot => "one_hot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Comparisons per calibration phase.
    pub n_cycles: usize,
    /// Back-to-back phases; bodies carry over, the DAC is precharged again.
    pub phases: usize,
    /// Body storage capacitance, F.
    pub cb: f64,
    /// DAC reference capacitance, F.
    pub c0: f64,
    /// Selectable DAC capacitors, F.
    pub dac_caps: Vec<f64>,
    pub dac_decode: DacDecode,
    /// Charge-pump device gain factor, A/V^2.
    pub cp_beta: f64,
    /// Charge-pump device threshold, V.
    pub cp_vthn: f64,
    /// Calibration clock period, s.
    pub t_period: f64,
    /// Common input level during calibration; `None` means `vdd/2`.
    pub v_ref_input: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_cycles: 6,
            phases: 1,
            cb: 1e-12,
            c0: 100e-15,
            dac_caps: vec![30e-15, 60e-15, 120e-15],
            dac_decode: DacDecode::Binary,
            cp_beta: 100e-6,
            cp_vthn: 0.45,
            t_period: 3e-9,
            v_ref_input: None,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: String| Err(CalibrationError::Config(m));
        if self.n_cycles == 0 {
            return bad("n_cycles must be >= 1".to_string());
        }
        if self.phases == 0 {
            return bad("phases must be >= 1".to_string());
        }
        for (name, v) in [("cb", self.cb), ("c0", self.c0), ("t_period", self.t_period)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be > 0"));
            }
        }
        if self.dac_caps.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return bad("dac_caps entries must be > 0".to_string());
        }
        if !(self.cp_beta >= 0.0 && self.cp_beta.is_finite()) {
            return bad(format!("cp_beta = {} must be >= 0", self.cp_beta));
        }
        if !self.cp_vthn.is_finite() {
            return bad("cp_vthn must be finite".to_string());
        }
        let codes = match self.dac_decode {
            DacDecode::Binary => (1usize << self.dac_caps.len().min(16)) - 1,
            DacDecode::OneHot => self.dac_caps.len(),
        };
        if self.n_cycles > codes {
            return bad(format!(
                "{} cycles need more DAC codes than the {} available",
                self.n_cycles, codes
            ));
        }
        Ok(())
    }

    /// Counter code for a cycle (1-based).
    pub fn code(&self, cycle: usize) -> usize {
        match self.dac_decode {
            DacDecode::Binary => cycle,
            DacDecode::OneHot => 1 << (cycle - 1),
        }
    }

    fn selected_cap(&self, cycle: usize) -> f64 {
        let code = self.code(cycle);
        self.dac_caps
            .iter()
            .enumerate()
            .filter(|(k, _)| code & (1 << k) != 0)
            .map(|(_, c)| c)
            .sum()
    }

    pub fn v_ref(&self, vdd: f64) -> f64 {
        self.v_ref_input.unwrap_or(vdd / 2.0)
    }
}

/// DAC output after charge sharing between `c0` and the selected capacitors.
pub fn dac_output(cycle: usize, cal: &CalibrationConfig, vdd: f64) -> f64 {
    vdd * cal.c0 / (cal.c0 + cal.selected_cap(cycle))
}

/// Body-voltage decrement delivered by the charge pump in one period.
pub fn cp_step(daco: f64, cal: &CalibrationConfig) -> f64 {
    let ov = (daco - cal.cp_vthn).max(0.0);
    0.5 * cal.cp_beta * ov * ov * cal.t_period / cal.cb
}

/// Step sizes of one phase, in cycle order.
pub fn step_ladder(cal: &CalibrationConfig, vdd: f64) -> Vec<f64> {
    (1..=cal.n_cycles)
        .map(|k| cp_step(dac_output(k, cal, vdd), cal))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetSearch {
    /// Bisection stops once the bracket is narrower than this, V.
    pub tol: f64,
    /// Search interval is `[-span, +span]`, V.
    pub span: f64,
}

impl Default for OffsetSearch {
    fn default() -> Self {
        Self {
            tol: 10e-6,
            span: 0.1,
        }
    }
}

/// Offset measurement result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetMeasurement {
    pub offset: f64,
    pub iterations: usize,
}

/// Locates the decision flip point by bisection on `vid` at `base`'s common
/// mode, corner and temperature.
pub fn measure_offset(
    comp: &Comparator,
    base: &OperatingPoint,
    mismatch: &MismatchSample,
    body: BodyBias,
    search: OffsetSearch,
) -> Result<OffsetMeasurement, CalibrationError> {
    if !(search.tol > 0.0 && search.span > 0.0) {
        return Err(CalibrationError::Config("offset search tol and span must be > 0".to_string()));
    }
    let decide = |vid: f64| -> Result<Decision, EngineError> {
        Ok(comp.simulate(&OperatingPoint { vid, ..*base }, mismatch, body)?.decision)
    };
    let (mut lo, mut hi) = (-search.span, search.span);
    if decide(lo)? != Decision::Low || decide(hi)? != Decision::High {
        return Err(CalibrationError::OutOfSpan { span: search.span });
    }
    let mut iterations = 0;
    while hi - lo > search.tol {
        let mid = 0.5 * (lo + hi);
        if decide(mid)? == Decision::High {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Ok(OffsetMeasurement {
        offset: 0.5 * (lo + hi),
        iterations,
    })
}

/// One correction cycle of the loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub phase: usize,
    pub cycle: usize,
    pub code: usize,
    pub daco: f64,
    pub step: f64,
    /// Sign bit: true discharges `vb_plus`.
    pub s: bool,
    pub vb_plus: f64,
    pub vb_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub vb_plus: f64,
    pub vb_minus: f64,
    pub history: Vec<CalibrationStep>,
    /// A body voltage hit ground and was clamped.
    pub saturated: bool,
}

impl CalibrationState {
    pub fn body(&self) -> BodyBias {
        BodyBias {
            plus: self.vb_plus,
            minus: self.vb_minus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub state: CalibrationState,
    pub offset_before: f64,
    pub offset_after: f64,
    pub residual_bound: f64,
    pub converged: bool,
}

/// Calibration operating point: zero differential input at the reference
/// level, with `base`'s corner, temperature and supply.
pub fn calibration_point(comp: &Comparator, base: &OperatingPoint, cal: &CalibrationConfig) -> OperatingPoint {
    let vdd = base.vdd(comp.config());
    OperatingPoint {
        vid: 0.0,
        vcm: cal.v_ref(vdd),
        ..*base
    }
}

/// Runs the correction loop only, returning the final body voltages.
pub fn run_loop(
    comp: &Comparator,
    base: &OperatingPoint,
    mismatch: &MismatchSample,
    cal: &CalibrationConfig,
) -> Result<CalibrationState, CalibrationError> {
    cal.validate()?;
    let op = calibration_point(comp, base, cal);
    let vdd = op.vdd(comp.config());
    let mut state = CalibrationState {
        vb_plus: vdd,
        vb_minus: vdd,
        history: Vec::with_capacity(cal.n_cycles * cal.phases),
        saturated: false,
    };
    for phase in 1..=cal.phases {
        for cycle in 1..=cal.n_cycles {
            let decision = comp.simulate(&op, mismatch, state.body())?.decision;
            let s = decision == Decision::Low;
            let daco = dac_output(cycle, cal, vdd);
            let step = cp_step(daco, cal);
            let target = if s { &mut state.vb_plus } else { &mut state.vb_minus };
            *target -= step;
            if *target < 0.0 {
                *target = 0.0;
                state.saturated = true;
            }
            state.history.push(CalibrationStep {
                phase,
                cycle,
                code: cal.code(cycle),
                daco,
                step,
                s,
                vb_plus: state.vb_plus,
                vb_minus: state.vb_minus,
            });
        }
    }
    Ok(state)
}

/// Full calibration: offset before, correction loop, offset after.
pub fn run_calibration(
    comp: &Comparator,
    base: &OperatingPoint,
    mismatch: &MismatchSample,
    cal: &CalibrationConfig,
    search: OffsetSearch,
) -> Result<CalibrationResult, CalibrationError> {
    let vdd = base.vdd(comp.config());
    let op = calibration_point(comp, base, cal);
    let offset_before = measure_offset(comp, &op, mismatch, BodyBias::tied(vdd), search)?.offset;
    let state = run_loop(comp, base, mismatch, cal)?;
    let offset_after = measure_offset(comp, &op, mismatch, state.body(), search)?.offset;
    let bound = residual_bound(comp, base, cal)?;
    Ok(CalibrationResult {
        converged: offset_after.abs() <= bound,
        state,
        offset_before,
        offset_after,
        residual_bound: bound,
    })
}

/// Ceiling on the post-calibration offset: the last correction step mapped
/// to input-referred volts through the body-effect slope of the input pair.
/// The slope is taken at the lowest body voltage the loop can reach, where it
/// is steepest.
pub fn residual_bound(
    comp: &Comparator,
    base: &OperatingPoint,
    cal: &CalibrationConfig,
) -> Result<f64, CalibrationError> {
    cal.validate()?;
    let op = calibration_point(comp, base, cal);
    let vdd = op.vdd(comp.config());
    let steps = step_ladder(cal, vdd);
    let last = *steps.last().expect("n_cycles >= 1");
    let budget: f64 = steps.iter().sum::<f64>() * cal.phases as f64;
    let v_tail = comp
        .preamp_bias(&op, &MismatchSample::zero(), BodyBias::tied(vdd))?
        .v_tail;
    let vb_min = (vdd - budget).max(0.0);
    let pmos = comp.device_params(&op)?.pmos;
    let slope = threshold_slope(&pmos, vb_min - v_tail).map_err(EngineError::from)?;
    Ok(last * slope)
}

/// Equal-width binned counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins `values` over their own range. Identical values collapse into a
    /// single zero-width bin.
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            return Self {
                lo: 0.0,
                hi: 0.0,
                counts: Vec::new(),
            };
        }
        if hi <= lo || bins <= 1 {
            return Self {
                lo,
                hi,
                counts: vec![values.len()],
            };
        }
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len().max(1) as f64;
        (self.lo + k as f64 * w, self.lo + (k + 1) as f64 * w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetStats {
    /// Requested trials.
    pub n: usize,
    /// Per-trial offsets in trial order; failed trials are `None`.
    pub offsets: Vec<Option<f64>>,
    /// Trials that errored (offset out of span, no decision).
    pub failures: usize,
    /// Calibrated trials whose residual exceeded the bound.
    pub not_converged: usize,
    pub mean: f64,
    pub sigma: f64,
    pub histogram: Histogram,
}

impl OffsetStats {
    pub fn from_offsets(offsets: Vec<Option<f64>>, not_converged: usize, bins: usize) -> Self {
        let ok: Vec<f64> = offsets.iter().flatten().copied().collect();
        let m = ok.len();
        let mean = if m == 0 { 0.0 } else { ok.iter().sum::<f64>() / m as f64 };
        let sigma = if m < 2 {
            0.0
        } else {
            (ok.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
        };
        Self {
            n: offsets.len(),
            failures: offsets.len() - m,
            not_converged,
            mean,
            sigma,
            histogram: Histogram::from_values(&ok, bins),
            offsets,
        }
    }
}

/// Monte Carlo settings shared by the calibrated and raw runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub trials: usize,
    pub seed: u64,
    pub pelgrom: PelgromModel,
    pub search: OffsetSearch,
    pub bins: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trials: 500,
            seed: 1,
            pelgrom: PelgromModel::default(),
            search: OffsetSearch::default(),
            bins: 20,
        }
    }
}

/// Offset statistics over `mc.trials` mismatch samples. Trials are evaluated
/// in parallel and aggregated in trial order.
pub fn monte_carlo(
    comp: &Comparator,
    base: &OperatingPoint,
    cal: &CalibrationConfig,
    mc: &MonteCarloConfig,
    calibrate: bool,
) -> Result<OffsetStats, CalibrationError> {
    if mc.trials == 0 {
        return Err(CalibrationError::Config("trials must be >= 1".to_string()));
    }
    cal.validate()?;
    let devices = comp.config().geometry.devices();
    let op = calibration_point(comp, base, cal);
    let vdd = op.vdd(comp.config());
    let per_trial: Vec<(Option<f64>, bool)> = (0..mc.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let m = sample_mismatch(mc.seed, trial, devices, &mc.pelgrom);
            if calibrate {
                match run_calibration(comp, base, &m, cal, mc.search) {
                    Ok(r) => (Some(r.offset_after), r.converged),
                    Err(_) => (None, true),
                }
            } else {
                let r = measure_offset(comp, &op, &m, BodyBias::tied(vdd), mc.search);
                (r.ok().map(|r| r.offset), true)
            }
        })
        .collect();
    let not_converged = per_trial.iter().filter(|(_, c)| !c).count();
    let offsets = per_trial.into_iter().map(|(o, _)| o).collect();
    Ok(OffsetStats::from_offsets(offsets, not_converged, mc.bins))
}

/// Input-referred offset sigma of the input pair predicted from the threshold
/// coefficient alone.
pub fn pelgrom_pair_sigma(comp: &Comparator, pelgrom: &PelgromModel) -> Result<f64, EngineError> {
    let g = comp.config().geometry.get("Mp4")?;
    Ok(std::f64::consts::SQRT_2 * pelgrom.sigma_vth(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ComparatorConfig;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn comparator() -> Comparator {
        Comparator::new(ComparatorConfig::default()).unwrap()
    }

    fn base() -> OperatingPoint {
        OperatingPoint::typical(1.8)
    }

    fn one_hot_ladder() -> CalibrationConfig {
        CalibrationConfig {
            dac_caps: [25.0, 50.0, 100.0, 200.0, 400.0, 800.0].iter().map(|c| c * 1e-15).collect(),
            dac_decode: DacDecode::OneHot,
            ..Default::default()
        }
    }

    #[test]
    fn dac_examples() {
        let cal = one_hot_ladder();
        let expect = [0.8, 100.0 / 150.0, 0.5, 100.0 / 300.0, 0.2, 100.0 / 900.0];
        for (k, e) in expect.iter().enumerate() {
            assert_relative_eq!(dac_output(k + 1, &cal, 1.8) / 1.8, *e, max_relative = 1e-12);
        }
        let equal = CalibrationConfig {
            c0: 100e-15,
            dac_caps: vec![100e-15],
            n_cycles: 1,
            ..Default::default()
        };
        assert_relative_eq!(dac_output(1, &equal, 1.8), 0.9, max_relative = 1e-15);
        let none = CalibrationConfig {
            dac_caps: vec![],
            ..Default::default()
        };
        assert_eq!(none.selected_cap(4), 0.0);
        assert_eq!(dac_output(4, &none, 1.8), 1.8);
    }

    #[test]
    fn default_ladder_strictly_decreasing() {
        let cal = CalibrationConfig::default();
        cal.validate().unwrap();
        let d: Vec<f64> = (1..=6).map(|k| dac_output(k, &cal, 1.8)).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]));
        assert!(d.iter().all(|v| *v <= 1.8));
        let s = step_ladder(&cal, 1.8);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
        // every step at least half the previous one: no gaps in the search
        assert!(s.windows(2).all(|w| w[1] >= 0.5 * w[0]));
        assert!(*s.last().unwrap() > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(CalibrationConfig { n_cycles: 0, ..Default::default() }.validate().is_err());
        assert!(CalibrationConfig { cb: 0.0, ..Default::default() }.validate().is_err());
        assert!(CalibrationConfig { n_cycles: 8, ..Default::default() }.validate().is_err());
        assert!(CalibrationConfig { n_cycles: 7, ..one_hot_ladder() }.validate().is_err());
        assert!(one_hot_ladder().validate().is_ok());
    }

    #[test]
    fn cp_step_examples() {
        let cal = CalibrationConfig {
            cp_beta: 50e-6,
            cp_vthn: 0.45,
            t_period: 3e-9,
            cb: 1e-12,
            ..Default::default()
        };
        let i = 0.5 * 50e-6 * 0.99f64.powi(2);
        assert_relative_eq!(i, 24.5e-6, epsilon = 0.01e-6);
        assert_relative_eq!(cp_step(1.44, &cal), 73.5e-3, epsilon = 0.02e-3);
        assert_eq!(cp_step(0.45, &cal), 0.0);
        assert_eq!(cp_step(0.1, &cal), 0.0);
        let double = CalibrationConfig { cb: 2e-12, ..cal.clone() };
        assert_relative_eq!(cp_step(1.44, &double), 0.5 * cp_step(1.44, &cal), max_relative = 1e-15);
    }

    #[test]
    fn measure_zero_and_injected_offsets() {
        let comp = comparator();
        let s = OffsetSearch::default();
        let z = measure_offset(&comp, &base(), &MismatchSample::zero(), BodyBias::tied(1.8), s).unwrap();
        assert!(z.offset.abs() <= 2.0 * s.tol);
        assert!(z.iterations <= 15);

        let m = MismatchSample::zero().with_vth("Mp4", 0.010);
        let r = measure_offset(&comp, &base(), &m, BodyBias::tied(1.8), s).unwrap();
        assert!((0.008..=0.012).contains(&r.offset), "{}", r.offset);
        let m = MismatchSample::zero().with_vth("Mp4", -0.010);
        let r = measure_offset(&comp, &base(), &m, BodyBias::tied(1.8), s).unwrap();
        assert!((-0.012..=-0.008).contains(&r.offset));

        let huge = MismatchSample::zero().with_vth("Mp4", 0.2);
        assert!(matches!(
            measure_offset(&comp, &base(), &huge, BodyBias::tied(1.8), s),
            Err(CalibrationError::OutOfSpan { .. })
        ));
    }

    #[test]
    fn positive_offset_discharges_vb_plus_first() {
        let comp = comparator();
        let m = MismatchSample::zero().with_vth("Mp4", 0.010);
        let cal = CalibrationConfig::default();
        let r = run_calibration(&comp, &base(), &m, &cal, OffsetSearch::default()).unwrap();
        let h = &r.state.history;
        assert_eq!(h.len(), 6);
        assert!(h[0].s);
        assert!(h[0].vb_plus < 1.8 && h[0].vb_minus == 1.8);
        assert!(h.iter().any(|e| !e.s), "sign never alternated");
        assert!(r.converged);
        assert!(r.offset_after.abs() < r.offset_before.abs());
    }

    #[test]
    fn zero_mismatch_stays_within_bound() {
        let comp = comparator();
        let cal = CalibrationConfig::default();
        let r = run_calibration(&comp, &base(), &MismatchSample::zero(), &cal, OffsetSearch::default()).unwrap();
        assert!(r.converged);
        assert!(r.offset_after.abs() <= r.offset_before.abs() + r.residual_bound);
    }

    #[test]
    fn oversized_offset_does_not_converge() {
        let comp = comparator();
        let m = MismatchSample::zero().with_vth("Mp4", 0.095);
        let r = run_calibration(&comp, &base(), &m, &CalibrationConfig::default(), OffsetSearch::default())
            .unwrap();
        assert!(!r.converged);
        assert!(r.offset_after < r.offset_before);
        assert!(r.state.history.iter().all(|e| e.s));
    }

    #[test]
    fn residual_bound_properties() {
        let comp = comparator();
        let cal = CalibrationConfig::default();
        let b = residual_bound(&comp, &base(), &cal).unwrap();
        assert!(b > 0.0);
        let doubled = CalibrationConfig { cb: 2.0 * cal.cb, ..cal.clone() };
        // smaller steps also keep the body nearer vdd, where the slope is flatter
        assert!(residual_bound(&comp, &base(), &doubled).unwrap() <= 0.5 * b);

        let flat = comp
            .with_config(|c| c.technology.pmos.gamma = 0.0)
            .unwrap();
        assert_eq!(residual_bound(&flat, &base(), &cal).unwrap(), 0.0);
    }

    #[test]
    fn bound_slope_example() {
        // final step 5 mV through a 0.15 slope
        assert_relative_eq!(5e-3 * 0.15, 0.75e-3, max_relative = 1e-12);
        let p = crate::device::DeviceParams::pmos_default();
        let slope = threshold_slope(&p, 0.0).unwrap();
        assert_relative_eq!(slope, 0.4 / (2.0 * 0.7f64.sqrt()), max_relative = 1e-12);
    }

    #[test]
    fn histogram_edges() {
        let h = Histogram::from_values(&[0.0, 1.0, 2.0, 3.0], 3);
        assert_eq!(h.counts, vec![1, 1, 2]);
        assert_eq!(h.edges(0), (0.0, 1.0));
        let one = Histogram::from_values(&[0.5], 20);
        assert_eq!(one.counts, vec![1]);
        assert_eq!((one.lo, one.hi), (0.5, 0.5));
    }

    #[test]
    fn no_mismatch_monte_carlo_is_degenerate() {
        let mc = MonteCarloConfig {
            trials: 1,
            pelgrom: PelgromModel { avt: 0.0, abeta: 0.0 },
            ..Default::default()
        };
        let s = monte_carlo(&comparator(), &base(), &CalibrationConfig::default(), &mc, false).unwrap();
        assert_eq!(s.n, 1);
        assert!(s.mean.abs() <= 2.0 * mc.search.tol);
        assert_eq!(s.sigma, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cp_step_monotone(a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let cal = CalibrationConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(cp_step(lo, &cal) <= cp_step(hi, &cal));
            prop_assert!(cp_step(lo, &cal) >= 0.0);
        }

        #[test]
        fn bodies_only_fall_one_at_a_time(d4 in -0.04f64..0.04, d5 in -0.04f64..0.04) {
            let m = MismatchSample::zero().with_vth("Mp4", d4).with_vth("Mp5", d5);
            let st = run_loop(&comparator(), &base(), &m, &CalibrationConfig::default()).unwrap();
            let mut prev = (1.8, 1.8);
            for e in &st.history {
                let dp = prev.0 - e.vb_plus;
                let dm = prev.1 - e.vb_minus;
                prop_assert!(dp >= 0.0 && dm >= 0.0);
                prop_assert!((dp > 0.0) != (dm > 0.0));
                prop_assert_eq!(e.s, dp > 0.0);
                prev = (e.vb_plus, e.vb_minus);
            }
        }
    }
}
