//! One precharge + comparison cycle of the early-shutdown double-tail
//! comparator as a piecewise-linear ramp model.
//!
//! During comparison the PMOS input pair charges the preamp outputs Out-/Out+
//! with constant currents. The output that first reaches the latch-input
//! threshold wins the decision (`Out-` first means `Vo+` high, reported as
//! [`Decision::High`]). The first DDVB chain to fire cuts the preamp tail
//! current at `t_esd`; with shutdown disabled the tail conducts for the whole
//! comparison window.

mod timing;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{
    beta, gate_cap, threshold, CornerSpec, Corner, DeviceError, DeviceParams, MismatchSample,
    Technology, TemperatureModel, TransistorGeom,
};
use crate::geometry::{Geometry, CLOCKED_DEVICES};

pub use timing::{DelayModel, INVERTER_DELAY_FACTOR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate overdrive: Vdd - Vg - Vthp = {overdrive} V")]
    DegenerateOverdrive { overdrive: f64 },
    #[error("no decision: neither preamp output crossed the latch threshold within {window} s")]
    NoDecision { window: f64 },
}

/// Comparator output polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    /// Vo+ high, Vo- low.
    High,
    /// Vo+ low, Vo- high.
    Low,
}

impl Decision {
    pub fn sign(self) -> i8 {
        match self {
            Decision::High => 1,
            Decision::Low => -1,
        }
    }

    pub fn from_sign(s: i64) -> Option<Self> {
        match s {
            1 => Some(Decision::High),
            -1 => Some(Decision::Low),
            _ => None,
        }
    }
}

/// One half of the differential first stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Mp4 (gate Vi-) charging Out-.
    Minus,
    /// Mp5 (gate Vi+) charging Out+.
    Plus,
}

struct SideDevices {
    input: &'static str,
    latch_in: &'static str,
    inv_n: &'static str,
    inv_p: &'static str,
    latch_load_p: &'static str,
    latch_load_n: &'static str,
}

impl Side {
    fn devices(self) -> SideDevices {
        match self {
            Side::Minus => SideDevices {
                input: "Mp4",
                latch_in: "Mn3",
                inv_n: "Mni2",
                inv_p: "Mpi1",
                latch_load_p: "Mp8",
                latch_load_n: "Mn6",
            },
            Side::Plus => SideDevices {
                input: "Mp5",
                latch_in: "Mn4",
                inv_n: "Mni3",
                inv_p: "Mpi4",
                latch_load_p: "Mp7",
                latch_load_n: "Mn5",
            },
        }
    }
}

/// Fixed additive capacitance per node, F.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtraLoad {
    pub out: f64,
    pub pi: f64,
    pub p3: f64,
    pub latch: f64,
}

impl ExtraLoad {
    pub fn uniform(c: f64) -> Self {
        Self {
            out: c,
            pi: c,
            p3: c,
            latch: c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorConfig {
    pub geometry: Geometry,
    /// Device parameters at the typical corner and reference temperature.
    pub technology: Technology,
    pub temperature_model: TemperatureModel,
    /// Supply, V.
    pub vdd: f64,
    /// Clock frequency, Hz.
    pub freq: f64,
    /// Tail-switch turn-off multiplier.
    pub alpha: f64,
    pub extra_load: ExtraLoad,
    pub early_shutdown: bool,
    /// Fractional tail-current loss through the parallel on-switches.
    pub tail_derating: f64,
    /// Decision reported when both outputs cross at exactly the same time.
    pub tie_break: Decision,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::reference(),
            technology: Technology::default(),
            temperature_model: TemperatureModel::default(),
            vdd: 1.8,
            freq: 333e6,
            alpha: 1.5,
            extra_load: ExtraLoad::default(),
            early_shutdown: true,
            tail_derating: 0.05,
            tie_break: Decision::High,
        }
    }
}

impl ComparatorConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::Config(msg));
        if !(self.vdd > 0.0 && self.vdd.is_finite()) {
            return bad(format!("vdd = {} must be > 0", self.vdd));
        }
        if !(self.freq > 0.0 && self.freq.is_finite()) {
            return bad(format!("freq = {} must be > 0", self.freq));
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {} must be >= 1", self.alpha));
        }
        if !(0.0..1.0).contains(&self.tail_derating) {
            return bad(format!("tail_derating = {} must be in [0, 1)", self.tail_derating));
        }
        let e = &self.extra_load;
        if [e.out, e.pi, e.p3, e.latch].iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return bad("extra_load entries must be >= 0".to_string());
        }
        self.technology.nmos.validate()?;
        self.technology.pmos.validate()?;
        Geometry::from_devices(self.geometry.devices().to_vec())?;
        Ok(())
    }

    /// Half the clock period (50 % duty cycle).
    pub fn window(&self) -> f64 {
        0.5 / self.freq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Differential input Vi+ - Vi-, V.
    pub vid: f64,
    /// Common-mode input, V.
    pub vcm: f64,
    pub corner: Corner,
    pub t_kelvin: f64,
    pub vdd_override: Option<f64>,
}

impl OperatingPoint {
    /// 50 mV differential at mid-supply, TT, 27 C.
    pub fn typical(vdd: f64) -> Self {
        Self {
            vid: 0.050,
            vcm: vdd / 2.0,
            corner: Corner::TT,
            t_kelvin: 300.15,
            vdd_override: None,
        }
    }

    pub fn vdd(&self, config: &ComparatorConfig) -> f64 {
        self.vdd_override.unwrap_or(config.vdd)
    }

    /// Gate voltage of the device on a given side.
    pub fn gate(&self, side: Side) -> f64 {
        match side {
            Side::Minus => self.vcm - self.vid / 2.0,
            Side::Plus => self.vcm + self.vid / 2.0,
        }
    }

    pub fn validate(&self, vdd: f64) -> Result<(), EngineError> {
        if !(vdd > 0.0) {
            return Err(EngineError::Config(format!("vdd = {vdd} must be > 0")));
        }
        if !(0.0..=vdd).contains(&self.vcm) {
            return Err(EngineError::Config(format!(
                "vcm = {} outside [0, {vdd}]",
                self.vcm
            )));
        }
        if !(self.vid.abs() < vdd) {
            return Err(EngineError::Config(format!("|vid| = {} must be < vdd", self.vid.abs())));
        }
        if !(self.t_kelvin > 0.0) {
            return Err(EngineError::Config(format!("temperature {} K must be > 0", self.t_kelvin)));
        }
        Ok(())
    }
}

/// Body voltages of the input pair. `plus` biases Mp4, `minus` biases Mp5;
/// lowering either speeds up its device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyBias {
    pub plus: f64,
    pub minus: f64,
}

impl BodyBias {
    pub fn tied(vdd: f64) -> Self {
        Self {
            plus: vdd,
            minus: vdd,
        }
    }

    fn for_side(&self, side: Side) -> f64 {
        match side {
            Side::Minus => self.plus,
            Side::Plus => self.minus,
        }
    }
}

/// Node capacitances entering the ramp and delay expressions, F.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeCaps {
    /// Preamp output: latch input gate plus DDVB input gate.
    pub c_out: f64,
    /// First DDVB inverter output.
    pub c_pi: f64,
    /// Second DDVB inverter output (tail-switch gate).
    pub c_p3: f64,
    /// Latch output node.
    pub c_latch: f64,
}

fn side_caps(
    geometry: &Geometry,
    tech: &Technology,
    extra: &ExtraLoad,
    side: Side,
) -> Result<NodeCaps, DeviceError> {
    let cap = |name: &str| -> Result<f64, DeviceError> {
        let g = geometry.get(name)?;
        Ok(gate_cap(g, tech.params(g.polarity)))
    };
    let d = side.devices();
    // The two INV_p outputs share the parallel switch pair.
    let switch_share = 0.5 * (cap("Mp2")? + cap("Mp3")?);
    Ok(NodeCaps {
        c_out: cap(d.latch_in)? + cap(d.inv_n)? + extra.out,
        c_pi: cap(d.inv_p)? + extra.pi,
        c_p3: switch_share + extra.p3,
        c_latch: cap(d.latch_load_p)? + cap(d.latch_load_n)? + extra.latch,
    })
}

/// Node capacitances of the Out- side (identical to Out+ for a symmetric
/// geometry).
pub fn node_caps(config: &ComparatorConfig) -> Result<NodeCaps, DeviceError> {
    side_caps(&config.geometry, &config.technology, &config.extra_load, Side::Minus)
}

/// Solved first-stage bias during comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreampBias {
    /// Common-source (tail) node voltage, V.
    pub v_tail: f64,
    /// Current charging Out-, A.
    pub i_minus: f64,
    /// Current charging Out+, A.
    pub i_plus: f64,
    pub vth_minus: f64,
    pub vth_plus: f64,
}

impl PreampBias {
    pub fn total(&self) -> f64 {
        self.i_minus + self.i_plus
    }

    pub fn current(&self, side: Side) -> f64 {
        match side {
            Side::Minus => self.i_minus,
            Side::Plus => self.i_plus,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e_preamp: f64,
    pub e_latch: f64,
    pub e_ddvb: f64,
    pub e_reset: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub decision: Decision,
    /// Leading output reaches the latch-input threshold, s.
    pub t0: f64,
    /// Leading output reaches the DDVB input threshold, s.
    pub t1: f64,
    /// The leading side's DDVB chain cuts the tail, s.
    pub t_esd: f64,
    /// Decision-making time, s.
    pub t_dm: f64,
    /// The tail was actually cut inside the window.
    pub shutdown_occurred: bool,
    /// Decision past the window, or shutdown before the latch input turned on.
    pub late: bool,
    pub bias: PreampBias,
    pub vdd: f64,
    pub window: f64,
    pub energy: EnergyBreakdown,
}

impl ComparisonResult {
    /// Average power at the given clock frequency, W.
    pub fn power(&self, freq: f64) -> f64 {
        self.energy.total * freq
    }
}

/// Validated comparator model; immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct Comparator {
    config: ComparatorConfig,
}

struct Resolved {
    vdd: f64,
    tech: Technology,
}

impl Comparator {
    pub fn new(config: ComparatorConfig) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ComparatorConfig {
        &self.config
    }

    pub fn node_caps(&self) -> NodeCaps {
        node_caps(&self.config).expect("validated geometry")
    }

    fn caps(&self, side: Side) -> NodeCaps {
        side_caps(&self.config.geometry, &self.config.technology, &self.config.extra_load, side)
            .expect("validated geometry")
    }

    fn geom(&self, name: &str) -> &TransistorGeom {
        self.config.geometry.get(name).expect("validated geometry")
    }

    /// Device parameters after the operating point's corner and temperature.
    pub fn device_params(&self, op: &OperatingPoint) -> Result<Technology, EngineError> {
        let corner: CornerSpec = op.corner.spec();
        Ok(self
            .config
            .technology
            .apply_corner(&corner)
            .apply_temperature(&self.config.temperature_model, op.t_kelvin)?)
    }

    fn resolve(&self, op: &OperatingPoint) -> Result<Resolved, EngineError> {
        let vdd = op.vdd(&self.config);
        op.validate(vdd)?;
        Ok(Resolved {
            vdd,
            tech: self.device_params(op)?,
        })
    }

    fn beta_of(&self, name: &str, tech: &Technology, mismatch: &MismatchSample) -> f64 {
        let g = self.geom(name);
        beta(g, tech.params(g.polarity)) * (1.0 + mismatch.get(name).delta_beta_rel)
    }

    /// Saturation current capability of the tail device Mp1 through the
    /// on-switches, A. Zero when the tail is cut off.
    pub fn tail_current(&self, op: &OperatingPoint) -> Result<f64, EngineError> {
        let r = self.resolve(op)?;
        Ok(self.tail_capability(&r, &MismatchSample::zero())?.0)
    }

    // (saturation current, effective beta, overdrive)
    fn tail_capability(
        &self,
        r: &Resolved,
        mismatch: &MismatchSample,
    ) -> Result<(f64, f64, f64), EngineError> {
        let beta1 = self.beta_of("Mp1", &r.tech, mismatch) * (1.0 - self.config.tail_derating);
        let vth1 = threshold(&r.tech.pmos, 0.0, mismatch.get("Mp1").delta_vth)?;
        let ov = (r.vdd - vth1).max(0.0);
        Ok((0.5 * beta1 * ov * ov, beta1, ov))
    }

    /// Solves the shared source node of the input pair against the tail
    /// device, including body effect of the input pair.
    pub fn preamp_bias(
        &self,
        op: &OperatingPoint,
        mismatch: &MismatchSample,
        body: BodyBias,
    ) -> Result<PreampBias, EngineError> {
        let r = self.resolve(op)?;
        self.solve_preamp(&r, op, mismatch, body)
    }

    fn solve_preamp(
        &self,
        r: &Resolved,
        op: &OperatingPoint,
        mismatch: &MismatchSample,
        body: BodyBias,
    ) -> Result<PreampBias, EngineError> {
        for vb in [body.plus, body.minus] {
            if !(0.0..=r.vdd).contains(&vb) {
                return Err(EngineError::Config(format!(
                    "body voltage {vb} V outside [0, {}]",
                    r.vdd
                )));
            }
        }
        let (_, beta1, ov1) = self.tail_capability(r, mismatch)?;
        let pmos = r.tech.pmos;
        let side = |side: Side, v_s: f64| -> Result<(f64, f64), EngineError> {
            let name = side.devices().input;
            let vsb = body.for_side(side) - v_s;
            let vth = threshold(&pmos, vsb, mismatch.get(name).delta_vth)?;
            let ov = (v_s - op.gate(side) - vth).max(0.0);
            Ok((0.5 * self.beta_of(name, &r.tech, mismatch) * ov * ov, vth))
        };
        let tail = |v_s: f64| {
            let vsd = (r.vdd - v_s).max(0.0);
            if vsd >= ov1 {
                0.5 * beta1 * ov1 * ov1
            } else {
                beta1 * (ov1 * vsd - 0.5 * vsd * vsd)
            }
        };
        let excess = |v_s: f64| -> Result<f64, EngineError> {
            Ok(side(Side::Minus, v_s)?.0 + side(Side::Plus, v_s)?.0 - tail(v_s))
        };

        // Pair current rises and tail current falls with the source voltage,
        // so the crossing is unique.
        let (mut lo, mut hi) = (0.0_f64, r.vdd);
        if excess(lo)? >= 0.0 {
            hi = lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if excess(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v_tail = 0.5 * (lo + hi);
        let (i_minus, vth_minus) = side(Side::Minus, v_tail)?;
        let (i_plus, vth_plus) = side(Side::Plus, v_tail)?;
        Ok(PreampBias {
            v_tail,
            i_minus,
            i_plus,
            vth_minus,
            vth_plus,
        })
    }

    /// Closed-form delay model at the operating point with nominal devices.
    pub fn delay_model(&self, op: &OperatingPoint) -> Result<DelayModel, EngineError> {
        let r = self.resolve(op)?;
        Ok(self.delay_model_resolved(&r))
    }

    fn delay_model_resolved(&self, r: &Resolved) -> DelayModel {
        let zero = MismatchSample::zero();
        DelayModel {
            vdd: r.vdd,
            vthn: r.tech.nmos.vth0,
            vthp: r.tech.pmos.vth0,
            beta_input: self.beta_of("Mp4", &r.tech, &zero),
            beta_inv_n: self.beta_of("Mni2", &r.tech, &zero),
            beta_inv_p: self.beta_of("Mpi1", &r.tech, &zero),
            beta_latch: self.beta_of("Mn3", &r.tech, &zero),
            caps: self.caps(Side::Minus),
            alpha: self.config.alpha,
        }
    }

    /// Runs one comparison.
    pub fn simulate(
        &self,
        op: &OperatingPoint,
        mismatch: &MismatchSample,
        body: BodyBias,
    ) -> Result<ComparisonResult, EngineError> {
        let r = self.resolve(op)?;
        let vdd = r.vdd;
        let window = self.config.window();
        let bias = self.solve_preamp(&r, op, mismatch, body)?;
        let nmos: &DeviceParams = &r.tech.nmos;

        struct Ramp {
            t0: f64,
            t1: f64,
            t_esd: f64,
            t_latch: f64,
            caps: NodeCaps,
        }
        let ramp = |side: Side| -> Result<Ramp, EngineError> {
            let d = side.devices();
            let caps = self.caps(side);
            let current = bias.current(side);
            let vth_latch = threshold(nmos, 0.0, mismatch.get(d.latch_in).delta_vth)?;
            let vth_ddvb = threshold(nmos, 0.0, mismatch.get(d.inv_n).delta_vth)?;
            let crossing = |vth: f64| {
                if current > 0.0 {
                    vth * caps.c_out / current
                } else {
                    f64::INFINITY
                }
            };
            let t1 = crossing(vth_ddvb);
            let t_inv_n = INVERTER_DELAY_FACTOR * caps.c_pi
                / (self.beta_of(d.inv_n, &r.tech, mismatch) * vdd);
            let t_inv_p = self.config.alpha * INVERTER_DELAY_FACTOR * caps.c_p3
                / (self.beta_of(d.inv_p, &r.tech, mismatch) * vdd);
            Ok(Ramp {
                t0: crossing(vth_latch),
                t1,
                t_esd: t1 + t_inv_n + t_inv_p,
                t_latch: INVERTER_DELAY_FACTOR * caps.c_latch
                    / (self.beta_of(d.latch_in, &r.tech, mismatch) * vdd),
                caps,
            })
        };
        let minus = ramp(Side::Minus)?;
        let plus = ramp(Side::Plus)?;

        let decision = if minus.t0 < plus.t0 {
            Decision::High
        } else if plus.t0 < minus.t0 {
            Decision::Low
        } else {
            self.config.tie_break
        };
        let lead = match decision {
            Decision::High => &minus,
            Decision::Low => &plus,
        };
        if !(lead.t0 < window) {
            return Err(EngineError::NoDecision { window });
        }
        let t_esd = lead.t_esd;
        let t_dm = lead.t0 + lead.t_latch;
        let shutdown_occurred = self.config.early_shutdown && t_esd < window;
        let late = t_dm > window || (shutdown_occurred && t_esd < lead.t0);

        let mut result = ComparisonResult {
            decision,
            t0: lead.t0,
            t1: lead.t1,
            t_esd,
            t_dm,
            shutdown_occurred,
            late,
            bias,
            vdd,
            window,
            energy: EnergyBreakdown::default(),
        };
        result.energy = self.energy_per_comparison(&result, &lead.caps);
        Ok(result)
    }

    /// Total switched capacitance of the clocked gates, F.
    pub fn clock_load(&self) -> f64 {
        CLOCKED_DEVICES
            .iter()
            .map(|n| {
                let g = self.geom(n);
                gate_cap(g, self.config.technology.params(g.polarity))
            })
            .sum()
    }

    /// Energy drawn from the supply over one clock cycle.
    pub fn energy_per_comparison(&self, result: &ComparisonResult, caps: &NodeCaps) -> EnergyBreakdown {
        let vdd2 = result.vdd * result.vdd;
        let t_on = if result.shutdown_occurred {
            result.t_esd
        } else {
            result.window
        };
        let e_preamp = result.vdd * result.bias.total() * t_on.min(result.window);
        let e_latch = caps.c_latch * vdd2;
        let e_ddvb = if result.t_esd < result.window {
            2.0 * (caps.c_pi + caps.c_p3) * vdd2
        } else {
            0.0
        };
        let e_reset = self.clock_load() * vdd2;
        EnergyBreakdown {
            e_preamp,
            e_latch,
            e_ddvb,
            e_reset,
            total: e_preamp + e_latch + e_ddvb + e_reset,
        }
    }

    /// Copy of this comparator with a different configuration tweak applied.
    pub fn with_config(&self, f: impl FnOnce(&mut ComparatorConfig)) -> Result<Self, EngineError> {
        let mut cfg = self.config.clone();
        f(&mut cfg);
        Self::new(cfg)
    }
}
