//! Power-delay balance of the shutdown chain against the latch, and width
//! sweeps for design exploration.
//!
//! The chain should cut the preamp tail right after the latch has resolved:
//!
//! ```text
//! C_pi/beta_ni + alpha C_p3/beta_pi = (C_p8 + C_n6)/beta_n3
//! ```
//!
//! With widths normalized to the minimum DDVB NMOS width and the latch sized
//! W_n6 = W_p8 = 2 W_n3, this reduces to `x/2 + alpha y / x = 2` where
//! `x = W_pi/W_ni` and `y = W_p3/W_ni`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{beta, gate_cap, MismatchSample};
use crate::engine::{BodyBias, Comparator, ComparatorConfig, EngineError, OperatingPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingVars {
    pub x: f64,
    pub y: f64,
    pub alpha: f64,
}

impl SizingVars {
    pub fn new(x: f64, y: f64, alpha: f64) -> Result<Self, EngineError> {
        if !(x >= 1.0 && y >= 1.0) {
            return Err(EngineError::Config(format!("x = {x}, y = {y} must both be >= 1")));
        }
        if !(alpha >= 1.0) {
            return Err(EngineError::Config(format!("alpha = {alpha} must be >= 1")));
        }
        Ok(Self { x, y, alpha })
    }

    /// Signed residual of the normalized balance condition.
    pub fn residual(&self) -> f64 {
        balance_residual(self)
    }
}

pub fn balance_residual(v: &SizingVars) -> f64 {
    v.x / 2.0 + v.alpha * v.y / v.x - 2.0
}

/// Capacitances and gain factors entering the un-normalized balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceTerms {
    pub c_pi: f64,
    pub c_p3: f64,
    /// C_p8 + C_n6.
    pub c_latch: f64,
    pub beta_ni: f64,
    pub beta_pi: f64,
    pub beta_n3: f64,
    pub alpha: f64,
}

impl BalanceTerms {
    /// Evaluates the terms for a configuration with nominal devices. `c_p3`
    /// is the full gate load of one tail switch.
    pub fn from_config(config: &ComparatorConfig) -> Result<Self, EngineError> {
        let g = &config.geometry;
        let tech = &config.technology;
        let cap = |n: &str| -> Result<f64, EngineError> {
            let d = g.get(n)?;
            Ok(gate_cap(d, tech.params(d.polarity)))
        };
        let b = |n: &str| -> Result<f64, EngineError> {
            let d = g.get(n)?;
            Ok(beta(d, tech.params(d.polarity)))
        };
        let e = &config.extra_load;
        Ok(Self {
            c_pi: cap("Mpi1")? + e.pi,
            c_p3: cap("Mp2")? + e.p3,
            c_latch: cap("Mp8")? + cap("Mn6")? + e.latch,
            beta_ni: b("Mni2")?,
            beta_pi: b("Mpi1")?,
            beta_n3: b("Mn3")?,
            alpha: config.alpha,
        })
    }

    /// `C_pi/beta_ni + alpha C_p3/beta_pi - (C_p8 + C_n6)/beta_n3`; positive
    /// means the shutdown lands after the latch has resolved.
    pub fn residual(&self) -> f64 {
        self.c_pi / self.beta_ni + self.alpha * self.c_p3 / self.beta_pi
            - self.c_latch / self.beta_n3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingSolution {
    pub vars: SizingVars,
    pub residual: f64,
}

/// Exhaustive grid search over `x in [1, x_max]`, `y in [1, y_max]` for the
/// smallest `|residual|`. Ties go to the smaller x, then the smaller y.
pub fn solve_sizing(
    alpha: f64,
    x_max: f64,
    y_max: f64,
    grid_step: f64,
) -> Result<SizingSolution, EngineError> {
    if !(alpha >= 1.0) {
        return Err(EngineError::Config(format!("alpha = {alpha} must be >= 1")));
    }
    if !(x_max >= 1.0 && y_max >= 1.0) {
        return Err(EngineError::Config("sizing bounds must be >= 1".to_string()));
    }
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(EngineError::Config(format!("grid_step = {grid_step} must be > 0")));
    }
    let steps = |max: f64| ((max - 1.0) / grid_step + 1e-9).floor() as usize;
    let (nx, ny) = (steps(x_max), steps(y_max));
    if nx.saturating_mul(ny) > 100_000_000 {
        return Err(EngineError::Config("sizing grid too fine".to_string()));
    }

    let mut best: Option<SizingSolution> = None;
    for i in 0..=nx {
        let x = 1.0 + i as f64 * grid_step;
        for j in 0..=ny {
            let y = 1.0 + j as f64 * grid_step;
            let vars = SizingVars { x, y, alpha };
            let residual = balance_residual(&vars);
            // strict comparison keeps the first (smallest x, then y) minimizer
            if best.is_none_or(|b| residual.abs() < b.residual.abs()) {
                best = Some(SizingSolution { vars, residual });
            }
        }
    }
    Ok(best.expect("grid has at least one point"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepTarget {
    /// Input pair Mp4/Mp5 at W, tail Mp1 at 2W.
    Preamp,
    /// Evaluation devices of INV_n (Mni2/Mni3).
    InvN,
    /// INV_n and INV_p evaluation devices together (Mni2/Mni3, Mpi1/Mpi4).
    InvBoth,
}

impl SweepTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepTarget::Preamp => "preamp",
            SweepTarget::InvN => "inv_n",
            SweepTarget::InvBoth => "inv_both",
        }
    }

    /// Applies width `w` to a geometry.
    pub fn apply(self, config: &mut ComparatorConfig, w: f64) -> Result<(), EngineError> {
        let g = &mut config.geometry;
        match self {
            SweepTarget::Preamp => {
                g.set_width("Mp4", w)?;
                g.set_width("Mp5", w)?;
                g.set_width("Mp1", 2.0 * w)?;
            }
            SweepTarget::InvN => {
                g.set_width("Mni2", w)?;
                g.set_width("Mni3", w)?;
            }
            SweepTarget::InvBoth => {
                for n in ["Mni2", "Mni3", "Mpi1", "Mpi4"] {
                    g.set_width(n, w)?;
                }
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepTarget {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "preamp" => Ok(SweepTarget::Preamp),
            "inv_n" => Ok(SweepTarget::InvN),
            "inv_both" => Ok(SweepTarget::InvBoth),
            other => Err(EngineError::Config(format!(
                "unknown width sweep target '{other}' (expected preamp, inv_n or inv_both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSweepPoint {
    /// Swept width, m.
    pub w: f64,
    pub t_dm: f64,
    /// Average power at the configured clock, W.
    pub power: f64,
    pub late: bool,
    /// Engine error for this point, if any; metrics are NaN then.
    pub error: Option<String>,
}

/// Evaluates the comparator at `op` for every width in `widths`, in order.
pub fn width_sweep(
    target: SweepTarget,
    widths: &[f64],
    op: &OperatingPoint,
    config: &ComparatorConfig,
) -> Vec<WidthSweepPoint> {
    widths
        .par_iter()
        .map(|&w| {
            let run = || -> Result<(f64, f64, bool), EngineError> {
                let mut cfg = config.clone();
                target.apply(&mut cfg, w)?;
                let comp = Comparator::new(cfg)?;
                let vdd = op.vdd(comp.config());
                let r = comp.simulate(op, &MismatchSample::zero(), BodyBias::tied(vdd))?;
                Ok((r.t_dm, r.power(comp.config().freq), r.late))
            };
            match run() {
                Ok((t_dm, power, late)) => WidthSweepPoint {
                    w,
                    t_dm,
                    power,
                    late,
                    error: None,
                },
                Err(e) => WidthSweepPoint {
                    w,
                    t_dm: f64::NAN,
                    power: f64::NAN,
                    late: true,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}
