//! Cardiometabolic risk score and the shaped reward for step-count actions.
//!
//! States use the application layout `(glucose, bmi, sbp, dbp, sex, age)` in
//! original units (mg/dL, kg/m², mmHg, mmHg, {0,1}, years).

use serde::{Deserialize, Serialize};

use crate::density::{mean_steps, LqdFunction};
use crate::error::{Error, Result};
use crate::model::State;

pub const GLUCOSE: usize = 0;
pub const BMI: usize = 1;
pub const SBP: usize = 2;
pub const DBP: usize = 3;
pub const SEX: usize = 4;
pub const AGE: usize = 5;
/// Number of components in the application state.
pub const APP_STATE_DIM: usize = 6;

/// Coefficient on `(μ / 1000)²` in the reward.
pub const STEP_PENALTY: f64 = 0.002;

/// Piecewise-constant map with closed-left intervals:
/// `values[k]` applies on `[breaks[k-1], breaks[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTable {
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
    /// Log a warning for inputs below the first break.
    #[serde(default)]
    pub warn_below: bool,
}

impl StepTable {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let t = StepTable {
            breaks,
            values,
            warn_below: false,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.breaks.len() + 1 {
            return Err(Error::invalid("risk table needs one more value than breaks"));
        }
        if self.breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("risk table breaks must be strictly increasing"));
        }
        if self.values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("risk table values must be non-negative"));
        }
        Ok(())
    }

    pub fn lookup(&self, x: f64) -> f64 {
        self.values[self.breaks.partition_point(|&b| b <= x)]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTables {
    pub bmi: StepTable,
    pub glucose: StepTable,
    pub sbp: StepTable,
    pub dbp: StepTable,
}

impl Default for RiskTables {
    fn default() -> Self {
        RiskTables {
            // below 18.5 takes the 18.5–22 value, with a warning
            bmi: StepTable {
                breaks: vec![18.5, 22.0, 24.0, 30.0],
                values: vec![0.42, 0.42, 0.20, 0.0, 0.03],
                warn_below: true,
            },
            glucose: StepTable {
                breaks: vec![70.0, 140.0, 160.0, 200.0],
                values: vec![0.29, 0.0, 0.12, 0.21, 0.37],
                warn_below: false,
            },
            sbp: StepTable {
                breaks: vec![110.0, 120.0, 170.0],
                values: vec![0.15, 0.03, 0.0, 0.04],
                warn_below: false,
            },
            dbp: StepTable {
                breaks: vec![80.0, 90.0],
                values: vec![0.0, 0.08, 0.16],
                warn_below: false,
            },
        }
    }
}

impl RiskTables {
    pub fn validate(&self) -> Result<()> {
        for t in [&self.bmi, &self.glucose, &self.sbp, &self.dbp] {
            t.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: RiskTables = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    /// Largest attainable risk.
    pub fn max_risk(&self) -> f64 {
        [&self.bmi, &self.glucose, &self.sbp, &self.dbp]
            .iter()
            .map(|t| t.max_value())
            .sum()
    }

    /// Per-component contributions `(ψ_BMI, ψ_glu, ψ_SBP, ψ_DBP)`.
    pub fn components(&self, state: &State) -> Result<[f64; 4]> {
        let c = state.components();
        if c.len() < 4 {
            return Err(Error::DimensionMismatch {
                expected: APP_STATE_DIM,
                found: c.len(),
            });
        }
        let (g, b, s, d) = (c[GLUCOSE], c[BMI], c[SBP], c[DBP]);
        if ![g, b, s, d].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("risk inputs"));
        }
        let look = |t: &StepTable, x: f64, name: &str| {
            if t.warn_below && x < t.breaks[0] {
                log::warn!("{name} {x} is below the first risk-table break {}", t.breaks[0]);
            }
            t.lookup(x)
        };
        Ok([
            look(&self.bmi, b, "BMI"),
            look(&self.glucose, g, "glucose"),
            look(&self.sbp, s, "SBP"),
            look(&self.dbp, d, "DBP"),
        ])
    }

    pub fn risk(&self, state: &State) -> Result<f64> {
        Ok(self.components(state)?.iter().sum())
    }
}

/// Risk under the default tables.
pub fn risk(state: &State) -> Result<f64> {
    RiskTables::default().risk(state)
}

/// `1 + tanh(-risk - 0.002 (μ / 1000)²)`.
pub fn reward_from(risk: f64, mu: f64) -> f64 {
    let m = mu / 1000.0;
    1.0 + (-risk - STEP_PENALTY * m * m).tanh()
}

/// Shaped reward of taking LQD action `action` in `state`.
pub fn shaped_reward(state: &State, action: &LqdFunction) -> Result<f64> {
    shaped_reward_with(&RiskTables::default(), state, action)
}

pub fn shaped_reward_with(tables: &RiskTables, state: &State, action: &LqdFunction) -> Result<f64> {
    let mu = mean_steps(action)?;
    Ok(reward_from(tables.risk(state)?, mu))
}
