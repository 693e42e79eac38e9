//! Raw longitudinal CSVs to a [`Dataset`] of 90-day decision steps.
//!
//! Inputs are three CSV files:
//!
//! - steps: `subject_id,date,steps` (empty `steps` = missing day)
//! - biomarkers: `subject_id,date,name,value` with `name` one of
//!   `glucose`, `bmi`, `sbp`, `dbp`
//! - demographics: `subject_id,sex,birth_date` with `sex` `M` or `F`
//!
//! Dates are `YYYY-MM-DD`. States use the layout of [`crate::reward`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::density::{sample_to_lqd, KdeOptions, LqdFunction, StepSample};
use crate::error::{Error, Result};
use crate::io::{csv_err, parse_f64};
use crate::model::{Dataset, Grid, State, Transition};
use crate::reward::{shaped_reward_with, RiskTables, AGE, BMI, DBP, GLUCOSE, SBP, SEX};
use crate::util::try_par_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Biomarker {
    Glucose,
    Bmi,
    Sbp,
    Dbp,
}

impl Biomarker {
    pub const ALL: [Biomarker; 4] = [Biomarker::Glucose, Biomarker::Bmi, Biomarker::Sbp, Biomarker::Dbp];

    pub fn parse(s: &str) -> Option<Biomarker> {
        match s.to_ascii_lowercase().as_str() {
            "glucose" => Some(Biomarker::Glucose),
            "bmi" => Some(Biomarker::Bmi),
            "sbp" => Some(Biomarker::Sbp),
            "dbp" => Some(Biomarker::Dbp),
            _ => None,
        }
    }

    /// Position in the state vector.
    pub fn state_index(self) -> usize {
        match self {
            Biomarker::Glucose => GLUCOSE,
            Biomarker::Bmi => BMI,
            Biomarker::Sbp => SBP,
            Biomarker::Dbp => DBP,
        }
    }
}

impl fmt::Display for Biomarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Biomarker::Glucose => "glucose",
            Biomarker::Bmi => "bmi",
            Biomarker::Sbp => "sbp",
            Biomarker::Dbp => "dbp",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

impl Sex {
    /// State encoding: M = 1, F = 0.
    pub fn code(self) -> f64 {
        match self {
            Sex::M => 1.0,
            Sex::F => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub subject_id: String,
    pub date: NaiveDate,
    pub steps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiomarkerRow {
    pub subject_id: String,
    pub date: NaiveDate,
    pub name: Biomarker,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demographic {
    pub subject_id: String,
    pub sex: Sex,
    pub birth_date: NaiveDate,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawRecords {
    pub steps: Vec<StepRow>,
    pub biomarkers: Vec<BiomarkerRow>,
    pub demographics: Vec<Demographic>,
}

fn parse_date(path: &Path, row: usize, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| Error::parse(path, format!("row {row}: cannot parse date '{s}' (expected YYYY-MM-DD)")))
}

fn records(path: &Path, columns: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != columns {
        return Err(Error::parse(path, format!("expected header {}", columns.join(","))));
    }
    rdr.records()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

impl RawRecords {
    pub fn read(steps: &Path, biomarkers: &Path, demographics: &Path) -> Result<Self> {
        let mut raw = RawRecords::default();
        for (i, r) in records(steps, &["subject_id", "date", "steps"])?.iter().enumerate() {
            raw.steps.push(StepRow {
                subject_id: r[0].to_string(),
                date: parse_date(steps, i + 1, &r[1])?,
                steps: if r[2].is_empty() {
                    None
                } else {
                    Some(parse_f64(steps, i + 1, &r[2])?)
                },
            });
        }
        for (i, r) in records(biomarkers, &["subject_id", "date", "name", "value"])?
            .iter()
            .enumerate()
        {
            let name = Biomarker::parse(&r[2])
                .ok_or_else(|| Error::parse(biomarkers, format!("row {}: unknown biomarker '{}'", i + 1, &r[2])))?;
            raw.biomarkers.push(BiomarkerRow {
                subject_id: r[0].to_string(),
                date: parse_date(biomarkers, i + 1, &r[1])?,
                name,
                value: parse_f64(biomarkers, i + 1, &r[3])?,
            });
        }
        for (i, r) in records(demographics, &["subject_id", "sex", "birth_date"])?
            .iter()
            .enumerate()
        {
            let sex = match &r[1] {
                "M" | "m" => Sex::M,
                "F" | "f" => Sex::F,
                other => {
                    return Err(Error::parse(demographics, format!("row {}: sex must be M or F, got '{other}'", i + 1)))
                }
            };
            raw.demographics.push(Demographic {
                subject_id: r[0].to_string(),
                sex,
                birth_date: parse_date(demographics, i + 1, &r[2])?,
            });
        }
        Ok(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Values below this are implausible.
    pub min_steps: f64,
    /// Values above this are implausible.
    pub max_steps: f64,
    /// Values above this (after the plausibility filter) are outliers.
    pub outlier_steps: f64,
    pub window_days: i64,
    pub windows: usize,
    /// Valid step-days a window needs to be kept.
    pub min_days: usize,
    /// Distinct measurement days each biomarker needs within the observation window.
    pub min_measurements: usize,
    pub min_transitions: usize,
    pub grid_points: usize,
    pub kde: KdeOptions,
    pub risk_tables: RiskTables,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            min_steps: 100.0,
            max_steps: 50_000.0,
            outlier_steps: 22_300.0,
            window_days: 90,
            windows: 11,
            min_days: crate::density::DEFAULT_MIN_DAYS,
            min_measurements: 3,
            min_transitions: 2,
            grid_points: 101,
            kde: KdeOptions::default(),
            risk_tables: RiskTables::default(),
        }
    }
}

impl IngestOptions {
    /// Age increment per decision step, in years.
    pub fn age_step(&self) -> f64 {
        self.window_days as f64 / 365.25
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub total: usize,
    pub missing: usize,
    pub implausible_low: usize,
    pub implausible_high: usize,
    pub outliers: usize,
    pub kept: usize,
}

/// Marks implausible values and then outliers as missing.
pub fn clean_value(v: Option<f64>, opts: &IngestOptions) -> Option<f64> {
    let v = v?;
    if v < opts.min_steps || v > opts.max_steps || v > opts.outlier_steps {
        None
    } else {
        Some(v)
    }
}

pub fn clean_steps(rows: &[StepRow], opts: &IngestOptions) -> (Vec<StepRow>, CleanReport) {
    let mut rep = CleanReport {
        total: rows.len(),
        ..CleanReport::default()
    };
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let steps = match r.steps {
            None => {
                rep.missing += 1;
                None
            }
            Some(v) if v < opts.min_steps => {
                rep.implausible_low += 1;
                None
            }
            Some(v) if v > opts.max_steps => {
                rep.implausible_high += 1;
                None
            }
            Some(v) if v > opts.outlier_steps => {
                rep.outliers += 1;
                None
            }
            Some(v) => {
                rep.kept += 1;
                Some(v)
            }
        };
        out.push(StepRow {
            subject_id: r.subject_id.clone(),
            date: r.date,
            steps,
        });
    }
    (out, rep)
}

/// Date of each subject's first glucose measurement.
pub fn baselines(biomarkers: &[BiomarkerRow]) -> BTreeMap<String, NaiveDate> {
    let mut out: BTreeMap<String, NaiveDate> = BTreeMap::new();
    for b in biomarkers.iter().filter(|b| b.name == Biomarker::Glucose) {
        out.entry(b.subject_id.clone())
            .and_modify(|d| *d = (*d).min(b.date))
            .or_insert(b.date);
    }
    out
}

/// One 90-day window of valid step counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: usize,
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

impl Window {
    pub fn valid_days(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedWindow {
    pub subject_id: String,
    pub window: usize,
    pub valid_days: usize,
    pub reason: String,
}

/// Splits one subject's cleaned steps into windows starting at `baseline`.
/// Same-day duplicates are averaged. Returns kept windows and dropped ones.
pub fn build_windows(
    subject_id: &str,
    steps: &[StepRow],
    baseline: NaiveDate,
    opts: &IngestOptions,
) -> (Vec<Window>, Vec<DroppedWindow>) {
    let mut buckets: Vec<BTreeMap<NaiveDate, Vec<f64>>> = vec![BTreeMap::new(); opts.windows];
    for r in steps.iter().filter(|r| r.subject_id == subject_id) {
        let (Some(v), day) = (r.steps, (r.date - baseline).num_days()) else {
            continue;
        };
        if day < 0 {
            continue;
        }
        let w = (day / opts.window_days) as usize;
        if w < opts.windows {
            buckets[w].entry(r.date).or_default().push(v);
        }
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (w, days) in buckets.into_iter().enumerate() {
        let values: Vec<f64> = days
            .values()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        if values.len() < opts.min_days {
            dropped.push(DroppedWindow {
                subject_id: subject_id.to_string(),
                window: w,
                valid_days: values.len(),
                reason: format!("fewer than {} valid step days", opts.min_days),
            });
        } else {
            kept.push(Window {
                index: w,
                start: baseline + chrono::Days::new(w as u64 * opts.window_days as u64),
                values,
            });
        }
    }
    (kept, dropped)
}

/// Same-day measurements averaged, sorted by date.
pub fn daily_average(rows: &[(NaiveDate, f64)]) -> Vec<(NaiveDate, f64)> {
    let mut m: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for &(d, v) in rows {
        let e = m.entry(d).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    m.into_iter().map(|(d, (s, n))| (d, s / n as f64)).collect()
}

/// Most recent value on or before `at`.
pub fn locf_value(series: &[(NaiveDate, f64)], at: NaiveDate) -> Option<f64> {
    let k = series.partition_point(|(d, _)| *d <= at);
    (k > 0).then(|| series[k - 1].1)
}

/// Biomarker values `(glucose, bmi, sbp, dbp)` at each boundary, `None` where
/// some biomarker has no observation yet.
pub fn locf_align(
    subject_id: &str,
    biomarkers: &[BiomarkerRow],
    boundaries: &[NaiveDate],
) -> Vec<Option<[f64; 4]>> {
    let series: Vec<Vec<(NaiveDate, f64)>> = Biomarker::ALL
        .iter()
        .map(|&name| {
            let rows: Vec<(NaiveDate, f64)> = biomarkers
                .iter()
                .filter(|b| b.subject_id == subject_id && b.name == name)
                .map(|b| (b.date, b.value))
                .collect();
            daily_average(&rows)
        })
        .collect();
    boundaries
        .iter()
        .map(|&at| {
            let mut out = [0.0; 4];
            for (k, s) in series.iter().enumerate() {
                out[k] = locf_value(s, at)?;
            }
            Some(out)
        })
        .collect()
}

/// Per-subject inputs to [`assemble_transitions`].
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectWindows {
    pub subject_id: String,
    pub windows: Vec<Window>,
    /// State at the start of window `w`, indexed by window index.
    pub states: Vec<Option<State>>,
}

/// Transitions between consecutive kept windows: `S_t` at boundary `t`,
/// `A_t` the LQD of window `t`'s steps, `S_{t+1}` at boundary `t + 1`.
/// Returns the subject's initial state and transitions.
pub fn assemble_transitions(
    subject: &SubjectWindows,
    grid: &Arc<Grid>,
    kde: &KdeOptions,
    reward: &(dyn Fn(&State, &LqdFunction) -> Result<f64> + Sync),
) -> Result<Option<(State, Vec<Transition>)>> {
    let mut out: Vec<Transition> = Vec::new();
    let by_index: BTreeMap<usize, &Window> = subject.windows.iter().map(|w| (w.index, w)).collect();
    let state_at = |w: usize| subject.states.get(w).cloned().flatten();
    for (&w, win) in &by_index {
        if !by_index.contains_key(&(w + 1)) {
            continue;
        }
        let (Some(s), Some(next)) = (state_at(w), state_at(w + 1)) else {
            continue;
        };
        let sample = StepSample::new(win.values.clone(), format!("{}:{w}", subject.subject_id))?;
        let lqd = sample_to_lqd(&sample, kde, grid)?;
        let r = reward(&s, &lqd)?;
        out.push(Transition {
            state: s,
            action: lqd.function().clone(),
            reward: r,
            next_state: next,
            subject_id: subject.subject_id.clone(),
            time_index: w,
            action_anchor: Some(lqd.anchor()),
        });
    }
    Ok(out.first().map(|t| t.state.clone()).map(|s0| (s0, out)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub subject_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub steps: CleanReport,
    pub subjects_seen: usize,
    pub subjects_retained: usize,
    pub windows_kept: usize,
    pub transitions: usize,
    pub excluded_subjects: Vec<Exclusion>,
    pub dropped_windows: Vec<DroppedWindow>,
    /// Kept windows whose boundary predates an observation of some biomarker.
    pub unaligned_boundaries: Vec<DroppedWindow>,
}

/// Full pipeline: cleaning, windows, LOCF, actions and rewards.
pub fn ingest(raw: &RawRecords, opts: &IngestOptions) -> Result<(Dataset, IngestReport)> {
    let grid = Grid::uniform(opts.grid_points)?;
    let (cleaned, clean_report) = clean_steps(&raw.steps, opts);
    let base = baselines(&raw.biomarkers);
    let demo: BTreeMap<&str, &Demographic> = raw.demographics.iter().map(|d| (d.subject_id.as_str(), d)).collect();

    let mut seen: Vec<String> = raw
        .steps
        .iter()
        .map(|r| r.subject_id.clone())
        .chain(raw.biomarkers.iter().map(|b| b.subject_id.clone()))
        .chain(raw.demographics.iter().map(|d| d.subject_id.clone()))
        .collect();
    seen.sort();
    seen.dedup();

    let span = opts.window_days * opts.windows as i64;
    let mut excluded = Vec::new();
    let mut dropped_windows = Vec::new();
    let mut unaligned = Vec::new();
    let mut prepared = Vec::new();
    for id in &seen {
        let exclude = |reason: String| Exclusion {
            subject_id: id.clone(),
            reason,
        };
        let Some(&b0) = base.get(id) else {
            excluded.push(exclude("no glucose measurement to set the baseline".into()));
            continue;
        };
        let Some(d) = demo.get(id.as_str()) else {
            excluded.push(exclude("no demographics row".into()));
            continue;
        };
        let in_window: Vec<&BiomarkerRow> = raw
            .biomarkers
            .iter()
            .filter(|b| &b.subject_id == id && (0..span).contains(&(b.date - b0).num_days()))
            .collect();
        if let Some(name) = Biomarker::ALL.iter().find(|&&name| {
            let mut days: Vec<NaiveDate> = in_window.iter().filter(|b| b.name == name).map(|b| b.date).collect();
            days.sort();
            days.dedup();
            days.len() < opts.min_measurements
        }) {
            excluded.push(exclude(format!("fewer than {} {name} measurements", opts.min_measurements)));
            continue;
        }
        let (windows, dropped) = build_windows(id, &cleaned, b0, opts);
        dropped_windows.extend(dropped);
        let boundaries: Vec<NaiveDate> = (0..opts.windows)
            .map(|w| b0 + chrono::Days::new(w as u64 * opts.window_days as u64))
            .collect();
        let bio = locf_align(id, &raw.biomarkers, &boundaries);
        let age0 = (b0 - d.birth_date).num_days() as f64 / 365.25;
        let states: Vec<Option<State>> = bio
            .iter()
            .enumerate()
            .map(|(w, v)| {
                v.map(|v| {
                    let mut s = vec![0.0; 6];
                    s[GLUCOSE] = v[0];
                    s[BMI] = v[1];
                    s[SBP] = v[2];
                    s[DBP] = v[3];
                    s[SEX] = d.sex.code();
                    s[AGE] = age0 + w as f64 * opts.age_step();
                    State::new(s)
                })
                .transpose()
            })
            .collect::<Result<_>>()?;
        for w in &windows {
            if states[w.index].is_none() {
                unaligned.push(DroppedWindow {
                    subject_id: id.clone(),
                    window: w.index,
                    valid_days: w.valid_days(),
                    reason: "a biomarker has no observation before this boundary".into(),
                });
            }
        }
        prepared.push(SubjectWindows {
            subject_id: id.clone(),
            windows,
            states,
        });
    }

    let tables = &opts.risk_tables;
    let reward = |s: &State, a: &LqdFunction| shaped_reward_with(tables, s, a);
    let assembled = try_par_map(prepared.len(), |i| assemble_transitions(&prepared[i], &grid, &opts.kde, &reward))?;

    let mut initial = Vec::new();
    let mut transitions = Vec::new();
    let mut windows_kept = 0;
    for (sub, res) in prepared.iter().zip(assembled) {
        match res {
            Some((s0, trs)) if trs.len() >= opts.min_transitions => {
                windows_kept += sub.windows.len();
                initial.push(s0);
                transitions.extend(trs);
            }
            other => {
                let n = other.map_or(0, |(_, t)| t.len());
                excluded.push(Exclusion {
                    subject_id: sub.subject_id.clone(),
                    reason: format!("{n} transitions, need at least {}", opts.min_transitions),
                });
            }
        }
    }
    excluded.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let report = IngestReport {
        steps: clean_report,
        subjects_seen: seen.len(),
        subjects_retained: initial.len(),
        windows_kept,
        transitions: transitions.len(),
        excluded_subjects: excluded,
        dropped_windows,
        unaligned_boundaries: unaligned,
    };
    if transitions.is_empty() {
        return Err(Error::invalid("no subject produced enough transitions"));
    }
    Ok((Dataset::new(transitions, initial, grid)?, report))
}

/// A reporting subgroup level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubgroupLabel {
    pub covariate: String,
    pub level: String,
}

impl SubgroupLabel {
    fn new(covariate: &str, level: &str) -> Self {
        SubgroupLabel {
            covariate: covariate.to_string(),
            level: level.to_string(),
        }
    }
}

/// Levels in display order, per covariate.
pub const SUBGROUP_LEVELS: [(&str, &[&str]); 5] = [
    ("Glucose", &["Normal", "Borderline", "High", "Low"]),
    ("BMI", &["Normal", "Overweight", "Obese"]),
    ("BP", &["Normal", "Elevated", "Hypertension"]),
    ("Age", &["Younger", "Middle", "Older"]),
    ("Sex", &["M", "F"]),
];

pub fn glucose_level(g: f64) -> &'static str {
    if g < 70.0 {
        "Low"
    } else if g < 80.0 {
        "Borderline"
    } else if g < 120.0 {
        "Normal"
    } else if g < 150.0 {
        "Borderline"
    } else {
        "High"
    }
}

/// BMI below 18.5 has no level of its own and is reported as Normal.
pub fn bmi_level(b: f64) -> &'static str {
    if b < 25.0 {
        "Normal"
    } else if b < 30.0 {
        "Overweight"
    } else {
        "Obese"
    }
}

pub fn bp_level(sbp: f64, dbp: f64) -> &'static str {
    if sbp >= 130.0 || dbp >= 80.0 {
        "Hypertension"
    } else if sbp >= 120.0 {
        "Elevated"
    } else {
        "Normal"
    }
}

pub fn age_level(age: f64) -> &'static str {
    if age < 40.0 {
        "Younger"
    } else if age < 60.0 {
        "Middle"
    } else {
        "Older"
    }
}

/// One label per covariate for an application-layout state.
pub fn discretize(state: &State) -> Result<Vec<SubgroupLabel>> {
    let c = state.components();
    if c.len() != 6 {
        return Err(Error::DimensionMismatch {
            expected: 6,
            found: c.len(),
        });
    }
    Ok(vec![
        SubgroupLabel::new("Glucose", glucose_level(c[GLUCOSE])),
        SubgroupLabel::new("BMI", bmi_level(c[BMI])),
        SubgroupLabel::new("BP", bp_level(c[SBP], c[DBP])),
        SubgroupLabel::new("Age", age_level(c[AGE])),
        SubgroupLabel::new("Sex", if c[SEX] >= 0.5 { "M" } else { "F" }),
    ])
}
