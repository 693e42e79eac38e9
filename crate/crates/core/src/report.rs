//! Learned-versus-behavior summaries: distributions of 90-day mean steps and
//! per-subgroup mean quantile curves.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::{lqd_inverse, neighbor_anchor, LqdFunction};
use crate::error::{Error, Result};
use crate::fqe::ActionMap;
use crate::ingest::{discretize, SubgroupLabel, SUBGROUP_LEVELS};
use crate::io::write_table;
use crate::model::{Dataset, GridFunction, ScalingRecord, Transition};
use crate::svg::{Plot, Series};
use crate::util::{quantile_sorted, try_par_map};

/// Quantile levels marking low / moderate / high activity periods.
pub const ACTIVITY_MARKERS: [f64; 2] = [0.33, 0.67];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSummary {
    pub label: SubgroupLabel,
    pub observations: usize,
    pub subjects: usize,
    /// Mean learned quantile function on the action grid.
    pub learned: Vec<f64>,
    pub behavior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportData {
    pub p: Vec<f64>,
    /// Per-transition mean steps under the learned and behavior actions.
    pub mu_learned: Vec<f64>,
    pub mu_behavior: Vec<f64>,
    /// Empirical quantile functions of the two mean-steps samples, at `p`.
    pub mu_learned_quantiles: Vec<f64>,
    pub mu_behavior_quantiles: Vec<f64>,
    pub subgroups: Vec<SubgroupSummary>,
}

fn anchor_for(dataset: &Dataset, scaling: &ScalingRecord, t: &Transition) -> Result<f64> {
    match t.action_anchor {
        Some(a) => Ok(a),
        None => neighbor_anchor(dataset, scaling, &t.state, 10),
    }
}

fn empirical_quantiles(values: &[f64], p: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    p.iter().map(|&pi| quantile_sorted(&s, pi)).collect()
}

/// Builds the report from a per-transition learned action. Subgroups are
/// formed only for ingested (anchored) six-covariate datasets.
pub fn report_with(dataset: &Dataset, learned: &(dyn Fn(&Transition) -> Result<GridFunction> + Sync)) -> Result<ReportData> {
    let scaling = ScalingRecord::fit(dataset)?;
    let trs = dataset.transitions();
    // simulated datasets carry no anchors; quantiles are then relative to 0
    let anchored = trs.iter().any(|t| t.action_anchor.is_some());
    if !anchored {
        log::warn!("no recorded anchors; using 0 as the support start");
    }
    let rows = try_par_map(trs.len(), |i| -> Result<_> {
        let t = &trs[i];
        let anchor = if anchored { anchor_for(dataset, &scaling, t)? } else { 0.0 };
        let a_l = learned(t)?;
        let q_l = lqd_inverse(&LqdFunction::new(a_l, anchor)?)?.quantile;
        let q_b = lqd_inverse(&LqdFunction::new(t.action.clone(), anchor)?)?.quantile;
        Ok((q_l, q_b))
    })?;
    let mu_learned: Vec<f64> = rows.iter().map(|r| r.0.mean()).collect();
    let mu_behavior: Vec<f64> = rows.iter().map(|r| r.1.mean()).collect();
    let p = dataset.grid().points().to_vec();
    let g = p.len();

    let mut groups: BTreeMap<SubgroupLabel, (Vec<usize>, BTreeSet<&str>)> = BTreeMap::new();
    if anchored && dataset.state_dim() == 6 {
        for (i, t) in trs.iter().enumerate() {
            for label in discretize(&t.state)? {
                let e = groups.entry(label).or_default();
                e.0.push(i);
                e.1.insert(t.subject_id.as_str());
            }
        }
    }
    let mut subgroups = Vec::new();
    for (cov, levels) in SUBGROUP_LEVELS {
        for level in levels {
            let label = SubgroupLabel {
                covariate: cov.to_string(),
                level: level.to_string(),
            };
            let Some((idx, subj)) = groups.get(&label) else {
                continue;
            };
            let mean = |learned: bool| {
                let mut m = vec![0.0; g];
                for &i in idx {
                    let q = if learned { &rows[i].0 } else { &rows[i].1 };
                    for (acc, v) in m.iter_mut().zip(q.values()) {
                        *acc += v;
                    }
                }
                m.iter_mut().for_each(|v| *v /= idx.len() as f64);
                m
            };
            subgroups.push(SubgroupSummary {
                label: label.clone(),
                observations: idx.len(),
                subjects: subj.len(),
                learned: mean(true),
                behavior: mean(false),
            });
        }
    }
    Ok(ReportData {
        mu_learned_quantiles: empirical_quantiles(&mu_learned, &p),
        mu_behavior_quantiles: empirical_quantiles(&mu_behavior, &p),
        p,
        mu_learned,
        mu_behavior,
        subgroups,
    })
}

/// Report for a state-to-action policy.
pub fn report(policy: &dyn ActionMap, dataset: &Dataset) -> Result<ReportData> {
    report_with(dataset, &|t: &Transition| policy.act(&t.state))
}

/// Writes CSVs and SVGs into `dir`; returns every file written.
pub fn write_report(dir: &Path, data: &ReportData) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let h = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    let path = dir.join("mu_quantiles.csv");
    let rows: Vec<Vec<f64>> = (0..data.p.len())
        .map(|i| vec![data.p[i], data.mu_learned_quantiles[i], data.mu_behavior_quantiles[i]])
        .collect();
    write_table(&path, &h(&["p", "learned", "behavior"]), &rows)?;
    files.push(path);

    let path = dir.join("mu_per_transition.csv");
    let rows: Vec<Vec<f64>> = data
        .mu_learned
        .iter()
        .zip(&data.mu_behavior)
        .map(|(&l, &b)| vec![l, b])
        .collect();
    write_table(&path, &h(&["learned", "behavior"]), &rows)?;
    files.push(path);

    let mut plot = Plot::new("90-day mean steps", "p", "steps/day");
    plot.series.push(Series::new("learned", data.p.clone(), data.mu_learned_quantiles.clone(), "#c0392b"));
    plot.series.push(Series::new("behavior", data.p.clone(), data.mu_behavior_quantiles.clone(), "black"));
    plot.legend = 2;
    let path = dir.join("mu_quantiles.svg");
    std::fs::write(&path, plot.to_svg()).map_err(|e| Error::io(&path, e))?;
    files.push(path);

    let path = dir.join("subgroup_counts.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| crate::io::csv_err(&path, e))?;
    w.write_record(["covariate", "level", "observations", "subjects"])
        .map_err(|e| crate::io::csv_err(&path, e))?;
    for s in &data.subgroups {
        w.write_record([
            s.label.covariate.clone(),
            s.label.level.clone(),
            s.observations.to_string(),
            s.subjects.to_string(),
        ])
        .map_err(|e| crate::io::csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    files.push(path);

    let palette = ["#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];
    for (cov, _) in SUBGROUP_LEVELS {
        let groups: Vec<&SubgroupSummary> = data.subgroups.iter().filter(|s| s.label.covariate == cov).collect();
        if groups.is_empty() {
            continue;
        }
        let mut plot = Plot::new(format!("Mean quantile functions by {cov}"), "p", "steps/day");
        plot.markers = ACTIVITY_MARKERS.to_vec();
        for (k, s) in groups.iter().enumerate() {
            let c = palette[k % palette.len()];
            plot.series
                .push(Series::new(format!("{} learned", s.label.level), data.p.clone(), s.learned.clone(), c));
            plot.series.push(
                Series::new(format!("{} behavior", s.label.level), data.p.clone(), s.behavior.clone(), c).dashed(),
            );
            let path = dir.join(format!("subgroup_{}_{}.csv", cov.to_lowercase(), s.label.level.to_lowercase()));
            let rows: Vec<Vec<f64>> = (0..data.p.len())
                .map(|i| vec![data.p[i], s.learned[i], s.behavior[i]])
                .collect();
            write_table(&path, &h(&["p", "learned", "behavior"]), &rows)?;
            files.push(path);
        }
        plot.legend = plot.series.len();
        let path = dir.join(format!("subgroup_{}.svg", cov.to_lowercase()));
        std::fs::write(&path, plot.to_svg()).map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    Ok(files)
}
