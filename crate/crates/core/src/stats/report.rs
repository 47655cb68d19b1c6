//! Assembles every comparison into one bundle and serializes it as JSON
//! tables, CSV tables, and static SVG plots.

use super::anova::{rank_permutation_anova, EffectsTable, PermutationMode};
use super::dataset::{CohortDataset, Group, CENSORED_IMPUTED_S};
use super::descriptive::{descriptive_summary, DescriptiveSummary};
use super::kde::{kde_curve, silverman_bandwidth};
use super::mwu::{mann_whitney_test, MwuMode};
use super::slices::{condition_slice_tests, subset_comparison, ConditionSliceRow, SubsetRow};
use super::wilson::wilson_interval;
use super::StatsError;
use crate::scenario::{enumerate_conditions, Action};
use crate::trajectory::{first_wait_position, never_waited, GridTrace};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveRow {
    pub group: Group,
    pub convention: String,
    pub summary: DescriptiveSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertRow {
    pub metric: String,
    pub group: Group,
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertTestRow {
    pub metric: String,
    pub u: f64,
    pub p: f64,
    pub mode_used: MwuMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub group: Group,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeSeries {
    pub group: Group,
    pub bandwidth: f64,
    pub points: Vec<(f64, f64)>,
}

/// A binomial proportion with its Wilson interval, labeled by what was
/// counted (a grid position, an action, or a condition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub group: Group,
    pub label: String,
    pub k: u64,
    pub n: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBehaviorRow {
    pub group: Group,
    pub condition: String,
    pub n_traces: usize,
    pub forward: usize,
    pub stop: usize,
    pub backward: usize,
    pub first_wait: [usize; 5],
    pub never_waited: usize,
    pub crossed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub seed: u64,
    pub n_perm: u64,
    pub notices: Vec<String>,
    pub descriptives: Vec<DescriptiveRow>,
    pub effects: Option<EffectsTable>,
    pub condition_slices: Option<Vec<ConditionSliceRow>>,
    pub subsets_k5: Option<Vec<SubsetRow>>,
    pub subsets_k10: Option<Vec<SubsetRow>>,
    pub likert: Vec<LikertRow>,
    pub likert_tests: Vec<LikertTestRow>,
    pub kde: Vec<KdeSeries>,
    pub boxes: Vec<BoxSummary>,
    pub first_wait: Vec<ProportionRow>,
    pub decision_mix: Vec<ProportionRow>,
    pub never_waited: Vec<ProportionRow>,
    pub grid_behavior: Vec<GridBehaviorRow>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

fn likert_values(dataset: &CohortDataset, group: Group, metric: &str) -> Vec<f64> {
    dataset
        .group_observations(group)
        .filter_map(|o| o.likert.get(metric).map(|&v| v as f64))
        .collect()
}

fn proportion_row(
    group: Group,
    label: String,
    k: u64,
    n: u64,
) -> Result<ProportionRow, StatsError> {
    let e = wilson_interval(k, n, 0.95)?;
    Ok(ProportionRow {
        group,
        label,
        k,
        n,
        estimate: k as f64 / n as f64,
        lo: e.lo,
        hi: e.hi,
    })
}

impl ReportBundle {
    /// Run the full comparison pipeline. Group-level tests are skipped with
    /// a notice when only one cohort is present; everything computed is
    /// deterministic in (dataset, traces, n_perm, seed).
    pub fn compute(
        dataset: &CohortDataset,
        human_traces: &[GridTrace],
        vlm_traces: &[GridTrace],
        n_perm: u64,
        seed: u64,
    ) -> Result<ReportBundle, StatsError> {
        if dataset.is_empty() {
            return Err(StatsError::Design("empty dataset, nothing to report".into()));
        }
        let mut notices = Vec::new();
        let groups_present: Vec<Group> = [Group::Human, Group::Vlm]
            .into_iter()
            .filter(|&g| dataset.group_observations(g).next().is_some())
            .collect();
        let both = groups_present.len() == 2;
        if !both {
            notices.push(format!(
                "only the {} cohort is present; group comparisons skipped",
                groups_present[0]
            ));
        }

        let mut descriptives = Vec::new();
        for &group in &groups_present {
            descriptives.push(DescriptiveRow {
                group,
                convention: "censored excluded".into(),
                summary: descriptive_summary(&dataset.crossing_times(group))?,
            });
            let imputed: Vec<Option<f64>> = dataset
                .imputed_crossing_times(group)
                .into_iter()
                .map(Some)
                .collect();
            descriptives.push(DescriptiveRow {
                group,
                convention: format!("censored imputed at {CENSORED_IMPUTED_S} s"),
                summary: descriptive_summary(&imputed)?,
            });
        }

        let effects = if both {
            Some(rank_permutation_anova(
                dataset,
                PermutationMode::Sampled { n_perm },
                seed,
            )?)
        } else {
            None
        };
        let condition_slices = if both {
            Some(condition_slice_tests(dataset)?)
        } else {
            None
        };
        let full_cohorts = both
            && dataset.ids(Group::Human).len() == 20
            && dataset.ids(Group::Vlm).len() == 20;
        let (subsets_k5, subsets_k10) = if full_cohorts {
            (
                Some(subset_comparison(dataset, 5, seed)?),
                Some(subset_comparison(dataset, 10, seed)?),
            )
        } else {
            if both {
                notices.push("cohorts are not 20 ids each; subset comparison skipped".into());
            }
            (None, None)
        };

        let mut metrics: BTreeSet<String> = BTreeSet::new();
        for obs in &dataset.observations {
            metrics.extend(obs.likert.keys().cloned());
        }
        let mut likert = Vec::new();
        let mut likert_tests = Vec::new();
        for metric in &metrics {
            let mut sides = Vec::new();
            for &group in &groups_present {
                let values = likert_values(dataset, group, metric);
                if values.is_empty() {
                    continue;
                }
                let opts: Vec<Option<f64>> = values.iter().copied().map(Some).collect();
                let s = descriptive_summary(&opts)?;
                likert.push(LikertRow {
                    metric: metric.clone(),
                    group,
                    n: s.n,
                    mean: s.mean,
                    sd: s.sd,
                });
                sides.push((group, values));
            }
            if sides.len() == 2 {
                let r = mann_whitney_test(&sides[0].1, &sides[1].1, MwuMode::Auto)?;
                likert_tests.push(LikertTestRow {
                    metric: metric.clone(),
                    u: r.u,
                    p: r.p,
                    mode_used: r.mode_used,
                });
            }
        }

        let mut kde = Vec::new();
        let mut boxes = Vec::new();
        for &group in &groups_present {
            let times: Vec<f64> = dataset
                .crossing_times(group)
                .into_iter()
                .flatten()
                .collect();
            if times.len() >= 2 {
                let h = silverman_bandwidth(&times);
                if h > 0.0 {
                    kde.push(KdeSeries {
                        group,
                        bandwidth: h,
                        points: kde_curve(&times, Some(h))?,
                    });
                } else {
                    notices.push(format!(
                        "{group} crossing times are constant; kde curve skipped"
                    ));
                }
                let mut sorted = times.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                boxes.push(BoxSummary {
                    group,
                    n: sorted.len(),
                    min: sorted[0],
                    q1: quantile(&sorted, 0.25),
                    median: quantile(&sorted, 0.5),
                    q3: quantile(&sorted, 0.75),
                    max: sorted[sorted.len() - 1],
                });
            }
        }

        let mut first_wait = Vec::new();
        let mut decision_mix = Vec::new();
        let mut never_waited_rows = Vec::new();
        let mut grid_behavior = Vec::new();
        for (group, traces) in [(Group::Human, human_traces), (Group::Vlm, vlm_traces)] {
            if traces.is_empty() {
                continue;
            }
            let n = traces.len() as u64;
            // cumulative share of traces whose first stop is at or before p
            for p in 0..=4u8 {
                let k = traces
                    .iter()
                    .filter(|t| first_wait_position(t).is_some_and(|w| w <= p))
                    .count() as u64;
                first_wait.push(proportion_row(group, p.to_string(), k, n)?);
            }
            let mut action_counts = BTreeMap::new();
            let mut total_decisions = 0u64;
            for t in traces {
                for e in &t.entries {
                    *action_counts.entry(e.action).or_insert(0u64) += 1;
                    total_decisions += 1;
                }
            }
            for action in [Action::Forward, Action::Stop, Action::Backward] {
                let k = action_counts.get(&action).copied().unwrap_or(0);
                decision_mix.push(proportion_row(
                    group,
                    action.to_string(),
                    k,
                    total_decisions,
                )?);
            }
            for condition in enumerate_conditions() {
                let in_cond: Vec<&GridTrace> =
                    traces.iter().filter(|t| t.condition == condition).collect();
                if in_cond.is_empty() {
                    continue;
                }
                let nw = in_cond.iter().filter(|t| never_waited(t)).count();
                never_waited_rows.push(proportion_row(
                    group,
                    condition.dir_name(),
                    nw as u64,
                    in_cond.len() as u64,
                )?);
                let mut row = GridBehaviorRow {
                    group,
                    condition: condition.dir_name(),
                    n_traces: in_cond.len(),
                    forward: 0,
                    stop: 0,
                    backward: 0,
                    first_wait: [0; 5],
                    never_waited: nw,
                    crossed: 0,
                };
                for t in &in_cond {
                    for e in &t.entries {
                        match e.action {
                            Action::Forward => row.forward += 1,
                            Action::Stop => row.stop += 1,
                            Action::Backward => row.backward += 1,
                        }
                    }
                    if let Some(w) = first_wait_position(t) {
                        row.first_wait[w as usize] += 1;
                    }
                    if t.crossing_time.is_some() {
                        row.crossed += 1;
                    }
                }
                grid_behavior.push(row);
            }
        }

        Ok(ReportBundle {
            seed,
            n_perm,
            notices,
            descriptives,
            effects,
            condition_slices,
            subsets_k5,
            subsets_k10,
            likert,
            likert_tests,
            kde,
            boxes,
            first_wait,
            decision_mix,
            never_waited: never_waited_rows,
            grid_behavior,
        })
    }
}

/// Published comparison numbers shipped with every report for side-by-side
/// reading. These are reference values, never recomputed by this tool.
fn reference_constants() -> serde_json::Value {
    serde_json::json!({
        "label": "reference, not recomputed",
        "crossing_time": {
            "human": {"mean_s": 5.07, "sd_s": 1.67},
            "vlm": {"mean_s": 5.25, "sd_s": 0.72},
        },
        "effects": {
            "Group": {"p": "0.8465"},
            "eHMI": {"f": 0.6607, "p": "0.5175"},
            "AV": {"f": 3.8741, "p": "0.0502"},
            "eHMI x AV": {"f": 1.6610, "p": "0.1922"},
            "eHMI x Group": {"f": 1.3428, "p": "0.2632"},
            "AV x Group": {"f": 8.9002, "p": "0.0032"},
            "eHMI x AV x Group": {"f": 4.1588, "p": "0.0168"},
        },
        "condition_slices": {
            "eye_stop": {"p": "0.00199"},
        },
        "likert": {
            "confidence": {"human": {"mean": 3.50, "sd": 1.05}, "vlm": {"mean": 4.53, "sd": 0.50}, "p": "<0.001"},
            "trust": {"human": {"mean": 3.03, "sd": 1.07}, "vlm": {"mean": 2.97, "sd": 0.96}, "p": "0.552"},
            "similarity": {"human": {"mean": 3.10, "sd": 0.97}, "vlm": {"mean": 4.00, "sd": 0.00}, "p": "<0.001"},
            "genuineness": {"human": {"mean": 3.95, "sd": 0.83}, "vlm": {"mean": 5.00, "sd": 0.00}, "p": "<0.001"},
            "acceptance": {"human": {"mean": 3.55, "sd": 0.76}, "vlm": {"mean": 3.50, "sd": 0.89}, "p": "0.877"},
            "helpfulness": {"human": {"mean": 3.80, "sd": 0.89}, "vlm": {"mean": 3.25, "sd": 0.72}, "p": "0.214"},
        },
    })
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn mode_str(mode: MwuMode) -> &'static str {
    match mode {
        MwuMode::Exact => "exact",
        MwuMode::NormalApprox => "normal-approx",
        MwuMode::Auto => "auto",
    }
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn effects_csv(bundle: &ReportBundle) -> Option<Vec<Vec<String>>> {
    let table = bundle.effects.as_ref()?;
    let mut rows = vec![vec![
        "effect".into(),
        "df1".into(),
        "df2".into(),
        "f".into(),
        "p".into(),
        "n_obs".into(),
        "n_censored_excluded".into(),
        "n_perm".into(),
        "seed".into(),
    ]];
    for e in &table.effects {
        rows.push(vec![
            e.effect.label().into(),
            e.df1.to_string(),
            e.df2.to_string(),
            e.f.to_string(),
            e.p.to_string(),
            table.n_obs.to_string(),
            table.n_censored_excluded.to_string(),
            table.n_perm.to_string(),
            table.seed.to_string(),
        ]);
    }
    Some(rows)
}

fn slices_csv(bundle: &ReportBundle) -> Option<Vec<Vec<String>>> {
    let slices = bundle.condition_slices.as_ref()?;
    let mut rows = vec![vec![
        "condition".into(),
        "n_human".into(),
        "n_vlm".into(),
        "n_censored_human".into(),
        "n_censored_vlm".into(),
        "u".into(),
        "p".into(),
        "mode".into(),
        "convention".into(),
    ]];
    for s in slices {
        rows.push(vec![
            s.condition.dir_name(),
            s.n_human.to_string(),
            s.n_vlm.to_string(),
            s.n_censored_human.to_string(),
            s.n_censored_vlm.to_string(),
            s.u.to_string(),
            s.p.to_string(),
            mode_str(s.mode_used).into(),
            s.convention.clone(),
        ]);
    }
    Some(rows)
}

fn subsets_csv(bundle: &ReportBundle) -> Option<Vec<Vec<String>>> {
    let k5 = bundle.subsets_k5.as_ref()?;
    let k10 = bundle.subsets_k10.as_ref()?;
    let mut rows = vec![vec![
        "k".into(),
        "partition".into(),
        "member_ids".into(),
        "n_human_times".into(),
        "n_vlm_times".into(),
        "u".into(),
        "p".into(),
        "mode".into(),
    ]];
    for s in k5.iter().chain(k10) {
        rows.push(vec![
            s.k.to_string(),
            s.partition_index.to_string(),
            s.member_ids.join(";"),
            s.n_human_times.to_string(),
            s.n_vlm_times.to_string(),
            s.u.to_string(),
            s.p.to_string(),
            mode_str(s.mode_used).into(),
        ]);
    }
    Some(rows)
}

fn likert_csv(bundle: &ReportBundle) -> Option<Vec<Vec<String>>> {
    if bundle.likert.is_empty() {
        return None;
    }
    let mut rows = vec![vec![
        "metric".into(),
        "group".into(),
        "n".into(),
        "mean".into(),
        "sd".into(),
        "u".into(),
        "p".into(),
        "mode".into(),
    ]];
    for l in &bundle.likert {
        let test = bundle.likert_tests.iter().find(|t| t.metric == l.metric);
        rows.push(vec![
            l.metric.clone(),
            l.group.to_string(),
            l.n.to_string(),
            opt_str(&l.mean),
            opt_str(&l.sd),
            test.map(|t| t.u.to_string()).unwrap_or_default(),
            test.map(|t| t.p.to_string()).unwrap_or_default(),
            test.map(|t| mode_str(t.mode_used).into())
                .unwrap_or_default(),
        ]);
    }
    Some(rows)
}

fn grid_csv(bundle: &ReportBundle) -> Option<Vec<Vec<String>>> {
    if bundle.grid_behavior.is_empty() {
        return None;
    }
    let mut header: Vec<String> = vec![
        "group".into(),
        "condition".into(),
        "n_traces".into(),
        "forward".into(),
        "stop".into(),
        "backward".into(),
    ];
    for p in 0..5 {
        header.push(format!("first_wait_p{p}"));
    }
    header.push("never_waited".into());
    header.push("crossed".into());
    let mut rows = vec![header];
    for g in &bundle.grid_behavior {
        let mut row = vec![
            g.group.to_string(),
            g.condition.clone(),
            g.n_traces.to_string(),
            g.forward.to_string(),
            g.stop.to_string(),
            g.backward.to_string(),
        ];
        for p in 0..5 {
            row.push(g.first_wait[p].to_string());
        }
        row.push(g.never_waited.to_string());
        row.push(g.crossed.to_string());
        rows.push(row);
    }
    Some(rows)
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 55.0;

fn group_color(group: Group) -> &'static str {
    match group {
        Group::Human => "#3572a5",
        Group::Vlm => "#c44536",
    }
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n\
         <text x=\"{:.2}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        SVG_W / 2.0
    )
}

fn svg_axes(x_label: &str, y_label: &str) -> String {
    let x0 = MARGIN;
    let y0 = SVG_H - MARGIN;
    let x1 = SVG_W - MARGIN;
    let y1 = MARGIN;
    format!(
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"black\"/>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{y_label}</text>\n",
        (x0 + x1) / 2.0,
        SVG_H - 14.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    )
}

fn svg_legend(groups: &[Group]) -> String {
    let mut out = String::new();
    for (i, &g) in groups.iter().enumerate() {
        let x = SVG_W - MARGIN - 110.0;
        let y = MARGIN + 8.0 + 18.0 * i as f64;
        let _ = write!(
            out,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\">{g}</text>\n",
            y - 10.0,
            group_color(g),
            x + 18.0,
            y
        );
    }
    out
}

struct Scale {
    x_min: f64,
    x_span: f64,
    y_min: f64,
    y_span: f64,
}

impl Scale {
    fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Scale {
        Scale {
            x_min,
            x_span: (x_max - x_min).max(1e-12),
            y_min,
            y_span: (y_max - y_min).max(1e-12),
        }
    }
    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.x_min) / self.x_span * (SVG_W - 2.0 * MARGIN)
    }
    fn y(&self, v: f64) -> f64 {
        SVG_H - MARGIN - (v - self.y_min) / self.y_span * (SVG_H - 2.0 * MARGIN)
    }
}

fn kde_svg(bundle: &ReportBundle) -> String {
    let mut out = svg_open("Crossing time density");
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_max: f64 = 0.0;
    for s in &bundle.kde {
        for &(x, d) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_max = y_max.max(d);
        }
    }
    if bundle.kde.is_empty() {
        out.push_str("<text x=\"320\" y=\"200\" text-anchor=\"middle\">no density curves</text>\n");
        out.push_str("</svg>\n");
        return out;
    }
    let sc = Scale::new(x_min, x_max, 0.0, y_max * 1.05);
    out.push_str(&svg_axes("crossing time (s)", "density"));
    for s in &bundle.kde {
        let mut points = String::new();
        for &(x, d) in &s.points {
            let _ = write!(points, "{:.2},{:.2} ", sc.x(x), sc.y(d));
        }
        let _ = write!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            points.trim_end(),
            group_color(s.group)
        );
    }
    let _ = write!(
        out,
        "<text x=\"{MARGIN:.2}\" y=\"{:.2}\">{x_min:.2}</text>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{x_max:.2}</text>\n",
        SVG_H - MARGIN + 16.0,
        SVG_W - MARGIN,
        SVG_H - MARGIN + 16.0
    );
    out.push_str(&svg_legend(
        &bundle.kde.iter().map(|s| s.group).collect::<Vec<_>>(),
    ));
    out.push_str("</svg>\n");
    out
}

fn box_svg(bundle: &ReportBundle) -> String {
    let mut out = svg_open("Crossing time spread");
    if bundle.boxes.is_empty() {
        out.push_str("<text x=\"320\" y=\"200\" text-anchor=\"middle\">no box summaries</text>\n");
        out.push_str("</svg>\n");
        return out;
    }
    let y_min = bundle.boxes.iter().map(|b| b.min).fold(f64::INFINITY, f64::min);
    let y_max = bundle
        .boxes
        .iter()
        .map(|b| b.max)
        .fold(f64::NEG_INFINITY, f64::max);
    let pad = ((y_max - y_min) * 0.08).max(0.1);
    let sc = Scale::new(0.0, bundle.boxes.len() as f64, y_min - pad, y_max + pad);
    out.push_str(&svg_axes("group", "crossing time (s)"));
    for (i, b) in bundle.boxes.iter().enumerate() {
        let cx = sc.x(i as f64 + 0.5);
        let half = 40.0;
        let color = group_color(b.group);
        let _ = write!(
            out,
            "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"{color}\"/>\n\
             <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"{color}\"/>\n\
             <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{} (n={})</text>\n",
            sc.y(b.min),
            sc.y(b.max),
            cx - half,
            sc.y(b.q3),
            half * 2.0,
            (sc.y(b.q1) - sc.y(b.q3)).abs(),
            cx - half,
            sc.y(b.median),
            cx + half,
            sc.y(b.median),
            SVG_H - MARGIN + 16.0,
            b.group,
            b.n
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Categorical Wilson-interval plot: one point + whisker per (group, label).
fn ci_svg(title: &str, x_label: &str, rows: &[ProportionRow]) -> String {
    let mut out = svg_open(title);
    if rows.is_empty() {
        out.push_str("<text x=\"320\" y=\"200\" text-anchor=\"middle\">no data</text>\n");
        out.push_str("</svg>\n");
        return out;
    }
    let mut labels: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let mut groups: Vec<Group> = Vec::new();
    for r in rows {
        if !groups.contains(&r.group) {
            groups.push(r.group);
        }
    }
    let sc = Scale::new(0.0, labels.len() as f64, 0.0, 1.0);
    out.push_str(&svg_axes(x_label, "proportion"));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = write!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{tick:.2}</text>\n",
            MARGIN - 6.0,
            sc.y(tick) + 4.0
        );
    }
    for (li, label) in labels.iter().enumerate() {
        let cx = sc.x(li as f64 + 0.5);
        let _ = write!(
            out,
            "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{label}</text>\n",
            SVG_H - MARGIN + 16.0
        );
        for (gi, &group) in groups.iter().enumerate() {
            let Some(r) = rows.iter().find(|r| r.label == *label && r.group == group) else {
                continue;
            };
            let x = cx + (gi as f64 - (groups.len() - 1) as f64 / 2.0) * 14.0;
            let color = group_color(group);
            let _ = write!(
                out,
                "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{color}\"/>\n\
                 <circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{color}\"/>\n",
                sc.y(r.lo),
                sc.y(r.hi),
                sc.y(r.estimate)
            );
        }
    }
    out.push_str(&svg_legend(&groups));
    out.push_str("</svg>\n");
    out
}

/// Write the bundle to `out_dir` in the requested formats and return the
/// files written, sorted. Emission is deterministic: identical bundles give
/// byte-identical files.
pub fn emit_report(
    bundle: &ReportBundle,
    out_dir: &Path,
    formats: &BTreeSet<ReportFormat>,
) -> Result<Vec<PathBuf>, StatsError> {
    if bundle.descriptives.is_empty() {
        return Err(StatsError::Design("empty results, nothing to emit".into()));
    }
    if formats.is_empty() {
        return Err(StatsError::Domain("no output formats requested".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    if formats.contains(&ReportFormat::Json) {
        let path = out_dir.join("report.json");
        std::fs::write(&path, serde_json::to_string_pretty(bundle)?)?;
        written.push(path);
        let path = out_dir.join("reference_constants.json");
        std::fs::write(&path, serde_json::to_string_pretty(&reference_constants())?)?;
        written.push(path);
    }

    if formats.contains(&ReportFormat::Csv) {
        let tables: [(&str, Option<Vec<Vec<String>>>); 5] = [
            ("crossing_time_effects.csv", effects_csv(bundle)),
            ("condition_crossing_times.csv", slices_csv(bundle)),
            ("subset_comparison.csv", subsets_csv(bundle)),
            ("likert_ratings.csv", likert_csv(bundle)),
            ("grid_behavior.csv", grid_csv(bundle)),
        ];
        for (name, rows) in tables {
            if let Some(rows) = rows {
                let path = out_dir.join(name);
                write_csv(&path, &rows)?;
                written.push(path);
            }
        }
    }

    if formats.contains(&ReportFormat::Svg) {
        let plots: [(&str, String); 5] = [
            ("crossing_time_kde.svg", kde_svg(bundle)),
            ("crossing_time_box.svg", box_svg(bundle)),
            (
                "first_wait_ci.svg",
                ci_svg(
                    "First wait position (cumulative)",
                    "grid position",
                    &bundle.first_wait,
                ),
            ),
            (
                "decision_distribution.svg",
                ci_svg("Decision mix", "action", &bundle.decision_mix),
            ),
            (
                "never_waited_ci.svg",
                ci_svg("Never waited", "condition", &bundle.never_waited),
            ),
        ];
        for (name, body) in plots {
            let path = out_dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
    }

    written.sort();
    Ok(written)
}
