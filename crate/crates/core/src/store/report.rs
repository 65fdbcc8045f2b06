//! Comparison tables over completed studies.

use std::path::Path;

use super::{StoreError, StudySummary};
use crate::study::{MethodKind, StudyEvent};

/// One method's row: mean best Φ over seeds with a normal-approximation 95%
/// half-width (needs at least two seeds).
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: MethodKind,
    pub mean_best: f64,
    pub ci_half_width: Option<f64>,
    pub seeds: usize,
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn row(&self, method: MethodKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Aligned plain-text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>14} {:>12} {:>6} {:>7}\n",
            "method", "mean_best_phi", "ci95", "seeds", "trials"
        ));
        for r in &self.rows {
            let ci = match r.ci_half_width {
                Some(w) => format!("±{w:.4}"),
                None => "n/a".to_string(),
            };
            out.push_str(&format!(
                "{:<10} {:>14.4} {:>12} {:>6} {:>7}\n",
                r.method.as_str(),
                r.mean_best,
                ci,
                r.seeds,
                r.budget
            ));
        }
        out
    }

    /// Delimiter-separated export; the CI column is empty when undefined.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean_best_phi,ci95_half_width,seeds,trials\n");
        for r in &self.rows {
            let ci = r.ci_half_width.map(|w| w.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method.as_str(),
                r.mean_best,
                ci,
                r.seeds,
                r.budget
            ));
        }
        out
    }
}

/// Builds the per-method table. Rows appear in method declaration order;
/// studies that produced no finite objective are skipped (and reduce the
/// seed count).
pub fn report(summaries: &[StudySummary]) -> Result<ReportTable, StoreError> {
    if summaries.is_empty() {
        return Err(StoreError::EmptyReport("no studies given".into()));
    }
    let mut rows = Vec::new();
    for method in MethodKind::ALL {
        let group: Vec<&StudySummary> = summaries
            .iter()
            .filter(|s| s.method == method && s.best_objective.is_some())
            .collect();
        if group.is_empty() {
            continue;
        }
        let bests: Vec<f64> = group.iter().map(|s| s.best_objective.unwrap()).collect();
        let n = bests.len();
        let mean = bests.iter().sum::<f64>() / n as f64;
        let ci_half_width = if n >= 2 {
            let var = bests.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Some(1.96 * var.sqrt() / (n as f64).sqrt())
        } else {
            None
        };
        let budget = group.iter().map(|s| s.completed_trials).max().unwrap_or(0);
        rows.push(ReportRow {
            method,
            mean_best: mean,
            ci_half_width,
            seeds: n,
            budget,
        });
    }
    if rows.is_empty() {
        return Err(StoreError::EmptyReport(
            "no study produced a finite objective".into(),
        ));
    }
    Ok(ReportTable { rows })
}

/// Per-trial best-so-far curve as delimited text: completion index, trial
/// id, the trial's Φ (empty for failed trials), and the running best.
pub fn write_curve(events: &[StudyEvent], path: &Path) -> Result<(), StoreError> {
    let mut out = String::from("index,trial_id,objective,best_so_far\n");
    let mut best: Option<f64> = None;
    let mut index = 0usize;
    for event in events {
        if let StudyEvent::TrialFinished(f) = event {
            index += 1;
            if let Some(phi) = f.objective {
                best = Some(best.map_or(phi, |b| b.max(phi)));
            }
            let obj = f.objective.map(|p| p.to_string()).unwrap_or_default();
            let best_str = best.map(|b| b.to_string()).unwrap_or_default();
            out.push_str(&format!("{index},{},{obj},{best_str}\n", f.trial_id));
        }
    }
    std::fs::write(path, out).map_err(|e| super::io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(method: MethodKind, best: Option<f64>) -> StudySummary {
        StudySummary {
            method,
            best_objective: best,
            completed_trials: 12,
            complete: true,
            n_total: 12,
        }
    }

    #[test]
    fn single_seed_has_no_ci() {
        let table = report(&[summary(MethodKind::Bo, Some(0.8))]).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].ci_half_width, None);
        assert_eq!(table.rows[0].seeds, 1);
    }

    #[test]
    fn ci_matches_hand_computed_normal_interval() {
        // Bests {0.8, 0.9}: mean 0.85, sd 0.0707..., half-width
        // 1.96 * sd / sqrt(2) ~= 0.098.
        let table = report(&[
            summary(MethodKind::Boss, Some(0.8)),
            summary(MethodKind::Boss, Some(0.9)),
        ])
        .unwrap();
        let row = table.row(MethodKind::Boss).unwrap();
        assert!((row.mean_best - 0.85).abs() < 1e-12);
        let hw = row.ci_half_width.unwrap();
        assert!((hw - 0.098).abs() < 5e-4, "half width {hw}");
    }

    #[test]
    fn rows_follow_method_declaration_order() {
        let table = report(&[
            summary(MethodKind::Boss, Some(0.9)),
            summary(MethodKind::Baseline, Some(0.7)),
            summary(MethodKind::Sd, Some(0.8)),
            summary(MethodKind::Random, Some(0.75)),
        ])
        .unwrap();
        let methods: Vec<MethodKind> = table.rows.iter().map(|r| r.method).collect();
        assert_eq!(
            methods,
            vec![
                MethodKind::Baseline,
                MethodKind::Random,
                MethodKind::Sd,
                MethodKind::Boss
            ]
        );
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(report(&[]).is_err());
    }

    #[test]
    fn csv_and_text_agree_on_rows() {
        let table = report(&[
            summary(MethodKind::Bo, Some(0.8)),
            summary(MethodKind::Bo, Some(0.9)),
        ])
        .unwrap();
        let csv = table.to_csv();
        assert!(csv.starts_with("method,mean_best_phi"));
        assert!(csv.contains("bo,0.85"));
        let text = table.to_text();
        assert!(text.contains("bo"));
        assert!(text.contains("0.8500"));
    }
}
