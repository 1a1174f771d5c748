//! Report rendering: single-experiment text/CSV, and the stage x feature-set grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::{EvalReport, REPORT_SCHEMA_VERSION};
use super::{FeatureSet, Stage};
use crate::error::{Error, Result};
use crate::probes::Architecture;

pub fn render_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "stage         {}", r.stage);
    let _ = writeln!(s, "feature set   {}", r.feature_set);
    let _ = writeln!(s, "probe         {}", r.architecture);
    let _ = writeln!(s, "instances     {} ({} positive, rate {:.4})", r.n_instances, r.n_positive, r.positive_rate);
    let _ = writeln!(s, "features      {}", r.n_features);
    let _ = writeln!(s, "ROC-AUC       {:.4} +- {:.4} ({} std over {} folds)", r.mean_auc, r.std_auc, r.std_kind, r.fold_aucs.len());
    for f in &r.folds {
        let _ = writeln!(
            s,
            "  fold {}  auc {:.4}  train {}  test {} ({} positive)",
            f.fold, f.auc, f.n_train, f.n_test, f.test_positives
        );
    }
    let _ = writeln!(s, "config digest {}", r.config_digest);
    s
}

pub fn folds_csv(r: &EvalReport) -> String {
    let mut s = String::from("fold,auc,n_train,n_test,test_positives,probe_seed,best_epoch\n");
    for f in &r.folds {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            f.fold, f.auc, f.n_train, f.n_test, f.test_positives, f.probe_seed, f.best_epoch
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub stage: Stage,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// Highest mean in its stage column.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub feature_set: FeatureSet,
    pub architecture: Architecture,
    pub cells: Vec<Option<GridCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub schema_version: u32,
    pub stages: Vec<Stage>,
    pub rows: Vec<GridRow>,
    pub config_digests: Vec<String>,
}

/// Arranges reports into rows (feature set, probe) and stage columns; columns
/// and rows appear in canonical order, and only if some report fills them.
pub fn build_grid(reports: &[EvalReport]) -> Result<Grid> {
    if reports.is_empty() {
        return Err(Error::domain("no reports to tabulate"));
    }
    let mut cells: BTreeMap<(FeatureSet, Architecture), BTreeMap<Stage, &EvalReport>> = BTreeMap::new();
    for r in reports {
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!("report schema version {} is not supported", r.schema_version)));
        }
        let row = cells.entry((r.feature_set, r.architecture)).or_default();
        if row.insert(r.stage, r).is_some() {
            return Err(Error::Config(format!(
                "two reports for {} / {} / {}",
                r.stage, r.feature_set, r.architecture
            )));
        }
    }
    let stages: Vec<Stage> = Stage::ALL
        .into_iter()
        .filter(|s| cells.values().any(|row| row.contains_key(s)))
        .collect();
    let best: BTreeMap<Stage, f64> = stages
        .iter()
        .map(|&s| {
            let m = cells
                .values()
                .filter_map(|row| row.get(&s))
                .map(|r| r.mean_auc)
                .fold(f64::NEG_INFINITY, f64::max);
            (s, m)
        })
        .collect();
    let rows = cells
        .iter()
        .map(|(&(feature_set, architecture), row)| GridRow {
            feature_set,
            architecture,
            cells: stages
                .iter()
                .map(|s| {
                    row.get(s).map(|r| GridCell {
                        stage: *s,
                        mean_auc: r.mean_auc,
                        std_auc: r.std_auc,
                        best: r.mean_auc == best[s],
                    })
                })
                .collect(),
        })
        .collect();
    let mut config_digests: Vec<String> = reports.iter().map(|r| r.config_digest.clone()).collect();
    config_digests.sort();
    Ok(Grid {
        schema_version: REPORT_SCHEMA_VERSION,
        stages,
        rows,
        config_digests,
    })
}

/// Plain-text table; the best cell of each column is marked with `*`.
pub fn render_grid(g: &Grid) -> String {
    let width = 17;
    let mut s = format!("{:<34}", "features (probe)");
    for st in &g.stages {
        let _ = write!(s, "{:>width$}", st.name());
    }
    s.push('\n');
    for row in &g.rows {
        let _ = write!(s, "{:<34}", format!("{} ({})", row.feature_set, row.architecture));
        for c in &row.cells {
            let text = match c {
                Some(c) => format!("{}{:.3} +- {:.3}", if c.best { "*" } else { "" }, c.mean_auc, c.std_auc),
                None => "-".into(),
            };
            let _ = write!(s, "{text:>width$}");
        }
        s.push('\n');
    }
    s
}
