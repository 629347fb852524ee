use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flowforge_core::eval::Averaging;

use crate::chart::grouped_bars;
use crate::experiment::ExperimentReport;

pub const METRICS: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

fn metric_values(rep: &ExperimentReport, averaging: Averaging) -> Vec<Vec<f64>> {
    rep.arms
        .iter()
        .map(|a| {
            let m = a.metrics(averaging);
            vec![m.accuracy, m.precision, m.recall, m.f1]
        })
        .collect()
}

/// One row per arm and metric, with weighted and macro values side by side.
pub fn metrics_csv(rep: &ExperimentReport) -> String {
    let mut out = String::from("experiment,arm,model,test_set,metric,weighted,macro\n");
    let weighted = metric_values(rep, Averaging::Weighted);
    let macro_avg = metric_values(rep, Averaging::Macro);
    for (i, a) in rep.arms.iter().enumerate() {
        for (k, metric) in METRICS.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{metric},{:.6},{:.6}\n",
                rep.id, a.name, a.model, a.test.name, weighted[i][k], macro_avg[i][k]
            ));
        }
    }
    out
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Writes `report.json`, `metrics.csv`, `config.toml` and one bar chart per
/// averaging mode into `dir`. Returns the written paths.
pub fn emit_report(rep: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let series: Vec<String> = rep.arms.iter().map(|a| a.name.clone()).collect();
    let mut written = vec![
        write(dir.join("report.json"), serde_json::to_string_pretty(rep)?)?,
        write(dir.join("metrics.csv"), metrics_csv(rep))?,
        write(dir.join("config.toml"), rep.config.to_toml()?)?,
    ];
    for (averaging, name) in [(Averaging::Weighted, "weighted"), (Averaging::Macro, "macro")] {
        let svg = grouped_bars(
            &format!("{} ({name} averaging)", rep.id),
            &METRICS,
            &series,
            &metric_values(rep, averaging),
        );
        written.push(write(dir.join(format!("chart_{name}.svg")), svg)?);
    }
    Ok(written)
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
