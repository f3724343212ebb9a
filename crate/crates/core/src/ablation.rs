//! Ablation grids: each cell is a set of config overrides trained and
//! evaluated in its own directory. Finished cells are reused on re-runs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::metrics::{MetricMeans, COLUMNS};
use crate::train::{train, validate, ModelSegmenter, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    /// Directory-safe identifier.
    pub id: String,
    pub label: String,
    pub overrides: Vec<String>,
}

fn cell(id: &str, label: &str, overrides: &[&str]) -> AblationCell {
    AblationCell {
        id: id.to_string(),
        label: label.to_string(),
        overrides: overrides.iter().map(|s| s.to_string()).collect(),
    }
}

pub const GRIDS: [&str; 4] = ["modules", "branches", "guidance", "stages"];

/// Cells of a named grid.
///
/// * `modules`: baseline, +DSE, +DSE+MBG
/// * `branches`: full MBG, without the right branch, without the left branch
/// * `guidance`: boundary source {X1, X2, X5} × extractor
///   {canny, sobel, roberts}
/// * `stages`: final output from decoder stage 1, 2 or 3
pub fn grid(name: &str) -> Result<Vec<AblationCell>> {
    Ok(match name {
        "modules" => vec![
            cell("baseline", "Baseline", &["model.dse_on=false", "model.mbg_on=false"]),
            cell("dse", "Baseline + DSE", &["model.dse_on=true", "model.mbg_on=false"]),
            cell("dse_mbg", "Baseline + DSE + MBG", &["model.dse_on=true", "model.mbg_on=true"]),
        ],
        "branches" => vec![
            cell("mbg", "MBG", &[]),
            cell("no_right", "MBG w/o F_fb", &["model.mbg_right_on=false"]),
            cell("no_left", "MBG w/o F_bf", &["model.mbg_left_on=false"]),
        ],
        "guidance" => {
            let mut cells = Vec::new();
            for level in [1, 2, 5] {
                for ext in ["canny", "sobel", "roberts"] {
                    cells.push(AblationCell {
                        id: format!("x{level}_{ext}"),
                        label: format!("X{level}; {}{}", ext[..1].to_uppercase(), &ext[1..]),
                        overrides: vec![
                            format!("model.boundary_source_level={level}"),
                            format!("data.extractor={ext}"),
                        ],
                    });
                }
            }
            cells
        }
        "stages" => vec![
            cell("de1", "1st-DE", &["model.output_stage=1"]),
            cell("de2", "2nd-DE", &["model.output_stage=2"]),
            cell("de3", "3rd-DE", &["model.output_stage=3"]),
        ],
        other => {
            return Err(Error::config(
                "ablate.grid",
                format!("unknown grid `{other}` (modules, branches, guidance, stages)"),
            ))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: String,
    pub label: String,
    pub means: MetricMeans,
    /// Whether this run trained the cell (false when reused).
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub grid: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("id,label,{}\n", COLUMNS.join(","));
        for r in &self.rows {
            let _ = write!(out, "{},\"{}\"", r.id, r.label);
            for v in r.means.values() {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("| | {} |\n|---|{}\n", COLUMNS.join(" | "), "---|".repeat(COLUMNS.len()));
        for r in &self.rows {
            let _ = write!(out, "| {} |", r.label);
            for v in r.means.values() {
                let _ = write!(out, " {v:.3} |");
            }
            out.push('\n');
        }
        out
    }
}

const CELL_RESULT: &str = "cell_metrics.json";

/// Trains and evaluates each cell under `out_dir/<cell id>/`. A cell with
/// a result file is read back instead of retrained, so an interrupted grid
/// resumes where it stopped. `eval_set` falls back to `train_set` when
/// empty.
pub fn run_grid(
    grid_name: &str,
    cells: &[AblationCell],
    file: Option<&Path>,
    base_overrides: &[String],
    train_set: &[SampleRecord],
    eval_set: &[SampleRecord],
    out_dir: &Path,
) -> Result<AblationTable> {
    let eval_set = if eval_set.is_empty() { train_set } else { eval_set };
    let mut rows = Vec::new();
    for c in cells {
        let dir = out_dir.join(&c.id);
        let result = dir.join(CELL_RESULT);
        if let Ok(text) = std::fs::read_to_string(&result) {
            let mut row: AblationRow = serde_json::from_str(&text)?;
            row.trained = false;
            log::info!("cell {} already complete", c.id);
            rows.push(row);
            continue;
        }
        let overrides: Vec<String> = base_overrides.iter().chain(&c.overrides).cloned().collect();
        let cfg = RunConfig::resolve(file, &overrides)?;
        log::info!("training cell {} ({})", c.id, c.label);
        let outcome = train(
            &cfg,
            train_set,
            &[],
            &dir,
            &TrainOptions {
                resume: true,
                skip_epoch_checkpoints: false,
            },
        )?;
        let seg = ModelSegmenter {
            model: &outcome.model,
            image_size: cfg.train.image_size,
            norm: cfg.norm,
        };
        let report = validate(&seg, eval_set, &cfg.eval.protocol()?)?;
        report.write_csv(&dir.join("metrics.csv"))?;
        let row = AblationRow {
            id: c.id.clone(),
            label: c.label.clone(),
            means: report.means,
            trained: true,
        };
        std::fs::write(&result, serde_json::to_string_pretty(&row)?).map_err(|e| Error::io(&result, e))?;
        rows.push(row);
    }
    let table = AblationTable {
        grid: grid_name.to_string(),
        rows,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join(format!("ablation_{grid_name}.csv"));
    std::fs::write(&csv, table.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let md = out_dir.join(format!("ablation_{grid_name}.md"));
    std::fs::write(&md, table.to_markdown()).map_err(|e| Error::io(&md, e))?;
    Ok(table)
}
