//! Ablation sweeps over warmup length and sparsifier variant. A diverged
//! run contributes a NaN row instead of aborting the sweep.

use crate::error::Result;
use crate::sparsity::SparsifierKind;
use crate::train::config::TrainConfig;
use crate::train::trainer::{run_training, TrainStatus};
use std::path::Path;

/// One sweep point: the varied setting and the final eval perplexity
/// (NaN when that run diverged).
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub setting: String,
    pub final_ppl: f64,
    pub diverged: bool,
}

fn sweep_csv(header: &str, rows: &[AblationRow]) -> String {
    let mut text = format!("{header},final_ppl\n");
    for row in rows {
        let ppl = if row.final_ppl.is_finite() {
            format!("{:.6e}", row.final_ppl)
        } else {
            "NaN".to_string()
        };
        text.push_str(&format!("{},{}\n", row.setting, ppl));
    }
    text
}

fn run_point(cfg: &TrainConfig) -> Result<AblationRow> {
    let outcome = run_training(cfg)?;
    let diverged = matches!(outcome.status, TrainStatus::Diverged { .. });
    Ok(AblationRow {
        setting: String::new(),
        final_ppl: if diverged { f64::NAN } else { outcome.final_eval_ppl() },
        diverged,
    })
}

/// Train once per warmup length, holding everything else fixed.
pub fn run_warmup_ablation(base: &TrainConfig, warmups: &[u64]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &w in warmups {
        let mut cfg = base.clone();
        cfg.n_warmup = w;
        cfg.metrics_path = String::new();
        cfg.checkpoint_path = String::new();
        cfg.validate()?;
        let mut row = run_point(&cfg)?;
        row.setting = w.to_string();
        rows.push(row);
    }
    Ok(rows)
}

/// Train once per sparsifier variant, holding everything else fixed.
pub fn run_sparsifier_ablation(
    base: &TrainConfig,
    kinds: &[SparsifierKind],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &kind in kinds {
        let mut cfg = base.clone();
        cfg.sparsifier = kind;
        cfg.metrics_path = String::new();
        cfg.checkpoint_path = String::new();
        let mut row = run_point(&cfg)?;
        row.setting = kind.name().to_string();
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_warmup_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    std::fs::write(path, sweep_csv("warmup", rows))?;
    Ok(())
}

pub fn write_sparsifier_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    std::fs::write(path, sweep_csv("sparsifier", rows))?;
    Ok(())
}
