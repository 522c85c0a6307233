use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::evaluate::{evaluate, Judge};
use super::train::train;
use super::{PipelineError, RunConfig};
use crate::fusion::FusionKind;
use crate::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: FusionKind,
    /// Mean loss of the final training batch.
    pub train_loss: f64,
    /// Loss on the fixed held-out draws after training.
    pub eval_loss: f64,
    pub metrics: MetricsReport,
}

fn markdown(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "| variant | train_loss | eval_loss | non_collision | contact | apd_t | std_t | apd_p | std_p | apd_m | std_m | fid | r_score |\n",
    );
    s.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let m = &r.metrics;
        let _ = write!(s, "| {} | {:.5} | {:.5}", r.variant, r.train_loss, r.eval_loss);
        for v in [
            m.non_collision,
            m.contact,
            m.apd_t,
            m.std_t,
            m.apd_p,
            m.std_p,
            m.apd_m,
            m.std_m,
            m.fid,
            m.r_score,
        ] {
            let _ = write!(s, " | {v:.4}");
        }
        s.push_str(" |\n");
    }
    s
}

fn write_rows(rows: &[AblationRow], out: &Path) -> Result<(), PipelineError> {
    let md = out.join("ablation.md");
    fs::write(&md, markdown(rows)).map_err(|e| PipelineError::io(&md, e))?;
    let json = out.join("ablation.json");
    let text = serde_json::to_string_pretty(rows).expect("rows serialize") + "\n";
    fs::write(&json, text).map_err(|e| PipelineError::io(&json, e))
}

/// Trains and evaluates each fusion variant with the same seed and data
/// order, one row per variant in the order given. The table on disk is
/// rewritten after every variant, so a failure keeps the finished rows.
pub fn ablate(
    config: &RunConfig,
    data: &Dataset,
    variants: &[FusionKind],
    seed: u64,
    out: &Path,
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationRow>, PipelineError> {
    if variants.len() < 2 {
        return Err(PipelineError::Config("ablation needs at least two variants".into()));
    }
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    let judge = Judge::train(config, data)?;
    let mut rows = Vec::with_capacity(variants.len());
    for (i, &v) in variants.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.seed = seed;
        cfg.model.fusion = v;
        progress(&format!("variant {} ({}/{})", v, i + 1, variants.len()));
        let dir = out.join(format!("{i}_{v}"));
        let outcome = train(&cfg, data, &dir, None, &mut progress)?;
        let eval = evaluate(&outcome.model, data, &judge, cfg.eval.k, seed)?;
        eval.write(&dir)?;
        rows.push(AblationRow {
            variant: v,
            train_loss: outcome.last_batch.total,
            eval_loss: outcome.final_eval.total,
            metrics: eval.report,
        });
        write_rows(&rows, out)?;
    }
    Ok(rows)
}
