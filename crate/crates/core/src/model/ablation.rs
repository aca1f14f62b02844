use serde::Serialize;

use super::{evaluate, train_split, Checkpoint, EpochRecord, EvalReport, ModelConfig, Result, Samples, TrainConfig, Variant};

/// One trained variant of an ablation run.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub parameters: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub report: EvalReport,
    #[serde(skip)]
    pub checkpoint: Checkpoint,
}

/// Trains every variant in `variants` on identical data and seeds, and
/// evaluates each on `test`. `on_epoch` sees every epoch of every run.
pub fn run_ablation(
    fit: &Samples,
    val: &Samples,
    test: &Samples,
    base: &ModelConfig,
    tc: &TrainConfig,
    variants: &[Variant],
    mut on_epoch: impl FnMut(Variant, &EpochRecord),
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&variant| {
            let mc = ModelConfig { variant, ..base.clone() };
            let checkpoint = train_split(fit, val, &mc, tc, |r| on_epoch(variant, r))?;
            let report = evaluate(&checkpoint.model, test)?;
            Ok(AblationRow {
                variant,
                parameters: mc.parameter_count(),
                epochs_run: checkpoint.history.len(),
                best_epoch: checkpoint.best_epoch,
                report,
                checkpoint,
            })
        })
        .collect()
}
