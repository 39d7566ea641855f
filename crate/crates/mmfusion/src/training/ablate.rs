//! The ablation grid: fusion strategy x multi-sample dropout x branch
//! choice, trained under a shared seed.

use serde::{Deserialize, Serialize};

use crate::config::{BranchChoice, FusionStrategy, TrainConfig};
use crate::data::{Dataset, Split};
use crate::error::Result;

use super::{evaluate, train, MetricsReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub fusion: FusionStrategy,
    pub msd: bool,
    pub branches: BranchChoice,
    pub param_count: usize,
    pub best_val_loss: f64,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(
        &self,
        fusion: FusionStrategy,
        msd: bool,
        branches: BranchChoice,
    ) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.fusion == fusion && c.msd == msd && c.branches == branches)
    }

    pub fn to_table(&self) -> String {
        let mut out =
            String::from("fusion  msd  branches    params    macro-f1  accuracy  val-loss\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{:<7} {:<4} {:<11} {:<9} {:<9.4} {:<9.4} {:.6}\n",
                match c.fusion {
                    FusionStrategy::Early => "early",
                    FusionStrategy::Late => "late",
                },
                if c.msd { "on" } else { "off" },
                match c.branches {
                    BranchChoice::Both => "both",
                    BranchChoice::ViltOnly => "vilt_only",
                    BranchChoice::VaultOnly => "vault_only",
                },
                c.param_count,
                c.test.macro_f1,
                c.test.accuracy,
                c.best_val_loss
            ));
        }
        out
    }
}

/// Train and evaluate all 12 cells of the grid
/// `{early, late} x {msd on, off} x {both, vilt_only, vault_only}` with the
/// base config's seed shared across cells.
pub fn ablate(base: &TrainConfig, dataset: &Dataset) -> Result<AblationReport> {
    let mut cells = Vec::with_capacity(12);
    for fusion in [FusionStrategy::Early, FusionStrategy::Late] {
        for msd in [true, false] {
            for branches in [
                BranchChoice::Both,
                BranchChoice::ViltOnly,
                BranchChoice::VaultOnly,
            ] {
                let cfg = TrainConfig {
                    fusion,
                    msd,
                    branches,
                    ..base.clone()
                };
                let out = train(cfg, dataset)?;
                let test = evaluate(&out.model, dataset, Split::Test)?;
                cells.push(AblationCell {
                    fusion,
                    msd,
                    branches,
                    param_count: out.model.params.total_numel(),
                    best_val_loss: out.best_val_loss,
                    test,
                });
            }
        }
    }
    Ok(AblationReport {
        seed: base.seed,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;
    use crate::training::test_support::{tiny_dataset, tiny_train_config};

    #[test]
    fn ablation_grid_has_twelve_populated_cells() {
        let ds = tiny_dataset(Task::Sentiment, 31, "ablate");
        let mut cfg = tiny_train_config(Task::Sentiment, 31);
        cfg.epochs = 1;
        let report = ablate(&cfg, &ds).unwrap();
        assert_eq!(report.cells.len(), 12);
        for c in &report.cells {
            assert!(c.test.macro_f1.is_finite());
            assert!(c.param_count > 0);
        }
        let both = report
            .cell(FusionStrategy::Early, true, BranchChoice::Both)
            .unwrap();
        let vilt = report
            .cell(FusionStrategy::Early, true, BranchChoice::ViltOnly)
            .unwrap();
        let vault = report
            .cell(FusionStrategy::Early, true, BranchChoice::VaultOnly)
            .unwrap();
        assert!(both.param_count > vilt.param_count);
        assert!(both.param_count > vault.param_count);
        let table = report.to_table();
        assert_eq!(table.lines().count(), 13);
        std::fs::remove_dir_all(&ds.dir).unwrap();
    }
}
