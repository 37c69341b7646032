//! Trains and evaluates several variants under one seed and step budget.

use std::collections::BTreeMap;

use crate::cenet::{CENet, CENetConfig};
use crate::error::{Error, Result};
use crate::imaging::MetricsRecord;
use crate::prnet::PRNetConfig;
use crate::trainer::data::Sample;
use crate::trainer::eval::{evaluate, evaluate_identity, Pipeline, Variant};
use crate::trainer::train::{train_cenet, train_prnet, RunOptions};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub metrics: MetricsRecord,
    /// Training loss of the last step of each trained network.
    pub final_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    /// Raw input scored against the targets.
    pub baseline: MetricsRecord,
    /// One row per requested variant, in request order.
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Every variant trains its networks from the same seed with the same step
/// budget per network. The CENet stage is trained once and shared by all
/// CE variants.
pub fn run_ablation(
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    cenet_config: &CENetConfig,
    prnet_config: &PRNetConfig,
    variants: &[Variant],
) -> Result<AblationReport> {
    if variants.is_empty() {
        return Err(Error::Config("no ablation variants requested".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let baseline = evaluate_identity(val)?.mean;
    let mut cenet: Option<(CENet, f64)> = None;
    let mut rows = Vec::with_capacity(variants.len());
    let mut done: BTreeMap<Variant, AblationRow> = BTreeMap::new();
    for &variant in variants {
        if let Some(row) = done.get(&variant) {
            rows.push(row.clone());
            continue;
        }
        let mut final_losses = Vec::new();
        if variant.uses_cenet() && cenet.is_none() {
            let trained = train_cenet(train, config, cenet_config, RunOptions::default())?;
            let last = trained.losses.last().map_or(f64::NAN, |r| r.loss);
            cenet = Some((trained.model, last));
        }
        let ce = if variant.uses_cenet() {
            let (net, loss) = cenet.as_ref().expect("trained above");
            final_losses.push(*loss);
            Some(net)
        } else {
            None
        };
        let prnet = match variant.prnet_config(prnet_config) {
            Some(pc) => {
                let trained = train_prnet(train, config, &pc, ce, RunOptions::default())?;
                final_losses.push(trained.losses.last().map_or(f64::NAN, |r| r.loss));
                Some(trained.model)
            }
            None => None,
        };
        let pipeline = Pipeline::new(variant, ce.cloned(), prnet, config.pad_size)?;
        let row = AblationRow {
            variant,
            metrics: evaluate(&pipeline, val)?.mean,
            final_losses,
        };
        done.insert(variant, row.clone());
        rows.push(row);
    }
    Ok(AblationReport { baseline, rows })
}
