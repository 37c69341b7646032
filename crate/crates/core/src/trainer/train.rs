//! The two training stages and the shared optimization loop.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cenet::{CENet, CENetConfig};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::prnet::{PRNet, PRNetConfig};
use crate::tensor::optim::sgd_momentum_step;
use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::trainer::checkpoint::{Checkpoint, ModelConfig, ModelKind};
use crate::trainer::data::{batch_indices, Sample};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub checkpoint: Checkpoint,
    /// One record per step run in this call (resumed runs start mid-way).
    pub losses: Vec<LossRecord>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions<'a> {
    /// Where intermediate and final checkpoints are written.
    pub checkpoint_dir: Option<&'a Path>,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<&'a Checkpoint>,
}

pub fn checkpoint_file_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Cenet => "cenet.ckpt",
        ModelKind::Prnet => "prnet.ckpt",
    }
}

fn intermediate_file_name(kind: ModelKind, step: u64) -> String {
    match kind {
        ModelKind::Cenet => format!("cenet-step{step:08}.ckpt"),
        ModelKind::Prnet => format!("prnet-step{step:08}.ckpt"),
    }
}

fn write_checkpoint(dir: &Path, name: &str, ck: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ck.save(&dir.join(name))
}

/// Runs optimizer steps `start..total`. `loss_fn` records the loss of the
/// batch with the given sample indices.
fn optimize(
    store: &mut ParamStore,
    config: &TrainConfig,
    len: usize,
    start: u64,
    mut loss_fn: impl FnMut(&mut Graph, &ParamStore, &[usize]) -> Result<Var>,
    mut on_checkpoint: impl FnMut(&ParamStore, u64) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    let total = config.total_steps(len);
    let mut log = Vec::with_capacity(total.saturating_sub(start) as usize);
    for step in start..total {
        let batch = batch_indices(len, config.batch_size, config.seed, step);
        let mut g = Graph::new();
        let loss_var = loss_fn(&mut g, store, &batch)?;
        let loss = g.value(loss_var).item();
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let grads = g.backward(loss_var)?;
        grads.accumulate_into(store);
        g.apply_running_updates(store);
        let lr = config.lr_at(step);
        sgd_momentum_step(store, lr, config.momentum)?;
        log.push(LossRecord { step, lr, loss });
        if config
            .checkpoint_every
            .is_some_and(|every| (step + 1) % every == 0)
            && step + 1 != total
        {
            on_checkpoint(store, step + 1)?;
        }
    }
    Ok(log)
}

fn check_resume(resume: Option<&Checkpoint>, model: &ModelConfig) -> Result<u64> {
    match resume {
        None => Ok(0),
        Some(ck) if &ck.model == model => Ok(ck.step),
        Some(ck) => Err(Error::Config(format!(
            "resume checkpoint holds a {:?} model with a different configuration",
            ck.kind()
        ))),
    }
}

fn require_samples(samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    Ok(())
}

fn stack<'a>(idx: &[usize], f: impl Fn(usize) -> &'a Tensor) -> Result<Tensor> {
    let items: Vec<&Tensor> = idx.iter().map(|&i| f(i)).collect();
    Ok(Tensor::stack(&items)?)
}

/// Trains CENet to minimize the masked MSE between `I + r_c` and the target.
pub fn train_cenet(
    samples: &[Sample],
    config: &TrainConfig,
    cenet_config: &CENetConfig,
    opts: RunOptions<'_>,
) -> Result<Trained<CENet>> {
    config.validate()?;
    require_samples(samples)?;
    let model_config = ModelConfig::Cenet(cenet_config.clone());
    let start = check_resume(opts.resume, &model_config)?;
    let mut net = CENet::new(cenet_config.clone(), config.seed)?;
    if let Some(ck) = opts.resume {
        ck.restore_into(net.store_mut())?;
    }
    let mut store = std::mem::take(net.store_mut());
    let losses = optimize(
        &mut store,
        config,
        samples.len(),
        start,
        |g, store, idx| {
            let raw = stack(idx, |i| &samples[i].raw)?;
            let target = stack(idx, |i| &samples[i].target)?;
            let mask = stack(idx, |i| &samples[i].mask)?;
            let x = g.constant(raw);
            let (coarse, _) = net.enhance_graph_with(g, store, x, Mode::Train)?;
            let t = g.constant(target);
            Ok(g.mse_loss(coarse, t, Some(&mask))?)
        },
        |store, step| {
            if let Some(dir) = opts.checkpoint_dir {
                let ck = Checkpoint::capture(model_config.clone(), config.clone(), step, store);
                write_checkpoint(dir, &intermediate_file_name(ModelKind::Cenet, step), &ck)?;
            }
            Ok(())
        },
    )?;
    *net.store_mut() = store;
    let step = start.max(config.total_steps(samples.len()));
    let checkpoint = Checkpoint::capture(model_config, config.clone(), step, net.store());
    if let Some(dir) = opts.checkpoint_dir {
        write_checkpoint(dir, checkpoint_file_name(ModelKind::Cenet), &checkpoint)?;
    }
    Ok(Trained {
        model: net,
        checkpoint,
        losses,
    })
}

/// Coarse result `I + r_c` of a frozen CENet in eval mode, or the raw
/// input itself when there is no CENet stage.
pub fn coarse_output(cenet: Option<&CENet>, raw: &Tensor) -> Result<Tensor> {
    match cenet {
        Some(net) => Ok(net.ce_enhance(raw)?),
        None => Ok(raw.clone()),
    }
}

/// Zeroes padded pixels.
pub fn apply_mask(t: &Tensor, mask: &Tensor) -> Tensor {
    let mut out = t.clone();
    for (v, m) in out.data_mut().iter_mut().zip(mask.data()) {
        *v *= m;
    }
    out.with_requires_grad(false)
}

/// PRNet inputs and residual targets for one sample.
#[derive(Debug, Clone)]
pub struct RefineSample {
    /// Masked coarse image fed to PRNet.
    pub input: Tensor,
    /// `target - coarse`.
    pub residual: Tensor,
    pub mask: Tensor,
}

pub fn refine_samples(samples: &[Sample], cenet: Option<&CENet>) -> Result<Vec<RefineSample>> {
    samples
        .iter()
        .map(|s| {
            let coarse = coarse_output(cenet, &s.raw)?;
            let residual =
                Tensor::from_fn(coarse.shape(), |i| s.target.data()[i] - coarse.data()[i]);
            Ok(RefineSample {
                input: apply_mask(&coarse, &s.mask),
                residual,
                mask: s.mask.clone(),
            })
        })
        .collect()
}

/// Trains PRNet on the masked residual `I_r - (I + r_c)` with CENet frozen.
/// Without a CENet the residual is taken against the raw input.
pub fn train_prnet(
    samples: &[Sample],
    config: &TrainConfig,
    prnet_config: &PRNetConfig,
    cenet: Option<&CENet>,
    opts: RunOptions<'_>,
) -> Result<Trained<PRNet>> {
    config.validate()?;
    require_samples(samples)?;
    let model_config = ModelConfig::Prnet(prnet_config.clone());
    let start = check_resume(opts.resume, &model_config)?;
    let mut net = PRNet::new(prnet_config.clone(), config.seed)?;
    if let Some(ck) = opts.resume {
        ck.restore_into(net.store_mut())?;
    }
    let refine = refine_samples(samples, cenet)?;
    let mut store = std::mem::take(net.store_mut());
    let losses = optimize(
        &mut store,
        config,
        samples.len(),
        start,
        |g, store, idx| {
            let input = stack(idx, |i| &refine[i].input)?;
            let residual = stack(idx, |i| &refine[i].residual)?;
            let mask = stack(idx, |i| &refine[i].mask)?;
            let x = g.constant(input);
            let r_p = net.forward_with(g, store, x, Mode::Train)?;
            let t = g.constant(residual);
            Ok(g.mse_loss(r_p, t, Some(&mask))?)
        },
        |store, step| {
            if let Some(dir) = opts.checkpoint_dir {
                let ck = Checkpoint::capture(model_config.clone(), config.clone(), step, store);
                write_checkpoint(dir, &intermediate_file_name(ModelKind::Prnet, step), &ck)?;
            }
            Ok(())
        },
    )?;
    *net.store_mut() = store;
    let step = start.max(config.total_steps(samples.len()));
    let checkpoint = Checkpoint::capture(model_config, config.clone(), step, net.store());
    if let Some(dir) = opts.checkpoint_dir {
        write_checkpoint(dir, checkpoint_file_name(ModelKind::Prnet), &checkpoint)?;
    }
    Ok(Trained {
        model: net,
        checkpoint,
        losses,
    })
}

/// Writes a loss log as CSV with columns `step,lr,loss`.
pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}
