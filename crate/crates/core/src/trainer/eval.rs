//! Ablation variants, the composed enhancement pipeline, and evaluation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cenet::CENet;
use crate::error::{Error, Result};
use crate::imaging::{pad_to_square, Image, MetricsRecord};
use crate::prnet::{network_size, PRNet, PRNetConfig};
use crate::tensor::Tensor;
use crate::trainer::checkpoint::{Checkpoint, ModelKind};
use crate::trainer::data::Sample;
use crate::trainer::train::{apply_mask, checkpoint_file_name, coarse_output};

/// Residual blocks of the refinement-only variant without attention.
pub const PR_RESIDUAL_BLOCKS: usize = 18;

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Variant {
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "PR")]
    Pr,
    #[serde(rename = "PRNL")]
    Prnl,
    #[serde(rename = "CE_PR")]
    CePr,
    #[default]
    #[serde(rename = "CE_PRNL")]
    CePrnl,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Ce,
        Variant::Pr,
        Variant::Prnl,
        Variant::CePr,
        Variant::CePrnl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ce => "CE",
            Variant::Pr => "PR",
            Variant::Prnl => "PRNL",
            Variant::CePr => "CE_PR",
            Variant::CePrnl => "CE_PRNL",
        }
    }

    pub fn uses_cenet(self) -> bool {
        matches!(self, Variant::Ce | Variant::CePr | Variant::CePrnl)
    }

    pub fn uses_prnet(self) -> bool {
        self != Variant::Ce
    }

    /// PRNet configuration for this variant derived from `base`: PR swaps the
    /// attention block for extra residual blocks, the `*NL` variants use one
    /// non-local block, CE_PR drops it.
    pub fn prnet_config(self, base: &PRNetConfig) -> Option<PRNetConfig> {
        match self {
            Variant::Ce => None,
            Variant::Pr => Some(PRNetConfig {
                num_residual_blocks: PR_RESIDUAL_BLOCKS,
                use_nonlocal: false,
                ..base.clone()
            }),
            Variant::CePr => Some(PRNetConfig {
                use_nonlocal: false,
                ..base.clone()
            }),
            Variant::Prnl | Variant::CePrnl => Some(PRNetConfig {
                use_nonlocal: true,
                ..base.clone()
            }),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['+', '-'], "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected CE, PR, PRNL, CE_PR or CE_PRNL)"
                ))
            })
    }
}

/// The networks of one variant, composed as `I + r_c + r_p`.
#[derive(Debug, Clone)]
pub struct Pipeline {
    variant: Variant,
    cenet: Option<CENet>,
    prnet: Option<PRNet>,
    pad_size: usize,
}

impl Pipeline {
    pub fn new(
        variant: Variant,
        cenet: Option<CENet>,
        prnet: Option<PRNet>,
        pad_size: usize,
    ) -> Result<Self> {
        if variant.uses_cenet() != cenet.is_some() || variant.uses_prnet() != prnet.is_some() {
            return Err(Error::Config(format!(
                "variant {variant} needs {} but got {}",
                describe(variant.uses_cenet(), variant.uses_prnet()),
                describe(cenet.is_some(), prnet.is_some())
            )));
        }
        Ok(Self {
            variant,
            cenet,
            prnet,
            pad_size,
        })
    }

    /// Loads `cenet.ckpt` and/or `prnet.ckpt` from `dir` as the variant
    /// requires. The pad size comes from the checkpoints' training config.
    pub fn from_dir(dir: &Path, variant: Variant) -> Result<Self> {
        let load = |kind: ModelKind| -> Result<Checkpoint> {
            let path = dir.join(checkpoint_file_name(kind));
            if !path.exists() {
                return Err(Error::checkpoint(
                    &path,
                    format!("required by variant {variant} but missing"),
                ));
            }
            Checkpoint::load(&path)
        };
        let mut pad_size = None;
        let cenet = if variant.uses_cenet() {
            let ck = load(ModelKind::Cenet)?;
            pad_size = Some(ck.train.pad_size);
            Some(ck.to_cenet()?)
        } else {
            None
        };
        let prnet = if variant.uses_prnet() {
            let ck = load(ModelKind::Prnet)?;
            if pad_size.is_some_and(|p| p != ck.train.pad_size) {
                return Err(Error::checkpoint(
                    dir,
                    "cenet and prnet checkpoints disagree on pad_size",
                ));
            }
            pad_size = Some(ck.train.pad_size);
            Some(ck.to_prnet()?)
        } else {
            None
        };
        Self::new(
            variant,
            cenet,
            prnet,
            pad_size.expect("every variant has a network"),
        )
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn cenet(&self) -> Option<&CENet> {
        self.cenet.as_ref()
    }

    pub fn prnet(&self) -> Option<&PRNet> {
        self.prnet.as_ref()
    }

    pub fn pad_size(&self) -> usize {
        self.pad_size
    }

    /// Unclamped `I + r_c + r_p` for padded inputs of shape `(n, 3, S', S')`.
    pub fn enhance_tensor(&self, raw: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let raw = apply_mask(raw, mask);
        let coarse = coarse_output(self.cenet.as_ref(), &raw)?;
        let Some(prnet) = &self.prnet else {
            return Ok(coarse);
        };
        let r_p = prnet.predict(&apply_mask(&coarse, mask))?;
        Ok(Tensor::from_fn(coarse.shape(), |i| {
            coarse.data()[i] + r_p.data()[i]
        }))
    }

    /// Enhances one image of any size up to the pad size: pad, run, crop,
    /// clamp to `[0, 1]`.
    pub fn enhance_image(&self, image: &Image) -> Result<Image> {
        let size = network_size(self.pad_size);
        if image.width() > self.pad_size || image.height() > self.pad_size {
            return Err(crate::imaging::ImagingError::TooLarge {
                width: image.width(),
                height: image.height(),
                limit: self.pad_size,
            }
            .into());
        }
        let padded = pad_to_square(image, size)?;
        let out = self.enhance_tensor(&padded.image.to_tensor(), &padded.mask.to_tensor(3))?;
        let out = Image::from_tensor(&out, 0)?.crop(image.width(), image.height())?;
        Ok(out.clamped())
    }

    /// Clamped, cropped output for a prepared sample.
    pub fn enhance_sample(&self, sample: &Sample) -> Result<Image> {
        let out = self.enhance_tensor(&sample.raw, &sample.mask)?;
        Ok(sample.unpad(&out)?.clamped())
    }
}

fn describe(cenet: bool, prnet: bool) -> &'static str {
    match (cenet, prnet) {
        (true, true) => "CENet and PRNet",
        (true, false) => "CENet only",
        (false, true) => "PRNet only",
        (false, false) => "no networks",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub stem: String,
    pub lab_l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl EvalRow {
    pub fn metrics(&self) -> MetricsRecord {
        MetricsRecord {
            lab_l2: self.lab_l2,
            psnr: self.psnr,
            ssim: self.ssim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Mean of the per-image rows.
    pub mean: MetricsRecord,
}

fn report(rows: Vec<EvalRow>) -> Result<EvalReport> {
    let records: Vec<MetricsRecord> = rows.iter().map(EvalRow::metrics).collect();
    let mean = MetricsRecord::mean(&records)
        .ok_or_else(|| Error::Data("evaluation set is empty".into()))?;
    Ok(EvalReport { rows, mean })
}

/// Metrics of the clamped pipeline output against each target over the
/// original (unpadded) region.
pub fn evaluate(pipeline: &Pipeline, samples: &[Sample]) -> Result<EvalReport> {
    let rows = samples
        .iter()
        .map(|s| {
            let m = MetricsRecord::compute(&pipeline.enhance_sample(s)?, &s.target_image(), None)?;
            Ok(EvalRow {
                stem: s.stem.clone(),
                lab_l2: m.lab_l2,
                psnr: m.psnr,
                ssim: m.ssim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    report(rows)
}

/// Metrics of the unmodified raw images, the do-nothing baseline.
pub fn evaluate_identity(samples: &[Sample]) -> Result<EvalReport> {
    let rows = samples
        .iter()
        .map(|s| {
            let m = MetricsRecord::compute(&s.raw_image().clamped(), &s.target_image(), None)?;
            Ok(EvalRow {
                stem: s.stem.clone(),
                lab_l2: m.lab_l2,
                psnr: m.psnr,
                ssim: m.ssim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    report(rows)
}
