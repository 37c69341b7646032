//! Channel-wise enhancement: a conv backbone with global pooling and a
//! three-layer fully connected head predicting one 3x3 color matrix and
//! bias per image, applied as a residual `r_c = W p + b` at every pixel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::{Image, Mask};
use crate::layers::{ConvBnRelu, Init, Linear, Mode};
use crate::tensor::{Graph, ParamStore, Result, Tensor, TensorError, Var};

/// Number of free parameters of an [`AffineColorMap`].
pub const AFFINE_PARAMS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CENetConfig {
    /// Output channels of each stride-2 conv block of the backbone.
    pub backbone_channels: Vec<usize>,
    /// Widths of the hidden fully connected layers; the output layer adds 12.
    pub head_hidden: Vec<usize>,
}

impl Default for CENetConfig {
    fn default() -> Self {
        Self {
            backbone_channels: vec![16, 32, 64, 128],
            head_hidden: vec![64, 32],
        }
    }
}

/// Global affine color adjustment `p -> W p + b` in normalized RGB.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineColorMap {
    pub weight: [[f64; 3]; 3],
    pub bias: [f64; 3],
}

impl AffineColorMap {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self {
            weight: [[p[0], p[1], p[2]], [p[3], p[4], p[5]], [p[6], p[7], p[8]]],
            bias: [p[9], p[10], p[11]],
        }
    }

    pub fn to_params(&self) -> [f64; AFFINE_PARAMS] {
        let w = &self.weight;
        let b = &self.bias;
        [
            w[0][0], w[0][1], w[0][2], w[1][0], w[1][1], w[1][2], w[2][0], w[2][1], w[2][2], b[0],
            b[1], b[2],
        ]
    }

    /// `W p + b`, summed as `b + w0 p0 + w1 p1 + w2 p2`.
    pub fn residual(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| {
            let w = &self.weight[i];
            self.bias[i] + w[0] * p[0] + w[1] * p[1] + w[2] * p[2]
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|v| v.is_finite())
    }
}

/// Records `r_c` for a batch of images given `(n, 12, 1, 1)` map parameters.
pub fn apply_affine_residual(g: &mut Graph, image: Var, params: Var) -> Result<Var> {
    let s = g.shape(image);
    if s.c != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "apply_affine_residual",
            dim: "channels",
            got: s.c,
            expected: 3,
        });
    }
    g.channel_affine(image, params)
}

/// Residual image for one map, no graph involved.
pub fn affine_residual_image(image: &Image, map: &AffineColorMap) -> Image {
    let n = image.width() * image.height();
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let p = [
            image.data()[i],
            image.data()[n + i],
            image.data()[2 * n + i],
        ];
        let r = map.residual(p);
        for c in 0..3 {
            out[c * n + i] = r[c];
        }
    }
    Image::new(image.width(), image.height(), out).expect("same layout")
}

#[derive(Debug, Clone)]
pub struct CENet {
    config: CENetConfig,
    store: ParamStore,
    backbone: Vec<ConvBnRelu>,
    head: Vec<Linear>,
}

impl CENet {
    /// Builds a model with seeded He initialization and a zero output layer,
    /// so a fresh model predicts the zero map (identity enhancement).
    pub fn new(config: CENetConfig, seed: u64) -> Result<Self> {
        if config.backbone_channels.is_empty() {
            return Err(TensorError::Invalid(
                "CENet backbone needs at least one block".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut store = ParamStore::new();
        let mut backbone = Vec::new();
        let mut in_c = 3;
        for (i, &out_c) in config.backbone_channels.iter().enumerate() {
            backbone.push(ConvBnRelu::new(
                &mut store,
                &mut rng,
                &format!("cenet.backbone.{i}"),
                in_c,
                out_c,
                3,
                2,
                1,
            )?);
            in_c = out_c;
        }
        let mut head = Vec::new();
        let mut widths = config.head_hidden.clone();
        widths.push(AFFINE_PARAMS);
        for (i, &out_f) in widths.iter().enumerate() {
            let init = if i + 1 == widths.len() {
                Init::Zeros
            } else {
                Init::He
            };
            head.push(Linear::new(
                &mut store,
                &mut rng,
                &format!("cenet.head.{i}"),
                in_c,
                out_f,
                init,
            )?);
            in_c = out_f;
        }
        Ok(Self {
            config,
            store,
            backbone,
            head,
        })
    }

    pub fn config(&self) -> &CENetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Records the head output: `(n, 12, 1, 1)` affine parameters.
    pub fn predict_params(&self, g: &mut Graph, image: Var, mode: Mode) -> Result<Var> {
        self.predict_params_with(g, &self.store, image, mode)
    }

    /// As [`CENet::predict_params`] but reading weights from `store`, which
    /// must share this model's layout (used for finite-difference probes).
    pub fn predict_params_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: Var,
        mode: Mode,
    ) -> Result<Var> {
        let s = g.shape(image);
        if s.c != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "cenet",
                dim: "channels",
                got: s.c,
                expected: 3,
            });
        }
        let mut x = image;
        for block in &self.backbone {
            x = block.forward(g, store, x, mode)?;
        }
        x = g.global_avg_pool(x);
        let last = self.head.len() - 1;
        for (i, layer) in self.head.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if i != last {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    /// Records `I + r_c`; returns `(coarse, params)`.
    pub fn enhance_graph(&self, g: &mut Graph, image: Var, mode: Mode) -> Result<(Var, Var)> {
        self.enhance_graph_with(g, &self.store, image, mode)
    }

    pub fn enhance_graph_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: Var,
        mode: Mode,
    ) -> Result<(Var, Var)> {
        let params = self.predict_params_with(g, store, image, mode)?;
        let residual = apply_affine_residual(g, image, params)?;
        let coarse = g.add(image, residual)?;
        Ok((coarse, params))
    }

    /// One map per batch element, evaluated with running statistics.
    pub fn predict_affine(&self, image: &Tensor) -> Result<Vec<AffineColorMap>> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let p = self.predict_params(&mut g, x, Mode::Eval)?;
        Ok(g.value(p)
            .data()
            .chunks(AFFINE_PARAMS)
            .map(AffineColorMap::from_params)
            .collect())
    }

    /// Coarse result `I + r_c` in eval mode. Not clamped.
    pub fn ce_enhance(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let (coarse, _) = self.enhance_graph(&mut g, x, Mode::Eval)?;
        Ok(g.value(coarse).clone())
    }
}

/// Closed-form least-squares fit of the channel-wise residual objective on
/// one image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFit {
    pub map: AffineColorMap,
    /// Mean over valid pixels and channels of `(p + W p + b - target)^2`.
    pub loss: f64,
    /// The normal matrix was (numerically) singular and a pseudo-inverse was used.
    pub degenerate: bool,
}

/// Solves `min_{W,b} mean |p + W p + b - q|^2` over valid pixels through the
/// normal equations on homogeneous pixel vectors `[r, g, b, 1]`.
pub fn least_squares_affine_oracle(
    raw: &Image,
    target: &Image,
    mask: Option<&Mask>,
) -> Result<AffineFit> {
    let invalid = |e: crate::imaging::ImagingError| TensorError::Invalid(e.to_string());
    raw.same_size(target).map_err(invalid)?;
    let mut normal = [[0.0f64; 4]; 4];
    let mut rhs = [[0.0f64; 3]; 4];
    let mut count = 0usize;
    for y in 0..raw.height() {
        for x in 0..raw.width() {
            if mask.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let p = raw.pixel(x, y);
            let q = target.pixel(x, y);
            let h = [p[0], p[1], p[2], 1.0];
            for i in 0..4 {
                for j in 0..4 {
                    normal[i][j] += h[i] * h[j];
                }
                for c in 0..3 {
                    rhs[i][c] += h[i] * (q[c] - p[c]);
                }
            }
            count += 1;
        }
    }
    if count < 4 {
        return Err(TensorError::Invalid(format!(
            "affine fit needs at least 4 valid pixels, got {count}"
        )));
    }
    let (pinv, degenerate) = symmetric_pseudo_inverse(normal);
    let mut map = AffineColorMap::zero();
    for c in 0..3 {
        let sol: [f64; 4] = std::array::from_fn(|i| (0..4).map(|j| pinv[i][j] * rhs[j][c]).sum());
        map.weight[c] = [sol[0], sol[1], sol[2]];
        map.bias[c] = sol[3];
    }
    let mut total = 0.0;
    for y in 0..raw.height() {
        for x in 0..raw.width() {
            if mask.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let p = raw.pixel(x, y);
            let q = target.pixel(x, y);
            let r = map.residual(p);
            for c in 0..3 {
                let d = p[c] + r[c] - q[c];
                total += d * d;
            }
        }
    }
    Ok(AffineFit {
        map,
        loss: total / (3 * count) as f64,
        degenerate,
    })
}

/// Moore-Penrose inverse of a symmetric 4x4 matrix by cyclic Jacobi
/// eigendecomposition. Eigenvalues below `1e-12 * max` are dropped.
fn symmetric_pseudo_inverse(m: [[f64; 4]; 4]) -> ([[f64; 4]; 4], bool) {
    let mut a = m;
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..4)
            .flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..4 {
            for q in p + 1..4 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig: [f64; 4] = std::array::from_fn(|i| a[i][i]);
    let max = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let tol = 1e-12 * max.max(f64::MIN_POSITIVE);
    let mut degenerate = false;
    let inv_eig: [f64; 4] = std::array::from_fn(|i| {
        if eig[i].abs() > tol {
            1.0 / eig[i]
        } else {
            degenerate = true;
            0.0
        }
    });
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| v[i][k] * inv_eig[k] * v[j][k]).sum();
        }
    }
    (out, degenerate)
}
