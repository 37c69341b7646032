//! Pixel-wise refinement network: downsampling, a feature transformation
//! stage with an optional non-local block and residual blocks, and
//! upsampling back to a signed RGB residual.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{BatchNorm2d, Conv2d, ConvBnRelu, ConvTranspose2d, Init, Mode};
use crate::tensor::{Graph, ParamStore, Result, Shape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonLocalPosition {
    #[default]
    Front,
    Middle,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PRNetConfig {
    pub base_channels: usize,
    pub num_residual_blocks: usize,
    pub use_nonlocal: bool,
    pub nonlocal_position: NonLocalPosition,
}

impl Default for PRNetConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            num_residual_blocks: 3,
            use_nonlocal: true,
            nonlocal_position: NonLocalPosition::Front,
        }
    }
}

impl PRNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(TensorError::Invalid(
                "base_channels must be at least 1".into(),
            ));
        }
        if self.num_residual_blocks == 0 {
            return Err(TensorError::Invalid(
                "num_residual_blocks must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Embedded-Gaussian non-local block with a `C/2` bottleneck.
#[derive(Debug, Clone)]
pub struct NonLocalBlock {
    pub channels: usize,
    pub theta: Conv2d,
    pub phi: Conv2d,
    pub g: Conv2d,
    pub w_z: Conv2d,
}

impl NonLocalBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "nonlocal",
                dim: "channels (must be even)",
                got: channels,
                expected: channels + 1,
            });
        }
        let half = channels / 2;
        let conv = |store: &mut ParamStore, rng: &mut ChaCha8Rng, part: &str, i, o, bias, init| {
            Conv2d::new(
                store,
                rng,
                &format!("{name}.{part}"),
                i,
                o,
                1,
                1,
                0,
                bias,
                init,
            )
        };
        Ok(Self {
            channels,
            theta: conv(store, rng, "theta", channels, half, true, Init::Zeros)?,
            phi: conv(store, rng, "phi", channels, half, false, Init::He)?,
            g: conv(store, rng, "g", channels, half, true, Init::He)?,
            w_z: conv(store, rng, "w_z", half, channels, true, Init::Zeros)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(g, store, x)?.0)
    }

    /// Returns the output and the `(n, 1, m, m)` attention matrix.
    pub fn forward_with_attention(
        &self,
        gr: &mut Graph,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Var)> {
        let s = gr.shape(x);
        if s.c != self.channels {
            return Err(TensorError::ShapeMismatch {
                op: "nonlocal",
                dim: "channels",
                got: s.c,
                expected: self.channels,
            });
        }
        let half = s.c / 2;
        let m = s.h * s.w;
        let flat = Shape::new(s.n, 1, half, m);
        let theta = self.theta.forward(gr, store, x)?;
        let theta = gr.reshape(theta, flat)?;
        let phi = self.phi.forward(gr, store, x)?;
        let phi = gr.reshape(phi, flat)?;
        let gx = self.g.forward(gr, store, x)?;
        let gx = gr.reshape(gx, flat)?;
        // f[i][j] = theta_i . phi_j
        let f = gr.matmul(theta, phi, true, false)?;
        let attn = gr.softmax_rows(f);
        // y[c][i] = sum_j A[i][j] g[c][j]
        let y = gr.matmul(gx, attn, false, true)?;
        let y = gr.reshape(y, Shape::new(s.n, half, s.h, s.w))?;
        let z = self.w_z.forward(gr, store, y)?;
        Ok((gr.add(z, x)?, attn))
    }
}

/// `x + bn(conv(relu(bn(conv(x)))))` with no activation after the sum.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub channels: usize,
    pub first: ConvBnRelu,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
}

impl ResidualBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        let first = ConvBnRelu::new(
            store,
            rng,
            &format!("{name}.0"),
            channels,
            channels,
            3,
            1,
            1,
        )?;
        let conv2 = Conv2d::new(
            store,
            rng,
            &format!("{name}.1.conv"),
            channels,
            channels,
            3,
            1,
            1,
            false,
            Init::He,
        )?;
        let bn2 = BatchNorm2d::new(store, &format!("{name}.1.bn"), channels)?;
        Ok(Self {
            channels,
            first,
            conv2,
            bn2,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let s = g.shape(x);
        if s.c != self.channels {
            return Err(TensorError::ShapeMismatch {
                op: "residual_block",
                dim: "channels",
                got: s.c,
                expected: self.channels,
            });
        }
        let y = self.first.forward(g, store, x, mode)?;
        let y = self.conv2.forward(g, store, y)?;
        let y = self.bn2.forward(g, store, y, mode)?;
        g.add(x, y)
    }
}

#[derive(Debug, Clone)]
struct UpBlock {
    deconv: ConvTranspose2d,
    bn: BatchNorm2d,
}

#[derive(Debug, Clone)]
pub struct PRNet {
    config: PRNetConfig,
    store: ParamStore,
    down: Vec<ConvBnRelu>,
    nonlocal: Option<NonLocalBlock>,
    residual: Vec<ResidualBlock>,
    up: Vec<UpBlock>,
    out: Conv2d,
}

impl PRNet {
    pub fn new(config: PRNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut store = ParamStore::new();
        let b = config.base_channels;
        let down = vec![
            ConvBnRelu::new(&mut store, &mut rng, "prnet.down.0", 3, b, 3, 1, 1)?,
            ConvBnRelu::new(&mut store, &mut rng, "prnet.down.1", b, 2 * b, 3, 2, 1)?,
            ConvBnRelu::new(&mut store, &mut rng, "prnet.down.2", 2 * b, 4 * b, 3, 2, 1)?,
        ];
        // The attention block draws from its own stream.
        let mut nl_rng = ChaCha8Rng::seed_from_u64(seed);
        nl_rng.set_stream(3);
        let nonlocal = if config.use_nonlocal {
            Some(NonLocalBlock::new(
                &mut store,
                &mut nl_rng,
                "prnet.transform.nonlocal",
                4 * b,
            )?)
        } else {
            None
        };
        let residual = (0..config.num_residual_blocks)
            .map(|i| {
                ResidualBlock::new(
                    &mut store,
                    &mut rng,
                    &format!("prnet.transform.res.{i}"),
                    4 * b,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut up = Vec::new();
        for (i, c) in [4 * b, 2 * b].into_iter().enumerate() {
            let name = format!("prnet.up.{i}");
            let deconv = ConvTranspose2d::new(
                &mut store,
                &mut rng,
                &format!("{name}.deconv"),
                c,
                c / 2,
                4,
                2,
                1,
                false,
            )?;
            let bn = BatchNorm2d::new(&mut store, &format!("{name}.bn"), c / 2)?;
            up.push(UpBlock { deconv, bn });
        }
        let out = Conv2d::new(
            &mut store,
            &mut rng,
            "prnet.out",
            b,
            3,
            3,
            1,
            1,
            true,
            Init::Zeros,
        )?;
        Ok(Self {
            config,
            store,
            down,
            nonlocal,
            residual,
            up,
            out,
        })
    }

    pub fn config(&self) -> &PRNetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn nonlocal_block(&self) -> Option<&NonLocalBlock> {
        self.nonlocal.as_ref()
    }

    /// Index in the residual chain before which the non-local block runs.
    fn nonlocal_slot(&self) -> usize {
        let n = self.residual.len();
        match self.config.nonlocal_position {
            NonLocalPosition::Front => 0,
            NonLocalPosition::Middle => n / 2,
            NonLocalPosition::End => n,
        }
    }

    /// Records `r_p = PRNet(coarse)`.
    pub fn forward(&self, g: &mut Graph, coarse: Var, mode: Mode) -> Result<Var> {
        self.forward_with(g, &self.store, coarse, mode)
    }

    pub fn forward_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        coarse: Var,
        mode: Mode,
    ) -> Result<Var> {
        let s = g.shape(coarse);
        if s.c != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "prnet",
                dim: "channels",
                got: s.c,
                expected: 3,
            });
        }
        for (dim, got) in [("height", s.h), ("width", s.w)] {
            if got % 4 != 0 || got == 0 {
                return Err(TensorError::ShapeMismatch {
                    op: "prnet (size must be a positive multiple of 4)",
                    dim,
                    got,
                    expected: got.div_ceil(4).max(1) * 4,
                });
            }
        }
        let mut x = coarse;
        for block in &self.down {
            x = block.forward(g, store, x, mode)?;
        }
        let slot = self.nonlocal_slot();
        for i in 0..=self.residual.len() {
            if i == slot {
                if let Some(nl) = &self.nonlocal {
                    x = nl.forward(g, store, x)?;
                }
            }
            if let Some(block) = self.residual.get(i) {
                x = block.forward(g, store, x, mode)?;
            }
        }
        for block in &self.up {
            x = block.deconv.forward(g, store, x)?;
            x = block.bn.forward(g, store, x, mode)?;
            x = g.relu(x);
        }
        self.out.forward(g, store, x)
    }

    /// Residual `r_p` in eval mode.
    pub fn predict(&self, coarse: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(coarse.clone());
        let r = self.forward(&mut g, x, Mode::Eval)?;
        Ok(g.value(r).clone())
    }
}

/// Smallest multiple of 4 that is at least `size`.
pub fn network_size(size: usize) -> usize {
    size.div_ceil(4).max(1) * 4
}
