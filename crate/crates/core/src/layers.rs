//! Parameterized building blocks shared by both networks.

use rand_chacha::ChaCha8Rng;

use crate::tensor::{
    BatchNormMode, BufferId, Graph, ParamId, ParamStore, Result, RunningStats, Shape, Tensor, Var,
    BN_EPS, BN_MOMENTUM,
};

/// Whether batchnorm layers use batch statistics (and update their running
/// averages) or the stored running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    He,
    Zeros,
}

fn init_tensor(rng: &mut ChaCha8Rng, shape: Shape, fan_in: usize, init: Init) -> Tensor {
    match init {
        Init::He => crate::tensor::he_uniform(rng, shape, fan_in),
        Init::Zeros => Tensor::zeros(shape),
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let w = init_tensor(rng, Shape::new(out_c, in_c, k, k), in_c * k * k, init);
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(Shape::vector(out_c)))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        // Each output pixel receives roughly in_c * (k/stride)^2 contributions.
        let fan_in = in_c * (k / stride.max(1)).pow(2);
        let w = init_tensor(rng, Shape::new(in_c, out_c, k, k), fan_in, Init::He);
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(Shape::vector(out_c)))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv_transpose2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.add(
            format!("{name}.gamma"),
            Tensor::full(Shape::vector(channels), 1.0),
        )?;
        let beta = store.add(
            format!("{name}.beta"),
            Tensor::zeros(Shape::vector(channels)),
        )?;
        let stats = RunningStats::new(channels);
        let running_mean = store.add_buffer(
            format!("{name}.running_mean"),
            Shape::vector(channels),
            stats.mean,
        )?;
        let running_var = store.add_buffer(
            format!("{name}.running_var"),
            Shape::vector(channels),
            stats.var,
        )?;
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Train => {
                let y = g.batchnorm(x, gamma, beta, BatchNormMode::Train, BN_EPS)?;
                g.schedule_running_update(
                    store,
                    self.running_mean,
                    self.running_var,
                    y,
                    BN_MOMENTUM,
                );
                Ok(y)
            }
            Mode::Eval => {
                let stats = RunningStats {
                    mean: store.buffer(self.running_mean).data.clone(),
                    var: store.buffer(self.running_var).data.clone(),
                };
                g.batchnorm(x, gamma, beta, BatchNormMode::Eval(Some(&stats)), BN_EPS)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_f: usize,
        out_f: usize,
        init: Init,
    ) -> Result<Self> {
        let w = init_tensor(rng, Shape::new(out_f, in_f, 1, 1), in_f, init);
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::vector(out_f)))?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

/// Convolution followed by batchnorm and ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let conv = Conv2d::new(
            store,
            rng,
            &format!("{name}.conv"),
            in_c,
            out_c,
            k,
            stride,
            padding,
            false,
            Init::He,
        )?;
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), out_c)?;
        Ok(Self { conv, bn })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        let y = self.bn.forward(g, store, y, mode)?;
        Ok(g.relu(y))
    }
}

/// Refills every parameter with seeded uniform noise in `[-scale, scale]`.
/// Used to move zero-initialized layers off their degenerate starting point
/// before gradient checks.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.params_mut() {
        for v in p.tensor.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// Refills every all-zero parameter (zero-initialized output layers,
/// biases, batchnorm shifts) with seeded noise in `[-scale, scale]`, leaving
/// the rest untouched. Gives gradients a path through layers that start at
/// zero.
pub fn fill_zero_params(store: &mut ParamStore, seed: u64, scale: f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.params_mut() {
        if p.tensor.data().iter().all(|&v| v == 0.0) {
            for v in p.tensor.data_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }
}
