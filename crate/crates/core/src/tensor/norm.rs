//! Per-channel batch normalization over `(n, h, w)`.

use super::graph::{Node, Op};
use super::{Graph, Result, Shape, Tensor, TensorError, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running mean and (unbiased) variance per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64], momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with previously accumulated statistics.
    Eval(Option<&'a RunningStats>),
}

impl Graph {
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(TensorError::InvalidEps(eps));
        }
        let xs = self.shape(input);
        let c = xs.c;
        for (v, dim) in [(gamma, "gamma length"), (beta, "beta length")] {
            let n = self.shape(v).numel();
            if n != c {
                return Err(TensorError::ShapeMismatch {
                    op: "batchnorm",
                    dim,
                    got: n,
                    expected: c,
                });
            }
        }
        let plane = xs.plane();
        let x = self.value(input).data();
        let (mean, var, train) = match mode {
            BatchNormMode::Train => {
                let count = (xs.n * plane) as f64;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (i, chunk) in x.chunks(plane).enumerate() {
                    mean[i % c] += chunk.iter().sum::<f64>();
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for (i, chunk) in x.chunks(plane).enumerate() {
                    let m = mean[i % c];
                    var[i % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var, true)
            }
            BatchNormMode::Eval(stats) => {
                let stats = stats.ok_or(TensorError::MissingRunningStats)?;
                if stats.mean.len() != c || stats.var.len() != c {
                    return Err(TensorError::ShapeMismatch {
                        op: "batchnorm",
                        dim: "running stats length",
                        got: stats.mean.len(),
                        expected: c,
                    });
                }
                (stats.mean.clone(), stats.var.clone(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = vec![0.0; xs.numel()];
        for (i, (o, src)) in out.chunks_mut(plane).zip(x.chunks(plane)).enumerate() {
            let ch = i % c;
            let (m, s, gmc, btc) = (mean[ch], inv_std[ch], gm[ch], bt[ch]);
            for (ov, xv) in o.iter_mut().zip(src) {
                *ov = gmc * ((xv - m) * s) + btc;
            }
        }
        let op = if train {
            Op::BatchNormTrain { mean, var, inv_std }
        } else {
            Op::BatchNormEval { mean, inv_std }
        };
        Ok(self.push(Tensor::new(xs, out)?, op, vec![input, gamma, beta]))
    }
}

/// Batch mean and unbiased batch variance of a train-mode batchnorm node.
pub(crate) fn batch_statistics(g: &Graph, v: Var) -> Option<(Vec<f64>, Vec<f64>)> {
    let node = g.node(v);
    let Op::BatchNormTrain { mean, var, .. } = &node.op else {
        return None;
    };
    let s: Shape = node.value.shape();
    let count = (s.n * s.plane()) as f64;
    let correction = if count > 1.0 {
        count / (count - 1.0)
    } else {
        1.0
    };
    Some((mean.clone(), var.iter().map(|v| v * correction).collect()))
}

fn param_grads(
    x: &[f64],
    gy: &[f64],
    c: usize,
    plane: usize,
    mean: &[f64],
    inv_std: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (i, (xc, gc)) in x.chunks(plane).zip(gy.chunks(plane)).enumerate() {
        let ch = i % c;
        let (m, s) = (mean[ch], inv_std[ch]);
        for (xv, gv) in xc.iter().zip(gc) {
            dgamma[ch] += gv * (xv - m) * s;
            dbeta[ch] += gv;
        }
    }
    (dgamma, dbeta)
}

pub(crate) fn train_backward(
    g: &Graph,
    node: &Node,
    gy: &[f64],
    need: &[bool],
    mean: &[f64],
    inv_std: &[f64],
) -> Vec<Option<Vec<f64>>> {
    let xs = g.shape(node.inputs[0]);
    let (c, plane) = (xs.c, xs.plane());
    let count = (xs.n * plane) as f64;
    let x = g.value(node.inputs[0]).data();
    let gamma = g.value(node.inputs[1]).data();
    let (dgamma, dbeta) = param_grads(x, gy, c, plane, mean, inv_std);
    let dx = need[0].then(|| {
        let mut dx = vec![0.0; xs.numel()];
        for (i, ((dc, xc), gc)) in dx
            .chunks_mut(plane)
            .zip(x.chunks(plane))
            .zip(gy.chunks(plane))
            .enumerate()
        {
            let ch = i % c;
            let (m, s) = (mean[ch], inv_std[ch]);
            let scale = gamma[ch] * s / count;
            for ((d, xv), gv) in dc.iter_mut().zip(xc).zip(gc) {
                let xhat = (xv - m) * s;
                *d = scale * (count * gv - dbeta[ch] - xhat * dgamma[ch]);
            }
        }
        dx
    });
    vec![dx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
}

pub(crate) fn eval_backward(
    g: &Graph,
    node: &Node,
    gy: &[f64],
    need: &[bool],
    mean: &[f64],
    inv_std: &[f64],
) -> Vec<Option<Vec<f64>>> {
    let xs = g.shape(node.inputs[0]);
    let (c, plane) = (xs.c, xs.plane());
    let x = g.value(node.inputs[0]).data();
    let gamma = g.value(node.inputs[1]).data();
    let (dgamma, dbeta) = param_grads(x, gy, c, plane, mean, inv_std);
    let dx = need[0].then(|| {
        let mut dx = gy.to_vec();
        for (i, dc) in dx.chunks_mut(plane).enumerate() {
            let scale = gamma[i % c] * inv_std[i % c];
            dc.iter_mut().for_each(|d| *d *= scale);
        }
        dx
    });
    vec![dx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(g: &mut Graph, gamma: f64, beta: f64) -> (Var, Var, Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = g.input(Tensor::from_fn(Shape::new(3, 2, 4, 5), |_| {
            rng.gen_range(-10.0..20.0)
        }));
        let gm = g.input(Tensor::full(Shape::vector(2), gamma));
        let bt = g.input(Tensor::full(Shape::vector(2), beta));
        (x, gm, bt)
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut g = Graph::new();
        let (x, gm, bt) = setup(&mut g, 1.0, 0.0);
        let y = g
            .batchnorm(x, gm, bt, BatchNormMode::Train, BN_EPS)
            .unwrap();
        let v = g.value(y);
        for c in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| (0..4).flat_map(move |h| (0..5).map(move |w| (n, h, w))))
                .map(|(n, h, w)| v.at(n, c, h, w))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let mut g = Graph::new();
        let (x, gm, bt) = setup(&mut g, 0.0, 0.25);
        let y = g
            .batchnorm(x, gm, bt, BatchNormMode::Train, BN_EPS)
            .unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn eval_requires_running_stats() {
        let mut g = Graph::new();
        let (x, gm, bt) = setup(&mut g, 1.0, 0.0);
        assert_eq!(
            g.batchnorm(x, gm, bt, BatchNormMode::Eval(None), BN_EPS),
            Err(TensorError::MissingRunningStats)
        );
        assert_eq!(
            g.batchnorm(x, gm, bt, BatchNormMode::Train, 0.0),
            Err(TensorError::InvalidEps(0.0))
        );
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(Shape::new(1, 1, 1, 2), 3.0));
        let gm = g.input(Tensor::full(Shape::vector(1), 2.0));
        let bt = g.input(Tensor::full(Shape::vector(1), 1.0));
        let stats = RunningStats {
            mean: vec![1.0],
            var: vec![4.0 - BN_EPS],
        };
        let y = g
            .batchnorm(x, gm, bt, BatchNormMode::Eval(Some(&stats)), BN_EPS)
            .unwrap();
        for v in g.value(y).data() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stays_finite_for_large_inputs() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = g.input(
            Tensor::from_fn(Shape::new(2, 3, 4, 4), |_| rng.gen_range(-1e4..1e4))
                .with_requires_grad(true),
        );
        let gm = g.input(Tensor::full(Shape::vector(3), 1.0));
        let bt = g.input(Tensor::full(Shape::vector(3), 0.0));
        let y = g
            .batchnorm(x, gm, bt, BatchNormMode::Train, BN_EPS)
            .unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(g.value(y).is_finite());
        assert!(grads.of(x).unwrap().iter().all(|v| v.is_finite()));
    }
}
