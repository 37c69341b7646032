//! Finite-difference gradient-check suites at increasing scope.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cenet::{CENet, CENetConfig};
use crate::error::Result;
use crate::layers::{fill_zero_params, Mode};
use crate::prnet::{NonLocalBlock, PRNet, PRNetConfig, ResidualBlock};
use crate::tensor::gradcheck::{gradient_check, GradCheckReport, Sampling};
use crate::tensor::{BatchNormMode, Graph, ParamStore, RunningStats, Shape, Tensor, Var, BN_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Every primitive on its own.
    Op,
    /// CENet end to end.
    Cenet,
    /// Residual block and PRNet end to end.
    Prnet,
    /// The composed CE+PRNL pipeline.
    Full,
}

impl std::str::FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "op" => Ok(Scope::Op),
            "cenet" => Ok(Scope::Cenet),
            "prnet" => Ok(Scope::Prnet),
            "full" => Ok(Scope::Full),
            other => Err(format!(
                "unknown scope {other:?} (expected op, cenet, prnet or full)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl CheckOutcome {
    pub fn max_rel_error(&self) -> f64 {
        self.report.max_rel_error()
    }

    pub fn passed(&self) -> bool {
        self.report.passed(self.tolerance)
    }
}

pub const LINEAR_TOL: f64 = 1e-6;
pub const CONV_TOL: f64 = 1e-4;
pub const BATCHNORM_TOL: f64 = 1e-3;
pub const NONLOCAL_TOL: f64 = 1e-3;
pub const FULL_TOL: f64 = 1e-2;

const STEP: f64 = 1e-5;
const FULL_STEP: f64 = 1e-6;

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// A store holding the named random tensors.
fn store_of(items: Vec<(&str, Tensor)>) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, t) in items {
        store.add(name, t)?;
    }
    Ok(store)
}

fn param(g: &mut Graph, store: &ParamStore, name: &str) -> Var {
    g.param(store, store.find(name).expect("registered above"))
}

/// `sum(y * r)` for a fixed random `r`, a generic scalar read-out.
fn project(g: &mut Graph, y: Var, seed: u64) -> crate::tensor::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = uniform(&mut rng, g.shape(y), -1.0, 1.0);
    let z = g.scale_by(y, &r)?;
    Ok(g.sum(z))
}

fn check(
    name: &'static str,
    tolerance: f64,
    store: &mut ParamStore,
    step: f64,
    sampling: Sampling,
    f: impl FnMut(&ParamStore, &mut Graph) -> crate::tensor::Result<Var>,
) -> Result<CheckOutcome> {
    let report = gradient_check(store, step, sampling, f)?;
    Ok(CheckOutcome {
        name,
        tolerance,
        report,
    })
}

fn op_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut s = store_of(vec![
        (
            "input",
            uniform(&mut rng, Shape::new(3, 5, 1, 1), -1.0, 1.0),
        ),
        (
            "weight",
            uniform(&mut rng, Shape::new(4, 5, 1, 1), -1.0, 1.0),
        ),
        ("bias", uniform(&mut rng, Shape::vector(4), -1.0, 1.0)),
    ])?;
    out.push(check(
        "linear",
        LINEAR_TOL,
        &mut s,
        STEP,
        Sampling::All,
        |st, g| {
            let (x, w, b) = (
                param(g, st, "input"),
                param(g, st, "weight"),
                param(g, st, "bias"),
            );
            let y = g.linear(x, w, Some(b))?;
            project(g, y, 1)
        },
    )?);

    let mut s = store_of(vec![
        (
            "input",
            uniform(&mut rng, Shape::new(2, 3, 6, 6), -1.0, 1.0),
        ),
        (
            "weight",
            uniform(&mut rng, Shape::new(4, 3, 3, 3), -1.0, 1.0),
        ),
        ("bias", uniform(&mut rng, Shape::vector(4), -1.0, 1.0)),
    ])?;
    out.push(check(
        "conv2d",
        CONV_TOL,
        &mut s,
        STEP,
        Sampling::All,
        |st, g| {
            let (x, w, b) = (
                param(g, st, "input"),
                param(g, st, "weight"),
                param(g, st, "bias"),
            );
            let y = g.conv2d(x, w, Some(b), 2, 1)?;
            project(g, y, 2)
        },
    )?);

    let mut s = store_of(vec![
        (
            "input",
            uniform(&mut rng, Shape::new(2, 4, 3, 3), -1.0, 1.0),
        ),
        (
            "weight",
            uniform(&mut rng, Shape::new(4, 2, 4, 4), -1.0, 1.0),
        ),
        ("bias", uniform(&mut rng, Shape::vector(2), -1.0, 1.0)),
    ])?;
    out.push(check(
        "conv_transpose2d",
        CONV_TOL,
        &mut s,
        STEP,
        Sampling::All,
        |st, g| {
            let (x, w, b) = (
                param(g, st, "input"),
                param(g, st, "weight"),
                param(g, st, "bias"),
            );
            let y = g.conv_transpose2d(x, w, Some(b), 2, 1)?;
            project(g, y, 3)
        },
    )?);

    let mut s = store_of(vec![
        (
            "input",
            uniform(&mut rng, Shape::new(2, 4, 5, 5), -1.0, 1.0),
        ),
        ("gamma", uniform(&mut rng, Shape::vector(4), 0.5, 1.5)),
        ("beta", uniform(&mut rng, Shape::vector(4), -0.5, 0.5)),
    ])?;
    out.push(check(
        "batchnorm_train",
        BATCHNORM_TOL,
        &mut s,
        1e-4,
        Sampling::All,
        |st, g| {
            let (x, ga, be) = (
                param(g, st, "input"),
                param(g, st, "gamma"),
                param(g, st, "beta"),
            );
            let y = g.batchnorm(x, ga, be, BatchNormMode::Train, BN_EPS)?;
            project(g, y, 4)
        },
    )?);

    let stats = RunningStats {
        mean: (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        var: (0..4).map(|_| rng.gen_range(0.5..2.0)).collect(),
    };
    out.push(check(
        "batchnorm_eval",
        BATCHNORM_TOL,
        &mut s,
        1e-4,
        Sampling::All,
        |st, g| {
            let (x, ga, be) = (
                param(g, st, "input"),
                param(g, st, "gamma"),
                param(g, st, "beta"),
            );
            let y = g.batchnorm(x, ga, be, BatchNormMode::Eval(Some(&stats)), BN_EPS)?;
            project(g, y, 5)
        },
    )?);

    // Keep every value at least 1e-2 away from the kink.
    let relu_in = Tensor::from_fn(Shape::new(2, 3, 4, 4), |_| {
        let m = rng.gen_range(0.01..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let mut s = store_of(vec![("input", relu_in)])?;
    out.push(check(
        "relu",
        BATCHNORM_TOL,
        &mut s,
        STEP,
        Sampling::All,
        |st, g| {
            let x = param(g, st, "input");
            let y = g.relu(x);
            project(g, y, 6)
        },
    )?);

    let mut s = store_of(vec![(
        "input",
        uniform(&mut rng, Shape::new(1, 2, 7, 7), -3.0, 3.0),
    )])?;
    out.push(check(
        "softmax_rows",
        CONV_TOL,
        &mut s,
        STEP,
        Sampling::All,
        |st, g| {
            let x = param(g, st, "input");
            let y = g.softmax_rows(x);
            project(g, y, 7)
        },
    )?);

    let mut s = store_of(vec![
        ("lhs", uniform(&mut rng, Shape::new(1, 2, 4, 3), -1.0, 1.0)),
        ("rhs", uniform(&mut rng, Shape::new(1, 2, 5, 4), -1.0, 1.0)),
    ])?;
    out.push(check(
        "matmul",
        LINEAR_TOL,
        &mut s,
        STEP,
        Sampling::All,
        |st, g| {
            let (a, b) = (param(g, st, "lhs"), param(g, st, "rhs"));
            let y = g.matmul(a, b, true, true)?;
            project(g, y, 8)
        },
    )?);

    let mut s = store_of(vec![
        ("image", uniform(&mut rng, Shape::new(2, 3, 4, 4), 0.0, 1.0)),
        (
            "params",
            uniform(&mut rng, Shape::new(2, 12, 1, 1), -0.5, 0.5),
        ),
    ])?;
    out.push(check(
        "channel_affine",
        LINEAR_TOL,
        &mut s,
        STEP,
        Sampling::All,
        |st, g| {
            let (x, p) = (param(g, st, "image"), param(g, st, "params"));
            let y = g.channel_affine(x, p)?;
            project(g, y, 9)
        },
    )?);

    let mut s = store_of(vec![(
        "input",
        uniform(&mut rng, Shape::new(2, 3, 5, 4), -1.0, 1.0),
    )])?;
    out.push(check(
        "global_avg_pool",
        LINEAR_TOL,
        &mut s,
        STEP,
        Sampling::All,
        |st, g| {
            let x = param(g, st, "input");
            let y = g.global_avg_pool(x);
            project(g, y, 10)
        },
    )?);

    let target = uniform(&mut rng, Shape::new(2, 3, 4, 4), 0.0, 1.0);
    let mask = Tensor::from_fn(
        Shape::new(2, 3, 4, 4),
        |i| if i % 3 == 0 { 0.0 } else { 1.0 },
    );
    let mut s = store_of(vec![(
        "pred",
        uniform(&mut rng, Shape::new(2, 3, 4, 4), 0.0, 1.0),
    )])?;
    out.push(check(
        "mse_loss",
        LINEAR_TOL,
        &mut s,
        STEP,
        Sampling::All,
        |st, g| {
            let p = param(g, st, "pred");
            let t = g.constant(target.clone());
            g.mse_loss(p, t, Some(&mask))
        },
    )?);

    let mut s = ParamStore::new();
    let block = NonLocalBlock::new(&mut s, &mut rng, "nonlocal", 4)?;
    s.add(
        "input",
        uniform(&mut rng, Shape::new(1, 4, 3, 3), -1.0, 1.0),
    )?;
    fill_zero_params(&mut s, seed ^ 11, 0.5);
    out.push(check(
        "nonlocal",
        NONLOCAL_TOL,
        &mut s,
        STEP,
        Sampling::All,
        |st, g| {
            let x = param(g, st, "input");
            let y = block.forward(g, st, x)?;
            project(g, y, 12)
        },
    )?);

    Ok(out)
}

fn cenet_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = CENet::new(
        CENetConfig {
            backbone_channels: vec![4, 8],
            head_hidden: vec![8, 6],
        },
        seed,
    )?;
    fill_zero_params(net.store_mut(), seed ^ 21, 0.3);
    let image = uniform(&mut rng, Shape::new(2, 3, 8, 8), 0.0, 1.0);
    let target = uniform(&mut rng, Shape::new(2, 3, 8, 8), 0.0, 1.0);
    let mut store = net.store().clone();
    let outcome = check(
        "cenet",
        BATCHNORM_TOL,
        &mut store,
        1e-4,
        Sampling::All,
        |st, g| {
            let x = g.constant(image.clone());
            let (y, _) = net.enhance_graph_with(g, st, x, Mode::Train)?;
            let t = g.constant(target.clone());
            g.mse_loss(y, t, None)
        },
    )?;
    Ok(vec![outcome])
}

fn prnet_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let block = ResidualBlock::new(&mut s, &mut rng, "residual", 8)?;
    s.add(
        "input",
        uniform(&mut rng, Shape::new(1, 8, 6, 6), -1.0, 1.0),
    )?;
    fill_zero_params(&mut s, seed ^ 31, 0.3);
    let residual = check(
        "residual_block",
        BATCHNORM_TOL,
        &mut s,
        1e-4,
        Sampling::Random { count: 200, seed },
        |st, g| {
            let x = param(g, st, "input");
            let y = block.forward(g, st, x, Mode::Train)?;
            project(g, y, 13)
        },
    )?;

    let mut net = PRNet::new(
        PRNetConfig {
            base_channels: 4,
            num_residual_blocks: 1,
            use_nonlocal: true,
            ..Default::default()
        },
        seed,
    )?;
    fill_zero_params(net.store_mut(), seed ^ 41, 0.3);
    let input = uniform(&mut rng, Shape::new(2, 3, 8, 8), 0.0, 1.0);
    let target = uniform(&mut rng, Shape::new(2, 3, 8, 8), -0.2, 0.2);
    let mut store = net.store().clone();
    let whole = check(
        "prnet",
        FULL_TOL,
        &mut store,
        1e-4,
        Sampling::Random { count: 200, seed },
        |st, g| {
            let x = g.constant(input.clone());
            let y = net.forward_with(g, st, x, Mode::Train)?;
            let t = g.constant(target.clone());
            g.mse_loss(y, t, None)
        },
    )?;
    Ok(vec![residual, whole])
}

/// The CE+PRNL pipeline on a `2x3x16x16` batch with default network
/// configurations. The loss is the full composition `I + r_c + r_p`;
/// CENet and PRNet parameters are probed in two passes, each holding the
/// other network fixed, and the reports are merged.
fn full_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cenet = CENet::new(CENetConfig::default(), seed)?;
    let mut prnet = PRNet::new(PRNetConfig::default(), seed)?;
    fill_zero_params(cenet.store_mut(), seed ^ 51, 0.05);
    fill_zero_params(prnet.store_mut(), seed ^ 61, 0.05);
    let image = uniform(&mut rng, Shape::new(2, 3, 16, 16), 0.0, 1.0);
    let target = uniform(&mut rng, Shape::new(2, 3, 16, 16), 0.0, 1.0);
    let loss = |g: &mut Graph, ce: &ParamStore, pr: &ParamStore| -> crate::tensor::Result<Var> {
        let x = g.constant(image.clone());
        let (coarse, _) = cenet.enhance_graph_with(g, ce, x, Mode::Train)?;
        let r_p = prnet.forward_with(g, pr, coarse, Mode::Train)?;
        let y = g.add(coarse, r_p)?;
        let t = g.constant(target.clone());
        g.mse_loss(y, t, None)
    };
    let mut ce_store = cenet.store().clone();
    let pr_store = prnet.store().clone();
    let count = 2 * ce_store.len();
    let mut report = gradient_check(
        &mut ce_store,
        FULL_STEP,
        Sampling::Random { count, seed },
        |st, g| loss(g, st, &pr_store),
    )?;
    let mut pr_store = pr_store;
    let pr_count = 2 * pr_store.len();
    let pr_report = gradient_check(
        &mut pr_store,
        FULL_STEP,
        Sampling::Random {
            count: pr_count,
            seed,
        },
        |st, g| loss(g, &ce_store, st),
    )?;
    report.entries.extend(pr_report.entries);
    Ok(vec![CheckOutcome {
        name: "full_ce_prnl",
        tolerance: FULL_TOL,
        report,
    }])
}

pub fn run_scope(scope: Scope, seed: u64) -> Result<Vec<CheckOutcome>> {
    match scope {
        Scope::Op => op_checks(seed),
        Scope::Cenet => cenet_checks(seed),
        Scope::Prnet => prnet_checks(seed),
        Scope::Full => full_checks(seed),
    }
}
