#![allow(dead_code)]

use colorenh::prnet::NonLocalBlock;
use colorenh::tensor::{ParamStore, Tensor};

fn weights(store: &ParamStore, name: &str) -> Vec<f64> {
    store.get(store.find(name).unwrap()).tensor.data().to_vec()
}

fn project(store: &ParamStore, prefix: &str, x: &[Vec<f64>], out_c: usize) -> Vec<Vec<f64>> {
    let w = weights(store, &format!("{prefix}.weight"));
    let b = store
        .find(&format!("{prefix}.bias"))
        .map(|id| store.get(id).tensor.data().to_vec());
    let in_c = x[0].len();
    x.iter()
        .map(|p| {
            (0..out_c)
                .map(|o| {
                    b.as_ref().map_or(0.0, |b| b[o])
                        + (0..in_c).map(|i| w[o * in_c + i] * p[i]).sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Non-local block output and attention for batch element 0, computed pair
/// by pair. `x` is `(1, c, h, w)`; the block's parameters are named
/// `{prefix}.theta` etc.
pub fn nonlocal_all_pairs(
    store: &ParamStore,
    prefix: &str,
    x: &Tensor,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let s = x.shape();
    let (c, m) = (s.c, s.h * s.w);
    let half = c / 2;
    let pixels: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..c).map(|ch| x.data()[ch * m + j]).collect())
        .collect();
    let theta = project(store, &format!("{prefix}.theta"), &pixels, half);
    let phi = project(store, &format!("{prefix}.phi"), &pixels, half);
    let g = project(store, &format!("{prefix}.g"), &pixels, half);
    let mut attn = vec![vec![0.0; m]; m];
    let mut y = vec![vec![0.0; half]; m];
    for i in 0..m {
        let f: Vec<f64> = (0..m)
            .map(|j| (0..half).map(|k| theta[i][k] * phi[j][k]).sum())
            .collect();
        let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = f.iter().map(|v| (v - max).exp()).sum();
        for j in 0..m {
            attn[i][j] = (f[j] - max).exp() / z;
            for k in 0..half {
                y[i][k] += attn[i][j] * g[j][k];
            }
        }
    }
    let z = project(store, &format!("{prefix}.w_z"), &y, c);
    let mut out = vec![0.0; c * m];
    for ch in 0..c {
        for i in 0..m {
            out[ch * m + i] = pixels[i][ch] + z[i][ch];
        }
    }
    (out, attn)
}

/// Asserts the block's graph output matches [`nonlocal_all_pairs`]; returns
/// the largest output difference and the largest deviation of an attention
/// row sum from one.
pub fn compare_nonlocal(
    block: &NonLocalBlock,
    store: &ParamStore,
    prefix: &str,
    x: &Tensor,
) -> (f64, f64) {
    let mut g = colorenh::tensor::Graph::new();
    let xv = g.constant(x.clone());
    let (out, attn) = block.forward_with_attention(&mut g, store, xv).unwrap();
    let (expected, expected_attn) = nonlocal_all_pairs(store, prefix, x);
    let m = expected_attn.len();
    let mut max_diff: f64 = 0.0;
    for (a, b) in g.value(out).data().iter().zip(&expected) {
        max_diff = max_diff.max((a - b).abs());
    }
    let a = g.value(attn).data();
    for i in 0..m {
        for j in 0..m {
            max_diff = max_diff.max((a[i * m + j] - expected_attn[i][j]).abs());
        }
    }
    let row_err = a
        .chunks(m)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    (max_diff, row_err)
}
