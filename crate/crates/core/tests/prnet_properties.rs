mod common;

use colorenh::layers::fill_zero_params;
use colorenh::prnet::{network_size, NonLocalBlock, NonLocalPosition, PRNet, PRNetConfig};
use colorenh::tensor::{ParamStore, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn nonlocal_matches_all_pairs_loops() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let block = NonLocalBlock::new(&mut store, &mut rng, "nl", 4).unwrap();
        fill_zero_params(&mut store, seed + 100, 0.8);
        let x = random(&mut rng, Shape::new(1, 4, 3, 3));
        let (diff, row_err) = common::compare_nonlocal(&block, &store, "nl", &x);
        assert!(diff < 1e-10, "seed {seed}: {diff}");
        assert!(row_err < 1e-12, "seed {seed}: {row_err}");
    }
}

#[test]
fn fresh_nonlocal_is_identity_with_uniform_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let block = NonLocalBlock::new(&mut store, &mut rng, "nl", 6).unwrap();
    let x = random(&mut rng, Shape::new(2, 6, 4, 5));
    let mut g = colorenh::tensor::Graph::new();
    let xv = g.constant(x.clone());
    let (out, attn) = block.forward_with_attention(&mut g, &store, xv).unwrap();
    assert!(g.value(out).data() == x.data());
    assert_eq!(g.shape(attn), Shape::new(2, 1, 20, 20));
    assert!(g
        .value(attn)
        .data()
        .iter()
        .all(|&a| (a - 1.0 / 20.0).abs() < 1e-15));
}

#[test]
fn odd_channel_counts_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert!(NonLocalBlock::new(&mut ParamStore::new(), &mut rng, "nl", 5).is_err());
}

fn probe(config: PRNetConfig) -> (Vec<f64>, Vec<f64>) {
    let mut net = PRNet::new(config, 3).unwrap();
    fill_zero_params(net.store_mut(), 4, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::from_fn(Shape::new(1, 3, 64, 64), |_| rng.gen_range(0.0..1.0));
    let mut bumped = x.clone();
    bumped.data_mut()[0] += 0.5;
    let a = net.predict(&x).unwrap();
    let b = net.predict(&bumped).unwrap();
    let far = |t: &Tensor| {
        (0..3)
            .map(|c| t.data()[c * 4096 + 4095])
            .collect::<Vec<_>>()
    };
    (far(&a), far(&b))
}

#[test]
fn nonlocal_reaches_the_opposite_corner() {
    let base = PRNetConfig {
        base_channels: 4,
        num_residual_blocks: 1,
        use_nonlocal: false,
        ..PRNetConfig::default()
    };
    let (a, b) = probe(base.clone());
    assert_eq!(a, b, "local network should not see the far corner");
    let (a, b) = probe(PRNetConfig {
        use_nonlocal: true,
        ..base
    });
    let change: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!(change > 1e-9, "{change}");
}

#[test]
fn fresh_prnet_predicts_zero_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for position in [
        NonLocalPosition::Front,
        NonLocalPosition::Middle,
        NonLocalPosition::End,
    ] {
        let net = PRNet::new(
            PRNetConfig {
                base_channels: 4,
                num_residual_blocks: 2,
                use_nonlocal: true,
                nonlocal_position: position,
            },
            7,
        )
        .unwrap();
        let x = Tensor::from_fn(Shape::new(2, 3, 12, 8), |_| rng.gen_range(0.0..1.0));
        let r = net.predict(&x).unwrap();
        assert_eq!(r.shape(), x.shape());
        assert!(r.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn sizes_must_be_multiples_of_four() {
    let net = PRNet::new(
        PRNetConfig {
            base_channels: 4,
            num_residual_blocks: 1,
            ..PRNetConfig::default()
        },
        0,
    )
    .unwrap();
    assert!(net
        .predict(&Tensor::zeros(Shape::new(1, 3, 10, 12)))
        .is_err());
    assert_eq!(network_size(10), 12);
    assert_eq!(network_size(500), 500);
}

#[test]
fn attention_block_leaves_other_layers_init_unchanged() {
    let with = PRNet::new(PRNetConfig::default(), 5).unwrap();
    let without = PRNet::new(
        PRNetConfig {
            use_nonlocal: false,
            ..PRNetConfig::default()
        },
        5,
    )
    .unwrap();
    let mut shared = 0;
    for p in without.store().params() {
        let id = with.store().find(&p.name).unwrap();
        assert_eq!(
            with.store().get(id).tensor.data(),
            p.tensor.data(),
            "{}",
            p.name
        );
        shared += 1;
    }
    assert_eq!(shared + 7, with.store().len());
}
