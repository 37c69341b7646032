use colorenh::cenet::{least_squares_affine_oracle, AffineColorMap};
use colorenh::imaging::{
    lab_l2_error, pad_to_square, resize_longer_edge, srgb_to_lab_pixel, ssim, Image,
};
use colorenh::tensor::{ParamStore, Shape, Tensor};
use colorenh::trainer::data::batch_indices;
use colorenh::trainer::{Checkpoint, ModelConfig, TrainConfig};
use proptest::prelude::*;

fn image(max: usize) -> impl Strategy<Value = Image> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0.0f64..=1.0, 3 * w * h)
            .prop_map(move |d| Image::new(w, h, d).unwrap())
    })
}

fn image_pair(min: usize, max: usize) -> impl Strategy<Value = (Image, Image)> {
    (min..=max, min..=max).prop_flat_map(|(w, h)| {
        let n = 3 * w * h;
        (
            proptest::collection::vec(0.0f64..=1.0, n),
            proptest::collection::vec(0.0f64..=1.0, n),
        )
            .prop_map(move |(a, b)| (Image::new(w, h, a).unwrap(), Image::new(w, h, b).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lab_distance_is_a_metric(a in prop::array::uniform3(0.0f64..=1.0), b in prop::array::uniform3(0.0f64..=1.0)) {
        let (la, lb) = (srgb_to_lab_pixel(a), srgb_to_lab_pixel(b));
        prop_assert!(la.distance(&lb) >= 0.0);
        prop_assert_eq!(la.distance(&lb), lb.distance(&la));
        prop_assert_eq!(la.distance(&la), 0.0);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&la.l));
    }

    #[test]
    fn lab_l2_is_zero_only_on_identical_images(img in image(6)) {
        prop_assert_eq!(lab_l2_error(&img, &img, None).unwrap(), 0.0);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded((a, b) in image_pair(11, 14)) {
        let ab = ssim(&a, &b, None).unwrap();
        let ba = ssim(&b, &a, None).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn padding_round_trips(img in image(9), extra in 0usize..4) {
        let size = img.width().max(img.height()) + extra;
        let p = pad_to_square(&img, size).unwrap();
        prop_assert_eq!(p.mask.count(), img.width() * img.height());
        prop_assert_eq!(p.unpad(), img);
    }

    #[test]
    fn resize_hits_the_target_edge(img in image(12), target in 1usize..20) {
        let r = resize_longer_edge(&img, target).unwrap();
        prop_assert_eq!(r.width().max(r.height()), target);
        let ratio_in = img.width() as f64 / img.height() as f64;
        let ratio_out = r.width() as f64 / r.height() as f64;
        let short = r.width().min(r.height()) as f64;
        prop_assert!(short == 1.0 || (ratio_in / ratio_out - 1.0).abs() <= 1.0 / short + 1e-12);
        let (lo, hi) = img.data().iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        prop_assert!(r.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn affine_params_round_trip(p in prop::array::uniform12(-2.0f64..2.0)) {
        prop_assert_eq!(AffineColorMap::from_params(&p).to_params(), p);
    }

    #[test]
    fn oracle_never_loses_to_identity((raw, target) in image_pair(2, 6)) {
        let fit = least_squares_affine_oracle(&raw, &target, None).unwrap();
        let identity: f64 = raw.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / raw.data().len() as f64;
        prop_assert!(fit.loss <= identity + 1e-12);
        prop_assert!(fit.map.is_finite());
    }

    #[test]
    fn every_epoch_visits_each_sample_once(len in 1usize..30, batch in 1usize..8, seed in any::<u64>(), epoch in 0u64..5) {
        let per_epoch = len.div_ceil(batch) as u64;
        let mut seen: Vec<usize> = (0..per_epoch)
            .flat_map(|s| batch_indices(len, batch, seed, epoch * per_epoch + s))
            .collect();
        seen.sort();
        prop_assert_eq!(seen, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn checkpoint_bytes_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), step in any::<u32>()) {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(Shape::vector(values.len()), values.clone()).unwrap()).unwrap();
        store.add_buffer("b", Shape::vector(values.len()), values.iter().map(|v| v * 0.5).collect()).unwrap();
        let model = ModelConfig::Cenet(Default::default());
        let ck = Checkpoint::capture(model, TrainConfig::default(), u64::from(step), &store);
        let back = Checkpoint::from_bytes(&ck.to_bytes(), "mem".as_ref()).unwrap();
        prop_assert_eq!(back, ck);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(cut in 0usize..200) {
        let mut store = ParamStore::new();
        store.add("w", Tensor::full(Shape::vector(8), 0.25)).unwrap();
        let ck = Checkpoint::capture(ModelConfig::Cenet(Default::default()), TrainConfig::default(), 1, &store);
        let bytes = ck.to_bytes();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut], "mem".as_ref()).is_err());
    }
}
