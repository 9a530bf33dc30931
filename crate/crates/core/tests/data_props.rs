use polypseg::data::{
    augment, compute_dataset_stats, gen_synthetic_scenes, load_dataset, load_mask, normalize, resize_nearest,
    save_dataset, save_mask, Affine, AugmentPolicy, Blob, DatasetStats,
};
use polypseg::postprocess::BinaryMask;
use polypseg::tensor::{Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent point test for a perturbed ellipse.
fn inside(b: &Blob, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - b.cx, y - b.cy);
    let (s, c) = (b.angle.sin(), b.angle.cos());
    let (u, v) = ((dx * c + dy * s) / b.a, (dy * c - dx * s) / b.b);
    let r = (u * u + v * v).sqrt();
    let t = v.atan2(u);
    let mut bound = 1.0;
    for &(k, amp, ph) in &b.harmonics {
        bound += amp * (k as f64 * t + ph).cos();
    }
    r <= bound
}

#[test]
fn synthetic_masks_match_rasterizer_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = gen_synthetic_scenes(8, (48, 56), 21).unwrap();
    let samples: Vec<_> = scenes.iter().map(|s| s.sample.clone()).collect();
    save_dataset(dir.path(), &samples).unwrap();
    let loaded = load_dataset(dir.path(), false).unwrap().samples;
    for (scene, back) in scenes.iter().zip(&loaded) {
        let want = BinaryMask::from_fn(48, 56, |y, x| {
            scene.blobs.iter().any(|b| inside(b, x as f64 + 0.5, y as f64 + 0.5))
        });
        assert_eq!(back.mask, want, "{}", back.id);
        assert_eq!(scene.sample.mask, want);
        assert!((1..=3).contains(&scene.blobs.len()));
    }
}

#[test]
fn mask_png_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..10 {
        let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
        let m = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(0.4));
        let p = dir.path().join(format!("m{i}.png"));
        save_mask(&p, &m).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }
}

fn image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(1, 3, h, w);
    Tensor::from_vec(s, (0..s.numel()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

proptest! {
    #[test]
    fn stats_match_two_pass(seeds in prop::collection::vec(any::<u64>(), 1..5)) {
        let imgs: Vec<Tensor> = seeds.iter().enumerate().map(|(i, &s)| image(s, 3 + i, 5)).collect();
        let st = compute_dataset_stats(imgs.iter()).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = imgs.iter().flat_map(|t| t.plane(0, c).iter().map(|&v| v as f64)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!((st.mean[c] - mean).abs() < 1e-9);
            prop_assert!((st.std[c] - var.sqrt()).abs() < 1e-9);
        }
        let n = normalize(&imgs[0], &st).unwrap();
        for c in 0..3 {
            for (a, b) in n.plane(0, c).iter().zip(imgs[0].plane(0, c)) {
                let want = (*b as f64 - st.mean[c]) / st.std[c];
                prop_assert!((*a as f64 - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn stats_text_round_trip(m in prop::array::uniform3(-1.0f64..1.0), s in prop::array::uniform3(1e-3f64..2.0)) {
        let st = DatasetStats { mean: m, std: s };
        prop_assert_eq!(DatasetStats::parse(&st.to_string()).unwrap(), st);
    }

    #[test]
    fn augmentation_keeps_shapes_and_range(seed in any::<u64>()) {
        let sc = gen_synthetic_scenes(1, (24, 32), 5).unwrap().remove(0);
        let out = augment(&sc.sample, &AugmentPolicy::default(), seed).unwrap();
        prop_assert_eq!(out.dims(), (24, 32));
        prop_assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(augment(&sc.sample, &AugmentPolicy::default(), seed).unwrap(), out);
    }

    #[test]
    fn flips_are_involutions(seed in any::<u64>(), h in any::<bool>(), v in any::<bool>()) {
        let img = image(seed, 7, 9);
        let f = Affine::flip(h, v);
        prop_assert!(f.warp_image(&f.warp_image(&img)).bits_eq(&img));
        let m = BinaryMask::from_fn(7, 9, |y, x| (y * 9 + x + seed as usize) % 3 == 0);
        prop_assert_eq!(f.warp_mask(&f.warp_mask(&m)), m);
    }

    #[test]
    fn nearest_resize_integer_upscale(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = BinaryMask::from_fn(5, 6, |_, _| rng.random_bool(0.5));
        let up = resize_nearest(&m, 5 * k, 6 * k).unwrap();
        for (y, x) in (0..5 * k).flat_map(|y| (0..6 * k).map(move |x| (y, x))) {
            prop_assert_eq!(up.get(y, x), m.get(y / k, x / k));
        }
        prop_assert_eq!(resize_nearest(&up, 5, 6).unwrap(), m);
    }
}
