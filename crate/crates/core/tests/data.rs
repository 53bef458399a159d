use gmcl_core::config::DatasetSpec;
use gmcl_core::data::{
    augment_crop_flip, augment_traditional, color_jitter, crop_flip_image, crop_offsets, flip_horizontal,
    flip_vertical, patchify, pixel_to_unit, rotate90, synth_generate, unit_to_pixel, Split,
};
use gmcl_core::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(h: usize, c: usize) -> DatasetSpec {
    DatasetSpec { image_size: h, channels: c, num_classes: 4, ..Default::default() }
}

fn class_means(set: &gmcl_core::data::LabeledImageSet<f64>, k: usize) -> Vec<Vec<f64>> {
    let per = set.images.numel() / set.len();
    let mut sums = vec![vec![0.0; per]; k];
    let mut counts = vec![0usize; k];
    for i in 0..set.len() {
        let l = set.labels[i];
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(set.image(i)) {
            *s += v;
        }
    }
    for (s, c) in sums.iter_mut().zip(counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    sums
}

fn min_pairwise_distance(means: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            let d: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            best = best.min(d);
        }
    }
    best
}

#[test]
fn synthetic_class_means_are_far_apart() {
    let sigma = 0.15;
    for (h, seeds) in [(8usize, 20..23u64), (16, 0..5), (32, 10..12)] {
        for seed in seeds {
            let set = synth_generate::<f64>(&spec(h, 3), 64, seed, Split::Train).unwrap();
            let d = min_pairwise_distance(&class_means(&set, 4));
            assert!(d > 10.0 * sigma * h as f64, "H {h} seed {seed}: {d}");
        }
    }
}

#[test]
fn synthetic_sets_count_and_repeat() {
    let s = spec(8, 1);
    let a = synth_generate::<f32>(&s, 1, 3, Split::Test).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(a.split, Split::Test);
    assert_eq!(a, synth_generate::<f32>(&s, 1, 3, Split::Test).unwrap());
    let b = synth_generate::<f32>(&s, 5, 3, Split::Train).unwrap();
    assert_eq!(b.len(), 20);
    assert_eq!(b.images.shape(), &[20, 1, 8, 8]);
}

#[test]
fn crop_offsets_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = [[0u32; 9]; 9];
    let draws = 10_000;
    for _ in 0..draws {
        let (dy, dx) = crop_offsets(4, &mut rng);
        counts[dy][dx] += 1;
    }
    let expected = draws as f64 / 81.0;
    let chi2: f64 = counts.iter().flatten().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 80 degrees of freedom
    assert!(chi2 < 112.33, "chi-square {chi2}");
}

#[test]
fn flip_with_the_same_coin_twice_is_identity() {
    let img: Vec<f64> = (0..3 * 6 * 6).map(|i| i as f64 * 0.01).collect();
    let once = crop_flip_image(&img, 3, 6, 6, 4, 4, 4, true);
    assert_ne!(once, img);
    assert_eq!(crop_flip_image(&once, 3, 6, 6, 4, 4, 4, true), img);
    assert_eq!(crop_flip_image(&img, 3, 6, 6, 4, 4, 4, false), img);
    assert_eq!(flip_horizontal(&flip_horizontal(&img, 3, 6, 6), 3, 6, 6), img);
    assert_eq!(flip_vertical(&flip_vertical(&img, 3, 6, 6), 3, 6, 6), img);
}

#[test]
fn quarter_turns_compose() {
    let img: Vec<f64> = (0..2 * 4 * 4).map(|i| i as f64).collect();
    let mut cur = img.clone();
    for _ in 0..4 {
        cur = rotate90(&cur, 2, 4, 1);
    }
    assert_eq!(cur, img);
    // top-left corner moves to bottom-left under a counter-clockwise turn
    let once = rotate90(&img, 2, 4, 1);
    assert_eq!(once[12], img[0]);
    assert_eq!(rotate90(&img, 2, 4, 2), rotate90(&once, 2, 4, 1));
}

#[test]
fn neutral_jitter_changes_nothing() {
    let mut img: Vec<f32> = (0..3 * 16).map(|i| (i as f32 / 24.0) - 1.0).collect();
    let before = img.clone();
    color_jitter(&mut img, 3, &[1.0; 3], &[0.0; 3]);
    assert_eq!(img, before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentations_keep_shape_and_range(seed in any::<u64>(), b in 1usize..4, c in 1usize..4, q in 1usize..4) {
        let h = 4 * q;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = Tensor::<f64>::from_fn(&[b, c, h, h], |_| rng.random_range(-1.0..=1.0));
        let a = augment_crop_flip(&batch, 4, &mut rng);
        prop_assert_eq!(a.shape(), batch.shape());
        let t = augment_traditional(&batch, &mut rng);
        prop_assert_eq!(t.shape(), batch.shape());
        prop_assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn jitter_output_is_clamped(values in prop::collection::vec(-1.0f64..=1.0, 8), scale in 0.8f64..=1.2, shift in -0.1f64..=0.1) {
        let mut img = values;
        color_jitter(&mut img, 2, &[scale, scale], &[shift, shift]);
        prop_assert!(img.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn pixel_mapping_round_trips(p in any::<u8>()) {
        prop_assert_eq!(unit_to_pixel(pixel_to_unit::<f64>(p)), p);
    }
}

#[test]
fn pixel_endpoints() {
    assert_eq!(pixel_to_unit::<f32>(0), -1.0);
    assert_eq!(pixel_to_unit::<f32>(255), 1.0);
    assert_eq!(unit_to_pixel(-1.0f32), 0);
    assert_eq!(unit_to_pixel(1.0f32), 255);
}

#[test]
fn patchify_counts_and_reassembles() {
    let big = Tensor::<f64>::from_fn(&[2, 64, 64], |i| i as f64);
    let tiles = patchify(&big, 32).unwrap();
    assert_eq!(tiles.len(), 4);
    let mut rebuilt = vec![0.0; 2 * 64 * 64];
    for (t, tile) in tiles.iter().enumerate() {
        assert_eq!(tile.shape(), &[2, 32, 32]);
        let (ty, tx) = (t / 2, t % 2);
        for ch in 0..2 {
            for y in 0..32 {
                for x in 0..32 {
                    rebuilt[(ch * 64 + ty * 32 + y) * 64 + tx * 32 + x] = tile.data()[(ch * 32 + y) * 32 + x];
                }
            }
        }
    }
    assert_eq!(rebuilt, big.data());

    let strip = Tensor::<f64>::from_fn(&[1, 33, 64], |i| i as f64);
    let tiles = patchify(&strip, 32).unwrap();
    assert_eq!(tiles.len(), 2);
    assert_eq!(tiles[1].data()[0], 32.0);

    let larger = Tensor::<f64>::from_fn(&[1, 70, 100], |i| i as f64);
    let tiles = patchify(&larger, 32).unwrap();
    assert_eq!(tiles.len(), 2 * 3);
    for (t, tile) in tiles.iter().enumerate() {
        let (ty, tx) = (t / 3, t % 3);
        assert_eq!(tile.data()[0], ((ty * 32) * 100 + tx * 32) as f64);
    }
    assert!(matches!(patchify(&Tensor::<f64>::zeros(&[1, 64, 20]), 32), Err(Error::Input(_))));
}
