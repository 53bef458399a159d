use gmcl_core::autodiff::Graph;
use gmcl_core::config::{DatasetSpec, StudentArch, TeacherArch, TrainingConfig};
use gmcl_core::models::{teacher_layers, LatentBatch, MetaSchedule, StudentLearner, TeacherGenerator};
use gmcl_core::nn::{param_count, Mode};
use gmcl_core::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(h: usize, c: usize) -> DatasetSpec {
    DatasetSpec { image_size: h, channels: c, num_classes: 4, ..Default::default() }
}

fn small_config() -> TrainingConfig {
    TrainingConfig {
        latent_dim: 16,
        teacher_hidden: 32,
        teacher_fc_channels: 8,
        teacher_conv_channels: 8,
        student_widths: [4, 8, 8, 8, 8],
        ..Default::default()
    }
}

#[test]
fn full_size_teacher_output() {
    let cfg = TrainingConfig::default();
    let sp = DatasetSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut teacher = TeacherGenerator::<f32>::new(&cfg, &sp, &mut rng).unwrap();
    let batch = LatentBatch::sample(64, 128, 4, &mut rng);
    let out = teacher.generate(&batch).unwrap();
    assert_eq!(out.shape(), &[64, 3, 32, 32]);
    assert!(out.data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn full_size_teacher_parameter_count() {
    let cfg = TrainingConfig::default();
    let layers = teacher_layers(TeacherArch::Conv, 128, 4, 32, 3, (1024, 128, 64));
    let fc1 = (128 + 4) * 1024 + 1024;
    let bn1 = 2 * 1024;
    let fc2 = 1024 * 128 * 8 * 8 + 128 * 8 * 8;
    let bn2 = 2 * 128 * 8 * 8;
    let conv1 = 64 * 128 * 9 + 64;
    let bn3 = 2 * 64;
    let conv2 = 3 * 64 * 9 + 3;
    let hand = fc1 + bn1 + fc2 + bn2 + conv1 + bn3 + conv2;
    assert_eq!(hand, 8_627_075);
    assert_eq!(param_count(&layers), hand);
    let teacher =
        TeacherGenerator::<f32>::new(&cfg, &DatasetSpec::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(teacher.net.param_count(), hand);
}

#[test]
fn teacher_is_deterministic() {
    let cfg = small_config();
    let sp = spec(16, 3);
    let make = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut t = TeacherGenerator::<f32>::new(&cfg, &sp, &mut rng).unwrap();
        let b = LatentBatch::sample(8, 16, 4, &mut rng);
        t.generate(&b).unwrap()
    };
    assert_eq!(make(), make());
}

#[test]
fn zeroed_teacher_outputs_zero() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut t = TeacherGenerator::<f64>::new(&cfg, &spec(16, 1), &mut rng).unwrap();
    for p in t.params_mut() {
        let zero = p.name.contains("fc2") || p.name.contains("conv");
        if zero {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let out = t.generate(&LatentBatch::sample(6, 16, 4, &mut rng)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn teacher_range_over_many_seeds() {
    let cfg = TrainingConfig { latent_dim: 8, teacher_hidden: 16, teacher_fc_channels: 4, teacher_conv_channels: 4, ..Default::default() };
    let sp = spec(8, 2);
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = TeacherGenerator::<f32>::new(&cfg, &sp, &mut rng).unwrap();
        let out = t.generate(&LatentBatch::sample(4, 8, 4, &mut rng)).unwrap();
        assert_eq!(out.shape(), &[4, 2, 8, 8]);
        assert!(out.data().iter().all(|v| v.abs() < 1.0), "seed {seed}");
    }
}

#[test]
fn teacher_rejects_bad_inputs() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = TeacherGenerator::<f32>::new(&cfg, &spec(16, 3), &mut rng).unwrap();
    let wrong_dim = LatentBatch::sample(4, 15, 4, &mut rng);
    assert!(matches!(t.generate(&wrong_dim), Err(Error::Dimension { .. })));
    let mut bad_label = LatentBatch::sample(4, 16, 4, &mut rng);
    bad_label.labels[3] = 4;
    assert!(matches!(t.generate(&bad_label), Err(Error::Label { index: 3, .. })));
    assert!(TeacherGenerator::<f32>::new(&cfg, &spec(18, 3), &mut rng).is_err());
}

#[test]
fn latent_batches_are_balanced() {
    let b = LatentBatch::<f64>::sample(64, 128, 4, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(b.len(), 64);
    assert_eq!(b.z.shape(), &[64, 128]);
    for k in 0..4 {
        assert_eq!(b.labels.iter().filter(|&&l| l == k).count(), 16);
    }
}

#[test]
fn full_size_student_logits() {
    let cfg = TrainingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut s = StudentLearner::<f32>::new(&cfg, &DatasetSpec::default(), &mut rng).unwrap();
    let x = Tensor::from_fn(&[64, 3, 32, 32], |_| rng.random_range(-1.0..1.0));
    let mut g = Graph::new();
    let vars = s.bind(&mut g);
    let xv = g.constant(x);
    let logits = s.forward(&mut g, &vars, xv, Mode::Train).unwrap();
    assert_eq!(g.shape(logits), &[64, 4]);
}

#[test]
fn student_spatial_sizes() {
    let cfg = TrainingConfig::default();
    let layers = gmcl_core::models::student_layers(StudentArch::Cnn, 3, 32, 4, cfg.student_widths, 2);
    let mut size = 32;
    let mut seen = Vec::new();
    for l in &layers {
        if let gmcl_core::nn::Layer::Conv { stride, padding, kernel, .. } = *l {
            size = (size + 2 * padding - kernel) / stride + 1;
            seen.push(size);
        }
    }
    assert_eq!(seen, vec![32, 16, 16, 8, 8]);
}

#[test]
fn student_accepts_any_size_divisible_by_four() {
    let cfg = small_config();
    for h in [8, 12, 16, 20] {
        let mut rng = ChaCha8Rng::seed_from_u64(h as u64);
        let mut s = StudentLearner::<f32>::new(&cfg, &spec(h, 1), &mut rng).unwrap();
        let x = Tensor::from_fn(&[3, 1, h, h], |_| rng.random_range(-1.0..1.0));
        let mut g = Graph::new();
        let vars = s.bind(&mut g);
        let xv = g.constant(x);
        let y = s.forward(&mut g, &vars, xv, Mode::Train).unwrap();
        assert_eq!(g.shape(y), &[3, 4]);
    }
    assert!(StudentLearner::<f32>::new(&cfg, &spec(4, 1), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn student_single_sample_batch_is_degenerate() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut s = StudentLearner::<f32>::new(&cfg, &spec(8, 1), &mut rng).unwrap();
    let mut g = Graph::new();
    let vars = s.bind(&mut g);
    let xv = g.constant(Tensor::from_fn(&[1, 1, 8, 8], |i| i as f32 / 64.0));
    assert!(matches!(
        s.forward(&mut g, &vars, xv, Mode::Train),
        Err(Error::DegenerateVariance { .. })
    ));
    assert_eq!(s.predict(&Tensor::zeros(&[1, 1, 8, 8])).unwrap().shape(), &[1, 4]);
}

#[test]
fn batch_permutation_permutes_logits() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = StudentLearner::<f64>::new(&cfg, &spec(8, 3), &mut rng).unwrap();
    let x = Tensor::from_fn(&[5, 3, 8, 8], |_| rng.random_range(-1.0..1.0));
    let perm = [3usize, 0, 4, 1, 2];
    let per = 3 * 8 * 8;
    let mut px = Vec::new();
    for &i in &perm {
        px.extend_from_slice(&x.data()[i * per..(i + 1) * per]);
    }
    let px = Tensor::from_vec(&[5, 3, 8, 8], px);
    let run = |s: &mut StudentLearner<f64>, x: Tensor<f64>| {
        let mut g = Graph::new();
        let vars = s.bind(&mut g);
        let xv = g.constant(x);
        let y = s.forward(&mut g, &vars, xv, Mode::Train).unwrap();
        g.value(y).clone()
    };
    let a = run(&mut s, x);
    let b = run(&mut s, px);
    for (row, &src) in perm.iter().enumerate() {
        for k in 0..4 {
            assert!((b.data()[row * 4 + k] - a.data()[src * 4 + k]).abs() < 1e-12);
        }
    }
}

#[test]
fn student_input_gradient_is_nonzero() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = StudentLearner::<f64>::new(&cfg, &spec(8, 3), &mut rng).unwrap();
    let mut g = Graph::new();
    let vars = s.bind(&mut g);
    let x = g.param(Tensor::from_fn(&[4, 3, 8, 8], |_| rng.random_range(-1.0..1.0)));
    let y = s.forward(&mut g, &vars, x, Mode::Train).unwrap();
    let l = gmcl_core::functional::softmax_cross_entropy(&mut g, y, &[0, 1, 2, 3]).unwrap();
    let grad = g.gradients(l, &[x]).unwrap().remove(0);
    assert!(grad.data().iter().any(|v| v.abs() > 1e-8));
}

#[test]
fn zero_momentum_running_stats_equal_last_batch() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = StudentLearner::<f64>::new(&cfg, &spec(8, 1), &mut rng).unwrap();
    let x = Tensor::from_fn(&[6, 1, 8, 8], |_| rng.random_range(-1.0..1.0));
    let mut g = Graph::new();
    let vars = s.bind(&mut g);
    let xv = g.constant(x);
    let (_, stats) = s.net.forward_collect(&mut g, &vars, xv).unwrap();
    s.forward(&mut g, &vars, xv, Mode::Train).unwrap();
    for (r, b) in s.net.running.iter().zip(&stats) {
        assert_eq!(r.mean, b.mean);
        assert_eq!(r.var, b.var);
    }
}

#[test]
fn fresh_schedule_values() {
    let ms = MetaSchedule::<f64>::new(4, 0.02, 0.5).unwrap();
    for j in 0..4 {
        let (a, m) = ms.effective(j).unwrap();
        assert!((a - 0.02).abs() <= 1e-17, "{a}");
        assert_eq!(m, 0.5);
        let mut g = Graph::new();
        let vars = ms.bind(&mut g);
        let (av, mv) = ms.values(&mut g, &vars, j).unwrap();
        assert_eq!(g.value(av).item(), a);
        assert_eq!(g.value(mv).item(), m);
    }
    assert!(matches!(ms.effective(4), Err(Error::Index { .. })));
    let mut g = Graph::new();
    let vars = ms.bind(&mut g);
    assert!(matches!(ms.values(&mut g, &vars, 4), Err(Error::Index { .. })));
}

#[test]
fn schedule_derivative_of_exp() {
    let mut ms = MetaSchedule::<f64>::new(3, 0.02, 0.5).unwrap();
    ms.params[0].value = Tensor::from_vec(&[3], vec![0.0, -1.0, 0.7]);
    assert_eq!(ms.effective(0).unwrap().0, 1.0);
    for j in 0..3 {
        let mut g = Graph::new();
        let vars = ms.bind(&mut g);
        let (a, _) = ms.values(&mut g, &vars, j).unwrap();
        let alpha = g.value(a).item();
        let d = g.gradients(a, &[vars[0]]).unwrap().remove(0);
        for (i, v) in d.data().iter().enumerate() {
            let want = if i == j { alpha } else { 0.0 };
            assert!((v - want).abs() < 1e-15);
        }
    }
}

proptest! {
    #[test]
    fn schedule_stays_in_range(raw_lr in prop::collection::vec(-30.0f64..30.0, 3), raw_mu in prop::collection::vec(-30.0f64..30.0, 3)) {
        let mut ms = MetaSchedule::<f64>::new(3, 0.02, 0.5).unwrap();
        ms.params[0].value = Tensor::from_vec(&[3], raw_lr);
        ms.params[1].value = Tensor::from_vec(&[3], raw_mu);
        for j in 0..3 {
            let (a, m) = ms.effective(j).unwrap();
            prop_assert!(a > 0.0);
            prop_assert!(m > 0.0 && m < 1.0);
        }
    }

    #[test]
    fn teacher_count_depends_only_on_sizes(latent in 1usize..64, classes in 2usize..6, q in 1usize..4, c in 1usize..4) {
        let h = 4 * q;
        let a = param_count(&teacher_layers(TeacherArch::Conv, latent, classes, h, c, (32, 8, 8)));
        let cfg = TrainingConfig { latent_dim: latent, teacher_hidden: 32, teacher_fc_channels: 8, teacher_conv_channels: 8, ..Default::default() };
        let sp = DatasetSpec { image_size: h, channels: c, num_classes: classes, class_names: Vec::new(), ..Default::default() };
        for seed in 0..2 {
            let t = TeacherGenerator::<f32>::new(&cfg, &sp, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(t.net.param_count(), a);
        }
    }
}
