//! Finite-difference verification of every differentiable op and of the
//! meta-gradient through the unrolled teaching loop.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, OpKind, Var};
use crate::config::{Augmentation, DatasetSpec, StudentArch, TeacherArch, TrainingConfig};
use crate::data::{synth_generate, Split};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Tensor};
use crate::training::RunState;

/// Step, tolerance and sampling of a check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckSettings {
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Coordinates sampled per parameter group; smaller groups are checked in full.
    pub coordinates: usize,
    pub seed: u64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings { step: 1e-3, tolerance: 1e-4, floor: 1e-6, coordinates: 50, seed: 0 }
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Outcome for one op or parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat coordinate with the largest error.
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl CheckResult {
    fn new(name: String) -> Self {
        CheckResult { name, max_rel_error: 0.0, worst_coordinate: 0, analytic: 0.0, numeric: 0.0, checked: 0 }
    }

    fn record(&mut self, coordinate: usize, analytic: f64, numeric: f64, floor: f64) {
        let e = relative_error(analytic, numeric, floor);
        if e > self.max_rel_error || !e.is_finite() || self.checked == 0 {
            self.max_rel_error = if e.is_finite() { e } else { f64::INFINITY };
            self.worst_coordinate = coordinate;
            self.analytic = analytic;
            self.numeric = numeric;
        }
        self.checked += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.max_rel_error <= self.tolerance)
    }

    /// The result with the largest error.
    pub fn worst(&self) -> Option<&CheckResult> {
        self.results.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    /// The failing check to blame: a failing single-op check comes first,
    /// since composite checks fail along with any op they use.
    pub fn offender(&self) -> Option<&CheckResult> {
        let failing = |r: &&CheckResult| r.max_rel_error > self.tolerance;
        self.results
            .iter()
            .filter(failing)
            .find(|r| OpKind::from_name(&r.name).is_some())
            .or_else(|| self.results.iter().filter(failing).max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            let verdict = if r.max_rel_error <= self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<28} max_rel_err {:.3e} over {:>3} coords (worst #{}: {:.6e} vs {:.6e}) {}",
                r.name, r.max_rel_error, r.checked, r.worst_coordinate, r.analytic, r.numeric, verdict
            )?;
        }
        match self.offender() {
            Some(w) => write!(f, "FAILED: worst offender {} ({:.3e} > {:.1e})", w.name, w.max_rel_error, self.tolerance),
            None => write!(f, "passed: all within {:.1e}", self.tolerance),
        }
    }
}

/// Forward function of one op check: builds the output from the input leaves.
type OpFn = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Inputs drawn away from zero so kinked ops stay differentiable under the step.
fn away_from_zero(shape: &[usize], positive: bool, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let n: f64 = StandardNormal.sample(rng);
        let m = 0.2 + 0.8 * n.abs();
        if positive || rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn geometry() -> ConvGeometry {
    ConvGeometry::new(2, 4, 5, 3, 2, 1).expect("valid geometry")
}

struct OpCase {
    kind: OpKind,
    inputs: Vec<(Vec<usize>, bool)>,
    forward: OpFn,
}

fn op_cases() -> Vec<OpCase> {
    let g = geometry();
    let s = |dims: &[usize]| (dims.to_vec(), false);
    let p = |dims: &[usize]| (dims.to_vec(), true);
    vec![
        OpCase { kind: OpKind::Add, inputs: vec![s(&[2, 3]), s(&[2, 3])], forward: |g, x| g.add(x[0], x[1]) },
        OpCase { kind: OpKind::Sub, inputs: vec![s(&[2, 3]), s(&[2, 3])], forward: |g, x| g.sub(x[0], x[1]) },
        OpCase { kind: OpKind::Mul, inputs: vec![s(&[2, 3]), s(&[2, 3])], forward: |g, x| g.mul(x[0], x[1]) },
        OpCase { kind: OpKind::Neg, inputs: vec![s(&[5])], forward: |g, x| Ok(g.neg(x[0])) },
        OpCase { kind: OpKind::Affine, inputs: vec![s(&[5])], forward: |g, x| Ok(g.affine(x[0], 1.7, 0.3)) },
        OpCase { kind: OpKind::Exp, inputs: vec![s(&[5])], forward: |g, x| Ok(g.exp(x[0])) },
        OpCase { kind: OpKind::Tanh, inputs: vec![s(&[5])], forward: |g, x| Ok(g.tanh(x[0])) },
        OpCase { kind: OpKind::Sigmoid, inputs: vec![s(&[5])], forward: |g, x| Ok(g.sigmoid(x[0])) },
        OpCase { kind: OpKind::Powf, inputs: vec![p(&[5])], forward: |g, x| Ok(g.powf(x[0], -0.5)) },
        OpCase { kind: OpKind::LeakyRelu, inputs: vec![s(&[6])], forward: |g, x| Ok(g.leaky_relu(x[0], 0.1)) },
        OpCase { kind: OpKind::MatMul, inputs: vec![s(&[2, 3]), s(&[3, 4])], forward: |g, x| g.matmul(x[0], x[1]) },
        OpCase { kind: OpKind::Transpose, inputs: vec![s(&[2, 3])], forward: |g, x| g.transpose(x[0]) },
        OpCase { kind: OpKind::Reshape, inputs: vec![s(&[2, 3])], forward: |g, x| g.reshape(x[0], &[3, 2]) },
        OpCase { kind: OpKind::BroadcastTo, inputs: vec![s(&[3, 1])], forward: |g, x| g.broadcast_to(x[0], &[2, 3, 4]) },
        OpCase { kind: OpKind::SumTo, inputs: vec![s(&[2, 3, 4])], forward: |g, x| g.sum_to(x[0], &[3, 1]) },
        OpCase { kind: OpKind::Im2col, inputs: vec![s(&[2, g.channels, g.height, g.width])], forward: |g, x| g.im2col(x[0], geometry()) },
        OpCase {
            kind: OpKind::Col2im,
            inputs: vec![s(&[2, g.patch_len(), g.out_len()])],
            forward: |g, x| g.col2im(x[0], geometry()),
        },
        OpCase { kind: OpKind::BmmLeft, inputs: vec![s(&[3, 4]), s(&[2, 4, 5])], forward: |g, x| g.bmm_left(x[0], x[1]) },
        OpCase { kind: OpKind::BmmSumNt, inputs: vec![s(&[2, 3, 5]), s(&[2, 4, 5])], forward: |g, x| g.bmm_sum_nt(x[0], x[1]) },
        OpCase { kind: OpKind::Upsample2x, inputs: vec![s(&[1, 2, 2, 3])], forward: |g, x| g.upsample2x(x[0]) },
        OpCase { kind: OpKind::PoolSum2x, inputs: vec![s(&[1, 2, 4, 6])], forward: |g, x| g.pool_sum2x(x[0]) },
        OpCase { kind: OpKind::LogSoftmax, inputs: vec![s(&[3, 4])], forward: |g, x| g.log_softmax(x[0]) },
        OpCase { kind: OpKind::Select, inputs: vec![s(&[4])], forward: |g, x| g.select(x[0], 2) },
        OpCase {
            kind: OpKind::Embed,
            inputs: vec![s(&[4])],
            forward: |g, x| {
                let e = g.select(x[0], 1)?;
                let e = g.embed(e, 3, 5)?;
                Ok(e)
            },
        },
    ]
}

/// `Σ w ⊙ tanh(op(x))`; the tanh keeps second derivatives of linear ops non-trivial.
fn op_loss(g: &mut Graph<f64>, case: &OpCase, inputs: &[Var], weights: &Tensor<f64>) -> Result<Var> {
    let out = (case.forward)(g, inputs)?;
    let t = g.tanh(out);
    let w = g.constant(weights.clone());
    let wt = g.mul(t, w)?;
    Ok(g.sum_all(wt))
}

/// `⟨∇ₓ loss, v⟩`, differentiable again.
fn op_directional(g: &mut Graph<f64>, case: &OpCase, inputs: &[Var], weights: &Tensor<f64>, dirs: &[Tensor<f64>]) -> Result<Var> {
    let loss = op_loss(g, case, inputs, weights)?;
    let grads = g.backward(loss, inputs, true)?;
    let mut acc = None;
    for (gr, d) in grads.iter().zip(dirs) {
        let dv = g.constant(d.clone());
        let prod = g.mul(*gr, dv)?;
        let s = g.sum_all(prod);
        acc = Some(match acc {
            None => s,
            Some(a) => g.add(a, s)?,
        });
    }
    acc.ok_or_else(|| Error::Input("op check without inputs".into()))
}

fn check_function<F>(name: String, values: &[Tensor<f64>], settings: &GradcheckSettings, fault: Option<OpKind>, build: F) -> Result<CheckResult>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    g.inject_fault(fault);
    let vars: Vec<Var> = values.iter().map(|v| g.param(v.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.gradients(loss, &vars)?;
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|v| g.param(v.clone())).collect();
        let l = build(&mut g, &vars)?;
        Ok(g.value(l).item())
    };
    let mut result = CheckResult::new(name);
    let mut offset = 0;
    for (i, v) in values.iter().enumerate() {
        for c in 0..v.numel() {
            let mut plus = values.to_vec();
            plus[i].data_mut()[c] += settings.step;
            let mut minus = values.to_vec();
            minus[i].data_mut()[c] -= settings.step;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * settings.step);
            result.record(offset + c, grads[i].data()[c], numeric, settings.floor);
        }
        offset += v.numel();
    }
    Ok(result)
}

/// First-order check of a single op: the seeded vector-Jacobian product
/// against differences of `⟨w, op(x)⟩`, so no other backward rule is involved.
fn check_op_first_order(case: &OpCase, values: &[Tensor<f64>], weights: &Tensor<f64>, settings: &GradcheckSettings, fault: Option<OpKind>) -> Result<CheckResult> {
    let mut g = Graph::new();
    g.inject_fault(fault);
    let vars: Vec<Var> = values.iter().map(|v| g.param(v.clone())).collect();
    let out = (case.forward)(&mut g, &vars)?;
    let grads = g.vector_jacobian(out, weights, &vars)?;
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|v| g.constant(v.clone())).collect();
        let o = (case.forward)(&mut g, &vars)?;
        Ok(g.value(o).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
    };
    let mut result = CheckResult::new(case.kind.name().into());
    let mut offset = 0;
    for (i, v) in values.iter().enumerate() {
        for c in 0..v.numel() {
            let mut plus = values.to_vec();
            plus[i].data_mut()[c] += settings.step;
            let mut minus = values.to_vec();
            minus[i].data_mut()[c] -= settings.step;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * settings.step);
            result.record(offset + c, grads[i].data()[c], numeric, settings.floor);
        }
        offset += v.numel();
    }
    Ok(result)
}

/// First- and second-order checks of every differentiable op kind. With
/// `fault`, that kind's backward rule is deliberately scaled.
pub fn check_ops(settings: &GradcheckSettings, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for case in op_cases() {
        let values: Vec<Tensor<f64>> = case.inputs.iter().map(|(s, pos)| away_from_zero(s, *pos, &mut rng)).collect();
        let out_shape = {
            let mut g = Graph::new();
            let vars: Vec<Var> = values.iter().map(|v| g.param(v.clone())).collect();
            let o = (case.forward)(&mut g, &vars)?;
            g.shape(o).to_vec()
        };
        let weights = Tensor::from_fn(&out_shape, |_| StandardNormal.sample(&mut rng));
        let dirs: Vec<Tensor<f64>> = values.iter().map(|v| Tensor::from_fn(v.shape(), |_| StandardNormal.sample(&mut rng))).collect();
        first.push(check_op_first_order(&case, &values, &weights, settings, fault)?);
        second.push(check_function(format!("{} (second order)", case.kind.name()), &values, settings, fault, |g, x| {
            op_directional(g, &case, x, &weights, &dirs)
        })?);
    }
    first.extend(second);
    Ok(first)
}

/// Tiny bi-level problem: linear teacher, one 2-filter conv plus a linear
/// head as student, 8×8 single-channel images, two teaching steps on
/// batches of 4.
pub fn tiny_preset() -> (TrainingConfig, DatasetSpec) {
    let cfg = TrainingConfig {
        meta_iterations: 1,
        teach_steps: 2,
        latent_dim: 8,
        inner_batch: 4,
        outer_batch: 4,
        teacher_arch: TeacherArch::Linear,
        student_arch: StudentArch::TinyConv,
        tiny_filters: 2,
        real_augmentation: Augmentation::None,
        precision: crate::config::Precision::F64,
        ..TrainingConfig::default()
    };
    let spec = DatasetSpec {
        image_size: 8,
        channels: 1,
        num_classes: 4,
        class_names: Vec::new(),
        synthetic_train_per_class: 4,
        synthetic_test_per_class: 4,
    };
    (cfg, spec)
}

/// Gradients of the real-data loss with respect to the teacher and the
/// schedule, checked against central differences of the whole unrolled
/// computation.
pub fn check_meta_gradients(
    cfg: &TrainingConfig,
    spec: &DatasetSpec,
    settings: &GradcheckSettings,
    fault: Option<OpKind>,
) -> Result<Vec<CheckResult>> {
    let state = RunState::<f64>::new(cfg.clone(), spec.clone())?;
    let real = synth_generate::<f64>(spec, cfg.outer_batch.div_ceil(spec.num_classes), settings.seed, Split::Train)?;
    let idx: Vec<usize> = (0..cfg.outer_batch).collect();
    let (x, y) = real.gather(&idx);

    let mut analytic_state = state.clone();
    let mut it = analytic_state.begin_iteration()?;
    it.graph.inject_fault(fault);
    for j in 0..cfg.teach_steps {
        analytic_state.teaching_step(&mut it, j)?;
    }
    let grads = analytic_state.meta_gradients(&mut it, &x, &y)?;

    let loss_at = |perturb: &dyn Fn(&mut RunState<f64>)| -> Result<f64> {
        let mut s = state.clone();
        perturb(&mut s);
        s.unrolled_meta_loss(&x, &y)
    };
    let h = settings.step;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x5eed);

    let teacher = state.teacher.as_ref().ok_or_else(|| Error::Config("gradcheck needs the GMCL trainer".into()))?;
    let sizes: Vec<usize> = teacher.params().iter().map(|p| p.value.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut picks = sample(&mut rng, total, settings.coordinates.min(total)).into_vec();
    picks.sort_unstable();
    let locate = |flat: usize| -> (usize, usize) {
        let mut rest = flat;
        for (p, &n) in sizes.iter().enumerate() {
            if rest < n {
                return (p, rest);
            }
            rest -= n;
        }
        unreachable!("coordinate within total")
    };
    let mut teacher_result = CheckResult::new("meta: teacher".into());
    for flat in picks {
        let (p, c) = locate(flat);
        let shift = |d: f64| move |s: &mut RunState<f64>| {
            if let Some(t) = s.teacher.as_mut() {
                t.params_mut()[p].value.data_mut()[c] += d;
            }
        };
        let numeric = (loss_at(&shift(h))? - loss_at(&shift(-h))?) / (2.0 * h);
        teacher_result.record(flat, grads.teacher[p].data()[c], numeric, settings.floor);
    }
    let mut results = vec![teacher_result];

    if !grads.schedule.is_empty() {
        let mut schedule_result = CheckResult::new("meta: schedule".into());
        let mut flat = 0;
        for (p, g) in grads.schedule.iter().enumerate() {
            for c in 0..g.numel() {
                let shift = |d: f64| move |s: &mut RunState<f64>| {
                    if let Some(m) = s.schedule.as_mut() {
                        m.params[p].value.data_mut()[c] += d;
                    }
                };
                let numeric = (loss_at(&shift(h))? - loss_at(&shift(-h))?) / (2.0 * h);
                schedule_result.record(flat, g.data()[c], numeric, settings.floor);
                flat += 1;
            }
        }
        results.push(schedule_result);
    }
    Ok(results)
}

/// Per-op checks plus the meta-gradient check for a named preset.
pub fn run_gradcheck(preset: &str, settings: &GradcheckSettings, fault: Option<OpKind>) -> Result<GradcheckReport> {
    let (cfg, spec) = match preset {
        "tiny" => tiny_preset(),
        other => return Err(Error::Config(format!("unknown gradcheck preset '{other}' (available: tiny)"))),
    };
    let mut results = check_ops(settings, fault)?;
    let cfg = TrainingConfig { seed: settings.seed, ..cfg };
    results.extend(check_meta_gradients(&cfg, &spec, settings, fault)?);
    Ok(GradcheckReport { results, tolerance: settings.tolerance })
}
