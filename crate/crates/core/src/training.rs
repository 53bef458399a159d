//! The bi-level training loop, the plain-learner baseline and evaluation.
//!
//! One meta iteration builds a fresh [`Graph`]: the student parameters are
//! bound as leaves, `M` differentiable SGD-momentum steps on teacher
//! curriculum are unrolled in that graph, and the real-data loss at the end
//! is differentiated through all of them. Everything is then written back
//! as plain tensors and the graph is dropped.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::config::{Augmentation, DatasetSpec, LatentStrategy, RunConfig, Trainer, TrainingConfig};
use crate::data::{augment, LabeledImageSet};
use crate::error::{Error, Result};
use crate::functional::{softmax_cross_entropy, softmax_rows};
use crate::metrics::MetricsReport;
use crate::models::{LatentBatch, MetaSchedule, StudentLearner, TeacherGenerator};
use crate::nn::{self, Mode, Parameter};
use crate::optim::{adam_step, sgd_momentum_step, sgd_momentum_update, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const STREAM_STUDENT_INIT: u64 = 1;
const STREAM_TEACHER_INIT: u64 = 2;
const STREAM_BATCH: u64 = 3;
const STREAM_AUGMENT: u64 = 4;
const STREAM_LATENT: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Independent random streams of one run, all derived from the run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRngs {
    pub batch: ChaCha8Rng,
    pub augment: ChaCha8Rng,
    pub latent: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        RunRngs {
            batch: stream(seed, STREAM_BATCH),
            augment: stream(seed, STREAM_AUGMENT),
            latent: stream(seed, STREAM_LATENT),
        }
    }

    /// Word positions of the batch, augmentation and latent streams.
    pub fn positions(&self) -> [u128; 3] {
        [self.batch.get_word_pos(), self.augment.get_word_pos(), self.latent.get_word_pos()]
    }

    pub fn restore(seed: u64, positions: [u128; 3]) -> Self {
        let mut r = RunRngs::new(seed);
        r.batch.set_word_pos(positions[0]);
        r.augment.set_word_pos(positions[1]);
        r.latent.set_word_pos(positions[2]);
        r
    }
}

/// Losses of one completed iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Iterations completed, counting this one.
    pub meta_iter: usize,
    /// Mean curriculum loss over the teaching steps (GMCL only).
    pub teach_loss_mean: Option<f64>,
    /// Real-data loss before the update.
    pub meta_loss: f64,
    /// Largest node count of this iteration's graph.
    pub peak_nodes: usize,
}

/// Everything a run carries between iterations.
#[derive(Debug, Clone)]
pub struct RunState<T> {
    pub config: TrainingConfig,
    pub spec: DatasetSpec,
    /// Present for the GMCL trainer only.
    pub teacher: Option<TeacherGenerator<T>>,
    pub schedule: Option<MetaSchedule<T>>,
    pub student: StudentLearner<T>,
    /// The `M` latent batches reused every iteration under
    /// [`LatentStrategy::FixedAcrossTraining`].
    pub latent_bank: Vec<LatentBatch<T>>,
    pub meta_iter: usize,
    pub teach_losses: Vec<f64>,
    pub meta_losses: Vec<f64>,
    pub rngs: RunRngs,
}

/// Graph state of a meta iteration in progress.
pub struct UnrolledIteration<T> {
    pub graph: Graph<T>,
    pub teacher_vars: Vec<Var>,
    pub schedule_vars: Vec<Var>,
    /// Current student parameters; functions of θ_T and θ_meta once a
    /// teaching step has run.
    pub student_vars: Vec<Var>,
    pub velocity_vars: Vec<Var>,
    latents: Vec<LatentBatch<T>>,
    pub teach_losses: Vec<f64>,
}

impl<T> UnrolledIteration<T> {
    pub fn steps_done(&self) -> usize {
        self.teach_losses.len()
    }
}

/// Gradients of the real-data loss at the end of the unrolled inner loop.
#[derive(Debug, Clone)]
pub struct MetaGradients<T> {
    pub loss: T,
    /// Empty when no teaching step ran.
    pub teacher: Vec<Tensor<T>>,
    /// `[d raw_lr, d raw_momentum]`; empty unless the schedule is adaptive
    /// and teaching steps ran.
    pub schedule: Vec<Tensor<T>>,
    pub student: Vec<Tensor<T>>,
}

fn check_finite<T: Scalar>(v: T, context: &str, step: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { context: context.into(), step })
    }
}

impl<T: Scalar> RunState<T> {
    pub fn new(config: TrainingConfig, spec: DatasetSpec) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let student = StudentLearner::new(&config, &spec, &mut stream(config.seed, STREAM_STUDENT_INIT))?;
        let mut rngs = RunRngs::new(config.seed);
        let (teacher, schedule, latent_bank) = match config.trainer {
            Trainer::Plain => (None, None, Vec::new()),
            Trainer::Gmcl => {
                let teacher = TeacherGenerator::new(&config, &spec, &mut stream(config.seed, STREAM_TEACHER_INIT))?;
                let schedule = MetaSchedule::new(config.teach_steps, config.initial_lr, config.initial_momentum)?;
                let bank = if config.latent_strategy == LatentStrategy::FixedAcrossTraining {
                    (0..config.teach_steps)
                        .map(|_| LatentBatch::sample(config.inner_batch, config.latent_dim, spec.num_classes, &mut rngs.latent))
                        .collect()
                } else {
                    Vec::new()
                };
                (Some(teacher), Some(schedule), bank)
            }
        };
        Ok(RunState {
            config,
            spec,
            teacher,
            schedule,
            student,
            latent_bank,
            meta_iter: 0,
            teach_losses: Vec::new(),
            meta_losses: Vec::new(),
            rngs,
        })
    }

    fn no_teacher() -> Error {
        Error::Config("the plain trainer has no teacher".into())
    }

    /// Binds all current parameters into a fresh graph.
    pub fn begin_iteration(&mut self) -> Result<UnrolledIteration<T>> {
        let teacher = self.teacher.as_ref().ok_or_else(Self::no_teacher)?;
        let mut graph = Graph::new();
        let teacher_vars = teacher.bind(&mut graph);
        let schedule_vars = match (&self.schedule, self.config.adaptive_schedule) {
            (Some(s), true) => s.bind(&mut graph),
            _ => Vec::new(),
        };
        let student_vars = self.student.bind(&mut graph);
        let velocity_vars = self
            .student
            .params()
            .iter()
            .map(|p| graph.constant(p.velocity_or_zeros()))
            .collect();
        let latents = if self.config.latent_strategy == LatentStrategy::ResampledPerMetaIteration {
            (0..self.config.teach_steps)
                .map(|_| {
                    LatentBatch::sample(self.config.inner_batch, self.config.latent_dim, self.spec.num_classes, &mut self.rngs.latent)
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(UnrolledIteration {
            graph,
            teacher_vars,
            schedule_vars,
            student_vars,
            velocity_vars,
            latents,
            teach_losses: Vec::new(),
        })
    }

    /// Step size and momentum used at teaching step `j`.
    fn step_hyper(&self, g: &mut Graph<T>, schedule_vars: &[Var], j: usize) -> Result<(Var, Var)> {
        match &self.schedule {
            Some(s) if self.config.adaptive_schedule => s.values(g, schedule_vars, j),
            _ => Ok((
                g.scalar(T::from_f64_lossy(self.config.learning_rate)),
                g.scalar(T::from_f64_lossy(self.config.initial_momentum)),
            )),
        }
    }

    /// One differentiable student update on teacher curriculum. Steps must
    /// run in order `0, 1, …, M−1`. Returns the curriculum loss.
    pub fn teaching_step(&mut self, it: &mut UnrolledIteration<T>, j: usize) -> Result<T> {
        let m = self.config.teach_steps;
        if j >= m || j != it.steps_done() {
            return Err(Error::Index { what: "teaching step", index: j, len: m.min(it.steps_done() + 1) });
        }
        let fresh;
        let latent = match self.config.latent_strategy {
            LatentStrategy::FixedAcrossTraining => &self.latent_bank[j],
            LatentStrategy::ResampledPerMetaIteration => &it.latents[j],
            LatentStrategy::ResampledPerStep => {
                fresh = LatentBatch::sample(self.config.inner_batch, self.config.latent_dim, self.spec.num_classes, &mut self.rngs.latent);
                &fresh
            }
        };
        let teacher = self.teacher.as_mut().ok_or_else(Self::no_teacher)?;
        let g = &mut it.graph;
        let curriculum = teacher.forward(g, &it.teacher_vars, latent)?;
        let logits = self.student.forward(g, &it.student_vars, curriculum, Mode::Train)?;
        let loss = softmax_cross_entropy(g, logits, &latent.labels)?;
        let loss_value = g.value(loss).item();
        check_finite(loss_value, "teach loss", j)?;

        let grads = g.backward(loss, &it.student_vars, true).map_err(|e| {
            nn::rename_unreachable(e, &self.student.net.param_names())
        })?;
        let (lr, momentum) = self.step_hyper(&mut it.graph, &it.schedule_vars, j)?;
        let (params, vels) =
            sgd_momentum_step(&mut it.graph, &it.student_vars, &it.velocity_vars, &grads, lr, momentum, true)?;
        it.student_vars = params;
        it.velocity_vars = vels;
        it.teach_losses.push(loss_value.as_f64());
        Ok(loss_value)
    }

    /// Real-data loss of the unrolled student and its gradients with respect
    /// to the teacher, the schedule and the student.
    pub fn meta_gradients(&mut self, it: &mut UnrolledIteration<T>, images: &Tensor<T>, labels: &[usize]) -> Result<MetaGradients<T>> {
        let taught = it.steps_done() > 0;
        let g = &mut it.graph;
        let x = g.constant(images.clone());
        let logits = self.student.forward(g, &it.student_vars, x, Mode::Train)?;
        let loss = softmax_cross_entropy(g, logits, labels)?;
        let loss_value = g.value(loss).item();
        check_finite(loss_value, "meta loss", self.meta_iter)?;

        let mut wrt = Vec::new();
        let mut names: Vec<&str> = Vec::new();
        if taught {
            let teacher = self.teacher.as_ref().ok_or_else(Self::no_teacher)?;
            wrt.extend_from_slice(&it.teacher_vars);
            names.extend(teacher.net.param_names());
            if let Some(s) = self.schedule.as_ref().filter(|_| !it.schedule_vars.is_empty()) {
                wrt.extend_from_slice(&it.schedule_vars);
                names.extend(s.params.iter().map(|p| p.name.as_str()));
            }
        }
        let n_teacher = if taught { it.teacher_vars.len() } else { 0 };
        let n_schedule = if taught { it.schedule_vars.len() } else { 0 };
        wrt.extend_from_slice(&it.student_vars);
        names.extend(self.student.net.param_names());

        let mut grads = nn::named_gradients(g, loss, &wrt, &names)?;
        if let Some(bad) = grads.iter().position(|t| !t.all_finite()) {
            return Err(Error::Divergence { context: format!("gradient of {}", names[bad]), step: self.meta_iter });
        }
        let student = grads.split_off(n_teacher + n_schedule);
        let schedule = grads.split_off(n_teacher);
        Ok(MetaGradients { loss: loss_value, teacher: grads, schedule, student })
    }

    /// Student SGD step from the unrolled parameters (last schedule entry,
    /// detached), then Adam on the teacher and on the schedule.
    pub fn apply_meta_gradients(&mut self, it: UnrolledIteration<T>, grads: MetaGradients<T>) -> Result<IterationRecord> {
        let (lr, momentum) = match &self.schedule {
            Some(s) if self.config.adaptive_schedule => s.effective(self.config.teach_steps - 1)?,
            _ => (T::from_f64_lossy(self.config.learning_rate), T::from_f64_lossy(self.config.initial_momentum)),
        };
        let g = &it.graph;
        for (i, p) in self.student.params_mut().iter_mut().enumerate() {
            let mut value = g.value(it.student_vars[i]).clone();
            let mut vel = g.value(it.velocity_vars[i]).clone();
            sgd_momentum_update(&mut value, &mut vel, &grads.student[i], lr, momentum)?;
            p.value = value;
            p.velocity = Some(vel);
        }
        if !grads.teacher.is_empty() {
            let cfg = self.adam(self.config.teacher_lr);
            let teacher = self.teacher.as_mut().ok_or_else(Self::no_teacher)?;
            for (p, gr) in teacher.params_mut().iter_mut().zip(&grads.teacher) {
                let mut state = p.adam.take().unwrap_or_else(|| AdamState::new(p.value.shape()));
                adam_step(&mut p.value, gr, &mut state, &cfg)?;
                p.adam = Some(state);
            }
        }
        if !grads.schedule.is_empty() {
            let cfg = self.adam(self.config.meta_lr);
            if let Some(s) = self.schedule.as_mut() {
                for (p, gr) in s.params.iter_mut().zip(&grads.schedule) {
                    let mut state = p.adam.take().unwrap_or_else(|| AdamState::new(p.value.shape()));
                    adam_step(&mut p.value, gr, &mut state, &cfg)?;
                    p.adam = Some(state);
                }
            }
        }
        let teach_loss_mean = (!it.teach_losses.is_empty())
            .then(|| it.teach_losses.iter().sum::<f64>() / it.teach_losses.len() as f64);
        self.teach_losses.extend_from_slice(&it.teach_losses);
        self.meta_losses.push(grads.loss.as_f64());
        self.meta_iter += 1;
        Ok(IterationRecord {
            meta_iter: self.meta_iter,
            teach_loss_mean,
            meta_loss: grads.loss.as_f64(),
            peak_nodes: it.graph.peak_len(),
        })
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.config.adam_beta1, beta2: self.config.adam_beta2, eps: self.config.adam_eps }
    }

    /// Meta loss, backward through the unrolled loop, and all three updates.
    pub fn meta_step(&mut self, mut it: UnrolledIteration<T>, images: &Tensor<T>, labels: &[usize]) -> Result<IterationRecord> {
        let grads = self.meta_gradients(&mut it, images, labels)?;
        self.apply_meta_gradients(it, grads)
    }

    /// Real-data loss after `M` teaching steps, without any update. Used by
    /// the finite-difference checks; mutates only batchnorm statistics and
    /// random streams.
    pub fn unrolled_meta_loss(&mut self, images: &Tensor<T>, labels: &[usize]) -> Result<T> {
        let mut it = self.begin_iteration()?;
        for j in 0..self.config.teach_steps {
            self.teaching_step(&mut it, j)?;
        }
        let g = &mut it.graph;
        let x = g.constant(images.clone());
        let logits = self.student.forward(g, &it.student_vars, x, Mode::Train)?;
        let loss = softmax_cross_entropy(g, logits, labels)?;
        Ok(g.value(loss).item())
    }

    fn real_batch(&mut self, train: &LabeledImageSet<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let (x, y) = train.sample_batch(self.config.outer_batch, &mut self.rngs.batch)?;
        Ok((augment(&x, self.config.real_augmentation, &mut self.rngs.augment), y))
    }

    /// `M` teaching steps on curriculum followed by one meta step on a
    /// random real batch.
    pub fn meta_iteration(&mut self, train: &LabeledImageSet<T>) -> Result<IterationRecord> {
        let mut it = self.begin_iteration()?;
        if !self.config.skip_teaching {
            for j in 0..self.config.teach_steps {
                self.teaching_step(&mut it, j)?;
            }
        }
        let (x, y) = self.real_batch(train)?;
        self.meta_step(it, &x, &y)
    }

    /// One SGD-momentum step of the student on a real batch.
    pub fn plain_step(&mut self, train: &LabeledImageSet<T>) -> Result<IterationRecord> {
        let (x, y) = self.real_batch(train)?;
        let mut g = Graph::new();
        let vars = self.student.bind(&mut g);
        let xv = g.constant(x);
        let logits = self.student.forward(&mut g, &vars, xv, Mode::Train)?;
        let loss = softmax_cross_entropy(&mut g, logits, &y)?;
        let loss_value = g.value(loss).item();
        check_finite(loss_value, "plain loss", self.meta_iter)?;
        let grads = nn::named_gradients(&mut g, loss, &vars, &self.student.net.param_names())?;
        let lr = T::from_f64_lossy(self.config.learning_rate);
        let momentum = T::from_f64_lossy(self.config.initial_momentum);
        for (p, gr) in self.student.params_mut().iter_mut().zip(&grads) {
            let mut vel = p.velocity_or_zeros();
            sgd_momentum_update(&mut p.value, &mut vel, gr, lr, momentum)?;
            p.velocity = Some(vel);
        }
        self.meta_losses.push(loss_value.as_f64());
        self.meta_iter += 1;
        Ok(IterationRecord { meta_iter: self.meta_iter, teach_loss_mean: None, meta_loss: loss_value.as_f64(), peak_nodes: g.peak_len() })
    }

    /// One iteration of whichever trainer the config selects.
    pub fn iteration(&mut self, train: &LabeledImageSet<T>) -> Result<IterationRecord> {
        match self.config.trainer {
            Trainer::Gmcl => self.meta_iteration(train),
            Trainer::Plain => self.plain_step(train),
        }
    }

    /// Evaluation-mode metrics of the student on `set`, optionally after
    /// recomputing batchnorm statistics over `train`.
    pub fn evaluate(&mut self, set: &LabeledImageSet<T>, train: Option<&LabeledImageSet<T>>) -> Result<MetricsReport> {
        if self.config.eval_bn_recompute {
            if let Some(train) = train {
                let chunks: Vec<Tensor<T>> = train.chunks(self.config.outer_batch).map(|(x, _)| x).collect();
                self.student.recompute_bn_stats(chunks.iter())?;
            }
        }
        evaluate(&mut self.student, set)
    }

    /// Loss-history bookkeeping: `M` teach entries and one meta entry per
    /// GMCL iteration; only meta entries for the plain trainer.
    pub fn history_consistent(&self) -> bool {
        let teach = match self.config.trainer {
            Trainer::Gmcl if !self.config.skip_teaching => self.config.teach_steps * self.meta_iter,
            _ => 0,
        };
        self.teach_losses.len() == teach && self.meta_losses.len() == self.meta_iter
    }
}

/// Evaluation-mode metrics of `student` on `set`.
pub fn evaluate<T: Scalar>(student: &mut StudentLearner<T>, set: &LabeledImageSet<T>) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::Input("evaluation split is empty".into()));
    }
    let k = student.num_classes;
    let mut scores = Vec::with_capacity(set.len() * k);
    for (x, _) in set.chunks(256) {
        let logits = student.predict(&x)?;
        scores.extend(softmax_rows(&logits)?.data().iter().map(|v| v.as_f64()));
    }
    MetricsReport::from_scores(&scores, k, &set.labels)
}

/// One iteration's losses plus the evaluation, when one ran.
#[derive(Debug, Clone)]
pub struct IterationLog {
    pub record: IterationRecord,
    pub eval: Option<MetricsReport>,
}

/// Runs `state` up to `meta_iterations`, evaluating on `test` every
/// `eval_every` iterations and after the last one, and reporting each
/// iteration to `observer`.
pub fn run_training<T, F, E>(
    state: &mut RunState<T>,
    train: &LabeledImageSet<T>,
    test: Option<&LabeledImageSet<T>>,
    mut observer: F,
) -> core::result::Result<(), E>
where
    T: Scalar,
    F: FnMut(&RunState<T>, &IterationLog) -> core::result::Result<(), E>,
    E: From<Error>,
{
    let spec = &state.spec;
    let expected = [spec.channels, spec.image_size, spec.image_size];
    if train.images.shape()[1..] != expected {
        return Err(E::from(Error::Dimension { op: "run_training", left: train.images.shape().to_vec(), right: expected.to_vec() }));
    }
    if train.labels.iter().any(|&l| l >= spec.num_classes) {
        return Err(E::from(Error::Config("training labels exceed the configured class count".into())));
    }
    if train.len() < state.config.outer_batch {
        return Err(E::from(Error::Config(format!(
            "training set of {} is smaller than the outer batch {}",
            train.len(),
            state.config.outer_batch
        ))));
    }
    let total = state.config.meta_iterations;
    while state.meta_iter < total {
        let record = state.iteration(train)?;
        let every = state.config.eval_every;
        let due = record.meta_iter == total || (every > 0 && record.meta_iter % every == 0);
        let eval = match test {
            Some(test) if due => Some(state.evaluate(test, Some(train))?),
            _ => None,
        };
        observer(state, &IterationLog { record, eval })?;
    }
    Ok(())
}

/// Baseline: the same student trained on real data only, one SGD-momentum
/// step per iteration, with `augmentation` on every batch.
pub fn train_plain_learner<T: Scalar>(
    mut config: TrainingConfig,
    spec: DatasetSpec,
    train: &LabeledImageSet<T>,
    augmentation: Augmentation,
) -> Result<RunState<T>> {
    config.trainer = Trainer::Plain;
    config.real_augmentation = augmentation;
    let mut state = RunState::new(config, spec)?;
    run_training(&mut state, train, None, |_, _| Ok::<(), Error>(()))?;
    Ok(state)
}

/// Format-agnostic picture of a run: configuration, scalar state entries
/// and named tensors. Restoring it continues the run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub config: RunConfig,
    pub entries: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn push_params<T: Scalar>(params: &[Parameter<T>], tensors: &mut Vec<(String, Tensor<T>)>, entries: &mut Vec<(String, String)>) {
    for p in params {
        tensors.push((p.name.clone(), p.value.clone()));
        if let Some(v) = &p.velocity {
            tensors.push((format!("{}.velocity", p.name), v.clone()));
        }
        if let Some(a) = &p.adam {
            tensors.push((format!("{}.adam_m", p.name), a.m.clone()));
            tensors.push((format!("{}.adam_v", p.name), a.v.clone()));
            entries.push((format!("adam_step.{}", p.name), a.step.to_string()));
        }
    }
}

struct SnapshotReader<T> {
    entries: BTreeMap<String, String>,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> SnapshotReader<T> {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        self.take_optional(name, shape)?
            .ok_or_else(|| Error::Input(format!("snapshot lacks tensor `{name}`")))
    }

    fn take_optional(&mut self, name: &str, shape: &[usize]) -> Result<Option<Tensor<T>>> {
        match self.tensors.remove(name) {
            None => Ok(None),
            Some(t) if t.shape() == shape => Ok(Some(t)),
            Some(t) => Err(Error::Dimension { op: "snapshot", left: shape.to_vec(), right: t.shape().to_vec() }),
        }
    }

    fn entry<V: core::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.entries.get(key).ok_or_else(|| Error::Input(format!("snapshot lacks entry `{key}`")))?;
        raw.parse().map_err(|_| Error::Input(format!("snapshot entry `{key}` has bad value `{raw}`")))
    }

    fn params(&mut self, params: &mut [Parameter<T>]) -> Result<()> {
        for p in params {
            let shape = p.value.shape().to_vec();
            p.value = self.take(&p.name, &shape)?;
            p.velocity = self.take_optional(&format!("{}.velocity", p.name), &shape)?;
            let m = self.take_optional(&format!("{}.adam_m", p.name), &shape)?;
            let v = self.take_optional(&format!("{}.adam_v", p.name), &shape)?;
            p.adam = match (m, v) {
                (Some(m), Some(v)) => Some(AdamState { m, v, step: self.entry(&format!("adam_step.{}", p.name))? }),
                (None, None) => None,
                _ => return Err(Error::Input(format!("snapshot has half an Adam state for `{}`", p.name))),
            };
        }
        Ok(())
    }
}

fn history_tensor<T: Scalar>(values: &[f64]) -> Tensor<T> {
    Tensor::from_vec(&[values.len()], values.iter().map(|&v| T::from_f64_lossy(v)).collect())
}

impl<T: Scalar> RunState<T> {
    pub fn snapshot(&self) -> Snapshot<T> {
        let mut entries = Vec::new();
        let mut tensors = Vec::new();
        entries.push(("meta_iter".into(), self.meta_iter.to_string()));
        for (name, pos) in ["rng.batch", "rng.augment", "rng.latent"].iter().zip(self.rngs.positions()) {
            entries.push(((*name).into(), pos.to_string()));
        }
        if let Some(t) = &self.teacher {
            push_params(t.params(), &mut tensors, &mut entries);
        }
        if let Some(s) = &self.schedule {
            push_params(&s.params, &mut tensors, &mut entries);
        }
        push_params(self.student.params(), &mut tensors, &mut entries);
        for (name, stats) in self.student.net.bn_names().iter().zip(&self.student.net.running) {
            tensors.push((format!("{name}.running_mean"), stats.mean.clone()));
            tensors.push((format!("{name}.running_var"), stats.var.clone()));
        }
        for (j, b) in self.latent_bank.iter().enumerate() {
            tensors.push((format!("latent_bank.{j}"), b.z.clone()));
        }
        tensors.push(("history.teach_losses".into(), history_tensor(&self.teach_losses)));
        tensors.push(("history.meta_losses".into(), history_tensor(&self.meta_losses)));
        Snapshot {
            config: RunConfig { training: self.config.clone(), dataset: self.spec.clone() },
            entries,
            tensors,
        }
    }

    /// Rebuilds a run from [`RunState::snapshot`] output. Every tensor must
    /// be consumed and match the shapes implied by the configuration.
    pub fn from_snapshot(snapshot: Snapshot<T>) -> Result<Self> {
        let Snapshot { config, entries, tensors } = snapshot;
        let mut state = RunState::new(config.training, config.dataset)?;
        let mut r = SnapshotReader { entries: entries.into_iter().collect(), tensors: BTreeMap::new() };
        for (name, t) in tensors {
            if r.tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Input(format!("snapshot repeats tensor `{name}`")));
            }
        }
        state.meta_iter = r.entry("meta_iter")?;
        state.rngs = RunRngs::restore(
            state.config.seed,
            [r.entry("rng.batch")?, r.entry("rng.augment")?, r.entry("rng.latent")?],
        );
        if let Some(t) = state.teacher.as_mut() {
            r.params(t.params_mut())?;
        }
        if let Some(s) = state.schedule.as_mut() {
            r.params(&mut s.params)?;
        }
        r.params(state.student.params_mut())?;
        let names: Vec<String> = state.student.net.bn_names().to_vec();
        for (name, stats) in names.iter().zip(state.student.net.running.iter_mut()) {
            let shape = stats.mean.shape().to_vec();
            stats.mean = r.take(&format!("{name}.running_mean"), &shape)?;
            stats.var = r.take(&format!("{name}.running_var"), &shape)?;
        }
        for (j, b) in state.latent_bank.iter_mut().enumerate() {
            let shape = b.z.shape().to_vec();
            b.z = r.take(&format!("latent_bank.{j}"), &shape)?;
        }
        let teach_len = match state.config.trainer {
            Trainer::Gmcl if !state.config.skip_teaching => state.config.teach_steps * state.meta_iter,
            _ => 0,
        };
        state.teach_losses = r.take("history.teach_losses", &[teach_len])?.data().iter().map(|v| v.as_f64()).collect();
        state.meta_losses = r.take("history.meta_losses", &[state.meta_iter])?.data().iter().map(|v| v.as_f64()).collect();
        if let Some(extra) = r.tensors.keys().next() {
            return Err(Error::Input(format!("snapshot has unexpected tensor `{extra}`")));
        }
        Ok(state)
    }
}
