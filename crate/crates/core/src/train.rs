//! Denoiser training: batch assembly, the optimizer step and the training
//! state persisted in checkpoints.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{ConditionVector, RoadScenario};
use crate::loss::{loss_and_grad, LossParts};
use crate::nn::{ParamStore, RoadUNet, UNetConfig};
use crate::real::Real;
use crate::rng;
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub omega: f64,
    pub schedule: ScheduleParams,
    pub max_steps: usize,
    pub seed: u64,
    pub condition_dropout: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 32,
            omega: 1.0,
            schedule: ScheduleParams::default(),
            max_steps: 20_000,
            seed: 0,
            condition_dropout: 0.1,
            grad_clip: 1.0,
            checkpoint_interval: 1_000,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return bad(format!("omega must be >= 0, got {}", self.omega));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.condition_dropout) {
            return bad(format!("condition_dropout must lie in [0, 1], got {}", self.condition_dropout));
        }
        if !(self.grad_clip >= 0.0) {
            return bad(format!("grad_clip must be >= 0, got {}", self.grad_clip));
        }
        NoiseSchedule::from_params(self.schedule).map(|_| ())
    }
}

/// Dataset entry in network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    /// `[2n, k]` channel-major coordinates.
    pub x0: Vec<f64>,
    pub mask: Vec<bool>,
    pub condition: [f64; ConditionVector::DIM],
}

impl TrainExample {
    pub fn from_scenario(s: &RoadScenario) -> Self {
        Self {
            x0: s.to_channels(),
            mask: s.mask.clone(),
            condition: s.condition.as_array(),
        }
    }
}

/// Checks that every example matches the network's `[2n, k]` layout.
pub fn check_dataset(data: &[TrainExample], cfg: &UNetConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    for (i, e) in data.iter().enumerate() {
        if e.x0.len() != cfg.in_channels * cfg.seq_len || e.mask.len() != cfg.roads() {
            return Err(Error::Contract(format!(
                "example {i} does not match a {} x {} network layout",
                cfg.in_channels, cfg.seq_len
            )));
        }
        if !e.mask.iter().any(|m| *m) {
            return Err(Error::Contract(format!("example {i} has no valid road")));
        }
    }
    Ok(())
}

/// A noised batch with its targets.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub x_t: Tensor<T>,
    pub t: Vec<usize>,
    pub eps: Tensor<T>,
    pub cond: Vec<[f64; ConditionVector::DIM]>,
    pub mask: Vec<bool>,
}

/// Draws examples, steps, noise and condition dropout from `r`.
pub fn assemble_batch<T: Real, R: Rng + ?Sized>(
    data: &[TrainExample],
    schedule: &NoiseSchedule,
    batch_size: usize,
    dropout: f64,
    r: &mut R,
) -> Result<Batch<T>> {
    let picks: Vec<usize> = (0..batch_size).map(|_| r.random_range(0..data.len())).collect();
    let steps: Vec<usize> = (0..batch_size).map(|_| r.random_range(1..=schedule.steps())).collect();
    let drops: Vec<bool> = (0..batch_size).map(|_| r.random::<f64>() < dropout).collect();
    noised_batch(data, schedule, &picks, &steps, &drops, r)
}

/// Batch over explicit `(example, step)` pairs.
pub fn noised_batch<T: Real, R: Rng + ?Sized>(
    data: &[TrainExample],
    schedule: &NoiseSchedule,
    picks: &[usize],
    steps: &[usize],
    drops: &[bool],
    r: &mut R,
) -> Result<Batch<T>> {
    let per = data[0].x0.len();
    let roads = data[0].mask.len();
    let b = picks.len();
    let mut x_t = Vec::with_capacity(b * per);
    let mut eps_all = Vec::with_capacity(b * per);
    let mut cond = Vec::with_capacity(b);
    let mut mask = Vec::with_capacity(b * roads);
    for ((&i, &t), &drop) in picks.iter().zip(steps).zip(drops) {
        let ex = &data[i];
        let mut eps = vec![T::zero(); per];
        rng::fill_normal(r, &mut eps);
        let x0: Vec<T> = ex.x0.iter().map(|v| T::of(*v)).collect();
        x_t.extend(schedule.q_sample(&x0, t, &eps)?);
        eps_all.extend(eps);
        cond.push(if drop { [0.0; ConditionVector::DIM] } else { ex.condition });
        mask.extend_from_slice(&ex.mask);
    }
    let ch = 2 * roads;
    let k = per / ch;
    Ok(Batch {
        x_t: Tensor::from_vec(b, ch, k, x_t),
        t: steps.to_vec(),
        eps: Tensor::from_vec(b, ch, k, eps_all),
        cond,
        mask,
    })
}

/// Loss of `net` on `batch` and the gradient for every parameter.
pub fn loss_and_grads<T: Real>(net: &RoadUNet<T>, batch: &Batch<T>, omega: f64) -> Result<(LossParts, ParamStore<T>)> {
    net.check_input(&batch.x_t, batch.t.len(), batch.cond.len())?;
    let mut tape = crate::nn::Tape::new(net.params());
    let x = tape.input(batch.x_t.clone());
    let out = net.forward(&mut tape, x, &batch.t, &batch.cond, None)?;
    let (parts, grad) = loss_and_grad(&batch.eps, tape.value(out), &batch.mask, omega)?;
    Ok((parts, tape.backward(out, grad).params))
}

/// Loss only.
pub fn batch_loss<T: Real>(net: &RoadUNet<T>, batch: &Batch<T>, omega: f64) -> Result<LossParts> {
    let eps_hat = net.predict_noise_raw(&batch.x_t, &batch.t, &batch.cond, None)?;
    crate::loss::loss_total(&batch.eps, &eps_hat, &batch.mask, omega)
}

/// First-order optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub step: u64,
    /// Adam first and second moments; empty for SGD.
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &ParamStore<T>) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Adam => (params.zeros_like(), params.zeros_like()),
            OptimizerKind::Sgd => (ParamStore::new(), ParamStore::new()),
        };
        Self { kind, step: 0, m, v }
    }

    /// One update `params -= lr * direction(grads)`.
    pub fn apply(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().iter_mut().zip(grads.tensors()) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w = T::of(w.as_f64() - lr * d.as_f64());
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (ADAM_BETA1, ADAM_BETA2);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                let tensors = params.tensors_mut().iter_mut().zip(grads.tensors());
                let moments = self.m.tensors_mut().iter_mut().zip(self.v.tensors_mut().iter_mut());
                for ((p, g), (m, v)) in tensors.zip(moments) {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
                    for ((w, d), (mi, vi)) in it {
                        let d = d.as_f64();
                        let mn = b1 * mi.as_f64() + (1.0 - b1) * d;
                        let vn = b2 * vi.as_f64() + (1.0 - b2) * d * d;
                        *mi = T::of(mn);
                        *vi = T::of(vn);
                        let upd = lr * (mn / c1) / ((vn / c2).sqrt() + ADAM_EPS);
                        *w = T::of(w.as_f64() - upd);
                    }
                }
            }
        }
    }
}

/// Rescales `grads` to at most `max_norm`; returns the pre-clip norm.
pub fn clip_gradients<T: Real>(grads: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossParts,
    pub grad_norm: f64,
}

/// Everything needed to resume training or to sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub unet: UNetConfig,
    pub params: ParamStore<f32>,
    pub optimizer: Optimizer<f32>,
    pub schedule: ScheduleParams,
    pub step: usize,
    pub training: TrainingConfig,
    pub normalization: Normalization,
}

/// Dataset metadata needed to map samples back to meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub roads: usize,
    pub points: usize,
    pub half_extent_m: f64,
}

impl TrainState {
    pub fn network(&self) -> Result<RoadUNet<f32>> {
        RoadUNet::from_params(self.unet.clone(), self.params.clone())
    }
}

/// Single-writer training loop over an in-memory dataset.
pub struct Trainer<'d> {
    net: RoadUNet<f32>,
    optimizer: Optimizer<f32>,
    config: TrainingConfig,
    schedule: NoiseSchedule,
    data: &'d [TrainExample],
    step: usize,
    normalization: Normalization,
}

impl<'d> Trainer<'d> {
    pub fn new(unet: UNetConfig, config: TrainingConfig, data: &'d [TrainExample], normalization: Normalization) -> Result<Self> {
        config.validate()?;
        check_dataset(data, &unet)?;
        let net = RoadUNet::new(unet, config.seed)?;
        let optimizer = Optimizer::new(config.optimizer, net.params());
        Ok(Self {
            schedule: NoiseSchedule::from_params(config.schedule)?,
            net,
            optimizer,
            config,
            data,
            step: 0,
            normalization,
        })
    }

    /// Continues from a saved state with (possibly extended) `config`.
    pub fn resume(state: TrainState, config: TrainingConfig, data: &'d [TrainExample]) -> Result<Self> {
        config.validate()?;
        if config.schedule != state.schedule {
            return Err(Error::Config("schedule differs from the checkpoint".into()));
        }
        check_dataset(data, &state.unet)?;
        let net = RoadUNet::from_params(state.unet, state.params)?;
        Ok(Self {
            schedule: NoiseSchedule::from_params(config.schedule)?,
            net,
            optimizer: state.optimizer,
            config,
            data,
            step: state.step,
            normalization: state.normalization,
        })
    }

    pub fn net(&self) -> &RoadUNet<f32> {
        &self.net
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.max_steps
    }

    /// One optimizer update on a fresh batch keyed by `(seed, step)`.
    pub fn step(&mut self) -> Result<StepRecord> {
        let mut r = rng::stream(self.config.seed, rng::DOMAIN_TRAIN, self.step as u64);
        let batch = assemble_batch::<f32, _>(self.data, &self.schedule, self.config.batch_size, self.config.condition_dropout, &mut r)?;
        let (loss, mut grads) = loss_and_grads(&self.net, &batch, self.config.omega)?;
        let step = self.step + 1;
        if !loss.total.is_finite() || !grads.is_finite() {
            return Err(self.non_finite(step, &loss));
        }
        let grad_norm = clip_gradients(&mut grads, self.config.grad_clip);
        self.optimizer.apply(self.net.params_mut(), &grads, self.config.learning_rate);
        if !self.net.params().is_finite() {
            return Err(self.non_finite(step, &loss));
        }
        self.step = step;
        Ok(StepRecord { step, loss, grad_norm })
    }

    fn non_finite(&self, step: usize, loss: &LossParts) -> Error {
        let mut detail = format!("loss {:?}; parameter norms:", loss.total);
        for (name, norm) in self.net.params().norms() {
            detail.push_str(&format!(" {name}={norm:.4e}"));
        }
        Error::NonFinite { step, detail }
    }

    /// A fixed evaluation batch covering every example at `per_example`
    /// stratified steps; identical for a given seed.
    pub fn probe_batch(&self, per_example: usize) -> Result<Batch<f32>> {
        probe_batch(self.data, &self.schedule, self.config.seed, per_example)
    }

    pub fn probe_loss(&self, probe: &Batch<f32>) -> Result<LossParts> {
        batch_loss(&self.net, probe, self.config.omega)
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            unet: self.net.config().clone(),
            params: self.net.params().clone(),
            optimizer: self.optimizer.clone(),
            schedule: self.config.schedule,
            step: self.step,
            training: self.config.clone(),
            normalization: self.normalization,
        }
    }

    /// Runs to `max_steps`, calling `on_step` after every update and
    /// `on_checkpoint` at each interval and at termination.
    pub fn run(
        &mut self,
        mut on_step: impl FnMut(&StepRecord),
        mut on_checkpoint: impl FnMut(&TrainState) -> Result<()>,
    ) -> Result<()> {
        while !self.is_done() {
            let rec = self.step()?;
            on_step(&rec);
            let every = self.config.checkpoint_interval;
            if every > 0 && self.step % every == 0 && !self.is_done() {
                on_checkpoint(&self.state())?;
            }
        }
        on_checkpoint(&self.state())
    }
}

/// See [`Trainer::probe_batch`].
pub fn probe_batch(data: &[TrainExample], schedule: &NoiseSchedule, seed: u64, per_example: usize) -> Result<Batch<f32>> {
    let mut r = rng::stream(seed, rng::DOMAIN_PROBE, 0);
    let big_t = schedule.steps();
    let mut picks = Vec::new();
    let mut steps = Vec::new();
    for i in 0..data.len() {
        for j in 0..per_example {
            let lo = 1 + j * big_t / per_example;
            let hi = ((j + 1) * big_t / per_example).max(lo);
            picks.push(i);
            steps.push(r.random_range(lo..=hi));
        }
    }
    let drops = vec![false; picks.len()];
    noised_batch(data, schedule, &picks, &steps, &drops, &mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::toy_dataset;

    fn toy_data(n: usize, k: usize) -> Vec<TrainExample> {
        toy_dataset(4, 1, n, k, 200.0).unwrap().iter().map(TrainExample::from_scenario).collect()
    }

    #[test]
    fn sgd_step_on_one_parameter_model() {
        // y = w x, L = (w x - y)^2, dL/dw = 2 x (w x - y).
        let (x, y, w0, lr) = (1.5, 2.0, 0.3, 0.01);
        let mut p = ParamStore::<f64>::new();
        p.push("w", Tensor::from_vec(1, 1, 1, vec![w0]));
        let mut g = ParamStore::<f64>::new();
        g.push("w", Tensor::from_vec(1, 1, 1, vec![2.0 * x * (w0 * x - y)]));
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &p);
        opt.apply(&mut p, &g, lr);
        let expected = -lr * 2.0 * x * (w0 * x - y);
        assert!((p.get(0).data()[0] - w0 - expected).abs() < 1e-10);
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        let mut p = ParamStore::<f64>::new();
        p.push("w", Tensor::from_vec(1, 1, 3, vec![0.0, 1.0, -1.0]));
        let mut g = ParamStore::<f64>::new();
        g.push("w", Tensor::from_vec(1, 1, 3, vec![0.5, -3.0, 1e-3]));
        let mut opt = Optimizer::new(OptimizerKind::Adam, &p);
        opt.apply(&mut p, &g, 0.1);
        let d: Vec<f64> = p.get(0).data().iter().zip([0.0, 1.0, -1.0]).map(|(a, b)| a - b).collect();
        assert!((d[0] + 0.1).abs() < 1e-6 && (d[1] - 0.1).abs() < 1e-6 && (d[2] + 0.1).abs() < 1e-4);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = ParamStore::<f64>::new();
        g.push("a", Tensor::from_vec(1, 1, 2, vec![3.0, 4.0]));
        assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        assert_eq!(clip_gradients(&mut g, 0.0), g.global_norm());
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        for bad in [
            TrainingConfig { learning_rate: 0.0, ..Default::default() },
            TrainingConfig { omega: -1.0, ..Default::default() },
            TrainingConfig { batch_size: 0, ..Default::default() },
            TrainingConfig { condition_dropout: 1.5, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    /// Analytic gradient of the hybrid loss against central differences for
    /// every parameter of a reduced network.
    #[test]
    fn network_gradients_match_finite_differences() {
        let (n, k) = (2, 16);
        let data = toy_data(n, k);
        let schedule = NoiseSchedule::linear(500, 1e-4, 0.05).unwrap();
        let mut r = rng::stream(4, 0, 0);
        let batch = noised_batch::<f64, _>(&data, &schedule, &[0, 1], &[3, 420], &[false, true], &mut r).unwrap();
        let mut net = RoadUNet::<f64>::new(UNetConfig::reduced(n, k), 17).unwrap();
        let (_, grads) = loss_and_grads(&net, &batch, 1.0).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for pi in 0..net.params().len() {
            for j in 0..net.params().get(pi).numel() {
                let orig = net.params().get(pi).data()[j];
                net.params_mut().get_mut(pi).data_mut()[j] = orig + h;
                let lp = batch_loss(&net, &batch, 1.0).unwrap().total;
                net.params_mut().get_mut(pi).data_mut()[j] = orig - h;
                let lm = batch_loss(&net, &batch, 1.0).unwrap().total;
                net.params_mut().get_mut(pi).data_mut()[j] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.get(pi).data()[j];
                let rel = (fd - an).abs() / (fd.abs().max(an.abs()).max(1e-3));
                worst = worst.max(rel);
                assert!(rel < 1e-4, "{}[{j}]: analytic {an} vs numeric {fd}", net.params().name(pi));
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn fixed_seed_training_is_reproducible() {
        let data = toy_data(2, 16);
        let norm = Normalization { roads: 2, points: 16, half_extent_m: 200.0 };
        let cfg = TrainingConfig { batch_size: 4, max_steps: 3, checkpoint_interval: 2, seed: 5, ..Default::default() };
        let run = || {
            let mut t = Trainer::new(UNetConfig::reduced(2, 16), cfg.clone(), &data, norm).unwrap();
            let mut states = Vec::new();
            t.run(|_| {}, |s| {
                states.push(s.clone());
                Ok(())
            })
            .unwrap();
            states
        };
        let a = run();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].step, 2);
        assert_eq!(a[1].step, 3);
        assert_eq!(a, run());
    }

    #[test]
    fn resume_continues_the_same_trajectory() {
        let data = toy_data(2, 16);
        let norm = Normalization { roads: 2, points: 16, half_extent_m: 200.0 };
        let cfg = TrainingConfig { batch_size: 2, max_steps: 4, seed: 8, ..Default::default() };
        let mut straight = Trainer::new(UNetConfig::reduced(2, 16), cfg.clone(), &data, norm).unwrap();
        for _ in 0..4 {
            straight.step().unwrap();
        }
        let half = TrainingConfig { max_steps: 2, ..cfg.clone() };
        let mut first = Trainer::new(UNetConfig::reduced(2, 16), half, &data, norm).unwrap();
        first.step().unwrap();
        first.step().unwrap();
        let mut second = Trainer::resume(first.state(), cfg, &data).unwrap();
        second.step().unwrap();
        second.step().unwrap();
        assert_eq!(second.state(), straight.state());
    }

    #[test]
    fn non_finite_weights_abort_with_step() {
        let data = toy_data(2, 16);
        let norm = Normalization { roads: 2, points: 16, half_extent_m: 200.0 };
        let mut t = Trainer::new(UNetConfig::reduced(2, 16), TrainingConfig { batch_size: 2, ..Default::default() }, &data, norm).unwrap();
        t.net.params_mut().get_mut(0).data_mut()[0] = f32::NAN;
        match t.step() {
            Err(Error::NonFinite { step, detail }) => {
                assert_eq!(step, 1);
                assert!(detail.contains("cond.wide.w"));
            }
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn probe_batch_is_stratified_and_fixed() {
        let data = toy_data(2, 16);
        let s = NoiseSchedule::linear(500, 1e-4, 0.05).unwrap();
        let a = probe_batch(&data, &s, 3, 5).unwrap();
        let b = probe_batch(&data, &s, 3, 5).unwrap();
        assert_eq!(a.x_t, b.x_t);
        assert_eq!(a.t.len(), 20);
        for (i, t) in a.t.iter().enumerate() {
            let j = i % 5;
            assert!((1 + j * 100..=(j + 1) * 100).contains(t));
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let norm = Normalization { roads: 2, points: 16, half_extent_m: 200.0 };
        assert!(matches!(
            Trainer::new(UNetConfig::reduced(2, 16), TrainingConfig::default(), &[], norm),
            Err(Error::Empty(_))
        ));
    }
}
