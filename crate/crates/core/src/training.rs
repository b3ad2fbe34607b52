//! Optimizer, gradient noise, dataset splits and the regression and
//! adversarial training loops.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_loss, mse_loss, Tape, Tensor};
use crate::data::{batch_tensor, SignalWindow};
use crate::models::{Discriminator, Generator, OdeEcgGenerator, ParamStore};
use crate::rng::{derive_seed, seeded, standard_normal, SeededRng};
use crate::{Error, Result};

/// Adam with bias correction. Moment buffers are created on the first step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Updates `params` in place from matching `grads`.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: &[Tensor],
    ) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(Error::InvalidInput(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::InvalidInput("parameter count changed between steps".into()));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::InvalidInput(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (pd, gd) = (p.data_mut(), g.data());
            for (((x, &g), m), v) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *x -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn step_store(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        self.step(store.tensors_mut(), grads)
    }
}

/// Adds i.i.d. `N(0, sigma²)` noise to every gradient element.
pub fn add_gradient_noise(grads: &mut [Tensor], sigma: f64, rng: &mut impl Rng) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("gradient noise must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    for g in grads {
        for x in g.data_mut() {
            *x += sigma * standard_normal(rng);
        }
    }
    Ok(())
}

/// Shuffled train/test partition with `round(ratio · N)` training items,
/// kept within `1..N` so both sides are nonempty.
pub fn split_dataset<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 items to split, got {}",
            items.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n = items.len();
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Training hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Number of training windows.
    pub datasize: usize,
    pub seq_length: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Adversarial iterations per epoch; unused by regression training.
    pub iterations: usize,
    pub seed: u64,
    /// Standard deviation of the discriminator gradient noise.
    pub grad_noise: f64,
    pub split_ratio: f64,
}

impl TrainConfig {
    /// Settings of the ODE-RNN regression experiment.
    pub fn ode_rnn() -> Self {
        Self {
            batch_size: 50,
            datasize: 100,
            seq_length: 240,
            hidden_dim: 50,
            learning_rate: 1e-4,
            epochs: 100,
            iterations: 1,
            seed: 0,
            grad_noise: 0.0,
            split_ratio: 0.8,
        }
    }

    /// Settings of the adversarial experiments.
    pub fn gan() -> Self {
        Self {
            batch_size: 64,
            datasize: 1000,
            seq_length: 240,
            hidden_dim: 50,
            learning_rate: 5e-5,
            epochs: 30,
            iterations: 1000,
            seed: 0,
            grad_noise: 0.01,
            split_ratio: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("datasize", self.datasize),
            ("seq_length", self.seq_length),
            ("hidden_dim", self.hidden_dim),
            ("epochs", self.epochs),
            ("iterations", self.iterations),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.grad_noise.is_finite() && self.grad_noise >= 0.0) {
            return Err(Error::InvalidConfig("grad_noise must be >= 0".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split_ratio must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLoss {
    pub epoch: usize,
    pub iteration: usize,
    pub g_loss: f64,
    pub d_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LossHistory {
    /// Mean loss per epoch.
    Regression(Vec<f64>),
    /// Losses of every adversarial iteration.
    Adversarial(Vec<GanLoss>),
}

impl LossHistory {
    pub fn len(&self) -> usize {
        match self {
            LossHistory::Regression(v) => v.len(),
            LossHistory::Adversarial(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        match self {
            LossHistory::Regression(v) => v.iter().all(|x| x.is_finite()),
            LossHistory::Adversarial(v) => {
                v.iter().all(|l| l.g_loss.is_finite() && l.d_loss.is_finite())
            }
        }
    }

    /// `epoch,loss` or `epoch,iteration,g_loss,d_loss` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            LossHistory::Regression(v) => {
                out.push_str("epoch,loss\n");
                for (e, l) in v.iter().enumerate() {
                    out.push_str(&format!("{e},{l}\n"));
                }
            }
            LossHistory::Adversarial(v) => {
                out.push_str("epoch,iteration,g_loss,d_loss\n");
                for l in v {
                    out.push_str(&format!("{},{},{},{}\n", l.epoch, l.iteration, l.g_loss, l.d_loss));
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn finite_loss(value: f64, epoch: usize, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        log::error!("non-finite loss {value} at epoch {epoch}, step {step}");
        Err(Error::NonFiniteLoss { epoch, step })
    }
}

fn check_windows(data: &[SignalWindow], seq_length: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training data is empty".into()));
    }
    if let Some(w) = data.iter().find(|w| w.len() != seq_length) {
        return Err(Error::InvalidInput(format!(
            "window of length {} does not match seq_length {seq_length}",
            w.len()
        )));
    }
    Ok(())
}

/// Teacher-forced MSE regression of an ODE-RNN generator on `data`.
///
/// Each epoch visits every window once in shuffled batches; the recorded
/// loss is the sample-weighted mean batch MSE. `on_epoch` runs after every
/// epoch with its index and loss.
pub fn train_ode_ecg_generator(
    model: &mut OdeEcgGenerator,
    data: &[SignalWindow],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &OdeEcgGenerator) -> Result<()>,
) -> Result<LossHistory> {
    cfg.validate()?;
    check_windows(data, cfg.seq_length)?;
    if model.config.channels != 1 {
        return Err(Error::InvalidConfig("regression training expects a single channel".into()));
    }
    let ts = model.times(cfg.seq_length);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = seeded(derive_seed(cfg.seed, &[1, epoch as u64]));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&SignalWindow> = chunk.iter().map(|&i| &data[i]).collect();
            let signal = batch_tensor(&batch)?;
            let noise = model.sample_noise(batch.len(), &mut rng);
            let tape = Tape::new();
            let p = model.params().bind(&tape);
            let pred = model.teacher_forced(&p, &tape, &signal, &ts, &noise)?;
            let loss = mse_loss(&pred, &tape.constant(signal))?;
            let value = finite_loss(loss.value().item(), epoch, step)?;
            let grads = p.grads(&tape.backward(loss)?);
            adam.step_store(model.params_mut(), &grads)?;
            total += value * batch.len() as f64;
        }
        let epoch_loss = total / data.len() as f64;
        log::info!("epoch {epoch}: mse {epoch_loss:.6}");
        history.push(epoch_loss);
        on_epoch(epoch, epoch_loss, model)?;
    }
    Ok(LossHistory::Regression(history))
}

/// Optimizer state of an adversarial run.
#[derive(Clone, Debug)]
pub struct GanOptimizers {
    pub generator: Adam,
    pub discriminator: Adam,
}

impl GanOptimizers {
    pub fn new(lr: f64) -> Self {
        Self {
            generator: Adam::new(lr),
            discriminator: Adam::new(lr),
        }
    }
}

/// Discriminator update on a real batch and a constant generated batch,
/// both `[B, L]`: `BCE(D(real), 1) + BCE(D(fake), 0)`, gradient noise, one
/// Adam step. Returns the loss before the update.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_step<D: Discriminator + ?Sized>(
    discriminator: &mut D,
    real: &Tensor,
    fake: &Tensor,
    cfg: &TrainConfig,
    adam: &mut Adam,
    rng: &mut SeededRng,
    (epoch, step): (usize, usize),
) -> Result<f64> {
    if real.shape() != fake.shape() {
        return Err(Error::InvalidInput(format!(
            "real {:?} and generated {:?} batches differ",
            real.shape(),
            fake.shape()
        )));
    }
    let b = real.shape()[0];
    let tape = Tape::new();
    let dp = discriminator.params().bind(&tape);
    let real_v = tape.constant(real.clone());
    let fake_v = tape.constant(fake.clone());
    let on_real = discriminator.forward(&dp, &real_v, &fake_v)?;
    let on_fake = discriminator.forward(&dp, &fake_v, &real_v)?;
    let ones = tape.constant(Tensor::full(&[b, 1], 1.0));
    let zeros = tape.constant(Tensor::zeros(&[b, 1]));
    let loss = bce_loss(&on_real, &ones)?.add(&bce_loss(&on_fake, &zeros)?)?;
    let value = finite_loss(loss.value().item(), epoch, step)?;
    let mut grads = dp.grads(&tape.backward(loss)?);
    add_gradient_noise(&mut grads, cfg.grad_noise, rng)?;
    adam.step_store(discriminator.params_mut(), &grads)?;
    Ok(value)
}

/// One discriminator update followed by one generator update on `real`
/// (`[B, L]`); returns `(g_loss, d_loss)`.
///
/// The generated batch is drawn once. The discriminator sees it as a
/// constant; the generator loss `BCE(D(fake), 1)` then goes through the
/// updated discriminator with its parameters frozen.
pub fn gan_train_step<G, D>(
    generator: &mut G,
    discriminator: &mut D,
    real: &Tensor,
    cfg: &TrainConfig,
    opt: &mut GanOptimizers,
    rng: &mut SeededRng,
    at: (usize, usize),
) -> Result<(f64, f64)>
where
    G: Generator + ?Sized,
    D: Discriminator + ?Sized,
{
    let (b, l) = match real.shape() {
        [b, l] => (*b, *l),
        s => return Err(Error::InvalidInput(format!("real batch {s:?} is not [B, L]"))),
    };
    if b != cfg.batch_size || l != discriminator.seq_length() {
        return Err(Error::InvalidInput(format!(
            "real batch [{b}, {l}] does not match batch_size {} and seq_length {}",
            cfg.batch_size,
            discriminator.seq_length()
        )));
    }
    let tape = Tape::new();
    let gp = generator.params().bind(&tape);
    let fake = generator.sample(&gp, &tape, b, l / generator.channels(), rng)?;
    let d_loss = discriminator_step(
        discriminator,
        real,
        &fake.value(),
        cfg,
        &mut opt.discriminator,
        rng,
        at,
    )?;

    let frozen: &D = discriminator;
    let dp = frozen.params().bind_frozen(&tape);
    let judged = frozen.forward(&dp, &fake, &tape.constant(real.clone()))?;
    let ones = tape.constant(Tensor::full(&[b, 1], 1.0));
    let loss = bce_loss(&judged, &ones)?;
    let g_loss = finite_loss(loss.value().item(), at.0, at.1)?;
    let grads = gp.grads(&tape.backward(loss)?);
    opt.generator.step_store(generator.params_mut(), &grads)?;
    Ok((g_loss, d_loss))
}

/// Draws `batch` distinct windows (with replacement only when the data is
/// smaller than the batch).
pub fn sample_batch(data: &[SignalWindow], batch: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let picks: Vec<&SignalWindow> = if data.len() >= batch {
        index::sample(rng, data.len(), batch).iter().map(|i| &data[i]).collect()
    } else {
        (0..batch).map(|_| &data[rng.random_range(0..data.len())]).collect()
    };
    batch_tensor(&picks)
}

/// Alternating adversarial training for `epochs × iterations` steps.
/// `on_epoch` runs after every epoch, e.g. to write a checkpoint.
pub fn train_gan<G, D>(
    generator: &mut G,
    discriminator: &mut D,
    data: &[SignalWindow],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &G, &D) -> Result<()>,
) -> Result<LossHistory>
where
    G: Generator + ?Sized,
    D: Discriminator + ?Sized,
{
    cfg.validate()?;
    check_windows(data, cfg.seq_length)?;
    let mut opt = GanOptimizers::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs * cfg.iterations);
    for epoch in 0..cfg.epochs {
        for iteration in 0..cfg.iterations {
            let mut rng = seeded(derive_seed(cfg.seed, &[2, epoch as u64, iteration as u64]));
            let real = sample_batch(data, cfg.batch_size, &mut rng)?;
            let (g_loss, d_loss) = gan_train_step(
                generator,
                discriminator,
                &real,
                cfg,
                &mut opt,
                &mut rng,
                (epoch, iteration),
            )?;
            log::debug!("epoch {epoch} iteration {iteration}: g {g_loss:.5} d {d_loss:.5}");
            history.push(GanLoss {
                epoch,
                iteration,
                g_loss,
                d_loss,
            });
        }
        if let Some(last) = history.last() {
            log::info!("epoch {epoch}: g_loss {:.5} d_loss {:.5}", last.g_loss, last.d_loss);
        }
        on_epoch(epoch, generator, discriminator)?;
    }
    Ok(LossHistory::Adversarial(history))
}
