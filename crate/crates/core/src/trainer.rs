//! Code learning by SGD on the squared reconstruction loss, and retraining
//! of code embeddings with the codes held fixed.
//!
//! One epoch visits every symbol once (shuffled by default). For a visited
//! symbol each code dimension is relaxed with a tempering softmax of its
//! logits; what the composer consumes depends on [`CodeMode`]:
//!
//! - `Ste`: the one-hot argmax, with gradients taken through the softmax;
//! - `Soft`: the softmax itself;
//! - `Random`: a frozen uniformly random code, logits untouched.
//!
//! The temperature is constant within an epoch and follows the schedule in
//! the epoch counter.

use std::fmt;

use crate::codec::{extract_codes, ste_backward, ste_forward, CodeBook, CodeLogits, KdSpec, TemperatureSchedule};
use crate::composer::{embed_code_dimension, ComposerParams, ComposerVariant, KdModel};
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, stable_softmax, Matrix, Rng};

/// Standard deviation of the initial code logits.
pub const LOGIT_INIT_STD: f64 = 0.01;

/// A run aborts once the epoch loss exceeds this multiple of the initial loss.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CodeMode {
    #[default]
    Ste,
    Soft,
    Random,
}

impl std::str::FromStr for CodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ste" => Ok(CodeMode::Ste),
            "soft" => Ok(CodeMode::Soft),
            "random" => Ok(CodeMode::Random),
            other => Err(Error::InvalidArgument(format!(
                "unknown code mode {other:?} (expected ste|soft|random)"
            ))),
        }
    }
}

impl fmt::Display for CodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeMode::Ste => "ste",
            CodeMode::Soft => "soft",
            CodeMode::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: TemperatureSchedule,
    pub composer: ComposerVariant,
    pub code_mode: CodeMode,
    /// Code embedding width `d′`; `None` uses the target width `d`.
    pub code_width: Option<usize>,
    /// Visit symbols in a freshly shuffled order each epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 1,
            seed: 0,
            schedule: TemperatureSchedule::default(),
            composer: ComposerVariant::Linear,
            code_mode: CodeMode::Ste,
            code_width: None,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.code_width == Some(0) {
            return Err(Error::InvalidArgument("code width must be >= 1".into()));
        }
        Ok(())
    }

    fn width_for(&self, out_dim: usize) -> usize {
        self.code_width.unwrap_or(out_dim)
    }
}

/// Per-epoch observables.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub temperature: f64,
    /// Mean per-symbol training loss, as seen by the forward pass.
    pub loss: f64,
    /// Mean per-symbol loss of the extracted hard codes after the epoch.
    pub hard_loss: f64,
    /// Fraction of symbols whose code changed during the epoch.
    pub changed_fraction: f64,
}

/// Everything a code-learning run owns.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub logits: CodeLogits,
    pub model: KdModel,
    /// Frozen codes of the random baseline.
    pub fixed_codes: Option<CodeBook>,
    pub epoch: usize,
    pub initial_loss: f64,
    codes: CodeBook,
    rng: Rng,
}

impl TrainState {
    /// Seeded initialization. The generator is split into independent
    /// streams for the model, the logits, the random codes and the visiting
    /// order, so e.g. random and learned runs share model initializations.
    pub fn new(targets: &Matrix, spec: KdSpec, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        check_targets(targets, spec.n())?;
        let mut root = Rng::new(config.seed);
        let mut model_rng = root.fork(1);
        let mut logit_rng = root.fork(2);
        let mut code_rng = root.fork(3);
        let order_rng = root.fork(4);

        let out_dim = targets.cols();
        let model = KdModel::random(
            spec.d(),
            spec.k(),
            config.width_for(out_dim),
            out_dim,
            config.composer,
            &mut model_rng,
        );
        let logits = CodeLogits::gaussian(spec, LOGIT_INIT_STD, &mut logit_rng);
        let fixed_codes = match config.code_mode {
            CodeMode::Random => Some(CodeBook::random(spec, &mut code_rng)),
            _ => None,
        };
        let codes = fixed_codes.clone().unwrap_or_else(|| extract_codes(&logits));
        let initial_loss = reconstruction_loss(targets, CodeAssignment::Hard(&codes), &model)? / spec.n() as f64;
        Ok(TrainState {
            logits,
            model,
            fixed_codes,
            epoch: 0,
            initial_loss,
            codes,
            rng: order_rng,
        })
    }

    /// Current hard codes.
    pub fn codes(&self) -> &CodeBook {
        &self.codes
    }
}

/// Codes as consumed by [`reconstruction_loss`].
#[derive(Clone, Copy, Debug)]
pub enum CodeAssignment<'a> {
    Hard(&'a CodeBook),
    /// Tempering-softmax weights of the logits at `temperature`.
    Soft { logits: &'a CodeLogits, temperature: f64 },
}

fn check_targets(targets: &Matrix, n: usize) -> Result<()> {
    if targets.rows() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} target vectors for N = {n} symbols",
            targets.rows()
        )));
    }
    if targets.cols() == 0 {
        return Err(Error::InvalidArgument("targets have zero width".into()));
    }
    if !targets.is_finite() {
        return Err(Error::NonFinite("target embeddings".into()));
    }
    Ok(())
}

/// `Σᵢ ‖vᵢ − f(codeᵢ)‖²`.
pub fn reconstruction_loss(targets: &Matrix, codes: CodeAssignment<'_>, model: &KdModel) -> Result<f64> {
    let (spec, n) = match codes {
        CodeAssignment::Hard(book) => (book.spec(), book.len()),
        CodeAssignment::Soft { logits, .. } => (logits.spec(), logits.spec().n()),
    };
    check_targets(targets, n)?;
    if targets.cols() != model.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "targets have width {}, model outputs {}",
            targets.cols(),
            model.output_dim()
        )));
    }
    if spec.d() != model.tables.dims() || spec.k() != model.tables.k() {
        return Err(Error::ShapeMismatch(format!(
            "codes are {spec}, model tables are D={} K={}",
            model.tables.dims(),
            model.tables.k()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let out = match codes {
            CodeAssignment::Hard(book) => model.embed(book.code(i))?,
            CodeAssignment::Soft { logits, temperature } => {
                let xs = (0..spec.d())
                    .map(|j| {
                        let w = stable_softmax(logits.row(i, j), temperature)?;
                        embed_code_dimension(&w, model.tables.table(j))
                    })
                    .collect::<Result<Vec<_>>>()?;
                model.composer.forward(&xs)?.0
            }
        };
        total += squared_distance(targets.row(i), &out);
    }
    Ok(total)
}

/// How a symbol's code is formed in one SGD step.
#[derive(Clone, Copy)]
enum Relaxation {
    Ste(f64),
    Soft(f64),
    Fixed,
}

struct SymbolGrad {
    symbol: usize,
    loss: f64,
    /// The `D` code-weight vectors the forward pass consumed.
    weights: Vec<Vec<f64>>,
    /// Gradient of the loss at each code vector.
    input_grads: Vec<Vec<f64>>,
    composer: ComposerParams,
    /// `D × K` gradient of the symbol's logits, when they are trained.
    logits: Option<Vec<f64>>,
}

fn one_hot(k: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[index] = 1.0;
    v
}

fn symbol_grad(
    model: &KdModel,
    target: &[f64],
    symbol: usize,
    logits: Option<&[f64]>,
    code: &[usize],
    relax: Relaxation,
) -> Result<SymbolGrad> {
    let k = model.tables.k();
    let dims = model.tables.dims();
    let mut weights = Vec::with_capacity(dims);
    let mut softs = Vec::with_capacity(dims);
    for j in 0..dims {
        match relax {
            Relaxation::Ste(t) => {
                let row = &logits.expect("logits for ste")[j * k..(j + 1) * k];
                let out = ste_forward(row, t)?;
                debug_assert!(out.hard.iter().filter(|v| **v == 1.0).count() == 1);
                weights.push(out.hard);
                softs.push(out.soft);
            }
            Relaxation::Soft(t) => {
                let row = &logits.expect("logits for soft")[j * k..(j + 1) * k];
                let soft = stable_softmax(row, t)?;
                weights.push(soft.clone());
                softs.push(soft);
            }
            Relaxation::Fixed => weights.push(one_hot(k, code[j])),
        }
    }

    let xs = match relax {
        Relaxation::Fixed | Relaxation::Ste(_) => {
            let hard: Vec<usize> = match relax {
                Relaxation::Fixed => code.to_vec(),
                _ => weights
                    .iter()
                    .map(|w| w.iter().position(|v| *v == 1.0).unwrap())
                    .collect(),
            };
            model.tables.lookup(&hard)
        }
        Relaxation::Soft(_) => weights
            .iter()
            .enumerate()
            .map(|(j, w)| embed_code_dimension(w, model.tables.table(j)))
            .collect::<Result<_>>()?,
    };

    let (out, tape) = model.composer.forward(&xs)?;
    let residual: Vec<f64> = out.iter().zip(target).map(|(o, v)| o - v).collect();
    let loss: f64 = residual.iter().map(|r| r * r).sum();
    let upstream: Vec<f64> = residual.iter().map(|r| 2.0 * r).collect();
    let grads = model.composer.backward(&tape, &upstream)?;

    let logit_grad = match relax {
        Relaxation::Ste(t) | Relaxation::Soft(t) => {
            let mut g = Vec::with_capacity(dims * k);
            for j in 0..dims {
                // d loss / d weights_j[k] = W^j_k · dx_j
                let dw = model.tables.table(j).mul_vec(&grads.inputs[j]);
                g.extend(ste_backward(&softs[j], &dw, t));
            }
            Some(g)
        }
        Relaxation::Fixed => None,
    };

    Ok(SymbolGrad {
        symbol,
        loss,
        weights,
        input_grads: grads.inputs,
        composer: grads.params,
        logits: logit_grad,
    })
}

/// Relaxed code path differentiated by [`objective_gradient`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientPath {
    /// Hard forward pass, tempering-softmax backward pass.
    Ste { temperature: f64 },
    /// Tempering-softmax weights in both passes.
    Soft { temperature: f64 },
}

/// Loss and gradient of the summed reconstruction objective.
#[derive(Clone, Debug)]
pub struct ObjectiveGradient {
    pub loss: f64,
    /// Flat `N × D × K`, laid out like [`CodeLogits`].
    pub logits: Vec<f64>,
    pub tables: Vec<Matrix>,
    pub composer: ComposerParams,
}

/// Gradient of `Σᵢ ‖vᵢ − f(codeᵢ)‖²` with respect to every logit, code
/// embedding and composer parameter, as used by the SGD steps.
pub fn objective_gradient(
    targets: &Matrix,
    logits: &CodeLogits,
    model: &KdModel,
    path: GradientPath,
) -> Result<ObjectiveGradient> {
    let spec = logits.spec();
    check_targets(targets, spec.n())?;
    if targets.cols() != model.output_dim() || spec.d() != model.tables.dims() || spec.k() != model.tables.k() {
        return Err(Error::ShapeMismatch(format!(
            "targets {}x{}, codes {spec}, model D={} K={} d={}",
            targets.rows(),
            targets.cols(),
            model.tables.dims(),
            model.tables.k(),
            model.output_dim()
        )));
    }
    let relax = match path {
        GradientPath::Ste { temperature } => Relaxation::Ste(temperature),
        GradientPath::Soft { temperature } => Relaxation::Soft(temperature),
    };
    let width = model.tables.width();
    let mut out = ObjectiveGradient {
        loss: 0.0,
        logits: Vec::with_capacity(logits.as_slice().len()),
        tables: (0..spec.d()).map(|_| Matrix::zeros(spec.k(), width)).collect(),
        composer: model.composer.zeros_like(),
    };
    for i in 0..spec.n() {
        let g = symbol_grad(model, targets.row(i), i, Some(logits.symbol(i)), &[], relax)?;
        out.loss += g.loss;
        out.logits.extend(g.logits.expect("relaxed path"));
        for (j, (w, dx)) in g.weights.iter().zip(&g.input_grads).enumerate() {
            out.tables[j].add_outer(w, dx, 1.0);
        }
        out.composer.add_scaled(&g.composer, 1.0);
    }
    Ok(out)
}

/// Applies the averaged gradients of one mini-batch.
fn apply_batch(model: &mut KdModel, mut logits: Option<&mut CodeLogits>, batch: &[SymbolGrad], lr: f64) {
    let scale = lr / batch.len() as f64;
    let mut composer = model.composer.zeros_like();
    for g in batch {
        composer.add_scaled(&g.composer, 1.0);
        for (j, (w, dx)) in g.weights.iter().zip(&g.input_grads).enumerate() {
            model.tables.table_mut(j).add_outer(w, dx, -scale);
        }
        if let (Some(l), Some(dl)) = (logits.as_deref_mut(), &g.logits) {
            for (v, d) in l.symbol_mut(g.symbol).iter_mut().zip(dl) {
                *v -= scale * d;
            }
        }
    }
    model.composer.add_scaled(&composer, -scale);
}

/// One pass of mini-batch SGD over all symbols. Returns the mean loss.
#[allow(clippy::too_many_arguments)]
fn sgd_epoch(
    model: &mut KdModel,
    mut logits: Option<&mut CodeLogits>,
    fixed: Option<&CodeBook>,
    targets: &Matrix,
    relax: Relaxation,
    config: &TrainConfig,
    rng: &mut Rng,
    epoch: usize,
    temperature: f64,
) -> Result<f64> {
    let n = targets.rows();
    let mut order: Vec<usize> = (0..n).collect();
    if config.shuffle {
        rng.shuffle(&mut order);
    }
    let mut total = 0.0;
    for chunk in order.chunks(config.batch_size) {
        let mut batch = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let row = logits.as_deref().map(|l| l.symbol(i));
            let code = fixed.map_or(&[][..], |b| b.code(i));
            let g = symbol_grad(model, targets.row(i), i, row, code, relax)?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite loss at symbol {i} (temperature {temperature})"),
                });
            }
            total += g.loss;
            batch.push(g);
        }
        apply_batch(model, logits.as_deref_mut(), &batch, config.learning_rate);
    }
    if !model.is_finite() || logits.as_deref().is_some_and(|l| l.as_slice().iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged {
            epoch,
            reason: format!("non-finite parameters (temperature {temperature})"),
        });
    }
    Ok(total / n as f64)
}

fn check_divergence(epoch: usize, loss: f64, initial: f64) -> Result<()> {
    if loss > DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE) {
        return Err(Error::Diverged {
            epoch,
            reason: format!("loss {loss} exceeds {DIVERGENCE_FACTOR}x the initial loss {initial}"),
        });
    }
    Ok(())
}

/// One epoch of code learning at the scheduled temperature.
pub fn train_epoch(state: &mut TrainState, targets: &Matrix, config: &TrainConfig) -> Result<EpochStats> {
    config.validate()?;
    check_targets(targets, state.logits.spec().n())?;
    let epoch = state.epoch;
    let temperature = config.schedule.temperature_at(epoch);
    let relax = match config.code_mode {
        CodeMode::Ste => Relaxation::Ste(temperature),
        CodeMode::Soft => Relaxation::Soft(temperature),
        CodeMode::Random => Relaxation::Fixed,
    };
    let logits = match relax {
        Relaxation::Fixed => None,
        _ => Some(&mut state.logits),
    };
    let loss = sgd_epoch(
        &mut state.model,
        logits,
        state.fixed_codes.as_ref(),
        targets,
        relax,
        config,
        &mut state.rng,
        epoch,
        temperature,
    )?;
    check_divergence(epoch, loss, state.initial_loss)?;

    let codes = match &state.fixed_codes {
        Some(fixed) => fixed.clone(),
        None => extract_codes(&state.logits),
    };
    let changed_fraction = codes.changed_fraction(&state.codes);
    let hard_loss = reconstruction_loss(targets, CodeAssignment::Hard(&codes), &state.model)? / targets.rows() as f64;
    state.codes = codes;
    state.epoch += 1;
    Ok(EpochStats {
        epoch,
        temperature,
        loss,
        hard_loss,
        changed_fraction,
    })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub config: TrainConfig,
    /// Mean per-symbol hard-code loss before training.
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
    pub codebook: CodeBook,
    pub model: KdModel,
    pub logits: CodeLogits,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn hard_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.hard_loss).collect()
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.temperature).collect()
    }

    pub fn changed_fractions(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.changed_fraction).collect()
    }

    /// Mean per-symbol loss of the final codes and parameters.
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.hard_loss)
    }
}

/// Learns codes for `targets`, calling `on_epoch` after every epoch.
pub fn learn_codes_with<F>(targets: &Matrix, spec: KdSpec, config: &TrainConfig, mut on_epoch: F) -> Result<TrainReport>
where
    F: FnMut(&EpochStats),
{
    let mut state = TrainState::new(targets, spec, config)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let stats = train_epoch(&mut state, targets, config)?;
        on_epoch(&stats);
        epochs.push(stats);
    }
    Ok(TrainReport {
        config: config.clone(),
        initial_loss: state.initial_loss,
        epochs,
        codebook: state.codes,
        model: state.model,
        logits: state.logits,
    })
}

pub fn learn_codes(targets: &Matrix, spec: KdSpec, config: &TrainConfig) -> Result<TrainReport> {
    learn_codes_with(targets, spec, config, |_| {})
}

#[derive(Clone, Debug)]
pub struct RetrainReport {
    pub model: KdModel,
    /// Mean per-symbol loss at initialization.
    pub initial_loss: f64,
    /// Mean per-symbol training loss of each epoch.
    pub losses: Vec<f64>,
    /// Mean per-symbol loss after the last epoch.
    pub final_loss: f64,
}

/// Fresh code embeddings and composer trained against fixed codes.
pub fn retrain_code_embeddings_with<F>(
    targets: &Matrix,
    codebook: &CodeBook,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<RetrainReport>
where
    F: FnMut(usize, f64),
{
    config.validate()?;
    check_targets(targets, codebook.len())?;
    let spec = codebook.spec();
    let mut root = Rng::new(config.seed);
    let mut model_rng = root.fork(1);
    let _ = root.fork(2);
    let _ = root.fork(3);
    let mut order_rng = root.fork(4);

    let out_dim = targets.cols();
    let mut model = KdModel::random(
        spec.d(),
        spec.k(),
        config.width_for(out_dim),
        out_dim,
        config.composer,
        &mut model_rng,
    );
    let n = codebook.len() as f64;
    let initial_loss = reconstruction_loss(targets, CodeAssignment::Hard(codebook), &model)? / n;
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = sgd_epoch(
            &mut model,
            None,
            Some(codebook),
            targets,
            Relaxation::Fixed,
            config,
            &mut order_rng,
            epoch,
            f64::NAN,
        )?;
        check_divergence(epoch, loss, initial_loss)?;
        on_epoch(epoch, loss);
        losses.push(loss);
    }
    let final_loss = if config.epochs == 0 {
        initial_loss
    } else {
        reconstruction_loss(targets, CodeAssignment::Hard(codebook), &model)? / n
    };
    Ok(RetrainReport {
        model,
        initial_loss,
        losses,
        final_loss,
    })
}

pub fn retrain_code_embeddings(targets: &Matrix, codebook: &CodeBook, config: &TrainConfig) -> Result<RetrainReport> {
    retrain_code_embeddings_with(targets, codebook, config, |_, _| {})
}
