//! Composition of per-dimension code embeddings into a symbol embedding.
//!
//! For a code `(c¹, …, cᴰ)` the `j`-th code vector is row `cʲ` of table
//! `Wʲ` (or, for relaxed codes, a convex combination of its rows). Two
//! composers map the `D` code vectors to the output:
//!
//! - linear: `v = (Σⱼ xⱼ)ᵀ H`
//! - recurrent: an LSTM-style cell run over the code dimensions in order,
//!   `v = (Σⱼ hⱼ)ᵀ H`, where each code vector is added straight into every
//!   gate pre-activation (there are no input weight matrices).
//!
//! Every forward pass returns a [`Tape`] that the backward pass consumes.

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix, Rng};

/// The `D` code embedding tables `W¹ … Wᴰ`, each `K × d′`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeEmbeddingTables {
    tables: Vec<Matrix>,
}

impl CodeEmbeddingTables {
    pub fn new(tables: Vec<Matrix>) -> Result<Self> {
        let first = tables
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one code table is required".into()))?
            .shape();
        if let Some(j) = tables.iter().position(|t| t.shape() != first) {
            return Err(Error::ShapeMismatch(format!(
                "table {j} is {:?}, table 0 is {first:?}",
                tables[j].shape()
            )));
        }
        if tables.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("code embedding table".into()));
        }
        Ok(CodeEmbeddingTables { tables })
    }

    /// Gaussian entries with standard deviation `1/√d′`.
    pub fn random(dims: usize, k: usize, width: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / (width as f64).sqrt();
        let tables = (0..dims)
            .map(|_| Matrix::gaussian(k, width, std, rng))
            .collect();
        CodeEmbeddingTables { tables }
    }

    pub fn zeros(dims: usize, k: usize, width: usize) -> Self {
        CodeEmbeddingTables {
            tables: (0..dims).map(|_| Matrix::zeros(k, width)).collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.tables.len()
    }

    pub fn k(&self) -> usize {
        self.tables[0].rows()
    }

    pub fn width(&self) -> usize {
        self.tables[0].cols()
    }

    pub fn table(&self, j: usize) -> &Matrix {
        &self.tables[j]
    }

    pub fn table_mut(&mut self, j: usize) -> &mut Matrix {
        &mut self.tables[j]
    }

    pub fn tables(&self) -> &[Matrix] {
        &self.tables
    }

    pub fn param_count(&self) -> usize {
        self.dims() * self.k() * self.width()
    }

    /// Row lookup for a hard code.
    pub fn lookup(&self, code: &[usize]) -> Vec<Vec<f64>> {
        code.iter()
            .zip(&self.tables)
            .map(|(&c, t)| t.row(c).to_vec())
            .collect()
    }
}

/// `weightsᵀ W`: for a one-hot `weights` this is a row of `W`, for a
/// probability vector a convex combination of rows.
pub fn embed_code_dimension(weights: &[f64], table: &Matrix) -> Result<Vec<f64>> {
    if weights.len() != table.rows() {
        return Err(Error::ShapeMismatch(format!(
            "code weights of length {} for a table with {} rows",
            weights.len(),
            table.rows()
        )));
    }
    Ok(table.left_mul(weights))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ComposerVariant {
    #[default]
    Linear,
    Lstm,
}

impl std::str::FromStr for ComposerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ComposerVariant::Linear),
            "lstm" => Ok(ComposerVariant::Lstm),
            other => Err(Error::InvalidArgument(format!(
                "unknown composer {other:?} (expected linear|lstm)"
            ))),
        }
    }
}

impl fmt::Display for ComposerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComposerVariant::Linear => "linear",
            ComposerVariant::Lstm => "lstm",
        })
    }
}

/// Projection `H` (`d′ × d`) of the linear composer.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearComposerParams {
    pub h: Matrix,
}

/// Recurrent composer: gate recurrences and biases plus the output projection.
///
/// Gate naming follows the cell equations: `f` forget, `i` input, `t` output
/// gate, `m` candidate memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmComposerParams {
    pub u_f: Matrix,
    pub u_i: Matrix,
    pub u_t: Matrix,
    pub u_m: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_t: Vec<f64>,
    pub b_m: Vec<f64>,
    pub h: Matrix,
}

impl LstmComposerParams {
    pub fn zeros(width: usize, out_dim: usize) -> Self {
        LstmComposerParams {
            u_f: Matrix::zeros(width, width),
            u_i: Matrix::zeros(width, width),
            u_t: Matrix::zeros(width, width),
            u_m: Matrix::zeros(width, width),
            b_f: vec![0.0; width],
            b_i: vec![0.0; width],
            b_t: vec![0.0; width],
            b_m: vec![0.0; width],
            h: Matrix::zeros(width, out_dim),
        }
    }

    pub fn width(&self) -> usize {
        self.u_f.rows()
    }

    fn check(&self) -> Result<()> {
        let w = self.width();
        for (name, u) in [("U_f", &self.u_f), ("U_i", &self.u_i), ("U_t", &self.u_t), ("U_m", &self.u_m)] {
            if u.shape() != (w, w) {
                return Err(Error::ShapeMismatch(format!("{name} is {:?}, expected {w}x{w}", u.shape())));
            }
        }
        for (name, b) in [("b_f", &self.b_f), ("b_i", &self.b_i), ("b_t", &self.b_t), ("b_m", &self.b_m)] {
            if b.len() != w {
                return Err(Error::ShapeMismatch(format!("{name} has length {}, expected {w}", b.len())));
            }
        }
        if self.h.rows() != w {
            return Err(Error::ShapeMismatch(format!("H has {} rows, expected {w}", self.h.rows())));
        }
        Ok(())
    }
}

/// Parameters `θ` of the composition function.
#[derive(Clone, Debug, PartialEq)]
pub enum ComposerParams {
    Linear(LinearComposerParams),
    Lstm(LstmComposerParams),
}

impl ComposerParams {
    /// Recurrence matrices Gaussian(0, 1/√d′), biases zero, `H` Gaussian(0, 1/√d).
    pub fn random(variant: ComposerVariant, width: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let h_std = 1.0 / (out_dim as f64).sqrt();
        match variant {
            ComposerVariant::Linear => ComposerParams::Linear(LinearComposerParams {
                h: Matrix::gaussian(width, out_dim, h_std, rng),
            }),
            ComposerVariant::Lstm => {
                let u_std = 1.0 / (width as f64).sqrt();
                let mut p = LstmComposerParams::zeros(width, out_dim);
                p.u_f = Matrix::gaussian(width, width, u_std, rng);
                p.u_i = Matrix::gaussian(width, width, u_std, rng);
                p.u_t = Matrix::gaussian(width, width, u_std, rng);
                p.u_m = Matrix::gaussian(width, width, u_std, rng);
                p.h = Matrix::gaussian(width, out_dim, h_std, rng);
                ComposerParams::Lstm(p)
            }
        }
    }

    pub fn zeros(variant: ComposerVariant, width: usize, out_dim: usize) -> Self {
        match variant {
            ComposerVariant::Linear => ComposerParams::Linear(LinearComposerParams {
                h: Matrix::zeros(width, out_dim),
            }),
            ComposerVariant::Lstm => ComposerParams::Lstm(LstmComposerParams::zeros(width, out_dim)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ComposerParams::zeros(self.variant(), self.input_width(), self.output_dim())
    }

    pub fn variant(&self) -> ComposerVariant {
        match self {
            ComposerParams::Linear(_) => ComposerVariant::Linear,
            ComposerParams::Lstm(_) => ComposerVariant::Lstm,
        }
    }

    fn projection(&self) -> &Matrix {
        match self {
            ComposerParams::Linear(p) => &p.h,
            ComposerParams::Lstm(p) => &p.h,
        }
    }

    /// Code vector width `d′`.
    pub fn input_width(&self) -> usize {
        self.projection().rows()
    }

    /// Output embedding width `d`.
    pub fn output_dim(&self) -> usize {
        self.projection().cols()
    }

    /// Parameter blocks in a fixed order (the checkpoint order).
    pub fn blocks(&self) -> Vec<&[f64]> {
        match self {
            ComposerParams::Linear(p) => vec![p.h.as_slice()],
            ComposerParams::Lstm(p) => vec![
                p.u_f.as_slice(),
                p.u_i.as_slice(),
                p.u_t.as_slice(),
                p.u_m.as_slice(),
                &p.b_f,
                &p.b_i,
                &p.b_t,
                &p.b_m,
                p.h.as_slice(),
            ],
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            ComposerParams::Linear(p) => vec![p.h.as_mut_slice()],
            ComposerParams::Lstm(p) => vec![
                p.u_f.as_mut_slice(),
                p.u_i.as_mut_slice(),
                p.u_t.as_mut_slice(),
                p.u_m.as_mut_slice(),
                &mut p.b_f,
                &mut p.b_i,
                &mut p.b_t,
                &mut p.b_m,
                p.h.as_mut_slice(),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `self += scale · other`, block by block.
    pub fn add_scaled(&mut self, other: &ComposerParams, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn forward(&self, code_vectors: &[Vec<f64>]) -> Result<(Vec<f64>, Tape)> {
        match self {
            ComposerParams::Linear(p) => linear_forward(code_vectors, p),
            ComposerParams::Lstm(p) => lstm_forward(code_vectors, p),
        }
    }

    /// Gradients of `upstream · output` with respect to the code vectors and
    /// every parameter.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<CompositionGrads> {
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient of length {}, output width is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        match (self, tape) {
            (ComposerParams::Linear(p), Tape::Linear { sum, dims }) => {
                Ok(linear_backward(p, sum, *dims, upstream))
            }
            (ComposerParams::Lstm(p), Tape::Lstm { steps, h_sum }) => {
                Ok(lstm_backward(p, steps, h_sum, upstream))
            }
            _ => Err(Error::InvalidArgument(format!(
                "tape from a different composer variant than {}",
                self.variant()
            ))),
        }
    }
}

/// Intermediates recorded by a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Tape {
    Linear { sum: Vec<f64>, dims: usize },
    Lstm { steps: Vec<LstmStep>, h_sum: Vec<f64> },
}

/// Gradients from [`ComposerParams::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct CompositionGrads {
    /// One gradient per code vector.
    pub inputs: Vec<Vec<f64>>,
    /// Same layout as the parameters.
    pub params: ComposerParams,
}

fn check_inputs(code_vectors: &[Vec<f64>], width: usize) -> Result<()> {
    if code_vectors.is_empty() {
        return Err(Error::InvalidArgument("empty code vector sequence".into()));
    }
    if let Some(j) = code_vectors.iter().position(|x| x.len() != width) {
        return Err(Error::ShapeMismatch(format!(
            "code vector {j} has width {}, composer expects {width}",
            code_vectors[j].len()
        )));
    }
    Ok(())
}

fn linear_forward(code_vectors: &[Vec<f64>], p: &LinearComposerParams) -> Result<(Vec<f64>, Tape)> {
    check_inputs(code_vectors, p.h.rows())?;
    let mut sum = vec![0.0; p.h.rows()];
    for x in code_vectors {
        for (s, v) in sum.iter_mut().zip(x) {
            *s += v;
        }
    }
    let out = p.h.left_mul(&sum);
    Ok((
        out,
        Tape::Linear {
            sum,
            dims: code_vectors.len(),
        },
    ))
}

fn linear_backward(p: &LinearComposerParams, sum: &[f64], dims: usize, upstream: &[f64]) -> CompositionGrads {
    let mut h = Matrix::zeros(p.h.rows(), p.h.cols());
    h.add_outer(sum, upstream, 1.0);
    let dx = p.h.mul_vec(upstream);
    CompositionGrads {
        inputs: vec![dx; dims],
        params: ComposerParams::Linear(LinearComposerParams { h }),
    }
}

/// `v = (Σⱼ xⱼ)ᵀ H`.
pub fn compose_linear(code_vectors: &[Vec<f64>], params: &LinearComposerParams) -> Result<Vec<f64>> {
    linear_forward(code_vectors, params).map(|(out, _)| out)
}

/// Activations of one recurrent step.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStep {
    pub h_prev: Vec<f64>,
    pub m_prev: Vec<f64>,
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    /// `tanh(x + U_m h_prev + b_m)`.
    pub candidate: Vec<f64>,
    pub m: Vec<f64>,
    pub tanh_m: Vec<f64>,
    pub h: Vec<f64>,
}

/// One cell update:
///
/// ```text
/// f = σ(x + U_f h_prev + b_f)
/// i = σ(x + U_i h_prev + b_i)
/// o = σ(x + U_t h_prev + b_t)
/// m = f ∘ m_prev + i ∘ tanh(x + U_m h_prev + b_m)
/// h = o ∘ tanh(m)
/// ```
pub fn lstm_step(x: &[f64], h_prev: &[f64], m_prev: &[f64], params: &LstmComposerParams) -> Result<LstmStep> {
    params.check()?;
    let w = params.width();
    for (name, v) in [("x", x), ("h_prev", h_prev), ("m_prev", m_prev)] {
        if v.len() != w {
            return Err(Error::ShapeMismatch(format!("{name} has width {}, expected {w}", v.len())));
        }
    }
    let pre = |u: &Matrix, b: &[f64]| -> Vec<f64> {
        let uh = u.mul_vec(h_prev);
        (0..w).map(|a| x[a] + uh[a] + b[a]).collect()
    };
    let forget: Vec<f64> = pre(&params.u_f, &params.b_f).into_iter().map(sigmoid).collect();
    let input: Vec<f64> = pre(&params.u_i, &params.b_i).into_iter().map(sigmoid).collect();
    let output: Vec<f64> = pre(&params.u_t, &params.b_t).into_iter().map(sigmoid).collect();
    let candidate: Vec<f64> = pre(&params.u_m, &params.b_m).into_iter().map(f64::tanh).collect();
    let m: Vec<f64> = (0..w)
        .map(|a| forget[a] * m_prev[a] + input[a] * candidate[a])
        .collect();
    let tanh_m: Vec<f64> = m.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..w).map(|a| output[a] * tanh_m[a]).collect();

    debug_assert!(forget
        .iter()
        .chain(&input)
        .chain(&output)
        .all(|g| (0.0..=1.0).contains(g)));
    debug_assert!(candidate.iter().chain(&tanh_m).all(|t| (-1.0..=1.0).contains(t)));

    Ok(LstmStep {
        h_prev: h_prev.to_vec(),
        m_prev: m_prev.to_vec(),
        forget,
        input,
        output,
        candidate,
        m,
        tanh_m,
        h,
    })
}

fn lstm_forward(code_vectors: &[Vec<f64>], p: &LstmComposerParams) -> Result<(Vec<f64>, Tape)> {
    p.check()?;
    let w = p.width();
    check_inputs(code_vectors, w)?;
    let mut h = vec![0.0; w];
    let mut m = vec![0.0; w];
    let mut h_sum = vec![0.0; w];
    let mut steps = Vec::with_capacity(code_vectors.len());
    for x in code_vectors {
        let step = lstm_step(x, &h, &m, p)?;
        for (s, v) in h_sum.iter_mut().zip(&step.h) {
            *s += v;
        }
        h.clone_from(&step.h);
        m.clone_from(&step.m);
        steps.push(step);
    }
    let out = p.h.left_mul(&h_sum);
    Ok((out, Tape::Lstm { steps, h_sum }))
}

/// Backpropagation through the `D` steps.
fn lstm_backward(p: &LstmComposerParams, steps: &[LstmStep], h_sum: &[f64], upstream: &[f64]) -> CompositionGrads {
    let w = p.width();
    let mut g = LstmComposerParams::zeros(w, p.h.cols());
    g.h.add_outer(h_sum, upstream, 1.0);
    // Every h_j feeds the sum, so each receives H · upstream directly.
    let dh_out = p.h.mul_vec(upstream);

    let mut inputs = vec![Vec::new(); steps.len()];
    let mut dh_next = vec![0.0; w];
    let mut dm_next = vec![0.0; w];
    for (j, s) in steps.iter().enumerate().rev() {
        let dh: Vec<f64> = (0..w).map(|a| dh_out[a] + dh_next[a]).collect();
        let dm: Vec<f64> = (0..w)
            .map(|a| dm_next[a] + dh[a] * s.output[a] * (1.0 - s.tanh_m[a] * s.tanh_m[a]))
            .collect();
        let dz_t: Vec<f64> = (0..w)
            .map(|a| dh[a] * s.tanh_m[a] * s.output[a] * (1.0 - s.output[a]))
            .collect();
        let dz_f: Vec<f64> = (0..w)
            .map(|a| dm[a] * s.m_prev[a] * s.forget[a] * (1.0 - s.forget[a]))
            .collect();
        let dz_i: Vec<f64> = (0..w)
            .map(|a| dm[a] * s.candidate[a] * s.input[a] * (1.0 - s.input[a]))
            .collect();
        let dz_m: Vec<f64> = (0..w)
            .map(|a| dm[a] * s.input[a] * (1.0 - s.candidate[a] * s.candidate[a]))
            .collect();

        inputs[j] = (0..w).map(|a| dz_f[a] + dz_i[a] + dz_t[a] + dz_m[a]).collect();

        for (gu, gb, dz) in [
            (&mut g.u_f, &mut g.b_f, &dz_f),
            (&mut g.u_i, &mut g.b_i, &dz_i),
            (&mut g.u_t, &mut g.b_t, &dz_t),
            (&mut g.u_m, &mut g.b_m, &dz_m),
        ] {
            gu.add_outer(dz, &s.h_prev, 1.0);
            for (b, d) in gb.iter_mut().zip(dz.iter()) {
                *b += d;
            }
        }

        let mut dh_prev = p.u_f.transpose().mul_vec(&dz_f);
        for (u, dz) in [(&p.u_i, &dz_i), (&p.u_t, &dz_t), (&p.u_m, &dz_m)] {
            for (acc, v) in dh_prev.iter_mut().zip(u.transpose().mul_vec(dz)) {
                *acc += v;
            }
        }
        dh_next = dh_prev;
        dm_next = (0..w).map(|a| dm[a] * s.forget[a]).collect();
    }
    CompositionGrads {
        inputs,
        params: ComposerParams::Lstm(g),
    }
}

/// `v = (Σⱼ hⱼ)ᵀ H` with `h₀ = m₀ = 0`.
pub fn compose_lstm(code_vectors: &[Vec<f64>], params: &LstmComposerParams) -> Result<Vec<f64>> {
    lstm_forward(code_vectors, params).map(|(out, _)| out)
}

/// Code tables plus composer: everything needed to rebuild embeddings from codes.
#[derive(Clone, Debug, PartialEq)]
pub struct KdModel {
    pub tables: CodeEmbeddingTables,
    pub composer: ComposerParams,
}

impl KdModel {
    pub fn new(tables: CodeEmbeddingTables, composer: ComposerParams) -> Result<Self> {
        if tables.width() != composer.input_width() {
            return Err(Error::ShapeMismatch(format!(
                "code tables have width {}, composer expects {}",
                tables.width(),
                composer.input_width()
            )));
        }
        Ok(KdModel { tables, composer })
    }

    /// Fresh parameters drawn from `rng`: tables first, then the composer.
    pub fn random(
        dims: usize,
        k: usize,
        width: usize,
        out_dim: usize,
        variant: ComposerVariant,
        rng: &mut Rng,
    ) -> Self {
        let tables = CodeEmbeddingTables::random(dims, k, width, rng);
        let composer = ComposerParams::random(variant, width, out_dim, rng);
        KdModel { tables, composer }
    }

    pub fn output_dim(&self) -> usize {
        self.composer.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.tables.param_count() + self.composer.param_count()
    }

    pub fn is_finite(&self) -> bool {
        self.tables.tables().iter().all(Matrix::is_finite) && self.composer.is_finite()
    }

    /// Embedding of a hard code.
    pub fn embed(&self, code: &[usize]) -> Result<Vec<f64>> {
        if code.len() != self.tables.dims() {
            return Err(Error::ShapeMismatch(format!(
                "code of length {}, model has {} dimensions",
                code.len(),
                self.tables.dims()
            )));
        }
        if let Some(&c) = code.iter().find(|&&c| c >= self.tables.k()) {
            return Err(Error::InvalidArgument(format!(
                "code component {c} >= K = {}",
                self.tables.k()
            )));
        }
        let xs = self.tables.lookup(code);
        self.composer.forward(&xs).map(|(out, _)| out)
    }

    /// Embeddings of every symbol in `codebook`, one row per symbol.
    pub fn reconstruct(&self, codebook: &crate::codec::CodeBook) -> Result<Matrix> {
        let mut out = Matrix::zeros(codebook.len(), self.output_dim());
        for i in 0..codebook.len() {
            let v = self.embed(codebook.code(i))?;
            out.row_mut(i).copy_from_slice(&v);
        }
        Ok(out)
    }
}
