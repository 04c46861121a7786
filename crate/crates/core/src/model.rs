//! The scorer network: two fully connected modules, each paired with a
//! normalcy suppression module whose per-column softmax probabilities
//! multiplicatively gate the FC output, followed by a sigmoid head that
//! emits one anomaly score per segment.

use rand_chacha::ChaCha8Rng;

use crate::dataset::{Batch, VideoFeatures};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, symmetric_uniform, STREAM_INIT};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Matrix;

/// Layer widths; d is the input feature dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d: usize,
    pub z1: usize,
    pub z2: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d: 2048,
            z1: 512,
            z2: 32,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.z1 == 0 || self.z2 == 0 {
            return Err(Error::Config(format!(
                "model dims must be positive, got d={} z1={} z2={}",
                self.d, self.z1, self.z2
            )));
        }
        Ok(())
    }

    /// Tensor shapes in [`PARAM_NAMES`] order.
    pub fn field_shapes(&self) -> [(usize, usize); 10] {
        [
            (self.d, self.z1),
            (1, self.z1),
            (self.d, self.z1),
            (1, self.z1),
            (self.z1, self.z2),
            (1, self.z2),
            (self.z1, self.z2),
            (1, self.z2),
            (self.z2, 1),
            (1, 1),
        ]
    }
}

/// Names of the learnable tensors, in serialization order.
pub const PARAM_NAMES: [&str; 10] = [
    "w1", "b1", "wn1", "bn1", "w2", "b2", "wn2", "bn2", "w3", "b3",
];

/// All learnable weights: module FC layers (w1, w2), their suppression FC
/// layers (wn1, wn2), and the scoring head (w3). Biases are 1-row matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClawsParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub wn1: Matrix,
    pub bn1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub wn2: Matrix,
    pub bn2: Matrix,
    pub w3: Matrix,
    pub b3: Matrix,
}

impl ClawsParams {
    /// Fan-balanced uniform initialization, deterministic in the seed;
    /// biases start at zero.
    pub fn init(seed: u64, dims: ModelDims) -> Self {
        let weight = |idx: u64, rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = derived_rng(seed, STREAM_INIT, idx);
            let data = (0..rows * cols)
                .map(|_| symmetric_uniform(&mut rng, limit))
                .collect();
            Matrix::from_raw(rows, cols, data)
        };
        Self {
            w1: weight(0, dims.d, dims.z1),
            b1: Matrix::zeros(1, dims.z1),
            wn1: weight(1, dims.d, dims.z1),
            bn1: Matrix::zeros(1, dims.z1),
            w2: weight(2, dims.z1, dims.z2),
            b2: Matrix::zeros(1, dims.z2),
            wn2: weight(3, dims.z1, dims.z2),
            bn2: Matrix::zeros(1, dims.z2),
            w3: weight(4, dims.z2, 1),
            b3: Matrix::zeros(1, 1),
        }
    }

    /// All-zero parameters (every score becomes sigmoid(0) = 0.5).
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            w1: Matrix::zeros(dims.d, dims.z1),
            b1: Matrix::zeros(1, dims.z1),
            wn1: Matrix::zeros(dims.d, dims.z1),
            bn1: Matrix::zeros(1, dims.z1),
            w2: Matrix::zeros(dims.z1, dims.z2),
            b2: Matrix::zeros(1, dims.z2),
            wn2: Matrix::zeros(dims.z1, dims.z2),
            bn2: Matrix::zeros(1, dims.z2),
            w3: Matrix::zeros(dims.z2, 1),
            b3: Matrix::zeros(1, 1),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d: self.w1.rows(),
            z1: self.w1.cols(),
            z2: self.w2.cols(),
        }
    }

    /// Rebuild from tensors in [`PARAM_NAMES`] order, validating shapes.
    pub fn from_fields(dims: ModelDims, mut fields: Vec<Matrix>) -> Result<Self> {
        if fields.len() != 10 {
            return Err(Error::Usage(format!(
                "expected 10 parameter tensors, got {}",
                fields.len()
            )));
        }
        for (m, (expected, name)) in fields
            .iter()
            .zip(dims.field_shapes().iter().zip(PARAM_NAMES))
        {
            if m.shape() != *expected {
                return Err(Error::Dimension {
                    op: "ClawsParams::from_fields",
                    detail: format!("{name} has shape {:?}, expected {:?}", m.shape(), expected),
                });
            }
        }
        let b3 = fields.pop().unwrap();
        let w3 = fields.pop().unwrap();
        let bn2 = fields.pop().unwrap();
        let wn2 = fields.pop().unwrap();
        let b2 = fields.pop().unwrap();
        let w2 = fields.pop().unwrap();
        let bn1 = fields.pop().unwrap();
        let wn1 = fields.pop().unwrap();
        let b1 = fields.pop().unwrap();
        let w1 = fields.pop().unwrap();
        Ok(Self {
            w1,
            b1,
            wn1,
            bn1,
            w2,
            b2,
            wn2,
            bn2,
            w3,
            b3,
        })
    }

    /// Tensors in [`PARAM_NAMES`] order.
    pub fn fields(&self) -> [&Matrix; 10] {
        [
            &self.w1, &self.b1, &self.wn1, &self.bn1, &self.w2, &self.b2, &self.wn2, &self.bn2,
            &self.w3, &self.b3,
        ]
    }

    pub fn fields_mut(&mut self) -> [&mut Matrix; 10] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.wn1,
            &mut self.bn1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wn2,
            &mut self.bn2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

/// Architecture toggles and dropout behavior for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub use_nsm1: bool,
    pub use_nsm2: bool,
    pub dropout_rate: f64,
    pub mode: Mode,
    /// Gate the suppression probabilities against the activated output
    /// instead of the raw FC output. Off by default.
    pub gate_after_relu: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            use_nsm1: true,
            use_nsm2: true,
            dropout_rate: 0.6,
            mode: Mode::Train,
            gate_after_relu: false,
        }
    }
}

impl ModelConfig {
    pub fn eval(mut self) -> Self {
        self.mode = Mode::Eval;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Tape handles for the registered parameters, in [`PARAM_NAMES`] order.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars(pub [Var; 10]);

impl ParamVars {
    fn register(tape: &mut Tape, params: &ClawsParams) -> Self {
        let fields = params.fields();
        Self(std::array::from_fn(|i| tape.param(fields[i].clone())))
    }
}

/// Cached intermediates of one forward pass: the suppression probability
/// matrices, the clustering representation, the scores, and the tape that
/// produced them (for backward and for attaching loss nodes).
pub struct ForwardTrace {
    pub tape: Tape,
    pub params: ParamVars,
    /// Scores node, b x 1.
    pub scores_var: Var,
    /// Module-1 gated, ReLU-activated representation node (pre-dropout).
    pub r1_var: Var,
    pub p1: Matrix,
    pub p2: Matrix,
    pub r1: Matrix,
    pub scores: Vec<f64>,
}

/// Forward over a training batch; requires at least 2 rows.
pub fn forward(
    batch: &Batch,
    params: &ClawsParams,
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardTrace> {
    if batch.len() < 2 {
        return Err(Error::Usage(format!(
            "training forward needs at least 2 segments, got {}",
            batch.len()
        )));
    }
    forward_features(&batch.features, params, cfg, rng)
}

/// Forward over raw segment rows; evaluation windows may have a single row.
pub fn forward_features(
    features: &Matrix,
    params: &ClawsParams,
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardTrace> {
    cfg.validate()?;
    let dims = params.dims();
    if features.cols() != dims.d {
        return Err(Error::Dimension {
            op: "forward",
            detail: format!("batch width {} vs model d {}", features.cols(), dims.d),
        });
    }
    let b = features.rows();

    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let pv = ParamVars::register(&mut tape, params);
    let [w1, b1, wn1, bn1, w2, b2, wn2, bn2, w3, b3] = pv.0;

    // Module 1 with its suppression gate.
    let h1 = tape.affine(x, w1, b1)?;
    let p1 = gate_probabilities(&mut tape, x, wn1, bn1, cfg.use_nsm1, b, dims.z1)?;
    let (r1, a1) = gated_activation(&mut tape, h1, p1, cfg, rng)?;

    // Module 2, reading module 1's dropped-out activation.
    let h2 = tape.affine(a1, w2, b2)?;
    let p2 = gate_probabilities(&mut tape, a1, wn2, bn2, cfg.use_nsm2, b, dims.z2)?;
    let (_, a2) = gated_activation(&mut tape, h2, p2, cfg, rng)?;

    // Scoring head.
    let logits = tape.affine(a2, w3, b3)?;
    let scores_var = tape.sigmoid(logits);

    let scores = tape.value(scores_var).as_slice().to_vec();
    let trace = ForwardTrace {
        p1: tape.value(p1).clone(),
        p2: tape.value(p2).clone(),
        r1: tape.value(r1).clone(),
        scores,
        scores_var,
        r1_var: r1,
        params: pv,
        tape,
    };
    Ok(trace)
}

/// Suppression probabilities: per-column softmax of the paired FC layer,
/// or a constant all-ones matrix when the module is disabled.
fn gate_probabilities(
    tape: &mut Tape,
    input: Var,
    w: Var,
    b: Var,
    enabled: bool,
    rows: usize,
    cols: usize,
) -> Result<Var> {
    if enabled {
        let s = tape.affine(input, w, b)?;
        Ok(tape.column_softmax(s))
    } else {
        Ok(tape.constant(Matrix::filled(rows, cols, 1.0)))
    }
}

/// Gate, activate, drop out. Returns (representation node before dropout,
/// dropped-out activation). Default order multiplies the probabilities with
/// the raw FC output before the ReLU.
fn gated_activation(
    tape: &mut Tape,
    h: Var,
    p: Var,
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, Var)> {
    let repr = if cfg.gate_after_relu {
        let activated = tape.relu(h);
        tape.hadamard(p, activated)?
    } else {
        let gated = tape.hadamard(p, h)?;
        tape.relu(gated)
    };
    let dropped = tape.dropout(repr, cfg.dropout_rate, cfg.mode, rng)?;
    Ok((repr, dropped))
}

/// Module-1 representation of a whole video for clustering: eval-mode
/// forward over consecutive windows of `window` segments (tail windows of
/// any size >= 1), concatenated in temporal order. Deterministic.
pub fn intermediate_representation(
    video: &VideoFeatures,
    params: &ClawsParams,
    cfg: &ModelConfig,
    window: usize,
) -> Result<Matrix> {
    let dims = params.dims();
    if video.dim() != dims.d {
        return Err(Error::Dimension {
            op: "intermediate_representation",
            detail: format!("video dimension {} vs model d {}", video.dim(), dims.d),
        });
    }
    let m = video.num_segments();
    let mut out = Vec::with_capacity(m * dims.z1);
    let mut start = 0;
    while start < m {
        let len = window.min(m - start);
        let data: Vec<f64> = (start..start + len)
            .flat_map(|r| video.features.row(r).iter().copied())
            .collect();
        let features = Matrix::from_raw(len, dims.d, data);
        let r1 = module1_representation(&features, params, cfg)?;
        out.extend_from_slice(r1.as_slice());
        start += len;
    }
    Ok(Matrix::from_raw(m, dims.z1, out))
}

/// Module-1 forward only (no scoring head), eval mode, no dropout.
fn module1_representation(
    features: &Matrix,
    params: &ClawsParams,
    cfg: &ModelConfig,
) -> Result<Matrix> {
    let dims = params.dims();
    let b = features.rows();
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let w1 = tape.constant(params.w1.clone());
    let b1 = tape.constant(params.b1.clone());
    let wn1 = tape.constant(params.wn1.clone());
    let bn1 = tape.constant(params.bn1.clone());

    let h1 = tape.affine(x, w1, b1)?;
    let p1 = gate_probabilities(&mut tape, x, wn1, bn1, cfg.use_nsm1, b, dims.z1)?;
    let repr = if cfg.gate_after_relu {
        let activated = tape.relu(h1);
        tape.hadamard(p1, activated)?
    } else {
        let gated = tape.hadamard(p1, h1)?;
        tape.relu(gated)
    };
    Ok(tape.value(repr).clone())
}
