//! Acoustic-model architectures: a feedforward network with memory blocks
//! and an LSTM with recurrent projection. Both provide forward evaluation,
//! exact reverse-mode gradients, seeded initialization, and a binary
//! checkpoint format.

mod checkpoint;
mod fsmn;
mod lstm;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use fsmn::fsmn_memory_block;
pub use lstm::lstm_forward;

use crate::numcore::{Matrix, RngStream};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("forward cache does not match this spec/gradient shape")]
    StaleCache,
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Fsmn,
    Lstm,
}

/// Architecture hyperparameters. Field meanings follow the memory-block
/// convention: `lookback_order`/`lookahead_order` count past/future taps,
/// `stride_back`/`stride_ahead` their frame spacing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub fsmn_blocks: usize,
    pub lookback_order: usize,
    pub lookahead_order: usize,
    pub stride_back: usize,
    pub stride_ahead: usize,
    pub lstm_layers: usize,
    pub lstm_proj_dim: usize,
}

impl NetworkSpec {
    /// Desk-scale memory-block network: 4 blocks of 64 units, look-back 5
    /// stride 2, look-ahead 1 stride 1.
    pub fn fsmn(input_dim: usize, output_dim: usize) -> NetworkSpec {
        NetworkSpec {
            architecture: Architecture::Fsmn,
            input_dim,
            hidden_dim: 64,
            output_dim,
            fsmn_blocks: 4,
            lookback_order: 5,
            lookahead_order: 1,
            stride_back: 2,
            stride_ahead: 1,
            lstm_layers: 2,
            lstm_proj_dim: 32,
        }
    }

    /// Desk-scale LSTM: 2 layers of 64 cells with a 32-unit projection.
    pub fn lstm(input_dim: usize, output_dim: usize) -> NetworkSpec {
        NetworkSpec {
            architecture: Architecture::Lstm,
            ..NetworkSpec::fsmn(input_dim, output_dim)
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let positive = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("fsmn_blocks", self.fsmn_blocks),
            ("lookback_order", self.lookback_order),
            ("stride_back", self.stride_back),
            ("stride_ahead", self.stride_ahead),
            ("lstm_layers", self.lstm_layers),
            ("lstm_proj_dim", self.lstm_proj_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(NetError::InvalidSpec(format!("{name} must be >= 1")));
            }
        }
        if self.output_dim < 2 {
            return Err(NetError::InvalidSpec("output_dim must be >= 2".into()));
        }
        Ok(())
    }

    /// Cheap fingerprint used to tie a `ForwardCache` back to its spec.
    fn token(&self) -> u64 {
        let fields = [
            match self.architecture {
                Architecture::Fsmn => 0usize,
                Architecture::Lstm => 1,
            },
            self.input_dim,
            self.hidden_dim,
            self.output_dim,
            self.fsmn_blocks,
            self.lookback_order,
            self.lookahead_order,
            self.stride_back,
            self.stride_ahead,
            self.lstm_layers,
            self.lstm_proj_dim,
        ];
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for f in fields {
            h ^= f as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
    /// Serialized with rank 1 in checkpoints (biases, per-tap coefficients
    /// are conceptually vectors even though stored as 1 x n matrices).
    pub vector: bool,
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
}

struct LayoutEntry {
    name: String,
    rows: usize,
    cols: usize,
    vector: bool,
    kind: ParamKind,
}

#[derive(Clone, Copy, PartialEq)]
enum ParamKind {
    Affine,
    Bias,
    MemoryCoeff,
    LstmBias,
}

fn layout(spec: &NetworkSpec) -> Vec<LayoutEntry> {
    let mut entries = Vec::new();
    let mut push = |name: String, rows: usize, cols: usize, vector: bool, kind: ParamKind| {
        entries.push(LayoutEntry {
            name,
            rows,
            cols,
            vector,
            kind,
        })
    };
    let (d, h, l) = (spec.input_dim, spec.hidden_dim, spec.output_dim);
    match spec.architecture {
        Architecture::Fsmn => {
            push("in.w".into(), d, h, false, ParamKind::Affine);
            push("in.b".into(), 1, h, true, ParamKind::Bias);
            for k in 0..spec.fsmn_blocks {
                push(
                    format!("block{k}.mem_a"),
                    spec.lookback_order,
                    h,
                    false,
                    ParamKind::MemoryCoeff,
                );
                push(
                    format!("block{k}.mem_b"),
                    spec.lookahead_order,
                    h,
                    false,
                    ParamKind::MemoryCoeff,
                );
                push(format!("block{k}.w"), h, h, false, ParamKind::Affine);
                push(format!("block{k}.b"), 1, h, true, ParamKind::Bias);
            }
            push("out.w".into(), h, l, false, ParamKind::Affine);
            push("out.b".into(), 1, l, true, ParamKind::Bias);
        }
        Architecture::Lstm => {
            let p = spec.lstm_proj_dim;
            for layer in 0..spec.lstm_layers {
                let in_dim = if layer == 0 { d } else { p };
                push(
                    format!("lstm{layer}.wx"),
                    in_dim,
                    4 * h,
                    false,
                    ParamKind::Affine,
                );
                push(format!("lstm{layer}.wh"), p, 4 * h, false, ParamKind::Affine);
                push(format!("lstm{layer}.b"), 1, 4 * h, true, ParamKind::LstmBias);
                push(format!("lstm{layer}.proj"), h, p, false, ParamKind::Affine);
            }
            push("out.w".into(), p, l, false, ParamKind::Affine);
            push("out.b".into(), 1, l, true, ParamKind::Bias);
        }
    }
    entries
}

impl ModelParams {
    /// All-zero parameters in the layout required by `spec`.
    pub fn zeros(spec: &NetworkSpec) -> ModelParams {
        let entries = layout(spec)
            .into_iter()
            .map(|e| ParamEntry {
                value: Matrix::zeros(e.rows, e.cols),
                name: e.name,
                vector: e.vector,
            })
            .collect();
        ModelParams { entries }
    }

    pub(crate) fn from_entries(entries: Vec<ParamEntry>) -> ModelParams {
        ModelParams { entries }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.value)
    }

    fn p(&self, name: &str) -> &Matrix {
        self.get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    fn p_mut(&mut self, name: &str) -> &mut Matrix {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.value)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.data().len()).sum()
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value.same_shape(&b.value))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }

    /// Concatenation of all tensors in entry order; inverse of `set_flat`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for e in &self.entries {
            out.extend_from_slice(e.value.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length");
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.value.data().len();
            e.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}

/// Seeded initialization: affine weights Glorot-uniform in
/// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`, biases zero,
/// memory-block coefficients zero (each block starts as an identity skip),
/// LSTM forget-gate bias 1.
pub fn init_params(spec: &NetworkSpec, rng: &mut RngStream) -> ModelParams {
    let mut params = ModelParams::zeros(spec);
    let plan = layout(spec);
    for (entry, le) in params.entries.iter_mut().zip(&plan) {
        match le.kind {
            ParamKind::Affine => {
                let bound = (6.0 / (le.rows + le.cols) as f64).sqrt();
                for v in entry.value.data_mut() {
                    *v = rng.uniform(-bound, bound);
                }
            }
            ParamKind::LstmBias => {
                let h = spec.hidden_dim;
                for v in &mut entry.value.data_mut()[h..2 * h] {
                    *v = 1.0;
                }
            }
            ParamKind::Bias | ParamKind::MemoryCoeff => {}
        }
    }
    params
}

/// Per-layer activations retained by `forward` for the matching `backward`.
pub struct ForwardCache {
    frames: usize,
    spec_token: u64,
    kind: CacheKind,
}

enum CacheKind {
    Fsmn(fsmn::FsmnCache),
    Lstm(lstm::LstmCache),
}

/// Runs the network over one utterance. Frame count is preserved; logits
/// are unnormalized.
pub fn forward(
    params: &ModelParams,
    spec: &NetworkSpec,
    features: &Matrix,
) -> Result<(Matrix, ForwardCache), NetError> {
    if features.cols() != spec.input_dim {
        return Err(NetError::DimensionMismatch {
            expected: format!("feature dim {}", spec.input_dim),
            actual: format!("{}", features.cols()),
        });
    }
    let frames = features.rows();
    let (logits, kind) = match spec.architecture {
        Architecture::Fsmn => {
            let (logits, cache) = fsmn::forward(params, spec, features)?;
            (logits, CacheKind::Fsmn(cache))
        }
        Architecture::Lstm => {
            let (logits, cache) = lstm::forward(params, spec, features)?;
            (logits, CacheKind::Lstm(cache))
        }
    };
    Ok((
        logits,
        ForwardCache {
            frames,
            spec_token: spec.token(),
            kind,
        },
    ))
}

/// Gradients of `sum_{t,l} dlogits[t,l] * logits[t,l]` with respect to every
/// parameter, in the same layout as `params`.
pub fn backward(
    params: &ModelParams,
    spec: &NetworkSpec,
    cache: &ForwardCache,
    dlogits: &Matrix,
) -> Result<ModelParams, NetError> {
    if cache.spec_token != spec.token()
        || dlogits.rows() != cache.frames
        || dlogits.cols() != spec.output_dim
    {
        return Err(NetError::StaleCache);
    }
    match (&cache.kind, spec.architecture) {
        (CacheKind::Fsmn(c), Architecture::Fsmn) => fsmn::backward(params, spec, c, dlogits),
        (CacheKind::Lstm(c), Architecture::Lstm) => lstm::backward(params, spec, c, dlogits),
        _ => Err(NetError::StaleCache),
    }
}

/// Column sums of `m` as a 1 x cols matrix (bias gradients).
pub(crate) fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, &v) in out.row_mut(0).iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}
