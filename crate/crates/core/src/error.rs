use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("layer {layer}: expected input width {expected}, got {got}")]
    LayerShape {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("division by (near) zero in {op} at flat index {index}")]
    DivisionByZero { op: &'static str, index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("scaling factor {value} at layer {layer}, neuron {neuron} is outside the {group} group")]
    OutOfGroup {
        layer: usize,
        neuron: usize,
        value: f64,
        group: &'static str,
    },

    #[error("zero weight(s) cannot be inverted for backward edges: {0:?}")]
    ZeroWeights(Vec<(usize, usize)>),

    #[error("kernel {got:?} exceeds declared maximum {max:?}")]
    KernelTooLarge { got: (usize, usize), max: (usize, usize) },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("at least two observations are required, got {0}")]
    TooFewObservations(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
