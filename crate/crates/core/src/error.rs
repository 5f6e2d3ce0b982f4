use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Catalog dimensions violate `n ≥ 1` per level or a total size ≥ 2.
    InvalidShape { n_a: u32, n_b: u32, n_c: u32 },
    /// An ID component falls outside the catalog shape.
    OutOfBounds { a: u32, b: u32, c: u32 },
    /// A group target is empty, so no anchor can be built.
    EmptyTarget,
    /// Boundary selection was asked for on a group without any positive.
    NoPositive,
    /// Group or batch dimensions disagree.
    LengthMismatch { expected: usize, found: usize },
    /// Two policies with different shapes or prompt counts were combined.
    PolicyMismatch,
    PromptOutOfRange { prompt_id: usize, num_prompts: usize },
    InvalidConfig(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidShape { n_a, n_b, n_c } => {
                write!(f, "invalid catalog shape ({n_a},{n_b},{n_c})")
            }
            Error::OutOfBounds { a, b, c } => write!(f, "semantic id ({a},{b},{c}) out of bounds"),
            Error::EmptyTarget => f.write_str("target id set is empty"),
            Error::NoPositive => f.write_str("group has no positive response; repair it first"),
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::PolicyMismatch => f.write_str("policies have different shapes"),
            Error::PromptOutOfRange { prompt_id, num_prompts } => {
                write!(f, "prompt {prompt_id} out of range (dataset has {num_prompts})")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
