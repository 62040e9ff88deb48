use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid entropy parameters: {0}")]
    InvalidParams(String),

    #[error("invalid references: {0}")]
    InvalidRefs(String),

    #[error("stream {stream} is rank-deficient (singular value {value:.3e} below threshold {threshold:.3e})")]
    RankDeficient {
        stream: usize,
        value: f64,
        threshold: f64,
    },

    #[error("non-monotone push: t={t} does not follow t={last}")]
    OrderingError { t: u64, last: u64 },

    #[error("symbol {symbol} outside table support [{lo}, {hi}]")]
    SymbolOutOfRange { symbol: i32, lo: i32, hi: i32 },

    #[error("capacity exceeded: need {required} symbols, {available} available")]
    CapacityExceeded { required: usize, available: usize },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("decoding error: {0}")]
    Decoding(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
