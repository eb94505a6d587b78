use thiserror::Error;

/// What went wrong while tokenizing or assembling a SMILES string.
///
/// Each variant is a distinct failure mode so tests (and callers) can tell
/// a bad ring bond from a bad valence without string matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmilesErrorKind {
    EmptyInput,
    UnknownToken(String),
    UnclosedBracket,
    BadBracketAtom(String),
    UnmatchedOpenParen,
    UnmatchedCloseParen,
    UnclosedRingBond(u16),
    /// Ring closure where open and close disagree on bond order.
    RingBondOrderClash(u16),
    SelfRingBond(u16),
    DuplicateRingBond(u16),
    BondWithoutAtom,
    ValenceOverflow { symbol: String, total_order: u8 },
}

impl std::fmt::Display for SmilesErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::EmptyInput => write!(f, "empty SMILES"),
            Self::UnknownToken(t) => write!(f, "unknown token {t:?}"),
            Self::UnclosedBracket => write!(f, "bracket atom not closed with ']'"),
            Self::BadBracketAtom(t) => write!(f, "malformed bracket atom {t:?}"),
            Self::UnmatchedOpenParen => write!(f, "'(' never closed"),
            Self::UnmatchedCloseParen => write!(f, "')' without matching '('"),
            Self::UnclosedRingBond(n) => write!(f, "ring bond {n} never closed"),
            Self::RingBondOrderClash(n) => write!(f, "ring bond {n} opened and closed with different bond orders"),
            Self::SelfRingBond(n) => write!(f, "ring bond {n} closes on its own atom"),
            Self::DuplicateRingBond(n) => write!(f, "ring bond {n} duplicates an existing bond"),
            Self::BondWithoutAtom => write!(f, "bond symbol with no following atom"),
            Self::ValenceOverflow { symbol, total_order } => {
                write!(f, "atom {symbol} has bond order total {total_order} above any allowed valence")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {detail}")]
    Dim { op: &'static str, detail: String },

    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },

    #[error("SMILES parse error at byte {offset}: {kind}")]
    Smiles { offset: usize, kind: SmilesErrorKind },

    #[error("dataset: {0}")]
    Data(String),

    #[error("protein {id}: {detail}")]
    Protein { id: String, detail: String },

    #[error("metric {name} undefined: {detail}")]
    Metric { name: &'static str, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dim { op, detail: detail.into() }
    }

    pub fn smiles(offset: usize, kind: SmilesErrorKind) -> Self {
        Error::Smiles { offset, kind }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
