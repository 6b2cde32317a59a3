use std::fmt;

/// Pipeline stage that produced an error, used to tag failures from `reconstruct`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Mean,
    LowRank,
    Correction,
    Tracking,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Mean => "mean",
            Stage::LowRank => "low-rank",
            Stage::Correction => "modeling-error correction",
            Stage::Tracking => "tracking",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is rank deficient ({0}); the iterate has degenerated")]
    RankDeficient(String),

    #[error("frame {frame}: A_k U is rank deficient (m_total = {m_total}, rank = {rank}); more measurements per frame are needed")]
    FrameRankDeficient { frame: usize, m_total: usize, rank: usize },

    #[error("basis is not orthonormal (|U^H U - I|_F = {0:e})")]
    NotOrthonormal(f64),

    #[error("rank cutoff min(n, q, mc*min_k m_k)/10 = {value} is below 1; use more measurements per frame or a longer sequence")]
    RankCutoff { value: f64 },

    #[error("{0}")]
    Generator(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
