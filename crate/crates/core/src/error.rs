use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh file, line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    #[error("degenerate triangle (signed area {area:e})")]
    DegenerateTriangle { area: f64 },

    #[error("accelerometer footprint captures no triangle centroid; refine the mesh")]
    EmptyAccelerometer,

    #[error("test point ({0}, {1}) lies outside the mesh")]
    ProbeOutside(f64, f64),

    #[error("invalid material parameters: {0}")]
    InvalidMaterial(String),

    #[error("infeasible parameter vector: {0}")]
    Infeasible(String),

    #[error("singular system: pivot {pivot} has magnitude {magnitude:e} (condition estimate {condition:e})")]
    Singular {
        pivot: usize,
        magnitude: f64,
        condition: f64,
    },

    #[error("inaccurate solve: relative residual {residual:e} after refinement")]
    Inaccurate { residual: f64 },

    #[error("at {freq_hz} Hz: {source}")]
    AtFrequency {
        freq_hz: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("eigensolver did not converge: {0}")]
    EigenNoConvergence(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_frequency(self, freq_hz: f64) -> Self {
        Error::AtFrequency {
            freq_hz,
            source: Box::new(self),
        }
    }
}
