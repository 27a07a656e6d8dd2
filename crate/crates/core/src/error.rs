use alloc::string::String;

/// Errors raised by the modelling and processing chain.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("pixel index ({ix}, {iz}) outside {nx}x{nz} grid")]
    IndexOutOfRange { ix: usize, iz: usize, nx: usize, nz: usize },

    #[error("wavelength {0} nm outside the tabulated range")]
    WavelengthOutOfRange(f64),

    #[error("no entry for wavelength {0} nm")]
    MissingWavelength(f64),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("evaluation point lies within {0} cm of a dipole source")]
    Singularity(f64),

    #[error("fluence sum over fibers is not positive")]
    DegeneratePixel,

    #[error("no pixel above threshold at {wavelength} nm")]
    NoSignal { wavelength: f64 },

    #[error("calibration failed at {wavelength} nm: {reason}")]
    Calibration { wavelength: f64, reason: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Invalid { what, reason: reason.into() }
}
