//! Evaluation and diagnostics: edit-distance error rates, calibration error,
//! prediction rejection curves and the prediction rejection ratio.

mod calibration;
mod errors;
mod rejection;
mod report;

pub use calibration::{ece, CalibrationBin, CalibrationReport};
pub use errors::{cer, evaluate, levenshtein, wer, EvalReport};
pub use rejection::{
    prr, prr_of_scores, rejection_curve, rejection_order, trapezoid, PrrOutcome, RejectionCurve, RejectionOrder,
};
pub use report::{rejection_svg, write_calibration_csv, write_csv, write_rejection_csv};
