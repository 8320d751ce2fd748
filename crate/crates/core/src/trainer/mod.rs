//! Surrogate training of the combinator against clean log-Mel targets,
//! gradient verification and frontend comparison.

mod adam;
mod eval;
mod gradcheck;
mod loss;
mod train;

pub use adam::Adam;
pub use eval::{
    evaluate, log_mel_distortion_db, EvalOptions, EvalRow, EvalTable, Frontend, PositionSummary, SkippedEntry,
};
pub use gradcheck::{
    grad_check, grad_check_coordinates, relative_error, CoordinateCheck, GradCheckReport, ProbeSpec,
};
pub use loss::{surrogate_loss, LossKind};
pub use train::{
    dataset_loss, example_loss, example_loss_and_grad, is_validation, prepare_example, train, train_examples,
    EpochRecord, TrainConfig, TrainReport, TrainingExample,
};
