//! Linear SVM classification and the method-comparison evaluation harness.

mod eval;
mod report;
mod svm;

pub use eval::{evaluate_row, score_row, stratified_split, Split, TaggedFeature};
pub use report::{accuracy_percent, EvalReport, EvalRow, TABLE_ROWS};
pub use svm::{svm_objective, train_svm, Prediction, Scaler, SvmConfig, SvmFit, SvmModel};
