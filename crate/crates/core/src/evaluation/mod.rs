//! Metrics and experiment drivers: classification and regression scores,
//! reconstruction error against latent size, and classifiers trained on
//! generated data.

mod experiments;
mod metrics;

pub use experiments::{
    curve_checkpoint_name, curve_from_checkpoints, evaluate_classifier, evaluate_regressor, fit,
    generate_labeled, mean_reconstruction_error, predict_classes, predict_values, recon_curve_csv,
    reconstruction_curve, regression_targets, synth_curve_csv, synth_then_classify, CurvePoint,
    CurveSetup, RegressionReport, Scenario, Splits, SynthPoint, SynthSetup,
};
pub use metrics::{classify_metrics, metrics_csv, regression_mae, ClassificationReport};
