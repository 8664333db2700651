//! Selection Gaussian random fields: priors, Bayesian inversion under
//! Gauss-linear likelihoods, simulation, prediction, and maximum likelihood
//! parameter estimation, with a seismic inversion application.

pub mod corr;
pub mod error;
pub mod gauss;
pub mod grid;
pub mod inference;
pub mod inversion;
pub mod model;
pub mod mvnprob;
pub mod normal;
pub mod optim;
pub mod seismic;
pub mod selset;
pub mod tmvn;

pub use corr::{build_correlation_matrix, CorrelationSpec};
pub use error::{Error, Result};
pub use gauss::{chol_with_jitter, condition_gaussian, log_gaussian_pdf, GaussianParams};
pub use grid::GridSpec;
pub use inference::{
    fit_mle, log_likelihood, replicate_study, write_replicates_csv, CorrFamily, FitResult,
    InferenceConfig, ParamBounds, ReplicateRow, Theta,
};
pub use inversion::{
    posterior_model, predict, simulate_posterior, write_predictions_csv, GaussLinearLikelihood,
    MapOptions, PosteriorModel, PredictOptions, Prediction,
};
pub use model::{
    expand_stationary, log_selection_density, marginal_density, simulate_prior, DensityConfig,
    FieldSimulation, SelectionGaussianModel, StationaryPriorSpec,
};
pub use mvnprob::{
    choose_mean_shift, estimate_mvn_prob, estimate_mvn_prob_with_stream, FrozenStream, MeanShift,
    PreparedEstimator, ProbEstimate,
};
pub use seismic::{
    avo_weights, build_seismic_noise_cov, build_seismic_operator, expand_trivariate,
    run_case_study, CaseStudyConfig, CaseStudyReport, LikelihoodNoiseSpec, SeismicForwardSpec,
    TrivariatePriorSpec, Wavelet,
};
pub use selset::{Interval, IntervalUnion, SelectionSet};
pub use tmvn::{sample_tmvn, sequential_block_proposal, Chain, SamplerConfig};
