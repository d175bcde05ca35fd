//! Quantification learning with a generalized Bayes posterior over class
//! prevalence and classifier confusion matrices.

pub mod commands;
pub mod composition;
pub mod error;
pub mod inference;
pub mod io;
pub mod loss;
pub mod quantifiers;
pub mod reference;
pub mod rng;
pub mod sampler;
pub mod simulation;

pub use composition::{
    kl_divergence, mixture_predict, plurality_class, Composition, ConfusionMatrix, Dataset, LabeledInstance,
    SupportMask,
};
pub use error::{Error, Result};
pub use inference::{
    ccnaa, delta_interval, gelman_rubin, posterior_mean, summarize_posterior, DeltaMethod, DeltaTarget,
    IntervalEstimate, IntervalMethod, PosteriorSummary, Rhat,
};
pub use loss::{
    grad_loss, hessian_loss, loss_total, minimize_loss, omega_hat, LossModel, Minimizer, ParamLayout,
    SandwichMatrices, Theta,
};
pub use quantifiers::{
    baseline_estimate, fixed_confusion_posterior, shrinkage_prior, trained_confusion, BaselineEstimate,
    BaselineMethod, ClassifierPrior, PriorSpec,
};
pub use reference::{mh_reference_sampler, ReferenceTarget};
pub use sampler::{
    conjugate_sampler, round_predictions, run_sampler, Draw, GibbsSampler, GibbsState, LatentAllocation, Parameter,
    PosteriorSamples, PseudoCounts, SamplerConfig, SamplerKind,
};
