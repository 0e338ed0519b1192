"""Sieve analysis for deep-sequencing vaccine-trial data.

Latent within-host mismatch proportions are classified by empirical Bayes
deconvolution, and the resulting type probabilities weight a competing-risks
Cox model for type-specific vaccine efficacy.
"""
from .classify import ClassificationTable, PosteriorQ, bin_probs, classify_dataset, posterior
from .coxengine import CompetingFit, CoxOptions, fit_competing, fit_type, weighted_score
from .datamodel import (Dataset, SubjectRecord, ThresholdSpec, aggregate_sequences, read_csv,
                        validate_dataset, write_csv)
from .deconvolve import (BetaPrior, ConditioningSpec, PriorOptions, SplinePrior, SupportGrid,
                         betabinom_logpmf, fit_beta_prior, fit_priors, fit_spline_prior,
                         spline_marginal_loglik)
from .design import fisher_exact_p, lod, pod_detect, screen_marks, select_q0
from .inference import analyze, bootstrap, sieve_test, ve_intervals, wald_joint_test
from .pipeline import PipelineConfig, run_pipeline
from .simulator import SimConfig, gen_replicate, run_study, truncated_beta_sample

__version__ = "0.1.0"
