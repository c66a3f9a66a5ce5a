//! Membership inference on aggregate location time-series.

mod auc;
mod game;
mod lr;
mod pca;

pub use auc::auc;
pub use game::{
    attack_target, build_samples, draw_rosters, materialize, run_mia, Split, write_results_csv, AttackResult, GameConfig,
    GameRosters, PriorSpec, Roster, SampleSet, TargetAttack,
};
pub use lr::{fit_lr, gradient, objective, predict_scores, sigmoid, LrModel, LrParams};
pub use pca::{fit_pca, pca_transform, PcaModel, Standardization};
