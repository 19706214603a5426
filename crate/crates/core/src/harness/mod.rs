//! Day simulation, reward, episodes, training and ablation runs.

pub mod episode;
pub mod metrics;
pub mod output;
pub mod simulate;
pub mod training;

pub use episode::{
    apply_update, AgentSettings, Episode, EpisodeError, EpisodePlan, Mode, RunRecord, Runner,
    StoreView, Variant,
};
pub use metrics::{reward, DayVoltages, DispatchSummary, RewardConfig, ViolatingHour};
pub use simulate::{simulate_day, simulate_day_detailed, Environment, SimulationError};
pub use training::{
    evaluate, forecast_seed, rule_bootstrap, run_ablation, run_training, split_days, test_forecast,
    AblationReport,
    AblationRow, AblationStores, CurvePoint, SeedRun, TrainingConfig, TrainingReport,
};
