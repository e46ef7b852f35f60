//! Training, evaluation, the historical-average baseline and forecasting.

mod adam;
mod baseline;
mod data;
mod fit;
mod forecast;

pub use adam::Adam;
pub use baseline::{historical_average, historical_average_report, window_mean};
pub use data::{
    build_hierarchy, descriptor_embedding, pretrain_rs_encoder, view_descriptors, FeatureScaler, PreparedData,
};
pub use fit::{
    epoch_order, evaluate, load_model, mean_loss, predict_finest, save_model, train, EpochLog, TrainState,
    BEST_CHECKPOINT, STATE_CHECKPOINT,
};
pub use forecast::{forecast, write_heatmap, Forecast};
