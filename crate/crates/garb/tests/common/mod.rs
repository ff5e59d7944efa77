#![allow(dead_code)]

use std::path::Path;

use garb::config::{ClassifierConfig, CodecConfig, DataConfig, ModelConfig, RunConfig};
use garb::dataset::{generate_dataset, DatasetManifest};

/// 32-pixel configuration small enough to train in seconds.
pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.image_size = 32;
    cfg.codec = CodecConfig { hidden_channels: vec![4, 8, 8], epochs: 1, batch_size: 8, ..Default::default() };
    cfg.classifier = ClassifierConfig { channels: vec![4, 8, 8], epochs: 1, ..Default::default() };
    cfg.model = ModelConfig {
        token_dim: 16,
        tokens_out: 4,
        cond_dim: 16,
        embed_dim: 16,
        base_channels: 8,
        n_heads: 2,
        head_dim: 4,
        norm_groups: 2,
        ..Default::default()
    };
    cfg.schedule.timesteps = 50;
    cfg.train.total_steps = 4;
    cfg.train.warmup_steps = 1;
    cfg.train.batch_size = 4;
    cfg.train.checkpoint_every = 2;
    cfg.sampler.steps = 3;
    cfg.metrics.kid_block_size = 4;
    cfg
}

pub fn make_data(root: &Path, n_train: usize, n_test: usize) -> (DatasetManifest, DatasetManifest) {
    generate_dataset(&DataConfig { root: root.to_path_buf(), image_size: 32, n_train, n_test, seed: 0 }).unwrap()
}
