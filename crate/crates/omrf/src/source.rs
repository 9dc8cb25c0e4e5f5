//! Bundled source dataset for the simulation pipeline.
//!
//! Ten four-category items, 3376 respondents, drawn by Gibbs sampling from
//! [`source_theta`] with [`SOURCE_SEED`]. Any CSV of the same shape can be
//! used instead.

use std::path::Path;

use omrf_core::model::{Dataset, ModelSpec};
use omrf_core::simulate::{gibbs_synthesize, GibbsInit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelSection;
use crate::error::Result;
use crate::io::{dataset_csv, parse_dataset};

pub const SOURCE_CSV: &str = include_str!("../data/source.csv");
pub const SOURCE_P: usize = 10;
pub const SOURCE_M: usize = 3;
pub const SOURCE_N: usize = 3376;
pub const SOURCE_SEED: u64 = 20120716;
const SOURCE_SWEEPS: usize = 100;

/// Generating parameters of the bundled source.
///
/// Thresholds `mu_ih = -(0.5 + 0.1 (i mod 3)) h - 0.15 h^2`; interactions
/// 0.22 between neighbouring items, 0.08 two apart, 0.03 otherwise.
pub fn source_theta() -> Vec<f64> {
    let spec = ModelSpec::new(SOURCE_P, SOURCE_M).expect("valid source shape");
    let mut theta = vec![0.0; spec.dim()];
    for i in 0..SOURCE_P {
        let slope = 0.5 + 0.1 * (i % 3) as f64;
        for h in 1..=SOURCE_M {
            let hf = h as f64;
            theta[spec.threshold_index(i, h)] = -slope * hf - 0.15 * hf * hf;
        }
    }
    for i in 0..SOURCE_P {
        for j in i + 1..SOURCE_P {
            theta[spec.interaction_index(i, j)] = match j - i {
                1 => 0.22,
                2 => 0.08,
                _ => 0.03,
            };
        }
    }
    theta
}

pub fn source_names() -> Vec<String> {
    (1..=SOURCE_P).map(|i| format!("Q{i}")).collect()
}

/// Regenerates the bundled CSV text.
pub fn synthesize_source_csv() -> Result<String> {
    let spec = ModelSpec::new(SOURCE_P, SOURCE_M)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SOURCE_SEED);
    let data = gibbs_synthesize(
        &source_theta(),
        &spec,
        SOURCE_N,
        SOURCE_SWEEPS,
        GibbsInit::Uniform,
        &mut rng,
    )?;
    Ok(dataset_csv(&data, &source_names()))
}

pub fn bundled_source(enum_cap: Option<u64>) -> Result<Dataset> {
    let model = ModelSection {
        p: Some(SOURCE_P),
        m: Some(SOURCE_M),
    };
    Ok(parse_dataset(SOURCE_CSV.as_bytes(), Path::new("<bundled source>"), &model, enum_cap)?.0)
}

/// Recodes categories `>= threshold` to 1 and the rest to 0.
pub fn dichotomize(data: &Dataset, threshold: u8) -> Result<Dataset> {
    let mut spec = ModelSpec::new(data.p(), 1)?;
    spec = spec.with_enum_cap(data.spec().enum_cap());
    let values = data.values().iter().map(|&v| u8::from(v >= threshold)).collect();
    Ok(Dataset::new(spec, values)?)
}
