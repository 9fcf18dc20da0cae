//! Decoded dream galleries: one row per random start state, one column per
//! transformation.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::agent::Agent;
use crate::dreaming::{deep_dream, random_swing, sample_initial_state, value_diversify, AugmentationMode};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::worldmodel::{tensor_to_image, Latent, WorldModel};

const GAP: u32 = 2;

/// Columns shown for a mode: the untouched state first.
pub fn gallery_columns(mode: AugmentationMode) -> Vec<AugmentationMode> {
    let mut cols = vec![AugmentationMode::None];
    match mode {
        AugmentationMode::None => {}
        AugmentationMode::Mixture => cols.extend([
            AugmentationMode::RandomSwing,
            AugmentationMode::DeepDream,
            AugmentationMode::ValueDiversify,
        ]),
        other => cols.push(other),
    }
    cols
}

fn transform(
    wm: &WorldModel,
    agent: &Agent,
    cfg: &ExperimentConfig,
    s: &Latent,
    mode: AugmentationMode,
    seed: u64,
) -> Result<Latent> {
    let classes = wm.config().classes;
    let mut rng = stream_rng(seed, "export-transform", 0);
    match mode {
        AugmentationMode::None | AugmentationMode::Mixture => Ok(s.clone()),
        AugmentationMode::RandomSwing => Ok(random_swing(s, classes, cfg.p_swing, &mut rng)?.state),
        AugmentationMode::DeepDream => deep_dream(wm, s, cfg.deep_dream_steps, cfg.deep_dream_step_size),
        AugmentationMode::ValueDiversify => {
            value_diversify(agent, s, classes, cfg.value_steps, cfg.value_step_size, &mut rng)
        }
    }
}

/// Renders `count` random start states under each column transformation
/// into a single RGB grid.
pub fn dream_gallery(
    wm: &WorldModel,
    agent: &Agent,
    cfg: &ExperimentConfig,
    mode: AugmentationMode,
    count: usize,
    seed: u64,
) -> Result<RgbImage> {
    if count == 0 {
        return Err(Error::Config("dream export needs at least one state".into()));
    }
    let starts = sample_initial_state(wm, count, &mut stream_rng(seed, "export-start", 0))?;
    let cols = gallery_columns(mode);
    let size = wm.config().image_size as u32;
    let width = cols.len() as u32 * (size + GAP) + GAP;
    let height = count as u32 * (size + GAP) + GAP;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    for (c, &col) in cols.iter().enumerate() {
        let states = transform(wm, agent, cfg, &starts, col, seed)?;
        let decoded = wm.decode(&states)?;
        for r in 0..count {
            let pixels = tensor_to_image(&decoded.get(r)?)?;
            let (x0, y0) = (GAP + c as u32 * (size + GAP), GAP + r as u32 * (size + GAP));
            for (i, px) in pixels.chunks(3).enumerate() {
                let (x, y) = (i as u32 % size, i as u32 / size);
                img.put_pixel(x0 + x, y0 + y, Rgb([px[0], px[1], px[2]]));
            }
        }
    }
    Ok(img)
}

/// Writes `dreams_<mode>.png` into `out` and returns its path.
pub fn export_dreams(
    wm: &WorldModel,
    agent: &Agent,
    cfg: &ExperimentConfig,
    mode: AugmentationMode,
    count: usize,
    out: &Path,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let img = dream_gallery(wm, agent, cfg, mode, count, cfg.seed)?;
    let name = serde_json::to_value(mode)?.as_str().unwrap_or("dreams").to_string();
    let path = out.join(format!("dreams_{name}.png"));
    img.save(&path)
        .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    Ok(path)
}
