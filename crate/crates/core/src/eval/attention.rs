use std::path::{Path, PathBuf};

use crate::agents::{obs_batch, NetworkSet, ObsPolicy, StatePolicy};
use crate::alignment::save_grayscale_png;
use crate::autodiff::Tensor;
use crate::env::{csv_err, DomainConfig, NavWorld, Observation, SegmentationMaps};
use crate::error::{Error, Result};

/// Mean image attention on the agent and target versus everything else.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Localisation {
    pub relevant: f64,
    pub other: f64,
}

impl Localisation {
    pub fn localised(&self) -> bool {
        self.relevant > self.other
    }
}

/// Splits `mask` (one value per pixel) into agent/target pixels (objects 0
/// and 1) and distractor/background pixels. `None` when either side is empty.
pub fn localisation(mask: &[f64], maps: &SegmentationMaps) -> Result<Option<Localisation>> {
    if mask.len() != maps.pixels() {
        return Err(Error::Contract(format!(
            "mask has {} values for {} pixels",
            mask.len(),
            maps.pixels()
        )));
    }
    let (mut rel, mut n_rel, mut oth, mut n_oth) = (0.0, 0usize, 0.0, 0usize);
    for (m, owner) in mask.iter().zip(maps.owners()?) {
        if matches!(owner, Some(0 | 1)) {
            rel += m;
            n_rel += 1;
        } else {
            oth += m;
            n_oth += 1;
        }
    }
    Ok((n_rel > 0 && n_oth > 0).then(|| Localisation {
        relevant: rel / n_rel as f64,
        other: oth / n_oth as f64,
    }))
}

/// Attention of the greedy policies on one visited frame.
#[derive(Clone, Debug)]
pub struct FrameAttention {
    pub episode: usize,
    pub step: usize,
    /// `h_o` per pixel, row-major.
    pub mask: Vec<f64>,
    /// `h_s` of the state module, when it accepts this domain's state.
    pub state_attention: Option<Vec<f64>>,
    pub observation: Observation,
    pub segmentation: SegmentationMaps,
}

/// Rolls out the greedy image policy on every scene and hands each frame's
/// attention to `visit`.
pub fn trace_attention(
    nets: &NetworkSet,
    scenes: &[(DomainConfig, u64)],
    mut visit: impl FnMut(FrameAttention) -> Result<()>,
) -> Result<()> {
    let policy = ObsPolicy::from_module(&nets.obs);
    if policy.attention.is_none() {
        return Err(Error::Usage("this network set has no image attention".into()));
    }
    let state = nets.state.as_ref().map(StatePolicy::from_module);
    for (episode, (domain, seed)) in scenes.iter().enumerate() {
        if domain.resolution != nets.dims.resolution {
            return Err(Error::Config(format!(
                "checkpoint expects {0}x{0} frames, domain renders {1}x{1}",
                nets.dims.resolution, domain.resolution
            )));
        }
        let (mut env, mut frame) = NavWorld::reset(domain, *seed)?;
        for step in 0.. {
            let o = obs_batch(&[&frame.observation])?;
            let tiled = policy.mask(&o)?.expect("attention present");
            let action = policy.actor.infer(&o, Some(&tiled))?;
            let pixels = nets.dims.pixels();
            let state_attention = match &state {
                Some(p) if frame.state.len() == nets.dims.state_dim => {
                    let s = Tensor::new(vec![1, frame.state.len()], nets.normaliser.normalise(&frame.state))?;
                    Some(p.mask(&s)?.into_data())
                }
                _ => None,
            };
            visit(FrameAttention {
                episode,
                step,
                mask: tiled.data()[..pixels].to_vec(),
                state_attention,
                observation: frame.observation.clone(),
                segmentation: frame.segmentation.clone(),
            })?;
            let out = env.step([action.data()[0], action.data()[1]]);
            frame = out.frame;
            if out.done {
                break;
            }
        }
    }
    Ok(())
}

/// What `export_attention` wrote and measured.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionExport {
    pub frames: usize,
    /// Frames whose agent and target pixels carry more attention than the rest.
    pub localised: usize,
    /// Frames where either pixel group was empty.
    pub undefined: usize,
    pub files: Vec<PathBuf>,
}

impl AttentionExport {
    pub fn localised_fraction(&self) -> f64 {
        self.localised as f64 / self.frames.max(1) as f64
    }
}

fn save_overlay(mask: &[f64], obs: &Observation, path: &Path) -> Result<()> {
    let n = obs.size();
    let img = image::RgbImage::from_fn(n as u32, n as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let m = mask[y * n + x].clamp(0.0, 1.0);
        image::Rgb([0, 1, 2].map(|c| (obs.value(c, y, x) * m * 255.0).round() as u8))
    });
    img.save(path).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Writes, for every frame of every scene, the grayscale `h_o` map, the
/// masked frame and the raw frame as PNGs under `dir`, plus
/// `state_attention.csv` (`h_s` per step) and `localisation.csv`.
/// With `images` false only the CSVs are written.
pub fn export_attention(
    nets: &NetworkSet,
    scenes: &[(DomainConfig, u64)],
    dir: &Path,
    images: bool,
) -> Result<AttentionExport> {
    std::fs::create_dir_all(dir)?;
    let mut report = AttentionExport::default();
    let state_path = dir.join("state_attention.csv");
    let loc_path = dir.join("localisation.csv");
    let mut state_csv = csv::Writer::from_path(&state_path).map_err(csv_err)?;
    let mut loc_csv = csv::Writer::from_path(&loc_path).map_err(csv_err)?;
    let mut header = vec!["episode".to_string(), "step".to_string()];
    header.extend((0..nets.dims.state_dim).map(|i| format!("h_{i}")));
    state_csv.write_record(&header).map_err(csv_err)?;
    loc_csv
        .write_record(["episode", "step", "relevant", "other", "localised"])
        .map_err(csv_err)?;

    let size = nets.dims.resolution;
    trace_attention(nets, scenes, |f| {
        let stem = format!("ep{:03}_t{:03}", f.episode, f.step);
        if images {
            let paths = [
                dir.join(format!("{stem}_mask.png")),
                dir.join(format!("{stem}_overlay.png")),
                dir.join(format!("{stem}_frame.png")),
            ];
            save_grayscale_png(&f.mask, size, &paths[0])?;
            save_overlay(&f.mask, &f.observation, &paths[1])?;
            f.observation.save_png(&paths[2])?;
            report.files.extend(paths);
        }
        if let Some(h) = &f.state_attention {
            let mut row = vec![f.episode.to_string(), f.step.to_string()];
            row.extend(h.iter().map(|v| v.to_string()));
            state_csv.write_record(&row).map_err(csv_err)?;
        }
        let loc = localisation(&f.mask, &f.segmentation)?;
        report.frames += 1;
        match loc {
            Some(l) => {
                report.localised += l.localised() as usize;
                loc_csv
                    .write_record([
                        f.episode.to_string(),
                        f.step.to_string(),
                        l.relevant.to_string(),
                        l.other.to_string(),
                        (l.localised() as u8).to_string(),
                    ])
                    .map_err(csv_err)?;
            }
            None => report.undefined += 1,
        }
        Ok(())
    })?;
    state_csv.flush()?;
    loc_csv.flush()?;
    report.files.push(state_path);
    report.files.push(loc_path);
    Ok(report)
}
