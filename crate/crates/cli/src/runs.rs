use std::path::{Path, PathBuf};

use april::autodiff::Checkpoint;
use april::trainer::{AlgorithmVariant, TrainConfig};
use april::{Error, Result};

/// `OUT/<variant>/seed<k>/`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunDir {
    pub path: PathBuf,
    pub seed: u64,
}

impl RunDir {
    pub fn new(out: &Path, variant: AlgorithmVariant, seed: u64) -> Self {
        Self {
            path: out.join(variant.label()).join(format!("seed{seed}")),
            seed,
        }
    }

    /// Run directories of `variant`, sorted by seed.
    pub fn discover(out: &Path, variant: AlgorithmVariant) -> Result<Vec<RunDir>> {
        let root = out.join(variant.label());
        let entries = std::fs::read_dir(&root)
            .map_err(|e| Error::Usage(format!("no runs for {variant} under {}: {e}", out.display())))?;
        let mut runs = Vec::new();
        for entry in entries {
            let entry = entry?;
            let name = entry.file_name();
            let seed = name
                .to_str()
                .and_then(|n| n.strip_prefix("seed"))
                .and_then(|s| s.parse().ok());
            if let (Some(seed), true) = (seed, entry.path().join("config.txt").exists()) {
                runs.push(RunDir { path: entry.path(), seed });
            }
        }
        if runs.is_empty() {
            return Err(Error::Usage(format!("no runs for {variant} under {}", out.display())));
        }
        runs.sort_by_key(|r| r.seed);
        Ok(runs)
    }

    /// Variants with at least one run directory under `out`.
    pub fn variants(out: &Path) -> Result<Vec<AlgorithmVariant>> {
        let found: Vec<_> = AlgorithmVariant::ALL
            .into_iter()
            .filter(|v| Self::discover(out, *v).is_ok())
            .collect();
        if found.is_empty() {
            return Err(Error::Usage(format!("no runs under {}", out.display())));
        }
        Ok(found)
    }

    pub fn config(&self) -> Result<TrainConfig> {
        TrainConfig::from_toml(&std::fs::read_to_string(self.path.join("config.txt"))?)
    }

    /// Checkpoint of the last evaluation point.
    pub fn latest_checkpoint(&self) -> Result<PathBuf> {
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in std::fs::read_dir(self.path.join("checkpoints"))? {
            let path = entry?.path();
            let episode = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("ep")?.strip_suffix(".ckpt")?.parse::<u64>().ok());
            if let Some(e) = episode {
                if best.as_ref().is_none_or(|(b, _)| e > *b) {
                    best = Some((e, path));
                }
            }
        }
        best.map(|(_, p)| p)
            .ok_or_else(|| Error::Usage(format!("no checkpoints in {}", self.path.display())))
    }

    pub fn latest(&self) -> Result<(TrainConfig, Checkpoint)> {
        Ok((self.config()?, Checkpoint::load(&self.latest_checkpoint()?)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discovery_sorts_seeds_and_skips_strays() {
        let dir = tempfile::tempdir().unwrap();
        for seed in [10, 2] {
            let run = RunDir::new(dir.path(), AlgorithmVariant::April, seed);
            std::fs::create_dir_all(run.path.join("checkpoints")).unwrap();
            std::fs::write(run.path.join("config.txt"), "").unwrap();
        }
        std::fs::create_dir_all(dir.path().join("april/notes")).unwrap();
        std::fs::create_dir_all(dir.path().join("april/seed5")).unwrap();
        let runs = RunDir::discover(dir.path(), AlgorithmVariant::April).unwrap();
        assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![2, 10]);
        assert_eq!(RunDir::variants(dir.path()).unwrap(), vec![AlgorithmVariant::April]);
        assert!(RunDir::discover(dir.path(), AlgorithmVariant::Ddpg).is_err());
    }

    #[test]
    fn latest_checkpoint_is_the_highest_episode() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path(), AlgorithmVariant::April, 1);
        let ck = run.path.join("checkpoints");
        std::fs::create_dir_all(&ck).unwrap();
        assert!(run.latest_checkpoint().is_err());
        for name in ["ep000050.ckpt", "ep000200.ckpt", "ep000100.ckpt", "diverged.ckpt"] {
            std::fs::write(ck.join(name), "").unwrap();
        }
        assert_eq!(run.latest_checkpoint().unwrap(), ck.join("ep000200.ckpt"));
    }
}
