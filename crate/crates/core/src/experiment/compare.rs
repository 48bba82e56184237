//! Cross-run summaries read back from run directories.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::sac::{EpisodeRecord, EpochLog};

/// Epochs averaged at the end of a run to measure its plateau.
pub const PLATEAU_EPOCHS: usize = 10;

const EPOCH_HEADER: &str =
    "epoch,env_steps,return,episodes,max_episode_energy,depletions,updates,alpha,critic_loss,actor_loss,entropy,eval_return";
const EPISODE_HEADER: &str = "epoch,episode,steps,return,energy_spent,depleted,cause";

#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone)]
pub struct RunData {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedData>,
}

fn parse_csv<T: serde::de::DeserializeOwned>(
    input: impl std::io::Read,
    header: &str,
    label: &str,
) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_reader(input);
    let found = rd
        .headers()
        .map_err(|e| Error::Schema(format!("{label}: {e}")))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if found != header {
        return Err(Error::Schema(format!(
            "{label}: header {found:?} does not match {header:?}"
        )));
    }
    rd.deserialize()
        .map(|r| r.map_err(|e| Error::Schema(format!("{label}: {e}"))))
        .collect()
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(
        std::io::BufReader::new(file),
        header,
        &path.display().to_string(),
    )
}

impl SeedData {
    /// Parse the `epochs.csv` and `episodes.csv` contents of one seed.
    pub fn parse(seed: u64, epochs_csv: &[u8], episodes_csv: &[u8]) -> Result<Self> {
        Ok(Self {
            seed,
            epochs: parse_csv(epochs_csv, EPOCH_HEADER, "epochs.csv")?,
            episodes: parse_csv(episodes_csv, EPISODE_HEADER, "episodes.csv")?,
        })
    }
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("config.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config = ExperimentConfig::parse(&text)?;
        let seeds = config
            .seeds
            .iter()
            .map(|&seed| {
                let sd = dir.join(format!("seed-{seed}"));
                Ok(SeedData {
                    seed,
                    epochs: read_csv(&sd.join("epochs.csv"), EPOCH_HEADER)?,
                    episodes: read_csv(&sd.join("episodes.csv"), EPISODE_HEADER)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            seeds,
        })
    }

    /// Largest `ê_N` of any training episode of any seed.
    pub fn max_training_energy(&self) -> f64 {
        self.seeds
            .iter()
            .flat_map(|s| &s.episodes)
            .map(|e| e.energy_spent)
            .fold(0.0, f64::max)
    }

    /// The run's training budget: its tank's `e0`, or its largest spend
    /// when it trained without a tank.
    pub fn energy_budget(&self) -> f64 {
        self.config
            .wrapper
            .e0()
            .unwrap_or_else(|| self.max_training_energy())
    }

    fn epoch_count(&self) -> usize {
        self.seeds.iter().map(|s| s.epochs.len()).min().unwrap_or(0)
    }

    /// Mean and sample standard deviation across seeds of each epoch's return.
    pub fn epoch_returns(&self) -> Vec<(f64, f64)> {
        (0..self.epoch_count())
            .map(|i| mean_std(self.seeds.iter().map(|s| s.epochs[i].epoch_return)))
            .collect()
    }

    /// Mean epoch return over the last [`PLATEAU_EPOCHS`] epochs and all seeds.
    pub fn plateau(&self) -> f64 {
        let n = self.epoch_count();
        let from = n.saturating_sub(PLATEAU_EPOCHS);
        mean_std(
            self.seeds
                .iter()
                .flat_map(|s| s.epochs[from..n].iter().map(|e| e.epoch_return)),
        )
        .0
    }
}

fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = xs.collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
}

/// Run A against run B.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub a: PathBuf,
    pub b: PathBuf,
    pub epochs: Vec<EpochRow>,
    /// Standard deviation over epochs of `mean_a - mean_b`.
    pub diff_std: f64,
    /// Max training `ê` of A divided by B's budget.
    pub energy_ratio: f64,
    pub plateau_a: f64,
    pub plateau_b: f64,
    /// `|plateau_a - plateau_b| / max(plateau_a, plateau_b)`
    pub plateau_gap: f64,
}

pub fn compare(a: &RunData, b: &RunData) -> Result<Comparison> {
    let ra = a.epoch_returns();
    let rb = b.epoch_returns();
    if ra.is_empty() || rb.is_empty() {
        return Err(Error::Schema("a run has no epochs".into()));
    }
    let n = ra.len().min(rb.len());
    let epochs: Vec<EpochRow> = (0..n)
        .map(|i| EpochRow {
            epoch: i + 1,
            mean_a: ra[i].0,
            std_a: ra[i].1,
            mean_b: rb[i].0,
            std_b: rb[i].1,
        })
        .collect();
    let (_, diff_std) = mean_std(epochs.iter().map(|r| r.mean_a - r.mean_b));
    let (pa, pb) = (a.plateau(), b.plateau());
    Ok(Comparison {
        a: a.dir.clone(),
        b: b.dir.clone(),
        epochs,
        diff_std,
        energy_ratio: a.max_training_energy() / b.energy_budget(),
        plateau_a: pa,
        plateau_b: pb,
        plateau_gap: (pa - pb).abs() / pa.max(pb),
    })
}
