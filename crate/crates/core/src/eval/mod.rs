//! Held-out evaluation of trained checkpoints: per-class returns across
//! seeds, a random-agent baseline, the percent-decrease metric, attention
//! export and plot rendering.

mod attention;
mod plot;

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use attention::{
    export_attention, localisation, trace_attention, AttentionExport, FrameAttention, Localisation,
};
pub use plot::{
    bar_chart, learning_curve, read_log_curve, BarChart, Canvas, Curve, CurvePlot, CurveSummary, Rgb,
};

use crate::agents::{BehaviourPolicy, NetworkSet, RunningNormaliser};
use crate::autodiff::Checkpoint;
use crate::env::{csv_err, make_domain, splitmix64, DomainClass, DomainConfig};
use crate::error::{Error, Result};
use crate::replay::Source;
use crate::trainer::{evaluate_policy, greedy_policy, parallel_map, run_episode, TrainConfig};

/// Number of evaluation domains per class.
pub const EVAL_COUNT: usize = 100;

/// `100 (r_train - r_other) / (r_train - r_random)`: the drop in return
/// relative to the training-domain advantage over a random agent.
pub fn percent_decrease(r_train: f64, r_other: f64, r_random: f64) -> Result<f64> {
    let gain = r_train - r_random;
    if gain.is_nan() || gain <= 0.0 || !r_other.is_finite() {
        return Err(Error::UndefinedMetric(format!(
            "percent decrease needs r_train > r_random (got {r_train} vs {r_random})"
        )));
    }
    Ok(100.0 * (r_train - r_other) / gain)
}

/// Networks of `config` with the parameters of `ckpt`.
pub fn load_networks(config: &TrainConfig, ckpt: &Checkpoint) -> Result<NetworkSet> {
    let mut nets = config.build_networks()?;
    nets.load_checkpoint(ckpt)?;
    Ok(nets)
}

/// `(domain, env seed)` of `count` evaluation scenes of `class`.
///
/// Training-class scenes are the first `count` scenes the run trained on;
/// the other classes come from `make_domain`.
pub fn class_scenes(config: &TrainConfig, class: DomainClass, count: usize) -> Result<Vec<(DomainConfig, u64)>> {
    (0..count)
        .map(|i| match class {
            DomainClass::Train => Ok((config.domain.clone(), config.training_scene(i as u64))),
            _ => Ok((make_domain(&config.domain, class, i)?, 0)),
        })
        .collect()
}

fn check_resolution(nets: &NetworkSet, scenes: &[(DomainConfig, u64)]) -> Result<()> {
    match scenes.iter().find(|(d, _)| d.resolution != nets.dims.resolution) {
        Some((d, _)) => Err(Error::Config(format!(
            "checkpoint expects {0}x{0} frames, domain renders {1}x{1}",
            nets.dims.resolution, d.resolution
        ))),
        None => Ok(()),
    }
}

/// Greedy image-policy returns on each scene, in order.
pub fn policy_returns(nets: &NetworkSet, scenes: &[(DomainConfig, u64)], workers: usize) -> Result<Vec<f64>> {
    check_resolution(nets, scenes)?;
    let policy = greedy_policy(nets, Source::ObsAgent)?;
    evaluate_policy(nets, &policy, scenes, workers)
}

/// Returns of a uniform random agent on each scene, in order.
pub fn random_returns(scenes: &[(DomainConfig, u64)], workers: usize) -> Result<Vec<f64>> {
    let jobs: Vec<(usize, &(DomainConfig, u64))> = scenes.iter().enumerate().collect();
    parallel_map(&jobs, workers, |(i, (d, seed))| {
        let policy = BehaviourPolicy::Random { max_speed: d.max_speed };
        let norm = RunningNormaliser::new(d.state_dim());
        run_episode(d, *seed, &policy, &norm, Source::ObsAgent, splitmix64(*i as u64)).map(|e| e.ret)
    })
    .into_iter()
    .collect()
}

/// Per-domain returns of one checkpoint on one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassReturns {
    pub class: DomainClass,
    pub returns: Vec<f64>,
    pub random: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Evaluates one trained run on each class.
pub fn evaluate_run(
    config: &TrainConfig,
    ckpt: &Checkpoint,
    classes: &[DomainClass],
    count: usize,
    workers: usize,
) -> Result<Vec<ClassReturns>> {
    let nets = load_networks(config, ckpt)?;
    classes
        .iter()
        .map(|&class| {
            let scenes = class_scenes(config, class, count)?;
            Ok(ClassReturns {
                class,
                returns: policy_returns(&nets, &scenes, workers)?,
                random: random_returns(&scenes, workers)?,
            })
        })
        .collect()
}

/// One domain class aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: DomainClass,
    /// Mean return of each seed's checkpoint.
    pub seed_means: Vec<f64>,
    pub mean: f64,
    /// Two sample standard deviations of the seed means.
    pub two_sigma: f64,
    /// Random-agent mean return on the same scenes, averaged over seeds.
    pub random: f64,
}

impl ClassSummary {
    /// Whether `value` lies within `mean +- two_sigma`.
    pub fn within_band(&self, value: f64) -> bool {
        (value - self.mean).abs() <= self.two_sigma
    }
}

/// Evaluation of one variant across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub count: usize,
    pub classes: Vec<ClassSummary>,
}

impl EvalReport {
    /// Aggregates per-seed results; every seed must cover the same classes.
    pub fn from_runs(variant: &str, seeds: &[u64], count: usize, runs: &[Vec<ClassReturns>]) -> Result<Self> {
        if runs.is_empty() || runs.len() != seeds.len() {
            return Err(Error::Usage("one result set per seed is required".into()));
        }
        let classes = runs[0]
            .iter()
            .enumerate()
            .map(|(k, first)| {
                let mut seed_means = Vec::with_capacity(runs.len());
                let mut randoms = Vec::with_capacity(runs.len());
                for run in runs {
                    let c = run
                        .get(k)
                        .filter(|c| c.class == first.class)
                        .ok_or_else(|| Error::Usage("seeds were evaluated on different classes".into()))?;
                    seed_means.push(mean(&c.returns));
                    randoms.push(mean(&c.random));
                }
                Ok(ClassSummary {
                    class: first.class,
                    mean: mean(&seed_means),
                    two_sigma: 2.0 * sample_std(&seed_means),
                    random: mean(&randoms),
                    seed_means,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            variant: variant.to_string(),
            seeds: seeds.to_vec(),
            count,
            classes,
        })
    }

    pub fn class(&self, class: DomainClass) -> Option<&ClassSummary> {
        self.classes.iter().find(|c| c.class == class)
    }

    /// Percent decrease of `class` against the training class and the
    /// training-domain random baseline.
    pub fn percent_decrease(&self, class: DomainClass) -> Result<f64> {
        let train = self
            .class(DomainClass::Train)
            .ok_or_else(|| Error::UndefinedMetric("report has no training class".into()))?;
        let other = self
            .class(class)
            .ok_or_else(|| Error::UndefinedMetric(format!("report has no {} class", class.label())))?;
        percent_decrease(train.mean, other.mean, train.random)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.classes
            .iter()
            .map(|c| ReportRow {
                variant: self.variant.clone(),
                class: c.class,
                seeds: self.seeds.len(),
                domains: self.count,
                mean: c.mean,
                two_sigma: c.two_sigma,
                random: c.random,
                percent_decrease: self.percent_decrease(c.class).ok(),
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &self.rows())
    }
}

/// One line of an evaluation CSV. An undefined percent decrease is an empty field.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub variant: String,
    pub class: DomainClass,
    pub seeds: usize,
    pub domains: usize,
    pub mean: f64,
    pub two_sigma: f64,
    pub random: f64,
    pub percent_decrease: Option<f64>,
}

pub const REPORT_HEADER: [&str; 8] = [
    "variant",
    "class",
    "seeds",
    "domains",
    "mean_return",
    "two_sigma",
    "random_return",
    "percent_decrease",
];

pub fn write_rows<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.variant.clone(),
            r.class.label().to_string(),
            r.seeds.to_string(),
            r.domains.to_string(),
            r.mean.to_string(),
            r.two_sigma.to_string(),
            r.random.to_string(),
            r.percent_decrease.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut input = csv::Reader::from_reader(r);
    let header = input.headers().map_err(csv_err)?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(Error::Format(format!("unexpected evaluation header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::Format(format!("bad number {s:?} in evaluation CSV")))
    };
    let count = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Format(format!("bad count {s:?} in evaluation CSV")))
    };
    input
        .records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(ReportRow {
                variant: rec[0].to_string(),
                class: DomainClass::from_str(&rec[1])?,
                seeds: count(&rec[2])?,
                domains: count(&rec[3])?,
                mean: num(&rec[4])?,
                two_sigma: num(&rec[5])?,
                random: num(&rec[6])?,
                percent_decrease: if rec[7].is_empty() { None } else { Some(num(&rec[7])?) },
            })
        })
        .collect()
}

/// Reads the rows of an evaluation CSV file.
pub fn load_rows(path: &Path) -> Result<Vec<ReportRow>> {
    read_rows(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests;
