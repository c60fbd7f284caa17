//! `key = value` experiment configuration.
//!
//! ```text
//! profile = desk
//! [world]
//! kind = ae
//! d = 50
//! [train]
//! lr_grid = 1e-5, 1e-4, 1e-3
//! ```
//!
//! Blank lines and `#` comments are ignored; `profile` may only appear before
//! the first section and selects the defaults every other key overrides.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::funcspace::EmbedMethod;
use crate::synthgen::{WorldKind, DEFAULT_NOISE_VARIANCE};
use crate::trainer::{Pipeline, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    LabeledSize,
    R,
    D,
    None,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LabeledSize => "labeledSize",
            SweepAxis::R => "r",
            SweepAxis::D => "d",
            SweepAxis::None => "none",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeledSize" | "labeled_size" | "labeled" => Ok(SweepAxis::LabeledSize),
            "r" => Ok(SweepAxis::R),
            "d" => Ok(SweepAxis::D),
            "none" => Ok(SweepAxis::None),
            _ => Err(Error::invalid(format!("unknown sweep axis '{s}' (labeledSize, r, d, none)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Paper,
    Desk,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::invalid(format!("unknown profile '{s}' (paper, desk)"))),
        }
    }
}

/// Settings of the function-space experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedSettings {
    pub runs: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub method: EmbedMethod,
    pub perplexity: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub world: WorldKind,
    pub d: usize,
    pub r: usize,
    pub zero_mean: bool,
    pub noise_variance: f64,
    pub unlabeled: usize,
    /// Labeled sizes; the sweep values when the axis is `labeledSize`,
    /// otherwise a single size.
    pub labeled: Vec<usize>,
    pub test: usize,
    pub axis: SweepAxis,
    /// Values of `r` or `d` for those axes.
    pub values: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    /// Divide test MSEs by the mean squared test-input norm of the run.
    pub normalize: bool,
    pub train: TrainConfig,
    pub embed: EmbedSettings,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            world: WorldKind::AutoEncoder,
            d: 100,
            r: 30,
            zero_mean: false,
            noise_variance: DEFAULT_NOISE_VARIANCE,
            unlabeled: 10_000,
            labeled: vec![100, 500, 1000, 5000, 10_000],
            test: 1000,
            axis: SweepAxis::LabeledSize,
            values: Vec::new(),
            runs: 10,
            seed: 0,
            normalize: false,
            train: TrainConfig::default(),
            embed: EmbedSettings {
                runs: 1000,
                labeled: 1000,
                unlabeled: 10_000,
                test: 1000,
                method: EmbedMethod::Tsne,
                perplexity: 30.0,
                iterations: 1000,
            },
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            d: 50,
            r: 15,
            zero_mean: true,
            unlabeled: 5000,
            labeled: vec![100, 500, 2000, 5000],
            runs: 5,
            train: TrainConfig {
                epochs_pretrain: 30,
                epochs_finetune: 200,
                batch_size: 64,
                // the masked world's unconstrained end-to-end model needs rates below 1e-5
                lr_grid: vec![1e-7, 1e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3],
                lambda_grid: vec![1e-3, 1e-1],
                ..TrainConfig::default()
            },
            embed: EmbedSettings {
                runs: 50,
                labeled: 200,
                unlabeled: 1000,
                test: 200,
                method: EmbedMethod::Tsne,
                perplexity: 30.0,
                iterations: 1000,
            },
            ..Self::paper()
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// `(d, r, labeled)` of every axis point, in sweep order.
    pub fn axis_points(&self) -> Vec<(usize, usize, usize)> {
        match self.axis {
            SweepAxis::LabeledSize => self.labeled_sizes().iter().map(|&n| (self.d, self.r, n)).collect(),
            SweepAxis::R => self.values.iter().map(|&r| (self.d, r, self.labeled[0])).collect(),
            SweepAxis::D => self.values.iter().map(|&d| (d, self.r, self.labeled[0])).collect(),
            SweepAxis::None => vec![(self.d, self.r, self.labeled[0])],
        }
    }

    /// Labeled sizes swept on the labeledSize axis: `sweep.values` when set,
    /// otherwise `data.labeled`.
    pub fn labeled_sizes(&self) -> &[usize] {
        if self.axis == SweepAxis::LabeledSize && !self.values.is_empty() {
            &self.values
        } else {
            &self.labeled
        }
    }

    pub fn axis_value(&self, point: (usize, usize, usize)) -> usize {
        match self.axis {
            SweepAxis::LabeledSize | SweepAxis::None => point.2,
            SweepAxis::R => point.1,
            SweepAxis::D => point.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(_, e)| e)
    }

    /// Like `validate`, also naming the key the failure is attributed to.
    fn check(&self) -> std::result::Result<(), (&'static str, Error)> {
        let fail = |key: &'static str, msg: String| Err((key, Error::invalid(msg)));
        let world = |key: &'static str, d: usize, r: usize| self.world.check_dims(d, r).map_err(|e| (key, e));
        if self.runs == 0 {
            return fail("sweep.runs", "runs must be >= 1".into());
        }
        if self.unlabeled == 0 || self.test == 0 {
            return fail("data.unlabeled", "unlabeled and test sizes must be positive".into());
        }
        if self.labeled.is_empty() || self.labeled.contains(&0) {
            return fail("data.labeled", "labeled sizes must be a nonempty list of positive integers".into());
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return fail("world.noise_variance", "noise variance must be >= 0".into());
        }
        match self.axis {
            SweepAxis::LabeledSize => {
                world("world.r", self.d, self.r)?;
                if self.values.contains(&0) {
                    return fail("sweep.values", "labeled sizes must be positive".into());
                }
            }
            SweepAxis::None => {
                world("world.r", self.d, self.r)?;
                if self.labeled.len() != 1 {
                    return fail("data.labeled", "axis 'none' needs exactly one labeled size".into());
                }
            }
            SweepAxis::R | SweepAxis::D => {
                if self.values.is_empty() {
                    return fail("sweep.values", format!("axis '{}' needs a values list", self.axis));
                }
                if self.labeled.len() != 1 {
                    return fail("data.labeled", format!("axis '{}' needs exactly one labeled size", self.axis));
                }
                for &v in &self.values {
                    let (d, r) = if self.axis == SweepAxis::R { (self.d, v) } else { (v, self.r) };
                    world("sweep.values", d, r)?;
                }
            }
        }
        self.train.validate().map_err(|e| ("train", e))?;
        let e = &self.embed;
        if e.runs == 0 || e.labeled == 0 || e.unlabeled == 0 || e.test == 0 || e.iterations == 0 {
            return fail("embed.runs", "embed sizes, runs and iterations must be positive".into());
        }
        if !(e.perplexity > 0.0) {
            return fail("embed.perplexity", "perplexity must be positive".into());
        }
        Ok(())
    }

    /// Canonical text form; `parse_config(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let flist = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ");
        let t = &self.train;
        let e = &self.embed;
        // writing to a String cannot fail
        let _ = write!(
            s,
            "profile = {}\n\n[world]\nkind = {}\nd = {}\nr = {}\nzero_mean = {}\nnoise_variance = {:e}\n\n\
             [data]\nunlabeled = {}\nlabeled = {}\ntest = {}\n\n\
             [sweep]\naxis = {}\nvalues = {}\nruns = {}\nseed = {}\nnormalize = {}\n\n\
             [train]\npipeline = {}\nepochs_pretrain = {}\nepochs_finetune = {}\nbatch_size = {}\nlr_grid = {}\nlambda_grid = {}\n\
             momentum = {:e}\ntau = {}\nfinetune_penalty = {:e}\n\n\
             [embed]\nruns = {}\nlabeled = {}\nunlabeled = {}\ntest = {}\nmethod = {}\nperplexity = {:e}\niterations = {}\n\n\
             [output]\ndir = {}\n",
            self.profile.name(),
            self.world.name(),
            self.d,
            self.r,
            self.zero_mean,
            self.noise_variance,
            self.unlabeled,
            list(&self.labeled),
            self.test,
            self.axis,
            list(&self.values),
            self.runs,
            self.seed,
            self.normalize,
            t.pipeline.name(),
            t.epochs_pretrain,
            t.epochs_finetune,
            t.batch_size,
            flist(&t.lr_grid),
            flist(&t.lambda_grid),
            t.momentum,
            t.tau.map_or_else(|| "none".to_string(), |v| format!("{v:e}")),
            t.finetune_penalty,
            e.runs,
            e.labeled,
            e.unlabeled,
            e.test,
            e.method,
            e.perplexity,
            e.iterations,
            self.out_dir.display(),
        );
        s
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper()
    }
}

struct Entry<'a> {
    key: String,
    value: &'a str,
    line: usize,
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn scalar<T: FromStr>(e: &Entry<'_>, what: &str) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| perr(e.line, format!("{}: expected {what}, got '{}'", e.key, e.value)))
}

fn list<T: FromStr>(e: &Entry<'_>, what: &str) -> Result<Vec<T>> {
    if e.value.is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|item| {
            let item = item.trim();
            item.parse()
                .map_err(|_| perr(e.line, format!("{}: expected a list of {what}, bad item '{item}'", e.key)))
        })
        .collect()
}

fn enumerated<T: FromStr<Err = Error>>(e: &Entry<'_>) -> Result<T> {
    e.value.parse().map_err(|err| match err {
        Error::InvalidArgument(m) => perr(e.line, format!("{}: {m}", e.key)),
        other => other,
    })
}

const KNOWN_SECTIONS: [&str; 6] = ["world", "data", "sweep", "train", "embed", "output"];

/// Parse and validate a configuration. Errors carry the offending line.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut section: Option<String> = None;
    let mut entries: Vec<Entry<'_>> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut profile: Option<Profile> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| perr(line, format!("malformed section header '{content}'")))?
                .trim();
            if !KNOWN_SECTIONS.contains(&name) {
                return Err(perr(line, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| perr(line, format!("expected 'key = value', got '{content}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(perr(line, "missing key before '='"));
        }
        let key = match &section {
            None if k == "profile" => {
                if seen.insert("profile".into(), line).is_some() {
                    return Err(perr(line, "duplicate key 'profile'"));
                }
                profile = Some(v.parse().map_err(|e: Error| perr(line, e.to_string()))?);
                continue;
            }
            None => return Err(perr(line, format!("unknown key '{k}' outside a section"))),
            Some(s) => format!("{s}.{k}"),
        };
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(perr(line, format!("duplicate key '{key}' (first set on line {first})")));
        }
        entries.push(Entry { key, value: v, line });
    }

    let mut c = ExperimentConfig::for_profile(profile.unwrap_or(Profile::Paper));
    for e in &entries {
        match e.key.as_str() {
            "world.kind" => c.world = enumerated(e)?,
            "world.d" => c.d = scalar(e, "an integer")?,
            "world.r" => c.r = scalar(e, "an integer")?,
            "world.zero_mean" => c.zero_mean = scalar(e, "true or false")?,
            "world.noise_variance" => c.noise_variance = scalar(e, "a number")?,
            "data.unlabeled" => c.unlabeled = scalar(e, "an integer")?,
            "data.labeled" => c.labeled = list(e, "integers")?,
            "data.test" => c.test = scalar(e, "an integer")?,
            "sweep.axis" => c.axis = enumerated(e)?,
            "sweep.values" => c.values = list(e, "integers")?,
            "sweep.runs" => c.runs = scalar(e, "an integer")?,
            "sweep.seed" => c.seed = scalar(e, "an integer")?,
            "sweep.normalize" => c.normalize = scalar(e, "true or false")?,
            "train.pipeline" => c.train.pipeline = enumerated::<Pipeline>(e)?,
            "train.epochs_pretrain" => c.train.epochs_pretrain = scalar(e, "an integer")?,
            "train.epochs_finetune" => c.train.epochs_finetune = scalar(e, "an integer")?,
            "train.batch_size" => c.train.batch_size = scalar(e, "an integer")?,
            "train.lr_grid" => c.train.lr_grid = list(e, "numbers")?,
            "train.lambda_grid" => c.train.lambda_grid = list(e, "numbers")?,
            "train.momentum" => c.train.momentum = scalar(e, "a number")?,
            "train.tau" => {
                c.train.tau = if e.value == "none" { None } else { Some(scalar(e, "a number or none")?) }
            }
            "train.finetune_penalty" => c.train.finetune_penalty = scalar(e, "a number")?,
            "embed.runs" => c.embed.runs = scalar(e, "an integer")?,
            "embed.labeled" => c.embed.labeled = scalar(e, "an integer")?,
            "embed.unlabeled" => c.embed.unlabeled = scalar(e, "an integer")?,
            "embed.test" => c.embed.test = scalar(e, "an integer")?,
            "embed.method" => c.embed.method = enumerated(e)?,
            "embed.perplexity" => c.embed.perplexity = scalar(e, "a number")?,
            "embed.iterations" => c.embed.iterations = scalar(e, "an integer")?,
            "output.dir" => c.out_dir = PathBuf::from(e.value),
            _ => return Err(perr(e.line, format!("unknown key '{}'", e.key))),
        }
    }
    c.check().map_err(|(key, err)| {
        let msg = match err {
            Error::InvalidArgument(m) => m,
            other => other.to_string(),
        };
        // blame the named key, or the closest key of the same section
        let line = seen
            .get(key)
            .or_else(|| {
                let sec = key.split('.').next().unwrap_or(key);
                entries.iter().rev().find(|e| e.key.starts_with(sec)).map(|e| &e.line)
            })
            .copied()
            .unwrap_or(0);
        perr(line, msg)
    })?;
    Ok(c)
}

