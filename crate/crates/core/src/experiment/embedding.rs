//! Many independent trainings on one world, compared in function space.

use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::output::{manifest, scatter_chart, versioned_csv, write_atomic, Series};
use super::sweep::{architecture_for, RunData, METHODS};
use crate::error::{ensure, Error, Result};
use crate::funcspace::{dispersion_by_tag, embed, functional_vector, EmbedConfig, FunctionalVector};
use crate::numkit::{Matrix, RngStream};
use crate::synthgen::{format_float, DataSpec};
use crate::trainer::{finetune_labeled, pretrain_over, train_end_to_end, Pipeline, TrainConfig};

/// Hyperparameters picked on run 0 and reused by every other run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuned {
    pub e2e_lr: f64,
    pub pretrain_lr: f64,
    pub lambdas: (f64, f64),
    pub finetune_lr: f64,
}

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub vectors: Vec<FunctionalVector>,
    pub coords: Matrix,
    pub dispersion: Vec<(Pipeline, f64)>,
    pub tuned: Tuned,
}

fn single(config: &TrainConfig, lr: f64) -> TrainConfig {
    TrainConfig {
        lr_grid: vec![lr],
        ..config.clone()
    }
}

/// Functional vectors of `cfg.embed.runs` runs per pipeline.
///
/// The world and the test set come from the master seed; every run draws
/// its own unlabeled and labeled samples and its own initialization. Run 0
/// grid-searches the learning rates (and penalty weights); later runs reuse
/// them, falling back to a full search when a reused rate diverges.
pub fn functional_vectors(cfg: &ExperimentConfig) -> Result<(Vec<FunctionalVector>, Tuned)> {
    cfg.validate()?;
    let e = &cfg.embed;
    let arch = architecture_for(cfg.world);
    let master = RngStream::new(cfg.seed);
    let world = RunData::generate(
        cfg.world,
        cfg.d,
        cfg.r,
        cfg.zero_mean,
        cfg.noise_variance,
        (1, 1, e.test),
        &master,
    )?;
    let spec: DataSpec = world.spec;
    let test = world.test;

    let run_once = |run: usize, tuned: Option<Tuned>| -> Result<(FunctionalVector, FunctionalVector, Tuned)> {
        // per-run samples use streams disjoint from the master's
        let rng = RngStream::with_stream(cfg.seed.wrapping_add(run as u64), 1 << 20);
        let data = RunData::sample(spec.clone(), (e.unlabeled, e.labeled, 1), &rng)?;
        let tc = TrainConfig {
            seed: cfg.seed.wrapping_add(run as u64),
            ..cfg.train.clone()
        };
        let lambda_pairs: Vec<(f64, f64)> = match tuned {
            Some(t) => vec![t.lambdas],
            None => tc
                .lambda_grid
                .iter()
                .flat_map(|&a| tc.lambda_grid.iter().map(move |&b| (a, b)))
                .collect(),
        };
        let e2e_cfg = tuned.map_or_else(|| tc.clone(), |t| single(&tc, t.e2e_lr));
        let pre_cfg = tuned.map_or_else(|| tc.clone(), |t| single(&tc, t.pretrain_lr));
        let ft_cfg = tuned.map_or_else(|| tc.clone(), |t| single(&tc, t.finetune_lr));
        let e2e = train_end_to_end(arch, cfg.r, &data.labeled, None, &e2e_cfg)?;
        let pre = pretrain_over(arch, &data.unlabeled, &pre_cfg, cfg.r, &lambda_pairs)?;
        let fr = finetune_labeled(&pre, &data.labeled, Some(&data.unlabeled), None, &ft_cfg)?;
        let t = Tuned {
            e2e_lr: e2e.chosen_lr,
            pretrain_lr: pre.lr,
            lambdas: pre.lambdas.unwrap_or((0.0, 0.0)),
            finetune_lr: fr.chosen_lr,
        };
        Ok((
            functional_vector(&e2e.model, &test, Pipeline::EndToEnd, run)?,
            functional_vector(&fr.model, &test, Pipeline::FuncReg, run)?,
            t,
        ))
    };

    let (v_e, v_f, tuned) = run_once(0, None)?;
    let rest: Vec<(FunctionalVector, FunctionalVector, Tuned)> = (1..e.runs)
        .into_par_iter()
        .map(|k| match run_once(k, Some(tuned)) {
            // a rate tuned on run 0 can blow up on another draw
            Err(Error::Diverged) => run_once(k, None),
            r => r,
        })
        .collect::<Result<_>>()?;
    let mut e2e = vec![v_e];
    let mut fr = vec![v_f];
    for (a, b, _) in rest {
        e2e.push(a);
        fr.push(b);
    }
    e2e.extend(fr);
    Ok((e2e, tuned))
}

pub fn embed_vectors(vectors: &[FunctionalVector], cfg: &ExperimentConfig) -> Result<Matrix> {
    let refs: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    let ec = EmbedConfig {
        method: cfg.embed.method,
        perplexity: cfg.embed.perplexity,
        iterations: cfg.embed.iterations,
        seed: cfg.seed,
        ..EmbedConfig::default()
    };
    embed(&refs, &ec)
}

pub fn run_embedding(cfg: &ExperimentConfig) -> Result<EmbedOutcome> {
    let (vectors, tuned) = functional_vectors(cfg)?;
    let dispersion = dispersion_by_tag(&vectors)?;
    let coords = embed_vectors(&vectors, cfg)?;
    Ok(EmbedOutcome {
        vectors,
        coords,
        dispersion,
        tuned,
    })
}

/// `runIndex,tag,v_0,...,v_{n-1}`.
pub fn vectors_csv(vectors: &[FunctionalVector]) -> Result<String> {
    let len = vectors.first().map_or(0, |v| v.values.len());
    let names: Vec<String> = (0..len).map(|k| format!("v_{k}")).collect();
    let mut header = vec!["runIndex", "tag"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = vectors
        .iter()
        .map(|v| {
            let mut r = vec![v.run_index.to_string(), v.tag.name().to_string()];
            r.extend(v.values.iter().map(|x| format_float(*x)));
            r
        })
        .collect();
    versioned_csv("functional_vectors", &header, &rows)
}

pub fn read_vectors_csv<R: Read>(input: R) -> Result<Vec<FunctionalVector>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let err = |e: csv::Error| Error::invalid(format!("csv read: {e}"));
    let header = rdr.headers().map_err(err)?.clone();
    ensure!(
        header.get(0) == Some("runIndex") && header.get(1) == Some("tag"),
        "functional vector files start with runIndex,tag"
    );
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(err)?;
        let run_index = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad runIndex '{}'", &rec[0])))?;
        let tag: Pipeline = rec[1].trim().parse()?;
        let values = rec
            .iter()
            .skip(2)
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad number '{f}'"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(FunctionalVector { values, tag, run_index });
    }
    Ok(out)
}

pub fn embedding_csv(vectors: &[FunctionalVector], coords: &Matrix) -> Result<String> {
    ensure!(coords.shape() == (vectors.len(), 2), "coordinates must be N x 2");
    let rows: Vec<Vec<String>> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            vec![
                v.run_index.to_string(),
                v.tag.name().to_string(),
                format_float(coords[(i, 0)]),
                format_float(coords[(i, 1)]),
            ]
        })
        .collect();
    versioned_csv("embedding", &["runIndex", "tag", "dim1", "dim2"], &rows)
}

pub fn dispersion_csv(rows: &[(Pipeline, f64)]) -> Result<String> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(t, d)| vec![t.name().to_string(), format_float(*d)])
        .collect();
    versioned_csv("dispersion", &["tag", "dispersion"], &rows)
}

pub fn write_embedding_outputs(
    cfg: &ExperimentConfig,
    vectors: &[FunctionalVector],
    coords: &Matrix,
    dispersion: &[(Pipeline, f64)],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let figure = "functional space embedding";
    let groups: Vec<Series> = METHODS
        .iter()
        .map(|&m| Series {
            name: m.name().to_string(),
            points: vectors
                .iter()
                .enumerate()
                .filter(|(_, v)| v.tag == m)
                .map(|(i, _)| (coords[(i, 0)], coords[(i, 1)]))
                .collect(),
        })
        .collect();
    let files = [
        ("functional_vectors.csv", vectors_csv(vectors)?),
        ("embedding.csv", embedding_csv(vectors, coords)?),
        ("dispersion.csv", dispersion_csv(dispersion)?),
        ("embedding.svg", scatter_chart(figure, &groups)),
        ("config.txt", cfg.to_text()),
    ];
    let listing: Vec<(&str, &str)> = files
        .iter()
        .map(|(n, _)| (*n, if *n == "config.txt" { "-" } else { figure }))
        .collect();
    let extra: Vec<(&str, String)> = vec![
        ("embed_method", cfg.embed.method.name().to_string()),
        ("vectors", vectors.len().to_string()),
    ];
    let man = manifest(cfg, "embed", &listing, &extra);
    let mut written = Vec::new();
    for (name, body) in files.iter() {
        let p = dir.join(name);
        write_atomic(&p, body.as_bytes())?;
        written.push(p);
    }
    let p = dir.join("manifest.txt");
    write_atomic(&p, man.as_bytes())?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_round_trip() {
        let v = vec![
            FunctionalVector {
                values: vec![0.1, -2.5],
                tag: Pipeline::EndToEnd,
                run_index: 0,
            },
            FunctionalVector {
                values: vec![1.0 / 3.0, 7.0],
                tag: Pipeline::FuncReg,
                run_index: 4,
            },
        ];
        let text = vectors_csv(&v).unwrap();
        assert_eq!(read_vectors_csv(text.as_bytes()).unwrap(), v);
    }
}
