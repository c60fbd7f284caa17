use std::fs;

use funcreg_lab::experiment::embedding::{read_vectors_csv, vectors_csv, write_embedding_outputs};
use funcreg_lab::experiment::*;
use funcreg_lab::synthgen::WorldKind;
use funcreg_lab::Error;

const TINY: &str = "
profile = desk
[world]
d = 10
r = 2
[data]
unlabeled = 200
labeled = 40
test = 50
[sweep]
axis = labeledSize
values = 100, 1000
runs = 2
seed = 17
[train]
epochs_pretrain = 3
epochs_finetune = 4
lr_grid = 1e-3, 1e-2
lambda_grid = 1e-3
";

#[test]
fn empty_file_gives_full_scale_defaults() {
    let c = parse_config("").unwrap();
    assert_eq!(c, ExperimentConfig::paper());
    assert_eq!((c.world, c.d, c.r), (WorldKind::AutoEncoder, 100, 30));
    assert_eq!((c.unlabeled, c.test, c.runs), (10_000, 1000, 10));
    assert!(c.labeled.contains(&10_000));
}

#[test]
fn rank_constraint_reported_with_line() {
    let err = parse_config("[world]\nd = 100\nr = 60\n").unwrap_err();
    match err {
        Error::Parse { line, message } => {
            assert_eq!(line, 3);
            assert!(message.contains("r < d/2 violated"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn parse_errors_carry_lines() {
    let cases = [
        ("[world]\nfoo = 1\n", 2),
        ("[world]\nd = ten\n", 2),
        ("[nowhere]\n", 1),
        ("# c\n[data]\ntest = 5\ntest = 6\n", 4),
        ("[world]\nprofile = desk\n", 2),
        ("d = 3\n", 1),
    ];
    for (text, want) in cases {
        match parse_config(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn round_trip() {
    for text in ["", "profile = desk", TINY, "[world]\nkind = masked\nd = 21\nr = 4\n[train]\ntau = 0.5\npipeline = EndToEnd\n"] {
        let c = parse_config(text).unwrap();
        let again = parse_config(&c.to_text()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_text(), again.to_text());
    }
}

#[test]
fn sweep_counting_contract() {
    let cfg = parse_config(TINY).unwrap();
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.rows.len(), 4);
    assert_eq!(out.reductions.len(), 2);
    assert_eq!(out.records.len(), 8);
    let dir = tempfile::tempdir().unwrap();
    write_sweep_outputs(&cfg, &out, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# funcreg-lab v") && lines[0].ends_with("schema=sweep"));
    assert_eq!(lines[1], "axis,axisValue,method,meanTestMSE,stdTestMSE,runs");
    assert_eq!(lines.len() - 2, 4);
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("master_seed=17"));
    assert!(manifest.contains("file=sweep.csv;figure=test MSE vs labeled size"));
    for r in &out.rows {
        assert!(r.std >= 0.0);
        assert_eq!(r.runs + r.failed, 2);
    }
}

fn tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn rerun_is_byte_identical_for_any_job_count() {
    let cfg = parse_config(TINY).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = with_jobs(Some(1), || run_sweep(&cfg)).unwrap().unwrap();
    let out_b = with_jobs(Some(3), || run_sweep(&cfg)).unwrap().unwrap();
    write_sweep_outputs(&cfg, &out_a, a.path()).unwrap();
    write_sweep_outputs(&cfg, &out_b, b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 6);
    assert_eq!(ta, tb);
}

#[test]
fn r_and_d_axes_validate_every_value() {
    let bad = parse_config("[sweep]\naxis = r\nvalues = 5, 60\n[data]\nlabeled = 100\n").unwrap_err();
    assert!(matches!(bad, Error::Parse { line: 3, .. }), "{bad}");
    let ok = parse_config("[world]\nr = 10\n[sweep]\naxis = d\nvalues = 40, 60, 80\n[data]\nlabeled = 100\n").unwrap();
    assert_eq!(ok.axis_points(), vec![(40, 10, 100), (60, 10, 100), (80, 10, 100)]);
}

#[test]
fn small_embedding_experiment() {
    let text = "
profile = desk
[world]
d = 10
r = 2
[train]
epochs_pretrain = 3
epochs_finetune = 5
lr_grid = 1e-3, 1e-2
lambda_grid = 1e-3
[embed]
runs = 6
labeled = 30
unlabeled = 100
test = 20
method = pca
";
    let cfg = parse_config(text).unwrap();
    let out = run_embedding(&cfg).unwrap();
    assert_eq!(out.vectors.len(), 12);
    assert_eq!(out.coords.shape(), (12, 2));
    assert_eq!(out.dispersion.len(), 2);
    assert!(out.dispersion.iter().all(|(_, d)| *d > 0.0));
    let again = run_embedding(&cfg).unwrap();
    assert_eq!(out.vectors, again.vectors);
    let csv = vectors_csv(&out.vectors).unwrap();
    assert_eq!(read_vectors_csv(csv.as_bytes()).unwrap(), out.vectors);
    let dir = tempfile::tempdir().unwrap();
    write_embedding_outputs(&cfg, &out.vectors, &out.coords, &out.dispersion, dir.path()).unwrap();
    let emb = fs::read_to_string(dir.path().join("embedding.csv")).unwrap();
    assert_eq!(emb.lines().nth(1), Some("runIndex,tag,dim1,dim2"));
    let disp = fs::read_to_string(dir.path().join("dispersion.csv")).unwrap();
    assert_eq!(disp.lines().nth(1), Some("tag,dispersion"));
}
