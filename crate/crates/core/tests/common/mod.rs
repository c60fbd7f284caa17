#![allow(dead_code)]

use funcreg_lab::models::*;
use funcreg_lab::numkit::{Matrix, RngStream};
use funcreg_lab::synthgen::Dataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossCase {
    Prediction,
    AeReconstruction,
    MaskedFirstCoord,
    Lp(f64),
    OrthoEncoder,
    OrthoDecoder,
    /// Prediction + weighted reconstruction + both orthonormal penalties.
    Combined,
}

pub const LINEAR_AE_CASES: [LossCase; 7] = [
    LossCase::Prediction,
    LossCase::AeReconstruction,
    LossCase::Lp(2.0),
    LossCase::Lp(3.0),
    LossCase::OrthoEncoder,
    LossCase::OrthoDecoder,
    LossCase::Combined,
];

pub const MASKED_CASES: [LossCase; 5] = [
    LossCase::Prediction,
    LossCase::MaskedFirstCoord,
    LossCase::Lp(1.5),
    LossCase::OrthoEncoder,
    LossCase::Combined,
];

fn objective(kind: Architecture, case: LossCase) -> Objective {
    let ortho = |decoder, encoder| OrthoWeights { decoder, encoder };
    let reg = match kind {
        Architecture::LinearAe => RegKind::AeReconstruction,
        Architecture::MaskedQuad => RegKind::MaskedFirstCoord,
    };
    match case {
        LossCase::Prediction => Objective::supervised(),
        LossCase::AeReconstruction => Objective::pretraining(RegKind::AeReconstruction, ortho(0.0, 0.0)),
        LossCase::MaskedFirstCoord => Objective::pretraining(RegKind::MaskedFirstCoord, ortho(0.0, 0.0)),
        LossCase::Lp(p) => Objective::pretraining(RegKind::LpPenalty(p), ortho(0.0, 0.0)),
        LossCase::OrthoEncoder => Objective {
            prediction: 0.0,
            regularization: None,
            ortho: ortho(0.0, 0.7),
        },
        LossCase::OrthoDecoder => Objective {
            prediction: 0.0,
            regularization: None,
            ortho: ortho(0.4, 0.0),
        },
        LossCase::Combined => Objective {
            prediction: 1.0,
            regularization: Some((reg, 0.3)),
            ortho: if kind == Architecture::LinearAe {
                ortho(0.2, 0.1)
            } else {
                ortho(0.0, 0.1)
            },
        },
    }
}

/// Random small model plus labeled and unlabeled batches.
pub fn random_instance(kind: Architecture, rng: &mut RngStream) -> (Model, Dataset, Dataset) {
    let d = 3 + rng.index(6);
    let r = 1 + rng.index(d - 1);
    let n = 1 + rng.index(6);
    let masked = kind == Architecture::MaskedQuad;
    let w = Matrix::from_fn(r, d, |_, _| 0.6 * rng.standard_normal());
    let a: Vec<f64> = (0..r).map(|_| rng.standard_normal()).collect();
    let decoder = (kind == Architecture::LinearAe).then(|| Decoder {
        v: Matrix::from_fn(d, r, |_, _| 0.6 * rng.standard_normal()),
    });
    let model = Model::new(ReprMap::new(kind, w, masked), Predictor { a }, decoder).unwrap();
    let x = Matrix::from_fn(n, d, |_, _| rng.standard_normal());
    let y: Vec<f64> = (0..n).map(|_| 2.0 * rng.standard_normal()).collect();
    let labeled = Dataset::new(x, Some(y)).unwrap();
    let u = Matrix::from_fn(n + 2, d, |_, _| rng.standard_normal());
    let unlabeled = Dataset::new(u, None).unwrap();
    (model, labeled, unlabeled)
}

fn norm(blocks: &[&[f64]]) -> f64 {
    blocks.iter().flat_map(|b| b.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Relative error `||analytic - numeric|| / max(||analytic||, ||numeric||)`
/// of one random instance. Pinned parameters (column 0 of a masked `W`)
/// are excluded from the numeric side.
pub fn gradient_rel_error(kind: Architecture, case: LossCase, rng: &mut RngStream) -> f64 {
    let (model, labeled, unlabeled) = random_instance(kind, rng);
    let obj = objective(kind, case);
    let lb = Batch::full(&labeled);
    let ub = Batch::full(&unlabeled);
    let analytic = gradients(&model, &obj, Some(lb), Some(ub)).unwrap();
    let mut numeric = finite_diff_grad(|m| obj.value(m, Some(lb), Some(ub)).unwrap(), &model, 1e-6);
    if model.repr.masked {
        for i in 0..model.r() {
            numeric.w[(i, 0)] = 0.0;
        }
    }
    let diff: Vec<Vec<f64>> = analytic
        .blocks()
        .iter()
        .zip(numeric.blocks())
        .map(|(a, n)| a.iter().zip(n).map(|(x, y)| x - y).collect())
        .collect();
    let diff_refs: Vec<&[f64]> = diff.iter().map(Vec::as_slice).collect();
    let scale = norm(&analytic.blocks()).max(norm(&numeric.blocks()));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff_refs) / scale
    }
}
