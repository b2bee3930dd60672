#![allow(dead_code)]

pub mod checks;

use mavdesign::design::ApproximateDesign;
use mavdesign::presets;
use mavdesign::types::{CandidateModel, ModelKind};
use proptest::prelude::*;

pub const FAMILIES: [ModelKind; 4] = [ModelKind::LogLinear, ModelKind::Emax, ModelKind::Exponential, ModelKind::Quadratic];

/// Mean parameters that keep every kind well defined and increasing-ish on
/// the dose range.
pub fn vartheta(kind: ModelKind) -> BoxedStrategy<Vec<f64>> {
    match kind {
        ModelKind::Constant => (-1.0..1.0f64).prop_map(|a| vec![a]).boxed(),
        ModelKind::Linear => (-1.0..1.0f64, 0.001..0.01f64).prop_map(|(a, b)| vec![a, b]).boxed(),
        ModelKind::LogLinear => (-0.5..0.5f64, 0.04..0.15f64, 0.5..20.0f64)
            .prop_map(|(a, b, c)| vec![a, b, c])
            .boxed(),
        ModelKind::Emax => (-0.5..0.5f64, 0.3..0.8f64, 8.0..60.0f64)
            .prop_map(|(a, b, c)| vec![a, b, c])
            .boxed(),
        ModelKind::Exponential => (-0.2..0.2f64, 0.05..0.15f64, 50.0..150.0f64)
            .prop_map(|(a, b, c)| vec![a, b, c])
            .boxed(),
        ModelKind::Quadratic => (-0.5..0.5f64, 0.004..0.008f64, 0.8..1.2f64)
            .prop_map(|(a, b, f)| vec![a, b, f * presets::QUADRATIC_CURVATURE])
            .boxed(),
    }
}

pub fn model_of(kind: ModelKind) -> BoxedStrategy<CandidateModel> {
    (vartheta(kind), 0.05..0.5f64)
        .prop_map(move |(t, s2)| CandidateModel::on_space(kind, t, s2, &presets::dose_space()).unwrap())
        .boxed()
}

pub fn family() -> impl Strategy<Value = ModelKind> {
    prop::sample::select(FAMILIES.to_vec())
}

pub fn any_kind() -> impl Strategy<Value = ModelKind> {
    prop::sample::select(ModelKind::ALL.to_vec())
}

pub fn model() -> BoxedStrategy<CandidateModel> {
    family().prop_flat_map(model_of).boxed()
}

pub fn any_model() -> BoxedStrategy<CandidateModel> {
    any_kind().prop_flat_map(model_of).boxed()
}

/// `k` distinct doses (at least 5 apart) with weights bounded away from 0.
/// The first dose is placebo, as in every dose-finding design.
pub fn design_with(k: std::ops::RangeInclusive<usize>) -> BoxedStrategy<ApproximateDesign> {
    k.prop_flat_map(|k| (prop::collection::vec(0.0..1.0f64, k), prop::collection::vec(0.1..1.0f64, k)))
        .prop_map(|(u, w)| {
            let k = u.len();
            // Spread the points over k equal cells so they stay distinct.
            let cell = 150.0 / k as f64;
            let points: Vec<f64> = u
                .iter()
                .enumerate()
                .map(|(i, u)| if i == 0 { 0.0 } else { i as f64 * cell + u * (cell - 5.0) })
                .collect();
            ApproximateDesign::normalized(points, w, &presets::dose_space()).unwrap()
        })
        .boxed()
}

pub fn design() -> BoxedStrategy<ApproximateDesign> {
    design_with(4..=7)
}

/// Max-norm of `a - b` relative to `max(1, |b|)`.
pub fn rel_gap(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}
