//! Frame masking: intensity-ranked selection, consecutive spans, and the
//! zero / replace / keep sub-random process.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{EmsError, Result};
use crate::rng::{derive_seed, seeded};

/// Probabilities of the three actions applied to a masked frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRatios {
    pub zero: f64,
    pub replace: f64,
    pub keep: f64,
}

impl Default for ActionRatios {
    fn default() -> Self {
        Self { zero: 0.8, replace: 0.1, keep: 0.1 }
    }
}

impl ActionRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.zero, self.replace, self.keep];
        if parts.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(EmsError::invalid(format!("action ratios must be non-negative: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EmsError::invalid(format!("action ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    LowerIndexFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    /// Share of frames to mask, in percent.
    pub k_percent: f64,
    /// Length of each consecutive masked run.
    pub span: usize,
    pub action_ratios: ActionRatios,
    pub tie_rule: TieRule,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { k_percent: 15.0, span: 7, action_ratios: ActionRatios::default(), tie_rule: TieRule::default(), seed: 0 }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        check_percent(self.k_percent)?;
        if self.span == 0 {
            return Err(EmsError::invalid("span must be at least 1"));
        }
        self.action_ratios.validate()
    }
}

fn check_percent(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 100.0) {
        return Err(EmsError::invalid(format!("mask percentage must lie in (0, 100), got {p}")));
    }
    Ok(())
}

/// Number of frames masked for a sequence of `t` frames: `max(1, round(k·T/100))`.
pub fn mask_budget(t: usize, k_percent: f64) -> usize {
    ((k_percent * t as f64 / 100.0).round() as usize).max(1)
}

/// All frame indices ordered by descending score, lower index first on ties.
pub fn rank_frames(scores: &[f64], tie_rule: TieRule) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    match tie_rule {
        TieRule::LowerIndexFirst => order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))),
    }
    order
}

/// Indices of the top `k_percent` frames by score, ascending.
pub fn select_topk_frames(scores: &[f64], k_percent: f64, tie_rule: TieRule) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(EmsError::invalid("cannot select frames from an empty track"));
    }
    check_percent(k_percent)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EmsError::NonFinite("intensity scores".into()));
    }
    let mut picked: Vec<usize> =
        rank_frames(scores, tie_rule).into_iter().take(mask_budget(scores.len(), k_percent)).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Grows each seed rightward into a run of `span` frames (clipped at `t`),
/// consuming seeds in the given priority order and stopping at the first
/// run that would push the union past `budget`. When even the first run
/// is longer than the budget it is cut to `budget` frames, so a positive
/// budget never yields an empty set.
pub fn extend_consecutive(seeds: &[usize], span: usize, t: usize, budget: usize) -> Vec<usize> {
    let span = span.max(1);
    let mut set = BTreeSet::new();
    for &seed in seeds {
        if seed >= t {
            continue;
        }
        let run = seed..(seed + span).min(t);
        let fresh = run.clone().filter(|i| !set.contains(i)).count();
        if set.len() + fresh > budget {
            if set.is_empty() {
                set.extend(seed..seed + budget);
            }
            break;
        }
        set.extend(run);
    }
    set.into_iter().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskAction {
    Zero,
    Replace { source: usize },
    Keep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskEntry {
    pub index: usize,
    pub action: MaskAction,
}

/// The exact masked positions of one sequence and what happens to each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskPlanRecord", into = "MaskPlanRecord")]
pub struct MaskPlan {
    len: usize,
    entries: Vec<MaskEntry>,
    seed: u64,
}

impl MaskPlan {
    pub fn new(len: usize, mut entries: Vec<MaskEntry>, seed: u64) -> Result<Self> {
        entries.sort_by_key(|e| e.index);
        for pair in entries.windows(2) {
            if pair[0].index == pair[1].index {
                return Err(EmsError::invalid(format!("index {} masked twice", pair[0].index)));
            }
        }
        for e in &entries {
            if e.index >= len {
                return Err(EmsError::invalid(format!("masked index {} out of range for T={len}", e.index)));
            }
            if let MaskAction::Replace { source } = e.action {
                if source >= len {
                    return Err(EmsError::invalid(format!("replacement source {source} out of range for T={len}")));
                }
            }
        }
        Ok(Self { len, entries, seed })
    }

    /// A plan that masks nothing.
    pub fn empty(len: usize) -> Self {
        Self { len, entries: Vec::new(), seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    pub fn masked(&self) -> Vec<bool> {
        let mut out = vec![false; self.len];
        for e in &self.entries {
            out[e.index] = true;
        }
        out
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    /// `(zero, replace, keep)` counts.
    pub fn action_counts(&self) -> (usize, usize, usize) {
        self.entries.iter().fold((0, 0, 0), |(z, r, k), e| match e.action {
            MaskAction::Zero => (z + 1, r, k),
            MaskAction::Replace { .. } => (z, r + 1, k),
            MaskAction::Keep => (z, r, k + 1),
        })
    }

    /// Row-source map: `Some(i)` copies input row `i`, `None` writes zeros.
    pub fn row_sources(&self) -> Vec<Option<usize>> {
        let mut rows: Vec<Option<usize>> = (0..self.len).map(Some).collect();
        for e in &self.entries {
            rows[e.index] = match e.action {
                MaskAction::Zero => None,
                MaskAction::Replace { source } => Some(source),
                MaskAction::Keep => Some(e.index),
            };
        }
        rows
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskPlanRecord {
    len: usize,
    seed: u64,
    indices: Vec<usize>,
    actions: Vec<String>,
    sources: Vec<Option<usize>>,
}

impl From<MaskPlan> for MaskPlanRecord {
    fn from(plan: MaskPlan) -> Self {
        let mut rec = MaskPlanRecord {
            len: plan.len,
            seed: plan.seed,
            indices: Vec::new(),
            actions: Vec::new(),
            sources: Vec::new(),
        };
        for e in plan.entries {
            rec.indices.push(e.index);
            let (name, source) = match e.action {
                MaskAction::Zero => ("zero", None),
                MaskAction::Replace { source } => ("replace", Some(source)),
                MaskAction::Keep => ("keep", None),
            };
            rec.actions.push(name.to_string());
            rec.sources.push(source);
        }
        rec
    }
}

impl TryFrom<MaskPlanRecord> for MaskPlan {
    type Error = EmsError;

    fn try_from(rec: MaskPlanRecord) -> Result<Self> {
        if rec.indices.len() != rec.actions.len() || rec.indices.len() != rec.sources.len() {
            return Err(EmsError::MalformedInput("mask plan arrays differ in length".into()));
        }
        let entries = rec
            .indices
            .iter()
            .zip(&rec.actions)
            .zip(&rec.sources)
            .map(|((&index, action), &source)| {
                let action = match (action.as_str(), source) {
                    ("zero", None) => MaskAction::Zero,
                    ("keep", None) => MaskAction::Keep,
                    ("replace", Some(source)) => MaskAction::Replace { source },
                    (other, src) => {
                        return Err(EmsError::MalformedInput(format!("mask action {other:?} with source {src:?}")))
                    }
                };
                Ok(MaskEntry { index, action })
            })
            .collect::<Result<Vec<_>>>()?;
        MaskPlan::new(rec.len, entries, rec.seed)
    }
}

/// Draws an action for every masked index; replacement sources come
/// uniformly from unmasked frames (or from any frame if all are masked).
pub fn assign_actions(mask_set: &[usize], len: usize, ratios: &ActionRatios, seed: u64) -> Result<MaskPlan> {
    ratios.validate()?;
    let mut sorted = mask_set.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let masked: BTreeSet<usize> = sorted.iter().copied().collect();
    let unmasked: Vec<usize> = (0..len).filter(|i| !masked.contains(i)).collect();
    let mut rng = seeded(seed);
    let entries = sorted
        .into_iter()
        .map(|index| {
            let u: f64 = rng.random();
            let action = if u < ratios.zero {
                MaskAction::Zero
            } else if u < ratios.zero + ratios.replace {
                let source = if unmasked.is_empty() {
                    rng.random_range(0..len)
                } else {
                    unmasked[rng.random_range(0..unmasked.len())]
                };
                MaskAction::Replace { source }
            } else {
                MaskAction::Keep
            };
            MaskEntry { index, action }
        })
        .collect();
    MaskPlan::new(len, entries, seed)
}

/// Returns a masked copy of `frames`.
pub fn apply_mask_plan(frames: &Mat, plan: &MaskPlan) -> Result<Mat> {
    if plan.len() != frames.nrows() {
        return Err(EmsError::dims(format!("plan covers {} frames, input has {}", plan.len(), frames.nrows())));
    }
    let mut out = frames.clone();
    for e in plan.entries() {
        match e.action {
            MaskAction::Zero => out.row_mut(e.index).fill(0.0),
            MaskAction::Replace { source } => out.row_mut(e.index).assign(&frames.row(source)),
            MaskAction::Keep => {}
        }
    }
    Ok(out)
}

/// Intensity-guided plan: frames ranked by score seed consecutive runs until
/// the `k_percent` budget is reached, then the sub-random process assigns
/// actions.
pub fn ems_mask_plan(scores: &[f64], cfg: &MaskConfig) -> Result<MaskPlan> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(EmsError::invalid("cannot mask an empty sequence"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EmsError::NonFinite("intensity scores".into()));
    }
    let t = scores.len();
    let seeds = rank_frames(scores, cfg.tie_rule);
    let set = extend_consecutive(&seeds, cfg.span, t, mask_budget(t, cfg.k_percent));
    assign_actions(&set, t, &cfg.action_ratios, derive_seed(cfg.seed, &[1]))
}

/// Baseline plan: same budget, span and action machinery, with seed
/// positions drawn uniformly at random.
pub fn uniform_mask_plan(t: usize, p_percent: f64, span: usize, ratios: &ActionRatios, seed: u64) -> Result<MaskPlan> {
    check_percent(p_percent)?;
    if t == 0 {
        return Err(EmsError::invalid("cannot mask an empty sequence"));
    }
    let mut seeds: Vec<usize> = (0..t).collect();
    seeds.shuffle(&mut seeded(derive_seed(seed, &[0])));
    let set = extend_consecutive(&seeds, span, t, mask_budget(t, p_percent));
    assign_actions(&set, t, ratios, derive_seed(seed, &[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    const LOWER: TieRule = TieRule::LowerIndexFirst;

    #[test]
    fn topk_examples() {
        let s = [0.9, 0.1, 0.5, 0.7];
        assert_eq!(select_topk_frames(&s, 25.0, LOWER).unwrap(), vec![0]);
        assert_eq!(select_topk_frames(&s, 50.0, LOWER).unwrap(), vec![0, 3]);
        assert_eq!(select_topk_frames(&[0.5; 4], 50.0, LOWER).unwrap(), vec![0, 1]);
    }

    #[test]
    fn topk_rejects_bad_input() {
        assert!(select_topk_frames(&[], 10.0, LOWER).is_err());
        assert!(select_topk_frames(&[0.1], 0.0, LOWER).is_err());
        assert!(select_topk_frames(&[0.1], 100.0, LOWER).is_err());
        assert!(select_topk_frames(&[f64::NAN, 0.2], 50.0, LOWER).is_err());
    }

    #[test]
    fn budget_never_drops_below_one() {
        assert_eq!(mask_budget(1, 15.0), 1);
        assert_eq!(mask_budget(3, 15.0), 1);
        assert_eq!(mask_budget(100, 15.0), 15);
        assert_eq!(mask_budget(10, 25.0), 3);
    }

    #[test]
    fn extend_examples() {
        assert_eq!(extend_consecutive(&[4, 1, 7], 1, 10, 3), vec![1, 4, 7]);
        assert_eq!(extend_consecutive(&[5, 0, 1], 3, 10, 3), vec![5, 6, 7]);
        // a single seed at the last frame is clipped to a run of one
        assert_eq!(extend_consecutive(&[8], 3, 9, 3), vec![8]);
    }

    #[test]
    fn extend_stops_before_overflow() {
        // runs {2,3,4}, then {3,4,5} adds one (size 4), then {8,9,10} would make 7 > 5
        assert_eq!(extend_consecutive(&[2, 3, 8, 0], 3, 12, 5), vec![2, 3, 4, 5]);
    }

    #[test]
    fn first_run_is_cut_to_a_small_budget() {
        assert_eq!(extend_consecutive(&[4, 0], 7, 20, 2), vec![4, 5]);
        assert_eq!(extend_consecutive(&[4], 7, 20, 0), Vec::<usize>::new());
    }

    #[test]
    fn degenerate_action_ratios() {
        let all: Vec<usize> = (0..20).collect();
        let zero = ActionRatios { zero: 1.0, replace: 0.0, keep: 0.0 };
        let plan = assign_actions(&all, 20, &zero, 3).unwrap();
        assert!(plan.entries().iter().all(|e| e.action == MaskAction::Zero));

        let keep = ActionRatios { zero: 0.0, replace: 0.0, keep: 1.0 };
        let plan = assign_actions(&[1, 4, 5], 8, &keep, 3).unwrap();
        let frames = Array2::from_shape_fn((8, 3), |(i, j)| (i * 3 + j) as f64);
        assert_eq!(apply_mask_plan(&frames, &plan).unwrap(), frames);
    }

    #[test]
    fn invalid_ratios_are_rejected() {
        let bad = ActionRatios { zero: 0.8, replace: 0.1, keep: 0.2 };
        assert!(assign_actions(&[0], 2, &bad, 0).is_err());
        let neg = ActionRatios { zero: 1.1, replace: -0.1, keep: 0.0 };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn replacement_sources_avoid_masked_frames() {
        let ratios = ActionRatios { zero: 0.0, replace: 1.0, keep: 0.0 };
        let masked: Vec<usize> = (0..30).step_by(2).collect();
        let plan = assign_actions(&masked, 30, &ratios, 11).unwrap();
        for e in plan.entries() {
            let MaskAction::Replace { source } = e.action else { panic!("expected replace") };
            assert!(source % 2 == 1);
        }
        // every frame masked: sources fall back to any index
        let all: Vec<usize> = (0..5).collect();
        let plan = assign_actions(&all, 5, &ratios, 11).unwrap();
        assert_eq!(plan.action_counts(), (0, 5, 0));
    }

    #[test]
    fn apply_plan_semantics() {
        let frames = Array2::from_shape_fn((4, 2), |(i, j)| (10 * i + j) as f64);
        assert_eq!(apply_mask_plan(&frames, &MaskPlan::empty(4)).unwrap(), frames);

        let all_zero =
            MaskPlan::new(4, (0..4).map(|index| MaskEntry { index, action: MaskAction::Zero }).collect(), 0).unwrap();
        assert!(apply_mask_plan(&frames, &all_zero).unwrap().iter().all(|&v| v == 0.0));

        let replace =
            MaskPlan::new(4, vec![MaskEntry { index: 2, action: MaskAction::Replace { source: 0 } }], 0).unwrap();
        let out = apply_mask_plan(&frames, &replace).unwrap();
        assert_eq!(out.row(2), frames.row(0));
        assert_eq!(out.row(1), frames.row(1));
        assert_eq!(frames[[2, 0]], 20.0, "input must not be mutated");

        assert!(apply_mask_plan(&frames, &MaskPlan::empty(5)).is_err());
        assert!(MaskPlan::new(4, vec![MaskEntry { index: 4, action: MaskAction::Zero }], 0).is_err());
    }

    #[test]
    fn uniform_budget_and_determinism() {
        let r = ActionRatios::default();
        let plan = uniform_mask_plan(100, 15.0, 1, &r, 5).unwrap();
        assert_eq!(plan.masked_indices().len(), 15);
        assert_eq!(plan, uniform_mask_plan(100, 15.0, 1, &r, 5).unwrap());
        assert_ne!(plan, uniform_mask_plan(100, 15.0, 1, &r, 6).unwrap());
    }

    #[test]
    fn ems_plan_masks_highest_scores() {
        let scores: Vec<f64> = (0..20).map(|i| if (8..11).contains(&i) { 1.0 } else { 0.1 * (i % 3) as f64 }).collect();
        let cfg = MaskConfig { k_percent: 15.0, span: 1, ..MaskConfig::default() };
        assert_eq!(ems_mask_plan(&scores, &cfg).unwrap().masked_indices(), vec![8, 9, 10]);
        let cfg = MaskConfig { k_percent: 15.0, span: 3, ..MaskConfig::default() };
        assert_eq!(ems_mask_plan(&scores, &cfg).unwrap().masked_indices(), vec![8, 9, 10]);
    }

    #[test]
    fn plan_json_round_trip() {
        let plan = uniform_mask_plan(50, 30.0, 3, &ActionRatios::default(), 9).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        assert!(json.contains("\"indices\"") && json.contains("\"sources\""));
        let back: MaskPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
        let broken = r#"{"len":3,"seed":0,"indices":[1],"actions":["replace"],"sources":[null]}"#;
        assert!(serde_json::from_str::<MaskPlan>(broken).is_err());
    }

    proptest! {
        #[test]
        fn unit_span_output_equals_input(seeds in proptest::collection::btree_set(0usize..60, 0..30)) {
            let seeds: Vec<usize> = seeds.into_iter().collect();
            let out = extend_consecutive(&seeds, 1, 60, seeds.len());
            prop_assert_eq!(out, seeds);
        }

        #[test]
        fn extended_size_within_one_span_of_budget(t in 1usize..300, k in 1.0f64..99.0, span in 1usize..12, seed in any::<u64>()) {
            let plan = uniform_mask_plan(t, k, span, &ActionRatios::default(), seed).unwrap();
            let budget = mask_budget(t, k);
            let n = plan.masked_indices().len();
            prop_assert!(n <= budget);
            prop_assert!(n + span > budget, "n={} budget={} span={}", n, budget, span);
        }

        #[test]
        fn plans_are_pure(scores in proptest::collection::vec(0.0f64..1.0, 1..80), seed in any::<u64>()) {
            let cfg = MaskConfig { k_percent: 25.0, span: 3, seed, ..MaskConfig::default() };
            let copy = scores.clone();
            let a = ems_mask_plan(&scores, &cfg).unwrap();
            prop_assert_eq!(&scores, &copy);
            prop_assert_eq!(a, ems_mask_plan(&scores, &cfg).unwrap());
        }
    }
}
