//! The three experiment families: average augmentation with fine-tuning,
//! MTU vulnerability of an original-trained model, and MTU hardening.

use std::collections::BTreeMap;
use std::thread;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use flowforge_core::augment::{average_augment_by_class, mtu_augment_dataset, AverageConfig, MtuConfig};
use flowforge_core::classifier::{fine_tune, train, ModelState, NetworkSpec, TrainConfig, TrainHistory};
use flowforge_core::eval::{evaluate, Averaging, MetricsReport};
use flowforge_core::flow::{read_flows, render_flows, split_dataset, Dataset, Flow, Origin};
use flowforge_core::flowpic::{build_input_pic, encode_archive, FlowPic};
use flowforge_core::preprocess::{apply_filters, truncate_to_window, FilterReport};
use flowforge_core::rng::derive_seed;
use flowforge_core::synth::generate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ExperimentId};

const SPLIT: u64 = 1;
const INIT: u64 = 2;
const TRAIN: u64 = 3;
const AVERAGE: u64 = 4;
const MTU_TRAIN: u64 = 5;
const MTU_VAL: u64 = 6;
const MTU_TEST: u64 = 7;
const PRETRAIN: u64 = 8;
const FINETUNE: u64 = 9;

pub const ORIGINAL_TEST: &str = "original_test";
pub const MTU_TEST_SET: &str = "mtu_test";

/// Summary of one set of samples an arm trained or was evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetDescriptor {
    pub name: String,
    pub samples: usize,
    pub by_origin: BTreeMap<String, usize>,
    /// Hash of the samples themselves.
    pub sha256: String,
    /// For test sets: hash of the original test flows the set was built from.
    /// Equal across arms that share test membership.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membership_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub model: String,
    pub train: Vec<SetDescriptor>,
    pub test: SetDescriptor,
    pub weighted: MetricsReport,
    #[serde(rename = "macro")]
    pub macro_avg: MetricsReport,
    pub phases: Vec<TrainHistory>,
}

impl ArmReport {
    pub fn metrics(&self, averaging: Averaging) -> &MetricsReport {
        match averaging {
            Averaging::Weighted => &self.weighted,
            Averaging::Macro => &self.macro_avg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub baseline: String,
    pub candidate: String,
    /// Weighted F1 of the candidate minus that of the baseline.
    pub f1_delta: f64,
    pub macro_f1_delta: f64,
}

/// Origin scan over every test set used by an experiment.
///
/// Test sets are flows, and a flow can never carry the average-augmented
/// origin, so averaged pics cannot reach a test set by construction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LeakAudit {
    pub test_sets_scanned: usize,
    pub samples_scanned: usize,
    /// Augmented samples found among the original test flows.
    pub augmented_in_original: usize,
    /// Transformed test samples that do not trace back to their original test flow.
    pub untraceable: usize,
}

impl LeakAudit {
    pub fn passed(&self) -> bool {
        self.augmented_in_original == 0 && self.untraceable == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub id: ExperimentId,
    pub arms: Vec<ArmReport>,
    pub comparisons: Vec<Comparison>,
    pub classes: Vec<String>,
    pub dataset_sha256: String,
    pub filter: FilterReport,
    pub audit: LeakAudit,
    pub config: ExperimentConfig,
    pub wall_clock_s: f64,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }

    /// Equality of everything except wall-clock time and the output path.
    pub fn same_results(&self, other: &ExperimentReport) -> bool {
        let strip = |r: &ExperimentReport| {
            let mut r = r.clone();
            r.wall_clock_s = 0.0;
            r.config.out = None;
            r
        };
        strip(self) == strip(other)
    }
}

/// Filtered, split and windowed flows shared by every arm.
struct Prepared {
    classes: Vec<String>,
    dataset_sha256: String,
    filter: FilterReport,
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn flows_sha256(ds: &Dataset) -> String {
    let mut buf = Vec::new();
    render_flows(ds, &mut buf).expect("writing to memory");
    sha256_hex(&buf)
}

fn origin_counts<'a>(origins: impl Iterator<Item = Origin> + 'a) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for o in origins {
        *counts.entry(o.as_str().to_string()).or_insert(0) += 1;
    }
    counts
}

fn describe_flows(name: &str, ds: &Dataset, membership: Option<&Dataset>) -> SetDescriptor {
    SetDescriptor {
        name: name.into(),
        samples: ds.len(),
        by_origin: origin_counts(ds.flows().iter().map(Flow::origin)),
        sha256: flows_sha256(ds),
        membership_sha256: membership.map(flows_sha256),
    }
}

fn describe_pics(name: &str, pics: &[FlowPic]) -> Result<SetDescriptor> {
    Ok(SetDescriptor {
        name: name.into(),
        samples: pics.len(),
        by_origin: origin_counts(pics.iter().map(FlowPic::origin)),
        sha256: sha256_hex(&encode_archive(pics)?),
        membership_sha256: None,
    })
}

fn window(ds: &Dataset, window_s: f64) -> Result<Dataset> {
    ds.flows()
        .iter()
        .map(|f| Ok(truncate_to_window(f, window_s)?))
        .collect()
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let raw = match &cfg.dataset {
        Some(path) => read_flows(path)?,
        None => generate(&cfg.synth)?,
    };
    let (filtered, filter) = apply_filters(&raw, &cfg.filter);
    ensure!(!filtered.is_empty(), "no flows survive the filters");
    let split = split_dataset(&filtered, derive_seed(cfg.seed, &[SPLIT])).context("splitting dataset")?;
    let w = cfg.filter.window_s;
    Ok(Prepared {
        classes: filtered.classes().to_vec(),
        dataset_sha256: flows_sha256(&raw),
        filter,
        train: window(&split.train, w)?,
        val: window(&split.val, w)?,
        test: window(&split.test, w)?,
    })
}

fn pics(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<FlowPic>> {
    ds.flows().iter().map(|f| Ok(build_input_pic(f, &cfg.pic)?)).collect()
}

fn train_cfg(cfg: &ExperimentConfig, stream: u64) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, &[stream, cfg.train.seed]),
        ..cfg.train
    }
}

fn mtu_cfg(cfg: &ExperimentConfig, stream: u64) -> MtuConfig {
    MtuConfig {
        seed: derive_seed(cfg.seed, &[stream, cfg.mtu.seed]),
        ..cfg.mtu
    }
}

fn fresh_model(classes: &[String], cfg: &ExperimentConfig, stream: u64) -> Result<ModelState> {
    let spec = NetworkSpec::lenet5(classes.len());
    Ok(ModelState::new(
        spec,
        classes.to_vec(),
        derive_seed(cfg.seed, &[INIT, stream]),
    )?)
}

fn train_from_scratch(
    p: &Prepared,
    cfg: &ExperimentConfig,
    train_pics: &[FlowPic],
    val_pics: &[FlowPic],
) -> Result<(ModelState, TrainHistory)> {
    let model = fresh_model(&p.classes, cfg, TRAIN)?;
    Ok(train(&model, train_pics, val_pics, &train_cfg(cfg, TRAIN))?)
}

fn score(model: &ModelState, classes: &[String], test: &[FlowPic]) -> Result<(MetricsReport, MetricsReport)> {
    let predicted = model.predict(test)?;
    let truth: Vec<&str> = test.iter().map(FlowPic::label).collect();
    Ok((
        evaluate(classes, &truth, &predicted, Averaging::Weighted)?,
        evaluate(classes, &truth, &predicted, Averaging::Macro)?,
    ))
}

struct TestSet<'a> {
    descriptor: SetDescriptor,
    pics: &'a [FlowPic],
}

fn arm(
    name: &str,
    model_name: &str,
    model: &ModelState,
    train: Vec<SetDescriptor>,
    phases: Vec<TrainHistory>,
    test: &TestSet,
    classes: &[String],
) -> Result<ArmReport> {
    let (weighted, macro_avg) = score(model, classes, test.pics)?;
    Ok(ArmReport {
        name: name.into(),
        model: model_name.into(),
        train,
        test: test.descriptor.clone(),
        weighted,
        macro_avg,
        phases,
    })
}

fn compare(name: &str, arms: &[ArmReport], baseline: &str, candidate: &str) -> Comparison {
    let find = |n: &str| arms.iter().find(|a| a.name == n).expect("arm exists");
    let (b, c) = (find(baseline), find(candidate));
    Comparison {
        name: name.into(),
        baseline: baseline.into(),
        candidate: candidate.into(),
        f1_delta: c.weighted.f1 - b.weighted.f1,
        macro_f1_delta: c.macro_avg.f1 - b.macro_avg.f1,
    }
}

/// Scans the original test flows and every transformed view of them.
///
/// A view sample must keep its original's label, timestamps and byte total,
/// which is what fragmenting that one flow preserves.
pub fn audit_test_sets(original: &Dataset, views: &[&Dataset]) -> LeakAudit {
    let mut audit = LeakAudit {
        test_sets_scanned: 1 + views.len(),
        samples_scanned: original.len(),
        ..Default::default()
    };
    audit.augmented_in_original = original.flows().iter().filter(|f| f.origin().is_augmented()).count();
    for view in views {
        audit.samples_scanned += view.len();
        if view.len() != original.len() {
            audit.untraceable += view.len();
            continue;
        }
        for (v, o) in view.flows().iter().zip(original.flows()) {
            let same_times = {
                let mut a: Vec<f64> = v.packets().iter().map(|p| p.time).collect();
                let mut b: Vec<f64> = o.packets().iter().map(|p| p.time).collect();
                a.dedup();
                b.dedup();
                a == b
            };
            if v.label() != o.label() || v.total_bytes() != o.total_bytes() || !same_times {
                audit.untraceable += 1;
            }
        }
    }
    audit
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    match cfg.id {
        ExperimentId::AvgComparison => run_avg_comparison(cfg),
        ExperimentId::MtuVulnerability => run_mtu_vulnerability(cfg),
        ExperimentId::MtuHardening => run_mtu_hardening(cfg),
    }
}

fn finish(
    cfg: &ExperimentConfig,
    p: Prepared,
    arms: Vec<ArmReport>,
    comparisons: Vec<Comparison>,
    audit: LeakAudit,
    start: Instant,
) -> Result<ExperimentReport> {
    let membership: Vec<_> = arms.iter().map(|a| &a.test.membership_sha256).collect();
    ensure!(
        membership.windows(2).all(|w| w[0] == w[1]),
        "arms disagree on test-set membership"
    );
    ensure!(audit.passed(), "leak audit failed: {audit:?}");
    Ok(ExperimentReport {
        id: cfg.id,
        arms,
        comparisons,
        classes: p.classes,
        dataset_sha256: p.dataset_sha256,
        filter: p.filter,
        audit,
        config: cfg.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Arm A trains on original pics. Arm B pretrains on Average-m pics of the
/// same train split, then fine-tunes on the original train pics. Both are
/// scored on the original test split.
pub fn run_avg_comparison(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let p = prepare(cfg)?;
    let (train_pics, val_pics, test_pics) = (pics(&p.train, cfg)?, pics(&p.val, cfg)?, pics(&p.test, cfg)?);
    let avg_cfg = AverageConfig {
        seed: derive_seed(cfg.seed, &[AVERAGE, cfg.average.seed]),
        ..cfg.average
    };
    let mut pretrain_pics = average_augment_by_class(&train_pics, &avg_cfg)?;
    if cfg.finetune.pretrain_include_original {
        pretrain_pics.extend(train_pics.iter().cloned());
    }

    let (a, b) = thread::scope(|s| {
        let a = s.spawn(|| train_from_scratch(&p, cfg, &train_pics, &val_pics));
        let b = s.spawn(|| -> Result<_> {
            let base = fresh_model(&p.classes, cfg, PRETRAIN)?;
            let (pretrained, pre_hist) = train(&base, &pretrain_pics, &val_pics, &train_cfg(cfg, PRETRAIN))?;
            let out = fine_tune(
                &pretrained,
                &train_pics,
                &val_pics,
                &train_cfg(cfg, FINETUNE),
                &cfg.finetune.head(),
            )?;
            Ok((out.state, vec![pre_hist, out.frozen_phase, out.unfrozen_phase]))
        });
        (a.join().expect("arm A thread"), b.join().expect("arm B thread"))
    });
    let (model_a, hist_a) = a?;
    let (model_b, phases_b) = b?;

    let test = TestSet {
        descriptor: describe_flows(ORIGINAL_TEST, &p.test, Some(&p.test)),
        pics: &test_pics,
    };
    let train_desc = describe_flows("original_train", &p.train, None);
    let pretrain_name = format!("average_{}_pretrain", cfg.average.m);
    let arms = vec![
        arm(
            "original",
            "original",
            &model_a,
            vec![train_desc.clone()],
            vec![hist_a],
            &test,
            &p.classes,
        )?,
        arm(
            &format!("average_{}_finetuned", cfg.average.m),
            &format!("average_{}_pretrained_finetuned", cfg.average.m),
            &model_b,
            vec![describe_pics(&pretrain_name, &pretrain_pics)?, train_desc],
            phases_b,
            &test,
            &p.classes,
        )?,
    ];
    let comparisons = vec![compare("average_finetune_gain", &arms, &arms[0].name, &arms[1].name)];
    let audit = audit_test_sets(&p.test, &[]);
    finish(cfg, p, arms, comparisons, audit, start)
}

/// One original-trained model scored on the original test split and on the
/// same flows fragmented at randomly drawn smaller MTUs.
pub fn run_mtu_vulnerability(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let p = prepare(cfg)?;
    let (train_pics, val_pics) = (pics(&p.train, cfg)?, pics(&p.val, cfg)?);
    let mtu_test = mtu_augment_dataset(&p.test, &mtu_cfg(cfg, MTU_TEST))?;
    let (orig_pics, mtu_pics) = (pics(&p.test, cfg)?, pics(&mtu_test, cfg)?);
    let (model, hist) = train_from_scratch(&p, cfg, &train_pics, &val_pics)?;

    let train_desc = vec![describe_flows("original_train", &p.train, None)];
    let tests = [
        TestSet {
            descriptor: describe_flows(ORIGINAL_TEST, &p.test, Some(&p.test)),
            pics: &orig_pics,
        },
        TestSet {
            descriptor: describe_flows(MTU_TEST_SET, &mtu_test, Some(&p.test)),
            pics: &mtu_pics,
        },
    ];
    let arms = tests
        .iter()
        .map(|t| {
            let name = format!("original_on_{}", t.descriptor.name);
            arm(
                &name,
                "original",
                &model,
                train_desc.clone(),
                vec![hist.clone()],
                t,
                &p.classes,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let comparisons = vec![compare("mtu_drop", &arms, &arms[0].name, &arms[1].name)];
    let audit = audit_test_sets(&p.test, &[&mtu_test]);
    finish(cfg, p, arms, comparisons, audit, start)
}

/// M1 trains on original flows; M2 on the original flows plus one
/// MTU-fragmented copy of each (validation likewise). Both are scored on the
/// original and the MTU-fragmented test split.
pub fn run_mtu_hardening(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let p = prepare(cfg)?;
    let (train_pics, val_pics) = (pics(&p.train, cfg)?, pics(&p.val, cfg)?);
    let joined = |base: &Dataset, stream| -> Result<Dataset> {
        let extra = mtu_augment_dataset(base, &mtu_cfg(cfg, stream))?;
        Ok(base.flows().iter().chain(extra.flows()).cloned().collect())
    };
    let train2 = joined(&p.train, MTU_TRAIN)?;
    let val2 = joined(&p.val, MTU_VAL)?;
    let (train2_pics, val2_pics) = (pics(&train2, cfg)?, pics(&val2, cfg)?);
    ensure!(
        train2.len() == 2 * p.train.len(),
        "original+mtu train set must double the original"
    );

    let mtu_test = mtu_augment_dataset(&p.test, &mtu_cfg(cfg, MTU_TEST))?;
    let (orig_pics, mtu_pics) = (pics(&p.test, cfg)?, pics(&mtu_test, cfg)?);

    let (m1, m2) = thread::scope(|s| {
        let m1 = s.spawn(|| train_from_scratch(&p, cfg, &train_pics, &val_pics));
        let m2 = s.spawn(|| train_from_scratch(&p, cfg, &train2_pics, &val2_pics));
        (m1.join().expect("M1 thread"), m2.join().expect("M2 thread"))
    });
    let (m1, h1) = m1?;
    let (m2, h2) = m2?;

    let tests = [
        TestSet {
            descriptor: describe_flows(ORIGINAL_TEST, &p.test, Some(&p.test)),
            pics: &orig_pics,
        },
        TestSet {
            descriptor: describe_flows(MTU_TEST_SET, &mtu_test, Some(&p.test)),
            pics: &mtu_pics,
        },
    ];
    let models = [
        ("original", &m1, describe_flows("original_train", &p.train, None), h1),
        (
            "original_mtu",
            &m2,
            describe_flows("original_mtu_train", &train2, None),
            h2,
        ),
    ];
    let mut arms = Vec::new();
    for (model_name, model, train_desc, hist) in &models {
        for t in &tests {
            let name = format!("{model_name}_on_{}", t.descriptor.name);
            arms.push(arm(
                &name,
                model_name,
                model,
                vec![train_desc.clone()],
                vec![hist.clone()],
                t,
                &p.classes,
            )?);
        }
    }
    let comparisons = vec![
        compare(
            "mtu_recovery",
            &arms,
            "original_on_mtu_test",
            "original_mtu_on_mtu_test",
        ),
        compare(
            "original_cost",
            &arms,
            "original_on_original_test",
            "original_mtu_on_original_test",
        ),
    ];
    let audit = audit_test_sets(&p.test, &[&mtu_test]);
    finish(cfg, p, arms, comparisons, audit, start)
}

#[cfg(test)]
mod tests {
    use flowforge_core::flow::Packet;

    use super::*;

    fn flow(label: &str, origin: Origin, packets: &[(f64, u32)]) -> Flow {
        let p = packets.iter().map(|&(t, s)| Packet::new(t, s).unwrap()).collect();
        Flow::new(label, origin, p).unwrap()
    }

    #[test]
    fn audit_flags_augmented_and_untraceable_samples() {
        let orig = Dataset::new(vec![
            flow("a", Origin::Original, &[(0.0, 1400)]),
            flow("b", Origin::Synthetic, &[(0.0, 10)]),
        ]);
        let good = Dataset::new(vec![
            flow("a", Origin::MtuAugmented, &[(0.0, 1000), (0.0, 400)]),
            flow("b", Origin::MtuAugmented, &[(0.0, 10)]),
        ]);
        assert!(audit_test_sets(&orig, &[&good]).passed());

        let leaked = Dataset::new(vec![good.flows()[0].clone(), orig.flows()[1].clone()]);
        let a = audit_test_sets(&leaked, &[]);
        assert_eq!(a.augmented_in_original, 1);
        assert!(!a.passed());

        let foreign = Dataset::new(vec![
            flow("a", Origin::MtuAugmented, &[(1.0, 1400)]),
            good.flows()[1].clone(),
        ]);
        assert_eq!(audit_test_sets(&orig, &[&foreign]).untraceable, 1);
    }
}
