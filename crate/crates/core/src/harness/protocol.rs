//! Experiment protocols: `single`, `prune_sweep` and `branch_20_20`.

use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{fraction_label, ExperimentConfig, Protocol};
use super::metrics::{BranchOutcome, BranchStatus, EpochRecord, MetricsLog, RunManifest, SplitRecord};
use super::HarnessError;
use crate::emergence::EmergenceRecord;
use crate::instrument::{classify_active, collect_activation_stats, select_probe};
use crate::nn::{
    build_network, count_parameters, evaluate, train_epoch, ArchitectureSpec, Dataset, EpochStats, LayerSpec, Network,
    NnError,
};
use crate::pruning::{magnitude_prune, sparsity, PruneMask};

/// Everything measured on a network at one point in time.
#[derive(Clone, Debug)]
struct Snapshot {
    test_accuracy: f64,
    emergence: EmergenceRecord,
    sparsity: f64,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    probe: Dataset,
}

impl Context<'_> {
    fn measure(&self, net: &Network) -> Result<Snapshot, HarnessError> {
        let stats = collect_activation_stats(net, &self.probe)?;
        let mut counts = classify_active(&stats, self.cfg.theta);
        if !self.cfg.include_input_layer {
            counts = counts.without_input();
        }
        let params = count_parameters(net);
        // conv units are filters, so the per-layer totals are also the filter counts
        let filters = net.spec().has_conv().then(|| counts.totals());
        let emergence = EmergenceRecord::compute(counts, filters.as_deref(), params)?;
        Ok(Snapshot { test_accuracy: evaluate(net, self.test)?, emergence, sparsity: sparsity(net) })
    }

    fn epoch_record(&self, branch: &str, epoch: usize, stats: EpochStats, net: &Network) -> Result<EpochRecord, HarnessError> {
        let s = self.measure(net)?;
        Ok(EpochRecord {
            branch: branch.to_string(),
            epoch,
            train_accuracy: stats.train_accuracy,
            test_accuracy: s.test_accuracy,
            mean_loss: stats.mean_loss,
            emergence_log: s.emergence.log_e,
            relative_emergence: s.emergence.relative,
            param_total: s.emergence.param_count.total,
            param_unmasked: s.emergence.param_count.unmasked,
            emergence_exact: s.emergence.exact,
            active_counts: s.emergence.active_counts,
            sparsity: s.sparsity,
        })
    }

    fn split_record(&self, branch: &str, epoch: usize, net: &Network) -> Result<SplitRecord, HarnessError> {
        let s = self.measure(net)?;
        Ok(SplitRecord {
            branch: branch.to_string(),
            epoch,
            test_accuracy: s.test_accuracy,
            emergence_log: s.emergence.log_e,
            relative_emergence: s.emergence.relative,
            param_total: s.emergence.param_count.total,
            param_unmasked: s.emergence.param_count.unmasked,
            emergence_exact: s.emergence.exact,
            active_counts: s.emergence.active_counts,
            sparsity: s.sparsity,
        })
    }

    /// Trains `epochs` epochs numbered `first_epoch..`, logging each. A non-finite loss ends
    /// the branch; other errors propagate.
    fn train_span(
        &self,
        branch: &str,
        net: &mut Network,
        seed: u64,
        first_epoch: usize,
        epochs: usize,
        records: &mut Vec<EpochRecord>,
    ) -> Result<BranchOutcome, HarnessError> {
        let tc = self.cfg.train_config(seed);
        for epoch in first_epoch..first_epoch + epochs {
            // shuffle stream is the zero-based epoch index
            match train_epoch(net, self.train, &tc, (epoch - 1) as u64) {
                Ok(stats) => records.push(self.epoch_record(branch, epoch, stats, net)?),
                Err(NnError::NonFinite { epoch: e, batch, loss }) => {
                    return Ok(BranchOutcome::Failed {
                        epoch,
                        reason: format!("non-finite loss {loss} at epoch index {e}, batch {batch}"),
                    })
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(BranchOutcome::Completed)
    }
}

/// How a branch starts from the shared snapshot.
#[derive(Clone, Debug)]
enum Start {
    Continue,
    Prune(f64),
    /// Fresh network; its epochs are numbered from 1.
    Fresh(ArchitectureSpec),
}

#[derive(Clone, Debug)]
struct BranchPlan {
    name: String,
    index: usize,
    start: Start,
}

pub struct BranchResult {
    pub name: String,
    pub network: Network,
    pub mask: Option<PruneMask>,
}

/// Run output: the log plus final networks (and masks for pruned branches).
pub struct RunOutput {
    pub log: MetricsLog,
    pub branches: Vec<BranchResult>,
}

fn probe_digest(train: &Dataset, probe: &Dataset) -> String {
    // digest of the probe inputs; identifies the probe set without storing indices
    let mut h = Sha256::new();
    h.update((train.len() as u64).to_le_bytes());
    for v in probe.inputs().iter() {
        h.update(v.to_le_bytes());
    }
    h.update(probe.labels());
    hex::encode(h.finalize())
}

fn limited(data: &Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(n) if n < data.len() => data.head(n),
        _ => data.clone(),
    }
}

/// Runs the configured protocol on already-loaded data.
pub fn run_protocol(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<RunOutput, HarnessError> {
    cfg.validate_settings()?;
    let train = limited(train, cfg.train_limit);
    let test = limited(test, cfg.test_limit);
    let arch = cfg.architecture();
    if train.features() != arch.input_len()? || test.features() != train.features() {
        return Err(HarnessError::Config(format!(
            "architecture takes {} inputs, data has {}",
            arch.input_len()?,
            train.features()
        )));
    }
    if arch.classes()? < train.classes().max(test.classes()) {
        return Err(HarnessError::Config(format!(
            "architecture has {} outputs, data has {} classes",
            arch.classes()?,
            train.classes()
        )));
    }
    let probe = select_probe(&train, &cfg.probe_config())?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        rng: "ChaCha8Rng".into(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        config: cfg.clone(),
        architecture: arch.clone(),
        probe_indices_sha256: probe_digest(&train, &probe),
    };
    let ctx = Context { cfg, train: &train, test: &test, probe };

    let baseline_epochs = cfg.baseline_epochs();
    let continue_epochs = cfg.continue_epochs();
    let mut net: Network = build_network(&arch, cfg.seed)?;

    if cfg.protocol == Protocol::Single {
        let mut records = Vec::new();
        let outcome = ctx.train_span("control", &mut net, cfg.seed, 1, baseline_epochs + continue_epochs, &mut records)?;
        let status = BranchStatus {
            branch: "control".into(),
            index: 0,
            seed: cfg.seed,
            prune_fraction: None,
            architecture: None,
            outcome,
        };
        return Ok(RunOutput {
            log: MetricsLog { manifest, records, splits: Vec::new(), branches: vec![status] },
            branches: vec![BranchResult { name: "control".into(), network: net, mask: None }],
        });
    }

    let mut baseline = Vec::new();
    let baseline_outcome = ctx.train_span("baseline", &mut net, cfg.seed, 1, baseline_epochs, &mut baseline)?;
    let plans = branch_plans(cfg, &net);

    let results: Vec<Result<(Vec<EpochRecord>, Option<SplitRecord>, BranchStatus, BranchResult), HarnessError>> = plans
        .par_iter()
        .map(|plan| {
            let seed = cfg.seed ^ plan.index as u64;
            let (mut branch_net, mask, prune_fraction, branch_arch) = match &plan.start {
                Start::Continue => (net.clone(), None, None, None),
                Start::Prune(f) => {
                    let (pruned, mask) = magnitude_prune(&net, *f, cfg.prune_scope, cfg.prune_unit)?;
                    (pruned, Some(mask), Some(*f), None)
                }
                Start::Fresh(spec) => (build_network(spec, seed)?, None, None, Some(spec.clone())),
            };
            let fresh = matches!(plan.start, Start::Fresh(_));
            let mut records = Vec::new();
            let (split, outcome) = if fresh {
                let split = ctx.split_record(&plan.name, 0, &branch_net)?;
                (Some(split), ctx.train_span(&plan.name, &mut branch_net, seed, 1, continue_epochs, &mut records)?)
            } else {
                records.extend(baseline.iter().cloned().map(|mut r| {
                    r.branch = plan.name.clone();
                    r
                }));
                match &baseline_outcome {
                    BranchOutcome::Failed { .. } => (None, baseline_outcome.clone()),
                    BranchOutcome::Completed => {
                        let split = ctx.split_record(&plan.name, baseline_epochs, &branch_net)?;
                        let outcome = ctx.train_span(
                            &plan.name,
                            &mut branch_net,
                            seed,
                            baseline_epochs + 1,
                            continue_epochs,
                            &mut records,
                        )?;
                        (Some(split), outcome)
                    }
                }
            };
            let status = BranchStatus {
                branch: plan.name.clone(),
                index: plan.index,
                seed,
                prune_fraction,
                architecture: branch_arch,
                outcome,
            };
            Ok((records, split, status, BranchResult { name: plan.name.clone(), network: branch_net, mask }))
        })
        .collect();

    let mut log = MetricsLog { manifest, records: Vec::new(), splits: Vec::new(), branches: Vec::new() };
    let mut branches = Vec::new();
    for result in results {
        let (records, split, status, branch) = result?;
        log.records.extend(records);
        log.splits.extend(split);
        log.branches.push(status);
        branches.push(branch);
    }
    Ok(RunOutput { log, branches })
}

fn branch_plans(cfg: &ExperimentConfig, trained: &Network) -> Vec<BranchPlan> {
    let plan = |name: String, index, start| BranchPlan { name, index, start };
    match cfg.protocol {
        Protocol::Single => Vec::new(),
        Protocol::PruneSweep => std::iter::once(plan("control".into(), 0, Start::Continue))
            .chain(
                cfg.prune_fractions
                    .iter()
                    .enumerate()
                    .map(|(i, &f)| plan(format!("prune_{}", fraction_label(f)), i + 1, Start::Prune(f))),
            )
            .collect(),
        Protocol::Branch2020 => {
            let f = cfg.prune_fractions[0];
            let arch = cfg.architecture();
            let budget = magnitude_prune(trained, f, cfg.prune_scope, cfg.prune_unit)
                .map(|(p, _)| count_parameters(&p).unmasked)
                .unwrap_or(0);
            vec![
                plan("pretrained_unpruned".into(), 0, Start::Continue),
                plan("pretrained_pruned".into(), 1, Start::Prune(f)),
                plan("random_full".into(), 2, Start::Fresh(arch.clone())),
                plan("random_small".into(), 3, Start::Fresh(smaller_architecture(&arch, budget))),
            ]
        }
    }
}

/// Every hidden width (dense outputs and conv filters, all but the output layer) scaled by
/// `s`, rounded, at least 1.
pub fn scale_hidden(spec: &ArchitectureSpec, s: f64) -> ArchitectureSpec {
    let trainable = spec.layers.iter().filter(|l| matches!(l, LayerSpec::Dense { .. } | LayerSpec::Conv { .. })).count();
    let mut seen = 0;
    let mut prev_units: Option<(usize, usize)> = None; // (original, scaled) width of the previous trainable layer
    let scale = |w: usize| ((w as f64 * s).round() as usize).max(1);
    let mut layers = Vec::new();
    for layer in &spec.layers {
        let new = match *layer {
            LayerSpec::Dense { inputs, outputs, activation } => {
                seen += 1;
                let inputs = match prev_units {
                    Some((orig, scaled)) => inputs / orig * scaled,
                    None => inputs,
                };
                let outputs_new = if seen == trainable { outputs } else { scale(outputs) };
                prev_units = Some((outputs, outputs_new));
                LayerSpec::Dense { inputs, outputs: outputs_new, activation }
            }
            LayerSpec::Conv { in_channels, filters, kernel, activation } => {
                seen += 1;
                let in_channels = prev_units.map(|(_, scaled)| scaled).unwrap_or(in_channels);
                let filters_new = if seen == trainable { filters } else { scale(filters) };
                prev_units = Some((filters, filters_new));
                LayerSpec::Conv { in_channels, filters: filters_new, kernel, activation }
            }
            ref other => other.clone(),
        };
        layers.push(new);
    }
    ArchitectureSpec { input_shape: spec.input_shape, layers }
}

fn spec_params(spec: &ArchitectureSpec) -> Option<u64> {
    build_network::<f32>(spec, 0).ok().map(|n| count_parameters(&n).total)
}

/// Scaled copy of `spec` whose parameter count is closest to `budget`; the first hidden
/// width is searched exhaustively and the others follow proportionally.
pub fn smaller_architecture(spec: &ArchitectureSpec, budget: u64) -> ArchitectureSpec {
    let first = spec
        .layers
        .iter()
        .find_map(|l| match *l {
            LayerSpec::Dense { outputs, .. } => Some(outputs),
            LayerSpec::Conv { filters, .. } => Some(filters),
            _ => None,
        })
        .unwrap_or(1);
    let mut best = (u64::MAX, spec.clone());
    for h in 1..=first {
        let candidate = scale_hidden(spec, h as f64 / first as f64);
        if let Some(p) = spec_params(&candidate) {
            let gap = p.abs_diff(budget);
            if gap < best.0 {
                best = (gap, candidate);
            }
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_rewires_dense_inputs() {
        let spec = ArchitectureSpec::mlp(&[784, 128, 64, 10]);
        let half = scale_hidden(&spec, 0.5);
        assert_eq!(half, ArchitectureSpec::mlp(&[784, 64, 32, 10]));
        let small = smaller_architecture(&spec, 109_386 / 2);
        let p = spec_params(&small).unwrap();
        assert!(p.abs_diff(109_386 / 2) < 1000, "{p}");
        assert_eq!(smaller_architecture(&spec, 10_000_000), spec);
    }

    #[test]
    fn scaling_handles_conv_stacks() {
        use crate::nn::{Activation, PoolKind};
        let spec = ArchitectureSpec::new(vec![
            LayerSpec::Conv { in_channels: 1, filters: 8, kernel: (3, 3), activation: Activation::Relu },
            LayerSpec::Pool { kind: PoolKind::Max, window: (2, 2) },
            LayerSpec::Conv { in_channels: 8, filters: 16, kernel: (3, 3), activation: Activation::Relu },
            LayerSpec::Pool { kind: PoolKind::Max, window: (2, 2) },
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 400, outputs: 10, activation: Activation::Identity },
        ])
        .with_input_shape(1, 28, 28);
        let half = scale_hidden(&spec, 0.5);
        assert!(half.validate().is_ok());
        assert!(matches!(half.layers[5], LayerSpec::Dense { inputs: 200, .. }));
    }
}
