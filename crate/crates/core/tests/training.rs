use chiralnet::model::{Model, ModelConfig, TaskHead};
use chiralnet::molio::Conformer;
use chiralnet::synthgen::{build_dataset, GenSpec, SplitManifest, Task};
use chiralnet::training::{fit, head_for, EpochLog, TrainConfig};

fn dataset(task: Task, n_graphs: usize, seed: u64) -> (Vec<Conformer>, SplitManifest) {
    let spec = GenSpec { n_graphs, seed, score_base_range: [-6.0, -6.0], ..GenSpec::default() };
    build_dataset(&spec, task).unwrap()
}

fn everything_in_train(m: &SplitManifest) -> SplitManifest {
    SplitManifest { train: m.train.iter().chain(&m.val).chain(&m.test).cloned().collect(), ..Default::default() }
}

fn model_for(task: Task, base: ModelConfig) -> Model {
    let mut config = ModelConfig { head: head_for(task), ..base };
    if task == Task::Contrastive {
        config.z_dim = 2;
    }
    Model::new(config).unwrap()
}

fn without_time(log: &[EpochLog]) -> Vec<EpochLog> {
    log.iter().cloned().map(|e| EpochLog { wall_time_s: 0.0, ..e }).collect()
}

/// Ten molecules, 200 full-batch steps: every head must drive its training
/// loss below a tenth of the starting value.
#[test]
fn every_head_overfits_ten_molecules() {
    for task in [Task::Contrastive, Task::Rs, Task::RankRegress] {
        let (records, manifest) = dataset(task, 10, 1);
        let config = TrainConfig { epochs: Some(200), lr: Some(1e-3), batch_size: Some(20), ..TrainConfig::for_task(task) };
        let out = fit(model_for(task, ModelConfig::default()), &records, &everything_in_train(&manifest), &config).unwrap();
        assert_eq!(out.state.step, 200);
        let first = out.log[0].train_loss;
        let last = out.log.last().unwrap().train_loss;
        assert!(last < 0.1 * first, "{task:?}: loss {first} -> {last}");
    }
}

#[test]
fn same_seed_gives_the_same_run_regardless_of_threads() {
    let (records, manifest) = dataset(Task::Rs, 12, 3);
    let run = |threads: usize| {
        let config = TrainConfig {
            epochs: Some(3),
            lr: Some(2e-3),
            batch_size: Some(4),
            grad_chunk: 2,
            threads,
            seed: 9,
            ..TrainConfig::for_task(Task::Rs)
        };
        fit(model_for(Task::Rs, ModelConfig::small()), &records, &manifest, &config).unwrap()
    };
    let (a, b, c) = (run(1), run(1), run(3));
    assert_eq!(without_time(&a.log), without_time(&b.log));
    assert_eq!(without_time(&a.log), without_time(&c.log));
    assert!(a.best.params.bit_equal(&c.best.params));
    assert!(a.state.params.bit_equal(&b.state.params));
    assert!(a.log.iter().all(|e| e.val_metric.is_some()));
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let (records, manifest) = dataset(Task::Rs, 6, 2);
    let model = model_for(Task::Rs, ModelConfig::small());
    let config = TrainConfig { epochs: Some(0), ..TrainConfig::for_task(Task::Rs) };
    let out = fit(model.clone(), &records, &manifest, &config).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.best_epoch, 0);
    assert!(out.best.params.bit_equal(&model.params));
}

#[test]
fn frozen_networks_do_not_move() {
    let (records, manifest) = dataset(Task::Rs, 6, 2);
    let base = ModelConfig { freeze_fc: true, freeze_fphase: true, ..ModelConfig::small() };
    let model = model_for(Task::Rs, base);
    let config = TrainConfig { epochs: Some(2), lr: Some(1e-2), batch_size: Some(4), ..TrainConfig::for_task(Task::Rs) };
    let out = fit(model.clone(), &records, &manifest, &config).unwrap();
    let mut moved = 0;
    for (before, after) in model.params.slots().iter().zip(out.state.params.slots()) {
        let same = before.value.data().iter().zip(after.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if before.name.starts_with("f_c.") || before.name.starts_with("f_phase.") {
            assert!(same, "{} changed", before.name);
        } else if !same {
            moved += 1;
        }
    }
    assert!(moved > 0);
}

#[test]
fn auxiliary_loss_pulls_phase_norms_toward_one() {
    let (records, manifest) = dataset(Task::Rs, 8, 4);
    let base = ModelConfig { gamma_aux: 1.0, ..ModelConfig::small() };
    let config = TrainConfig { epochs: Some(15), lr: Some(3e-3), batch_size: Some(8), ..TrainConfig::for_task(Task::Rs) };
    let out = fit(model_for(Task::Rs, base), &records, &everything_in_train(&manifest), &config).unwrap();
    let dev = |e: &EpochLog| (1.0 - e.phase_norm_mean.unwrap()).abs();
    let (first, last) = (dev(&out.log[0]), dev(out.log.last().unwrap()));
    assert!(last < 0.5 * first, "phase norm deviation {first} -> {last}");
}

#[test]
fn task_and_head_must_agree() {
    let (records, manifest) = dataset(Task::Rs, 6, 2);
    let model = Model::new(ModelConfig { head: TaskHead::Regress, ..ModelConfig::small() }).unwrap();
    let err = fit(model, &records, &manifest, &TrainConfig::for_task(Task::Rs)).unwrap_err();
    assert!(err.to_string().contains("Classify2"), "{err}");
}
