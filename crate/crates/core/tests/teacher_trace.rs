mod common;

use std::collections::HashMap;

use common::{mlp, spiral, Recorder};
use lstsd::data::LabeledDataset;
use lstsd::nn::logits;
use lstsd::policies::{train, PolicyConfig, PolicyKind, TrainConfig};

fn subset(n: usize) -> LabeledDataset {
    let ds = spiral(4, 11);
    let ids: Vec<usize> = (0..n).collect();
    let (x, y) = ds.gather(&ids).unwrap();
    LabeledDataset::new(x, y, 3).unwrap()
}

fn run(n: usize, mini_gens: usize, epochs: usize) -> (Recorder, LabeledDataset) {
    let ds = subset(n);
    let policy = PolicyConfig::new(PolicyKind::Lstsd).with_mini_gens(mini_gens, epochs);
    let cfg = TrainConfig::new(policy, 5).with_batch_size(2);
    let mut rec = Recorder::default();
    train(&cfg, &mlp(), &ds, &ds, &mut rec).unwrap();
    (rec, ds)
}

/// Loss-time logits of every sample, per global epoch, rebuilt from the step trace.
fn replay(rec: &Recorder, n: usize) -> Vec<HashMap<usize, Vec<f64>>> {
    let epochs = rec.epochs.len();
    let mut by_epoch = vec![HashMap::new(); epochs];
    for s in &rec.steps {
        for (k, &id) in s.ids.iter().enumerate() {
            let prev = by_epoch[s.pos.global].insert(id, s.logits.row(k).to_vec());
            assert!(prev.is_none(), "sample {id} consumed twice in epoch {}", s.pos.global);
        }
    }
    for (g, m) in by_epoch.iter().enumerate() {
        assert_eq!(m.len(), n, "epoch {g} did not consume every sample");
    }
    by_epoch
}

#[test]
fn loss_time_logits_are_the_model_outputs() {
    let (rec, ds) = run(8, 3, 2);
    for s in &rec.steps {
        let (x, y) = ds.gather(&s.ids).unwrap();
        assert_eq!(y, s.labels);
        assert_eq!(logits(&mlp(), &s.params, &x).unwrap(), s.logits);
    }
}

#[test]
fn short_reads_come_from_the_previous_epoch() {
    let (rec, _) = run(8, 3, 2);
    let seen = replay(&rec, 8);
    for s in rec.steps.iter().filter(|s| s.pos.global > 0) {
        for (k, &id) in s.ids.iter().enumerate() {
            let read = s.short_read[k].as_ref().expect("short row missing");
            assert_eq!(read, &seen[s.pos.global - 1][&id], "epoch {} id {id}", s.pos.global);
        }
    }
}

#[test]
fn long_reads_are_frozen_within_a_mini_generation() {
    let (rec, _) = run(8, 3, 2);
    let seen = replay(&rec, 8);
    for s in rec.steps.iter().filter(|s| s.pos.mini_gen > 1) {
        let source = (s.pos.mini_gen - 1) * 2 - 1;
        for (k, &id) in s.ids.iter().enumerate() {
            assert_eq!(s.long_read[k].as_ref().unwrap(), &seen[source][&id]);
        }
        if !s.pos.is_last_in_gen || s.step == 0 {
            let first = rec.steps.iter().find(|t| t.pos.mini_gen == s.pos.mini_gen).unwrap();
            assert_eq!(s.long_matrix, first.long_matrix);
        }
    }
}

#[test]
fn long_equals_short_at_each_mini_generation_start() {
    let (rec, _) = run(8, 3, 2);
    let starts: Vec<_> = rec
        .steps
        .iter()
        .filter(|s| s.pos.mini_gen > 1 && s.pos.is_first_in_gen() && s.step == 0)
        .collect();
    assert_eq!(starts.len(), 2);
    for s in starts {
        assert_eq!(s.long_matrix, s.short_matrix);
    }
}

#[test]
fn first_mini_generation_is_cross_entropy_only() {
    let (rec, _) = run(4, 2, 2);
    let first: Vec<_> = rec.steps.iter().filter(|s| s.pos.global == 0).collect();
    assert_eq!(first.len(), 2);
    for r in rec.epochs.iter().filter(|r| r.mini_gen == 1) {
        assert_eq!(r.loss.kl_long, 0.0);
        assert_eq!(r.loss.kl_short, 0.0);
        assert_eq!(r.loss.total, r.loss.ce);
    }
    for s in rec.steps.iter().filter(|s| s.pos.mini_gen == 2 && s.pos.epoch_in_gen == 1) {
        assert!(s.long_read.iter().chain(&s.short_read).all(Option::is_some));
    }
}

#[test]
fn four_sample_two_epoch_short_trace() {
    let (rec, _) = run(4, 1, 2);
    let seen = replay(&rec, 4);
    for s in rec.steps.iter().filter(|s| s.pos.global == 1) {
        for (k, &id) in s.ids.iter().enumerate() {
            assert_eq!(s.short_read[k].as_ref().unwrap(), &seen[0][&id]);
        }
    }
}

#[test]
fn long_rows_change_only_in_final_epochs() {
    let (rec, _) = run(8, 3, 2);
    let seen = replay(&rec, 8);
    use lstsd::distill::Teacher;
    for (g, store) in rec.end_stores.iter().enumerate() {
        let last = rec.epochs[g].epoch % 2 == 0;
        if last {
            for id in 0..8 {
                assert_eq!(store.row(Teacher::Long, id).unwrap(), &seen[g][&id][..]);
            }
        } else if g > 0 {
            assert_eq!(store.logits(Teacher::Long), rec.end_stores[g - 1].logits(Teacher::Long));
        }
        for id in 0..8 {
            assert_eq!(store.row(Teacher::Short, id).unwrap(), &seen[g][&id][..]);
        }
    }
}

#[test]
fn logged_steps_recompose() {
    let (rec, _) = run(8, 3, 2);
    for s in &rec.steps {
        assert!((s.breakdown.total - s.breakdown.recomposed()).abs() < 1e-12);
    }
}
