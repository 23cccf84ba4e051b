//! Experiment orchestration: dataset generation, training, evaluation and
//! their file outputs.

pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod report;
pub mod stackfile;

use std::fs;
use std::path::PathBuf;

use log::info;
use rand::seq::index;

use crate::error::{Error, Result};
use crate::restoration::{build_model, load_model, save_model, train, History, PlaneSample, ResUNet};
use crate::rng::{derive_seed, stream_rng};

pub use config::{CountsScale, ExperimentConfig, Split};
pub use dataset::{generate, Manifest};
pub use evaluate::{evaluate, EvalReport};
pub use report::CsvTable;
pub use stackfile::{load_stack, save_stack, StackKind};

pub fn model_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("model")
}

pub fn model_path(cfg: &ExperimentConfig) -> PathBuf {
    model_dir(cfg).join("model.sprn")
}

/// Plane ids used for training from one stack: all of them, or a seeded
/// sample of `planes_per_stack`.
pub fn training_planes(cfg: &ExperimentConfig, num_planes: usize, phantom: usize, parity_bit: usize) -> Vec<usize> {
    let k = cfg.planes_per_stack;
    if k == 0 || k >= num_planes {
        return (0..num_planes).collect();
    }
    let mut rng = stream_rng(derive_seed(cfg.train.seed, 0x706c_616e), (phantom * 2 + parity_bit) as u64);
    let mut ids = index::sample(&mut rng, num_planes, k).into_vec();
    ids.sort_unstable();
    ids
}

fn samples(cfg: &ExperimentConfig, phantoms: std::ops::Range<usize>) -> Result<Vec<PlaneSample>> {
    let dir = dataset::dataset_dir(cfg);
    let mut out = Vec::new();
    for i in phantoms {
        for &parity in &cfg.pattern.parities {
            let s = dataset::load_stacks(&dir, i, parity)?;
            for p in training_planes(cfg, s.original.len(), i, parity.bit()) {
                out.push(PlaneSample {
                    distorted: s.distorted.planes[p].clone(),
                    original: s.original.planes[p].clone(),
                    affected: s.masks.affected_mask(p),
                });
            }
        }
    }
    Ok(out)
}

/// Training and validation samples read from the generated dataset.
pub fn training_sets(cfg: &ExperimentConfig) -> Result<(Vec<PlaneSample>, Vec<PlaneSample>)> {
    Ok((samples(cfg, cfg.split.train_ids())?, samples(cfg, cfg.split.val_ids())?))
}

pub fn history_table(history: &History) -> CsvTable {
    let mut t = CsvTable::new("history", 1, &["epoch", "learning_rate", "train_loss", "val_loss"]);
    for e in &history.epochs {
        t.push(vec![
            report::num(e.epoch),
            report::num(e.learning_rate),
            report::num(e.train_loss),
            report::num(e.val_loss),
        ]);
    }
    t.footer(format!(
        "stop_reason={} best_epoch={}",
        history.stop.as_str(),
        history.stop.best_epoch()
    ));
    t
}

/// Trains on the train split, validates on the val split, and writes the
/// best weights and the per-epoch history.
pub fn train_model(cfg: &ExperimentConfig) -> Result<(ResUNet<f32>, History)> {
    cfg.validate()?;
    let dir = dataset::dataset_dir(cfg);
    if !dir.join(dataset::MANIFEST).exists() {
        return Err(Error::Format(format!("no dataset at {}", dir.display())));
    }
    let (train_set, val_set) = training_sets(cfg)?;
    info!("training on {} planes, validating on {}", train_set.len(), val_set.len());
    let mut model = build_model::<f32>(&cfg.model, cfg.train.seed)?;
    let history = train(&mut model, &train_set, &val_set, &cfg.train)?;
    fs::create_dir_all(model_dir(cfg))?;
    save_model(&model_path(cfg), &mut model)?;
    history_table(&history).write(&model_dir(cfg).join("history.csv"))?;
    Ok((model, history))
}

pub fn load_trained(cfg: &ExperimentConfig) -> Result<ResUNet<f32>> {
    let path = model_path(cfg);
    if !path.exists() {
        return Err(Error::Format(format!("no model at {}", path.display())));
    }
    load_model(&path)
}

/// Maps `f` over `items` on up to `threads` scoped threads, keeping order.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<usize> = (0..37).collect();
        for t in [1, 2, 5, 64] {
            assert_eq!(par_map(&v, t, |x| Ok(x * 2)).unwrap(), v.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
        assert!(par_map(&v, 3, |&x| if x == 20 { Err(Error::Empty("x".into())) } else { Ok(x) }).is_err());
    }

    #[test]
    fn plane_sample_is_seeded_and_sorted() {
        let cfg = ExperimentConfig::desk(3);
        let a = training_planes(&cfg, 211, 4, 1);
        assert_eq!(a.len(), 16);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, training_planes(&cfg, 211, 4, 1));
        assert_ne!(a, training_planes(&cfg, 211, 4, 0));
        assert_eq!(training_planes(&cfg, 10, 0, 0).len(), 10);
    }
}
