use std::path::Path;
use std::process::{Command, Stdio};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparsepet"));
    c.stderr(Stdio::null());
    c
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("tiny.ini");
    let text = format!(
        "[geometry]\nrings = 3\ncrystals_per_ring = 32\n\
         [phantom]\ncount = 3\nseed = 1\n\
         [model]\ndepth = 2\nbase_filters = 2\nblocks_per_level = 1,1,1\n\
         [train]\nepochs = 2\npatience = 1\nbatch_size = 4\nseed = 1\nplanes_per_stack = 0\n\
         [recon]\nimage_size = 24\npixel_mm = 1.5\nsubsets = 4\n\
         [split]\ntrain = 1\nval = 1\ntest = 1\n\
         [eval]\nseed = 1\ncorrelation_samples = 100\npgm_dumps = false\n\
         [output]\ndir = {}\n{extra}",
        dir.join("cfg_out").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn all_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let status = bin()
        .args(["all", "--config"])
        .arg(&cfg)
        .arg("--output")
        .arg(&out)
        .args(["--threads", "2", "--seed-override", "9"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("dataset/manifest.tsv").exists());
    assert!(out.join("model/model.sprn").exists());
    assert!(out.join("eval/summary.csv").exists());
    let resolved = std::fs::read_to_string(out.join("config.ini")).unwrap();
    assert!(resolved.contains("[phantom]\ncount = 3\nseed = 9\n"));
    assert!(!tmp.path().join("cfg_out").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[train]\nlearning_rate = 1\n");
    let code = bin().args(["generate", "--config"]).arg(&cfg).status().unwrap().code();
    assert_eq!(code, Some(2));
    let code = bin().args(["generate", "--config", "/nonexistent.ini"]).status().unwrap().code();
    assert_eq!(code, Some(2));
    let code = bin().args(["generate"]).status().unwrap().code();
    assert_eq!(code, Some(2));
    let code = bin()
        .args(["generate", "--threads", "0", "--config"])
        .arg(&cfg)
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(2));
}

#[test]
fn missing_inputs_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let code = bin().args(["evaluate", "--config"]).arg(&cfg).status().unwrap().code();
    assert_eq!(code, Some(3));
    let code = bin().args(["train", "--config"]).arg(&cfg).status().unwrap().code();
    assert_eq!(code, Some(3));
}
