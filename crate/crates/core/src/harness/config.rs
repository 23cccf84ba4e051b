//! Experiment configuration in sectioned `key = value` form.
//!
//! ```text
//! [phantom]
//! count = 16
//! seed = 7
//! ```
//!
//! `#` and `;` start comments. Unknown sections or keys are errors, and so
//! are missing seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::ScannerGeometry;
use crate::recon::ReconConfig;
use crate::restoration::{ModelConfig, TrainConfig};
use crate::sparsity::{chessboard_mask, CrystalPattern, Parity};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountsScale {
    Fixed(f64),
    /// calibrate so the mean expected count over affected bins hits this
    AffectedMean(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternConfig {
    pub block_w: usize,
    pub block_h: usize,
    pub parities: Vec<Parity>,
}

impl PatternConfig {
    pub fn pattern(&self, parity: Parity) -> CrystalPattern {
        CrystalPattern {
            block_w: self.block_w,
            block_h: self.block_h,
            parity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub count: usize,
    pub seed: u64,
    pub counts_scale: CountsScale,
    pub axially_uniform: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Split {
    pub fn train_ids(&self) -> std::ops::Range<usize> {
        0..self.train
    }

    pub fn val_ids(&self) -> std::ops::Range<usize> {
        self.train..self.train + self.val
    }

    pub fn test_ids(&self) -> std::ops::Range<usize> {
        self.train + self.val..self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub seed: u64,
    pub correlation_samples: usize,
    /// background ROI area in pixels
    pub roi_area_px: usize,
    /// bladder ROI = hot ellipse with semi-axes scaled by this
    pub bladder_erosion: f64,
    pub pgm_dumps: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: ScannerGeometry,
    pub pattern: PatternConfig,
    pub phantom: PhantomConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// training and validation planes drawn per (phantom, parity) stack;
    /// 0 uses every plane
    pub planes_per_stack: usize,
    pub recon: ReconConfig,
    pub split: Split,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale defaults with the given seed for every random component.
    pub fn desk(seed: u64) -> Self {
        Self {
            geometry: ScannerGeometry::mock(),
            pattern: PatternConfig {
                block_w: 1,
                block_h: 1,
                parities: Parity::BOTH.to_vec(),
            },
            phantom: PhantomConfig {
                count: 16,
                seed,
                counts_scale: CountsScale::AffectedMean(4.0),
                axially_uniform: false,
            },
            model: ModelConfig {
                base_filters: 8,
                ..ModelConfig::desk_default()
            },
            train: TrainConfig {
                epochs: 30,
                patience: 10,
                seed,
                ..TrainConfig::default()
            },
            planes_per_stack: 16,
            recon: ReconConfig::default(),
            split: Split {
                train: 12,
                val: 2,
                test: 2,
            },
            eval: EvalConfig {
                seed,
                correlation_samples: 100_000,
                roi_area_px: 50,
                bladder_erosion: 0.7,
                pgm_dumps: true,
            },
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.pattern.parities.is_empty() {
            return Err(Error::Config("pattern.parities is empty".into()));
        }
        chessboard_mask(&self.geometry, self.pattern.pattern(Parity::Black)).map_err(|e| Error::Config(e.to_string()))?;
        let s = self.split;
        if s.train + s.val + s.test != self.phantom.count {
            return Err(Error::Config(format!(
                "split {}+{}+{} does not sum to phantom count {}",
                s.train, s.val, s.test, self.phantom.count
            )));
        }
        if s.train == 0 || s.val == 0 {
            return Err(Error::Config("split needs at least one train and one val phantom".into()));
        }
        match self.phantom.counts_scale {
            CountsScale::Fixed(v) | CountsScale::AffectedMean(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(Error::Config(format!("counts scale must be positive, got {v}")));
            }
            _ => {}
        }
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        self.recon.validate(self.geometry.angle_bins).map_err(|e| Error::Config(e.to_string()))?;
        if self.eval.correlation_samples < 2 {
            return Err(Error::Config("eval.correlation_samples must be at least 2".into()));
        }
        if !(self.eval.bladder_erosion > 0.0 && self.eval.bladder_erosion <= 1.0) {
            return Err(Error::Config("eval.bladder_erosion must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.phantom.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        text.parse()
    }

    /// The configuration in the same text form that [`FromStr`] reads.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let g = &self.geometry;
        let _ = writeln!(s, "[geometry]\nrings = {}\ncrystals_per_ring = {}\n", g.num_rings, g.crystals_per_ring);
        let parities: Vec<&str> = self.pattern.parities.iter().map(|p| p.as_str()).collect();
        let _ = writeln!(
            s,
            "[pattern]\nblock_w = {}\nblock_h = {}\nparities = {}\n",
            self.pattern.block_w,
            self.pattern.block_h,
            parities.join(",")
        );
        let scale = match self.phantom.counts_scale {
            CountsScale::Fixed(v) => format!("counts_scale = {v}"),
            CountsScale::AffectedMean(v) => format!("affected_mean_counts = {v}"),
        };
        let _ = writeln!(
            s,
            "[phantom]\ncount = {}\nseed = {}\n{scale}\naxially_uniform = {}\n",
            self.phantom.count, self.phantom.seed, self.phantom.axially_uniform
        );
        let m = &self.model;
        let _ = writeln!(
            s,
            "[model]\ndepth = {}\nbase_filters = {}\nblocks_per_level = {}\nfinal_kernels = {}\npad_input = {}\n",
            m.depth,
            m.base_filters,
            list(&m.blocks_per_level),
            list(&m.final_kernels),
            m.pad_input
        );
        let t = &self.train;
        let _ = writeln!(
            s,
            "[train]\nepochs = {}\nbatch_size = {}\nbase_lr = {}\ndecay = {}\npatience = {}\nseed = {}\nssim_window = {}\nplanes_per_stack = {}\n",
            t.epochs, t.batch_size, t.base_lr, t.decay, t.patience, t.seed, t.ssim_window, self.planes_per_stack
        );
        let r = &self.recon;
        let _ = writeln!(
            s,
            "[recon]\nimage_size = {}\npixel_mm = {}\nsubsets = {}\niterations = {}\npostfilter_fwhm_mm = {}\n",
            r.image_size, r.pixel_mm, r.subsets, r.iterations, r.postfilter_fwhm_mm
        );
        let _ = writeln!(
            s,
            "[split]\ntrain = {}\nval = {}\ntest = {}\n",
            self.split.train, self.split.val, self.split.test
        );
        let e = &self.eval;
        let _ = writeln!(
            s,
            "[eval]\nseed = {}\ncorrelation_samples = {}\nroi_area_px = {}\nbladder_erosion = {}\npgm_dumps = {}\n",
            e.seed, e.correlation_samples, e.roi_area_px, e.bladder_erosion, e.pgm_dumps
        );
        let _ = writeln!(s, "[output]\ndir = {}", self.output_dir.display());
        s
    }
}

type Sections = BTreeMap<String, BTreeMap<String, (usize, String)>>;

fn parse_sections(text: &str) -> Result<Sections> {
    let mut out = Sections::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            out.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {line_no}: expected key = value, got {line:?}")));
        };
        let Some(section) = &current else {
            return Err(Error::Config(format!("line {line_no}: key outside any section")));
        };
        let key = key.trim().to_string();
        let prev = out
            .get_mut(section)
            .expect("section inserted on header")
            .insert(key.clone(), (line_no, value.trim().to_string()));
        if prev.is_some() {
            return Err(Error::Config(format!("line {line_no}: duplicate key {section}.{key}")));
        }
    }
    Ok(out)
}

struct Reader {
    sections: Sections,
}

impl Reader {
    fn take<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((line, v)) = self.sections.get_mut(section).and_then(|s| s.remove(key)) else {
            return Ok(None);
        };
        v.parse()
            .map(Some)
            .map_err(|e| Error::Config(format!("line {line}: {section}.{key} = {v:?}: {e}")))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(section, key)?.unwrap_or(default))
    }

    fn seed(&mut self, section: &str) -> Result<u64> {
        self.take(section, "seed")?
            .ok_or_else(|| Error::Config(format!("{section}.seed is required")))
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.take::<String>(section, key)? else {
            return Ok(None);
        };
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("{section}.{key}: {p:?}: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn finish(self) -> Result<()> {
        let leftover: Vec<String> = self
            .sections
            .iter()
            .flat_map(|(s, keys)| keys.iter().map(move |(k, (line, _))| format!("{s}.{k} (line {line})")))
            .collect();
        if !leftover.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", leftover.join(", "))));
        }
        Ok(())
    }
}

const SECTIONS: [&str; 9] = ["geometry", "pattern", "phantom", "model", "train", "recon", "split", "eval", "output"];

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        if let Some(bad) = sections.keys().find(|s| !SECTIONS.contains(&s.as_str())) {
            return Err(Error::Config(format!("unknown section [{bad}]")));
        }
        let mut r = Reader { sections };
        let mut cfg = ExperimentConfig::desk(0);

        let rings = r.get("geometry", "rings", cfg.geometry.num_rings)?;
        let crystals = r.get("geometry", "crystals_per_ring", cfg.geometry.crystals_per_ring)?;
        cfg.geometry = ScannerGeometry::new(rings, crystals).map_err(|e| Error::Config(e.to_string()))?;

        cfg.pattern.block_w = r.get("pattern", "block_w", cfg.pattern.block_w)?;
        cfg.pattern.block_h = r.get("pattern", "block_h", cfg.pattern.block_h)?;
        if let Some(p) = r.list("pattern", "parities")? {
            cfg.pattern.parities = p;
        }

        cfg.phantom.count = r.get("phantom", "count", cfg.phantom.count)?;
        cfg.phantom.seed = r.seed("phantom")?;
        match (r.take("phantom", "counts_scale")?, r.take("phantom", "affected_mean_counts")?) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "phantom.counts_scale and phantom.affected_mean_counts are exclusive".into(),
                ))
            }
            (Some(v), None) => cfg.phantom.counts_scale = CountsScale::Fixed(v),
            (None, Some(v)) => cfg.phantom.counts_scale = CountsScale::AffectedMean(v),
            (None, None) => {}
        }
        cfg.phantom.axially_uniform = r.get("phantom", "axially_uniform", cfg.phantom.axially_uniform)?;

        let m = &mut cfg.model;
        m.depth = r.get("model", "depth", m.depth)?;
        m.base_filters = r.get("model", "base_filters", m.base_filters)?;
        if let Some(b) = r.list("model", "blocks_per_level")? {
            m.blocks_per_level = b;
        }
        if let Some(k) = r.list::<usize>("model", "final_kernels")? {
            m.final_kernels = k
                .try_into()
                .map_err(|_| Error::Config("model.final_kernels needs two sizes".into()))?;
        }
        m.pad_input = r.get("model", "pad_input", m.pad_input)?;

        let t = &mut cfg.train;
        t.epochs = r.get("train", "epochs", t.epochs)?;
        t.batch_size = r.get("train", "batch_size", t.batch_size)?;
        t.base_lr = r.get("train", "base_lr", t.base_lr)?;
        t.decay = r.get("train", "decay", t.decay)?;
        t.patience = r.get("train", "patience", t.patience)?;
        t.ssim_window = r.get("train", "ssim_window", t.ssim_window)?;
        t.seed = r.seed("train")?;
        cfg.planes_per_stack = r.get("train", "planes_per_stack", cfg.planes_per_stack)?;

        let rc = &mut cfg.recon;
        rc.image_size = r.get("recon", "image_size", rc.image_size)?;
        rc.pixel_mm = r.get("recon", "pixel_mm", rc.pixel_mm)?;
        rc.subsets = r.get("recon", "subsets", rc.subsets)?;
        rc.iterations = r.get("recon", "iterations", rc.iterations)?;
        rc.postfilter_fwhm_mm = r.get("recon", "postfilter_fwhm_mm", rc.postfilter_fwhm_mm)?;

        cfg.split.train = r.get("split", "train", cfg.split.train)?;
        cfg.split.val = r.get("split", "val", cfg.split.val)?;
        cfg.split.test = r.get("split", "test", cfg.split.test)?;

        let e = &mut cfg.eval;
        e.seed = r.seed("eval")?;
        e.correlation_samples = r.get("eval", "correlation_samples", e.correlation_samples)?;
        e.roi_area_px = r.get("eval", "roi_area_px", e.roi_area_px)?;
        e.bladder_erosion = r.get("eval", "bladder_erosion", e.bladder_erosion)?;
        e.pgm_dumps = r.get("eval", "pgm_dumps", e.pgm_dumps)?;

        cfg.output_dir = r.get("output", "dir", cfg.output_dir)?;
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_round_trips_through_text() {
        let mut cfg = ExperimentConfig::desk(42);
        cfg.phantom.counts_scale = CountsScale::Fixed(0.25);
        cfg.pattern.parities = vec![Parity::White];
        let back: ExperimentConfig = cfg.to_ini().parse().unwrap();
        assert_eq!(back, cfg);
        let desk = ExperimentConfig::desk(7);
        assert_eq!(desk.to_ini().parse::<ExperimentConfig>().unwrap(), desk);
    }

    const SEEDS: &str = "[phantom]\nseed = 1\n[train]\nseed = 2\n[eval]\nseed = 3\n";

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg: ExperimentConfig = SEEDS.parse().unwrap();
        assert_eq!((cfg.phantom.seed, cfg.train.seed, cfg.eval.seed), (1, 2, 3));
        assert_eq!(cfg.split, ExperimentConfig::desk(0).split);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = |text: &str| matches!(text.parse::<ExperimentConfig>(), Err(Error::Config(_)));
        assert!(bad("[phantom]\nseed = 1\n[train]\nseed = 2\n"), "missing seed");
        assert!(bad(&format!("{SEEDS}[train]\nepoch = 3\n")), "typo key");
        assert!(bad(&format!("{SEEDS}[trian]\n")), "typo section");
        assert!(bad(&format!("{SEEDS}[split]\ntrain = 3\n")), "split sum");
        assert!(bad(&format!("{SEEDS}[model]\ndepth = x\n")), "not a number");
        assert!(bad(&format!("{SEEDS}[pattern]\nparities = grey\n")), "parity");
        assert!(bad(&format!("{SEEDS}[train]\nseed = 4\n")), "duplicate");
        assert!(bad("rings = 3\n"), "no section");
        assert!(bad(&format!("{SEEDS}[phantom]\ncounts_scale = 1\naffected_mean_counts = 4\n")));
    }

    #[test]
    fn comments_and_whitespace() {
        let text = format!("# experiment\n{SEEDS}\n[split] ; trailing\n  train = 10 # ten\nval=3\ntest=3\n");
        let cfg: ExperimentConfig = text.parse().unwrap();
        assert_eq!(cfg.split, Split { train: 10, val: 3, test: 3 });
    }
}
