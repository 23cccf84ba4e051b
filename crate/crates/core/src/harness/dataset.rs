//! Synthetic dataset generation and the manifest describing it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::error::{Error, Result};
use crate::geometry::{PlaneTable, ScannerGeometry};
use crate::phantom::{build_stack, make_phantom, mean_affected_line_integral, Phantom, PhantomSpec};
use crate::rng::derive_seed;
use crate::sparsity::{apply_mask, chessboard_mask, sinogram_masks, Parity, PlaneMaskSet};
use crate::stack::SinogramStack;

use super::config::{CountsScale, ExperimentConfig};
use super::stackfile::{load_stack_of, save_stack, StackKind};

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Original,
    Distorted,
    Weights,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Original, Role::Distorted, Role::Weights];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Original => "original",
            Role::Distorted => "distorted",
            Role::Weights => "weights",
        }
    }

    pub fn kind(self) -> StackKind {
        match self {
            Role::Weights => StackKind::MaskWeights,
            _ => StackKind::Sinogram,
        }
    }
}

pub fn stack_file(phantom: usize, parity: Parity, role: Role) -> String {
    format!("p{phantom:03}_{}_{}.spst", parity.as_str(), role.as_str())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub role: Role,
    pub phantom: usize,
    pub parity: Parity,
    pub seed: u64,
    pub planes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub counts_scale: f64,
    /// expected counts per affected bin the scale was derived from
    pub expected_affected_mean: f64,
    /// mean of the generated original counts over affected bins
    pub measured_affected_mean: f64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# sparsepet-manifest v1\n");
        let _ = writeln!(s, "# counts_scale={}", self.counts_scale);
        let _ = writeln!(s, "# expected_affected_mean={}", self.expected_affected_mean);
        let _ = writeln!(s, "# measured_affected_mean={}", self.measured_affected_mean);
        s.push_str("file\trole\tkind\tphantom\tparity\tseed\tplanes\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.file,
                e.role.as_str(),
                e.role.kind().as_str(),
                e.phantom,
                e.parity.as_str(),
                e.seed,
                e.planes
            );
        }
        s
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
        let mut m = Manifest {
            counts_scale: f64::NAN,
            expected_affected_mean: f64::NAN,
            measured_affected_mean: f64::NAN,
            entries: Vec::new(),
        };
        let mut lines = text.lines();
        if lines.next() != Some("# sparsepet-manifest v1") {
            return Err(bad("missing schema line"));
        }
        for line in lines {
            if let Some(meta) = line.strip_prefix("# ") {
                let (k, v) = meta.split_once('=').ok_or_else(|| bad(line))?;
                let v: f64 = v.parse().map_err(|_| bad(line))?;
                match k {
                    "counts_scale" => m.counts_scale = v,
                    "expected_affected_mean" => m.expected_affected_mean = v,
                    "measured_affected_mean" => m.measured_affected_mean = v,
                    _ => return Err(bad(line)),
                }
                continue;
            }
            if line.starts_with("file\t") {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(bad(line));
            }
            let role = Role::ALL
                .into_iter()
                .find(|r| r.as_str() == f[1])
                .ok_or_else(|| bad(line))?;
            m.entries.push(ManifestEntry {
                file: f[0].to_string(),
                role,
                phantom: f[3].parse().map_err(|_| bad(line))?,
                parity: f[4].parse().map_err(|_| bad(line))?,
                seed: f[5].parse().map_err(|_| bad(line))?,
                planes: f[6].parse().map_err(|_| bad(line))?,
            });
        }
        Ok(m)
    }
}

pub fn phantom_spec(cfg: &ExperimentConfig) -> PhantomSpec {
    PhantomSpec {
        axially_uniform: cfg.phantom.axially_uniform,
        ..PhantomSpec::for_geometry(&cfg.geometry)
    }
}

pub fn phantom_seed(cfg: &ExperimentConfig, phantom: usize) -> u64 {
    derive_seed(cfg.phantom.seed, phantom as u64)
}

/// Phantom `i` of the dataset (regenerated, not read from disk).
pub fn phantom(cfg: &ExperimentConfig, i: usize) -> Phantom {
    make_phantom(phantom_seed(cfg, i), &phantom_spec(cfg))
}

pub fn masks_for(geom: &ScannerGeometry, cfg: &ExperimentConfig, parity: Parity) -> Result<PlaneMaskSet> {
    Ok(sinogram_masks(geom, &chessboard_mask(geom, cfg.pattern.pattern(parity))?))
}

/// The counts scale and the expected affected-bin mean it produces.
pub fn calibrate(cfg: &ExperimentConfig, phantoms: &[Phantom], masks: &[PlaneMaskSet]) -> Result<(f64, f64)> {
    let integral = masks
        .iter()
        .map(|m| mean_affected_line_integral(phantoms, &cfg.geometry, m))
        .sum::<f64>()
        / masks.len() as f64;
    match cfg.phantom.counts_scale {
        CountsScale::Fixed(s) => Ok((s, s * integral)),
        CountsScale::AffectedMean(target) => {
            if !(integral > 0.0) {
                return Err(Error::Degenerate("no activity on affected bins to calibrate against".into()));
            }
            Ok((target / integral, target))
        }
    }
}

pub fn dataset_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("dataset")
}

/// Writes original, distorted and weight stacks for every phantom and
/// parity, and the manifest.
pub fn generate(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let dir = dataset_dir(cfg);
    fs::create_dir_all(&dir)?;
    let geom = &cfg.geometry;
    let table = PlaneTable::new(geom);
    let phantoms: Vec<Phantom> = (0..cfg.phantom.count).map(|i| phantom(cfg, i)).collect();
    let masks: Vec<PlaneMaskSet> = cfg
        .pattern
        .parities
        .iter()
        .map(|&p| masks_for(geom, cfg, p))
        .collect::<Result<_>>()?;
    let (scale, expected) = calibrate(cfg, &phantoms, &masks)?;
    info!("counts_scale {scale:.6e}: expected affected-bin mean {expected:.3}");

    let mut entries = Vec::new();
    let (mut affected_sum, mut affected_n) = (0.0, 0usize);
    for (i, ph) in phantoms.iter().enumerate() {
        let pseed = phantom_seed(cfg, i);
        let counts_seed = derive_seed(pseed, 1);
        let (_, counts) = build_stack(ph, geom, scale, counts_seed)?;
        for (&parity, m) in cfg.pattern.parities.iter().zip(&masks) {
            let thin_seed = derive_seed(pseed, 2 + parity.bit() as u64);
            let distorted = apply_mask(&counts, m, thin_seed)?;
            for (plane, w) in counts.planes.iter().zip(&m.weights) {
                for (&v, &wt) in plane.iter().zip(w.iter()) {
                    if wt < 1.0 {
                        affected_sum += v as f64;
                        affected_n += 1;
                    }
                }
            }
            let stacks: [(Role, &SinogramStack, u64); 3] = [
                (Role::Original, &counts, counts_seed),
                (Role::Distorted, &distorted, thin_seed),
                (Role::Weights, &m.as_stack(), pseed),
            ];
            for (role, stack, seed) in stacks {
                let file = stack_file(i, parity, role);
                save_stack(&dir.join(&file), role.kind(), &stack.planes)?;
                entries.push(ManifestEntry {
                    file,
                    role,
                    phantom: i,
                    parity,
                    seed,
                    planes: stack.len(),
                });
            }
        }
        info!("phantom {i}: {} planes per stack", table.len());
    }
    let manifest = Manifest {
        counts_scale: scale,
        expected_affected_mean: expected,
        measured_affected_mean: if affected_n > 0 { affected_sum / affected_n as f64 } else { 0.0 },
        entries,
    };
    fs::write(dir.join(MANIFEST), manifest.to_text())?;
    fs::write(cfg.output_dir.join("config.ini"), cfg.to_ini())?;
    Ok(manifest)
}

/// Original, distorted and mask stacks of one phantom and parity.
pub struct StackSet {
    pub original: SinogramStack,
    pub distorted: SinogramStack,
    pub masks: PlaneMaskSet,
}

pub fn load_stacks(dir: &Path, phantom: usize, parity: Parity) -> Result<StackSet> {
    let load = |role: Role| load_stack_of(&dir.join(stack_file(phantom, parity, role)), role.kind());
    let original = SinogramStack::new(load(Role::Original)?, true);
    let distorted = SinogramStack::new(load(Role::Distorted)?, true);
    let masks = PlaneMaskSet::from_stack(SinogramStack::new(load(Role::Weights)?, false))?;
    if original.len() != distorted.len() || original.len() != masks.len() {
        return Err(Error::Format(format!("phantom {phantom} {} stacks differ in length", parity.as_str())));
    }
    Ok(StackSet {
        original,
        distorted,
        masks,
    })
}
