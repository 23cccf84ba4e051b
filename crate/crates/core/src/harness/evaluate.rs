//! Test-split evaluation in the sinogram and image domains.

use std::fs;
use std::path::PathBuf;

use log::info;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{PlaneKind, PlaneTable};
use crate::interp::{fill_sinogram, global_scale_boost, FillStatus};
use crate::metrics::{
    compare_planes, correlation, dynamic_range, fisher_z_compare, mann_whitney_u, roi_metrics, sample_pixels,
    BoxSummary, Correlation, MannWhitney, PlaneComparison, RoiMetrics,
};
use crate::phantom::{background_roi, bladder_roi, rasterize, ImageGrid};
use crate::recon::{osem, SystemMatrix};
use crate::restoration::{restore_stack, ResUNet};
use crate::rng::derive_seed;
use crate::sparsity::Parity;
use crate::stack::{Plane, SinogramStack};

use super::config::ExperimentConfig;
use super::dataset::{self, dataset_dir};
use super::report::{num, opt, write_pgm, CsvTable};
use super::stackfile::{save_stack, StackKind};
use super::par_map;

/// The evaluated arms, each compared against the original data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Distorted,
    Interpolated,
    /// interpolation with the summed-plane global scale
    Boosted,
    Restored,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Distorted, Arm::Interpolated, Arm::Boosted, Arm::Restored];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Distorted => "distorted",
            Arm::Interpolated => "interpolated",
            Arm::Boosted => "boosted",
            Arm::Restored => "restored",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Sinogram,
    Image,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Sinogram => "sinogram",
            Domain::Image => "image",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinogramRow {
    pub phantom: usize,
    pub parity: Parity,
    pub plane: usize,
    pub kind: PlaneKind,
    pub arm: Arm,
    pub cmp: PlaneComparison,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRow {
    pub phantom: usize,
    pub parity: Parity,
    pub ring: usize,
    pub arm: Arm,
    /// MAE masked to the body outline
    pub cmp: PlaneComparison,
    pub roi: Option<RoiMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub domain: Domain,
    pub metric: &'static str,
    pub arm: Arm,
    pub summary: BoxSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRow {
    pub domain: Domain,
    pub metric: &'static str,
    pub arm_a: Arm,
    pub arm_b: Arm,
    pub result: MannWhitney,
    pub n_a: usize,
    pub n_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub domain: Domain,
    pub arm: Arm,
    pub fit: Correlation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherRow {
    pub domain: Domain,
    pub arm_a: Arm,
    pub arm_b: Arm,
    pub z: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub sinogram: Vec<SinogramRow>,
    pub image: Vec<ImageRow>,
    pub summary: Vec<SummaryRow>,
    pub tests: Vec<TestRow>,
    pub correlations: Vec<CorrelationRow>,
    pub fisher: Vec<FisherRow>,
    /// summed_rd1 plane totals of the unboosted / boosted interpolation
    /// over the original totals, pooled over the test split
    pub summed_total_ratio: (f64, f64),
    pub fill_failures: usize,
}

impl EvalReport {
    pub fn sinogram_metric(&self, arm: Arm, metric: &str) -> Vec<f64> {
        self.sinogram
            .iter()
            .filter(|r| r.arm == arm)
            .filter_map(|r| metric_of(&r.cmp, metric))
            .collect()
    }

    pub fn image_metric(&self, arm: Arm, metric: &str) -> Vec<f64> {
        self.image
            .iter()
            .filter(|r| r.arm == arm)
            .filter_map(|r| metric_of(&r.cmp, metric))
            .collect()
    }

    pub fn summary_of(&self, domain: Domain, metric: &str, arm: Arm) -> Option<&BoxSummary> {
        self.summary
            .iter()
            .find(|s| s.domain == domain && s.metric == metric && s.arm == arm)
            .map(|s| &s.summary)
    }

    pub fn test_of(&self, domain: Domain, metric: &str) -> Option<&MannWhitney> {
        self.tests
            .iter()
            .find(|t| t.domain == domain && t.metric == metric)
            .map(|t| &t.result)
    }
}

pub const METRICS: [&str; 3] = ["ssim", "mae_full", "mae_masked"];

fn metric_of(c: &PlaneComparison, metric: &str) -> Option<f64> {
    match metric {
        "ssim" => Some(c.ssim),
        "mae_full" => Some(c.mae_full),
        "mae_masked" => c.mae_masked,
        _ => None,
    }
}

pub fn eval_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("eval")
}

fn to_f64(p: &Plane) -> Array2<f64> {
    p.mapv(|v| v as f64)
}

/// Pixel pairs pooled over a domain: (original, arm) values.
#[derive(Default)]
struct Pool {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Pool {
    fn extend(&mut self, a: &Array2<f64>, b: &Array2<f64>, mask: &Array2<bool>) {
        for ((&x, &y), &m) in a.iter().zip(b.iter()).zip(mask.iter()) {
            if m {
                self.x.push(x);
                self.y.push(y);
            }
        }
    }
}

fn interpolate(distorted: &SinogramStack, masks: &crate::sparsity::PlaneMaskSet, threads: usize) -> Result<(SinogramStack, usize)> {
    let ids: Vec<usize> = (0..distorted.len()).collect();
    let filled = par_map(&ids, threads, |&p| fill_sinogram(&distorted.planes[p], &masks.weights[p]))?;
    let failures = filled.iter().filter(|(_, s)| *s == FillStatus::InsufficientReference).count();
    Ok((SinogramStack::new(filled.into_iter().map(|(p, _)| p).collect(), false), failures))
}

/// Restores and interpolates the test split, reconstructs the direct
/// planes of every arm, and writes the metric tables, stacks and dumps.
/// Dataset and model files are only read.
pub fn evaluate(cfg: &ExperimentConfig, model: &ResUNet<f32>, threads: usize) -> Result<EvalReport> {
    cfg.validate()?;
    let data = dataset_dir(cfg);
    let out = eval_dir(cfg);
    fs::create_dir_all(&out)?;
    let geom = &cfg.geometry;
    let table = PlaneTable::new(geom);
    let grid = ImageGrid {
        size: cfg.recon.image_size,
        pixel_mm: cfg.recon.pixel_mm,
    };
    let system = SystemMatrix::new(geom, grid);
    let mut report = EvalReport::default();
    let mut sino_pool: Vec<(Arm, Pool)> = Arm::ALL.iter().map(|&a| (a, Pool::default())).collect();
    let mut img_pool: Vec<(Arm, Pool)> = Arm::ALL.iter().map(|&a| (a, Pool::default())).collect();
    let (mut summed_orig, mut summed_interp, mut summed_boost) = (0.0, 0.0, 0.0);

    for i in cfg.split.test_ids() {
        let phantom = dataset::phantom(cfg, i);
        for &parity in &cfg.pattern.parities {
            let tag = format!("p{i:03}_{}", parity.as_str());
            let s = dataset::load_stacks(&data, i, parity)?;
            let restored = restore_stack(model, &s.distorted, &s.masks)?;
            let (interpolated, failures) = interpolate(&s.distorted, &s.masks, threads)?;
            report.fill_failures += failures;
            let boosted = global_scale_boost(&interpolated, &s.masks, &table)?;
            save_stack(&out.join(format!("{tag}_restored.spst")), StackKind::Sinogram, &restored.planes)?;
            save_stack(&out.join(format!("{tag}_interpolated.spst")), StackKind::Sinogram, &interpolated.planes)?;
            save_stack(&out.join(format!("{tag}_boosted.spst")), StackKind::Sinogram, &boosted.planes)?;
            let arms: [(Arm, &SinogramStack); 4] = [
                (Arm::Distorted, &s.distorted),
                (Arm::Interpolated, &interpolated),
                (Arm::Boosted, &boosted),
                (Arm::Restored, &restored),
            ];

            for plane in table.planes() {
                let p = plane.plane_id;
                let orig = to_f64(&s.original.planes[p]);
                let affected = s.masks.affected_mask(p);
                if plane.kind == PlaneKind::SummedRd1 {
                    summed_orig += orig.sum();
                    summed_interp += interpolated.planes[p].iter().map(|&v| v as f64).sum::<f64>();
                    summed_boost += boosted.planes[p].iter().map(|&v| v as f64).sum::<f64>();
                }
                for ((arm, stack), (_, pool)) in arms.iter().zip(sino_pool.iter_mut()) {
                    let v = to_f64(&stack.planes[p]);
                    let cmp = compare_planes(&v, &orig, dynamic_range(&v, &orig), &affected)?;
                    pool.extend(&orig, &v, &affected);
                    report.sinogram.push(SinogramRow {
                        phantom: i,
                        parity,
                        plane: p,
                        kind: plane.kind,
                        arm: *arm,
                        cmp,
                    });
                }
            }

            // image domain: direct planes only
            let rings: Vec<usize> = (0..geom.num_rings).collect();
            let recon_of = |stack: &SinogramStack| -> Result<Vec<Array2<f64>>> {
                par_map(&rings, threads, |&r| osem(&to_f64(&stack.planes[table.direct_plane(r)]), &system, &cfg.recon))
            };
            let reference = recon_of(&s.original)?;
            let mut images: Vec<(Arm, Vec<Array2<f64>>)> = Vec::new();
            for (arm, stack) in arms {
                images.push((arm, recon_of(stack)?));
            }
            for (r, slice) in phantom.slices.iter().enumerate() {
                let body = rasterize(slice, grid, 2).mapv(|v| v > 0.0);
                let bladder = bladder_roi(slice, grid, cfg.eval.bladder_erosion);
                let background = background_roi(
                    slice,
                    grid,
                    cfg.eval.roi_area_px,
                    5.0,
                    derive_seed(cfg.eval.seed, (i * 1000 + r) as u64),
                );
                for ((arm, imgs), (_, pool)) in images.iter().zip(img_pool.iter_mut()) {
                    let img = &imgs[r];
                    let cmp = compare_planes(img, &reference[r], dynamic_range(img, &reference[r]), &body)?;
                    pool.extend(&reference[r], img, &body);
                    let roi = match (&bladder, &background) {
                        (Some(b), Some(g)) => roi_metrics(img, &reference[r], b, g).ok(),
                        _ => None,
                    };
                    report.image.push(ImageRow {
                        phantom: i,
                        parity,
                        ring: r,
                        arm: *arm,
                        cmp,
                        roi,
                    });
                }
            }
            let as_f32 = |v: &[Array2<f64>]| -> Vec<Plane> { v.iter().map(|a| a.mapv(|x| x as f32)).collect() };
            save_stack(&out.join(format!("{tag}_recon_original.spst")), StackKind::Image, &as_f32(&reference))?;
            for (arm, imgs) in &images {
                save_stack(&out.join(format!("{tag}_recon_{}.spst", arm.as_str())), StackKind::Image, &as_f32(imgs))?;
                let diff: Vec<Array2<f64>> = imgs.iter().zip(&reference).map(|(a, b)| a - b).collect();
                save_stack(&out.join(format!("{tag}_diff_{}.spst", arm.as_str())), StackKind::Image, &as_f32(&diff))?;
            }
            if cfg.eval.pgm_dumps {
                let mid = geom.num_rings / 2;
                write_pgm(&out.join(format!("{tag}_ring{mid:02}_original.pgm")), &reference[mid])?;
                for (arm, imgs) in &images {
                    write_pgm(&out.join(format!("{tag}_ring{mid:02}_{}.pgm", arm.as_str())), &imgs[mid])?;
                }
            }
            info!("evaluated {tag}");
        }
    }
    if report.sinogram.is_empty() {
        return Err(Error::Empty("test split has no planes".into()));
    }
    report.summed_total_ratio = if summed_orig > 0.0 {
        (summed_interp / summed_orig, summed_boost / summed_orig)
    } else {
        (f64::NAN, f64::NAN)
    };

    for domain in [Domain::Sinogram, Domain::Image] {
        for metric in METRICS {
            for arm in Arm::ALL {
                let v = match domain {
                    Domain::Sinogram => report.sinogram_metric(arm, metric),
                    Domain::Image => report.image_metric(arm, metric),
                };
                if let Ok(summary) = BoxSummary::of(&v) {
                    report.summary.push(SummaryRow {
                        domain,
                        metric,
                        arm,
                        summary,
                    });
                }
            }
        }
        for metric in ["mae_masked", "ssim"] {
            let (a, b) = match domain {
                Domain::Sinogram => (
                    report.sinogram_metric(Arm::Restored, metric),
                    report.sinogram_metric(Arm::Interpolated, metric),
                ),
                Domain::Image => (
                    report.image_metric(Arm::Restored, metric),
                    report.image_metric(Arm::Interpolated, metric),
                ),
            };
            if let Ok(result) = mann_whitney_u(&a, &b) {
                report.tests.push(TestRow {
                    domain,
                    metric,
                    arm_a: Arm::Restored,
                    arm_b: Arm::Interpolated,
                    result,
                    n_a: a.len(),
                    n_b: b.len(),
                });
            }
        }
    }

    let mut scatter = CsvTable::new("scatter", 1, &["domain", "arm", "original", "value"]);
    for (domain, pools) in [(Domain::Sinogram, &sino_pool), (Domain::Image, &img_pool)] {
        for (k, (arm, pool)) in pools.iter().enumerate() {
            let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("1 x n");
            let (x, y) = sample_pixels(&row(&pool.x), &row(&pool.y), cfg.eval.correlation_samples, derive_seed(cfg.eval.seed, k as u64))?;
            for (a, b) in x.iter().zip(&y) {
                scatter.push(vec![domain.as_str().into(), arm.as_str().into(), num(a), num(b)]);
            }
            if let Ok(fit) = correlation(&x, &y) {
                report.correlations.push(CorrelationRow { domain, arm: *arm, fit });
            }
        }
        let fit = |arm: Arm| {
            report
                .correlations
                .iter()
                .find(|c| c.domain == domain && c.arm == arm)
                .map(|c| c.fit)
        };
        if let (Some(r), Some(p)) = (fit(Arm::Restored), fit(Arm::Interpolated)) {
            if let Ok((z, pv)) = fisher_z_compare(r.r, r.n, p.r, p.n) {
                report.fisher.push(FisherRow {
                    domain,
                    arm_a: Arm::Restored,
                    arm_b: Arm::Interpolated,
                    z,
                    p: pv,
                });
            }
        }
    }
    scatter.write(&out.join("scatter.csv"))?;
    write_tables(&report, &out)?;
    Ok(report)
}

fn write_tables(report: &EvalReport, out: &std::path::Path) -> Result<()> {
    let mut t = CsvTable::new(
        "sinogram-metrics",
        1,
        &["phantom", "parity", "plane", "kind", "arm", "ssim", "mae_full", "mae_masked"],
    );
    for r in &report.sinogram {
        t.push(vec![
            num(r.phantom),
            r.parity.as_str().into(),
            num(r.plane),
            r.kind.as_str().into(),
            r.arm.as_str().into(),
            num(r.cmp.ssim),
            num(r.cmp.mae_full),
            opt(r.cmp.mae_masked),
        ]);
    }
    t.write(&out.join("sinogram_metrics.csv"))?;

    let mut t = CsvTable::new(
        "image-metrics",
        1,
        &[
            "phantom",
            "parity",
            "ring",
            "arm",
            "ssim",
            "mae_full",
            "mae_masked",
            "bv_background",
            "bv_bladder",
            "rbv_background",
            "rbv_bladder",
            "cr",
        ],
    );
    for r in &report.image {
        let roi = |f: fn(&RoiMetrics) -> f64| opt(r.roi.as_ref().map(f));
        t.push(vec![
            num(r.phantom),
            r.parity.as_str().into(),
            num(r.ring),
            r.arm.as_str().into(),
            num(r.cmp.ssim),
            num(r.cmp.mae_full),
            opt(r.cmp.mae_masked),
            roi(|m| m.bv_background),
            roi(|m| m.bv_bladder),
            roi(|m| m.rbv_background),
            roi(|m| m.rbv_bladder),
            roi(|m| m.cr),
        ]);
    }
    t.write(&out.join("image_metrics.csv"))?;

    let mut t = CsvTable::new("summary", 1, &["domain", "metric", "arm", "n", "p5", "p25", "p50", "p75", "p95"]);
    for s in &report.summary {
        let b = &s.summary;
        t.push(vec![
            s.domain.as_str().into(),
            s.metric.into(),
            s.arm.as_str().into(),
            num(b.n),
            num(b.p5),
            num(b.p25),
            num(b.p50),
            num(b.p75),
            num(b.p95),
        ]);
    }
    t.footer("whiskers at the 5th and 95th percentiles, linear interpolation");
    t.write(&out.join("summary.csv"))?;

    let mut t = CsvTable::new(
        "tests",
        1,
        &["test", "domain", "metric", "arm_a", "arm_b", "n_a", "n_b", "statistic", "p", "method"],
    );
    for r in &report.tests {
        t.push(vec![
            "mann_whitney_u".into(),
            r.domain.as_str().into(),
            r.metric.into(),
            r.arm_a.as_str().into(),
            r.arm_b.as_str().into(),
            num(r.n_a),
            num(r.n_b),
            num(r.result.u),
            num(r.result.p),
            r.result.method.as_str().into(),
        ]);
    }
    for r in &report.fisher {
        let n = |arm: Arm| {
            report
                .correlations
                .iter()
                .find(|c| c.domain == r.domain && c.arm == arm)
                .map_or(0, |c| c.fit.n)
        };
        t.push(vec![
            "fisher_z".into(),
            r.domain.as_str().into(),
            "pixel_correlation".into(),
            r.arm_a.as_str().into(),
            r.arm_b.as_str().into(),
            num(n(r.arm_a)),
            num(n(r.arm_b)),
            num(r.z),
            num(r.p),
            "normal".into(),
        ]);
    }
    t.footer("mann-whitney samples are per-plane (sinogram) or per-slice (image) metric values");
    t.write(&out.join("tests.csv"))?;

    let mut t = CsvTable::new("correlation", 1, &["domain", "arm", "n", "r", "slope", "intercept"]);
    for c in &report.correlations {
        t.push(vec![
            c.domain.as_str().into(),
            c.arm.as_str().into(),
            num(c.fit.n),
            num(c.fit.r),
            num(c.fit.slope),
            num(c.fit.intercept),
        ]);
    }
    let (u, b) = report.summed_total_ratio;
    t.footer(format!("summed_rd1_total_ratio interpolated={u} boosted={b}"));
    t.write(&out.join("correlation.csv"))?;
    Ok(())
}
