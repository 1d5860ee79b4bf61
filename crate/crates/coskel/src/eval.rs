//! Evaluation: tolerance-based skeleton F-measures, Jaccard overlap,
//! ground-truth skeleton construction and dataset ingestion.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::prune::{prune_skeleton, SkeletonEnergyConfig};
use crate::raster::{mask_iou, BinaryMask, Raster, ScalarMap};
use crate::skeleton::{medial_axis, squared_distance_to_set};

/// F-measure with skeleton pixels counted correct within Euclidean distance
/// `d` of the other mask. Distances are compared exactly in squared integer
/// form. Returns 0 when precision and recall are both 0.
pub fn f_measure_at_d(pred: &BinaryMask, gt: &BinaryMask, d: f64) -> Result<f64> {
    if !pred.same_dims(gt) {
        return Err(Error::dims((gt.width(), gt.height()), (pred.width(), pred.height())));
    }
    let d_sq = d * d;
    let within = |mask: &BinaryMask, reference: &BinaryMask| -> (usize, usize) {
        let dist = squared_distance_to_set(reference);
        let mut hits = 0;
        let mut total = 0;
        for (x, y) in mask.foreground() {
            total += 1;
            let sq = dist[y * mask.width() + x];
            if sq != u64::MAX && (sq as f64) <= d_sq {
                hits += 1;
            }
        }
        (hits, total)
    };
    let (p_hits, p_total) = within(pred, gt);
    let (r_hits, r_total) = within(gt, pred);
    let precision = if p_total == 0 { 0.0 } else { p_hits as f64 / p_total as f64 };
    let recall = if r_total == 0 { 0.0 } else { r_hits as f64 / r_total as f64 };
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Image-size-adaptive tolerance: `round(0.0075 * diagonal)`.
pub fn adaptive_tolerance(width: usize, height: usize) -> f64 {
    (0.0075 * ((width * width + height * height) as f64).sqrt()).round()
}

/// F-measure at the adaptive tolerance.
pub fn f_alpha(pred: &BinaryMask, gt: &BinaryMask, width: usize, height: usize) -> Result<f64> {
    f_measure_at_d(pred, gt, adaptive_tolerance(width, height))
}

/// Segmentation overlap (intersection over union).
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    mask_iou(pred, gt)
}

/// Builds the skeleton annotation for a ground-truth segmentation mask:
/// medial axis followed by pruning with no cross-image term.
pub fn build_skeleton_groundtruth(
    gt_mask: &BinaryMask,
    cfg: &SkeletonEnergyConfig,
) -> Result<BinaryMask> {
    let geom = medial_axis(gt_mask)?;
    let cfg = SkeletonEnergyConfig {
        lambda: 0.0,
        ..*cfg
    };
    let prior = ScalarMap::zeros(gt_mask.width(), gt_mask.height());
    prune_skeleton(&geom, gt_mask, &prior, &cfg)
}

/// Train/test membership of a dataset entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    All,
}

/// One ingested image with whatever annotations were found next to it.
#[derive(Clone, Debug)]
pub struct DatasetEntry {
    pub stem: String,
    pub path: PathBuf,
    pub category: Option<String>,
    pub image: Raster,
    pub gt_segmentation: Option<BinaryMask>,
    pub gt_skeleton: Option<BinaryMask>,
    pub split: Split,
}

/// Directory organization of a dataset root.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Detect: subdirectories under `images/` mean categories.
    Auto,
    /// `images/<category>/<stem>.{png,jpg}` with masks and skeletons beside.
    Categorized,
    /// `images/<stem>.{png,jpg}`.
    Flat,
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
    )
}

fn list_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Walks a dataset root, returning ingested entries plus a report line for
/// every rejected one. Annotation masks must match their image dimensions;
/// an entry failing that is rejected while the rest proceed.
pub fn ingest_dataset(root: impl AsRef<Path>, layout: Layout) -> Result<(Vec<DatasetEntry>, Vec<String>)> {
    let root = root.as_ref();
    let images_dir = root.join("images");
    if !images_dir.is_dir() {
        return Err(Error::MissingInput(format!(
            "no images directory under {}",
            root.display()
        )));
    }

    // Optional training split: one stem per line.
    let train_list: Option<Vec<String>> = {
        let path = root.join("train_list.txt");
        if path.is_file() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Some(
                text.lines()
                    .map(|l| l.trim().to_string())
                    .filter(|l| !l.is_empty())
                    .collect(),
            )
        } else {
            None
        }
    };

    let categorized = match layout {
        Layout::Categorized => true,
        Layout::Flat => false,
        Layout::Auto => list_dir(&images_dir)?.iter().any(|p| p.is_dir()),
    };

    let mut sources: Vec<(Option<String>, PathBuf)> = Vec::new();
    if categorized {
        for dir in list_dir(&images_dir)? {
            if !dir.is_dir() {
                continue;
            }
            let category = dir.file_name().unwrap().to_string_lossy().to_string();
            for file in list_dir(&dir)? {
                if is_image_file(&file) {
                    sources.push((Some(category.clone()), file));
                }
            }
        }
    } else {
        for file in list_dir(&images_dir)? {
            if is_image_file(&file) {
                sources.push((None, file));
            }
        }
    }

    let mut entries = Vec::new();
    let mut reports = Vec::new();
    for (category, path) in sources {
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        let image = match io::load_raster(&path) {
            Ok(img) => img,
            Err(e) => {
                reports.push(format!("{}: unreadable image ({e})", path.display()));
                continue;
            }
        };
        let annotation = |kind: &str| -> std::result::Result<Option<BinaryMask>, String> {
            let p = match &category {
                Some(c) => root.join(kind).join(c).join(format!("{stem}.png")),
                None => root.join(kind).join(format!("{stem}.png")),
            };
            if !p.is_file() {
                return Ok(None);
            }
            let mask = io::load_mask(&p).map_err(|e| format!("{}: unreadable ({e})", p.display()))?;
            if mask.width() != image.width() || mask.height() != image.height() {
                return Err(format!(
                    "{}: {}x{} does not match image {}x{}",
                    p.display(),
                    mask.width(),
                    mask.height(),
                    image.width(),
                    image.height()
                ));
            }
            Ok(Some(mask))
        };
        let gt_segmentation = match annotation("masks") {
            Ok(m) => m,
            Err(report) => {
                reports.push(report);
                continue;
            }
        };
        let gt_skeleton = match annotation("skeletons") {
            Ok(m) => m,
            Err(report) => {
                reports.push(report);
                continue;
            }
        };
        let split = match &train_list {
            Some(list) => {
                if list.iter().any(|s| s == &stem) {
                    Split::Train
                } else {
                    Split::Test
                }
            }
            None => Split::All,
        };
        entries.push(DatasetEntry {
            stem,
            path,
            category,
            image,
            gt_segmentation,
            gt_skeleton,
            split,
        });
    }
    Ok((entries, reports))
}

/// One evaluated image: tolerance sweep, adaptive F and Jaccard. Metrics are
/// absent when the matching annotation is absent.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub stem: String,
    pub category: String,
    pub f_at: [Option<f64>; 6],
    pub f_alpha: Option<f64>,
    pub jaccard: Option<f64>,
}

/// Skeleton and segmentation metrics for one image pair.
pub fn evaluate_image(
    stem: &str,
    category: Option<&str>,
    pred_skeleton: Option<(&BinaryMask, &BinaryMask)>,
    pred_segmentation: Option<(&BinaryMask, &BinaryMask)>,
) -> Result<MetricsRow> {
    let mut f_at = [None; 6];
    let mut fa = None;
    if let Some((pred, gt)) = pred_skeleton {
        for (d, slot) in f_at.iter_mut().enumerate() {
            *slot = Some(f_measure_at_d(pred, gt, d as f64)?);
        }
        fa = Some(f_alpha(pred, gt, pred.width(), pred.height())?);
    }
    let j = match pred_segmentation {
        Some((pred, gt)) => Some(jaccard(pred, gt)?),
        None => None,
    };
    Ok(MetricsRow {
        stem: stem.to_string(),
        category: category.unwrap_or("").to_string(),
        f_at,
        f_alpha: fa,
        jaccard: j,
    })
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn variance(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    Some(values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64)
}

/// Writes the CSV report: one row per image, a mean row per category, the
/// overall mean, and the variance of the per-category means.
pub fn write_report(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = |line: &str| -> Result<()> {
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))
    };
    w("stem,category,f0,f1,f2,f3,f4,f5,f_alpha,jaccard")?;

    let column = |rows: &[&MetricsRow], pick: &dyn Fn(&MetricsRow) -> Option<f64>| -> Vec<f64> {
        rows.iter().filter_map(|r| pick(r)).collect()
    };
    let pickers: Vec<Box<dyn Fn(&MetricsRow) -> Option<f64>>> = (0..6)
        .map(|d| Box::new(move |r: &MetricsRow| r.f_at[d]) as Box<dyn Fn(&MetricsRow) -> Option<f64>>)
        .chain([
            Box::new(|r: &MetricsRow| r.f_alpha) as Box<dyn Fn(&MetricsRow) -> Option<f64>>,
            Box::new(|r: &MetricsRow| r.jaccard) as Box<dyn Fn(&MetricsRow) -> Option<f64>>,
        ])
        .collect();

    for row in rows {
        let cells: Vec<String> = pickers.iter().map(|p| fmt_cell(p(row))).collect();
        w(&format!("{},{},{}", row.stem, row.category, cells.join(",")))?;
    }

    let mut categories: Vec<String> = rows.iter().map(|r| r.category.clone()).collect();
    categories.sort();
    categories.dedup();
    let mut category_means: Vec<Vec<Option<f64>>> = Vec::new();
    for cat in &categories {
        let members: Vec<&MetricsRow> = rows.iter().filter(|r| &r.category == cat).collect();
        let means: Vec<Option<f64>> = pickers.iter().map(|p| mean(&column(&members, p))).collect();
        let cells: Vec<String> = means.iter().map(|&m| fmt_cell(m)).collect();
        w(&format!("mean,{},{}", cat, cells.join(",")))?;
        category_means.push(means);
    }
    let all: Vec<&MetricsRow> = rows.iter().collect();
    let overall: Vec<String> = pickers.iter().map(|p| fmt_cell(mean(&column(&all, p)))).collect();
    w(&format!("mean,all,{}", overall.join(",")))?;
    let var_cells: Vec<String> = (0..pickers.len())
        .map(|i| {
            let per_cat: Vec<f64> = category_means.iter().filter_map(|m| m[i]).collect();
            fmt_cell(variance(&per_cat))
        })
        .collect();
    w(&format!("variance,all,{}", var_cells.join(",")))?;
    Ok(())
}
