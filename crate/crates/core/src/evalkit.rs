//! PSNR and outlier-rate evaluation over 8-bit RGB frames.

use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{ensure_dims, Error, Result};
use crate::imaging::{list_frames, open_image, FramePattern};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Full,
    Inner,
    Outer,
}

impl RegionKind {
    pub fn name(self) -> &'static str {
        match self {
            RegionKind::Full => "full",
            RegionKind::Inner => "inner",
            RegionKind::Outer => "outer",
        }
    }
}

/// Pixels a metric is evaluated on. `Inner` is the union of the
/// ground-truth instance pixels, `Outer` its complement.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Full,
    Inner(&'a [bool]),
    Outer(&'a [bool]),
}

impl Region<'_> {
    pub fn kind(&self) -> RegionKind {
        match self {
            Region::Full => RegionKind::Full,
            Region::Inner(_) => RegionKind::Inner,
            Region::Outer(_) => RegionKind::Outer,
        }
    }

    fn includes(&self, p: usize) -> bool {
        match self {
            Region::Full => true,
            Region::Inner(m) => m[p],
            Region::Outer(m) => !m[p],
        }
    }

    fn mask(&self) -> Option<&[bool]> {
        match self {
            Region::Full => None,
            Region::Inner(m) | Region::Outer(m) => Some(m),
        }
    }
}

fn check_pair(pred: &RgbImage, gt: &RgbImage) -> Result<()> {
    ensure_dims(pred.dimensions() == gt.dimensions(), || {
        format!("prediction is {:?}, ground truth is {:?}", pred.dimensions(), gt.dimensions())
    })
}

/// Sum of squared channel errors and number of pixels in the region.
pub fn squared_error(pred: &RgbImage, gt: &RgbImage, region: Region<'_>) -> Result<(f64, usize)> {
    check_pair(pred, gt)?;
    let n = (pred.width() * pred.height()) as usize;
    if let Some(m) = region.mask() {
        ensure_dims(m.len() == n, || format!("region mask has {} pixels, image has {n}", m.len()))?;
    }
    let mut sum = 0.0;
    let mut count = 0;
    for (p, (a, b)) in pred.pixels().zip(gt.pixels()).enumerate() {
        if !region.includes(p) {
            continue;
        }
        count += 1;
        for c in 0..3 {
            let d = a[c] as f64 - b[c] as f64;
            sum += d * d;
        }
    }
    Ok((sum, count))
}

/// Mean squared error over the region's pixels and the three channels.
pub fn mse(pred: &RgbImage, gt: &RgbImage, region: Region<'_>) -> Result<f64> {
    let (sum, count) = squared_error(pred, gt, region)?;
    if count == 0 {
        return Err(Error::UndefinedRegion(format!("{} region has no pixels", region.kind().name())));
    }
    Ok(sum / (3 * count) as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(pred: &RgbImage, gt: &RgbImage, region: Region<'_>) -> Result<f64> {
    mse(pred, gt, region).map(psnr_from_mse)
}

/// Percentage of pixels whose RGB Euclidean error is strictly above `threshold`.
pub fn outlier_rate(pred: &RgbImage, gt: &RgbImage, threshold: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let n = pred.pixels().len();
    if n == 0 {
        return Err(Error::UndefinedRegion("empty image".into()));
    }
    let t2 = threshold * threshold;
    let over = pred
        .pixels()
        .zip(gt.pixels())
        .filter(|(a, b)| {
            let d2: f64 = (0..3).map(|c| (a[c] as f64 - b[c] as f64).powi(2)).sum();
            threshold < 0.0 || d2 > t2
        })
        .count();
    Ok(100.0 * over as f64 / n as f64)
}

/// Per-frame values of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoScores {
    pub video: String,
    pub frames: Vec<f64>,
}

impl VideoScores {
    pub fn mean(&self) -> f64 {
        self.frames.iter().sum::<f64>() / self.frames.len() as f64
    }
}

/// One metric over a set of videos: per-frame values, per-video means and
/// the mean of the per-video means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub region: RegionKind,
    pub threshold: Option<f64>,
    pub videos: Vec<VideoScores>,
}

impl MetricReport {
    pub fn aggregate(&self) -> f64 {
        self.videos.iter().map(VideoScores::mean).sum::<f64>() / self.videos.len() as f64
    }
}

/// Predicted and ground-truth frames of one video.
#[derive(Debug, Clone)]
pub struct VideoPair {
    pub name: String,
    pub pred: Vec<RgbImage>,
    pub gt: Vec<RgbImage>,
    /// Per-frame ground-truth instance pixels, when available.
    pub instances: Option<Vec<Vec<bool>>>,
}

impl VideoPair {
    fn check(&self) -> Result<()> {
        if self.pred.is_empty() {
            return Err(Error::InvalidInput(format!("video {} has no frames", self.name)));
        }
        ensure_dims(self.pred.len() == self.gt.len(), || {
            format!(
                "video {}: {} predicted and {} ground-truth frames",
                self.name,
                self.pred.len(),
                self.gt.len()
            )
        })?;
        if let Some(m) = &self.instances {
            ensure_dims(m.len() == self.pred.len(), || {
                format!("video {}: {} instance masks for {} frames", self.name, m.len(), self.pred.len())
            })?;
        }
        Ok(())
    }
}

/// PSNR reports for the full frame and, when every video carries instance
/// masks, the inner and outer regions.
pub fn evaluate_psnr(videos: &[VideoPair]) -> Result<Vec<MetricReport>> {
    for v in videos {
        v.check()?;
    }
    let mut kinds = vec![RegionKind::Full];
    if !videos.is_empty() && videos.iter().all(|v| v.instances.is_some()) {
        kinds.extend([RegionKind::Inner, RegionKind::Outer]);
    }
    kinds
        .into_iter()
        .map(|kind| {
            let scores = videos
                .iter()
                .map(|v| {
                    let frames = (0..v.pred.len())
                        .into_par_iter()
                        .map(|k| {
                            let region = match (kind, &v.instances) {
                                (RegionKind::Inner, Some(m)) => Region::Inner(&m[k]),
                                (RegionKind::Outer, Some(m)) => Region::Outer(&m[k]),
                                _ => Region::Full,
                            };
                            psnr(&v.pred[k], &v.gt[k], region)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(VideoScores {
                        video: v.name.clone(),
                        frames,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricReport {
                metric: "psnr".into(),
                region: kind,
                threshold: None,
                videos: scores,
            })
        })
        .collect()
}

/// One outlier report per threshold.
pub fn outlier_sweep(videos: &[VideoPair], thresholds: &[f64]) -> Result<Vec<MetricReport>> {
    for v in videos {
        v.check()?;
    }
    thresholds
        .iter()
        .map(|&thr| {
            let scores = videos
                .iter()
                .map(|v| {
                    let frames = v
                        .pred
                        .par_iter()
                        .zip(&v.gt)
                        .map(|(p, g)| outlier_rate(p, g, thr))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(VideoScores {
                        video: v.name.clone(),
                        frames,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricReport {
                metric: "outlier".into(),
                region: RegionKind::Full,
                threshold: Some(thr),
                videos: scores,
            })
        })
        .collect()
}

/// CSV with columns `video,frame,metric,region,threshold,value`. Per-video
/// means use frame `mean`; the aggregate uses video `all`.
pub fn reports_to_csv(reports: &[MetricReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(["video", "frame", "metric", "region", "threshold", "value"])
        .map_err(csv_err)?;
    for r in reports {
        let thr = r.threshold.map(|t| t.to_string()).unwrap_or_default();
        let region = r.region.name();
        for v in &r.videos {
            for (k, val) in v.frames.iter().enumerate() {
                w.write_record([&v.video, &(k + 1).to_string(), &r.metric, region, &thr, &format!("{val:.6}")])
                    .map_err(csv_err)?;
            }
            w.write_record([&v.video, "mean", &r.metric, region, &thr, &format!("{:.6}", v.mean())])
                .map_err(csv_err)?;
        }
        w.write_record(["all", "mean", &r.metric, region, &thr, &format!("{:.6}", r.aggregate())])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Markdown table with one row per method and one column per heading;
/// missing cells print as `-`.
pub fn markdown_table(columns: &[String], rows: &[(String, Vec<Option<f64>>)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| Method | {} |", columns.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(columns.len()));
    for (name, values) in rows {
        let cells: Vec<String> = (0..columns.len())
            .map(|k| match values.get(k).copied().flatten() {
                Some(v) => format!("{v:.2}"),
                None => "-".into(),
            })
            .collect();
        let _ = writeln!(out, "| {name} | {} |", cells.join(" | "));
    }
    out
}

/// Column heading of a report: region for PSNR, threshold for outliers.
pub fn report_heading(r: &MetricReport) -> String {
    match r.threshold {
        Some(t) => format!("{} >{}", r.metric, t),
        None => format!("{} {}", r.metric, r.region.name()),
    }
}

/// Single-method Markdown summary of aggregate values.
pub fn reports_markdown(method: &str, reports: &[MetricReport]) -> String {
    let columns: Vec<String> = reports.iter().map(report_heading).collect();
    let values = reports.iter().map(|r| Some(r.aggregate())).collect();
    markdown_table(&columns, &[(method.to_string(), values)])
}

/// Loads an RGB frame directory in index order.
pub fn load_rgb_dir(dir: &Path, pattern: &FramePattern) -> Result<Vec<RgbImage>> {
    list_frames(dir, pattern)?
        .into_iter()
        .map(|(_, p)| open_image(&p).map(|img| img.to_rgb8()))
        .collect()
}

/// Loads binary mask PNGs; any non-zero pixel is inside.
pub fn load_mask_dir(dir: &Path, pattern: &FramePattern) -> Result<Vec<Vec<bool>>> {
    list_frames(dir, pattern)?
        .into_iter()
        .map(|(_, p)| open_image(&p).map(|img| img.to_luma8().pixels().map(|px| px[0] != 0).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn solid(w: u32, h: u32, c: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(c))
    }

    #[test]
    fn psnr_closed_forms() {
        let a = solid(4, 3, [10, 20, 30]);
        assert_eq!(psnr(&a, &a, Region::Full).unwrap(), PSNR_CAP);
        let b = solid(4, 3, [26, 36, 46]);
        let expect = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert!((psnr(&a, &b, Region::Full).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 24.0486).abs() < 1e-3);
        let black = solid(2, 2, [0, 0, 0]);
        let white = solid(2, 2, [255, 255, 255]);
        assert_eq!(psnr(&black, &white, Region::Full).unwrap(), 0.0);
    }

    #[test]
    fn empty_region_is_undefined() {
        let a = solid(2, 2, [1, 2, 3]);
        let none = vec![false; 4];
        assert!(matches!(psnr(&a, &a, Region::Inner(&none)), Err(Error::UndefinedRegion(_))));
        assert!(psnr(&a, &a, Region::Outer(&none)).is_ok());
    }

    #[test]
    fn outlier_boundaries() {
        let gt = solid(3, 3, [100, 100, 100]);
        assert_eq!(outlier_rate(&gt, &gt, 16.0).unwrap(), 0.0);
        assert_eq!(outlier_rate(&solid(3, 3, [116, 100, 100]), &gt, 16.0).unwrap(), 0.0);
        assert_eq!(outlier_rate(&solid(3, 3, [117, 100, 100]), &gt, 16.0).unwrap(), 100.0);
        assert!(outlier_rate(&solid(3, 2, [0, 0, 0]), &gt, 16.0).is_err());
    }

    #[test]
    fn aggregation_is_mean_of_video_means() {
        let r = MetricReport {
            metric: "psnr".into(),
            region: RegionKind::Full,
            threshold: None,
            videos: vec![
                VideoScores { video: "a".into(), frames: vec![10.0, 20.0, 30.0, 40.0] },
                VideoScores { video: "b".into(), frames: vec![50.0] },
            ],
        };
        assert_eq!(r.aggregate(), 37.5);
        let csv = reports_to_csv(&[r]).unwrap();
        assert!(csv.starts_with("video,frame,metric,region,threshold,value\n"));
        assert!(csv.contains("a,mean,psnr,full,,25.000000"));
        assert!(csv.contains("all,mean,psnr,full,,37.500000"));
    }

    #[test]
    fn markdown_layout() {
        let md = markdown_table(
            &["1st".into(), "Nth".into()],
            &[("ours".into(), vec![Some(29.126), None])],
        );
        assert_eq!(md, "| Method | 1st | Nth |\n|---|---|---|\n| ours | 29.13 | - |\n");
    }
}
