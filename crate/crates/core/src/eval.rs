//! Metrics and report arithmetic: SSIM, failure rates, rater agreement,
//! Fleiss' kappa and the visible-area filter.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, Rgb8, RgbaImage};
use crate::mask::BinaryMask;
use crate::providers::TextImageScorer;
use crate::synth::SyntheticScene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 255.0 }
    }
}

/// Rec. 601 luma.
pub fn luma(img: &Image) -> Vec<f64> {
    let mut out = Vec::with_capacity(img.width() * img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let [r, g, b] = img.get(x, y);
            out.push(0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64);
        }
    }
    out
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            w.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Mean SSIM of the luma channels over every fully contained window.
pub fn ssim(a: &Image, b: &Image, p: &SsimParams) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::mismatch(a.dims(), b.dims()));
    }
    let (w, h) = a.dims();
    if p.window == 0 || w < p.window || h < p.window {
        return Err(Error::InvalidArgument(format!("{w}x{h} image is smaller than the {} px SSIM window", p.window)));
    }
    let kernel = gaussian_window(p.window, p.sigma);
    let (la, lb) = (luma(a), luma(b));
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let n = p.window;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut ma, mut mb) = (0.0, 0.0);
            for dy in 0..n {
                for dx in 0..n {
                    let k = kernel[dy * n + dx];
                    let i = (y0 + dy) * w + x0 + dx;
                    ma += k * la[i];
                    mb += k * lb[i];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..n {
                for dx in 0..n {
                    let k = kernel[dy * n + dx];
                    let i = (y0 + dy) * w + x0 + dx;
                    let (da, db) = (la[i] - ma, lb[i] - mb);
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Crop to the mask's bounding box with non-mask pixels set to `fill`.
pub fn masked_region(img: &Image, m: &BinaryMask, fill: Rgb8) -> Result<Image> {
    if img.dims() != m.dims() {
        return Err(Error::mismatch(img.dims(), m.dims()));
    }
    let bb = m.bounding_box().ok_or_else(|| Error::InvalidArgument("mask is empty".into()))?;
    Ok(Image::from_fn(bb.width(), bb.height(), |x, y| {
        let (sx, sy) = (bb.x0 + x, bb.y0 + y);
        if m.get(sx, sy) {
            img.get(sx, sy)
        } else {
            fill
        }
    }))
}

/// A provider-backed metric that may be unavailable.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricValue {
    Value(f64),
    Missing(String),
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            MetricValue::Missing(_) => None,
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MetricValue::Value(v) => s.serialize_f64(*v),
            MetricValue::Missing(_) => s.serialize_none(),
        }
    }
}

pub fn provider_score(pred: &Image, label: &str, scorer: &dyn TextImageScorer) -> MetricValue {
    if label.trim().is_empty() {
        return MetricValue::Missing("empty label".into());
    }
    match scorer.score_text_image(pred, label) {
        Ok(s) => MetricValue::Value(s.value()),
        Err(e) => {
            log::warn!("score for `{label}` unavailable: {e}");
            MetricValue::Missing(e.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub dataset: String,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailureRow {
    pub dataset: String,
    pub total: usize,
    pub failures: usize,
}

impl FailureRow {
    pub fn rate(&self) -> f64 {
        self.failures as f64 / self.total as f64
    }

    /// Percentage with one decimal, e.g. `4.0%`.
    pub fn formatted(&self) -> String {
        format_percent(self.failures, self.total)
    }
}

/// `num / den` as a percentage with one decimal, rounded half-up on the
/// exact rational.
pub fn format_percent(num: usize, den: usize) -> String {
    // tenths of a percent: round(1000 * num / den)
    let tenths = (2000 * num as u128 + den as u128) / (2 * den as u128);
    format!("{}.{}%", tenths / 10, tenths % 10)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailureTable {
    /// Sorted by dataset name.
    pub rows: Vec<FailureRow>,
    pub overall: FailureRow,
}

impl FailureTable {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let width = self.rows.iter().map(|r| r.dataset.len()).chain([7]).max().unwrap_or(7);
        let _ = writeln!(s, "{:<width$}  {:>6}  {:>8}  {:>7}", "dataset", "total", "failures", "rate");
        for r in self.rows.iter().chain([&self.overall]) {
            let _ = writeln!(s, "{:<width$}  {:>6}  {:>8}  {:>7}", r.dataset, r.total, r.failures, r.formatted());
        }
        s
    }
}

pub fn failure_table(outcomes: &[Outcome]) -> Result<FailureTable> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no outcomes".into()));
    }
    let mut by: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for o in outcomes {
        let e = by.entry(o.dataset.as_str()).or_default();
        e.0 += 1;
        e.1 += o.failed as usize;
    }
    let rows: Vec<FailureRow> = by
        .into_iter()
        .map(|(d, (total, failures))| FailureRow { dataset: d.to_string(), total, failures })
        .collect();
    let overall = FailureRow {
        dataset: "overall".into(),
        total: outcomes.len(),
        failures: outcomes.iter().filter(|o| o.failed).count(),
    };
    Ok(FailureTable { rows, overall })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Agreement {
    /// 3/3
    pub full: usize,
    /// 2/3
    pub majority: usize,
    /// 1/3
    pub none: usize,
}

/// Classify each image by the size of its largest vote block.
pub fn agreement_distribution<S: AsRef<str>>(choices: &[Vec<S>]) -> Result<Agreement> {
    let mut a = Agreement::default();
    for (i, picks) in choices.iter().enumerate() {
        if picks.len() != 3 {
            return Err(Error::InvalidArgument(format!("image {i} has {} ratings, expected 3", picks.len())));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for p in picks {
            *counts.entry(p.as_ref()).or_default() += 1;
        }
        match counts.values().max().copied().unwrap_or(0) {
            3 => a.full += 1,
            2 => a.majority += 1,
            _ => a.none += 1,
        }
    }
    Ok(a)
}

/// Items × categories vote counts with a constant number of raters per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingsTable {
    counts: Vec<Vec<usize>>,
    raters: usize,
}

impl RatingsTable {
    pub fn new(counts: Vec<Vec<usize>>) -> Result<Self> {
        let first = counts.first().ok_or_else(|| Error::InvalidArgument("ratings table has no items".into()))?;
        let k = first.len();
        if k < 2 {
            return Err(Error::InvalidArgument("need at least 2 categories".into()));
        }
        let n: usize = first.iter().sum();
        if n < 2 {
            return Err(Error::InvalidArgument("need at least 2 raters per item".into()));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidArgument(format!("item {i} has {} categories, expected {k}", row.len())));
            }
            if row.iter().sum::<usize>() != n {
                return Err(Error::InvalidArgument(format!("item {i} has {} ratings, expected {n}", row.iter().sum::<usize>())));
            }
        }
        Ok(RatingsTable { counts, raters: n })
    }

    /// Parse `image_id,rater_id,chosen_method` rows (header optional).
    /// Items keep first-appearance order; categories are sorted by name.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut items: Vec<String> = Vec::new();
        let mut votes: HashMap<String, Vec<(String, String)>> = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(Error::InvalidArgument(format!("line {}: expected 3 fields", n + 1)));
            }
            if n == 0 && f == ["image_id", "rater_id", "chosen_method"] {
                continue;
            }
            let entry = votes.entry(f[0].to_string()).or_insert_with(|| {
                items.push(f[0].to_string());
                Vec::new()
            });
            if entry.iter().any(|(r, _)| r == f[1]) {
                return Err(Error::InvalidArgument(format!("line {}: rater {} rated {} twice", n + 1, f[1], f[0])));
            }
            entry.push((f[1].to_string(), f[2].to_string()));
        }
        let mut cats: Vec<&str> = votes.values().flatten().map(|(_, c)| c.as_str()).collect();
        cats.sort_unstable();
        cats.dedup();
        let counts = items
            .iter()
            .map(|id| {
                let mut row = vec![0; cats.len()];
                for (_, c) in &votes[id] {
                    row[cats.binary_search(&c.as_str()).expect("collected above")] += 1;
                }
                row
            })
            .collect();
        RatingsTable::new(counts)
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn raters(&self) -> usize {
        self.raters
    }
}

/// Fleiss' kappa; undefined when chance agreement is 1.
pub fn fleiss_kappa(r: &RatingsTable) -> Result<f64> {
    let n = r.raters as f64;
    let items = r.counts.len() as f64;
    let k = r.counts[0].len();
    let p_bar = r
        .counts
        .iter()
        .map(|row| (row.iter().map(|c| (c * c) as f64).sum::<f64>() - n) / (n * (n - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..k)
        .map(|j| {
            let pj = r.counts.iter().map(|row| row[j] as f64).sum::<f64>() / (items * n);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::Undefined("chance agreement is 1; kappa is undefined".into()));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Keep a target whose visible area is at least `threshold` of the canvas.
pub fn area_ratio_ok(visible: &BinaryMask, threshold: f64) -> bool {
    let canvas = visible.width() * visible.height();
    canvas > 0 && visible.area() as f64 / canvas as f64 >= threshold
}

pub const DEFAULT_AREA_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemMetrics {
    pub id: String,
    pub dataset: String,
    pub status: String,
    pub iou: Option<f64>,
    pub ssim: Option<f64>,
    pub clip: MetricValue,
    pub lpips: MetricValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Summary {
    let mut v: Vec<f64> = values.into_iter().flatten().collect();
    v.sort_by(f64::total_cmp);
    let count = v.len();
    if count == 0 {
        return Summary { count, mean: None, median: None };
    }
    let mean = v.iter().sum::<f64>() / count as f64;
    let median = if count % 2 == 1 { v[count / 2] } else { (v[count / 2 - 1] + v[count / 2]) / 2.0 };
    Summary { count, mean: Some(mean), median: Some(median) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub ssim_params: SsimParams,
    pub items: Vec<ItemMetrics>,
    pub iou: Summary,
    pub ssim: Summary,
    pub clip: Summary,
    pub lpips: Summary,
    pub status_counts: BTreeMap<String, usize>,
    pub failures: FailureTable,
}

impl EvalReport {
    pub fn from_items(items: Vec<ItemMetrics>, ssim_params: SsimParams) -> Result<Self> {
        let outcomes: Vec<Outcome> = items
            .iter()
            .map(|i| Outcome { dataset: i.dataset.clone(), failed: i.status == "target_not_found" })
            .collect();
        let failures = failure_table(&outcomes)?;
        let mut status_counts = BTreeMap::new();
        for i in &items {
            *status_counts.entry(i.status.clone()).or_default() += 1;
        }
        Ok(EvalReport {
            ssim_params,
            iou: summarize(items.iter().map(|i| i.iou)),
            ssim: summarize(items.iter().map(|i| i.ssim)),
            clip: summarize(items.iter().map(|i| i.clip.value())),
            lpips: summarize(items.iter().map(|i| i.lpips.value())),
            items,
            status_counts,
            failures,
        })
    }

    /// Method × dataset table of mean metrics plus the failure table.
    pub fn render_table(&self, method: &str) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut datasets: BTreeMap<&str, Vec<&ItemMetrics>> = BTreeMap::new();
        for i in &self.items {
            datasets.entry(&i.dataset).or_default().push(i);
        }
        let mut s = String::new();
        let _ = writeln!(
            s,
            "SSIM: luma, gaussian window {} (sigma {}), k1 {}, k2 {}, L {}",
            self.ssim_params.window, self.ssim_params.sigma, self.ssim_params.k1, self.ssim_params.k2, self.ssim_params.dynamic_range
        );
        let _ = writeln!(s, "{:<12} {:<12} {:>8} {:>8} {:>8} {:>8}", "method", "dataset", "IoU", "SSIM", "CLIP", "LPIPS");
        for (d, items) in &datasets {
            let _ = writeln!(
                s,
                "{:<12} {:<12} {:>8} {:>8} {:>8} {:>8}",
                method,
                d,
                fmt(summarize(items.iter().map(|i| i.iou)).mean),
                fmt(summarize(items.iter().map(|i| i.ssim)).mean),
                fmt(summarize(items.iter().map(|i| i.clip.value())).mean),
                fmt(summarize(items.iter().map(|i| i.lpips.value())).mean),
            );
        }
        s.push('\n');
        s.push_str(&self.failures.render());
        s
    }
}

#[derive(Debug, Clone, Deserialize)]
struct TraceHead {
    status: String,
    canvas_offset: (usize, usize),
}

#[derive(Debug, Clone, Deserialize)]
struct JobHead {
    #[serde(default)]
    dataset: Option<String>,
}

/// Ground-truth isolated target on `dims` with the scene origin at `offset`.
pub fn truth_render(scene: &SyntheticScene, dims: (usize, usize), offset: (usize, usize), fill: Rgb8) -> Result<(BinaryMask, Image)> {
    let shape = scene.shape(&scene.target)?;
    let amodal = shape.rasterize(dims, offset);
    let img = Image::from_fn(dims.0, dims.1, |x, y| {
        if amodal.get(x, y) {
            shape.fill.color_at(x as i64 - offset.0 as i64, y as i64 - offset.1 as i64)
        } else {
            fill
        }
    });
    Ok((amodal, img))
}

fn rgba_on_fill(rgba: &RgbaImage, fill: Rgb8) -> Image {
    Image::from_fn(rgba.width(), rgba.height(), |x, y| {
        let [r, g, b, a] = rgba.get(x, y);
        if a > 0 {
            [r, g, b]
        } else {
            fill
        }
    })
}

/// Score one run directory against its scene bundle.
pub fn evaluate_run(
    id: &str,
    run_dir: &Path,
    truth_dir: &Path,
    scorer: Option<&dyn TextImageScorer>,
    params: &SsimParams,
    fill: Rgb8,
) -> Result<ItemMetrics> {
    let trace: TraceHead = serde_json::from_str(&std::fs::read_to_string(run_dir.join("trace.json"))?)?;
    let dataset = std::fs::read_to_string(run_dir.join("job.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<JobHead>(&s).ok())
        .and_then(|j| j.dataset)
        .unwrap_or_else(|| "synthetic".to_string());
    let mut item = ItemMetrics {
        id: id.to_string(),
        dataset,
        status: trace.status.clone(),
        iou: None,
        ssim: None,
        clip: MetricValue::Missing("no completion".into()),
        lpips: MetricValue::Missing("no embedding backend".into()),
    };
    if trace.status != "completed" {
        return Ok(item);
    }
    let scene = SyntheticScene::load_bundle(truth_dir)?;
    let amodal = BinaryMask::load_png(run_dir.join("amodal.png"))?;
    let rgba = RgbaImage::from_png_bytes(&std::fs::read(run_dir.join("result.png"))?)?;
    let (truth_mask, truth_img) = truth_render(&scene, amodal.dims(), trace.canvas_offset, fill)?;
    item.iou = Some(amodal.iou(&truth_mask)?);
    let pred = rgba_on_fill(&rgba, fill);
    if let Some(bb) = truth_mask.bounding_box() {
        let a = pred.crop(bb.x0, bb.y0, bb.width(), bb.height())?;
        let b = truth_img.crop(bb.x0, bb.y0, bb.width(), bb.height())?;
        item.ssim = ssim(&a, &b, params).ok();
    }
    if let Some(scorer) = scorer {
        if !amodal.is_empty() {
            item.clip = provider_score(&masked_region(&pred, &amodal, fill)?, &scene.target, scorer);
        }
    }
    Ok(item)
}
