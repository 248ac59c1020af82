//! Fidelity measures between a predicted and a reference cube.
//!
//! All six values are computed in `f64` on copies clamped to `[0, 1]`.
//! Serialized field order: `mpsnr, sam, ergas, mssim, rmse, cc, scale,
//! ergas_excluded`.

use std::fmt::Write as _;

use crate::data::HsiCube;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Element;

pub const EPS: f64 = 1e-12;
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

pub const CSV_HEADER: &str = "mpsnr,sam,ergas,mssim,rmse,cc,scale,ergas_excluded";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// Mean per-band PSNR in dB with peak 1.
    pub mpsnr: f64,
    /// Mean spectral angle in degrees.
    pub sam: f64,
    pub ergas: f64,
    pub mssim: f64,
    pub rmse: f64,
    pub cc: f64,
    pub scale: usize,
    /// Bands left out of ERGAS because their reference mean is at most [`EPS`].
    pub ergas_excluded: usize,
}

impl MetricReport {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn csv_row(&self) -> String {
        self.fields()
            .iter()
            .map(|(_, v)| v.clone())
            .collect::<Vec<_>>()
            .join(",")
    }

    fn fields(&self) -> [(&'static str, String); 8] {
        [
            ("mpsnr", format!("{:.6}", self.mpsnr)),
            ("sam", format!("{:.6}", self.sam)),
            ("ergas", format!("{:.6}", self.ergas)),
            ("mssim", format!("{:.6}", self.mssim)),
            ("rmse", format!("{:.6}", self.rmse)),
            ("cc", format!("{:.6}", self.cc)),
            ("scale", self.scale.to_string()),
            ("ergas_excluded", self.ergas_excluded.to_string()),
        ]
    }

    /// Field-wise mean; the exclusion count is summed.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        let Some(first) = reports.first() else {
            return invalid("cannot average an empty list of reports");
        };
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(MetricReport {
            mpsnr: avg(|r| r.mpsnr),
            sam: avg(|r| r.sam),
            ergas: avg(|r| r.ergas),
            mssim: avg(|r| r.mssim),
            rmse: avg(|r| r.rmse),
            cc: avg(|r| r.cc),
            scale: first.scale,
            ergas_excluded: reports.iter().map(|r| r.ergas_excluded).sum(),
        })
    }
}

struct Planes {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Planes {
    fn new<T: Element>(cube: &HsiCube<T>) -> Self {
        Self {
            c: cube.bands(),
            h: cube.height(),
            w: cube.width(),
            data: cube
                .tensor()
                .data()
                .iter()
                .map(|v| v.as_f64().clamp(0.0, 1.0))
                .collect(),
        }
    }

    fn band(&self, b: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[b * n..(b + 1) * n]
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Peak-1 PSNR of a band, capped at [`PSNR_CAP`].
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let den = (saa * sbb).sqrt();
    if den <= EPS {
        // both bands flat: correlated only when they coincide
        return if a == b { 1.0 } else { 0.0 };
    }
    (sab / den).clamp(-1.0, 1.0)
}

/// Angle between two spectra in degrees, via `2·atan2(‖u − v‖, ‖u + v‖)` on unit vectors.
pub fn spectral_angle(x: &[f64], y: &[f64]) -> f64 {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx <= EPS && ny <= EPS {
        return 0.0;
    }
    if nx <= EPS || ny <= EPS {
        return 90.0;
    }
    let (mut d, mut s) = (0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (u, v) = (a / nx, b / ny);
        d += (u - v) * (u - v);
        s += (u + v) * (u + v);
    }
    (2.0 * d.sqrt().atan2(s.sqrt())).to_degrees()
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-0.5 * ((i as f64 - r) / sigma).powi(2)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable weighted filtering over the valid region.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            tmp[y * ow + xo] = (0..k).map(|j| g[j] * x[y * w + xo + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..k).map(|j| g[j] * tmp[(yo + j) * ow + xo]).sum();
        }
    }
    (out, oh, ow)
}

/// Single-scale SSIM of one band with a Gaussian window, averaged over the valid region.
///
/// The window shrinks to the largest odd size fitting images smaller than
/// [`SSIM_WINDOW`].
pub fn ssim_band(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let g = gaussian_window(size, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let (mu_a, oh, ow) = filter_valid(a, h, w, &g);
    let (mu_b, _, _) = filter_valid(b, h, w, &g);
    let (faa, _, _) = filter_valid(&prod(a, a), h, w, &g);
    let (fbb, _, _) = filter_valid(&prod(b, b), h, w, &g);
    let (fab, _, _) = filter_valid(&prod(a, b), h, w, &g);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = faa[i] - ma * ma;
        let vb = fbb[i] - mb * mb;
        let cov = fab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / (oh * ow) as f64
}

/// Computes all six measures of `pred` against `gt` for scale factor `scale`.
pub fn evaluate_metrics<T: Element>(
    pred: &HsiCube<T>,
    gt: &HsiCube<T>,
    scale: usize,
) -> Result<MetricReport> {
    if pred.tensor().shape() != gt.tensor().shape() {
        return shape_err(
            "evaluate_metrics",
            pred.tensor().shape(),
            gt.tensor().shape(),
        );
    }
    if scale == 0 {
        return invalid("scale must be positive");
    }
    let p = Planes::new(pred);
    let g = Planes::new(gt);
    let (c, h, w) = (g.c, g.h, g.w);

    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut cc_sum = 0.0;
    let mut ergas_sum = 0.0;
    let mut ergas_bands = 0usize;
    for b in 0..c {
        let (pb, gb) = (p.band(b), g.band(b));
        let m = mse(pb, gb);
        psnr_sum += psnr(m);
        ssim_sum += ssim_band(pb, gb, h, w);
        cc_sum += pearson(pb, gb);
        let mu = mean(gb);
        if mu > EPS {
            ergas_sum += m / (mu * mu);
            ergas_bands += 1;
        }
    }
    let ergas = if ergas_bands > 0 {
        100.0 / scale as f64 * (ergas_sum / ergas_bands as f64).sqrt()
    } else {
        0.0
    };

    let n = h * w;
    let mut sam_sum = 0.0;
    let mut xs = vec![0.0; c];
    let mut ys = vec![0.0; c];
    for pix in 0..n {
        for b in 0..c {
            xs[b] = p.data[b * n + pix];
            ys[b] = g.data[b * n + pix];
        }
        sam_sum += spectral_angle(&xs, &ys);
    }

    Ok(MetricReport {
        mpsnr: psnr_sum / c as f64,
        sam: sam_sum / n as f64,
        ergas,
        mssim: ssim_sum / c as f64,
        rmse: mse(&p.data, &g.data).sqrt(),
        cc: cc_sum / c as f64,
        scale,
        ergas_excluded: c - ergas_bands,
    })
}
