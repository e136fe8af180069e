//! Imperceptibility, classification and capacity metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::pixel::Image;

/// PSNR in dB over every sample; identical inputs give `+inf`.
pub fn psnr(reference: &Image, distorted: &Image) -> Result<f64> {
    check_shapes(reference, distorted)?;
    let sse = reference
        .samples()
        .iter()
        .zip(distorted.samples())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>();
    Ok(psnr_from_sse(sse, reference.samples().len()))
}

/// PSNR over the pixels where `mask` is true, across all channels.
///
/// `mask` has one entry per pixel (`width × height`), row-major.
pub fn psnr_region(reference: &Image, distorted: &Image, mask: &[bool]) -> Result<f64> {
    check_shapes(reference, distorted)?;
    if mask.len() != reference.width() * reference.height() {
        return Err(Error::Shape(format!(
            "mask has {} entries for a {}x{} image",
            mask.len(),
            reference.width(),
            reference.height()
        )));
    }
    let c = reference.channels();
    let mut sse = 0.0;
    let mut n = 0;
    for (p, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for ch in 0..c {
            let i = p * c + ch;
            sse += (reference.samples()[i] as f64 - distorted.samples()[i] as f64).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("PSNR region mask is empty".into()));
    }
    Ok(psnr_from_sse(sse, n))
}

fn psnr_from_sse(sse: f64, n: usize) -> f64 {
    if sse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64.powi(2) * n as f64 / sse).log10()
    }
}

/// `Inf` for infinite values, otherwise fixed precision.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "Inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            c1: (0.01f64 * 255.0).powi(2),
            c2: (0.03f64 * 255.0).powi(2),
        }
    }
}

/// Single-window SSIM from global image statistics (population moments),
/// computed on the grayscale versions of both images.
pub fn ssim(reference: &Image, distorted: &Image, params: SsimParams) -> Result<f64> {
    check_shapes(reference, distorted)?;
    if !(params.c1 > 0.0 && params.c2 > 0.0) {
        return Err(Error::InvalidArgument("SSIM stabilisers must be positive".into()));
    }
    let a = reference.to_grayscale();
    let b = distorted.to_grayscale();
    let n = a.samples().len() as f64;
    let mean = |img: &Image| img.samples().iter().map(|&v| v as f64).sum::<f64>() / n;
    let (ma, mb) = (mean(&a), mean(&b));
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.samples().iter().zip(b.samples()) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    let SsimParams { c1, c2 } = params;
    Ok(((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn dice(c: ConfusionCounts) -> Result<f64> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Err(Error::InvalidArgument("Dice undefined without positives".into()));
    }
    Ok(2.0 * c.tp as f64 / denom as f64)
}

pub fn accuracy(c: ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::InvalidArgument("accuracy of an empty sample".into()));
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// Bits per pixel; channels do not enter the denominator.
pub fn bpp(bits: usize, width: usize, height: usize) -> f64 {
    bits as f64 / (width * height) as f64
}

/// Region-wise quality of one watermark/recovery round.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub capacity_bpp: f64,
    pub psnr_watermarked: f64,
    pub psnr_recovered: f64,
    pub psnr_watermarked_nroi: f64,
    pub psnr_recovered_nroi: f64,
    pub psnr_watermarked_roi: f64,
    pub psnr_recovered_roi: f64,
    pub ssim_watermarked: f64,
    pub ssim_recovered: f64,
    pub switched_percent: f64,
}

pub const CSV_HEADER: &str = "capacity_bpp,psnr_watermarked,psnr_recovered,psnr_improvement,\
psnr_watermarked_nroi,psnr_recovered_nroi,psnr_improvement_nroi,\
psnr_watermarked_roi,psnr_recovered_roi,psnr_improvement_roi,switched_percent";

impl EvaluationReport {
    /// `roi_mask` is the ground-truth pixel mask (true = ROI). A region that
    /// is empty in the mask reports `Inf`.
    pub fn compute(
        cover: &Image,
        watermarked: &Image,
        recovered: &Image,
        roi_mask: &[bool],
        capacity_bpp: f64,
        switched_percent: f64,
    ) -> Result<Self> {
        let nroi: Vec<bool> = roi_mask.iter().map(|&r| !r).collect();
        let region = |img: &Image, mask: &[bool]| -> Result<f64> {
            if mask.iter().any(|&m| m) {
                psnr_region(cover, img, mask)
            } else {
                check_shapes(cover, img).map(|_| f64::INFINITY)
            }
        };
        Ok(Self {
            capacity_bpp,
            psnr_watermarked: psnr(cover, watermarked)?,
            psnr_recovered: psnr(cover, recovered)?,
            psnr_watermarked_nroi: region(watermarked, &nroi)?,
            psnr_recovered_nroi: region(recovered, &nroi)?,
            psnr_watermarked_roi: region(watermarked, roi_mask)?,
            psnr_recovered_roi: region(recovered, roi_mask)?,
            ssim_watermarked: ssim(cover, watermarked, SsimParams::default())?,
            ssim_recovered: ssim(cover, recovered, SsimParams::default())?,
            switched_percent,
        })
    }

    fn improvements(&self) -> [f64; 3] {
        [
            self.psnr_recovered - self.psnr_watermarked,
            self.psnr_recovered_nroi - self.psnr_watermarked_nroi,
            self.psnr_recovered_roi - self.psnr_watermarked_roi,
        ]
    }

    pub fn to_key_value(&self) -> String {
        let [whole, nroi, roi] = self.improvements();
        let mut s = String::new();
        let rows: [(&str, String); 14] = [
            ("capacity_bpp", format!("{:.6}", self.capacity_bpp)),
            ("psnr_watermarked", format_db(self.psnr_watermarked)),
            ("psnr_recovered", format_db(self.psnr_recovered)),
            ("psnr_improvement", format_improvement(whole)),
            ("psnr_watermarked_nroi", format_db(self.psnr_watermarked_nroi)),
            ("psnr_recovered_nroi", format_db(self.psnr_recovered_nroi)),
            ("psnr_improvement_nroi", format_improvement(nroi)),
            ("psnr_watermarked_roi", format_db(self.psnr_watermarked_roi)),
            ("psnr_recovered_roi", format_db(self.psnr_recovered_roi)),
            ("psnr_improvement_roi", format_improvement(roi)),
            ("ssim_watermarked", format!("{:.6}", self.ssim_watermarked)),
            ("ssim_recovered", format!("{:.6}", self.ssim_recovered)),
            ("switched_percent", format!("{:.4}", self.switched_percent)),
            ("side_information_bits", "0".to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn to_csv_row(&self) -> String {
        let [whole, nroi, roi] = self.improvements();
        [
            format!("{:.6}", self.capacity_bpp),
            format_db(self.psnr_watermarked),
            format_db(self.psnr_recovered),
            format_improvement(whole),
            format_db(self.psnr_watermarked_nroi),
            format_db(self.psnr_recovered_nroi),
            format_improvement(nroi),
            format_db(self.psnr_watermarked_roi),
            format_db(self.psnr_recovered_roi),
            format_improvement(roi),
            format!("{:.4}", self.switched_percent),
        ]
        .join(",")
    }
}

// Inf - Inf has no meaningful improvement.
fn format_improvement(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format_db(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, samples: Vec<u8>) -> Image {
        Image::new(w, h, 1, samples).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(512, 512, 1, 100).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let mut b = a.clone();
        b.set(3, 4, 0, 116);
        let expected = 10.0 * (255.0f64 * 255.0 * 262144.0 / 256.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 78.2338).abs() < 1e-3);

        let mut mask = vec![true; 512 * 512];
        mask[4 * 512 + 3] = false;
        assert_eq!(psnr_region(&a, &b, &mask).unwrap(), f64::INFINITY);
        assert!(psnr_region(&a, &b, &vec![false; 512 * 512]).is_err());
        assert!(psnr(&a, &Image::filled(2, 2, 1, 0).unwrap()).is_err());
    }

    #[test]
    fn ssim_examples() {
        let p = SsimParams::default();
        assert!((p.c1 - 6.5025).abs() < 1e-12 && (p.c2 - 58.5225).abs() < 1e-12);
        let flat = Image::filled(8, 8, 1, 128).unwrap();
        assert_eq!(ssim(&flat, &flat, p).unwrap(), 1.0);
        let img = gray(2, 2, vec![0, 50, 200, 255]);
        assert!((ssim(&img, &img, p).unwrap() - 1.0).abs() < 1e-15);

        let black = Image::filled(4, 4, 1, 0).unwrap();
        let white = Image::filled(4, 4, 1, 255).unwrap();
        let expected = (6.5025 * 58.5225) / ((65025.0 + 6.5025) * 58.5225);
        let got = ssim(&black, &white, p).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 1.0e-4).abs() < 1e-6);
    }

    #[test]
    fn classification_examples() {
        let perfect = ConfusionCounts { tp: 5, fp: 0, tn: 7, fn_: 0 };
        assert_eq!(dice(perfect).unwrap(), 1.0);
        assert_eq!(accuracy(perfect).unwrap(), 1.0);
        let c = ConfusionCounts { tp: 2, fp: 1, tn: 0, fn_: 1 };
        assert!((dice(c).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        let even = ConfusionCounts { tp: 25, fp: 25, tn: 25, fn_: 25 };
        assert_eq!(accuracy(even).unwrap(), 0.5);
        assert!(dice(ConfusionCounts::default()).is_err());
        assert!(accuracy(ConfusionCounts::default()).is_err());
    }

    #[test]
    fn bpp_examples() {
        assert_eq!(bpp(7225, 512, 512), 7225.0 / 262144.0);
        assert!((bpp(7225, 512, 512) - 0.02756).abs() < 1e-5);
        assert_eq!(bpp(0, 10, 10), 0.0);
    }

    #[test]
    fn report_formats() {
        let img = Image::filled(4, 4, 1, 9).unwrap();
        let mask = vec![false; 16];
        let r = EvaluationReport::compute(&img, &img, &img, &mask, 0.0, 0.0).unwrap();
        let kv = r.to_key_value();
        assert!(kv.contains("psnr_watermarked=Inf\n"));
        assert!(kv.contains("ssim_watermarked=1.000000\n"));
        assert_eq!(r.to_csv_row().split(',').count(), CSV_HEADER.split(',').count());
    }

    proptest! {
        #[test]
        fn psnr_symmetric_and_full_mask(a in proptest::collection::vec(any::<u8>(), 36),
                                         b in proptest::collection::vec(any::<u8>(), 36)) {
            let (x, y) = (gray(6, 6, a), gray(6, 6, b));
            let p = psnr(&x, &y).unwrap();
            prop_assert_eq!(p, psnr(&y, &x).unwrap());
            prop_assert_eq!(p, psnr_region(&x, &y, &[true; 36]).unwrap());
            prop_assert!((ssim(&x, &x, SsimParams::default()).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn ratios_scale_invariant(tp in 1u64..100, fp in 0u64..100, tn in 0u64..100, fn_ in 0u64..100, k in 1u64..20) {
            let c = ConfusionCounts { tp, fp, tn, fn_ };
            let s = ConfusionCounts { tp: tp * k, fp: fp * k, tn: tn * k, fn_: fn_ * k };
            prop_assert!((dice(c).unwrap() - dice(s).unwrap()).abs() < 1e-12);
            prop_assert!((accuracy(c).unwrap() - accuracy(s).unwrap()).abs() < 1e-12);
        }
    }
}
