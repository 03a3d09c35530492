use super::Image;
use crate::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "image sizes differ: {}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

fn joint_mask(a: &Image, b: &Image) -> Vec<bool> {
    (0..a.pixels.len())
        .map(|i| a.is_valid(i) && b.is_valid(i))
        .collect()
}

/// Mean squared error over all channels of mutually valid pixels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let mask = joint_mask(a, b);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (pa, pb)) in a.pixels.iter().zip(&b.pixels).enumerate() {
        if mask[i] {
            sum += (0..3)
                .map(|c| (pa[c] as f64 - pb[c] as f64).powi(2))
                .sum::<f64>();
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::Domain("no mutually valid pixels to compare".into()));
    }
    Ok(sum / n as f64)
}

/// `10·log10(1 / mse)` with unit peak, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Windowed weighted sums of `img` at every valid window position.
fn filter_valid(img: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * rows[(y + j) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity of the luma channels over every 11×11 window
/// whose pixels are all mutually valid.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "{w}×{h} image is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window"
        )));
    }
    let (x, y) = (a.luma(), b.luma());
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter_valid(&x, w, h, &taps);
    let mu_y = filter_valid(&y, w, h, &taps);
    let xx = filter_valid(&prod(&x, &x), w, h, &taps);
    let yy = filter_valid(&prod(&y, &y), w, h, &taps);
    let xy = filter_valid(&prod(&x, &y), w, h, &taps);

    // Windows containing any invalid pixel are excluded.
    let mask = joint_mask(a, b);
    let mut invalid = vec![0u32; (w + 1) * (h + 1)];
    for yy_ in 0..h {
        for xx_ in 0..w {
            invalid[(yy_ + 1) * (w + 1) + xx_ + 1] = !mask[yy_ * w + xx_] as u32
                + invalid[yy_ * (w + 1) + xx_ + 1]
                + invalid[(yy_ + 1) * (w + 1) + xx_]
                - invalid[yy_ * (w + 1) + xx_];
        }
    }
    let k = SSIM_WINDOW;
    let c1 = (SSIM_K1).powi(2);
    let c2 = (SSIM_K2).powi(2);
    let ow = w - k + 1;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, ((((mx, my), sxx), syy), sxy)) in mu_x
        .iter()
        .zip(&mu_y)
        .zip(&xx)
        .zip(&yy)
        .zip(&xy)
        .enumerate()
    {
        let (ox, oy) = (i % ow, i / ow);
        let bad = invalid[(oy + k) * (w + 1) + ox + k] + invalid[oy * (w + 1) + ox]
            - invalid[oy * (w + 1) + ox + k]
            - invalid[(oy + k) * (w + 1) + ox];
        if bad > 0 {
            continue;
        }
        let var_x = sxx - mx * mx;
        let var_y = syy - my * my;
        let cov = sxy - mx * my;
        sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        n += 1;
    }
    if n == 0 {
        return Err(Error::Domain("no fully valid SSIM window".into()));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_image(w: u32, h: u32, rng: &mut ChaCha8Rng) -> Image {
        let mut img = Image::new(w, h);
        img.pixels
            .iter_mut()
            .for_each(|p| *p = std::array::from_fn(|_| rng.gen::<f32>()));
        img
    }

    #[test]
    fn closed_form_half_offset() {
        let a = Image::filled(8, 8, [0.25; 3]);
        let b = Image::filled(8, 8, [0.75; 3]);
        assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn identical_images_hit_caps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_image(20, 16, &mut rng);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_negative_pair_is_one() {
        let a = Image::filled(16, 16, [0.5; 3]);
        let b = Image::filled(16, 16, [1.0 - 0.5; 3]);
        assert!((ssim(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mask_intersection_limits_comparison() {
        let mut a = Image::filled(4, 4, [0.0; 3]);
        let b = Image::filled(4, 4, [0.0; 3]);
        a.pixels[0] = [1.0; 3];
        let mut mask = vec![true; 16];
        mask[0] = false;
        a.mask = Some(mask);
        assert_eq!(psnr(&a, &b).unwrap(), PSNR_CAP);
    }

    #[test]
    fn dimension_checks() {
        let a = Image::new(4, 4);
        let b = Image::new(4, 5);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&Image::new(10, 20), &Image::new(10, 20)).is_err());
    }

    #[test]
    fn psnr_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(9, 7, &mut rng);
        let b = random_image(9, 7, &mut rng);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }
}
