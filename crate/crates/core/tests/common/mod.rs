//! Independent f64 references for metrics and a tiny toy-run helper.
#![allow(dead_code)]

/// The published five-scale MS-SSIM exponents.
pub const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn window() -> Vec<f64> {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = vec![0.0; 121];
    for y in 0..11 {
        for x in 0..11 {
            w[y * 11 + x] = g[y] * g[x];
        }
    }
    w
}

/// Mean SSIM and contrast-structure terms of one plane (valid 11×11 window).
pub fn plane_terms(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let win = window();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (oh, ow) = (h - 10, w - 10);
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for y in 0..oh {
        for x in 0..ow {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..11 {
                for kx in 0..11 {
                    let k = win[ky * 11 + kx];
                    let (p, q) = (a[(y + ky) * w + x + kx], b[(y + ky) * w + x + kx]);
                    mx += k * p;
                    my += k * q;
                    xx += k * p * p;
                    yy += k * q * q;
                    xy += k * p * q;
                }
            }
            let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
            let cs = (2.0 * cov + c2) / (vx + vy + c2);
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            s_sum += l * cs;
            cs_sum += cs;
        }
    }
    let n = (oh * ow) as f64;
    (s_sum / n, cs_sum / n)
}

fn halve(p: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (p[2 * y * w + 2 * x]
                    + p[2 * y * w + 2 * x + 1]
                    + p[(2 * y + 1) * w + 2 * x]
                    + p[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    (out, oh, ow)
}

/// MS-SSIM of `planes` stacked planes of `h × w`, averaged over planes.
/// Scales stop once a side would drop below the window; per-scale terms are
/// floored at 1e-6 and the exponents renormalized over the scales used.
pub fn ms_ssim(a: &[f64], b: &[f64], planes: usize, h: usize, w: usize) -> f64 {
    let mut scales = 0;
    let mut side = h.min(w);
    while scales < 5 && side >= 11 {
        scales += 1;
        side /= 2;
    }
    let norm: f64 = WEIGHTS[..scales].iter().sum();
    let mut total = 0.0;
    for p in 0..planes {
        let (mut pa, mut pb) = (a[p * h * w..(p + 1) * h * w].to_vec(), b[p * h * w..(p + 1) * h * w].to_vec());
        let (mut hh, mut ww) = (h, w);
        let mut prod = 1.0;
        for j in 0..scales {
            let (s, cs) = plane_terms(&pa, &pb, hh, ww);
            let term = if j + 1 == scales { s } else { cs };
            prod *= term.max(1e-6).powf(WEIGHTS[j] / norm);
            if j + 1 < scales {
                let (na, nh, nw) = halve(&pa, hh, ww);
                let (nb, _, _) = halve(&pb, hh, ww);
                pa = na;
                pb = nb;
                hh = nh;
                ww = nw;
            }
        }
        total += prod;
    }
    total / planes as f64
}

/// Mean single-scale SSIM over planes.
pub fn ssim(a: &[f64], b: &[f64], planes: usize, h: usize, w: usize) -> f64 {
    (0..planes)
        .map(|p| plane_terms(&a[p * h * w..(p + 1) * h * w], &b[p * h * w..(p + 1) * h * w], h, w).0)
        .sum::<f64>()
        / planes as f64
}

/// `10·log10(peak² / MSE)`.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    10.0 * (peak * peak / mse).log10()
}

/// Top-k by fully sorting `(−score, index)` pairs.
pub fn topk_by_sort(scores: &[f32], k: usize) -> Vec<usize> {
    let mut pairs: Vec<(f32, usize)> = scores.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    pairs.into_iter().take(k).map(|p| p.1).collect()
}
