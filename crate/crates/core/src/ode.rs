//! Adaptive explicit Runge-Kutta integration (Dormand-Prince 8(5,3)) for
//! complex-valued linear and nonlinear systems.

use crate::error::{Error, Result};
use crate::linalg::C64;

const C2: f64 = 0.526001519587677318785587544488e-01;
const C3: f64 = 0.789002279381515978178381316732e-01;
const C4: f64 = 0.118350341907227396726757197510;
const C5: f64 = 0.281649658092772603273242802490;
const C6: f64 = 0.333333333333333333333333333333;
const C7: f64 = 0.25;
const C8: f64 = 0.307692307692307692307692307692;
const C9: f64 = 0.651282051282051282051282051282;
const C10: f64 = 0.6;
const C11: f64 = 0.857142857142857142857142857142;

const A21: f64 = 5.26001519587677318785587544488e-02;
const A31: f64 = 1.97250569845378994544595329183e-02;
const A32: f64 = 5.91751709536136983633785987549e-02;
const A41: f64 = 2.95875854768068491816892993775e-02;
const A43: f64 = 8.87627564304205475450678981324e-02;
const A51: f64 = 2.41365134159266685502369798665e-01;
const A53: f64 = -8.84549479328286085344864962717e-01;
const A54: f64 = 9.24834003261792003115737966543e-01;
const A61: f64 = 3.70370370370370370370370370370e-02;
const A64: f64 = 1.70828608729473871279604482173e-01;
const A65: f64 = 1.25467687566822425016691814123e-01;
const A71: f64 = 3.71093750000000000000000000000e-02;
const A74: f64 = 1.70252211019544039314978060272e-01;
const A75: f64 = 6.02165389804559606850219397283e-02;
const A76: f64 = -1.75781250000000000000000000000e-02;
const A81: f64 = 3.70920001185047927108779319836e-02;
const A84: f64 = 1.70383925712239993810214054705e-01;
const A85: f64 = 1.07262030446373284651809199168e-01;
const A86: f64 = -1.53194377486244017527936158236e-02;
const A87: f64 = 8.27378916381402288758473766002e-03;
const A91: f64 = 6.24110958716075717114429577812e-01;
const A94: f64 = -3.36089262944694129406857109825e+00;
const A95: f64 = -8.68219346841726006818189891453e-01;
const A96: f64 = 2.75920996994467083049415600797e+01;
const A97: f64 = 2.01540675504778934086186788979e+01;
const A98: f64 = -4.34898841810699588477366255144e+01;
const A101: f64 = 4.77662536438264365890433908527e-01;
const A104: f64 = -2.48811461997166764192642586468e+00;
const A105: f64 = -5.90290826836842996371446475743e-01;
const A106: f64 = 2.12300514481811942347288949897e+01;
const A107: f64 = 1.52792336328824235832596922938e+01;
const A108: f64 = -3.32882109689848629194453265587e+01;
const A109: f64 = -2.03312017085086261358222928593e-02;
const A111: f64 = -9.37142430085987325717040528057e-01;
const A114: f64 = 5.18637242884406370830023853209e+00;
const A115: f64 = 1.09143734899672957818500254654e+00;
const A116: f64 = -8.14978701074692612513997267357e+00;
const A117: f64 = -1.85200656599969598641566180701e+01;
const A118: f64 = 2.27394870993505042818970056734e+01;
const A119: f64 = 2.49360555267965238987089396762e+00;
const A1110: f64 = -3.04676447189821950038236690220e+00;
const A121: f64 = 2.27331014751653820792359768449e+00;
const A124: f64 = -1.05344954667372501984066689879e+01;
const A125: f64 = -2.00087205822486249909675718444e+00;
const A126: f64 = -1.79589318631187989172765950534e+01;
const A127: f64 = 2.79488845294199600508499808837e+01;
const A128: f64 = -2.85899827713502369474065508674e+00;
const A129: f64 = -8.87285693353062954433549289258e+00;
const A1210: f64 = 1.23605671757943030647266201528e+01;
const A1211: f64 = 6.43392746015763530355970484046e-01;

const B1: f64 = 5.42937341165687622380535766363e-02;
const B6: f64 = 4.45031289275240888144113950566e+00;
const B7: f64 = 1.89151789931450038304281599044e+00;
const B8: f64 = -5.80120396001058478146721142270e+00;
const B9: f64 = 3.11164366957819894408916062370e-01;
const B10: f64 = -1.52160949662516078556178806805e-01;
const B11: f64 = 2.01365400804030348374776537501e-01;
const B12: f64 = 4.47106157277725905176885569043e-02;

const E51: f64 = 0.1312004499419488073250102996e-01;
const E56: f64 = -0.1225156446376204440720569753e+01;
const E57: f64 = -0.4957589496572501915214079952e+00;
const E58: f64 = 0.1664377182454986536961530415e+01;
const E59: f64 = -0.3503288487499736816886487290e+00;
const E510: f64 = 0.3341791187130174790297318841e+00;
const E511: f64 = 0.8192320648511571246570742613e-01;
const E512: f64 = -0.2235530786388629525884427845e-01;

const BHH1: f64 = 0.244094488188976377952755905512;
const BHH2: f64 = 0.733846688281611857341361741547;
const BHH3: f64 = 0.220588235294117647058823529412e-01;

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub h_max: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-12, max_steps: 5_000_000, h_max: f64::INFINITY }
    }
}

#[derive(Clone, Debug, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
}

/// Integrate `y' = f(t, y)` from `t0` and return the state at every entry of
/// `t_out` (monotone in the direction of integration).
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    y0: &[C64],
    t_out: &[f64],
    opts: &OdeOptions,
) -> Result<(Vec<Vec<C64>>, OdeStats)>
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut out = Vec::with_capacity(t_out.len());
    let mut k: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); n]; 12];
    let mut tmp = vec![C64::new(0.0, 0.0); n];
    let mut ynew = vec![C64::new(0.0, 0.0); n];
    let mut f0 = vec![C64::new(0.0, 0.0); n];
    f(t, &y, &mut f0);
    stats.evals += 1;
    let mut h_abs: f64 = 0.0;
    for &target in t_out {
        if target == t {
            out.push(y.clone());
            continue;
        }
        let dir = if target > t { 1.0 } else { -1.0 };
        if h_abs == 0.0 {
            h_abs = initial_step(&mut f, t, &y, &f0, dir, opts, &mut stats);
        }
        while (target - t) * dir > 0.0 {
            if stats.accepted + stats.rejected > opts.max_steps {
                return Err(Error::Propagation(format!("step budget exhausted at t = {t}")));
            }
            let mut last = false;
            let mut h = h_abs.min(opts.h_max);
            if h >= (target - t).abs() {
                h = (target - t).abs();
                last = true;
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Propagation(format!("step size underflow at t = {t}")));
            }
            let hs = h * dir;
            k[0].copy_from_slice(&f0);
            let stages: [(f64, &[(usize, f64)]); 11] = [
                (C2, &[(0, A21)]),
                (C3, &[(0, A31), (1, A32)]),
                (C4, &[(0, A41), (2, A43)]),
                (C5, &[(0, A51), (2, A53), (3, A54)]),
                (C6, &[(0, A61), (3, A64), (4, A65)]),
                (C7, &[(0, A71), (3, A74), (4, A75), (5, A76)]),
                (C8, &[(0, A81), (3, A84), (4, A85), (5, A86), (6, A87)]),
                (C9, &[(0, A91), (3, A94), (4, A95), (5, A96), (6, A97), (7, A98)]),
                (C10, &[(0, A101), (3, A104), (4, A105), (5, A106), (6, A107), (7, A108), (8, A109)]),
                (
                    C11,
                    &[(0, A111), (3, A114), (4, A115), (5, A116), (6, A117), (7, A118), (8, A119), (9, A1110)],
                ),
                (
                    1.0,
                    &[
                        (0, A121),
                        (3, A124),
                        (4, A125),
                        (5, A126),
                        (6, A127),
                        (7, A128),
                        (8, A129),
                        (9, A1210),
                        (10, A1211),
                    ],
                ),
            ];
            for (s, (cs, coeffs)) in stages.iter().enumerate() {
                for i in 0..n {
                    let mut acc = C64::new(0.0, 0.0);
                    for &(j, a) in coeffs.iter() {
                        acc += k[j][i] * a;
                    }
                    tmp[i] = y[i] + acc * hs;
                }
                let (head, tail) = k.split_at_mut(s + 1);
                let _ = head;
                f(t + cs * hs, &tmp, &mut tail[0]);
            }
            stats.evals += 11;
            let bw: [(usize, f64); 8] =
                [(0, B1), (5, B6), (6, B7), (7, B8), (8, B9), (9, B10), (10, B11), (11, B12)];
            let ew: [(usize, f64); 8] =
                [(0, E51), (5, E56), (6, E57), (7, E58), (8, E59), (9, E510), (10, E511), (11, E512)];
            let mut e5 = 0.0;
            let mut e3 = 0.0;
            for i in 0..n {
                let mut incr = C64::new(0.0, 0.0);
                for &(j, b) in &bw {
                    incr += k[j][i] * b;
                }
                ynew[i] = y[i] + incr * hs;
                let mut err5 = C64::new(0.0, 0.0);
                for &(j, e) in &ew {
                    err5 += k[j][i] * e;
                }
                let err3 = incr - k[0][i] * BHH1 - k[8][i] * BHH2 - k[11][i] * BHH3;
                let sc = opts.atol + opts.rtol * y[i].norm().max(ynew[i].norm());
                e5 += (err5 / sc).norm_sqr();
                e3 += (err3 / sc).norm_sqr();
            }
            let mut den = e5 + 0.01 * e3;
            if den <= 0.0 {
                den = 1.0;
            }
            let err = h * e5 / (den * n as f64).sqrt();
            if err <= 1.0 {
                stats.accepted += 1;
                t = if last { target } else { t + hs };
                std::mem::swap(&mut y, &mut ynew);
                f(t, &y, &mut f0);
                stats.evals += 1;
                let fac = if err == 0.0 { 6.0 } else { (0.9 * err.powf(-1.0 / 8.0)).clamp(0.333, 6.0) };
                if !last || fac > 1.0 {
                    h_abs = h * fac;
                }
            } else {
                stats.rejected += 1;
                let fac = (0.9 * err.powf(-1.0 / 8.0)).clamp(0.2, 1.0);
                h_abs = h * fac;
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}

fn initial_step<F>(
    f: &mut F,
    t: f64,
    y: &[C64],
    f0: &[C64],
    dir: f64,
    opts: &OdeOptions,
    stats: &mut OdeStats,
) -> f64
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.norm()).collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).norm_sqr()).sum::<f64>() / n as f64).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(v, s)| (v / s).norm_sqr()).sum::<f64>() / n as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<C64> = y.iter().zip(f0).map(|(a, b)| a + b * (h0 * dir)).collect();
    let mut f1 = vec![C64::new(0.0, 0.0); n];
    f(t + h0 * dir, &y1, &mut f1);
    stats.evals += 1;
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s).norm_sqr())
        .sum::<f64>()
        / n as f64)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 8.0)
    };
    (100.0 * h0).min(h1).min(opts.h_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_long_run() {
        let w = 3.0;
        let f = |_t: f64, y: &[C64], dy: &mut [C64]| {
            dy[0] = y[1];
            dy[1] = -y[0] * (w * w);
        };
        let ts: Vec<f64> = (1..=10).map(|k| 10.0 * k as f64).collect();
        let (ys, _) = integrate(f, 0.0, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], &ts, &OdeOptions::default()).unwrap();
        for (t, y) in ts.iter().zip(&ys) {
            assert!((y[0].re - (w * t).cos()).abs() < 1e-8, "t={t} {}", y[0].re - (w * t).cos());
        }
    }

    #[test]
    fn backward_integration_inverts_forward() {
        let f = |t: f64, y: &[C64], dy: &mut [C64]| {
            dy[0] = y[0] * C64::new(0.0, 1.0 + t.sin());
        };
        let (fw, _) = integrate(f, 0.0, &[C64::new(1.0, 0.0)], &[5.0], &OdeOptions::default()).unwrap();
        let (bw, _) = integrate(f, 5.0, &fw[0], &[0.0], &OdeOptions::default()).unwrap();
        assert!((bw[0][0] - C64::new(1.0, 0.0)).norm() < 1e-10);
    }
}
