use super::{extract_epochs, VoicingMask, MAX_PERIOD};
use crate::signal_io::ChannelRole;
use crate::{Error, Result, Waveform};

/// Upper bound on the reported log10 harmonic-to-noise ratio.
pub const HNR_CEILING: f64 = 5.0;
const MIN_CYCLES: usize = 8;
/// Width of the smoothing window used for epoch picking, seconds.
const SMOOTH: f64 = 0.0015;

/// Harmonic-to-noise ratio as log10(E_periodic / E_noise).
///
/// Per voiced region with at least eight cycles the cycles are resampled to
/// the mean period and averaged into a template; the template, warped back to
/// each cycle, is the periodic part and the remainder is noise. Regions are
/// combined weighted by energy.
pub fn hnr(egg: &Waveform, voicing: &VoicingMask) -> Result<f64> {
    let rate = egg.rate();
    let x = egg.samples();
    // Epochs come from a smoothed copy so noise does not split pulses.
    let smooth = hann_smooth(x, (SMOOTH * rate).round() as usize);
    let epochs = extract_epochs(&Waveform::new(smooth, rate, ChannelRole::Egg)?, voicing);

    let (mut weighted, mut total) = (0.0, 0.0);
    for &(a, b) in voicing.regions() {
        let lo = epochs.gci.partition_point(|&t| t < a);
        let hi = epochs.gci.partition_point(|&t| t <= b);
        let gci = regularize(&epochs.gci[lo..hi]);
        let cycles: Vec<(f64, f64)> = gci
            .windows(2)
            .map(|w| (w[0] * rate, w[1] * rate))
            .filter(|(s, e)| e - s <= MAX_PERIOD * rate)
            .collect();
        if cycles.len() < MIN_CYCLES {
            continue;
        }
        if let Some((ratio, energy)) = region_hnr(x, &cycles) {
            weighted += ratio * energy;
            total += energy;
        }
    }
    if total <= 0.0 {
        return Err(Error::Signal("insufficient cycles".into()));
    }
    Ok(weighted / total)
}

/// HNR and periodic-plus-noise energy of one region; cycles in samples.
fn region_hnr(x: &[f64], cycles: &[(f64, f64)]) -> Option<(f64, f64)> {
    let first = cycles[0].0.ceil() as usize;
    let last = (cycles[cycles.len() - 1].1.floor() as usize).min(x.len() - 1);
    let span = &x[first..=last];
    let mean = span.iter().sum::<f64>() / span.len() as f64;
    let y: Vec<f64> = x.iter().map(|v| v - mean).collect();

    let mean_period = cycles.iter().map(|(s, e)| e - s).sum::<f64>() / cycles.len() as f64;
    let m = mean_period.round().max(4.0) as usize;
    let template = average(&y, cycles, m);
    // Align each cycle to the first template to the nearest 1/20 sample.
    let aligned: Vec<(f64, f64)> = cycles
        .iter()
        .map(|&(s, e)| {
            let step = (e - s) / m as f64;
            let cost = |tau: f64| -> f64 {
                template
                    .iter()
                    .enumerate()
                    .map(|(j, t)| (cubic(&y, s + tau + j as f64 * step) - t).powi(2))
                    .sum()
            };
            let tau = (-20..=20)
                .map(|k| k as f64 / 20.0)
                .min_by(|&a, &b| cost(a).total_cmp(&cost(b)))
                .unwrap_or(0.0);
            (s + tau, e + tau)
        })
        .collect();
    let cycles = &aligned[..];
    let template = average(&y, cycles, m);

    let (mut ep, mut en) = (0.0, 0.0);
    for &(s, e) in cycles {
        let i0 = s.ceil() as usize;
        let mut i = i0;
        while (i as f64) < e && i < y.len() {
            let phase = (i as f64 - s) / (e - s) * m as f64;
            let p = cubic_periodic(&template, phase);
            let noise = y[i] - p;
            ep += p * p;
            en += noise * noise;
            i += 1;
        }
    }
    if ep <= 0.0 {
        return None;
    }
    let ratio = if en <= 0.0 { HNR_CEILING } else { (ep / en).log10().min(HNR_CEILING) };
    Some((ratio, ep + en))
}

fn average(y: &[f64], cycles: &[(f64, f64)], m: usize) -> Vec<f64> {
    let mut template = vec![0.0; m];
    for &(s, e) in cycles {
        let step = (e - s) / m as f64;
        for (j, t) in template.iter_mut().enumerate() {
            *t += cubic(y, s + j as f64 * step);
        }
    }
    template.iter_mut().for_each(|t| *t /= cycles.len() as f64);
    template
}

/// Replace each instant by a local linear fit through its neighbours, which
/// removes detection jitter while following slow pitch changes. Runs are
/// split at gaps longer than a cycle.
fn regularize(t: &[f64]) -> Vec<f64> {
    const REACH: usize = 4;
    let mut out = t.to_vec();
    let mut start = 0;
    while start < t.len() {
        let mut end = start + 1;
        while end < t.len() && t[end] - t[end - 1] <= MAX_PERIOD {
            end += 1;
        }
        let run = &t[start..end];
        for i in 0..run.len() {
            let lo = i.saturating_sub(REACH);
            let hi = (i + REACH + 1).min(run.len());
            if hi - lo < 3 {
                continue;
            }
            let n = (hi - lo) as f64;
            let xm = (lo..hi).map(|k| k as f64).sum::<f64>() / n;
            let ym = run[lo..hi].iter().sum::<f64>() / n;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for k in lo..hi {
                sxy += (k as f64 - xm) * (run[k] - ym);
                sxx += (k as f64 - xm) * (k as f64 - xm);
            }
            out[start + i] = ym + sxy / sxx * (i as f64 - xm);
        }
        start = end;
    }
    out
}

fn hann_smooth(x: &[f64], width: usize) -> Vec<f64> {
    let half = (width / 2).max(1) as isize;
    let w: Vec<f64> = (-half..=half)
        .map(|k| 0.5 + 0.5 * (std::f64::consts::PI * k as f64 / (half + 1) as f64).cos())
        .collect();
    let norm: f64 = w.iter().sum();
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            w.iter()
                .enumerate()
                .map(|(j, wj)| wj * x[(i + j as isize - half).clamp(0, n - 1) as usize])
                .sum::<f64>()
                / norm
        })
        .collect()
}

fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    let [p0, p1, p2, p3] = p;
    0.5 * (2.0 * p1
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
}

fn cubic(y: &[f64], pos: f64) -> f64 {
    let n = y.len() as isize;
    let i = pos.floor() as isize;
    let at = |k: isize| y[k.clamp(0, n - 1) as usize];
    catmull_rom([at(i - 1), at(i), at(i + 1), at(i + 2)], pos - i as f64)
}

fn cubic_periodic(y: &[f64], pos: f64) -> f64 {
    let n = y.len() as isize;
    let i = pos.floor() as isize;
    let at = |k: isize| y[k.rem_euclid(n) as usize];
    catmull_rom([at(i - 1), at(i), at(i + 1), at(i + 2)], pos - i as f64)
}
