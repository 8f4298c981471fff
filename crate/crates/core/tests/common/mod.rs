//! Shared test oracles, independent of the library's implementation paths.
//! Each test target uses a subset, hence the allow.
#![allow(dead_code)]

/// Textbook O(n^2) discrete Fourier transform. Returns (re, im).
pub fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        for (t, &v) in x.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
            re[k] += v * ang.cos();
            im[k] += v * ang.sin();
        }
    }
    (re, im)
}

/// Dominant frequency of a signal segment by naive DFT, in Hz.
pub fn dominant_frequency(segment: &[f64], sample_rate: f64) -> f64 {
    let (re, im) = naive_dft(segment);
    let half = segment.len() / 2;
    let mut best = 1usize;
    let mut best_p = 0.0;
    for k in 1..=half {
        let p = re[k] * re[k] + im[k] * im[k];
        if p > best_p {
            best_p = p;
            best = k;
        }
    }
    best as f64 * sample_rate / segment.len() as f64
}

/// Nearest tone index for a measured frequency.
pub fn nearest_tone(freq: f64) -> usize {
    (0..ospg_core::synth::TONE_COUNT)
        .min_by(|&a, &b| {
            let da = (ospg_core::synth::tone_freq(a) - freq).abs();
            let db = (ospg_core::synth::tone_freq(b) - freq).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap()
}

/// Full O(m*n) edit-distance table, kept deliberately separate from the
/// two-row implementation under test.
pub fn brute_force_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        table[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            table[i][j] = (table[i - 1][j] + 1)
                .min(table[i][j - 1] + 1)
                .min(table[i - 1][j - 1] + cost);
        }
    }
    table[a.len()][b.len()]
}
