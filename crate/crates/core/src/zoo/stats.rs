use super::cnn::CnnParams;
use super::ffnn::FfnnParams;

/// Statistics per tensor, in this order.
pub const STAT_NAMES: [&str; 7] = ["mean", "std", "min", "max", "q25", "q50", "q75"];

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The seven statistics of [`STAT_NAMES`]; zeros for an empty slice.
pub fn summary(values: &[f64]) -> [f64; 7] {
    if values.is_empty() {
        return [0.0; 7];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    [
        mean,
        var.sqrt(),
        s[0],
        s[s.len() - 1],
        quantile(&s, 0.25),
        quantile(&s, 0.5),
        quantile(&s, 0.75),
    ]
}

/// Per layer: statistics of the weights, then of the biases.
/// Length `7 · 2 · L`.
pub fn stat_features(net: &FfnnParams) -> Vec<f64> {
    net.layers
        .iter()
        .flat_map(|l| {
            let mut f = summary(l.weight.data()).to_vec();
            f.extend(summary(&l.bias));
            f
        })
        .collect()
}

pub fn stat_features_cnn(net: &CnnParams) -> Vec<f64> {
    (0..net.num_layers())
        .flat_map(|l| {
            let (w, b) = net.layer(l);
            let mut f = summary(w.data()).to_vec();
            f.extend(summary(b));
            f
        })
        .collect()
}
