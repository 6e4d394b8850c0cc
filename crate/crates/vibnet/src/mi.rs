//! Nonparametric mutual-information estimation (Kraskov-Stogbauer-
//! Grassberger variant 1 with max-norm neighborhoods) and a tracker that
//! follows I(h_1; x) across training epochs.

use crate::data::Dataset;
use crate::error::{Result, VibError};
use crate::gate::GateMode;
use crate::network::Network;
use crate::rng::RandomSource;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    /// Estimate in nats, clipped below at 0 for reporting.
    pub value: f64,
    pub k: usize,
    pub n: usize,
}

/// Digamma function via upward recurrence into the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 8.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    acc + x.ln()
        - 0.5 / x
        - inv2
            * (1.0 / 12.0
                - inv2
                    * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))))
}

/// Tie-breaking jitter magnitude; max-norm kNN needs distinct distances.
pub const KSG_JITTER: f64 = 1e-10;

fn jittered(t: &Tensor, rng: &mut RandomSource) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v += rng.uniform_in(-0.5 * KSG_JITTER, 0.5 * KSG_JITTER);
    }
    out
}

#[inline]
fn linf(a: &[f64], b: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        if d > m {
            m = d;
        }
    }
    m
}

/// KSG estimator (variant 1):
/// I = psi(k) + psi(n) - mean_i [ psi(n_x(i) + 1) + psi(n_y(i) + 1) ],
/// where n_x(i) counts samples strictly inside the joint kth-neighbor
/// distance along x, likewise n_y. Coordinates receive a deterministic
/// sub-resolution jitter to break exact duplicates.
pub fn ksg_mutual_information(x: &Tensor, y: &Tensor, k: usize) -> Result<MiEstimate> {
    let n = x.rows();
    if y.rows() != n {
        return Err(VibError::Input(format!("sample counts differ: {n} vs {}", y.rows())));
    }
    if k == 0 || n <= k {
        return Err(VibError::Input(format!("need n > k >= 1, got n = {n}, k = {k}")));
    }
    let mut jrng = RandomSource::new(0x4b53_4731);
    let x = jittered(x, &mut jrng);
    let y = jittered(y, &mut jrng);

    // deterministic two-way split over query points
    let chunk = |range: std::ops::Range<usize>| -> (f64, f64) {
        let mut psi_sum = 0.0;
        let mut joint = vec![0.0f64; n];
        for i in range.clone() {
            let xi = x.row(i);
            let yi = y.row(i);
            for j in 0..n {
                joint[j] = if j == i {
                    f64::INFINITY
                } else {
                    linf(xi, x.row(j)).max(linf(yi, y.row(j)))
                };
            }
            // kth smallest joint distance
            let mut order: Vec<f64> = joint.clone();
            let (_, eps, _) =
                order.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
            let eps = *eps;
            let mut nx = 0usize;
            let mut ny = 0usize;
            for j in 0..n {
                if j == i {
                    continue;
                }
                if linf(xi, x.row(j)) < eps {
                    nx += 1;
                }
                if linf(yi, y.row(j)) < eps {
                    ny += 1;
                }
            }
            psi_sum += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
        }
        (psi_sum, range.len() as f64)
    };
    let mid = n / 2;
    let ((s1, c1), (s2, c2)) = std::thread::scope(|scope| {
        let h = scope.spawn(|| chunk(0..mid));
        let second = chunk(mid..n);
        (h.join().expect("ksg worker panicked"), second)
    });
    let mean_psi = (s1 + s2) / (c1 + c2);
    let raw = digamma(k as f64) + digamma(n as f64) - mean_psi;
    Ok(MiEstimate { value: raw.max(0.0), k, n })
}

/// Tracks I(h_1; x) on a fixed data subset with a fixed estimation seed,
/// so the curve's shape reflects training rather than estimator noise.
#[derive(Debug, Clone)]
pub struct MiTracker {
    subset: Tensor,
    k: usize,
    seed: u64,
}

impl MiTracker {
    pub fn new(data: &Dataset, subset_size: usize, k: usize, seed: u64) -> Result<Self> {
        if subset_size < 500 {
            return Err(VibError::Input(format!(
                "mi tracking needs a subset of at least 500 samples, got {subset_size}"
            )));
        }
        if data.len() < subset_size {
            return Err(VibError::Input(format!(
                "dataset has {} samples, subset of {subset_size} requested",
                data.len()
            )));
        }
        let idx: Vec<usize> = (0..subset_size).collect();
        Ok(MiTracker { subset: data.images.gather_rows(&idx), k, seed })
    }

    /// One stochastic sample of h_1 per input, then the KSG estimate
    /// between the raw inputs and h_1.
    pub fn measure(&self, net: &Network) -> Result<MiEstimate> {
        let mut rng = RandomSource::new(self.seed);
        let n = self.subset.rows();
        let mut shape = vec![n];
        shape.extend_from_slice(&net.input_shape);
        let x = self.subset.clone().reshaped(&shape)?;
        let h1 = net.hidden_after_block(&x, 0, GateMode::TrainSample, &mut rng)?;
        let width: usize = h1.len() / n;
        let h1 = h1.reshaped(&[n, width])?;
        ksg_mutual_information(&self.subset, &h1, self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digamma_reference_values() {
        let euler = 0.577_215_664_901_532_9_f64;
        assert!((digamma(1.0) + euler).abs() < 1e-12);
        assert!((digamma(2.0) - (1.0 - euler)).abs() < 1e-12);
        assert!((digamma(0.5) + euler + 2.0 * std::f64::consts::LN_2).abs() < 1e-10);
        // recurrence psi(x+1) = psi(x) + 1/x
        for x in [0.3, 1.7, 4.2, 11.0] {
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-10);
        }
    }

    fn correlated_pairs(n: usize, rho: f64, seed: u64) -> (Tensor, Tensor) {
        let mut rng = RandomSource::new(seed);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let z1 = rng.standard_normal();
            let z2 = rng.standard_normal();
            xs.push(z1);
            ys.push(rho * z1 + (1.0 - rho * rho).sqrt() * z2);
        }
        (
            Tensor::from_vec(&[n, 1], xs).unwrap(),
            Tensor::from_vec(&[n, 1], ys).unwrap(),
        )
    }

    #[test]
    fn independent_gaussians_have_near_zero_mi() {
        for seed in 0..10u64 {
            let (x, y) = correlated_pairs(2000, 0.0, 1000 + seed);
            let mi = ksg_mutual_information(&x, &y, 5).unwrap();
            assert!(mi.value.abs() < 0.05, "seed {seed}: {}", mi.value);
        }
    }

    #[test]
    fn correlated_gaussians_match_closed_form() {
        let rho = 0.9f64;
        let expect = -0.5 * (1.0 - rho * rho).ln(); // 0.8304 nats
        let (x, y) = correlated_pairs(5000, rho, 7);
        let mi = ksg_mutual_information(&x, &y, 5).unwrap();
        assert!(
            (mi.value - expect).abs() < 0.1,
            "estimate {} vs closed form {expect}",
            mi.value
        );
    }

    #[test]
    fn estimator_is_symmetric_in_its_arguments() {
        let (x, y) = correlated_pairs(800, 0.6, 3);
        let a = ksg_mutual_information(&x, &y, 5).unwrap();
        let b = ksg_mutual_information(&y, &x, 5).unwrap();
        assert!((a.value - b.value).abs() < 1e-9);
    }

    #[test]
    fn estimate_invariant_under_monotone_rescaling() {
        let (x, y) = correlated_pairs(1500, 0.8, 11);
        let base = ksg_mutual_information(&x, &y, 5).unwrap();
        // strictly monotone coordinatewise transform of x
        let xt = x.map(|v| (3.0 * v).tanh() * 10.0 + 0.1 * v);
        let t = ksg_mutual_information(&xt, &y, 5).unwrap();
        // rank-based counts shift only via jitter-scale effects
        assert!(
            (base.value - t.value).abs() < 0.05,
            "{} vs {}",
            base.value,
            t.value
        );
    }

    #[test]
    fn rejects_bad_k_and_mismatched_samples() {
        let (x, y) = correlated_pairs(50, 0.5, 1);
        assert!(ksg_mutual_information(&x, &y, 0).is_err());
        assert!(ksg_mutual_information(&x, &y, 50).is_err());
        let y_short = Tensor::zeros(&[10, 1]);
        assert!(ksg_mutual_information(&x, &y_short, 3).is_err());
    }

    #[test]
    fn duplicate_heavy_data_still_estimates() {
        // constant columns and duplicated rows: jitter must break ties
        let n = 600;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let v = (i % 7) as f64;
            xs.push(v);
            ys.push(v); // y is a deterministic function of x
        }
        let x = Tensor::from_vec(&[n, 1], xs).unwrap();
        let y = Tensor::from_vec(&[n, 1], ys).unwrap();
        let mi = ksg_mutual_information(&x, &y, 5).unwrap();
        assert!(mi.value > 1.0, "strong dependence should show: {}", mi.value);
    }

    #[test]
    fn tracker_measures_hidden_layer_mi() {
        use crate::data::synthetic_blobs;
        use crate::network::toy_mlp;
        let data = synthetic_blobs(600, 2, 6, 4.0, 9).unwrap();
        let mut rng = RandomSource::new(2);
        let net = toy_mlp(&[6, 10, 2], false, false, &mut rng);
        let tracker = MiTracker::new(&data, 500, 5, 77).unwrap();
        let a = tracker.measure(&net).unwrap();
        let b = tracker.measure(&net).unwrap();
        assert_eq!(a, b, "fixed seed must give identical estimates");
        assert!(a.value >= 0.0);
        assert!(MiTracker::new(&data, 100, 5, 0).is_err());
    }
}
