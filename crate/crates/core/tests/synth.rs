use puregaze_core::geometry::{angular_error, pitchyaw_to_vector, GazeLabel};
use puregaze_core::manifest::Sample;
use puregaze_core::synth::{domain_samples, DomainSpec};

/// Darkness-weighted centroid offset of the iris inside each eye, averaged over both eyes.
fn iris_shift(sample: &Sample) -> (f64, f64) {
    let img = &sample.image;
    // sclera disk, shrunk slightly so antialiased skin at the rim stays out
    let radius = 0.09 * img.width as f64 - 0.3;
    let mut total = (0.0, 0.0);
    for &(er, ec) in &sample.eye_centers.unwrap() {
        let (mut w_sum, mut r_sum, mut c_sum) = (0.0, 0.0, 0.0);
        for row in 0..img.height {
            for col in 0..img.width {
                let (dr, dc) = (row as f64 - er, col as f64 - ec);
                if dr * dr + dc * dc > radius * radius {
                    continue;
                }
                let level = (0..img.channels).map(|c| img.at(c, row, col)).sum::<f64>() / img.channels as f64;
                let w = (0.93 - level).max(0.0);
                w_sum += w;
                r_sum += w * dr;
                c_sum += w * dc;
            }
        }
        total.0 += r_sum / w_sum;
        total.1 += c_sum / w_sum;
    }
    (total.0 / 2.0, total.1 / 2.0)
}

fn features(shift: (f64, f64)) -> [f64; 6] {
    let (r, c) = shift;
    [1.0, r, c, r * r, c * c, r * c]
}

/// Least squares by normal equations and Gauss-Jordan elimination.
fn fit(rows: &[[f64; 6]], targets: &[f64]) -> [f64; 6] {
    let mut a = [[0.0; 7]; 6];
    for (x, &y) in rows.iter().zip(targets) {
        for i in 0..6 {
            for j in 0..6 {
                a[i][j] += x[i] * x[j];
            }
            a[i][6] += x[i] * y;
        }
    }
    for col in 0..6 {
        let pivot = (col..6).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, pivot);
        for row in 0..6 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..7 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    std::array::from_fn(|i| a[i][6] / a[i][i])
}

fn dot(w: &[f64; 6], x: &[f64; 6]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

#[test]
fn gaze_is_recoverable_from_iris_position() {
    let mut spec = DomainSpec::source(500, 21);
    spec.nuisance.noise_sigma = 0.0;
    spec.nuisance.distractor = false;
    spec.nuisance.illumination = (1.0, 1.0);
    let samples = domain_samples(&spec).unwrap();
    let (train, test) = samples.split_at(300);
    let xs: Vec<[f64; 6]> = train.iter().map(|s| features(iris_shift(s))).collect();
    let pitch_w = fit(&xs, &train.iter().map(|s| s.label.pitch).collect::<Vec<_>>());
    let yaw_w = fit(&xs, &train.iter().map(|s| s.label.yaw).collect::<Vec<_>>());
    let mean_error = test
        .iter()
        .map(|s| {
            let x = features(iris_shift(s));
            let guess = GazeLabel {
                pitch: dot(&pitch_w, &x),
                yaw: dot(&yaw_w, &x),
            };
            angular_error(pitchyaw_to_vector(guess).unwrap(), pitchyaw_to_vector(s.label).unwrap()).unwrap()
        })
        .sum::<f64>()
        / test.len() as f64;
    assert!(mean_error < 1.0, "iris fit error {mean_error:.3} deg");
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn nuisances_are_independent_of_gaze() {
    let samples = domain_samples(&DomainSpec::source(2000, 1)).unwrap();
    let pitch: Vec<f64> = samples.iter().map(|s| s.label.pitch).collect();
    let yaw: Vec<f64> = samples.iter().map(|s| s.label.yaw).collect();
    let nuisances: [(&str, Vec<f64>); 3] = [
        ("illumination", samples.iter().map(|s| s.record.illumination.unwrap()).collect()),
        ("identity", samples.iter().map(|s| s.record.identity_seed.unwrap() as f64).collect()),
        (
            "distractor",
            samples
                .iter()
                .map(|s| if s.record.distractor.unwrap_or(false) { 1.0 } else { 0.0 })
                .collect(),
        ),
    ];
    for (name, values) in &nuisances {
        for (label, target) in [("pitch", &pitch), ("yaw", &yaw)] {
            let r = correlation(values, target);
            assert!(r.abs() < 0.05, "{name} vs {label}: r = {r:.4}");
        }
    }
}

#[test]
fn target_differs_from_source_only_in_nuisances() {
    let source = DomainSpec::source(10, 1);
    let target = DomainSpec::target(10, 1);
    assert_eq!(source.pitch_range, target.pitch_range);
    assert_eq!(source.yaw_range, target.yaw_range);
    assert_eq!(source.resolution, target.resolution);
    assert!(source.nuisance.illumination.0 > target.nuisance.illumination.1);
}
