//! Regenerates `data/sisfall_synthetic.csv`, a stand-in for the SisFall
//! feature table with 5 trials per activity.
//!
//! Each trial draws a component from a per-activity allocation profile and
//! then features from an isotropic normal around that component's mean of
//! `(ln max SMV, ln min SMV, ln max |dSMV|)`.
//!
//! cargo run -p anchormix --example make_synthetic_features > crates/core/data/sisfall_synthetic.csv

use anchormix::ingest::{write_features, FeatureRow};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::Normal;

const MEANS: [[f64; 3]; 5] =
    [[7.096, 4.537, 5.444], [7.412, 3.596, 6.373], [6.297, 3.881, 4.033], [7.030, 2.918, 5.287], [5.857, 5.233, 3.442]];

const NOISE_SD: f64 = 0.25;
const TRIALS: usize = 5;

#[rustfmt::skip]
const PROFILES: [(&str, [f64; 5]); 30] = [
    ("D05", [0.191, 0.017, 0.027, 0.004, 0.761]),
    ("D06", [0.000, 0.412, 0.000, 0.588, 0.000]),
    ("D07", [0.000, 0.000, 0.000, 0.000, 0.999]),
    ("D08", [0.053, 0.069, 0.762, 0.059, 0.057]),
    ("D09", [0.370, 0.041, 0.007, 0.009, 0.574]),
    ("D10", [0.113, 0.067, 0.725, 0.065, 0.030]),
    ("D11", [0.552, 0.239, 0.001, 0.208, 0.000]),
    ("D12", [0.006, 0.003, 0.000, 0.000, 0.990]),
    ("D13", [0.502, 0.071, 0.008, 0.008, 0.412]),
    ("D14", [0.003, 0.001, 0.000, 0.000, 0.996]),
    ("D15", [0.000, 0.000, 0.000, 0.000, 0.999]),
    ("D16", [0.001, 0.000, 0.000, 0.000, 0.999]),
    ("D17", [0.005, 0.001, 0.001, 0.000, 0.993]),
    ("D18", [0.135, 0.621, 0.000, 0.244, 0.000]),
    ("D19", [0.000, 0.139, 0.013, 0.848, 0.000]),
    ("F01", [0.227, 0.735, 0.000, 0.038, 0.000]),
    ("F02", [0.619, 0.340, 0.000, 0.041, 0.000]),
    ("F03", [0.842, 0.136, 0.000, 0.022, 0.000]),
    ("F04", [0.149, 0.780, 0.000, 0.071, 0.000]),
    ("F05", [0.000, 0.868, 0.000, 0.132, 0.000]),
    ("F06", [0.956, 0.035, 0.000, 0.008, 0.001]),
    ("F07", [0.772, 0.159, 0.000, 0.069, 0.000]),
    ("F08", [0.583, 0.350, 0.001, 0.059, 0.007]),
    ("F09", [0.950, 0.041, 0.000, 0.009, 0.000]),
    ("F10", [0.423, 0.549, 0.000, 0.028, 0.000]),
    ("F11", [0.684, 0.225, 0.001, 0.090, 0.000]),
    ("F12", [0.740, 0.222, 0.000, 0.038, 0.000]),
    ("F13", [0.239, 0.435, 0.026, 0.117, 0.183]),
    ("F14", [0.448, 0.335, 0.008, 0.176, 0.034]),
    ("F15", [0.756, 0.190, 0.002, 0.050, 0.001]),
];

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(20_160_816);
    let noise = Normal::new(0.0, NOISE_SD).unwrap();
    let mut rows = Vec::new();
    for (activity, profile) in PROFILES {
        let pick = WeightedIndex::new(profile).unwrap();
        for t in 1..=TRIALS {
            let mu = MEANS[pick.sample(&mut rng)];
            let f: Vec<f64> = mu.iter().map(|m| round6(m + noise.sample(&mut rng))).collect();
            rows.push(FeatureRow {
                id: format!("{activity}_SYN_R{t:02}"),
                activity: activity.to_string(),
                f1: f[0],
                f2: f[1],
                f3: f[2],
            });
        }
    }
    write_features(&rows, std::io::stdout().lock()).unwrap();
}
