//! Bundled datasets and their reference priors.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ingest::{read_dataset, SchemaOptions};
use crate::model::{ComponentPrior, NormalGammaPrior, NormalWishartPrior, PriorSpec, RatePrior};
use crate::rng::{stream, DOMAIN_DATASET};

const GALAXIES_CSV: &str = include_str!("../data/galaxies.csv");
const SISFALL_SYNTHETIC_CSV: &str = include_str!("../data/sisfall_synthetic.csv");

fn parse_univariate(text: &str) -> Result<Dataset> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut ids = Vec::new();
    let mut ys = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        let y = rec[1].trim().parse::<f64>().map_err(|e| Error::Parse {
            row: row + 1,
            column: "y".into(),
            reason: e.to_string(),
        })?;
        ys.push(vec![y]);
    }
    Dataset::new(ys, Some(ids), None)
}

/// Velocities of 82 galaxies in units of 10^3 km/s.
pub fn galaxies() -> Dataset {
    parse_univariate(GALAXIES_CSV).expect("bundled galaxies data is valid")
}

/// Reference prior for the galaxies data: `theta ~ N(midpoint, 52^2)`,
/// precision `~ Gamma(2, b0)` with `b0 ~ Gamma(0.2, 0.016)`, Dirichlet(1).
pub fn galaxies_prior(data: &Dataset) -> PriorSpec {
    PriorSpec {
        dirichlet: 1.0,
        component: ComponentPrior::NormalGamma(NormalGammaPrior {
            mean: data.midpoint()[0],
            kappa: 1.0 / (52.0 * 52.0),
            shape: 2.0,
            rate: RatePrior::Gamma { shape: 0.2, rate: 0.016 },
        }),
    }
}

/// Two-component scale mixture: 80 draws with means `(0, 0)`, variances
/// `(2.25, 0.25)` and weights `(0.35, 0.65)`. Returns the data and the
/// generating labels (0 = wide component).
pub fn scale_mixture(seed: u64) -> (Dataset, Vec<usize>) {
    const N: usize = 80;
    let mut rng = stream(seed, DOMAIN_DATASET, 0);
    let sds = [1.5, 0.5];
    let mut ys = Vec::with_capacity(N);
    let mut labels = Vec::with_capacity(N);
    for _ in 0..N {
        let j = usize::from(rng.random::<f64>() >= 0.35);
        ys.push(Normal::new(0.0, sds[j]).unwrap().sample(&mut rng));
        labels.push(j);
    }
    (Dataset::univariate(&ys).expect("finite draws"), labels)
}

/// Reference prior for the scale mixture: `theta ~ N(sample mean, 15)`,
/// precision `~ Gamma(5, 10)`, Dirichlet(1).
pub fn scale_mixture_prior(data: &Dataset) -> PriorSpec {
    PriorSpec {
        dirichlet: 1.0,
        component: ComponentPrior::NormalGamma(NormalGammaPrior {
            mean: data.mean()[0],
            kappa: 1.0 / 15.0,
            shape: 5.0,
            rate: RatePrior::Fixed(10.0),
        }),
    }
}

/// Synthetic 150 x 3 accelerometer feature table (30 activities, 5 trials
/// each) with columns `id, activity, f1, f2, f3`. Generated by the
/// `make_synthetic_features` example; the raw SisFall corpus is not bundled.
pub fn sisfall_synthetic() -> Dataset {
    read_dataset(SISFALL_SYNTHETIC_CSV.as_bytes(), &SchemaOptions::default()).expect("bundled feature table is valid")
}

/// Reference Normal-Wishart prior for feature data: `mu` = sample mean,
/// `kappa = 0.5`, `nu = 10`, `W = I`, Dirichlet(1).
pub fn sisfall_prior(data: &Dataset) -> PriorSpec {
    PriorSpec {
        dirichlet: 1.0,
        component: ComponentPrior::NormalWishart(NormalWishartPrior {
            mean: data.mean(),
            kappa: 0.5,
            dof: 10.0,
            scale: DMatrix::identity(data.p(), data.p()),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn galaxies_shape_and_moments() {
        let d = galaxies();
        assert_eq!((d.n(), d.p()), (82, 1));
        assert!((d.mean()[0] - 20.828).abs() < 1e-3);
        assert!((d.midpoint()[0] - 21.7255).abs() < 1e-9);
        let prior = galaxies_prior(&d);
        prior.validate(1).unwrap();
    }

    #[test]
    fn scale_mixture_is_reproducible() {
        let (a, la) = scale_mixture(4);
        let (b, lb) = scale_mixture(4);
        assert_eq!((a.clone(), la.clone()), (b, lb));
        assert_eq!(a.n(), 80);
        assert_ne!(a, scale_mixture(5).0);
        let wide = la.iter().filter(|&&l| l == 0).count();
        assert!((10..=45).contains(&wide), "{wide}");
        scale_mixture_prior(&a).validate(1).unwrap();
    }

    #[test]
    fn synthetic_features_shape() {
        let d = sisfall_synthetic();
        assert_eq!((d.n(), d.p()), (150, 3));
        let groups = d.groups().unwrap();
        assert_eq!(groups.iter().filter(|g| *g == "D07").count(), 5);
        sisfall_prior(&d).validate(3).unwrap();
    }
}
