use anchormix::asymptotics::{quasi_consistency_alpha, relabeling_probs_for, DEFAULT_FACTORIAL_CAP};
use anchormix::datasets::{sisfall_prior, sisfall_synthetic};
use anchormix::gibbs::summary::{allocation_table, summarize};
use anchormix::gibbs::{gibbs_fit, SamplerConfig};
use anchormix::selection::{anchored_em, EmConfig};

#[test]
fn synthetic_features_fit_end_to_end() {
    let data = sisfall_synthetic();
    let prior = sisfall_prior(&data);
    let mut em = EmConfig::new(5, 2);
    em.seed = 3;
    let fit = anchored_em(&data, &prior, &em).unwrap();
    let dist = relabeling_probs_for(&data, &fit.best.anchors, &fit.best.params, DEFAULT_FACTORIAL_CAP).unwrap();
    let alpha = quasi_consistency_alpha(&dist);
    assert!(alpha > 0.99, "alpha = {alpha}");

    let cfg = SamplerConfig { chains: 4, iterations: 3_000, burn_in: 500, target_draws: 2_000, seed: 11 };
    let draws = gibbs_fit(&data, &fit.best.anchors, &prior, &cfg, Some(&fit.best.params)).unwrap();
    let summary = summarize(&draws).unwrap();
    let table = allocation_table(&draws, &data).unwrap();
    assert_eq!(table.groups.len(), 30);
    for row in &table.probs {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let low_smv = (0..5)
        .max_by(|&a, &b| summary.components[a].theta[1].mean.total_cmp(&summary.components[b].theta[1].mean))
        .unwrap();
    let d07 = table.groups.iter().position(|g| g == "D07").unwrap();
    eprintln!("alpha {alpha}; D07 row {:?}; low-SMV component {}", table.probs[d07], low_smv + 1);
    assert!(table.probs[d07][low_smv] >= 0.95);
}
