use std::collections::BTreeMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use mtgl_core::cpp::{census_law_exact, Census};
use mtgl_core::sim::{census, replicate_seed, sample_graph};
use mtgl_core::{validate_model, ModelSpec};

fn sampled_law(spec: &ModelSpec, samples: u64, seed: u64) -> BTreeMap<Census, u64> {
    let m = validate_model(spec).unwrap();
    let mut out = BTreeMap::new();
    for i in 0..samples {
        let c = census(&sample_graph(&m, replicate_seed(seed, i)));
        let gamma: Census = c.t.iter().map(|(k, &v)| (k.clone(), v as u32)).collect();
        *out.entry(gamma).or_insert(0) += 1;
    }
    out
}

fn check(spec: ModelSpec, seed: u64) {
    const SAMPLES: u64 = 40_000;
    let m = validate_model(&spec).unwrap();
    let law = census_law_exact(&m).unwrap();
    let total: f64 = law.iter().map(|e| e.probability).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let seen = sampled_law(&spec, SAMPLES, seed);
    for g in seen.keys() {
        assert!(law.iter().any(|e| &e.gamma == g), "sampled census {g:?} has no exact probability");
    }
    let n = SAMPLES as f64;
    let (mut stat, mut bins, mut pooled_o, mut pooled_e) = (0.0, 0usize, 0.0, 0.0);
    for e in &law {
        let exp = e.probability * n;
        let obs = seen.get(&e.gamma).copied().unwrap_or(0) as f64;
        if exp >= 5.0 {
            stat += (obs - exp).powi(2) / exp;
            bins += 1;
        } else {
            pooled_o += obs;
            pooled_e += exp;
        }
    }
    if pooled_e >= 5.0 {
        stat += (pooled_o - pooled_e).powi(2) / pooled_e;
        bins += 1;
    }
    let crit = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < crit, "chi2 {stat} on {} df", bins - 1);
}

#[test]
fn sampler_matches_exact_census_law_single_type() {
    check(ModelSpec::single_type(2.0, 5), 31);
}

#[test]
fn sampler_matches_exact_census_law_two_types() {
    check(ModelSpec::new(vec![vec![1.0, 3.0], vec![3.0, 1.0]], vec![0.5, 0.5], 4), 37);
}
