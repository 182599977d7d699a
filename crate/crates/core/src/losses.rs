//! Reconstruction losses and their weighted combination.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::{pairwise_sum, Error, Result};

/// How per-pixel terms are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    /// Sum divided by the number of contributing pixels.
    Mean,
}

fn reduce(terms: &[f64], reduction: Reduction) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    let s = pairwise_sum(terms);
    match reduction {
        Reduction::Sum => s,
        Reduction::Mean => s / terms.len() as f64,
    }
}

fn per_pixel_sq(a: &Image, b: &Image) -> Result<Vec<f64>> {
    a.same_shape(b)?;
    Ok(a.data
        .chunks_exact(a.channels)
        .zip(b.data.chunks_exact(b.channels))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum())
        .collect())
}

/// Squared color difference summed over channels and pixels.
pub fn rgb_loss(rendered: &Image, observed: &Image, reduction: Reduction) -> Result<f64> {
    Ok(reduce(&per_pixel_sq(rendered, observed)?, reduction))
}

/// Squared difference between rendered opacity and a silhouette mask.
pub fn sil_loss(opacity: &Image, mask: &Image, reduction: Reduction) -> Result<f64> {
    if opacity.channels != 1 {
        return Err(Error::Input(format!("opacity image needs 1 channel, got {}", opacity.channels)));
    }
    Ok(reduce(&per_pixel_sq(opacity, mask)?, reduction))
}

/// Squared flow error over pixels marked valid. No valid pixel gives 0.
pub fn flow_loss(rendered: &[[f64; 2]], observed: &[[f64; 2]], valid: &[bool], reduction: Reduction) -> Result<f64> {
    if observed.len() != rendered.len() {
        return Err(Error::Dimension { expected: rendered.len(), got: observed.len() });
    }
    if valid.len() != rendered.len() {
        return Err(Error::Dimension { expected: rendered.len(), got: valid.len() });
    }
    let terms: Vec<f64> = rendered
        .iter()
        .zip(observed)
        .zip(valid)
        .filter(|(_, v)| **v)
        .map(|((a, b), _)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .collect();
    if terms.is_empty() {
        log::warn!("flow loss has no valid pixels, reporting 0");
    }
    Ok(reduce(&terms, reduction))
}

/// Per-term weights; all nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rgb: f64,
    pub sil: f64,
    pub flow: f64,
    #[serde(rename = "match")]
    pub matching: f64,
    pub proj: f64,
    pub cycle: f64,
    pub eikonal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rgb: 0.1, sil: 1.0, flow: 0.1, matching: 0.1, proj: 0.1, cycle: 1.0, eikonal: 0.01 }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights =
        LossWeights { rgb: 0.0, sil: 0.0, flow: 0.0, matching: 0.0, proj: 0.0, cycle: 0.0, eikonal: 0.0 };

    fn entries(&self) -> [(&'static str, f64); 7] {
        [
            ("rgb", self.rgb),
            ("sil", self.sil),
            ("flow", self.flow),
            ("match", self.matching),
            ("proj", self.proj),
            ("cycle", self.cycle),
            ("eikonal", self.eikonal),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.entries() {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Parameter(format!("loss weight {name} must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Unweighted term values; absent terms count as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LossTerms {
    pub rgb: f64,
    pub sil: f64,
    pub flow: f64,
    #[serde(rename = "match")]
    pub matching: f64,
    pub proj: f64,
    pub cycle: f64,
    pub eikonal: f64,
}

impl LossTerms {
    fn entries(&self) -> [(&'static str, f64); 7] {
        [
            ("rgb", self.rgb),
            ("sil", self.sil),
            ("flow", self.flow),
            ("match", self.matching),
            ("proj", self.proj),
            ("cycle", self.cycle),
            ("eikonal", self.eikonal),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    /// Unweighted value of every term.
    pub terms: BTreeMap<String, f64>,
}

impl LossReport {
    /// `{"cycle":…,"eikonal":…,…,"total":…}` with sorted keys.
    pub fn to_json(&self) -> String {
        let mut all = self.terms.clone();
        all.insert("total".into(), self.total);
        serde_json::to_string(&all).expect("finite report serializes")
    }
}

/// Weighted sum of the terms. A NaN term is reported by name.
pub fn total_loss(weights: &LossWeights, terms: &LossTerms) -> Result<LossReport> {
    weights.validate()?;
    let mut report = BTreeMap::new();
    let mut total = 0.0;
    for ((name, w), (_, v)) in weights.entries().into_iter().zip(terms.entries()) {
        if v.is_nan() {
            return Err(Error::Numerical(format!("loss term {name} is NaN")));
        }
        if w != 0.0 {
            total += w * v;
        }
        report.insert(name.to_string(), v);
    }
    Ok(LossReport { total, terms: report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, c, (0..w * h * c).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn rgb_and_sil_examples() {
        let a = random_image(5, 4, 3, 1);
        assert_eq!(rgb_loss(&a, &a, Reduction::Sum).unwrap(), 0.0);
        let mut b = Image::new(5, 4, 3);
        b.pixel_mut(2, 1)[0] = 1.0;
        assert_eq!(rgb_loss(&b, &Image::new(5, 4, 3), Reduction::Sum).unwrap(), 1.0);
        assert_eq!(rgb_loss(&b, &Image::new(5, 4, 3), Reduction::Mean).unwrap(), 1.0 / 20.0);

        let c = random_image(5, 4, 3, 2);
        let mut naive = 0.0;
        for y in 0..4 {
            for x in 0..5 {
                for ch in 0..3 {
                    naive += (a.pixel(x, y)[ch] - c.pixel(x, y)[ch]).powi(2);
                }
            }
        }
        assert!((rgb_loss(&a, &c, Reduction::Sum).unwrap() - naive).abs() < 1e-12);

        let o = random_image(3, 3, 1, 3);
        let m = random_image(3, 3, 1, 4);
        let naive: f64 = o.data.iter().zip(&m.data).map(|(p, q)| (p - q) * (p - q)).sum();
        assert!((sil_loss(&o, &m, Reduction::Sum).unwrap() - naive).abs() < 1e-12);
        assert!(sil_loss(&a, &a, Reduction::Sum).is_err());
        assert!(rgb_loss(&a, &Image::new(4, 5, 3), Reduction::Sum).is_err());
    }

    #[test]
    fn flow_examples() {
        let f = vec![[0.5, -1.0], [2.0, 0.0], [0.0, 3.0]];
        assert_eq!(flow_loss(&f, &f, &[true; 3], Reduction::Sum).unwrap(), 0.0);
        let mut g = f.clone();
        g[1][0] += 1.0;
        assert_eq!(flow_loss(&f, &g, &[true; 3], Reduction::Sum).unwrap(), 1.0);
        assert_eq!(flow_loss(&f, &g, &[true, false, true], Reduction::Sum).unwrap(), 0.0);
        assert_eq!(flow_loss(&f, &g, &[false; 3], Reduction::Mean).unwrap(), 0.0);
        assert!(flow_loss(&f, &g[..2], &[true; 3], Reduction::Sum).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<[f64; 2]> = (0..50).map(|_| [rng.gen(), rng.gen()]).collect();
        let b: Vec<[f64; 2]> = (0..50).map(|_| [rng.gen(), rng.gen()]).collect();
        let valid: Vec<bool> = (0..50).map(|_| rng.gen_bool(0.7)).collect();
        let mut naive = 0.0;
        for i in 0..50 {
            if valid[i] {
                naive += (a[i][0] - b[i][0]).powi(2) + (a[i][1] - b[i][1]).powi(2);
            }
        }
        assert!((flow_loss(&a, &b, &valid, Reduction::Sum).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let terms = LossTerms { rgb: 1.0, sil: 2.0, flow: 3.0, matching: 4.0, proj: 5.0, cycle: 6.0, eikonal: 7.0 };
        assert_eq!(total_loss(&LossWeights::ZERO, &terms).unwrap().total, 0.0);
        let one_hot = LossWeights { flow: 1.0, ..LossWeights::ZERO };
        assert_eq!(total_loss(&one_hot, &terms).unwrap().total, 3.0);
        let w = LossWeights::default();
        let dot = 0.1 * 1.0 + 1.0 * 2.0 + 0.1 * 3.0 + 0.1 * 4.0 + 0.1 * 5.0 + 1.0 * 6.0 + 0.01 * 7.0;
        let r = total_loss(&w, &terms).unwrap();
        assert!((r.total - dot).abs() < 1e-12);
        assert_eq!(r.terms.len(), 7);
        assert!(r.to_json().starts_with(r#"{"cycle":6.0,"eikonal":7.0,"flow":3.0,"match":4.0"#));
        assert!(total_loss(&LossWeights { sil: -1.0, ..w }, &terms).is_err());
        let bad = LossTerms { sil: f64::NAN, ..terms };
        let e = total_loss(&w, &bad).unwrap_err();
        assert!(e.to_string().contains("sil"));
    }

    #[test]
    fn weights_json_defaults() {
        let w: LossWeights = serde_json::from_str(r#"{"match":0.5}"#).unwrap();
        assert_eq!(w.matching, 0.5);
        assert_eq!(w.sil, 1.0);
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative_and_permutation_invariant(seed in any::<u64>(), n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
            let b: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
            let valid = vec![true; n];
            let l = flow_loss(&a, &b, &valid, Reduction::Sum).unwrap();
            prop_assert!(l >= 0.0);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.reverse();
            let pa: Vec<_> = idx.iter().map(|&i| a[i]).collect();
            let pb: Vec<_> = idx.iter().map(|&i| b[i]).collect();
            let lp = flow_loss(&pa, &pb, &valid, Reduction::Sum).unwrap();
            prop_assert!((l - lp).abs() <= 1e-12 * l.max(1.0));
        }
    }
}
