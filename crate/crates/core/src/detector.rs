//! Oracle detector: groups rendered points by the object they came from and
//! applies dropout, label confusion and point jitter.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Vector};
use crate::world::{FaultProfile, Observation};

/// Detections with fewer points are discarded.
pub const MIN_DETECTION_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub points: Vec<Point>,
    pub confidence: f64,
    /// Object the points were rendered from. Evaluation only; the graph
    /// builder never reads it.
    pub source: usize,
}

/// Independent random streams for the three detector noise channels.
/// Every channel draws the same number of values whatever the fault
/// rates, so changing one rate does not shift the others.
#[derive(Debug, Clone)]
pub struct DetectorRng {
    dropout: ChaCha8Rng,
    confusion: ChaCha8Rng,
    jitter: ChaCha8Rng,
}

impl DetectorRng {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            dropout: stream(1),
            confusion: stream(2),
            jitter: stream(3),
        }
    }
}

/// Detects objects in an observation. `object_labels[i]` is the true label
/// of object `i`; confused labels are drawn from the other entries of
/// `vocabulary`.
pub fn detect(
    obs: &Observation,
    object_labels: &[String],
    vocabulary: &[String],
    faults: &FaultProfile,
    rng: &mut DetectorRng,
) -> Vec<Detection> {
    let mut groups: std::collections::BTreeMap<usize, Vec<Point>> = Default::default();
    for p in &obs.points {
        groups.entry(p.object).or_default().push(p.position);
    }
    let mut out = Vec::new();
    for (source, mut points) in groups {
        let drop: f64 = rng.dropout.random();
        let confuse: f64 = rng.confusion.random();
        let pick: f64 = rng.confusion.random();
        let low_conf: f64 = rng.confusion.random();
        for p in points.iter_mut() {
            let n = Vector::new(
                rng.jitter.sample(StandardNormal),
                rng.jitter.sample(StandardNormal),
                rng.jitter.sample(StandardNormal),
            );
            *p += n * faults.point_jitter_sigma;
        }
        if drop < faults.detector_dropout_prob || points.len() < MIN_DETECTION_POINTS {
            continue;
        }
        let truth = &object_labels[source];
        let others: Vec<&String> = vocabulary.iter().filter(|l| *l != truth).collect();
        let (label, confidence) = if confuse < faults.label_confusion_prob && !others.is_empty() {
            let i = ((pick * others.len() as f64) as usize).min(others.len() - 1);
            (others[i].clone(), 0.7 - 0.4 * low_conf)
        } else {
            (truth.clone(), 1.0)
        };
        out.push(Detection {
            label,
            points,
            confidence,
            source,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraPose;
    use crate::world::ObservedPoint;

    fn synthetic(groups: &[(usize, usize)]) -> Observation {
        let mut points = Vec::new();
        for &(object, n) in groups {
            for i in 0..n {
                points.push(ObservedPoint {
                    position: Point::new(object as f64, i as f64 * 0.01, 0.5),
                    object,
                });
            }
        }
        Observation {
            camera: CameraPose::new(Point::new(0.0, 0.0, 1.0), 0.0, 0.0),
            points,
            free_rays: vec![],
            timestamp: 0,
        }
    }

    fn labels() -> Vec<String> {
        ["cabinet", "handle", "toy"].map(String::from).to_vec()
    }

    #[test]
    fn zero_noise_is_exact() {
        let obs = synthetic(&[(0, 50), (1, 8), (2, 4)]);
        let d = detect(&obs, &labels(), &labels(), &FaultProfile::zero(), &mut DetectorRng::new(1));
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].label, "cabinet");
        assert_eq!(d[1].label, "handle");
        assert_eq!(d[0].points.len(), 50);
        assert!(d.iter().all(|x| x.confidence == 1.0));
        let truth: Vec<_> = obs.points.iter().filter(|p| p.object == 0).map(|p| p.position).collect();
        assert_eq!(d[0].points, truth);
    }

    #[test]
    fn full_dropout_and_full_confusion() {
        let obs = synthetic(&[(0, 50), (2, 20)]);
        let all_drop = FaultProfile {
            detector_dropout_prob: 1.0,
            ..FaultProfile::zero()
        };
        assert!(detect(&obs, &labels(), &labels(), &all_drop, &mut DetectorRng::new(3)).is_empty());
        let all_confused = FaultProfile {
            label_confusion_prob: 1.0,
            ..FaultProfile::zero()
        };
        let d = detect(&obs, &labels(), &labels(), &all_confused, &mut DetectorRng::new(3));
        assert_eq!(d.len(), 2);
        for x in &d {
            assert_ne!(x.label, labels()[x.source]);
            assert!(labels().contains(&x.label));
            assert!(x.confidence > 0.3 && x.confidence <= 0.7);
        }
    }

    #[test]
    fn jitter_matches_chi_distribution_mean() {
        let sigma = 0.01;
        let obs = synthetic(&[(0, 20_000)]);
        let faults = FaultProfile {
            point_jitter_sigma: sigma,
            ..FaultProfile::zero()
        };
        let d = detect(&obs, &labels(), &labels(), &faults, &mut DetectorRng::new(11));
        let mean = d[0]
            .points
            .iter()
            .zip(&obs.points)
            .map(|(a, b)| (a - b.position).norm())
            .sum::<f64>()
            / 20_000.0;
        // Mean norm of an isotropic 3-D Gaussian: sigma * 2 * sqrt(2 / pi).
        let expected = sigma * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - expected).abs() < 3e-4, "{mean} vs {expected}");
        assert!((0.008..=0.016).contains(&mean), "{mean}");
    }

    #[test]
    fn channels_are_independent() {
        let obs = synthetic(&[(0, 30), (1, 30), (2, 30)]);
        let base = FaultProfile {
            point_jitter_sigma: 0.01,
            ..FaultProfile::zero()
        };
        let with_dropout = FaultProfile {
            detector_dropout_prob: 0.5,
            ..base.clone()
        };
        let a = detect(&obs, &labels(), &labels(), &base, &mut DetectorRng::new(5));
        let b = detect(&obs, &labels(), &labels(), &with_dropout, &mut DetectorRng::new(5));
        for x in &b {
            let y = a.iter().find(|y| y.source == x.source).unwrap();
            assert_eq!(x.points, y.points);
        }
    }
}
