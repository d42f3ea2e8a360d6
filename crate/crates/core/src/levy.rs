//! Finite-atom (compound Poisson) jump measures.
//!
//! A measure is a list of atoms `(z_j, w_j)` with locations `z_j != 0` and
//! weights `w_j > 0`, together with an envelope function `rho >= 0` that
//! dominates the jump amplitude. Derived quantities used throughout:
//!
//! * total rate `Lambda = sum_j w_j` (the Poisson intensity of the event
//!   stream),
//! * second moment `M = sum_j w_j rho(z_j)^2` (the constant entering every
//!   explicit moment bound),
//! * tail integral `beta(t) = sum_{j : C rho(z_j) >= t} w_j rho(z_j)`, the
//!   nonincreasing step function that drives the boundary-barrier ODE.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

/// Jump-amplitude envelope: a nonnegative function of the mark.
pub type RhoFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One atom of the jump measure: location `z` (nonzero) and weight `w > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub z: Vec<f64>,
    pub w: f64,
}

impl Atom {
    pub fn new(z: Vec<f64>, w: f64) -> Self {
        Self { z, w }
    }
}

/// One sampled jump of the driving Poisson random measure.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpEvent {
    /// Event time, strictly inside the sampled window (t0, t1].
    pub time: f64,
    /// The mark `z_j` of the atom that fired.
    pub mark: Vec<f64>,
}

/// Errors from building a jump measure.
#[derive(Debug, thiserror::Error)]
pub enum LevyError {
    #[error("atom {index} has nonpositive weight {weight}")]
    NonPositiveRate { index: usize, weight: f64 },
    #[error("atom {index} is located at the origin")]
    ZeroAtom { index: usize },
    #[error("envelope rho is nonfinite or negative at atom {index}")]
    UnboundedRho { index: usize },
    #[error("atom {index} has mark dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
}

/// A validated finite-atom jump measure with cached envelope values.
#[derive(Clone)]
pub struct LevyModel {
    jump_dim: usize,
    atoms: Vec<Atom>,
    rho: RhoFn,
    rho_at_atoms: Vec<f64>,
    second_moment: f64,
    total_rate: f64,
}

impl fmt::Debug for LevyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevyModel")
            .field("jump_dim", &self.jump_dim)
            .field("atoms", &self.atoms)
            .field("second_moment", &self.second_moment)
            .field("total_rate", &self.total_rate)
            .finish()
    }
}

/// The default envelope: Euclidean norm of the mark.
pub fn euclidean_rho() -> RhoFn {
    Arc::new(|z: &[f64]| crate::num::norm2(z))
}

impl LevyModel {
    /// Builds a measure from atoms, validating weights, locations, and the
    /// envelope. `rho = None` uses the Euclidean norm. The mark dimension is
    /// inferred from the first atom.
    pub fn build(atoms: Vec<Atom>, rho: Option<RhoFn>) -> Result<Self, LevyError> {
        let jump_dim = atoms.first().map(|a| a.z.len()).unwrap_or(0);
        Self::build_with_dim(jump_dim, atoms, rho)
    }

    /// As [`LevyModel::build`], with an explicit mark dimension (needed to
    /// give the empty measure a definite dimension).
    pub fn build_with_dim(
        jump_dim: usize,
        atoms: Vec<Atom>,
        rho: Option<RhoFn>,
    ) -> Result<Self, LevyError> {
        let rho = rho.unwrap_or_else(euclidean_rho);
        let mut rho_at_atoms = Vec::with_capacity(atoms.len());
        let mut second_moment = 0.0;
        let mut total_rate = 0.0;
        for (index, atom) in atoms.iter().enumerate() {
            if atom.z.len() != jump_dim {
                return Err(LevyError::DimensionMismatch {
                    index,
                    got: atom.z.len(),
                    expected: jump_dim,
                });
            }
            if !(atom.w > 0.0) || !atom.w.is_finite() {
                return Err(LevyError::NonPositiveRate {
                    index,
                    weight: atom.w,
                });
            }
            if atom.z.iter().all(|&c| c == 0.0) {
                return Err(LevyError::ZeroAtom { index });
            }
            let r = rho(&atom.z);
            if !r.is_finite() || r < 0.0 {
                return Err(LevyError::UnboundedRho { index });
            }
            rho_at_atoms.push(r);
            second_moment += atom.w * r * r;
            total_rate += atom.w;
        }
        Ok(Self {
            jump_dim,
            atoms,
            rho,
            rho_at_atoms,
            second_moment,
            total_rate,
        })
    }

    /// The measure with no atoms (pure-diffusion dynamics) in the given mark
    /// dimension.
    pub fn empty(jump_dim: usize) -> Self {
        Self::build_with_dim(jump_dim, Vec::new(), None).expect("empty measure is always valid")
    }

    pub fn jump_dim(&self) -> usize {
        self.jump_dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Total mass `Lambda = sum_j w_j`.
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// Second envelope moment `M = sum_j w_j rho(z_j)^2`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// Envelope value at an arbitrary mark.
    pub fn rho(&self, z: &[f64]) -> f64 {
        (self.rho)(z)
    }

    /// Cached envelope value at atom `j`.
    pub fn rho_at_atom(&self, j: usize) -> f64 {
        self.rho_at_atoms[j]
    }

    /// Samples the jumps of one path in the window `(t0, t1]`: the event
    /// count is Poisson with mean `Lambda * (t1 - t0)`, each event gets an
    /// independent uniform time in the window and an atom drawn with
    /// probability `w_j / Lambda`, and events are returned sorted by time.
    /// A fixed stream state yields a fixed event list.
    pub fn sample_jumps<R: Rng>(&self, t0: f64, t1: f64, rng: &mut R) -> Vec<JumpEvent> {
        assert!(t1 >= t0, "sample window must have t1 >= t0");
        let mean = self.total_rate * (t1 - t0);
        if mean <= 0.0 {
            return Vec::new();
        }
        let count = Poisson::new(mean)
            .expect("mean > 0 checked above")
            .sample(rng) as usize;
        let mut events = Vec::with_capacity(count);
        for _ in 0..count {
            // Draw order (time, then atom) is part of the stream contract.
            let u_time: f64 = rng.gen();
            let time = t1 - u_time * (t1 - t0); // in (t0, t1]
            let u_atom: f64 = rng.gen();
            let mut target = u_atom * self.total_rate;
            let mut chosen = self.atoms.len() - 1;
            for (j, atom) in self.atoms.iter().enumerate() {
                if target < atom.w {
                    chosen = j;
                    break;
                }
                target -= atom.w;
            }
            events.push(JumpEvent {
                time,
                mark: self.atoms[chosen].z.clone(),
            });
        }
        events.sort_by(|a, b| a.time.partial_cmp(&b.time).expect("finite times"));
        events
    }

    /// The compensator drift `sum_j w_j gamma(z_j)` for a state-dependent
    /// jump map evaluated at a fixed `(t, x, u)`; `d` is the state dimension.
    /// Subtracting this from the drift centers the jump term.
    pub fn compensator_drift(&self, d: usize, gamma_at: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut drift = vec![0.0; d];
        for atom in &self.atoms {
            let g = gamma_at(&atom.z);
            debug_assert_eq!(g.len(), d);
            for k in 0..d {
                drift[k] += atom.w * g[k];
            }
        }
        drift
    }

    /// Tail integral `beta(t) = sum_{j : c * rho(z_j) >= t} w_j rho(z_j)`:
    /// nonincreasing step function of `t >= 0`, with `beta(0)` the full
    /// envelope mass and steps only at the values `c * rho(z_j)`.
    pub fn beta_tail(&self, t: f64, c: f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.rho_at_atoms)
            .filter(|(_, &r)| c * r >= t)
            .map(|(a, &r)| a.w * r)
            .sum()
    }

    /// The distinct positive thresholds `c * rho(z_j)`, sorted ascending:
    /// the only points where [`LevyModel::beta_tail`] can step.
    pub fn beta_thresholds(&self, c: f64) -> Vec<f64> {
        let mut ts: Vec<f64> = self.rho_at_atoms.iter().map(|&r| c * r).collect();
        ts.retain(|&t| t > 0.0);
        ts.sort_by(|a, b| a.partial_cmp(b).expect("finite thresholds"));
        ts.dedup();
        ts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::mean_and_std_error;
    use crate::rng::{stream_rng, NoiseChannel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn atom1(z: f64, w: f64) -> Atom {
        Atom::new(vec![z], w)
    }

    #[test]
    fn empty_measure_has_zero_mass_and_moment() {
        let m = LevyModel::empty(1);
        assert_eq!(m.total_rate(), 0.0);
        assert_eq!(m.second_moment(), 0.0);
        assert_eq!(m.beta_tail(0.0, 1.0), 0.0);
        let drift = m.compensator_drift(2, |z| vec![z[0], -z[0]]);
        assert_eq!(drift, vec![0.0, 0.0]);
    }

    #[test]
    fn single_atom_moments() {
        // Atom z=1 with w=2 under rho=|z|: Lambda = 2, M = 2 * 1^2 = 2.
        let m = LevyModel::build(vec![atom1(1.0, 2.0)], None).unwrap();
        assert_eq!(m.total_rate(), 2.0);
        assert_eq!(m.second_moment(), 2.0);
        assert_eq!(m.rho_at_atom(0), 1.0);
    }

    #[test]
    fn two_atom_moments() {
        // Atoms (z=1, w=1), (z=-0.5, w=4): Lambda = 5, M = 1*1 + 4*0.25 = 2.
        let m = LevyModel::build(vec![atom1(1.0, 1.0), atom1(-0.5, 4.0)], None).unwrap();
        assert_eq!(m.total_rate(), 5.0);
        assert_relative_eq!(m.second_moment(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn build_rejects_bad_atoms() {
        assert!(matches!(
            LevyModel::build(vec![atom1(1.0, 0.0)], None),
            Err(LevyError::NonPositiveRate { index: 0, .. })
        ));
        assert!(matches!(
            LevyModel::build(vec![atom1(1.0, -2.0)], None),
            Err(LevyError::NonPositiveRate { index: 0, .. })
        ));
        assert!(matches!(
            LevyModel::build(vec![atom1(1.0, 1.0), Atom::new(vec![0.0], 1.0)], None),
            Err(LevyError::ZeroAtom { index: 1 })
        ));
        let bad_rho: RhoFn = Arc::new(|_z: &[f64]| f64::INFINITY);
        assert!(matches!(
            LevyModel::build(vec![atom1(1.0, 1.0)], Some(bad_rho)),
            Err(LevyError::UnboundedRho { index: 0 })
        ));
        assert!(matches!(
            LevyModel::build(vec![atom1(1.0, 1.0), Atom::new(vec![1.0, 2.0], 1.0)], None),
            Err(LevyError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn beta_tail_step_values() {
        // Single atom z=1, w=2, c=1: thresholds only at t=1;
        // beta(t) = 2 for t <= 1 (inclusive), 0 beyond.
        let m = LevyModel::build(vec![atom1(1.0, 2.0)], None).unwrap();
        assert_eq!(m.beta_tail(0.0, 1.0), 2.0);
        assert_eq!(m.beta_tail(0.5, 1.0), 2.0);
        assert_eq!(m.beta_tail(1.0, 1.0), 2.0);
        assert_eq!(m.beta_tail(1.0 + 1e-12, 1.0), 0.0);

        // Two atoms z in {1, 2}, w=1 each, c=1: beta(1.5) keeps only z=2.
        let m2 = LevyModel::build(vec![atom1(1.0, 1.0), atom1(2.0, 1.0)], None).unwrap();
        assert_eq!(m2.beta_tail(1.5, 1.0), 2.0);
        assert_eq!(m2.beta_tail(0.0, 1.0), 3.0);
        assert_eq!(m2.beta_thresholds(1.0), vec![1.0, 2.0]);
        // Scaling c scales the thresholds.
        assert_eq!(m2.beta_thresholds(3.0), vec![3.0, 6.0]);
        assert_eq!(m2.beta_tail(4.0, 3.0), 2.0);
    }

    #[test]
    fn beta_tail_is_nonincreasing() {
        let m = LevyModel::build(
            vec![atom1(0.3, 1.5), atom1(-1.1, 0.7), atom1(2.0, 0.2)],
            None,
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=400 {
            let t = 3.0 * k as f64 / 400.0;
            let b = m.beta_tail(t, 1.0);
            assert!(b <= prev + 1e-15);
            prev = b;
        }
    }

    #[test]
    fn compensator_drift_vanishes_for_symmetric_atoms() {
        // Mirror atoms with equal weights and gamma(z) = z compensate exactly.
        let m = LevyModel::build(vec![atom1(1.0, 1.0), atom1(-1.0, 1.0)], None).unwrap();
        let drift = m.compensator_drift(1, |z| z.to_vec());
        assert_eq!(drift, vec![0.0]);
    }

    #[test]
    fn compensator_drift_weighted_sum() {
        // Atoms (1, w=2), (-0.5, w=4), gamma(z) = 2z: 2*2*1 + 4*2*(-0.5) = 0.
        // And gamma(z) = z^2: 2*1 + 4*0.25 = 3.
        let m = LevyModel::build(vec![atom1(1.0, 2.0), atom1(-0.5, 4.0)], None).unwrap();
        assert_eq!(m.compensator_drift(1, |z| vec![2.0 * z[0]]), vec![0.0]);
        assert_eq!(m.compensator_drift(1, |z| vec![z[0] * z[0]]), vec![3.0]);
    }

    #[test]
    fn sampling_is_reproducible_and_sorted() {
        let m = LevyModel::build(vec![atom1(1.0, 3.0), atom1(-2.0, 1.0)], None).unwrap();
        let mut r1 = stream_rng(11, 5, NoiseChannel::Jumps);
        let mut r2 = stream_rng(11, 5, NoiseChannel::Jumps);
        let e1 = m.sample_jumps(0.25, 1.75, &mut r1);
        let e2 = m.sample_jumps(0.25, 1.75, &mut r2);
        assert_eq!(e1, e2);
        for w in e1.windows(2) {
            assert!(w[0].time <= w[1].time);
        }
        for e in &e1 {
            assert!(e.time > 0.25 && e.time <= 1.75);
        }
        let mut r3 = stream_rng(11, 6, NoiseChannel::Jumps);
        let e3 = m.sample_jumps(0.25, 1.75, &mut r3);
        assert_ne!(e1, e3, "different path index must give different events");
    }

    #[test]
    fn sampled_count_and_mark_frequencies_match_the_measure() {
        // Lambda = 4 over a window of length 0.5: mean count 2. Atom weights
        // 3:1 fix the mark frequencies. 20k windows pin both to ~1% noise.
        let m = LevyModel::build(vec![atom1(1.0, 3.0), atom1(-2.0, 1.0)], None).unwrap();
        let n = 20_000;
        let mut counts = Vec::with_capacity(n);
        let mut first_atom = 0usize;
        let mut total = 0usize;
        for i in 0..n {
            let mut rng = stream_rng(2024, i as u64, NoiseChannel::Jumps);
            let events = m.sample_jumps(0.0, 0.5, &mut rng);
            counts.push(events.len() as f64);
            total += events.len();
            first_atom += events.iter().filter(|e| e.mark == vec![1.0]).count();
        }
        let (mean, se) = mean_and_std_error(&counts);
        assert!(
            (mean - 2.0).abs() < 4.0 * se + 1e-9,
            "Poisson mean {mean} should be near 2.0 (se {se})"
        );
        let frac = first_atom as f64 / total as f64;
        assert!(
            (frac - 0.75).abs() < 0.01,
            "atom frequency {frac} should be near 0.75"
        );
    }

    #[test]
    fn compensated_increment_has_zero_mean() {
        // For gamma(z) = z, the compensated sum over a window,
        // sum_of_marks - dt * compensator, must average to zero.
        let m = LevyModel::build(vec![atom1(1.0, 2.0), atom1(-0.5, 4.0)], None).unwrap();
        let comp = m.compensator_drift(1, |z| z.to_vec())[0];
        let dt = 0.7;
        let n = 40_000;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = stream_rng(99, i as u64, NoiseChannel::Jumps);
                let s: f64 = m.sample_jumps(0.0, dt, &mut rng).iter().map(|e| e.mark[0]).sum();
                s - dt * comp
            })
            .collect();
        let (mean, se) = mean_and_std_error(&samples);
        assert!(
            mean.abs() < 4.0 * se,
            "compensated mean {mean} exceeds 4 se {se}"
        );
    }

    proptest! {
        #[test]
        fn second_moment_matches_direct_sum(
            zs in proptest::collection::vec(-3.0f64..3.0, 1..6),
            ws in proptest::collection::vec(0.01f64..5.0, 6),
        ) {
            let atoms: Vec<Atom> = zs
                .iter()
                .enumerate()
                .filter(|(_, z)| **z != 0.0)
                .map(|(i, &z)| atom1(z, ws[i]))
                .collect();
            prop_assume!(!atoms.is_empty());
            let m = LevyModel::build(atoms.clone(), None).unwrap();
            let direct: f64 = atoms.iter().map(|a| a.w * a.z[0] * a.z[0]).sum();
            prop_assert!((m.second_moment() - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
            let rate: f64 = atoms.iter().map(|a| a.w).sum();
            prop_assert!((m.total_rate() - rate).abs() <= 1e-12 * (1.0 + rate.abs()));
        }

        #[test]
        fn beta_at_zero_equals_envelope_mass(
            zs in proptest::collection::vec(0.05f64..3.0, 1..6),
            ws in proptest::collection::vec(0.01f64..5.0, 6),
        ) {
            let atoms: Vec<Atom> = zs.iter().enumerate().map(|(i, &z)| atom1(z, ws[i])).collect();
            let m = LevyModel::build(atoms.clone(), None).unwrap();
            let mass: f64 = atoms.iter().map(|a| a.w * a.z[0].abs()).sum();
            prop_assert!((m.beta_tail(0.0, 1.0) - mass).abs() <= 1e-12 * (1.0 + mass));
        }
    }
}
