//! The sliding-window energy `E_reg + E_kine + E_marg` over the control poses.

use nalgebra::{DVector, SMatrix, SVector};

use super::normal::{LeastSquares, NormalEquations};
use super::SolverError;
use crate::factors::{huber, kinematic_eval, prior_eval, Anchor, GeometricFactor, KinematicFactor, MarginalizationPrior, PreviousTwist, SegmentLinearization, SensorRig};
use crate::liegroup::{Pose, Twist};

/// Energy split into its three terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyTerms {
    pub reg: f64,
    pub kine: f64,
    pub marg: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.reg + self.kine + self.marg
    }
}

/// Fixed correspondences, smoothness terms and prior for one inner loop.
///
/// Geometric factors must be grouped by anchor for the per-segment
/// accumulation to be efficient; [`super::associate`] sorts them.
pub struct WindowProblem<'a> {
    pub geometric: &'a [GeometricFactor],
    pub kinematic: &'a [KinematicFactor],
    pub prior: Option<&'a MarginalizationPrior>,
    pub rig: &'a SensorRig,
    pub huber: Option<f64>,
}

type M12 = SMatrix<f64, 12, 12>;
type V12 = SVector<f64, 12>;
type M18 = SMatrix<f64, 18, 18>;
type V18 = SVector<f64, 18>;
type M6 = SMatrix<f64, 6, 6>;

impl WindowProblem<'_> {
    pub fn energy_terms(&self, poses: &[Pose]) -> Result<EnergyTerms, SolverError> {
        let mut terms = EnergyTerms::default();
        let mut current: Option<(usize, Twist)> = None;
        for f in self.geometric {
            let e = match f.anchor {
                Anchor::Segment { k, .. } => {
                    let k = k.get();
                    let tau = match current {
                        Some((ck, tau)) if ck == k => tau,
                        _ => {
                            let tau = poses[k].ominus(&poses[k - 1])?;
                            current = Some((k, tau));
                            tau
                        }
                    };
                    f.residual_in_segment(&poses[k - 1], &tau, self.rig)
                }
                Anchor::Knot(i) => f.residual_at(&poses[i], self.rig),
            };
            terms.reg += 0.5 * f.weight * huber(e, self.huber).0;
        }
        for kf in self.kinematic {
            let k = kf.segment.get();
            let before = (k >= 2).then(|| &poses[k - 2]);
            let ev = kinematic_eval(&kf.previous, before, &poses[k - 1], &poses[k])?;
            terms.kine += 0.5 * kf.weight * ev.residual.norm_squared();
        }
        if let Some(prior) = self.prior {
            terms.marg = prior.energy(&poses[..prior.poses()])?;
        }
        Ok(terms)
    }

    fn add_geometric(&self, poses: &[Pose], eqs: &mut NormalEquations) -> Result<f64, SolverError> {
        let mut energy = 0.0;
        let mut current: Option<(usize, SegmentLinearization)> = None;
        let mut h = M12::zeros();
        let mut b = V12::zeros();
        for f in self.geometric {
            match f.anchor {
                Anchor::Segment { k, .. } => {
                    let k = k.get();
                    if current.as_ref().map(|c| c.0) != Some(k) {
                        if let Some((prev, _)) = current {
                            eqs.add_block(prev - 1, &h, &b);
                            h.fill(0.0);
                            b.fill(0.0);
                        }
                        current = Some((k, SegmentLinearization::new(&poses[k - 1], &poses[k])?));
                    }
                    let seg = &current.as_ref().expect("set above").1;
                    let ev = f.eval_segment(&poses[k - 1], seg, self.rig);
                    let (rho, irls) = huber(ev.residual, self.huber);
                    energy += 0.5 * f.weight * rho;
                    let w = f.weight * irls;
                    let j = V12::from_iterator(ev.j_prev.iter().chain(ev.j_next.iter()).copied());
                    // Scaling by sqrt(w) keeps the outer product exactly symmetric.
                    let s = j * w.sqrt();
                    h.ger(1.0, &s, &s, 1.0);
                    b.axpy(w * ev.residual, &j, 1.0);
                }
                Anchor::Knot(i) => {
                    let ev = f.eval_knot(&poses[i], self.rig);
                    let (rho, irls) = huber(ev.residual, self.huber);
                    energy += 0.5 * f.weight * rho;
                    let w = f.weight * irls;
                    let j = ev.j_prev.transpose();
                    let s = j * w.sqrt();
                    let mut hk = M6::zeros();
                    hk.ger(1.0, &s, &s, 1.0);
                    eqs.add_block(i, &hk, &(j * (w * ev.residual)));
                }
            }
        }
        if let Some((k, _)) = current {
            eqs.add_block(k - 1, &h, &b);
        }
        Ok(energy)
    }

    fn add_kinematic(&self, poses: &[Pose], eqs: &mut NormalEquations) -> Result<f64, SolverError> {
        let mut energy = 0.0;
        for kf in self.kinematic {
            let k = kf.segment.get();
            let w = kf.weight;
            match kf.previous {
                PreviousTwist::Frozen(_) => {
                    let ev = kinematic_eval(&kf.previous, None, &poses[k - 1], &poses[k])?;
                    let mut j = SMatrix::<f64, 6, 12>::zeros();
                    j.fixed_columns_mut::<6>(0).copy_from(&ev.d_prev);
                    j.fixed_columns_mut::<6>(6).copy_from(&ev.d_next);
                    let h: M12 = j.tr_mul(&j) * w;
                    let b: V12 = j.tr_mul(&ev.residual) * w;
                    eqs.add_block(k - 1, &h, &b);
                    energy += 0.5 * w * ev.residual.norm_squared();
                }
                PreviousTwist::Live => {
                    let ev = kinematic_eval(&kf.previous, Some(&poses[k - 2]), &poses[k - 1], &poses[k])?;
                    let mut j = SMatrix::<f64, 6, 18>::zeros();
                    j.fixed_columns_mut::<6>(0).copy_from(&ev.d_before.expect("live term"));
                    j.fixed_columns_mut::<6>(6).copy_from(&ev.d_prev);
                    j.fixed_columns_mut::<6>(12).copy_from(&ev.d_next);
                    let h: M18 = j.tr_mul(&j) * w;
                    let b: V18 = j.tr_mul(&ev.residual) * w;
                    eqs.add_block(k - 2, &h, &b);
                    energy += 0.5 * w * ev.residual.norm_squared();
                }
            }
        }
        Ok(energy)
    }

    fn add_prior(&self, poses: &[Pose], eqs: &mut NormalEquations) -> Result<f64, SolverError> {
        let Some(prior) = self.prior else { return Ok(0.0) };
        let ev = prior_eval(prior, &poses[..prior.poses()])?;
        let n = ev.gradient.len();
        let mut hv = eqs.h.view_mut((0, 0), (n, n));
        hv += &ev.hessian;
        let mut bv = eqs.b.rows_mut(0, n);
        bv += &ev.gradient;
        Ok(ev.energy)
    }

    /// Normal equations plus the per-term energy.
    pub fn evaluate(&self, poses: &[Pose]) -> Result<(NormalEquations, EnergyTerms), SolverError> {
        let mut eqs = NormalEquations::zeros(6 * poses.len());
        let terms = EnergyTerms { reg: self.add_geometric(poses, &mut eqs)?, kine: self.add_kinematic(poses, &mut eqs)?, marg: self.add_prior(poses, &mut eqs)? };
        eqs.energy = terms.total();
        Ok((eqs, terms))
    }
}

impl LeastSquares for WindowProblem<'_> {
    type State = Vec<Pose>;

    fn energy(&self, poses: &Vec<Pose>) -> Result<f64, SolverError> {
        Ok(self.energy_terms(poses)?.total())
    }

    fn linearize(&self, poses: &Vec<Pose>) -> Result<NormalEquations, SolverError> {
        Ok(self.evaluate(poses)?.0)
    }

    fn retract(&self, poses: &Vec<Pose>, xi: &DVector<f64>) -> Vec<Pose> {
        poses
            .iter()
            .enumerate()
            .map(|(i, p)| p.oplus(&Twist::from_slice(xi.fixed_rows::<6>(6 * i).as_slice())).renormalized())
            .collect()
    }
}

/// Oracle: `(J^T W J, J^T W e)` from an explicitly stacked Jacobian.
#[cfg(test)]
pub(crate) fn dense_assembly(problem: &WindowProblem<'_>, poses: &[Pose]) -> Result<NormalEquations, SolverError> {
    use nalgebra::DMatrix;
    let n = 6 * poses.len();
    let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for f in problem.geometric {
        let mut row = vec![0.0; n];
        let (e, jp, jn, first) = match f.anchor {
            Anchor::Segment { k, .. } => {
                let k = k.get();
                let ev = f.eval_segment(&poses[k - 1], &SegmentLinearization::new(&poses[k - 1], &poses[k])?, problem.rig);
                (ev.residual, ev.j_prev, Some(ev.j_next), k - 1)
            }
            Anchor::Knot(i) => {
                let ev = f.eval_knot(&poses[i], problem.rig);
                (ev.residual, ev.j_prev, None, i)
            }
        };
        row[6 * first..6 * first + 6].copy_from_slice(jp.as_slice());
        if let Some(jn) = jn {
            row[6 * first + 6..6 * first + 12].copy_from_slice(jn.as_slice());
        }
        rows.push((row, e, f.weight * huber(e, problem.huber).1));
    }
    for kf in problem.kinematic {
        let k = kf.segment.get();
        let before = (k >= 2 && kf.previous == PreviousTwist::Live).then(|| &poses[k - 2]);
        let ev = kinematic_eval(&kf.previous, before, &poses[k - 1], &poses[k])?;
        for r in 0..6 {
            let mut row = vec![0.0; n];
            for c in 0..6 {
                if let Some(d) = ev.d_before {
                    row[6 * (k - 2) + c] = d[(r, c)];
                }
                row[6 * (k - 1) + c] += ev.d_prev[(r, c)];
                row[6 * k + c] += ev.d_next[(r, c)];
            }
            rows.push((row, ev.residual[r], kf.weight));
        }
    }
    let j = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0[c]);
    let e = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let w = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    let wj = DMatrix::from_fn(rows.len(), n, |r, c| w[r] * j[(r, c)]);
    let mut eqs = NormalEquations { h: j.transpose() * &wj, b: wj.transpose() * e, energy: problem.energy_terms(poses)?.total() };
    if let Some(prior) = problem.prior {
        let ev = prior_eval(prior, &poses[..prior.poses()])?;
        let m = ev.gradient.len();
        let mut hv = eqs.h.view_mut((0, 0), (m, m));
        hv += &ev.hessian;
        let mut bv = eqs.b.rows_mut(0, m);
        bv += &ev.gradient;
    }
    Ok(eqs)
}
