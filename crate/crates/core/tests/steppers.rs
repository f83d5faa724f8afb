mod common;

use common::*;
use pidcp::grid::GridSpec;
use pidcp::model::{ParameterSet, PayoffKind};
use pidcp::problem::Problem;
use pidcp::solvers::PsorSettings;
use pidcp::steppers::{imex_euler_pair, Method, MethodConfig, Stepper, StepperState, TimeGrid};
use rand::{Rng, SeedableRng};

/// Dense copies of every operator of a problem.
struct Dense {
    ad: Mat,
    a1: Mat,
    a2: Mat,
    am: Mat,
    aj: Mat,
    v0: Vec<f64>,
}

impl Dense {
    fn new(p: &Problem) -> Self {
        let n = p.size();
        Dense {
            ad: dense(n, |e| p.ops.apply_ad(e).unwrap()),
            a1: dense(n, |e| p.ops.a1.apply(e)),
            a2: dense(n, |e| p.ops.a2.apply(e)),
            am: dense(n, |e| p.ops.mixed.apply(e)),
            aj: dense(n, |e| p.jump.apply(e).unwrap()),
            v0: p.obstacle.clone(),
        }
    }

    fn project(&self, z: &[f64], lam: &[f64], dt: f64) -> Vec<f64> {
        (0..z.len()).map(|i| (z[i] - dt * lam[i]).max(self.v0[i])).collect()
    }

    fn mult(&self, z: &[f64], lam: &[f64], dt: f64) -> Vec<f64> {
        (0..z.len()).map(|i| (lam[i] + (self.v0[i] - z[i]) / dt).max(0.0)).collect()
    }

    /// `(I - c A) y = rhs + c A v`, i.e. `y = rhs + c A (y - v)`.
    fn correct(&self, a: &Mat, c: f64, rhs: &[f64], v: &[f64]) -> Vec<f64> {
        let av = matvec(a, v);
        solve(shifted(a, c, None), lin(&[(1.0, rhs), (-c, &av)]))
    }

    fn cnfi_it(&self, v: &[f64], lam0: &[f64], dt: f64, kappa: usize) -> (Vec<f64>, Vec<f64>) {
        let (mut zhat, mut lam) = (v.to_vec(), lam0.to_vec());
        for _ in 0..kappa {
            let rhs = lin(&[
                (1.0, v),
                (0.5 * dt, &matvec(&self.ad, v)),
                (0.5 * dt, &matvec(&self.aj, &lin(&[(1.0, &zhat), (1.0, v)]))),
                (dt, &lam),
            ]);
            let z = solve(shifted(&self.ad, 0.5 * dt, None), rhs);
            zhat = self.project(&z, &lam, dt);
            lam = self.mult(&z, &lam, dt);
        }
        (zhat, lam)
    }

    fn befi_it(&self, v: &[f64], lam0: &[f64], dt: f64, kappa: usize) -> (Vec<f64>, Vec<f64>) {
        let (mut zhat, mut lam) = (v.to_vec(), lam0.to_vec());
        for _ in 0..kappa {
            let rhs = lin(&[(1.0, v), (dt, &matvec(&self.aj, &zhat)), (dt, &lam)]);
            let z = solve(shifted(&self.ad, dt, None), rhs);
            zhat = self.project(&z, &lam, dt);
            lam = self.mult(&z, &lam, dt);
        }
        (zhat, lam)
    }

    /// Shared finishing rule of the methods whose iterations only feed
    /// the multiplier back: `body(lam)` returns `Z_k`.
    fn iterate(&self, lam0: &[f64], dt: f64, kappa: usize, body: impl Fn(&[f64]) -> Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let mut lam = lam0.to_vec();
        let mut out = (vec![], vec![]);
        for _ in 0..kappa {
            let z = body(&lam);
            let next = self.mult(&z, &lam, dt);
            out = (self.project(&z, &lam, dt), next.clone());
            lam = next;
        }
        out
    }

    fn ietr_it(&self, v: &[f64], lam0: &[f64], dt: f64, kappa: usize) -> (Vec<f64>, Vec<f64>) {
        self.iterate(lam0, dt, kappa, |lam| {
            let y0 = lin(&[(1.0, v), (dt, &matvec(&self.ad, v)), (dt, &matvec(&self.aj, v)), (dt, lam)]);
            let ybar = lin(&[(1.0, &y0), (0.5 * dt, &matvec(&self.aj, &lin(&[(1.0, &y0), (-1.0, v)])))]);
            self.correct(&self.ad, 0.5 * dt, &ybar, v)
        })
    }

    fn cnab_it(&self, v: &[f64], prev: &[f64], lam0: &[f64], dt: f64, kappa: usize) -> (Vec<f64>, Vec<f64>) {
        self.iterate(lam0, dt, kappa, |lam| {
            let rhs = lin(&[
                (1.0, v),
                (0.5 * dt, &matvec(&self.ad, v)),
                (0.5 * dt, &matvec(&self.aj, &lin(&[(3.0, v), (-1.0, prev)]))),
                (dt, lam),
            ]);
            solve(shifted(&self.ad, 0.5 * dt, None), rhs)
        })
    }

    fn mcs_stages(&self, y0: &[f64], v: &[f64], dt: f64, th: f64, jump: bool) -> (Vec<f64>, Vec<f64>) {
        let y1 = self.correct(&self.a1, th * dt, y0, v);
        let y2 = self.correct(&self.a2, th * dt, &y1, v);
        let d = lin(&[(1.0, &y2), (-1.0, v)]);
        let zero = vec![0.0; v.len()];
        let ajd = if jump { matvec(&self.aj, &d) } else { zero };
        let ybar = lin(&[(1.0, y0), (th * dt, &matvec(&self.am, &d)), (th * dt, &ajd)]);
        let ytil0 = lin(&[(1.0, &ybar), ((0.5 - th) * dt, &matvec(&self.ad, &d)), ((0.5 - th) * dt, &ajd)]);
        let ytil1 = self.correct(&self.a1, th * dt, &ytil0, v);
        let ytil2 = self.correct(&self.a2, th * dt, &ytil1, v);
        (ytil1, ytil2)
    }

    fn mcs_it(&self, v: &[f64], lam0: &[f64], dt: f64, kappa: usize, th: f64) -> (Vec<f64>, Vec<f64>) {
        self.iterate(lam0, dt, kappa, |lam| {
            let y0 = lin(&[(1.0, v), (dt, &matvec(&self.ad, v)), (dt, &matvec(&self.aj, v)), (dt, lam)]);
            self.mcs_stages(&y0, v, dt, th, true).1
        })
    }

    fn mcs2_it(&self, v: &[f64], prev: &[f64], lam0: &[f64], dt: f64, kappa: usize, th: f64) -> (Vec<f64>, Vec<f64>) {
        self.iterate(lam0, dt, kappa, |lam| {
            let x0 = lin(&[(1.0, v), (dt, &matvec(&self.ad, v)), (dt, lam)]);
            let y0 = lin(&[(1.0, &x0), (0.5 * dt, &matvec(&self.aj, &lin(&[(3.0, v), (-1.0, prev)])))]);
            self.mcs_stages(&y0, v, dt, th, false).1
        })
    }

    fn sc2a_it(&self, v: &[f64], prev: &[f64], lam0: &[f64], dt: f64, kappa: usize, th: f64) -> (Vec<f64>, Vec<f64>) {
        let (b0, b1) = ([1.5 - th, -0.5 + th], [1.5, -0.5]);
        self.iterate(lam0, dt, kappa, |lam| {
            let w0 = lin(&[(b0[0], v), (b0[1], prev)]);
            let w1 = lin(&[(b1[0], v), (b1[1], prev)]);
            let x0 = lin(&[
                (1.0, v),
                (dt, &matvec(&self.a1, &w0)),
                (dt, &matvec(&self.a2, &w0)),
                (dt, lam),
            ]);
            let y0 = lin(&[(1.0, &x0), (dt, &matvec(&self.am, &w1)), (dt, &matvec(&self.aj, &w1))]);
            let y1 = self.correct(&self.a1, th * dt, &y0, v);
            self.correct(&self.a2, th * dt, &y1, v)
        })
    }

    fn penalty(&self, z: &[f64]) -> Vec<f64> {
        (0..z.len()).map(|i| if z[i] < self.v0[i] { 1e7 } else { 0.0 }).collect()
    }

    fn penalty_loop(&self, v: &[f64], next: impl Fn(&[f64], &[f64]) -> Vec<f64>) -> (Vec<f64>, usize) {
        let mut z = v.to_vec();
        for k in 1..=100 {
            let p = self.penalty(&z);
            let zn = next(&z, &p);
            let conv = (0..z.len()).all(|i| (zn[i] - z[i]).abs() / zn[i].abs().max(1.0) < 1e-7);
            z = zn;
            if conv {
                return (z, k);
            }
        }
        panic!("penalty iteration did not converge");
    }

    fn pv0(&self, p: &[f64]) -> Vec<f64> {
        (0..p.len()).map(|i| if p[i] > 0.0 { p[i] * self.v0[i] } else { 0.0 }).collect()
    }

    fn cnfi_p(&self, v: &[f64], dt: f64) -> (Vec<f64>, usize) {
        self.penalty_loop(v, |z, p| {
            let rhs = lin(&[
                (1.0, v),
                (0.5 * dt, &matvec(&self.ad, v)),
                (0.5 * dt, &matvec(&self.aj, &lin(&[(1.0, z), (1.0, v)]))),
                (1.0, &self.pv0(p)),
            ]);
            solve(shifted(&self.ad, 0.5 * dt, Some(p)), rhs)
        })
    }

    fn befi_p(&self, v: &[f64], dt: f64) -> (Vec<f64>, usize) {
        self.penalty_loop(v, |z, p| {
            let rhs = lin(&[(1.0, v), (dt, &matvec(&self.aj, z)), (1.0, &self.pv0(p))]);
            solve(shifted(&self.ad, dt, Some(p)), rhs)
        })
    }

    fn mcs_p(&self, v: &[f64], dt: f64, th: f64) -> (Vec<f64>, usize) {
        let y0 = lin(&[(1.0, v), (dt, &matvec(&self.ad, v)), (dt, &matvec(&self.aj, v))]);
        let ytil1 = self.mcs_stages(&y0, v, dt, th, true).0;
        let a2v = matvec(&self.a2, v);
        self.penalty_loop(v, |_, p| {
            let rhs = lin(&[(1.0, &ytil1), (-th * dt, &a2v), (1.0, &self.pv0(p))]);
            solve(shifted(&self.a2, th * dt, Some(p)), rhs)
        })
    }
}

fn problem(set: ParameterSet, payoff: PayoffKind, nu: usize) -> Problem {
    let opt = set.option(payoff);
    Problem::build(&set.params(), &opt, &GridSpec::for_strike(opt.strike, nu)).unwrap()
}

/// Admissible random state: values above the payoff, nonnegative multiplier.
fn random_state(p: &Problem, seed: u64) -> StepperState {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = p.size();
    let bump: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
    let v: Vec<f64> = p.initial.iter().zip(&bump).map(|(a, b)| a + b * (rng.gen::<f64>() < 0.6) as u8 as f64).collect();
    let prev: Vec<f64> = p.initial.iter().map(|a| a + rng.gen_range(0.0..1.0)).collect();
    let lambda: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0) * (rng.gen::<f64>() < 0.3) as u8 as f64).collect();
    StepperState { v, lambda, prev, n: 0, t: 0.0 }
}

fn assert_close(got: &[f64], want: &[f64], rel: f64, what: &str) {
    let scale = max_abs(want).max(1.0);
    let d = max_diff(got, want);
    assert!(d <= rel * scale, "{what}: max diff {d:e}");
}

#[test]
fn one_step_matches_dense_transcription() {
    let p = problem(ParameterSet::Set1, PayoffKind::PutOnMin, 5);
    let d = Dense::new(&p);
    let dt = 0.05;
    let st = random_state(&p, 1);
    for kappa in [1, 2, 3] {
        let cfg = |m: Method| MethodConfig::new(m, kappa, 10);
        let mut s = Stepper::new(&p, cfg(Method::CnfiIt)).unwrap();
        let (v, l) = s.cnfi_it(&st.v, &st.lambda, dt, kappa).unwrap();
        let (ov, ol) = d.cnfi_it(&st.v, &st.lambda, dt, kappa);
        assert_close(&v, &ov, 1e-12, "CNFI-IT");
        assert_close(&l, &ol, 1e-10, "CNFI-IT multiplier");

        let (v, l) = s.befi_it_step(&st.v, &st.lambda, dt, kappa).unwrap();
        let (ov, ol) = d.befi_it(&st.v, &st.lambda, dt, kappa);
        assert_close(&v, &ov, 1e-12, "BEFI-IT");
        assert_close(&l, &ol, 1e-10, "BEFI-IT multiplier");

        let (v, l) = s.ietr_it(&st.v, &st.lambda, dt, kappa).unwrap();
        let (ov, ol) = d.ietr_it(&st.v, &st.lambda, dt, kappa);
        assert_close(&v, &ov, 1e-12, "IETR-IT");
        assert_close(&l, &ol, 1e-10, "IETR-IT multiplier");

        let (v, l) = s.cnab_it(&st.v, &st.prev, &st.lambda, dt, kappa).unwrap();
        let (ov, ol) = d.cnab_it(&st.v, &st.prev, &st.lambda, dt, kappa);
        assert_close(&v, &ov, 1e-12, "CNAB-IT");
        assert_close(&l, &ol, 1e-10, "CNAB-IT multiplier");

        let th = 1.0 / 3.0;
        let (v, l) = s.mcs_it(&st.v, &st.lambda, dt, kappa, th).unwrap();
        let (ov, ol) = d.mcs_it(&st.v, &st.lambda, dt, kappa, th);
        assert_close(&v, &ov, 1e-12, "MCS-IT");
        assert_close(&l, &ol, 1e-10, "MCS-IT multiplier");

        let (v, l) = s.mcs2_it(&st.v, &st.prev, &st.lambda, dt, kappa, th).unwrap();
        let (ov, ol) = d.mcs2_it(&st.v, &st.prev, &st.lambda, dt, kappa, th);
        assert_close(&v, &ov, 1e-12, "MCS2-IT");
        assert_close(&l, &ol, 1e-10, "MCS2-IT multiplier");

        let (v, l) = s.sc2a_it(&st.v, &st.prev, &st.lambda, dt, kappa, 0.75).unwrap();
        let (ov, ol) = d.sc2a_it(&st.v, &st.prev, &st.lambda, dt, kappa, 0.75);
        assert_close(&v, &ov, 1e-12, "SC2A-IT");
        assert_close(&l, &ol, 1e-10, "SC2A-IT multiplier");
    }
}

#[test]
fn penalty_steps_match_dense_transcription() {
    let p = problem(ParameterSet::Set1, PayoffKind::PutOnMin, 5);
    let d = Dense::new(&p);
    let st = random_state(&p, 2);
    let mut s = Stepper::new(&p, MethodConfig::new(Method::CnfiP, 1, 10)).unwrap();
    for dt in [0.01, 0.1] {
        let (v, k) = s.cnfi_p(&st.v, dt).unwrap();
        let (ov, ok) = d.cnfi_p(&st.v, dt);
        assert_eq!(k, ok);
        assert_close(&v, &ov, 1e-9, "CNFI-P");

        let (v, k) = s.befi_p_step(&st.v, dt).unwrap();
        let (ov, ok) = d.befi_p(&st.v, dt);
        assert_eq!(k, ok);
        assert_close(&v, &ov, 1e-9, "BEFI-P");

        let (v, k) = s.mcs_p(&st.v, dt, 1.0 / 3.0).unwrap();
        let (ov, ok) = d.mcs_p(&st.v, dt, 1.0 / 3.0);
        assert_eq!(k, ok);
        assert_close(&v, &ov, 1e-9, "MCS-P");
    }
}

#[test]
fn inactive_constraint_reduces_to_plain_scheme() {
    let p = problem(ParameterSet::Set2, PayoffKind::PutOnAverage, 5).without_constraint();
    let d = Dense::new(&p);
    let st = random_state(&p, 3);
    let zero = vec![0.0; p.size()];
    let dt = 0.02;
    let mut s = Stepper::new(&p, MethodConfig::new(Method::Mcs2It, 2, 10)).unwrap();
    // plain schemes: the multiplier stays zero and drops out
    let steps: Vec<(&str, Vec<f64>, Vec<f64>, Vec<f64>)> = vec![
        {
            let (v, l) = s.ietr_it(&st.v, &zero, dt, 2).unwrap();
            ("IETR", v, l, d.ietr_it(&st.v, &zero, dt, 1).0)
        },
        {
            let (v, l) = s.cnab_it(&st.v, &st.prev, &zero, dt, 2).unwrap();
            ("CNAB", v, l, d.cnab_it(&st.v, &st.prev, &zero, dt, 1).0)
        },
        {
            let (v, l) = s.mcs_it(&st.v, &zero, dt, 2, 1.0 / 3.0).unwrap();
            ("MCS", v, l, d.mcs_it(&st.v, &zero, dt, 1, 1.0 / 3.0).0)
        },
        {
            let (v, l) = s.mcs2_it(&st.v, &st.prev, &zero, dt, 2, 1.0 / 3.0).unwrap();
            ("MCS2", v, l, d.mcs2_it(&st.v, &st.prev, &zero, dt, 1, 1.0 / 3.0).0)
        },
        {
            let (v, l) = s.sc2a_it(&st.v, &st.prev, &zero, dt, 2, 0.75).unwrap();
            ("SC2A", v, l, d.sc2a_it(&st.v, &st.prev, &zero, dt, 1, 0.75).0)
        },
    ];
    for (name, v, l, plain) in steps {
        assert!(l.iter().all(|&x| x == 0.0), "{name}");
        assert_close(&v, &plain, 1e-12, name);
    }
    // CNFI with the constraint dropped is the fixed-point iteration for CN
    let (v, l) = s.cnfi_it(&st.v, &zero, dt, 2).unwrap();
    assert!(l.iter().all(|&x| x == 0.0));
    let z1 = solve(
        shifted(&d.ad, 0.5 * dt, None),
        lin(&[(1.0, &st.v), (0.5 * dt, &matvec(&d.ad, &st.v)), (dt, &matvec(&d.aj, &st.v))]),
    );
    let z2 = solve(
        shifted(&d.ad, 0.5 * dt, None),
        lin(&[
            (1.0, &st.v),
            (0.5 * dt, &matvec(&d.ad, &st.v)),
            (0.5 * dt, &matvec(&d.aj, &lin(&[(1.0, &z1), (1.0, &st.v)]))),
        ]),
    );
    assert_close(&v, &z2, 1e-12, "CNFI");
}

#[test]
fn runs_respect_constraint_and_sign_of_multiplier() {
    for set in ParameterSet::ALL {
        for payoff in PayoffKind::ALL {
            let p = problem(set, payoff, 7);
            let k_strike = p.option.strike;
            for method in Method::ALL {
                let cfg = MethodConfig::new(method, 2, method.matched_steps(2, 10));
                let out = Stepper::new(&p, cfg).unwrap().run().unwrap();
                let slack = if method.is_penalty() { 10.0 * cfg.tol * k_strike } else { 0.0 };
                for (v, v0) in out.values.iter().zip(&p.initial) {
                    assert!(*v >= v0 - slack, "{method} {set} {payoff}: {v} < {v0}");
                }
                assert!(out.lambda.iter().all(|&l| l >= 0.0));
            }
        }
    }
}

#[test]
fn american_dominates_european() {
    let p = problem(ParameterSet::Set1, PayoffKind::PutOnMin, 21);
    let e = problem(ParameterSet::Set1, PayoffKind::PutOnMin, 21).without_constraint();
    for method in [Method::Mcs2It, Method::CnfiIt, Method::CnfiP] {
        let cfg = MethodConfig::new(method, 2, 20);
        let a = Stepper::new(&p, cfg).unwrap().run().unwrap().values;
        let eu = Stepper::new(&e, cfg).unwrap().run().unwrap().values;
        for (x, y) in a.iter().zip(&eu) {
            assert!(*x >= y - 1e-10);
        }
    }
}

#[test]
fn matvec_counts_follow_budget_formulas() {
    let p = problem(ParameterSet::Set2, PayoffKind::PutOnMin, 5);
    for n in [10, 25] {
        for kappa in [1, 2] {
            for method in Method::ALL {
                let steps = method.matched_steps(kappa, n);
                let cfg = MethodConfig::new(method, kappa, steps);
                let mut s = Stepper::new(&p, cfg).unwrap();
                let d = s.run().unwrap().diagnostics;
                assert_eq!(d.matvecs, s.matvecs());
                let damped = steps.min(2);
                let expected = match method.matvecs_per_step(kappa) {
                    Some(per) if !method.is_penalty() => 2 * kappa * damped + per * (steps - damped),
                    Some(per) => d.damping_penalty_iterations.iter().sum::<usize>() + per * (steps - damped),
                    None => d.damping_penalty_iterations.iter().sum::<usize>() + d.penalty_iterations.iter().sum::<usize>(),
                };
                assert_eq!(d.matvecs, expected, "{method} kappa={kappa} N={n}");
                assert_eq!(d.damping_steps, 2 * damped);
            }
        }
    }
}

#[test]
fn penalty_without_jumps_or_constraint_stops_after_two_iterations() {
    let set = ParameterSet::Set1;
    let mut params = set.params();
    params.lambda = 0.0;
    let opt = set.option(PayoffKind::PutOnMin);
    let p = Problem::build(&params, &opt, &GridSpec::for_strike(opt.strike, 5)).unwrap().without_constraint();
    let mut cfg = MethodConfig::new(Method::CnfiP, 1, 8);
    cfg.damping = false;
    let d = Stepper::new(&p, cfg).unwrap().run().unwrap().diagnostics;
    assert!(d.penalty_iterations.iter().all(|&k| k <= 2), "{:?}", d.penalty_iterations);
}

#[test]
fn identical_configs_give_identical_runs() {
    let p = problem(ParameterSet::Set3, PayoffKind::PutOnMin, 5);
    for method in [Method::Sc2aIt, Method::CnfiP] {
        let cfg = MethodConfig::new(method, 2, 12);
        let a = Stepper::new(&p, cfg).unwrap().run().unwrap();
        let b = Stepper::new(&p, cfg).unwrap().run().unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn quadratic_time_points() {
    let cfg = MethodConfig::new(Method::CnfiP, 1, 4);
    assert_eq!(cfg.time_grid, TimeGrid::Quadratic);
    assert_eq!(cfg.time_points(2.0), vec![0.0, 0.125, 0.5, 1.125, 2.0]);
    let u = MethodConfig::new(Method::McsP, 1, 4);
    assert_eq!(u.time_points(2.0), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
}

#[test]
fn imex_pair_gap_vanishes_without_constraint() {
    let p = problem(ParameterSet::Set1, PayoffKind::PutOnMin, 5).without_constraint();
    let g = imex_euler_pair(&p, 10, PsorSettings::default()).unwrap();
    assert!(g.max_gap <= 1e-8, "{}", g.max_gap);
    let q = problem(ParameterSet::Set1, PayoffKind::PutOnMin, 5);
    let g = imex_euler_pair(&q, 10, PsorSettings::default()).unwrap();
    assert!(g.max_gap >= 0.0 && g.max_gap.is_finite());
}
