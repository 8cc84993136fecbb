//! Hover orbit quality and expert behaviour on the default vehicle.

use std::sync::OnceLock;
use std::time::Instant;

use flapwing::datagen::{sample_initial_error, substream};
use flapwing::dynamics::{aero_wrench, Morphology};
use flapwing::evalharness::{closed_loop_series, policy_latency};
use flapwing::expert::{
    find_periodic_orbit, mpc_solve, open_loop_errors, tracking_cost, weighted_error, CostWeights, MpcOptions,
    OrbitOptions, ReferenceOrbit, StateError,
};
use flapwing::imitation::PolicyController;
use flapwing::integrate::{simulate, Record};
use flapwing::policy::{NetArch, NeuralPolicy};
use flapwing::wingkin::{default_reference, ControlSchedule, WingPair};

fn orbit() -> &'static ReferenceOrbit {
    static ORBIT: OnceLock<ReferenceOrbit> = OnceLock::new();
    ORBIT.get_or_init(|| {
        find_periodic_orbit(&Morphology::default(), &WingPair::symmetric(default_reference()), &OrbitOptions::default())
            .expect("orbit search")
    })
}

struct Zero(f64);

impl flapwing::integrate::Controller for Zero {
    fn schedule(&self, _: usize, _: f64, _: &flapwing::dynamics::FreeState) -> flapwing::Result<ControlSchedule> {
        Ok(ControlSchedule::zero(self.0))
    }
}

#[test]
fn orbit_returns_to_its_start() {
    let o = orbit();
    assert!(o.defect <= 1e-4);
    let res = simulate(&o.initial, 0.0, 1, &Zero(o.period()), &o.model, &o.sim_options(Record::PeriodBoundaries));
    assert!(res.error.is_none());
    let end = res.trajectory.states.last().unwrap();
    assert!(weighted_error(end, 0.0, o, &o.w_x).1 <= 1e-4);
    assert_eq!(o.samples.len(), o.steps_per_period + 1);
}

#[test]
fn zero_error_stays_on_the_orbit() {
    let errs = open_loop_errors(orbit(), 5).unwrap();
    assert!(errs.iter().all(|e| *e <= 1e-6), "{errs:?}");
}

#[test]
fn altitude_drift_over_ten_periods() {
    let o = orbit();
    let res = simulate(&o.initial, 0.0, 10, &Zero(o.period()), &o.model, &o.sim_options(Record::PeriodBoundaries));
    assert!(res.error.is_none());
    let z0 = o.initial.g.x.z;
    let span = o.model.morph.span;
    for s in &res.trajectory.states {
        assert!((s.g.x.z - z0).abs() <= 0.01 * span);
    }
}

#[test]
fn mean_lift_balances_weight() {
    let o = orbit();
    let n = o.steps_per_period;
    let h = o.period() / n as f64;
    let sched = ControlSchedule::zero(o.period());
    let fz: Vec<f64> = (0..=n)
        .map(|k| {
            let t = k as f64 * h;
            aero_wrench(&o.samples[k], &o.model.wings_at(t, &sched), &o.model.morph).force.z
        })
        .collect();
    // Simpson over the period
    let mut acc = fz[0] + fz[n];
    for (k, v) in fz.iter().enumerate().take(n).skip(1) {
        acc += v * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    let mean = acc * h / 3.0 / o.period();
    let weight = o.model.morph.total_mass() * o.model.morph.g;
    assert!((mean - weight).abs() <= 0.01 * weight, "mean lift {mean} vs weight {weight}");
}

#[test]
fn expert_is_idle_at_zero_error_and_never_worse_than_doing_nothing() {
    let o = orbit();
    let w = CostWeights::default();
    let opts = MpcOptions::default();
    let zero = mpc_solve(&StateError::zero(), o, &w, &opts).unwrap();
    assert!(zero.u.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-3);
    for j in 0..2 {
        let e = sample_initial_error(&mut substream(77, j), &[0.5; 4]);
        let sol = mpc_solve(&e, o, &w, &opts).unwrap();
        assert!(sol.cost <= sol.cost0, "J(u*) = {} > J(0) = {}", sol.cost, sol.cost0);
        assert!(sol.u.iter().all(|v| v.abs() <= opts.delta_max + 1e-12));
        // the reported cost is the cost of simulating the returned schedule
        let start = flapwing::datagen::perturb_state(o, &e, &o.w_x).unwrap();
        let ctl = Fixed(sol.horizon_schedules(o.period()));
        assert_eq!(ctl.0[0], sol.schedule(o.period()));
        let res = simulate(&start, 0.0, 2, &ctl, &o.model, &o.sim_options(Record::EveryStep));
        assert!(res.error.is_none());
        let j = tracking_cost(&res.trajectory, o, &w).unwrap();
        assert!((j - sol.cost).abs() <= 1e-9 * sol.cost.max(1e-12), "{j} vs {}", sol.cost);
    }
}

struct Fixed([ControlSchedule; 2]);

impl flapwing::integrate::Controller for Fixed {
    fn schedule(&self, k: usize, _: f64, _: &flapwing::dynamics::FreeState) -> flapwing::Result<ControlSchedule> {
        Ok(self.0[k].clone())
    }
}

#[test]
fn zero_start_sweep_stays_near_zero() {
    let o = orbit();
    let p = NeuralPolicy::zeros(NetArch::new(12, 36, 60));
    let series = closed_loop_series(&StateError::zero(), o, &PolicyController::new(&p, o), 10);
    assert!(series.iter().all(|e| *e <= 1e-4), "{series:?}");
}

#[test]
fn policy_is_much_faster_than_the_expert() {
    let o = orbit();
    let p = NeuralPolicy::init(NetArch::new(12, 36, 60), 5);
    let e = sample_initial_error(&mut substream(3, 0), &[0.5; 4]);
    let t = Instant::now();
    mpc_solve(&e, o, &CostWeights::default(), &MpcOptions::default()).unwrap();
    let expert = t.elapsed().as_secs_f64();
    let policy = policy_latency(&p, 2001);
    assert!(expert / policy >= 1e3, "expert {expert:e} s, policy {policy:e} s");
}

#[test]
fn orbit_search_is_reproducible() {
    let again =
        find_periodic_orbit(&Morphology::default(), &WingPair::symmetric(default_reference()), &OrbitOptions::default())
            .unwrap();
    assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(orbit()).unwrap());
}

#[test]
fn infeasible_morphology_is_rejected() {
    let mut m = Morphology::default();
    m.m_b = -1.0;
    assert!(find_periodic_orbit(&m, &WingPair::symmetric(default_reference()), &OrbitOptions::default()).is_err());
}
