use hvdvg::integrator::integrate_at_times;
use hvdvg::{fit_integrator_defaults, fit_cost, Candidate, Dataset, ModelParams, Penalty, State};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TRUTH: Candidate = Candidate {
    b: 78.0, beta: 1e-8, delta: 1.0, alpha: 0.1827,
    iota: 0.0027, gamma: 0.0154, v0: 1.5e6, d0: 1.0,
};

fn sample_times() -> Vec<f64> {
    vec![
        0.0, 0.0005, 0.001, 0.002, 0.004, 0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 12.0,
        16.0, 24.0, 36.0, 48.0, 60.0, 72.0,
    ]
}

fn noisy_dataset() -> Dataset {
    let times = sample_times();
    let p = ModelParams::new(TRUTH.b, TRUTH.beta, TRUTH.delta, TRUTH.iota, TRUTH.alpha)
        .unwrap().with_decay(TRUTH.gamma).unwrap();
    let cells = TRUTH.v0 / 1.8;
    let s0 = State::new(cells, 0.0, 0.0, 0.0, TRUTH.v0, TRUTH.d0);
    let traj = integrate_at_times(&p, &s0, &fit_integrator_defaults(), &times).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let mut points = Vec::new();
    for s in &traj.samples {
        let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        points.push((s.t, s.state.virions * (0.05 * z).exp()));
    }
    Dataset::new(points, 1.8, 1.0, cells).unwrap()
}

fn main() {
    let dataset = noisy_dataset();
    let pen = Penalty::default();
    let integ = fit_integrator_defaults();
    let champ = Candidate {
        b: 8318.67096, beta: 1.0, delta: 177.549, alpha: 0.29846,
        iota: 0.999967, gamma: 0.01403, v0: 1.2773e6, d0: 998.9,
    };
    println!("fit_cost(champion) = {:.4}", fit_cost(&champ, &dataset, &pen, &integ));

    let p = ModelParams::new(champ.b, champ.beta, champ.delta, champ.iota, champ.alpha)
        .unwrap().with_decay(champ.gamma).unwrap();
    let cells = dataset.cells();
    let s0 = State::new(cells, 0.0, 0.0, 0.0, champ.v0, champ.d0);
    match integrate_at_times(&p, &s0, &integ, &sample_times()) {
        Err(e) => println!("integration failed: {e}"),
        Ok(traj) => {
            println!("steps = {}, stop = {:?}", traj.steps, traj.stop);
            for (s, (t, obs)) in traj.samples.iter().zip(dataset.points()) {
                println!(
                    "t={:8.4}  Vhat={:12.4e}  obs={:12.4e}  ln-resid={:+.3}  cells={:10.3e}",
                    t, s.state.virions, obs, (s.state.virions.max(1e-30) / obs).ln(),
                    s.state.cells + s.state.cells_v + s.state.cells_d + s.state.cells_dv
                );
            }
        }
    }
}
