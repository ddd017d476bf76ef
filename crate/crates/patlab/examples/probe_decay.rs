use std::f64::consts::PI;
use patlab::asymptotics::{g_general, h_function, weighted_mass};
use patlab::field::ScalarField;
use patlab::grid::{face_trace, GridSpec};
use patlab::medium::{build_medium, InitialState, MediumRecipe, MediumSpec, TensorRecipe};
use patlab::moments::{boundary_moment, time_moments};
use patlab::wave::{record_simulation, BoundaryKind, RecordConfig, SimConfig};

fn power_profile(x: [f64; 3], rad: f64) -> f64 {
    let t = 1.0 - (x[0]*x[0]+x[1]*x[1]+x[2]*x[2])/(rad*rad);
    if t > 0.0 { t.powi(5) } else { 0.0 }
}

fn grid(n: usize) -> GridSpec { GridSpec::cube(n, 6.0 / n as f64, 1.0, 1.5, 3.0).unwrap() }

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let n: f64 = b.iter().map(|y| y * y).sum();
    (d / n).sqrt()
}

fn mean(v: &[f64]) -> f64 { v.iter().sum::<f64>() / v.len() as f64 }

fn pair(m: &MediumSpec, g: GridSpec) -> ScalarField {
    let core = ScalarField::from_fn(g, |x| power_profile(x, 0.55));
    let wide = ScalarField::from_fn(g, |x| power_profile(x, 0.95));
    let beta = weighted_mass(m, &core) / weighted_mass(m, &wide);
    let mut f = core;
    for (v, w) in f.values.iter_mut().zip(&wide.values) { *v -= beta * w; }
    f
}

fn check(label: &str, m: &MediumSpec, g: GridSpec, cfg: &SimConfig) {
    let f = pair(m, g);
    let init = InitialState::pressure_only(f.clone()).unwrap();
    let rec = record_simulation(m, &init, cfg, &RecordConfig::default()).unwrap();
    println!("[{label}] decay: {:?}", rec.decay_fit().map(|d| (d.delta_hat, d.class)));
    let table = match time_moments(&rec, 4) { Ok(t) => t, Err(e) => { println!("[{label}] moment error: {e}"); return; } };
    let faces = g.boundary_faces();
    let mut sim4 = vec![0.0; faces.len()];
    face_trace(&table.moments[4].values, &faces, &mut sim4);
    let targets: Vec<[f64; 3]> = faces.iter().map(|fc| fc.midpoint).collect();
    let h = h_function(m, &f, &targets).unwrap();
    let c0 = m.c0;
    let pred: Vec<f64> = h.iter().map(|&hv| -hv / (4.0 * PI * c0.powi(3))).collect();
    println!("[{label}] sim4 mean {:.4e} | pred mean {:.4e} | gap {:.3e}", mean(&sim4), mean(&pred), rel_l2(&sim4, &pred));
    let det = boundary_moment(&rec).unwrap();
    println!("[{label}] ratios: {:?}", det.scan_ratios.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>());
}

fn main() {
    let g = grid(48);
    let cfg = SimConfig { boundary: BoundaryKind::ReflectingBall, ..SimConfig::open(3.4) };

    let uni = build_medium(g, &MediumRecipe::Uniform { c0: 1.0 }, &TensorRecipe::Identity).unwrap();
    check("uniform", &uni, g, &cfg);

    let mild = build_medium(g, &MediumRecipe::RadialBump { c0: 1.0, amplitude: -0.05, radius: 0.6 }, &TensorRecipe::Identity).unwrap();
    check("mild -0.05", &mild, g, &cfg);

    // triple shell: row-3 face trace vs general residue at T = 3.4
    let b1 = ScalarField::from_fn(g, |x| power_profile(x, 0.45));
    let b2 = ScalarField::from_fn(g, |x| power_profile(x, 0.7));
    let b3 = ScalarField::from_fn(g, |x| power_profile(x, 0.95));
    let m0: Vec<f64> = [&b1, &b2, &b3].iter().map(|b| weighted_mass(&uni, b)).collect();
    let r2 = |b: &ScalarField| -> f64 {
        let h3 = g.h * g.h * g.h;
        b.values.iter().enumerate().map(|(i, v)| {
            let c = g.center(i);
            (c[0]*c[0]+c[1]*c[1]+c[2]*c[2]) * v
        }).sum::<f64>() * h3
    };
    let m2: Vec<f64> = [&b1, &b2, &b3].iter().map(|b| r2(b)).collect();
    let det3 = (m0[1]*m2[2] - m0[2]*m2[1]).recip();
    let alpha = det3 * (-m0[0]*m2[2] + m2[0]*m0[2]);
    let gamma = det3 * (-m0[1]*m2[0] + m2[1]*m0[0]);
    let mut f3 = b1;
    for ((v, x2), x3) in f3.values.iter_mut().zip(&b2.values).zip(&b3.values) { *v += alpha * x2 + gamma * x3; }
    let init3 = InitialState::pressure_only(f3.clone()).unwrap();
    let rec3 = record_simulation(&uni, &init3, &cfg, &RecordConfig::default()).unwrap();
    let table3 = time_moments(&rec3, 6).unwrap();
    let faces = g.boundary_faces();
    let mut sim6 = vec![0.0; faces.len()];
    face_trace(&table3.moments[6].values, &faces, &mut sim6);
    let targets: Vec<[f64; 3]> = faces.iter().map(|fc| fc.midpoint).collect();
    let zero1 = ScalarField::zeros(g);
    let zero2 = ScalarField::zeros(g);
    let g_pred = g_general(&uni, &f3, 3, &[zero1, zero2], &targets).unwrap();
    let pred6: Vec<f64> = g_pred.iter().map(|&gv| gv / 720.0).collect();
    println!("[triple] sim6 mean {:.4e} | pred mean {:.4e} | gap {:.3e}", mean(&sim6), mean(&pred6), rel_l2(&sim6, &pred6));
}
