//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p chargepath --test acceptance [-- <criterion numbers>]`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use petgraph::algo::dijkstra;
use petgraph::graph::UnGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chargepath::endpoints::{group_curves, run_bilevel, trace_curves, BilevelConfig, DiracMass, DiracSet};
use chargepath::energies::{
    project_dual_roto, project_halfplane_set, CurvatureFamily, EnergyFamily, EnergySpec, HalfPlaneSet,
};
use chargepath::fields::{
    average, average_adjoint, divergence_adjoint, gradient, DualField, EdgeField, GridShape, NodeField, Stencil,
};
use chargepath::fixtures::{comma_fixture, crossing_curves, dark_quarter_circle, dark_segment, Fixture};
use chargepath::pdhg::{solve, SolverConfig};
use chargepath::rototrans::{dominant_paths, lifted_dirac, max_turning, solve_lifted, AngleTable};
use chargepath::spectral::project_divergence;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_edges(shape: GridShape, rng: &mut ChaCha8Rng) -> EdgeField {
    let mut z = EdgeField::zeros(shape);
    z.values_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    z
}

fn random_nodes(shape: GridShape, rng: &mut ChaCha8Rng) -> NodeField {
    NodeField::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn random_dual(shape: GridShape, rng: &mut ChaCha8Rng) -> DualField {
    let v = (0..shape.node_count() * shape.ndim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DualField::from_vec(shape, v).unwrap()
}

fn balanced(shape: GridShape, rng: &mut ChaCha8Rng) -> NodeField {
    let mut mu = random_nodes(shape, rng);
    let mean = mu.sum() / shape.node_count() as f64;
    mu.values_mut().iter_mut().for_each(|v| *v -= mean);
    mu
}

fn criterion_1() -> Outcome {
    let shapes = [
        GridShape::plane(8, 8).unwrap(),
        GridShape::plane(33, 17).unwrap(),
        GridShape::volume(8, 8, 6).unwrap(),
        GridShape::lifted(16, 16, 8).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_d, mut worst_a, mut worst_sum) = (0.0f64, 0.0f64, 0.0f64);
    for s in shapes {
        for _ in 0..100 {
            let u = random_nodes(s, &mut rng);
            let z = random_edges(s, &mut rng);
            let du = gradient(&u);
            let lhs = du.dot(&z);
            let rhs = u.dot(&divergence_adjoint(&z));
            worst_d = worst_d.max((lhs - rhs).abs() / (du.norm2() * z.norm2()));
            worst_sum = worst_sum.max(divergence_adjoint(&z).sum().abs() / z.norm_l1());
            for st in [Stencil::Averaged, Stencil::Forward] {
                let p = random_dual(s, &mut rng);
                let az = average(&z, st);
                let lhs = az.dot(&p);
                let rhs = z.dot(&average_adjoint(&p, st));
                worst_a = worst_a.max((lhs - rhs).abs() / (az.norm2() * p.norm2()));
            }
        }
    }
    outcome(
        worst_d <= 1e-12 && worst_a <= 1e-12 && worst_sum <= 1e-12,
        format!("max rel. adjointness D {worst_d:.1e}, A {worst_a:.1e}; divergence sum {worst_sum:.1e}"),
    )
}

/// Dense matrix of `D*` built column by column from unit edge fields.
fn dense_divergence(s: GridShape) -> DMatrix<f64> {
    let edges: usize = (0..s.ndim()).map(|a| s.edge_count(a)).sum();
    let mut m = DMatrix::zeros(s.node_count(), edges);
    let mut col = 0;
    for a in 0..s.ndim() {
        for e in 0..s.edge_count(a) {
            let mut z = EdgeField::zeros(s);
            z.component_mut(a)[e] = 1.0;
            for (r, v) in divergence_adjoint(&z).values().iter().enumerate() {
                m[(r, col)] = *v;
            }
            col += 1;
        }
    }
    m
}

fn flatten(z: &EdgeField) -> DVector<f64> {
    DVector::from_iterator(z.values().count(), z.values().copied())
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_oracle = 0.0f64;
    for s in [GridShape::plane(4, 4).unwrap(), GridShape::plane(5, 3).unwrap()] {
        let m = dense_divergence(s);
        let pinv = m.clone().pseudo_inverse(1e-12).unwrap();
        for _ in 0..10 {
            let z0 = random_edges(s, &mut rng);
            let mu = balanced(s, &mut rng);
            let mu_v = DVector::from_column_slice(mu.values());
            let expect = flatten(&z0) + &pinv * (mu_v - &m * flatten(&z0));
            let got = flatten(&project_divergence(&z0, &mu).unwrap());
            worst_oracle = worst_oracle.max((got - expect).amax());
        }
    }
    let shapes = [
        GridShape::plane(9, 7).unwrap(),
        GridShape::plane(16, 16).unwrap(),
        GridShape::volume(6, 5, 4).unwrap(),
        GridShape::lifted(8, 6, 8).unwrap(),
    ];
    let (mut worst_idem, mut worst_feas) = (0.0f64, 0.0f64);
    for case in 0..50 {
        let s = shapes[case % shapes.len()];
        let z = random_edges(s, &mut rng);
        let mu = balanced(s, &mut rng);
        let p = project_divergence(&z, &mu).unwrap();
        let pp = project_divergence(&p, &mu).unwrap();
        let mut d = pp.clone();
        d.axpy(-1.0, &p);
        worst_idem = worst_idem.max(d.norm_inf());
        let r = divergence_adjoint(&p);
        worst_feas = worst_feas.max(r.values().iter().zip(mu.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    outcome(
        worst_oracle <= 1e-8 && worst_idem <= 1e-9 && worst_feas <= 1e-9,
        format!("dense pinv deviation {worst_oracle:.1e}; idempotence {worst_idem:.1e}; feasibility {worst_feas:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let s = GridShape::plane(16, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let g = NodeField::from_fn(s, |_| rng.gen_range(0.05..1.0));
        // edge between a node and its successor along an axis costs g at the node
        let mut graph = UnGraph::<(), f64>::new_undirected();
        let ids: Vec<_> = (0..s.node_count()).map(|_| graph.add_node(())).collect();
        for i in 0..16 {
            for j in 0..16 {
                let n = s.index([i, j, 0]);
                let w = g.values()[n];
                if i + 1 < 16 {
                    graph.add_edge(ids[n], ids[s.index([i + 1, j, 0])], w);
                }
                if j + 1 < 16 {
                    graph.add_edge(ids[n], ids[s.index([i, j + 1, 0])], w);
                }
            }
        }
        let a = [rng.gen_range(0..16), rng.gen_range(0..16), 0];
        let mut b = a;
        while b == a {
            b = [rng.gen_range(0..16), rng.gen_range(0..16), 0];
        }
        let dist = dijkstra(&graph, ids[s.index(a)], Some(ids[s.index(b)]), |e| *e.weight())[&ids[s.index(b)]];
        let mut mu = NodeField::zeros(s);
        mu.set(a, -1.0);
        mu.set(b, 1.0);
        let spec = EnergySpec::new(EnergyFamily::L1, g, None).unwrap();
        let cfg = SolverConfig { max_steps: 20_000, check_every: 1000, ..SolverConfig::default() };
        let (_, diag) = solve(&spec, &mu, &cfg, None).unwrap();
        let e = diag.last_energy().unwrap();
        worst = worst.max((e - dist).abs() / dist);
    }
    outcome(worst <= 1e-3, format!("max rel. deviation from shortest path {worst:.2e} over 10 instances"))
}

/// Nearest point on the boundary of the set, scanning it at arc step `h`.
fn brute_force_boundary(family: CurvatureFamily, alpha: f64, a0: f64, b0: f64, h: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, (0.0, 0.0));
    let mut try_point = |a: f64, b: f64| {
        let d = (a - a0).hypot(b - b0);
        if d < best.0 {
            best = (d, (a, b));
        }
    };
    let reach = a0.abs() + b0.abs() + 2.0 * alpha + 2.0;
    match family {
        CurvatureFamily::Trl => {
            // half ellipse for a >= 0, then the two rays b = +-alpha for a < 0
            let n = ((std::f64::consts::PI * (1.0 + alpha)) / h).ceil() as usize;
            for s in 0..=n {
                let t = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * s as f64 / n as f64;
                try_point(t.cos(), alpha * t.sin());
            }
            let n = (reach / h).ceil() as usize;
            for s in 0..=n {
                let a = -(s as f64) * h;
                try_point(a, alpha);
                try_point(a, -alpha);
            }
        }
        CurvatureFamily::El => {
            // parabola a = 1 - b^2 / (4 alpha^2), stepped in b with slope-aware spacing
            let mut b = -reach * alpha.max(1.0) * 2.0;
            while b <= reach * alpha.max(1.0) * 2.0 {
                try_point(1.0 - b * b / (4.0 * alpha * alpha), b);
                let slope = b / (2.0 * alpha * alpha);
                b += h / (1.0 + slope * slope).sqrt();
            }
        }
        CurvatureFamily::Tac => unreachable!(),
    }
    best.1
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_dist, mut worst_member) = (0.0f64, 0.0f64);
    let cases = [
        (CurvatureFamily::Trl, 0.5),
        (CurvatureFamily::Trl, 2.0),
        (CurvatureFamily::El, 0.5),
        (CurvatureFamily::El, 1.0),
        (CurvatureFamily::El, 2.0),
    ];
    for (family, alpha) in cases {
        let set = HalfPlaneSet::new(family, alpha).unwrap();
        let mut n = 0;
        while n < 20 {
            let (a0, b0) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let (a, b) = project_halfplane_set((a0, b0), set, 1e-12, 30).unwrap();
            worst_member = worst_member.max(set.residual(a, b).max(0.0));
            if set.contains(a0, b0) {
                worst_dist = worst_dist.max((a - a0).hypot(b - b0));
                continue;
            }
            let (ra, rb) = brute_force_boundary(family, alpha, a0, b0, 1e-4);
            worst_dist = worst_dist.max((a - ra).hypot(b - rb));
            n += 1;
        }
    }
    // the component orthogonal to the fibre direction passes through untouched
    let s = GridShape::lifted(6, 5, 8).unwrap();
    let angles = AngleTable::new(8);
    let mut worst_orth = 0.0f64;
    for family in [EnergyFamily::RotoTac, EnergyFamily::RotoTrl, EnergyFamily::RotoEl] {
        let g = NodeField::from_fn(s.planar(), |_| rng.gen_range(0.0..1.0));
        let spec = EnergySpec::new(family, g, Some(1.5)).unwrap();
        let p = DualField::from_vec(s, (0..s.node_count() * 3).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap();
        let q = project_dual_roto(&p, &spec, &angles).unwrap();
        for n in 0..s.node_count() {
            let (c, sn) = angles.direction(n % 8);
            let (pv, qv) = (p.node(n), q.node(n));
            let orth = |v: &[f64]| -sn * v[0] + c * v[1];
            worst_orth = worst_orth.max((orth(pv) - orth(qv)).abs());
        }
    }
    outcome(
        worst_dist <= 2e-3 && worst_member <= 1e-10 && worst_orth <= 1e-12,
        format!("max distance to brute force {worst_dist:.1e}; membership residual {worst_member:.1e}; orthogonal drift {worst_orth:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let s = GridShape::lifted(40, 8, 16).unwrap();
    let spec = EnergySpec::new(EnergyFamily::RotoEl, NodeField::constant(s.planar(), 1.0), Some(1.0)).unwrap();
    let mut mu = NodeField::zeros(s);
    lifted_dirac(&mut mu, [4, 4], 0, -1.0).unwrap();
    lifted_dirac(&mut mu, [35, 4], 0, 1.0).unwrap();
    let sol = solve_lifted(&spec, &mu, &SolverConfig::with_steps(5000), None).unwrap();
    let e = sol.diagnostics.last_energy().unwrap();
    let rel = (e - 31.0).abs() / 31.0;
    outcome(
        rel <= 0.01,
        format!("energy {e:.4} vs distance 31 (rel. {rel:.1e}); marginal mass {:.4}", sol.planar.norm_l1()),
    )
}

fn pairs_connect(curves: &[chargepath::endpoints::Curve], fx: &Fixture, own: bool) -> bool {
    // endpoints are [start_a, end_a, start_b, end_b]
    let e = &fx.endpoints;
    [(e[0], e[1], e[3]), (e[2], e[3], e[1])].iter().all(|&(src, mine, other)| {
        let best =
            curves.iter().filter(|c| [c.start()[0], c.start()[1]] == src).max_by(|a, b| a.flux.total_cmp(&b.flux));
        match best {
            Some(c) => [c.end()[0], c.end()[1]] == if own { mine } else { other },
            None => false,
        }
    })
}

fn criterion_6() -> Outcome {
    let k = 16;
    let fx = crossing_curves(40, 25, 45f64.to_radians(), 13.0, 1.5, 0.2);
    let e = &fx.endpoints;
    let angles = AngleTable::new(k);
    let dir = |a: [usize; 2], b: [usize; 2]| angles.nearest(b[0] as f64 - a[0] as f64, b[1] as f64 - a[1] as f64);
    let (ka, kb) = (dir(e[0], e[1]), dir(e[2], e[3]));
    let masses = DiracSet::new(vec![
        DiracMass::new(e[0], -1).with_angle(ka),
        DiracMass::new(e[1], 1).with_angle(ka),
        DiracMass::new(e[2], -1).with_angle(kb),
        DiracMass::new(e[3], 1).with_angle(kb),
    ]);
    let cfg = SolverConfig::with_steps(6000);

    let mut turning = Vec::new();
    let mut el_crosses = false;
    for family in [EnergyFamily::RotoEl, EnergyFamily::RotoTrl, EnergyFamily::RotoTac] {
        let spec = EnergySpec::new(family, fx.g.clone(), Some(1.0)).unwrap();
        let mu = masses.to_measure(GridShape::lifted(40, 25, k).unwrap()).unwrap();
        let sol = solve_lifted(&spec, &mu, &cfg, None).unwrap();
        let t = dominant_paths(&sol.lifted_curves, 0.25).iter().map(|c| max_turning(c, k)).fold(0.0, f64::max);
        turning.push(t.to_degrees());
        if family == EnergyFamily::RotoEl {
            el_crosses = pairs_connect(&sol.curves, &fx, true);
        }
    }

    let planar = DiracSet::new(masses.masses.iter().map(|m| DiracMass::new(m.pos, m.sign)).collect());
    let mu = planar.to_measure(fx.g.shape()).unwrap();
    let spec = EnergySpec::new(EnergyFamily::L2Averaged, fx.g.clone(), None).unwrap();
    let (st, _) = solve(&spec, &mu, &cfg, None).unwrap();
    let l2_curves = group_curves(&trace_curves(&st.z, &mu).unwrap(), 0.0);
    let l2_turns = pairs_connect(&l2_curves, &fx, false);

    let order = turning[0] < turning[1] && turning[1] <= turning[2];
    outcome(
        order && el_crosses && l2_turns,
        format!(
            "max turning EL {:.1} deg, TRL {:.1} deg, TAC {:.1} deg; EL crosses: {el_crosses}; l2 turns at junction: {l2_turns}",
            turning[0], turning[1], turning[2]
        ),
    )
}

fn endpoint_error(found: &DiracSet, truth: &[[usize; 2]]) -> f64 {
    if found.len() != 2 {
        return f64::INFINITY;
    }
    let d = |p: [usize; 2], q: [usize; 2]| (p[0] as f64 - q[0] as f64).hypot(p[1] as f64 - q[1] as f64);
    let (a, b) = (found.masses[0].pos, found.masses[1].pos);
    let straight = d(a, truth[0]).max(d(b, truth[1]));
    let swapped = d(a, truth[1]).max(d(b, truth[0]));
    straight.min(swapped)
}

fn criterion_7() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, fx, tol) in [
        ("segment", dark_segment(40, 20, 10, 8, 31), 2.0),
        ("quarter circle", dark_quarter_circle(40, 40, [5, 5], 28.0), 3.0),
    ] {
        let spec = EnergySpec::new(EnergyFamily::L2Averaged, fx.g.clone(), None).unwrap();
        let mut worst = 0.0f64;
        for seed in 0..5 {
            let cfg = BilevelConfig { n_pairs: 1, post_steps: 1000, seed, ..BilevelConfig::default() };
            let res = run_bilevel(&spec, &cfg).unwrap();
            worst = worst.max(endpoint_error(&res.masses, &fx.endpoints));
        }
        pass &= worst <= tol;
        detail.push(format!("{name}: worst endpoint error {worst:.2} px (tol {tol})"));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_9() -> Outcome {
    let fx = comma_fixture(32, 0.05, 1);
    let mut mu = NodeField::zeros(fx.g.shape());
    mu.set([fx.endpoints[0][0], fx.endpoints[0][1], 0], -1.0);
    mu.set([fx.endpoints[1][0], fx.endpoints[1][1], 0], 1.0);
    let spec = EnergySpec::new(EnergyFamily::L2Averaged, fx.g.clone(), None).unwrap();
    let cfg = SolverConfig { max_steps: 50_000, check_every: 100, track_gap: true, ..SolverConfig::default() };
    let (_, diag) = solve(&spec, &mu, &cfg, None).unwrap();
    let at = |k: usize| diag.checkpoints.iter().find(|c| c.step == k).unwrap().energy;
    let (e5, e50) = (at(5000), at(50_000));
    let rel = (e5 - e50).abs() / e50;
    let feas = diag.checkpoints.iter().map(|c| c.feas).fold(0.0, f64::max);
    // the surrogate is negative while the averaged dual still has a defect and
    // approaches zero from below, so the trend is taken on its magnitude
    let means: Vec<f64> =
        diag.checkpoints.chunks(10).map(|w| w.iter().map(|c| c.gap.abs()).sum::<f64>() / w.len() as f64).collect();
    let rises = means.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-9)).count();
    let signed_end = diag.checkpoints.last().unwrap().gap;
    outcome(
        rel <= 1e-3 && feas <= 1e-9 && rises == 0,
        format!(
            "energy@5k {e5:.6} vs @50k {e50:.6} (rel. {rel:.1e}); max feasibility {feas:.1e}; windowed |gap| {:.2e} -> {:.2e}, {rises} rises; final signed gap {signed_end:.2e}",
            means[0],
            means[means.len() - 1]
        ),
    )
}

fn main() {
    let criteria: [(usize, &str, Option<fn() -> Outcome>, u64); 9] = [
        (1, "operator identities", Some(criterion_1), 5),
        (2, "spectral projection oracle", Some(criterion_2), 10),
        (3, "graph shortest-path equivalence", Some(criterion_3), 120),
        (4, "dual set projection oracles", Some(criterion_4), 30),
        (5, "lifted straight line", Some(criterion_5), 120),
        (6, "curvature behaviour at a crossing", Some(criterion_6), 600),
        (7, "endpoint recovery", Some(criterion_7), 180),
        (8, "full-size reproduction", None, 0),
        (9, "solver convergence", Some(criterion_9), 300),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, run, limit) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let Some(run) = run else {
            println!("criterion {n} SKIP  {name}: scripted, see scripts/reproduce.sh");
            continue;
        };
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(run));
        let elapsed = t.elapsed();
        let o = res.unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let in_time = elapsed <= Duration::from_secs(limit);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n} {}  {name}: {} [{:.1}s of {limit}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
