//! Acceptance gate: one test per certification criterion.
//!
//! Each test prints a single `criterion N (...): PASS/FAIL` line with the
//! measured quantity, the pinned tolerance, and the wall-clock time, then
//! asserts. Run with `--nocapture` to see the lines for passing criteria.
//!
//! All randomness flows through [`Sampler`] seeded per criterion, so every
//! run exercises the identical configurations.

use std::sync::Arc;
use std::time::Instant;

use taugas::correspond::{Correspondence, PhaseConvention, RLimitStudy};
use taugas::gas::{Confining, GasSpec};
use taugas::geometry::{BoundaryGeometry, ConformalMap};
use taugas::matrix_model::ZChain;
use taugas::soliton::{HierarchyKind, MomentumPair, SolitonSystem, TimesVector};
use taugas::tau::{LogSum, TauValue};
use taugas::verify::{
    chemical_potential_residual, conductor_wall_residual, dielectric_wall_order,
    inverse_temperature_residual, kp_equation_order, residue_stability, toda_bilinear_residual,
};
use taugas::{BoundaryGeometry64, Sampler64, C64};

/// Identity tolerances: quantities that are algebraically exact and computed
/// in log space, so only rounding accumulation is admitted.
const IDENTITY_TOL: f64 = 1e-11;
/// Exact identities routed through derivative recurrences or extra
/// cancellation-prone algebra: one digit looser than `IDENTITY_TOL`.
const DERIVED_TOL: f64 = 1e-10;
/// Contour quadrature residuals and their refinement drift.
const QUADRATURE_TOL: f64 = 1e-9;
/// Largest admissible conductor-wall potential magnitude.
const WALL_TOL: f64 = 1e-10;
/// Second-order stencils must fit at least this convergence order.
const STENCIL_ORDER_MIN: f64 = 1.9;

fn status(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Uniform integer in `lo..=hi`, drawn through the deterministic sampler.
fn pick(s: &mut Sampler64, lo: usize, hi: usize) -> usize {
    let span = (hi - lo + 1) as f64;
    lo + (s.uniform(0.0, span).floor() as usize).min(hi - lo)
}

/// Times with per-flow magnitudes shrinking as `scale/p³`, optionally with a
/// second (negative-flow) family; gentle enough for wide quadrature contours.
fn cubic_times(s: &mut Sampler64, p_max: usize, scale: f64, m: i64, two_sided: bool) -> TimesVector<f64> {
    let mut draw = |s: &mut Sampler64| -> Vec<C64> {
        (1..=p_max)
            .map(|p| {
                let cap = scale / (p * p * p) as f64;
                C64::new(s.uniform(-cap, cap), s.uniform(-cap, cap))
            })
            .collect()
    };
    let pos = draw(s);
    let neg = if two_sided { draw(s) } else { vec![] };
    TimesVector::new(m, pos, neg)
}

#[test]
fn criterion_1_soliton_gas_identity() {
    let t0 = Instant::now();
    let mut s = Sampler64::from_seed(0xAC01);
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    for pair in 0..3usize {
        for _ in 0..20 {
            let geometry = match pair {
                0 => BoundaryGeometry::HalfPlaneConductor,
                1 => BoundaryGeometry::QuarterPlane,
                _ => BoundaryGeometry::disc_exterior(s.uniform(0.5, 1.2)).unwrap(),
            };
            let n = pick(&mut s, 1, 12);
            let sites = s.interior_sites(&geometry, n, 0.15).unwrap();
            let times = s.admissible_times(geometry.natural_hierarchy(), 4, 0.3);
            let corr = Correspondence::new(geometry, sites)
                .with_mu(s.uniform(-0.3, 0.3))
                .with_confining(Confining::Quadratic {
                    strength: s.uniform(0.0, 0.2),
                });
            let tau = corr.build_system().unwrap().tau(&times).unwrap();
            let grand = corr.build_gas(&times).unwrap().grand_partition().unwrap();
            worst = worst.max(TauValue::rel_diff(&tau, &grand));
            count += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst <= IDENTITY_TOL && secs <= 10.0;
    println!(
        "criterion 1 (soliton-gas identity): {} — worst relative {:.2e} over {count} lattices \
         (tol {IDENTITY_TOL:.0e}), {secs:.1} s (cap 10 s)",
        status(ok),
        worst
    );
    assert!(ok, "worst relative {worst:.3e}, {secs:.1} s");
}

#[test]
fn criterion_2_boundary_conditions() {
    let t0 = Instant::now();
    let mut s = Sampler64::from_seed(0xAC02);
    let geometries = [
        BoundaryGeometry::HalfPlaneConductor,
        BoundaryGeometry::QuarterPlane,
        BoundaryGeometry::disc_exterior(0.7).unwrap(),
        BoundaryGeometry::conformal_exterior(ConformalMap::Scale { radius: 0.8 }),
    ];
    let mut worst: f64 = 0.0;
    for geometry in &geometries {
        let charges = s.interior_sites(geometry, 4, 0.2).unwrap();
        let wall = s.conductor_wall_points(geometry, 100).unwrap();
        let report = conductor_wall_residual(geometry, &wall, &charges).unwrap();
        worst = worst.max(report.residual);
    }
    let quarter = BoundaryGeometry64::QuarterPlane;
    let charges = s.interior_sites(&quarter, 4, 0.2).unwrap();
    let wall = s.dielectric_wall_points(&quarter, 100).unwrap();
    let hs = [8e-2, 4e-2, 2e-2];
    let fit = dielectric_wall_order(&quarter, &wall, C64::new(0.0, 1.0), &charges, &hs).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst <= WALL_TOL && fit.order >= STENCIL_ORDER_MIN;
    println!(
        "criterion 2 (boundary conditions): {} — conductor |V| ≤ {:.2e} at 100 points/geometry \
         (tol {WALL_TOL:.0e}); dielectric normal-derivative order {:.2} (min {STENCIL_ORDER_MIN}), \
         {secs:.1} s",
        status(ok),
        worst,
        fit.order
    );
    assert!(ok, "wall potential {worst:.3e}, dielectric order {:.3}", fit.order);
}

#[test]
fn criterion_3_shrinking_disc_limit() {
    let t0 = Instant::now();
    let mut s = Sampler64::from_seed(0xAC03);
    // Sites drawn outside a unit-scale disc stay clear of every study radius.
    let staging = BoundaryGeometry::disc_exterior(1e-2).unwrap();
    let sites = s.interior_sites(&staging, 6, 0.25).unwrap();
    let study = RLimitStudy {
        sites,
        confining: Confining::Quadratic { strength: 0.1 },
        mu: s.uniform(-0.2, 0.2),
        ell: 0,
        m: 3,
        times: s.admissible_times(HierarchyKind::Toda2d, 2, 0.3),
        radii: vec![1e-2, 1e-3, 1e-4],
        sectors: (0..=6).collect(),
    };
    let report = study.run().unwrap();
    let slope_err = report
        .sector_slopes
        .iter()
        .map(|sl| (sl.slope - sl.predicted).abs())
        .fold(0.0f64, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    let ok = report.order >= 0.9 && slope_err <= 0.05 && secs <= 30.0;
    println!(
        "criterion 3 (shrinking-disc limit): {} — deviation order {:.3} (min 0.9), sector-slope \
         error ≤ {:.3} (tol 0.05) across sectors 0..=6, {secs:.1} s (cap 30 s)",
        status(ok),
        report.order,
        slope_err
    );
    assert!(
        ok,
        "order {:.3}, slope error {slope_err:.3}, {secs:.1} s",
        report.order
    );
}

#[test]
fn criterion_4_partition_chain_bilinear() {
    let t0 = Instant::now();
    let mut s = Sampler64::from_seed(0xAC04);
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;
    for _ in 0..10 {
        let n = pick(&mut s, 1, 8);
        let sites = s.sites_in_box(n, 2.0, 0.2).unwrap();
        let weights = s.log_weights(n, 0.8);
        let chain = ZChain::new(sites, weights).unwrap();
        let times = s.complex_times(2, 0.4);
        for p in 1..=2 {
            assert!(times.pos(p).norm() > 0.0 && times.neg(p).norm() > 0.0);
        }
        for m in 0..=n as i64 {
            let report = toda_bilinear_residual(&chain, m, &times).unwrap();
            worst = worst.max(report.relative);
            checks += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst <= DERIVED_TOL && secs <= 20.0;
    println!(
        "criterion 4 (partition-chain bilinear): {} — worst relative {:.2e} over {checks} \
         (lattice, m) checks with exact derivatives (tol {DERIVED_TOL:.0e}), {secs:.1} s (cap 20 s)",
        status(ok),
        worst
    );
    assert!(ok, "worst relative {worst:.3e}, {secs:.1} s");
}

#[test]
fn criterion_5_kp_equation_order() {
    let t0 = Instant::now();
    let mut s = Sampler64::from_seed(0xAC05);
    // Steps stay well above the sixth-difference rounding floor (~1e−2).
    let hs = [8e-2, 4e-2, 2e-2];
    let mut worst_dev: f64 = 0.0;
    let mut orders = Vec::new();
    for n in 1..=3usize {
        // Co-sorted momentum families keep every pairwise interaction
        // positive, so the tau stays strictly positive on the stencil and
        // the residual follows a clean h² law.
        let mut pairs = s.real_momenta(n, 0.6, 1.6).unwrap();
        let mut aa: Vec<f64> = pairs.iter().map(|p| p.a.re).collect();
        let mut bb: Vec<f64> = pairs.iter().map(|p| p.b.re).collect();
        aa.sort_by(f64::total_cmp);
        bb.sort_by(f64::total_cmp);
        for (p, (a, b)) in pairs.iter_mut().zip(aa.into_iter().zip(bb)) {
            *p = MomentumPair::new(C64::new(a, 0.0), C64::new(b, 0.0));
        }
        let times = TimesVector::from_pos(vec![
            C64::new(s.uniform(-0.35, 0.35), 0.0),
            C64::new(s.uniform(-0.25, 0.25), 0.0),
            C64::new(s.uniform(-0.2, 0.2), 0.0),
        ]);
        // Offsets centre each soliton on the stencil base point, so the
        // equation's terms are O(1) rather than exponentially flat.
        let offsets = pairs
            .iter()
            .map(|p| {
                let linear: C64 = (1..=3)
                    .map(|q| (p.a.powi(q) - p.b.powi(q)) * times.pos(q as usize))
                    .sum();
                C64::new(s.uniform(-0.5, 0.5), 0.0) - linear
            })
            .collect();
        let system = SolitonSystem::new(HierarchyKind::Kp, pairs, offsets).unwrap();
        let fit = kp_equation_order(&system, &times, &hs).unwrap();
        worst_dev = worst_dev.max((fit.order - 2.0).abs());
        orders.push(fit.order);
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst_dev <= 0.2 && secs <= 10.0;
    println!(
        "criterion 5 (kp equation): {} — finite-difference orders {:.2?} for 1..=3 solitons \
         (target 2.0 ± 0.2), {secs:.1} s (cap 10 s)",
        status(ok),
        orders
    );
    assert!(ok, "orders {orders:.2?}, {secs:.1} s");
}

#[test]
fn criterion_6_contour_residue_checks() {
    let t0 = Instant::now();
    let mut s = Sampler64::from_seed(0xAC06);
    let mut worst_rel: f64 = 0.0;
    let mut worst_drift: f64 = 0.0;
    for kind in [HierarchyKind::Kp, HierarchyKind::Toda2d] {
        for _ in 0..5 {
            let n = pick(&mut s, 1, 4);
            let pairs = s.banded_momenta(n, 0.75, 1.8).unwrap();
            let offsets = s.phase_offsets(n, 1.0);
            let system = SolitonSystem::new(kind, pairs, offsets).unwrap();
            let two_sided = kind == HierarchyKind::Toda2d;
            let (ma, mb) = if two_sided {
                (pick(&mut s, 0, 4) as i64 - 2, pick(&mut s, 0, 4) as i64 - 2)
            } else {
                (0, 0)
            };
            let ta = cubic_times(&mut s, 2, 0.4, ma, two_sided);
            let tb = cubic_times(&mut s, 2, 0.4, mb, two_sided);
            // A loose gate keeps the call from erroring out; the measured
            // drift is asserted against the pinned tolerance below.
            let stab = residue_stability(&system, &ta, &tb, 256, 1.0).unwrap();
            worst_rel = worst_rel
                .max(stab.base.relative)
                .max(stab.halved_radius.relative)
                .max(stab.doubled_points.relative);
            worst_drift = worst_drift.max(stab.drift);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst_rel <= QUADRATURE_TOL && worst_drift <= QUADRATURE_TOL && secs <= 10.0;
    println!(
        "criterion 6 (contour residue checks): {} — worst relative {:.2e}, refinement drift \
         {:.2e} over 5 draws each for the one- and two-sided identities (tol {QUADRATURE_TOL:.0e}), \
         {secs:.1} s (cap 10 s)",
        status(ok),
        worst_rel,
        worst_drift
    );
    assert!(ok, "relative {worst_rel:.3e}, drift {worst_drift:.3e}, {secs:.1} s");
}

/// Base disc radius of the charge-sector route. Within a fixed charge sector
/// the gauge tau deviates from the partition chain by a series in R², so a
/// two-radius Richardson step `(4 f(R/2) − f(R))/3` leaves O(R⁴) ≈ 1e−12
/// while the pairwise phase shifts (∝ R²) stay above the coincidence guard.
const SECTOR_ROUTE_RADIUS: f64 = 3e-5;

/// Charge-sector tau extrapolated to the vanishing-disc point, where it
/// reproduces the `m`-charge partition-chain value.
fn sector_route(
    sites: &[C64],
    weights: &[f64],
    m: usize,
    times: &TimesVector<f64>,
) -> TauValue<f64> {
    let table: Vec<(C64, f64)> = sites.iter().copied().zip(weights.iter().copied()).collect();
    let confining = Confining::Custom(Arc::new(move |z: C64| {
        let mut best = (f64::INFINITY, 0.0);
        for &(site, w) in &table {
            let d = (z - site).norm_sqr();
            if d < best.0 {
                best = (d, -0.5 * w);
            }
        }
        best.1
    }));
    let mut acc = LogSum::new();
    for (radius, coeff) in [
        (SECTOR_ROUTE_RADIUS / 2.0, 4.0 / 3.0),
        (SECTOR_ROUTE_RADIUS, -1.0 / 3.0),
    ] {
        let corr = Correspondence::new(
            BoundaryGeometry::disc_exterior(radius).unwrap(),
            sites.to_vec(),
        )
        .with_confining(confining.clone())
        .with_convention(PhaseConvention::GaugeReady { ell: 0 });
        let value = corr.gauge_tau_sector(m as i64, m, times).unwrap();
        acc.push_weighted(&value, C64::new(coeff, 0.0));
    }
    acc.total()
}

#[test]
fn criterion_7_triple_route_agreement() {
    let t0 = Instant::now();
    let mut s = Sampler64::from_seed(0xAC07);
    let mut worst: f64 = 0.0;
    // Separation floor keeps every pairwise phase shift of the mapped
    // solitons (∝ |ζ−ζ'|² R²) above the coincidence guard.
    for _ in 0..20 {
        let n = pick(&mut s, 2, 12);
        let staging = BoundaryGeometry::disc_exterior(SECTOR_ROUTE_RADIUS).unwrap();
        let sites = s.interior_sites(&staging, n, 0.35).unwrap();
        let weights = s.log_weights(n, 0.8);
        let times = s.complex_times(2, 0.35);
        let chain = ZChain::new(sites.clone(), weights.clone()).unwrap();
        for m in 0..=n {
            let enumerated = chain.partition(m, &times).unwrap();
            let determinant = chain.determinant_partition(m, &times).unwrap();
            let sector = sector_route(&sites, &weights, m, &times);
            worst = worst.max(TauValue::rel_diff(&enumerated, &determinant));
            worst = worst.max(TauValue::rel_diff(&enumerated, &sector));
            worst = worst.max(TauValue::rel_diff(&determinant, &sector));
        }
    }

    // Worked three-point lattice at the cube roots' positions {1, i, −1} with
    // unit weights and no flows: the two- and three-charge chain values are
    // the integers 8 and 16.
    let cube = vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0)];
    let chain = ZChain::new(cube.clone(), vec![0.0; 3]).unwrap();
    let times = TimesVector::zero();
    let mut oracle_worst: f64 = 0.0;
    for (m, expected) in [(2usize, 8.0), (3usize, 16.0)] {
        let target = TauValue::from_real(expected);
        for value in [
            chain.partition(m, &times).unwrap(),
            chain.determinant_partition(m, &times).unwrap(),
            sector_route(&cube, &[0.0; 3], m, &times),
        ] {
            oracle_worst = oracle_worst.max(TauValue::rel_diff(&value, &target));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst <= DERIVED_TOL && oracle_worst <= DERIVED_TOL && secs <= 20.0;
    println!(
        "criterion 7 (triple-route agreement): {} — enumeration/determinant/charge-sector \
         pairwise relative ≤ {:.2e} on 20 measures, all m (tol {DERIVED_TOL:.0e}); worked \
         three-point lattice off by ≤ {:.2e}, {secs:.1} s (cap 20 s)",
        status(ok),
        worst,
        oracle_worst
    );
    assert!(ok, "pairwise {worst:.3e}, oracle {oracle_worst:.3e}, {secs:.1} s");
}

#[test]
fn criterion_8_thermodynamic_consistency() {
    let t0 = Instant::now();
    let mut s = Sampler64::from_seed(0xAC08);
    let geometries = [
        BoundaryGeometry::FreePlane,
        BoundaryGeometry::HalfPlaneConductor,
        BoundaryGeometry::QuarterPlane,
        BoundaryGeometry::disc_exterior(0.7).unwrap(),
        BoundaryGeometry::FreePlane,
        BoundaryGeometry::HalfPlaneConductor,
    ];
    let (h, coarse) = (1e-3, 2e-3);
    let mut worst_rel: f64 = 0.0;
    let mut worst_order_dev: f64 = 0.0;
    for geometry in geometries {
        let n = pick(&mut s, 2, 8);
        let sites = s.interior_sites(&geometry, n, 0.2).unwrap();
        let times = s.admissible_times(geometry.natural_hierarchy(), 2, 0.3);
        let spec = GasSpec::new(geometry, sites)
            .beta(s.uniform(1.2, 2.8))
            .mu(s.uniform(-0.4, 0.4))
            .confining(Confining::Quadratic {
                strength: s.uniform(0.0, 0.3),
            })
            .times(times);
        for residual in [chemical_potential_residual, inverse_temperature_residual] {
            let fine = residual(&spec, h).unwrap();
            let wide = residual(&spec, coarse).unwrap();
            worst_rel = worst_rel.max(fine.relative);
            // Below the rounding floor the h² law is unobservable; that
            // already certifies the identity.
            if fine.residual > 1e-13 {
                let order = (wide.residual / fine.residual).log2();
                worst_order_dev = worst_order_dev.max((order - 2.0).abs());
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst_rel <= 1e-5 && worst_order_dev <= 0.35;
    println!(
        "criterion 8 (thermodynamic consistency): {} — grand-potential slopes in μ and β match \
         β⟨n⟩ and μ⟨n⟩−⟨E⟩ to relative ≤ {:.2e} on 6 gases; stencil order within {:.2} of 2.0 \
         (tol 0.35), {secs:.1} s",
        status(ok),
        worst_rel,
        worst_order_dev
    );
    assert!(ok, "relative {worst_rel:.3e}, order deviation {worst_order_dev:.3}");
}

#[test]
fn criterion_9_grand_canonical_reassembly() {
    let t0 = Instant::now();
    let mut s = Sampler64::from_seed(0xAC09);
    let geometry = BoundaryGeometry64::HalfPlaneConductor;
    let sites = s.interior_sites(&geometry, 6, 0.2).unwrap();
    let times = s.admissible_times(geometry.natural_hierarchy(), 2, 0.3);
    let spec = GasSpec::new(geometry, sites)
        .confining(Confining::Quadratic { strength: 0.15 })
        .times(times);
    let base = spec.clone().build().unwrap().sector_decomposition().unwrap();
    let mut worst: f64 = 0.0;
    for mu in [-0.5, -0.2, 0.1, 0.35, 0.6] {
        let at_mu = spec.clone().mu(mu).build().unwrap();
        let grand = at_mu.grand_partition().unwrap();
        // Literal reassembly: the μ = 0 sectors re-weighted by e^{βμn}.
        let mut acc = LogSum::new();
        for (n, sector) in base.sectors.iter().enumerate() {
            acc.push_value(&sector.scale_exp(C64::new(spec.beta * mu * n as f64, 0.0)));
        }
        worst = worst.max(TauValue::rel_diff(&acc.total(), &grand));
        // And the decomposition at μ itself must re-sum to its own grand.
        let dec = at_mu.sector_decomposition().unwrap();
        worst = worst.max(dec.reassembly_rel_diff());
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst <= IDENTITY_TOL;
    println!(
        "criterion 9 (grand-canonical reassembly): {} — worst relative {:.2e} at 5 chemical \
         potentials (tol {IDENTITY_TOL:.0e}), {secs:.1} s",
        status(ok),
        worst
    );
    assert!(ok, "worst relative {worst:.3e}");
}
