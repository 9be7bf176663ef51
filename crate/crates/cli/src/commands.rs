use crate::config::{ConfigError, RunConfig};
use crate::emit::{Figure, Report, Table};
use moire_core::atomic::{
    build_vd, ibp_identity_check, product_samples, rank_bound_scan, atomic_leading_dos, AtomicDiscretization, PotentialParams, SyntheticPotential,
    ZetaRoute,
};
use moire_core::effmodel::{
    band_structure, bm_potential, default_cutoff, exact_dos, free_dirac_dos, generic_potential, moire_bz_grid, moire_path, textbook_layer_shift,
    DiracKinetic, MoirePotential,
};
use moire_core::hscalc::{build_aae, build_quadrature, default_delta_y, HsRule, TestFunction};
use moire_core::lattice::{make_bz_grid, twist_from_degrees, twist_from_eps, Cell, Lattice2D, TwistParams};
use moire_core::linalg::c64;
use moire_core::semiclassical::{dos_coefficients, CoefResult, DensityEvaluator, KappaDisc, SymbolBundle, XGrid};
use moire_core::weylbench::{compose_residual, loglog_slope, trace_check, trace_window, AdTerm, ComposeOptions, Cutoff, LatticeSymbol, RandomSymbolSpec, Window};
use serde::Deserialize;
use serde_json::{json, Value};
use std::path::Path;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<moire_core::Error> for CliError {
    fn from(e: moire_core::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

pub type CmdResult = Result<Report, CliError>;

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub seed: u64,
    pub out: &'a Path,
    pub verbose: bool,
}

impl Ctx<'_> {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn kinetic(cfg: &RunConfig, lat: &Lattice2D) -> Result<DiracKinetic, CliError> {
    let kin = DiracKinetic::new(cfg.vf(), lat)?;
    Ok(if cfg.model.layer_shift == "textbook" { kin.with_layer_shift(textbook_layer_shift(lat)) } else { kin })
}

fn potential(cfg: &RunConfig, lat: &Lattice2D) -> Result<MoirePotential, CliError> {
    let m = &cfg.model;
    Ok(match m.hamiltonian.as_str() {
        "free" => bm_potential(0.0, 0.0, lat)?,
        "generic" => generic_potential(m.w_aa, m.w_ab, m.extra_mode, lat)?,
        _ => bm_potential(m.w_aa, m.w_ab, lat)?,
    })
}

fn test_function(cfg: &RunConfig) -> Result<TestFunction, CliError> {
    let n = &cfg.numerics;
    Ok(match n.f.as_str() {
        "bump" => TestFunction::bump(n.f_center, n.f_half_width)?,
        _ => TestFunction::gauss_bump(n.f_center, n.f_sigma, n.f_half_width)?,
    })
}

fn twist(cfg: &RunConfig) -> Result<TwistParams, CliError> {
    match (cfg.model.eps, cfg.model.theta_deg) {
        (Some(e), _) => Ok(twist_from_eps(e)?),
        (None, Some(t)) => Ok(twist_from_degrees(t)?),
        (None, None) => Err(ConfigError::Missing("model.eps").into()),
    }
}

fn cutoff(cfg: &RunConfig, f: &TestFunction, kin: &DiracKinetic, pot: &MoirePotential) -> f64 {
    cfg.numerics.lambda.unwrap_or_else(|| default_cutoff(f, kin, pot, cfg.numerics.lambda_margin))
}

fn eps_list(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    if cfg.model.eps_list.is_empty() {
        return Err(ConfigError::Invalid("model.eps_list is empty".into()).into());
    }
    Ok(cfg.model.eps_list.clone())
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

pub fn dos_exact(ctx: &Ctx) -> CmdResult {
    let cfg = ctx.cfg;
    let lat = Lattice2D::natural();
    let kin = kinetic(cfg, &lat)?;
    let pot = potential(cfg, &lat)?;
    let f = test_function(cfg)?;
    let lambda = cutoff(cfg, &f, &kin, &pot);
    let closed = pot.is_zero().then(|| free_dirac_dos(&f, kin.vf));
    let mut rep = Report::default();
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for eps in eps_list(cfg)? {
        let tw = twist_from_eps(eps)?;
        let grid = moire_bz_grid(&tw, &pot, cfg.numerics.kgrid)?;
        ctx.note(format!("dos-exact: eps = {eps}, lambda = {lambda}, {} k-points", grid.len()));
        let r = exact_dos(&f, &tw, &kin, &pot, lambda, &grid)?;
        if !(r.error_estimate <= 1e-2 * r.value.abs()) {
            rep.warnings.push(format!("eps = {eps}: grid error estimate {:.3e} exceeds 1% of the value {:.6e}", r.error_estimate, r.value));
        }
        let mut p = json!({ "eps": eps, "value": r.value, "error_estimate": r.error_estimate, "dos": to_value(&r) });
        if let Some(c) = closed {
            p["free_dirac"] = json!(c);
            p["relative_to_free_dirac"] = json!((r.value / c - 1.0).abs());
        }
        rows.push(vec![eps, r.value, r.error_estimate, lambda]);
        points.push(p);
    }
    rep.figures.push(Figure {
        name: "value".into(),
        xlabel: "eps".into(),
        ylabel: "<f, nu>".into(),
        series: vec!["exact".into()],
        x: rows.iter().map(|r| r[0]).collect(),
        ys: rows.iter().map(|r| vec![r[1]]).collect(),
        loglog: false,
    });
    rep.tables.push(Table { name: "points".into(), header: vec!["eps".into(), "value".into(), "error_estimate".into(), "lambda".into()], rows });
    rep.results = json!({ "f": f.describe(), "lambda": lambda, "kgrid": cfg.numerics.kgrid, "points": points });
    Ok(rep)
}

fn partial_sums(c: &[f64; 3], eps: f64) -> [f64; 3] {
    [c[0], c[0] + eps * c[1], c[0] + eps * c[1] + eps * eps * c[2]]
}

pub fn dos_expansion(ctx: &Ctx) -> CmdResult {
    let cfg = ctx.cfg;
    let lat = Lattice2D::natural();
    let kin = kinetic(cfg, &lat)?;
    let pot = potential(cfg, &lat)?;
    let f = test_function(cfg)?;
    let bundle = SymbolBundle::new(&kin, &pot);
    let ev = DensityEvaluator::new(&bundle, &f);
    let disc = KappaDisc::for_support(&f, &bundle, cfg.numerics.kappa_h)?;
    let xg = XGrid::new(&bundle, cfg.numerics.x_grid)?;
    ctx.note(format!("dos-expansion: {} kappa nodes, {} X nodes", disc.nodes.len(), cfg.numerics.x_grid.pow(2)));
    let coefs: [CoefResult; 3] = dos_coefficients(&ev, &disc, &xg)?;
    let mut rep = Report::default();
    for c in &coefs {
        if !(c.defect <= 1e-8) {
            rep.warnings.push(format!("c{}: imaginary defect {:.3e} exceeds 1e-8", c.j, c.defect));
        }
    }
    let cv = [coefs[0].value, coefs[1].value, coefs[2].value];
    let eps = eps_list(cfg)?;
    let sums: Vec<[f64; 3]> = eps.iter().map(|&e| partial_sums(&cv, e)).collect();
    rep.tables.push(Table {
        name: "coefficients".into(),
        header: vec!["j".into(), "value".into(), "defect".into()],
        rows: coefs.iter().map(|c| vec![c.j as f64, c.value, c.defect]).collect(),
    });
    rep.tables.push(Table {
        name: "partial_sums".into(),
        header: vec!["eps".into(), "s0".into(), "s1".into(), "s2".into()],
        rows: eps.iter().zip(&sums).map(|(e, s)| vec![*e, s[0], s[1], s[2]]).collect(),
    });
    rep.figures.push(Figure {
        name: "partial_sums".into(),
        xlabel: "eps".into(),
        ylabel: "partial sum".into(),
        series: vec!["s0".into(), "s1".into(), "s2".into()],
        x: eps.clone(),
        ys: sums.iter().map(|s| s.to_vec()).collect(),
        loglog: false,
    });
    let ps: Vec<Value> = eps.iter().zip(&sums).map(|(e, s)| json!({ "eps": e, "s0": s[0], "s1": s[1], "s2": s[2] })).collect();
    rep.results = json!({ "f": f.describe(), "coefficients": to_value(&coefs), "partial_sums": ps });
    Ok(rep)
}

#[derive(Deserialize)]
struct ExactPoint {
    eps: f64,
    value: f64,
}

#[derive(Deserialize)]
struct SumPoint {
    eps: f64,
    s0: f64,
    s1: f64,
    s2: f64,
}

fn read_results(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Run(format!("cannot read {}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Run(format!("{} is not valid JSON: {e}", path.display())))?;
    if doc["schema_version"] != crate::emit::SCHEMA_VERSION {
        return Err(CliError::Run(format!("{} has schema {}, expected {}", path.display(), doc["schema_version"], crate::emit::SCHEMA_VERSION)));
    }
    Ok(doc["results"].clone())
}

fn parse_list<T: for<'de> Deserialize<'de>>(v: &Value, key: &str, path: &Path) -> Result<Vec<T>, CliError> {
    serde_json::from_value(v[key].clone()).map_err(|e| CliError::Run(format!("{}: bad `{key}`: {e}", path.display())))
}

/// Joins the exact and expansion results found in the output directory and
/// fits `log |exact - s_n|` against `log eps`.
pub fn compare(ctx: &Ctx) -> CmdResult {
    let pe = ctx.out.join("dos_exact.json");
    let px = ctx.out.join("dos_expansion.json");
    let exact: Vec<ExactPoint> = parse_list(&read_results(&pe)?, "points", &pe)?;
    let sums: Vec<SumPoint> = parse_list(&read_results(&px)?, "partial_sums", &px)?;
    let mut rep = Report::default();
    let mut rows = Vec::new();
    for p in &exact {
        match sums.iter().find(|s| (s.eps - p.eps).abs() <= 1e-12 * p.eps.abs()) {
            Some(s) => rows.push([p.eps, p.value, (p.value - s.s0).abs(), (p.value - s.s1).abs(), (p.value - s.s2).abs()]),
            None => rep.warnings.push(format!("eps = {} has no expansion partial sum", p.eps)),
        }
    }
    let eps: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let slopes: Vec<Option<f64>> = (0..3)
        .map(|n| {
            let r: Vec<f64> = rows.iter().map(|row| row[2 + n]).collect();
            (eps.len() >= 2 && r.iter().all(|&x| x > 0.0)).then(|| loglog_slope(&eps, &r))
        })
        .collect();
    if slopes[2].is_none() {
        rep.warnings.push("fewer than two usable points, no slope fitted".into());
    }
    rep.tables.push(Table {
        name: "residuals".into(),
        header: ["eps", "exact", "r0", "r1", "r2"].map(String::from).to_vec(),
        rows: rows.iter().map(|r| r.to_vec()).collect(),
    });
    rep.figures.push(Figure {
        name: "residuals".into(),
        xlabel: "eps".into(),
        ylabel: "|exact - partial sum|".into(),
        series: vec!["j<=0".into(), "j<=1".into(), "j<=2".into()],
        x: eps,
        ys: rows.iter().map(|r| r[2..].to_vec()).collect(),
        loglog: true,
    });
    let points: Vec<Value> = rows.iter().map(|r| json!({ "eps": r[0], "exact": r[1], "r0": r[2], "r1": r[3], "r2": r[4] })).collect();
    rep.results = json!({
        "points": points,
        "slope_j0": slopes[0],
        "slope_j1": slopes[1],
        "slope_j2": slopes[2],
        "slope": slopes[2],
    });
    Ok(rep)
}

pub fn bands(ctx: &Ctx) -> CmdResult {
    let cfg = ctx.cfg;
    let lat = Lattice2D::natural();
    let kin = kinetic(cfg, &lat)?;
    let pot = potential(cfg, &lat)?;
    let tw = twist(cfg)?;
    let f = test_function(cfg)?;
    let lambda = cutoff(cfg, &f, &kin, &pot);
    let path = moire_path(&kin, &tw, &pot, cfg.numerics.path_per_leg);
    ctx.note(format!("bands: {} path points, lambda = {lambda}", path.len()));
    let table = band_structure(&path, &tw, &kin, &pot, lambda)?;
    let width = table.middle_bandwidth();
    let dim = table.bands.iter().map(|b| b.len()).min().unwrap_or(0);
    let mut rep = Report::default();
    // eight bands around the spectral midpoint
    let lo = (dim / 2).saturating_sub(4);
    let hi = (dim / 2 + 4).min(dim);
    rep.figures.push(Figure {
        name: "bands".into(),
        xlabel: "path index".into(),
        ylabel: "E".into(),
        series: (lo..hi).map(|i| format!("E_{}", i + 1)).collect(),
        x: (0..path.len()).map(|i| i as f64).collect(),
        ys: table.bands.iter().map(|b| b[lo..hi].to_vec()).collect(),
        loglog: false,
    });
    rep.raw_csv.push(("bands".into(), table.to_csv()));
    let h = dim / 2;
    let middle: Vec<[f64; 2]> = table.bands.iter().map(|b| [b[h - 1], b[h]]).collect();
    rep.results = json!({
        "theta": tw.theta,
        "eps": tw.eps,
        "lambda": lambda,
        "n_points": path.len(),
        "dim": dim,
        "middle_bandwidth": width,
        "middle_bands": middle,
    });
    Ok(rep)
}

pub fn weyl_verify(ctx: &Ctx) -> CmdResult {
    let w = &ctx.cfg.weyl;
    let lat = Lattice2D::natural();
    let window = Window::new(w.window_half, w.window_margin)?;
    let spec = RandomSymbolSpec { shortest: true, ..Default::default() };
    let mut rep = Report::default();
    let mut pairs = Vec::new();
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); w.eps_list.len()];
    let (mut min_slope, mut max_ablated) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in 0..w.pairs as u64 {
        let (sa, sb) = (ctx.seed + 2 * s, ctx.seed + 2 * s + 1);
        let a = LatticeSymbol::random(&lat, w.fiber.clone(), &spec, sa)?;
        let b = LatticeSymbol::random(&lat, w.fiber.clone(), &spec, sb)?;
        let keep = ComposeOptions::default();
        let drop = ComposeOptions { ad: AdTerm::Drop, ..Default::default() };
        let full = w.eps_list.iter().map(|&e| compose_residual(&a, &b, e, &window, &keep)).collect::<Result<Vec<_>, _>>()?;
        let abl = w.eps_list.iter().map(|&e| compose_residual(&a, &b, e, &window, &drop)).collect::<Result<Vec<_>, _>>()?;
        let (sf, so) = (loglog_slope(&w.eps_list, &full), loglog_slope(&w.eps_list, &abl));
        ctx.note(format!("weyl-verify: pair {s} slope {sf:.3}, ablated {so:.3}"));
        min_slope = min_slope.min(sf);
        max_ablated = max_ablated.max(so);
        for (i, r) in full.iter().enumerate() {
            ys[i].push(*r);
        }
        pairs.push(json!({ "seed_a": sa, "seed_b": sb, "residuals": full, "residuals_ablated": abl, "slope": sf, "slope_ablated": so }));
    }
    if min_slope < 2.7 {
        rep.warnings.push(format!("smallest composition slope {min_slope:.3} is below 2.7"));
    }
    if max_ablated >= 2.3 {
        rep.warnings.push(format!("ablated composition slope {max_ablated:.3} is not below 2.3"));
    }
    let mut unit = LatticeSymbol::scalar(&lat);
    unit.add_entry([0, 0], [0, 0], 0, 0, c64::new(1.0, 0.0))?;
    let mut identity = Vec::new();
    for &n in &w.cutoffs {
        let chi = Cutoff::new(n)?;
        let win = trace_window(&unit, w.trace_eps, &chi)?;
        let t = trace_check(&unit, &chi, w.trace_eps, &win)?;
        let dev = (t.lhs / t.rhs - 1.0).norm();
        if dev > 1.0 / n as f64 {
            rep.warnings.push(format!("trace of the identity at N = {n} deviates by {dev:.3e} > 1/N"));
        }
        identity.push(json!({ "n": n, "lhs": [t.lhs.re, t.lhs.im], "rhs": [t.rhs.re, t.rhs.im], "deviation": dev }));
    }
    let mz_spec = RandomSymbolSpec { mean_zero: true, n_terms: 6, q_max: 2, rho_max: 1, ..Default::default() };
    let n_max = w.cutoffs.iter().copied().max().unwrap_or(16);
    let chi = Cutoff::new(n_max)?;
    let mut mean_zero = Vec::new();
    for s in 0..w.mean_zero_symbols as u64 {
        let sym = LatticeSymbol::random(&lat, w.fiber.clone(), &mz_spec, ctx.seed + s)?;
        let win = trace_window(&sym, w.trace_eps, &chi)?;
        let t = trace_check(&sym, &chi, w.trace_eps, &win)?;
        let ratio = t.lhs.norm() / t.scale;
        if ratio > 1e-3 {
            rep.warnings.push(format!("mean-zero symbol {s}: |lhs|/scale = {ratio:.3e} > 1e-3"));
        }
        mean_zero.push(json!({ "seed": ctx.seed + s, "n": n_max, "ratio": ratio }));
    }
    rep.figures.push(Figure {
        name: "composition".into(),
        xlabel: "eps".into(),
        ylabel: "residual".into(),
        series: (0..w.pairs).map(|i| format!("pair_{i}")).collect(),
        x: w.eps_list.clone(),
        ys,
        loglog: true,
    });
    rep.results = json!({
        "pairs": pairs,
        "min_slope": min_slope,
        "max_slope_ablated": max_ablated,
        "trace_identity": identity,
        "trace_mean_zero": mean_zero,
    });
    Ok(rep)
}

fn synthetic(cfg: &RunConfig, lat: Lattice2D) -> Result<SyntheticPotential, CliError> {
    let a = &cfg.atomic;
    let d = PotentialParams::defaults(lat.a0);
    let p = PotentialParams {
        v0: a.v0.unwrap_or(d.v0),
        sigma_x: a.sigma_x.unwrap_or(d.sigma_x),
        sigma_z: a.sigma_z.unwrap_or(d.sigma_z),
        d: a.d.unwrap_or(d.d),
        vint_amp: a.vint_amp.unwrap_or(d.vint_amp),
        vint_width: a.vint_width.unwrap_or(d.vint_width),
    };
    Ok(SyntheticPotential::new(lat, p)?)
}

pub fn atomic_dos(ctx: &Ctx) -> CmdResult {
    let a = &ctx.cfg.atomic;
    let lat = Lattice2D::natural();
    let pot = synthetic(ctx.cfg, lat)?;
    let disc = AtomicDiscretization::for_potential(&pot, a.gmax, a.h_z)?;
    let fine = disc.refined(&lat, a.refine)?;
    let gk = make_bz_grid(&lat, Cell::Reciprocal, a.nk)?;
    let gx = make_bz_grid(&lat, Cell::Moire, a.nx)?;
    let f = TestFunction::bump(a.f_center, a.f_half_width)?;
    ctx.note(format!("atomic-dos: basis {} (refined {}), {} samples", disc.dim(), fine.dim(), gk.len() * gx.len()));
    let dos = atomic_leading_dos(&f, &disc, &pot, &gk, &gx)?;
    let samples = product_samples(&gk, &gx);
    let scan = rank_bound_scan(a.energy, &disc, &pot, &samples)?;
    let scan_fine = rank_bound_scan(a.energy, &fine, &pot, &samples)?;
    let vd = build_vd(&pot).max_abs();
    let mut rep = Report::default();
    if dos.near_zero_warning {
        rep.warnings.push(format!("support of f comes within twice the box resolution {:.3e} of zero", dos.resolution));
    }
    let lower_ok = scan.min_eigenvalue >= -vd && scan_fine.min_eigenvalue >= -vd;
    if !lower_ok {
        rep.warnings.push(format!("lowest eigenvalue {:.6} is below -max|V_d| = {:.6}", scan.min_eigenvalue.min(scan_fine.min_eigenvalue), -vd));
    }
    let constant = scan.counts.iter().all(|&c| c == scan.m_e);
    if !constant {
        rep.warnings.push(format!("eigenvalue count below E = {} varies across samples", a.energy));
    }
    let stable = scan.counts == scan_fine.counts;
    if !stable {
        rep.warnings.push("eigenvalue counts change under basis refinement".into());
    }
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .zip(scan.counts.iter().zip(&scan_fine.counts))
        .enumerate()
        .map(|(i, ((k, x), (c, cf)))| vec![i as f64, k[0], k[1], x[0], x[1], *c as f64, *cf as f64])
        .collect();
    rep.figures.push(Figure {
        name: "rank_scan".into(),
        xlabel: "sample".into(),
        ylabel: "count".into(),
        series: vec!["base".into(), "refined".into()],
        x: rows.iter().map(|r| r[0]).collect(),
        ys: rows.iter().map(|r| vec![r[5], r[6]]).collect(),
        loglog: false,
    });
    rep.tables.push(Table { name: "rank_scan".into(), header: ["sample", "k1", "k2", "x1", "x2", "count", "count_refined"].map(String::from).to_vec(), rows });
    rep.results = json!({
        "f": f.describe(),
        "leading_dos": to_value(&dos),
        "basis_dim": disc.dim(),
        "refined_basis_dim": fine.dim(),
        "max_abs_vd": vd,
        "min_eigenvalue": scan.min_eigenvalue.min(scan_fine.min_eigenvalue),
        "lower_bound_holds": lower_ok,
        "energy": a.energy,
        "m_e": scan.m_e,
        "m_e_refined": scan_fine.m_e,
        "constant": constant,
        "stable_under_refinement": stable,
    });
    Ok(rep)
}

pub fn ibp_check(ctx: &Ctx) -> CmdResult {
    let cfg = ctx.cfg;
    let a = &cfg.atomic;
    let lat = Lattice2D::natural();
    let pot = synthetic(cfg, lat)?;
    let f = TestFunction::bump(a.f_center, a.f_half_width)?;
    let base = AtomicDiscretization::for_potential(&pot, a.ibp_gmax[0], a.ibp_h_z)?;
    let gx = make_bz_grid(&lat, Cell::Moire, a.ibp_nx)?;
    let route = if a.route == "quadrature" {
        let aae = build_aae(&f, cfg.numerics.aae_order, default_delta_y(&f))?;
        ZetaRoute::Quadrature(HsRule::new(&aae, &build_quadrature(&aae, cfg.numerics.zeta_n, cfg.numerics.zeta_n)?))
    } else {
        ZetaRoute::DividedDifference
    };
    let mut rep = Report::default();
    let mut steps = Vec::new();
    let mut rows = Vec::new();
    for (&g, &nk) in a.ibp_gmax.iter().zip(&a.ibp_nk) {
        let d = base.with_gmax(&lat, g)?;
        let gk = make_bz_grid(&lat, Cell::Reciprocal, nk)?;
        ctx.note(format!("ibp-check: gmax = {g}, basis {}, {nk}x{nk} k-grid", d.dim()));
        let r = ibp_identity_check(&f, &route, &d, &pot, &gk, &gx)?;
        rows.push(vec![g, nk as f64, d.dim() as f64, r.lhs, r.rhs, r.relative_difference]);
        steps.push(json!({ "gmax": g, "kgrid": nk, "basis_dim": d.dim(), "report": to_value(&r) }));
    }
    let rel: Vec<f64> = rows.iter().map(|r| r[5]).collect();
    if rel[0] > 0.05 {
        rep.warnings.push(format!("relative difference {:.3e} at the default truncation exceeds 5%", rel[0]));
    }
    let decreasing = rel.windows(2).all(|w| w[1] < w[0]);
    if !decreasing {
        rep.warnings.push("relative difference does not decrease under refinement".into());
    }
    rep.figures.push(Figure {
        name: "relative_difference".into(),
        xlabel: "gmax".into(),
        ylabel: "relative difference".into(),
        series: vec!["ibp".into()],
        x: rows.iter().map(|r| r[0]).collect(),
        ys: rel.iter().map(|r| vec![*r]).collect(),
        loglog: false,
    });
    rep.tables.push(Table { name: "steps".into(), header: ["gmax", "kgrid", "basis_dim", "lhs", "rhs", "relative_difference"].map(String::from).to_vec(), rows });
    rep.results = json!({ "f": f.describe(), "route": a.route, "steps": steps, "decreasing": decreasing });
    Ok(rep)
}
