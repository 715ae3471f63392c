use std::path::{Path, PathBuf};

use pellet::collocation::{build_grid, CollocationGrid, PelletState};
use pellet::loci::{continue_hb_locus, continue_lp_locus, LocusKind, LocusSettings, TwoParamLocus};
use pellet::model::ModelParams;
use pellet::periodic::{
    continue_hcl_locus, cycles_from_hopf, detect_homoclinic, CycleBranch, CycleEnd, CycleStability, HomoclinicPoint,
};
use pellet::simulate::{
    basin_probe, locate_homoclinic, seed_state, trace_homoclinic, Landscape, ManifoldHomoclinic, ManifoldSettings,
    ManifoldTraceSettings, SimulationOptions,
};
use pellet::steady::{continue_branch, Branch, BranchPoint, BranchSettings, Stability};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{num, write_file, Csv, Plot, Series, Style};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const BRANCH_FILE: &str = "branch.json";
pub const HOMOCLINIC_FILE: &str = "homoclinic.json";

struct Context {
    cfg: RunConfig,
    grid: CollocationGrid,
    params: ModelParams,
    header: Vec<String>,
}

impl Context {
    fn new(cfg: &RunConfig, command: &str) -> Result<Self, CliError> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
        let grid = build_grid(cfg.model.a, cfg.grid_n)?;
        let header = vec![
            format!("pellet {VERSION}"),
            format!("command {command}"),
            format!("grid_n {}", cfg.grid_n),
            format!("config {}", cfg.provenance()),
        ];
        Ok(Context {
            cfg: cfg.clone(),
            grid,
            params: cfg.params(),
            header,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn csv(&self, columns: &[&str]) -> Csv {
        Csv::new(&self.header, columns)
    }

    fn theta0_bounds(&self) -> (f64, f64) {
        let [a, b] = self.cfg.branch.theta0_range;
        (a.min(b), a.max(b))
    }
}

/// Steady branch saved by `branch` for the commands that need its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub grid_n: usize,
    pub branch: Branch,
    pub cycle_ends: Vec<CycleEnd>,
}

/// A located homoclinic parameter, by whichever method found it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum HomoclinicRecord {
    PeriodFit(HomoclinicPoint),
    Manifold(ManifoldHomoclinic),
}

impl HomoclinicRecord {
    pub fn gamma(&self) -> f64 {
        match self {
            HomoclinicRecord::PeriodFit(h) => h.gamma,
            HomoclinicRecord::Manifold(h) => h.gamma,
        }
    }

    pub fn theta0(&self) -> f64 {
        match self {
            HomoclinicRecord::PeriodFit(h) => h.theta0,
            HomoclinicRecord::Manifold(h) => h.theta0,
        }
    }
}

fn to_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("record serializes");
    write_file(path, &(text + "\n"))
}

fn load_branch(ctx: &Context) -> Result<BranchRecord, CliError> {
    let path = ctx.path(BRANCH_FILE);
    if !path.exists() {
        return Err(CliError::MissingInput(format!(
            "no seed points: {} does not exist; run `pellet branch` with the same config first",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let rec: BranchRecord = serde_json::from_str(&text).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let p = rec.branch.params;
    let same = rec.grid_n == ctx.cfg.grid_n
        && p.a == ctx.params.a
        && p.n == ctx.params.n
        && p.beta_star == ctx.params.beta_star
        && p.gamma == ctx.params.gamma
        && p.lewis == ctx.params.lewis;
    if !same {
        return Err(CliError::MissingInput(format!(
            "{} was computed for other model constants or grid; rerun `pellet branch` with this config",
            path.display()
        )));
    }
    Ok(rec)
}

fn cycle_branches(ctx: &Context, branch: &Branch) -> Result<Vec<(usize, CycleBranch)>, CliError> {
    let settings = ctx.cfg.shooting();
    let mut out: Vec<(usize, CycleBranch)> = vec![];
    for (i, hb) in branch.hopf_points().into_iter().enumerate() {
        // a branch that already closed on this Hopf point is the same branch
        let seen = out.iter().any(|(_, cb)| {
            cb.end == CycleEnd::ReturnedToHopf && cb.orbits.last().is_some_and(|o| (o.theta0 - hb.theta0).abs() < 1e-4)
        });
        if seen {
            continue;
        }
        let cb = cycles_from_hopf(
            hb,
            &branch.params,
            ctx.cfg.branch.hopf_epsilon,
            ctx.theta0_bounds(),
            &ctx.grid,
            &settings,
        )?;
        out.push((i, cb));
    }
    Ok(out)
}

fn cycles_csv(ctx: &Context, cycles: &[(usize, CycleBranch)]) -> Csv {
    let mut csv = ctx.csv(&[
        "theta0",
        "period",
        "theta_min",
        "theta_max",
        "eta_min",
        "eta_max",
        "stability",
        "hopf",
    ]);
    for (i, cb) in cycles {
        for o in &cb.orbits {
            let a = &o.amplitude;
            csv.row(&[
                num(o.theta0),
                num(o.period),
                num(a.theta_min),
                num(a.theta_max),
                num(a.eta_min),
                num(a.eta_max),
                o.stability.as_str().into(),
                i.to_string(),
            ]);
        }
    }
    csv
}

/// Splits consecutive items into runs sharing a flag.
fn runs<T>(items: &[T], flag: impl Fn(&T) -> bool) -> Vec<(bool, Vec<&T>)> {
    let mut out: Vec<(bool, Vec<&T>)> = vec![];
    for it in items {
        let f = flag(it);
        match out.last_mut() {
            Some((g, run)) if *g == f => run.push(it),
            _ => out.push((f, vec![it])),
        }
    }
    out
}

/// Steady branch and the cycle branches born on it.
pub fn branch(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(cfg, "branch")?;
    let [start, end] = cfg.branch.theta0_range;
    let p = ctx.params.with_theta0(start);
    let seed = PelletState::flat(&ctx.grid, cfg.branch.seed_z);
    let b = continue_branch(&p, (start, end), &seed, &ctx.grid, &BranchSettings::default())?;

    let mut steady = ctx.csv(&["theta0", "theta", "eta", "z", "stability", "label"]);
    for q in &b.points {
        steady.row(&[
            num(q.theta0),
            num(q.theta),
            num(q.eta),
            num(q.state.z),
            q.stability.as_str().into(),
            q.label.as_str().into(),
        ]);
    }
    steady.write(&ctx.path("steady.csv"))?;

    let cycles = if cfg.branch.cycles {
        cycle_branches(&ctx, &b)?
    } else {
        vec![]
    };
    if cfg.branch.cycles {
        cycles_csv(&ctx, &cycles).write(&ctx.path("cycles.csv"))?;
    }

    let mut series = vec![];
    for (stable, run) in runs(&b.points, |q| q.stability == Stability::Stable) {
        let (name, style) = if stable {
            ("steady-stable", Style::Solid)
        } else {
            ("steady-unstable", Style::Dashed)
        };
        series.push(Series {
            name: name.into(),
            style,
            points: run.iter().map(|q| (q.theta0, q.theta)).collect(),
        });
    }
    for (_, cb) in &cycles {
        for (stable, run) in runs(&cb.orbits, |o| o.stability == CycleStability::Stable) {
            let (name, style) = if stable {
                ("cycle-stable", Style::FilledDots)
            } else {
                ("cycle-unstable", Style::OpenDots)
            };
            let upper = run.iter().map(|o| (o.theta0, o.amplitude.theta_max)).collect();
            let lower = run.iter().map(|o| (o.theta0, o.amplitude.theta_min)).collect();
            for points in [upper, lower] {
                series.push(Series {
                    name: name.into(),
                    style,
                    points,
                });
            }
        }
    }
    Plot {
        title: format!(
            "solution diagram, gamma = {}, Le = {}",
            cfg.model.gamma, cfg.model.lewis
        ),
        x_label: "theta0".into(),
        y_label: "theta".into(),
        series,
    }
    .write(&ctx.path("branch.svg"))?;

    let rec = BranchRecord {
        grid_n: cfg.grid_n,
        branch: b,
        cycle_ends: cycles.iter().map(|(_, cb)| cb.end).collect(),
    };
    to_json(&ctx.path(BRANCH_FILE), &rec)
}

fn nearest_saddle(branch: &Branch, theta0: f64) -> Option<&BranchPoint> {
    branch
        .points
        .iter()
        .filter(|q| q.stability == Stability::Saddle)
        .min_by(|a, b| (a.theta0 - theta0).abs().total_cmp(&(b.theta0 - theta0).abs()))
}

fn manifold_settings(cfg: &RunConfig) -> ManifoldSettings {
    ManifoldSettings {
        simulation: SimulationOptions::with_rtol(cfg.rtol),
        ..ManifoldSettings::default()
    }
}

fn locate(ctx: &Context, branch: &Branch, bracket: (f64, f64)) -> Result<ManifoldHomoclinic, CliError> {
    let mid = 0.5 * (bracket.0 + bracket.1);
    let saddle = nearest_saddle(branch, mid)
        .ok_or_else(|| CliError::MissingInput("the steady branch has no saddle to search from".into()))?;
    Ok(locate_homoclinic(
        &ctx.params,
        &ctx.grid,
        bracket,
        saddle.state.z,
        &manifold_settings(&ctx.cfg),
    )?)
}

/// Cycle branches with their homoclinic end points.
pub fn cycles(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(cfg, "cycles")?;
    let rec = load_branch(&ctx)?;
    let b = &rec.branch;
    let cbs = cycle_branches(&ctx, b)?;
    cycles_csv(&ctx, &cbs).write(&ctx.path("cycles.csv"))?;

    let mut found: Vec<HomoclinicRecord> = vec![];
    let settings = ctx.cfg.shooting();
    for (i, cb) in &cbs {
        match detect_homoclinic(cb, b, &ctx.grid, &settings) {
            Ok(h) => found.push(HomoclinicRecord::PeriodFit(h)),
            Err(e) => {
                let Some(last) = cb.orbits.last() else { continue };
                if matches!(cb.end, CycleEnd::ReturnedToHopf | CycleEnd::RangeExhausted) {
                    continue;
                }
                let w = cfg.cycles.fallback_half_width;
                match locate(&ctx, b, (last.theta0 - w, last.theta0 + w)) {
                    Ok(h) => found.push(HomoclinicRecord::Manifold(h)),
                    Err(e2) => eprintln!("cycle branch from Hopf point {i}: no homoclinic end ({e}; {e2})"),
                }
            }
        }
    }
    for r in &cfg.cycles.brackets {
        found.push(HomoclinicRecord::Manifold(locate(&ctx, b, (r[0], r[1]))?));
    }
    let mut unique: Vec<HomoclinicRecord> = vec![];
    for h in found {
        if !unique.iter().any(|u| (u.theta0() - h.theta0()).abs() < 1e-5) {
            unique.push(h);
        }
    }

    let mut csv = ctx.csv(&[
        "method",
        "gamma",
        "theta0",
        "orbit_kind",
        "lambda_u",
        "fit_slope",
        "saddle_eta",
        "saddle_theta",
    ]);
    for h in &unique {
        match h {
            HomoclinicRecord::PeriodFit(h) => csv.row(&[
                "period-fit".into(),
                num(h.gamma),
                num(h.theta0),
                h.orbit_kind.as_str().into(),
                num(h.lambda_u),
                num(h.fit_slope),
                num(h.saddle.eta),
                num(h.saddle.theta),
            ]),
            HomoclinicRecord::Manifold(h) => csv.row(&[
                "manifold".into(),
                num(h.gamma),
                num(h.theta0),
                "unclassified".into(),
                num(h.lambda_u),
                String::new(),
                num(h.saddle.eta),
                num(h.saddle.theta),
            ]),
        }
    }
    csv.write(&ctx.path("homoclinic.csv"))?;
    to_json(&ctx.path(HOMOCLINIC_FILE), &unique)
}

fn covers(loci: &[TwoParamLocus], gamma: f64, theta0: f64) -> bool {
    // interpolated between continuation steps, so only roughly
    loci.iter()
        .any(|l| l.theta0_at(gamma).iter().any(|t| (t - theta0).abs() < 1e-4))
}

/// Fold, Hopf and homoclinic curves in the `(gamma, theta0)` plane.
pub fn loci(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(cfg, "loci")?;
    let rec = load_branch(&ctx)?;
    let b = &rec.branch;
    let range = (cfg.loci.gamma_range[0], cfg.loci.gamma_range[1]);
    let settings = LocusSettings {
        stop_at_cusp: cfg.loci.stop_at_cusp,
        ..LocusSettings::default()
    };
    let g0 = b.params.gamma;
    let mut loci: Vec<TwoParamLocus> = vec![];
    if cfg.loci.lp {
        let mut lp: Vec<TwoParamLocus> = vec![];
        for q in b.limit_points() {
            if !covers(&lp, g0, q.theta0) {
                lp.push(continue_lp_locus(&b.params_at(q), range, q, &ctx.grid, &settings)?);
            }
        }
        loci.extend(lp);
    }
    if cfg.loci.hb {
        let mut hb: Vec<TwoParamLocus> = vec![];
        for q in b.hopf_points() {
            if !covers(&hb, g0, q.theta0) {
                hb.push(continue_hb_locus(&b.params_at(q), range, q, &ctx.grid, &settings)?);
            }
        }
        loci.extend(hb);
    }
    let hom_path = ctx.path(HOMOCLINIC_FILE);
    if cfg.loci.hcl && hom_path.exists() {
        let text = std::fs::read_to_string(&hom_path).map_err(|e| CliError::io(&hom_path, e))?;
        let records: Vec<HomoclinicRecord> = serde_json::from_str(&text).map_err(|e| CliError::Io {
            path: hom_path.display().to_string(),
            message: e.to_string(),
        })?;
        let [lo, hi] = cfg.hcl_gamma_range();
        for r in &records {
            match r {
                HomoclinicRecord::PeriodFit(h) => {
                    loci.push(continue_hcl_locus(
                        h,
                        &ctx.params,
                        (lo, hi),
                        &ctx.grid,
                        &ctx.cfg.shooting(),
                    )?);
                }
                HomoclinicRecord::Manifold(h) => {
                    for end in [lo, hi] {
                        if end != h.gamma {
                            loci.push(trace_homoclinic(
                                &ctx.params,
                                &ctx.grid,
                                h,
                                end,
                                &ManifoldTraceSettings::default(),
                                &manifold_settings(cfg),
                            )?);
                        }
                    }
                }
            }
        }
    } else if cfg.loci.hcl {
        eprintln!(
            "no {} yet; run `pellet cycles` to add homoclinic curves",
            hom_path.display()
        );
    }

    let mut csv = ctx.csv(&["kind", "gamma", "theta0", "curve"]);
    let mut specials = ctx.csv(&["curve", "kind", "gamma", "theta0"]);
    let mut series = vec![];
    for (i, l) in loci.iter().enumerate() {
        for q in &l.points {
            csv.row(&[l.kind.as_str().into(), num(q.gamma), num(q.theta0), i.to_string()]);
        }
        for s in &l.special {
            let kind = serde_json::to_value(s.kind)
                .unwrap()
                .as_str()
                .unwrap_or_default()
                .to_string();
            specials.row(&[i.to_string(), kind, num(s.gamma), num(s.theta0)]);
        }
        let style = match l.kind {
            LocusKind::LP => Style::Solid,
            LocusKind::HB => Style::Dashed,
            LocusKind::Hcl => Style::Dotted,
        };
        series.push(Series {
            name: l.kind.as_str().into(),
            style,
            points: l.points.iter().map(|q| (q.gamma, q.theta0)).collect(),
        });
    }
    csv.write(&ctx.path("loci.csv"))?;
    specials.write(&ctx.path("specials.csv"))?;
    Plot {
        title: format!("bifurcation diagram, Le = {}", cfg.model.lewis),
        x_label: "gamma".into(),
        y_label: "theta0".into(),
        series,
    }
    .write(&ctx.path("loci.svg"))
}

/// Trajectories from the configured seeds, their fates and the steady
/// states they move among.
pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(cfg, "simulate")?;
    let land = Landscape::new(&ctx.params, &ctx.grid)?;
    let seeds = cfg
        .simulate
        .seeds
        .iter()
        .map(|s| seed_state(&ctx.params, &ctx.grid, s.eta, s.z))
        .collect::<pellet::Result<Vec<_>>>()?;
    let probes = basin_probe(
        &ctx.params,
        &ctx.grid,
        &seeds,
        cfg.simulate.tau_end,
        &cfg.simulation(),
        &cfg.simulate.criteria,
    )?;

    let mut markers = ctx.csv(&["eta", "theta", "z", "stability"]);
    for q in &land.points {
        markers.row(&[num(q.eta), num(q.theta), num(q.state.z), q.stability.as_str().into()]);
    }
    markers.write(&ctx.path("steady_markers.csv"))?;

    let mut fates = ctx.csv(&["seed", "eta0", "z0", "fate", "tau_end"]);
    let mut series = vec![];
    for (i, (probe, seed)) in probes.iter().zip(&cfg.simulate.seeds).enumerate() {
        let t = &probe.trajectory;
        let mut csv = ctx.csv(&["tau", "eta", "theta", "z"]);
        for k in 0..t.len() {
            csv.row(&[num(t.times[k]), num(t.eta[k]), num(t.theta[k]), num(t.states[k].z)]);
        }
        csv.write(&ctx.path(&format!("trajectory_{i:03}.csv")))?;
        fates.row(&[
            i.to_string(),
            num(seed.eta),
            num(seed.z),
            probe.fate.as_str().into(),
            num(*t.times.last().unwrap()),
        ]);
        series.push(Series {
            name: format!("trajectory-{i}"),
            style: Style::Arrow,
            points: t.eta.iter().copied().zip(t.theta.iter().copied()).collect(),
        });
    }
    fates.write(&ctx.path("fates.csv"))?;
    let (stable, other): (Vec<&BranchPoint>, Vec<&BranchPoint>) =
        land.points.iter().partition(|q| q.stability == Stability::Stable);
    series.push(Series {
        name: "steady-stable".into(),
        style: Style::FilledDots,
        points: stable.iter().map(|q| (q.eta, q.theta)).collect(),
    });
    series.push(Series {
        name: "steady-unstable".into(),
        style: Style::OpenDots,
        points: other.iter().map(|q| (q.eta, q.theta)).collect(),
    });
    Plot {
        title: format!(
            "phase diagram, gamma = {}, Le = {}, theta0 = {}",
            cfg.model.gamma, cfg.model.lewis, cfg.model.theta0
        ),
        x_label: "eta".into(),
        y_label: "theta".into(),
        series,
    }
    .write(&ctx.path("phase.svg"))
}
