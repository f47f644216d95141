//! One runner per command. Each writes `results.csv` and `plot.svg` (plus
//! command-specific extras) into the output directory and returns a JSON
//! summary for the manifest.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use divkernel::conditioning::{BinRow, ConditionalTable};
use divkernel::fit::{sub_seed, DATA_STREAM};
use divkernel::linresp::orbit_trace;
use divkernel::oracle::{ergodic_fd_oracle, fd_log_density, ou_analytic, quadrature_bin_response, FdConfig, OneStepSystem, OuMarginal};
use divkernel::{
    ergodic_linear_response, estimate_linear_response, estimate_score, fit, generate_dataset, get_model, simulate_ensemble, AlphaSchedule, BinSpec, Dataset,
    DivergenceKernel, ErgodicConfig, Execution, FitConfig, ModelInstance, ModelParams, NoHook, Observable, PathConfig, PathEnsemble,
};
use serde_json::{json, Value};

use crate::config::{BinsSection, Command, Config, ConfigError, ObservableKind, OracleKind, SimulationSection, Stepping};
use crate::svg::{Figure, Series, Style};
use crate::tables::{write_ergodic, write_series, ErgodicRow, NamedTable};

/// Anything that stops a run, with the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(divkernel::Error),
    Io(String),
}

impl CliError {
    /// 2 for bad input, 3 for numerical failure, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        use divkernel::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::UnknownModel(_) | E::DimensionMismatch { .. } | E::InvalidConfig(_) | E::Unsupported(_)) => 2,
            CliError::Core(E::TooManyNeighbors { .. } | E::EmptyPointSet) => 2,
            CliError::Core(E::NonPositiveSigma { .. } | E::BlowUpBudget { .. } | E::SingularJacobian | E::Quadrature(_) | E::NonFinite(_)) => 3,
            CliError::Core(E::Csv(_)) | CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config: {e}"),
            CliError::Core(e) => e.fmt(f),
            CliError::Io(e) => f.write_str(e),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<divkernel::Error> for CliError {
    fn from(e: divkernel::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Files written and the headline numbers of a run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub summary: Value,
}

struct Writer<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
}

impl Writer<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn series(&mut self, tables: &[NamedTable]) -> Result<()> {
        write_series(self.create("results.csv")?, tables).map_err(CliError::Io)
    }
}

fn model(cfg: &Config) -> Result<ModelInstance> {
    let m = &cfg.model;
    let n = divkernel::model::family_n_params(&m.name, m.dim)?;
    Ok(get_model(&m.name, ModelParams::new(m.gamma.clone().unwrap_or_else(|| vec![0.0; n]), m.dim))?)
}

fn missing(section: &str) -> CliError {
    CliError::Config(ConfigError { message: format!("missing [{section}] section"), line: None })
}

fn sim(cfg: &Config) -> Result<&SimulationSection> {
    cfg.simulation.as_ref().ok_or_else(|| missing("simulation"))
}

fn bins(cfg: &Config) -> Result<(&BinsSection, BinSpec)> {
    let b = cfg.bins.as_ref().ok_or_else(|| missing("bins"))?;
    Ok((b, BinSpec::new(b.lo, b.hi, b.count)?.with_min_count(b.min_count)))
}

fn n_steps(horizon: f64, dt: f64) -> usize {
    ((horizon / dt).round() as usize).max(1)
}

fn directions(given: &Option<Vec<Vec<f64>>>, m: &ModelInstance) -> Vec<Vec<f64>> {
    given.clone().unwrap_or_else(|| (0..m.n_params()).map(|j| m.coordinate_direction(j)).collect())
}

fn kernel(s: &SimulationSection, stepping: Stepping) -> Result<DivergenceKernel> {
    let alpha = AlphaSchedule::constant(s.alpha)?;
    Ok(match stepping {
        Stepping::Continuous => DivergenceKernel::continuous(alpha),
        Stepping::Discrete => DivergenceKernel::discrete(alpha, Default::default(), Default::default()),
    })
}

fn kernel_ensemble(cfg: &Config, m: &ModelInstance, dirs: Vec<Vec<f64>>, steps: usize, stepping: Stepping) -> Result<PathEnsemble> {
    let s = sim(cfg)?;
    let pc = PathConfig::new(m, s.dt, steps, s.paths, cfg.seed).with_directions(dirs);
    Ok(simulate_ensemble(&pc, &kernel(s, stepping)?)?)
}

fn table_series(t: &NamedTable) -> Series {
    let mut s = Series::new(&t.name, Style::Markers);
    s.points = t.table.rows.iter().filter_map(|r| Some((r.center(), r.mean?, r.se))).collect();
    s
}

fn reported(t: &ConditionalTable) -> usize {
    t.rows.iter().filter(|r| r.mean.is_some()).count()
}

fn ensemble_summary(e: &PathEnsemble) -> Value {
    json!({ "paths_kept": e.len(), "paths_excluded": e.n_excluded })
}

/// Runs `command` and writes its outputs into `dir`, which must exist.
pub fn execute(command: Command, cfg: &Config, dir: &Path) -> Result<Outcome> {
    let mut w = Writer { dir, outputs: Vec::new() };
    let summary = match command {
        Command::Simulate => simulate(cfg, &mut w)?,
        Command::Score | Command::Linresp => binned(cfg, command, &mut w)?,
        Command::Ergodic => ergodic(cfg, &mut w)?,
        Command::Oracle => oracle(cfg, &mut w)?,
        Command::Fit => fitting(cfg, &mut w)?,
    };
    Ok(Outcome { outputs: w.outputs, summary })
}

fn simulate(cfg: &Config, w: &mut Writer<'_>) -> Result<Value> {
    let m = model(cfg)?;
    let s = sim(cfg)?;
    let ens = simulate_ensemble(&PathConfig::new(&m, s.dt, n_steps(s.horizon, s.dt), s.paths, cfg.seed), &NoHook)?;
    let mut wr = csv::Writer::from_writer(w.create("results.csv")?);
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let mut header = vec!["path".to_string()];
    header.extend((0..m.dim()).map(|i| format!("x{i}")));
    wr.write_record(&header).map_err(io)?;
    for p in &ens.paths {
        let mut row = vec![p.path_index.to_string()];
        row.extend(p.x.iter().map(|v| v.to_string()));
        wr.write_record(&row).map_err(io)?;
    }
    wr.flush()?;
    drop(wr);
    let coord = cfg.bins.as_ref().map_or(0, |b| b.coord);
    let mut fig = Figure::new(format!("{} at T = {}", m.name, s.horizon), format!("x{coord}"), "density");
    if let Ok((_, spec)) = bins(cfg) {
        let xs = ens.final_coord(coord);
        let mut counts = vec![0usize; spec.n_bins];
        for x in &xs {
            if let Some(k) = spec.index_of(*x) {
                counts[k] += 1;
            }
        }
        let scale = 1.0 / (ens.len() as f64 * spec.width());
        let mut hist = Series::new("histogram", Style::Markers);
        hist.points = counts.iter().enumerate().map(|(k, &c)| (spec.center(k), c as f64 * scale, Some((c as f64).sqrt() * scale))).collect();
        fig.series.push(hist);
    }
    w.text("plot.svg", &fig.render())?;
    Ok(ensemble_summary(&ens))
}

fn binned(cfg: &Config, command: Command, w: &mut Writer<'_>) -> Result<Value> {
    let m = model(cfg)?;
    let s = sim(cfg)?;
    let (b, spec) = bins(cfg)?;
    let dirs = if command == Command::Linresp { directions(&s.directions, &m) } else { Vec::new() };
    let ens = kernel_ensemble(cfg, &m, dirs.clone(), n_steps(s.horizon, s.dt), s.stepping)?;
    let mut tables = vec![NamedTable { name: "score".into(), table: estimate_score(&ens, &spec, b.coord) }];
    for d in 0..dirs.len() {
        tables.push(NamedTable { name: format!("d{d}"), table: estimate_linear_response(&ens, &spec, d, b.coord) });
    }
    w.series(&tables)?;
    let mut fig = Figure::new(format!("{} at T = {}", m.name, s.horizon), format!("x{}", b.coord), "conditional mean");
    fig.series.extend(tables.iter().map(table_series));
    w.text("plot.svg", &fig.render())?;
    let mut summary = ensemble_summary(&ens);
    summary["bins_reported"] = json!(tables.iter().map(|t| (t.name.clone(), json!(reported(&t.table)))).collect::<serde_json::Map<_, _>>());
    summary["directions"] = json!(dirs);
    Ok(summary)
}

fn observable(kind: ObservableKind, coord: usize) -> Observable {
    match kind {
        ObservableKind::MeanSquare => Observable::MeanSquare,
        ObservableKind::Coordinate => Observable::Coordinate(coord),
        ObservableKind::CoordinateSquared => Observable::CoordinateSquared(coord),
    }
}

fn ergodic(cfg: &Config, w: &mut Writer<'_>) -> Result<Value> {
    let m = model(cfg)?;
    let e = cfg.ergodic.as_ref().ok_or_else(|| missing("ergodic"))?;
    let dirs = directions(&e.directions, &m);
    let mut ec = ErgodicConfig::new(&m, e.dt, e.window, e.horizon, e.orbits, AlphaSchedule::constant(e.alpha)?, observable(e.observable, e.coord))
        .with_directions(dirs.clone())
        .with_seed(cfg.seed);
    if let Some(b) = e.burn_in {
        ec = ec.with_burn_in(b);
    }
    let res = ergodic_linear_response(&ec)?;
    let mut rows = Vec::new();
    for (i, o) in res.per_orbit.iter().enumerate() {
        for (d, r) in o.responses.iter().enumerate() {
            rows.push(ErgodicRow { label: i.to_string(), direction: d, phi_avg: Some(o.phi_avg), response: *r, se: None });
        }
    }
    for d in 0..dirs.len() {
        rows.push(ErgodicRow { label: "combined".into(), direction: d, phi_avg: Some(res.phi_avg), response: res.responses[d], se: Some(res.ses[d]) });
    }
    let mut fd = Vec::new();
    if let Some(dg) = e.fd_dgamma {
        for (d, dir) in dirs.iter().enumerate() {
            let r = ergodic_fd_oracle(&ec, dir, dg)?;
            rows.push(ErgodicRow { label: "fd".into(), direction: d, phi_avg: None, response: r.estimate, se: Some(r.se) });
            fd.push(json!({ "direction": d, "estimate": r.estimate, "se": r.se, "dgamma": dg }));
        }
    }
    write_ergodic(w.create("results.csv")?, &rows).map_err(CliError::Io)?;

    let mut fig = Figure::new(format!("{} response of <phi>", m.name), "direction", "d<phi>/dgamma");
    let mut dk = Series::new("divergence kernel", Style::Markers);
    dk.points = (0..dirs.len()).map(|d| (d as f64, res.responses[d], Some(res.ses[d]))).collect();
    fig.series.push(dk);
    let fd_rows: Vec<_> = rows.iter().filter(|r| r.label == "fd").collect();
    if !fd_rows.is_empty() {
        let mut s = Series::new("finite difference", Style::Markers);
        // nudged right so the bars do not overlap
        s.points = fd_rows.iter().map(|r| (r.direction as f64 + 0.15, r.response, r.se)).collect();
        fig.series.push(s);
    }
    w.text("plot.svg", &fig.render())?;

    if let Some(dur) = e.trace_duration {
        let steps = n_steps(dur, e.dt);
        let stride = (steps / 2000).max(1);
        let trace = orbit_trace(&ec, 0, dur, stride)?;
        let dim = m.dim();
        let mut wr = csv::Writer::from_writer(w.create("trace.csv")?);
        let io = |e: csv::Error| CliError::Io(e.to_string());
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        wr.write_record(&header).map_err(io)?;
        let mut line = Series::new(format!("x{}", e.coord), Style::Line);
        for (n, x) in trace.chunks(dim).enumerate() {
            let t = n as f64 * stride as f64 * e.dt;
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            wr.write_record(&row).map_err(io)?;
            line.points.push((t, x[e.coord.min(dim - 1)], None));
        }
        wr.flush()?;
        let mut tf = Figure::new(format!("{} orbit 0 after burn-in", m.name), "t", format!("x{}", e.coord));
        tf.series.push(line);
        w.text("trace.svg", &tf.render())?;
    }
    Ok(json!({
        "phi_avg": res.phi_avg,
        "phi_avg_se": res.phi_avg_se,
        "responses": res.responses,
        "ses": res.ses,
        "fd": fd,
    }))
}

/// Simpson average of `f` weighted by the OU marginal over `[lo, hi]`.
fn ou_bin_average(ou: &OuMarginal, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = 400;
    let h = (hi - lo) / n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let p = ou.log_density(x).exp();
        num += w * p * f(x);
        den += w * p;
    }
    num / den
}

/// A reference curve as a table: one value per bin, no counts or errors.
fn reference_table(spec: &BinSpec, values: impl Fn(usize, f64, f64) -> Option<f64>) -> ConditionalTable {
    let rows = (0..spec.n_bins)
        .map(|k| {
            let (left, right) = spec.edges(k);
            BinRow { left, right, count: 0, mean: values(k, left, right), se: None, log_density: None }
        })
        .collect();
    ConditionalTable { rows, out_of_range: 0, total: 0 }
}

fn oracle(cfg: &Config, w: &mut Writer<'_>) -> Result<Value> {
    let m = model(cfg)?;
    let s = sim(cfg)?;
    let (b, spec) = bins(cfg)?;
    let o = cfg.oracle.as_ref().ok_or_else(|| missing("oracle"))?;
    let dir = o.direction.clone().unwrap_or_else(|| m.coordinate_direction(0));
    let steps = n_steps(s.horizon, s.dt);
    let mut tables = Vec::new();
    let kernel_table = |dirs: Vec<Vec<f64>>, steps: usize, stepping: Stepping| -> Result<Vec<NamedTable>> {
        let ens = kernel_ensemble(cfg, &m, dirs.clone(), steps, stepping)?;
        let mut t = Vec::new();
        if o.kind == OracleKind::Ou {
            t.push(NamedTable { name: "score".into(), table: estimate_score(&ens, &spec, b.coord) });
        }
        for d in 0..dirs.len() {
            t.push(NamedTable { name: format!("kernel_d{d}"), table: estimate_linear_response(&ens, &spec, d, b.coord) });
        }
        Ok(t)
    };
    match o.kind {
        OracleKind::Fd => {
            let fc = FdConfig {
                model: &m,
                direction: dir.clone(),
                eps: o.eps,
                dt: s.dt,
                n_steps: steps,
                n_paths: s.paths,
                seed: cfg.seed,
                coord: b.coord,
                execution: Execution::Parallel,
            };
            let fd = fd_log_density(&fc, &spec)?;
            tables.extend(kernel_table(vec![dir.clone()], steps, s.stepping)?);
            tables.push(NamedTable { name: "fd_eps".into(), table: fd.at_eps });
            tables.push(NamedTable { name: "fd_2eps".into(), table: fd.at_2eps });
        }
        OracleKind::Quadrature => {
            // exactly one Euler step, so the kernel side uses the discrete
            // update; the continuous one is off by O(dt) after a single step
            let sys = OneStepSystem::euler(&m, s.dt, &dir)?;
            let q = quadrature_bin_response(&sys, 0.0, &spec, o.per_bin)?;
            tables.extend(kernel_table(vec![dir.clone()], 1, Stepping::Discrete)?);
            tables.push(NamedTable { name: "quadrature".into(), table: reference_table(&spec, |k, _, _| Some(q[k])) });
        }
        OracleKind::Ou => {
            let g = m.gamma();
            let ou = ou_analytic(steps as f64 * s.dt, m.init.mean[0], m.init.var, g[0], 1.0 + g[1]);
            tables.extend(kernel_table(vec![m.coordinate_direction(0), m.coordinate_direction(1)], steps, s.stepping)?);
            tables.push(NamedTable { name: "ou_score".into(), table: reference_table(&spec, |_, l, r| Some(ou_bin_average(&ou, l, r, |x| ou.score(x)))) });
            tables.push(NamedTable {
                name: "ou_drift".into(),
                table: reference_table(&spec, |_, l, r| Some(ou_bin_average(&ou, l, r, |x| ou.delta_log_h_drift(x)))),
            });
            tables.push(NamedTable {
                name: "ou_sigma".into(),
                table: reference_table(&spec, |_, l, r| Some(ou_bin_average(&ou, l, r, |x| ou.delta_log_h_sigma(x)))),
            });
        }
    }
    w.series(&tables)?;
    let mut fig = Figure::new(format!("{} oracle check", m.name), format!("x{}", b.coord), "conditional mean");
    for t in &tables {
        let mut s = table_series(t);
        if t.table.total == 0 {
            s.style = Style::Line;
        }
        fig.series.push(s);
    }
    w.text("plot.svg", &fig.render())?;
    Ok(json!({
        "kind": format!("{:?}", o.kind).to_lowercase(),
        "direction": dir,
        "bins_reported": tables.iter().map(|t| (t.name.clone(), json!(reported(&t.table)))).collect::<serde_json::Map<_, _>>(),
    }))
}

fn fitting(cfg: &Config, w: &mut Writer<'_>) -> Result<Value> {
    let m = model(cfg)?;
    let s = sim(cfg)?;
    let f = cfg.fit.as_ref().ok_or_else(|| missing("fit"))?;
    let steps = n_steps(s.horizon, s.dt);
    let data = match (&f.data, &f.gamma_true) {
        (Some(path), _) => {
            let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Dataset::read_csv(file)?
        }
        (None, Some(truth)) => generate_dataset(&m.with_gamma(truth.clone()), f.n_data, s.dt, steps, sub_seed(cfg.seed, DATA_STREAM), Execution::Parallel)?,
        (None, None) => return Err(missing("fit.data")),
    };
    let fc = FitConfig {
        model: m.with_gamma(f.gamma0.clone()),
        dt: s.dt,
        n_steps: steps,
        alpha: AlphaSchedule::constant(s.alpha)?,
        n_paths: s.paths,
        n_neighbors: f.neighbors,
        eta: f.eta,
        n_updates: f.updates,
        seed: cfg.seed,
        gamma_true: f.gamma_true.clone(),
        execution: Execution::Parallel,
    };
    let started = Instant::now();
    let h = fit(&fc, &data)?;
    let elapsed = started.elapsed().as_secs_f64();
    h.write_csv(w.create("results.csv")?, false)?;
    data.write_csv(w.create("data.csv")?)?;

    let mut fig = Figure::new(format!("{} fit", m.name), "iteration", if f.gamma_true.is_some() { "|gamma - gamma_true|" } else { "gamma" });
    if f.gamma_true.is_some() {
        let mut s = Series::new("distance", Style::Line);
        s.points = h.records.iter().filter_map(|r| Some((r.iteration as f64, r.distance?, None))).collect();
        fig.series.push(s);
    } else {
        for j in 0..m.n_params() {
            let mut s = Series::new(format!("gamma{j}"), Style::Line);
            s.points = h.records.iter().map(|r| (r.iteration as f64, r.gamma[j], None)).collect();
            fig.series.push(s);
        }
    }
    w.text("plot.svg", &fig.render())?;
    let first = h.records.first().and_then(|r| r.distance);
    let last = h.records.last().and_then(|r| r.distance);
    Ok(json!({
        "data_points": data.len(),
        "final_gamma": h.final_gamma(),
        "initial_distance": first,
        "final_distance": last,
        "best_distance": h.best().and_then(|r| r.distance),
        "fit_seconds": elapsed,
    }))
}
