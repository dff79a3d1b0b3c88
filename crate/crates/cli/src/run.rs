use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use laguerre::aniso::{recover_aniso, AnisoOptions, AnisotropyMatrices};
use laguerre::fit::{
    check_necessary_conditions, fit_diagram, recover_diagram, FitOptions, FitResult, RecoveryStart,
    TraceRow,
};
use laguerre::ingest::{grid_to_targets, load_label_grid, write_label_grid};
use laguerre::io::{load_targets, save_trace, write_targets, DiagramDocument};
use laguerre::sdot::{solve_weights, OtOptions};
use laguerre::svg::{diagram_svg, raster_svg};
use laguerre::synth::{perturb_data, random_grain_grid, random_voronoi_data, PerturbationSpec};
use laguerre::{Domain, Error, SeedConfig, TargetData};
use serde_json::json;

use crate::args::{
    AnisoArgs, CheckArgs, Command, IngestArgs, InputArgs, OutputArgs, SolveArgs, SynthArgs,
    TuningArgs,
};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            kind: "usage",
            message: message.into(),
        }
    }

    /// The single stderr line: a JSON object with `error`, `code` and
    /// `message`.
    pub fn machine_line(&self) -> String {
        json!({ "error": self.kind, "code": self.code, "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = if e.is_data_error() {
            (2, "data")
        } else {
            (3, "solver")
        };
        CliError {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn run(command: Command) -> CliResult<String> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Recover(a) => solve(a, Mode::Recover),
        Command::Fit(a) => solve(a, Mode::Fit),
        Command::OtSolve(a) => ot_solve(a),
        Command::Check(a) => check(a),
        Command::Ingest(a) => ingest(a),
        Command::AnisoRecover(a) => aniso(a),
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("no such file: {}", path.display())))
    }
}

fn require_writable(path: &Option<PathBuf>) -> CliResult<()> {
    if let Some(p) = path {
        let parent = p.parent().filter(|d| !d.as_os_str().is_empty());
        if parent.is_some_and(|d| !d.is_dir()) {
            return Err(CliError::usage(format!(
                "output directory missing for {}",
                p.display()
            )));
        }
    }
    Ok(())
}

fn domain_from(dims: &Option<Vec<f64>>) -> CliResult<Option<Domain>> {
    match dims.as_deref() {
        None => Ok(None),
        Some([w, h]) => Ok(Some(Domain::rectangle(*w, *h)?)),
        Some(_) => Err(CliError::usage("--domain takes a width and a height")),
    }
}

fn check_input_paths(input: &InputArgs) -> CliResult<()> {
    match (&input.data, &input.grid) {
        (Some(p), None) | (None, Some(p)) => require_file(p),
        _ => Err(CliError::usage(
            "exactly one of --data or --grid is required",
        )),
    }
}

fn load_input(input: &InputArgs) -> CliResult<(Domain, TargetData)> {
    let domain = domain_from(&input.domain)?;
    if let Some(grid) = &input.grid {
        let grid = load_label_grid(grid)?;
        return Ok(grid_to_targets(&grid, domain.as_ref())?);
    }
    let path = input.data.as_ref().expect("checked by check_input_paths");
    let domain = domain.unwrap_or_else(Domain::unit_square);
    let data = load_targets(path)?;
    data.validate(&domain)?;
    Ok((domain, data))
}

fn check_outputs(out: &OutputArgs) -> CliResult<()> {
    require_writable(&out.out)?;
    require_writable(&out.trace)?;
    require_writable(&out.svg)
}

fn trace_path(out: &OutputArgs) -> Option<PathBuf> {
    out.trace.clone().or_else(|| {
        out.out.as_ref().map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            p.with_file_name(format!("{stem}.trace.csv"))
        })
    })
}

fn fit_options(t: &TuningArgs) -> CliResult<FitOptions> {
    for (name, value) in [("delta", t.delta), ("radius", t.radius), ("ftol", t.ftol)] {
        if value.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
            return Err(CliError::usage(format!("--{name} must be positive")));
        }
    }
    let mut opts = FitOptions {
        delta: t.delta,
        radius: t.radius,
        ftol: t.ftol,
        ..FitOptions::default()
    };
    if let Some(m) = t.max_iters {
        opts.max_iters = m;
    }
    Ok(opts)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::from(Error::from(e)))
}

fn write_trace(out: &OutputArgs, rows: &[TraceRow]) -> CliResult<()> {
    if let Some(p) = trace_path(out) {
        save_trace(rows, p)?;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Recover,
    Fit,
}

fn solve(a: SolveArgs, mode: Mode) -> CliResult<String> {
    check_input_paths(&a.input)?;
    check_outputs(&a.output)?;
    let opts = fit_options(&a.tuning)?;
    let (domain, data) = load_input(&a.input)?;
    let r: FitResult = match mode {
        Mode::Recover => recover_diagram(&domain, &data, RecoveryStart::Random(a.seed), &opts)?,
        Mode::Fit => fit_diagram(&domain, &data, None, &opts)?,
    };
    if let Some(p) = &a.output.out {
        DiagramDocument::new(&domain, &r.x_star, &r.weights, &r.diagram).save(p)?;
    }
    write_trace(&a.output, &r.trace)?;
    if let Some(p) = &a.output.svg {
        write_text(p, &diagram_svg(&domain, &r.diagram, Some(data.centroids())))?;
    }
    let name = if mode == Mode::Recover {
        "recover"
    } else {
        "fit"
    };
    Ok(format!(
        "{name}: objective={:.6e} f={:.6e} iterations={} min_pair_dist={:.6e} active_constraints={} termination={}",
        r.objective,
        r.f,
        r.iterations,
        r.x_star.min_pairwise_distance(),
        r.active_separation_constraints.len(),
        r.termination.as_str(),
    ))
}

fn ot_solve(a: SolveArgs) -> CliResult<String> {
    check_input_paths(&a.input)?;
    check_outputs(&a.output)?;
    let (domain, data) = load_input(&a.input)?;
    let seeds = data.centroid_seeds();
    if let Some((i, j)) = seeds.coincident_pair() {
        return Err(Error::CoincidentSeeds { i, j }.into());
    }
    let report = solve_weights(&domain, &seeds, data.areas(), &OtOptions::default())?;
    if let Some(p) = &a.output.out {
        DiagramDocument::new(&domain, &seeds, &report.weights, &report.diagram).save(p)?;
    }
    if let Some(p) = &a.output.svg {
        write_text(
            p,
            &diagram_svg(&domain, &report.diagram, Some(data.centroids())),
        )?;
    }
    Ok(format!(
        "ot-solve: dual={:.6e} iterations={} min_pair_dist={:.6e} max_rel_area_error_percent={:.3e}",
        report.dual_value,
        report.iterations,
        seeds.min_pairwise_distance(),
        report.max_rel_area_error,
    ))
}

fn synth(a: SynthArgs) -> CliResult<String> {
    require_writable(&a.out)?;
    require_writable(&a.svg)?;
    require_writable(&a.grid)?;
    if a.n == 0 {
        return Err(CliError::usage("--n must be positive"));
    }
    let domain = domain_from(&a.domain)?.unwrap_or_else(Domain::unit_square);
    if let Some(path) = &a.grid {
        let resolution = a
            .resolution
            .ok_or_else(|| CliError::usage("--grid needs --resolution"))?;
        let (lo, hi) = domain.bounding_box();
        let side = hi - lo;
        if side.x != side.y {
            return Err(CliError::usage("--grid needs a square domain"));
        }
        let grid = random_grain_grid(a.n, resolution, side.x / resolution as f64, a.seed)?;
        write_label_grid(&grid, path)?;
        return Ok(format!(
            "synth: grains={} resolution={} pixel_size={:.6e}",
            grid.grain_count(),
            resolution,
            grid.pixel_size
        ));
    }
    let (seeds, data, diagram) = random_voronoi_data(&domain, a.n, a.seed)?;
    let data = perturb_data(
        &data,
        &PerturbationSpec {
            epsilon: a.epsilon,
            rng_seed: a.seed,
        },
        &domain,
    )?;
    match &a.out {
        Some(p) => laguerre::io::save_targets(&data, p)?,
        None => {
            let mut buf = Vec::new();
            write_targets(&data, &mut buf)?;
            std::io::stdout()
                .write_all(&buf)
                .map_err(|e| CliError::from(Error::from(e)))?;
        }
    }
    if let Some(p) = &a.svg {
        write_text(p, &diagram_svg(&domain, &diagram, Some(data.centroids())))?;
    }
    Ok(format!(
        "synth: cells={} epsilon={} min_pair_dist={:.6e}",
        a.n,
        a.epsilon,
        seeds.min_pairwise_distance()
    ))
}

fn check(a: CheckArgs) -> CliResult<String> {
    check_input_paths(&a.input)?;
    require_writable(&a.out)?;
    let (domain, data) = load_input(&a.input)?;
    let report = check_necessary_conditions(&domain, &data);
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::from(Error::from(e)))?;
    match &a.out {
        Some(p) => write_text(p, &(text + "\n"))?,
        None => println!("{text}"),
    }
    Ok(format!(
        "check: all_pass={} failing_cells={:?}",
        report.all_pass,
        report.failing_cells()
    ))
}

fn ingest(a: IngestArgs) -> CliResult<String> {
    require_file(&a.grid)?;
    require_writable(&a.out)?;
    let domain = domain_from(&a.domain)?;
    let grid = load_label_grid(&a.grid)?;
    let disconnected = grid.disconnected_grains();
    let (domain, data) = grid_to_targets(&grid, domain.as_ref())?;
    match &a.out {
        Some(p) => laguerre::io::save_targets(&data, p)?,
        None => {
            let mut buf = Vec::new();
            write_targets(&data, &mut buf)?;
            std::io::stdout()
                .write_all(&buf)
                .map_err(|e| CliError::from(Error::from(e)))?;
        }
    }
    let (lo, hi) = domain.bounding_box();
    Ok(format!(
        "ingest: grains={} domain=[{},{}]x[{},{}] disconnected_grains={}",
        data.len(),
        lo.x,
        hi.x,
        lo.y,
        hi.y,
        disconnected.len()
    ))
}

fn aniso(a: AnisoArgs) -> CliResult<String> {
    check_input_paths(&a.input)?;
    check_outputs(&a.output)?;
    if let Some(m) = &a.matrices {
        require_file(m)?;
    }
    let fit = fit_options(&a.tuning)?;
    let (domain, data) = load_input(&a.input)?;
    let matrices = match &a.matrices {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::from(Error::from(e)))?;
            serde_json::from_str::<AnisotropyMatrices>(&text).map_err(|e| CliError {
                code: 2,
                kind: "data",
                message: format!("{}: {e}", p.display()),
            })?
        }
        None => AnisotropyMatrices::identity(data.len()),
    };
    let opts = AnisoOptions {
        resolution: a.resolution,
        fit,
        ..AnisoOptions::default()
    };
    let r = recover_aniso(
        &domain,
        &data,
        &matrices,
        RecoveryStart::Random(a.seed),
        &opts,
    )?;
    if let Some(p) = &a.output.out {
        let doc = json!({
            "domain": domain,
            "seeds": r.seeds.points(),
            "weights": r.weights.as_slice(),
            "matrices": matrices,
            "resolution": r.diagram.resolution,
            "areas": r.diagram.areas,
            "centroids": r.diagram.centroids,
        });
        let text =
            serde_json::to_string_pretty(&doc).map_err(|e| CliError::from(Error::from(e)))?;
        write_text(p, &(text + "\n"))?;
    }
    write_trace(&a.output, &r.trace)?;
    if let Some(p) = &a.output.svg {
        write_text(p, &raster_svg(&domain, &r.diagram, Some(data.centroids())))?;
    }
    Ok(format!(
        "aniso-recover: objective={:.6e} iterations={} min_pair_dist={:.6e} active_constraints={} termination={}",
        r.h,
        r.iterations,
        SeedConfig::min_pairwise_distance(&r.seeds),
        r.active_separation_constraints.len(),
        r.termination.as_str(),
    ))
}
